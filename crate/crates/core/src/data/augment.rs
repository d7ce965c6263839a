use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// One stochastic, label-preserving transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    /// Translate by up to `max_dx`/`max_dy` pixels, filling with zeros.
    RandomShift { max_dx: usize, max_dy: usize },
    HorizontalFlip { prob: f64 },
    /// Additive Gaussian noise on every value.
    PixelJitter { std: f64 },
    /// Zero a random rectangle covering up to `max_fraction` of the grid.
    RandomErase { max_fraction: f64 },
}

impl Transform {
    fn needs_grid(&self) -> bool {
        !matches!(self, Transform::PixelJitter { .. })
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Transform::RandomShift { .. } => true,
            Transform::HorizontalFlip { prob } => (0.0..=1.0).contains(&prob),
            Transform::PixelJitter { std } => std >= 0.0 && std.is_finite(),
            Transform::RandomErase { max_fraction } => (0.0..=1.0).contains(&max_fraction),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("transform parameters out of range: {self:?}")))
        }
    }
}

/// Ordered list of transforms; empty means identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub transforms: Vec<Transform>,
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Shift, flip, jitter and erase sized for small grids.
    pub fn small_grid() -> Self {
        Self {
            transforms: vec![
                Transform::RandomShift { max_dx: 2, max_dy: 0 },
                Transform::HorizontalFlip { prob: 0.5 },
                Transform::PixelJitter { std: 0.1 },
                Transform::RandomErase { max_fraction: 0.125 },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transforms.iter().try_for_each(Transform::validate)
    }

    pub fn requires_grid(&self) -> bool {
        self.transforms.iter().any(Transform::needs_grid)
    }
}

/// Applies every transform of `spec` in order to the row `x`.
pub fn augment(x: &[f64], grid: Option<(usize, usize)>, spec: &AugmentationSpec, rng: &mut Rng) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut out = x.to_vec();
    for t in &spec.transforms {
        let (h, w) = match grid {
            Some(g) => g,
            None if t.needs_grid() => {
                return Err(Error::invalid(format!("{t:?} requires image-like (grid) data")));
            }
            None => (1, x.len()),
        };
        if h * w != x.len() {
            return Err(Error::ShapeMismatch {
                op: "augment",
                expected: vec![h * w],
                actual: vec![x.len()],
            });
        }
        match *t {
            Transform::RandomShift { max_dx, max_dy } => {
                let dx = draw_offset(rng, max_dx);
                let dy = draw_offset(rng, max_dy);
                out = shift(&out, h, w, dx, dy);
            }
            Transform::HorizontalFlip { prob } => {
                if rng.random::<f64>() < prob {
                    for row in out.chunks_mut(w) {
                        row.reverse();
                    }
                }
            }
            Transform::PixelJitter { std } => {
                for v in out.iter_mut() {
                    *v += std * rng::normal(rng);
                }
            }
            Transform::RandomErase { max_fraction } => {
                let area = (rng.random::<f64>() * max_fraction * (h * w) as f64).round() as usize;
                if area > 0 {
                    let eh = rng.random_range(1..=h.min(area));
                    let ew = area.div_ceil(eh).min(w);
                    let top = rng.random_range(0..=h - eh);
                    let left = rng.random_range(0..=w - ew);
                    for r in top..top + eh {
                        out[r * w + left..r * w + left + ew].fill(0.0);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn draw_offset(rng: &mut Rng, max: usize) -> isize {
    if max == 0 {
        0
    } else {
        rng.random_range(0..=2 * max) as isize - max as isize
    }
}

fn shift(x: &[f64], h: usize, w: usize, dx: isize, dy: isize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let (sr, sc) = (r - dy, c - dx);
            if (0..h as isize).contains(&sr) && (0..w as isize).contains(&sc) {
                out[(r * w as isize + c) as usize] = x[(sr * w as isize + sc) as usize];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> Vec<f64> {
        (0..12).map(|v| v as f64).collect()
    }

    #[test]
    fn double_flip_is_identity() {
        let spec = AugmentationSpec {
            transforms: vec![Transform::HorizontalFlip { prob: 1.0 }, Transform::HorizontalFlip { prob: 1.0 }],
        };
        let mut r = rng::stream(0, "t", 0);
        assert_eq!(augment(&image(), Some((3, 4)), &spec, &mut r).unwrap(), image());

        let once = AugmentationSpec {
            transforms: vec![Transform::HorizontalFlip { prob: 1.0 }],
        };
        let flipped = augment(&image(), Some((3, 4)), &once, &mut r).unwrap();
        assert_eq!(&flipped[..4], &[3.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_magnitudes_are_identity() {
        let spec = AugmentationSpec {
            transforms: vec![
                Transform::RandomShift { max_dx: 0, max_dy: 0 },
                Transform::PixelJitter { std: 0.0 },
                Transform::RandomErase { max_fraction: 0.0 },
            ],
        };
        let mut r = rng::stream(3, "t", 0);
        assert_eq!(augment(&image(), Some((3, 4)), &spec, &mut r).unwrap(), image());
        assert_eq!(
            augment(&image(), None, &AugmentationSpec::identity(), &mut r).unwrap(),
            image()
        );
    }

    #[test]
    fn deterministic_and_shape_preserving() {
        let spec = AugmentationSpec::small_grid();
        let a = augment(&image(), Some((3, 4)), &spec, &mut rng::stream(5, "t", 1)).unwrap();
        let b = augment(&image(), Some((3, 4)), &spec, &mut rng::stream(5, "t", 1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
    }

    #[test]
    fn shift_moves_pixels() {
        let out = shift(&image(), 3, 4, 1, 0);
        assert_eq!(&out[..4], &[0.0, 0.0, 1.0, 2.0]);
        let out = shift(&image(), 3, 4, 0, -1);
        assert_eq!(&out[..4], &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(&out[8..], &[0.0; 4]);
    }

    #[test]
    fn erase_bounded_by_fraction() {
        let spec = AugmentationSpec {
            transforms: vec![Transform::RandomErase { max_fraction: 0.25 }],
        };
        let ones = vec![1.0; 32];
        for i in 0..50 {
            let out = augment(&ones, Some((4, 8)), &spec, &mut rng::stream(1, "erase", i)).unwrap();
            let zeros = out.iter().filter(|&&v| v == 0.0).count();
            assert!(zeros <= 8 + 3, "erased {zeros}");
        }
    }

    #[test]
    fn grid_transforms_need_grid() {
        let mut r = rng::stream(0, "t", 0);
        assert!(augment(&image(), None, &AugmentationSpec::small_grid(), &mut r).is_err());
        let jitter = AugmentationSpec {
            transforms: vec![Transform::PixelJitter { std: 0.5 }],
        };
        assert!(augment(&image(), None, &jitter, &mut r).is_ok());
        let bad = AugmentationSpec {
            transforms: vec![Transform::HorizontalFlip { prob: 1.5 }],
        };
        assert!(augment(&image(), Some((3, 4)), &bad, &mut r).is_err());
    }
}
