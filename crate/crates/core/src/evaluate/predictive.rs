use crate::error::{Error, Result};
use crate::tensor::Tensor;

const ROW_TOLERANCE: f64 = 1e-9;

/// Class probabilities `n × K`, optionally with the per-draw probabilities
/// they average.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub probs: Tensor,
    pub draws: Option<Vec<Tensor>>,
}

fn check_rows(t: &Tensor) -> Result<()> {
    if t.shape().len() != 2 || t.cols() < 1 {
        return Err(Error::ShapeMismatch {
            op: "predictive",
            expected: vec![t.shape().first().copied().unwrap_or(0), 2],
            actual: t.shape().to_vec(),
        });
    }
    for i in 0..t.rows() {
        let row = t.row(i);
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::invalid(format!("row {i} is not a probability vector (sum {sum})")));
        }
    }
    Ok(())
}

impl PredictiveDistribution {
    pub fn new(probs: Tensor) -> Result<Self> {
        check_rows(&probs)?;
        Ok(Self { probs, draws: None })
    }

    /// Mean of the draws, keeping them.
    pub fn from_draws(draws: Vec<Tensor>) -> Result<Self> {
        let first = draws.first().ok_or_else(|| Error::invalid("no predictive draws"))?;
        let shape = first.shape().to_vec();
        let mut sum = vec![0.0; first.len()];
        for d in &draws {
            if d.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "predictive_draws",
                    expected: shape,
                    actual: d.shape().to_vec(),
                });
            }
            check_rows(d)?;
            sum.iter_mut().zip(d.data()).for_each(|(s, v)| *s += v);
        }
        let s = draws.len() as f64;
        let probs = Tensor::new(shape, sum.into_iter().map(|v| v / s).collect())?;
        check_rows(&probs)?;
        Ok(Self {
            probs,
            draws: Some(draws),
        })
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }

    /// Index of the largest probability; ties go to the lowest class.
    pub fn argmax(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (k, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = k;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_rows() {
        assert!(PredictiveDistribution::new(Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap()).is_ok());
        assert!(PredictiveDistribution::new(Tensor::matrix(1, 2, vec![0.5, 0.6]).unwrap()).is_err());
        assert!(PredictiveDistribution::new(Tensor::matrix(1, 2, vec![1.5, -0.5]).unwrap()).is_err());
    }

    #[test]
    fn draws_are_averaged() {
        let a = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let b = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
        let p = PredictiveDistribution::from_draws(vec![a, b]).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert_eq!(p.argmax(0), 0);
        assert_eq!(p.draws.as_ref().unwrap().len(), 2);
        assert!(PredictiveDistribution::from_draws(vec![]).is_err());
    }
}
