use super::PredictiveDistribution;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped here before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

fn check_labels(pred: &PredictiveDistribution, labels: &[usize]) -> Result<()> {
    if labels.len() != pred.len() {
        return Err(Error::ShapeMismatch {
            op: "metric_labels",
            expected: vec![pred.len()],
            actual: vec![labels.len()],
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("metric over an empty prediction set"));
    }
    let k = pred.classes();
    match labels.iter().find(|&&y| y >= k) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes: k }),
        None => Ok(()),
    }
}

/// Mean negative log-probability of the true class.
pub fn nll(pred: &PredictiveDistribution, labels: &[usize]) -> Result<f64> {
    check_labels(pred, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -pred.row(i)[y].max(PROBABILITY_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

pub fn accuracy(pred: &PredictiveDistribution, labels: &[usize]) -> Result<f64> {
    check_labels(pred, labels)?;
    let hits = labels.iter().enumerate().filter(|&(i, &y)| pred.argmax(i) == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Expected calibration error over `bins` equal-width confidence bins.
pub fn ece(pred: &PredictiveDistribution, labels: &[usize], bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::invalid("ECE needs at least one bin"));
    }
    check_labels(pred, labels)?;
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut hits = vec![0.0; bins];
    for (i, &y) in labels.iter().enumerate() {
        let top = pred.argmax(i);
        let c = pred.row(i)[top];
        let b = ((c * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += c;
        if top == y {
            hits[b] += 1.0;
        }
    }
    let n = labels.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (hits[b] - conf[b]).abs() / n)
        .sum())
}

pub fn entropy_row(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Predictive entropy of every row.
pub fn entropy(pred: &PredictiveDistribution) -> Vec<f64> {
    (0..pred.len()).map(|i| entropy_row(pred.row(i))).collect()
}

/// `P(ood > id) + ½ P(ood = id)` by exhaustive pair counting.
pub fn auroc(scores_ood: &[f64], scores_id: &[f64]) -> Result<f64> {
    if scores_ood.is_empty() || scores_id.is_empty() {
        return Err(Error::invalid("AUROC needs non-empty score lists"));
    }
    let mut total = 0.0;
    for &o in scores_ood {
        for &i in scores_id {
            if o > i {
                total += 1.0;
            } else if o == i {
                total += 0.5;
            }
        }
    }
    Ok(total / (scores_ood.len() * scores_id.len()) as f64)
}

/// Mutual information between label and parameters from `S` draws of
/// `n × K` probabilities.
pub fn bald(draws: &[Tensor]) -> Result<Vec<f64>> {
    let mean = PredictiveDistribution::from_draws(draws.to_vec())?;
    let s = draws.len() as f64;
    Ok((0..mean.len())
        .map(|i| {
            let expected: f64 = draws.iter().map(|d| entropy_row(d.row(i))).sum::<f64>() / s;
            (entropy_row(mean.row(i)) - expected).max(0.0)
        })
        .collect())
}

/// Arithmetic mean of the members; draws are pooled when every member has them.
pub fn ensemble_average(members: &[PredictiveDistribution]) -> Result<PredictiveDistribution> {
    let first = members.first().ok_or_else(|| Error::invalid("ensemble of zero members"))?;
    let shape = first.probs.shape().to_vec();
    let mut sum = vec![0.0; first.probs.len()];
    for m in members {
        if m.probs.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "ensemble_average",
                expected: shape,
                actual: m.probs.shape().to_vec(),
            });
        }
        sum.iter_mut().zip(m.probs.data()).for_each(|(s, v)| *s += v);
    }
    let n = members.len() as f64;
    let probs = Tensor::new(shape, sum.into_iter().map(|v| v / n).collect())?;
    let mut out = PredictiveDistribution::new(probs)?;
    if members.iter().all(|m| m.draws.is_some()) {
        out.draws = Some(members.iter().flat_map(|m| m.draws.clone().unwrap()).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(rows: &[&[f64]]) -> PredictiveDistribution {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        PredictiveDistribution::new(Tensor::from_rows(&v).unwrap()).unwrap()
    }

    #[test]
    fn nll_values() {
        assert_eq!(nll(&pred(&[&[1.0, 0.0], &[0.0, 1.0]]), &[0, 1]).unwrap(), 0.0);
        let uniform = pred(&[&[0.1; 10]]);
        assert!((nll(&uniform, &[3]).unwrap() - 10f64.ln()).abs() < 1e-9);
        let p = pred(&[&[0.5, 0.5], &[0.75, 0.25]]);
        let want = (2f64.ln() + 4f64.ln()) / 2.0;
        assert!((nll(&p, &[0, 1]).unwrap() - want).abs() < 1e-12);
        assert!((want - 1.0397).abs() < 1e-4);
        assert!(nll(&pred(&[&[1.0, 0.0]]), &[1]).unwrap().is_finite());
        assert!(matches!(nll(&p, &[0, 2]), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn accuracy_counts_with_low_index_ties() {
        let p = pred(&[&[0.9, 0.1], &[0.2, 0.8], &[0.5, 0.5], &[0.6, 0.4]]);
        assert_eq!(accuracy(&p, &[0, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&p, &[1, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&p, &[0, 1, 1, 0]).unwrap(), 0.75);
    }

    #[test]
    fn ece_values() {
        let sure = pred(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(ece(&sure, &[0, 1], 15).unwrap(), 0.0);
        let p = pred(&[&[0.8, 0.2], &[0.8, 0.2]]);
        assert!((ece(&p, &[0, 1], 15).unwrap() - 0.3).abs() < 1e-12);
        let q = pred(&[&[0.9, 0.1], &[0.3, 0.7], &[0.6, 0.4]]);
        let y = [0, 0, 1];
        let acc = accuracy(&q, &y).unwrap();
        let conf = (0.9 + 0.7 + 0.6) / 3.0;
        assert!((ece(&q, &y, 1).unwrap() - (acc - conf).abs()).abs() < 1e-12);
        assert!(ece(&q, &y, 0).is_err());
    }

    #[test]
    fn entropy_values() {
        let p = pred(&[&[1.0, 0.0, 0.0], &[1.0 / 3.0; 3], &[0.5, 0.5, 0.0]]);
        let h = entropy(&p);
        assert_eq!(h[0], 0.0);
        assert!((h[1] - 3f64.ln()).abs() < 1e-12);
        assert!((h[2] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn auroc_values() {
        assert_eq!(auroc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.3], &[0.5, 0.1]).unwrap(), 0.75);
        assert!(auroc(&[], &[1.0]).is_err());
    }

    #[test]
    fn bald_values() {
        let a = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let b = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
        assert!((bald(&[a.clone(), b]).unwrap()[0] - 2f64.ln()).abs() < 1e-12);
        assert_eq!(bald(&[a.clone(), a.clone()]).unwrap(), vec![0.0]);
        let c = Tensor::matrix(2, 2, vec![0.3, 0.7, 0.5, 0.5]).unwrap();
        assert_eq!(bald(&[c]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn ensemble_values() {
        let a = pred(&[&[1.0, 0.0]]);
        let b = pred(&[&[0.0, 1.0]]);
        assert_eq!(ensemble_average(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(ensemble_average(&[a.clone(), b]).unwrap().row(0), &[0.5, 0.5]);
        let three = [pred(&[&[0.2, 0.8]]), pred(&[&[0.5, 0.5]]), pred(&[&[0.8, 0.2]])];
        let avg = ensemble_average(&three).unwrap();
        assert!((avg.row(0)[0] - 0.5).abs() < 1e-12);
        let three = [pred(&[&[0.1, 0.9]]), pred(&[&[0.4, 0.6]]), pred(&[&[0.7, 0.3]])];
        assert!((ensemble_average(&three).unwrap().row(0)[0] - 0.4).abs() < 1e-12);
        assert!(ensemble_average(&[a, pred(&[&[1.0, 0.0], &[1.0, 0.0]])]).is_err());
    }
}
