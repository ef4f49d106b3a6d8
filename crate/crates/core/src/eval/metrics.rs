use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Support-weighted F1 over the classes present in `y_true`.
///
/// Classes that only occur in `y_pred` carry zero weight but still count as
/// false positives against the classes they were confused with.
pub fn f1_weighted(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidDataset("empty label vector".into()));
    }
    // class -> (tp, fp, fn, support)
    let mut stats: BTreeMap<usize, [usize; 4]> = BTreeMap::new();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        stats.entry(t).or_default()[3] += 1;
        if t == p {
            stats.entry(t).or_default()[0] += 1;
        } else {
            stats.entry(p).or_default()[1] += 1;
            stats.entry(t).or_default()[2] += 1;
        }
    }
    let n = y_true.len() as f64;
    let mut total = 0.0;
    for [tp, fp, fn_, support] in stats.into_values() {
        if support == 0 {
            continue;
        }
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom == 0 { 0.0 } else { (2 * tp) as f64 / denom as f64 };
        total += support as f64 * f1;
    }
    Ok(total / n)
}

/// `1 - sum|y - y_hat| / sum|y - mean(y)|`. Unbounded below.
pub fn one_minus_rae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.len() < 2 {
        return Err(Error::InvalidDataset("1-RAE needs at least two targets".into()));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let denom: f64 = y_true.iter().map(|y| (y - mean).abs()).sum();
    if denom == 0.0 {
        return Err(Error::DegenerateTarget("constant regression target".into()));
    }
    let num: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).abs()).sum();
    Ok(1.0 - num / denom)
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(x: impl Iterator<Item = f64> + Clone, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mx = x.clone().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx.sqrt() * syy.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_hand_cases() {
        assert_eq!(f1_weighted(&[3, 1, 2, 2], &[3, 1, 2, 2]).unwrap(), 1.0);
        assert!((f1_weighted(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() - 0.5).abs() < 1e-12);
        let expected = (3.0 * 6.0 / 7.0) / 4.0;
        assert!((f1_weighted(&[0, 0, 0, 1], &[0, 0, 0, 0]).unwrap() - expected).abs() < 1e-12);
        assert!(f1_weighted(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn f1_prediction_only_class_has_no_weight() {
        // class 5 never in y_true
        let v = f1_weighted(&[0, 0], &[0, 5]).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rae_hand_cases() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(one_minus_rae(&y, &y).unwrap(), 1.0);
        assert_eq!(one_minus_rae(&y, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!((one_minus_rae(&y, &[1.0, 2.0, 4.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(one_minus_rae(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(one_minus_rae(&y, &[9.0, 9.0, 9.0]).unwrap() < 0.0);
    }

    #[test]
    fn pearson_constant_is_zero() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(pearson([4.0, 4.0, 4.0].into_iter(), &y), 0.0);
        assert!((pearson([2.0, 4.0, 6.0].into_iter(), &y) - 1.0).abs() < 1e-12);
    }
}
