use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChangeMap, ChangeScores, ConfusionCounts};

/// Area under the ROC curve from the rank-sum statistic, with tied scores
/// given their mid-rank. `None` unless both classes are present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let hits = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += mid * hits as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn confusion(prediction: &ChangeMap, truth: &ChangeMap) -> Result<ConfusionCounts> {
    if prediction.dims() != truth.dims() {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {:?} but ground truth is {:?}",
            prediction.dims(),
            truth.dims()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in prediction.data().iter().zip(truth.data()) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Cohen's kappa; `None` when chance agreement is 1.
pub fn kappa(c: &ConfusionCounts) -> Option<f64> {
    let n = c.total() as f64;
    if n == 0.0 {
        return None;
    }
    let po = (c.tp + c.tn) as f64 / n;
    let pred_pos = (c.tp + c.fp) as f64;
    let true_pos = (c.tp + c.fn_) as f64;
    let pe = (pred_pos * true_pos + (n - pred_pos) * (n - true_pos)) / (n * n);
    (pe < 1.0).then(|| (po - pe) / (1.0 - pe))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: Option<f64>,
    pub oa: f64,
    pub kappa: Option<f64>,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub threshold: Option<f64>,
}

impl MetricsReport {
    pub fn confusion(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp,
            tn: self.tn,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

/// AUC from the continuous scores (when given), OA and kappa from the binary
/// map.
pub fn score(
    scores: Option<&ChangeScores>,
    prediction: &ChangeMap,
    truth: &ChangeMap,
    threshold: Option<f64>,
) -> Result<MetricsReport> {
    let c = confusion(prediction, truth)?;
    let auc = match scores {
        Some(s) => {
            if s.dims() != truth.dims() {
                return Err(Error::DimensionMismatch(format!(
                    "scores are {:?} but ground truth is {:?}",
                    s.dims(),
                    truth.dims()
                )));
            }
            auc(s.values(), truth.data())
        }
        None => None,
    };
    Ok(MetricsReport {
        auc,
        oa: (c.tp + c.tn) as f64 / c.total() as f64,
        kappa: kappa(&c),
        tp: c.tp,
        tn: c.tn,
        fp: c.fp,
        fn_: c.fn_,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Trapezoidal area under the ROC curve traced by sweeping the threshold
    /// down through the distinct scores.
    fn trapezoid_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let p = labels.iter().filter(|&&l| l).count() as f64;
        let n = labels.len() as f64 - p;
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let (mut prev_tpr, mut prev_fpr, mut area) = (0.0, 0.0, 0.0);
        for t in thresholds {
            let tp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l).count() as f64;
            let fp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && !l).count() as f64;
            let (tpr, fpr) = (tp / p, fp / n);
            area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
            prev_tpr = tpr;
            prev_fpr = fpr;
        }
        area
    }

    #[test]
    fn auc_cases() {
        let labels = [true, true, false, false];
        assert_eq!(auc(&[0.9, 0.6, 0.4, 0.1], &labels), Some(1.0));
        assert_eq!(auc(&[0.8, 0.3, 0.5, 0.1], &labels), Some(0.75));
        assert_eq!(auc(&[0.5; 4], &labels), Some(0.5));
        assert_eq!(auc(&[0.1, 0.2], &[true, true]), None);
    }

    #[test]
    fn auc_rank_equals_trapezoid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for case in 0..100 {
            let n = rng.random_range(2..300);
            // coarse scores in some cases to exercise ties
            let levels = if case % 2 == 0 { 7.0 } else { 1e9 };
            let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * levels).floor() / levels).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.3).collect();
            labels[0] = true;
            labels[1] = false;
            let a = auc(&scores, &labels).unwrap();
            assert!((a - trapezoid_auc(&scores, &labels)).abs() < 1e-12, "case {case}");
        }
    }

    #[test]
    fn kappa_hand_value() {
        let c = ConfusionCounts {
            tp: 40,
            tn: 40,
            fp: 10,
            fn_: 10,
        };
        assert!((kappa(&c).unwrap() - 0.6).abs() < 1e-15);
        let perfect = ConfusionCounts {
            tp: 5,
            tn: 7,
            fp: 0,
            fn_: 0,
        };
        assert_eq!(kappa(&perfect), Some(1.0));
        let one_class = ConfusionCounts {
            tp: 0,
            tn: 9,
            fp: 0,
            fn_: 0,
        };
        assert_eq!(kappa(&one_class), None);
    }

    #[test]
    fn kappa_is_one_only_without_errors() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let c = ConfusionCounts {
                tp: rng.random_range(1..20),
                tn: rng.random_range(1..20),
                fp: rng.random_range(0..3),
                fn_: rng.random_range(0..3),
            };
            let k = kappa(&c).unwrap();
            assert_eq!(k == 1.0, c.fp == 0 && c.fn_ == 0, "{c:?} -> {k}");
        }
    }

    #[test]
    fn random_predictions_have_no_agreement() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let truth = ChangeMap::new(20, 20, (0..400).map(|_| rng.random::<f64>() < 0.2).collect()).unwrap();
        let mut total = 0.0;
        for _ in 0..1000 {
            let pred = ChangeMap::new(20, 20, (0..400).map(|_| rng.random::<f64>() < 0.3).collect()).unwrap();
            total += kappa(&confusion(&pred, &truth).unwrap()).unwrap();
        }
        assert!((total / 1000.0).abs() < 0.05);
    }

    #[test]
    fn report_fields() {
        let truth = ChangeMap::new(1, 4, vec![true, true, false, false]).unwrap();
        let pred = ChangeMap::new(1, 4, vec![true, false, false, true]).unwrap();
        let s = ChangeScores::new(1, 4, vec![0.9, 0.3, 0.5, 0.1], crate::model::ScoreKind::Distance).unwrap();
        let r = score(Some(&s), &pred, &truth, Some(0.2)).unwrap();
        assert_eq!(r.oa, 0.5);
        assert_eq!((r.tp, r.tn, r.fp, r.fn_), (1, 1, 1, 1));
        assert_eq!(r.auc, Some(0.75));
        let bad = ChangeMap::new(2, 2, vec![false; 4]).unwrap();
        assert!(score(None, &pred, &bad, None).is_err());
    }
}
