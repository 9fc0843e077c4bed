//! Error metrics, pair-level cross-validation and report files.

mod cv;
mod report;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampling::ErrorClass;

pub use cv::{cross_validate, Aggregate, CvConfig, CvReport, FoldPlan, FoldResult};
pub use report::{colormap, emit_reports, importance_csv, overlay_rgb, write_importance_csv, write_overlay_png};

/// Mean and population standard deviation of absolute errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Stat {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaeReport {
    pub overall: Stat,
    /// Indexed by `ErrorClass::index`; `None` when no true sample falls in
    /// the class.
    pub per_class: [Option<Stat>; 3],
}

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::invalid(format!("{} targets but {} predictions", y.len(), y_hat.len())));
    }
    if y.is_empty() {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    Ok(())
}

/// Overall and per-class mean absolute error; classes follow the true `y`.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<MaeReport> {
    check_lengths(y, y_hat)?;
    let abs: Vec<f64> = y.iter().zip(y_hat).map(|(a, b)| (b - a).abs()).collect();
    let per_class = ErrorClass::ALL.map(|c| {
        let sel: Vec<f64> = y
            .iter()
            .zip(&abs)
            .filter(|(t, _)| ErrorClass::from_error(**t) == c)
            .map(|(_, e)| *e)
            .collect();
        Stat::of(&sel)
    });
    Ok(MaeReport {
        overall: Stat::of(&abs).expect("nonempty"),
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; 3]; 3],
    pub accuracy: f64,
    /// `None` when the class occurs in neither the truth nor the prediction.
    pub f1: [Option<f64>; 3],
}

impl ClassMetrics {
    pub fn recall(&self, c: usize) -> Option<f64> {
        let t: usize = self.confusion[c].iter().sum();
        (t > 0).then(|| self.confusion[c][c] as f64 / t as f64)
    }
}

/// Accuracy, per-class F1 and confusion matrix after thresholding both
/// vectors at 3 and 6 mm.
pub fn classify_metrics(y: &[f64], y_hat: &[f64]) -> Result<ClassMetrics> {
    check_lengths(y, y_hat)?;
    let mut confusion = [[0usize; 3]; 3];
    for (t, p) in y.iter().zip(y_hat) {
        confusion[ErrorClass::from_error(*t).index()][ErrorClass::from_error(*p).index()] += 1;
    }
    let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
    let f1 = [0, 1, 2].map(|c| {
        let tp = confusion[c][c] as f64;
        let truth: usize = confusion[c].iter().sum();
        let predicted: usize = (0..3).map(|r| confusion[r][c]).sum();
        if truth == 0 && predicted == 0 {
            return None;
        }
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if truth > 0 { tp / truth as f64 } else { 0.0 };
        Some(if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        })
    });
    Ok(ClassMetrics {
        confusion,
        accuracy: correct as f64 / y.len() as f64,
        f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn mae_hand_example() {
        let r = mae(&[1.0, 4.0, 7.0], &[2.0, 2.0, 8.0]).unwrap();
        assert!((r.overall.mean - 4.0 / 3.0).abs() < 1e-12);
        let m = r.per_class.map(|s| s.unwrap().mean);
        assert_eq!(m, [1.0, 2.0, 1.0]);
        let perfect = mae(&[1.0, 4.0], &[1.0, 4.0]).unwrap();
        assert_eq!(perfect.overall.mean, 0.0);
        assert!(perfect.per_class[2].is_none());
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn classify_hand_example() {
        let m = classify_metrics(&[1.0, 4.0, 7.0], &[2.0, 2.0, 8.0]).unwrap();
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1[0].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.f1[1], Some(0.0));
        assert_eq!(m.f1[2], Some(1.0));
        assert_eq!(m.confusion, [[1, 0, 0], [1, 0, 0], [0, 0, 1]]);
        let perfect = classify_metrics(&[1.0, 4.0], &[0.5, 5.0]).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        assert_eq!(perfect.f1, [Some(1.0), Some(1.0), None]);
    }

    #[test]
    fn mae_symmetric_classification_not() {
        let (y, p) = ([1.0, 4.0, 7.0], [2.0, 2.0, 8.0]);
        assert_eq!(mae(&y, &p).unwrap().overall, mae(&p, &y).unwrap().overall);
        // F1 and accuracy survive the swap; the confusion matrix and recalls do not.
        let (a, b) = (classify_metrics(&y, &p).unwrap(), classify_metrics(&p, &y).unwrap());
        assert_ne!(a.confusion, b.confusion);
        assert_ne!(a.recall(0), b.recall(0));
    }

    #[test]
    fn translation_keeps_absolute_errors() {
        let y = [0.5, 2.9, 5.5, 8.0];
        let p = [1.0, 3.2, 4.0, 9.5];
        let shifted = |v: &[f64]| v.iter().map(|x| x + 2.0).collect::<Vec<_>>();
        let a = mae(&y, &p).unwrap().overall;
        let b = mae(&shifted(&y), &shifted(&p)).unwrap().overall;
        assert!((a.mean - b.mean).abs() < 1e-12 && (a.std - b.std).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn accuracy_is_frequency_weighted_recall(seed in 0u64..500, n in 1usize..60) {
            let mut rng = rng_for(seed, &[]);
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let m = classify_metrics(&y, &p).unwrap();
            let weighted: f64 = (0..3)
                .filter_map(|c| {
                    let t: usize = m.confusion[c].iter().sum();
                    m.recall(c).map(|r| r * t as f64 / n as f64)
                })
                .sum();
            prop_assert!((weighted - m.accuracy).abs() < 1e-12);
        }

        #[test]
        fn order_invariance(seed in 0u64..500) {
            let mut rng = rng_for(seed, &[1]);
            let mut pairs: Vec<(f64, f64)> = (0..40).map(|_| (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0))).collect();
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
            let m1 = classify_metrics(&y, &p).unwrap();
            let a1 = mae(&y, &p).unwrap();
            pairs.shuffle(&mut rng);
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert_eq!(m1, classify_metrics(&y, &p).unwrap());
            let a2 = mae(&y, &p).unwrap();
            prop_assert!((a1.overall.mean - a2.overall.mean).abs() < 1e-12);
        }
    }
}
