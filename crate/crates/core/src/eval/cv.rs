use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{classify_metrics, mae, ClassMetrics, MaeReport};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestConfig};
use crate::pooling::Schema;
use crate::rng::rng_for;
use crate::sampling::{ErrorClass, Sample};
use crate::table::SampleTable;

const STREAM_SPLIT: u64 = 0xcf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldPlan {
    /// Pairs shuffled once and dealt round-robin into `k` folds.
    KFold(usize),
    /// `repeats` independent shuffles, each holding out `test_pairs` pairs.
    Repeated { test_pairs: usize, repeats: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub plan: FoldPlan,
    pub forest: ForestConfig,
    /// Seed of the pair shuffling; the forest keeps its own seed in every
    /// fold.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub index: usize,
    pub train_pairs: Vec<String>,
    pub test_pairs: Vec<String>,
    pub n_train: usize,
    pub samples: Vec<Sample>,
    pub y_hat: Vec<f64>,
    pub mae: MaeReport,
    pub classes: ClassMetrics,
    /// MAE of predicting the training mean everywhere.
    pub baseline_mae: f64,
    /// Share of the most frequent true class among the test samples.
    pub majority_rate: f64,
}

/// Means over folds; per-class entries average the folds where they are
/// defined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub n_test: usize,
    pub mae: f64,
    pub mae_std: f64,
    pub mae_class: [Option<f64>; 3],
    pub accuracy: f64,
    pub f1: [Option<f64>; 3],
    pub baseline_mae: f64,
    pub majority_rate: f64,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub columns: Vec<String>,
    pub folds: Vec<FoldResult>,
    pub aggregate: Aggregate,
}

fn splits(pairs: &[String], plan: FoldPlan, seed: u64) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::invalid(format!("cross-validation needs at least 2 pairs, got {n}")));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort();
    let partition = |order: &[String], test: &dyn Fn(usize) -> bool| {
        let (mut tr, mut te) = (Vec::new(), Vec::new());
        for (i, p) in order.iter().enumerate() {
            if test(i) { te.push(p.clone()) } else { tr.push(p.clone()) }
        }
        tr.sort();
        te.sort();
        (tr, te)
    };
    match plan {
        FoldPlan::KFold(k) => {
            if k < 2 || k > n {
                return Err(Error::invalid(format!("{k} folds for {n} pairs")));
            }
            sorted.shuffle(&mut rng_for(seed, &[STREAM_SPLIT]));
            Ok((0..k).map(|f| partition(&sorted, &|i| i % k == f)).collect())
        }
        FoldPlan::Repeated { test_pairs, repeats } => {
            if test_pairs == 0 || test_pairs >= n || repeats == 0 {
                return Err(Error::invalid(format!(
                    "{test_pairs} test pairs x {repeats} repeats for {n} pairs"
                )));
            }
            Ok((0..repeats)
                .map(|r| {
                    let mut order = sorted.clone();
                    order.shuffle(&mut rng_for(seed, &[STREAM_SPLIT, r as u64]));
                    partition(&order, &|i| i < test_pairs)
                })
                .collect())
        }
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Pair-level cross-validation of a forest on `table`, restricted to the
/// columns of `schema` when given.
pub fn cross_validate(table: &SampleTable, schema: Option<&Schema>, cfg: &CvConfig) -> Result<CvReport> {
    let table = match schema {
        Some(s) => table.project(&s.columns())?,
        None => table.clone(),
    };
    let plan = splits(&table.pair_ids(), cfg.plan, cfg.seed)?;
    let folds: Vec<FoldResult> = plan
        .into_par_iter()
        .enumerate()
        .map(|(index, (train_pairs, test_pairs))| {
            let train = table.filter_pairs(|p| train_pairs.binary_search_by(|q| q.as_str().cmp(p)).is_ok());
            let test = table.filter_pairs(|p| test_pairs.binary_search_by(|q| q.as_str().cmp(p)).is_ok());
            debug_assert!(train_pairs.iter().all(|p| !test_pairs.contains(p)));
            let forest = Forest::train_table(&train, &cfg.forest)?;
            let y_hat = forest.predict_table(&test)?;
            let y = test.targets();
            let train_y = train.targets();
            let train_mean = train_y.iter().sum::<f64>() / train_y.len() as f64;
            let baseline: Vec<f64> = vec![train_mean; y.len()];
            let mut counts = [0usize; 3];
            for &v in &y {
                counts[ErrorClass::from_error(v).index()] += 1;
            }
            Ok(FoldResult {
                index,
                n_train: train.len(),
                mae: mae(&y, &y_hat)?,
                classes: classify_metrics(&y, &y_hat)?,
                baseline_mae: mae(&y, &baseline)?.overall.mean,
                majority_rate: *counts.iter().max().unwrap() as f64 / y.len() as f64,
                samples: test.samples().to_vec(),
                y_hat,
                train_pairs,
                test_pairs,
            })
        })
        .collect::<Result<_>>()?;
    let k = folds.len() as f64;
    let avg = |f: &dyn Fn(&FoldResult) -> f64| folds.iter().map(f).sum::<f64>() / k;
    let aggregate = Aggregate {
        n_test: folds.iter().map(|f| f.samples.len()).sum(),
        mae: avg(&|f| f.mae.overall.mean),
        mae_std: avg(&|f| f.mae.overall.std),
        mae_class: [0, 1, 2].map(|c| mean_of(folds.iter().map(|f| f.mae.per_class[c].map(|s| s.mean)))),
        accuracy: avg(&|f| f.classes.accuracy),
        f1: [0, 1, 2].map(|c| mean_of(folds.iter().map(|f| f.classes.f1[c]))),
        baseline_mae: avg(&|f| f.baseline_mae),
        majority_rate: avg(&|f| f.majority_rate),
    };
    Ok(CvReport {
        columns: table.columns().to_vec(),
        folds,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn table(pairs: usize, rows: usize, seed: u64) -> SampleTable {
        let mut rng = rng_for(seed, &[]);
        let mut samples = Vec::new();
        let mut cols = vec![Vec::new(), Vec::new()];
        for p in 0..pairs {
            for r in 0..rows {
                let a: f64 = rng.gen_range(0.0..10.0);
                let b: f64 = rng.gen_range(0.0..1.0);
                samples.push(Sample {
                    pair_id: format!("p{p:02}"),
                    voxel: [r, 0, 0],
                    world: [r as f64, 0.0, 0.0],
                    y: a + 0.2 * b,
                });
                cols[0].push(a);
                cols[1].push(b);
            }
        }
        SampleTable::new(vec!["a".into(), "b".into()], samples, cols).unwrap()
    }

    fn cfg(plan: FoldPlan) -> CvConfig {
        CvConfig {
            plan,
            forest: ForestConfig {
                n_trees: 10,
                ..Default::default()
            },
            seed: 3,
        }
    }

    #[test]
    fn folds_are_pair_disjoint_and_cover() {
        let t = table(7, 30, 1);
        let r = cross_validate(&t, None, &cfg(FoldPlan::KFold(3))).unwrap();
        assert_eq!(r.folds.len(), 3);
        let mut tested: Vec<String> = Vec::new();
        for f in &r.folds {
            assert!(f.train_pairs.iter().all(|p| !f.test_pairs.contains(p)));
            assert_eq!(f.train_pairs.len() + f.test_pairs.len(), 7);
            assert!(f.samples.iter().all(|s| f.test_pairs.contains(&s.pair_id)));
            tested.extend(f.test_pairs.iter().cloned());
        }
        tested.sort();
        assert_eq!(tested, t.pair_ids());
        assert!(r.aggregate.mae < 0.5 * r.aggregate.baseline_mae);
        let again = cross_validate(&t, None, &cfg(FoldPlan::KFold(3))).unwrap();
        assert_eq!(r.aggregate, again.aggregate);
    }

    #[test]
    fn repeated_split() {
        let t = table(21, 10, 2);
        let r = cross_validate(&t, None, &cfg(FoldPlan::Repeated { test_pairs: 6, repeats: 10 })).unwrap();
        assert_eq!(r.folds.len(), 10);
        assert!(r.folds.iter().all(|f| f.test_pairs.len() == 6 && f.train_pairs.len() == 15));
    }

    #[test]
    fn identical_pairs_give_identical_folds() {
        let one = table(1, 40, 5);
        let mut two = one.clone();
        let mut other = one.clone();
        let renamed: Vec<Sample> = other
            .samples()
            .iter()
            .map(|s| Sample {
                pair_id: "q".into(),
                ..s.clone()
            })
            .collect();
        other = SampleTable::new(other.columns().to_vec(), renamed, other.features().to_vec()).unwrap();
        two.append(other).unwrap();
        let r = cross_validate(&two, None, &cfg(FoldPlan::KFold(2))).unwrap();
        assert_eq!(r.folds[0].mae, r.folds[1].mae);
        assert_eq!(r.folds[0].classes, r.folds[1].classes);
    }

    #[test]
    fn too_few_pairs() {
        let t = table(2, 10, 1);
        assert!(cross_validate(&t, None, &cfg(FoldPlan::KFold(3))).is_err());
        assert!(cross_validate(&table(1, 10, 1), None, &cfg(FoldPlan::KFold(2))).is_err());
        assert!(matches!(
            cross_validate(&t, Some(&Schema::Intensity), &cfg(FoldPlan::KFold(2))),
            Err(Error::SchemaMismatch(_))
        ));
    }
}
