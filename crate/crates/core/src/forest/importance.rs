use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::Forest;
use crate::error::{Error, Result};
use crate::rng::rng_for;

const STREAM_PERMUTE: u64 = 0x1a9;

/// Out-of-bootstrap permutation importance: for every tree and feature,
/// the increase of the tree's OOB mean squared error when that feature is
/// permuted among the OOB rows, averaged over trees. `x` and `y` must be
/// the training data. Features a tree never splits on contribute zero.
pub fn oob_importance(forest: &Forest, x: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let nf = forest.columns().len();
    if x.len() != nf {
        return Err(Error::SchemaMismatch(format!("{} columns, model has {nf}", x.len())));
    }
    if y.len() != forest.n_train() || x.iter().any(|c| c.len() != y.len()) {
        return Err(Error::invalid(format!(
            "importance needs the {} training rows, got {}",
            forest.n_train(),
            y.len()
        )));
    }
    let seed = forest.config().seed;
    let per_tree: Vec<Vec<f64>> = forest
        .trees()
        .par_iter()
        .zip(forest.bootstraps().par_iter())
        .enumerate()
        .map(|(t, (tree, boot))| {
            let mut in_bag = vec![false; y.len()];
            for &r in boot {
                in_bag[r as usize] = true;
            }
            let oob: Vec<usize> = (0..y.len()).filter(|&r| !in_bag[r]).collect();
            if oob.is_empty() {
                return Err(Error::EmptyOob { tree: t });
            }
            let mse = |pred: &dyn Fn(usize) -> f64| {
                oob.iter().enumerate().map(|(k, &r)| (pred(k) - y[r]).powi(2)).sum::<f64>() / oob.len() as f64
            };
            let base = mse(&|k| tree.predict_with(|c| x[c][oob[k]]));
            let mut out = vec![0.0; nf];
            for (f, slot) in out.iter_mut().enumerate() {
                if !tree.uses_feature(f) {
                    continue;
                }
                let mut perm = oob.clone();
                perm.shuffle(&mut rng_for(seed, &[STREAM_PERMUTE, t as u64, f as u64]));
                let permuted = mse(&|k| {
                    let r = oob[k];
                    tree.predict_with(|c| if c == f { x[c][perm[k]] } else { x[c][r] })
                });
                *slot = permuted - base;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; nf];
    for row in &per_tree {
        for (a, b) in total.iter_mut().zip(row) {
            *a += b;
        }
    }
    let n = per_tree.len() as f64;
    Ok(total.into_iter().map(|v| v / n).collect())
}
