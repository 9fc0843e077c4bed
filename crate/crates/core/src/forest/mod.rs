//! Bagged regression trees with variance-reduction splits.

mod importance;
mod io;

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::table::SampleTable;

pub use importance::oob_importance;

const STREAM_TREE: u64 = 0x7ee;

/// Number of candidate features drawn at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MTry {
    #[default]
    Sqrt,
    Third,
    Fixed(usize),
}

impl MTry {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MTry::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MTry::Third => n_features / 3,
            MTry::Fixed(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

impl fmt::Display for MTry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MTry::Sqrt => f.write_str("sqrt"),
            MTry::Third => f.write_str("third"),
            MTry::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for MTry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(MTry::Sqrt),
            "third" => Ok(MTry::Third),
            _ => s
                .parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .map(MTry::Fixed)
                .ok_or_else(|| Error::invalid(format!("m_try must be sqrt, third or a positive integer, got '{s}'"))),
        }
    }
}

impl Serialize for MTry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MTry::Fixed(k) => s.serialize_u64(*k as u64),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for MTry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Str(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Num(k) => k.to_string(),
            Raw::Str(s) => s,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub m_try: MTry,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 9,
            min_samples_leaf: 5,
            m_try: MTry::Sqrt,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::invalid("n_trees, max_depth and min_samples_leaf must be >= 1"));
        }
        if self.m_try == MTry::Fixed(0) {
            return Err(Error::invalid("m_try must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf { value: f64, count: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes in preorder; the root is node 0 and children always follow their
/// parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    fn leaf_index(&self, row: impl Fn(usize) -> f64) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row(feature) <= threshold { left } else { right },
            }
        }
    }

    /// Leaf value reached by a row given as a feature accessor.
    pub fn predict_with(&self, row: impl Fn(usize) -> f64) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }

    pub fn uses_feature(&self, f: usize) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::Split { feature, .. } if *feature == f))
    }

    pub(crate) fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::CorruptPayload("empty tree".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = *n {
                if left <= i || right <= i || left >= nodes.len() || right >= nodes.len() {
                    return Err(Error::CorruptPayload(format!("bad child index at node {i}")));
                }
            }
        }
        Ok(Self { nodes })
    }
}

/// Trained forest. `bootstraps[t]` lists the training rows (with
/// repetition) that grew tree `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    config: ForestConfig,
    columns: Vec<String>,
    n_train: usize,
    trees: Vec<Tree>,
    bootstraps: Vec<Vec<u32>>,
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    m_try: usize,
    nodes: Vec<Node>,
    // Scratch for candidate sorting.
    pairs: Vec<(f64, f64)>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn leaf(&mut self, rows: &[u32]) -> usize {
        let value = rows.iter().map(|&r| self.y[r as usize]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(Node::Leaf {
            value,
            count: rows.len(),
        });
        self.nodes.len() - 1
    }

    fn best_split(&mut self, rows: &[u32], rng: &mut crate::rng::Rng) -> Option<Best> {
        let n_features = self.x.len();
        let mut candidates = sample_indices(rng, n_features, self.m_try).into_vec();
        candidates.sort_unstable();
        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| self.y[r as usize]).sum();
        let mean = total / n as f64;
        let sse: f64 = rows.iter().map(|&r| (self.y[r as usize] - mean).powi(2)).sum();
        let min_gain = sse * 1e-12;
        let mut best: Option<Best> = None;
        for f in candidates {
            let col = &self.x[f];
            self.pairs.clear();
            self.pairs.extend(rows.iter().map(|&r| (col[r as usize], self.y[r as usize])));
            self.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += self.pairs[i].1;
                let nl = i + 1;
                let nr = n - nl;
                if nl < self.min_leaf {
                    continue;
                }
                if nr < self.min_leaf {
                    break;
                }
                let (lo, hi) = (self.pairs[i].0, self.pairs[i + 1].0);
                if lo == hi {
                    continue;
                }
                let ml = left_sum / nl as f64;
                let mr = (total - left_sum) / nr as f64;
                let gain = (nl * nr) as f64 / n as f64 * (ml - mr).powi(2);
                if gain > min_gain && best.as_ref().map_or(true, |b| gain > b.gain) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(Best {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [u32], depth: usize, rng: &mut crate::rng::Rng) -> usize {
        let first = self.y[rows[0] as usize];
        let constant = rows.iter().all(|&r| self.y[r as usize] == first);
        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf || constant {
            return self.leaf(rows);
        }
        let Some(best) = self.best_split(rows, rng) else {
            return self.leaf(rows);
        };
        let col = &self.x[best.feature];
        let mut split = 0;
        for i in 0..rows.len() {
            if col[rows[i] as usize] <= best.threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0, count: 0 });
        let (l, r) = rows.split_at_mut(split);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[me] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        me
    }
}

fn check_inputs(x: &[Vec<f64>], y: &[f64], columns: &[String]) -> Result<()> {
    if x.len() != columns.len() {
        return Err(Error::SchemaMismatch(format!(
            "{} feature columns but {} column names",
            x.len(),
            columns.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::invalid("at least one feature column is required"));
    }
    if let Some(c) = x.iter().position(|c| c.len() != y.len()) {
        return Err(Error::invalid(format!(
            "column {} has {} rows, targets have {}",
            columns[c],
            x[c].len(),
            y.len()
        )));
    }
    if let Some(c) = x.iter().position(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("feature column {}", columns[c])));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("targets".into()));
    }
    Ok(())
}

impl Forest {
    /// Trains on column-major features `x` with targets `y`.
    pub fn train(x: &[Vec<f64>], y: &[f64], columns: &[String], cfg: &ForestConfig) -> Result<Self> {
        cfg.validate()?;
        check_inputs(x, y, columns)?;
        let n = y.len();
        let required = 2 * cfg.min_samples_leaf;
        if n < required {
            return Err(Error::InsufficientRows { rows: n, required });
        }
        let m_try = cfg.m_try.resolve(x.len());
        let grown: Vec<(Tree, Vec<u32>)> = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(cfg.seed, &[STREAM_TREE, t as u64]);
                let bootstrap: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
                let mut rows = bootstrap.clone();
                let mut g = Grower {
                    x,
                    y,
                    max_depth: cfg.max_depth,
                    min_leaf: cfg.min_samples_leaf,
                    m_try,
                    nodes: Vec::new(),
                    pairs: Vec::with_capacity(n),
                };
                g.grow(&mut rows, 0, &mut rng);
                (Tree { nodes: g.nodes }, bootstrap)
            })
            .collect();
        let (trees, bootstraps) = grown.into_iter().unzip();
        Ok(Self {
            config: cfg.clone(),
            columns: columns.to_vec(),
            n_train: n,
            trees,
            bootstraps,
        })
    }

    pub fn train_table(table: &SampleTable, cfg: &ForestConfig) -> Result<Self> {
        Self::train(table.features(), &table.targets(), table.columns(), cfg)
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn bootstraps(&self) -> &[Vec<u32>] {
        &self.bootstraps
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    /// Forest made of the given trees and bootstraps; used to compose or
    /// subset forests.
    pub fn from_parts(
        config: ForestConfig,
        columns: Vec<String>,
        n_train: usize,
        trees: Vec<Tree>,
        bootstraps: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if trees.is_empty() || trees.len() != bootstraps.len() {
            return Err(Error::invalid("need one bootstrap per tree and at least one tree"));
        }
        for t in &trees {
            for n in &t.nodes {
                if let Node::Split { feature, .. } = n {
                    if *feature >= columns.len() {
                        return Err(Error::CorruptPayload(format!("split on feature {feature} out of range")));
                    }
                }
            }
        }
        if bootstraps.iter().flatten().any(|&r| r as usize >= n_train) {
            return Err(Error::CorruptPayload("bootstrap row out of range".into()));
        }
        Ok(Self {
            config,
            columns,
            n_train,
            trees,
            bootstraps,
        })
    }

    /// Predictions for column-major rows; columns must match the training
    /// schema by name and order.
    pub fn predict(&self, x: &[Vec<f64>], columns: &[String]) -> Result<Vec<f64>> {
        if columns != self.columns.as_slice() {
            return Err(Error::SchemaMismatch(format!(
                "model expects {} columns ({}...), input has {}",
                self.columns.len(),
                self.columns.first().map(String::as_str).unwrap_or(""),
                columns.len()
            )));
        }
        if x.len() != columns.len() {
            return Err(Error::SchemaMismatch("feature width differs from column names".into()));
        }
        let n = x.first().map_or(0, Vec::len);
        if x.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("ragged feature columns"));
        }
        Ok((0..n).into_par_iter().map(|r| self.predict_row(|f| x[f][r])).collect())
    }

    pub fn predict_table(&self, table: &SampleTable) -> Result<Vec<f64>> {
        self.predict(table.features(), table.columns())
    }

    /// Mean of the per-tree leaf values, summed in tree order.
    pub fn predict_row(&self, row: impl Fn(usize) -> f64 + Copy) -> f64 {
        self.trees.iter().map(|t| t.predict_with(row)).sum::<f64>() / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    fn informative(n: usize, noise_cols: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = rng_for(seed, &[1]);
        let mut x = vec![vec![0.0; n]; 1 + noise_cols];
        for c in x.iter_mut() {
            for v in c.iter_mut() {
                *v = rng.gen_range(0.0..10.0);
            }
        }
        let y = x[0].clone();
        (x, y)
    }

    fn walk_leaves(t: &Tree, i: usize, depth: usize, out: &mut Vec<(usize, usize)>) {
        match t.nodes[i] {
            Node::Leaf { count, .. } => out.push((count, depth)),
            Node::Split { left, right, .. } => {
                walk_leaves(t, left, depth + 1, out);
                walk_leaves(t, right, depth + 1, out);
            }
        }
    }

    #[test]
    fn defaults() {
        let c = ForestConfig::default();
        assert_eq!((c.n_trees, c.max_depth, c.min_samples_leaf, c.m_try), (100, 9, 5, MTry::Sqrt));
        assert_eq!(MTry::Sqrt.resolve(158), 12);
        assert_eq!(MTry::Third.resolve(158), 52);
        assert_eq!(MTry::Fixed(500).resolve(20), 20);
        assert_eq!("7".parse::<MTry>().unwrap(), MTry::Fixed(7));
        assert!("0".parse::<MTry>().is_err());
        let t: ForestConfig = serde_json::from_str(r#"{"m_try": 3, "seed": 4}"#).unwrap();
        assert_eq!(t.m_try, MTry::Fixed(3));
        let t: ForestConfig = serde_json::from_str(r#"{"m_try": "third"}"#).unwrap();
        assert_eq!(t.m_try, MTry::Third);
    }

    #[test]
    fn constant_target_predicted_exactly() {
        let (x, _) = informative(200, 3, 1);
        let y = vec![2.75; 200];
        let f = Forest::train(&x, &y, &names(4), &ForestConfig { n_trees: 10, ..Default::default() }).unwrap();
        assert!(f.predict(&x, &names(4)).unwrap().iter().all(|&p| p == 2.75));
        assert!(f.trees().iter().all(|t| t.nodes().len() == 1));
    }

    #[test]
    fn fits_identity_target() {
        let (x, y) = informative(5000, 10, 2);
        // All columns are split candidates, so every level can refine x1.
        let cfg = ForestConfig {
            n_trees: 20,
            m_try: MTry::Fixed(11),
            ..Default::default()
        };
        let f = Forest::train(&x, &y, &names(11), &cfg).unwrap();
        let p = f.predict(&x, &names(11)).unwrap();
        let mae = p.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64;
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (y.len() - 1) as f64).sqrt();
        assert!(mae < 0.1 * sd, "{mae} vs {sd}");
    }

    #[test]
    fn step_function_root_split() {
        let x = vec![(0..40).map(|i| i as f64).collect::<Vec<_>>()];
        let y: Vec<f64> = (0..40).map(|i| if i < 17 { 1.0 } else { 5.0 }).collect();
        let cfg = ForestConfig {
            n_trees: 5,
            min_samples_leaf: 1,
            ..Default::default()
        };
        let f = Forest::train(&x, &y, &names(1), &cfg).unwrap();
        for t in f.trees() {
            match t.nodes()[0] {
                Node::Split { threshold, .. } => {
                    let boot = &f.bootstraps()[f.trees().iter().position(|u| u == t).unwrap()];
                    let lo = boot.iter().map(|&r| r as f64).filter(|&v| v < 17.0).fold(f64::MIN, f64::max);
                    let hi = boot.iter().map(|&r| r as f64).filter(|&v| v >= 17.0).fold(f64::MAX, f64::min);
                    assert_eq!(threshold, (lo + hi) / 2.0);
                }
                Node::Leaf { .. } => panic!("root should split"),
            }
        }
        let p = f.predict(&x, &names(1)).unwrap();
        assert!(p.iter().zip(&y).all(|(a, b)| a == b));
    }

    #[test]
    fn leaf_and_depth_constraints() {
        let (x, mut y) = informative(1500, 4, 3);
        let mut rng = rng_for(9, &[]);
        for v in y.iter_mut() {
            *v += rng.gen_range(-1.0..1.0);
        }
        let cfg = ForestConfig {
            n_trees: 8,
            max_depth: 6,
            min_samples_leaf: 7,
            ..Default::default()
        };
        let f = Forest::train(&x, &y, &names(5), &cfg).unwrap();
        for (t, boot) in f.trees().iter().zip(f.bootstraps()) {
            assert!(t.depth() <= 6);
            let mut leaves = Vec::new();
            walk_leaves(t, 0, 0, &mut leaves);
            assert!(leaves.iter().all(|&(c, _)| c >= 7));
            assert_eq!(leaves.iter().map(|l| l.0).sum::<usize>(), boot.len());
            // Leaf values are the means of the bootstrap targets routed there.
            let mut sums = vec![(0.0, 0usize); t.nodes().len()];
            for &r in boot {
                let leaf = t.leaf_index(|c| x[c][r as usize]);
                sums[leaf].0 += y[r as usize];
                sums[leaf].1 += 1;
            }
            for (i, n) in t.nodes().iter().enumerate() {
                if let Node::Leaf { value, count } = *n {
                    assert_eq!(count, sums[i].1);
                    assert!((value - sums[i].0 / count as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn splits_reduce_variance() {
        let (x, mut y) = informative(600, 3, 5);
        for (i, v) in y.iter_mut().enumerate() {
            *v = (*v * 3.0).sin() + (i % 7) as f64 * 0.1;
        }
        let cfg = ForestConfig {
            n_trees: 4,
            min_samples_leaf: 2,
            ..Default::default()
        };
        let f = Forest::train(&x, &y, &names(4), &cfg).unwrap();
        for (t, boot) in f.trees().iter().zip(f.bootstraps()) {
            // Route bootstrap rows through every split and compare SSEs.
            fn sse(v: &[f64]) -> f64 {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|a| (a - m).powi(2)).sum()
            }
            let mut stack = vec![(0usize, boot.clone())];
            while let Some((i, rows)) = stack.pop() {
                if let Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } = t.nodes()[i]
                {
                    let (l, r): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&r| x[feature][r as usize] <= threshold);
                    let ys = |rs: &[u32]| rs.iter().map(|&r| y[r as usize]).collect::<Vec<_>>();
                    assert!(sse(&ys(&l)) + sse(&ys(&r)) < sse(&ys(&rows)));
                    stack.push((left, l));
                    stack.push((right, r));
                }
            }
        }
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let (x, y) = informative(800, 6, 6);
        let cfg = ForestConfig {
            n_trees: 12,
            seed: 42,
            ..Default::default()
        };
        let a = Forest::train(&x, &y, &names(7), &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| Forest::train(&x, &y, &names(7), &cfg).unwrap());
        assert_eq!(a, b);
        let pa = a.predict(&x, &names(7)).unwrap();
        let pb = pool.install(|| b.predict(&x, &names(7)).unwrap());
        assert!(pa.iter().zip(&pb).all(|(p, q)| p.to_bits() == q.to_bits()));
        let c = Forest::train(&x, &y, &names(7), &ForestConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_and_duplicated_trees() {
        let (x, y) = informative(300, 2, 7);
        let cfg = ForestConfig {
            n_trees: 1,
            ..Default::default()
        };
        let f = Forest::train(&x, &y, &names(3), &cfg).unwrap();
        let p = f.predict(&x, &names(3)).unwrap();
        for r in 0..300 {
            assert_eq!(p[r], f.trees()[0].predict_with(|c| x[c][r]));
        }
        let g = Forest::train(&x, &y, &names(3), &ForestConfig { n_trees: 5, ..cfg }).unwrap();
        let doubled = Forest::from_parts(
            g.config().clone(),
            g.columns().to_vec(),
            g.n_train(),
            g.trees().iter().chain(g.trees()).cloned().collect(),
            g.bootstraps().iter().chain(g.bootstraps()).cloned().collect(),
        )
        .unwrap();
        let a = g.predict(&x, &names(3)).unwrap();
        let b = doubled.predict(&x, &names(3)).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() <= 1e-12 * p.abs().max(1.0)));
    }

    #[test]
    fn input_errors() {
        let (x, y) = informative(9, 1, 8);
        let cfg = ForestConfig::default();
        assert!(matches!(
            Forest::train(&x, &y, &names(2), &cfg),
            Err(Error::InsufficientRows { rows: 9, required: 10 })
        ));
        let (mut x, y) = informative(50, 1, 8);
        x[1][3] = f64::NAN;
        assert!(matches!(Forest::train(&x, &y, &names(2), &cfg), Err(Error::NonFinite(_))));
        x[1][3] = 0.0;
        let f = Forest::train(&x, &y, &names(2), &ForestConfig { n_trees: 2, ..cfg }).unwrap();
        assert!(matches!(f.predict(&x[..1], &names(1)), Err(Error::SchemaMismatch(_))));
        let renamed = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(f.predict(&x, &renamed), Err(Error::SchemaMismatch(_))));
        assert!(ForestConfig { n_trees: 0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn predictions_within_target_range(seed in 0u64..1000, probes in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..20)) {
            let mut rng = rng_for(seed, &[]);
            let x: Vec<Vec<f64>> = (0..2).map(|_| (0..60).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
            let y: Vec<f64> = (0..60).map(|i| x[0][i] * 2.0 - x[1][i] + rng.gen_range(-1.0..1.0)).collect();
            let cfg = ForestConfig { n_trees: 5, min_samples_leaf: 2, seed, ..Default::default() };
            let f = Forest::train(&x, &y, &names(2), &cfg).unwrap();
            let lo = y.iter().cloned().fold(f64::MAX, f64::min);
            let hi = y.iter().cloned().fold(f64::MIN, f64::max);
            let px = vec![probes.iter().map(|p| p.0).collect(), probes.iter().map(|p| p.1).collect()];
            for p in f.predict(&px, &names(2)).unwrap() {
                prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
            }
        }
    }
}
