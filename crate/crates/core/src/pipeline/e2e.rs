use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_stack, feature_table, FeatureOptions, RegistrationSet};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, emit_reports, write_overlay_png, CvConfig, CvReport, FoldPlan};
use crate::forest::{oob_importance, Forest, ForestConfig};
use crate::pooling::{assemble, Schema};
use crate::rng::derive_seed;
use crate::sampling::dense_from_truth;
use crate::synth::{generate_pair, true_error_map, PairConfig};
use crate::table::SampleTable;
use crate::toyreg::{ensemble_base, ensemble_initial, grid_to_dvf, register, BSplineGrid, RegConfig};
use crate::volume::{norm3, Volume};

const STREAM_PAIR: u64 = 0x9a;
const STREAM_REG: u64 = 0x9b;
const STREAM_INITIAL: u64 = 0x9c;
const STREAM_BASE: u64 = 0x9d;
const STREAM_FOREST: u64 = 0xf0;
const STREAM_SPLIT: u64 = 0xcf;
const STREAM_SHOWCASE: u64 = 0x5c;

/// Deliberate local misregistration added to one extra pair, whose
/// predicted error map is rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShowcaseConfig {
    pub enabled: bool,
    /// Peak displacement added to the control points (mm, along x).
    pub bump_mm: f64,
    /// Gaussian radius of the bump over control points (mm).
    pub radius_mm: f64,
}

impl Default for ShowcaseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            bump_mm: 10.0,
            radius_mm: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E2eConfig {
    pub pairs: usize,
    pub pair: PairConfig,
    /// Iterations per resolution of the base registrations; one sample set
    /// per budget.
    pub budgets: Vec<usize>,
    pub registration: RegConfig,
    pub ensemble_size: usize,
    pub perturb_range_mm: f64,
    /// Lattice stride (voxels) of the training samples.
    pub stride: usize,
    pub schema: Schema,
    pub features: FeatureOptions,
    pub forest: ForestConfig,
    pub folds: usize,
    pub importance: bool,
    pub showcase: ShowcaseConfig,
    pub seed: u64,
}

impl Default for E2eConfig {
    fn default() -> Self {
        Self {
            pairs: 12,
            pair: PairConfig {
                amplitude_mm: 25.0,
                sigma_mm: 25.0,
                ..Default::default()
            },
            budgets: vec![2, 5, 12, 30],
            registration: RegConfig::default(),
            ensemble_size: 20,
            perturb_range_mm: 2.0,
            stride: 8,
            schema: Schema::Combined,
            features: FeatureOptions::default(),
            forest: ForestConfig::default(),
            folds: 3,
            importance: true,
            showcase: ShowcaseConfig::default(),
            seed: 7,
        }
    }
}

impl E2eConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs < 2 || self.folds < 2 || self.folds > self.pairs {
            return Err(Error::invalid(format!("{} folds over {} pairs", self.folds, self.pairs)));
        }
        if self.budgets.is_empty() {
            return Err(Error::invalid("at least one iteration budget is required"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        if self.schema.needs_ensembles() && self.ensemble_size < 2 {
            return Err(Error::invalid("ensembles need at least 2 members"));
        }
        if !(self.perturb_range_mm >= 0.0) {
            return Err(Error::invalid("perturbation range must be >= 0"));
        }
        self.registration.validate()?;
        self.forest.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Showcase {
    pub slice: usize,
    pub misregistered_voxels: usize,
    pub converged_voxels: usize,
    pub misregistered_mean_mm: f64,
    pub converged_mean_mm: f64,
    pub ratio: f64,
    pub true_misregistered_mean_mm: f64,
    pub true_converged_mean_mm: f64,
}

#[derive(Debug, Clone)]
pub struct E2eOutcome {
    pub table: SampleTable,
    pub report: CvReport,
    pub importance: Option<Vec<f64>>,
    pub showcase: Option<Showcase>,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    seed: u64,
    pair_seeds: Vec<u64>,
    forest_seed: u64,
    split_seed: u64,
    schema: String,
    columns: usize,
    rows: usize,
    config: &'a E2eConfig,
}

fn reg_with(cfg: &E2eConfig, iterations: usize, seed: u64) -> RegConfig {
    RegConfig {
        iterations,
        seed,
        ..cfg.registration.clone()
    }
}

fn register_pair(
    cfg: &E2eConfig,
    fixed: &Volume,
    moving: &Volume,
    budget: usize,
    labels: [u64; 2],
    bump: Option<&ShowcaseConfig>,
) -> Result<RegistrationSet> {
    let reg = reg_with(cfg, budget, derive_seed(cfg.seed, &[STREAM_REG, labels[0], labels[1]]));
    let init = reg.initial_grid(fixed.geometry())?;
    let mut grid: BSplineGrid = register(fixed, moving, &reg, &init)?;
    if let Some(b) = bump {
        add_bump(&mut grid, fixed, b);
    }
    let t_b = grid_to_dvf(&grid, fixed.geometry())?;
    let (initial, base) = if cfg.schema.needs_ensembles() {
        let p = cfg.ensemble_size;
        let r = cfg.perturb_range_mm;
        let s_i = derive_seed(cfg.seed, &[STREAM_INITIAL, labels[0], labels[1]]);
        let s_b = derive_seed(cfg.seed, &[STREAM_BASE, labels[0], labels[1]]);
        (
            ensemble_initial(fixed, moving, &reg, p, r, s_i)?,
            ensemble_base(fixed, moving, &reg, &grid, p, r, s_b)?,
        )
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(RegistrationSet { t_b, initial, base })
}

/// World point of the bump: in-plane center of the volume on its middle
/// axial slice, shifted a quarter extent along y.
fn bump_center(fixed: &Volume) -> [f64; 3] {
    let g = fixed.geometry();
    let e = g.extent();
    let mid = g.world([0, 0, g.dims[2] / 2]);
    [g.origin[0] + 0.5 * e[0], g.origin[1] + 0.3 * e[1], mid[2]]
}

fn add_bump(grid: &mut BSplineGrid, fixed: &Volume, b: &ShowcaseConfig) {
    let c = bump_center(fixed);
    let (o, s, d) = (grid.origin(), grid.spacing(), grid.dims());
    for k in 0..d[2] {
        for j in 0..d[1] {
            for i in 0..d[0] {
                let p = [o[0] + i as f64 * s[0], o[1] + j as f64 * s[1], o[2] + k as f64 * s[2]];
                let r2 = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>();
                let idx = grid.index(i, j, k);
                grid.coefficients_mut()[idx][0] += b.bump_mm * (-r2 / (2.0 * b.radius_mm * b.radius_mm)).exp();
            }
        }
    }
}

/// Runs the synthetic experiment and writes its reports to `out`.
pub fn run_e2e(cfg: &E2eConfig, out: impl AsRef<Path>) -> Result<E2eOutcome> {
    cfg.validate()?;
    let out = out.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let columns = cfg.schema.columns();
    let mut table = SampleTable::empty(columns.clone());
    let pair_seeds: Vec<u64> = (0..cfg.pairs)
        .map(|p| derive_seed(cfg.seed, &[STREAM_PAIR, p as u64]))
        .collect();
    for (p, &seed) in pair_seeds.iter().enumerate() {
        let pair = generate_pair(&cfg.pair, seed)?;
        let pair_id = format!("pair{p:02}");
        for (bi, &budget) in cfg.budgets.iter().enumerate() {
            let r = register_pair(cfg, &pair.fixed, &pair.moving, budget, [p as u64, bi as u64], None)?;
            let err = true_error_map(&r.t_b, &pair.truth)?;
            let samples = dense_from_truth(&pair_id, &err, cfg.stride)?;
            let stack = build_stack(&pair.fixed, &pair.moving, &r, &cfg.schema, &cfg.features)?;
            table.append(feature_table(&stack, samples, &cfg.schema)?)?;
        }
    }
    let forest_cfg = ForestConfig {
        seed: derive_seed(cfg.seed, &[STREAM_FOREST]),
        ..cfg.forest.clone()
    };
    let split_seed = derive_seed(cfg.seed, &[STREAM_SPLIT]);
    let cv = CvConfig {
        plan: FoldPlan::KFold(cfg.folds),
        forest: forest_cfg.clone(),
        seed: split_seed,
    };
    let report = cross_validate(&table, None, &cv)?;

    let (importance, showcase, mut extra) = if cfg.importance || cfg.showcase.enabled {
        let model = Forest::train_table(&table, &forest_cfg)?;
        let model_path = out.join("model.rmrf");
        model.save(&model_path)?;
        let importance = if cfg.importance {
            Some(oob_importance(&model, table.features(), &table.targets())?)
        } else {
            None
        };
        let mut files = vec![model_path];
        let showcase = if cfg.showcase.enabled {
            let (s, png) = run_showcase(cfg, &model, out)?;
            files.push(png);
            Some(s)
        } else {
            None
        };
        (importance, showcase, files)
    } else {
        (None, None, Vec::new())
    };

    let mut files = emit_reports(&report, importance.as_deref(), out)?;
    files.append(&mut extra);
    let table_path = out.join("samples.bin");
    table.write_binary(&table_path)?;
    files.push(table_path);
    if let Some(s) = &showcase {
        let p = out.join("showcase.json");
        let json = serde_json::to_string_pretty(s).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
        files.push(p);
    }
    let manifest = Manifest {
        tool: "regmap",
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        pair_seeds,
        forest_seed: forest_cfg.seed,
        split_seed,
        schema: cfg.schema.to_string(),
        columns: columns.len(),
        rows: table.len(),
        config: cfg,
    };
    let p = out.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    files.push(p);
    Ok(E2eOutcome {
        table,
        report,
        importance,
        showcase,
        files,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Registers an unseen pair at the largest budget, adds the bump to the
/// result and predicts the middle axial slice.
fn run_showcase(cfg: &E2eConfig, model: &Forest, out: &Path) -> Result<(Showcase, PathBuf)> {
    let pair = generate_pair(&cfg.pair, derive_seed(cfg.seed, &[STREAM_SHOWCASE]))?;
    let budget = *cfg.budgets.iter().max().expect("validated");
    let labels = [STREAM_SHOWCASE, 0];
    let plain = register_pair(cfg, &pair.fixed, &pair.moving, budget, labels, None)?;
    let bumped = register_pair(cfg, &pair.fixed, &pair.moving, budget, labels, Some(&cfg.showcase))?;
    let g = *pair.fixed.geometry();
    let k = g.dims[2] / 2;
    let stack = build_stack(&pair.fixed, &pair.moving, &bumped, &cfg.schema, &cfg.features)?;
    let voxels: Vec<[usize; 3]> = (0..g.dims[1])
        .flat_map(|j| (0..g.dims[0]).map(move |i| [i, j, k]))
        .collect();
    let features = assemble(&stack, &voxels, &cfg.schema)?;
    let predicted = model.predict(&features, &cfg.schema.columns())?;
    let truth = true_error_map(&bumped.t_b, &pair.truth)?;
    let shift: Vec<f64> = voxels
        .iter()
        .map(|&v| {
            let (a, b) = (bumped.t_b.at(v), plain.t_b.at(v));
            norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
        })
        .collect();
    let peak = shift.iter().cloned().fold(0.0, f64::max);
    let mut mis = (Vec::new(), Vec::new());
    let mut conv = (Vec::new(), Vec::new());
    for (n, &v) in voxels.iter().enumerate() {
        let t = truth.at(v);
        if shift[n] >= 0.5 * peak && peak > 0.0 {
            mis.0.push(predicted[n]);
            mis.1.push(t);
        } else if shift[n] <= 0.05 * peak && t < crate::sampling::CLASS_THRESHOLDS_MM[0] {
            conv.0.push(predicted[n]);
            conv.1.push(t);
        }
    }
    let png = out.join("error_map.png");
    let scale = predicted.iter().cloned().fold(crate::sampling::CLASS_THRESHOLDS_MM[1], f64::max);
    write_overlay_png(&pair.fixed, &predicted, k, scale, &png)?;
    let (pm, pc) = (mean(&mis.0), mean(&conv.0));
    Ok((
        Showcase {
            slice: k,
            misregistered_voxels: mis.0.len(),
            converged_voxels: conv.0.len(),
            misregistered_mean_mm: pm,
            converged_mean_mm: pc,
            ratio: pm / pc,
            true_misregistered_mean_mm: mean(&mis.1),
            true_converged_mean_mm: mean(&conv.1),
        },
        png,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_hash() {
        let c = E2eConfig::default();
        assert_eq!(c.schema.len(), 158);
        let json = serde_json::to_string(&c).unwrap();
        let back: E2eConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let other = E2eConfig { seed: 8, ..c.clone() };
        assert_ne!(other.hash(), c.hash());
        assert!(E2eConfig { folds: 13, ..c }.validate().is_err());
    }
}
