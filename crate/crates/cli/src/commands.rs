use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::Rng;
use regmap::eval::{cross_validate, emit_reports, write_importance_csv, write_overlay_png, CvConfig, FoldPlan};
use regmap::forest::{oob_importance, Forest, ForestConfig};
use regmap::landmarks::{LandmarkPair, LandmarkPairSet};
use regmap::mhd::{field_exists, read_field, read_mhd, write_field, write_mhd};
use regmap::pipeline::{build_stack, feature_table, run_e2e, RegistrationSet};
use regmap::pooling::{assemble, Schema};
use regmap::rng::{derive_seed, rng_for};
use regmap::sampling::{dense_from_truth, expand_neighborhood, landmark_error};
use regmap::synth::{generate_pair, true_error_map};
use regmap::table::SampleTable;
use regmap::toyreg::{ensemble_base, ensemble_initial, grid_to_dvf, register};
use regmap::{DisplacementField, Volume};
use serde::Serialize;
use serde_json::json;

use crate::config::FileConfig;
use crate::failure::Failure;
use crate::{Cli, Command, Global, PairInputs};

const STREAM_REG: u64 = 0x9b;
const STREAM_INITIAL: u64 = 0x9c;
const STREAM_BASE: u64 = 0x9d;
const STREAM_FOREST: u64 = 0xf0;
const STREAM_SPLIT: u64 = 0xcf;
const STREAM_LANDMARKS: u64 = 0x1d;

const TRUTH_STEM: &str = "truth";
const BASE_STEM: &str = "tb";
const MEMBER_STEM: &str = "dvf";

struct Ctx {
    global: Global,
    file: FileConfig,
}

impl Ctx {
    fn seed(&self) -> Option<u64> {
        self.global.seed.or(self.file.seed)
    }

    fn schema(&self) -> Option<Schema> {
        self.global.schema.clone().or_else(|| self.file.schema.clone())
    }

    fn out(&self) -> Result<&Path> {
        self.global
            .out
            .as_deref()
            .ok_or_else(|| Failure::Config("--out is required".into()).into())
    }

    fn forest(&self) -> ForestConfig {
        let mut f = self.file.forest.clone();
        if let Some(s) = self.seed() {
            f.seed = derive_seed(s, &[STREAM_FOREST]);
        }
        f
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.global.config.as_deref())?;
    let threads = cli.global.threads.or(file.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool")?;
    }
    let ctx = Ctx {
        global: cli.global,
        file,
    };
    match cli.command {
        Command::Synth {
            dims,
            amplitude_mm,
            sigma_mm,
            landmarks,
        } => synth(&ctx, dims, amplitude_mm, sigma_mm, landmarks),
        Command::Register {
            inputs,
            iterations,
            ensemble_size,
            perturb_mm,
            no_ensembles,
        } => register_cmd(&ctx, &inputs, iterations, ensemble_size, perturb_mm, no_ensembles),
        Command::Features {
            inputs,
            reg,
            truth,
            landmarks,
            pair_id,
            stride,
        } => features(&ctx, &inputs, &reg, truth, landmarks, pair_id, stride),
        Command::Train { tables } => train(&ctx, &tables),
        Command::Predict {
            model,
            table,
            inputs,
            reg,
            slice,
        } => predict(&ctx, &model, table.as_deref(), &inputs, reg.as_deref(), slice),
        Command::Evaluate {
            tables,
            folds,
            repeats,
            test_pairs,
        } => evaluate(&ctx, &tables, folds, repeats, test_pairs),
        Command::Importance { model, tables } => importance(&ctx, &model, &tables),
        Command::E2e {
            pairs,
            dims,
            budgets,
            stride,
            folds,
        } => e2e(&ctx, pairs, dims, budgets, stride, folds),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn manifest(command: &str, seed: Option<u64>, details: serde_json::Value) -> serde_json::Value {
    json!({
        "tool": "regmap",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "details": details,
    })
}

/// `<file>.manifest.json` next to a single-file output.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Failure::Missing(format!("{what} {}", path.display())).into());
    }
    Ok(())
}

fn image_paths(inputs: &PairInputs) -> Result<(PathBuf, PathBuf)> {
    let pick = |explicit: &Option<PathBuf>, name: &str| -> Result<PathBuf> {
        match (explicit, &inputs.pair) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(dir.join(name)),
            (None, None) => Err(Failure::Missing(format!("--{} or --pair", name.trim_end_matches(".mhd"))).into()),
        }
    };
    let (f, m) = (pick(&inputs.fixed, "fixed.mhd")?, pick(&inputs.moving, "moving.mhd")?);
    require(&f, "fixed image")?;
    require(&m, "moving image")?;
    Ok((f, m))
}

fn load_images(inputs: &PairInputs) -> Result<(Volume, Volume)> {
    let (f, m) = image_paths(inputs)?;
    let fixed = read_mhd(&f).with_context(|| format!("reading {}", f.display()))?;
    let moving = read_mhd(&m).with_context(|| format!("reading {}", m.display()))?;
    Ok((fixed, moving))
}

fn synth(ctx: &Ctx, dims: Option<usize>, amplitude: Option<f64>, sigma: Option<f64>, landmarks: usize) -> Result<()> {
    let out = ctx.out()?;
    let mut cfg = ctx.file.pair.clone();
    if let Some(n) = dims {
        cfg.dims = [n; 3];
    }
    if let Some(a) = amplitude {
        cfg.amplitude_mm = a;
    }
    if let Some(s) = sigma {
        cfg.sigma_mm = s;
    }
    let seed = ctx.seed().unwrap_or(0);
    let pair = generate_pair(&cfg, seed).map_err(|e| match e {
        regmap::Error::InvalidArgument(m) => anyhow::Error::new(Failure::Config(m)),
        other => other.into(),
    })?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_mhd(&pair.fixed, out.join("fixed.mhd"))?;
    write_mhd(&pair.moving, out.join("moving.mhd"))?;
    write_field(&pair.truth, out, TRUTH_STEM)?;
    if landmarks > 0 {
        synthetic_landmarks(&pair.truth, landmarks, seed)?.write(out.join("landmarks.txt"))?;
    }
    write_json(
        &out.join("manifest.json"),
        &manifest("synth", Some(seed), json!({ "pair": cfg, "landmarks": landmarks })),
    )
}

/// Points drawn uniformly inside the central 80% of the volume, paired
/// with their images under the true transform.
fn synthetic_landmarks(truth: &DisplacementField, n: usize, seed: u64) -> Result<LandmarkPairSet> {
    let g = truth.geometry();
    let ext = g.extent();
    let mut rng = rng_for(seed, &[STREAM_LANDMARKS]);
    let pairs = (0..n)
        .map(|_| {
            let x: [f64; 3] = [0, 1, 2].map(|a| g.origin[a] + ext[a] * rng.gen_range(0.1..0.9));
            let u = truth.sample(x);
            LandmarkPair {
                fixed: x,
                moving: [x[0] + u[0], x[1] + u[1], x[2] + u[2]],
            }
        })
        .collect();
    Ok(LandmarkPairSet::new("synthetic", pairs)?)
}

fn register_cmd(
    ctx: &Ctx,
    inputs: &PairInputs,
    iterations: Option<usize>,
    ensemble_size: Option<usize>,
    perturb: Option<f64>,
    no_ensembles: bool,
) -> Result<()> {
    let out = ctx.out()?;
    let (fixed, moving) = load_images(inputs)?;
    let seed = ctx.seed().unwrap_or(0);
    let mut reg = ctx.file.registration.clone();
    if let Some(it) = iterations {
        reg.iterations = it;
    }
    reg.seed = derive_seed(seed, &[STREAM_REG]);
    reg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let p = ensemble_size.unwrap_or(ctx.file.ensemble.size);
    let range = perturb.unwrap_or(ctx.file.ensemble.perturb_range_mm);
    if !no_ensembles && p < 2 {
        return Err(Failure::Config("ensembles need at least 2 members".into()).into());
    }
    let init = reg.initial_grid(fixed.geometry())?;
    let grid = register(&fixed, &moving, &reg, &init)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_field(&grid_to_dvf(&grid, fixed.geometry())?, out, BASE_STEM)?;
    if !no_ensembles {
        let initial = ensemble_initial(&fixed, &moving, &reg, p, range, derive_seed(seed, &[STREAM_INITIAL]))?;
        let base = ensemble_base(&fixed, &moving, &reg, &grid, p, range, derive_seed(seed, &[STREAM_BASE]))?;
        for (name, members) in [("initial", &initial), ("base", &base)] {
            for (k, u) in members.iter().enumerate() {
                write_field(u, out.join(name).join(k.to_string()), MEMBER_STEM)?;
            }
        }
    }
    write_json(
        &out.join("manifest.json"),
        &manifest(
            "register",
            Some(seed),
            json!({
                "registration": reg,
                "ensemble_size": if no_ensembles { 0 } else { p },
                "perturb_range_mm": range,
            }),
        ),
    )
}

fn read_members(dir: &Path) -> Result<Vec<DisplacementField>> {
    let mut out = Vec::new();
    while field_exists(dir.join(out.len().to_string()), MEMBER_STEM) {
        out.push(read_field(dir.join(out.len().to_string()), MEMBER_STEM)?);
    }
    Ok(out)
}

fn load_registration(reg: &Path) -> Result<RegistrationSet> {
    if !field_exists(reg, BASE_STEM) {
        return Err(Failure::Missing(format!("base transform {}/{BASE_STEM}_*.mhd", reg.display())).into());
    }
    Ok(RegistrationSet {
        t_b: read_field(reg, BASE_STEM)?,
        initial: read_members(&reg.join("initial"))?,
        base: read_members(&reg.join("base"))?,
    })
}

fn features(
    ctx: &Ctx,
    inputs: &PairInputs,
    reg_dir: &Path,
    truth: Option<PathBuf>,
    landmarks: Option<PathBuf>,
    pair_id: Option<String>,
    stride: Option<usize>,
) -> Result<()> {
    let out = ctx.out()?;
    let schema = ctx.schema().unwrap_or(Schema::Combined);
    let (fixed, moving) = load_images(inputs)?;
    let reg = load_registration(reg_dir)?;
    let pair_id = pair_id
        .or_else(|| {
            inputs
                .pair
                .as_ref()
                .and_then(|p| p.file_name())
                .map(|s| s.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| "pair".into());
    let g = *fixed.geometry();
    let truth_dir = truth.or_else(|| inputs.pair.clone().filter(|p| field_exists(p, TRUTH_STEM)));
    let stride = stride.unwrap_or(ctx.file.sampling.stride);
    let (samples, source) = if let Some(lm) = &landmarks {
        require(lm, "landmark file")?;
        let set = LandmarkPairSet::read(lm, pair_id.clone())?;
        let errors = landmark_error(&set, &reg.t_b)?;
        let s = expand_neighborhood(&pair_id, &errors, &g, &ctx.file.sampling.neighborhood)?;
        (s, json!({ "landmarks": lm, "neighborhood": ctx.file.sampling.neighborhood }))
    } else if let Some(dir) = &truth_dir {
        if !field_exists(dir, TRUTH_STEM) {
            return Err(Failure::Missing(format!("true transform {}/{TRUTH_STEM}_*.mhd", dir.display())).into());
        }
        let err = true_error_map(&reg.t_b, &read_field(dir, TRUTH_STEM)?)?;
        (dense_from_truth(&pair_id, &err, stride)?, json!({ "truth": dir, "stride": stride }))
    } else {
        return Err(Failure::Missing("a target source: --landmarks or --truth".into()).into());
    };
    let stack = build_stack(&fixed, &moving, &reg, &schema, &ctx.file.features)?;
    let table = feature_table(&stack, samples, &schema)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    table.write(out)?;
    write_json(
        &sidecar(out),
        &manifest(
            "features",
            ctx.seed(),
            json!({
                "schema": schema,
                "pair_id": pair_id,
                "rows": table.len(),
                "columns": table.columns().len(),
                "targets": source,
                "features": ctx.file.features,
                "ensemble_members": [reg.initial.len(), reg.base.len()],
            }),
        ),
    )
}

fn load_tables(paths: &[PathBuf], schema: Option<&Schema>) -> Result<SampleTable> {
    let mut merged: Option<SampleTable> = None;
    for p in paths {
        require(p, "table")?;
        let mut t = SampleTable::read(p).with_context(|| format!("reading {}", p.display()))?;
        if let Some(s) = schema {
            t = t.project(&s.columns()).with_context(|| format!("table {} under schema {s}", p.display()))?;
        }
        match merged.as_mut() {
            None => merged = Some(t),
            Some(m) => m.append(t).with_context(|| format!("appending {}", p.display()))?,
        }
    }
    merged.ok_or_else(|| Failure::Missing("--table".into()).into())
}

fn train(ctx: &Ctx, tables: &[PathBuf]) -> Result<()> {
    let out = ctx.out()?;
    let schema = ctx.schema();
    let table = load_tables(tables, schema.as_ref())?;
    let forest_cfg = ctx.forest();
    forest_cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let forest = Forest::train_table(&table, &forest_cfg)?;
    forest.save(out)?;
    write_json(
        &sidecar(out),
        &manifest(
            "train",
            ctx.seed(),
            json!({
                "tables": tables,
                "schema": schema,
                "rows": table.len(),
                "columns": table.columns(),
                "forest": forest_cfg,
            }),
        ),
    )
}

/// Named schema whose columns equal the model's, or the requested one when
/// it matches.
fn model_schema(model: &Forest, requested: Option<Schema>) -> Result<Schema> {
    let candidates = match requested {
        Some(s) => vec![s],
        None => vec![
            Schema::Combined,
            Schema::Intensity,
            Schema::Registration,
            Schema::CombinedMd,
            Schema::NoPooling,
        ],
    };
    candidates
        .into_iter()
        .find(|s| s.columns() == model.columns())
        .ok_or_else(|| {
            Failure::Schema(format!(
                "no schema matches the model's {} columns; pass --schema",
                model.columns().len()
            ))
            .into()
        })
}

fn predict(
    ctx: &Ctx,
    model_path: &Path,
    table: Option<&Path>,
    inputs: &PairInputs,
    reg: Option<&Path>,
    slice: Option<usize>,
) -> Result<()> {
    let out = ctx.out()?;
    require(model_path, "model")?;
    let model = Forest::load(model_path)?;
    if let Some(t) = table {
        let table = load_tables(&[t.to_path_buf()], None)?.project(model.columns())?;
        let y_hat = model.predict_table(&table)?;
        let mut csv = String::from("pair_id,vi,vj,vk,y,y_hat\n");
        for (s, p) in table.samples().iter().zip(&y_hat) {
            writeln!(csv, "{},{},{},{},{},{}", s.pair_id, s.voxel[0], s.voxel[1], s.voxel[2], s.y, p)?;
        }
        std::fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
        return write_json(
            &sidecar(out),
            &manifest("predict", ctx.seed(), json!({ "model": model_path, "table": t, "rows": table.len() })),
        );
    }
    let reg = reg.ok_or_else(|| Failure::Missing("--table, or --reg with the pair images".into()))?;
    let schema = model_schema(&model, ctx.schema())?;
    let (fixed, moving) = load_images(inputs)?;
    let set = load_registration(reg)?;
    let g = *fixed.geometry();
    let k = slice.unwrap_or(g.dims[2] / 2);
    if k >= g.dims[2] {
        return Err(Failure::Config(format!("slice {k} outside {} slices", g.dims[2])).into());
    }
    let stack = build_stack(&fixed, &moving, &set, &schema, &ctx.file.features)?;
    let voxels: Vec<[usize; 3]> = (0..g.dims[1]).flat_map(|j| (0..g.dims[0]).map(move |i| [i, j, k])).collect();
    let x = assemble(&stack, &voxels, &schema)?;
    let y_hat = model.predict(&x, &schema.columns())?;
    std::fs::create_dir_all(out)?;
    let mut csv = String::from("vi,vj,vk,y_hat\n");
    for (v, p) in voxels.iter().zip(&y_hat) {
        writeln!(csv, "{},{},{},{}", v[0], v[1], v[2], p)?;
    }
    std::fs::write(out.join("slice_prediction.csv"), csv)?;
    let scale = y_hat.iter().cloned().fold(regmap::sampling::CLASS_THRESHOLDS_MM[1], f64::max);
    write_overlay_png(&fixed, &y_hat, k, scale, out.join("error_map.png"))?;
    write_json(
        &out.join("manifest.json"),
        &manifest(
            "predict",
            ctx.seed(),
            json!({ "model": model_path, "schema": schema, "slice": k, "colour_max_mm": scale }),
        ),
    )
}

fn evaluate(
    ctx: &Ctx,
    tables: &[PathBuf],
    folds: Option<usize>,
    repeats: Option<usize>,
    test_pairs: Option<usize>,
) -> Result<()> {
    let out = ctx.out()?;
    let schema = ctx.schema();
    let table = load_tables(tables, schema.as_ref())?;
    let cv = &ctx.file.cv;
    let plan = match repeats.or(cv.repeats) {
        Some(r) => FoldPlan::Repeated {
            test_pairs: test_pairs.unwrap_or(cv.test_pairs),
            repeats: r,
        },
        None => FoldPlan::KFold(folds.unwrap_or(cv.folds)),
    };
    let seed = ctx.seed().unwrap_or(0);
    let cfg = CvConfig {
        plan,
        forest: ctx.forest(),
        seed: derive_seed(seed, &[STREAM_SPLIT]),
    };
    cfg.forest.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let report = cross_validate(&table, None, &cfg).map_err(|e| match e {
        regmap::Error::InvalidArgument(m) => anyhow::Error::new(Failure::Config(m)),
        other => other.into(),
    })?;
    emit_reports(&report, None, out)?;
    let a = &report.aggregate;
    println!(
        "mae {:.4} (baseline {:.4})  accuracy {:.4} (majority {:.4})",
        a.mae, a.baseline_mae, a.accuracy, a.majority_rate
    );
    write_json(
        &out.join("manifest.json"),
        &manifest(
            "evaluate",
            Some(seed),
            json!({ "tables": tables, "schema": schema, "cv": cfg, "aggregate": a }),
        ),
    )
}

fn importance(ctx: &Ctx, model_path: &Path, tables: &[PathBuf]) -> Result<()> {
    let out = ctx.out()?;
    require(model_path, "model")?;
    let model = Forest::load(model_path)?;
    let table = load_tables(tables, None)?.project(model.columns())?;
    if table.len() != model.n_train() {
        return Err(Failure::Schema(format!(
            "model was trained on {} rows, table has {}",
            model.n_train(),
            table.len()
        ))
        .into());
    }
    let imp = oob_importance(&model, table.features(), &table.targets())?;
    write_importance_csv(model.columns(), &imp, out)?;
    write_json(
        &sidecar(out),
        &manifest("importance", ctx.seed(), json!({ "model": model_path, "tables": tables })),
    )
}

fn e2e(
    ctx: &Ctx,
    pairs: Option<usize>,
    dims: Option<usize>,
    budgets: Option<Vec<usize>>,
    stride: Option<usize>,
    folds: Option<usize>,
) -> Result<()> {
    let out = ctx.out()?;
    let mut cfg = ctx.file.e2e.clone();
    if let Some(p) = pairs {
        cfg.pairs = p;
    }
    if let Some(n) = dims {
        cfg.pair.dims = [n; 3];
    }
    if let Some(b) = budgets {
        cfg.budgets = b;
    }
    if let Some(s) = stride {
        cfg.stride = s;
    }
    if let Some(f) = folds {
        cfg.folds = f;
    }
    if let Some(s) = ctx.schema() {
        cfg.schema = s;
    }
    if let Some(s) = ctx.seed() {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let outcome = run_e2e(&cfg, out)?;
    let a = &outcome.report.aggregate;
    println!(
        "mae {:.4} (baseline {:.4})  accuracy {:.4} (majority {:.4})",
        a.mae, a.baseline_mae, a.accuracy, a.majority_rate
    );
    if let Some(s) = &outcome.showcase {
        println!(
            "showcase: misregistered {:.3} mm, converged {:.3} mm, ratio {:.3}",
            s.misregistered_mean_mm, s.converged_mean_mm, s.ratio
        );
    }
    Ok(())
}
