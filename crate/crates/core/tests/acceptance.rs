//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Positional numeric arguments restrict the run to
//! those criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use regmap::eval::{classify_metrics, mae};
use regmap::features::{
    bias_map, cvh, jacobian_det, local_mi, mind_distance, nc, std_dvf, Binning, FeatureMap, MindPattern, Units,
};
use regmap::forest::{oob_importance, Forest, ForestConfig};
use regmap::landmarks::{LandmarkPair, LandmarkPairSet};
use regmap::pipeline::{run_e2e, E2eConfig};
use regmap::pooling::{avg_pool, max_pool, BOX_SIZES_MM};
use regmap::rng::rng_for;
use regmap::sampling::landmark_error;
use regmap::synth::{generate_pair, PairConfig};
use regmap::{warp, DisplacementField, Geometry, Volume};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, format!("{what}: got {got}, want {want} (tol {tol})"))
}

/// Smallest odd voxel count covering `mm`, per axis.
fn oracle_box(mm: f64, spacing: [f64; 3]) -> [usize; 3] {
    spacing.map(|s| {
        let mut n = 1usize;
        while (n as f64) * s < mm - 1e-9 {
            n += 2;
        }
        n
    })
}

fn brute_box(data: &[f64], dims: [usize; 3], c: [usize; 3], n: [usize; 3]) -> (f64, f64) {
    let h = n.map(|v| v / 2);
    let lo = [0, 1, 2].map(|a| c[a].saturating_sub(h[a]));
    let hi = [0, 1, 2].map(|a| (c[a] + h[a]).min(dims[a] - 1));
    let (mut sum, mut max, mut count) = (0.0, f64::NEG_INFINITY, 0usize);
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                let v = data[i + dims[0] * (j + dims[1] * k)];
                sum += v;
                max = max.max(v);
                count += 1;
            }
        }
    }
    (sum / count as f64, max)
}

fn criterion_1() -> Outcome {
    let dims = [32usize; 3];
    let spacing = [0.78, 0.78, 2.5];
    let g = Geometry::new(dims, spacing, [0.0; 3]).unwrap();
    let mut checked = 0usize;
    for seed in 0..20u64 {
        let mut rng = rng_for(seed, &[0xacc1]);
        let data: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.0..1000.0)).collect();
        let map = FeatureMap::new("m", Volume::new(g, data.clone()).unwrap(), Units::Mm).unwrap();
        // Every voxel of a border-touching set of rows, plus random interior voxels.
        let mut probes: Vec<[usize; 3]> = Vec::new();
        for k in [0, 1, 15, 30, 31] {
            for j in [0, 16, 31] {
                for i in 0..32 {
                    probes.push([i, j, k]);
                }
            }
        }
        probes.extend((0..300).map(|_| [rng.gen_range(0..32), rng.gen_range(0..32), rng.gen_range(0..32)]));
        for &b in &BOX_SIZES_MM {
            let n = oracle_box(b, spacing);
            let avg = avg_pool(&map, b);
            let max = max_pool(&map, b);
            for &c in &probes {
                let (m, x) = brute_box(&data, dims, c, n);
                let a = avg.values.at(c);
                ensure(
                    (a - m).abs() <= 1e-6 * m.abs().max(1e-12),
                    format!("seed {seed} box {b} at {c:?}: mean {a} vs {m}"),
                )?;
                ensure(max.values.at(c) == x, format!("seed {seed} box {b} at {c:?}: max {} vs {x}", max.values.at(c)))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (map, box, voxel) probes agree with brute force"))
}

fn geo1(n: usize) -> Geometry {
    Geometry::new([n, n, n], [1.0; 3], [-2.0; 3]).unwrap()
}

fn criterion_2() -> Outcome {
    let g = geo1(5);
    let s = std_dvf(
        "stdT",
        &[DisplacementField::constant(g, [1.0, 0.0, 0.0]), DisplacementField::constant(g, [3.0, 0.0, 0.0])],
    )
    .map_err(|e| e.to_string())?;
    close("std_dvf", s.values.at([2, 2, 2]), 2f64.sqrt(), 1e-9)?;

    let b = bias_map(
        "biasT",
        &DisplacementField::constant(g, [1.0, 4.0, 5.0]),
        &[DisplacementField::constant(g, [0.0, 1.0, 1.0]), DisplacementField::constant(g, [2.0, 1.0, 1.0])],
    )
    .map_err(|e| e.to_string())?;
    close("bias_map", b.values.at([1, 2, 3]), 5.0, 1e-9)?;

    // One (0, 0) bin counted 10 times in member A and 20 times in member B.
    let line = Geometry::new([30, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
    let vol = |f: &(dyn Fn(usize) -> f64 + Sync)| Volume::from_fn(line, |c| f(c[0]));
    let fixed = vol(&|_| 0.0);
    let lookup = vol(&|i| if i == 0 { 0.0 } else { 1.0 });
    let a = vol(&|i| if i < 10 { 0.0 } else { 1.0 });
    let bb = vol(&|i| if i < 20 { 0.0 } else { 1.0 });
    let c = cvh(&fixed, &lookup, &[a, bb], 2, 5.0).map_err(|e| e.to_string())?;
    close("cvh", c.values.at([0, 0, 0]), 0.3536, 1e-4)?;
    close("cvh exact", c.values.at([0, 0, 0]), 50f64.sqrt() / 20.0, 1e-6)?;

    let lin = DisplacementField::from_world_fn(geo1(7), |p| p.map(|x| 0.1 * x));
    let j = jacobian_det(&lin).map_err(|e| e.to_string())?;
    close("jacobian_det", j.values.at([3, 3, 3]), 1.331, 1e-9)?;

    let g = geo1(5);
    let u = DisplacementField::constant(g, [1.0, 2.0, 2.0]);
    let set = LandmarkPairSet::new(
        "p",
        vec![LandmarkPair {
            fixed: [0.0; 3],
            moving: [0.0; 3],
        }],
    )
    .map_err(|e| e.to_string())?;
    let e = landmark_error(&set, &u).map_err(|e| e.to_string())?;
    close("landmark_error", e[0].1, 3.0, 1e-9)?;

    let m = mae(&[1.0, 4.0, 7.0], &[2.0, 2.0, 8.0]).map_err(|e| e.to_string())?;
    close("mae", m.overall.mean, 4.0 / 3.0, 1e-9)?;
    for (c, want) in [1.0, 2.0, 1.0].iter().enumerate() {
        close("mae per class", m.per_class[c].map(|s| s.mean).unwrap_or(f64::NAN), *want, 1e-9)?;
    }
    let k = classify_metrics(&[1.0, 4.0, 7.0], &[2.0, 2.0, 8.0]).map_err(|e| e.to_string())?;
    close("accuracy", k.accuracy, 2.0 / 3.0, 1e-9)?;
    for (c, want) in [2.0 / 3.0, 0.0, 1.0].iter().enumerate() {
        close("f1", k.f1[c].unwrap_or(f64::NAN), *want, 1e-9)?;
    }
    Ok("std_dvf, bias_map, cvh, jacobian_det, landmark_error, mae, classify_metrics match".into())
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn criterion_3() -> Outcome {
    let g = Geometry::new([9, 8, 7], [0.8, 1.2, 2.5], [-3.0, 5.0, 10.0]).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = rng_for(seed, &[0xacc3]);
        let mut a = [[0.0; 3]; 3];
        for row in a.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let frob = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let scale = rng.gen_range(0.05..0.29) / frob;
        a.iter_mut().flatten().for_each(|v| *v *= scale);
        let field = DisplacementField::from_world_fn(g, |p| {
            [0, 1, 2].map(|r| (0..3).map(|c| a[r][c] * p[c]).sum::<f64>())
        });
        let mut ia = a;
        for (d, row) in ia.iter_mut().enumerate() {
            row[d] += 1.0;
        }
        let want = det3(ia);
        let j = jacobian_det(&field).map_err(|e| e.to_string())?;
        for k in 1..g.dims[2] - 1 {
            for jj in 1..g.dims[1] - 1 {
                for i in 1..g.dims[0] - 1 {
                    let got = j.values.at([i, jj, k]);
                    worst = worst.max((got - want).abs());
                    close(&format!("A #{seed} at {:?}", [i, jj, k]), got, want, 1e-6)?;
                }
            }
        }
    }
    Ok(format!("5 affine fields, max interior deviation {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let cfg = PairConfig {
        dims: [24, 24, 16],
        spacing: [1.5, 1.5, 2.5],
        amplitude_mm: 6.0,
        sigma_mm: 10.0,
        ..Default::default()
    };
    let g = Geometry::new(cfg.dims, cfg.spacing, [0.0; 3]).unwrap();
    let mut voxels = 0usize;
    for seed in 0..10u64 {
        // Even seeds: synthetic phantom pairs; odd seeds: independent noise.
        let (fixed, warped, members) = if seed % 2 == 0 {
            let p = generate_pair(&cfg, seed).map_err(|e| e.to_string())?;
            let members: Vec<Volume> = [0.8, 0.9, 1.1]
                .iter()
                .map(|s| warp(&p.moving, &p.truth.scaled(*s)).unwrap())
                .collect();
            let w = warp(&p.moving, &p.truth.scaled(0.5)).unwrap();
            (p.fixed, w, members)
        } else {
            let mut rng = rng_for(seed, &[0xacc4]);
            let f = Volume::new(g, (0..g.len()).map(|_| rng.gen_range(-500.0..500.0)).collect()).unwrap();
            let w = Volume::new(g, (0..g.len()).map(|_| rng.gen_range(-500.0..500.0)).collect()).unwrap();
            let members = (0..3)
                .map(|_| Volume::new(g, (0..g.len()).map(|_| rng.gen_range(-500.0..500.0)).collect()).unwrap())
                .collect();
            (f, w, members)
        };
        for box_mm in [5.0, 15.0, 40.0] {
            for binning in [Binning::Constant(32), Binning::Sturges] {
                let m = local_mi(&fixed, &warped, box_mm, binning, 1).map_err(|e| e.to_string())?;
                for (&n, &p) in m.nmi.values.data().iter().zip(m.pmi.values.data()) {
                    ensure((1.0..=2.0).contains(&n), format!("seed {seed} box {box_mm}: NMI {n}"))?;
                    ensure((0.0..=1.0).contains(&p), format!("seed {seed} box {box_mm}: PMI {p}"))?;
                }
            }
            let c = nc(&fixed, &warped, box_mm).map_err(|e| e.to_string())?;
            for &v in c.values.data() {
                ensure((-1.0..=1.0).contains(&v), format!("seed {seed} box {box_mm}: NC {v}"))?;
            }
        }
        let md = mind_distance(&fixed, &warped, &MindPattern::for_spacing(cfg.spacing)).map_err(|e| e.to_string())?;
        ensure(md.values.data().iter().all(|&v| v >= 0.0), format!("seed {seed}: negative MIND distance"))?;
        let cv = cvh(&fixed, &warped, &members, 32, 5.0).map_err(|e| e.to_string())?;
        ensure(cv.values.data().iter().all(|&v| v >= 0.0), format!("seed {seed}: negative CVH"))?;
        voxels += g.len();
    }
    Ok(format!("{voxels} voxels over 10 pairs within range for NMI, PMI, NC, MIND, CVH"))
}

fn regression_set(rows: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = rng_for(seed, &[0xacc5]);
    let x: Vec<Vec<f64>> = (0..20).map(|_| (0..rows).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let y = (0..rows)
        .map(|r| (0..10).map(|c| x[c][r]).sum::<f64>() + rng.gen_range(-0.1..0.1))
        .collect();
    (x, y)
}

fn criterion_5() -> Outcome {
    let columns: Vec<String> = (0..10).map(|i| format!("inf{i}")).chain((0..10).map(|i| format!("noise{i}"))).collect();
    let mut ranked = 0;
    let mut worst_ratio = 0.0f64;
    for seed in 0..20u64 {
        let (x, y) = regression_set(5000, seed);
        let (xt, yt) = regression_set(1000, seed + 1000);
        let cfg = ForestConfig {
            seed,
            ..ForestConfig::default()
        };
        let f = Forest::train(&x, &y, &columns, &cfg).map_err(|e| e.to_string())?;
        let pred = f.predict(&xt, &columns).map_err(|e| e.to_string())?;
        let mean = yt.iter().sum::<f64>() / yt.len() as f64;
        let var = yt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / yt.len() as f64;
        let mse = pred.iter().zip(&yt).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / yt.len() as f64;
        worst_ratio = worst_ratio.max(mse / var);
        ensure(mse < 0.5 * var, format!("seed {seed}: held-out MSE {mse:.4} vs 0.5 Var {:.4}", 0.5 * var))?;
        let imp = oob_importance(&f, &x, &y).map_err(|e| e.to_string())?;
        let weakest = imp[..10].iter().cloned().fold(f64::INFINITY, f64::min);
        let strongest_noise = imp[10..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if weakest > strongest_noise {
            ranked += 1;
        }
    }
    ensure(ranked >= 18, format!("informative above noise in {ranked}/20 seeds"))?;
    Ok(format!("max MSE/Var {worst_ratio:.3}; informative above noise in {ranked}/20 seeds"))
}

struct E2eRuns {
    first: regmap::pipeline::E2eOutcome,
    metrics: [Vec<u8>; 2],
    dirs: [tempfile::TempDir; 2],
    seconds: [f64; 2],
}

fn e2e_runs() -> Result<E2eRuns, String> {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let cfg = E2eConfig::default();
    let mut outcomes = Vec::new();
    let mut seconds = [0.0; 2];
    for (n, d) in dirs.iter().enumerate() {
        let t = Instant::now();
        outcomes.push(run_e2e(&cfg, d.path()).map_err(|e| e.to_string())?);
        seconds[n] = t.elapsed().as_secs_f64();
    }
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).map_err(|e| e.to_string());
    let metrics = [read(dirs[0].path())?, read(dirs[1].path())?];
    Ok(E2eRuns {
        first: outcomes.swap_remove(0),
        metrics,
        dirs,
        seconds,
    })
}

fn criterion_6(runs: &E2eRuns) -> Outcome {
    let cfg = E2eConfig::default();
    let t = &runs.first.table;
    ensure(cfg.pairs == 12 && cfg.pair.dims == [64; 3], "desk-scale configuration")?;
    ensure(cfg.budgets.len() == 4 && cfg.ensemble_size == 20 && cfg.folds == 3, "protocol settings")?;
    ensure(t.columns().len() == 158, format!("{} columns", t.columns().len()))?;
    ensure(t.pair_ids().len() == 12, format!("{} pairs", t.pair_ids().len()))?;
    let a = &runs.first.report.aggregate;
    ensure(runs.first.report.folds.len() == 3, "3 folds")?;
    let msg = format!(
        "MAE {:.3} vs baseline {:.3} (ratio {:.3}); accuracy {:.3} vs majority {:.3}; {:.0} s",
        a.mae,
        a.baseline_mae,
        a.mae / a.baseline_mae,
        a.accuracy,
        a.majority_rate,
        runs.seconds[0]
    );
    ensure(a.mae <= 0.8 * a.baseline_mae, msg.clone())?;
    ensure(a.accuracy > a.majority_rate, msg.clone())?;
    ensure(runs.seconds[0] < 30.0 * 60.0, msg.clone())?;
    Ok(msg)
}

fn criterion_7(runs: &E2eRuns) -> Outcome {
    ensure(!runs.metrics[0].is_empty(), "empty metrics.csv")?;
    ensure(runs.metrics[0] == runs.metrics[1], "metrics.csv differs between runs")?;
    Ok(format!("metrics.csv identical ({} bytes) across two seeded runs", runs.metrics[0].len()))
}

fn criterion_8() -> Outcome {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = std::fs::read_to_string(&readme).map_err(|e| format!("{}: {e}", readme.display()))?;
    for needle in ["1.07", "1.86", "90.7", "not reproduced", "regmap features", "--landmarks", "initial/<k>/dvf_dx.mhd"] {
        ensure(text.contains(needle), format!("README lacks '{needle}'"))?;
    }
    Ok("README states the non-reproduced results and the external-data ingestion path".into())
}

fn criterion_9(runs: &E2eRuns) -> Outcome {
    let s = runs.first.showcase.as_ref().ok_or("no showcase")?;
    ensure(runs.dirs[0].path().join("error_map.png").exists(), "error_map.png missing")?;
    ensure(s.misregistered_voxels > 0 && s.converged_voxels > 0, "empty region")?;
    let msg = format!(
        "predicted {:.3} mm in misregistered region vs {:.3} mm in converged region: ratio {:.3}",
        s.misregistered_mean_mm, s.converged_mean_mm, s.ratio
    );
    ensure(s.ratio >= 1.5, msg.clone())?;
    Ok(msg)
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    });
    let secs = t.elapsed().as_secs_f64();
    match r {
        Ok(msg) => {
            println!("PASS criterion {n} ({name}, {secs:.1} s): {msg}");
            true
        }
        Err(msg) => {
            println!("FAIL criterion {n} ({name}, {secs:.1} s): {msg}");
            false
        }
    }
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);
    let mut ok = true;
    if wanted(1) {
        ok &= run(1, "pooling oracle", criterion_1);
    }
    if wanted(2) {
        ok &= run(2, "formula spot checks", criterion_2);
    }
    if wanted(3) {
        ok &= run(3, "affine Jacobian", criterion_3);
    }
    if wanted(4) {
        ok &= run(4, "range invariants", criterion_4);
    }
    if wanted(5) {
        ok &= run(5, "forest sanity", criterion_5);
    }
    if wanted(6) || wanted(7) || wanted(9) {
        match catch_unwind(AssertUnwindSafe(e2e_runs)) {
            Ok(Ok(runs)) => {
                if wanted(6) {
                    ok &= run(6, "end-to-end desk scale", || criterion_6(&runs));
                }
                if wanted(7) {
                    ok &= run(7, "reproducibility", || criterion_7(&runs));
                }
                if wanted(9) {
                    ok &= run(9, "qualitative error map", || criterion_9(&runs));
                }
            }
            other => {
                let msg = match other {
                    Ok(Err(e)) => e,
                    _ => "end-to-end run panicked".into(),
                };
                for (n, name) in [(6, "end-to-end desk scale"), (7, "reproducibility"), (9, "qualitative error map")] {
                    if wanted(n) {
                        println!("FAIL criterion {n} ({name}): {msg}");
                    }
                }
                ok = false;
            }
        }
    }
    if wanted(8) {
        ok &= run(8, "non-reproduced results documented", criterion_8);
    }
    if !ok {
        std::process::exit(1);
    }
}
