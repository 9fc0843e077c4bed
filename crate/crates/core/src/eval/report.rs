//! Report files. CSV layouts are documented in docs/reports.md.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::CvReport;
use crate::error::{Error, Result};
use crate::volume::Volume;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes metrics.csv, sorted_curve.csv, scatter.csv and, when given,
/// importance.csv into `dir`. Returns the written paths.
pub fn emit_reports(report: &CvReport, importance: Option<&[f64]>, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if report.folds.is_empty() {
        return Err(Error::invalid("empty cross-validation report"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let mut m = String::from(
        "fold,train_pairs,test_pairs,n_test,mae,mae_std,mae_correct,mae_poor,mae_wrong,\
         accuracy,f1_correct,f1_poor,f1_wrong,baseline_mae,majority_rate\n",
    );
    for f in &report.folds {
        let pc = f.mae.per_class.map(|s| s.map(|s| s.mean));
        writeln!(
            m,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            f.index,
            f.train_pairs.join(";"),
            f.test_pairs.join(";"),
            f.samples.len(),
            f.mae.overall.mean,
            f.mae.overall.std,
            opt(pc[0]),
            opt(pc[1]),
            opt(pc[2]),
            f.classes.accuracy,
            opt(f.classes.f1[0]),
            opt(f.classes.f1[1]),
            opt(f.classes.f1[2]),
            f.baseline_mae,
            f.majority_rate
        )
        .unwrap();
    }
    let a = &report.aggregate;
    writeln!(
        m,
        "mean,,,{},{},{},{},{},{},{},{},{},{},{},{}",
        a.n_test,
        a.mae,
        a.mae_std,
        opt(a.mae_class[0]),
        opt(a.mae_class[1]),
        opt(a.mae_class[2]),
        a.accuracy,
        opt(a.f1[0]),
        opt(a.f1[1]),
        opt(a.f1[2]),
        a.baseline_mae,
        a.majority_rate
    )
    .unwrap();
    let p = dir.join("metrics.csv");
    write_text(&p, &m)?;
    written.push(p);

    let mut pooled: Vec<(f64, f64)> = report
        .folds
        .iter()
        .flat_map(|f| f.samples.iter().zip(&f.y_hat).map(|(s, p)| (s.y, *p)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut c = String::from("rank,y,y_hat\n");
    for (i, (y, p)) in pooled.iter().enumerate() {
        writeln!(c, "{i},{y},{p}").unwrap();
    }
    let p = dir.join("sorted_curve.csv");
    write_text(&p, &c)?;
    written.push(p);

    let mut s = String::from("fold,pair_id,vi,vj,vk,y,y_hat\n");
    for f in &report.folds {
        for (smp, p) in f.samples.iter().zip(&f.y_hat) {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                f.index, smp.pair_id, smp.voxel[0], smp.voxel[1], smp.voxel[2], smp.y, p
            )
            .unwrap();
        }
    }
    let p = dir.join("scatter.csv");
    write_text(&p, &s)?;
    written.push(p);

    if let Some(imp) = importance {
        if imp.len() != report.columns.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} importances for {} columns",
                imp.len(),
                report.columns.len()
            )));
        }
        let p = dir.join("importance.csv");
        write_text(&p, &importance_csv(&report.columns, imp))?;
        written.push(p);
    }
    Ok(written)
}

/// Writes `importance_csv` to `path`.
pub fn write_importance_csv(columns: &[String], importance: &[f64], path: impl AsRef<Path>) -> Result<()> {
    if columns.len() != importance.len() {
        return Err(Error::SchemaMismatch(format!(
            "{} importances for {} columns",
            importance.len(),
            columns.len()
        )));
    }
    write_text(path.as_ref(), &importance_csv(columns, importance))
}

/// `rank,column,importance`, most important first; ties keep column order.
pub fn importance_csv(columns: &[String], importance: &[f64]) -> String {
    let mut order: Vec<usize> = (0..columns.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]));
    let mut out = String::from("rank,column,importance\n");
    for (rank, &i) in order.iter().enumerate() {
        writeln!(out, "{},{},{}", rank + 1, columns[i], importance[i]).unwrap();
    }
    out
}

/// Blue-cyan-yellow-red ramp for `t` in [0, 1].
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 0.6],
        [0.0, 0.6, 1.0],
        [0.2, 1.0, 0.4],
        [1.0, 0.9, 0.0],
        [0.9, 0.0, 0.0],
    ];
    let x = t * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    [0, 1, 2].map(|c| ((STOPS[i][c] * (1.0 - f) + STOPS[i + 1][c] * f) * 255.0).round() as u8)
}

/// RGB pixels (row-major, `j` rows of `i` columns) of axial slice `k` of
/// `fixed` in grey, blended with the colormapped `error` slice scaled to
/// `max_mm`.
pub fn overlay_rgb(fixed: &Volume, error: &[f64], k: usize, max_mm: f64) -> Result<Vec<u8>> {
    let [nx, ny, nz] = fixed.dims();
    if k >= nz {
        return Err(Error::invalid(format!("slice {k} outside {nz} slices")));
    }
    if error.len() != nx * ny {
        return Err(Error::invalid(format!("error slice has {} values, expected {}", error.len(), nx * ny)));
    }
    if !(max_mm > 0.0) {
        return Err(Error::invalid("colour scale maximum must be positive"));
    }
    let grey = fixed.axial_slice(k);
    let (lo, hi) = grey.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = Vec::with_capacity(nx * ny * 3);
    for (g, e) in grey.iter().zip(error) {
        let level = (g - lo) / span * 255.0;
        let t = e / max_mm;
        let alpha = 0.6 * t.clamp(0.0, 1.0).sqrt();
        let c = colormap(t);
        for ch in c {
            out.push((level * (1.0 - alpha) + ch as f64 * alpha).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

/// PNG of `overlay_rgb`; the image is `dims[0]` wide and `dims[1]` high.
pub fn write_overlay_png(fixed: &Volume, error: &[f64], k: usize, max_mm: f64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rgb = overlay_rgb(fixed, error, k, max_mm)?;
    let [nx, ny, _] = fixed.dims();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), nx as u32, ny as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    w.write_image_data(&rgb).map_err(|e| Error::Png(e.to_string()))?;
    w.finish().map_err(|e| Error::Png(e.to_string()))
}
