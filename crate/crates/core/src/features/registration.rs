use rayon::prelude::*;

use super::{Binner, FeatureMap, Units};
use crate::error::{Error, Result};
use crate::filter::central_difference;
use crate::volume::{norm3, DisplacementField, Volume};

fn check_ensemble(ensemble: &[DisplacementField]) -> Result<()> {
    if ensemble.len() < 2 {
        return Err(Error::invalid(format!(
            "ensemble needs at least 2 members, got {}",
            ensemble.len()
        )));
    }
    let g = ensemble[0].geometry();
    for (k, f) in ensemble.iter().enumerate().skip(1) {
        g.ensure_matches(f.geometry(), &format!("ensemble member {k}"))?;
    }
    Ok(())
}

fn mean_vector(ensemble: &[DisplacementField], i: usize) -> [f64; 3] {
    let mut m = [0.0; 3];
    for f in ensemble {
        let v = f.vectors()[i];
        for d in 0..3 {
            m[d] += v[d];
        }
    }
    m.map(|x| x / ensemble.len() as f64)
}

/// Per-voxel spread of an ensemble of transforms:
/// `sqrt(sum_i |T_i - mean|^2 / (P - 1))`.
pub fn std_dvf(name: &str, ensemble: &[DisplacementField]) -> Result<FeatureMap> {
    check_ensemble(ensemble)?;
    let geo = *ensemble[0].geometry();
    let p = ensemble.len() as f64;
    let data: Vec<f64> = (0..geo.len())
        .into_par_iter()
        .map(|i| {
            let m = mean_vector(ensemble, i);
            let ss: f64 = ensemble
                .iter()
                .map(|f| {
                    let v = f.vectors()[i];
                    let d = [v[0] - m[0], v[1] - m[1], v[2] - m[2]];
                    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
                })
                .sum();
            (ss / (p - 1.0)).sqrt()
        })
        .collect();
    FeatureMap::new(name, Volume::new(geo, data)?, Units::Mm)
}

/// Per-voxel distance between the base transform and the ensemble mean.
pub fn bias_map(name: &str, t_b: &DisplacementField, ensemble: &[DisplacementField]) -> Result<FeatureMap> {
    if ensemble.is_empty() {
        return Err(Error::invalid("empty ensemble"));
    }
    for (k, f) in ensemble.iter().enumerate() {
        t_b.geometry().ensure_matches(f.geometry(), &format!("ensemble member {k}"))?;
    }
    let geo = *t_b.geometry();
    let data: Vec<f64> = (0..geo.len())
        .into_par_iter()
        .map(|i| {
            let m = mean_vector(ensemble, i);
            let b = t_b.vectors()[i];
            norm3([b[0] - m[0], b[1] - m[1], b[2] - m[2]])
        })
        .collect();
    FeatureMap::new(name, Volume::new(geo, data)?, Units::Mm)
}

/// Coefficient of variation of the joint histograms of `fixed` against each
/// warped ensemble member, `std(H) / (mean(H) + epsilon)` per bin, mapped
/// back to voxels through the (fixed, base-warped) intensity pair.
pub fn cvh(
    fixed: &Volume,
    base_warped: &Volume,
    warped_members: &[Volume],
    bins: usize,
    epsilon: f64,
) -> Result<FeatureMap> {
    if warped_members.len() < 2 {
        return Err(Error::invalid("CVH needs at least 2 warped members"));
    }
    if bins < 2 {
        return Err(Error::invalid("CVH needs at least 2 bins"));
    }
    let geo = fixed.geometry();
    geo.ensure_matches(base_warped.geometry(), "base-warped image")?;
    for w in warped_members {
        geo.ensure_matches(w.geometry(), "warped member")?;
    }
    let (flo, fhi) = fixed.min_max();
    let (blo, bhi) = base_warped.min_max();
    let binner = Binner::new(flo.min(blo), fhi.max(bhi), bins);
    let fixed_bins: Vec<usize> = fixed.data().iter().map(|&v| binner.bin(v)).collect();
    let hists: Vec<Vec<f64>> = warped_members
        .par_iter()
        .map(|w| {
            let mut h = vec![0.0; bins * bins];
            for (fb, &v) in fixed_bins.iter().zip(w.data()) {
                h[fb * bins + binner.bin(v)] += 1.0;
            }
            h
        })
        .collect();
    let p = hists.len() as f64;
    let table: Vec<f64> = (0..bins * bins)
        .map(|b| {
            let mean = hists.iter().map(|h| h[b]).sum::<f64>() / p;
            let var = hists.iter().map(|h| (h[b] - mean).powi(2)).sum::<f64>() / (p - 1.0);
            var.sqrt() / (mean + epsilon)
        })
        .collect();
    let data: Vec<f64> = fixed_bins
        .iter()
        .zip(base_warped.data())
        .map(|(fb, &v)| table[fb * bins + binner.bin(v)])
        .collect();
    FeatureMap::new("cvh", Volume::new(*geo, data)?, Units::Dimensionless)
}

/// `det(I + du/dx)` per voxel with central differences in mm.
pub fn jacobian_det(dvf: &DisplacementField) -> Result<FeatureMap> {
    let geo = *dvf.geometry();
    let comps = dvf.components();
    // grads[c][a] = d u_c / d x_a
    let grads: Vec<[Vec<f64>; 3]> = comps
        .iter()
        .map(|c| [0, 1, 2].map(|a| central_difference(c.data(), &geo, a)))
        .collect();
    let data: Vec<f64> = (0..geo.len())
        .into_par_iter()
        .map(|i| {
            let m = |r: usize, c: usize| grads[r][c][i] + if r == c { 1.0 } else { 0.0 };
            m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
        })
        .collect();
    FeatureMap::new("jac", Volume::new(geo, data)?, Units::Dimensionless)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Voxels with a non-positive determinant.
    pub folded: usize,
}

pub fn jacobian_summary(jac: &FeatureMap) -> JacobianSummary {
    let (min, max) = jac.values.min_max();
    JacobianSummary {
        min,
        max,
        mean: jac.values.mean(),
        folded: jac.values.data().iter().filter(|&&v| v <= 0.0).count(),
    }
}
