use rayon::prelude::*;

use super::{FeatureMap, Units};
use crate::error::Result;
use crate::filter::{box_extremum_3d, box_half_widths, gaussian_gradient_component, odd_box_voxels, smooth_gaussian_mm};
use crate::pooling::{clip_box, format_mm, IntegralVolume};
use crate::volume::{Geometry, Volume};

/// Variance (per voxel) below which a box counts as flat.
const FLAT_VARIANCE: f64 = 1e-12;

/// Squared intensity difference and gradient magnitude of the intensity
/// difference, both at Gaussian scale `sigma_mm`.
pub fn sid_gid(fixed: &Volume, warped: &Volume, sigma_mm: f64) -> Result<(FeatureMap, FeatureMap)> {
    fixed.geometry().ensure_matches(warped.geometry(), "warped image")?;
    if !(sigma_mm > 0.0) {
        return Err(crate::Error::invalid("sigma must be positive"));
    }
    let g = *fixed.geometry();
    let d: Vec<f64> = fixed.data().iter().zip(warped.data()).map(|(a, b)| a - b).collect();
    let dv = Volume::new(g, d)?;
    let sid = smooth_gaussian_mm(&dv.map(|x| x * x), sigma_mm);
    let grads = [0, 1, 2].map(|a| gaussian_gradient_component(&dv, sigma_mm, a));
    let gid: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let (x, y, z) = (grads[0].data()[i], grads[1].data()[i], grads[2].data()[i]);
            (x * x + y * y + z * z).sqrt()
        })
        .collect();
    let tag = format_mm(sigma_mm);
    Ok((
        FeatureMap::new(format!("sid{tag}"), sid, Units::Dimensionless)?,
        FeatureMap::new(format!("gid{tag}"), Volume::new(g, gid)?, Units::Dimensionless)?,
    ))
}

/// Summed-area tables for box-wise normalized correlation.
#[derive(Debug, Clone)]
pub struct NcTable {
    geometry: Geometry,
    fixed: Vec<f64>,
    warped: Vec<f64>,
    sf: IntegralVolume,
    sm: IntegralVolume,
    sff: IntegralVolume,
    smm: IntegralVolume,
    sfm: IntegralVolume,
}

impl NcTable {
    pub fn new(fixed: &Volume, warped: &Volume) -> Result<Self> {
        fixed.geometry().ensure_matches(warped.geometry(), "warped image")?;
        let g = *fixed.geometry();
        // Centering keeps the box moments well conditioned.
        let (mf, mm) = (fixed.mean(), warped.mean());
        let f: Vec<f64> = fixed.data().iter().map(|v| v - mf).collect();
        let m: Vec<f64> = warped.data().iter().map(|v| v - mm).collect();
        let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<f64>>();
        Ok(Self {
            geometry: g,
            sf: IntegralVolume::new(&f, g.dims),
            sm: IntegralVolume::new(&m, g.dims),
            sff: IntegralVolume::new(&prod(&f, &f), g.dims),
            smm: IntegralVolume::new(&prod(&m, &m), g.dims),
            sfm: IntegralVolume::new(&prod(&f, &m), g.dims),
            fixed: fixed.data().to_vec(),
            warped: warped.data().to_vec(),
        })
    }

    /// Correlation over clipped boxes of diameter `box_mm` at `points`.
    pub fn at(&self, points: &[[usize; 3]], box_mm: f64) -> Vec<f64> {
        let g = &self.geometry;
        let half = box_half_widths(box_mm, g.spacing);
        let w = odd_box_voxels(box_mm, g.spacing);
        let flat = |d: &[f64]| {
            let lo = box_extremum_3d(d, g.dims, w, false);
            let hi = box_extremum_3d(d, g.dims, w, true);
            lo.iter().zip(&hi).map(|(a, b)| a == b).collect::<Vec<bool>>()
        };
        let (ff, fm) = (flat(&self.fixed), flat(&self.warped));
        points
            .par_iter()
            .map(|&c| {
                let i = g.index(c[0], c[1], c[2]);
                if ff[i] || fm[i] {
                    return 0.0;
                }
                let (lo, hi) = clip_box(c, half, g.dims);
                let n = (0..3).map(|a| hi[a] - lo[a] + 1).product::<usize>() as f64;
                let (a, b) = (self.sf.box_sum(lo, hi), self.sm.box_sum(lo, hi));
                let vf = self.sff.box_sum(lo, hi) - a * a / n;
                let vm = self.smm.box_sum(lo, hi) - b * b / n;
                if vf / n < FLAT_VARIANCE || vm / n < FLAT_VARIANCE {
                    return 0.0;
                }
                let cov = self.sfm.box_sum(lo, hi) - a * b / n;
                (cov / (vf * vm).sqrt()).clamp(-1.0, 1.0)
            })
            .collect()
    }
}

/// Normalized correlation at the given voxels.
pub fn nc_at(fixed: &Volume, warped: &Volume, box_mm: f64, points: &[[usize; 3]]) -> Result<Vec<f64>> {
    Ok(NcTable::new(fixed, warped)?.at(points, box_mm))
}

/// Dense normalized-correlation map over boxes of diameter `box_mm`.
pub fn nc(fixed: &Volume, warped: &Volume, box_mm: f64) -> Result<FeatureMap> {
    let g = *fixed.geometry();
    let points: Vec<[usize; 3]> = (0..g.len()).map(|i| g.coords(i)).collect();
    let v = nc_at(fixed, warped, box_mm, &points)?;
    FeatureMap::new(format!("nc{}", format_mm(box_mm)), Volume::new(g, v)?, Units::Dimensionless)
}
