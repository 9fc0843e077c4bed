use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureMap, Units, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::filter::box_half_widths;
use crate::volume::{Geometry, Volume};

/// Bin-count strategy for local joint histograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binning {
    /// A fixed number of bins.
    Constant(usize),
    /// `floor(log2(n) + 1)` bins for `n` samples in the box.
    Sturges,
}

impl Default for Binning {
    fn default() -> Self {
        Binning::Constant(DEFAULT_BINS)
    }
}

pub fn sturges_bins(n: usize) -> usize {
    ((n.max(1) as f64).log2() + 1.0).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiPoint {
    pub nmi: f64,
    pub pmi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiMaps {
    pub nmi: FeatureMap,
    pub pmi: FeatureMap,
}

/// Intensities of both images rescaled to `[0, 1]` over their pooled range.
struct Normalized {
    geometry: Geometry,
    f: Vec<f64>,
    m: Vec<f64>,
}

impl Normalized {
    fn new(fixed: &Volume, warped: &Volume) -> Result<Self> {
        fixed.geometry().ensure_matches(warped.geometry(), "warped image")?;
        let (a, b) = fixed.min_max();
        let (c, d) = warped.min_max();
        let (lo, hi) = (a.min(c), b.max(d));
        let s = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
        Ok(Self {
            geometry: *fixed.geometry(),
            f: fixed.data().iter().map(|v| (v - lo) * s).collect(),
            m: warped.data().iter().map(|v| (v - lo) * s).collect(),
        })
    }

    fn at(&self, c: [usize; 3], half: [usize; 3], binning: Binning, hist: &mut Vec<u32>) -> MiPoint {
        let g = &self.geometry;
        let lo = [0, 1, 2].map(|a| c[a].saturating_sub(half[a]));
        let hi = [0, 1, 2].map(|a| (c[a] + half[a]).min(g.dims[a] - 1));
        let n = (0..3).map(|a| hi[a] - lo[a] + 1).product::<usize>();
        let bins = match binning {
            Binning::Constant(b) => b,
            Binning::Sturges => sturges_bins(n),
        }
        .max(1);
        hist.clear();
        hist.resize(bins * bins, 0);
        let top = bins - 1;
        let bf = bins as f64;
        let bin = |t: f64| ((t * bf) as usize).min(top);
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                let row = g.index(0, j, k);
                for i in lo[0]..=hi[0] {
                    let idx = row + i;
                    hist[bin(self.f[idx]) * bins + bin(self.m[idx])] += 1;
                }
            }
        }
        mi_from_hist(hist, bins, n)
    }
}

fn entropy_of(counts: impl Iterator<Item = u32>, n: f64) -> f64 {
    let s: f64 = counts.filter(|&c| c > 0).map(|c| c as f64 * (c as f64).ln()).sum();
    (n.ln() - s / n).max(0.0)
}

fn mi_from_hist(hist: &[u32], bins: usize, n: usize) -> MiPoint {
    let nf = n as f64;
    let hfm = entropy_of(hist.iter().copied(), nf);
    let hf = entropy_of((0..bins).map(|a| hist[a * bins..(a + 1) * bins].iter().sum()), nf);
    let hm = entropy_of((0..bins).map(|b| (0..bins).map(|a| hist[a * bins + b]).sum()), nf);
    let nmi = if hfm > 0.0 { ((hf + hm) / hfm).clamp(1.0, 2.0) } else { 1.0 };
    let hmin = hf.min(hm);
    let pmi = if hmin > 0.0 {
        ((hf + hm - hfm) / hmin).clamp(0.0, 1.0)
    } else {
        0.0
    };
    MiPoint { nmi, pmi }
}

fn check_box(box_mm: f64, g: &Geometry) -> Result<[usize; 3]> {
    if !(box_mm > 0.0) || g.spacing.iter().any(|&s| box_mm < s * (1.0 - 1e-9)) {
        return Err(Error::invalid(format!("MI box of {box_mm} mm is smaller than one voxel")));
    }
    Ok(box_half_widths(box_mm, g.spacing))
}

/// Local NMI and PMI at the given voxels over clipped boxes of diameter
/// `box_mm`, with bins spanning the pooled intensity range of both images.
pub fn local_mi_at(
    fixed: &Volume,
    warped: &Volume,
    box_mm: f64,
    binning: Binning,
    points: &[[usize; 3]],
) -> Result<Vec<MiPoint>> {
    let norm = Normalized::new(fixed, warped)?;
    let half = check_box(box_mm, &norm.geometry)?;
    if let Binning::Constant(b) = binning {
        if b < 1 {
            return Err(Error::invalid("constant binning needs at least one bin"));
        }
    }
    Ok(points
        .par_iter()
        .map_init(Vec::new, |hist, &c| norm.at(c, half, binning, hist))
        .collect())
}

/// Dense local NMI/PMI maps. With `stride > 1` the measures are computed
/// on a coarse lattice every `stride` voxels and trilinearly upsampled.
pub fn local_mi(fixed: &Volume, warped: &Volume, box_mm: f64, binning: Binning, stride: usize) -> Result<MiMaps> {
    let g = *fixed.geometry();
    let stride = stride.max(1);
    let (nmi, pmi) = if stride == 1 {
        let points: Vec<[usize; 3]> = (0..g.len()).map(|i| g.coords(i)).collect();
        let r = local_mi_at(fixed, warped, box_mm, binning, &points)?;
        (r.iter().map(|p| p.nmi).collect(), r.iter().map(|p| p.pmi).collect())
    } else {
        let lattice = |n: usize| -> Vec<usize> {
            let mut v: Vec<usize> = (0..n).step_by(stride).collect();
            if *v.last().unwrap() != n - 1 {
                v.push(n - 1);
            }
            v
        };
        let (lx, ly, lz) = (lattice(g.dims[0]), lattice(g.dims[1]), lattice(g.dims[2]));
        let mut points = Vec::with_capacity(lx.len() * ly.len() * lz.len());
        for &k in &lz {
            for &j in &ly {
                for &i in &lx {
                    points.push([i, j, k]);
                }
            }
        }
        let r = local_mi_at(fixed, warped, box_mm, binning, &points)?;
        let coarse_at = |a: usize, b: usize, c: usize| r[a + lx.len() * (b + ly.len() * c)];
        let locate = |l: &[usize], x: usize| -> (usize, f64) {
            let p = l.partition_point(|&v| v <= x).saturating_sub(1).min(l.len().saturating_sub(2));
            if l.len() < 2 {
                return (0, 0.0);
            }
            (p, (x - l[p]) as f64 / (l[p + 1] - l[p]) as f64)
        };
        let upsample = |pick: fn(&MiPoint) -> f64| -> Vec<f64> {
            (0..g.len())
                .into_par_iter()
                .map(|idx| {
                    let [i, j, k] = g.coords(idx);
                    let (ax, tx) = locate(&lx, i);
                    let (ay, ty) = locate(&ly, j);
                    let (az, tz) = locate(&lz, k);
                    let mut acc = 0.0;
                    for (dz, wz) in [(0, 1.0 - tz), (1, tz)] {
                        for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
                            for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                                let w = wx * wy * wz;
                                if w > 0.0 {
                                    acc += w * pick(&coarse_at(ax + dx, ay + dy, az + dz));
                                }
                            }
                        }
                    }
                    acc
                })
                .collect()
        };
        (upsample(|p| p.nmi), upsample(|p| p.pmi))
    };
    let suffix = match binning {
        Binning::Constant(_) => "",
        Binning::Sturges => "s",
    };
    let tag = crate::pooling::format_mm(box_mm);
    Ok(MiMaps {
        nmi: FeatureMap::new(format!("nmi{suffix}{tag}"), Volume::new(g, nmi)?, Units::Dimensionless)?,
        pmi: FeatureMap::new(format!("pmi{suffix}{tag}"), Volume::new(g, pmi)?, Units::Dimensionless)?,
    })
}
