//! Ground-truth registration error at landmarks or from a dense synthetic
//! error map, and neighbourhood expansion into training samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::odd_box_voxels;
use crate::landmarks::LandmarkPairSet;
use crate::volume::{norm3, DisplacementField, Geometry, Volume};

/// Lower error bounds (mm) of the `poor` and `wrong` classes.
pub const CLASS_THRESHOLDS_MM: [f64; 2] = [3.0, 6.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorClass {
    Correct,
    Poor,
    Wrong,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 3] = [ErrorClass::Correct, ErrorClass::Poor, ErrorClass::Wrong];

    /// Half-open intervals `[0,3)`, `[3,6)`, `[6,inf)`.
    pub fn from_error(y: f64) -> Self {
        if y < CLASS_THRESHOLDS_MM[0] {
            ErrorClass::Correct
        } else if y < CLASS_THRESHOLDS_MM[1] {
            ErrorClass::Poor
        } else {
            ErrorClass::Wrong
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorClass::Correct => "correct",
            ErrorClass::Poor => "poor",
            ErrorClass::Wrong => "wrong",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label() == s)
    }
}

/// One training or evaluation location.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pair_id: String,
    pub voxel: [usize; 3],
    pub world: [f64; 3],
    /// Registration error in mm.
    pub y: f64,
}

impl Sample {
    pub fn class(&self) -> ErrorClass {
        ErrorClass::from_error(self.y)
    }
}

/// Residual distance `|x_F + u(x_F) - x_M|` per landmark pair, with `u`
/// trilinearly interpolated.
pub fn landmark_error(pairs: &LandmarkPairSet, t_b: &DisplacementField) -> Result<Vec<([f64; 3], f64)>> {
    let g = t_b.geometry();
    pairs
        .pairs
        .iter()
        .map(|p| {
            let x = p.fixed;
            if !g.contains(x) {
                return Err(Error::OutOfBounds(x[0], x[1], x[2]));
            }
            let u = t_b.sample(x);
            let d = [x[0] + u[0] - p.moving[0], x[1] + u[1] - p.moving[1], x[2] + u[2] - p.moving[2]];
            Ok((x, norm3(d)))
        })
        .collect()
}

/// Class-dependent neighbourhood sizes (mm per axis) used to expand a
/// landmark into samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodRule {
    pub correct_mm: [f64; 3],
    pub other_mm: [f64; 3],
}

impl Default for NeighborhoodRule {
    fn default() -> Self {
        Self {
            correct_mm: [5.0, 5.0, 2.5],
            other_mm: [10.0, 10.0, 7.5],
        }
    }
}

fn box_voxels(mm: [f64; 3], spacing: [f64; 3]) -> [usize; 3] {
    [0, 1, 2].map(|a| odd_box_voxels(mm[a], spacing)[a])
}

/// Every voxel center in the (clipped) box around each landmark becomes a
/// sample carrying the landmark's error. Overlapping boxes are not
/// deduplicated.
pub fn expand_neighborhood(
    pair_id: &str,
    landmarks: &[([f64; 3], f64)],
    geometry: &Geometry,
    rule: &NeighborhoodRule,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for &(x, y) in landmarks {
        if !geometry.contains(x) {
            return Err(Error::OutOfBounds(x[0], x[1], x[2]));
        }
        let mm = if ErrorClass::from_error(y) == ErrorClass::Correct {
            rule.correct_mm
        } else {
            rule.other_mm
        };
        let half = box_voxels(mm, geometry.spacing).map(|n| (n / 2) as isize);
        let ci = geometry.continuous_index(x);
        let c = [0, 1, 2].map(|a| ci[a].round() as isize);
        let range = |a: usize| {
            let lo = (c[a] - half[a]).max(0);
            let hi = (c[a] + half[a]).min(geometry.dims[a] as isize - 1);
            lo as usize..=hi as usize
        };
        for k in range(2) {
            for j in range(1) {
                for i in range(0) {
                    out.push(Sample {
                        pair_id: pair_id.to_string(),
                        voxel: [i, j, k],
                        world: geometry.world([i, j, k]),
                        y,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Lattice positions along an axis of `n` voxels with the given stride,
/// centered so both borders get the same margin.
pub fn lattice(n: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let span = (n - 1) / stride * stride;
    let start = (n - 1 - span) / 2;
    (start..n).step_by(stride).collect()
}

/// Samples on a regular stride lattice with targets read from a dense
/// error map.
pub fn dense_from_truth(pair_id: &str, err: &Volume, stride: usize) -> Result<Vec<Sample>> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    let g = err.geometry();
    let (lx, ly, lz) = (lattice(g.dims[0], stride), lattice(g.dims[1], stride), lattice(g.dims[2], stride));
    let mut out = Vec::with_capacity(lx.len() * ly.len() * lz.len());
    for &k in &lz {
        for &j in &ly {
            for &i in &lx {
                out.push(Sample {
                    pair_id: pair_id.to_string(),
                    voxel: [i, j, k],
                    world: g.world([i, j, k]),
                    y: err.at([i, j, k]),
                });
            }
        }
    }
    Ok(out)
}
