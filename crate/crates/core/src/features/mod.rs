//! Scalar feature maps derived from registration ensembles and from the
//! fixed/warped intensity pair.

mod mi;
mod mind;
mod registration;
mod similarity;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Geometry, Volume};

pub use mi::{local_mi, local_mi_at, sturges_bins, Binning, MiMaps, MiPoint};
pub use mind::{mind_descriptors, mind_distance, MindPattern};
pub use registration::{bias_map, cvh, jacobian_det, jacobian_summary, std_dvf, JacobianSummary};
pub use similarity::{nc, nc_at, sid_gid, NcTable};

/// Default number of intensity bins for joint histograms.
pub const DEFAULT_BINS: usize = 32;
/// Default CVH regularizer.
pub const DEFAULT_CVH_EPSILON: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Mm,
    Dimensionless,
}

/// A named scalar map on the fixed-image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub name: String,
    pub values: Volume,
    pub units: Units,
}

impl FeatureMap {
    pub fn new(name: impl Into<String>, values: Volume, units: Units) -> Result<Self> {
        let name = name.into();
        if values.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature map {name}")));
        }
        Ok(Self { name, values, units })
    }

    pub fn geometry(&self) -> &Geometry {
        self.values.geometry()
    }
}

/// Equal-width binning of `[lo, hi]` into `bins` bins; values outside the
/// range land in the edge bins.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Binner {
    lo: f64,
    scale: f64,
    bins: usize,
}

impl Binner {
    pub(crate) fn new(lo: f64, hi: f64, bins: usize) -> Self {
        let scale = if hi > lo { bins as f64 / (hi - lo) } else { 0.0 };
        Self { lo, scale, bins }
    }

    #[inline]
    pub(crate) fn bin(&self, v: f64) -> usize {
        let b = ((v - self.lo) * self.scale).floor();
        if b <= 0.0 {
            0
        } else {
            (b as usize).min(self.bins - 1)
        }
    }
}
