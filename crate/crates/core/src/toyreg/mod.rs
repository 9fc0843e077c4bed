//! Toy multi-resolution B-spline registration used to build perturbation
//! ensembles. The cost is SSD on random voxel subsets and the optimizer is
//! a normalized gradient descent with step halving.

mod bspline;
mod ensemble;
mod optimizer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Geometry;

pub use bspline::{cubic_weights, grid_to_dvf, perturb_grid, BSplineGrid};
pub use ensemble::{ensemble_base, ensemble_initial};
pub use optimizer::{register, register_traced, LevelTrace, RegTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegConfig {
    /// Number of pyramid levels; the control spacing halves per level.
    pub resolutions: usize,
    /// Iterations per resolution.
    pub iterations: usize,
    /// Largest coefficient update (mm) per iteration at the finest level.
    /// Coarser levels scale it with their control spacing.
    pub step_mm: f64,
    /// Fraction of voxels drawn per iteration.
    pub sampling_fraction: f64,
    pub min_samples: usize,
    /// Control spacing at the finest level.
    pub grid_spacing_mm: [f64; 3],
    pub seed: u64,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            resolutions: 3,
            iterations: 100,
            step_mm: 0.5,
            sampling_fraction: 0.02,
            min_samples: 256,
            grid_spacing_mm: [10.0; 3],
            seed: 0,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions == 0 {
            return Err(Error::invalid("resolutions must be >= 1"));
        }
        if !(self.step_mm > 0.0) || !self.step_mm.is_finite() {
            return Err(Error::invalid("step size must be > 0"));
        }
        if !(self.sampling_fraction > 0.0 && self.sampling_fraction <= 1.0) {
            return Err(Error::invalid("sampling fraction must be in (0, 1]"));
        }
        if self.grid_spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("grid spacing must be positive"));
        }
        Ok(())
    }

    /// Control spacing of the coarsest level.
    pub fn coarse_spacing(&self) -> [f64; 3] {
        let f = (1u64 << (self.resolutions.max(1) - 1)) as f64;
        self.grid_spacing_mm.map(|s| s * f)
    }

    /// Zero grid at the coarsest level covering `geometry`.
    pub fn initial_grid(&self, geometry: &Geometry) -> Result<BSplineGrid> {
        BSplineGrid::covering(geometry, self.coarse_spacing())
    }
}
