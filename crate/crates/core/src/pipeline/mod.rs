//! Wiring from registration outputs to feature tables, and the synthetic
//! end-to-end experiment.

mod e2e;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{bias_map, cvh, jacobian_det, mind_distance, std_dvf, MindPattern, DEFAULT_BINS, DEFAULT_CVH_EPSILON};
use crate::pooling::{assemble, FeatureStack, Schema};
use crate::sampling::Sample;
use crate::table::SampleTable;
use crate::volume::{warp, DisplacementField, Volume};

pub use e2e::{run_e2e, E2eConfig, E2eOutcome, Showcase, ShowcaseConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOptions {
    pub cvh_bins: usize,
    pub cvh_epsilon: f64,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            cvh_bins: DEFAULT_BINS,
            cvh_epsilon: DEFAULT_CVH_EPSILON,
        }
    }
}

/// Registration outputs of one fixed/moving pair. The ensembles may be
/// empty when the schema does not need them.
#[derive(Debug, Clone)]
pub struct RegistrationSet {
    pub t_b: DisplacementField,
    pub initial: Vec<DisplacementField>,
    pub base: Vec<DisplacementField>,
}

/// Feature stack holding exactly the maps and images `schema` needs.
pub fn build_stack(
    fixed: &Volume,
    moving: &Volume,
    reg: &RegistrationSet,
    schema: &Schema,
    opts: &FeatureOptions,
) -> Result<FeatureStack> {
    let g = *fixed.geometry();
    g.ensure_matches(reg.t_b.geometry(), "base transform")?;
    let mothers = schema.mother_maps();
    if schema.needs_ensembles() && (reg.initial.len() < 2 || reg.base.len() < 2) {
        return Err(Error::MissingMap(format!(
            "schema {schema} needs both ensembles (got {} initial, {} base members)",
            reg.initial.len(),
            reg.base.len()
        )));
    }
    let warped = warp(moving, &reg.t_b)?;
    let mut stack = FeatureStack::new(g);
    for &m in &mothers {
        let map = match m {
            "stdT" => std_dvf("stdT", &reg.initial)?,
            "stdTL" => std_dvf("stdTL", &reg.base)?,
            "biasT" => bias_map("biasT", &reg.t_b, &reg.initial)?,
            "biasTL" => bias_map("biasTL", &reg.t_b, &reg.base)?,
            "cvh" => {
                let members: Vec<Volume> = reg
                    .initial
                    .par_iter()
                    .map(|u| warp(moving, u))
                    .collect::<Result<_>>()?;
                cvh(fixed, &warped, &members, opts.cvh_bins, opts.cvh_epsilon)?
            }
            "jac" => jacobian_det(&reg.t_b)?,
            "mind" => mind_distance(fixed, &warped, &MindPattern::for_spacing(g.spacing))?,
            other => return Err(Error::MissingMap(other.to_string())),
        };
        stack.insert(map)?;
    }
    if schema.needs_images() {
        stack.set_images(fixed.clone(), warped)?;
    }
    Ok(stack)
}

/// Table of `schema` features at the sample voxels.
pub fn feature_table(stack: &FeatureStack, samples: Vec<Sample>, schema: &Schema) -> Result<SampleTable> {
    let locations: Vec<[usize; 3]> = samples.iter().map(|s| s.voxel).collect();
    let features = assemble(stack, &locations, schema)?;
    SampleTable::new(schema.columns(), samples, features)
}
