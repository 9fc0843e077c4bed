use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{format_mm, BOX_SIZES_MM};
use crate::error::{Error, Result};

/// Registration-derived mother maps, in column order.
pub const REGISTRATION_MAPS: [&str; 6] = ["stdT", "stdTL", "biasT", "biasTL", "cvh", "jac"];
/// All dense mother maps that get pooled.
pub const MOTHER_MAPS: [&str; 7] = ["stdT", "stdTL", "biasT", "biasTL", "cvh", "jac", "mind"];
/// Box diameters of the local MI and NC measures.
pub const MI_BOXES_MM: [f64; 8] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0];
/// Gaussian scales of the SID/GID maps.
pub const SIGMAS_MM: [f64; 6] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

/// Named feature subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Schema {
    /// MIND pooled (18) and local MI (32).
    Intensity,
    /// Six registration maps, pooled (108).
    Registration,
    /// Registration and intensity (158).
    Combined,
    /// Combined plus NC (8) and SID/GID (12).
    CombinedMd,
    /// Seven unpooled mother maps and PMI (Sturges) at 15 mm.
    NoPooling,
    /// Columns of one feature family, e.g. `single:stdT` or `single:nc`.
    Single(String),
}

fn pooled(name: &str) -> Vec<String> {
    let mut v: Vec<String> = BOX_SIZES_MM.iter().map(|b| format!("{name}_avg{}", format_mm(*b))).collect();
    v.extend(BOX_SIZES_MM.iter().map(|b| format!("{name}_max{}", format_mm(*b))));
    v
}

fn per_box(prefix: &str) -> Vec<String> {
    MI_BOXES_MM.iter().map(|b| format!("{prefix}{}", format_mm(*b))).collect()
}

fn per_sigma(prefix: &str) -> Vec<String> {
    SIGMAS_MM.iter().map(|s| format!("{prefix}{}", format_mm(*s))).collect()
}

fn mi_columns() -> Vec<String> {
    ["nmi", "pmi", "nmis", "pmis"].iter().flat_map(|p| per_box(p)).collect()
}

fn single_columns(family: &str) -> Option<Vec<String>> {
    if MOTHER_MAPS.contains(&family) {
        return Some(pooled(family));
    }
    Some(match family {
        "mi" => mi_columns(),
        "nmi" | "pmi" | "nmis" | "pmis" | "nc" => per_box(family),
        "sid" | "gid" => per_sigma(family),
        _ => return None,
    })
}

impl Schema {
    /// Column names in table order.
    pub fn columns(&self) -> Vec<String> {
        match self {
            Schema::Intensity => {
                let mut v = pooled("mind");
                v.extend(mi_columns());
                v
            }
            Schema::Registration => REGISTRATION_MAPS.iter().flat_map(|m| pooled(m)).collect(),
            Schema::Combined => {
                let mut v = Schema::Registration.columns();
                v.extend(Schema::Intensity.columns());
                v
            }
            Schema::CombinedMd => {
                let mut v = Schema::Combined.columns();
                v.extend(per_box("nc"));
                v.extend(per_sigma("sid"));
                v.extend(per_sigma("gid"));
                v
            }
            Schema::NoPooling => {
                let mut v: Vec<String> = MOTHER_MAPS.iter().map(|s| s.to_string()).collect();
                v.push("pmis15".into());
                v
            }
            Schema::Single(f) => single_columns(f).expect("validated at parse time"),
        }
    }

    pub fn len(&self) -> usize {
        self.columns().len()
    }

    /// Voxel-wise mother maps whose values or pools appear in the schema.
    pub fn mother_maps(&self) -> Vec<&'static str> {
        let cols = self.columns();
        MOTHER_MAPS
            .iter()
            .copied()
            .filter(|m| {
                cols.iter()
                    .any(|c| c == m || c.strip_prefix(m).is_some_and(|r| r.starts_with('_')))
            })
            .collect()
    }

    /// True if any column is computed directly from the fixed and
    /// base-warped images (MI, NC, SID, GID).
    pub fn needs_images(&self) -> bool {
        let mothers = self.mother_maps();
        self.columns().iter().any(|c| {
            !mothers
                .iter()
                .any(|m| c == m || c.strip_prefix(m).is_some_and(|r| r.starts_with('_')))
        })
    }

    /// True if the schema needs the perturbation ensembles.
    pub fn needs_ensembles(&self) -> bool {
        self.mother_maps()
            .iter()
            .any(|m| matches!(*m, "stdT" | "stdTL" | "biasT" | "biasTL" | "cvh"))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "intensity" => Schema::Intensity,
            "registration" => Schema::Registration,
            "combined" => Schema::Combined,
            "combined+md" => Schema::CombinedMd,
            "no-pooling" => Schema::NoPooling,
            _ => match s.strip_prefix("single:") {
                Some(f) if single_columns(f).is_some() => Schema::Single(f.to_string()),
                _ => return Err(Error::UnknownSchema(s.to_string())),
            },
        })
    }
}

impl Serialize for Schema {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schema::Intensity => f.write_str("intensity"),
            Schema::Registration => f.write_str("registration"),
            Schema::Combined => f.write_str("combined"),
            Schema::CombinedMd => f.write_str("combined+md"),
            Schema::NoPooling => f.write_str("no-pooling"),
            Schema::Single(s) => write!(f, "single:{s}"),
        }
    }
}
