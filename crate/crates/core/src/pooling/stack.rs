use std::collections::{BTreeMap, HashMap};

use super::{format_mm, IntegralVolume, Schema};
use crate::error::{Error, Result};
use crate::features::{local_mi_at, sid_gid, Binning, FeatureMap, MiPoint, NcTable, DEFAULT_BINS};
use crate::filter::{box_extremum_3d, box_half_widths, odd_box_voxels};
use crate::volume::{Geometry, Volume};

/// Dense mother maps of one registration plus, optionally, the fixed and
/// base-warped images from which MI, NC and SID/GID columns are computed
/// on demand.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    geometry: Geometry,
    maps: BTreeMap<String, FeatureMap>,
    images: Option<(Volume, Volume)>,
}

impl FeatureStack {
    pub fn new(geometry: Geometry) -> Self {
        Self {
            geometry,
            maps: BTreeMap::new(),
            images: None,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn insert(&mut self, map: FeatureMap) -> Result<()> {
        self.geometry.ensure_matches(map.geometry(), &format!("feature map {}", map.name))?;
        self.maps.insert(map.name.clone(), map);
        Ok(())
    }

    pub fn set_images(&mut self, fixed: Volume, warped: Volume) -> Result<()> {
        self.geometry.ensure_matches(fixed.geometry(), "fixed image")?;
        self.geometry.ensure_matches(warped.geometry(), "warped image")?;
        self.images = Some((fixed, warped));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&FeatureMap> {
        self.maps.get(name)
    }

    pub fn maps(&self) -> impl Iterator<Item = &FeatureMap> {
        self.maps.values()
    }

    pub fn images(&self) -> Option<(&Volume, &Volume)> {
        self.images.as_ref().map(|(f, w)| (f, w))
    }

    fn map(&self, name: &str) -> Result<&FeatureMap> {
        self.maps.get(name).ok_or_else(|| Error::MissingMap(name.to_string()))
    }

    fn image_pair(&self) -> Result<(&Volume, &Volume)> {
        self.images()
            .ok_or_else(|| Error::MissingMap("fixed and warped images".to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Column {
    Raw(String),
    Avg(String, f64),
    Max(String, f64),
    Mi { pmi: bool, sturges: bool, mm: f64 },
    Nc(f64),
    Sid(f64),
    Gid(f64),
}

fn parse_column(name: &str) -> Result<Column> {
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .ok()
            .filter(|v| *v > 0.0 && format_mm(*v) == s)
            .ok_or_else(|| Error::SchemaMismatch(format!("cannot parse column {name}")))
    };
    if let Some((m, rest)) = name.split_once('_') {
        if let Some(b) = rest.strip_prefix("avg") {
            return Ok(Column::Avg(m.to_string(), num(b)?));
        }
        if let Some(b) = rest.strip_prefix("max") {
            return Ok(Column::Max(m.to_string(), num(b)?));
        }
        return Err(Error::SchemaMismatch(format!("cannot parse column {name}")));
    }
    for (prefix, pmi, sturges) in [("nmis", false, true), ("pmis", true, true), ("nmi", false, false), ("pmi", true, false)] {
        if let Some(b) = name.strip_prefix(prefix) {
            if let Ok(mm) = num(b) {
                return Ok(Column::Mi { pmi, sturges, mm });
            }
        }
    }
    for (prefix, ctor) in [("nc", Column::Nc as fn(f64) -> Column), ("sid", Column::Sid), ("gid", Column::Gid)] {
        if let Some(b) = name.strip_prefix(prefix) {
            if let Ok(v) = num(b) {
                return Ok(ctor(v));
            }
        }
    }
    Ok(Column::Raw(name.to_string()))
}

fn key(x: f64) -> u64 {
    x.to_bits()
}

/// Feature values at `locations` in `schema` column order, column-major.
pub fn assemble(stack: &FeatureStack, locations: &[[usize; 3]], schema: &Schema) -> Result<Vec<Vec<f64>>> {
    let g = stack.geometry;
    if let Some(bad) = locations.iter().find(|c| (0..3).any(|a| c[a] >= g.dims[a])) {
        return Err(Error::invalid(format!("location {bad:?} outside volume dims {:?}", g.dims)));
    }
    let columns: Vec<Column> = schema.columns().iter().map(|c| parse_column(c)).collect::<Result<_>>()?;
    let idx: Vec<usize> = locations.iter().map(|c| g.index(c[0], c[1], c[2])).collect();
    let mut integrals: HashMap<String, IntegralVolume> = HashMap::new();
    let mut mi: HashMap<(u64, bool), Vec<MiPoint>> = HashMap::new();
    let mut nc_table: Option<NcTable> = None;
    let mut sg: HashMap<u64, (Volume, Volume)> = HashMap::new();
    let mut out = Vec::with_capacity(columns.len());
    for col in &columns {
        let values: Vec<f64> = match col {
            Column::Raw(m) => {
                let d = stack.map(m)?.values.data();
                idx.iter().map(|&i| d[i]).collect()
            }
            Column::Avg(m, mm) => {
                if !integrals.contains_key(m) {
                    let iv = IntegralVolume::from_volume(&stack.map(m)?.values);
                    integrals.insert(m.clone(), iv);
                }
                let iv = &integrals[m];
                let half = box_half_widths(*mm, g.spacing);
                locations.iter().map(|&c| iv.clipped_mean(c, half)).collect()
            }
            Column::Max(m, mm) => {
                let map = stack.map(m)?;
                let w = odd_box_voxels(*mm, g.spacing);
                let d = box_extremum_3d(map.values.data(), g.dims, w, true);
                idx.iter().map(|&i| d[i]).collect()
            }
            Column::Mi { pmi, sturges, mm } => {
                let k = (key(*mm), *sturges);
                if !mi.contains_key(&k) {
                    let (f, w) = stack.image_pair()?;
                    let binning = if *sturges { Binning::Sturges } else { Binning::Constant(DEFAULT_BINS) };
                    mi.insert(k, local_mi_at(f, w, *mm, binning, locations)?);
                }
                mi[&k].iter().map(|p| if *pmi { p.pmi } else { p.nmi }).collect()
            }
            Column::Nc(mm) => {
                if nc_table.is_none() {
                    let (f, w) = stack.image_pair()?;
                    nc_table = Some(NcTable::new(f, w)?);
                }
                nc_table.as_ref().unwrap().at(locations, *mm)
            }
            Column::Sid(s) | Column::Gid(s) => {
                if !sg.contains_key(&key(*s)) {
                    let (f, w) = stack.image_pair()?;
                    let (sid, gid) = sid_gid(f, w, *s)?;
                    sg.insert(key(*s), (sid.values, gid.values));
                }
                let (sid, gid) = &sg[&key(*s)];
                let d = if matches!(col, Column::Sid(_)) { sid.data() } else { gid.data() };
                idx.iter().map(|&i| d[i]).collect()
            }
        };
        out.push(values);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Units;
    use crate::synth::{generate_phantom, PhantomConfig};

    fn stack(with_images: bool) -> FeatureStack {
        let g = Geometry::new([16, 16, 16], [0.8, 0.8, 2.5], [0.0; 3]).unwrap();
        let mut s = FeatureStack::new(g);
        for (k, name) in super::super::MOTHER_MAPS.iter().enumerate() {
            let v = Volume::from_fn(g, |[i, j, kk]| (i * (k + 1) + j + 3 * kk) as f64);
            s.insert(FeatureMap::new(*name, v, Units::Mm).unwrap()).unwrap();
        }
        if with_images {
            let f = generate_phantom(g, &PhantomConfig::default(), 1).unwrap();
            let w = crate::synth::add_noise(&f, 20.0, 2);
            s.set_images(f, w).unwrap();
        }
        s
    }

    #[test]
    fn column_parsing() {
        assert_eq!(parse_column("stdT_avg2").unwrap(), Column::Avg("stdT".into(), 2.0));
        assert_eq!(parse_column("mind_max40").unwrap(), Column::Max("mind".into(), 40.0));
        assert_eq!(parse_column("pmis15").unwrap(), Column::Mi { pmi: true, sturges: true, mm: 15.0 });
        assert_eq!(parse_column("nmi5").unwrap(), Column::Mi { pmi: false, sturges: false, mm: 5.0 });
        assert_eq!(parse_column("sid0.5").unwrap(), Column::Sid(0.5));
        assert_eq!(parse_column("nc25").unwrap(), Column::Nc(25.0));
        assert_eq!(parse_column("jac").unwrap(), Column::Raw("jac".into()));
    }

    #[test]
    fn combined_table_shape_and_values() {
        let s = stack(true);
        let locs = vec![[0, 0, 0], [5, 7, 3], [15, 15, 7]];
        let cols = assemble(&s, &locs, &Schema::CombinedMd).unwrap();
        assert_eq!(cols.len(), 178);
        assert!(cols.iter().all(|c| c.len() == 3 && c.iter().all(|v| v.is_finite())));
        let names = Schema::CombinedMd.columns();
        let pos = |n: &str| names.iter().position(|c| c == n).unwrap();
        let stdt = s.get("stdT").unwrap();
        let avg = super::super::avg_pool(stdt, 10.0);
        let max = super::super::max_pool(stdt, 10.0);
        for (r, &c) in locs.iter().enumerate() {
            assert!((cols[pos("stdT_avg10")][r] - avg.values.at(c)).abs() < 1e-12);
            assert_eq!(cols[pos("stdT_max10")][r], max.values.at(c));
        }
    }

    #[test]
    fn missing_inputs_reported() {
        let s = stack(false);
        assert!(matches!(
            assemble(&s, &[[1, 1, 1]], &Schema::Intensity),
            Err(Error::MissingMap(_))
        ));
        let cols = assemble(&s, &[[1, 1, 1]], &Schema::NoPooling);
        assert!(matches!(cols, Err(Error::MissingMap(_))));
        assert_eq!(assemble(&s, &[[1, 1, 1]], &Schema::Registration).unwrap().len(), 108);
        let mut empty = FeatureStack::new(*s.geometry());
        let (f, w) = (Volume::filled(*s.geometry(), 1.0), Volume::filled(*s.geometry(), 2.0));
        empty.set_images(f, w).unwrap();
        assert!(matches!(
            assemble(&empty, &[[1, 1, 1]], &Schema::Combined),
            Err(Error::MissingMap(m)) if m == "stdT"
        ));
        assert!(assemble(&s, &[[16, 0, 0]], &Schema::Registration).is_err());
    }
}
