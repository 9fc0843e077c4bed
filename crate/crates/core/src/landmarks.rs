//! Corresponding landmark pairs in world coordinates.
//!
//! Text format: one `xF yF zF xM yM zM` line per pair (mm), `#` starts a
//! comment, blank lines are ignored.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::Geometry;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkPair {
    pub fixed: [f64; 3],
    pub moving: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkPairSet {
    pub pair_id: String,
    pub pairs: Vec<LandmarkPair>,
}

impl LandmarkPairSet {
    pub fn new(pair_id: impl Into<String>, pairs: Vec<LandmarkPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("landmark set is empty"));
        }
        Ok(Self {
            pair_id: pair_id.into(),
            pairs,
        })
    }

    /// Checks that every fixed point lies in `fixed` and every moving point
    /// in `moving`.
    pub fn validate(&self, fixed: &Geometry, moving: &Geometry) -> Result<()> {
        for lp in &self.pairs {
            for (p, g) in [(lp.fixed, fixed), (lp.moving, moving)] {
                if !g.contains(p) {
                    return Err(Error::OutOfBounds(p[0], p[1], p[2]));
                }
            }
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>, pair_id: impl Into<String>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                reason: e.to_string(),
            })?;
            if vals.len() != 6 || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    reason: format!("expected 6 finite numbers, got {}", vals.len()),
                });
            }
            pairs.push(LandmarkPair {
                fixed: [vals[0], vals[1], vals[2]],
                moving: [vals[3], vals[4], vals[5]],
            });
        }
        Self::new(pair_id, pairs)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = String::from("# xF yF zF xM yM zM (mm)\n");
        for p in &self.pairs {
            s.push_str(&format!(
                "{} {} {} {} {} {}\n",
                p.fixed[0], p.fixed[1], p.fixed[2], p.moving[0], p.moving[1], p.moving[2]
            ));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.txt");
        fs::write(&p, "# header\n1 2 3 4 5 6\n\n  7 8 9 10 11 12 # trailing\n").unwrap();
        let set = LandmarkPairSet::read(&p, "p0").unwrap();
        assert_eq!(set.pairs.len(), 2);
        assert_eq!(set.pairs[1].moving, [10.0, 11.0, 12.0]);
        set.write(&p).unwrap();
        assert_eq!(LandmarkPairSet::read(&p, "p0").unwrap(), set);
    }

    #[test]
    fn malformed_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.txt");
        fs::write(&p, "1 2 3 4 5\n").unwrap();
        assert!(matches!(LandmarkPairSet::read(&p, "x"), Err(Error::Parse { line: 1, .. })));
        fs::write(&p, "# nothing\n").unwrap();
        assert!(LandmarkPairSet::read(&p, "x").is_err());
    }

    #[test]
    fn bounds_check() {
        let g = Geometry::new([10, 10, 10], [1.0; 3], [0.0; 3]).unwrap();
        let inside = LandmarkPair { fixed: [1.0, 2.0, 3.0], moving: [9.0, 9.0, 0.0] };
        let outside = LandmarkPair { fixed: [1.0, 2.0, 3.0], moving: [9.5, 0.0, 0.0] };
        assert!(LandmarkPairSet::new("a", vec![inside]).unwrap().validate(&g, &g).is_ok());
        assert!(LandmarkPairSet::new("a", vec![outside]).unwrap().validate(&g, &g).is_err());
    }
}
