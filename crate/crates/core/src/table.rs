//! Per-sample feature tables with CSV and binary (+ JSON sidecar) storage.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{ErrorClass, Sample};

const MAGIC: &[u8; 4] = b"RMST";
const VERSION: u32 = 1;
const FIXED_HEADER: [&str; 7] = ["pair_id", "vi", "vj", "vk", "wx", "wy", "wz"];

/// Samples with their feature vectors. Features are stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    columns: Vec<String>,
    samples: Vec<Sample>,
    features: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    rows: usize,
    columns: Vec<String>,
    pair_ids: Vec<String>,
}

impl SampleTable {
    pub fn new(columns: Vec<String>, samples: Vec<Sample>, features: Vec<Vec<f64>>) -> Result<Self> {
        if features.len() != columns.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} feature columns for {} names",
                features.len(),
                columns.len()
            )));
        }
        if let Some(c) = features.iter().position(|c| c.len() != samples.len()) {
            return Err(Error::invalid(format!(
                "column {} has {} values for {} samples",
                columns[c],
                features[c].len(),
                samples.len()
            )));
        }
        for name in &columns {
            if name.contains(',') || FIXED_HEADER.contains(&name.as_str()) || name == "y" || name == "class" {
                return Err(Error::invalid(format!("invalid column name '{name}'")));
            }
        }
        Ok(Self {
            columns,
            samples,
            features,
        })
    }

    pub fn empty(columns: Vec<String>) -> Self {
        let features = vec![Vec::new(); columns.len()];
        Self {
            columns,
            samples: Vec::new(),
            features,
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.features.iter().map(|c| c[r]).collect()
    }

    /// Distinct pair ids in order of first appearance.
    pub fn pair_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.samples {
            if out.last() != Some(&s.pair_id) && !out.contains(&s.pair_id) {
                out.push(s.pair_id.clone());
            }
        }
        out
    }

    pub fn append(&mut self, other: SampleTable) -> Result<()> {
        if other.columns != self.columns {
            return Err(Error::SchemaMismatch("appending a table with different columns".into()));
        }
        self.samples.extend(other.samples);
        for (a, b) in self.features.iter_mut().zip(other.features) {
            a.extend(b);
        }
        Ok(())
    }

    /// Rows at the given indices, in that order.
    pub fn select(&self, rows: &[usize]) -> SampleTable {
        SampleTable {
            columns: self.columns.clone(),
            samples: rows.iter().map(|&r| self.samples[r].clone()).collect(),
            features: self.features.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
        }
    }

    /// Rows whose pair id satisfies `keep`.
    pub fn filter_pairs(&self, keep: impl Fn(&str) -> bool) -> SampleTable {
        let rows: Vec<usize> = (0..self.len()).filter(|&r| keep(&self.samples[r].pair_id)).collect();
        self.select(&rows)
    }

    /// Table restricted to `names`, in that order.
    pub fn project(&self, names: &[String]) -> Result<SampleTable> {
        let features = names
            .iter()
            .map(|n| {
                self.columns
                    .iter()
                    .position(|c| c == n)
                    .map(|i| self.features[i].clone())
                    .ok_or_else(|| Error::SchemaMismatch(format!("table has no column '{n}'")))
            })
            .collect::<Result<_>>()?;
        SampleTable::new(names.to_vec(), self.samples.clone(), features)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        let mut header: Vec<&str> = FIXED_HEADER.to_vec();
        header.extend(self.columns.iter().map(String::as_str));
        header.extend(["y", "class"]);
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for (r, s) in self.samples.iter().enumerate() {
            let mut line = format!(
                "{},{},{},{},{},{},{}",
                s.pair_id, s.voxel[0], s.voxel[1], s.voxel[2], s.world[0], s.world[1], s.world[2]
            );
            for c in &self.features {
                line.push(',');
                line.push_str(&c[r].to_string());
            }
            line.push_str(&format!(",{},{}", s.y, s.class().label()));
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut lines = reader.lines();
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?
            .map_err(io)?;
        let names: Vec<&str> = header.trim_end().split(',').collect();
        let nf = names.len();
        if nf < FIXED_HEADER.len() + 2
            || names[..FIXED_HEADER.len()] != FIXED_HEADER
            || names[nf - 2..] != ["y", "class"]
        {
            return Err(parse_err(1, "unexpected header".into()));
        }
        let columns: Vec<String> = names[FIXED_HEADER.len()..nf - 2].iter().map(|s| s.to_string()).collect();
        let mut samples = Vec::new();
        let mut features = vec![Vec::new(); columns.len()];
        for (n, line) in lines.enumerate() {
            let line = line.map_err(io)?;
            let lineno = n + 2;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            if fields.len() != nf {
                return Err(parse_err(lineno, format!("expected {nf} fields, found {}", fields.len())));
            }
            let float = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(lineno, format!("not a number: '{s}'")))
            };
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| parse_err(lineno, format!("not an index: '{s}'")))
            };
            let y = float(fields[nf - 2])?;
            let class = ErrorClass::parse(fields[nf - 1])
                .ok_or_else(|| parse_err(lineno, format!("unknown class '{}'", fields[nf - 1])))?;
            if class != ErrorClass::from_error(y) {
                return Err(parse_err(lineno, "class label disagrees with y".into()));
            }
            samples.push(Sample {
                pair_id: fields[0].to_string(),
                voxel: [int(fields[1])?, int(fields[2])?, int(fields[3])?],
                world: [float(fields[4])?, float(fields[5])?, float(fields[6])?],
                y,
            });
            for (c, f) in features.iter_mut().zip(&fields[FIXED_HEADER.len()..nf - 2]) {
                c.push(float(f)?);
            }
        }
        SampleTable::new(columns, samples, features)
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Binary payload at `path` plus a JSON schema sidecar at `path.json`.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let pair_ids = self.pair_ids();
        let sidecar = Sidecar {
            format: "regmap-sample-table".into(),
            version: VERSION,
            rows: self.len(),
            columns: self.columns.clone(),
            pair_ids: pair_ids.clone(),
        };
        let sc = Self::sidecar_path(path);
        let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(&sc, json).map_err(|e| Error::io(&sc, e))?;
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.columns.len() as u64).to_le_bytes()).map_err(io)?;
        for (r, s) in self.samples.iter().enumerate() {
            let pid = pair_ids.iter().position(|p| p == &s.pair_id).unwrap() as u32;
            w.write_all(&pid.to_le_bytes()).map_err(io)?;
            for v in s.voxel {
                w.write_all(&(v as u32).to_le_bytes()).map_err(io)?;
            }
            for v in s.world.iter().chain([s.y].iter()) {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
            for c in &self.features {
                w.write_all(&c[r].to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sc = Self::sidecar_path(path);
        let json = std::fs::read_to_string(&sc).map_err(|e| Error::io(&sc, e))?;
        let sidecar: Sidecar =
            serde_json::from_str(&json).map_err(|e| Error::CorruptPayload(format!("sidecar: {e}")))?;
        if sidecar.version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: sidecar.version,
            });
        }
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::CorruptPayload("bad magic".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let rows = cur.u64()? as usize;
        let ncols = cur.u64()? as usize;
        if rows != sidecar.rows || ncols != sidecar.columns.len() {
            return Err(Error::CorruptPayload("payload disagrees with sidecar".into()));
        }
        let mut samples = Vec::with_capacity(rows);
        let mut features = vec![Vec::with_capacity(rows); ncols];
        for _ in 0..rows {
            let pid = cur.u32()? as usize;
            let pair_id = sidecar
                .pair_ids
                .get(pid)
                .ok_or_else(|| Error::CorruptPayload("pair index out of range".into()))?
                .clone();
            let voxel = [cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize];
            let world = [cur.f64()?, cur.f64()?, cur.f64()?];
            let y = cur.f64()?;
            samples.push(Sample {
                pair_id,
                voxel,
                world,
                y,
            });
            for c in features.iter_mut() {
                c.push(cur.f64()?);
            }
        }
        if cur.pos != bytes.len() {
            return Err(Error::CorruptPayload("trailing bytes".into()));
        }
        SampleTable::new(sidecar.columns, samples, features)
    }

    /// Reads CSV or binary depending on the extension (`.csv` is CSV).
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "csv") {
            Self::read_csv(path)
        } else {
            Self::read_binary(path)
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "csv") {
            self.write_csv(path)
        } else {
            self.write_binary(path)
        }
    }
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptPayload("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(values: &[(f64, f64, f64)]) -> SampleTable {
        let samples = values
            .iter()
            .enumerate()
            .map(|(i, v)| Sample {
                pair_id: format!("p{}", i % 3),
                voxel: [i, 2 * i, 3],
                world: [v.0 * 0.1, -1.5, 1e-7 * i as f64],
                y: v.2.abs(),
            })
            .collect();
        let features = vec![values.iter().map(|v| v.0).collect(), values.iter().map(|v| v.1).collect()];
        SampleTable::new(vec!["a_avg2".into(), "sid0.5".into()], samples, features).unwrap()
    }

    #[test]
    fn header_layout() {
        let t = table(&[(1.0, 2.0, 3.0)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        t.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "pair_id,vi,vj,vk,wx,wy,wz,a_avg2,sid0.5,y,class");
        assert!(text.lines().nth(1).unwrap().ends_with(",3,poor"));
    }

    #[test]
    fn select_project_append() {
        let t = table(&[(1.0, 2.0, 3.0), (4.0, 5.0, 6.0), (7.0, 8.0, 1.0), (0.5, 0.25, 2.0)]);
        assert_eq!(t.pair_ids(), vec!["p0", "p1", "p2"]);
        let p0 = t.filter_pairs(|p| p == "p0");
        assert_eq!(p0.len(), 2);
        let proj = t.project(&["sid0.5".to_string()]).unwrap();
        assert_eq!(proj.features()[0], vec![2.0, 5.0, 8.0, 0.25]);
        assert!(matches!(t.project(&["nope".to_string()]), Err(Error::SchemaMismatch(_))));
        let mut a = t.select(&[0]);
        a.append(t.select(&[3])).unwrap();
        assert_eq!(a.row(1), vec![0.5, 0.25]);
        assert!(a.append(proj).is_err());
    }

    #[test]
    fn corrupt_binary_detected() {
        let t = table(&[(1.0, 2.0, 3.0), (4.0, 5.0, 6.0)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        t.write_binary(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(SampleTable::read_binary(&p), Err(Error::CorruptPayload(_))));
    }

    proptest! {
        #[test]
        fn round_trips_are_lossless(values in proptest::collection::vec(
            (-1e12f64..1e12, proptest::num::f64::NORMAL, 0.0f64..50.0), 0..40)) {
            let t = table(&values);
            let dir = tempfile::tempdir().unwrap();
            let csv = dir.path().join("t.csv");
            t.write(&csv).unwrap();
            prop_assert_eq!(&SampleTable::read(&csv).unwrap(), &t);
            let bin = dir.path().join("t.bin");
            t.write(&bin).unwrap();
            prop_assert_eq!(&SampleTable::read(&bin).unwrap(), &t);
        }
    }
}
