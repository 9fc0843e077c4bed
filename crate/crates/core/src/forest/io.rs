//! Binary model files. Layout is documented in docs/model_format.md.

use std::io::Write;
use std::path::Path;

use super::{Forest, ForestConfig, MTry, Node, Tree};
use crate::error::{Error, Result};
use crate::table::Cursor;

const MAGIC: &[u8; 4] = b"RMRF";
const END: &[u8; 4] = b"END.";
pub const MODEL_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

impl Forest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        put_u32(&mut b, MODEL_VERSION as usize);
        let c = &self.config;
        put_u32(&mut b, c.n_trees);
        put_u32(&mut b, c.max_depth);
        put_u32(&mut b, c.min_samples_leaf);
        let (tag, k) = match c.m_try {
            MTry::Sqrt => (0u8, 0),
            MTry::Third => (1, 0),
            MTry::Fixed(k) => (2, k),
        };
        b.push(tag);
        put_u32(&mut b, k);
        put_u64(&mut b, c.seed);
        put_u32(&mut b, self.columns.len());
        for name in &self.columns {
            put_u32(&mut b, name.len());
            b.extend_from_slice(name.as_bytes());
        }
        put_u64(&mut b, self.n_train as u64);
        put_u32(&mut b, self.trees.len());
        for (tree, boot) in self.trees.iter().zip(&self.bootstraps) {
            put_u32(&mut b, tree.nodes.len());
            for n in &tree.nodes {
                match *n {
                    Node::Leaf { value, count } => {
                        b.push(0);
                        put_f64(&mut b, value);
                        put_u32(&mut b, count);
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        b.push(1);
                        put_u32(&mut b, feature);
                        put_f64(&mut b, threshold);
                        put_u32(&mut b, left);
                        put_u32(&mut b, right);
                    }
                }
            }
            put_u32(&mut b, boot.len());
            for &r in boot {
                b.extend_from_slice(&r.to_le_bytes());
            }
        }
        b.extend_from_slice(END);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::CorruptPayload("not a regmap model file".into()));
        }
        let version = cur.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                expected: MODEL_VERSION,
                found: version,
            });
        }
        let n_trees = cur.u32()? as usize;
        let max_depth = cur.u32()? as usize;
        let min_samples_leaf = cur.u32()? as usize;
        let tag = cur.take(1)?[0];
        let k = cur.u32()? as usize;
        let m_try = match tag {
            0 => MTry::Sqrt,
            1 => MTry::Third,
            2 => MTry::Fixed(k),
            t => return Err(Error::CorruptPayload(format!("unknown m_try tag {t}"))),
        };
        let seed = cur.u64()?;
        let config = ForestConfig {
            n_trees,
            max_depth,
            min_samples_leaf,
            m_try,
            seed,
        };
        let ncols = cur.u32()? as usize;
        let mut columns = Vec::with_capacity(ncols.min(1 << 16));
        for _ in 0..ncols {
            let len = cur.u32()? as usize;
            let s = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::CorruptPayload("column name is not UTF-8".into()))?;
            columns.push(s.to_string());
        }
        let n_train = cur.u64()? as usize;
        let stored = cur.u32()? as usize;
        let mut trees = Vec::new();
        let mut bootstraps = Vec::new();
        for _ in 0..stored {
            let nn = cur.u32()? as usize;
            let mut nodes = Vec::with_capacity(nn.min(1 << 20));
            for _ in 0..nn {
                let node = match cur.take(1)?[0] {
                    0 => Node::Leaf {
                        value: cur.f64()?,
                        count: cur.u32()? as usize,
                    },
                    1 => Node::Split {
                        feature: cur.u32()? as usize,
                        threshold: cur.f64()?,
                        left: cur.u32()? as usize,
                        right: cur.u32()? as usize,
                    },
                    t => return Err(Error::CorruptPayload(format!("unknown node tag {t}"))),
                };
                nodes.push(node);
            }
            trees.push(Tree::from_nodes(nodes)?);
            let nb = cur.u32()? as usize;
            let mut boot = Vec::with_capacity(nb.min(1 << 24));
            for _ in 0..nb {
                boot.push(cur.u32()?);
            }
            bootstraps.push(boot);
        }
        if cur.take(4)? != END {
            return Err(Error::CorruptPayload("missing end marker".into()));
        }
        if cur.pos != bytes.len() {
            return Err(Error::CorruptPayload("trailing bytes after end marker".into()));
        }
        Forest::from_parts(config, columns, n_train, trees, bootstraps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
