//! MetaImage (`.mhd` + raw, or single-file `.mha`) reading and writing.
//!
//! Only the subset needed for axis-aligned 3D scalar volumes is supported:
//! `NDims = 3`, element types `MET_UCHAR`, `MET_SHORT` and `MET_FLOAT`,
//! little-endian uncompressed payloads and no direction matrix.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::volume::{DisplacementField, Geometry, Volume};

/// On-disk voxel element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    U8,
    I16,
    F32,
}

impl ElementType {
    pub fn tag(self) -> &'static str {
        match self {
            ElementType::U8 => "MET_UCHAR",
            ElementType::I16 => "MET_SHORT",
            ElementType::F32 => "MET_FLOAT",
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::U8 => 1,
            ElementType::I16 => 2,
            ElementType::F32 => 4,
        }
    }

    fn parse(tag: &str) -> Result<Self> {
        match tag {
            "MET_UCHAR" => Ok(ElementType::U8),
            "MET_SHORT" => Ok(ElementType::I16),
            "MET_FLOAT" => Ok(ElementType::F32),
            other => Err(Error::UnsupportedElementType(other.to_string())),
        }
    }
}

/// Reads a volume from a `.mhd` or `.mha` file.
pub fn read_mhd(path: impl AsRef<Path>) -> Result<Volume> {
    read_mhd_typed(path).map(|(v, _)| v)
}

/// Reads a volume and reports the element type it was stored with.
pub fn read_mhd_typed(path: impl AsRef<Path>) -> Result<(Volume, ElementType)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header_err = |reason: String| Error::Header {
        path: path.to_path_buf(),
        reason,
    };

    // The header ends with the ElementDataFile line; anything after it in
    // a LOCAL file is payload.
    let mut fields: HashMap<String, String> = HashMap::new();
    let mut pos = 0usize;
    let mut data_file = None;
    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|e| pos + e)
            .unwrap_or(bytes.len());
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| header_err("header is not UTF-8".into()))?
            .trim();
        pos = (end + 1).min(bytes.len());
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| header_err(format!("expected 'Key = Value', got '{line}'")))?;
        let key = canonical_key(key.trim());
        let value = value.trim().to_string();
        if fields.contains_key(&key) {
            return Err(header_err(format!("duplicate key {key}")));
        }
        if key == "ElementDataFile" {
            data_file = Some(value.clone());
            fields.insert(key, value);
            break;
        }
        fields.insert(key, value);
    }

    let get = |k: &str| {
        fields
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| header_err(format!("missing mandatory key {k}")))
    };

    let object_type = get("ObjectType")?;
    if object_type != "Image" {
        return Err(header_err(format!("ObjectType {object_type} is not Image")));
    }
    let ndims: usize = get("NDims")?
        .parse()
        .map_err(|_| header_err("NDims is not an integer".into()))?;
    if ndims != 3 {
        return Err(Error::UnsupportedDimensionality(ndims));
    }
    let dims = parse_triplet::<usize>(get("DimSize")?).map_err(|r| header_err(format!("DimSize: {r}")))?;
    let spacing =
        parse_triplet::<f64>(get("ElementSpacing")?).map_err(|r| header_err(format!("ElementSpacing: {r}")))?;
    let origin = match fields.get("Offset") {
        Some(v) => parse_triplet::<f64>(v).map_err(|r| header_err(format!("Offset: {r}")))?,
        None => [0.0; 3],
    };
    let etype = ElementType::parse(get("ElementType")?)?;
    if let Some(msb) = fields.get("BinaryDataByteOrderMSB") {
        if !msb.eq_ignore_ascii_case("false") {
            return Err(header_err("big-endian payloads are not supported".into()));
        }
    }
    if let Some(c) = fields.get("CompressedData") {
        if !c.eq_ignore_ascii_case("false") {
            return Err(header_err("compressed payloads are not supported".into()));
        }
    }
    if let Some(n) = fields.get("ElementNumberOfChannels") {
        if n != "1" {
            return Err(header_err("only single-channel images are supported".into()));
        }
    }
    if let Some(m) = fields.get("TransformMatrix") {
        let vals: Vec<f64> = m.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        if vals.as_slice() != identity {
            return Err(header_err("non-identity TransformMatrix is not supported".into()));
        }
    }

    let geometry = Geometry::new(dims, spacing, origin).map_err(|e| header_err(e.to_string()))?;
    let data_file = data_file.ok_or_else(|| header_err("missing mandatory key ElementDataFile".into()))?;
    let payload: Vec<u8> = if data_file == "LOCAL" {
        bytes[pos..].to_vec()
    } else {
        let raw = resolve_data_file(path, &data_file);
        fs::read(&raw).map_err(|e| Error::io(raw, e))?
    };
    let expected = geometry.len() * etype.size();
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f64> = match etype {
        ElementType::U8 => payload.iter().map(|&b| b as f64).collect(),
        ElementType::I16 => payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        ElementType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    };
    Ok((Volume::new(geometry, data)?, etype))
}

fn canonical_key(key: &str) -> String {
    match key {
        "Origin" | "Position" => "Offset".to_string(),
        "ElementByteOrderMSB" => "BinaryDataByteOrderMSB".to_string(),
        k => k.to_string(),
    }
}

fn parse_triplet<T: std::str::FromStr>(s: &str) -> std::result::Result<[T; 3], String> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(format!("expected 3 values, got {}", parts.len()));
    }
    let p = |t: &str| t.parse::<T>().map_err(|_| format!("cannot parse '{t}'"));
    Ok([p(parts[0])?, p(parts[1])?, p(parts[2])?])
}

fn resolve_data_file(header: &Path, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        header.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Writes a volume as 32-bit float.
pub fn write_mhd(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_mhd_as(v, path, ElementType::F32)
}

/// Writes a volume with an explicit element type. Integer types require
/// every voxel to be exactly representable.
pub fn write_mhd_as(v: &Volume, path: impl AsRef<Path>, etype: ElementType) -> Result<()> {
    let path = path.as_ref();
    let payload = encode_payload(v, etype)?;
    let g = v.geometry();
    let local = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("mha"));
    let raw_path = path.with_extension("raw");
    let data_file = if local {
        "LOCAL".to_string()
    } else {
        raw_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::invalid(format!("bad output path {}", path.display())))?
    };
    let header = format!(
        "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n\
         CompressedData = False\nOffset = {} {} {}\nElementSpacing = {} {} {}\n\
         DimSize = {} {} {}\nElementType = {}\nElementDataFile = {}\n",
        g.origin[0],
        g.origin[1],
        g.origin[2],
        g.spacing[0],
        g.spacing[1],
        g.spacing[2],
        g.dims[0],
        g.dims[1],
        g.dims[2],
        etype.tag(),
        data_file
    );
    if local {
        let mut bytes = header.into_bytes();
        bytes.extend_from_slice(&payload);
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    } else {
        fs::write(path, header).map_err(|e| Error::io(path, e))?;
        fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))
    }
}

fn encode_payload(v: &Volume, etype: ElementType) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(v.data().len() * etype.size());
    for &x in v.data() {
        match etype {
            ElementType::U8 => {
                if x.fract() != 0.0 || !(0.0..=255.0).contains(&x) {
                    return Err(Error::invalid(format!("{x} is not representable as MET_UCHAR")));
                }
                out.push(x as u8);
            }
            ElementType::I16 => {
                if x.fract() != 0.0 || !(i16::MIN as f64..=i16::MAX as f64).contains(&x) {
                    return Err(Error::invalid(format!("{x} is not representable as MET_SHORT")));
                }
                out.extend_from_slice(&(x as i16).to_le_bytes());
            }
            ElementType::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
        }
    }
    Ok(out)
}

fn field_component_path(dir: &Path, stem: &str, axis: usize) -> PathBuf {
    let suffix = ["dx", "dy", "dz"][axis];
    dir.join(format!("{stem}_{suffix}.mhd"))
}

/// Writes a displacement field as `<stem>_dx.mhd`, `<stem>_dy.mhd`, `<stem>_dz.mhd`.
pub fn write_field(field: &DisplacementField, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (a, comp) in field.components().iter().enumerate() {
        write_mhd(comp, field_component_path(dir, stem, a))?;
    }
    Ok(())
}

/// Reads a field written by [`write_field`].
pub fn read_field(dir: impl AsRef<Path>, stem: &str) -> Result<DisplacementField> {
    let dir = dir.as_ref();
    let x = read_mhd(field_component_path(dir, stem, 0))?;
    let y = read_mhd(field_component_path(dir, stem, 1))?;
    let z = read_mhd(field_component_path(dir, stem, 2))?;
    DisplacementField::from_components(&x, &y, &z)
}

/// Whether all three component files of a field exist.
pub fn field_exists(dir: impl AsRef<Path>, stem: &str) -> bool {
    (0..3).all(|a| field_component_path(dir.as_ref(), stem, a).exists())
}
