//! Scalar volumes, displacement fields and their shared voxel geometry.
//!
//! Voxel data is stored x-fastest. World coordinates are axis aligned:
//! `world = origin + index * spacing`.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Relative tolerance used when comparing spacings and origins.
const GEOMETRY_RTOL: f64 = 1e-9;

/// Voxel grid layout shared by volumes, fields and feature maps.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::NonFinite("origin".into()));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// World position (mm) of a voxel center.
    #[inline]
    pub fn world(&self, ijk: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + ijk[0] as f64 * self.spacing[0],
            self.origin[1] + ijk[1] as f64 * self.spacing[1],
            self.origin[2] + ijk[2] as f64 * self.spacing[2],
        ]
    }

    /// Continuous (fractional) voxel index of a world point.
    #[inline]
    pub fn continuous_index(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Continuous index back to world coordinates.
    pub fn continuous_to_world(&self, c: [f64; 3]) -> [f64; 3] {
        [
            self.origin[0] + c[0] * self.spacing[0],
            self.origin[1] + c[1] * self.spacing[1],
            self.origin[2] + c[2] * self.spacing[2],
        ]
    }

    /// Physical extent between the first and last voxel centers.
    pub fn extent(&self) -> [f64; 3] {
        [
            (self.dims[0] - 1) as f64 * self.spacing[0],
            (self.dims[1] - 1) as f64 * self.spacing[1],
            (self.dims[2] - 1) as f64 * self.spacing[2],
        ]
    }

    /// True when the point lies within the voxel-center bounding box.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let c = self.continuous_index(p);
        (0..3).all(|a| c[a] >= -1e-9 && c[a] <= (self.dims[a] - 1) as f64 + 1e-9)
    }

    pub fn matches(&self, other: &Geometry) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= GEOMETRY_RTOL * a.abs().max(b.abs()).max(1.0);
        self.dims == other.dims
            && (0..3).all(|a| close(self.spacing[a], other.spacing[a]))
            && (0..3).all(|a| close(self.origin[a], other.origin[a]))
    }

    pub fn ensure_matches(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: {:?}/{:?} vs {:?}/{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }
}

/// 3D scalar image with physical geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(geometry: Geometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume data".into()));
        }
        Ok(Self { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: f64) -> Self {
        Self {
            data: vec![value; geometry.len()],
            geometry,
        }
    }

    /// Builds a volume by evaluating `f` at every voxel index.
    pub fn from_fn(geometry: Geometry, f: impl Fn([usize; 3]) -> f64 + Sync) -> Self {
        let data = (0..geometry.len())
            .into_par_iter()
            .map(|idx| f(geometry.coords(idx)))
            .collect();
        Self { geometry, data }
    }

    /// Internal constructor for data already known to be valid.
    pub(crate) fn from_parts(geometry: Geometry, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), geometry.len());
        Self { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, ijk: [usize; 3]) -> f64 {
        self.data[self.geometry.index(ijk[0], ijk[1], ijk[2])]
    }

    /// Voxel value with indices clamped into the grid.
    #[inline]
    pub fn at_clamped(&self, i: isize, j: isize, k: isize) -> f64 {
        let d = self.geometry.dims;
        let i = i.clamp(0, d[0] as isize - 1) as usize;
        let j = j.clamp(0, d[1] as isize - 1) as usize;
        let k = k.clamp(0, d[2] as isize - 1) as usize;
        self.data[self.geometry.index(i, j, k)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Applies `f` voxel-wise, keeping the geometry.
    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Volume {
        Volume::from_parts(self.geometry, self.data.par_iter().map(|&v| f(v)).collect())
    }

    /// Extracts an axial slice `k` as a row-major (y rows, x columns) buffer.
    pub fn axial_slice(&self, k: usize) -> Vec<f64> {
        let [nx, ny, _] = self.geometry.dims;
        let start = k * nx * ny;
        self.data[start..start + nx * ny].to_vec()
    }

    /// Trilinear interpolation at a world point.
    ///
    /// Points outside the grid are clamped to the boundary voxels.
    #[inline]
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        TrilinearWeights::at(&self.geometry, p).apply(&self.data)
    }
}

/// Corner offsets and weights of one trilinear lookup, reusable across
/// several volumes sharing a geometry.
#[derive(Debug, Clone, Copy)]
pub struct TrilinearWeights {
    base: usize,
    step: [usize; 3],
    frac: [f64; 3],
}

impl TrilinearWeights {
    #[inline]
    pub fn at(geometry: &Geometry, p: [f64; 3]) -> Self {
        let c = geometry.continuous_index(p);
        let mut lo = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut step = [0usize; 3];
        let strides = [1, geometry.dims[0], geometry.dims[0] * geometry.dims[1]];
        for a in 0..3 {
            let n = geometry.dims[a];
            if n == 1 {
                continue;
            }
            let mut x = c[a].clamp(0.0, (n - 1) as f64);
            // Snap world->index round-off so voxel centers sample exactly.
            let r = x.round();
            if (x - r).abs() < 1e-9 {
                x = r;
            }
            let i = (x.floor() as usize).min(n - 2);
            lo[a] = i;
            frac[a] = x - i as f64;
            step[a] = strides[a];
        }
        Self {
            base: geometry.index(lo[0], lo[1], lo[2]),
            step,
            frac,
        }
    }

    #[inline]
    pub fn apply(&self, data: &[f64]) -> f64 {
        let [sx, sy, sz] = self.step;
        let [fx, fy, fz] = self.frac;
        let b = self.base;
        let c00 = lerp(data[b], data[b + sx], fx);
        let c10 = lerp(data[b + sy], data[b + sy + sx], fx);
        let c01 = lerp(data[b + sz], data[b + sz + sx], fx);
        let c11 = lerp(data[b + sz + sy], data[b + sz + sy + sx], fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a * (1.0 - t) + b * t
    }
}

/// Free-function form of [`Volume::sample`].
pub fn trilinear_sample(v: &Volume, p: [f64; 3]) -> f64 {
    v.sample(p)
}

/// Dense displacement field `u(x)` in mm; the transform is `T(x) = x + u(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    geometry: Geometry,
    vectors: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn new(geometry: Geometry, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if vectors.len() != geometry.len() {
            return Err(Error::invalid(format!(
                "field length {} does not match dims {:?}",
                vectors.len(),
                geometry.dims
            )));
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("displacement field".into()));
        }
        Ok(Self { geometry, vectors })
    }

    pub(crate) fn from_parts(geometry: Geometry, vectors: Vec<[f64; 3]>) -> Self {
        debug_assert_eq!(vectors.len(), geometry.len());
        Self { geometry, vectors }
    }

    pub fn zeros(geometry: Geometry) -> Self {
        Self::constant(geometry, [0.0; 3])
    }

    pub fn constant(geometry: Geometry, u: [f64; 3]) -> Self {
        Self {
            vectors: vec![u; geometry.len()],
            geometry,
        }
    }

    /// Builds a field from a function of the voxel's world position.
    pub fn from_world_fn(geometry: Geometry, f: impl Fn([f64; 3]) -> [f64; 3] + Sync) -> Self {
        let vectors = (0..geometry.len())
            .into_par_iter()
            .map(|idx| f(geometry.world(geometry.coords(idx))))
            .collect();
        Self { geometry, vectors }
    }

    pub fn from_components(x: &Volume, y: &Volume, z: &Volume) -> Result<Self> {
        x.geometry().ensure_matches(y.geometry(), "field components")?;
        x.geometry().ensure_matches(z.geometry(), "field components")?;
        let vectors = x
            .data()
            .iter()
            .zip(y.data())
            .zip(z.data())
            .map(|((&a, &b), &c)| [a, b, c])
            .collect();
        Ok(Self {
            geometry: *x.geometry(),
            vectors,
        })
    }

    pub fn components(&self) -> [Volume; 3] {
        let comp = |a: usize| {
            Volume::from_parts(self.geometry, self.vectors.iter().map(|v| v[a]).collect())
        };
        [comp(0), comp(1), comp(2)]
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    #[inline]
    pub fn at(&self, ijk: [usize; 3]) -> [f64; 3] {
        self.vectors[self.geometry.index(ijk[0], ijk[1], ijk[2])]
    }

    /// Trilinearly interpolated displacement at a world point (edge clamped).
    pub fn sample(&self, p: [f64; 3]) -> [f64; 3] {
        let w = TrilinearWeights::at(&self.geometry, p);
        let [sx, sy, sz] = w.step;
        let [fx, fy, fz] = w.frac;
        let b = w.base;
        let d = &self.vectors;
        let mut out = [0.0; 3];
        for (a, o) in out.iter_mut().enumerate() {
            let c00 = lerp(d[b][a], d[b + sx][a], fx);
            let c10 = lerp(d[b + sy][a], d[b + sy + sx][a], fx);
            let c01 = lerp(d[b + sz][a], d[b + sz + sx][a], fx);
            let c11 = lerp(d[b + sz + sy][a], d[b + sz + sy + sx][a], fx);
            *o = lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz);
        }
        out
    }

    /// Maximum Euclidean norm over all vectors.
    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(|v| norm3(*v)).fold(0.0, f64::max)
    }

    /// Voxel-wise `self + other`.
    pub fn add(&self, other: &DisplacementField) -> Result<DisplacementField> {
        self.geometry.ensure_matches(&other.geometry, "field addition")?;
        let vectors = self
            .vectors
            .iter()
            .zip(&other.vectors)
            .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
            .collect();
        Ok(Self::from_parts(self.geometry, vectors))
    }

    pub fn scaled(&self, s: f64) -> DisplacementField {
        let vectors = self.vectors.iter().map(|v| [v[0] * s, v[1] * s, v[2] * s]).collect();
        Self::from_parts(self.geometry, vectors)
    }
}

#[inline]
pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Backward warping: `out(x) = moving(x + u(x))` on the field's grid.
pub fn warp(moving: &Volume, dvf: &DisplacementField) -> Result<Volume> {
    let g = *dvf.geometry();
    let data = dvf
        .vectors()
        .par_iter()
        .enumerate()
        .map(|(idx, u)| {
            let x = g.world(g.coords(idx));
            moving.sample([x[0] + u[0], x[1] + u[1], x[2] + u[2]])
        })
        .collect();
    Ok(Volume::from_parts(g, data))
}
