//! Uniform cubic B-spline free-form deformation grids.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::volume::{DisplacementField, Geometry};

/// Control-point grid of a cubic B-spline displacement model. Control
/// point `(a, b, c)` sits at `origin + (a, b, c) * spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineGrid {
    origin: [f64; 3],
    spacing: [f64; 3],
    dims: [usize; 3],
    coeffs: Vec<[f64; 3]>,
}

/// Cubic B-spline weights for the four control points `i-1 ..= i+2`
/// around parameter `t = i + f`.
#[inline]
pub fn cubic_weights(f: f64) -> [f64; 4] {
    let f2 = f * f;
    let f3 = f2 * f;
    let g = 1.0 - f;
    [
        g * g * g / 6.0,
        (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0,
        (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0,
        f3 / 6.0,
    ]
}

/// Support of one point along one axis: first control index and weights.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisSupport {
    pub first: usize,
    pub w: [f64; 4],
}

impl BSplineGrid {
    /// Zero grid with the given control spacing covering `geometry`, with a
    /// one-cell margin on each side.
    pub fn covering(geometry: &Geometry, spacing_mm: [f64; 3]) -> Result<Self> {
        if spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("control spacing must be positive"));
        }
        let ext = geometry.extent();
        let origin = [0, 1, 2].map(|a| geometry.origin[a] - spacing_mm[a]);
        let dims = [0, 1, 2].map(|a| (ext[a] / spacing_mm[a] + 1e-9).floor() as usize + 4);
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            spacing: spacing_mm,
            dims,
            coeffs: vec![[0.0; 3]; n],
        })
    }

    pub fn from_coefficients(
        origin: [f64; 3],
        spacing: [f64; 3],
        dims: [usize; 3],
        coeffs: Vec<[f64; 3]>,
    ) -> Result<Self> {
        if coeffs.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::invalid("coefficient count does not match grid dims"));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("control spacing must be positive"));
        }
        if coeffs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("B-spline coefficients".into()));
        }
        Ok(Self {
            origin,
            spacing,
            dims,
            coeffs,
        })
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn coefficients(&self) -> &[[f64; 3]] {
        &self.coeffs
    }

    pub fn coefficients_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.coeffs
    }

    #[inline]
    pub fn index(&self, a: usize, b: usize, c: usize) -> usize {
        a + self.dims[0] * (b + self.dims[1] * c)
    }

    #[inline]
    pub(crate) fn support(&self, axis: usize, x: f64) -> Option<AxisSupport> {
        let t = (x - self.origin[axis]) / self.spacing[axis];
        let i = t.floor();
        let first = i as isize - 1;
        if first < 0 || first as usize + 3 >= self.dims[axis] {
            return None;
        }
        Some(AxisSupport {
            first: first as usize,
            w: cubic_weights(t - i),
        })
    }

    /// Checks that every voxel center of `geometry` has full support.
    pub fn ensure_covers(&self, geometry: &Geometry) -> Result<()> {
        for axis in 0..3 {
            let lo = geometry.origin[axis];
            let hi = lo + geometry.extent()[axis];
            if self.support(axis, lo).is_none() || self.support(axis, hi).is_none() {
                return Err(Error::GridCoverage { axis });
            }
        }
        Ok(())
    }

    /// Displacement at a world point.
    pub fn evaluate(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        let sx = self.support(0, p[0]).ok_or(Error::GridCoverage { axis: 0 })?;
        let sy = self.support(1, p[1]).ok_or(Error::GridCoverage { axis: 1 })?;
        let sz = self.support(2, p[2]).ok_or(Error::GridCoverage { axis: 2 })?;
        let mut u = [0.0; 3];
        for (c, wz) in sz.w.iter().enumerate() {
            for (b, wy) in sy.w.iter().enumerate() {
                let wzy = wz * wy;
                for (a, wx) in sx.w.iter().enumerate() {
                    let w = wzy * wx;
                    let coef = self.coeffs[self.index(sx.first + a, sy.first + b, sz.first + c)];
                    u[0] += w * coef[0];
                    u[1] += w * coef[1];
                    u[2] += w * coef[2];
                }
            }
        }
        Ok(u)
    }

    /// Exact refinement to half the control spacing (uniform cubic B-spline
    /// subdivision, applied separably). The represented field is unchanged
    /// wherever the coarse grid had full support.
    pub fn refine(&self) -> BSplineGrid {
        let mut cur = self.coeffs.clone();
        let mut dims = self.dims;
        for axis in 0..3 {
            let n = dims[axis];
            let nf = 2 * n - 1;
            let mut nd = dims;
            nd[axis] = nf;
            let mut out = vec![[0.0; 3]; nd[0] * nd[1] * nd[2]];
            let idx = |d: [usize; 3], p: [usize; 3]| p[0] + d[0] * (p[1] + d[1] * p[2]);
            for z in 0..nd[2] {
                for y in 0..nd[1] {
                    for x in 0..nd[0] {
                        let p = [x, y, z];
                        let m = p[axis];
                        let k = m / 2;
                        let at = |i: isize| {
                            let mut q = p;
                            q[axis] = i.clamp(0, n as isize - 1) as usize;
                            cur[idx(dims, q)]
                        };
                        let v = if m % 2 == 0 {
                            let (a, b, c) = (at(k as isize - 1), at(k as isize), at(k as isize + 1));
                            [0, 1, 2].map(|d| (a[d] + 6.0 * b[d] + c[d]) / 8.0)
                        } else {
                            let (a, b) = (at(k as isize), at(k as isize + 1));
                            [0, 1, 2].map(|d| (a[d] + b[d]) / 2.0)
                        };
                        out[idx(nd, p)] = v;
                    }
                }
            }
            cur = out;
            dims = nd;
        }
        BSplineGrid {
            origin: self.origin,
            spacing: self.spacing.map(|s| s / 2.0),
            dims,
            coeffs: cur,
        }
    }
}

/// Dense displacement field of a grid at the voxel centers of `geometry`,
/// evaluated separably (x, then y, then z).
pub fn grid_to_dvf(g: &BSplineGrid, geometry: &Geometry) -> Result<DisplacementField> {
    g.ensure_covers(geometry)?;
    let [nx, ny, nz] = geometry.dims;
    let supports = |axis: usize, n: usize| -> Vec<AxisSupport> {
        (0..n)
            .map(|i| {
                let x = geometry.origin[axis] + i as f64 * geometry.spacing[axis];
                g.support(axis, x).expect("coverage checked")
            })
            .collect()
    };
    let (sx, sy, sz) = (supports(0, nx), supports(1, ny), supports(2, nz));
    let [gx, gy, gz] = g.dims;
    let _ = gx;

    // Stage 1: contract x. a1[(x, b, c)] over control (b, c).
    let mut a1 = vec![[0.0; 3]; nx * gy * gz];
    for c in 0..gz {
        for b in 0..gy {
            for (x, s) in sx.iter().enumerate() {
                let mut acc = [0.0; 3];
                for (t, w) in s.w.iter().enumerate() {
                    let coef = g.coeffs[g.index(s.first + t, b, c)];
                    acc[0] += w * coef[0];
                    acc[1] += w * coef[1];
                    acc[2] += w * coef[2];
                }
                a1[x + nx * (b + gy * c)] = acc;
            }
        }
    }
    // Stage 2: contract y.
    let mut a2 = vec![[0.0; 3]; nx * ny * gz];
    for c in 0..gz {
        for (y, s) in sy.iter().enumerate() {
            for x in 0..nx {
                let mut acc = [0.0; 3];
                for (t, w) in s.w.iter().enumerate() {
                    let v = a1[x + nx * (s.first + t + gy * c)];
                    acc[0] += w * v[0];
                    acc[1] += w * v[1];
                    acc[2] += w * v[2];
                }
                a2[x + nx * (y + ny * c)] = acc;
            }
        }
    }
    // Stage 3: contract z.
    let mut out = vec![[0.0; 3]; nx * ny * nz];
    for (z, s) in sz.iter().enumerate() {
        for y in 0..ny {
            for x in 0..nx {
                let mut acc = [0.0; 3];
                for (t, w) in s.w.iter().enumerate() {
                    let v = a2[x + nx * (y + ny * (s.first + t))];
                    acc[0] += w * v[0];
                    acc[1] += w * v[1];
                    acc[2] += w * v[2];
                }
                out[x + nx * (y + ny * z)] = acc;
            }
        }
    }
    Ok(DisplacementField::from_parts(*geometry, out))
}

/// Adds i.i.d. uniform offsets in `[-range_mm, range_mm]` to every
/// coefficient component.
pub fn perturb_grid(g: &BSplineGrid, range_mm: f64, seed: u64) -> Result<BSplineGrid> {
    if !(range_mm >= 0.0) {
        return Err(Error::invalid("perturbation range must be >= 0"));
    }
    let mut out = g.clone();
    if range_mm == 0.0 {
        return Ok(out);
    }
    let mut rng = rng_for(seed, &[0xbe7]);
    for c in out.coeffs.iter_mut() {
        for v in c.iter_mut() {
            *v += rng.gen_range(-range_mm..=range_mm);
        }
    }
    Ok(out)
}
