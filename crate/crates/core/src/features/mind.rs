use rayon::prelude::*;

use super::{FeatureMap, Units};
use crate::error::Result;
use crate::filter::convolve_axis;
use crate::volume::Volume;

/// Sparse self-similarity neighbourhood of the MIND descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct MindPattern {
    offsets: Vec<[isize; 3]>,
    /// Half width of the cubic patch over which squared differences are
    /// averaged.
    pub patch_radius: usize,
}

/// Physical extent (mm) of the native pattern box at 0.8 x 0.8 x 2.5 mm.
const TARGET_BOX_MM: [f64; 3] = [5.5, 5.5, 7.5];

impl MindPattern {
    /// The 82-offset pattern inside a 7 x 7 x 3 voxel box: the whole
    /// central plane except the center (48) plus, on each adjacent plane,
    /// the 3 x 3 core and the eight points at distance 3 along the in-plane
    /// axes and diagonals (17 each).
    pub fn native() -> Self {
        let mut offsets = Vec::with_capacity(82);
        for dz in [-1isize, 0, 1] {
            for dy in -3isize..=3 {
                for dx in -3isize..=3 {
                    let keep = if dz == 0 {
                        dx != 0 || dy != 0
                    } else {
                        let core = dx.abs() <= 1 && dy.abs() <= 1;
                        let star = (dx.abs() == 3 || dx == 0) && (dy.abs() == 3 || dy == 0) && (dx, dy) != (0, 0);
                        core || star
                    };
                    if keep {
                        offsets.push([dx, dy, dz]);
                    }
                }
            }
        }
        Self {
            offsets,
            patch_radius: 1,
        }
    }

    /// Native pattern rescaled to the nearest odd voxel box covering about
    /// 5.5 x 5.5 x 7.5 mm. Rescaled offsets may coincide; all 82 are kept.
    pub fn for_spacing(spacing: [f64; 3]) -> Self {
        let native = Self::native();
        let half = [0, 1, 2].map(|a| {
            let r = TARGET_BOX_MM[a] / spacing[a];
            let lo = ((r - 1.0) / 2.0).floor().max(0.0);
            let (c0, c1) = (2.0 * lo + 1.0, 2.0 * lo + 3.0);
            let n = if (r - c0).abs() <= (c1 - r).abs() { c0 } else { c1 };
            (n as isize - 1) / 2
        });
        let native_half = [3isize, 3, 1];
        let offsets = native
            .offsets
            .iter()
            .map(|o| [0, 1, 2].map(|a| (o[a] as f64 * half[a] as f64 / native_half[a] as f64).round() as isize))
            .collect();
        Self {
            offsets,
            patch_radius: 1,
        }
    }

    pub fn offsets(&self) -> &[[isize; 3]] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Patch distance for one offset: box mean of `(I(x) - I(x + o))^2`, with
/// clamped indexing at the borders.
fn patch_distance(v: &Volume, o: [isize; 3], radius: usize) -> Vec<f64> {
    let g = v.geometry();
    let [nx, ny, nz] = g.dims.map(|d| d as isize);
    let data = v.data();
    let mut sq: Vec<f64> = vec![0.0; data.len()];
    sq.par_chunks_mut((nx * ny) as usize).enumerate().for_each(|(k, slab)| {
        let k = k as isize;
        let kk = (k + o[2]).clamp(0, nz - 1);
        for j in 0..ny {
            let jj = (j + o[1]).clamp(0, ny - 1);
            for i in 0..nx {
                let ii = (i + o[0]).clamp(0, nx - 1);
                let a = data[(i + nx * (j + ny * k)) as usize];
                let b = data[(ii + nx * (jj + ny * kk)) as usize];
                slab[(i + nx * j) as usize] = (a - b) * (a - b);
            }
        }
    });
    let w = 2 * radius + 1;
    let kernel = vec![1.0 / w as f64; w];
    for a in 0..3 {
        sq = convolve_axis(&sq, g.dims, a, &kernel);
    }
    sq
}

/// Per-voxel bandwidth (mean patch distance) and minimum patch distance.
fn descriptor_stats(v: &Volume, pattern: &MindPattern) -> (Vec<f64>, Vec<f64>) {
    let n = v.data().len();
    let mut sum = vec![0.0; n];
    let mut min = vec![f64::INFINITY; n];
    for &o in pattern.offsets() {
        let d = patch_distance(v, o, pattern.patch_radius);
        sum.par_iter_mut()
            .zip(min.par_iter_mut())
            .zip(d.par_iter())
            .for_each(|((s, m), &x)| {
                *s += x;
                *m = m.min(x);
            });
    }
    let k = pattern.len() as f64;
    sum.iter_mut().for_each(|s| *s /= k);
    (sum, min)
}

#[inline]
fn component(d: f64, dmin: f64, var: f64) -> f64 {
    if var > 0.0 {
        (-(d - dmin) / var).exp()
    } else {
        1.0
    }
}

/// MIND descriptor of every voxel, component-major (`[offset][voxel]`).
pub fn mind_descriptors(v: &Volume, pattern: &MindPattern) -> Vec<Vec<f64>> {
    let (var, dmin) = descriptor_stats(v, pattern);
    pattern
        .offsets()
        .iter()
        .map(|&o| {
            let d = patch_distance(v, o, pattern.patch_radius);
            d.iter()
                .zip(&dmin)
                .zip(&var)
                .map(|((&x, &m), &s)| component(x, m, s))
                .collect()
        })
        .collect()
}

/// L1 distance between the MIND descriptors of `fixed` and `warped`.
pub fn mind_distance(fixed: &Volume, warped: &Volume, pattern: &MindPattern) -> Result<FeatureMap> {
    fixed.geometry().ensure_matches(warped.geometry(), "warped image")?;
    let (fv, fmin) = descriptor_stats(fixed, pattern);
    let (wv, wmin) = descriptor_stats(warped, pattern);
    let mut dist = vec![0.0; fixed.data().len()];
    for &o in pattern.offsets() {
        let df = patch_distance(fixed, o, pattern.patch_radius);
        let dw = patch_distance(warped, o, pattern.patch_radius);
        dist.par_iter_mut().enumerate().for_each(|(i, acc)| {
            *acc += (component(df[i], fmin[i], fv[i]) - component(dw[i], wmin[i], wv[i])).abs();
        });
    }
    FeatureMap::new("mind", Volume::new(*fixed.geometry(), dist)?, Units::Dimensionless)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_phantom, PhantomConfig};
    use crate::volume::Geometry;
    use std::collections::HashSet;

    #[test]
    fn native_pattern_shape() {
        let p = MindPattern::native();
        assert_eq!(p.len(), 82);
        let set: HashSet<_> = p.offsets().iter().collect();
        assert_eq!(set.len(), 82);
        assert!(!set.contains(&[0, 0, 0]));
        assert!(p.offsets().iter().all(|o| o[0].abs() <= 3 && o[1].abs() <= 3 && o[2].abs() <= 1));
        assert_eq!(p.offsets().iter().filter(|o| o[2] == 0).count(), 48);
        assert_eq!(p.offsets().iter().filter(|o| o[2] == 1).count(), 17);
        // Point symmetric.
        assert!(p.offsets().iter().all(|o| set.contains(&[-o[0], -o[1], -o[2]])));
    }

    #[test]
    fn rescaled_pattern() {
        assert_eq!(MindPattern::for_spacing([0.8, 0.8, 2.5]), MindPattern::native());
        let p = MindPattern::for_spacing([1.0, 1.0, 1.0]);
        assert_eq!(p.len(), 82);
        // 5.5 voxels -> 5 (half 2); 7.5 voxels -> 7 (half 3).
        assert!(p.offsets().iter().all(|o| o[0].abs() <= 2 && o[1].abs() <= 2 && o[2].abs() <= 3));
        assert!(p.offsets().iter().any(|o| o[2] == 3));
    }

    fn phantom() -> Volume {
        let g = Geometry::new([24, 22, 16], [0.8, 0.8, 2.5], [0.0; 3]).unwrap();
        generate_phantom(g, &PhantomConfig::default(), 11).unwrap()
    }

    #[test]
    fn descriptor_components_in_unit_interval() {
        let v = phantom();
        let d = mind_descriptors(&v, &MindPattern::native());
        assert_eq!(d.len(), 82);
        for i in 0..v.data().len() {
            let mut mx: f64 = 0.0;
            for c in &d {
                assert!(c[i] > 0.0 && c[i] <= 1.0);
                mx = mx.max(c[i]);
            }
            assert_eq!(mx, 1.0);
        }
    }

    #[test]
    fn identical_zero_symmetric_and_shift_invariant() {
        let f = phantom();
        let w = crate::synth::add_noise(&f, 40.0, 2);
        let p = MindPattern::native();
        let same = mind_distance(&f, &f, &p).unwrap();
        assert!(same.values.data().iter().all(|&v| v == 0.0));
        let a = mind_distance(&f, &w, &p).unwrap();
        let b = mind_distance(&w, &f, &p).unwrap();
        assert!(a.values.data().iter().zip(b.values.data()).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(a.values.min_max().1 > 0.0);
        let fs = f.map(|x| x + 100.0);
        let ws = w.map(|x| x + 100.0);
        let c = mind_distance(&fs, &ws, &p).unwrap();
        let dev = a
            .values
            .data()
            .iter()
            .zip(c.values.data())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(dev < 1e-6, "{dev}");
    }

    #[test]
    fn patch_distance_matches_naive() {
        let v = phantom();
        let g = *v.geometry();
        let o = [2isize, -1, 1];
        let d = patch_distance(&v, o, 1);
        let c = |i: isize, n: usize| i.clamp(0, n as isize - 1);
        for idx in (0..g.len()).step_by(37) {
            let [i, j, k] = g.coords(idx).map(|x| x as isize);
            let mut acc = 0.0;
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (pi, pj, pk) = (c(i + dx, g.dims[0]), c(j + dy, g.dims[1]), c(k + dz, g.dims[2]));
                        let a = v.at_clamped(pi, pj, pk);
                        let b = v.at_clamped(pi + o[0], pj + o[1], pk + o[2]);
                        acc += (a - b).powi(2);
                    }
                }
            }
            assert!((d[idx] - acc / 27.0).abs() < 1e-6 * acc.max(1.0));
        }
    }
}
