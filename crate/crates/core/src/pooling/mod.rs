//! Average and maximum pooling of feature maps over physical boxes, the
//! feature schemas, and assembly of per-location feature vectors.

mod schema;
mod stack;

use crate::features::FeatureMap;
use crate::filter::{box_extremum_3d, box_half_widths, odd_box_voxels};
use crate::volume::Volume;

pub use schema::{Schema, MI_BOXES_MM, MOTHER_MAPS, REGISTRATION_MAPS, SIGMAS_MM};
pub use stack::{assemble, FeatureStack};

/// Pooling box diameters in mm.
pub const BOX_SIZES_MM: [f64; 9] = [2.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0];

/// Textual form of a box size or sigma in column names (`2`, `0.5`).
pub fn format_mm(x: f64) -> String {
    format!("{x}")
}

/// 3D summed-area table with a leading zero plane on each axis.
#[derive(Debug, Clone)]
pub struct IntegralVolume {
    dims: [usize; 3],
    table: Vec<f64>,
}

impl IntegralVolume {
    pub fn new(data: &[f64], dims: [usize; 3]) -> Self {
        let [nx, ny, nz] = dims;
        let (tx, ty) = (nx + 1, ny + 1);
        let mut table = vec![0.0; tx * ty * (nz + 1)];
        for k in 0..nz {
            for j in 0..ny {
                let mut row = 0.0;
                for i in 0..nx {
                    row += data[i + nx * (j + ny * k)];
                    let t = (i + 1) + tx * ((j + 1) + ty * (k + 1));
                    table[t] = row + table[t - tx] + table[t - tx * ty] - table[t - tx - tx * ty];
                }
            }
        }
        Self { dims, table }
    }

    pub fn from_volume(v: &Volume) -> Self {
        Self::new(v.data(), v.dims())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Sum over the inclusive voxel range `lo ..= hi`.
    #[inline]
    pub fn box_sum(&self, lo: [usize; 3], hi: [usize; 3]) -> f64 {
        let tx = self.dims[0] + 1;
        let txy = tx * (self.dims[1] + 1);
        let at = |i: usize, j: usize, k: usize| self.table[i + tx * j + txy * k];
        let (x0, y0, z0) = (lo[0], lo[1], lo[2]);
        let (x1, y1, z1) = (hi[0] + 1, hi[1] + 1, hi[2] + 1);
        at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) + at(x0, y1, z0)
            + at(x1, y0, z0)
            - at(x0, y0, z0)
    }

    /// Box clipped to the volume around `center` with the given half
    /// widths: returns `(sum, voxel count)`.
    #[inline]
    pub fn clipped(&self, center: [usize; 3], half: [usize; 3]) -> (f64, usize) {
        let (lo, hi) = clip_box(center, half, self.dims);
        let n = (0..3).map(|a| hi[a] - lo[a] + 1).product();
        (self.box_sum(lo, hi), n)
    }

    #[inline]
    pub fn clipped_mean(&self, center: [usize; 3], half: [usize; 3]) -> f64 {
        let (s, n) = self.clipped(center, half);
        s / n as f64
    }
}

#[inline]
pub(crate) fn clip_box(center: [usize; 3], half: [usize; 3], dims: [usize; 3]) -> ([usize; 3], [usize; 3]) {
    let lo = [0, 1, 2].map(|a| center[a].saturating_sub(half[a]));
    let hi = [0, 1, 2].map(|a| (center[a] + half[a]).min(dims[a] - 1));
    (lo, hi)
}

/// Mean over the border-clipped box of diameter `box_mm`.
pub fn avg_pool(map: &FeatureMap, box_mm: f64) -> FeatureMap {
    let g = *map.geometry();
    let iv = IntegralVolume::from_volume(&map.values);
    let half = box_half_widths(box_mm, g.spacing);
    let values = Volume::from_fn(g, |c| iv.clipped_mean(c, half));
    FeatureMap {
        name: format!("{}_avg{}", map.name, format_mm(box_mm)),
        values,
        units: map.units,
    }
}

/// Maximum over the border-clipped box of diameter `box_mm`.
pub fn max_pool(map: &FeatureMap, box_mm: f64) -> FeatureMap {
    let g = *map.geometry();
    let w = odd_box_voxels(box_mm, g.spacing);
    let data = box_extremum_3d(map.values.data(), g.dims, w, true);
    FeatureMap {
        name: format!("{}_max{}", map.name, format_mm(box_mm)),
        values: Volume::new(g, data).expect("maxima of finite values are finite"),
        units: map.units,
    }
}
