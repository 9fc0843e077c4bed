//! Separable filtering on x-fastest 3D buffers: Gaussian (derivative)
//! convolution and sliding-window extrema.

use rayon::prelude::*;

use crate::volume::{Geometry, Volume};

/// Voxels per axis of a box with physical diameter `box_mm`: the smallest
/// odd count covering `box_mm / spacing`.
pub fn odd_box_voxels(box_mm: f64, spacing: [f64; 3]) -> [usize; 3] {
    let mut out = [1usize; 3];
    for a in 0..3 {
        // Guard against 7.5/2.5 = 3.0000000000000004 style round-off.
        let ratio = box_mm / spacing[a] - 1e-9;
        let mut n = ratio.ceil().max(1.0) as usize;
        if n % 2 == 0 {
            n += 1;
        }
        out[a] = n;
    }
    out
}

/// Half widths (radius in voxels) of [`odd_box_voxels`].
pub fn box_half_widths(box_mm: f64, spacing: [f64; 3]) -> [usize; 3] {
    odd_box_voxels(box_mm, spacing).map(|n| n / 2)
}

/// Normalized sampled Gaussian with radius `ceil(4 sigma)` (in voxels).
pub fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    let radius = (4.0 * sigma_vox).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// First-derivative-of-Gaussian kernel in voxel units, scaled so that a
/// unit ramp has derivative exactly one. Indexed as correlation taps:
/// `out[i] = sum_t k[t] * in[i + t - r]`.
pub fn gaussian_derivative_kernel(sigma_vox: f64) -> Vec<f64> {
    let radius = (4.0 * sigma_vox).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| x as f64 * (-(x * x) as f64 / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect();
    let norm: f64 = (-radius..=radius)
        .zip(&k)
        .map(|(x, v)| x as f64 * v)
        .sum();
    k.iter_mut().for_each(|v| *v /= norm);
    k
}

/// Correlates `data` along `axis` with an odd-length kernel, clamping
/// indices at the edges.
pub fn convolve_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let n = dims[axis] as isize;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut out = vec![0.0; data.len()];
    // Each line along `axis` is independent; parallelize over slabs of z.
    let slab = dims[0] * dims[1];
    if axis < 2 {
        out.par_chunks_mut(slab)
            .zip(data.par_chunks(slab))
            .for_each(|(o, d)| convolve_lines_in_slab(d, o, dims, axis, kernel, r, n, stride));
    } else {
        out.par_chunks_mut(slab).enumerate().for_each(|(k, o)| {
            let k = k as isize;
            for (t, &w) in kernel.iter().enumerate() {
                let kk = (k + t as isize - r).clamp(0, n - 1) as usize;
                let src = &data[kk * slab..(kk + 1) * slab];
                for (ov, &sv) in o.iter_mut().zip(src) {
                    *ov += w * sv;
                }
            }
        });
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn convolve_lines_in_slab(
    d: &[f64],
    o: &mut [f64],
    dims: [usize; 3],
    axis: usize,
    kernel: &[f64],
    r: isize,
    n: isize,
    stride: usize,
) {
    let (lines, line_step) = if axis == 0 { (dims[1], dims[0]) } else { (dims[0], 1) };
    for l in 0..lines {
        let start = l * line_step;
        for i in 0..n {
            let mut acc = 0.0;
            for (t, &w) in kernel.iter().enumerate() {
                let ii = (i + t as isize - r).clamp(0, n - 1) as usize;
                acc += w * d[start + ii * stride];
            }
            o[start + i as usize * stride] = acc;
        }
    }
}

/// Separable Gaussian smoothing with a physical standard deviation.
pub fn smooth_gaussian_mm(v: &Volume, sigma_mm: f64) -> Volume {
    let g = *v.geometry();
    let mut data = v.data().to_vec();
    for a in 0..3 {
        let k = gaussian_kernel(sigma_mm / g.spacing[a]);
        data = convolve_axis(&data, g.dims, a, &k);
    }
    Volume::from_parts(g, data)
}

/// Gaussian derivative along `axis` (per mm) of a volume smoothed with
/// `sigma_mm`.
pub fn gaussian_gradient_component(v: &Volume, sigma_mm: f64, axis: usize) -> Volume {
    let g = *v.geometry();
    let mut data = v.data().to_vec();
    for a in 0..3 {
        let s = sigma_mm / g.spacing[a];
        data = if a == axis {
            let k = gaussian_derivative_kernel(s);
            let mut d = convolve_axis(&data, g.dims, a, &k);
            d.iter_mut().for_each(|x| *x /= g.spacing[a]);
            d
        } else {
            convolve_axis(&data, g.dims, a, &gaussian_kernel(s))
        };
    }
    Volume::from_parts(g, data)
}

/// Finite-difference derivative along `axis` in units per mm: central
/// differences inside, one-sided at the borders, zero on singleton axes.
pub fn central_difference(data: &[f64], geometry: &Geometry, axis: usize) -> Vec<f64> {
    let dims = geometry.dims;
    let n = dims[axis];
    let h = geometry.spacing[axis];
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let mut out = vec![0.0; data.len()];
    if n < 2 {
        return out;
    }
    for (idx, o) in out.iter_mut().enumerate() {
        let i = (idx / stride) % n;
        *o = if i == 0 {
            (data[idx + stride] - data[idx]) / h
        } else if i == n - 1 {
            (data[idx] - data[idx - stride]) / h
        } else {
            (data[idx + stride] - data[idx - stride]) / (2.0 * h)
        };
    }
    out
}

/// Sliding-window maximum of odd width `window`, clipped at the borders,
/// using the van Herk / Gil-Werman block decomposition (three comparisons
/// per sample regardless of window size).
pub fn sliding_max_1d(input: &[f64], window: usize, out: &mut [f64]) {
    sliding_extremum_1d(input, window, out, f64::max, f64::NEG_INFINITY)
}

pub fn sliding_min_1d(input: &[f64], window: usize, out: &mut [f64]) {
    sliding_extremum_1d(input, window, out, f64::min, f64::INFINITY)
}

fn sliding_extremum_1d(
    input: &[f64],
    window: usize,
    out: &mut [f64],
    pick: fn(f64, f64) -> f64,
    identity: f64,
) {
    let n = input.len();
    debug_assert_eq!(out.len(), n);
    debug_assert!(window % 2 == 1);
    let h = window / 2;
    if h == 0 {
        out.copy_from_slice(input);
        return;
    }
    // Padded coordinates: input occupies [h, h + n); the padding is the
    // identity so clipped windows behave as if truncated.
    let total = n + 2 * h;
    let blocks = total.div_ceil(window);
    let len = blocks * window;
    let padded = |p: usize| {
        if p >= h && p < h + n {
            input[p - h]
        } else {
            identity
        }
    };
    let mut prefix = vec![identity; len];
    let mut suffix = vec![identity; len];
    for b in 0..blocks {
        let s = b * window;
        let mut acc = identity;
        for p in s..s + window {
            acc = pick(acc, padded(p));
            prefix[p] = acc;
        }
        acc = identity;
        for p in (s..s + window).rev() {
            acc = pick(acc, padded(p));
            suffix[p] = acc;
        }
    }
    // Window for output i spans padded [i, i + window - 1].
    for (i, o) in out.iter_mut().enumerate() {
        *o = pick(suffix[i], prefix[i + window - 1]);
    }
}

/// Separable clipped box maximum over a 3D buffer.
pub fn box_extremum_3d(data: &[f64], dims: [usize; 3], windows: [usize; 3], max: bool) -> Vec<f64> {
    let mut cur = data.to_vec();
    for axis in 0..3 {
        if windows[axis] <= 1 {
            continue;
        }
        cur = apply_lines(&cur, dims, axis, |line, out| {
            if max {
                sliding_max_1d(line, windows[axis], out)
            } else {
                sliding_min_1d(line, windows[axis], out)
            }
        });
    }
    cur
}

/// Applies a 1D line operator along `axis` to every line of the buffer.
fn apply_lines(
    data: &[f64],
    dims: [usize; 3],
    axis: usize,
    op: impl Fn(&[f64], &mut [f64]) + Sync,
) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let n = dims[axis];
    let stride = match axis {
        0 => 1,
        1 => nx,
        _ => nx * ny,
    };
    // Line start offsets.
    let starts: Vec<usize> = match axis {
        0 => (0..ny * nz).map(|l| l * nx).collect(),
        1 => (0..nz)
            .flat_map(|k| (0..nx).map(move |i| i + k * nx * ny))
            .collect(),
        _ => (0..nx * ny).collect(),
    };
    let lines: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&s| {
            let line: Vec<f64> = (0..n).map(|t| data[s + t * stride]).collect();
            let mut out = vec![0.0; n];
            op(&line, &mut out);
            out
        })
        .collect();
    let mut result = vec![0.0; data.len()];
    for (s, line) in starts.iter().zip(lines) {
        for (t, v) in line.into_iter().enumerate() {
            result[s + t * stride] = v;
        }
    }
    result
}
