use rand::Rng as _;

use super::bspline::{AxisSupport, BSplineGrid};
use super::RegConfig;
use crate::error::{Error, Result};
use crate::filter::{central_difference, smooth_gaussian_mm};
use crate::rng::rng_for;
use crate::volume::{Geometry, TrilinearWeights, Volume};

/// Cost record of one resolution level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelTrace {
    /// `(cost before, cost after)` of each accepted step, both evaluated on
    /// that iteration's sample set.
    pub accepted: Vec<(f64, f64)>,
    pub rejected: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegTrace {
    pub levels: Vec<LevelTrace>,
}

struct Level {
    fixed: Volume,
    moving: Volume,
    grad: [Vec<f64>; 3],
}

fn downsample(v: &Volume) -> Volume {
    let g = v.geometry();
    let smooth = smooth_gaussian_mm(v, g.spacing[0].min(g.spacing[1]).min(g.spacing[2]));
    let factor = g.dims.map(|d| if d >= 8 { 2 } else { 1 });
    let dims = [0, 1, 2].map(|a| g.dims[a].div_ceil(factor[a]));
    let spacing = [0, 1, 2].map(|a| g.spacing[a] * factor[a] as f64);
    let ng = Geometry::new(dims, spacing, g.origin).expect("downsampled geometry is valid");
    Volume::from_fn(ng, |[i, j, k]| {
        smooth.at([i * factor[0], j * factor[1], k * factor[2]])
    })
}

fn pyramid(v: &Volume, levels: usize) -> Vec<Volume> {
    let mut out = vec![v.clone()];
    for _ in 1..levels {
        let next = downsample(out.last().unwrap());
        out.push(next);
    }
    out.reverse();
    out
}

struct Sample {
    fixed: f64,
    p: [f64; 3],
    s: [AxisSupport; 3],
}

fn draw_samples(level: &Level, grid: &BSplineGrid, k: usize, rng: &mut crate::rng::Rng) -> Vec<Sample> {
    let g = level.fixed.geometry();
    let n = g.len();
    (0..k)
        .map(|_| {
            let idx = rng.gen_range(0..n);
            let p = g.world(g.coords(idx));
            let s = [0, 1, 2].map(|a| grid.support(a, p[a]).expect("grid covers fixed"));
            Sample {
                fixed: level.fixed.data()[idx],
                p,
                s,
            }
        })
        .collect()
}

/// Mean SSD over `samples`; accumulates its gradient w.r.t. the
/// coefficients into `grad` when given.
fn cost(grid: &BSplineGrid, level: &Level, samples: &[Sample], mut grad: Option<&mut [[f64; 3]]>) -> f64 {
    let coeffs = grid.coefficients();
    let mg = level.moving.geometry();
    let inv = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    for s in samples {
        let [sx, sy, sz] = s.s;
        let mut u = [0.0; 3];
        for c in 0..4 {
            for b in 0..4 {
                let wzy = sz.w[c] * sy.w[b];
                let row = grid.index(sx.first, sy.first + b, sz.first + c);
                for a in 0..4 {
                    let w = wzy * sx.w[a];
                    let cf = coeffs[row + a];
                    u[0] += w * cf[0];
                    u[1] += w * cf[1];
                    u[2] += w * cf[2];
                }
            }
        }
        let q = [s.p[0] + u[0], s.p[1] + u[1], s.p[2] + u[2]];
        let tw = TrilinearWeights::at(mg, q);
        let r = tw.apply(level.moving.data()) - s.fixed;
        total += r * r;
        if let Some(g) = grad.as_deref_mut() {
            let dm = [0, 1, 2].map(|d| 2.0 * r * inv * tw.apply(&level.grad[d]));
            for c in 0..4 {
                for b in 0..4 {
                    let wzy = sz.w[c] * sy.w[b];
                    let row = grid.index(sx.first, sy.first + b, sz.first + c);
                    for a in 0..4 {
                        let w = wzy * sx.w[a];
                        let e = &mut g[row + a];
                        e[0] += w * dm[0];
                        e[1] += w * dm[1];
                        e[2] += w * dm[2];
                    }
                }
            }
        }
    }
    total * inv
}

fn optimize_level(
    grid: &mut BSplineGrid,
    level: &Level,
    cfg: &RegConfig,
    step_mm: f64,
    level_index: usize,
) -> Result<LevelTrace> {
    let mut trace = LevelTrace::default();
    if cfg.iterations == 0 {
        return Ok(trace);
    }
    grid.ensure_covers(level.fixed.geometry())?;
    let n = level.fixed.geometry().len();
    let k = ((cfg.sampling_fraction * n as f64).round() as usize)
        .max(cfg.min_samples)
        .max(1)
        .min(n);
    let mut rng = rng_for(cfg.seed, &[0x5a, level_index as u64]);
    let mut step = step_mm;
    let mut gradient = vec![[0.0; 3]; grid.coefficients().len()];
    for it in 0..cfg.iterations {
        let samples = draw_samples(level, grid, k, &mut rng);
        gradient.iter_mut().for_each(|g| *g = [0.0; 3]);
        let before = cost(grid, level, &samples, Some(&mut gradient));
        if !before.is_finite() {
            return Err(Error::NonFiniteCost {
                level: level_index,
                iteration: it,
            });
        }
        let gmax = gradient.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax == 0.0 {
            break;
        }
        let mut trial = grid.clone();
        let scale = step / gmax;
        for (c, g) in trial.coefficients_mut().iter_mut().zip(&gradient) {
            for d in 0..3 {
                c[d] -= scale * g[d];
            }
        }
        let after = cost(&trial, level, &samples, None);
        if after.is_finite() && after <= before {
            trace.accepted.push((before, after));
            *grid = trial;
        } else {
            trace.rejected += 1;
            step *= 0.5;
        }
    }
    Ok(trace)
}

/// Multi-resolution registration returning the final grid; see
/// [`register_traced`].
pub fn register(fixed: &Volume, moving: &Volume, cfg: &RegConfig, init: &BSplineGrid) -> Result<BSplineGrid> {
    register_traced(fixed, moving, cfg, init).map(|r| r.0)
}

/// Smoothed and downsampled image pairs plus moving-image gradients,
/// coarsest level first. Shared read-only across ensemble members.
pub(crate) struct Pyramid {
    levels: Vec<Level>,
}

impl Pyramid {
    pub(crate) fn new(fixed: &Volume, moving: &Volume, resolutions: usize) -> Self {
        let fp = pyramid(fixed, resolutions);
        let mp = pyramid(moving, resolutions);
        let levels = fp
            .into_iter()
            .zip(mp)
            .map(|(f, m)| {
                let grad = [0, 1, 2].map(|a| central_difference(m.data(), m.geometry(), a));
                Level {
                    fixed: f,
                    moving: m,
                    grad,
                }
            })
            .collect();
        Self { levels }
    }
}

/// Runs `cfg.resolutions` levels of descent starting from `init`, which is
/// used as the coarsest grid and refined (control spacing halved) between
/// levels. Also returns the per-level cost trace.
pub fn register_traced(
    fixed: &Volume,
    moving: &Volume,
    cfg: &RegConfig,
    init: &BSplineGrid,
) -> Result<(BSplineGrid, RegTrace)> {
    cfg.validate()?;
    init.ensure_covers(fixed.geometry())?;
    if cfg.iterations == 0 {
        return Ok((init.clone(), RegTrace::default()));
    }
    let pyr = Pyramid::new(fixed, moving, cfg.resolutions);
    register_on(&pyr, cfg, init)
}

pub(crate) fn register_on(pyr: &Pyramid, cfg: &RegConfig, init: &BSplineGrid) -> Result<(BSplineGrid, RegTrace)> {
    let mut grid = init.clone();
    let mut trace = RegTrace::default();
    if cfg.iterations == 0 {
        return Ok((grid, trace));
    }
    let r = pyr.levels.len();
    for (l, level) in pyr.levels.iter().enumerate() {
        if l > 0 {
            grid = grid.refine();
        }
        let step = cfg.step_mm * (1u64 << (r - 1 - l)) as f64;
        trace.levels.push(optimize_level(&mut grid, level, cfg, step, l)?);
    }
    Ok((grid, trace))
}

#[cfg(test)]
mod tests {
    use super::super::grid_to_dvf;
    use super::*;
    use crate::synth::{generate_phantom, PhantomConfig};
    use crate::volume::{warp, DisplacementField};

    fn phantom() -> Volume {
        let g = Geometry::new([40, 40, 24], [1.5, 1.5, 2.5], [0.0; 3]).unwrap();
        let v = generate_phantom(g, &PhantomConfig::default(), 3).unwrap();
        smooth_gaussian_mm(&v, 1.5)
    }

    fn cfg(iterations: usize) -> RegConfig {
        RegConfig {
            resolutions: 3,
            iterations,
            step_mm: 0.5,
            grid_spacing_mm: [10.0; 3],
            seed: 1,
            ..RegConfig::default()
        }
    }

    #[test]
    fn zero_iterations_return_init() {
        let f = phantom();
        let c = cfg(0);
        let init = super::super::perturb_grid(&c.initial_grid(f.geometry()).unwrap(), 1.0, 4).unwrap();
        assert_eq!(register(&f, &f, &c, &init).unwrap(), init);
    }

    #[test]
    fn identical_images_stay_at_zero() {
        let f = phantom();
        let c = cfg(20);
        let g = register(&f, &f, &c, &c.initial_grid(f.geometry()).unwrap()).unwrap();
        let u = grid_to_dvf(&g, f.geometry()).unwrap();
        let mean: f64 = u.vectors().iter().map(|v| crate::volume::norm3(*v)).sum::<f64>() / u.vectors().len() as f64;
        assert!(mean <= 0.1);
    }

    #[test]
    fn recovers_translation() {
        let f = phantom();
        let geo = *f.geometry();
        let m = warp(&f, &DisplacementField::constant(geo, [-4.0, 0.0, 0.0])).unwrap();
        let c = cfg(60);
        let (g, trace) = register_traced(&f, &m, &c, &c.initial_grid(&geo).unwrap()).unwrap();
        for lt in &trace.levels {
            assert!(lt.accepted.iter().all(|(b, a)| a <= b));
        }
        let u = grid_to_dvf(&g, &geo).unwrap();
        let mut sum = 0.0;
        let mut n = 0;
        for idx in 0..geo.len() {
            let [i, j, k] = geo.coords(idx);
            if (8..32).contains(&i) && (8..32).contains(&j) && (5..19).contains(&k) {
                sum += u.vectors()[idx][0];
                n += 1;
            }
        }
        let mean = sum / n as f64;
        assert!((mean - 4.0).abs() <= 1.0, "recovered {mean}");
    }

    #[test]
    fn uncovered_init_rejected() {
        let f = phantom();
        let small = Geometry::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let init = BSplineGrid::covering(&small, [10.0; 3]).unwrap();
        assert!(matches!(register(&f, &f, &cfg(3), &init), Err(Error::GridCoverage { .. })));
    }

    #[test]
    fn non_finite_cost_reported() {
        let f = phantom();
        let mut data = f.data().to_vec();
        data.iter_mut().for_each(|v| *v = 1e200);
        let big = Volume::new(*f.geometry(), data).unwrap();
        let c = cfg(3);
        let r = register(&f, &big, &c, &c.initial_grid(f.geometry()).unwrap());
        assert!(matches!(r, Err(Error::NonFiniteCost { .. })));
    }
}
