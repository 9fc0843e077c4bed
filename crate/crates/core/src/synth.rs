//! Synthetic phantoms and smooth random deformations with exact dense
//! ground-truth error.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{convolve_axis, gaussian_kernel};
use crate::rng::rng_for;
use crate::volume::{norm3, warp, DisplacementField, Geometry, Volume};

/// Intensity bounds and structure counts of the phantom.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub min: f64,
    pub max: f64,
    pub tubes: usize,
    pub blobs: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            min: -1000.0,
            max: 500.0,
            tubes: 7,
            blobs: 12,
        }
    }
}

struct Tube {
    points: Vec<[f64; 3]>,
    radius: f64,
    amplitude: f64,
}

impl Tube {
    fn distance(&self, p: [f64; 3]) -> f64 {
        self.points
            .windows(2)
            .map(|s| segment_distance(p, s[0], s[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    norm3([ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2]])
}

/// CT-like phantom: smooth parenchyma background, vessel-like tubes,
/// blobs, and one homogeneous ellipsoid.
pub fn generate_phantom(geometry: Geometry, cfg: &PhantomConfig, seed: u64) -> Result<Volume> {
    if geometry.dims.iter().any(|&d| d < 16) {
        return Err(Error::invalid(format!(
            "phantom dims must be >= 16 per axis, got {:?}",
            geometry.dims
        )));
    }
    let mut rng = rng_for(seed, &[0x9a47]);
    let lo = geometry.origin;
    let ext = geometry.extent();
    let uniform_point = |rng: &mut crate::rng::Rng, margin: f64| -> [f64; 3] {
        [0, 1, 2].map(|a| lo[a] + ext[a] * rng.gen_range(margin..1.0 - margin))
    };

    // Low-frequency background.
    let waves: Vec<([f64; 3], f64, f64)> = (0..4)
        .map(|_| {
            let k = [0, 1, 2].map(|a| {
                std::f64::consts::TAU * rng.gen_range(0.5..1.5) / ext[a].max(1.0)
            });
            (k, rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(15.0..40.0))
        })
        .collect();

    let tubes: Vec<Tube> = (0..cfg.tubes)
        .map(|_| {
            let start = uniform_point(&mut rng, 0.05);
            let end = uniform_point(&mut rng, 0.05);
            let wiggle = [0, 1, 2].map(|a| ext[a] * rng.gen_range(-0.15..0.15));
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let points = (0..=16)
                .map(|s| {
                    let t = s as f64 / 16.0;
                    let bend = (std::f64::consts::PI * t + phase).sin() * (std::f64::consts::PI * t).sin();
                    [0, 1, 2].map(|a| start[a] + t * (end[a] - start[a]) + bend * wiggle[a])
                })
                .collect();
            Tube {
                points,
                radius: rng.gen_range(1.2..3.0),
                amplitude: rng.gen_range(600.0..950.0),
            }
        })
        .collect();

    let blobs: Vec<([f64; 3], f64, f64)> = (0..cfg.blobs)
        .map(|_| {
            (
                uniform_point(&mut rng, 0.1),
                rng.gen_range(2.5..7.0),
                rng.gen_range(-250.0..450.0),
            )
        })
        .collect();

    let hom_center = uniform_point(&mut rng, 0.3);
    let hom_radii = [0, 1, 2].map(|a| ext[a] * rng.gen_range(0.15..0.22));
    let hom_value: f64 = rng.gen_range(20.0..60.0);

    let (min, max) = (cfg.min, cfg.max);
    Ok(Volume::from_fn(geometry, |ijk| {
        let p = geometry.world(ijk);
        let e: f64 = (0..3)
            .map(|a| ((p[a] - hom_center[a]) / hom_radii[a]).powi(2))
            .sum();
        if e <= 1.0 {
            return hom_value.clamp(min, max);
        }
        let mut v = -820.0;
        for (k, ph, amp) in &waves {
            v += amp * (k[0] * (p[0] - lo[0]) + k[1] * (p[1] - lo[1]) + k[2] * (p[2] - lo[2]) + ph).sin();
        }
        for t in &tubes {
            let d = t.distance(p);
            if d < 4.0 * t.radius {
                v += t.amplitude * (-d * d / (2.0 * t.radius * t.radius)).exp();
            }
        }
        for (c, r, amp) in &blobs {
            let d2 = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>();
            if d2 < 16.0 * r * r {
                v += amp * (-d2 / (2.0 * r * r)).exp();
            }
        }
        v.clamp(min, max)
    }))
}

/// Smooth random displacement field: uniform noise in `[-amplitude,
/// amplitude]` per component, Gaussian-smoothed (sigma in mm, radius
/// 3 sigma, edge clamped), rescaled so the maximum vector norm equals
/// `amplitude`.
pub fn generate_random_dvf(
    geometry: Geometry,
    amplitude: f64,
    sigma_mm: f64,
    seed: u64,
) -> Result<DisplacementField> {
    if !(amplitude >= 0.0) {
        return Err(Error::invalid("amplitude must be >= 0"));
    }
    if !(sigma_mm > 0.0) {
        return Err(Error::invalid("sigma must be > 0"));
    }
    if amplitude == 0.0 {
        return Ok(DisplacementField::zeros(geometry));
    }
    let mut rng = rng_for(seed, &[0xdf5]);
    let n = geometry.len();
    let mut comps: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..n).map(|_| rng.gen_range(-amplitude..=amplitude)).collect())
        .collect();
    for c in comps.iter_mut() {
        *c = smooth_buffer(c, geometry, sigma_mm);
    }
    let vectors: Vec<[f64; 3]> = (0..n).map(|i| [comps[0][i], comps[1][i], comps[2][i]]).collect();
    let field = DisplacementField::from_parts(geometry, vectors);
    let m = field.max_norm();
    if m == 0.0 {
        return Ok(DisplacementField::zeros(geometry));
    }
    Ok(field.scaled(amplitude / m))
}

pub(crate) fn smooth_buffer(data: &[f64], geometry: Geometry, sigma_mm: f64) -> Vec<f64> {
    let mut cur = data.to_vec();
    for a in 0..3 {
        let k = gaussian_kernel(sigma_mm / geometry.spacing[a]);
        cur = convolve_axis(&cur, geometry.dims, a, &k);
    }
    cur
}

/// Dense residual error `|T_b(x) - T_true(x)|` in mm.
pub fn true_error_map(t_b: &DisplacementField, t_true: &DisplacementField) -> Result<Volume> {
    t_b.geometry().ensure_matches(t_true.geometry(), "true_error_map")?;
    let data = t_b
        .vectors()
        .iter()
        .zip(t_true.vectors())
        .map(|(a, b)| norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]]))
        .collect();
    Ok(Volume::from_parts(*t_b.geometry(), data))
}

/// Adds i.i.d. Gaussian noise.
pub fn add_noise(v: &Volume, sigma: f64, seed: u64) -> Volume {
    if sigma <= 0.0 {
        return v.clone();
    }
    let mut rng = rng_for(seed, &[0x5e]);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let data = v.data().iter().map(|&x| x + normal.sample(&mut rng)).collect();
    Volume::from_parts(*v.geometry(), data)
}

/// Parameters of one synthetic fixed/moving pair.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub amplitude_mm: f64,
    pub sigma_mm: f64,
    pub noise: f64,
    pub phantom: PhantomConfig,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            dims: [64, 64, 64],
            spacing: [0.8, 0.8, 2.5],
            amplitude_mm: 9.0,
            sigma_mm: 14.0,
            noise: 15.0,
            phantom: PhantomConfig::default(),
        }
    }
}

/// Fixed and moving images with the exact transform relating them:
/// `moving(x + truth(x)) ~ fixed(x)`.
#[derive(Debug, Clone)]
pub struct SynthPair {
    pub fixed: Volume,
    pub moving: Volume,
    pub truth: DisplacementField,
}

pub fn generate_pair(cfg: &PairConfig, seed: u64) -> Result<SynthPair> {
    let geometry = Geometry::new(cfg.dims, cfg.spacing, [0.0; 3])?;
    let phantom = generate_phantom(geometry, &cfg.phantom, crate::rng::derive_seed(seed, &[1]))?;
    let truth = generate_random_dvf(
        geometry,
        cfg.amplitude_mm,
        cfg.sigma_mm,
        crate::rng::derive_seed(seed, &[2]),
    )?;
    let fixed_clean = warp(&phantom, &truth)?;
    let fixed = add_noise(&fixed_clean, cfg.noise, crate::rng::derive_seed(seed, &[3]));
    let moving = add_noise(&phantom, cfg.noise, crate::rng::derive_seed(seed, &[4]));
    Ok(SynthPair {
        fixed,
        moving,
        truth,
    })
}
