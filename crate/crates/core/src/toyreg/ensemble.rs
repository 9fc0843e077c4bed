use rayon::prelude::*;

use super::bspline::{grid_to_dvf, perturb_grid, BSplineGrid};
use super::optimizer::{register_on, Pyramid};
use super::RegConfig;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::volume::{DisplacementField, Volume};

fn check_members(p: usize) -> Result<()> {
    if p < 2 {
        return Err(Error::invalid(format!("ensemble needs at least 2 members, got {p}")));
    }
    Ok(())
}

fn run_members(
    fixed: &Volume,
    moving: &Volume,
    cfg: &RegConfig,
    start: &BSplineGrid,
    p: usize,
    range_mm: f64,
    seed: u64,
) -> Result<Vec<DisplacementField>> {
    start.ensure_covers(fixed.geometry())?;
    let pyr = Pyramid::new(fixed, moving, cfg.resolutions);
    let members: Vec<Result<DisplacementField>> = (0..p)
        .into_par_iter()
        .map(|k| {
            let init = perturb_grid(start, range_mm, derive_seed(seed, &[k as u64]))?;
            let (g, _) = register_on(&pyr, cfg, &init)?;
            grid_to_dvf(&g, fixed.geometry())
        })
        .collect();
    members.into_iter().collect()
}

/// `p` full multi-resolution registrations from independently perturbed
/// zero initializations at the coarsest control spacing.
pub fn ensemble_initial(
    fixed: &Volume,
    moving: &Volume,
    cfg: &RegConfig,
    p: usize,
    range_mm: f64,
    seed: u64,
) -> Result<Vec<DisplacementField>> {
    check_members(p)?;
    cfg.validate()?;
    let start = cfg.initial_grid(fixed.geometry())?;
    run_members(fixed, moving, cfg, &start, p, range_mm, seed)
}

/// `p` single-resolution re-registrations starting from perturbed copies of
/// the base transform `t_b`.
pub fn ensemble_base(
    fixed: &Volume,
    moving: &Volume,
    cfg: &RegConfig,
    t_b: &BSplineGrid,
    p: usize,
    range_mm: f64,
    seed: u64,
) -> Result<Vec<DisplacementField>> {
    check_members(p)?;
    let single = RegConfig {
        resolutions: 1,
        ..cfg.clone()
    };
    single.validate()?;
    run_members(fixed, moving, &single, t_b, p, range_mm, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyreg::register;
    use crate::filter::smooth_gaussian_mm;
    use crate::synth::{generate_phantom, PhantomConfig};
    use crate::volume::{warp, Geometry};

    fn pair() -> (Volume, Volume) {
        let g = Geometry::new([32, 32, 16], [1.5, 1.5, 2.5], [0.0; 3]).unwrap();
        let f = smooth_gaussian_mm(&generate_phantom(g, &PhantomConfig::default(), 8).unwrap(), 1.5);
        let u = crate::synth::generate_random_dvf(g, 3.0, 12.0, 2).unwrap();
        let m = warp(&f, &u).unwrap();
        (f, m)
    }

    fn cfg() -> RegConfig {
        RegConfig {
            resolutions: 2,
            iterations: 8,
            seed: 3,
            ..RegConfig::default()
        }
    }

    fn max_diff(a: &DisplacementField, b: &DisplacementField) -> f64 {
        a.vectors()
            .iter()
            .zip(b.vectors())
            .flat_map(|(u, v)| (0..3).map(move |d| (u[d] - v[d]).abs()))
            .fold(0.0, f64::max)
    }

    fn voxel_std(fields: &[DisplacementField]) -> f64 {
        let n = fields.len() as f64;
        let len = fields[0].vectors().len();
        let mut total = 0.0;
        for i in 0..len {
            for d in 0..3 {
                let mean = fields.iter().map(|f| f.vectors()[i][d]).sum::<f64>() / n;
                let var = fields.iter().map(|f| (f.vectors()[i][d] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                total += var.sqrt();
            }
        }
        total / (3 * len) as f64
    }

    #[test]
    fn member_count_checked() {
        let (f, m) = pair();
        assert!(ensemble_initial(&f, &m, &cfg(), 1, 2.0, 0).is_err());
        let tb = cfg().initial_grid(f.geometry()).unwrap();
        assert!(ensemble_base(&f, &m, &cfg(), &tb, 1, 2.0, 0).is_err());
        assert_eq!(ensemble_initial(&f, &m, &cfg(), 2, 2.0, 0).unwrap().len(), 2);
    }

    #[test]
    fn zero_range_gives_identical_members() {
        let (f, m) = pair();
        let e = ensemble_initial(&f, &m, &cfg(), 3, 0.0, 5).unwrap();
        assert_eq!(e[0], e[1]);
        assert_eq!(e[1], e[2]);
        assert!(e.iter().all(|x| x.geometry() == f.geometry()));
    }

    #[test]
    fn distinct_seeds_differ_and_runs_repeat() {
        let (f, m) = pair();
        let e = ensemble_initial(&f, &m, &cfg(), 2, 2.0, 5).unwrap();
        assert!(max_diff(&e[0], &e[1]) > 0.0);
        assert_eq!(e, ensemble_initial(&f, &m, &cfg(), 2, 2.0, 5).unwrap());
    }

    #[test]
    fn base_zero_range_equals_reregistration() {
        let (f, m) = pair();
        let c = cfg();
        let tb = register(&f, &m, &c, &c.initial_grid(f.geometry()).unwrap()).unwrap();
        let e = ensemble_base(&f, &m, &c, &tb, 2, 0.0, 1).unwrap();
        let single = RegConfig { resolutions: 1, ..c };
        let want = grid_to_dvf(&register(&f, &m, &single, &tb).unwrap(), f.geometry()).unwrap();
        assert_eq!(e[0], want);
        assert_eq!(e[1], want);
    }

    #[test]
    fn base_ensemble_contracts_on_identical_images() {
        let (f, _) = pair();
        let c = RegConfig {
            iterations: 30,
            ..cfg()
        };
        let single = RegConfig { resolutions: 1, ..c.clone() };
        let tb = BSplineGrid::covering(f.geometry(), single.grid_spacing_mm).unwrap();
        let perturbed: Vec<DisplacementField> = (0..6)
            .map(|k| grid_to_dvf(&perturb_grid(&tb, 2.0, derive_seed(4, &[k])).unwrap(), f.geometry()).unwrap())
            .collect();
        let e = ensemble_base(&f, &f, &c, &tb, 6, 2.0, 4).unwrap();
        let (before, after) = (voxel_std(&perturbed), voxel_std(&e));
        assert!(after <= before, "{after} > {before}");
    }
}
