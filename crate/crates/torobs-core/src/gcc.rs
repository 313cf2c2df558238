//! Geometric control condition checking by sampling straight-line rays.
//!
//! On a flat torus every unit-speed geodesic is a straight line taken modulo
//! the periods, so the control condition "every geodesic meets omega within
//! time T0" is checked by marching a deterministic family of rays (grid
//! origins crossed with a direction fan, optionally topped up with seeded
//! random rays) and recording when each first enters a plateau box of the
//! window. The time step of the march is fixed independently of T0, which
//! keeps the verdict monotone in T0: enlarging the horizon can only convert
//! failures into passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{ModelError, Result};
use crate::window::ObservationWindow;

/// Sampling plan for the ray family.
#[derive(Clone, Debug)]
pub struct RaySampling {
    /// Deterministic origins per axis (origins form a grid of this side).
    pub positions_per_axis: usize,
    /// Size of the direction fan on the square torus; must be a multiple of
    /// 4 so the fan contains the axis-parallel directions. Ignored on the
    /// line, where the two directions are used.
    pub directions: usize,
    /// Extra random rays appended to the deterministic family.
    pub random_rays: usize,
    /// Seed for the random rays.
    pub seed: u64,
    /// March step; must resolve the plateau (no larger than half its
    /// thinnest extent).
    pub time_step: f64,
}

impl Default for RaySampling {
    fn default() -> Self {
        RaySampling {
            positions_per_axis: 24,
            directions: 32,
            random_rays: 0,
            seed: 7,
            time_step: 0.02,
        }
    }
}

/// One sampled ray and the first time it was seen inside the plateau set,
/// if any.
#[derive(Clone, Debug)]
pub struct RayHit {
    pub origin: Vec<f64>,
    pub direction: Vec<f64>,
    pub entry_time: Option<f64>,
}

/// Outcome of a control-condition check.
#[derive(Clone, Debug)]
pub struct GccReport {
    pub pass: bool,
    pub horizon: f64,
    pub rays_total: usize,
    /// The worst ray: never entering beats any entry, later entries beat
    /// earlier ones. On failure this is an explicit offending ray.
    pub worst: RayHit,
    /// Largest entry time among rays that did enter.
    pub max_entry_time: Option<f64>,
}

/// Checks whether every sampled unit-speed ray meets the plateau of the
/// window strictly before `horizon`. An empty window fails automatically.
pub fn gcc_ray_check(
    window: &ObservationWindow,
    horizon: f64,
    sampling: &RaySampling,
) -> Result<GccReport> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(ModelError::InvalidParameter(format!(
            "control horizon {horizon} must be positive"
        )));
    }
    if sampling.positions_per_axis == 0 {
        return Err(ModelError::InvalidParameter(
            "positions_per_axis must be >= 1".into(),
        ));
    }
    if !(sampling.time_step.is_finite() && sampling.time_step > 0.0) {
        return Err(ModelError::InvalidParameter(format!(
            "time step {} must be positive",
            sampling.time_step
        )));
    }
    let geom = window.geometry();
    let d = geom.dim();
    if d == 2 && (sampling.directions == 0 || sampling.directions % 4 != 0) {
        return Err(ModelError::InvalidParameter(format!(
            "direction count {} must be a positive multiple of 4",
            sampling.directions
        )));
    }

    let lengths = geom.lengths();
    let mut rays: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let p = sampling.positions_per_axis;
    match d {
        1 => {
            for i in 0..p {
                let x = (i as f64 + 0.5) * lengths[0] / p as f64;
                rays.push((vec![x], vec![1.0]));
                rays.push((vec![x], vec![-1.0]));
            }
        }
        2 => {
            for i in 0..p {
                for j in 0..p {
                    let x = (i as f64 + 0.5) * lengths[0] / p as f64;
                    let y = (j as f64 + 0.5) * lengths[1] / p as f64;
                    for q in 0..sampling.directions {
                        let theta = std::f64::consts::TAU * q as f64 / sampling.directions as f64;
                        rays.push((vec![x, y], vec![theta.cos(), theta.sin()]));
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    let mut rng = ChaCha12Rng::seed_from_u64(sampling.seed);
    for _ in 0..sampling.random_rays {
        let origin: Vec<f64> = lengths.iter().map(|&l| rng.random_range(0.0..l)).collect();
        let direction = match d {
            1 => vec![if rng.random::<bool>() { 1.0 } else { -1.0 }],
            _ => {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                vec![theta.cos(), theta.sin()]
            }
        };
        rays.push((origin, direction));
    }

    let mut worst: Option<RayHit> = None;
    let mut max_entry: Option<f64> = None;
    for (origin, direction) in &rays {
        let entry = first_entry(window, origin, direction, horizon, sampling.time_step);
        if let Some(t) = entry {
            if max_entry.map_or(true, |m| t > m) {
                max_entry = Some(t);
            }
        }
        let is_worse = match (&worst, entry) {
            (None, _) => true,
            (Some(w), None) => w.entry_time.is_some(),
            (Some(w), Some(t)) => w.entry_time.is_some_and(|wt| t > wt),
        };
        if is_worse {
            worst = Some(RayHit {
                origin: origin.clone(),
                direction: direction.clone(),
                entry_time: entry,
            });
        }
    }
    let worst = worst.expect("at least one ray is always sampled");
    Ok(GccReport {
        pass: worst.entry_time.is_some(),
        horizon,
        rays_total: rays.len(),
        worst,
        max_entry_time: max_entry,
    })
}

fn first_entry(
    window: &ObservationWindow,
    origin: &[f64],
    direction: &[f64],
    horizon: f64,
    dt: f64,
) -> Option<f64> {
    let mut step = 1u64;
    let mut point = vec![0.0; origin.len()];
    loop {
        let t = step as f64 * dt;
        if t >= horizon {
            return None;
        }
        for (i, p) in point.iter_mut().enumerate() {
            *p = origin[i] + t * direction[i];
        }
        if window.plateau_contains(&point) {
            return Some(t);
        }
        step += 1;
    }
}
