//! Independent verification: brute-force geodesic shooting for distances and
//! the ODE cross-check of the exponential map.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{GeoError, Result};
use crate::geodesics::{self, Covector};
use crate::group::{GroupElement, StepTwoGroup};
use crate::special::PI;

/// Options for the shooting search.
#[derive(Debug, Clone)]
pub struct ShootOpts {
    /// Endpoint tolerance for counting a hit; default `1e-6 (1 + |g|)`.
    pub eps: Option<f64>,
    /// Number of multistart attempts.
    pub budget: usize,
    pub seed: u64,
    /// The dual search ball is `||U(theta)|| <= pi (1 + margin)`.
    pub theta_margin: f64,
    /// Iteration cap of the local refinement per start.
    pub max_iters: usize,
}

impl Default for ShootOpts {
    fn default() -> Self {
        ShootOpts {
            eps: None,
            budget: 2000,
            seed: 42,
            theta_margin: 0.5,
            max_iters: 40,
        }
    }
}

/// Result of a shooting run: the shortest verified geodesic length found.
#[derive(Debug, Clone)]
pub struct ShootingResult {
    /// Minimum `|zeta|^2` over the hits; `None` without a certificate.
    pub best_dsq: Option<f64>,
    /// Hits as (covector, endpoint residual), sorted by length.
    pub hit_covectors: Vec<(Covector, f64)>,
    pub attempts: usize,
    pub eps: f64,
}

/// Multistart local minimization of the endpoint mismatch
/// `|exp(zeta, 2 theta) - g|^2`; every converged start with residual below
/// `eps` certifies an upper bound `|zeta|^2` for the squared distance.
pub fn shoot_distance(g: &StepTwoGroup, target: &GroupElement, opts: &ShootOpts) -> Result<ShootingResult> {
    if target.is_origin(1e-300) {
        return Err(GeoError::Precondition("shoot_distance requires g != o".into()));
    }
    let q = g.q();
    let m = g.m();
    let eps = opts.eps.unwrap_or(1e-6 * (1.0 + target.norm()));

    // search bounds: |zeta| from the straight-line and vertical-axis scales,
    // ||U(theta)|| within the reference ball plus the configured margin
    let zeta_bound = 2.0 * (target.x.norm() + (4.0 * PI * target.t.norm()).sqrt()) + 1.0;
    let theta_bound = PI * (1.0 + opts.theta_margin);
    let unit_norms: Vec<f64> = (0..m)
        .map(|i| {
            let mut e = DVector::zeros(m);
            e[i] = 1.0;
            g.op_norm(&e).unwrap_or(1.0).max(1e-12)
        })
        .collect();

    let residual = |v: &DVector<f64>| -> DVector<f64> {
        let c = Covector::new(v.rows(0, q).into_owned(), v.rows(q, m).into_owned());
        match geodesics::exp_map(g, &c, 1.0) {
            Ok(e) => {
                let mut r = DVector::zeros(q + m);
                r.rows_mut(0, q).copy_from(&(&e.x - &target.x));
                r.rows_mut(q, m).copy_from(&(&e.t - &target.t));
                r
            }
            Err(_) => DVector::from_element(q + m, f64::INFINITY),
        }
    };
    let project = |v: &mut DVector<f64>| {
        let zn = v.rows(0, q).norm();
        if zn > zeta_bound {
            let f = zeta_bound / zn;
            for i in 0..q {
                v[i] *= f;
            }
        }
        let th = v.rows(q, m).into_owned();
        if let Ok(on) = g.op_norm(&th) {
            if on > theta_bound {
                let f = theta_bound / on;
                for i in 0..m {
                    v[q + i] *= f;
                }
            }
        }
    };

    let make_start = |k: usize| -> DVector<f64> {
        let mut v = DVector::<f64>::zeros(q + m);
        if k == 0 {
            // straight-chord start catches first-layer targets immediately
            v.rows_mut(0, q).copy_from(&target.x);
            return v;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64).wrapping_mul(0x9E3779B97F4A7C15));
        // zeta uniform-ish in the ball
        let radius = zeta_bound * rng.random::<f64>().powf(1.0 / q as f64);
        let mut zeta = DVector::<f64>::from_fn(q, |_, _| normal_sample(&mut rng));
        let zn = zeta.norm().max(1e-12);
        zeta *= radius / zn;
        v.rows_mut(0, q).copy_from(&zeta);
        // theta direction scaled into the dual ball
        let mut dir = DVector::<f64>::from_fn(m, |_, _| normal_sample(&mut rng));
        let mut per_unit = 0.0;
        for i in 0..m {
            per_unit += (dir[i] * unit_norms[i]).abs();
        }
        let cap = theta_bound / per_unit.max(1e-12);
        dir *= cap * rng.random::<f64>().powf(1.0 / m as f64);
        v.rows_mut(q, m).copy_from(&dir);
        project(&mut v);
        v
    };

    let hits: Vec<(usize, Covector, f64)> = (0..opts.budget)
        .into_par_iter()
        .filter_map(|k| {
            let start = make_start(k);
            let res = crate::numerics::levenberg_marquardt(
                &residual,
                &project,
                start,
                opts.max_iters,
                (0.09 * eps * eps).min(1e-18),
            );
            let rn = res.cost.sqrt();
            if rn <= eps {
                let c = Covector::new(res.x.rows(0, q).into_owned(), res.x.rows(q, m).into_owned());
                Some((k, c, rn))
            } else {
                None
            }
        })
        .collect();

    let mut hit_covectors: Vec<(Covector, f64)> = hits.into_iter().map(|(_, c, r)| (c, r)).collect();
    hit_covectors.sort_by(|a, b| a.0.zeta.norm_squared().total_cmp(&b.0.zeta.norm_squared()));
    hit_covectors.truncate(64);
    let best_dsq = hit_covectors.first().map(|(c, _)| c.zeta.norm_squared());
    Ok(ShootingResult {
        best_dsq,
        hit_covectors,
        attempts: opts.budget,
        eps,
    })
}

fn normal_sample(rng: &mut impl Rng) -> f64 {
    // Box-Muller on two uniform draws
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Maximum deviation between the closed-form exponential map and the RK4
/// integration of the Hamiltonian system over random covectors.
pub fn verify_exp_consistency(g: &StepTwoGroup, samples: usize, steps: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let c = Covector::new(
            DVector::from_fn(g.q(), |_, _| rng.random::<f64>() * 2.0 - 1.0),
            DVector::from_fn(g.m(), |_, _| (rng.random::<f64>() * 2.0 - 1.0) * 1.5),
        );
        let s = 0.25 + rng.random::<f64>();
        let a = geodesics::exp_map(g, &c, s)?;
        let b = geodesics::exp_map_ode(g, &c, s, steps)?;
        worst = worst.max((&a.x - &b.x).amax().max((&a.t - &b.t).amax()));
    }
    Ok(worst)
}
