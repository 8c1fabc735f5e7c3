//! Exact distance, classification, exponential map and boundary shortest
//! geodesic enumeration on step-two groups built from quadratic CR data.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{GeoError, Result};
use crate::geodesics::{self, Covector};
use crate::group::{FamilyTag, GroupElement, StepTwoGroup};
use crate::refopt::{Classification, PhiEval};
use crate::special::{self, PI};

/// Complex moduli of the first-layer coordinates: `z_k = x_{2k} + i x_{2k+1}`.
pub fn complex_parts(x: &DVector<f64>) -> Vec<Complex64> {
    (0..x.len() / 2)
        .map(|k| Complex64::new(x[2 * k], x[2 * k + 1]))
        .collect()
}

/// Analytic gradient and Hessian of the reference function:
/// `grad = 4t - sum_j mu(a_j.tau) |z_j|^2 a_j`, `Hess = -A Lambda A^T`.
pub fn phi_gradient_hessian(
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    t: &DVector<f64>,
    tau: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let (m, n) = (a.nrows(), a.ncols());
    let mut grad = t * 4.0;
    let mut hess = DMatrix::<f64>::zeros(m, m);
    for j in 0..n {
        let alpha = a.column(j).dot(tau);
        let zsq = x[2 * j] * x[2 * j] + x[2 * j + 1] * x[2 * j + 1];
        let col = a.column(j).into_owned();
        grad -= &col * (special::mu(alpha) * zsq);
        hess -= &col * col.transpose() * (special::mu_prime(alpha) * zsq);
    }
    (grad, hess)
}

/// Analytic evaluation of `phi` with the boundary extension that drops a
/// degenerate frequency only when the matching coordinate carries no mass.
pub fn cr_phi(a: &DMatrix<f64>, x: &DVector<f64>, t: &DVector<f64>, tau: &DVector<f64>) -> Result<PhiEval> {
    let n = a.ncols();
    let mut value = 4.0 * t.dot(tau);
    let mut on_boundary = false;
    let znorm = x.norm();
    for j in 0..n {
        let alpha = a.column(j).dot(tau);
        if alpha.abs() > PI + 1e-12 {
            return Err(GeoError::OutsideDomain { op_norm: alpha.abs() });
        }
        let zsq = x[2 * j] * x[2 * j] + x[2 * j + 1] * x[2 * j + 1];
        if alpha.abs() >= PI - 1e-9 {
            on_boundary = true;
            if zsq.sqrt() > 1e-10 * znorm.max(1e-300) {
                return Ok(PhiEval {
                    value: f64::NEG_INFINITY,
                    gradient: None,
                    hessian: None,
                    on_boundary: true,
                });
            }
        } else {
            value += zsq * special::scot(alpha);
        }
    }
    let (gradient, hessian) = if on_boundary {
        (None, None)
    } else {
        let (g, h) = phi_gradient_hessian(a, x, t, tau);
        (Some(g), Some(h))
    };
    Ok(PhiEval {
        value,
        gradient,
        hessian,
        on_boundary,
    })
}

/// Closed-form exponential map `exp(s (p, 2 theta))` on CR groups.
pub fn cr_exp(g: &StepTwoGroup, c: &Covector, s: f64) -> Result<GroupElement> {
    match g.family() {
        FamilyTag::Cr(_) | FamilyTag::Heisenberg => geodesics::exp_map(g, c, s),
        _ => Err(GeoError::UnsupportedFamily {
            op: "cr_exp",
            family: g.family().name().to_string(),
        }),
    }
}

/// Outcome of the CR distance computation.
#[derive(Debug, Clone)]
pub struct CrDist {
    pub dsq: f64,
    pub theta: Option<DVector<f64>>,
    pub classification: Classification,
    pub boundary_maximizer: Option<DVector<f64>>,
}

/// Squared distance with maximizer classification: interior Newton backed by
/// concavity, otherwise the boundary supremum over the polytope.
pub fn cr_classify_dist(g: &StepTwoGroup, point: &GroupElement) -> Result<CrDist> {
    let a = cr_matrix(g)?;
    let (m, n) = (a.nrows(), a.ncols());
    if point.is_origin(1e-300) {
        return Ok(CrDist {
            dsq: 0.0,
            theta: None,
            classification: Classification::Origin,
            boundary_maximizer: None,
        });
    }

    // span condition over the coordinates carrying mass
    let znorm = point.x.norm();
    let active: Vec<usize> = (0..n)
        .filter(|&j| {
            (point.x[2 * j] * point.x[2 * j] + point.x[2 * j + 1] * point.x[2 * j + 1]).sqrt()
                > 1e-12 * (1.0 + znorm)
        })
        .collect();
    let span_full = if active.is_empty() {
        false
    } else {
        let sub = DMatrix::<f64>::from_fn(m, active.len(), |i, c| a[(i, active[c])]);
        let svd = sub.svd(false, false);
        let smax = svd.singular_values.max();
        svd.singular_values.iter().filter(|s| **s > 1e-10 * smax.max(1.0)).count() == m
    };

    // interior Newton ascent on the concave reference function from the origin
    let eval = |tau: &DVector<f64>| {
        let mut value = 4.0 * point.t.dot(tau);
        for j in 0..n {
            let alpha = a.column(j).dot(tau);
            let zsq = point.x[2 * j] * point.x[2 * j] + point.x[2 * j + 1] * point.x[2 * j + 1];
            value += zsq * special::scot(alpha);
        }
        let (g, h) = phi_gradient_hessian(&a, &point.x, &point.t, tau);
        (value, g, h)
    };
    let project = |tau: &mut DVector<f64>| {
        let on = a
            .column_iter()
            .map(|c| c.dot(tau).abs())
            .fold(0.0f64, f64::max);
        if on >= PI * (1.0 - 1e-12) {
            *tau *= PI * (1.0 - 1e-11) / on;
        }
    };
    let tol = 1e-11 * (1.0 + 4.0 * point.t.norm());
    if let Ok(theta) = crate::numerics::concave_newton_max(eval, project, DVector::zeros(m), tol, 400) {
        let on = a
            .column_iter()
            .map(|c| c.dot(&theta).abs())
            .fold(0.0f64, f64::max);
        if on < PI * (1.0 - 1e-6) {
            let mut dsq = 0.0;
            for j in 0..n {
                let alpha = a.column(j).dot(&theta);
                let zsq = point.x[2 * j] * point.x[2 * j] + point.x[2 * j + 1] * point.x[2 * j + 1];
                let r = if alpha.abs() < 1e-150 { 1.0 } else { alpha / alpha.sin() };
                dsq += r * r * zsq;
            }
            let classification = if span_full {
                Classification::InteriorNondegenerate
            } else {
                Classification::InteriorDegenerate
            };
            return Ok(CrDist {
                dsq,
                theta: Some(theta),
                classification,
                boundary_maximizer: None,
            });
        }
    }

    // boundary supremum over the polytope
    let theta_bd = boundary_maximizer(&a, point)?;
    let val = cr_phi(&a, &point.x, &point.t, &theta_bd)?.value;
    if !val.is_finite() {
        return Err(GeoError::SolverFailure {
            what: "cr boundary maximizer evaluation",
            residual: f64::INFINITY,
        });
    }
    Ok(CrDist {
        dsq: val,
        theta: None,
        classification: Classification::BoundaryMaximizer,
        boundary_maximizer: Some(theta_bd),
    })
}

/// Locates the boundary maximizer of `phi(g; .)` on the polytope
/// `{|a_j . tau| <= pi}`: exact vertex enumeration whenever practical,
/// refined by an interior-point path with the analytic gradient.
fn boundary_maximizer(a: &DMatrix<f64>, point: &GroupElement) -> Result<DVector<f64>> {
    let (m, n) = (a.nrows(), a.ncols());
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |tau: DVector<f64>, val: f64| {
        if val.is_finite() {
            match &best {
                Some((bv, _)) if *bv >= val => {}
                _ => best = Some((val, tau)),
            }
        }
    };

    // vertex enumeration for small systems
    if n <= 14 && m <= 4 {
        let combos = combinations(n, m);
        for combo in combos {
            let mut signs = vec![1.0f64; m];
            loop {
                // rows: a_{combo_r} . tau = signs_r * pi
                let sys = DMatrix::<f64>::from_fn(m, m, |r, c| a[(c, combo[r])]);
                let rhs = DVector::<f64>::from_fn(m, |r, _| signs[r] * PI);
                if let Some(tau) = sys.lu().solve(&rhs) {
                    let feas = a
                        .column_iter()
                        .all(|col| col.dot(&tau).abs() <= PI + 1e-9);
                    if feas {
                        if let Ok(ev) = cr_phi(a, &point.x, &point.t, &tau) {
                            consider(tau, ev.value);
                        }
                    }
                }
                // next sign pattern
                let mut k = 0;
                while k < m {
                    if signs[k] > 0.0 {
                        signs[k] = -1.0;
                        break;
                    }
                    signs[k] = 1.0;
                    k += 1;
                }
                if k == m {
                    break;
                }
            }
        }
    }

    // interior-point path with log barriers on all faces
    let mut tau = DVector::<f64>::zeros(m);
    let mut mu = 1e-1;
    while mu >= 1e-11 {
        for _ in 0..80 {
            let (mut grad, _) = phi_gradient_hessian(a, &point.x, &point.t, &tau);
            let mut ok = true;
            for j in 0..n {
                let alpha = a.column(j).dot(&tau);
                let gap = PI * PI - alpha * alpha;
                if gap <= 0.0 {
                    ok = false;
                    break;
                }
                grad -= a.column(j) * (2.0 * alpha * mu / gap);
            }
            if !ok {
                tau *= 0.5;
                continue;
            }
            let gn = grad.norm();
            if gn < 1e-13 {
                break;
            }
            let fval = |th: &DVector<f64>| -> f64 {
                let mut v = 4.0 * point.t.dot(th);
                for j in 0..n {
                    let alpha = a.column(j).dot(th);
                    if alpha.abs() >= PI {
                        return f64::NEG_INFINITY;
                    }
                    let zsq = point.x[2 * j] * point.x[2 * j] + point.x[2 * j + 1] * point.x[2 * j + 1];
                    v += zsq * special::scot(alpha);
                    v += mu * (PI * PI - alpha * alpha).ln();
                }
                v
            };
            let cur = fval(&tau);
            let mut alpha_step = 1.0 / (1.0 + gn);
            let mut moved = false;
            for _ in 0..50 {
                let cand = &tau + &grad * alpha_step;
                if fval(&cand) > cur {
                    tau = cand;
                    moved = true;
                    break;
                }
                alpha_step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        mu *= 0.1;
    }
    // project the path limit onto its active face
    let active: Vec<(usize, f64)> = (0..n)
        .filter_map(|j| {
            let alpha = a.column(j).dot(&tau);
            if PI - alpha.abs() < 1e-5 {
                Some((j, alpha.signum()))
            } else {
                None
            }
        })
        .collect();
    if !active.is_empty() {
        let rows = DMatrix::<f64>::from_fn(active.len(), m, |r, c| a[(c, active[r].0)]);
        let rhs = DVector::<f64>::from_fn(active.len(), |r, _| active[r].1 * PI - a.column(active[r].0).dot(&tau));
        if let Ok(delta) = rows.svd(true, true).solve(&rhs, 1e-12) {
            let cand = &tau + delta;
            if a.column_iter().all(|col| col.dot(&cand).abs() <= PI + 1e-9) {
                if let Ok(ev) = cr_phi(a, &point.x, &point.t, &cand) {
                    consider(cand, ev.value);
                }
            }
        }
    }
    if let Ok(ev) = cr_phi(a, &point.x, &point.t, &tau) {
        consider(tau, ev.value);
    }

    match best {
        Some((_, tau)) => Ok(tau),
        None => Err(GeoError::SolverFailure {
            what: "cr boundary maximizer",
            residual: f64::INFINITY,
        }),
    }
}

fn combinations(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, m, cur, out);
            cur.pop();
        }
    }
    rec(0, n, m, &mut cur, &mut out);
    out
}

/// The affine family of shortest geodesics attached to a boundary maximizer:
/// interior components are pinned, the moduli on the degenerate set solve a
/// nonnegative feasibility system and the phases are free.
#[derive(Debug, Clone)]
pub struct CrShortestFamily {
    pub theta: DVector<f64>,
    /// Pinned components `p_j` for frequencies strictly inside.
    pub interior: Vec<(usize, Complex64)>,
    /// Indices on the degenerate faces.
    pub boundary_set: Vec<usize>,
    /// One nonnegative solution of the moduli system, `|p_j|^2` for `j` in
    /// `boundary_set`.
    pub moduli_sq: Vec<f64>,
    /// Kernel directions of the moduli system (solution set is affine).
    pub nullspace: Vec<DVector<f64>>,
    /// Number of free phase parameters.
    pub phase_count: usize,
    pub dsq: f64,
}

impl CrShortestFamily {
    /// A concrete covector with the given phases (defaults to zero phases).
    pub fn covector(&self, q: usize, phases: &[f64]) -> Covector {
        let mut zeta = DVector::<f64>::zeros(q);
        for (j, p) in &self.interior {
            zeta[2 * j] = p.re;
            zeta[2 * j + 1] = p.im;
        }
        for (c, &j) in self.boundary_set.iter().enumerate() {
            let phase = phases.get(c).copied().unwrap_or(0.0);
            let p = Complex64::from_polar(self.moduli_sq[c].max(0.0).sqrt(), phase);
            zeta[2 * j] = p.re;
            zeta[2 * j + 1] = p.im;
        }
        Covector::new(zeta, self.theta.clone())
    }
}

/// Enumerates the shortest geodesics from the origin to a point whose
/// reference supremum is attained only on the boundary.
pub fn cr_boundary_shortest(
    g: &StepTwoGroup,
    point: &GroupElement,
    theta_bd: &DVector<f64>,
) -> Result<CrShortestFamily> {
    let a = cr_matrix(g)?;
    let (m, n) = (a.nrows(), a.ncols());
    let z = complex_parts(&point.x);
    let znorm = point.x.norm();

    let mut boundary_set = Vec::new();
    let mut interior = Vec::new();
    for j in 0..n {
        let alpha = a.column(j).dot(theta_bd);
        if alpha.abs() > PI + 1e-9 {
            return Err(GeoError::Precondition(format!(
                "theta_bd violates the admissible polytope on frequency {j}"
            )));
        }
        if alpha.abs() >= PI - 1e-9 {
            if z[j].norm() > 1e-8 * (1.0 + znorm) {
                return Err(GeoError::Precondition(format!(
                    "coordinate {j} carries mass on a degenerate frequency; theta_bd is not a maximizer"
                )));
            }
            boundary_set.push(j);
        } else {
            // p_j = (alpha/sin alpha) e^{i alpha} z_j
            let r = if alpha.abs() < 1e-150 { 1.0 } else { alpha / alpha.sin() };
            let p = Complex64::from_polar(1.0, alpha) * z[j] * r;
            interior.push((j, p));
        }
    }
    if boundary_set.is_empty() {
        return Err(GeoError::Precondition(
            "theta_bd has no degenerate frequency; the point is not a boundary case".into(),
        ));
    }

    // moduli system: sum_{j in J} y_j a_j / alpha_j = 4 t - sum_{j not in J} mu(alpha_j) |z_j|^2 a_j
    let mut rhs = &point.t * 4.0;
    for &(j, _) in &interior {
        let alpha = a.column(j).dot(theta_bd);
        rhs -= a.column(j) * (special::mu(alpha) * z[j].norm_sqr());
    }
    let mat = DMatrix::<f64>::from_fn(m, boundary_set.len(), |i, c| {
        let j = boundary_set[c];
        let alpha = a.column(j).dot(theta_bd);
        a[(i, j)] / alpha
    });
    let (y, resid) = crate::numerics::nnls(&mat, &rhs);
    if resid > 1e-9 * (1.0 + rhs.norm()) {
        return Err(GeoError::SolverFailure {
            what: "cr boundary feasibility system",
            residual: resid,
        });
    }

    // nullspace of the moduli system
    let gram = mat.transpose() * &mat;
    let eig = gram.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let mut nullspace = Vec::new();
    for i in 0..boundary_set.len() {
        if eig.eigenvalues[i].max(0.0) <= 1e-18 * lmax {
            nullspace.push(eig.eigenvectors.column(i).into_owned());
        }
    }

    let dsq = interior.iter().map(|(_, p)| p.norm_sqr()).sum::<f64>() + y.iter().sum::<f64>();
    let family = CrShortestFamily {
        theta: theta_bd.clone(),
        interior,
        boundary_set: boundary_set.clone(),
        moduli_sq: y.iter().cloned().collect(),
        nullspace,
        phase_count: boundary_set.len(),
        dsq,
    };

    // verify: |p|^2 equals the boundary value of phi and the endpoint matches
    let val = cr_phi(&a, &point.x, &point.t, theta_bd)?.value;
    if (dsq - val).abs() > 1e-8 * (1.0 + val.abs()) {
        return Err(GeoError::Consistency {
            what: "cr_boundary_shortest |p|^2 vs phi",
            residual: (dsq - val).abs(),
        });
    }
    let cov = family.covector(g.q(), &[]);
    let e = geodesics::exp_map(g, &cov, 1.0)?;
    let resid = (&e.x - &point.x).amax().max((&e.t - &point.t).amax());
    if resid > 1e-8 * (1.0 + point.norm()) {
        return Err(GeoError::Consistency {
            what: "cr_boundary_shortest endpoint",
            residual: resid,
        });
    }
    Ok(family)
}

fn cr_matrix(g: &StepTwoGroup) -> Result<DMatrix<f64>> {
    match g.family() {
        FamilyTag::Cr(a) => Ok(a.clone()),
        FamilyTag::Heisenberg => Ok(DMatrix::<f64>::from_element(1, g.q() / 2, 1.0)),
        _ => Err(GeoError::UnsupportedFamily {
            op: "cr operation",
            family: g.family().name().to_string(),
        }),
    }
}

/// The concrete group of the divergence counterexample:
/// columns `(1,0), (1,1), (1,-1)`.
pub fn p5_group() -> StepTwoGroup {
    StepTwoGroup::cr(&DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 0.0, 1.0, -1.0])).unwrap()
}

/// The group separating the abnormal set from its shortest subset:
/// columns `(1/2,0), (1,1), (1,-1)`.
pub fn p6_group() -> StepTwoGroup {
    StepTwoGroup::cr(&DMatrix::from_row_slice(2, 3, &[0.5, 1.0, 1.0, 0.0, 1.0, -1.0])).unwrap()
}
