//! The reference function `phi(g; theta) = <U(theta) cot U(theta) x, x> + 4 t.theta`,
//! its concave maximization over the admissible set, covector recovery and the
//! semiconcavity probe.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{GeoError, Result};
use crate::geodesics::{self, Covector};
use crate::group::{FamilyTag, GmStatus, GroupElement, StepTwoGroup};
use crate::special::{self, PI};
use crate::spectral;

/// Tolerance band around `||U(theta)|| = pi` treated as the boundary.
const BOUNDARY_BAND: f64 = 1e-9;
/// Relative threshold for the vanishing top-eigenspace projection `|Q(theta) x|`.
const BOUNDARY_PROJECTION_TOL: f64 = 1e-8;
/// Degenerate-Hessian threshold scale for the maximizer classification.
const DEGENERACY_TOL: f64 = 1e-8;

/// Evaluation of the reference function at one dual point.
#[derive(Debug, Clone)]
pub struct PhiEval {
    /// `f64::NEG_INFINITY` encodes the divergent boundary case.
    pub value: f64,
    pub gradient: Option<DVector<f64>>,
    pub hessian: Option<DMatrix<f64>>,
    pub on_boundary: bool,
}

/// Structure of the maximizer of `phi(g; .)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    /// Nondegenerate interior maximizer (the open dense smooth set).
    #[serde(rename = "M")]
    InteriorNondegenerate,
    /// Degenerate interior maximizer (shortest abnormal territory).
    #[serde(rename = "M2tilde")]
    InteriorDegenerate,
    /// The supremum is attained only on the boundary of the admissible set.
    #[serde(rename = "boundary")]
    BoundaryMaximizer,
    #[serde(rename = "origin")]
    Origin,
}

/// Result of the concave maximization.
#[derive(Debug, Clone)]
pub struct DistanceReport {
    pub dsq: f64,
    pub maximizer: DVector<f64>,
    pub classification: Classification,
    pub covector: Option<Covector>,
    pub converged: bool,
    /// Set when the value is only a certified lower bound for the squared
    /// distance (boundary supremum on a group without the density property).
    pub lower_bound_only: bool,
}

/// Membership in the open set `{theta : ||U(theta)|| < pi}`.
pub fn omega_star_contains(g: &StepTwoGroup, theta: &DVector<f64>) -> Result<bool> {
    g.omega_star_contains(theta)
}

/// Evaluates `phi(g; theta)`; on the boundary the extension keeps only the
/// eigenspaces below `pi` and requires the top projection of `x` to vanish.
pub fn phi(g: &StepTwoGroup, point: &GroupElement, theta: &DVector<f64>, want_derivatives: bool) -> Result<PhiEval> {
    let spec = spectral::spectrum(g.utuple(), theta)?;
    let opn = spec.op_norm();
    if opn > PI + 1e-12 {
        return Err(GeoError::OutsideDomain { op_norm: opn });
    }
    let linear = 4.0 * point.t.dot(theta);
    let on_boundary = opn >= PI - BOUNDARY_BAND;
    let value = if on_boundary {
        let mut q_norm_sq = 0.0;
        let mut val = linear;
        for (l, p) in spec.projections.iter().enumerate() {
            let lam = spec.lambda(l);
            let contrib = (p * &point.x).norm_squared();
            if lam >= PI - BOUNDARY_BAND {
                q_norm_sq += contrib;
            } else {
                val += special::scot(lam) * contrib;
            }
        }
        if q_norm_sq.sqrt() <= BOUNDARY_PROJECTION_TOL * point.x.norm().max(1e-300) {
            val
        } else {
            f64::NEG_INFINITY
        }
    } else {
        spec.quadratic_form(special::scot, &point.x) + linear
    };

    let mut eval = PhiEval {
        value,
        gradient: None,
        hessian: None,
        on_boundary,
    };
    if want_derivatives && !on_boundary && value.is_finite() {
        let (grad, hess) = phi_derivatives(g, point, theta, opn)?;
        eval.gradient = grad;
        eval.hessian = hess;
    }
    Ok(eval)
}

/// Analytic gradients for the closed-form families, finite differences
/// otherwise. Returns `None` when the point is too close to the boundary for
/// a stable stencil.
fn phi_derivatives(
    g: &StepTwoGroup,
    point: &GroupElement,
    theta: &DVector<f64>,
    opn: f64,
) -> Result<(Option<DVector<f64>>, Option<DMatrix<f64>>)> {
    match g.family() {
        FamilyTag::Cr(a) => {
            let (grad, hess) = crate::cr::phi_gradient_hessian(a, &point.x, &point.t, theta);
            Ok((Some(grad), Some(hess)))
        }
        FamilyTag::Heisenberg => {
            let ones = DMatrix::<f64>::from_element(1, g.q() / 2, 1.0);
            let (grad, hess) = crate::cr::phi_gradient_hessian(&ones, &point.x, &point.t, theta);
            Ok((Some(grad), Some(hess)))
        }
        FamilyTag::Ktype(b) => {
            let grad = crate::ktype::phi_gradient(b, &point.x, &point.t, theta);
            let hess = crate::ktype::phi_hessian(b, &point.x, theta);
            Ok((Some(grad), Some(hess)))
        }
        FamilyTag::N32 => {
            let grad = crate::n32::phi_gradient(&point.x, &point.t, theta);
            let hess = fd_hessian_of_gradient(|th| crate::n32::phi_gradient(&point.x, &point.t, th), theta);
            Ok((Some(grad), Some(hess)))
        }
        _ => fd_derivatives(g, point, theta, opn),
    }
}

fn fd_hessian_of_gradient(
    grad_fn: impl Fn(&DVector<f64>) -> DVector<f64>,
    theta: &DVector<f64>,
) -> DMatrix<f64> {
    let m = theta.len();
    let mut hess = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let hj = 1e-6 * (1.0 + theta[j].abs());
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[j] += hj;
        tm[j] -= hj;
        let col = (grad_fn(&tp) - grad_fn(&tm)) / (2.0 * hj);
        hess.set_column(j, &col);
    }
    // symmetrize
    let ht = hess.transpose();
    (hess + ht) * 0.5
}

/// Central finite differences with the step shrunk near the boundary.
fn fd_derivatives(
    g: &StepTwoGroup,
    point: &GroupElement,
    theta: &DVector<f64>,
    opn: f64,
) -> Result<(Option<DVector<f64>>, Option<DMatrix<f64>>)> {
    let m = g.m();
    let mut h = 1e-5 * (1.0 + theta.norm());
    // keep every stencil point strictly inside
    let mut unit_norms = Vec::with_capacity(m);
    for i in 0..m {
        let mut e = DVector::zeros(m);
        e[i] = 1.0;
        unit_norms.push(g.op_norm(&e)?.max(1e-300));
    }
    let max_unit = unit_norms.iter().cloned().fold(0.0f64, f64::max);
    let margin = PI - 2.0 * BOUNDARY_BAND - opn;
    if margin <= 0.0 {
        return Ok((None, None));
    }
    if 2.5 * h * max_unit > margin {
        h = margin / (2.5 * max_unit);
    }
    if h < 1e-10 {
        return Ok((None, None));
    }

    let val_at = |th: &DVector<f64>| -> Result<f64> {
        let spec = spectral::spectrum(g.utuple(), th)?;
        Ok(spec.quadratic_form(special::scot, &point.x) + 4.0 * point.t.dot(th))
    };

    let mut grad = DVector::<f64>::zeros(m);
    for i in 0..m {
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[i] += h;
        tm[i] -= h;
        grad[i] = (val_at(&tp)? - val_at(&tm)?) / (2.0 * h);
    }
    let f0 = val_at(theta)?;
    let mut hess = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            if i == j {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[i] += h;
                tm[i] -= h;
                hess[(i, i)] = (val_at(&tp)? - 2.0 * f0 + val_at(&tm)?) / (h * h);
            } else {
                let mut tpp = theta.clone();
                let mut tpm = theta.clone();
                let mut tmp = theta.clone();
                let mut tmm = theta.clone();
                tpp[i] += h;
                tpp[j] += h;
                tpm[i] += h;
                tpm[j] -= h;
                tmp[i] -= h;
                tmp[j] += h;
                tmm[i] -= h;
                tmm[j] -= h;
                let v = (val_at(&tpp)? - val_at(&tpm)? - val_at(&tmp)? + val_at(&tmm)?) / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
    }
    Ok((Some(grad), Some(hess)))
}

enum AscentEnd {
    Interior(DVector<f64>, f64),
    Boundary(DVector<f64>, f64),
}

/// Concave maximization of `phi(g; .)` over the admissible set with a fixed
/// deterministic multistart; local maxima are global by concavity.
pub fn maximize_phi(g: &StepTwoGroup, point: &GroupElement) -> Result<DistanceReport> {
    let m = g.m();
    if point.is_origin(1e-300) {
        return Ok(DistanceReport {
            dsq: 0.0,
            maximizer: DVector::zeros(m),
            classification: Classification::Origin,
            covector: Some(Covector::new(DVector::zeros(g.q()), DVector::zeros(m))),
            converged: true,
            lower_bound_only: false,
        });
    }

    // deterministic multistart: the origin plus scaled coordinate directions
    let mut starts = vec![DVector::<f64>::zeros(m)];
    for i in 0..m {
        let mut e = DVector::<f64>::zeros(m);
        e[i] = 1.0;
        let on = g.op_norm(&e)?.max(1e-300);
        starts.push(&e * (0.5 * PI / on));
        starts.push(&e * (-0.5 * PI / on));
    }

    let mut best: Option<(AscentEnd, f64)> = None;
    for s in starts {
        let end = ascend(g, point, s)?;
        let val = match &end {
            AscentEnd::Interior(_, v) | AscentEnd::Boundary(_, v) => *v,
        };
        let replace = match &best {
            None => true,
            Some((prev, pv)) => {
                if val > *pv + 1e-12 * (1.0 + pv.abs()) {
                    true
                } else if (val - *pv).abs() <= 1e-12 * (1.0 + pv.abs()) {
                    // deterministic tie-break: smallest norm, then lexicographic
                    let tnew = match &end {
                        AscentEnd::Interior(t, _) | AscentEnd::Boundary(t, _) => t,
                    };
                    let told = match prev {
                        AscentEnd::Interior(t, _) | AscentEnd::Boundary(t, _) => t,
                    };
                    let (nn, no) = (tnew.norm(), told.norm());
                    if nn < no - 1e-12 {
                        true
                    } else if nn > no + 1e-12 {
                        false
                    } else {
                        lex_less(tnew, told)
                    }
                } else {
                    false
                }
            }
        };
        if replace {
            best = Some((end, val));
        }
    }
    let (end, _) = best.expect("at least one start");

    match end {
        AscentEnd::Interior(theta, val) => {
            let ev = phi(g, point, &theta, true)?;
            let classification = classify_interior(point, ev.hessian.as_ref());
            let covector = recover_covector(g, point, &theta).ok();
            Ok(DistanceReport {
                dsq: val.max(point.x.norm_squared()),
                maximizer: theta,
                classification,
                covector,
                converged: true,
                lower_bound_only: false,
            })
        }
        AscentEnd::Boundary(theta, mut val) => {
            // project onto the boundary and try the extension there
            let on = g.op_norm(&theta)?;
            let theta_bd = if on > 0.0 { &theta * (PI / on) } else { theta.clone() };
            if let Ok(ev) = phi(g, point, &theta_bd, false) {
                if ev.value.is_finite() {
                    val = val.max(ev.value);
                }
            }
            Ok(DistanceReport {
                dsq: val.max(point.x.norm_squared()),
                maximizer: theta_bd,
                classification: Classification::BoundaryMaximizer,
                covector: None,
                converged: true,
                lower_bound_only: g.gm_status() != GmStatus::CertifiedGm,
            })
        }
    }
}

fn lex_less(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for i in 0..a.len() {
        if a[i] < b[i] - 1e-15 {
            return true;
        }
        if a[i] > b[i] + 1e-15 {
            return false;
        }
    }
    false
}

fn classify_interior(point: &GroupElement, hessian: Option<&DMatrix<f64>>) -> Classification {
    let scale = 1.0 + point.x.norm_squared();
    match hessian {
        Some(h) => {
            let eig = h.clone().symmetric_eigen();
            let top = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if top <= -DEGENERACY_TOL * scale {
                Classification::InteriorNondegenerate
            } else {
                Classification::InteriorDegenerate
            }
        }
        None => Classification::InteriorDegenerate,
    }
}

fn ascend(g: &StepTwoGroup, point: &GroupElement, start: DVector<f64>) -> Result<AscentEnd> {
    let mut theta = start;
    // pull the start strictly inside
    let on0 = g.op_norm(&theta)?;
    if on0 > 0.9 * PI {
        theta *= 0.9 * PI / on0;
    }
    let mut val = phi(g, point, &theta, false)?.value;
    let mut boundary_hits = 0usize;

    for _ in 0..150 {
        let ev = phi(g, point, &theta, true)?;
        val = ev.value;
        let Some(grad) = ev.gradient else {
            return barrier_phase(g, point, theta, val);
        };
        let gn = grad.norm();
        if gn <= 1e-10 * (1.0 + val.abs()) {
            return Ok(AscentEnd::Interior(theta, val));
        }
        // Newton direction on the concave model, gradient fallback
        let mut dir = grad.clone();
        if let Some(h) = ev.hessian.as_ref() {
            let m = h.nrows();
            let mut a = -h.clone();
            let reg = 1e-12 * (1.0 + a.diagonal().amax());
            for d in 0..m {
                a[(d, d)] += reg;
            }
            if let Some(ch) = a.cholesky() {
                let nd = ch.solve(&grad);
                if nd.dot(&grad) > 1e-14 * nd.norm() * gn {
                    dir = nd;
                }
            }
        }

        let mut alpha = 1.0f64;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &theta + &dir * alpha;
            let on = g.op_norm(&cand)?;
            if on < PI - 1e-11 {
                let vc = phi(g, point, &cand, false)?.value;
                if vc > val + 1e-4 * alpha * grad.dot(&dir) || vc > val {
                    let near_boundary = on > PI * (1.0 - 1e-7);
                    theta = cand;
                    val = vc;
                    moved = true;
                    if near_boundary {
                        boundary_hits += 1;
                    } else {
                        boundary_hits = 0;
                    }
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !moved || boundary_hits >= 3 {
            // value-granularity stall in the interior: polish on the gradient
            if !moved {
                if let Some((tp, vp)) = interior_polish(g, point, &theta)? {
                    return Ok(AscentEnd::Interior(tp, vp));
                }
            }
            // blocked against the boundary or stagnant: switch phases
            let on = g.op_norm(&theta)?;
            if on > 0.5 * PI || !moved {
                return barrier_phase(g, point, theta, val);
            }
        }
    }
    if let Some((tp, vp)) = interior_polish(g, point, &theta)? {
        return Ok(AscentEnd::Interior(tp, vp));
    }
    barrier_phase(g, point, theta, val)
}

/// Damped Newton steps on the stationarity system, accepted on gradient-norm
/// decrease; rescues interior maximizers once value improvements fall below
/// floating-point granularity.
fn interior_polish(
    g: &StepTwoGroup,
    point: &GroupElement,
    theta: &DVector<f64>,
) -> Result<Option<(DVector<f64>, f64)>> {
    let ev = phi(g, point, theta, true)?;
    let (Some(mut grad), Some(mut hess)) = (ev.gradient, ev.hessian) else {
        return Ok(None);
    };
    let mut val = ev.value;
    if grad.norm() > 1e-2 * (1.0 + val.abs()) {
        return Ok(None);
    }
    let mut cur = theta.clone();
    let m = cur.len();
    let mut lambda = 1e-9;
    for _ in 0..60 {
        let gn = grad.norm();
        if gn <= 1e-10 * (1.0 + val.abs()) {
            return Ok(Some((cur, val)));
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = -&hess;
            for d in 0..m {
                a[(d, d)] += lambda * (1.0 + a[(d, d)].abs());
            }
            let Some(ch) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let cand = &cur + ch.solve(&grad);
            if g.op_norm(&cand)? >= PI * (1.0 - 1e-11) {
                lambda *= 10.0;
                continue;
            }
            let evc = phi(g, point, &cand, true)?;
            let (Some(cg), Some(chs)) = (evc.gradient, evc.hessian) else {
                lambda *= 10.0;
                continue;
            };
            if cg.norm() < gn {
                cur = cand;
                val = evc.value;
                grad = cg;
                hess = chs;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e13 {
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    if grad.norm() <= 1e-10 * (1.0 + val.abs()) {
        Ok(Some((cur, val)))
    } else {
        Ok(None)
    }
}

/// Log-barrier ascent used when the maximizing sequence escapes to the
/// boundary of the admissible set.
fn barrier_phase(
    g: &StepTwoGroup,
    point: &GroupElement,
    start: DVector<f64>,
    start_val: f64,
) -> Result<AscentEnd> {
    let mut theta = start;
    let on0 = g.op_norm(&theta)?;
    if on0 >= PI * (1.0 - 1e-9) {
        theta *= (PI * (1.0 - 1e-7)) / on0;
    }
    let mut best_val = start_val;
    let mut best_theta = theta.clone();

    let mut mu = 1e-2;
    while mu >= 1e-12 {
        for _ in 0..60 {
            let (on, on_grad) = spectral::op_norm_with_gradient(g.utuple(), &theta)?;
            let gap = PI - on;
            if gap <= 0.0 {
                theta *= (PI * (1.0 - 1e-9)) / on;
                continue;
            }
            let ev = phi(g, point, &theta, true)?;
            if ev.value > best_val {
                best_val = ev.value;
                best_theta = theta.clone();
            }
            let Some(grad) = ev.gradient else { break };
            let gmu = &grad - &on_grad * (mu / gap);
            let gn = gmu.norm();
            if gn <= 1e-12 * (1.0 + ev.value.abs()) {
                break;
            }
            let fmu = |th: &DVector<f64>| -> Result<f64> {
                let on = g.op_norm(th)?;
                if on >= PI {
                    return Ok(f64::NEG_INFINITY);
                }
                Ok(phi(g, point, th, false)?.value + mu * (PI - on).ln())
            };
            let cur = ev.value + mu * gap.ln();
            let mut alpha = (0.5 * gap / (gn * 1.0)).min(1.0);
            let mut moved = false;
            for _ in 0..50 {
                let cand = &theta + &gmu * alpha;
                let vc = fmu(&cand)?;
                if vc.is_finite() && vc > cur {
                    theta = cand;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }
        mu *= 0.1;
    }
    let final_val = phi(g, point, &theta, false)?.value;
    if final_val > best_val {
        best_val = final_val;
        best_theta = theta;
    }

    // a barrier run that settles in the interior is an interior maximizer
    let (on, _) = spectral::op_norm_with_gradient(g.utuple(), &best_theta)?;
    if on < PI * (1.0 - 1e-6) {
        if let Ok(ev) = phi(g, point, &best_theta, true) {
            if let Some(grad) = ev.gradient {
                if grad.norm() <= 1e-8 * (1.0 + ev.value.abs()) {
                    return Ok(AscentEnd::Interior(best_theta, best_val));
                }
            }
        }
    }
    Ok(AscentEnd::Boundary(best_theta, best_val))
}

/// Initial covector of the unique shortest geodesic attached to an interior
/// critical point: `zeta = (U(theta)/sin U(theta)) e^{-U~(theta)} x`.
pub fn recover_covector(g: &StepTwoGroup, point: &GroupElement, theta: &DVector<f64>) -> Result<Covector> {
    let spec = spectral::spectrum(g.utuple(), theta)?;
    if spec.op_norm() >= PI - 1e-9 {
        return Err(GeoError::Precondition(
            "recover_covector requires an interior critical point".into(),
        ));
    }
    let minus_theta = -theta;
    let y = spectral::exp_tilde(g.utuple(), &minus_theta, &point.x)?;
    let zeta = spec.apply(|l| if l < 1e-150 { 1.0 } else { l / l.sin() }, &y);
    let cov = Covector::new(zeta, theta.clone());

    // consistency: |zeta|^2 = phi(g; theta) and exp(zeta, 2 theta) = g
    let val = phi(g, point, theta, false)?.value;
    let lsq = cov.zeta.norm_squared();
    let scale = 1.0 + val.abs();
    if (lsq - val).abs() > 1e-8 * scale {
        return Err(GeoError::Consistency {
            what: "recover_covector: |zeta|^2 vs phi",
            residual: (lsq - val).abs() / scale,
        });
    }
    let e = geodesics::exp_map(g, &cov, 1.0)?;
    let resid = (&e.x - &point.x).amax().max((&e.t - &point.t).amax());
    if resid > 1e-8 * (1.0 + point.norm()) {
        return Err(GeoError::Consistency {
            what: "recover_covector: endpoint",
            residual: resid,
        });
    }
    Ok(cov)
}

/// Second differences `d(g + h nu)^2 + d(g - h nu)^2 - 2 d(g)^2` for vertical
/// perturbations `nu` in the second layer.
pub fn semiconcavity_probe(
    g: &StepTwoGroup,
    point: &GroupElement,
    nu: &DVector<f64>,
    hs: &[f64],
) -> Result<Vec<f64>> {
    if nu.len() != g.m() {
        return Err(GeoError::DimensionMismatch {
            what: "semiconcavity_probe: nu",
            expected: g.m(),
            got: nu.len(),
        });
    }
    let n = nu.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(GeoError::Precondition("probe direction must be a nonzero vector".into()));
    }
    let nu = nu / n;
    let base = crate::distance::distance_dsq(g, point)?;
    let mut out = Vec::with_capacity(hs.len());
    for &h in hs {
        if h <= 0.0 {
            return Err(GeoError::Precondition("probe offsets must be positive".into()));
        }
        let plus = GroupElement::new(point.x.clone(), &point.t + &nu * h);
        let minus = GroupElement::new(point.x.clone(), &point.t - &nu * h);
        let dp = crate::distance::distance_dsq(g, &plus)?;
        let dm = crate::distance::distance_dsq(g, &minus)?;
        out.push(dp + dm - 2.0 * base);
    }
    Ok(out)
}
