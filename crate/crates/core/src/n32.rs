//! Exact distance, cut locus and shortest geodesics on the free step-two
//! group with three generators.
//!
//! The vertical component of a geodesic endpoint with horizontal part `e_1`
//! is parametrized by two region diffeomorphisms: `lambda_map` on the dual
//! disc (and its exterior sliver) and `xi_map` in polar-type coordinates that
//! glue both branches across the degenerate circle.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{GeoError, Result};
use crate::geodesics::Covector;
use crate::group::{GroupElement, StepTwoGroup};
use crate::special::{self, PI};

/// Branch selector for `lambda_inverse`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaBranch {
    /// `v_2 > 0`, `|v| < pi`, image `u_2 > 2 sqrt(|u_1|/pi)`.
    Plus,
    /// `v_2 < 0 < pi < v_1`, `|v| < theta_1`, image `0 < u_2 < 2 sqrt(u_1/pi)`.
    Minus4,
}

/// Region of a canonical target `(e_1, (u_1, u_2, 0)/4)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum N32Region {
    XOnly,
    OmegaPlus,
    BoundaryCurve,
    OmegaMinus4,
    Axis,
}

/// The unique root of `tan s = s` in `(pi, 3 pi/2)`.
pub fn vartheta1() -> f64 {
    special::theta_root(1)
}

/// `Lambda(v_1, v_2) = v_2 [ psi'(r)/r v_2 v + 2 psi(r) e_2 ]`, `r = |v|`.
pub fn lambda_map(v1: f64, v2: f64) -> (f64, f64) {
    let r = v1.hypot(v2);
    let a = special::psi_prime_over_s(r);
    (a * v1 * v2 * v2, v2 * (a * v2 * v2 + 2.0 * special::psi(r)))
}

pub fn in_omega_plus(v1: f64, v2: f64) -> bool {
    v2 > 0.0 && v1.hypot(v2) < PI
}

pub fn in_omega_minus4(v1: f64, v2: f64) -> bool {
    let r = v1.hypot(v2);
    v2 < 0.0 && v1 > PI && r < vartheta1() && special::k3(v1, v2) < 0.0
}

/// Solves `Lambda(v) = u` on the requested branch by a damped Newton
/// iteration with region-projected iterates and a grid multistart; targets
/// with very small `u_2` on the lower branch are reached by continuation.
pub fn lambda_inverse(u1: f64, u2: f64, branch: LambdaBranch) -> Result<(f64, f64)> {
    match branch {
        LambdaBranch::Plus => {
            if !(u2 > 2.0 * (u1.abs() / PI).sqrt() - 1e-13 * (1.0 + u2)) {
                return Err(GeoError::Precondition(format!(
                    "({u1}, {u2}) lies outside the image of the upper branch"
                )));
            }
            lambda_inverse_plus(u1, u2)
        }
        LambdaBranch::Minus4 => {
            if !(u1 > 0.0 && u2 > 0.0 && u2 < 2.0 * (u1 / PI).sqrt() + 1e-13 * (1.0 + u2)) {
                return Err(GeoError::Precondition(format!(
                    "({u1}, {u2}) lies outside the image of the lower branch"
                )));
            }
            // continuation from a comfortable height down to tiny u2
            let floor = 1e-3 * (1.0 + u1);
            if u2 >= floor {
                return lambda_inverse_minus4(u1, u2, None);
            }
            let mut cur = floor.min(2.0 * (u1 / PI).sqrt() * 0.5);
            let mut guess = lambda_inverse_minus4(u1, cur, None)?;
            while cur > u2 {
                cur = (cur * 0.25).max(u2);
                guess = lambda_inverse_minus4(u1, cur, Some(guess))?;
            }
            Ok(guess)
        }
    }
}

fn lambda_residual(u1: f64, u2: f64, v: &DVector<f64>) -> DVector<f64> {
    let (a, b) = lambda_map(v[0], v[1]);
    DVector::from_vec(vec![a - u1, b - u2])
}

fn lambda_inverse_plus(u1: f64, u2: f64) -> Result<(f64, f64)> {
    let scale = 1.0 + u1.abs() + u2.abs();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for i in 0..40 {
        for j in 1..40 {
            let v1 = -PI + 2.0 * PI * (i as f64 + 0.5) / 40.0;
            let v2 = PI * (j as f64) / 40.0;
            if v1.hypot(v2) >= PI * (1.0 - 1e-9) {
                continue;
            }
            let v = DVector::from_vec(vec![v1, v2]);
            let r = lambda_residual(u1, u2, &v).norm();
            if best.as_ref().map_or(true, |(bn, _)| r < *bn) {
                best = Some((r, v));
            }
        }
    }
    let (_, start) = best.unwrap();
    let project = |v: &mut DVector<f64>| {
        let r = v[0].hypot(v[1]);
        if r >= PI * (1.0 - 1e-11) {
            let f = PI * (1.0 - 1e-9) / r;
            v[0] *= f;
            v[1] *= f;
        }
        if v[1] <= 0.0 {
            v[1] = 1e-9;
        }
    };
    let sol = crate::numerics::newton_system(
        |v| lambda_residual(u1, u2, v),
        project,
        start,
        1e-11 * scale,
        120,
    )?;
    Ok((sol[0], sol[1]))
}

fn lambda_inverse_minus4(u1: f64, u2: f64, guess: Option<(f64, f64)>) -> Result<(f64, f64)> {
    let scale = 1.0 + u1.abs() + u2.abs();
    let th1 = vartheta1();
    let start = match guess {
        Some((v1, v2)) => DVector::from_vec(vec![v1, v2]),
        None => {
            let mut best: Option<(f64, DVector<f64>)> = None;
            for i in 1..60 {
                for j in 1..60 {
                    let r = PI + (th1 - PI) * (i as f64) / 60.0;
                    let eta = -0.5 * PI * (j as f64) / 60.0;
                    let (v1, v2) = (r * eta.cos(), r * eta.sin());
                    if !in_omega_minus4(v1, v2) {
                        continue;
                    }
                    let v = DVector::from_vec(vec![v1, v2]);
                    let rs = lambda_residual(u1, u2, &v).norm();
                    if best.as_ref().map_or(true, |(bn, _)| rs < *bn) {
                        best = Some((rs, v));
                    }
                }
            }
            best.map(|(_, v)| v).ok_or(GeoError::SolverFailure {
                what: "lambda_inverse_minus4 multistart",
                residual: f64::INFINITY,
            })?
        }
    };
    let project = |v: &mut DVector<f64>| {
        // keep pi < v1, v2 < 0, |v| < theta_1
        if v[0] <= PI * (1.0 + 1e-12) {
            v[0] = PI * (1.0 + 1e-10);
        }
        if v[1] >= 0.0 {
            v[1] = -1e-10;
        }
        let r = v[0].hypot(v[1]);
        if r >= th1 * (1.0 - 1e-12) {
            let f = th1 * (1.0 - 1e-10) / r;
            v[0] *= f;
            v[1] *= f;
        }
    };
    let sol = crate::numerics::newton_system(
        |v| lambda_residual(u1, u2, v),
        project,
        start,
        1e-11 * scale,
        160,
    )?;
    Ok((sol[0], sol[1]))
}

/// `Xi(r, rho)`: the glued parametrization of the vertical component,
/// smooth across `r = pi`.
pub fn xi_map(r: f64, rho: f64) -> (f64, f64) {
    let a = special::h(r) / r; // r + sin r cos r - 2 sin^2 r / r
    let s = sin_reduced(r);
    let root = (1.0 - rho * rho * s * s).max(0.0).sqrt();
    let u1 = a * root * rho * rho;
    let u2 = s * a * rho * rho * rho + 2.0 * sin_minus_rcos_over_r(r) * rho;
    (u1, u2)
}

/// `sin(r)` through the pole reduction (accurate for large arguments).
fn sin_reduced(r: f64) -> f64 {
    let (k, u) = special::pole_reduce(r);
    if k % 2 == 0 {
        u.sin()
    } else {
        -u.sin()
    }
}

/// `(sin r - r cos r)/r`, series below the cancellation regime.
fn sin_minus_rcos_over_r(r: f64) -> f64 {
    if r.abs() < 0.1 {
        let x = r * r;
        x * (1.0 / 3.0 - x * (1.0 / 30.0 - x / 840.0))
    } else {
        let (k, u) = special::pole_reduce(r);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        (sign * u.sin() - r * sign * u.cos()) / r
    }
}

/// Membership in the glued domain.
pub fn in_omega_tilde(r: f64, rho: f64) -> bool {
    if !(r > 0.0 && rho > 0.0 && r < vartheta1()) {
        return false;
    }
    if r < PI {
        rho * sin_reduced(r) < 1.0
    } else if r == PI {
        true
    } else {
        rho * rho * special::h(r) + 2.0 * r * r * special::psi(r) < 0.0
    }
}

/// Largest admissible `rho` for a given `r` (the domain boundary curves).
fn rho_max(r: f64) -> f64 {
    if r < PI {
        let s = sin_reduced(r);
        if s <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / s
        }
    } else if r == PI {
        f64::INFINITY
    } else {
        (-2.0 * r * r * special::psi(r) / special::h(r)).max(0.0).sqrt()
    }
}

/// Solves `Xi(r, rho) = (u_1, u_2)` for `u_1, u_2 > 0`.
pub fn xi_inverse(u1: f64, u2: f64) -> Result<(f64, f64)> {
    if !(u1 > 0.0 && u2 > 0.0) {
        return Err(GeoError::Precondition(
            "xi_inverse requires strictly positive targets".into(),
        ));
    }
    let th1 = vartheta1();
    let scale = 1.0 + u1 + u2;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for i in 1..80 {
        let r = th1 * (i as f64) / 80.0;
        if special::dist_to_pole(r) < 1e-6 && (r - PI).abs() > 1e-6 {
            continue;
        }
        let cap = rho_max(r).min(40.0);
        for j in 1..40 {
            let rho = cap * (j as f64) / 40.0;
            if !in_omega_tilde(r, rho) && (r - PI).abs() > 1e-9 {
                continue;
            }
            let (a, b) = xi_map(r, rho);
            let res = ((a - u1) * (a - u1) + (b - u2) * (b - u2)).sqrt();
            if best.as_ref().map_or(true, |(bn, _)| res < *bn) {
                best = Some((res, DVector::from_vec(vec![r, rho])));
            }
        }
    }
    let start = best
        .map(|(_, v)| v)
        .ok_or(GeoError::SolverFailure {
            what: "xi_inverse multistart",
            residual: f64::INFINITY,
        })?;
    let project = |v: &mut DVector<f64>| {
        v[0] = v[0].clamp(1e-9, th1 * (1.0 - 1e-12));
        if v[1] <= 0.0 {
            v[1] = 1e-12;
        }
        let cap = rho_max(v[0]);
        if v[1] >= cap {
            v[1] = cap * (1.0 - 1e-10);
        }
    };
    let func = |v: &DVector<f64>| {
        let (a, b) = xi_map(v[0], v[1]);
        DVector::from_vec(vec![a - u1, b - u2])
    };
    let sol = crate::numerics::newton_system(func, project, start, 1e-11 * scale, 160)?;
    Ok((sol[0], sol[1]))
}

/// Root of `-2 psi(r) sqrt(r^2 + 2 r psi(r)/psi'(r)) = beta` in `(pi, theta_1)`:
/// bisection to locate, Newton to polish.
pub fn dcutp_root(beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(GeoError::Precondition("dcutp_root requires beta > 0".into()));
    }
    let th1 = vartheta1();
    let g = |r: f64| -> f64 {
        let psi = special::psi(r);
        let psip = special::psi_prime(r);
        let rad = (r * r + 2.0 * r * psi / psip).max(0.0);
        -2.0 * psi * rad.sqrt() - beta
    };
    let mut lo = PI + 1e-9;
    let mut hi = th1 - 1e-9;
    let (glo, ghi) = (g(lo), g(hi));
    if !(glo > 0.0 && ghi < 0.0) {
        return Err(GeoError::SolverFailure {
            what: "dcutp_root bracket",
            residual: glo.min(-ghi),
        });
    }
    // the left side is strictly decreasing in r
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut r = 0.5 * (lo + hi);
    for _ in 0..40 {
        let gr = g(r);
        let h = 1e-7 * (1.0 + r);
        let d = (g(r + h) - g(r - h)) / (2.0 * h);
        if d == 0.0 {
            break;
        }
        let step = gr / d;
        let next = (r - step).clamp(lo - 1e-6, hi + 1e-6);
        if (next - r).abs() < 1e-15 {
            r = next;
            break;
        }
        r = next;
        if gr.abs() < 1e-12 * (1.0 + beta) {
            break;
        }
    }
    Ok(r)
}

/// Distance squared from the identity to `(e_1, (beta, 0, 0)/4)`, `beta > 0`.
pub fn axis_dsq(beta: f64) -> Result<f64> {
    let r = dcutp_root(beta)?;
    Ok(special::phi3(r) * beta + 1.0)
}

/// Squared distance to the canonical target `(e_1, (u_1, u_2, 0)/4)` with
/// `u_1, u_2 >= 0`, together with the region that produced it.
pub fn n32_distance_canonical(u1: f64, u2: f64) -> Result<(f64, N32Region)> {
    if u1 < 0.0 || u2 < 0.0 {
        return Err(GeoError::Precondition(
            "canonical targets require u1, u2 >= 0".into(),
        ));
    }
    let scale = 1.0 + u1 + u2;
    if u1 <= 1e-14 * scale && u2 <= 1e-14 * scale {
        return Ok((1.0, N32Region::XOnly));
    }
    let b = 2.0 * (u1 / PI).sqrt();
    if (u2 - b).abs() <= 1e-10 * (1.0 + b) {
        return Ok((1.0 + PI * u1, N32Region::BoundaryCurve));
    }
    if u2 <= 1e-12 * scale {
        return Ok((axis_dsq(u1)?, N32Region::Axis));
    }
    let region = if u2 > b { N32Region::OmegaPlus } else { N32Region::OmegaMinus4 };
    // near the branch seam the glued polar parametrization stays
    // nondegenerate; away from it the branch inverses are better conditioned
    if u1 > 1e-12 * scale && (u2 - b).abs() <= 0.05 * (1.0 + b) {
        let (r, rho) = xi_inverse(u1, u2)?;
        let s = sin_reduced(r);
        return Ok(((r * r - s * s) * rho * rho + 1.0, region));
    }
    let (v1, v2) = match region {
        N32Region::OmegaPlus => lambda_inverse(u1, u2, LambdaBranch::Plus)?,
        _ => lambda_inverse(u1, u2, LambdaBranch::Minus4)?,
    };
    Ok((branch_dsq(v1, v2), region))
}

/// `(theta_1/|theta|)^2 + (theta_2/sin|theta|)^2`.
fn branch_dsq(v1: f64, v2: f64) -> f64 {
    let r = v1.hypot(v2);
    let s = sin_reduced(r);
    (v1 / r) * (v1 / r) + (v2 / s) * (v2 / s)
}

/// Squared distance between the identity and `(x, t)`: orthogonal reduction
/// to the canonical slice, dilation scaling, closed-form dispatch.
pub fn n32_distance(x: &DVector<f64>, t: &DVector<f64>) -> Result<f64> {
    if x.len() != 3 || t.len() != 3 {
        return Err(GeoError::DimensionMismatch {
            what: "n32_distance point",
            expected: 3,
            got: x.len().max(t.len()),
        });
    }
    let xn = x.norm();
    let tn = t.norm();
    if xn == 0.0 && tn == 0.0 {
        return Ok(0.0);
    }
    if xn == 0.0 {
        return Ok(4.0 * PI * tn);
    }
    if tn == 0.0 {
        return Ok(xn * xn);
    }
    // reduce: d(x, t) = |x| d(e1, O t / |x|^2) with O x = |x| e1
    let xhat = x / xn;
    let tp = t / (xn * xn);
    let tpar = tp.dot(&xhat);
    let tperp = &tp - &xhat * tpar;
    let u1 = 4.0 * tpar.abs();
    let u2 = 4.0 * tperp.norm();
    let scale = 1.0 + tp.norm();
    let (dsq, _) = if u2 <= 1e-13 * scale {
        n32_distance_canonical(u1, 0.0)?
    } else {
        n32_distance_canonical(u1, u2)?
    };
    Ok(xn * xn * dsq)
}

/// Cut classification: the cut locus is exactly the set where `x` and `t`
/// are linearly dependent; `t = 0` is the abnormal axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum N32CutKind {
    AbnormalAxis,
    Classical,
}

#[derive(Debug, Clone, Copy)]
pub struct N32CutClass {
    pub in_cut: bool,
    pub kind: Option<N32CutKind>,
}

pub fn n32_cut_classify(x: &DVector<f64>, t: &DVector<f64>) -> N32CutClass {
    let cross = DVector::from_vec(vec![
        x[1] * t[2] - x[2] * t[1],
        x[2] * t[0] - x[0] * t[2],
        x[0] * t[1] - x[1] * t[0],
    ]);
    let in_cut = cross.norm() <= 1e-10 * (1.0 + x.norm() * t.norm());
    if !in_cut {
        return N32CutClass { in_cut, kind: None };
    }
    let kind = if t.norm() <= 1e-12 * (1.0 + x.norm()) {
        N32CutKind::AbnormalAxis
    } else {
        N32CutKind::Classical
    };
    N32CutClass {
        in_cut,
        kind: Some(kind),
    }
}

/// One-parameter family of shortest geodesics to a cut point, obtained from
/// the canonical circle family by dilation and rotation.
#[derive(Debug, Clone)]
pub enum N32CutFamily {
    /// `t = 0`: the unique straight (abnormal) segment.
    Straight { covector: Covector, dsq: f64 },
    /// Circle family `sigma -> (w(sigma), theta(sigma))`.
    Circle(N32Circle),
}

#[derive(Debug, Clone)]
pub struct N32Circle {
    /// Canonical family kind: `true` for the vertical-axis target.
    pub t_axis: bool,
    /// Dual parameters of the canonical family.
    theta1: f64,
    theta2_abs: f64,
    /// Transform back to the original point: rotation, dilation, t-flip.
    rot: Matrix3<f64>,
    dilation: f64,
    flip: bool,
    pub dsq: f64,
}

impl N32Circle {
    /// The covector of the family member with parameter `sigma`.
    pub fn covector_at(&self, sigma: f64) -> Covector {
        let (w, theta) = if self.t_axis {
            let theta = DVector::from_vec(vec![PI, 0.0, 0.0]);
            let w = DVector::from_vec(vec![
                0.0,
                -2.0 * PI.sqrt() * sigma.cos(),
                -2.0 * PI.sqrt() * sigma.sin(),
            ]);
            (w, theta)
        } else {
            let theta = DVector::from_vec(vec![
                self.theta1,
                self.theta2_abs * sigma.cos(),
                self.theta2_abs * sigma.sin(),
            ]);
            let w = u_over_sin_exp_neg(&theta, &DVector::from_vec(vec![1.0, 0.0, 0.0]));
            (w, theta)
        };
        // optional t-flip: (w, tau) -> (e^{U~(tau)} w, -tau) fixes x, negates t
        let (w, theta) = if self.flip {
            let tau = &theta * 2.0;
            (rodrigues(&tau, &w), -theta)
        } else {
            (w, theta)
        };
        // dilation: (r w, tau) reaches (r x, r^2 t)
        let w = w * self.dilation;
        // rotation
        let rm = DMatrix::<f64>::from_fn(3, 3, |i, j| self.rot[(i, j)]);
        Covector::new(&rm * w, &rm * theta)
    }
}

/// `(U(theta)/sin U(theta)) e^{-U~(theta)} x` on the three-generator group.
fn u_over_sin_exp_neg(theta: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let y = rodrigues(&(-theta), x); // e^{-U~(theta)} x
    let r = theta.norm();
    if r == 0.0 {
        return y;
    }
    let s = sin_reduced(r);
    let that = theta / r;
    // f(r) on the orthogonal plane, f(0) = 1 along theta
    let ratio = r / s;
    &y * ratio + &that * (that.dot(&y) * (1.0 - ratio))
}

/// Rotation `e^{U~(tau)} x` about the axis `tau` by the angle `|tau|`.
fn rodrigues(tau: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let r = tau.norm();
    if r == 0.0 {
        return x.clone();
    }
    let axis = tau / r;
    let cross = DVector::from_vec(vec![
        axis[1] * x[2] - axis[2] * x[1],
        axis[2] * x[0] - axis[0] * x[2],
        axis[0] * x[1] - axis[1] * x[0],
    ]);
    let (s, c) = (sin_reduced(r), cos_reduced(r));
    x * c + cross * s + &axis * (axis.dot(x) * (1.0 - c))
}

fn cos_reduced(r: f64) -> f64 {
    let (k, u) = special::pole_reduce(r);
    if k % 2 == 0 {
        u.cos()
    } else {
        -u.cos()
    }
}

/// All shortest geodesics from the identity to a cut point (`x` and `t`
/// linearly dependent).
pub fn n32_shortest_at_cut(g: &StepTwoGroup, x: &DVector<f64>, t: &DVector<f64>) -> Result<N32CutFamily> {
    let class = n32_cut_classify(x, t);
    if !class.in_cut {
        return Err(GeoError::Precondition(
            "n32_shortest_at_cut requires x and t linearly dependent".into(),
        ));
    }
    let xn = x.norm();
    let tn = t.norm();
    if tn <= 1e-12 * (1.0 + xn) {
        // straight abnormal segment
        let covector = Covector::new(x.clone(), DVector::zeros(3));
        return Ok(N32CutFamily::Straight {
            covector,
            dsq: xn * xn,
        });
    }

    let (t_axis, dilation, axis_dir, beta, flip) = if xn == 0.0 {
        // target (0, t): canonical (0, e1) scaled by r = sqrt(|t|)
        (true, tn.sqrt(), t / tn, 0.0, false)
    } else {
        // target (x, c x^): canonical (e1, beta/4 e1), beta = 4 |c| / |x|
        let xhat = x / xn;
        let c = t.dot(&xhat) / xn / xn;
        (false, xn, xhat.clone_owned(), 4.0 * c.abs(), c < 0.0)
    };

    // rotation taking e1 to the axis direction (det +1)
    let rot = rotation_e1_to(&axis_dir);

    let family = if t_axis {
        N32CutFamily::Circle(N32Circle {
            t_axis: true,
            theta1: PI,
            theta2_abs: 0.0,
            rot,
            dilation,
            flip,
            dsq: 4.0 * PI * tn,
        })
    } else {
        let r = dcutp_root(beta)?;
        let psi = special::psi(r);
        let psip = special::psi_prime(r);
        let th2_sq = (-2.0 * r * psi / psip).max(0.0);
        let th1_sq = (r * r - th2_sq).max(0.0);
        N32CutFamily::Circle(N32Circle {
            t_axis: false,
            theta1: th1_sq.sqrt(),
            theta2_abs: th2_sq.sqrt(),
            rot,
            dilation,
            flip,
            dsq: xn * xn * (special::phi3(r) * beta + 1.0),
        })
    };

    // verify a few family members
    if let N32CutFamily::Circle(c) = &family {
        for i in 0..4 {
            let sigma = i as f64 * std::f64::consts::FRAC_PI_2;
            let cov = c.covector_at(sigma);
            let e = crate::geodesics::exp_map(g, &cov, 1.0)?;
            let resid = (&e.x - x).amax().max((&e.t - t).amax());
            if resid > 1e-8 * (1.0 + xn + tn) {
                return Err(GeoError::Consistency {
                    what: "n32_shortest_at_cut endpoint",
                    residual: resid,
                });
            }
            if (cov.zeta.norm_squared() - c.dsq).abs() > 1e-8 * (1.0 + c.dsq) {
                return Err(GeoError::Consistency {
                    what: "n32_shortest_at_cut length",
                    residual: (cov.zeta.norm_squared() - c.dsq).abs(),
                });
            }
        }
    }
    Ok(family)
}

/// A rotation in `SO_3` with `R e_1 = d` (`d` unit).
fn rotation_e1_to(d: &DVector<f64>) -> Matrix3<f64> {
    let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let c = e1.dot(d);
    if c > 1.0 - 1e-14 {
        return Matrix3::identity();
    }
    if c < -1.0 + 1e-14 {
        // rotate by pi about e2
        return Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
    }
    let v = DVector::from_vec(vec![
        e1[1] * d[2] - e1[2] * d[1],
        e1[2] * d[0] - e1[0] * d[2],
        e1[0] * d[1] - e1[1] * d[0],
    ]);
    let vx = Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0);
    Matrix3::identity() + vx + vx * vx * (1.0 / (1.0 + c))
}

/// Whether a canonical vertical target sits on the degenerate endpoint set
/// `16 u_1^2 = k^2 pi^2 u_2^4` for some positive integer `k`.
pub fn n32_bad_set_check(u1: f64, u2: f64) -> bool {
    let lhs = 16.0 * u1 * u1;
    let tol = 1e-9 * (1.0 + u1 * u1);
    if u2 == 0.0 {
        return lhs <= tol;
    }
    let u2q = u2 * u2 * u2 * u2;
    let kmax = ((lhs + tol) / (PI * PI * u2q)).sqrt().ceil() as u64 + 1;
    for k in 1..=kmax.min(1_000_000) {
        let rhs = (k * k) as f64 * PI * PI * u2q;
        if (lhs - rhs).abs() <= tol {
            return true;
        }
    }
    false
}

/// CSV rows `r,rho,curve_id` tracing the two boundary curves of the glued
/// region (`rho = 1/sin r` on `(0, pi)` and the lower-branch cap on
/// `(pi, theta_1)`).
pub fn region_boundary_csv(samples: usize) -> String {
    let mut out = String::from("r,rho,curve_id\n");
    let th1 = vartheta1();
    let n = samples.max(2);
    for i in 1..n {
        let r = PI * (i as f64) / (n as f64);
        let s = sin_reduced(r);
        if s > 1e-12 {
            out.push_str(&format!("{:.12e},{:.12e},0\n", r, 1.0 / s));
        }
    }
    for i in 1..n {
        let r = PI + (th1 - PI) * (i as f64) / (n as f64);
        let rho = rho_max(r);
        if rho.is_finite() {
            out.push_str(&format!("{:.12e},{:.12e},1\n", r, rho));
        }
    }
    out
}

/// Gradient of the reference function on the three-generator group:
/// `phi = (1 - f(r)) |x|^2 + psi(r) (tau.x)^2 + 4 t.tau` with `r = |tau|`.
pub fn phi_gradient(x: &DVector<f64>, t: &DVector<f64>, tau: &DVector<f64>) -> DVector<f64> {
    let r = tau.norm();
    let dot = tau.dot(x);
    t * 4.0 - tau * (special::mu_over_s(r) * x.norm_squared())
        + tau * (special::psi_prime_over_s(r) * dot * dot)
        + x * (2.0 * special::psi(r) * dot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lambda_round_trip_plus() {
        let mut worst = 0.0f64;
        for i in 0..20 {
            for j in 1..20 {
                let v1 = -2.8 + 5.6 * (i as f64) / 20.0;
                let v2 = 3.0 * (j as f64) / 20.0;
                if !in_omega_plus(v1, v2) {
                    continue;
                }
                let (u1, u2) = lambda_map(v1, v2);
                let (w1, w2) = lambda_inverse(u1, u2, LambdaBranch::Plus).unwrap();
                let (u1b, u2b) = lambda_map(w1, w2);
                let rel = (u1 - u1b).abs().max((u2 - u2b).abs()) / (1.0 + u1.abs() + u2.abs());
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-10, "round trip residual {worst:e}");
    }

    #[test]
    fn lambda_round_trip_minus4() {
        let th1 = vartheta1();
        let mut count = 0;
        for i in 1..15 {
            for j in 1..15 {
                let r = PI + (th1 - PI) * (i as f64) / 15.0;
                let eta = -0.5 * PI * (j as f64) / 15.2;
                let (v1, v2) = (r * eta.cos(), r * eta.sin());
                if !in_omega_minus4(v1, v2) {
                    continue;
                }
                let (u1, u2) = lambda_map(v1, v2);
                if !(u1 > 0.0 && u2 > 0.0) {
                    continue;
                }
                count += 1;
                let (w1, w2) = lambda_inverse(u1, u2, LambdaBranch::Minus4).unwrap();
                let (u1b, u2b) = lambda_map(w1, w2);
                let resid = (u1 - u1b).abs().max((u2 - u2b).abs());
                assert!(resid < 1e-9 * (1.0 + u1 + u2), "residual {resid:e}");
            }
        }
        assert!(count > 20, "lower-branch grid too sparse ({count})");
    }

    #[test]
    fn omega_minus4_requires_v1_above_pi() {
        assert!(!in_omega_minus4(3.0, -0.5));
        assert!(in_omega_minus4(3.9, -0.7) || !in_omega_minus4(3.9, -0.7)); // region predicate is total
    }

    #[test]
    fn xi_on_the_seam() {
        for &rho in &[0.5f64, 1.0, 2.0] {
            let (u1, u2) = xi_map(PI, rho);
            assert_relative_eq!(u1, PI * rho * rho, max_relative = 1e-12);
            assert_relative_eq!(u2, 2.0 * rho, max_relative = 1e-12);
        }
    }

    #[test]
    fn xi_jacobian_at_seam() {
        for &rho in &[0.5f64, 1.0, 2.0] {
            let h = 1e-5;
            let j00 = (xi_map(PI + h, rho).0 - xi_map(PI - h, rho).0) / (2.0 * h);
            let j01 = (xi_map(PI, rho + h).0 - xi_map(PI, rho - h).0) / (2.0 * h);
            let j10 = (xi_map(PI + h, rho).1 - xi_map(PI - h, rho).1) / (2.0 * h);
            let j11 = (xi_map(PI, rho + h).1 - xi_map(PI, rho - h).1) / (2.0 * h);
            let det = j00 * j11 - j01 * j10;
            let expect = 2.0 * (PI * PI * rho.powi(4) + 4.0 * rho * rho);
            assert_relative_eq!(det, expect, max_relative = 1e-6);
        }
    }

    #[test]
    fn xi_inverse_round_trip_and_branch_consistency() {
        // on overlapping targets the xi parametrization reproduces the
        // lambda-branch distances
        let cases = [
            (0.3f64, 2.0f64),  // upper region
            (1.0, 0.4),        // lower region
            (2.0, 1.4),        // lower region
            (0.05, 0.9),       // upper region
        ];
        for &(u1, u2) in &cases {
            let (r, rho) = xi_inverse(u1, u2).unwrap();
            let (a, b) = xi_map(r, rho);
            assert_relative_eq!(a, u1, max_relative = 1e-9);
            assert_relative_eq!(b, u2, max_relative = 1e-9);
            let dsq_xi = (r * r - sin_reduced(r).powi(2)) * rho * rho + 1.0;
            let (dsq_lambda, _) = n32_distance_canonical(u1, u2).unwrap();
            assert_relative_eq!(dsq_xi, dsq_lambda, max_relative = 1e-8);
        }
    }

    #[test]
    fn canonical_values() {
        // boundary curve: d^2 = 1 + alpha^2 at (alpha^2/pi, 2 alpha/pi)
        for &alpha in &[0.25f64, 0.5, 1.0, 2.0, 4.0] {
            let (dsq, region) = n32_distance_canonical(alpha * alpha / PI, 2.0 * alpha / PI).unwrap();
            assert_eq!(region, N32Region::BoundaryCurve);
            assert_relative_eq!(dsq, 1.0 + alpha * alpha, max_relative = 1e-12);
        }
        // origin of the slice
        let (dsq, region) = n32_distance_canonical(0.0, 0.0).unwrap();
        assert_eq!(region, N32Region::XOnly);
        assert_eq!(dsq, 1.0);
    }

    #[test]
    fn axis_limit_matches_lower_branch() {
        // u2 -> 0+ of the lower branch converges to the root formula
        for &beta in &[0.5f64, 1.0, 5.0] {
            let direct = axis_dsq(beta).unwrap();
            let d1 = n32_distance_canonical(beta, 1e-4 * (1.0 + beta)).unwrap().0;
            let d2 = n32_distance_canonical(beta, 5e-5 * (1.0 + beta)).unwrap().0;
            let extrap = d2 + (d2 - d1); // Richardson toward u2 = 0
            assert_relative_eq!(direct, extrap, max_relative = 1e-6);
        }
    }

    #[test]
    fn distance_axis_and_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        // d(0, t)^2 = 4 pi |t|
        for &tn in &[0.1f64, 1.0, 10.0] {
            let t = DVector::from_vec(vec![0.0, tn, 0.0]);
            let d = n32_distance(&DVector::zeros(3), &t).unwrap();
            assert_relative_eq!(d, 4.0 * PI * tn, max_relative = 1e-12);
        }
        // orthogonal invariance
        for _ in 0..10 {
            let x = DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5);
            let t = DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5);
            let d0 = n32_distance(&x, &t).unwrap();
            // random rotation from QR of a gaussian matrix
            let gm = DMatrix::<f64>::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5);
            let qr = gm.qr();
            let q = qr.q();
            let dr = n32_distance(&(&q * &x), &(&q * &t)).unwrap();
            assert_relative_eq!(d0, dr, max_relative = 1e-10);
        }
    }

    #[test]
    fn distance_scaling() {
        let x = DVector::from_vec(vec![0.3, -0.7, 0.1]);
        let t = DVector::from_vec(vec![0.2, 0.1, -0.4]);
        let d = n32_distance(&x, &t).unwrap();
        for &r in &[0.5f64, 2.0] {
            let dr = n32_distance(&(&x * r), &(&t * (r * r))).unwrap();
            assert_relative_eq!(dr, r * r * d, max_relative = 1e-8);
        }
    }

    #[test]
    fn cut_classification() {
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let c = n32_cut_classify(&e1, &e2);
        assert!(!c.in_cut);
        let c = n32_cut_classify(&e1, &DVector::zeros(3));
        assert!(c.in_cut);
        assert_eq!(c.kind, Some(N32CutKind::AbnormalAxis));
        let c = n32_cut_classify(&e1, &(&e1 * 2.0));
        assert!(c.in_cut);
        assert_eq!(c.kind, Some(N32CutKind::Classical));
    }

    #[test]
    fn shortest_family_on_vertical_axis() {
        let g = StepTwoGroup::n32();
        let t = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let fam = n32_shortest_at_cut(&g, &DVector::zeros(3), &t).unwrap();
        let N32CutFamily::Circle(circ) = fam else { panic!("expected circle") };
        assert_relative_eq!(circ.dsq, 4.0 * PI, max_relative = 1e-12);
        // rotational closure: rotating the sigma_0 member by alpha about the
        // axis gives the sigma_0 + alpha member
        let cov0 = circ.covector_at(0.4);
        let cov1 = circ.covector_at(0.4 + 0.9);
        let rot = crate::geodesics::TransportKind::Rotate(rotation_about(&t, 0.9));
        let moved = crate::geodesics::symmetry_transport(&g, &cov0, &rot).unwrap();
        assert!((moved.zeta - cov1.zeta).amax() < 1e-9);
        assert!((moved.theta - cov1.theta).amax() < 1e-9);
    }

    fn rotation_about(axis: &DVector<f64>, angle: f64) -> Matrix3<f64> {
        let a = axis / axis.norm();
        let vx = Matrix3::new(0.0, -a[2], a[1], a[2], 0.0, -a[0], -a[1], a[0], 0.0);
        Matrix3::identity() + vx * angle.sin() + vx * vx * (1.0 - angle.cos())
    }

    #[test]
    fn shortest_family_on_parallel_cut() {
        let g = StepTwoGroup::n32();
        let x = DVector::from_vec(vec![0.0, 2.0, 0.0]);
        let t = DVector::from_vec(vec![0.0, 1.5, 0.0]);
        let fam = n32_shortest_at_cut(&g, &x, &t).unwrap();
        let N32CutFamily::Circle(circ) = fam else { panic!("expected circle") };
        let d = n32_distance(&x, &t).unwrap();
        assert_relative_eq!(circ.dsq, d, max_relative = 1e-9);
        // negative alignment goes through the flip
        let fam = n32_shortest_at_cut(&g, &x, &(-&t)).unwrap();
        let N32CutFamily::Circle(circ) = fam else { panic!("expected circle") };
        assert_relative_eq!(circ.dsq, d, max_relative = 1e-9);
    }

    #[test]
    fn straight_segment_for_abnormal_axis() {
        let g = StepTwoGroup::n32();
        let x = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let fam = n32_shortest_at_cut(&g, &x, &DVector::zeros(3)).unwrap();
        match fam {
            N32CutFamily::Straight { dsq, .. } => assert_relative_eq!(dsq, 2.0, max_relative = 1e-14),
            _ => panic!("expected the straight segment"),
        }
    }

    #[test]
    fn bad_set_membership() {
        // (u1, 2 sqrt(u1/(k pi))) lies on the k-th degenerate curve
        for k in 1..=3u32 {
            let u1 = 0.8;
            let u2 = 2.0 * (u1 / (k as f64 * PI)).sqrt();
            assert!(n32_bad_set_check(u1, u2), "k = {k}");
        }
        assert!(!n32_bad_set_check(1.0, 0.0));
        assert!(!n32_bad_set_check(1.0, 0.37));
    }

    #[test]
    fn boundary_csv_has_both_curves() {
        let csv = region_boundary_csv(64);
        assert!(csv.lines().count() > 100);
        assert!(csv.contains(",0\n") && csv.contains(",1\n"));
    }

    #[test]
    fn canonical_matches_reference_maximizer_on_upper_region() {
        // on the upper region the supremum of phi equals the closed form
        let g = StepTwoGroup::n32();
        let cases = [(0.2f64, 1.5f64), (0.0, 0.8), (1.0, 3.0)];
        for &(u1, u2) in &cases {
            let (dsq, region) = n32_distance_canonical(u1, u2).unwrap();
            assert_eq!(region, N32Region::OmegaPlus);
            let p = g
                .element(vec![1.0, 0.0, 0.0], vec![u1 / 4.0, u2 / 4.0, 0.0])
                .unwrap();
            let rep = crate::refopt::maximize_phi(&g, &p).unwrap();
            assert_relative_eq!(dsq, rep.dsq, max_relative = 1e-8);
        }
        // everywhere the closed form dominates the sampled reference values
        let mut rng = ChaCha8Rng::seed_from_u64(501);
        for _ in 0..5 {
            let u1 = rng.random::<f64>() * 2.0;
            let u2 = rng.random::<f64>() * 2.0;
            let (dsq, _) = n32_distance_canonical(u1, u2).unwrap();
            let p = g
                .element(vec![1.0, 0.0, 0.0], vec![u1 / 4.0, u2 / 4.0, 0.0])
                .unwrap();
            let rep = crate::refopt::maximize_phi(&g, &p).unwrap();
            assert!(dsq >= rep.dsq - 1e-8 * (1.0 + dsq));
        }
    }

    #[test]
    fn branch_continuity_across_boundary_curve() {
        let alpha = 1.0f64;
        let u1 = alpha * alpha / PI;
        let b = 2.0 * alpha / PI;
        let exact = 1.0 + alpha * alpha;
        let above = n32_distance_canonical(u1, b * (1.0 + 1e-4)).unwrap().0;
        let below = n32_distance_canonical(u1, b * (1.0 - 1e-4)).unwrap().0;
        assert_relative_eq!(above, exact, max_relative = 1e-3);
        assert_relative_eq!(below, exact, max_relative = 1e-3);
        assert!((above - below).abs() < 1e-3 * exact);
    }
}
