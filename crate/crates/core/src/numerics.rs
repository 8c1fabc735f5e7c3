//! Shared numerical machinery: adaptive quadrature, small dense least squares,
//! damped Newton, nonnegative least squares and deterministic sphere sampling.

use nalgebra::{DMatrix, DVector};

use crate::error::{GeoError, Result};

/// 10-point Gauss-Legendre nodes/weights on [-1, 1] (positive half; mirror for the rest).
const GL10_X: [f64; 5] = [
    0.148874338981631211,
    0.433395394129247191,
    0.679409568299024406,
    0.865063366688984511,
    0.973906528517171720,
];
const GL10_W: [f64; 5] = [
    0.295524224714752870,
    0.269266719309996355,
    0.219086362515982044,
    0.149451349150580593,
    0.066671344308688138,
];

fn gl10<F: Fn(f64) -> DVector<f64>>(f: &F, a: f64, b: f64) -> DVector<f64> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = DVector::zeros(f(mid).len());
    for i in 0..5 {
        acc += (f(mid + half * GL10_X[i]) + f(mid - half * GL10_X[i])) * GL10_W[i];
    }
    acc * half
}

/// Adaptive vector-valued Gauss-Legendre quadrature to absolute tolerance `tol`.
pub fn adaptive_quadrature<F: Fn(f64) -> DVector<f64>>(f: &F, a: f64, b: f64, tol: f64) -> DVector<f64> {
    fn recurse<F: Fn(f64) -> DVector<f64>>(
        f: &F,
        a: f64,
        b: f64,
        whole: DVector<f64>,
        tol: f64,
        depth: u32,
    ) -> DVector<f64> {
        let mid = 0.5 * (a + b);
        let left = gl10(f, a, mid);
        let right = gl10(f, mid, b);
        let refined = &left + &right;
        if depth >= 24 || (&refined - &whole).amax() <= tol {
            refined
        } else {
            recurse(f, a, mid, left, tol * 0.5, depth + 1)
                + recurse(f, mid, b, right, tol * 0.5, depth + 1)
        }
    }
    if a == b {
        return f(a) * 0.0;
    }
    let whole = gl10(f, a, b);
    recurse(f, a, b, whole, tol, 0)
}

/// Outcome of a damped Gauss-Newton / Levenberg-Marquardt run.
#[derive(Debug, Clone)]
pub struct LmResult {
    pub x: DVector<f64>,
    pub cost: f64,
    pub iterations: usize,
}

/// Levenberg-Marquardt on `min ||r(x)||^2` with forward-difference Jacobians
/// and an optional feasibility projection applied to every accepted iterate.
pub fn levenberg_marquardt<R, P>(
    residual: R,
    project: P,
    x0: DVector<f64>,
    max_iters: usize,
    cost_tol: f64,
) -> LmResult
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    P: Fn(&mut DVector<f64>),
{
    let mut x = x0;
    project(&mut x);
    let mut r = residual(&x);
    let mut cost = r.norm_squared();
    let n = x.len();
    let mut lambda = 1e-3;
    let mut iters = 0;

    while iters < max_iters && cost > cost_tol {
        iters += 1;
        // forward-difference Jacobian
        let mut jac = DMatrix::<f64>::zeros(r.len(), n);
        for j in 0..n {
            let hj = 1e-7 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += hj;
            let rp = residual(&xp);
            jac.set_column(j, &((rp - &r) / hj));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut accepted = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for d in 0..n {
                a[(d, d)] += lambda * (1.0 + jtj[(d, d)]);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&jtr),
                None => break,
            };
            let mut xc = &x - &step;
            project(&mut xc);
            let rc = residual(&xc);
            let cc = rc.norm_squared();
            if cc < cost {
                x = xc;
                r = rc;
                cost = cc;
                lambda = (lambda * 0.33).max(1e-14);
                accepted = true;
                break;
            }
            lambda *= 8.0;
        }
        if !accepted {
            break;
        }
    }
    LmResult { x, cost, iterations: iters }
}

/// Damped Newton for a square system `F(x) = 0` with finite-difference
/// Jacobian and a projection keeping iterates inside the admissible region.
pub fn newton_system<F, P>(
    func: F,
    project: P,
    x0: DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    P: Fn(&mut DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    project(&mut x);
    let mut fx = func(&x);
    let mut best = fx.amax();
    for _ in 0..max_iters {
        if best <= tol {
            return Ok(x);
        }
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let hj = 1e-7 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += hj;
            jac.set_column(j, &((func(&xp) - &fx) / hj));
        }
        let step = match jac.clone().lu().solve(&fx) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                // damped least-squares step through the normal equations
                let jtj = jac.transpose() * &jac;
                let jtf = jac.transpose() * &fx;
                let mut a = jtj;
                let reg = 1e-10 * (1.0 + a.diagonal().amax());
                for d in 0..n {
                    a[(d, d)] += reg;
                }
                a.cholesky()
                    .map(|ch| ch.solve(&jtf))
                    .ok_or(GeoError::SolverFailure {
                        what: "newton_system: singular jacobian",
                        residual: best,
                    })?
            }
        };
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let mut xc = &x - &step * alpha;
            project(&mut xc);
            let fc = func(&xc);
            let nc = fc.amax();
            if nc < best {
                x = xc;
                fx = fc;
                best = nc;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if best <= tol {
        Ok(x)
    } else {
        Err(GeoError::SolverFailure {
            what: "newton_system",
            residual: best,
        })
    }
}

/// Damped Newton ascent for a smooth concave function given by a combined
/// value/gradient/Hessian callback. Steps solve `(-H + lambda I) d = g` with
/// the damping adapted to progress; a step is accepted when it increases the
/// value or shrinks the gradient. The projection keeps iterates admissible.
pub fn concave_newton_max<F, P>(
    eval: F,
    project: P,
    start: DVector<f64>,
    gtol: f64,
    max_iters: usize,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>),
    P: Fn(&mut DVector<f64>),
{
    let n = start.len();
    let mut x = start;
    project(&mut x);
    let (mut val, mut grad, mut hess) = eval(&x);
    let mut lambda = 1e-8;
    for _ in 0..max_iters {
        let gn = grad.norm();
        if gn <= gtol {
            return Ok(x);
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = -&hess;
            for d in 0..n {
                a[(d, d)] += lambda * (1.0 + a[(d, d)].abs());
            }
            let Some(ch) = a.cholesky() else {
                lambda = (lambda * 10.0).max(1e-10);
                continue;
            };
            let step = ch.solve(&grad);
            let mut cand = &x + &step;
            project(&mut cand);
            let (cv, cg, chs) = eval(&cand);
            if cv > val || cg.norm() < gn {
                x = cand;
                val = cv;
                grad = cg;
                hess = chs;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    let gn = grad.norm();
    if gn <= gtol {
        Ok(x)
    } else {
        Err(GeoError::SolverFailure {
            what: "concave_newton_max",
            residual: gn,
        })
    }
}

/// Lawson-Hanson nonnegative least squares: `min ||A y - b||, y >= 0`.
/// Returns the solution and the residual norm.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = a.ncols();
    let mut passive = vec![false; n];
    let mut y = DVector::<f64>::zeros(n);
    let mut resid = b - a * &y;

    for _ in 0..(4 * n.max(1) + 16) {
        let w = a.transpose() * &resid;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && w[j] > 1e-12 * (1.0 + b.norm()) {
                if best.map_or(true, |(_, bw)| w[j] > bw) {
                    best = Some((j, w[j]));
                }
            }
        }
        let Some((jin, _)) = best else { break };
        passive[jin] = true;

        loop {
            // solve LS on the passive set
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let ap = DMatrix::<f64>::from_fn(a.nrows(), cols.len(), |i, c| a[(i, cols[c])]);
            let sol = ap
                .clone()
                .svd(true, true)
                .solve(b, 1e-13)
                .unwrap_or_else(|_| DVector::zeros(cols.len()));
            if sol.iter().all(|&v| v > 0.0) {
                y.fill(0.0);
                for (c, &j) in cols.iter().enumerate() {
                    y[j] = sol[c];
                }
                break;
            }
            // step back to the feasibility boundary and drop a variable
            let mut alpha = f64::INFINITY;
            for (c, &j) in cols.iter().enumerate() {
                if sol[c] <= 0.0 {
                    let denom = y[j] - sol[c];
                    if denom > 0.0 {
                        alpha = alpha.min(y[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (c, &j) in cols.iter().enumerate() {
                y[j] += alpha * (sol[c] - y[j]);
                if y[j] <= 1e-14 {
                    y[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
        resid = b - a * &y;
    }
    let rnorm = resid.norm();
    (y, rnorm)
}

/// Acklam's rational approximation of the standard normal quantile.
fn inv_norm_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    let plow = 0.02425;
    if p < plow {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - plow {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inv_norm_cdf(1.0 - p)
    }
}

const SQRT_PRIMES: [f64; 8] = [2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0];

/// Deterministic low-discrepancy sequence of unit vectors on S^{m-1}:
/// a Kronecker lattice pushed through the normal quantile and normalized.
pub fn unit_sphere_sequence(m: usize, count: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(count);
    if m == 1 {
        if count > 0 {
            out.push(DVector::from_vec(vec![1.0]));
        }
        return out;
    }
    let alphas: Vec<f64> = (0..m).map(|i| SQRT_PRIMES[i % SQRT_PRIMES.len()].sqrt().fract()).collect();
    let mut k = 1usize;
    while out.len() < count {
        let mut v = DVector::<f64>::zeros(m);
        for i in 0..m {
            let u = ((k as f64) * alphas[i] + 0.5).fract();
            v[i] = inv_norm_cdf(u);
        }
        let n = v.norm();
        if n > 1e-8 {
            out.push(v / n);
        }
        k += 1;
    }
    out
}
