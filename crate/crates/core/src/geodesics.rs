//! Normal geodesics: closed-form exponential maps, an independent ODE
//! integrator, abnormality detection and cut times.

use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;

use crate::error::{GeoError, Result};
use crate::group::{FamilyTag, GroupElement, StepTwoGroup};
use crate::special::PI;
use crate::spectral::{self, exp_tilde};

/// Geodesic initial data `(zeta, 2*theta)`; `theta` is stored and the factor
/// two is applied internally wherever the dual variable `tau` is needed.
#[derive(Debug, Clone, PartialEq)]
pub struct Covector {
    pub zeta: DVector<f64>,
    pub theta: DVector<f64>,
}

impl Covector {
    pub fn new(zeta: DVector<f64>, theta: DVector<f64>) -> Self {
        Covector { zeta, theta }
    }

    /// The dual component `tau = 2 theta`.
    pub fn tau(&self) -> DVector<f64> {
        &self.theta * 2.0
    }

    pub fn length(&self) -> f64 {
        self.zeta.norm()
    }

    /// Rescales to unit speed: `(zeta, 2 theta) -> (zeta/|zeta|, 2 theta/|zeta|)`.
    pub fn arclength_normalized(&self) -> Covector {
        let n = self.zeta.norm();
        Covector::new(&self.zeta / n, &self.theta / n)
    }
}

/// Stable `1 - cos(y)`.
#[inline]
fn one_minus_cos(y: f64) -> f64 {
    let s = (0.5 * y).sin();
    2.0 * s * s
}

/// `1 - cos(y) - (y/2) sin(y)`; series below the cancellation regime.
fn coef_a(y: f64) -> f64 {
    if y.abs() < 2e-2 {
        let y2 = y * y;
        y2 * y2 * (1.0 / 24.0 + y2 * (-1.0 / 360.0 + y2 / 13440.0))
    } else {
        one_minus_cos(y) - 0.5 * y * y.sin()
    }
}

/// `y - sin(y)`.
fn coef_b(y: f64) -> f64 {
    if y.abs() < 2e-2 {
        let y2 = y * y;
        y * y2 * (1.0 / 6.0 + y2 * (-1.0 / 120.0 + y2 / 5040.0))
    } else {
        y - y.sin()
    }
}

/// `sin(y) - y/2 - (y/2) cos(y)`.
fn coef_c(y: f64) -> f64 {
    if y.abs() < 2e-2 {
        let y2 = y * y;
        y * y2 * (1.0 / 12.0 + y2 * (-1.0 / 80.0 + y2 / 2016.0))
    } else {
        y.sin() - 0.5 * y - 0.5 * y * y.cos()
    }
}

/// `sin(y)/y` with the limit 1 at 0.
#[inline]
fn sinc(y: f64) -> f64 {
    if y.abs() < 1e-8 {
        1.0 - y * y / 6.0
    } else {
        y.sin() / y
    }
}

/// Evaluates `exp(s (zeta, 2 theta))`, using the family closed form when one
/// exists and spectral calculus plus adaptive quadrature otherwise.
pub fn exp_map(g: &StepTwoGroup, c: &Covector, s: f64) -> Result<GroupElement> {
    check_covector(g, c)?;
    match g.family() {
        FamilyTag::Ktype(b) => Ok(exp_ktype(b, c, s)),
        FamilyTag::Cr(a) => Ok(exp_cr(a, c, s)),
        FamilyTag::Heisenberg => {
            let ones = DMatrix::<f64>::from_element(1, g.q() / 2, 1.0);
            Ok(exp_cr(&ones, c, s))
        }
        FamilyTag::N32 => Ok(exp_n32(c, s)),
        _ => exp_map_quadrature(g, c, s),
    }
}

/// Generic spectral-calculus path with the vertical component obtained by
/// adaptive quadrature; retained as a cross-check for the closed forms.
pub fn exp_map_quadrature(g: &StepTwoGroup, c: &Covector, s: f64) -> Result<GroupElement> {
    check_covector(g, c)?;
    let u = g.utuple();
    let theta = &c.theta;
    if theta.amax() == 0.0 {
        return Ok(GroupElement::new(&c.zeta * s, DVector::zeros(g.m())));
    }
    let ut = u.assemble(theta)?;
    let spec = spectral::spectrum(u, theta)?;
    let parts: Vec<(f64, DVector<f64>)> = spec
        .projections
        .iter()
        .enumerate()
        .map(|(l, p)| (spec.lambda(l), p * &c.zeta))
        .collect();

    let zeta_at = |r: f64| -> DVector<f64> {
        let mut cosv = DVector::zeros(u.q());
        let mut sincv = DVector::zeros(u.q());
        for (lam, pz) in &parts {
            let y = 2.0 * r * lam;
            cosv += pz * y.cos();
            sincv += pz * (2.0 * r * sinc(y));
        }
        cosv + &ut * sincv
    };
    let x_at = |r: f64| -> DVector<f64> {
        let mut av = DVector::zeros(u.q());
        let mut bv = DVector::zeros(u.q());
        for (lam, pz) in &parts {
            let y = 2.0 * r * lam;
            av += pz * (r * sinc(y));
            if *lam > 0.0 {
                bv += pz * (one_minus_cos(y) / (2.0 * lam * lam));
            }
        }
        av + &ut * bv
    };

    let x = x_at(s);
    let tol = 1e-12 * (1.0 + c.zeta.norm_squared() * s.abs());
    let integrand = |r: f64| u.bracket(&x_at(r), &zeta_at(r)) * 0.5;
    let t = crate::numerics::adaptive_quadrature(&integrand, 0.0, s, tol);
    Ok(GroupElement::new(x, t))
}

/// Closed form on Kolmogorov-type groups.
fn exp_ktype(b: &DMatrix<f64>, c: &Covector, s: f64) -> GroupElement {
    let p1 = b.nrows();
    let p0 = b.ncols();
    let w1 = c.zeta[0];
    let wstar = c.zeta.rows(1, p0).into_owned();
    let theta = &c.theta;
    let bt_theta = b.transpose() * theta;
    let bnorm = bt_theta.norm();
    if bnorm < 1e-300 {
        return GroupElement::new(&c.zeta * s, DVector::zeros(p1));
    }
    let cc = bt_theta.dot(&wstar); // theta . B w*
    let b2 = bnorm * bnorm;

    let stack = |a: f64, v: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(1 + p0);
        out[0] = a;
        out.rows_mut(1, p0).copy_from(v);
        out
    };
    let v1 = stack(cc, &(-&bt_theta * w1));
    let v2 = stack(w1, &(&bt_theta * (cc / b2)));
    let v3 = stack(0.0, &(&wstar - &bt_theta * (cc / b2)));

    let bw1 = b * &bt_theta * (-(w1 * w1 + cc * cc / b2));
    let bw2 = b * &wstar * (-cc) + b * &bt_theta * (cc * cc / b2);
    let bw3 = b * (&wstar - &bt_theta * (cc / b2)) * (-w1);

    let y = 2.0 * s * bnorm;
    let x = v1 * (one_minus_cos(y) / (2.0 * b2)) + v2 * (s * sinc(y)) + v3 * s;
    let t = bw1 * (-coef_b(y) / (8.0 * bnorm * b2))
        + bw2 * (-coef_c(y) / (4.0 * bnorm * b2))
        + bw3 * (coef_a(y) / (4.0 * b2));
    GroupElement::new(x, t)
}

/// Closed form on quadratic-CR groups.
fn exp_cr(a: &DMatrix<f64>, c: &Covector, s: f64) -> GroupElement {
    let (m, n) = (a.nrows(), a.ncols());
    let theta = &c.theta;
    let mut x = DVector::zeros(2 * n);
    let mut t = DVector::zeros(m);
    for k in 0..n {
        let alpha = a.column(k).dot(theta);
        let p = Complex64::new(c.zeta[2 * k], c.zeta[2 * k + 1]);
        let y = 2.0 * s * alpha;
        // z_k(s) = e^{-i s alpha} (sin(s alpha)/alpha) p
        let rot = Complex64::from_polar(1.0, -s * alpha);
        let amp = s * sinc(s * alpha);
        let z = rot * p * amp;
        x[2 * k] = z.re;
        x[2 * k + 1] = z.im;
        // t gains |p|^2 (y - sin y)/(8 alpha^2) a_k
        let coeff = if alpha.abs() < 1e-300 {
            0.0
        } else {
            coef_b(y) / (8.0 * alpha * alpha)
        };
        let w = p.norm_sqr() * coeff;
        for j in 0..m {
            t[j] += w * a[(j, k)];
        }
    }
    GroupElement::new(x, t)
}

/// Closed form on the free three-generator group.
fn exp_n32(c: &Covector, s: f64) -> GroupElement {
    let theta = &c.theta;
    let r = theta.norm();
    let w = &c.zeta;
    if r < 1e-300 {
        return GroupElement::new(w * s, DVector::zeros(3));
    }
    let th = theta / r;
    let c_par = w.dot(&th);
    let w_perp = w - &th * c_par;
    let cross = cross3(&th, w);
    let y = 2.0 * s * r;

    let x = &w_perp * (s * sinc(y)) + &th * (s * c_par) + &cross * (one_minus_cos(y) / (2.0 * r));

    let u1 = &cross * (-c_par);
    let u2 = &th * (w.norm_squared() - c_par * c_par);
    let u3 = &w_perp * (-c_par);
    let t = u1 * (coef_a(y) / (4.0 * r * r))
        + u2 * (coef_b(y) / (8.0 * r * r))
        + u3 * (coef_c(y) / (4.0 * r * r));
    GroupElement::new(x, t)
}

fn cross3(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])
}

/// RK4 integration of the Hamiltonian system with the dual variable frozen;
/// this is the independent oracle for `exp_map`.
pub fn exp_map_ode(g: &StepTwoGroup, c: &Covector, s: f64, steps: usize) -> Result<GroupElement> {
    check_covector(g, c)?;
    let steps = steps.max(16);
    let u = g.utuple();
    let ut = u.assemble(&c.theta)?; // U~(theta); tau = 2 theta handled below
    let q = g.q();
    let m = g.m();

    // state y = (x, t, xi); zeta = xi + U~(theta) x
    let deriv = |x: &DVector<f64>, xi: &DVector<f64>| -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let zeta = xi + &ut * x;
        let dx = zeta.clone();
        let dt = u.bracket(x, &zeta) * 0.5;
        let dxi = &ut * &zeta;
        (dx, dt, dxi)
    };

    let mut x = DVector::<f64>::zeros(q);
    let mut t = DVector::<f64>::zeros(m);
    let mut xi = c.zeta.clone();
    let h = s / steps as f64;
    for _ in 0..steps {
        let (k1x, k1t, k1xi) = deriv(&x, &xi);
        let (k2x, k2t, k2xi) = deriv(&(&x + &k1x * (h / 2.0)), &(&xi + &k1xi * (h / 2.0)));
        let (k3x, k3t, k3xi) = deriv(&(&x + &k2x * (h / 2.0)), &(&xi + &k2xi * (h / 2.0)));
        let (k4x, k4t, k4xi) = deriv(&(&x + &k3x * h), &(&xi + &k3xi * h));
        x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        t += (k1t + k2t * 2.0 + k3t * 2.0 + k4t) * (h / 6.0);
        xi += (k1xi + k2xi * 2.0 + k3xi * 2.0 + k4xi) * (h / 6.0);
    }
    Ok(GroupElement::new(x, t))
}

/// Abnormality certificate: the subspace of directions `sigma` with
/// `U(sigma) U(theta)^k zeta = 0` for all `k`.
#[derive(Debug, Clone)]
pub struct AbnormalityReport {
    pub abnormal: bool,
    /// Orthonormal basis of the admissible-shift subspace.
    pub sigma_basis: Vec<DVector<f64>>,
}

pub fn is_abnormal(g: &StepTwoGroup, c: &Covector) -> Result<AbnormalityReport> {
    check_covector(g, c)?;
    if c.zeta.norm() == 0.0 {
        return Err(GeoError::Precondition("is_abnormal requires zeta != 0".into()));
    }
    let u = g.utuple();
    let q = g.q();
    let m = g.m();
    let ut = u.assemble(&c.theta)?;

    // Krylov family zeta, U~ zeta, ..., U~^{q-1} zeta spans the full orbit
    let mut krylov = Vec::with_capacity(q);
    let mut v = c.zeta.clone();
    let vnorm = v.norm();
    for _ in 0..q {
        krylov.push(v.clone() / vnorm);
        v = &ut * &v;
        let n = v.norm();
        if n < 1e-14 * vnorm {
            break;
        }
        v /= n / vnorm;
    }

    // sigma -> (U~(sigma) v)_{v in K} is linear; assemble its matrix
    let rows = q * krylov.len();
    let mut mat = DMatrix::<f64>::zeros(rows, m);
    for (j, uj) in u.mats().iter().enumerate() {
        for (i, v) in krylov.iter().enumerate() {
            let col = uj * v;
            for r in 0..q {
                mat[(i * q + r, j)] = col[r];
            }
        }
    }
    // kernel of the stacked map via the m x m Gram matrix
    let gram = mat.transpose() * &mat;
    let eig = gram.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let thr = 1e-20 * lmax; // (1e-10 * sigma_max)^2
    let mut basis = Vec::new();
    for i in 0..m {
        if eig.eigenvalues[i].max(0.0) <= thr {
            basis.push(eig.eigenvectors.column(i).into_owned());
        }
    }
    Ok(AbnormalityReport {
        abnormal: !basis.is_empty(),
        sigma_basis: basis,
    })
}

/// Cut time of an arclength-parametrized geodesic on a maximal-multiplicity
/// group: `2 pi / min ||U(sigma)||` over the shifts preserving the geodesic.
#[derive(Debug, Clone)]
pub struct CutReport {
    pub cut_time: f64,
    pub minimizing_sigma: DVector<f64>,
    pub abnormal: bool,
    pub pi_subspace_dim: usize,
    /// False when the group's density property is only sampling evidence.
    pub gm_certified: bool,
    pub converged: bool,
}

pub fn cut_time_gm(g: &StepTwoGroup, c: &Covector) -> Result<CutReport> {
    let norm = c.zeta.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(GeoError::Precondition(format!(
            "cut_time_gm expects an arclength covector (|zeta| = 1), got |zeta| = {norm}"
        )));
    }
    let abn = is_abnormal(g, c)?;
    let tau = c.tau();
    let dim = abn.sigma_basis.len();
    let gm_certified = g.gm_status() == crate::group::GmStatus::CertifiedGm;

    if dim == 0 {
        let on = g.op_norm(&tau)?;
        return Ok(CutReport {
            cut_time: if on == 0.0 { f64::INFINITY } else { 2.0 * PI / on },
            minimizing_sigma: tau,
            abnormal: false,
            pi_subspace_dim: 0,
            gm_certified,
            converged: true,
        });
    }

    // basis matrix of Pi
    let m = g.m();
    let mut bmat = DMatrix::<f64>::zeros(m, dim);
    for (j, v) in abn.sigma_basis.iter().enumerate() {
        bmat.set_column(j, v);
    }
    // does 0 lie in tau + Pi?
    let coeffs = bmat
        .clone()
        .svd(true, true)
        .solve(&(-&tau), 1e-13)
        .unwrap_or_else(|_| DVector::zeros(dim));
    let resid = (&tau + &bmat * &coeffs).norm();
    if resid <= 1e-10 * (1.0 + tau.norm()) {
        return Ok(CutReport {
            cut_time: f64::INFINITY,
            minimizing_sigma: DVector::zeros(m),
            abnormal: true,
            pi_subspace_dim: dim,
            gm_certified,
            converged: true,
        });
    }

    // projected subgradient with Polyak-style steps on c -> ||U(tau + B c)||
    let fval = |cv: &DVector<f64>| -> Result<f64> { g.op_norm(&(&tau + &bmat * cv)) };
    let subgrad = |cv: &DVector<f64>| -> Result<DVector<f64>> {
        let sigma = &tau + &bmat * cv;
        let spec = spectral::spectrum(g.utuple(), &sigma)?;
        let on = spec.op_norm();
        let ptop = spec.projections.last().unwrap();
        // unit top eigenvector from the projection
        let mut v = DVector::<f64>::zeros(m.max(g.q()));
        let mut vq = DVector::<f64>::zeros(g.q());
        for k in 0..g.q() {
            let col = ptop.column(k);
            if col.norm() > 0.5 {
                vq = col.into_owned();
                break;
            }
        }
        let nv = vq.norm();
        if nv == 0.0 {
            return Ok(DVector::zeros(dim));
        }
        vq /= nv;
        let us = g.utuple().assemble(&sigma)?;
        let mut gsig = DVector::<f64>::zeros(m);
        for (j, uj) in g.utuple().mats().iter().enumerate() {
            // d(-U~(s)^2)/ds_j = -(U^j U~ + U~ U^j)
            let dm = -(uj * &us + &us * uj);
            gsig[j] = vq.dot(&(&dm * &vq)) / (2.0 * on);
        }
        v.rows_mut(0, m).copy_from(&gsig);
        Ok(bmat.transpose() * v.rows(0, m).into_owned())
    };

    let mut cbest = coeffs.clone();
    let mut fbest = fval(&cbest)?;
    // also try the zero shift
    let f0 = fval(&DVector::zeros(dim))?;
    if f0 < fbest {
        fbest = f0;
        cbest = DVector::zeros(dim);
    }
    let mut cur = cbest.clone();
    let mut fcur = fbest;
    let mut delta = (0.25 * fbest).max(1e-6);
    let mut stall = 0usize;
    let mut converged = false;
    for _ in 0..4000 {
        let grad = subgrad(&cur)?;
        let gn2 = grad.norm_squared();
        if gn2 < 1e-28 {
            converged = true;
            break;
        }
        let target = fbest - delta;
        let alpha = ((fcur - target) / gn2).max(0.0);
        cur -= grad * alpha;
        fcur = fval(&cur)?;
        if fcur < fbest - 1e-14 {
            fbest = fcur;
            cbest = cur.clone();
            stall = 0;
        } else {
            stall += 1;
            if stall >= 25 {
                delta *= 0.5;
                stall = 0;
                cur = cbest.clone();
                fcur = fbest;
                if delta <= 1e-9 * (1.0 + fbest) {
                    converged = true;
                    break;
                }
            }
        }
    }

    let sigma = &tau + &bmat * &cbest;
    Ok(CutReport {
        cut_time: if fbest == 0.0 { f64::INFINITY } else { 2.0 * PI / fbest },
        minimizing_sigma: sigma,
        abnormal: true,
        pi_subspace_dim: dim,
        gm_certified,
        converged,
    })
}

/// Symmetries of the exponential map expressed on covectors.
#[derive(Debug, Clone)]
pub enum TransportKind {
    /// `(zeta, tau) -> (r zeta, tau)`, endpoint `(r x, r^2 t)`; `r != 0`.
    Scale(f64),
    /// `(zeta, tau) -> (-e^{U~(tau)} zeta, -tau)`, endpoint `(-x, -t)`.
    Negate,
    /// Orthogonal transport on the free three-generator group.
    Rotate(Matrix3<f64>),
}

pub fn symmetry_transport(g: &StepTwoGroup, c: &Covector, kind: &TransportKind) -> Result<Covector> {
    check_covector(g, c)?;
    let out = match kind {
        TransportKind::Scale(r) => {
            if *r == 0.0 {
                return Err(GeoError::Precondition("scale transport requires r != 0".into()));
            }
            Covector::new(&c.zeta * *r, c.theta.clone())
        }
        TransportKind::Negate => {
            let tau = c.tau();
            let z = exp_tilde(g.utuple(), &tau, &c.zeta)?;
            Covector::new(-z, -&c.theta)
        }
        TransportKind::Rotate(o) => {
            if !matches!(g.family(), FamilyTag::N32) {
                return Err(GeoError::UnsupportedFamily {
                    op: "symmetry_transport(rotate)",
                    family: g.family().name().to_string(),
                });
            }
            let om = DMatrix::<f64>::from_fn(3, 3, |i, j| o[(i, j)]);
            let det = o.determinant();
            if (det.abs() - 1.0).abs() > 1e-10 {
                return Err(GeoError::Precondition("rotate transport requires O orthogonal".into()));
            }
            if det > 0.0 {
                Covector::new(&om * &c.zeta, &om * &c.theta)
            } else {
                let tau = c.tau();
                let z = exp_tilde(g.utuple(), &tau, &c.zeta)?;
                Covector::new(&om * z, &om * &c.theta)
            }
        }
    };

    // verify the endpoint transforms as claimed
    let before = exp_map(g, c, 1.0)?;
    let after = exp_map(g, &out, 1.0)?;
    let expect = match kind {
        TransportKind::Scale(r) => GroupElement::new(&before.x * *r, &before.t * (r * r)),
        TransportKind::Negate => GroupElement::new(-&before.x, -&before.t),
        TransportKind::Rotate(o) => {
            let om = DMatrix::<f64>::from_fn(3, 3, |i, j| o[(i, j)]);
            GroupElement::new(&om * &before.x, &om * &before.t)
        }
    };
    let resid = (&after.x - &expect.x).amax().max((&after.t - &expect.t).amax());
    let scale = 1.0 + expect.norm();
    if resid > 1e-10 * scale {
        return Err(GeoError::Consistency {
            what: "symmetry_transport endpoint",
            residual: resid,
        });
    }
    Ok(out)
}

fn check_covector(g: &StepTwoGroup, c: &Covector) -> Result<()> {
    if c.zeta.len() != g.q() {
        return Err(GeoError::DimensionMismatch {
            what: "covector: zeta",
            expected: g.q(),
            got: c.zeta.len(),
        });
    }
    if c.theta.len() != g.m() {
        return Err(GeoError::DimensionMismatch {
            what: "covector: theta",
            expected: g.m(),
            got: c.theta.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::StepTwoGroup;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_covector(rng: &mut impl Rng, g: &StepTwoGroup, theta_scale: f64) -> Covector {
        Covector::new(
            DVector::from_fn(g.q(), |_, _| rng.random::<f64>() * 2.0 - 1.0),
            DVector::from_fn(g.m(), |_, _| (rng.random::<f64>() * 2.0 - 1.0) * theta_scale),
        )
    }

    fn element_gap(a: &GroupElement, b: &GroupElement) -> f64 {
        (&a.x - &b.x).amax().max((&a.t - &b.t).amax())
    }

    fn test_groups() -> Vec<StepTwoGroup> {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let q = 5;
        let mats = (0..2)
            .map(|_| {
                let a = DMatrix::<f64>::from_fn(q, q, |_, _| rng.random::<f64>() - 0.5);
                (&a - a.transpose()) * 0.5
            })
            .collect();
        vec![
            StepTwoGroup::generic(mats).unwrap(),
            StepTwoGroup::ktype(&DMatrix::identity(3, 3)).unwrap(),
            StepTwoGroup::cr(&DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 0.0, 1.0, -1.0]).clone())
                .unwrap(),
            StepTwoGroup::n32(),
            StepTwoGroup::heisenberg(2),
        ]
    }

    #[test]
    fn zero_theta_gives_straight_ray() {
        for g in test_groups() {
            let mut rng = ChaCha8Rng::seed_from_u64(101);
            let mut c = random_covector(&mut rng, &g, 0.0);
            c.theta.fill(0.0);
            let e = exp_map(&g, &c, 0.7).unwrap();
            assert!((e.x - &c.zeta * 0.7).amax() < 1e-14);
            assert!(e.t.amax() < 1e-14);
        }
    }

    #[test]
    fn closed_forms_match_ode_oracle() {
        for g in test_groups() {
            let mut rng = ChaCha8Rng::seed_from_u64(102);
            for _ in 0..25 {
                let c = random_covector(&mut rng, &g, 1.5);
                let s = 0.3 + rng.random::<f64>();
                let closed = exp_map(&g, &c, s).unwrap();
                let ode = exp_map_ode(&g, &c, s, 2048).unwrap();
                assert!(
                    element_gap(&closed, &ode) < 1e-8,
                    "family {} disagrees with ODE: {:e}",
                    g.family().name(),
                    element_gap(&closed, &ode)
                );
            }
        }
    }

    #[test]
    fn closed_forms_match_quadrature_path() {
        for g in test_groups() {
            let mut rng = ChaCha8Rng::seed_from_u64(103);
            for _ in 0..25 {
                let c = random_covector(&mut rng, &g, 2.0);
                let s = 0.2 + rng.random::<f64>();
                let closed = exp_map(&g, &c, s).unwrap();
                let quad = exp_map_quadrature(&g, &c, s).unwrap();
                assert!(
                    element_gap(&closed, &quad) < 1e-10,
                    "family {} closed form vs quadrature: {:e}",
                    g.family().name(),
                    element_gap(&closed, &quad)
                );
            }
        }
    }

    #[test]
    fn ode_conserves_speed() {
        let g = StepTwoGroup::n32();
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let c = random_covector(&mut rng, &g, 1.0);
        // |zeta(s)| is constant since U~ is skew; check via finite differences of x
        let h = 1e-6;
        for &s in &[0.3, 0.7, 1.0] {
            let a = exp_map(&g, &c, s - h).unwrap();
            let b = exp_map(&g, &c, s + h).unwrap();
            let speed = ((b.x - a.x) / (2.0 * h)).norm();
            assert_relative_eq!(speed, c.zeta.norm(), max_relative = 1e-4);
        }
    }

    #[test]
    fn homogeneity_in_the_parameter() {
        for g in test_groups() {
            let mut rng = ChaCha8Rng::seed_from_u64(105);
            let c = random_covector(&mut rng, &g, 1.0);
            let alpha = 1.7;
            let scaled = Covector::new(&c.zeta * alpha, &c.theta * alpha);
            let lhs = exp_map(&g, &scaled, 0.6).unwrap();
            let rhs = exp_map(&g, &c, alpha * 0.6).unwrap();
            assert!(element_gap(&lhs, &rhs) < 1e-10);
        }
    }

    #[test]
    fn restriction_covector_identity() {
        // gamma^{s1,s2} has covector ((s2-s1) e^{2 s1 U~(theta)} w, 2 (s2-s1) theta)
        for g in test_groups() {
            let mut rng = ChaCha8Rng::seed_from_u64(106);
            let c = random_covector(&mut rng, &g, 1.0);
            let (s1, s2) = (0.3, 0.9);
            let g1 = exp_map(&g, &c, s1).unwrap();
            let g2 = exp_map(&g, &c, s2).unwrap();
            let lhs = g.multiply(&g.inverse(&g1), &g2);
            let w = exp_tilde(g.utuple(), &(&c.theta * (2.0 * s1)), &c.zeta).unwrap();
            let rc = Covector::new(w * (s2 - s1), &c.theta * (s2 - s1));
            let rhs = exp_map(&g, &rc, 1.0).unwrap();
            assert!(element_gap(&lhs, &rhs) < 1e-9);
        }
    }

    #[test]
    fn metivier_groups_have_no_abnormal_covectors() {
        let g = StepTwoGroup::heisenberg(2);
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        for _ in 0..20 {
            let c = random_covector(&mut rng, &g, 1.0);
            let rep = is_abnormal(&g, &c).unwrap();
            assert!(!rep.abnormal);
        }
        let p4 = StepTwoGroup::metivier_non_gm(1);
        for _ in 0..10 {
            let c = random_covector(&mut rng, &p4, 1.0);
            assert!(!is_abnormal(&p4, &c).unwrap().abnormal);
        }
    }

    #[test]
    fn cr_p5_covector_is_abnormal() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 0.0, 1.0, -1.0]);
        let g = StepTwoGroup::cr(&a).unwrap();
        // p = (2 sqrt(pi), 0, 0) complex, theta0 = (pi, 0)
        let mut zeta = DVector::zeros(6);
        zeta[0] = 2.0 * PI.sqrt();
        let c = Covector::new(zeta, DVector::from_vec(vec![PI, 0.0]));
        let rep = is_abnormal(&g, &c).unwrap();
        assert!(rep.abnormal);
        assert_eq!(rep.sigma_basis.len(), 1);
        // the kernel is spanned by e2
        let b = &rep.sigma_basis[0];
        assert!(b[0].abs() < 1e-10 && (b[1].abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn n32_abnormal_structure() {
        let g = StepTwoGroup::n32();
        // straight horizontal rays are abnormal: theta = 0 covector has U~(theta)^k w = w
        let c = Covector::new(
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
            DVector::from_vec(vec![2.0 * PI, 0.0, 0.0]),
        );
        // sigma must satisfy sigma x w = 0 and sigma x (theta x w)...: span {e1}
        let rep = is_abnormal(&g, &c).unwrap();
        assert!(rep.abnormal);
        assert_eq!(rep.sigma_basis.len(), 1);
        assert!((rep.sigma_basis[0][0].abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cut_time_strictly_normal_is_pi_ratio() {
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, -0.25]);
        let g = StepTwoGroup::ktype(&b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(108);
        for _ in 0..10 {
            let c = random_covector(&mut rng, &g, 0.8).arclength_normalized();
            let rep = cut_time_gm(&g, &c).unwrap();
            if !rep.abnormal {
                let expect = 2.0 * PI / g.op_norm(&c.tau()).unwrap();
                assert_relative_eq!(rep.cut_time, expect, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn cut_time_zero_tau_is_infinite() {
        let g = StepTwoGroup::heisenberg(1);
        let c = Covector::new(DVector::from_vec(vec![1.0, 0.0]), DVector::zeros(1));
        let rep = cut_time_gm(&g, &c).unwrap();
        assert!(rep.cut_time.is_infinite());
    }

    #[test]
    fn cut_time_ktype_vertical_kernel_is_infinite() {
        // w = (0, w*) with theta . B w* = 0 on a K-type group
        let g = StepTwoGroup::ktype(&DMatrix::identity(3, 3)).unwrap();
        let mut zeta = DVector::zeros(4);
        zeta[1] = 1.0; // w* = e1 in R^3
        let theta = DVector::from_vec(vec![0.0, 0.4, 0.3]); // theta . B w* = theta_1 = 0
        let c = Covector::new(zeta, theta).arclength_normalized();
        let rep = cut_time_gm(&g, &c).unwrap();
        assert!(rep.abnormal);
        assert!(rep.cut_time.is_infinite(), "cut time should be infinite, got {}", rep.cut_time);
    }

    #[test]
    fn cut_time_cr_abnormal_minimizes_over_shifts() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 0.0, 1.0, -1.0]);
        let g = StepTwoGroup::cr(&a).unwrap();
        let mut zeta = DVector::zeros(6);
        zeta[0] = 2.0 * PI.sqrt();
        let c = Covector::new(zeta, DVector::from_vec(vec![PI, 0.0])).arclength_normalized();
        let rep = cut_time_gm(&g, &c).unwrap();
        assert!(rep.abnormal);
        // minimum of max(|s1|, |s1 + s2|, |s1 - s2|) over the e2 shift at s2 = 0
        let expect = 2.0 * PI / PI.sqrt();
        assert_relative_eq!(rep.cut_time, expect, max_relative = 1e-6);
    }

    #[test]
    fn transport_scale_negate_rotate() {
        let g = StepTwoGroup::n32();
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        let c = random_covector(&mut rng, &g, 0.9);
        symmetry_transport(&g, &c, &TransportKind::Scale(2.5)).unwrap();
        symmetry_transport(&g, &c, &TransportKind::Negate).unwrap();
        let rot = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        symmetry_transport(&g, &c, &TransportKind::Rotate(rot)).unwrap();
        // improper orthogonal
        let refl = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        symmetry_transport(&g, &c, &TransportKind::Rotate(refl)).unwrap();
        // unsupported on other families
        let h = StepTwoGroup::heisenberg(1);
        let ch = random_covector(&mut rng, &h, 0.5);
        assert!(symmetry_transport(&h, &ch, &TransportKind::Rotate(rot)).is_err());
        // negate on a generic group
        for g in test_groups() {
            let c = random_covector(&mut rng, &g, 0.8);
            symmetry_transport(&g, &c, &TransportKind::Negate).unwrap();
        }
    }
}
