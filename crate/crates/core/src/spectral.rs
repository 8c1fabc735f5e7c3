//! Skew-symmetric pencil assembly and spectral calculus on `U(theta)^2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{GeoError, Result};
use crate::special::PI;

/// Relative skew-symmetry tolerance for pencil validation.
const SKEW_TOL: f64 = 1e-12;

/// An m-tuple of linearly independent q x q real skew-symmetric matrices.
#[derive(Debug, Clone)]
pub struct SkewTuple {
    q: usize,
    m: usize,
    mats: Vec<DMatrix<f64>>,
}

impl SkewTuple {
    pub fn new(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        if mats.is_empty() {
            return Err(GeoError::InvalidGroup("empty matrix tuple (m = 0)".into()));
        }
        let q = mats[0].nrows();
        if q == 0 {
            return Err(GeoError::InvalidGroup("zero-dimensional first layer (q = 0)".into()));
        }
        for (j, a) in mats.iter().enumerate() {
            if a.nrows() != q || a.ncols() != q {
                return Err(GeoError::InvalidGroup(format!(
                    "matrix U[{j}] is {}x{}, expected {q}x{q}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            let amax = a.amax().max(f64::MIN_POSITIVE);
            let skew_residual = (a + a.transpose()).amax();
            if skew_residual > SKEW_TOL * amax {
                return Err(GeoError::InvalidGroup(format!(
                    "matrix U[{j}] is not skew-symmetric: |A + A^T|_max = {skew_residual:.3e} > {SKEW_TOL:.0e} * |A|_max"
                )));
            }
            if !a.iter().all(|v| v.is_finite()) {
                return Err(GeoError::InvalidGroup(format!("matrix U[{j}] has non-finite entries")));
            }
        }
        let m = mats.len();
        // linear independence: rank of the m x q^2 matrix of flattened pencils
        let mut stacked = DMatrix::<f64>::zeros(m, q * q);
        for (j, a) in mats.iter().enumerate() {
            for (idx, v) in a.iter().enumerate() {
                stacked[(j, idx)] = *v;
            }
        }
        let svd = stacked.svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > 1e-12 * smax.max(1.0))
            .count();
        if rank < m {
            return Err(GeoError::InvalidGroup(format!(
                "the {m} pencil matrices are linearly dependent (rank {rank})"
            )));
        }
        Ok(SkewTuple { q, m, mats })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mats(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    /// `U~(theta) = sum_j theta_j U^(j)`.
    pub fn assemble(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        if theta.len() != self.m {
            return Err(GeoError::DimensionMismatch {
                what: "assemble_u: theta",
                expected: self.m,
                got: theta.len(),
            });
        }
        let mut out = DMatrix::<f64>::zeros(self.q, self.q);
        for (j, a) in self.mats.iter().enumerate() {
            if theta[j] != 0.0 {
                out += a * theta[j];
            }
        }
        Ok(out)
    }

    /// `<Ux, x'>_j = <U^(j) x, x'>`, the bracket entering the group law.
    pub fn bracket(&self, x: &DVector<f64>, xp: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.m, self.mats.iter().map(|a| (a * x).dot(xp)))
    }
}

/// Spectral decomposition of the positive semidefinite `U(theta)^2 = -U~(theta)^2`,
/// with eigenvalues clustered by a multiplicity-aware tolerance.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Cluster representatives `lambda_l^2`, ascending.
    pub eigvalsq: Vec<f64>,
    /// Symmetric orthogonal projections onto the clustered eigenspaces.
    pub projections: Vec<DMatrix<f64>>,
    pub multiplicities: Vec<usize>,
}

impl Spectrum {
    /// Nonnegative root of the l-th clustered eigenvalue.
    pub fn lambda(&self, l: usize) -> f64 {
        self.eigvalsq[l].max(0.0).sqrt()
    }

    pub fn op_norm(&self) -> f64 {
        self.lambda(self.eigvalsq.len() - 1)
    }

    /// `sum_l f(lambda_l) P_l x`.
    pub fn apply(&self, f: impl Fn(f64) -> f64, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        for (l, p) in self.projections.iter().enumerate() {
            out += p * x * f(self.lambda(l));
        }
        out
    }

    /// `sum_l f(lambda_l) |P_l x|^2`.
    pub fn quadratic_form(&self, f: impl Fn(f64) -> f64, x: &DVector<f64>) -> f64 {
        self.projections
            .iter()
            .enumerate()
            .map(|(l, p)| f(self.lambda(l)) * (p * x).norm_squared())
            .sum()
    }
}

/// Clustered eigendecomposition of `-U~(theta)^2`.
pub fn spectrum(u: &SkewTuple, theta: &DVector<f64>) -> Result<Spectrum> {
    let ut = u.assemble(theta)?;
    let mut s = -(&ut * &ut);
    // enforce exact symmetry before factorizing
    let st = s.transpose();
    s = (s + st) * 0.5;
    let eig = s.symmetric_eigen();
    let q = u.q();
    let mut idx: Vec<usize> = (0..q).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lmax = eig.eigenvalues[idx[q - 1]].max(0.0);
    let tol = 1e-9 * (1.0 + lmax);

    let mut eigvalsq = Vec::new();
    let mut projections = Vec::new();
    let mut multiplicities = Vec::new();
    let mut i = 0;
    while i < q {
        let mut j = i;
        let mut acc = 0.0;
        while j < q && (eig.eigenvalues[idx[j]] - eig.eigenvalues[idx[i]]).abs() <= tol {
            acc += eig.eigenvalues[idx[j]];
            j += 1;
        }
        let mut p = DMatrix::<f64>::zeros(q, q);
        for &k in &idx[i..j] {
            let v = eig.eigenvectors.column(k);
            p += &v * v.transpose();
        }
        eigvalsq.push((acc / (j - i) as f64).max(0.0));
        projections.push(p);
        multiplicities.push(j - i);
        i = j;
    }
    Ok(Spectrum {
        eigvalsq,
        projections,
        multiplicities,
    })
}

/// Operator norm `||U(theta)|| = sqrt(lambda_max(-U~(theta)^2))`.
pub fn op_norm(u: &SkewTuple, theta: &DVector<f64>) -> Result<f64> {
    Ok(spectrum(u, theta)?.op_norm())
}

/// `sum_l f(lambda_l) P_l x` for an even scalar function `f`; the caller lists
/// the poles of `f` (typically multiples of pi) so proximity can be rejected.
pub fn apply_fn(
    u: &SkewTuple,
    theta: &DVector<f64>,
    f: impl Fn(f64) -> f64,
    poles: &[f64],
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.len() != u.q() {
        return Err(GeoError::DimensionMismatch {
            what: "apply_fn: x",
            expected: u.q(),
            got: x.len(),
        });
    }
    let spec = spectrum(u, theta)?;
    for l in 0..spec.eigvalsq.len() {
        let lam = spec.lambda(l);
        for &p in poles {
            if (lam - p).abs() < 1e-9 {
                return Err(GeoError::Pole {
                    pole: p,
                    dist: (lam - p).abs(),
                });
            }
        }
    }
    Ok(spec.apply(f, x))
}

/// Poles of `lambda cot lambda` / `lambda / sin lambda` not exceeding `lmax`.
pub fn pi_poles(lmax: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 1.0;
    while k * PI <= lmax + 1.0 {
        out.push(k * PI);
        k += 1.0;
    }
    out
}

/// Operator norm together with a subgradient in `theta` (the gradient where
/// the top eigenvalue is simple).
pub fn op_norm_with_gradient(u: &SkewTuple, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let spec = spectrum(u, theta)?;
    let on = spec.op_norm();
    let m = u.m();
    if on == 0.0 {
        return Ok((0.0, DVector::zeros(m)));
    }
    let ptop = spec.projections.last().unwrap();
    let mut v = DVector::<f64>::zeros(u.q());
    let mut best = -1.0;
    for k in 0..u.q() {
        let col = ptop.column(k);
        let n = col.norm();
        if n > best {
            best = n;
            v = col.into_owned();
        }
    }
    v /= v.norm();
    let ut = u.assemble(theta)?;
    let mut grad = DVector::<f64>::zeros(m);
    for (j, uj) in u.mats().iter().enumerate() {
        let dm = -(uj * &ut + &ut * uj);
        grad[j] = v.dot(&(&dm * &v)) / (2.0 * on);
    }
    Ok((on, grad))
}

/// `exp(U~(theta)) x = cos(U) x + U~ (sin U / U) x`, evaluated spectrally.
pub fn exp_tilde(u: &SkewTuple, theta: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    let ut = u.assemble(theta)?;
    let spec = spectrum(u, theta)?;
    let cos_part = spec.apply(|l| l.cos(), x);
    let sinc_part = spec.apply(|l| if l < 1e-150 { 1.0 } else { l.sin() / l }, x);
    Ok(cos_part + ut * sinc_part)
}
