//! Step-two group construction (generic and the closed-form families),
//! group operations and the Metivier / maximal-multiplicity structure checks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::numerics::unit_sphere_sequence;
use crate::special::PI;
use crate::spectral::{self, SkewTuple};

/// Family classification carried by a group; drives closed-form dispatch.
#[derive(Debug, Clone)]
pub enum FamilyTag {
    Generic,
    Heisenberg,
    /// Kolmogorov-type group built from a full-rank p1 x p0 matrix B.
    Ktype(DMatrix<f64>),
    /// Quadratic-CR group built from a full-rank m x n matrix A.
    Cr(DMatrix<f64>),
    /// Free step-two group on three generators.
    N32,
    DirectProduct,
    SaCompose,
    /// The Metivier pencil of corank 3 that fails the density condition.
    MetivierNonGm(usize),
}

impl FamilyTag {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyTag::Generic => "generic",
            FamilyTag::Heisenberg => "heisenberg",
            FamilyTag::Ktype(_) => "ktype",
            FamilyTag::Cr(_) => "cr",
            FamilyTag::N32 => "n32",
            FamilyTag::DirectProduct => "product",
            FamilyTag::SaCompose => "sa",
            FamilyTag::MetivierNonGm(_) => "p4",
        }
    }
}

/// Whether the group is known to have a dense set of nondegenerate maximizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GmStatus {
    CertifiedGm,
    CertifiedNotGm,
    Unknown,
}

/// A point `g = (x, t)` in exponential coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub x: DVector<f64>,
    pub t: DVector<f64>,
}

impl GroupElement {
    pub fn new(x: DVector<f64>, t: DVector<f64>) -> Self {
        GroupElement { x, t }
    }

    pub fn norm(&self) -> f64 {
        (self.x.norm_squared() + self.t.norm_squared()).sqrt()
    }

    pub fn is_origin(&self, tol: f64) -> bool {
        self.x.amax() <= tol && self.t.amax() <= tol
    }
}

/// A step-two Carnot group of type `(q, m, U)`.
#[derive(Debug, Clone)]
pub struct StepTwoGroup {
    utuple: SkewTuple,
    family: FamilyTag,
    gm_status: GmStatus,
    spec: GroupSpec,
}

impl StepTwoGroup {
    pub fn q(&self) -> usize {
        self.utuple.q()
    }

    pub fn m(&self) -> usize {
        self.utuple.m()
    }

    pub fn utuple(&self) -> &SkewTuple {
        &self.utuple
    }

    pub fn family(&self) -> &FamilyTag {
        &self.family
    }

    pub fn gm_status(&self) -> GmStatus {
        self.gm_status
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement::new(DVector::zeros(self.q()), DVector::zeros(self.m()))
    }

    /// Group law `(x,t)(x',t') = (x + x', t + t' + <Ux, x'>/2)`.
    pub fn multiply(&self, g: &GroupElement, gp: &GroupElement) -> GroupElement {
        let x = &g.x + &gp.x;
        let t = &g.t + &gp.t + self.utuple.bracket(&g.x, &gp.x) * 0.5;
        GroupElement::new(x, t)
    }

    pub fn inverse(&self, g: &GroupElement) -> GroupElement {
        GroupElement::new(-&g.x, -&g.t)
    }

    /// Anisotropic dilation `(x, t) -> (r x, r^2 t)`, `r > 0`.
    pub fn dilate(&self, g: &GroupElement, r: f64) -> GroupElement {
        assert!(r > 0.0, "dilation requires r > 0");
        GroupElement::new(&g.x * r, &g.t * (r * r))
    }

    pub fn op_norm(&self, theta: &DVector<f64>) -> Result<f64> {
        match &self.family {
            FamilyTag::N32 => Ok(theta.norm()),
            FamilyTag::Ktype(b) => Ok((b.transpose() * theta).norm()),
            FamilyTag::Cr(a) => Ok(a
                .column_iter()
                .map(|c| c.dot(theta).abs())
                .fold(0.0f64, f64::max)),
            FamilyTag::Heisenberg => Ok(theta.norm()),
            _ => spectral::op_norm(&self.utuple, theta),
        }
    }

    pub fn element(&self, x: Vec<f64>, t: Vec<f64>) -> Result<GroupElement> {
        if x.len() != self.q() {
            return Err(GeoError::DimensionMismatch {
                what: "element: x",
                expected: self.q(),
                got: x.len(),
            });
        }
        if t.len() != self.m() {
            return Err(GeoError::DimensionMismatch {
                what: "element: t",
                expected: self.m(),
                got: t.len(),
            });
        }
        if !x.iter().chain(t.iter()).all(|v| v.is_finite()) {
            return Err(GeoError::Precondition("point has non-finite entries".into()));
        }
        Ok(GroupElement::new(DVector::from_vec(x), DVector::from_vec(t)))
    }

    // ---- constructors ----

    pub fn generic(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let utuple = SkewTuple::new(mats)?;
        let spec = GroupSpec::from_tuple(&utuple);
        let gm_status = certify_by_corank(utuple.m());
        Ok(StepTwoGroup {
            utuple,
            family: FamilyTag::Generic,
            gm_status,
            spec,
        })
    }

    /// Heisenberg group H^{2n+1}; its pencil matches `cr` with a row of ones.
    pub fn heisenberg(n: usize) -> Self {
        let a = DMatrix::<f64>::from_element(1, n, 1.0);
        let mats = cr_pencil(&a);
        let utuple = SkewTuple::new(mats).expect("heisenberg pencil is valid");
        let spec = GroupSpec::Family(FamilySpec::Cr {
            a: matrix_rows(&a),
        });
        StepTwoGroup {
            utuple,
            family: FamilyTag::Heisenberg,
            gm_status: GmStatus::CertifiedGm,
            spec,
        }
    }

    /// Kolmogorov-type group from a full-rank `p1 x p0` matrix `B`, `p0 >= p1 >= 1`.
    pub fn ktype(b: &DMatrix<f64>) -> Result<Self> {
        let (p1, p0) = (b.nrows(), b.ncols());
        if p1 < 1 || p0 < p1 {
            return Err(GeoError::InvalidGroup(format!(
                "ktype B must be p1 x p0 with p0 >= p1 >= 1, got {p1} x {p0}"
            )));
        }
        if matrix_rank(b) < p1 {
            return Err(GeoError::InvalidGroup("ktype B must have full row rank".into()));
        }
        let mut mats = Vec::with_capacity(p1);
        for j in 0..p1 {
            // block ((0, b_j^T), (-b_j, 0)) on R x R^{p0}
            let mut u = DMatrix::<f64>::zeros(1 + p0, 1 + p0);
            for k in 0..p0 {
                u[(0, 1 + k)] = b[(j, k)];
                u[(1 + k, 0)] = -b[(j, k)];
            }
            mats.push(u);
        }
        let utuple = SkewTuple::new(mats)?;
        Ok(StepTwoGroup {
            utuple,
            family: FamilyTag::Ktype(b.clone()),
            gm_status: GmStatus::CertifiedGm,
            spec: GroupSpec::Family(FamilySpec::Ktype { b: matrix_rows(b) }),
        })
    }

    /// Quadratic-CR group from a full-rank `m x n` matrix `A`, `n >= m`.
    pub fn cr(a: &DMatrix<f64>) -> Result<Self> {
        let (m, n) = (a.nrows(), a.ncols());
        if m < 1 || n < m {
            return Err(GeoError::InvalidGroup(format!(
                "cr A must be m x n with n >= m >= 1, got {m} x {n}"
            )));
        }
        if matrix_rank(a) < m {
            return Err(GeoError::InvalidGroup("cr A must have full row rank".into()));
        }
        let utuple = SkewTuple::new(cr_pencil(a))?;
        Ok(StepTwoGroup {
            utuple,
            family: FamilyTag::Cr(a.clone()),
            gm_status: GmStatus::CertifiedGm,
            spec: GroupSpec::Family(FamilySpec::Cr { a: matrix_rows(a) }),
        })
    }

    /// Free step-two group with three generators: `U~(tau) x = tau x x`.
    pub fn n32() -> Self {
        let e = |i: usize, j: usize| {
            let mut u = DMatrix::<f64>::zeros(3, 3);
            u[(i, j)] = 1.0;
            u[(j, i)] = -1.0;
            u
        };
        // tau x x = U~(tau) x with U~(e1) = e(2,1), U~(e2) = e(0,2), U~(e3) = e(1,0)
        let mats = vec![e(2, 1), e(0, 2), e(1, 0)];
        let utuple = SkewTuple::new(mats).expect("n32 pencil is valid");
        StepTwoGroup {
            utuple,
            family: FamilyTag::N32,
            gm_status: GmStatus::CertifiedNotGm,
            spec: GroupSpec::Family(FamilySpec::N32),
        }
    }

    /// Direct product with block-diagonal pencils padded by zero blocks.
    pub fn direct_product(g1: &StepTwoGroup, g2: &StepTwoGroup) -> Result<Self> {
        let (q1, q2) = (g1.q(), g2.q());
        let q = q1 + q2;
        let mut mats = Vec::with_capacity(g1.m() + g2.m());
        for a in g1.utuple.mats() {
            let mut u = DMatrix::<f64>::zeros(q, q);
            u.view_mut((0, 0), (q1, q1)).copy_from(a);
            mats.push(u);
        }
        for a in g2.utuple.mats() {
            let mut u = DMatrix::<f64>::zeros(q, q);
            u.view_mut((q1, q1), (q2, q2)).copy_from(a);
            mats.push(u);
        }
        let utuple = SkewTuple::new(mats)?;
        let gm_status = match (g1.gm_status, g2.gm_status) {
            (GmStatus::CertifiedGm, GmStatus::CertifiedGm) => GmStatus::CertifiedGm,
            (GmStatus::CertifiedNotGm, _) | (_, GmStatus::CertifiedNotGm) => GmStatus::CertifiedNotGm,
            _ => GmStatus::Unknown,
        };
        Ok(StepTwoGroup {
            utuple,
            family: FamilyTag::DirectProduct,
            gm_status,
            spec: GroupSpec::Family(FamilySpec::Product {
                parts: vec![g1.spec.clone(), g2.spec.clone()],
            }),
        })
    }

    /// Same-corank composition: block-diagonal pencils sharing the theta slot.
    pub fn sa_compose(g1: &StepTwoGroup, g2: &StepTwoGroup) -> Result<Self> {
        if g1.m() != g2.m() {
            return Err(GeoError::InvalidGroup(format!(
                "sa composition requires equal corank, got {} and {}",
                g1.m(),
                g2.m()
            )));
        }
        let (q1, q2) = (g1.q(), g2.q());
        let q = q1 + q2;
        let mut mats = Vec::with_capacity(g1.m());
        for (a1, a2) in g1.utuple.mats().iter().zip(g2.utuple.mats()) {
            let mut u = DMatrix::<f64>::zeros(q, q);
            u.view_mut((0, 0), (q1, q1)).copy_from(a1);
            u.view_mut((q1, q1), (q2, q2)).copy_from(a2);
            mats.push(u);
        }
        let utuple = SkewTuple::new(mats)?;
        let gm_status = certify_by_corank(utuple.m());
        Ok(StepTwoGroup {
            utuple,
            family: FamilyTag::SaCompose,
            gm_status,
            spec: GroupSpec::Family(FamilySpec::Sa {
                parts: vec![g1.spec.clone(), g2.spec.clone()],
            }),
        })
    }

    /// Metivier group `G(4N+4, 3, U_N)` that is not of maximal-multiplicity
    /// type; built from a quaternionic H-type block plus the 4x4 tail pencil.
    pub fn metivier_non_gm(n: usize) -> Self {
        let q = 4 * n + 4;
        // left quaternion multiplications by i, j, k in the basis (1, i, j, k)
        let li = DMatrix::from_row_slice(4, 4, &[
            0.0, -1.0, 0.0, 0.0,
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, -1.0,
            0.0, 0.0, 1.0, 0.0,
        ]);
        let lj = DMatrix::from_row_slice(4, 4, &[
            0.0, 0.0, -1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
            1.0, 0.0, 0.0, 0.0,
            0.0, -1.0, 0.0, 0.0,
        ]);
        let lk = DMatrix::from_row_slice(4, 4, &[
            0.0, 0.0, 0.0, -1.0,
            0.0, 0.0, -1.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            1.0, 0.0, 0.0, 0.0,
        ]);
        // tail pencil: coefficient matrices of the displayed 4x4 skew form
        let x1 = DMatrix::from_row_slice(4, 4, &[
            0.0, 0.5, 0.0, 0.0,
            -0.5, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, -1.0,
            0.0, 0.0, 1.0, 0.0,
        ]);
        let x2 = DMatrix::from_row_slice(4, 4, &[
            0.0, 0.0, 0.5, 0.0,
            0.0, 0.0, 0.0, 1.0,
            -0.5, 0.0, 0.0, 0.0,
            0.0, -1.0, 0.0, 0.0,
        ]);
        let x3 = DMatrix::from_row_slice(4, 4, &[
            0.0, 0.0, 0.0, 0.5,
            0.0, 0.0, -1.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            -0.5, 0.0, 0.0, 0.0,
        ]);
        let quats = [li, lj, lk];
        let tails = [x1, x2, x3];
        let mut mats = Vec::with_capacity(3);
        for j in 0..3 {
            let mut u = DMatrix::<f64>::zeros(q, q);
            for blk in 0..n {
                // H-type part evaluated at tau/2
                u.view_mut((4 * blk, 4 * blk), (4, 4)).copy_from(&(&quats[j] * 0.5));
            }
            u.view_mut((4 * n, 4 * n), (4, 4)).copy_from(&tails[j]);
            mats.push(u);
        }
        let utuple = SkewTuple::new(mats).expect("p4 pencil is valid");
        StepTwoGroup {
            utuple,
            family: FamilyTag::MetivierNonGm(n),
            gm_status: GmStatus::CertifiedNotGm,
            spec: GroupSpec::Family(FamilySpec::P4 { n }),
        }
    }

    // ---- JSON spec ----

    pub fn from_spec(spec: &GroupSpec) -> Result<Self> {
        match spec {
            GroupSpec::Generic { q, m, u } => {
                if u.len() != *m {
                    return Err(GeoError::InvalidGroup(format!(
                        "expected {m} pencil matrices, got {}",
                        u.len()
                    )));
                }
                let mut mats = Vec::with_capacity(*m);
                for (j, flat) in u.iter().enumerate() {
                    if flat.len() != q * q {
                        return Err(GeoError::InvalidGroup(format!(
                            "U[{j}] must hold {} row-major entries for q = {q}, got {}",
                            q * q,
                            flat.len()
                        )));
                    }
                    mats.push(DMatrix::from_row_slice(*q, *q, flat));
                }
                Self::generic(mats)
            }
            GroupSpec::Family(f) => match f {
                FamilySpec::Ktype { b } => Self::ktype(&rows_matrix(b, "B")?),
                FamilySpec::Cr { a } => Self::cr(&rows_matrix(a, "A")?),
                FamilySpec::N32 => Ok(Self::n32()),
                FamilySpec::P4 { n } => Ok(Self::metivier_non_gm(*n)),
                FamilySpec::Product { parts } => {
                    if parts.len() != 2 {
                        return Err(GeoError::InvalidGroup(format!(
                            "product requires exactly 2 parts, got {}",
                            parts.len()
                        )));
                    }
                    Self::direct_product(&Self::from_spec(&parts[0])?, &Self::from_spec(&parts[1])?)
                }
                FamilySpec::Sa { parts } => {
                    if parts.len() != 2 {
                        return Err(GeoError::InvalidGroup(format!(
                            "sa requires exactly 2 parts, got {}",
                            parts.len()
                        )));
                    }
                    Self::sa_compose(&Self::from_spec(&parts[0])?, &Self::from_spec(&parts[1])?)
                }
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: GroupSpec = serde_json::from_str(text)
            .map_err(|e| GeoError::InvalidGroup(format!("group spec JSON: {e}")))?;
        Self::from_spec(&spec)
    }

    pub fn to_spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.spec).expect("group spec serializes")
    }

    // ---- structure evidence ----

    /// Sampling evidence for the Metivier property (`U(theta)` invertible for
    /// all `theta != 0`). A returned witness certifies failure; a `true`
    /// verdict is evidence only.
    pub fn metivier_evidence(&self, samples: usize) -> MetivierReport {
        let m = self.m();
        let mut dirs: Vec<DVector<f64>> = (0..m)
            .map(|i| {
                let mut v = DVector::zeros(m);
                v[i] = 1.0;
                v
            })
            .collect();
        dirs.extend(unit_sphere_sequence(m, samples.max(1)));
        for theta in &dirs {
            let spec = match spectral::spectrum(&self.utuple, theta) {
                Ok(s) => s,
                Err(_) => continue,
            };
            if spec.eigvalsq[0] < 1e-12 {
                return MetivierReport {
                    is_metivier_evidence: false,
                    witness: Some(theta.clone()),
                    samples: dirs.len(),
                };
            }
        }
        MetivierReport {
            is_metivier_evidence: true,
            witness: None,
            samples: dirs.len(),
        }
    }

    /// Sampling estimate of the minimal multiplicity of the top eigenvalue of
    /// `U(theta)^2`; passes when the estimate reaches the corank, or the
    /// corank is at most two (which certifies the property outright).
    pub fn gm_sufficient(&self, samples: usize) -> GmReport {
        let m = self.m();
        let mut estimate = usize::MAX;
        let mut dirs: Vec<DVector<f64>> = (0..m)
            .map(|i| {
                let mut v = DVector::zeros(m);
                v[i] = 1.0;
                v
            })
            .collect();
        dirs.extend(unit_sphere_sequence(m, samples.max(1)));
        for theta in &dirs {
            if let Ok(spec) = spectral::spectrum(&self.utuple, theta) {
                estimate = estimate.min(*spec.multiplicities.last().unwrap());
            }
        }
        let certified = m <= 2;
        GmReport {
            passes: certified || estimate >= m,
            m_lower_estimate: estimate,
            certified_by_corank: certified,
            samples: dirs.len(),
        }
    }

    /// Membership in the open reference set `{theta : ||U(theta)|| < pi}`.
    pub fn omega_star_contains(&self, theta: &DVector<f64>) -> Result<bool> {
        Ok(self.op_norm(theta)? < PI - 1e-12)
    }
}

/// Result of the Metivier sampling check.
#[derive(Debug, Clone)]
pub struct MetivierReport {
    pub is_metivier_evidence: bool,
    pub witness: Option<DVector<f64>>,
    pub samples: usize,
}

/// Result of the maximal-multiplicity sampling check.
#[derive(Debug, Clone)]
pub struct GmReport {
    pub passes: bool,
    pub m_lower_estimate: usize,
    pub certified_by_corank: bool,
    pub samples: usize,
}

fn certify_by_corank(m: usize) -> GmStatus {
    if m <= 2 {
        GmStatus::CertifiedGm
    } else {
        GmStatus::Unknown
    }
}

fn cr_pencil(a: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let (m, n) = (a.nrows(), a.ncols());
    let mut mats = Vec::with_capacity(m);
    for j in 0..m {
        let mut u = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for k in 0..n {
            u[(2 * k, 2 * k + 1)] = a[(j, k)];
            u[(2 * k + 1, 2 * k)] = -a[(j, k)];
        }
        mats.push(u);
    }
    mats
}

fn matrix_rank(a: &DMatrix<f64>) -> usize {
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    svd.singular_values
        .iter()
        .filter(|s| **s > 1e-12 * smax.max(1.0))
        .count()
}

fn matrix_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

fn rows_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(GeoError::InvalidGroup(format!("{name} must not be empty")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(GeoError::InvalidGroup(format!("{name} must be rectangular and nonempty")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// JSON-facing group description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupSpec {
    Family(FamilySpec),
    Generic {
        q: usize,
        m: usize,
        /// m matrices, each as row-major `q*q` floats.
        #[serde(rename = "U")]
        u: Vec<Vec<f64>>,
    },
}

impl GroupSpec {
    fn from_tuple(u: &SkewTuple) -> Self {
        GroupSpec::Generic {
            q: u.q(),
            m: u.m(),
            u: u.mats()
                .iter()
                .map(|a| {
                    let mut flat = Vec::with_capacity(u.q() * u.q());
                    for i in 0..a.nrows() {
                        for j in 0..a.ncols() {
                            flat.push(a[(i, j)]);
                        }
                    }
                    flat
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FamilySpec {
    Ktype {
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
    },
    Cr {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
    },
    N32,
    Product {
        parts: Vec<GroupSpec>,
    },
    Sa {
        parts: Vec<GroupSpec>,
    },
    P4 {
        #[serde(rename = "N")]
        n: usize,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_element(rng: &mut impl Rng, g: &StepTwoGroup) -> GroupElement {
        GroupElement::new(
            DVector::from_fn(g.q(), |_, _| rng.random::<f64>() * 2.0 - 1.0),
            DVector::from_fn(g.m(), |_, _| rng.random::<f64>() * 2.0 - 1.0),
        )
    }

    #[test]
    fn multiply_identity_and_inverse() {
        let g = StepTwoGroup::n32();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_element(&mut rng, &g);
        let o = g.identity();
        let ao = g.multiply(&a, &o);
        assert!((ao.x.clone() - &a.x).amax() < 1e-15 && (ao.t.clone() - &a.t).amax() < 1e-15);
        let inv = g.inverse(&a);
        let prod = g.multiply(&a, &inv);
        assert!(prod.is_origin(1e-14), "g * g^-1 must be the identity");
    }

    #[test]
    fn heisenberg_product_with_symplectic_generator() {
        // standard symplectic generator J with <J e1, e2> = 1
        let j = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let g = StepTwoGroup::generic(vec![j]).unwrap();
        let a = g.element(vec![1.0, 0.0], vec![0.0]).unwrap();
        let b = g.element(vec![0.0, 1.0], vec![0.0]).unwrap();
        let c = g.multiply(&a, &b);
        assert_relative_eq!(c.t[0], 0.5, epsilon = 1e-15);
        assert_eq!(c.x.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn associativity_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, -1.0]);
        let groups = vec![
            StepTwoGroup::n32(),
            StepTwoGroup::ktype(&b).unwrap(),
            StepTwoGroup::heisenberg(2),
        ];
        for g in &groups {
            for _ in 0..334 {
                let a = random_element(&mut rng, g);
                let bb = random_element(&mut rng, g);
                let c = random_element(&mut rng, g);
                let lhs = g.multiply(&g.multiply(&a, &bb), &c);
                let rhs = g.multiply(&a, &g.multiply(&bb, &c));
                assert!((lhs.x - rhs.x).amax() < 1e-12);
                assert!((lhs.t - rhs.t).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn dilation_is_homomorphism() {
        let g = StepTwoGroup::n32();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &r in &[0.5, 2.0, 3.7] {
            let a = random_element(&mut rng, &g);
            let b = random_element(&mut rng, &g);
            let lhs = g.multiply(&g.dilate(&a, r), &g.dilate(&b, r));
            let rhs = g.dilate(&g.multiply(&a, &b), r);
            assert!((lhs.x - rhs.x).amax() < 1e-12);
            assert!((lhs.t - rhs.t).amax() < 1e-12);
        }
        let a = random_element(&mut rng, &g);
        let round = g.dilate(&g.dilate(&a, 2.0), 0.5);
        assert!((round.x - a.x).amax() < 1e-15);
    }

    #[test]
    fn ktype_identity_is_star_graph() {
        let g = StepTwoGroup::ktype(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(g.q(), 4);
        assert_eq!(g.m(), 3);
    }

    #[test]
    fn cr_scalar_one_equals_heisenberg_pencil() {
        let g1 = StepTwoGroup::cr(&DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let g2 = StepTwoGroup::heisenberg(1);
        for (a, b) in g1.utuple().mats().iter().zip(g2.utuple().mats()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn cr_identity_matrix_is_heisenberg_product() {
        let g = StepTwoGroup::cr(&DMatrix::identity(2, 2)).unwrap();
        let h = StepTwoGroup::heisenberg(1);
        let hh = StepTwoGroup::direct_product(&h, &h).unwrap();
        // same pencil up to the interleaving of coordinates: compare spectra
        let theta = DVector::from_vec(vec![0.7, -0.3]);
        assert_relative_eq!(
            g.op_norm(&theta).unwrap(),
            hh.op_norm(&theta).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn product_reference_set_splits_on_axes() {
        let h = StepTwoGroup::heisenberg(1);
        let k = StepTwoGroup::ktype(&DMatrix::from_row_slice(1, 2, &[2.0, 0.0])).unwrap();
        let p = StepTwoGroup::direct_product(&h, &k).unwrap();
        // axis-aligned theta sees only its own factor
        let mut th = DVector::zeros(2);
        th[0] = 0.9;
        assert_relative_eq!(
            p.op_norm(&th).unwrap(),
            h.op_norm(&DVector::from_vec(vec![0.9])).unwrap(),
            max_relative = 1e-12
        );
        th[0] = 0.0;
        th[1] = 0.7;
        assert_relative_eq!(
            p.op_norm(&th).unwrap(),
            k.op_norm(&DVector::from_vec(vec![0.7])).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn p4_eigenvalue_structure() {
        for n in [0usize, 1, 2] {
            let g = StepTwoGroup::metivier_non_gm(n);
            assert_eq!(g.q(), 4 * n + 4);
            let mut rng = ChaCha8Rng::seed_from_u64(10 + n as u64);
            let tau = DVector::from_fn(3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let spec = spectral::spectrum(g.utuple(), &tau).unwrap();
            let r2 = tau.norm_squared();
            // eigenvalues |tau|^2 (multiplicity 2) and |tau|^2/4 (multiplicity 4n+2)
            assert_eq!(spec.eigvalsq.len(), 2);
            assert_relative_eq!(spec.eigvalsq[0], r2 / 4.0, max_relative = 1e-10);
            assert_relative_eq!(spec.eigvalsq[1], r2, max_relative = 1e-10);
            assert_eq!(spec.multiplicities[0], 4 * n + 2);
            assert_eq!(spec.multiplicities[1], 2);
        }
    }

    #[test]
    fn metivier_evidence_examples() {
        let k = StepTwoGroup::ktype(&DMatrix::identity(2, 2)).unwrap();
        let rep = k.metivier_evidence(64);
        assert!(!rep.is_metivier_evidence);
        assert!(rep.witness.is_some());

        let p4 = StepTwoGroup::metivier_non_gm(1);
        assert!(p4.metivier_evidence(64).is_metivier_evidence);

        let h = StepTwoGroup::heisenberg(1);
        assert!(h.metivier_evidence(64).is_metivier_evidence);
    }

    #[test]
    fn gm_sufficient_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // corank 1 and 2 random groups are certified
        for m in [1usize, 2] {
            let q = 5;
            let mats = (0..m)
                .map(|_| {
                    let a = DMatrix::<f64>::from_fn(q, q, |_, _| rng.random::<f64>() - 0.5);
                    (&a - a.transpose()) * 0.5
                })
                .collect();
            let g = StepTwoGroup::generic(mats).unwrap();
            assert!(g.gm_sufficient(32).passes);
        }
        let n32 = StepTwoGroup::n32();
        let rep = n32.gm_sufficient(64);
        assert!(!rep.passes);
        assert_eq!(rep.m_lower_estimate, 2);

        let p4 = StepTwoGroup::metivier_non_gm(1);
        let rep = p4.gm_sufficient(64);
        assert!(!rep.passes);
        assert_eq!(rep.m_lower_estimate, 2);
    }

    #[test]
    fn json_round_trip_preserves_pencil() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.0, 1.5]);
        let g = StepTwoGroup::ktype(&b).unwrap();
        let text = g.to_json();
        let g2 = StepTwoGroup::from_json(&text).unwrap();
        for (a, c) in g.utuple().mats().iter().zip(g2.utuple().mats()) {
            assert_eq!(a, c, "reloaded pencil must be identical");
        }
        // generic spec with flat row-major entries
        let text = r#"{"q":2,"m":1,"U":[[0.0,1.0,-1.0,0.0]]}"#;
        let g3 = StepTwoGroup::from_json(text).unwrap();
        assert_eq!(g3.q(), 2);
        let text2 = g3.to_json();
        let g4 = StepTwoGroup::from_json(&text2).unwrap();
        assert_eq!(g3.utuple().mats()[0], g4.utuple().mats()[0]);
    }

    #[test]
    fn invalid_specs_name_the_violation() {
        // not skew-symmetric
        let err = StepTwoGroup::from_json(r#"{"q":2,"m":1,"U":[[0.0,1.0,1.0,0.0]]}"#);
        assert!(format!("{}", err.unwrap_err()).contains("skew-symmetric"));
        // rank-deficient family matrix
        let err = StepTwoGroup::cr(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        assert!(format!("{}", err.unwrap_err()).contains("full row rank"));
        // linearly dependent tuple
        let j = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let err = SkewTuple::new(vec![j.clone(), j * 2.0]);
        assert!(format!("{}", err.unwrap_err()).contains("linearly dependent"));
    }
}
