//! Family-aware distance dispatch: exact solvers where they exist, concave
//! maximization of the reference function otherwise.

use serde::Serialize;

use crate::error::Result;
use crate::group::{FamilyTag, GmStatus, GroupElement, StepTwoGroup};
use crate::refopt::{self, Classification};

/// How a squared distance was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    ConcaveMax,
    Oracle,
}

/// A squared distance with its provenance.
#[derive(Debug, Clone)]
pub struct DistanceAnswer {
    pub dsq: f64,
    pub method: Method,
    pub classification: Classification,
    /// Qualifiers a consumer must surface ("evidence", lower-bound labels).
    pub flags: Vec<String>,
}

/// Squared Carnot-Caratheodory distance from the identity to `point`.
pub fn distance(g: &StepTwoGroup, point: &GroupElement) -> Result<DistanceAnswer> {
    match g.family() {
        FamilyTag::N32 => {
            let dsq = crate::n32::n32_distance(&point.x, &point.t)?;
            let class = n32_classification(point);
            Ok(DistanceAnswer {
                dsq,
                method: Method::ClosedForm,
                classification: class,
                flags: vec![],
            })
        }
        FamilyTag::Ktype(_) => {
            let k = crate::ktype::kdist(g, point)?;
            Ok(DistanceAnswer {
                dsq: k.dsq,
                method: if k.used_fallback { Method::ConcaveMax } else { Method::ClosedForm },
                classification: k.classification,
                flags: vec![],
            })
        }
        FamilyTag::Cr(_) | FamilyTag::Heisenberg => {
            let c = crate::cr::cr_classify_dist(g, point)?;
            Ok(DistanceAnswer {
                dsq: c.dsq,
                method: Method::ClosedForm,
                classification: c.classification,
                flags: vec![],
            })
        }
        _ => {
            let rep = refopt::maximize_phi(g, point)?;
            let mut flags = Vec::new();
            if rep.lower_bound_only {
                flags.push("lower_bound_only".to_string());
            }
            if g.gm_status() == GmStatus::Unknown {
                flags.push("gm_evidence_only".to_string());
            }
            if !rep.converged {
                flags.push("not_converged".to_string());
            }
            Ok(DistanceAnswer {
                dsq: rep.dsq,
                method: Method::ConcaveMax,
                classification: rep.classification,
                flags,
            })
        }
    }
}

/// Convenience accessor used by probes and cross-checks.
pub fn distance_dsq(g: &StepTwoGroup, point: &GroupElement) -> Result<f64> {
    Ok(distance(g, point)?.dsq)
}

fn n32_classification(point: &GroupElement) -> Classification {
    if point.is_origin(1e-300) {
        return Classification::Origin;
    }
    let cut = crate::n32::n32_cut_classify(&point.x, &point.t);
    if !cut.in_cut {
        // linearly independent: smooth; interior maximizer exists only on the
        // upper region, boundary supremum otherwise
        let xn = point.x.norm();
        let xhat = &point.x / xn;
        let tp = &point.t / (xn * xn);
        let tpar = tp.dot(&xhat).abs();
        let tperp = (&tp - &xhat * tp.dot(&xhat)).norm();
        let (u1, u2) = (4.0 * tpar, 4.0 * tperp);
        return if u2 > 2.0 * (u1 / std::f64::consts::PI).sqrt() {
            Classification::InteriorNondegenerate
        } else {
            Classification::BoundaryMaximizer
        };
    }
    match cut.kind {
        Some(crate::n32::N32CutKind::AbnormalAxis) => Classification::InteriorDegenerate,
        _ => Classification::BoundaryMaximizer,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::prelude::*;

    #[test]
    fn dispatch_methods() {
        let n32 = StepTwoGroup::n32();
        let p = n32.element(vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.25]).unwrap();
        let a = distance(&n32, &p).unwrap();
        assert_eq!(a.method, Method::ClosedForm);
        assert_relative_eq!(
            a.dsq,
            crate::n32::n32_distance(&p.x, &p.t).unwrap(),
            max_relative = 1e-14
        );

        let k = StepTwoGroup::ktype(&DMatrix::identity(2, 2)).unwrap();
        let p = k.element(vec![1.0, 0.2, 0.0], vec![0.1, 0.0]).unwrap();
        assert_eq!(distance(&k, &p).unwrap().method, Method::ClosedForm);

        let p4 = StepTwoGroup::metivier_non_gm(0);
        let p = p4.element(vec![1.0, 0.0, 0.0, 0.5], vec![0.1, 0.0, 0.0]).unwrap();
        let a = distance(&p4, &p).unwrap();
        assert_eq!(a.method, Method::ConcaveMax);
    }

    #[test]
    fn closed_forms_agree_with_maximizer_on_gm_families() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(600);
        let k = StepTwoGroup::ktype(&DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.3, 0.0, 1.0, 0.1])).unwrap();
        for _ in 0..5 {
            let p = GroupElement::new(
                nalgebra::DVector::from_fn(k.q(), |_, _| rng.random::<f64>() + 0.1),
                nalgebra::DVector::from_fn(k.m(), |_, _| 0.2 * (rng.random::<f64>() - 0.5)),
            );
            let a = distance(&k, &p).unwrap();
            let rep = refopt::maximize_phi(&k, &p).unwrap();
            assert_relative_eq!(a.dsq, rep.dsq, max_relative = 1e-8);
        }
    }
}
