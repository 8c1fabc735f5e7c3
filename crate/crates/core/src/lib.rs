pub mod cr;
pub mod distance;
pub mod error;
pub mod geodesics;
pub mod group;
pub mod ktype;
pub mod n32;
pub mod numerics;
pub mod refopt;
pub mod special;
pub mod spectral;

pub use error::{GeoError, Result};
pub use geodesics::{Covector, CutReport};
pub use group::{FamilyTag, GmStatus, GroupElement, GroupSpec, StepTwoGroup};
pub use refopt::{Classification, DistanceReport, PhiEval};
pub use spectral::{SkewTuple, Spectrum};
