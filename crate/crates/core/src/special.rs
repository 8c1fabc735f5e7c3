//! Scalar functions built from `s·cot(s)`.
//!
//! Everything here is evaluated through the reduction `s = k·pi + u` with
//! `|u| <= pi/2`, so that trigonometric cancellation near the poles `k·pi`
//! never degrades accuracy. Near `s = 0` truncated Taylor series are used.

use crate::error::{GeoError, Result};

pub const PI: f64 = std::f64::consts::PI;

/// Threshold below which the Taylor series around 0 are used.
const SERIES_CUT: f64 = 0.25;

/// Three-term split of pi for an accurate argument reduction (the leading
/// parts carry 26 significant bits each, so small integer multiples stay exact).
const PI_A: f64 = 3.141_592_621_803_283_7;
const PI_B: f64 = 3.178_650_942_459_171_3e-8;
const PI_C: f64 = 1.224_646_799_147_353_2e-16;

/// Splits `s >= 0` as `s = k*pi + u` with `|u| <= pi/2`; the residual is
/// computed against the three-term pi so near-pole evaluations keep full
/// relative accuracy.
#[inline]
pub fn pole_reduce(s: f64) -> (i64, f64) {
    let k = (s / PI).round() as i64;
    let kf = k as f64;
    (k, ((s - kf * PI_A) - kf * PI_B) - kf * PI_C)
}

/// Distance from `s` to the nearest pole `k*pi`, `k >= 1`. Returns
/// `f64::INFINITY` when the nearest multiple is `k = 0`.
pub fn dist_to_pole(s: f64) -> f64 {
    let (k, u) = pole_reduce(s.abs());
    if k == 0 {
        f64::INFINITY
    } else {
        u.abs()
    }
}

/// Fails when `s` is within `tol` of a pole of `cot`.
pub fn check_pole(s: f64, tol: f64) -> Result<()> {
    let (k, u) = pole_reduce(s.abs());
    if k >= 1 && u.abs() < tol {
        Err(GeoError::Pole {
            pole: (k as f64) * PI,
            dist: u.abs(),
        })
    } else {
        Ok(())
    }
}

/// `s cot s`, finite limit 1 at `s = 0`.
pub fn scot(s: f64) -> f64 {
    1.0 - f(s)
}

/// `f(s) = 1 - s cot s`.
pub fn f(s: f64) -> f64 {
    let a = s.abs();
    let (k, u) = pole_reduce(a);
    if k == 0 && a < SERIES_CUT {
        let x = a * a;
        // 1 - s cot s = s^2/3 + s^4/45 + 2 s^6/945 + s^8/4725 + ...
        x * (1.0 / 3.0
            + x * (1.0 / 45.0
                + x * (2.0 / 945.0 + x * (1.0 / 4725.0 + x * (2.0 / 93555.0 + x * 1382.0 / 638512875.0)))))
    } else {
        // cot(k*pi + u) = cot(u)
        1.0 - a * u.cos() / u.sin()
    }
}

/// `mu(s) = f'(s) = (2s - sin 2s) / (2 sin^2 s)`; odd in `s`.
pub fn mu(s: f64) -> f64 {
    let sign = if s < 0.0 { -1.0 } else { 1.0 };
    let a = s.abs();
    let (_, u) = pole_reduce(a);
    if a < SERIES_CUT {
        let x = a * a;
        sign * a
            * (2.0 / 3.0
                + x * (4.0 / 45.0
                    + x * (4.0 / 315.0 + x * (8.0 / 4725.0 + x * (20.0 / 93555.0 + x * 16584.0 / 638512875.0)))))
    } else {
        let su = u.sin();
        sign * (2.0 * a - (2.0 * u).sin()) / (2.0 * su * su)
    }
}

/// `psi(s) = f(s)/s^2`.
pub fn psi(s: f64) -> f64 {
    let a = s.abs();
    if a < SERIES_CUT {
        let x = a * a;
        1.0 / 3.0
            + x * (1.0 / 45.0
                + x * (2.0 / 945.0 + x * (1.0 / 4725.0 + x * (2.0 / 93555.0 + x * 1382.0 / 638512875.0))))
    } else {
        f(a) / (a * a)
    }
}

/// `psi'(s) = (mu(s) - 2 s psi(s)) / s^2`.
pub fn psi_prime(s: f64) -> f64 {
    let sign = if s < 0.0 { -1.0 } else { 1.0 };
    let a = s.abs();
    if a < SERIES_CUT {
        let x = a * a;
        sign * a
            * (2.0 / 45.0
                + x * (8.0 / 945.0 + x * (6.0 / 4725.0 + x * (16.0 / 93555.0 + x * 13820.0 / 638512875.0))))
    } else {
        sign * (mu(a) - 2.0 * a * psi(a)) / (a * a)
    }
}

/// `mu(s)/s`, even, with the limit `2/3` at zero.
pub fn mu_over_s(s: f64) -> f64 {
    let a = s.abs();
    if a < SERIES_CUT {
        let x = a * a;
        2.0 / 3.0 + x * (4.0 / 45.0 + x * (4.0 / 315.0 + x * 8.0 / 4725.0))
    } else {
        mu(a) / a
    }
}

/// `psi'(s)/s`, even, with the limit `2/45` at zero.
pub fn psi_prime_over_s(s: f64) -> f64 {
    let a = s.abs();
    if a < SERIES_CUT {
        let x = a * a;
        2.0 / 45.0 + x * (8.0 / 945.0 + x * (6.0 / 4725.0 + x * 16.0 / 93555.0))
    } else {
        psi_prime(a) / a
    }
}

/// `psi''(s) = (mu'(s) - 2 psi(s) - 2 s psi'(s))/s^2 - 2 psi'(s)/s`.
pub fn psi_second(s: f64) -> f64 {
    let a = s.abs();
    if a < SERIES_CUT {
        let x = a * a;
        2.0 / 45.0 + x * (8.0 / 315.0 + x * 2.0 / 315.0)
    } else {
        (mu_prime(a) - 2.0 * psi(a) - 2.0 * a * psi_prime(a)) / (a * a) - 2.0 * psi_prime(a) / a
    }
}

/// `mu'(s) = 2 f(s) / sin^2 s = 2 psi(s) (s / sin s)^2`; positive on `(-pi, pi)`.
pub fn mu_prime(s: f64) -> f64 {
    let a = s.abs();
    if a == 0.0 {
        return 2.0 / 3.0;
    }
    let (_, u) = pole_reduce(a);
    let r = a / u.sin();
    2.0 * psi(a) * r * r
}

/// `h(s) = psi'(s) s^3 sin^2 s = s^2 + s sin s cos s - 2 sin^2 s`; positive for `s > 0`.
pub fn h(s: f64) -> f64 {
    let a = s.abs();
    if a < 0.5 {
        let su = a.sin();
        psi_prime(a) * a * a * a * su * su
    } else {
        let (_, u) = pole_reduce(a);
        let (su, cu) = (u.sin(), u.cos());
        a * a + a * su * cu - 2.0 * su * su
    }
}

/// `phi0(s) = (s/sin s)^2 - 1`.
pub fn phi0(s: f64) -> f64 {
    let a = s.abs();
    let (_, u) = pole_reduce(a);
    if a < SERIES_CUT {
        let x = a * a;
        x * (1.0 / 3.0 + x * (1.0 / 15.0 + x * (2.0 / 189.0 + x / 675.0)))
    } else {
        let r = a / u.sin();
        r * r - 1.0
    }
}

/// `phi1(s) = (s^2 - sin^2 s) / (s - sin s cos s) = phi0(s)/mu(s)`; strictly
/// increasing on `(0, inf)`.
pub fn phi1(s: f64) -> f64 {
    let a = s.abs();
    if a == 0.0 {
        0.0
    } else if a < SERIES_CUT {
        phi0(a) / mu(a)
    } else {
        let (_, u) = pole_reduce(a);
        let (su, cu) = (u.sin(), u.cos());
        (a * a - su * su) / (a - su * cu)
    }
}

/// `phi2(s) = s (s^2 - sin^2 s) / h(s) = phi0(s)/(s^2 psi'(s))`; strictly
/// increasing on each `(k pi, theta_k)`.
pub fn phi2(s: f64) -> f64 {
    let a = s.abs();
    if a == 0.0 {
        f64::INFINITY
    } else if a < SERIES_CUT {
        phi0(a) / (a * a * psi_prime(a))
    } else {
        let (_, u) = pole_reduce(a);
        let su = u.sin();
        a * (a * a - su * su) / h(a)
    }
}

/// `phi3(s) = sqrt(phi1(s) phi2(s))`; strictly increasing on `(pi, inf)`.
pub fn phi3(s: f64) -> f64 {
    (phi1(s) * phi2(s)).sqrt()
}

/// `K3(v1, v2) = 2 psi(r) + psi'(r) v2^2 / r` with `r = |v|`.
pub fn k3(v1: f64, v2: f64) -> f64 {
    let r = v1.hypot(v2);
    2.0 * psi(r) + psi_prime(r) / r * v2 * v2
}

/// The unique root of `tan s = s` in `(k pi, (k + 1/2) pi)`.
pub fn theta_root(k: u32) -> f64 {
    assert!(k >= 1);
    let kpi = (k as f64) * PI;
    // fixed point s = k*pi + atan(s), then Newton polish on tan(u) - s
    let mut s = kpi + (kpi).atan();
    for _ in 0..40 {
        s = kpi + s.atan();
    }
    for _ in 0..3 {
        let u = s - kpi;
        let t = u.tan();
        let g = t - s;
        let dg = t * t; // d/ds (tan s - s) = tan^2 s
        if dg.abs() > 0.0 {
            s -= g / dg;
        }
    }
    s
}

/// Bundled values of the scalar functions at one abscissa.
#[derive(Debug, Clone, Copy)]
pub struct SpecialValues {
    pub f: f64,
    pub mu: f64,
    pub psi: f64,
    pub psi_prime: f64,
    pub h: f64,
    pub phi0: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
}

/// Evaluates the full bundle; errors near poles of the `cot`-based members
/// unless `allow_pole_limit` is set (in which case they come out infinite).
pub fn eval_all(s: f64, allow_pole_limit: bool) -> Result<SpecialValues> {
    if !allow_pole_limit {
        check_pole(s, 1e-12)?;
    }
    Ok(SpecialValues {
        f: f(s),
        mu: mu(s),
        psi: psi(s),
        psi_prime: psi_prime(s),
        h: h(s),
        phi0: phi0(s),
        phi1: phi1(s),
        phi2: phi2(s),
        phi3: phi3(s),
    })
}
