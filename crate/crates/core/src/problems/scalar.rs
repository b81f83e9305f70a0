//! Catalog of named scalar functions used as operator densities (h), source
//! nonlinearities (g), potentials (V), and path generators (Q, M).
//!
//! One entry plays two roles with different conventions:
//! - operator position (h, Q, M, V): plain evaluation, `power(r)` is z^r;
//! - source position (g): Lebesgue-exponent convention, `power(r)` is the
//!   odd map sign(t)|t|^{r-1} with primitive |t|^r / r, so r is the growth
//!   exponent of the potential well.

use serde::{Deserialize, Serialize};

use super::dual::{dual_f, dual_f_inv};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarFn {
    /// z^r in operator position; sign(t)|t|^{r-1} (primitive |t|^r/r) as a source.
    Power { r: f64 },
    /// Source k sign(t)|t|^{p-1} - sign(t)|t|^{q-1}: well with two powers.
    AllenCahn { k: f64, p: f64, q: f64 },
    Constant { c: f64 },
    /// 1/sqrt(1+z): density whose double primitive gives sqrt(1+|grad|^2)-1.
    CurvatureHPlus,
    /// 1/sqrt(1-z) below 1-theta, frozen at 1/sqrt(theta) above: total on [0,inf).
    CurvatureHMinusTruncated { theta: f64 },
    /// f(z)^2 for the quasilinear substitution f with f' = 1/sqrt(1+2f^2):
    /// generator (Q) role only.
    FSquared,
    /// sqrt(1+z^2): gradient-magnitude map (M) of the flat-area operator.
    Arclength,
    /// Piecewise-linear interpolation through sorted (x, y) knots.
    Tabulated { knots: Vec<(f64, f64)> },
}

impl ScalarFn {
    pub fn power(r: f64) -> Self {
        ScalarFn::Power { r }
    }

    pub fn constant(c: f64) -> Self {
        ScalarFn::Constant { c }
    }

    /// Parameter sanity plus a central-difference consistency check of the
    /// stated derivatives on the interior of the stated domain.
    pub fn validate(&self) -> Result<()> {
        match self {
            ScalarFn::Power { r } => {
                if !(r.is_finite() && *r > 0.0) {
                    return Err(Error::ScalarFn(format!("power exponent must be positive, got {r}")));
                }
            }
            ScalarFn::AllenCahn { k, p, q } => {
                if !(k.is_finite() && *p > 1.0 && *q > 1.0) {
                    return Err(Error::ScalarFn(format!(
                        "allen_cahn needs finite k and p, q > 1, got k={k}, p={p}, q={q}"
                    )));
                }
            }
            ScalarFn::Constant { c } => {
                if !c.is_finite() {
                    return Err(Error::ScalarFn("constant value must be finite".into()));
                }
            }
            ScalarFn::CurvatureHPlus | ScalarFn::FSquared | ScalarFn::Arclength => {}
            ScalarFn::CurvatureHMinusTruncated { theta } => {
                if !(*theta > 0.0 && *theta < 1.0) {
                    return Err(Error::ScalarFn(format!("truncation theta must be in (0,1), got {theta}")));
                }
            }
            ScalarFn::Tabulated { knots } => {
                if knots.len() < 2 {
                    return Err(Error::ScalarFn("tabulated needs at least 2 knots".into()));
                }
                for w in knots.windows(2) {
                    if !(w[0].0 < w[1].0) {
                        return Err(Error::ScalarFn("tabulated knots must be strictly increasing in x".into()));
                    }
                }
                if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                    return Err(Error::ScalarFn("tabulated knots must be finite".into()));
                }
            }
        }
        self.self_check()
    }

    /// Derivatives must match central differences within 1e-6 at probe points
    /// away from kinks and endpoint singularities.
    fn self_check(&self) -> Result<()> {
        let probes: Vec<f64> = match self {
            ScalarFn::CurvatureHMinusTruncated { theta } => {
                let cap = 1.0 - theta;
                vec![0.1 * cap, 0.4 * cap, 0.8 * cap, cap + 0.5, cap + 2.0]
            }
            ScalarFn::Tabulated { .. } => return Ok(()), // piecewise linear: d2 = 0 by construction
            _ => vec![0.2, 0.7, 1.3, 4.0],
        };
        for &z in &probes {
            let eps = 1e-5 * (1.0 + z.abs());
            // skip probes whose stencil straddles a kink
            if let ScalarFn::CurvatureHMinusTruncated { theta } = self {
                let cap = 1.0 - theta;
                if (z - cap).abs() < 2.0 * eps || ((z - eps) - cap).signum() != ((z + eps) - cap).signum() {
                    continue;
                }
            }
            let fd1 = (self.value(z + eps) - self.value(z - eps)) / (2.0 * eps);
            let fd2 = (self.value(z + eps) - 2.0 * self.value(z) + self.value(z - eps)) / (eps * eps);
            let scale1 = 1.0 + self.d1(z).abs();
            let scale2 = 1.0 + self.d2(z).abs();
            if (fd1 - self.d1(z)).abs() > 1e-6 * scale1 {
                return Err(Error::ScalarFn(format!(
                    "first derivative inconsistent at z={z}: stated {}, measured {fd1}",
                    self.d1(z)
                )));
            }
            if (fd2 - self.d2(z)).abs() > 1e-4 * scale2 {
                return Err(Error::ScalarFn(format!(
                    "second derivative inconsistent at z={z}: stated {}, measured {fd2}",
                    self.d2(z)
                )));
            }
        }
        Ok(())
    }

    /// Plain evaluation (operator position). Powers odd-extend to z < 0.
    pub fn value(&self, z: f64) -> f64 {
        match self {
            ScalarFn::Power { r } => signed_pow(z, *r),
            ScalarFn::AllenCahn { k, p, q } => {
                k * signed_pow(z, p - 1.0) - signed_pow(z, q - 1.0)
            }
            ScalarFn::Constant { c } => *c,
            ScalarFn::CurvatureHPlus => 1.0 / (1.0 + z).sqrt(),
            ScalarFn::CurvatureHMinusTruncated { theta } => {
                if z <= 1.0 - theta {
                    1.0 / (1.0 - z).sqrt()
                } else {
                    1.0 / theta.sqrt()
                }
            }
            ScalarFn::FSquared => {
                let f = dual_f(z);
                f * f
            }
            ScalarFn::Arclength => (1.0 + z * z).sqrt(),
            ScalarFn::Tabulated { knots } => interp(knots, z),
        }
    }

    pub fn d1(&self, z: f64) -> f64 {
        match self {
            ScalarFn::Power { r } => r * z.abs().powf(r - 1.0),
            ScalarFn::AllenCahn { k, p, q } => {
                k * (p - 1.0) * z.abs().powf(p - 2.0) - (q - 1.0) * z.abs().powf(q - 2.0)
            }
            ScalarFn::Constant { .. } => 0.0,
            ScalarFn::CurvatureHPlus => -0.5 * (1.0 + z).powf(-1.5),
            ScalarFn::CurvatureHMinusTruncated { theta } => {
                if z <= 1.0 - theta {
                    0.5 * (1.0 - z).powf(-1.5)
                } else {
                    0.0
                }
            }
            ScalarFn::FSquared => {
                let f = dual_f(z);
                2.0 * f / (1.0 + 2.0 * f * f).sqrt()
            }
            ScalarFn::Arclength => z / (1.0 + z * z).sqrt(),
            ScalarFn::Tabulated { knots } => interp_slope(knots, z),
        }
    }

    pub fn d2(&self, z: f64) -> f64 {
        match self {
            ScalarFn::Power { r } => r * (r - 1.0) * signed_pow(z, r - 2.0),
            ScalarFn::AllenCahn { k, p, q } => {
                k * (p - 1.0) * (p - 2.0) * signed_pow(z, p - 3.0)
                    - (q - 1.0) * (q - 2.0) * signed_pow(z, q - 3.0)
            }
            ScalarFn::Constant { .. } => 0.0,
            ScalarFn::CurvatureHPlus => 0.75 * (1.0 + z).powf(-2.5),
            ScalarFn::CurvatureHMinusTruncated { theta } => {
                if z <= 1.0 - theta {
                    0.75 * (1.0 - z).powf(-2.5)
                } else {
                    0.0
                }
            }
            ScalarFn::FSquared => {
                let f = dual_f(z);
                let s = 1.0 + 2.0 * f * f;
                2.0 / (s * s)
            }
            ScalarFn::Arclength => (1.0 + z * z).powf(-1.5),
            ScalarFn::Tabulated { .. } => 0.0,
        }
    }

    /// Inverse on the increasing branch (generator roles Q and M only).
    pub fn inverse(&self, w: f64) -> Result<f64> {
        match self {
            ScalarFn::Power { r } => {
                if w < 0.0 {
                    return Err(Error::ScalarFn(format!("power inverse needs w >= 0, got {w}")));
                }
                Ok(w.powf(1.0 / r))
            }
            ScalarFn::FSquared => {
                if w < 0.0 {
                    return Err(Error::ScalarFn(format!("f_squared inverse needs w >= 0, got {w}")));
                }
                Ok(dual_f_inv(w.sqrt()))
            }
            ScalarFn::Arclength => {
                if w < 1.0 - 1e-12 {
                    return Err(Error::ScalarFn(format!("arclength inverse needs w >= 1, got {w}")));
                }
                Ok((w * w - 1.0).max(0.0).sqrt())
            }
            _ => Err(Error::ScalarFn(format!("{self:?} has no increasing inverse"))),
        }
    }

    /// Antiderivative vanishing at 0, for density (h) usage: H(z) = int_0^z h.
    /// Only the kinds admissible in operator-density position support this.
    pub fn antiderivative(&self, z: f64) -> f64 {
        match self {
            ScalarFn::Power { r } => z.abs().powf(r + 1.0) / (r + 1.0) * z.signum(),
            ScalarFn::Constant { c } => c * z,
            ScalarFn::CurvatureHPlus => 2.0 * ((1.0 + z).sqrt() - 1.0),
            ScalarFn::CurvatureHMinusTruncated { theta } => {
                let cap = 1.0 - theta;
                if z <= cap {
                    2.0 * (1.0 - (1.0 - z).sqrt())
                } else {
                    2.0 * (1.0 - theta.sqrt()) + (z - cap) / theta.sqrt()
                }
            }
            _ => unreachable!("validated specs never use {self:?} as a density"),
        }
    }

    /// True if this entry may appear in operator-density position (h).
    pub fn density_capable(&self) -> bool {
        matches!(
            self,
            ScalarFn::Power { .. }
                | ScalarFn::Constant { .. }
                | ScalarFn::CurvatureHPlus
                | ScalarFn::CurvatureHMinusTruncated { .. }
        )
    }

    /// Source-position evaluation g(t): odd, Lebesgue-exponent convention for
    /// powers. Solvers keep states positive; the odd extension keeps flows
    /// defined through sign changes.
    pub fn source(&self, t: f64) -> f64 {
        match self {
            ScalarFn::Power { r } => t.signum() * t.abs().powf(r - 1.0),
            ScalarFn::AllenCahn { k, p, q } => {
                t.signum() * (k * t.abs().powf(p - 1.0) - t.abs().powf(q - 1.0))
            }
            ScalarFn::Constant { c } => t.signum() * c,
            ScalarFn::Tabulated { knots } => interp(knots, t),
            _ => unreachable!("validated specs never use {self:?} as a source"),
        }
    }

    /// Primitive of `source` vanishing at 0: G(t) = int_0^t g.
    pub fn source_primitive(&self, t: f64) -> f64 {
        match self {
            ScalarFn::Power { r } => t.abs().powf(*r) / r,
            ScalarFn::AllenCahn { k, p, q } => k * t.abs().powf(*p) / p - t.abs().powf(*q) / q,
            ScalarFn::Constant { c } => c * t.abs(),
            ScalarFn::Tabulated { knots } => interp_primitive(knots, t),
            _ => unreachable!("validated specs never use {self:?} as a source"),
        }
    }

    /// True if this entry may appear in source position (g).
    pub fn source_capable(&self) -> bool {
        matches!(
            self,
            ScalarFn::Power { .. }
                | ScalarFn::AllenCahn { .. }
                | ScalarFn::Constant { .. }
                | ScalarFn::Tabulated { .. }
        )
    }
}

fn signed_pow(z: f64, r: f64) -> f64 {
    if z == 0.0 {
        if r > 0.0 {
            0.0
        } else if r == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        z.signum() * z.abs().powf(r)
    }
}

fn interp(knots: &[(f64, f64)], z: f64) -> f64 {
    let n = knots.len();
    if z <= knots[0].0 {
        let (x0, y0) = knots[0];
        let (x1, y1) = knots[1];
        return y0 + (z - x0) * (y1 - y0) / (x1 - x0);
    }
    if z >= knots[n - 1].0 {
        let (x0, y0) = knots[n - 2];
        let (x1, y1) = knots[n - 1];
        return y1 + (z - x1) * (y1 - y0) / (x1 - x0);
    }
    let idx = knots.partition_point(|&(x, _)| x <= z).min(n - 1);
    let (x0, y0) = knots[idx - 1];
    let (x1, y1) = knots[idx];
    y0 + (z - x0) * (y1 - y0) / (x1 - x0)
}

fn interp_slope(knots: &[(f64, f64)], z: f64) -> f64 {
    let n = knots.len();
    let idx = knots.partition_point(|&(x, _)| x <= z).clamp(1, n - 1);
    let (x0, y0) = knots[idx - 1];
    let (x1, y1) = knots[idx];
    (y1 - y0) / (x1 - x0)
}

/// Exact integral of the piecewise-linear interpolant from 0 to t.
fn interp_primitive(knots: &[(f64, f64)], t: f64) -> f64 {
    let (lo, hi) = if t >= 0.0 { (0.0, t) } else { (t, 0.0) };
    // trapezoid over the interpolant, split at knots
    let mut xs = vec![lo];
    for &(x, _) in knots {
        if x > lo && x < hi {
            xs.push(x);
        }
    }
    xs.push(hi);
    let mut acc = 0.0;
    for w in xs.windows(2) {
        let (a, b) = (w[0], w[1]);
        acc += 0.5 * (interp(knots, a) + interp(knots, b)) * (b - a);
    }
    if t >= 0.0 {
        acc
    } else {
        -acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn power_value_and_derivatives() {
        let f = ScalarFn::power(2.0);
        f.validate().unwrap();
        assert_eq!(f.value(3.0), 9.0);
        assert_eq!(f.d1(3.0), 6.0);
        assert_eq!(f.d2(3.0), 2.0);
        assert_relative_eq!(f.antiderivative(2.0), 8.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn power_source_convention() {
        // power(r) as a source is sign(t)|t|^{r-1}, primitive |t|^r / r
        let f = ScalarFn::power(1.5);
        assert_relative_eq!(f.source(4.0), 2.0, max_relative = 1e-14);
        assert_relative_eq!(f.source(-4.0), -2.0, max_relative = 1e-14);
        assert_relative_eq!(f.source_primitive(4.0), 8.0 / 1.5, max_relative = 1e-14);
    }

    #[test]
    fn allen_cahn_well() {
        let f = ScalarFn::AllenCahn { k: 2.0, p: 2.0, q: 4.0 };
        f.validate().unwrap();
        // g = 2t - t^3 vanishes at sqrt(2) = k^{1/(q-p)}
        let root = 2f64.sqrt();
        assert!(f.source(root).abs() < 1e-14);
        assert!(f.source(1.0) > 0.0);
        assert!(f.source(2.0) < 0.0);
        assert_relative_eq!(f.source_primitive(1.0), 1.0 - 0.25, max_relative = 1e-14);
    }

    #[test]
    fn curvature_plus_antiderivative() {
        let f = ScalarFn::CurvatureHPlus;
        f.validate().unwrap();
        // (1/2) H(z^2) = sqrt(1+z^2) - 1
        let z: f64 = 0.8;
        assert_relative_eq!(
            0.5 * f.antiderivative(z * z),
            (1.0 + z * z).sqrt() - 1.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn curvature_minus_total_and_continuous() {
        let f = ScalarFn::CurvatureHMinusTruncated { theta: 0.25 };
        f.validate().unwrap();
        let cap = 0.75;
        assert_relative_eq!(f.value(cap - 1e-12), f.value(cap + 1e-12), max_relative = 1e-9);
        assert_eq!(f.value(1e9), 2.0); // 1/sqrt(0.25)
        // antiderivative continuous across the kink
        assert_relative_eq!(
            f.antiderivative(cap - 1e-9),
            f.antiderivative(cap + 1e-9),
            max_relative = 1e-7
        );
        assert!(f.antiderivative(5.0).is_finite());
    }

    #[test]
    fn tabulated_interp_and_primitive() {
        let f = ScalarFn::Tabulated {
            knots: vec![(-1.0, 1.0), (0.0, 0.0), (1.0, 1.0)],
        };
        f.validate().unwrap();
        assert_relative_eq!(f.value(0.5), 0.5, max_relative = 1e-14);
        assert_relative_eq!(f.value(-0.25), 0.25, max_relative = 1e-14);
        // integral of |t| from 0 to 1 is 1/2
        assert_relative_eq!(f.source_primitive(1.0), 0.5, max_relative = 1e-14);
    }

    #[test]
    fn generator_roles_invert_and_differentiate() {
        for f in [ScalarFn::FSquared, ScalarFn::Arclength, ScalarFn::power(2.5)] {
            f.validate().unwrap(); // central-difference self check covers d1, d2
            for &z in &[0.3, 1.0, 4.7] {
                let w = f.value(z);
                assert_relative_eq!(f.inverse(w).unwrap(), z, max_relative = 1e-9);
            }
        }
        assert!(ScalarFn::Arclength.inverse(0.5).is_err());
        assert!(ScalarFn::CurvatureHPlus.inverse(0.5).is_err());
        assert!(!ScalarFn::FSquared.density_capable());
        assert!(!ScalarFn::Arclength.source_capable());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ScalarFn::power(0.0).validate().is_err());
        assert!(ScalarFn::CurvatureHMinusTruncated { theta: 1.5 }.validate().is_err());
        assert!(ScalarFn::Tabulated { knots: vec![(0.0, 0.0)] }.validate().is_err());
        assert!(ScalarFn::Tabulated {
            knots: vec![(1.0, 0.0), (0.0, 0.0)]
        }
        .validate()
        .is_err());
    }
}
