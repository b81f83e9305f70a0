//! Randomized and deterministic oracles for the pointwise, scalar, and
//! operator inequalities behind the path-convexity arguments, plus directed
//! counterexample search in the parameter regimes where they must fail.
//!
//! Every oracle is deterministic given (seed, trials, grid): trials draw from
//! counter-derived substreams of the master seed and merge in trial order.

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fields::{smoothed_positive_field, substream_rng};
use crate::grid::{gradient_cells, integrate_map, poisson_solve, Grid, GridFunction};
use crate::problems::{dual_f, Family, Problem, ScalarFn, State, VectorMode};

/// Upper truncation of the admissible M-band: samples stay where M(z) <= GAMMA_BAND.
pub const GAMMA_BAND: f64 = 1e6;
/// Slack below which a negative margin counts as a violation.
pub const SLACK: f64 = 1e-10;
/// |margin| below this threshold reads as an equality witness.
pub const EQUALITY_TOL: f64 = 1e-10;

/// Outcome of one randomized oracle. Margins are normalized slack values
/// (positive = inequality satisfied strictly); `worst_margin` is the most
/// negative (or least positive) margin seen.
#[derive(Debug, Clone, Serialize)]
pub struct IneqReport {
    pub name: String,
    pub params: Value,
    pub trials: u64,
    pub violations: u64,
    pub worst_margin: f64,
    /// The violating input, present iff violations > 0 (first-seen, so
    /// reproducible for a fixed seed).
    pub witness: Option<Value>,
}

impl IneqReport {
    fn new(name: &str, params: Value) -> Self {
        IneqReport {
            name: name.into(),
            params,
            trials: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            witness: None,
        }
    }

    fn record(&mut self, margin: f64, witness: impl FnOnce() -> Value) {
        self.trials += 1;
        if margin < self.worst_margin {
            self.worst_margin = margin;
        }
        if margin < -SLACK {
            self.violations += 1;
            if self.witness.is_none() {
                self.witness = Some(witness());
            }
        }
    }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// (LHS, RHS) of the pointwise mixing bound M(|grad gamma(t)|) <=
/// (1-t) M(|grad u|) + t M(|grad v|) at one scalar datum, with the path value
/// gamma = Q^{-1}((1-t)Q(u) + tQ(v)) and its chain-rule gradient.
pub fn gin_values(
    q: &ScalarFn,
    m: &ScalarFn,
    u: f64,
    v: f64,
    grad_u: [f64; 2],
    grad_v: [f64; 2],
    t: f64,
) -> Result<(f64, f64)> {
    let gamma = q.inverse((1.0 - t) * q.value(u) + t * q.value(v))?;
    let qp_gamma = q.d1(gamma);
    if qp_gamma <= 0.0 {
        return Err(Error::ScalarFn(format!("generator slope vanished at {gamma}")));
    }
    let a = (1.0 - t) * q.d1(u) / qp_gamma;
    let b = t * q.d1(v) / qp_gamma;
    let gx = a * grad_u[0] + b * grad_v[0];
    let gy = a * grad_u[1] + b * grad_v[1];
    let lhs = m.value((gx * gx + gy * gy).sqrt());
    let mag_u = (grad_u[0] * grad_u[0] + grad_u[1] * grad_u[1]).sqrt();
    let mag_v = (grad_v[0] * grad_v[0] + grad_v[1] * grad_v[1]).sqrt();
    let rhs = (1.0 - t) * m.value(mag_u) + t * m.value(mag_v);
    Ok((lhs, rhs))
}

/// Randomized pointwise check of the mixing bound over the admissible band
/// M^{-1}([M(0), GAMMA_BAND]). Values sample log-uniformly in [0.1, 10]
/// (the positive floor keeps Q'(0) singularities out of the data).
pub fn check_gin(q: &ScalarFn, m: &ScalarFn, trials: u64, seed: u64) -> Result<IneqReport> {
    q.validate()?;
    m.validate()?;
    let band_hi = m.inverse(GAMMA_BAND.min(m.value(1e3)).max(m.value(0.0) + 1.0))?;
    let mut report = IneqReport::new(
        "gin",
        json!({"q": q, "m": m, "seed": seed, "band_hi": band_hi, "value_range": [0.1, 10.0]}),
    );
    for trial in 0..trials {
        let mut rng = substream_rng(seed, trial);
        let u = log_uniform(&mut rng, 0.1, 10.0);
        let v = log_uniform(&mut rng, 0.1, 10.0);
        let (mu, mv) = (
            log_uniform(&mut rng, 1e-3, band_hi),
            log_uniform(&mut rng, 1e-3, band_hi),
        );
        let (au, av) = (
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        let gu = [mu * au.cos(), mu * au.sin()];
        let gv = [mv * av.cos(), mv * av.sin()];
        let t = rng.gen_range(0.0..1.0);
        let (lhs, rhs) = gin_values(q, m, u, v, gu, gv, t)?;
        let scale = 1.0f64.max(lhs.abs()).max(rhs.abs());
        report.record((rhs - lhs) / scale, || {
            json!({"trial": trial, "u": u, "v": v, "grad_u": gu, "grad_v": gv, "t": t,
                   "lhs": lhs, "rhs": rhs})
        });
    }
    Ok(report)
}

/// Concavity certificate for F(z1, z2) = F1(z1) F2(z2) with F1 = Q' o Q^{-1}
/// and F2 = M^{-1}, over a rectangular band lattice. Closed-form first and
/// second derivatives keep the determinant exact to round-off.
#[derive(Debug, Clone, Serialize)]
pub struct HessianReport {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    /// -F1 F1'' / (F1')^2 along z1 (the first factor of the product form).
    pub factor1: Vec<f64>,
    /// -F2 F2'' / (F2')^2 along z2.
    pub factor2: Vec<f64>,
    /// Hessian determinant F1 F1'' F2 F2'' - (F1' F2')^2, flattened z1-major.
    pub det: Vec<f64>,
    pub det_min: f64,
    pub det_max: f64,
    /// min over the lattice of factor1 * factor2; >= 1 certifies concavity.
    pub product_min: f64,
    pub certified: bool,
}

/// (F, F', F'') of F1 = Q' o Q^{-1} at z1, in closed form.
fn f1_triple(q: &ScalarFn, z1: f64) -> Result<(f64, f64, f64)> {
    match q {
        ScalarFn::Power { r } => {
            let a = (r - 1.0) / r;
            Ok((
                r * z1.powf(a),
                (r - 1.0) * z1.powf(-1.0 / r),
                -((r - 1.0) / r) * z1.powf(-1.0 / r - 1.0),
            ))
        }
        ScalarFn::FSquared => {
            let s = 1.0 + 2.0 * z1;
            Ok((
                2.0 * z1.sqrt() / s.sqrt(),
                1.0 / (z1.sqrt() * s.powf(1.5)),
                -(1.0 + 8.0 * z1) / (2.0 * z1.powf(1.5) * s.powf(2.5)),
            ))
        }
        _ => Err(Error::ScalarFn(format!("{q:?} unsupported as a generator here"))),
    }
}

/// (F, F', F'') of F2 = M^{-1} at z2, in closed form.
fn f2_triple(m: &ScalarFn, z2: f64) -> Result<(f64, f64, f64)> {
    match m {
        ScalarFn::Power { r } => {
            let a = 1.0 / r;
            Ok((
                z2.powf(a),
                a * z2.powf(a - 1.0),
                a * (a - 1.0) * z2.powf(a - 2.0),
            ))
        }
        ScalarFn::Arclength => {
            let s = z2 * z2 - 1.0;
            if s <= 0.0 {
                return Err(Error::ScalarFn(format!("arclength band needs z2 > 1, got {z2}")));
            }
            Ok((s.sqrt(), z2 / s.sqrt(), -s.powf(-1.5)))
        }
        _ => Err(Error::ScalarFn(format!("{m:?} unsupported as a magnitude map here"))),
    }
}

pub fn hessian_criterion(
    q: &ScalarFn,
    m: &ScalarFn,
    z1_range: (f64, f64),
    z2_range: (f64, f64),
    resolution: usize,
) -> Result<HessianReport> {
    if resolution < 3 {
        return Err(Error::ScalarFn("lattice needs at least 3 points per axis".into()));
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..resolution)
            .map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64)
            .collect()
    };
    let z1 = axis(z1_range);
    let z2 = axis(z2_range);
    let t1: Vec<(f64, f64, f64)> = z1.iter().map(|&z| f1_triple(q, z)).collect::<Result<_>>()?;
    let t2: Vec<(f64, f64, f64)> = z2.iter().map(|&z| f2_triple(m, z)).collect::<Result<_>>()?;
    let factor1: Vec<f64> = t1.iter().map(|(f, fp, fpp)| -f * fpp / (fp * fp)).collect();
    let factor2: Vec<f64> = t2.iter().map(|(f, fp, fpp)| -f * fpp / (fp * fp)).collect();
    let mut det = Vec::with_capacity(resolution * resolution);
    let mut det_min = f64::INFINITY;
    let mut det_max = f64::NEG_INFINITY;
    let mut product_min = f64::INFINITY;
    for (f1, fac1) in t1.iter().zip(&factor1) {
        for (f2, fac2) in t2.iter().zip(&factor2) {
            let d = f1.0 * f1.2 * f2.0 * f2.2 - (f1.1 * f2.1) * (f1.1 * f2.1);
            det.push(d);
            det_min = det_min.min(d);
            det_max = det_max.max(d);
            product_min = product_min.min(fac1 * fac2);
        }
    }
    // concavity of the product needs each diagonal term nonpositive and the
    // determinant nonnegative; in factored form both diagonal signs fold into
    // factor >= 0 and the determinant into the product >= 1
    let factors_ok = factor1.iter().chain(&factor2).all(|&f| f >= -SLACK);
    let certified = factors_ok && product_min >= 1.0 - SLACK;
    Ok(HessianReport {
        z1,
        z2,
        factor1,
        factor2,
        det,
        det_min,
        det_max,
        product_min,
        certified,
    })
}

/// Reverse-triangle margin in the plane: RHS - LHS of
/// |sqrt(a^2+c^2) - sqrt(b^2+d^2)| <= sqrt((a-b)^2 + (c-d)^2).
pub fn fractional_scalar_margin(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let lhs = ((a * a + c * c).sqrt() - (b * b + d * d).sqrt()).abs();
    let rhs = ((a - b) * (a - b) + (c - d) * (c - d)).sqrt();
    rhs - lhs
}

/// Field-form margin at one node pair: RHS - LHS of
/// (gamma(x)-gamma(y))^2 <= (1-t)(u(x)-u(y))^2 + t(v(x)-v(y))^2 under the
/// squared generator.
pub fn fractional_field_margin(ux: f64, uy: f64, vx: f64, vy: f64, t: f64) -> f64 {
    let gx = ((1.0 - t) * ux * ux + t * vx * vx).sqrt();
    let gy = ((1.0 - t) * uy * uy + t * vy * vy).sqrt();
    let lhs = (gx - gy) * (gx - gy);
    let rhs = (1.0 - t) * (ux - uy) * (ux - uy) + t * (vx - vy) * (vx - vy);
    rhs - lhs
}

/// Pointwise inequalities behind the nonlocal quadratic form: the planar
/// reverse triangle inequality on random reals (even trials) and the field
/// form on random positive node-pair data (odd trials).
pub fn check_fractional_pointwise(trials: u64, seed: u64) -> Result<IneqReport> {
    let mut report = IneqReport::new("fractional_pointwise", json!({"seed": seed}));
    for trial in 0..trials {
        let mut rng = substream_rng(seed, trial);
        if trial % 2 == 0 {
            let (a, b, c, d) = (
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            );
            let margin = fractional_scalar_margin(a, b, c, d);
            let scale = 1.0f64.max(a.abs()).max(b.abs()).max(c.abs()).max(d.abs());
            report.record(margin / scale, || {
                json!({"trial": trial, "form": "scalar", "a": a, "b": b, "c": c, "d": d})
            });
        } else {
            let (ux, uy, vx, vy) = (
                log_uniform(&mut rng, 0.1, 10.0),
                log_uniform(&mut rng, 0.1, 10.0),
                log_uniform(&mut rng, 0.1, 10.0),
                log_uniform(&mut rng, 0.1, 10.0),
            );
            let t = rng.gen_range(0.0..1.0);
            let margin = fractional_field_margin(ux, uy, vx, vy, t);
            let scale = 1.0f64.max(ux * ux).max(vx * vx).max(uy * uy).max(vy * vy);
            report.record(margin / scale, || {
                json!({"trial": trial, "form": "field", "u": [ux, uy], "v": [vx, vy], "t": t})
            });
        }
    }
    Ok(report)
}

/// Nodewise l^beta Minkowski bound through the inverse-operator K:
/// ((K G1)^beta + (K G2)^beta)^{1/beta} <= K((G1^beta + G2^beta)^{1/beta})
/// for nonnegative sources. Discretely exact (the discrete kernel is
/// entrywise nonnegative), so the tolerance is calibrated from the
/// degenerate G2 = 0 and G1 = G2 cases, which are equalities: it measures
/// pure solver round-off.
pub fn check_operator_minkowski(beta: f64, trials: u64, grid: &Grid, seed: u64) -> Result<IneqReport> {
    if !(beta > 1.0) {
        return Err(Error::ScalarFn(format!("minkowski exponent must exceed 1, got {beta}")));
    }
    let apply_k = |g: &GridFunction| poisson_solve(g);
    let combine = |g1: &GridFunction, g2: &GridFunction| {
        GridFunction::new(
            grid.clone(),
            g1.values
                .iter()
                .zip(&g2.values)
                .map(|(&a, &b)| (a.powf(beta) + b.powf(beta)).powf(1.0 / beta))
                .collect(),
        )
        .expect("same grid")
    };
    // calibration: equality cases bound the solver round-off floor
    let mut floor = 0.0f64;
    for cal in 0..3u64 {
        let mut rng = substream_rng(seed ^ 0x5ca1ab1e, cal);
        let g1 = smoothed_positive_field(grid, &mut rng, 0.1, 10.0, 5);
        let zero = GridFunction::zeros(grid.clone());
        for g2 in [&zero, &g1.clone()] {
            let k1 = apply_k(&g1)?;
            let k2 = apply_k(g2)?;
            let rhs = apply_k(&combine(&g1, g2))?;
            for i in 0..grid.node_count() {
                let lhs = (k1.values[i].powf(beta) + k2.values[i].powf(beta)).powf(1.0 / beta);
                floor = floor.max((lhs - rhs.values[i]).abs());
            }
        }
    }
    let tol = (10.0 * floor).max(1e-13);
    let mut report = IneqReport::new(
        "operator_minkowski",
        json!({"beta": beta, "seed": seed, "n": grid.n, "tol": tol, "calibration_floor": floor}),
    );
    for trial in 0..trials {
        let mut rng = substream_rng(seed, trial);
        let g1 = smoothed_positive_field(grid, &mut rng, 0.1, 10.0, 5);
        let g2 = smoothed_positive_field(grid, &mut rng, 0.1, 10.0, 5);
        let k1 = apply_k(&g1)?;
        let k2 = apply_k(&g2)?;
        let rhs = apply_k(&combine(&g1, &g2))?;
        let mut worst = f64::INFINITY;
        let mut worst_node = 0;
        for i in 0..grid.node_count() {
            let lhs = (k1.values[i].powf(beta) + k2.values[i].powf(beta)).powf(1.0 / beta);
            let margin = rhs.values[i] - lhs + tol;
            if margin < worst {
                worst = margin;
                worst_node = i;
            }
        }
        let scale = 1.0f64.max(rhs.sup_norm());
        report.record(worst / scale, || {
            json!({"trial": trial, "node": worst_node, "beta": beta})
        });
    }
    Ok(report)
}

/// ((1-t) m^q + t)^{1/q}: the weighted power mean of {m, 1} whose
/// monotonicity in q drives the operator bound.
pub fn scalar_q_value(m: f64, t: f64, q: f64) -> f64 {
    ((1.0 - t) * m.powf(q) + t).powf(1.0 / q)
}

/// Ordered pair (value(q1), value(q2)); rejects the degenerate constant map m = 1.
pub fn scalar_q_monotone(m: f64, t: f64, q1: f64, q2: f64) -> Result<(f64, f64)> {
    if !(m > 0.0) || (m - 1.0).abs() < 1e-14 {
        return Err(Error::ScalarFn(format!("need m > 0, m != 1, got {m}")));
    }
    if !(t > 0.0 && t < 1.0 && q1 > 0.0 && q2 > q1) {
        return Err(Error::ScalarFn(format!(
            "need t in (0,1) and 0 < q1 < q2, got t={t}, q1={q1}, q2={q2}"
        )));
    }
    Ok((scalar_q_value(m, t, q1), scalar_q_value(m, t, q2)))
}

pub fn check_scalar_q_monotone(trials: u64, seed: u64) -> Result<IneqReport> {
    let mut report = IneqReport::new("scalar_q_monotone", json!({"seed": seed}));
    for trial in 0..trials {
        let mut rng = substream_rng(seed, trial);
        let mut m = log_uniform(&mut rng, 0.1, 10.0);
        if (m - 1.0).abs() < 1e-12 {
            m = 1.5;
        }
        let t = rng.gen_range(0.01..0.99);
        let q1 = rng.gen_range(0.05..4.95);
        let q2 = q1 + rng.gen_range(0.01..2.0);
        let (v1, v2) = scalar_q_monotone(m, t, q1, q2)?;
        let scale = 1.0f64.max(v1).max(v2);
        report.record((v2 - v1) / scale, || {
            json!({"trial": trial, "m": m, "t": t, "q1": q1, "q2": q2, "v1": v1, "v2": v2})
        });
    }
    Ok(report)
}

/// phi(t) at one node: F(t) * (K G(t))(node) with component power interpolants
/// F(t) = ((1-t) f1^a + t f2^a)^{1/a}, a = (p+1)/p, and G likewise with
/// b = (q+1)/q.
fn system_phi(
    f1: &GridFunction,
    f2: &GridFunction,
    g1: &GridFunction,
    g2: &GridFunction,
    alpha: f64,
    beta: f64,
    t: f64,
) -> Result<(GridFunction, GridFunction)> {
    let grid = f1.grid.clone();
    let mix = |a: &GridFunction, b: &GridFunction, r: f64| {
        GridFunction::new(
            grid.clone(),
            a.values
                .iter()
                .zip(&b.values)
                .map(|(&x, &y)| ((1.0 - t) * x.powf(r) + t * y.powf(r)).powf(1.0 / r))
                .collect(),
        )
        .expect("same grid")
    };
    let ft = mix(f1, f2, alpha);
    let gt = mix(g1, g2, beta);
    let kgt = poisson_solve(&gt)?;
    Ok((ft, kgt))
}

/// Concavity scan of t -> F(t) * K(G(t)) nodewise. Margins are the
/// normalized second differences -d2(phi) (positive = concave). Regime
/// semantics: p*q < 1 expects a strictly positive margin everywhere; p*q = 1
/// expects margins >= -slack with equality witnessed at proportional tuples;
/// p*q > 1 expects the directed small-amplitude probe (f1, g1) = eps (f2, g2)
/// to FIND violations, which the report counts.
pub fn check_system_concavity(p: f64, q: f64, trials: u64, grid: &Grid, seed: u64) -> Result<IneqReport> {
    if !(p > 0.0 && q > 0.0) {
        return Err(Error::ScalarFn(format!("need p, q > 0, got p={p}, q={q}")));
    }
    let alpha = (p + 1.0) / p;
    let beta = (q + 1.0) / q;
    let regime = if p * q < 1.0 - 1e-12 {
        "strict"
    } else if p * q <= 1.0 + 1e-12 {
        "non_strict"
    } else {
        "expect_violation"
    };
    let mut report = IneqReport::new(
        "system_concavity",
        json!({"p": p, "q": q, "alpha": alpha, "beta": beta, "regime": regime, "seed": seed, "n": grid.n}),
    );
    let mut equality_witnesses = 0u64;
    let t_samples = 9usize;

    let mut scan = |f1: &GridFunction,
                    f2: &GridFunction,
                    g1: &GridFunction,
                    g2: &GridFunction,
                    ts: &[f64],
                    report: &mut IneqReport,
                    label: &str,
                    trial: u64|
     -> Result<()> {
        let mut phis = Vec::with_capacity(ts.len());
        for &t in ts {
            let (ft, kgt) = system_phi(f1, f2, g1, g2, alpha, beta, t)?;
            let vals: Vec<f64> = ft.values.iter().zip(&kgt.values).map(|(a, b)| a * b).collect();
            phis.push(vals);
        }
        let scale = phis
            .iter()
            .flat_map(|v| v.iter())
            .fold(1.0f64, |a, &b| a.max(b.abs()));
        let mut worst = f64::INFINITY;
        let mut worst_at = (0usize, 0usize);
        for w in 0..ts.len() - 2 {
            for i in 0..grid.node_count() {
                if grid.is_constrained(i) {
                    continue;
                }
                let d2 = phis[w][i] - 2.0 * phis[w + 1][i] + phis[w + 2][i];
                let margin = -d2 / scale;
                if margin < worst {
                    worst = margin;
                    worst_at = (w, i);
                }
            }
        }
        if worst.abs() <= EQUALITY_TOL {
            equality_witnesses += 1;
        }
        report.record(worst, || {
            json!({"probe": label, "trial": trial, "t_window": worst_at.0, "node": worst_at.1})
        });
        Ok(())
    };

    // directed probes first: the small-amplitude family that breaks
    // concavity when p*q > 1, and proportional tuples (equality when p*q = 1)
    let mut rng = substream_rng(seed ^ 0xd1ec7ed, 0);
    let base_f = smoothed_positive_field(grid, &mut rng, 0.5, 2.0, 5);
    let base_g = smoothed_positive_field(grid, &mut rng, 0.5, 2.0, 5);
    let eps = 0.01;
    let f_small = base_f.scaled(eps);
    let g_small = base_g.scaled(eps);
    // uniform spacing: second differences on uneven windows would leak the
    // first derivative and fake a curvature sign
    let probe_ts: Vec<f64> = (0..9).map(|i| 0.01 * i as f64).collect();
    scan(&f_small, &base_f, &g_small, &base_g, &probe_ts, &mut report, "eps_family", 0)?;
    let lam = 1.7;
    scan(
        &base_f.scaled(lam),
        &base_f,
        &base_g.scaled(lam),
        &base_g,
        &probe_ts,
        &mut report,
        "proportional",
        0,
    )?;

    let uniform_ts: Vec<f64> = (0..t_samples).map(|i| i as f64 / (t_samples - 1) as f64).collect();
    for trial in 0..trials {
        let mut rng = substream_rng(seed, trial + 1);
        let f1 = smoothed_positive_field(grid, &mut rng, 0.1, 10.0, 5);
        let f2 = smoothed_positive_field(grid, &mut rng, 0.1, 10.0, 5);
        let g1 = smoothed_positive_field(grid, &mut rng, 0.1, 10.0, 5);
        let g2 = smoothed_positive_field(grid, &mut rng, 0.1, 10.0, 5);
        scan(&f1, &f2, &g1, &g2, &uniform_ts, &mut report, "random", trial + 1)?;
    }
    report.params["equality_witnesses"] = json!(equality_witnesses);
    Ok(report)
}

/// Band and asymptotics of the quasilinear substitution f:
/// f(t)/2 <= t / sqrt(1 + 2 f(t)^2) <= f(t) on a log sweep of [1e-6, 1e6],
/// plus the large- and small-argument ratio targets.
pub fn check_f_properties(samples: u64) -> Result<IneqReport> {
    let mut report = IneqReport::new("f_properties", json!({"sweep": [1e-6, 1e6]}));
    for k in 0..samples {
        let t = 10f64.powf(-6.0 + 12.0 * k as f64 / (samples - 1).max(1) as f64);
        let f = dual_f(t);
        let mid = t / (1.0 + 2.0 * f * f).sqrt();
        let scale = 1.0f64.max(f);
        let margin = (mid - 0.5 * f).min(f - mid) / scale;
        report.record(margin, || json!({"t": t, "f": f, "mid": mid}));
    }
    let tail = dual_f(1e6) / 1e3;
    let head = dual_f(1e-4) / 1e-4;
    report.params["tail_ratio"] = json!(tail);
    report.params["head_ratio"] = json!(head);
    let quarter = 2f64.powf(0.25);
    if (tail - quarter).abs() > 1e-3 {
        report.violations += 1;
        report.witness.get_or_insert_with(|| json!({"asymptote": "tail", "ratio": tail}));
    }
    if !(head <= 1.0 && head >= 1.0 - 1e-6) {
        report.violations += 1;
        report.witness.get_or_insert_with(|| json!({"asymptote": "head", "ratio": head}));
    }
    Ok(report)
}

/// Decomposition check for the coupled-constraint energy: for positive
/// states of equal componentwise masses with v near-critical,
/// E(u) - E(v) = F(w) with w = u/v, where F collects the weighted Dirichlet
/// terms and the quadratic coupling of v^2 (w^2 - 1).
#[derive(Debug, Clone, Serialize)]
pub struct GpIdentityReport {
    pub gap: f64,
    pub f_w: f64,
    pub residual: f64,
    pub scale: f64,
    pub masses_u: Vec<f64>,
    pub masses_v: Vec<f64>,
}

pub fn gp_energy_identity(problem: &Problem, u: &State, v: &State) -> Result<GpIdentityReport> {
    let (k, b) = match problem.family() {
        Family::GrossPitaevskii { k, b, mode: VectorMode::FixedMass, .. } => (*k, b.clone()),
        _ => {
            return Err(Error::Problem(
                "energy identity needs the coupled fixed-mass family".into(),
            ))
        }
    };
    let grid = problem.grid();
    if u.arity() != k || v.arity() != k || u.grid() != grid {
        return Err(Error::Problem("state shape does not match the problem".into()));
    }
    let masses_u: Vec<f64> = u.components.iter().map(|c| integrate_map(c, |t| t * t)).collect();
    let masses_v: Vec<f64> = v.components.iter().map(|c| integrate_map(c, |t| t * t)).collect();

    // w = u / v nodewise; the far-field ratio must stay bounded for the
    // decomposition to be meaningful on the truncated domain
    let mut w_comps = Vec::with_capacity(k);
    for (cu, cv) in u.components.iter().zip(&v.components) {
        let mut vals = vec![0.0; grid.node_count()];
        for i in 0..grid.node_count() {
            if grid.is_constrained(i) {
                continue; // filled from the neighbor below
            }
            if cv.values[i] <= 0.0 || cu.values[i] < 0.0 {
                return Err(Error::Problem(format!(
                    "states not positive at node {i}; ratio undefined"
                )));
            }
            let r = cu.values[i] / cv.values[i];
            if !r.is_finite() || r > 1e8 {
                return Err(Error::Problem(
                    "ratio u/v overflows near the truncation boundary: states not comparable there"
                        .into(),
                ));
            }
            vals[i] = r;
        }
        // constrained nodes carry no ratio information: copy the nearest free
        // value so boundary cells contribute no spurious gradient
        for i in 0..grid.node_count() {
            if grid.is_constrained(i) {
                let j = if i == 0 { 1 } else { i - 1 };
                vals[i] = vals[j];
            }
        }
        w_comps.push(GridFunction::new(grid.clone(), vals).expect("length matches"));
    }

    // F(w) = sum_i int |grad w_i|^2 v_i^2 / 2 + (1/4) int [v^2 (w^2-1)] B [v^2 (w^2-1)]^T
    let cell_count = grid.cell_count();
    let vols = grid.cell_volumes();
    let mut f_w = 0.0;
    for i in 0..k {
        let gw = gradient_cells(&w_comps[i]);
        let vv = &v.components[i];
        for c in 0..cell_count {
            let nodes = grid.cell_nodes(c);
            let mean_v2 =
                nodes.iter().map(|&n| vv.values[n] * vv.values[n]).sum::<f64>() / nodes.len() as f64;
            let g = gw.magnitude.values[c];
            f_w += 0.5 * vols[c] * g * g * mean_v2;
        }
    }
    let weights = grid.quad_weights();
    for node in 0..grid.node_count() {
        let mut s: Vec<f64> = Vec::with_capacity(k);
        for i in 0..k {
            let vv = v.components[i].values[node];
            let ww = w_comps[i].values[node];
            s.push(vv * vv * (ww * ww - 1.0));
        }
        let mut quad = 0.0;
        for i in 0..k {
            for j in 0..k {
                quad += s[i] * b[i][j] * s[j];
            }
        }
        f_w += 0.25 * weights[node] * quad;
    }

    let eu = problem.energy(u)?;
    let ev = problem.energy(v)?;
    let gap = eu - ev;
    let scale = 1.0f64.max(eu.abs()).max(ev.abs()).max(f_w.abs());
    Ok(GpIdentityReport {
        gap,
        f_w,
        residual: (gap - f_w).abs(),
        scale,
        masses_u,
        masses_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Domain;
    use crate::problems::{ProblemSpec, ScalarFn};
    use approx::assert_relative_eq;

    fn unit_grid(n: usize) -> Grid {
        Grid::make(Domain::interval(0.0, 1.0), n).unwrap()
    }

    #[test]
    fn gin_spot_value() {
        let q = ScalarFn::power(2.0);
        let (lhs, rhs) = gin_values(&q, &q, 1.0, 2.0, [1.0, 0.0], [0.0, 2.0], 0.5).unwrap();
        assert_relative_eq!(lhs, 1.7, max_relative = 1e-12);
        assert_relative_eq!(rhs, 2.5, max_relative = 1e-12);
    }

    #[test]
    fn gin_power_pairs_hold_exactly() {
        for p in [1.2, 2.0, 3.0] {
            let q = ScalarFn::power(p);
            let rep = check_gin(&q, &q, 10_000, 42).unwrap();
            assert_eq!(rep.violations, 0, "p = {p}");
            assert!(rep.worst_margin >= -1e-12, "p = {p}: worst {}", rep.worst_margin);
            assert!(rep.witness.is_none());
        }
    }

    #[test]
    fn gin_quasilinear_square_holds() {
        let rep = check_gin(&ScalarFn::FSquared, &ScalarFn::power(2.0), 10_000, 7).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(rep.worst_margin >= -1e-10);
    }

    #[test]
    fn gin_is_deterministic() {
        let q = ScalarFn::power(2.0);
        let a = check_gin(&q, &q, 500, 9).unwrap();
        let b = check_gin(&q, &q, 500, 9).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn hessian_power_pair_is_rank_one_boundary() {
        for p in [1.5, 2.0, 3.0] {
            let q = ScalarFn::power(p);
            let rep = hessian_criterion(&q, &q, (0.2, 8.0), (0.2, 8.0), 17).unwrap();
            assert!(rep.certified, "p = {p}");
            // factors 1/(p-1) and (p-1): product exactly one, determinant zero
            assert!((rep.product_min - 1.0).abs() <= 1e-12, "p = {p}");
            let scale = rep.det.iter().fold(0.0f64, |a, &d| a.max(d.abs()));
            assert!(scale <= 1e-10, "p = {p}: determinant magnitude {scale}");
        }
    }

    #[test]
    fn hessian_flat_area_band() {
        // first factor 1/(p-1), second 1/z2^2: product > 1 strictly inside
        // the band, falling to 1 at the band's outer edge 1/sqrt(p-1)
        let p = 1.5;
        let q = ScalarFn::power(p);
        let edge = 1.0 / (p - 1.0f64).sqrt();
        let rep = hessian_criterion(&q, &ScalarFn::Arclength, (0.2, 8.0), (1.01, edge - 1e-6), 17).unwrap();
        assert!(rep.certified);
        assert!(rep.product_min > 1.0);
        assert_relative_eq!(
            rep.product_min,
            (1.0 / (p - 1.0)) * (edge - 1e-6).powi(-2),
            max_relative = 1e-10
        );
        // outside the band the certificate must fail
        let rep = hessian_criterion(&q, &ScalarFn::Arclength, (0.2, 8.0), (1.01, 2.0 * edge), 17).unwrap();
        assert!(!rep.certified);
        // factored forms for the quasilinear square: 1 + 8 z1 against 1
        let rep = hessian_criterion(&ScalarFn::FSquared, &ScalarFn::power(2.0), (0.2, 8.0), (0.2, 8.0), 9)
            .unwrap();
        assert!(rep.certified);
        for (z, f) in rep.z1.iter().zip(&rep.factor1) {
            assert_relative_eq!(*f, 1.0 + 8.0 * z, max_relative = 1e-10);
        }
        for f in &rep.factor2 {
            assert_relative_eq!(*f, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn fractional_pointwise_never_violates() {
        let rep = check_fractional_pointwise(100_000, 3).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(rep.worst_margin >= -1e-12);
        // equality at parallel pairs and at identical pairs
        assert!(fractional_scalar_margin(2.0, 1.0, 4.0, 2.0).abs() <= 1e-10);
        assert!(fractional_scalar_margin(0.3, 0.3, -1.2, -1.2).abs() <= 1e-12);
        // a = b reduces to the 1D triangle inequality
        assert!(fractional_scalar_margin(1.5, 1.5, 3.0, -2.0) >= 0.0);
    }

    #[test]
    fn operator_minkowski_holds_and_rejects_bad_exponent() {
        let grid = unit_grid(65);
        assert!(check_operator_minkowski(1.0, 5, &grid, 1).is_err());
        for beta in [1.5, 2.0, 3.0] {
            let rep = check_operator_minkowski(beta, 50, &grid, 11).unwrap();
            assert_eq!(rep.violations, 0, "beta = {beta}");
            assert!(rep.params["tol"].as_f64().unwrap() < 1e-9);
        }
    }

    #[test]
    fn scalar_q_examples_and_sweep() {
        let (v1, v2) = scalar_q_monotone(2.0, 0.5, 1.0, 2.0).unwrap();
        assert_relative_eq!(v1, 1.5, max_relative = 1e-14);
        assert_relative_eq!(v2, 2.5f64.sqrt(), max_relative = 1e-14);
        assert!(v1 < v2);
        // m -> 1: both values collapse to 1
        let (w1, w2) = scalar_q_monotone(1.0 + 1e-9, 0.3, 0.7, 2.3).unwrap();
        assert!((w1 - 1.0).abs() < 1e-8 && (w2 - 1.0).abs() < 1e-8);
        assert!(scalar_q_monotone(1.0, 0.5, 1.0, 2.0).is_err());
        let rep = check_scalar_q_monotone(100_000, 5).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(rep.worst_margin >= -1e-12);
    }

    #[test]
    fn system_concavity_regimes() {
        let grid = unit_grid(65);
        // p q < 1: strict concavity, margin bounded away from zero
        let rep = check_system_concavity(0.5, 0.5, 50, &grid, 17).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(rep.worst_margin > 0.0, "strict regime margin {}", rep.worst_margin);

        // p q = 1: non-strict; proportional tuples witness equality
        let rep = check_system_concavity(1.0, 1.0, 50, &grid, 18).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(rep.worst_margin >= -SLACK);
        assert!(rep.params["equality_witnesses"].as_u64().unwrap() >= 1);

        // p q > 1: the directed small-amplitude probe finds the violation
        let rep = check_system_concavity(1.5, 1.5, 20, &grid, 19).unwrap();
        assert!(rep.violations >= 1, "no violation found in the supercritical regime");
        assert!(rep.witness.is_some());
        assert_eq!(rep.witness.as_ref().unwrap()["probe"], "eps_family");
    }

    #[test]
    fn f_band_and_asymptotics() {
        let rep = check_f_properties(2000).unwrap();
        assert_eq!(rep.violations, 0, "witness: {:?}", rep.witness);
        assert!(rep.worst_margin >= -1e-12);
        assert!((rep.params["tail_ratio"].as_f64().unwrap() - 2f64.powf(0.25)).abs() <= 1e-3);
        let head = rep.params["head_ratio"].as_f64().unwrap();
        assert!(head <= 1.0 && head >= 1.0 - 1e-6);
    }

    #[test]
    fn energy_identity_on_trap_states() {
        let grid = Grid::make(Domain::radial(2, 8.0), 257).unwrap();
        let spec = ProblemSpec {
            family: Family::GrossPitaevskii {
                k: 1,
                b: vec![vec![0.0]],
                mode: VectorMode::FixedMass,
                v: ScalarFn::power(2.0),
            },
            grid: grid.clone(),
        };
        let p = Problem::new(spec).unwrap();
        let normalize = |g: GridFunction| {
            let mass = integrate_map(&g, |t| t * t);
            g.scaled(1.0 / mass.sqrt())
        };
        let gauss = normalize(GridFunction::from_fn(grid.clone(), |r, _| (-0.5 * r * r).exp()));
        let v = State::scalar(gauss.clone());

        // identical states: the identity degenerates to 0 = 0
        let rep = gp_energy_identity(&p, &v, &v).unwrap();
        assert_eq!(rep.gap, 0.0);
        assert!(rep.f_w.abs() <= 1e-13);
        assert!(rep.residual <= 1e-13);
        assert_relative_eq!(rep.masses_u[0], 1.0, max_relative = 1e-12);

        // perturbed partner of equal mass: residual at discretization level
        let u = normalize(GridFunction::new(
            grid.clone(),
            (0..grid.node_count())
                .map(|i| {
                    let r = grid.potential_coord(i);
                    gauss.values[i] * (1.0 + 0.2 * (-(r - 2.0) * (r - 2.0)).exp())
                })
                .collect(),
        )
        .unwrap());
        let u = State::scalar(u);
        let rep = gp_energy_identity(&p, &u, &v).unwrap();
        assert!(rep.gap > 0.0, "perturbation must cost energy");
        assert!(
            rep.residual <= 2e-3 * rep.scale,
            "residual {} vs scale {}",
            rep.residual,
            rep.scale
        );

        // non-comparable far field: overflow is reported, not crashed
        let spike = State::scalar(normalize(GridFunction::from_fn(grid.clone(), |r, _| {
            (-2.0 * r * r).exp()
        })));
        let err = gp_energy_identity(&p, &v, &spike);
        assert!(err.is_err());
    }
}
