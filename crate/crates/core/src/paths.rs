//! Interpolation paths between states, energy profiles along them, and the
//! three-hypothesis check (endpoints / Lipschitz start / convex profile)
//! together with its conclusions (equal levels, flat profiles).
//!
//! Non-straight paths push endpoints through an increasing generator Q with
//! Q(0) = 0 and mix linearly in Q-coordinates: gamma(t) = Q^{-1}((1-t)Q(u) + tQ(v)).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient_cells, integrate_map, GridFunction};
use crate::problems::{dual_f, dual_f_inv, Family, Problem, State};

/// Interior positivity floor for non-straight generators.
pub const EPS_POS: f64 = 1e-10;
/// Curvature tolerance band for the three-way convexity verdict.
pub const TOL_CVX: f64 = 1e-7;
/// Flatness tolerance on max |j(t) - j(0)|.
pub const TOL_FLAT: f64 = 1e-6;
/// Default profile sample count.
pub const DEFAULT_SAMPLES: usize = 65;
/// Dyadic probe depth: t = 2^{-1} .. 2^{-20}.
pub const PROBE_LEVELS: usize = 20;

/// Path generators. `power` applies one exponent to every component;
/// `component_powers` is the per-component variant used by the dual pair
/// formulation; `f_squared` composes the quasilinear transform with a square;
/// `squared` is the mass-linear r = 2 path; `straight` interpolates affinely
/// (demo-only: it supports no positivity-based conclusions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Power { r: f64 },
    ComponentPowers { rs: Vec<f64> },
    FSquared,
    Squared,
    Straight,
}

impl Generator {
    fn validate(&self, arity: usize) -> Result<()> {
        match self {
            Generator::Power { r } => {
                if !(r.is_finite() && *r > 1.0) {
                    return Err(Error::Path(format!("power generator needs r > 1, got {r}")));
                }
            }
            Generator::ComponentPowers { rs } => {
                if rs.len() != arity {
                    return Err(Error::Path(format!(
                        "component_powers has {} exponents for {} components",
                        rs.len(),
                        arity
                    )));
                }
                for r in rs {
                    if !(r.is_finite() && *r > 1.0) {
                        return Err(Error::Path(format!("power generator needs r > 1, got {r}")));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn is_straight(&self) -> bool {
        matches!(self, Generator::Straight)
    }

    /// Q applied to one nodal value of component `comp` (values < 0 clamp to
    /// 0: relaxed evaluation tolerates boundary-degenerate endpoints).
    fn forward(&self, comp: usize, z: f64) -> f64 {
        let z = z.max(0.0);
        match self {
            Generator::Power { r } => z.powf(*r),
            Generator::ComponentPowers { rs } => z.powf(rs[comp]),
            Generator::FSquared => {
                let f = dual_f(z);
                f * f
            }
            Generator::Squared => z * z,
            Generator::Straight => z,
        }
    }

    fn inverse(&self, comp: usize, w: f64) -> f64 {
        let w = w.max(0.0);
        match self {
            Generator::Power { r } => w.powf(1.0 / r),
            Generator::ComponentPowers { rs } => w.powf(1.0 / rs[comp]),
            Generator::FSquared => dual_f_inv(w.sqrt()),
            Generator::Squared => w.sqrt(),
            Generator::Straight => w,
        }
    }
}

/// A generator with its two endpoint states.
#[derive(Debug, Clone)]
pub struct PathSpec {
    pub generator: Generator,
    pub u: State,
    pub v: State,
}

impl PathSpec {
    /// Structural checks only (grids, arities, exponents); positivity is a
    /// separate, reportable hypothesis — see `check_positivity`.
    pub fn new(generator: Generator, u: State, v: State) -> Result<Self> {
        if u.arity() != v.arity() {
            return Err(Error::Path(format!(
                "endpoint arities differ: {} vs {}",
                u.arity(),
                v.arity()
            )));
        }
        if u.grid() != v.grid() {
            return Err(Error::Path("endpoints live on different grids".into()));
        }
        generator.validate(u.arity())?;
        Ok(PathSpec { generator, u, v })
    }

    /// Non-straight generators need strictly positive interior values
    /// (floor EPS_POS) and nonnegative boundary values at both endpoints.
    pub fn check_positivity(&self) -> Result<()> {
        if self.generator.is_straight() {
            return Ok(());
        }
        let grid = self.u.grid();
        for (name, state) in [("first", &self.u), ("second", &self.v)] {
            for c in &state.components {
                for i in 0..grid.node_count() {
                    let val = c.values[i];
                    if grid.is_boundary(i) {
                        if val < 0.0 {
                            return Err(Error::Path(format!(
                                "{name} endpoint is negative on the boundary (node {i}: {val})"
                            )));
                        }
                    } else if val <= EPS_POS {
                        return Err(Error::Path(format!(
                            "{name} endpoint is not positive at interior node {i} ({val})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Strict evaluation: positivity hypothesis enforced for non-straight
/// generators. Endpoints return bit-exactly.
pub fn path_eval(path: &PathSpec, t: f64) -> Result<State> {
    path.check_positivity()?;
    path_eval_relaxed(path, t)
}

/// Evaluation without the positivity gate (used by demos and the probe,
/// where degenerate endpoints are the point of the exercise).
pub fn path_eval_relaxed(path: &PathSpec, t: f64) -> Result<State> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Path(format!("path parameter {t} outside [0,1]")));
    }
    if t == 0.0 {
        return Ok(path.u.clone());
    }
    if t == 1.0 {
        return Ok(path.v.clone());
    }
    let grid = path.u.grid().clone();
    let mut comps = Vec::with_capacity(path.u.arity());
    for c in 0..path.u.arity() {
        let uu = &path.u.components[c];
        let vv = &path.v.components[c];
        let values = uu
            .values
            .iter()
            .zip(&vv.values)
            .map(|(&a, &b)| {
                let mix = (1.0 - t) * path.generator.forward(c, a) + t * path.generator.forward(c, b);
                path.generator.inverse(c, mix)
            })
            .collect();
        comps.push(GridFunction::new(grid.clone(), values).expect("length preserved"));
    }
    Ok(State { components: comps })
}

/// Three-way curvature verdict with an explicit inconclusive band: strict
/// certification needs min second difference above +TOL_CVX * scale, and a
/// violation needs it below -TOL_CVX * scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexityVerdict {
    StrictlyConvex,
    Convex,
    NotConvex,
}

/// Sampled energy profile j(t) = I(gamma(t)) with its curvature statistics.
#[derive(Debug, Clone, Serialize)]
pub struct ConvexityProfile {
    pub t: Vec<f64>,
    pub j: Vec<f64>,
    /// Raw second differences j_{i-1} - 2 j_i + j_{i+1}, one per interior sample.
    pub d2j: Vec<f64>,
    pub min_d2j: f64,
    /// One-sided slope estimate at t = 0.
    pub slope0: f64,
    /// max |j(t) - j(0)| over all samples.
    pub flatness_gap: f64,
    /// max over samples of j(t) - ((1-t) j(0) + t j(1)): <= 0 means the
    /// profile sits below its chord (the weakened path condition).
    pub chord_gap: f64,
    /// max(1, max |j|): the scale all tolerances multiply.
    pub scale: f64,
    pub verdict: ConvexityVerdict,
    pub flat: bool,
}

/// Sample j(t) on a uniform grid of m points and classify its curvature.
/// Uses relaxed path evaluation: convexity of the profile is meaningful
/// whether or not the positivity hypothesis holds.
pub fn convexity_profile(problem: &Problem, path: &PathSpec, m: usize) -> Result<ConvexityProfile> {
    if m < 17 {
        return Err(Error::Path(format!("profile needs at least 17 samples, got {m}")));
    }
    let mut t = Vec::with_capacity(m);
    let mut j = Vec::with_capacity(m);
    for i in 0..m {
        let ti = i as f64 / (m - 1) as f64;
        let state = path_eval_relaxed(path, ti)?;
        t.push(ti);
        j.push(problem.energy(&state)?);
    }
    let d2j: Vec<f64> = (1..m - 1).map(|i| j[i - 1] - 2.0 * j[i] + j[i + 1]).collect();
    let min_d2j = d2j.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = j.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    let flatness_gap = j.iter().map(|&ji| (ji - j[0]).abs()).fold(0.0, f64::max);
    let chord_gap = t
        .iter()
        .zip(&j)
        .map(|(&ti, &ji)| ji - ((1.0 - ti) * j[0] + ti * j[m - 1]))
        .fold(f64::NEG_INFINITY, f64::max);
    let slope0 = (j[1] - j[0]) / (t[1] - t[0]);
    let verdict = if min_d2j >= TOL_CVX * scale {
        ConvexityVerdict::StrictlyConvex
    } else if min_d2j >= -TOL_CVX * scale {
        ConvexityVerdict::Convex
    } else {
        ConvexityVerdict::NotConvex
    };
    let flat = flatness_gap <= TOL_FLAT * scale;
    Ok(ConvexityProfile {
        t,
        j,
        d2j,
        min_d2j,
        slope0,
        flatness_gap,
        chord_gap,
        scale,
        verdict,
        flat,
    })
}

/// CSV rows (t, j, d2j) for a profile; second-difference cells are empty at
/// the two ends where no centered difference exists. Values print in the
/// shortest form that round-trips exactly.
pub fn profile_csv(p: &ConvexityProfile) -> String {
    let mut out = String::from("t,j,d2j\n");
    for i in 0..p.t.len() {
        let d2 = if i >= 1 && i + 1 < p.t.len() {
            format!("{}", p.d2j[i - 1])
        } else {
            String::new()
        };
        out.push_str(&format!("{},{},{}\n", p.t[i], p.j[i], d2));
    }
    out
}

/// Norm used by the Lipschitz probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeNorm {
    Sup,
    SobolevP { p: f64 },
}

fn state_norm(x: &State, norm: &ProbeNorm) -> f64 {
    match norm {
        ProbeNorm::Sup => x.sup_norm(),
        ProbeNorm::SobolevP { p } => {
            let mut worst = 0.0f64;
            for c in &x.components {
                let grads = gradient_cells(c);
                let vols = c.grid.cell_volumes();
                let grad_part: f64 = grads
                    .magnitude
                    .values
                    .iter()
                    .zip(vols.iter())
                    .map(|(m, v)| v * m.powf(*p))
                    .sum();
                let bulk = integrate_map(c, |s| s.abs().powf(*p));
                worst = worst.max((grad_part + bulk).powf(1.0 / p));
            }
            worst
        }
    }
}

fn state_diff(a: &State, b: &State) -> State {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzVerdict {
    Lipschitz,
    NotLipschitz,
}

/// Quotients ||gamma(t) - u|| / t at dyadic t, and the growth classification.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    /// ||gamma(2^{-j}) - gamma(0)|| / 2^{-j} for j = 1..=PROBE_LEVELS.
    pub quotients: Vec<f64>,
    pub verdict: LipschitzVerdict,
}

/// Probe the start-regularity hypothesis on dyadic parameters. A clean
/// geometric growth over the deepest five levels reads as a Lipschitz
/// failure; a sequence bounded by twice its median reads as Lipschitz.
pub fn lipschitz_probe(path: &PathSpec, norm: &ProbeNorm) -> Result<LipschitzReport> {
    let mut quotients = Vec::with_capacity(PROBE_LEVELS);
    for jlev in 1..=PROBE_LEVELS {
        let t = 2f64.powi(-(jlev as i32));
        let gamma = path_eval_relaxed(path, t)?;
        let dist = state_norm(&state_diff(&gamma, &path.u), norm);
        quotients.push(dist / t);
    }
    let tail = &quotients[PROBE_LEVELS - 5..];
    let monotone_up = tail.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9));
    let grows = tail[0] > 0.0 && tail[4] / tail[0] >= 1.5;
    let mut sorted = quotients.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let bounded = quotients.iter().all(|&q| q <= 2.0 * median);
    let verdict = if monotone_up && grows {
        LipschitzVerdict::NotLipschitz
    } else if bounded {
        LipschitzVerdict::Lipschitz
    } else {
        LipschitzVerdict::NotLipschitz
    };
    Ok(LipschitzReport { quotients, verdict })
}

fn serialize_extended<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

/// Two-sided comparability constant over interior nodes, with a linear
/// extrapolation of the ratio onto pinned boundary nodes (both states vanish
/// there; the ratio of normal derivatives is what the boundary comparison
/// needs, and extrapolating the last two interior ratios recovers it exactly
/// for ratios affine in the coordinate).
#[derive(Debug, Clone, Serialize)]
pub struct ComparabilityReport {
    /// Smallest delta >= 1 with v/delta <= u <= delta v; infinite when either
    /// state touches zero in the interior (serialized as the string "inf").
    #[serde(serialize_with = "serialize_extended")]
    pub delta: f64,
    /// min over interior nodes and components of min(u, v).
    pub interior_margin: f64,
}

pub fn comparability(u: &State, v: &State) -> Result<ComparabilityReport> {
    if u.arity() != v.arity() || u.grid() != v.grid() {
        return Err(Error::Path("comparability needs one grid and matching arity".into()));
    }
    let grid = u.grid();
    let mut delta = 1.0f64;
    let mut margin = f64::INFINITY;
    for (a, b) in u.components.iter().zip(&v.components) {
        for i in 0..grid.node_count() {
            if grid.is_boundary(i) {
                continue;
            }
            let (x, y) = (a.values[i], b.values[i]);
            margin = margin.min(x.min(y));
            if x <= 0.0 || y <= 0.0 {
                return Ok(ComparabilityReport { delta: f64::INFINITY, interior_margin: margin.min(0.0) });
            }
            delta = delta.max(x / y).max(y / x);
        }
        // pinned boundary nodes: extrapolate each orientation's interior
        // ratio onto the boundary (no reciprocals: reciprocation would turn
        // an exactly-affine ratio into a curved one and spoil the estimate)
        for (i, n1, n2) in boundary_ratio_stencils(grid) {
            debug_assert!(grid.is_constrained(i));
            let (x1, y1) = (a.values[n1], b.values[n1]);
            let (x2, y2) = (a.values[n2], b.values[n2]);
            if x1 <= 0.0 || y1 <= 0.0 || x2 <= 0.0 || y2 <= 0.0 {
                continue; // interior loop above already decided delta = inf
            }
            let r = 2.0 * (x1 / y1) - (x2 / y2);
            let s = 2.0 * (y1 / x1) - (y2 / x2);
            if r <= 0.0 || s <= 0.0 {
                return Ok(ComparabilityReport { delta: f64::INFINITY, interior_margin: margin });
            }
            delta = delta.max(r).max(s);
        }
    }
    Ok(ComparabilityReport { delta, interior_margin: margin })
}

/// For each pinned boundary node, the two nearest interior nodes along the
/// inward grid line: (boundary, first, second). Corners are skipped.
fn boundary_ratio_stencils(grid: &crate::grid::Grid) -> Vec<(usize, usize, usize)> {
    use crate::grid::DomainKind;
    let n = grid.n;
    let mut out = Vec::new();
    match grid.domain.kind {
        DomainKind::Interval { .. } | DomainKind::Radial { .. } => {
            if grid.is_constrained(0) {
                out.push((0, 1, 2));
            }
            if grid.is_constrained(n - 1) {
                out.push((n - 1, n - 2, n - 3));
            }
        }
        DomainKind::Rectangle { .. } => {
            for idx in 0..grid.node_count() {
                if !grid.is_constrained(idx) {
                    continue;
                }
                let ix = idx / n;
                let iy = idx % n;
                let on_x = ix == 0 || ix == n - 1;
                let on_y = iy == 0 || iy == n - 1;
                if on_x && on_y {
                    continue; // corner: no inward grid line
                }
                if on_x {
                    let step = if ix == 0 { 1i64 } else { -1 };
                    let j1 = ((ix as i64 + step) as usize) * n + iy;
                    let j2 = ((ix as i64 + 2 * step) as usize) * n + iy;
                    out.push((idx, j1, j2));
                } else {
                    let step = if iy == 0 { 1i64 } else { -1 };
                    let j1 = ix * n + (iy as i64 + step) as usize;
                    let j2 = ix * n + (iy as i64 + 2 * step) as usize;
                    out.push((idx, j1, j2));
                }
            }
        }
    }
    out
}

/// The generator along which each family's uniqueness argument runs.
pub fn designated_generator(family: &Family) -> Generator {
    match family {
        Family::GeneralizedPlap { p, .. }
        | Family::PEigenvalue { p, .. }
        | Family::NonlinearBoundary { p, .. }
        | Family::AllenCahn { p, .. }
        | Family::MeanCurvatureEuclid { p, .. } => Generator::Power { r: *p },
        Family::MeanCurvatureMinkowski { .. } => Generator::Power { r: 2.0 },
        Family::Fractional { .. } | Family::GrossPitaevskii { .. } => Generator::Squared,
        Family::SchrodingerDual { .. } => Generator::FSquared,
        Family::HamiltonianDual { p, q } => Generator::ComponentPowers {
            rs: vec![(p + 1.0) / p, (q + 1.0) / q],
        },
        Family::Tabulated { .. } => Generator::Power { r: 2.0 },
    }
}

/// Hypothesis-and-conclusion report for one pair of candidate critical points.
#[derive(Debug, Clone, Serialize)]
pub struct PairCheck {
    pub first: usize,
    pub second: usize,
    pub energy_gap: f64,
    /// Hypothesis a): the path returns its endpoints bit-exactly.
    pub endpoints_exact: bool,
    /// Hypothesis b): start-regularity probe along the designated generator.
    pub lipschitz: LipschitzReport,
    /// Hypothesis c): sampled profile curvature.
    pub convexity: ConvexityProfile,
    pub comparability: ComparabilityReport,
    /// Conclusion ii): max |j(t) - j(0)| (copied from the profile).
    pub flatness_gap: f64,
}

/// Pairwise check over a list of candidate critical points.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremCheck {
    /// Euler-Lagrange residual norm of each candidate (criticality evidence).
    pub residuals: Vec<f64>,
    pub pairs: Vec<PairCheck>,
}

/// Run the full hypothesis battery on every unordered pair, along the
/// family's designated generator. Failed hypotheses are reported, never
/// assumed away; the only hard errors are evaluation errors.
pub fn theorem1_check(problem: &Problem, states: &[State], m: usize) -> Result<TheoremCheck> {
    let mut residuals = Vec::with_capacity(states.len());
    for s in states {
        residuals.push(problem.residual_norm(s)?);
    }
    let generator = designated_generator(problem.family());
    let mut pairs = Vec::new();
    for i in 0..states.len() {
        for j in i + 1..states.len() {
            let ei = problem.energy(&states[i])?;
            let ej = problem.energy(&states[j])?;
            let path = PathSpec::new(generator.clone(), states[i].clone(), states[j].clone())?;
            let endpoints_exact = {
                let g0 = path_eval_relaxed(&path, 0.0)?;
                let g1 = path_eval_relaxed(&path, 1.0)?;
                bit_equal(&g0, &states[i]) && bit_equal(&g1, &states[j])
            };
            let lipschitz = lipschitz_probe(&path, &ProbeNorm::Sup)?;
            let convexity = convexity_profile(problem, &path, m)?;
            let comp = comparability(&states[i], &states[j])?;
            let flatness_gap = convexity.flatness_gap;
            pairs.push(PairCheck {
                first: i,
                second: j,
                energy_gap: (ei - ej).abs(),
                endpoints_exact,
                lipschitz,
                convexity,
                comparability: comp,
                flatness_gap,
            });
        }
    }
    Ok(TheoremCheck { residuals, pairs })
}

fn bit_equal(a: &State, b: &State) -> bool {
    a.components
        .iter()
        .zip(&b.components)
        .all(|(x, y)| x.values.iter().zip(&y.values).all(|(p, q)| p.to_bits() == q.to_bits()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{smoothed_positive_field, substream_rng};
    use crate::grid::{Domain, Grid};
    use crate::problems::{Family, ProblemSpec, ScalarFn, ScalarMode, VectorMode};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn dirichlet_grid(n: usize) -> Grid {
        Grid::make(Domain::interval(0.0, 1.0), n).unwrap()
    }

    fn natural_grid(n: usize) -> Grid {
        Grid::make(Domain::interval_natural(0.0, 1.0), n).unwrap()
    }

    fn positive_pair(grid: &Grid, seed: u64) -> (State, State) {
        let mut rng = substream_rng(seed, 0);
        let u = smoothed_positive_field(grid, &mut rng, 0.5, 3.0, 5);
        let v = smoothed_positive_field(grid, &mut rng, 0.5, 3.0, 5);
        (State::scalar(u), State::scalar(v))
    }

    #[test]
    fn endpoints_return_bit_exactly() {
        let grid = dirichlet_grid(33);
        let (u, v) = positive_pair(&grid, 1);
        let path = PathSpec::new(Generator::Power { r: 2.7 }, u.clone(), v.clone()).unwrap();
        let g0 = path_eval(&path, 0.0).unwrap();
        let g1 = path_eval(&path, 1.0).unwrap();
        assert!(super::bit_equal(&g0, &u));
        assert!(super::bit_equal(&g1, &v));
    }

    #[test]
    fn power_two_constant_endpoints_spot_value() {
        let grid = natural_grid(33);
        let u = State::scalar(GridFunction::from_fn_unmasked(grid.clone(), |_, _| 3.0));
        let v = State::scalar(GridFunction::from_fn_unmasked(grid.clone(), |_, _| 4.0));
        let path = PathSpec::new(Generator::Power { r: 2.0 }, u, v).unwrap();
        let mid = path_eval(&path, 0.5).unwrap();
        for &val in &mid.components[0].values {
            assert_relative_eq!(val, 12.5f64.sqrt(), max_relative = 1e-15);
        }
    }

    #[test]
    fn f_squared_is_degenerate_on_equal_endpoints() {
        let grid = dirichlet_grid(33);
        let (u, _) = positive_pair(&grid, 2);
        let path = PathSpec::new(Generator::FSquared, u.clone(), u.clone()).unwrap();
        for &t in &[0.125, 0.5, 0.875] {
            let g = path_eval(&path, t).unwrap();
            for (a, b) in g.components[0].values.iter().zip(&u.components[0].values) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "gamma({t}) drifted");
            }
        }
    }

    #[test]
    fn monotone_envelope_holds_nodewise() {
        let grid = dirichlet_grid(33);
        let (u, v) = positive_pair(&grid, 3);
        for gen in [
            Generator::Power { r: 1.5 },
            Generator::Squared,
            Generator::FSquared,
            Generator::Straight,
        ] {
            let path = PathSpec::new(gen.clone(), u.clone(), v.clone()).unwrap();
            for k in 0..=16 {
                let t = k as f64 / 16.0;
                let g = path_eval(&path, t).unwrap();
                for i in 0..grid.node_count() {
                    let a = u.components[0].values[i];
                    let b = v.components[0].values[i];
                    let val = g.components[0].values[i];
                    assert!(
                        val >= a.min(b) - 1e-12 && val <= a.max(b) + 1e-12,
                        "{gen:?} escapes the envelope at node {i}, t={t}"
                    );
                }
            }
        }
    }

    #[test]
    fn reparameterization_is_consistent() {
        let grid = dirichlet_grid(33);
        let (u, v) = positive_pair(&grid, 4);
        let path = PathSpec::new(Generator::Power { r: 2.5 }, u, v).unwrap();
        let (t1, t2) = (0.3, 0.8);
        let u1 = path_eval(&path, t1).unwrap();
        let u2 = path_eval(&path, t2).unwrap();
        let sub = PathSpec::new(Generator::Power { r: 2.5 }, u1, u2).unwrap();
        for &theta in &[0.0, 0.25, 0.5, 0.75, 1.0] {
            let outer = path_eval(&path, (1.0 - theta) * t1 + theta * t2).unwrap();
            let inner = path_eval(&sub, theta).unwrap();
            assert!(outer.sup_distance(&inner) <= 1e-13 * (1.0 + outer.sup_norm()));
        }
    }

    #[test]
    fn squared_path_preserves_mass_exactly() {
        let grid = Grid::make(Domain::radial(2, 5.0), 65).unwrap();
        let spec = ProblemSpec {
            family: Family::GrossPitaevskii {
                k: 2,
                b: vec![vec![1.0, 0.2], vec![0.2, 1.0]],
                mode: VectorMode::FixedMass,
                v: ScalarFn::power(2.0),
            },
            grid: grid.clone(),
        };
        let p = Problem::new(spec).unwrap();
        let mut rng = substream_rng(9, 1);
        let normalize = |g: GridFunction| {
            let mass = integrate_map(&g, |t| t * t);
            g.scaled(1.0 / mass.sqrt())
        };
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            State::new(vec![
                normalize(smoothed_positive_field(&grid, rng, 0.5, 3.0, 5)),
                normalize(smoothed_positive_field(&grid, rng, 0.5, 3.0, 5)),
            ])
            .unwrap()
        };
        let u = mk(&mut rng);
        let v = mk(&mut rng);
        let path = PathSpec::new(Generator::Squared, u, v).unwrap();
        for &t in &[0.2, 0.5, 0.9] {
            let g = path_eval(&path, t).unwrap();
            for mass in p.constraint_value(&g).unwrap() {
                assert!((mass - 1.0).abs() <= 1e-13, "mass drifted to {mass} at t={t}");
            }
        }
    }

    #[test]
    fn comparability_examples() {
        // constants on a natural grid
        let nat = natural_grid(33);
        let one = State::scalar(GridFunction::from_fn_unmasked(nat.clone(), |_, _| 1.0));
        let two = State::scalar(GridFunction::from_fn_unmasked(nat.clone(), |_, _| 2.0));
        let rep = comparability(&one, &two).unwrap();
        assert_relative_eq!(rep.delta, 2.0, max_relative = 1e-15);
        assert_relative_eq!(comparability(&one, &one).unwrap().delta, 1.0, max_relative = 1e-15);

        // ratio 1 + x/2 against a vanishing boundary: extrapolation recovers
        // the boundary ratio 1.5 exactly (the ratio is affine in x)
        let grid = dirichlet_grid(65);
        let u = State::scalar(GridFunction::from_fn(grid.clone(), |x, _| (PI * x).sin()));
        let v = State::scalar(GridFunction::from_fn(grid.clone(), |x, _| {
            (PI * x).sin() * (1.0 + 0.5 * x)
        }));
        let rep = comparability(&u, &v).unwrap();
        assert!((rep.delta - 1.5).abs() <= 1e-12, "delta = {}", rep.delta);
        assert!(rep.interior_margin > 0.0);

        // a zero interior value kills comparability without crashing
        let mut w = u.clone();
        w.components[0].values[32] = 0.0;
        let rep = comparability(&w, &v).unwrap();
        assert!(rep.delta.is_infinite());
    }

    /// Profile table of x^3/3 - x - 2/3 shifted right by 1, knots at 1/512:
    /// with endpoints u = 0 and v = 2 under the r = 2 generator this walks
    /// the classical counterexample path.
    fn toy_problem(grid: &Grid) -> Problem {
        let m = 1536;
        let knots = (0..=m)
            .map(|k| {
                let x = -0.5 + 3.0 * k as f64 / m as f64;
                let y = x - 1.0;
                (x, y * y * y / 3.0 - y - 2.0 / 3.0)
            })
            .collect();
        Problem::new(ProblemSpec {
            family: Family::Tabulated { f: ScalarFn::Tabulated { knots } },
            grid: grid.clone(),
        })
        .unwrap()
    }

    #[test]
    fn toy_counterexample_profile_and_probe() {
        let grid = natural_grid(33);
        let p = toy_problem(&grid);
        let u = State::scalar(GridFunction::from_fn_unmasked(grid.clone(), |_, _| 0.0));
        let v = State::scalar(GridFunction::from_fn_unmasked(grid.clone(), |_, _| 2.0));
        let path = PathSpec::new(Generator::Power { r: 2.0 }, u, v).unwrap();

        let profile = convexity_profile(&p, &path, DEFAULT_SAMPLES).unwrap();
        assert_eq!(profile.verdict, ConvexityVerdict::StrictlyConvex);
        assert!(!profile.flat);
        // j(tau) = (8/3) tau^{3/2} - 4 tau, endpoints 0 and -4/3
        for (i, (&t, &j)) in profile.t.iter().zip(&profile.j).enumerate() {
            let exact = 8.0 / 3.0 * t.powf(1.5) - 4.0 * t;
            assert!(
                (j - exact).abs() <= 2e-5,
                "sample {i}: j({t}) = {j}, closed form {exact}"
            );
        }
        assert!((profile.j[0] - 0.0).abs() <= 1e-14);
        assert!((profile.j[64] + 4.0 / 3.0).abs() <= 1e-14);
        // strictly convex profiles sit below their chord
        assert!(profile.chord_gap <= 1e-12);

        // start regularity fails: quotient 2 / sqrt(t)
        let probe = lipschitz_probe(&path, &ProbeNorm::Sup).unwrap();
        assert_eq!(probe.verdict, LipschitzVerdict::NotLipschitz);
        for (idx, q) in probe.quotients.iter().enumerate() {
            let t = 2f64.powi(-(idx as i32 + 1));
            assert_relative_eq!(*q, 2.0 / t.sqrt(), max_relative = 1e-10);
        }
    }

    #[test]
    fn probe_classifies_both_regimes() {
        let grid = dirichlet_grid(33);
        // degenerate start: gamma(t) = sqrt(t) * v
        let zero = State::scalar(GridFunction::zeros(grid.clone()));
        let v = State::scalar(GridFunction::from_fn(grid.clone(), |x, _| (PI * x).sin()));
        let path = PathSpec::new(Generator::Power { r: 2.0 }, zero, v.clone()).unwrap();
        assert!(path_eval(&path, 0.5).is_err(), "strict eval must reject the zero endpoint");
        let probe = lipschitz_probe(&path, &ProbeNorm::Sup).unwrap();
        assert_eq!(probe.verdict, LipschitzVerdict::NotLipschitz);

        // comparable positive endpoints stay Lipschitz, in both norms
        let (u, w) = positive_pair(&grid, 7);
        let path = PathSpec::new(Generator::Power { r: 1.7 }, u, w).unwrap();
        for norm in [ProbeNorm::Sup, ProbeNorm::SobolevP { p: 2.0 }] {
            let probe = lipschitz_probe(&path, &norm).unwrap();
            assert_eq!(probe.verdict, LipschitzVerdict::Lipschitz, "{norm:?}");
        }
    }

    #[test]
    fn scaled_eigenfunctions_are_convex_not_strict() {
        let grid = dirichlet_grid(257);
        let spec = ProblemSpec {
            family: Family::PEigenvalue { p: 2.0, lambda: PI * PI },
            grid: grid.clone(),
        };
        let p = Problem::new(spec).unwrap();
        let u = State::scalar(GridFunction::from_fn(grid.clone(), |x, _| (PI * x).sin()));
        let v = u.scaled(2.0);
        let path = PathSpec::new(designated_generator(p.family()), u.clone(), v.clone()).unwrap();
        let profile = convexity_profile(&p, &path, DEFAULT_SAMPLES).unwrap();
        // the profile is affine in t for the homogeneous functional; the
        // curvature estimate only carries round-off from the cancelling
        // quadratic terms
        assert_eq!(profile.verdict, ConvexityVerdict::Convex);
        assert!(profile.min_d2j.abs() <= 1e-12, "min_d2j = {}", profile.min_d2j);
        // distinct levels: I(2u) = 4 I(u)
        let ei = p.energy(&u).unwrap();
        let ej = p.energy(&v).unwrap();
        assert_relative_eq!(ej, 4.0 * ei, max_relative = 1e-12);
        assert!(!profile.flat, "levels differ, profile must not read as flat");
    }

    #[test]
    fn constant_path_is_flat() {
        let grid = dirichlet_grid(65);
        let spec = ProblemSpec {
            family: Family::SchrodingerDual {
                mode: ScalarMode::FixedOmega { omega: 1.0 },
                v: ScalarFn::constant(0.0),
            },
            grid: grid.clone(),
        };
        let p = Problem::new(spec).unwrap();
        let mut rng = substream_rng(21, 0);
        let u = State::scalar(smoothed_positive_field(&grid, &mut rng, 0.5, 2.0, 5));
        let path = PathSpec::new(Generator::FSquared, u.clone(), u.clone()).unwrap();
        let profile = convexity_profile(&p, &path, DEFAULT_SAMPLES).unwrap();
        assert!(profile.flat);
        assert_ne!(profile.verdict, ConvexityVerdict::NotConvex);
        assert!(profile.flatness_gap <= 1e-9 * profile.scale);
    }

    #[test]
    fn verdict_survives_endpoint_swap() {
        let grid = natural_grid(33);
        let p = toy_problem(&grid);
        let u = State::scalar(GridFunction::from_fn_unmasked(grid.clone(), |_, _| 0.0));
        let v = State::scalar(GridFunction::from_fn_unmasked(grid.clone(), |_, _| 2.0));
        let fwd = PathSpec::new(Generator::Power { r: 2.0 }, u.clone(), v.clone()).unwrap();
        let rev = PathSpec::new(Generator::Power { r: 2.0 }, v, u).unwrap();
        let pf = convexity_profile(&p, &fwd, 33).unwrap();
        let pr = convexity_profile(&p, &rev, 33).unwrap();
        assert_eq!(pf.verdict, pr.verdict);
        assert!((pf.min_d2j - pr.min_d2j).abs() <= 1e-13 * pf.scale);
    }

    #[test]
    fn theorem_check_shapes_and_flatness() {
        let grid = dirichlet_grid(129);
        let spec = ProblemSpec {
            family: Family::PEigenvalue { p: 2.0, lambda: PI * PI },
            grid: grid.clone(),
        };
        let p = Problem::new(spec).unwrap();
        let u = State::scalar(GridFunction::from_fn(grid.clone(), |x, _| (PI * x).sin()));

        // singleton: no pairs
        let single = theorem1_check(&p, std::slice::from_ref(&u), 17).unwrap();
        assert!(single.pairs.is_empty());
        assert_eq!(single.residuals.len(), 1);

        // identical copies: flat, equal levels, Lipschitz start
        let check = theorem1_check(&p, &[u.clone(), u.clone()], DEFAULT_SAMPLES).unwrap();
        assert_eq!(check.pairs.len(), 1);
        let pair = &check.pairs[0];
        assert!(pair.endpoints_exact);
        assert_eq!(pair.energy_gap, 0.0);
        assert!(pair.convexity.flat);
        assert_eq!(pair.lipschitz.verdict, LipschitzVerdict::Lipschitz);
        assert!(pair.comparability.delta < 1.0 + 1e-12);
    }

    #[test]
    fn invalid_paths_are_rejected() {
        let grid = dirichlet_grid(33);
        let (u, v) = positive_pair(&grid, 11);
        assert!(PathSpec::new(Generator::Power { r: 1.0 }, u.clone(), v.clone()).is_err());
        assert!(PathSpec::new(
            Generator::ComponentPowers { rs: vec![2.0, 3.0] },
            u.clone(),
            v.clone()
        )
        .is_err());
        let other = State::scalar(GridFunction::zeros(dirichlet_grid(65)));
        assert!(PathSpec::new(Generator::Squared, u.clone(), other).is_err());
        // negative interior value: strict eval refuses, relaxed succeeds
        let mut neg = v.clone();
        neg.components[0].values[5] = -0.3;
        let path = PathSpec::new(Generator::Squared, u, neg).unwrap();
        assert!(path_eval(&path, 0.25).is_err());
        assert!(path_eval_relaxed(&path, 0.25).is_ok());
        // sample counts below 17 are rejected
        let grid_n = natural_grid(33);
        let p = toy_problem(&grid_n);
        let a = State::scalar(GridFunction::from_fn_unmasked(grid_n.clone(), |_, _| 1.0));
        let b = State::scalar(GridFunction::from_fn_unmasked(grid_n, |_, _| 2.0));
        let path = PathSpec::new(Generator::Power { r: 2.0 }, a, b).unwrap();
        assert!(convexity_profile(&p, &path, 16).is_err());
    }

    #[test]
    fn profile_csv_is_parseable_and_round_trips() {
        let grid = natural_grid(33);
        let p = toy_problem(&grid);
        let u = State::scalar(GridFunction::from_fn_unmasked(grid.clone(), |_, _| 0.0));
        let v = State::scalar(GridFunction::from_fn_unmasked(grid, |_, _| 2.0));
        let path = PathSpec::new(Generator::Power { r: 2.0 }, u, v).unwrap();
        let profile = convexity_profile(&p, &path, 17).unwrap();
        let csv = profile_csv(&profile);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "t,j,d2j");
        assert_eq!(lines.len(), 18);
        // numeric cells round-trip exactly
        let row: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(row[0].parse::<f64>().unwrap(), profile.t[1]);
        assert_eq!(row[1].parse::<f64>().unwrap(), profile.j[1]);
        assert_eq!(row[2].parse::<f64>().unwrap(), profile.d2j[0]);
        // end rows have empty curvature cells
        assert!(lines[1].ends_with(','));
    }
}
