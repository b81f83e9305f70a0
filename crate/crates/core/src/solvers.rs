//! Critical-point solvers and the multistart uniqueness harness.
//!
//! Everything here is deterministic given (spec, seed, options): flows are
//! single-threaded, multistart runs its flows concurrently but merges results
//! in start order, and random starts come from per-start substreams of one
//! master seed. Thread count never changes a reported number.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{smoothed_positive_field, substream_rng};
use crate::grid::{
    gradient_cells, poisson_solve, Domain, DomainKind, Grid, GridFunction, Preconditioner,
    dirichlet_form_gradient,
};
use crate::linalg::{conjugate_gradient, dot, rk4, DenseSym, SymBand, Tridiag};
use crate::paths::{theorem1_check, TheoremCheck};
use crate::problems::{dual_f, dual_f_prime, Family, Problem, ProblemSpec, ScalarFn, ScalarMode, State, VectorMode};

/// Sup norm below which a flow iterate counts as the zero state.
pub const COLLAPSE_SUP: f64 = 1e-6;
/// Relative sup distance below which two converged states are one solution.
pub const CLUSTER_RADIUS: f64 = 1e-3;
/// Boundary-to-peak ratio above which a radial truncation is re-run larger.
pub const TRUNCATION_RATIO: f64 = 1e-8;

/// Knobs shared by every descent flow. `seed` only enters through callers
/// that draw random initial states; the flows themselves are deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowOptions {
    pub max_iters: usize,
    /// Initial trial step; grows 1.1x on acceptance, shrinks by `backtrack`
    /// on rejection.
    pub step: f64,
    pub tol_res: f64,
    /// Positivity floor: interior values of positivity-constrained families
    /// are clamped up to this value (each clamp is counted).
    pub eps_pos: f64,
    pub backtrack: f64,
    pub seed: u64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            max_iters: 20_000,
            step: 1.0,
            tol_res: 1e-8,
            eps_pos: 1e-10,
            backtrack: 0.5,
            seed: 0,
        }
    }
}

impl FlowOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Solve("max_iters must be positive".into()));
        }
        if !(self.step > 0.0) || !(self.tol_res > 0.0) || !(self.eps_pos > 0.0) {
            return Err(Error::Solve("step, tol_res and eps_pos must be positive".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Solve("backtracking factor must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// One row of the iterate trace (written to CSV, not to the JSON report).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TracePoint {
    pub iter: usize,
    pub energy: f64,
    pub residual: f64,
}

/// Outcome of one flow. `positive` is the flag that admits a state into the
/// candidate solution set: it requires strictly positive interior values and
/// no clamping during the final 100 accepted steps (persistent clamping means
/// the flow is pinned against the floor, not at an interior critical point).
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    #[serde(skip_serializing)]
    pub state: State,
    pub energy: f64,
    pub residual: f64,
    /// Constraint multipliers, one per normalized component; empty for
    /// unconstrained flows.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Minimum interior nodal value of the final state.
    pub positivity: f64,
    pub positive: bool,
    pub clamps: usize,
    pub collapsed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_radius: Option<f64>,
    #[serde(skip_serializing)]
    pub trace: Vec<TracePoint>,
}

/// Iterate trace as CSV text: `iter,energy,residual` per accepted iteration.
pub fn trace_csv(report: &SolveReport) -> String {
    let mut out = String::from("iter,energy,residual\n");
    for p in &report.trace {
        out.push_str(&format!("{},{},{}\n", p.iter, p.energy, p.residual));
    }
    out
}

/// Families whose flows seek positive solutions (all but the profile demo).
fn demands_positivity(family: &Family) -> bool {
    !matches!(family, Family::Tabulated { .. })
}

/// Lift non-positive interior values onto the positivity floor; returns the
/// number of lifted nodes. Small positive values are legitimate decay tails
/// and stay untouched; only excursions out of the positive cone are clamped.
fn clamp_floor(grid: &Grid, x: &mut State, floor: f64) -> usize {
    let mut count = 0;
    for c in &mut x.components {
        for i in 0..grid.node_count() {
            if !grid.is_constrained(i) && c.values[i] <= 0.0 {
                c.values[i] = floor;
                count += 1;
            }
        }
    }
    count
}

fn min_interior(grid: &Grid, x: &State) -> f64 {
    let mut m = f64::INFINITY;
    for c in &x.components {
        for i in 0..grid.node_count() {
            if !grid.is_constrained(i) {
                m = m.min(c.values[i]);
            }
        }
    }
    m
}

/// Weighted L2 norm of an Euler-Lagrange field given in raw (quadrature
/// weighted) units: ||r/w||_w = sqrt(sum r^2 / w).
fn raw_residual_norm(grid: &Grid, raw: &[Vec<f64>]) -> f64 {
    let w = grid.quad_weights();
    let mut acc = 0.0;
    for r in raw {
        for i in 0..grid.node_count() {
            if !grid.is_constrained(i) {
                acc += r[i] * r[i] / w[i];
            }
        }
    }
    acc.sqrt()
}

// ---------------------------------------------------------------------------
// normalization constraints
// ---------------------------------------------------------------------------

/// Which components a normalized flow renormalizes, and how multipliers are
/// read off. The eigenvalue family is included: its states are normalized in
/// the p-norm so the flow descends the gradient part alone (the lambda term
/// is constant on the constraint set) and the multiplier reports the
/// Rayleigh eigenvalue.
enum Constraint {
    None,
    MassL2,
    MassTransformed,
    PNorm { p: f64, lambda: f64 },
}

impl Constraint {
    fn for_family(family: &Family) -> Constraint {
        match family {
            Family::GrossPitaevskii { mode: VectorMode::FixedMass, .. } => Constraint::MassL2,
            Family::SchrodingerDual { mode: ScalarMode::FixedMass, .. } => {
                Constraint::MassTransformed
            }
            Family::PEigenvalue { p, lambda } => Constraint::PNorm { p: *p, lambda: *lambda },
            _ => Constraint::None,
        }
    }

    /// Rescale each constrained component so its constraint value is exactly
    /// one (up to round-off). Errors when a component cannot reach mass one.
    fn renormalize(&self, x: &mut State) -> Result<()> {
        match self {
            Constraint::None => Ok(()),
            Constraint::MassL2 => {
                for c in &mut x.components {
                    let m = crate::grid::integrate_map(c, |t| t * t);
                    if !(m > 0.0) || !m.is_finite() {
                        return Err(Error::Solve("component mass vanished during flow".into()));
                    }
                    let a = 1.0 / m.sqrt();
                    for v in &mut c.values {
                        *v *= a;
                    }
                }
                Ok(())
            }
            Constraint::PNorm { p, .. } => {
                let c = &mut x.components[0];
                let m = crate::grid::integrate_map(c, |t| t.abs().powf(*p));
                if !(m > 0.0) || !m.is_finite() {
                    return Err(Error::Solve("state norm vanished during flow".into()));
                }
                let a = m.powf(-1.0 / p);
                for v in &mut c.values {
                    *v *= a;
                }
                Ok(())
            }
            Constraint::MassTransformed => {
                let v = &mut x.components[0];
                let mass = |a: f64| -> f64 {
                    crate::grid::integrate_map(v, |t| {
                        let f = dual_f(a * t);
                        f * f
                    })
                };
                // Bracket mass(alpha) = 1; the transformed mass is strictly
                // increasing in alpha and grows without bound, so expansion
                // fails only for a degenerate state.
                let (mut lo, mut hi) = (1.0_f64, 1.0_f64);
                let m1 = mass(1.0);
                if !m1.is_finite() {
                    return Err(Error::Solve("transformed mass overflowed".into()));
                }
                if m1 < 1.0 {
                    for _ in 0..200 {
                        hi *= 2.0;
                        if mass(hi) >= 1.0 {
                            break;
                        }
                    }
                    if mass(hi) < 1.0 {
                        return Err(Error::Solve(
                            "renormalization bracket failure: transformed mass stays below one"
                                .into(),
                        ));
                    }
                } else {
                    for _ in 0..200 {
                        lo *= 0.5;
                        if mass(lo) <= 1.0 {
                            break;
                        }
                    }
                    if mass(lo) > 1.0 {
                        return Err(Error::Solve(
                            "renormalization bracket failure: transformed mass stays above one"
                                .into(),
                        ));
                    }
                }
                // Safeguarded Newton on alpha; bisection fallback keeps the
                // bracket, Newton gives the 1e-12 constraint accuracy fast.
                let mut a = 0.5 * (lo + hi);
                for _ in 0..200 {
                    let m = mass(a);
                    let err = m - 1.0;
                    if err.abs() <= 1e-14 {
                        break;
                    }
                    if err > 0.0 {
                        hi = a;
                    } else {
                        lo = a;
                    }
                    let dm = crate::grid::integrate_map(v, |t| {
                        let f = dual_f(a * t);
                        2.0 * f * dual_f_prime(a * t) * t
                    });
                    let newton = a - err / dm;
                    a = if dm > 0.0 && newton > lo && newton < hi {
                        newton
                    } else {
                        0.5 * (lo + hi)
                    };
                }
                if (mass(a) - 1.0).abs() > 1e-12 {
                    return Err(Error::Solve("renormalization did not reach mass one".into()));
                }
                for t in &mut v.values {
                    *t *= a;
                }
                Ok(())
            }
        }
    }

    /// Constraint-gradient directions in Euler-Lagrange units, one per
    /// constrained component (component index, nodal direction).
    fn directions(&self, x: &State) -> Vec<(usize, Vec<f64>)> {
        match self {
            Constraint::None => Vec::new(),
            Constraint::MassL2 => x
                .components
                .iter()
                .enumerate()
                .map(|(c, u)| (c, u.values.clone()))
                .collect(),
            Constraint::MassTransformed => {
                let v = &x.components[0];
                let d = v
                    .values
                    .iter()
                    .map(|&t| {
                        let f = dual_f(t);
                        f * dual_f_prime(t)
                    })
                    .collect();
                vec![(0, d)]
            }
            Constraint::PNorm { p, .. } => {
                let u = &x.components[0];
                let d = u
                    .values
                    .iter()
                    .map(|&t| t.signum() * t.abs().powf(p - 1.0))
                    .collect();
                vec![(0, d)]
            }
        }
    }

    /// Multiplier each reported value adds on top of the Rayleigh quotient.
    fn multiplier_offset(&self) -> f64 {
        match self {
            Constraint::PNorm { lambda, .. } => *lambda,
            _ => 0.0,
        }
    }

    /// Nodal derivative of each constraint direction with respect to its own
    /// component (the directions are pointwise maps, so the derivative is
    /// diagonal). Order matches `directions`.
    fn direction_derivative(&self, x: &State) -> Vec<(usize, Vec<f64>)> {
        match self {
            Constraint::None => Vec::new(),
            Constraint::MassL2 => x
                .components
                .iter()
                .enumerate()
                .map(|(c, u)| (c, vec![1.0; u.values.len()]))
                .collect(),
            Constraint::MassTransformed => {
                let v = &x.components[0];
                let d = v
                    .values
                    .iter()
                    .map(|&t| {
                        let f = dual_f(t);
                        let fp = dual_f_prime(t);
                        // d/dv (f f') with f'' = -2 f (f')^4
                        fp * fp - 2.0 * f * f * fp.powi(4)
                    })
                    .collect();
                vec![(0, d)]
            }
            Constraint::PNorm { p, .. } => {
                let u = &x.components[0];
                let d = u
                    .values
                    .iter()
                    .map(|&t| (p - 1.0) * t.abs().powf(p - 2.0))
                    .collect();
                vec![(0, d)]
            }
        }
    }
}

/// Rayleigh multipliers and the projected (multiplier-equation) residual.
/// Given the raw gradient, subtracts from each constrained component its
/// component along the constraint gradient; what is left is the residual of
/// the Euler-Lagrange equation with the multiplier in place.
fn project_constraints(
    grid: &Grid,
    constraint: &Constraint,
    x: &State,
    raw: &mut [Vec<f64>],
) -> Vec<f64> {
    let w = grid.quad_weights();
    let mut multipliers = Vec::new();
    for (c, dir) in constraint.directions(x) {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..grid.node_count() {
            if !grid.is_constrained(i) {
                // raw is already quadrature weighted, dir is not.
                num += raw[c][i] * dir[i];
                den += w[i] * dir[i] * dir[i];
            }
        }
        let mu = if den > 0.0 { num / den } else { 0.0 };
        for i in 0..grid.node_count() {
            if !grid.is_constrained(i) {
                raw[c][i] -= mu * w[i] * dir[i];
            }
        }
        multipliers.push(mu + constraint.multiplier_offset());
    }
    multipliers
}

// ---------------------------------------------------------------------------
// descent flows
// ---------------------------------------------------------------------------

/// Unconstrained preconditioned descent with monotone energy acceptance.
/// On a radial grid the truncation is checked after convergence and the flow
/// re-run once at 1.5x the radius if the boundary value is not negligible.
pub fn gradient_flow(problem: &Problem, init: &State, opts: &FlowOptions) -> Result<SolveReport> {
    run_with_truncation_check(problem, init, opts, false)
}

/// Constrained descent: every accepted step is renormalized back onto the
/// constraint set, multipliers are Rayleigh quotients of the unconstrained
/// gradient against the constraint gradient, and the residual is that of the
/// multiplier equation. Rejects families without a normalization constraint.
pub fn normalized_flow(problem: &Problem, init: &State, opts: &FlowOptions) -> Result<SolveReport> {
    if matches!(Constraint::for_family(problem.family()), Constraint::None) {
        return Err(Error::Solve(format!(
            "{} has no normalization constraint; use the plain flow",
            problem.family().name()
        )));
    }
    run_with_truncation_check(problem, init, opts, true)
}

/// Flow dispatch on the family's constraint: mass- or norm-constrained
/// families run the normalized flow, everything else the plain one.
pub fn auto_flow(problem: &Problem, init: &State, opts: &FlowOptions) -> Result<SolveReport> {
    if matches!(Constraint::for_family(problem.family()), Constraint::None) {
        gradient_flow(problem, init, opts)
    } else {
        normalized_flow(problem, init, opts)
    }
}

fn run_with_truncation_check(
    problem: &Problem,
    init: &State,
    opts: &FlowOptions,
    constrained: bool,
) -> Result<SolveReport> {

    let report = flow_loop(problem, init, opts, constrained)?;
    let grid = problem.grid();
    let (dim, radius) = match grid.domain.kind {
        DomainKind::Radial { dim, radius } => (dim, radius),
        _ => return Ok(report),
    };
    if !report.converged || report.collapsed {
        return Ok(report);
    }
    // Outermost free node value relative to the peak; a tail that has not
    // decayed there means the artificial radius is biasing the solution.
    let sup = report.state.sup_norm();
    let last_free = grid.node_count() - 2;
    let worst = report
        .state
        .components
        .iter()
        .map(|c| c.values[last_free].abs())
        .fold(0.0, f64::max);
    if sup <= 0.0 || worst <= TRUNCATION_RATIO * sup {
        return Ok(report);
    }
    let bigger = Grid::make(Domain::radial(dim, 1.5 * radius), grid.n)?;
    let spec = ProblemSpec { family: problem.family().clone(), grid: bigger.clone() };
    let problem2 = Problem::new(spec)?;
    let init2 = State::new(
        report
            .state
            .components
            .iter()
            .map(|c| resample_radial(c, &bigger))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let mut rerun = flow_loop(&problem2, &init2, opts, constrained)?;
    rerun.truncation_radius = Some(1.5 * radius);
    Ok(rerun)
}

/// Linear interpolation of a radial profile onto a wider grid of the same
/// resolution; zero beyond the old radius.
fn resample_radial(u: &GridFunction, target: &Grid) -> Result<GridFunction> {
    let src = &u.grid;
    let (h_old, n_old) = (src.h(), src.n);
    let mut vals = vec![0.0; target.node_count()];
    for i in 0..target.node_count() {
        let r = i as f64 * target.h();
        let s = r / h_old;
        let k = s.floor() as usize;
        if k + 1 < n_old {
            let t = s - k as f64;
            vals[i] = (1.0 - t) * u.values[k] + t * u.values[k + 1];
        }
    }
    GridFunction::new(target.clone(), vals)
}

/// Family-matched descent direction. Differential Euler-Lagrange operators
/// get the (S+W)^{-1} smoothing metric; the dual pair's operator is
/// algebraic in (f, g), so a diagonal Newton scale on the power term
/// converges orders of magnitude faster there.
fn descent_direction(
    problem: &Problem,
    x: &State,
    raw: &[Vec<f64>],
    pre: &Preconditioner,
) -> Result<State> {
    let grid = problem.grid();
    match problem.family() {
        Family::HamiltonianDual { p, q } => {
            let w = grid.quad_weights();
            let exps = [1.0 / p, 1.0 / q];
            let comps = raw
                .iter()
                .zip(&x.components)
                .zip(exps.iter())
                .map(|((r, u), &e)| {
                    let vals = (0..grid.node_count())
                        .map(|i| {
                            if grid.is_constrained(i) {
                                0.0
                            } else {
                                let slope = e * u.values[i].abs().powf(e - 1.0) + 1e-12;
                                r[i] / (w[i] * slope)
                            }
                        })
                        .collect();
                    GridFunction::new(grid.clone(), vals)
                })
                .collect::<Result<Vec<_>>>()?;
            State::new(comps)
        }
        _ => State::new(
            raw.iter()
                .map(|r| GridFunction::new(grid.clone(), pre.apply(grid, r)))
                .collect::<Result<Vec<_>>>()?,
        ),
    }
}

/// A converged state only counts as positive when the final this-many
/// iterations logged no clamp, so convergence waits until the most recent
/// clamp has aged out (or the budget runs dry).
const CLAMP_AGE: usize = 100;

struct LineSearch {
    accepted: bool,
    regime: Option<Error>,
}

/// Backtracking search along one descent direction. A candidate is accepted
/// when its energy strictly decreases beyond `eta`, or is within `eta` while
/// the projected residual strictly decreases: near a critical point the true
/// per-step decrement falls below one ulp of the energy, and only the
/// residual can still certify progress. Unconstrained flows run with
/// `eta = 0`, so their accepted energies are non-increasing exactly as
/// evaluated; renormalizing flows get a few-ulp allowance because the
/// constraint rescaling perturbs the energy at round-off on every step.
#[allow(clippy::too_many_arguments)]
fn try_direction(
    problem: &Problem,
    constraint: &Constraint,
    clamp: bool,
    opts: &FlowOptions,
    dir: &State,
    s0: f64,
    residual: f64,
    eta: f64,
    k: usize,
    x: &mut State,
    energy: &mut f64,
    step: &mut f64,
    clamps: &mut usize,
    last_clamp: &mut Option<usize>,
) -> Result<LineSearch> {
    let grid = problem.grid();
    let mut s = s0;
    let mut regime: Option<Error> = None;
    for _ in 0..60 {
        let mut cand = x.clone();
        cand.axpy(-s, dir);
        let clamped = if clamp { clamp_floor(grid, &mut cand, opts.eps_pos) } else { 0 };
        constraint.renormalize(&mut cand)?;
        let accept = match problem.energy(&cand) {
            Ok(e_new) if e_new < *energy - eta => Some(e_new),
            Ok(e_new) if e_new <= *energy + eta => {
                let mut raw2 = problem.raw_gradient(&cand)?;
                project_constraints(grid, constraint, &cand, &mut raw2);
                if raw_residual_norm(grid, &raw2) < residual {
                    Some(e_new)
                } else {
                    None
                }
            }
            Ok(_) => None,
            Err(e @ Error::Regime(_)) => {
                regime = Some(e);
                s *= opts.backtrack;
                continue;
            }
            Err(e) => return Err(e),
        };
        match accept {
            Some(e_new) => {
                *x = cand;
                *energy = e_new;
                *step = s * 1.1;
                if clamped > 0 {
                    *clamps += clamped;
                    *last_clamp = Some(k);
                }
                return Ok(LineSearch { accepted: true, regime: None });
            }
            None => {
                regime = None;
                s *= opts.backtrack;
            }
        }
    }
    Ok(LineSearch { accepted: false, regime })
}

/// Newton direction for problems whose node coupling runs along a line:
/// same-component stiffness couples node neighbors and every other term acts
/// nodewise, so the Jacobian of the gradient is a symmetric band of width
/// equal to the component count. Three finite-difference probes per
/// component (stride-3 node coloring touches each band entry exactly once)
/// recover the band; constraints enter as a multiplier shift plus bordered
/// elimination, which keeps the step first-order tangent to the constraint
/// set. Returns None when the structure does not apply or the factorization
/// fails even with diagonal safeguards.
fn newton_direction(
    problem: &Problem,
    constraint: &Constraint,
    x: &State,
    raw_base: &[Vec<f64>],
    rhs: &[Vec<f64>],
    multipliers: &[f64],
) -> Result<Option<State>> {
    let grid = problem.grid();
    let arity = x.components.len();
    if matches!(
        problem.family(),
        Family::Fractional { .. } | Family::HamiltonianDual { .. }
    ) || !matches!(
        grid.domain.kind,
        DomainKind::Interval { .. } | DomainKind::Radial { .. }
    ) {
        return Ok(None);
    }
    let n = grid.node_count();
    let free: Vec<usize> = (0..n).filter(|&i| !grid.is_constrained(i)).collect();
    let m = free.len();
    if m < 3 || free[m - 1] - free[0] + 1 != m {
        return Ok(None);
    }
    let big = m * arity;
    let kd = arity;
    let delta = 1e-7 * (1.0 + x.sup_norm());

    // Band recovery; symmetric entries are probed twice and averaged.
    let mut acc = SymBand::zeros(big, kd);
    let mut cnt = SymBand::zeros(big, kd);
    for comp in 0..arity {
        for color in 0..3 {
            let mut z = x.clone();
            for (j, &nj) in free.iter().enumerate() {
                if j % 3 == color {
                    z.components[comp].values[nj] += delta;
                }
            }
            let rawz = match problem.raw_gradient(&z) {
                Ok(r) => r,
                Err(Error::Regime(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            for c in 0..arity {
                for (i, &ni) in free.iter().enumerate() {
                    // the unique perturbed column in this row's node stencil
                    let colored = [i.wrapping_sub(1), i, i + 1]
                        .into_iter()
                        .find(|&j| j < m && j % 3 == color);
                    let Some(j) = colored else { continue };
                    // cross-component coupling is node-diagonal
                    if c != comp && j != i {
                        continue;
                    }
                    let grow = i * arity + c;
                    let gcol = j * arity + comp;
                    let (hi, lo) = (grow.max(gcol), grow.min(gcol));
                    if hi - lo > kd {
                        continue;
                    }
                    acc.bands[hi - lo][lo] += (rawz[c][ni] - raw_base[c][ni]) / delta;
                    cnt.bands[hi - lo][lo] += 1.0;
                }
            }
        }
    }
    for b in 0..=kd {
        for (a, c) in acc.bands[b].iter_mut().zip(&cnt.bands[b]) {
            if *c > 0.0 {
                *a /= *c;
            }
        }
    }

    // Multiplier shift: the projected residual solves raw - mu w dir = 0, so
    // its Jacobian subtracts mu times the (diagonal) derivative of w dir.
    let w = grid.quad_weights();
    let dirs = constraint.directions(x);
    let ders = constraint.direction_derivative(x);
    let offset = constraint.multiplier_offset();
    for (idx, (c, der)) in ders.iter().enumerate() {
        let mu = multipliers.get(idx).copied().unwrap_or(0.0) - offset;
        for (j, &nj) in free.iter().enumerate() {
            acc.bands[0][j * arity + c] -= mu * w[nj] * der[nj];
        }
    }

    // LDL^T with escalating diagonal safeguards: near an eigenvalue the
    // shifted operator is only semidefinite and needs a nudge.
    let dscale = acc.bands[0].iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    if !(dscale > 0.0) || !dscale.is_finite() {
        return Ok(None);
    }
    let mut factor = None;
    for tau in [0.0, 1e-12, 1e-9, 1e-6, 1e-3] {
        let mut trial = acc.clone();
        for g in 0..big {
            trial.bands[0][g] += tau * dscale;
        }
        if let Some(f) = trial.ldl() {
            factor = Some(f);
            break;
        }
    }
    let Some(factor) = factor else {
        return Ok(None);
    };

    let flatten = |vecs: &[Vec<f64>]| -> Vec<f64> {
        let mut out = vec![0.0; big];
        for c in 0..arity {
            for (j, &nj) in free.iter().enumerate() {
                out[j * arity + c] = vecs[c][nj];
            }
        }
        out
    };
    let r0 = flatten(rhs);
    let mut dx = factor.solve(&r0);

    // Bordered elimination: project the step onto the constraint tangents.
    if !dirs.is_empty() {
        let cols: Vec<Vec<f64>> = dirs
            .iter()
            .map(|(c, dir)| {
                let mut col = vec![0.0; big];
                for (j, &nj) in free.iter().enumerate() {
                    col[j * arity + c] = w[nj] * dir[nj];
                }
                col
            })
            .collect();
        let ys: Vec<Vec<f64>> = cols.iter().map(|col| factor.solve(col)).collect();
        let mc = cols.len();
        let mut small = DenseSym::zeros(mc);
        let mut rhs_small = vec![0.0; mc];
        for a in 0..mc {
            for b in a..mc {
                let v = dot(&cols[a], &ys[b]);
                small.add(a, b, v);
                if b != a {
                    small.add(b, a, v);
                }
            }
            rhs_small[a] = dot(&cols[a], &dx);
        }
        let dmu = match small.cholesky() {
            Ok(ch) => ch.solve(&rhs_small),
            Err(_) => return Ok(None),
        };
        for (c, y) in ys.iter().enumerate() {
            for g in 0..big {
                dx[g] -= dmu[c] * y[g];
            }
        }
    }

    let slope = dot(&r0, &dx);
    if !slope.is_finite() || slope <= 0.0 {
        return Ok(None);
    }
    let mut dir_state = x.clone();
    for comp in dir_state.components.iter_mut() {
        for v in comp.values.iter_mut() {
            *v = 0.0;
        }
    }
    for c in 0..arity {
        for (j, &nj) in free.iter().enumerate() {
            dir_state.components[c].values[nj] = dx[j * arity + c];
        }
    }
    Ok(Some(dir_state))
}

fn flow_loop(
    problem: &Problem,
    init: &State,
    opts: &FlowOptions,
    constrained: bool,
) -> Result<SolveReport> {
    opts.validate()?;
    problem.check_state(init)?;
    let grid = problem.grid();
    let constraint = if constrained {
        Constraint::for_family(problem.family())
    } else {
        Constraint::None
    };
    let clamp = demands_positivity(problem.family());
    // Local operators descend in the (S+W)^{-1} smoothing metric; the
    // nonlocal form gets its own exact inverse, without which high modes
    // relax at O(1/n) per step and the flow cannot finish.
    let pre = match problem.fractional_form() {
        Some(form) => Preconditioner::dense_form(grid, form.matrix())?,
        None => Preconditioner::smoothing(grid),
    };

    let mut x = init.clone();
    if clamp {
        // The initial iterate must be interior-positive; lifting it onto the
        // floor is preparation, not a logged clamp event.
        clamp_floor(grid, &mut x, opts.eps_pos);
    }
    constraint.renormalize(&mut x)?;

    let mut energy = problem.energy(&x)?;
    let mut step = opts.step;
    let mut trace: Vec<TracePoint> = Vec::new();
    let mut clamps = 0usize;
    let mut last_clamp: Option<usize> = None;
    let mut converged = false;
    let mut iterations = 0usize;
    let mut residual = f64::INFINITY;
    let mut multipliers: Vec<f64> = Vec::new();
    let mut use_newton = false;

    for k in 0..opts.max_iters {
        iterations = k;
        let mut raw = problem.raw_gradient(&x)?;
        let raw_base = raw.clone();
        multipliers = project_constraints(grid, &constraint, &x, &mut raw);
        residual = raw_residual_norm(grid, &raw);
        trace.push(TracePoint { iter: k, energy, residual });
        let aged = !clamp
            || matches!(last_clamp, None)
            || matches!(last_clamp, Some(lc) if k - lc > CLAMP_AGE);
        if residual <= opts.tol_res && aged {
            converged = true;
            break;
        }

        let eta = if constrained {
            32.0 * f64::EPSILON * (1.0 + energy.abs())
        } else {
            0.0
        };

        let mut outcome = LineSearch { accepted: false, regime: None };
        let mut tried_newton = false;
        if use_newton {
            tried_newton = true;
            if let Some(nd) =
                newton_direction(problem, &constraint, &x, &raw_base, &raw, &multipliers)?
            {
                outcome = try_direction(
                    problem, &constraint, clamp, opts, &nd, 1.0, residual, eta, k, &mut x,
                    &mut energy, &mut step, &mut clamps, &mut last_clamp,
                )?;
            }
            if !outcome.accepted {
                use_newton = false;
            }
        }
        if !outcome.accepted {
            let dir = descent_direction(problem, &x, &raw, &pre)?;
            outcome = try_direction(
                problem, &constraint, clamp, opts, &dir, step, residual, eta, k, &mut x,
                &mut energy, &mut step, &mut clamps, &mut last_clamp,
            )?;
        }
        if !outcome.accepted && !tried_newton {
            // The smoothing direction can no longer certify progress; switch
            // to the Newton endgame, which contracts the residual directly.
            if let Some(nd) =
                newton_direction(problem, &constraint, &x, &raw_base, &raw, &multipliers)?
            {
                let second = try_direction(
                    problem, &constraint, clamp, opts, &nd, 1.0, residual, eta, k, &mut x,
                    &mut energy, &mut step, &mut clamps, &mut last_clamp,
                )?;
                if second.accepted {
                    use_newton = true;
                    outcome = second;
                } else if outcome.regime.is_none() {
                    outcome.regime = second.regime;
                }
            }
        }
        if !outcome.accepted {
            if residual <= opts.tol_res {
                // At tolerance with an un-aged clamp and nowhere to move:
                // each further iteration demonstrates no clamp is needed.
                continue;
            }
            // Pushed against the gradient cap: abort loudly. A plain stall
            // (no step size is acceptable) ends non-converged.
            if let Some(e) = outcome.regime {
                return Err(e);
            }
            break;
        }
    }

    if converged {
        // Final clamp-then-verify pass; a state this touches was never an
        // interior critical point, so the clamp is recorded.
        if clamp {
            let c = clamp_floor(grid, &mut x, opts.eps_pos);
            if c > 0 {
                clamps += c;
                last_clamp = Some(iterations);
            }
        }
    }

    let positivity = min_interior(grid, &x);
    let collapsed = x.sup_norm() <= COLLAPSE_SUP;
    let recently_clamped =
        matches!(last_clamp, Some(kc) if kc + CLAMP_AGE >= iterations);
    let positive =
        clamp && converged && !collapsed && positivity > 0.0 && !recently_clamped;

    Ok(SolveReport {
        state: x,
        energy,
        residual,
        multipliers,
        iterations,
        converged,
        positivity,
        positive,
        clamps,
        collapsed,
        truncation_radius: None,
        trace,
    })
}

// ---------------------------------------------------------------------------
// shooting oracles
// ---------------------------------------------------------------------------

/// Result of a one-dimensional shooting solve: the state resampled onto the
/// problem grid, the shooting parameter(s) found, and the boundary residual
/// the root-find reached.
#[derive(Debug, Clone, Serialize)]
pub struct ShootingResult {
    #[serde(skip_serializing)]
    pub state: State,
    pub parameters: Vec<f64>,
    pub boundary_residual: f64,
    /// True when the trajectory keeps one sign on the interior.
    pub single_signed: bool,
}

const SHOOT_TOL: f64 = 1e-10;

/// Independent two-point solver for the one-dimensional families: shoots the
/// reduced ODE system with RK4 and root-finds the initial slope (or the
/// eigenvalue, or the slope pair of the coupled system). Supports interval
/// grids with zero boundary values only.
pub fn shooting_oracle(problem: &Problem) -> Result<ShootingResult> {
    let grid = problem.grid();
    let (a, b) = match grid.domain.kind {
        DomainKind::Interval { a, b } => (a, b),
        _ => return Err(Error::Solve("shooting needs an interval grid".into())),
    };
    if grid
        .interior_indices()
        .len()
        + 2
        != grid.node_count()
    {
        return Err(Error::Solve("shooting needs zero boundary values".into()));
    }
    match problem.family().clone() {
        Family::GeneralizedPlap { p, h, g } => {
            let c = match h {
                ScalarFn::Constant { c } => c,
                ScalarFn::Power { r } if (r - 1.0).abs() < 1e-14 => 1.0,
                _ => {
                    return Err(Error::Solve(
                        "shooting supports constant quasilinear density only".into(),
                    ))
                }
            };
            shoot_scalar_bvp(grid, a, b, p, move |u| g.source(u) / c)
        }
        Family::AllenCahn { p, q, k } => {
            shoot_scalar_bvp(grid, a, b, p, move |u: f64| {
                k * u.signum() * u.abs().powf(p - 1.0) - u.signum() * u.abs().powf(q - 1.0)
            })
        }
        Family::PEigenvalue { p, .. } => shoot_eigenvalue(grid, a, b, p),
        Family::HamiltonianDual { p, q } => shoot_hamiltonian(grid, a, b, p, q),
        f => Err(Error::Solve(format!("{} has no shooting reduction", f.name()))),
    }
}

/// Steps per grid cell giving a few thousand RK4 steps over the interval;
/// node coordinates land exactly on integration knots.
fn ode_steps(grid: &Grid) -> (usize, usize) {
    let cells = grid.n - 1;
    let per_cell = (4096 + cells - 1) / cells;
    (per_cell, cells * per_cell)
}

/// sign(v) |v|^e with the convention 0 -> 0.
fn signed_pow(v: f64, e: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum() * v.abs().powf(e)
    }
}

/// One shot of the flux system u' = sign(v)|v|^{1/(p-1)}, v' = -source(u)
/// from (0, slope-flux), integrated past the far endpoint so the first
/// return of u to zero is visible even when it lies beyond b.
struct FluxShot {
    /// u at the grid nodes of [a, b].
    nodes: Vec<f64>,
    /// u(b).
    end: f64,
    /// Location of the first zero crossing of u after a, by linear
    /// interpolation between integration knots; the integration horizon
    /// plus one step when u never returns to zero.
    first_zero: f64,
}

fn integrate_flux<F: Fn(f64) -> f64>(
    grid: &Grid,
    a: f64,
    b: f64,
    p: f64,
    source: &F,
    slope: f64,
) -> FluxShot {
    let (per_cell, steps) = ode_steps(grid);
    let horizon = 4;
    let e = 1.0 / (p - 1.0);
    let v0 = signed_pow(slope, p - 1.0);
    let traj = rk4(
        |_, y| vec![signed_pow(y[1], e), -source(y[0])],
        a,
        &[0.0, v0],
        a + horizon as f64 * (b - a),
        horizon * steps,
    );
    let nodes: Vec<f64> = (0..grid.n).map(|i| traj[i * per_cell][0]).collect();
    let end = traj[steps][0];
    let h = (b - a) / steps as f64;
    let mut first_zero = a + (horizon * steps + 1) as f64 * h;
    for k in 1..horizon * steps {
        let (u0, u1) = (traj[k][0], traj[k + 1][0]);
        if u0 > 0.0 && u1 <= 0.0 {
            let t0 = a + k as f64 * h;
            first_zero = t0 + h * u0 / (u0 - u1);
            break;
        }
    }
    FluxShot { nodes, end, first_zero }
}

/// Bisect g over [lo, hi] assuming g(lo) and g(hi) have opposite signs;
/// returns the parameter and the achieved |g|.
fn bisect<G: Fn(f64) -> f64>(g: G, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let mut glo = g(lo);
    let mut best = (lo, glo.abs());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm.abs() < best.1 {
            best = (mid, gm.abs());
        }
        if (gm > 0.0) == (glo > 0.0) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    best
}

fn shoot_scalar_bvp<F: Fn(f64) -> f64>(
    grid: &Grid,
    a: f64,
    b: f64,
    p: f64,
    source: F,
) -> Result<ShootingResult> {
    // Root-find on the location of the FIRST return of u to zero: this pins
    // the single-signed principal solution, where the endpoint value u(b)
    // as residual can bracket a higher oscillation mode instead.
    let misfit = |s: f64| integrate_flux(grid, a, b, p, &source, s).first_zero - b;
    let mut bracket = None;
    let mut prev: Option<(f64, f64)> = None;
    for k in 0..121 {
        let s = 1e-3 * 10f64.powf(k as f64 / 20.0);
        let r = misfit(s);
        if !r.is_finite() {
            prev = None;
            continue;
        }
        if let Some((s0, r0)) = prev {
            if (r0 > 0.0) != (r > 0.0) {
                bracket = Some((s0, s));
                break;
            }
        }
        prev = Some((s, r));
    }
    let (lo, hi) = bracket
        .ok_or_else(|| Error::Solve("no slope brings the first zero to the endpoint".into()))?;
    let (s, _) = bisect(&misfit, lo, hi);
    let shot = integrate_flux(grid, a, b, p, &source, s);
    finish_scalar_shot(grid, shot.nodes, vec![s], shot.end)
}

fn shoot_eigenvalue(grid: &Grid, a: f64, b: f64, p: f64) -> Result<ShootingResult> {
    // Shoot on the eigenvalue with unit initial slope. The first zero of u
    // moves toward a monotonically as lambda grows, so matching it to b
    // yields the principal eigenvalue, never a higher mode.
    let misfit = |lam: f64| {
        integrate_flux(grid, a, b, p, &|u: f64| lam * signed_pow(u, p - 1.0), 1.0).first_zero - b
    };
    let mut lo = 1e-2;
    let mut r_lo = misfit(lo);
    let mut bracket = None;
    for _ in 0..60 {
        let hi = lo * 2.0;
        let r_hi = misfit(hi);
        if (r_lo > 0.0) != (r_hi > 0.0) {
            bracket = Some((lo, hi));
            break;
        }
        lo = hi;
        r_lo = r_hi;
    }
    let (lo, hi) =
        bracket.ok_or_else(|| Error::Solve("no eigenvalue bracket below 2^60".into()))?;
    let (lam, _) = bisect(&misfit, lo, hi);
    let shot = integrate_flux(grid, a, b, p, &|u: f64| lam * signed_pow(u, p - 1.0), 1.0);
    finish_scalar_shot(grid, shot.nodes, vec![lam], shot.end)
}

fn finish_scalar_shot(
    grid: &Grid,
    mut nodes: Vec<f64>,
    parameters: Vec<f64>,
    end: f64,
) -> Result<ShootingResult> {
    let sup = nodes.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if end.abs() > SHOOT_TOL * sup.max(1.0) {
        return Err(Error::Solve(format!(
            "shooting stalled at boundary residual {end:.3e}"
        )));
    }
    let single_signed = nodes[1..grid.n - 1].iter().all(|&v| v > 0.0)
        || nodes[1..grid.n - 1].iter().all(|&v| v < 0.0);
    nodes[0] = 0.0;
    nodes[grid.n - 1] = 0.0;
    let state = State::scalar(GridFunction::new(grid.clone(), nodes)?);
    Ok(ShootingResult {
        state,
        parameters,
        boundary_residual: end.abs(),
        single_signed,
    })
}

/// Coupled shooting for the Lane-Emden pair -u'' = sign(v)|v|^q,
/// -v'' = sign(u)|u|^p: Newton on the two initial slopes with a
/// finite-difference Jacobian. Returns the primal pair (u, v).
fn shoot_hamiltonian(grid: &Grid, a: f64, b: f64, p: f64, q: f64) -> Result<ShootingResult> {
    let (per_cell, steps) = ode_steps(grid);
    let shoot = |s: [f64; 2]| -> (Vec<f64>, Vec<f64>, [f64; 2]) {
        let traj = rk4(
            |_, y| vec![y[1], -signed_pow(y[2], q), y[3], -signed_pow(y[0], p)],
            a,
            &[0.0, s[0], 0.0, s[1]],
            b,
            steps,
        );
        let u: Vec<f64> = (0..grid.n).map(|i| traj[i * per_cell][0]).collect();
        let v: Vec<f64> = (0..grid.n).map(|i| traj[i * per_cell][2]).collect();
        let end = [traj[steps][0], traj[steps][2]];
        (u, v, end)
    };

    // Symmetric warm start: when p = q the diagonal u = v reduces the system
    // to a scalar problem; otherwise start from unit slopes.
    let mut s = if (p - q).abs() < 1e-12 {
        let scalar = shoot_scalar_bvp(grid, a, b, 2.0, |u: f64| signed_pow(u, q))?;
        let s0 = scalar.parameters[0];
        [s0, s0]
    } else {
        [1.0, 1.0]
    };

    let mut end = shoot(s).2;
    let mut best: Option<(f64, [f64; 2])> = None;
    for _ in 0..80 {
        let norm = end[0].abs().max(end[1].abs());
        if best.as_ref().map_or(true, |(n, _)| norm < *n) {
            best = Some((norm, s));
        }
        if norm <= SHOOT_TOL {
            break;
        }
        // Forward-difference Jacobian of the endpoint map.
        let d0 = 1e-7 * s[0].abs().max(1.0);
        let d1 = 1e-7 * s[1].abs().max(1.0);
        let e0 = shoot([s[0] + d0, s[1]]).2;
        let e1 = shoot([s[0], s[1] + d1]).2;
        let j = [
            [(e0[0] - end[0]) / d0, (e1[0] - end[0]) / d1],
            [(e0[1] - end[1]) / d0, (e1[1] - end[1]) / d1],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-30 {
            return Err(Error::Solve("singular shooting Jacobian".into()));
        }
        let du = [
            (j[1][1] * end[0] - j[0][1] * end[1]) / det,
            (j[0][0] * end[1] - j[1][0] * end[0]) / det,
        ];
        // Damped update: halve until the endpoint norm does not blow up.
        let mut lam = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = [s[0] - lam * du[0], s[1] - lam * du[1]];
            let e = shoot(cand).2;
            if e[0].abs().max(e[1].abs()) < norm {
                s = cand;
                end = e;
                improved = true;
                break;
            }
            lam *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let (norm, s) = best.ok_or_else(|| Error::Solve("shooting never evaluated".into()))?;
    let (mut u, mut v, end) = shoot(s);
    let sup = u
        .iter()
        .chain(v.iter())
        .fold(0.0_f64, |m, x| m.max(x.abs()));
    if norm > SHOOT_TOL * sup.max(1.0) {
        return Err(Error::Solve(format!(
            "coupled shooting stalled at boundary residual {norm:.3e}"
        )));
    }
    let single_signed = u[1..grid.n - 1].iter().all(|&x| x > 0.0)
        && v[1..grid.n - 1].iter().all(|&x| x > 0.0);
    u[0] = 0.0;
    u[grid.n - 1] = 0.0;
    v[0] = 0.0;
    v[grid.n - 1] = 0.0;
    let state = State::new(vec![
        GridFunction::new(grid.clone(), u)?,
        GridFunction::new(grid.clone(), v)?,
    ])?;
    Ok(ShootingResult {
        state,
        parameters: s.to_vec(),
        boundary_residual: end[0].abs().max(end[1].abs()),
        single_signed,
    })
}

/// Primal pair (u, v) = (Kg, Kf) of a converged dual state (f, g).
pub fn hamiltonian_primal(problem: &Problem, dual: &State) -> Result<State> {
    if !matches!(problem.family(), Family::HamiltonianDual { .. }) {
        return Err(Error::Solve("primal reconstruction needs the dual pair family".into()));
    }
    let kg = poisson_solve(&dual.components[1])?;
    let kf = poisson_solve(&dual.components[0])?;
    State::new(vec![kg, kf])
}

// ---------------------------------------------------------------------------
// multistart harness
// ---------------------------------------------------------------------------

/// One cluster of converged positive states: the lowest start index is the
/// representative.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterSummary {
    pub representative_start: usize,
    pub members: Vec<usize>,
    pub max_intra_distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InterClusterDistance {
    pub first: usize,
    pub second: usize,
    pub distance: f64,
}

/// Multistart outcome. The serialized part is a pure function of
/// (spec, n_starts, seed, options); states are kept for callers but never
/// serialized. The harness measures a lower bound on the number of distinct
/// solutions: it can only report the clusters it found.
#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub n_starts: usize,
    pub converged_starts: Vec<usize>,
    pub excluded_starts: Vec<usize>,
    pub clusters: Vec<ClusterSummary>,
    pub inter_cluster: Vec<InterClusterDistance>,
    pub theorem: TheoremCheck,
    #[serde(skip_serializing)]
    pub states: Vec<State>,
    #[serde(skip_serializing)]
    pub reports: Vec<SolveReport>,
}

/// Relative sup distance used for clustering.
fn cluster_distance(a: &State, b: &State) -> f64 {
    let scale = a.sup_norm().max(b.sup_norm()).max(1e-300);
    a.sup_distance(b) / scale
}

/// Run `n_starts` flows from seeded smoothed random positive fields and
/// cluster the converged positive states. Flows run concurrently; every
/// reported number is independent of thread count.
pub fn multistart(
    problem: &Problem,
    n_starts: usize,
    seed: u64,
    opts: &FlowOptions,
) -> Result<UniquenessReport> {
    if n_starts < 2 {
        return Err(Error::Solve("multistart needs at least two starts".into()));
    }
    let grid = problem.grid();
    let arity = problem.arity();
    let constrained = !matches!(Constraint::for_family(problem.family()), Constraint::None);

    let runs: Vec<Result<SolveReport>> = (0..n_starts)
        .into_par_iter()
        .map(|i| {
            let comps: Vec<GridFunction> = (0..arity)
                .map(|c| {
                    let mut rng = substream_rng(seed, (i * arity + c) as u64);
                    smoothed_positive_field(grid, &mut rng, 0.2, 1.5, 5)
                })
                .collect();
            let init = State::new(comps)?;
            if constrained {
                normalized_flow(problem, &init, opts)
            } else {
                gradient_flow(problem, &init, opts)
            }
        })
        .collect();

    let mut reports = Vec::with_capacity(n_starts);
    for r in runs {
        reports.push(r?);
    }

    // A start enters the solution pool only when its flow converged and
    // (for positivity families) settled at an interior-positive state.
    let needs_pos = demands_positivity(problem.family());
    let mut converged_starts = Vec::new();
    let mut excluded_starts = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        if r.converged && (!needs_pos || r.positive) {
            converged_starts.push(i);
        } else {
            excluded_starts.push(i);
        }
    }

    let states: Vec<State> =
        converged_starts.iter().map(|&i| reports[i].state.clone()).collect();

    // Greedy clustering in start order keeps the outcome deterministic.
    let mut clusters: Vec<(usize, Vec<usize>)> = Vec::new();
    for (k, s) in states.iter().enumerate() {
        let start = converged_starts[k];
        match clusters
            .iter_mut()
            .find(|(rep, _)| {
                let rep_state = &states[converged_starts.iter().position(|&x| x == *rep).unwrap()];
                cluster_distance(rep_state, s) <= CLUSTER_RADIUS
            }) {
            Some((_, members)) => members.push(start),
            None => clusters.push((start, vec![start])),
        }
    }

    let state_of = |start: usize| -> &State {
        &states[converged_starts.iter().position(|&x| x == start).unwrap()]
    };
    let summaries: Vec<ClusterSummary> = clusters
        .iter()
        .map(|(rep, members)| {
            let mut max_intra = 0.0_f64;
            for (ai, &a) in members.iter().enumerate() {
                for &b in &members[ai + 1..] {
                    max_intra = max_intra.max(cluster_distance(state_of(a), state_of(b)));
                }
            }
            ClusterSummary {
                representative_start: *rep,
                members: members.clone(),
                max_intra_distance: max_intra,
            }
        })
        .collect();

    let mut inter = Vec::new();
    for (i, (a, _)) in clusters.iter().enumerate() {
        for (b, _) in &clusters[i + 1..] {
            inter.push(InterClusterDistance {
                first: *a,
                second: *b,
                distance: cluster_distance(state_of(*a), state_of(*b)),
            });
        }
    }

    let theorem = theorem1_check(problem, &states, 65)?;

    Ok(UniquenessReport {
        n_starts,
        converged_starts,
        excluded_starts,
        clusters: summaries,
        inter_cluster: inter,
        theorem,
        states,
        reports,
    })
}

// ---------------------------------------------------------------------------
// spectral threshold
// ---------------------------------------------------------------------------

/// Principal eigenvalue estimate for -Lap + V with zero boundary values.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaReport {
    pub lambda: f64,
    pub iterations: usize,
    pub residual: f64,
    #[serde(skip_serializing)]
    pub eigenfunction: GridFunction,
}

/// Inverse power iteration on the discrete form (S + W diag(V)) x = lambda W x.
/// The potential is sampled at the grid's potential coordinate (radius on a
/// radial grid). Stops at a Rayleigh residual of 1e-8.
pub fn lambda_v_estimate(v: &ScalarFn, grid: &Grid) -> Result<LambdaReport> {
    let w = grid.quad_weights();
    let vn: Vec<f64> = (0..grid.node_count())
        .map(|i| v.value(grid.potential_coord(i)))
        .collect();
    if vn.iter().any(|t| !t.is_finite()) {
        return Err(Error::Solve("potential is not finite on the grid".into()));
    }

    // Free-node solve for (S + W diag V) x = rhs, per domain kind.
    let free: Vec<usize> = (0..grid.node_count()).filter(|&i| !grid.is_constrained(i)).collect();
    let solve: Box<dyn Fn(&[f64]) -> Result<Vec<f64>>> = match grid.domain.kind {
        DomainKind::Rectangle { .. } => {
            let grid2 = grid.clone();
            let free2 = free.clone();
            let vn2 = vn.clone();
            Box::new(move |rhs: &[f64]| {
                let w = grid2.quad_weights();
                let apply = |x: &[f64]| -> Vec<f64> {
                    let mut full = GridFunction::zeros(grid2.clone());
                    for (k, &i) in free2.iter().enumerate() {
                        full.values[i] = x[k];
                    }
                    let s = dirichlet_form_gradient(&full);
                    free2
                        .iter()
                        .enumerate()
                        .map(|(k, &i)| s[i] + w[i] * vn2[i] * x[k])
                        .collect()
                };
                conjugate_gradient(apply, rhs, None, 1e-13, 50_000)
            })
        }
        _ => {
            let tri = stiffness_plus_potential(grid, &free, &vn)?;
            Box::new(move |rhs: &[f64]| tri.solve(rhs))
        }
    };

    // A(x) in free coordinates, for Rayleigh quotients and residuals.
    let apply_a = |x: &[f64]| -> Vec<f64> {
        let mut full = GridFunction::zeros(grid.clone());
        for (k, &i) in free.iter().enumerate() {
            full.values[i] = x[k];
        }
        let s = dirichlet_form_gradient(&full);
        free.iter()
            .enumerate()
            .map(|(k, &i)| s[i] + w[i] * vn[i] * x[k])
            .collect()
    };

    let nf = free.len();
    let mut x: Vec<f64> = (0..nf).map(|k| 1.0 + (k as f64 * 0.7).sin() * 0.01).collect();
    let wnorm = |y: &[f64]| -> f64 {
        free.iter()
            .enumerate()
            .map(|(k, &i)| w[i] * y[k] * y[k])
            .sum::<f64>()
            .sqrt()
    };
    let nrm = wnorm(&x);
    for t in &mut x {
        *t /= nrm;
    }

    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for k in 0..10_000 {
        iterations = k + 1;
        let rhs: Vec<f64> = free.iter().enumerate().map(|(j, &i)| w[i] * x[j]).collect();
        let y = solve(&rhs)?;
        let ny = wnorm(&y);
        if !(ny > 0.0) || !ny.is_finite() {
            return Err(Error::Solve("inverse iteration broke down".into()));
        }
        x = y.iter().map(|t| t / ny).collect();
        let ax = apply_a(&x);
        let num: f64 = free.iter().enumerate().map(|(j, _)| ax[j] * x[j]).sum();
        // x is W-normalized, so the Rayleigh quotient is just <Ax, x>.
        lambda = num;
        let mut acc = 0.0;
        for (j, &i) in free.iter().enumerate() {
            let r = ax[j] - lambda * w[i] * x[j];
            acc += r * r / w[i];
        }
        residual = acc.sqrt();
        if residual <= 1e-8 * (1.0 + lambda.abs()) {
            break;
        }
    }
    if residual > 1e-8 * (1.0 + lambda.abs()) {
        return Err(Error::Solve(format!(
            "inverse iteration stalled at residual {residual:.3e}"
        )));
    }

    let mut fun = GridFunction::zeros(grid.clone());
    for (k, &i) in free.iter().enumerate() {
        fun.values[i] = x[k].abs();
    }
    Ok(LambdaReport { lambda, iterations, residual, eigenfunction: fun })
}

/// Tridiagonal S + W diag(V) on free nodes of a 1D or radial grid.
fn stiffness_plus_potential(grid: &Grid, free: &[usize], vn: &[f64]) -> Result<Tridiag> {
    let h = grid.h();
    let vols = grid.cell_volumes();
    let w = grid.quad_weights();
    let pos: Vec<Option<usize>> = {
        let mut p = vec![None; grid.node_count()];
        for (k, &i) in free.iter().enumerate() {
            p[i] = Some(k);
        }
        p
    };
    let nf = free.len();
    let mut diag = vec![0.0; nf];
    let mut off = vec![0.0; nf.saturating_sub(1)];
    for c in 0..grid.cell_count() {
        let k = vols[c] / (h * h);
        if let Some(pi) = pos[c] {
            diag[pi] += k;
        }
        if let Some(pj) = pos[c + 1] {
            diag[pj] += k;
        }
        if let (Some(pi), Some(pj)) = (pos[c], pos[c + 1]) {
            debug_assert_eq!(pj, pi + 1);
            off[pi] -= k;
        }
    }
    for (k, &i) in free.iter().enumerate() {
        diag[k] += w[i] * vn[i];
    }
    Ok(Tridiag { diag, off })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate_map;
    use std::f64::consts::PI;

    fn interval(n: usize) -> Grid {
        Grid::make(Domain::interval(0.0, 1.0), n).unwrap()
    }

    fn radial(r: f64, n: usize) -> Grid {
        Grid::make(Domain::radial(2, r), n).unwrap()
    }

    fn sine_init(grid: &Grid, amp: f64) -> State {
        State::scalar(GridFunction::from_fn(grid.clone(), |x, _| amp * (PI * x).sin()))
    }

    fn random_init(problem: &Problem, seed: u64) -> State {
        let grid = problem.grid();
        let comps = (0..problem.arity())
            .map(|c| {
                let mut rng = substream_rng(seed, c as u64);
                smoothed_positive_field(grid, &mut rng, 0.2, 1.5, 5)
            })
            .collect();
        State::new(comps).unwrap()
    }

    fn problem(family: Family, grid: Grid) -> Problem {
        Problem::new(ProblemSpec { family, grid }).unwrap()
    }

    #[test]
    fn flow_matches_shooting_on_sublinear_source() {
        let g = interval(257);
        let pr = problem(
            Family::GeneralizedPlap {
                p: 2.0,
                h: ScalarFn::constant(1.0),
                g: ScalarFn::power(1.5),
            },
            g.clone(),
        );
        let rep = gradient_flow(&pr, &sine_init(&g, 0.5), &FlowOptions::default()).unwrap();
        assert!(rep.converged, "flow should converge: residual {}", rep.residual);
        assert!(rep.residual <= 1e-8);
        assert!(rep.positive);
        // accepted energies never increase
        for w in rep.trace.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-15);
        }

        let shot = shooting_oracle(&pr).unwrap();
        assert!(shot.single_signed);
        assert!(shot.boundary_residual <= 1e-10 * shot.state.sup_norm().max(1.0));
        let scale = shot.state.sup_norm();
        let dist = rep.state.sup_distance(&shot.state);
        assert!(
            dist <= 1e-4 * scale,
            "flow vs shooting relative gap {}",
            dist / scale
        );
    }

    #[test]
    fn trace_csv_round_trips() {
        let g = interval(65);
        let pr = problem(
            Family::GeneralizedPlap {
                p: 2.0,
                h: ScalarFn::constant(1.0),
                g: ScalarFn::power(1.5),
            },
            g.clone(),
        );
        let rep = gradient_flow(&pr, &sine_init(&g, 0.5), &FlowOptions::default()).unwrap();
        let csv = trace_csv(&rep);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iter,energy,residual"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), rep.trace.len());
        for (row, p) in rows.iter().zip(&rep.trace) {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols[0].parse::<usize>().unwrap(), p.iter);
            assert_eq!(cols[1].parse::<f64>().unwrap(), p.energy);
            assert_eq!(cols[2].parse::<f64>().unwrap(), p.residual);
        }
    }

    #[test]
    fn two_power_well_respects_threshold() {
        // supercritical: positive solution capped by sqrt(k)
        let k = 2.0 * PI * PI;
        let g = interval(257);
        let pr = problem(Family::AllenCahn { p: 2.0, q: 4.0, k }, g.clone());
        let rep = gradient_flow(&pr, &random_init(&pr, 3), &FlowOptions::default()).unwrap();
        assert!(rep.converged && rep.positive);
        let sup = rep.state.sup_norm();
        assert!(sup <= k.sqrt() + 1e-9, "sup {} exceeds sqrt(k) {}", sup, k.sqrt());
        assert!(sup > 0.5);

        // subcritical: the flow collapses to the zero state
        let g = interval(129);
        let pr = problem(
            Family::AllenCahn { p: 2.0, q: 4.0, k: 0.5 * PI * PI },
            g.clone(),
        );
        let rep = gradient_flow(&pr, &random_init(&pr, 4), &FlowOptions::default()).unwrap();
        assert!(rep.collapsed, "sup {}", rep.state.sup_norm());
        assert!(!rep.positive);
    }

    #[test]
    fn eigen_flow_and_shooting_agree() {
        let g = interval(257);
        // the family's lambda plays no role for the normalized flow: the
        // reported multiplier is the Rayleigh eigenvalue itself
        let pr = problem(Family::PEigenvalue { p: 2.0, lambda: 5.0 }, g.clone());
        let rep = normalized_flow(&pr, &sine_init(&g, 0.7), &FlowOptions::default()).unwrap();
        assert!(rep.converged);
        let lam = rep.multipliers[0];
        assert!(
            (lam - PI * PI).abs() <= 2e-3 * PI * PI,
            "eigenvalue {lam} vs {}",
            PI * PI
        );
        // p-norm held exactly after every renormalization
        let mass = integrate_map(&rep.state.components[0], |t| t * t);
        assert!((mass - 1.0).abs() <= 1e-12);

        let shot = shooting_oracle(&pr).unwrap();
        assert!((shot.parameters[0] - PI * PI).abs() <= 1e-6 * PI * PI);
        // compare shapes after sup normalization
        let a = rep.state.components[0].scaled(1.0 / rep.state.sup_norm());
        let b = shot
            .state
            .components[0]
            .scaled(1.0 / shot.state.sup_norm());
        let dist = State::scalar(a).sup_distance(&State::scalar(b));
        assert!(dist <= 1e-4, "eigenfunction shape gap {dist}");
    }

    #[test]
    fn trap_ground_state_is_gaussian() {
        let g = radial(8.0, 513);
        let pr = problem(
            Family::GrossPitaevskii {
                k: 1,
                b: vec![vec![0.0]],
                mode: VectorMode::FixedMass,
                v: ScalarFn::power(2.0),
            },
            g.clone(),
        );
        let rep = normalized_flow(&pr, &random_init(&pr, 1), &FlowOptions::default()).unwrap();
        assert!(rep.converged && rep.positive);
        assert!((rep.multipliers[0] - 2.0).abs() <= 1e-3, "omega {}", rep.multipliers[0]);
        let mass = integrate_map(&rep.state.components[0], |t| t * t);
        assert!((mass - 1.0).abs() <= 1e-12);

        // ground state of the harmonic trap in the plane
        let gauss = GridFunction::from_fn(g.clone(), |r, _| (-0.5 * r * r).exp() / PI.sqrt());
        let scale = gauss.sup_norm();
        let dist = rep.state.sup_distance(&State::scalar(gauss));
        assert!(dist <= 1e-3 * scale, "gaussian gap {}", dist / scale);
    }

    #[test]
    fn symmetric_condensate_components_equalize() {
        let g = radial(8.0, 257);
        let pr = problem(
            Family::GrossPitaevskii {
                k: 2,
                b: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
                mode: VectorMode::FixedMass,
                v: ScalarFn::power(2.0),
            },
            g.clone(),
        );
        let rep = normalized_flow(&pr, &random_init(&pr, 9), &FlowOptions::default()).unwrap();
        assert!(rep.converged && rep.positive);
        let u1 = &rep.state.components[0];
        let u2 = &rep.state.components[1];
        let gap = u1
            .values
            .iter()
            .zip(&u2.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(gap <= 1e-6 * rep.state.sup_norm(), "component gap {gap}");
        // equal row sums, equal masses: one shared multiplier
        assert!((rep.multipliers[0] - rep.multipliers[1]).abs() <= 1e-6);
    }

    #[test]
    fn transformed_mass_is_pinned_and_multiplier_exceeds_threshold() {
        let g = radial(8.0, 257);
        let pr = problem(
            Family::SchrodingerDual {
                mode: ScalarMode::FixedMass,
                v: ScalarFn::power(2.0),
            },
            g.clone(),
        );
        let rep = normalized_flow(&pr, &random_init(&pr, 2), &FlowOptions::default()).unwrap();
        assert!(rep.converged && rep.positive);
        let mass = pr.constraint_value(&rep.state).unwrap()[0];
        assert!((mass - 1.0).abs() <= 1e-12, "transformed mass {mass}");
        // the multiplier of a positive bound state lies above the linear
        // threshold of the trap
        let lam = lambda_v_estimate(&ScalarFn::power(2.0), &g).unwrap().lambda;
        assert!(rep.multipliers[0] > lam, "omega {} vs lambda_V {lam}", rep.multipliers[0]);
    }

    #[test]
    fn linear_thresholds_match_known_values() {
        let g = interval(513);
        let rep = lambda_v_estimate(&ScalarFn::constant(0.0), &g).unwrap();
        assert!(
            (rep.lambda - PI * PI).abs() <= 1e-3 * PI * PI,
            "lambda {} vs pi^2",
            rep.lambda
        );
        assert!(rep.residual <= 1e-8 * (1.0 + rep.lambda));

        let gr = radial(8.0, 513);
        let rep2 = lambda_v_estimate(&ScalarFn::power(2.0), &gr).unwrap();
        assert!((rep2.lambda - 2.0).abs() <= 1e-3, "trap lambda {}", rep2.lambda);

        // adding a constant shifts the estimate by exactly that constant
        let rep3 = lambda_v_estimate(&ScalarFn::constant(3.0), &g).unwrap();
        assert!(
            (rep3.lambda - rep.lambda - 3.0).abs() <= 1e-9,
            "shift gap {}",
            rep3.lambda - rep.lambda - 3.0
        );
    }

    #[test]
    fn dual_pair_flow_matches_coupled_shooting() {
        let g = interval(257);
        let pr = problem(Family::HamiltonianDual { p: 0.5, q: 0.5 }, g.clone());
        let rep = gradient_flow(&pr, &random_init(&pr, 6), &FlowOptions::default()).unwrap();
        assert!(rep.converged, "residual {}", rep.residual);
        let primal = hamiltonian_primal(&pr, &rep.state).unwrap();

        let shot = shooting_oracle(&pr).unwrap();
        assert!(shot.single_signed);
        let scale = shot.state.sup_norm();
        let dist = primal.sup_distance(&shot.state);
        assert!(dist <= 1e-3 * scale, "primal pair gap {}", dist / scale);
    }

    #[test]
    fn multistart_finds_one_cluster_deterministically() {
        let g = interval(129);
        let pr = problem(
            Family::GeneralizedPlap {
                p: 2.0,
                h: ScalarFn::constant(1.0),
                g: ScalarFn::power(1.5),
            },
            g.clone(),
        );
        let rep = multistart(&pr, 6, 11, &FlowOptions::default()).unwrap();
        assert_eq!(rep.clusters.len(), 1);
        assert_eq!(rep.clusters[0].members.len(), 6);
        assert!(rep.excluded_starts.is_empty());
        assert!(rep.inter_cluster.is_empty());
        assert_eq!(rep.theorem.pairs.len(), 15);
        for pair in &rep.theorem.pairs {
            assert!(pair.convexity.flat, "pair ({}, {}) not flat", pair.first, pair.second);
        }

        let again = multistart(&pr, 6, 11, &FlowOptions::default()).unwrap();
        let a = serde_json::to_string(&rep).unwrap();
        let b = serde_json::to_string(&again).unwrap();
        assert_eq!(a, b, "multistart must be reproducible");
    }

    #[test]
    fn multistart_excludes_collapsed_flows() {
        let g = interval(129);
        let pr = problem(
            Family::AllenCahn { p: 2.0, q: 4.0, k: 0.5 * PI * PI },
            g.clone(),
        );
        let rep = multistart(&pr, 4, 5, &FlowOptions::default()).unwrap();
        assert!(rep.clusters.is_empty());
        assert_eq!(rep.excluded_starts.len(), 4);
        assert!(rep.converged_starts.is_empty());
        assert!(rep.theorem.pairs.is_empty());
    }

    #[test]
    fn small_radius_triggers_one_rerun() {
        let g = radial(2.5, 129);
        let pr = problem(
            Family::GrossPitaevskii {
                k: 1,
                b: vec![vec![0.0]],
                mode: VectorMode::FixedMass,
                v: ScalarFn::power(2.0),
            },
            g.clone(),
        );
        let rep = normalized_flow(&pr, &random_init(&pr, 8), &FlowOptions::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.truncation_radius, Some(3.75));
        match rep.state.grid().domain.kind {
            DomainKind::Radial { radius, .. } => assert!((radius - 3.75).abs() < 1e-12),
            _ => panic!("expected a radial grid"),
        }
    }

    #[test]
    fn contracts_are_enforced() {
        let g = interval(65);
        let pr = problem(
            Family::GeneralizedPlap {
                p: 2.0,
                h: ScalarFn::constant(1.0),
                g: ScalarFn::power(1.5),
            },
            g.clone(),
        );
        // multistart needs at least two starts
        assert!(multistart(&pr, 1, 0, &FlowOptions::default()).is_err());
        // plain families have nothing to renormalize
        assert!(normalized_flow(&pr, &sine_init(&g, 0.5), &FlowOptions::default()).is_err());
        // shooting needs an interval grid
        let pr2 = problem(
            Family::GrossPitaevskii {
                k: 1,
                b: vec![vec![0.0]],
                mode: VectorMode::FixedMass,
                v: ScalarFn::power(2.0),
            },
            radial(8.0, 65),
        );
        assert!(shooting_oracle(&pr2).is_err());
        // bad options are rejected up front
        let bad = FlowOptions { backtrack: 1.5, ..FlowOptions::default() };
        assert!(gradient_flow(&pr, &sine_init(&g, 0.5), &bad).is_err());
    }
}
