//! JSON experiment configs and the runners behind the command line.
//!
//! A config names one experiment over the shared vocabulary (family, grid,
//! flow options, seed) plus an output directory. Parsing is strict: unknown
//! keys anywhere in the tree are errors, and the whole config is validated
//! against the catalog before any computation starts. Every runner writes
//! `report.json`, a `metrics.csv` carrying each reported numeric at full
//! precision, and experiment-specific CSV series.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::decay::{tail_fit, window_csv, DecayFit};
use crate::error::{Error, Result};
use crate::fields::{smoothed_positive_field, substream_rng};
use crate::grid::{Domain, DomainKind, Grid, GridFunction};
use crate::inequalities::{
    check_f_properties, check_fractional_pointwise, check_gin, check_operator_minkowski,
    check_scalar_q_monotone, check_system_concavity, IneqReport,
};
use crate::paths::{
    convexity_profile, lipschitz_probe, profile_csv, ConvexityVerdict, Generator,
    LipschitzVerdict, PathSpec, ProbeNorm, DEFAULT_SAMPLES,
};
use crate::problems::{Family, Problem, ProblemSpec, ScalarFn, ScalarMode, State, VectorMode};
use crate::report::{
    metrics_csv, report_bytes, state_csv, write_atomic, ReportFile, ResultEntry,
};
use crate::solvers::{
    auto_flow, multistart, trace_csv, FlowOptions, SolveReport, UniquenessReport,
};

/// What a config runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// One seeded flow on the configured problem.
    Solve,
    /// Seeded multistart with clustering; passes iff exactly one cluster.
    Multistart,
    /// Multistart plus the pairwise hypothesis battery on every converged pair.
    PathCheck,
    /// The randomized inequality battery (problem-independent).
    Ineq,
    /// Radial solve followed by tail fits against the predicted decay law.
    Decay,
    /// The one-dimensional counterexample walk-through.
    DemoToy,
}

impl ExperimentKind {
    fn name(self) -> &'static str {
        match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::Multistart => "multistart",
            ExperimentKind::PathCheck => "path_check",
            ExperimentKind::Ineq => "ineq",
            ExperimentKind::Decay => "decay",
            ExperimentKind::DemoToy => "demo_toy",
        }
    }
}

/// Domain plus resolution, exactly as a grid is built.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(flatten)]
    pub domain: Domain,
    pub n: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::make(self.domain, self.n)
    }
}

/// One experiment: what to run, on which problem, and where outputs go.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Family parameters; required by solve/multistart/path_check/decay.
    #[serde(default)]
    pub problem: Option<Family>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub solver: FlowOptions,
    /// Multistart width (multistart/path_check only); 16 when omitted.
    #[serde(default)]
    pub starts: Option<usize>,
    pub seed: u64,
    /// Output directory for report.json and the CSV series.
    pub output: PathBuf,
}

const DEFAULT_STARTS: usize = 16;

/// Parse a config strictly: malformed JSON, bad vocabulary, missing fields,
/// and unknown keys anywhere in the tree are all errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let input: Value =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad JSON: {e}")))?;
    let cfg: ExperimentConfig = serde_json::from_value(input.clone())
        .map_err(|e| Error::Config(format!("bad config: {e}")))?;
    // Re-serialize and require every input key to reappear: serde ignores
    // unknown keys inside flattened and tagged structures, so the echo is
    // the reliable census of what was actually understood.
    let echo = serde_json::to_value(&cfg)?;
    check_unknown_keys(&input, &echo, "")?;
    validate(&cfg)?;
    Ok(cfg)
}

fn check_unknown_keys(input: &Value, echo: &Value, path: &str) -> Result<()> {
    match (input, echo) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in a {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get(k) {
                    None => return Err(Error::Config(format!("unknown key '{p}'"))),
                    Some(w) => check_unknown_keys(v, w, &p)?,
                }
            }
            Ok(())
        }
        (Value::Array(a), Value::Array(b)) => {
            for (i, (v, w)) in a.iter().zip(b).enumerate() {
                check_unknown_keys(v, w, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Catalog-level validation, all before any computation.
fn validate(cfg: &ExperimentConfig) -> Result<()> {
    use ExperimentKind::*;
    let kind = cfg.experiment;
    cfg.solver
        .validate()
        .map_err(|e| Error::Config(format!("solver options: {e}")))?;
    if cfg.starts.is_some() && !matches!(kind, Multistart | PathCheck) {
        return Err(Error::Config(format!("'starts' does not apply to {}", kind.name())));
    }
    if let Some(s) = cfg.starts {
        if !(2..=256).contains(&s) {
            return Err(Error::Config(format!("starts must lie in 2..=256, got {s}")));
        }
    }
    match kind {
        Solve | Multistart | PathCheck | Decay => {
            // Problem construction is the vocabulary check.
            let problem = built_problem(cfg)?;
            if kind == Decay {
                match problem.grid().domain.kind {
                    DomainKind::Radial { .. } => {}
                    _ => return Err(Error::Config("decay needs a radial grid".into())),
                }
                if decay_targets(cfg.problem.as_ref().unwrap()).is_none() {
                    return Err(Error::Config(
                        "decay needs a trapped family with a multiplier \
                         (gross_pitaevskii or schrodinger_dual)"
                            .into(),
                    ));
                }
            }
        }
        Ineq => {
            if cfg.problem.is_some() {
                return Err(Error::Config("ineq runs a fixed battery; drop 'problem'".into()));
            }
            if let Some(g) = &cfg.grid {
                let grid = g.build()?;
                if !grid.is_1d() || matches!(grid.domain.kind, DomainKind::Radial { .. }) {
                    return Err(Error::Config("ineq grid must be an interval".into()));
                }
            }
        }
        DemoToy => {
            if cfg.problem.is_some() || cfg.grid.is_some() {
                return Err(Error::Config(
                    "demo_toy is self-contained; drop 'problem' and 'grid'".into(),
                ));
            }
        }
    }
    Ok(())
}

fn built_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let family = cfg
        .problem
        .clone()
        .ok_or_else(|| Error::Config(format!("{} needs 'problem'", cfg.experiment.name())))?;
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} needs 'grid'", cfg.experiment.name())))?
        .build()?;
    Problem::new(ProblemSpec { family, grid })
}

/// Multiplier sources for a decay run: fixed-mode omegas come from the
/// config; fixed-mass modes read the solver's Rayleigh multipliers.
fn decay_targets(family: &Family) -> Option<Option<Vec<f64>>> {
    match family {
        Family::GrossPitaevskii { mode: VectorMode::FixedOmega { omegas }, .. } => {
            Some(Some(omegas.clone()))
        }
        Family::GrossPitaevskii { mode: VectorMode::FixedMass, .. } => Some(None),
        Family::SchrodingerDual { mode: ScalarMode::FixedOmega { omega }, .. } => {
            Some(Some(vec![*omega]))
        }
        Family::SchrodingerDual { mode: ScalarMode::FixedMass, .. } => Some(None),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// runners
// ---------------------------------------------------------------------------

/// Run a parsed config, pushing result entries as sub-checks finish so an
/// abort still leaves the completed part in the report.
pub fn execute(cfg: &ExperimentConfig, results: &mut Vec<ResultEntry>) -> Result<()> {
    match cfg.experiment {
        ExperimentKind::Solve => run_solve(cfg, results),
        ExperimentKind::Multistart => run_multistart(cfg, results),
        ExperimentKind::PathCheck => run_path_check(cfg, results),
        ExperimentKind::Ineq => run_ineq(cfg, results),
        ExperimentKind::Decay => run_decay(cfg, results),
        ExperimentKind::DemoToy => run_demo_toy(cfg, results),
    }
}

/// The seeded initial state every solve-like experiment starts from:
/// one smoothed positive field per component, substreamed off the seed.
fn seeded_init(problem: &Problem, seed: u64) -> Result<State> {
    let grid = problem.grid();
    let comps: Vec<GridFunction> = (0..problem.arity())
        .map(|c| {
            let mut rng = substream_rng(seed, c as u64);
            smoothed_positive_field(grid, &mut rng, 0.2, 1.5, 5)
        })
        .collect();
    State::new(comps)
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output.join(name)
}

fn solve_entry(name: &str, rep: &SolveReport) -> ResultEntry {
    let mut e = ResultEntry::new(name, rep.converged && !rep.collapsed);
    e.num("energy", rep.energy)
        .num("residual", rep.residual)
        .int("iterations", rep.iterations)
        .flag("converged", rep.converged)
        .flag("positive", rep.positive)
        .num("positivity", rep.positivity)
        .int("clamps", rep.clamps)
        .flag("collapsed", rep.collapsed);
    for (i, m) in rep.multipliers.iter().enumerate() {
        e.num(&format!("multiplier_{i}"), *m);
    }
    if let Some(r) = rep.truncation_radius {
        e.num("truncation_radius", r);
    }
    e
}

fn run_solve(cfg: &ExperimentConfig, results: &mut Vec<ResultEntry>) -> Result<()> {
    let problem = built_problem(cfg)?;
    let init = seeded_init(&problem, cfg.seed)?;
    let rep = auto_flow(&problem, &init, &cfg.solver)?;
    write_atomic(&out_path(cfg, "trace.csv"), trace_csv(&rep).as_bytes())?;
    write_atomic(&out_path(cfg, "state.csv"), state_csv(&rep.state).as_bytes())?;
    results.push(solve_entry("solve", &rep));
    Ok(())
}

fn run_multistart(cfg: &ExperimentConfig, results: &mut Vec<ResultEntry>) -> Result<()> {
    let problem = built_problem(cfg)?;
    let rep = run_starts(cfg, &problem)?;
    write_cluster_outputs(cfg, &rep)?;

    let mut e = ResultEntry::new("multistart", rep.clusters.len() == 1);
    e.int("n_starts", rep.n_starts)
        .int("converged", rep.converged_starts.len())
        .int("excluded", rep.excluded_starts.len())
        .int("clusters", rep.clusters.len());
    for (i, c) in rep.clusters.iter().enumerate() {
        e.int(&format!("cluster_{i}_size"), c.members.len())
            .num(&format!("cluster_{i}_energy"), rep.reports[c.representative_start].energy)
            .num(&format!("cluster_{i}_max_intra"), c.max_intra_distance);
    }
    for d in &rep.inter_cluster {
        e.num(&format!("inter_{}_{}", d.first, d.second), d.distance);
    }
    results.push(e);
    Ok(())
}

fn run_starts(cfg: &ExperimentConfig, problem: &Problem) -> Result<UniquenessReport> {
    multistart(problem, cfg.starts.unwrap_or(DEFAULT_STARTS), cfg.seed, &cfg.solver)
}

fn write_cluster_outputs(cfg: &ExperimentConfig, rep: &UniquenessReport) -> Result<()> {
    let mut csv = String::from(
        "cluster,representative_start,size,max_intra_distance,energy,residual\n",
    );
    for (i, c) in rep.clusters.iter().enumerate() {
        let r = &rep.reports[c.representative_start];
        csv.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            c.representative_start,
            c.members.len(),
            c.max_intra_distance,
            r.energy,
            r.residual
        ));
        write_atomic(
            &out_path(cfg, &format!("state_cluster{i}.csv")),
            state_csv(&r.state).as_bytes(),
        )?;
    }
    write_atomic(&out_path(cfg, "clusters.csv"), csv.as_bytes())
}

/// Gate thresholds for computed-pair conclusions, relative to profile scale.
const PAIR_GAP_REL: f64 = 1e-6;

fn run_path_check(cfg: &ExperimentConfig, results: &mut Vec<ResultEntry>) -> Result<()> {
    let problem = built_problem(cfg)?;
    let rep = run_starts(cfg, &problem)?;
    write_cluster_outputs(cfg, &rep)?;

    let mut pairs_csv = String::from(
        "first_start,second_start,energy_gap,flatness_gap,min_d2j,delta,\
         endpoints_exact,lipschitz,convexity\n",
    );
    let mut all_pairs_pass = true;
    for pair in &rep.theorem.pairs {
        let a = rep.converged_starts[pair.first];
        let b = rep.converged_starts[pair.second];
        let scale = pair.convexity.scale;
        let lipschitz_ok = pair.lipschitz.verdict == LipschitzVerdict::Lipschitz;
        let convex_ok = pair.convexity.verdict != ConvexityVerdict::NotConvex;
        let pass = pair.energy_gap <= PAIR_GAP_REL * scale
            && pair.flatness_gap <= PAIR_GAP_REL * scale
            && lipschitz_ok
            && convex_ok
            && pair.endpoints_exact;
        all_pairs_pass &= pass;

        let lips = if lipschitz_ok { "lipschitz" } else { "not_lipschitz" };
        let conv = match pair.convexity.verdict {
            ConvexityVerdict::StrictlyConvex => "strictly_convex",
            ConvexityVerdict::Convex => "convex",
            ConvexityVerdict::NotConvex => "not_convex",
        };
        let mut e = ResultEntry::new(format!("pair_{a}_{b}"), pass);
        e.num("energy_gap", pair.energy_gap)
            .num("flatness_gap", pair.flatness_gap)
            .num("scale", scale)
            .num("min_d2j", pair.convexity.min_d2j)
            .num("chord_gap", pair.convexity.chord_gap)
            .num("delta", pair.comparability.delta)
            .flag("endpoints_exact", pair.endpoints_exact)
            .text("lipschitz", lips)
            .text("convexity", conv);
        results.push(e);

        pairs_csv.push_str(&format!(
            "{a},{b},{},{},{},{},{},{lips},{conv}\n",
            pair.energy_gap,
            pair.flatness_gap,
            pair.convexity.min_d2j,
            pair.comparability.delta,
            pair.endpoints_exact,
        ));
        write_atomic(
            &out_path(cfg, &format!("profile_{a}_{b}.csv")),
            profile_csv(&pair.convexity).as_bytes(),
        )?;
    }
    write_atomic(&out_path(cfg, "pairs.csv"), pairs_csv.as_bytes())?;

    let mut e = ResultEntry::new(
        "path_check",
        all_pairs_pass && !rep.converged_starts.is_empty(),
    );
    e.int("converged", rep.converged_starts.len())
        .int("pairs", rep.theorem.pairs.len())
        .int("clusters", rep.clusters.len());
    for (k, r) in rep.theorem.residuals.iter().enumerate() {
        e.num(&format!("residual_{}", rep.converged_starts[k]), *r);
    }
    results.push(e);
    Ok(())
}

/// Expected outcome of one inequality check: most must find nothing; the
/// over-threshold concavity probes must find a witness.
enum Expect {
    NoViolations,
    WitnessFound,
}

fn ineq_entry(name: &str, rep: &IneqReport, expect: Expect) -> ResultEntry {
    let pass = match expect {
        Expect::NoViolations => rep.violations == 0,
        Expect::WitnessFound => rep.violations > 0,
    };
    let mut e = ResultEntry::new(name, pass);
    e.int("trials", rep.trials as usize)
        .int("violations", rep.violations as usize)
        .num("worst_margin", rep.worst_margin);
    if let Some(w) = &rep.witness {
        e.text("witness", w.to_string());
    }
    e
}

fn run_ineq(cfg: &ExperimentConfig, results: &mut Vec<ResultEntry>) -> Result<()> {
    let grid = match &cfg.grid {
        Some(g) => g.build()?,
        None => Grid::make(Domain::interval(0.0, 1.0), 129)?,
    };
    let seed = cfg.seed;
    let mut checks_csv = String::from("check,trials,violations,worst_margin\n");
    let mut record = |results: &mut Vec<ResultEntry>,
                      name: &str,
                      rep: &IneqReport,
                      expect: Expect| {
        checks_csv.push_str(&format!(
            "{name},{},{},{}\n",
            rep.trials, rep.violations, rep.worst_margin
        ));
        results.push(ineq_entry(name, rep, expect));
    };

    // Pointwise mixing bound for the generator/magnitude pairs in play.
    for (i, p) in [1.2, 2.0, 3.0].iter().enumerate() {
        let rep = check_gin(&ScalarFn::power(*p), &ScalarFn::power(*p), 20_000, seed + i as u64)?;
        record(results, &format!("gin_power_{p}"), &rep, Expect::NoViolations);
    }
    let rep = check_gin(&ScalarFn::FSquared, &ScalarFn::power(2.0), 20_000, seed + 3)?;
    record(results, "gin_f_squared", &rep, Expect::NoViolations);

    let rep = check_fractional_pointwise(50_000, seed + 4)?;
    record(results, "fractional_pointwise", &rep, Expect::NoViolations);

    let rep = check_scalar_q_monotone(50_000, seed + 5)?;
    record(results, "scalar_q_monotone", &rep, Expect::NoViolations);

    let rep = check_f_properties(10_000)?;
    record(results, "f_properties", &rep, Expect::NoViolations);

    for (i, beta) in [1.5, 2.0, 3.0].iter().enumerate() {
        let rep = check_operator_minkowski(*beta, 300, &grid, seed + 6 + i as u64)?;
        record(results, &format!("minkowski_beta_{beta}"), &rep, Expect::NoViolations);
    }

    // Concavity regime map: products below one concave, the boundary tight,
    // above one a violation witness must be found.
    let regimes: [(f64, f64, Expect); 6] = [
        (0.5, 0.5, Expect::NoViolations),
        (0.4, 2.0, Expect::NoViolations),
        (2.0, 0.4, Expect::NoViolations),
        (0.7, 1.2, Expect::NoViolations),
        (1.0, 1.0, Expect::NoViolations),
        (1.5, 1.0, Expect::WitnessFound),
    ];
    for (i, (p, q, expect)) in regimes.into_iter().enumerate() {
        let rep = check_system_concavity(p, q, 2_000, &grid, seed + 9 + i as u64)?;
        record(results, &format!("concavity_p{p}_q{q}"), &rep, expect);
    }

    write_atomic(&out_path(cfg, "checks.csv"), checks_csv.as_bytes())
}

/// Desk-scale decay gates: fitted exponent within this of the prediction,
/// envelope ratio at most this.
const DECAY_DEV_TOL: f64 = 0.15;
const DECAY_RATIO_TOL: f64 = 3.0;

fn run_decay(cfg: &ExperimentConfig, results: &mut Vec<ResultEntry>) -> Result<()> {
    let problem = built_problem(cfg)?;
    let dim = match problem.grid().domain.kind {
        DomainKind::Radial { dim, .. } => dim,
        _ => unreachable!("validated radial"),
    };
    let init = seeded_init(&problem, cfg.seed)?;
    let rep = auto_flow(&problem, &init, &cfg.solver)?;
    write_atomic(&out_path(cfg, "trace.csv"), trace_csv(&rep).as_bytes())?;
    write_atomic(&out_path(cfg, "state.csv"), state_csv(&rep.state).as_bytes())?;
    results.push(solve_entry("solve", &rep));

    let omegas = match decay_targets(cfg.problem.as_ref().unwrap()).unwrap() {
        Some(fixed) => fixed,
        None => rep.multipliers.clone(),
    };
    let mut fits: Vec<DecayFit> = Vec::new();
    for (c, comp) in rep.state.components.iter().enumerate() {
        let fit = tail_fit(comp, omegas[c], dim)?;
        write_atomic(
            &out_path(cfg, &format!("window_u{c}.csv")),
            window_csv(comp, &fit).as_bytes(),
        )?;
        let mut e = ResultEntry::new(
            format!("decay_u{c}"),
            fit.deviation <= DECAY_DEV_TOL && fit.envelope_ratio <= DECAY_RATIO_TOL,
        );
        e.num("omega", omegas[c])
            .num("rho", fit.rho)
            .num("target", fit.target)
            .num("deviation", fit.deviation)
            .num("c1", fit.envelope.0)
            .num("c2", fit.envelope.1)
            .num("envelope_ratio", fit.envelope_ratio)
            .num("fit_residual", fit.residual)
            .num("window_r0", fit.window.0)
            .num("window_r1", fit.window.1)
            .int("window_nodes", fit.nodes.1 - fit.nodes.0 + 1);
        results.push(e);
        fits.push(fit);
    }
    let mut fits_json = serde_json::to_vec_pretty(&fits)?;
    fits_json.push(b'\n');
    write_atomic(&out_path(cfg, "fits.json"), &fits_json)
}

fn run_demo_toy(cfg: &ExperimentConfig, results: &mut Vec<ResultEntry>) -> Result<()> {
    // Profile table of x^3/3 - x - 2/3 shifted right by one; endpoints 0 and
    // 2 under the squared-mass generator walk the classical non-Lipschitz
    // counterexample while every energy lands on a table knot.
    let grid = Grid::make(Domain::interval_natural(0.0, 1.0), 33)?;
    let m = 1536;
    let knots = (0..=m)
        .map(|k| {
            let x = -0.5 + 3.0 * k as f64 / m as f64;
            let y = x - 1.0;
            (x, y * y * y / 3.0 - y - 2.0 / 3.0)
        })
        .collect();
    let problem = Problem::new(ProblemSpec {
        family: Family::Tabulated { f: ScalarFn::Tabulated { knots } },
        grid: grid.clone(),
    })?;
    let u = State::scalar(GridFunction::from_fn_unmasked(grid.clone(), |_, _| 0.0));
    let v = State::scalar(GridFunction::from_fn_unmasked(grid, |_, _| 2.0));
    let path = PathSpec::new(Generator::Power { r: 2.0 }, u, v)?;

    let profile = convexity_profile(&problem, &path, DEFAULT_SAMPLES)?;
    write_atomic(&out_path(cfg, "profile.csv"), profile_csv(&profile).as_bytes())?;
    let end_energy = *profile.j.last().unwrap();
    let mut e = ResultEntry::new("toy_energy", (end_energy + 4.0 / 3.0).abs() <= 1e-12);
    e.num("energy_at_end", end_energy).num("reference", -4.0 / 3.0);
    results.push(e);

    let strict = profile.verdict == ConvexityVerdict::StrictlyConvex;
    let mut e = ResultEntry::new("toy_convexity", strict);
    e.text("verdict", if strict { "strictly_convex" } else { "not_strictly_convex" })
        .num("min_d2j", profile.min_d2j)
        .num("chord_gap", profile.chord_gap)
        .num("flatness_gap", profile.flatness_gap);
    results.push(e);

    let probe = lipschitz_probe(&path, &ProbeNorm::Sup)?;
    let mut quot_csv = String::from("level,t,quotient\n");
    for (idx, q) in probe.quotients.iter().enumerate() {
        let t = 2f64.powi(-(idx as i32 + 1));
        quot_csv.push_str(&format!("{},{t},{q}\n", idx + 1));
    }
    write_atomic(&out_path(cfg, "quotients.csv"), quot_csv.as_bytes())?;
    let not_lipschitz = probe.verdict == LipschitzVerdict::NotLipschitz;
    let mut e = ResultEntry::new("toy_lipschitz", not_lipschitz);
    e.text("verdict", if not_lipschitz { "not_lipschitz" } else { "lipschitz" })
        .num("last_quotient", *probe.quotients.last().unwrap());
    results.push(e);
    Ok(())
}

// ---------------------------------------------------------------------------
// top-level run and the catalog listing
// ---------------------------------------------------------------------------

/// Run a config file end to end. Parse or validation failures return an
/// error before any output exists; failures mid-run still write report.json
/// (with the `failed` marker) plus whatever CSVs finished. The returned flag
/// is true iff every check passed.
pub fn run_config_file(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = parse_config(&text)?;
    let echo = serde_json::to_value(&cfg)?;

    let mut results = Vec::new();
    let outcome = execute(&cfg, &mut results);
    let failed = outcome.as_ref().err().map(|e| e.to_string());
    let report = ReportFile::new(echo, results, failed);
    write_atomic(&cfg.output.join("report.json"), &report_bytes(&report)?)?;
    write_atomic(&cfg.output.join("metrics.csv"), metrics_csv(&report)?.as_bytes())?;
    outcome?;
    Ok(report.all_pass())
}

/// Stable, sorted listing of the whole vocabulary: families, generators,
/// scalar functions, inequality oracles, experiments, and grid kinds, each
/// with its parameter schema. Doubles as the config documentation.
pub fn list_catalog() -> String {
    let sections: [(&str, &[&str]); 6] = [
        (
            "families",
            &[
                "allen_cahn {p, q, k}",
                "fractional {s, g}",
                "generalized_plap {p, h, g}",
                "gross_pitaevskii {k, b, mode: fixed_mass | {fixed_omega: {omegas}}, v}",
                "hamiltonian_dual {p, q}",
                "mean_curvature_euclid {p, g, grad_cap?}",
                "mean_curvature_minkowski {g, theta}",
                "nonlinear_boundary {p, q}",
                "p_eigenvalue {p, lambda}",
                "schrodinger_dual {mode: fixed_mass | {fixed_omega: {omega}}, v}",
                "tabulated {f}",
            ],
        ),
        (
            "generators",
            &[
                "component_powers {rs}",
                "f_squared",
                "power {r}",
                "squared",
                "straight",
            ],
        ),
        (
            "scalar_functions",
            &[
                "allen_cahn {k, p, q}",
                "arclength",
                "constant {c}",
                "curvature_h_minus_truncated {theta}",
                "curvature_h_plus",
                "f_squared",
                "power {r}",
                "tabulated {knots}",
            ],
        ),
        (
            "oracles",
            &[
                "f_properties",
                "fractional_pointwise",
                "gin {q, m}",
                "gp_energy_identity",
                "hessian_criterion {f1, f2}",
                "operator_minkowski {beta}",
                "scalar_q_monotone",
                "system_concavity {p, q}",
            ],
        ),
        (
            "experiments",
            &["decay", "demo_toy", "ineq", "multistart", "path_check", "solve"],
        ),
        (
            "grids",
            &[
                "interval {a, b, boundary?, n}",
                "radial {dim, radius, n}",
                "rectangle {ax, bx, ay, by, n}",
            ],
        ),
    ];
    let mut out = String::new();
    for (title, lines) in sections {
        out.push_str(title);
        out.push_str(":\n");
        for l in lines {
            out.push_str("  ");
            out.push_str(l);
            out.push('\n');
        }
    }
    out
}
