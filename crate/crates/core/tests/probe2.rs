//! Trace diagnostics for the two misbehaving interval families.

use varipath::fields::{smoothed_positive_field, substream_rng};
use varipath::grid::{Domain, Grid};
use varipath::problems::{Family, Problem, ProblemSpec, ScalarFn, State};
use varipath::solvers::{gradient_flow, FlowOptions};

fn init(pr: &Problem, seed: u64) -> State {
    let comps = (0..pr.arity())
        .map(|c| {
            let mut rng = substream_rng(seed, c as u64);
            smoothed_positive_field(pr.grid(), &mut rng, 0.2, 1.5, 5)
        })
        .collect();
    State::new(comps).unwrap()
}

fn show(label: &str, family: Family, grid: Grid, seed: u64) {
    let pr = Problem::new(ProblemSpec { family, grid }).unwrap();
    let rep = gradient_flow(&pr, &init(&pr, seed), &FlowOptions::default()).unwrap();
    println!(
        "{label} seed {seed}: conv {} pos {} collapsed {} iters {} res {:.3e} sup {:.4e} clamps {}",
        rep.converged,
        rep.positive,
        rep.collapsed,
        rep.iterations,
        rep.residual,
        rep.state.sup_norm(),
        rep.clamps
    );
    let m = rep.trace.len();
    for p in rep.trace.iter().take(6) {
        println!("  it {:6}  E {:+.6e}  res {:.3e}", p.iter, p.energy, p.residual);
    }
    println!("  ...");
    for p in rep.trace.iter().skip(m.saturating_sub(6)) {
        println!("  it {:6}  E {:+.6e}  res {:.3e}", p.iter, p.energy, p.residual);
    }
}

#[test]
fn probe_p15() {
    let g = Grid::make(Domain::interval(0.0, 1.0), 129).unwrap();
    for seed in [0, 1] {
        show(
            "plap p=1.5 q=1.25",
            Family::GeneralizedPlap {
                p: 1.5,
                h: ScalarFn::constant(1.0),
                g: ScalarFn::power(1.25),
            },
            g.clone(),
            seed,
        );
    }
}

#[test]
fn probe_boundary() {
    let g = Grid::make(Domain::interval_natural(0.0, 1.0), 129).unwrap();
    for seed in [0, 1, 2, 3] {
        show(
            "nonlinear boundary p=2 q=1.5",
            Family::NonlinearBoundary { p: 2.0, q: 1.5 },
            g.clone(),
            seed,
        );
    }
}
