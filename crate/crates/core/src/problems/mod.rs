//! The variational family catalog: energies, discrete Euler-Lagrange
//! residuals, boundary terms, and mass constraints.
//!
//! Every (family, grid) pair evaluates through one `Problem` value whose
//! construction validates parameters and precomputes whatever the family
//! needs (nonlocal quadratic forms, nodal potentials, truncation levels).
//! Energies always use exact powers; only gradients regularize the
//! degenerate factor |grad u|^{p-2}.

pub mod dual;
pub mod scalar;

pub use dual::{dual_f, dual_f_inv, dual_f_inv_prime, dual_f_prime};
pub use scalar::ScalarFn;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    gradient_cells, integrate_map, poisson_solve, sphere_area_constant, weighted_form_gradient,
    BoundaryKind, DomainKind, FractionalForm, Grid, GridFunction,
};
use crate::linalg::compensated_sum;

/// Additive regularization inside (|grad u|^2 + eps)^{(p-2)/2}, gradients only.
pub const EPS_REG: f64 = 1e-12;

/// Weighted residual norm below which a state counts as critical.
pub const TOL_RES_DEFAULT: f64 = 1e-8;

/// Constraint handling for the quasilinear Schrodinger family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarMode {
    FixedOmega { omega: f64 },
    FixedMass,
}

/// Constraint handling for coupled condensate systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorMode {
    FixedOmega { omegas: Vec<f64> },
    FixedMass,
}

/// The problem families. Parameter names double as the JSON vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// (1/p) int H(|grad u|^p) - int G(u), zero boundary values.
    GeneralizedPlap { p: f64, h: ScalarFn, g: ScalarFn },
    /// (1/p) int |grad u|^p - (lambda/p) int |u|^p.
    PEigenvalue { p: f64, lambda: f64 },
    /// (1/p) int (|grad u|^p + |u|^p) - (1/q) boundary int |u|^q, natural boundary.
    NonlinearBoundary { p: f64, q: f64 },
    /// p-Laplacian with the two-power well k|t|^{p-1} - |t|^{q-1}, q > p.
    AllenCahn { p: f64, q: f64, k: f64 },
    /// int (sqrt(1+|grad u|^2) - 1) - int G(u); meaningful only while all
    /// cell gradients stay below `grad_cap` (default: the concavity
    /// threshold sqrt((2-p)/(p-1)) minus a 1e-6 margin).
    MeanCurvatureEuclid {
        p: f64,
        g: ScalarFn,
        #[serde(default)]
        grad_cap: Option<f64>,
    },
    /// int H~(|grad u|^2)/2 - int G^(u) with the total truncated density
    /// 1/sqrt(1-t) (frozen above 1-theta) and the source truncated at
    /// half the domain diameter. Never reports a regime error.
    MeanCurvatureMinkowski { g: ScalarFn, theta: f64 },
    /// Gagliardo seminorm energy (zero extension) minus int G(u).
    Fractional { s: f64, g: ScalarFn },
    /// Dual action of a Lane-Emden pair: power terms minus the cross term
    /// int f * Kg through the inverse Laplacian K.
    HamiltonianDual { p: f64, q: f64 },
    /// Dual quasilinear Schrodinger action in the transformed unknown v.
    SchrodingerDual { mode: ScalarMode, v: ScalarFn },
    /// k coupled condensates with symmetric interaction matrix b.
    GrossPitaevskii {
        k: usize,
        b: Vec<Vec<f64>>,
        mode: VectorMode,
        v: ScalarFn,
    },
    /// Scalar profile energy: the mean of f over the state's nodal values.
    /// Exact for constant states; carries the one-dimensional demo.
    Tabulated { f: ScalarFn },
}

impl Family {
    pub fn arity(&self) -> usize {
        match self {
            Family::HamiltonianDual { .. } => 2,
            Family::GrossPitaevskii { k, .. } => *k,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::GeneralizedPlap { .. } => "generalized_plap",
            Family::PEigenvalue { .. } => "p_eigenvalue",
            Family::NonlinearBoundary { .. } => "nonlinear_boundary",
            Family::AllenCahn { .. } => "allen_cahn",
            Family::MeanCurvatureEuclid { .. } => "mean_curvature_euclid",
            Family::MeanCurvatureMinkowski { .. } => "mean_curvature_minkowski",
            Family::Fractional { .. } => "fractional",
            Family::HamiltonianDual { .. } => "hamiltonian_dual",
            Family::SchrodingerDual { .. } => "schrodinger_dual",
            Family::GrossPitaevskii { .. } => "gross_pitaevskii",
            Family::Tabulated { .. } => "tabulated",
        }
    }

    /// Families whose states are mass-normalized in fixed-mass mode.
    pub fn constrained_components(&self) -> usize {
        match self {
            Family::SchrodingerDual { mode: ScalarMode::FixedMass, .. } => 1,
            Family::GrossPitaevskii { k, mode: VectorMode::FixedMass, .. } => *k,
            _ => 0,
        }
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        let need_dirichlet = |what: &str| -> Result<()> {
            if grid.domain.boundary != BoundaryKind::DirichletZero {
                return Err(Error::Problem(format!("{what} needs a dirichlet-zero grid")));
            }
            Ok(())
        };
        match self {
            Family::GeneralizedPlap { p, h, g } => {
                require(*p > 1.0, || format!("generalized_plap needs p > 1, got {p}"))?;
                h.validate()?;
                g.validate()?;
                require(h.density_capable(), || format!("{h:?} cannot act as a density h"))?;
                require(g.source_capable(), || format!("{g:?} cannot act as a source g"))?;
                need_dirichlet("generalized_plap")
            }
            Family::PEigenvalue { p, lambda } => {
                require(*p > 1.0, || format!("p_eigenvalue needs p > 1, got {p}"))?;
                require(lambda.is_finite(), || "lambda must be finite".into())?;
                need_dirichlet("p_eigenvalue")
            }
            Family::NonlinearBoundary { p, q } => {
                require(*p > 1.0 && *q > 1.0, || {
                    format!("nonlinear_boundary needs p, q > 1, got p={p}, q={q}")
                })?;
                if grid.domain.boundary != BoundaryKind::Natural {
                    return Err(Error::Problem(
                        "nonlinear_boundary needs a natural-boundary grid".into(),
                    ));
                }
                Ok(())
            }
            Family::AllenCahn { p, q, k } => {
                require(*p > 1.0 && *q > *p && *k > 0.0, || {
                    format!("allen_cahn needs 1 < p < q and k > 0, got p={p}, q={q}, k={k}")
                })?;
                need_dirichlet("allen_cahn")
            }
            Family::MeanCurvatureEuclid { p, g, grad_cap } => {
                require(*p > 1.0 && *p < 2.0, || {
                    format!("mean_curvature_euclid works with path exponent p in (1,2), got {p}")
                })?;
                g.validate()?;
                require(g.source_capable(), || format!("{g:?} cannot act as a source g"))?;
                let cap = euclid_cap_threshold(*p);
                if let Some(c) = grad_cap {
                    require(*c > 0.0 && *c <= cap, || {
                        format!("grad_cap must lie in (0, {cap:.6}], got {c}")
                    })?;
                }
                need_dirichlet("mean_curvature_euclid")
            }
            Family::MeanCurvatureMinkowski { g, theta } => {
                require(*theta > 0.0 && *theta < 1.0, || {
                    format!("theta must lie in (0,1), got {theta}")
                })?;
                g.validate()?;
                require(g.source_capable(), || format!("{g:?} cannot act as a source g"))?;
                need_dirichlet("mean_curvature_minkowski")
            }
            Family::Fractional { s, g } => {
                require(*s > 0.0 && *s < 1.0, || format!("fractional needs s in (0,1), got {s}"))?;
                g.validate()?;
                require(g.source_capable(), || format!("{g:?} cannot act as a source g"))?;
                if !matches!(grid.domain.kind, DomainKind::Interval { .. }) {
                    return Err(Error::Problem("fractional is assembled on intervals only".into()));
                }
                need_dirichlet("fractional")
            }
            Family::HamiltonianDual { p, q } => {
                require(*p > 0.0 && *q > 0.0, || {
                    format!("hamiltonian_dual needs p, q > 0, got p={p}, q={q}")
                })?;
                need_dirichlet("hamiltonian_dual")
            }
            Family::SchrodingerDual { mode, v } => {
                v.validate()?;
                if let ScalarMode::FixedOmega { omega } = mode {
                    require(omega.is_finite(), || "omega must be finite".into())?;
                }
                need_dirichlet("schrodinger_dual")
            }
            Family::GrossPitaevskii { k, b, mode, v } => {
                require(*k >= 1, || "system needs at least one component".into())?;
                require(b.len() == *k && b.iter().all(|row| row.len() == *k), || {
                    format!("interaction matrix must be {k} x {k}")
                })?;
                for i in 0..*k {
                    for j in 0..*k {
                        require(b[i][j].is_finite(), || "interaction entries must be finite".into())?;
                        require((b[i][j] - b[j][i]).abs() <= 1e-12, || {
                            format!("interaction matrix must be symmetric; entry ({i},{j}) differs")
                        })?;
                    }
                }
                if let VectorMode::FixedOmega { omegas } = mode {
                    require(omegas.len() == *k && omegas.iter().all(|w| w.is_finite()), || {
                        format!("need {k} finite omegas")
                    })?;
                }
                v.validate()?;
                need_dirichlet("gross_pitaevskii")
            }
            Family::Tabulated { f } => {
                f.validate()?;
                if grid.domain.boundary != BoundaryKind::Natural {
                    return Err(Error::Problem(
                        "tabulated profiles need a natural-boundary grid (constants must be representable)".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

fn require<F: FnOnce() -> String>(cond: bool, msg: F) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Problem(msg()))
    }
}

/// Concavity threshold for the Euclidean curvature regime at exponent p.
pub fn euclid_cap_threshold(p: f64) -> f64 {
    ((2.0 - p) / (p - 1.0)).sqrt()
}

/// Default effective cap: threshold minus a safety margin.
pub fn euclid_default_cap(p: f64) -> f64 {
    euclid_cap_threshold(p) - 1e-6
}

/// A family bound to the grid it is discretized on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(flatten)]
    pub family: Family,
    pub grid: Grid,
}

/// One point of a family's state space: one field per component.
#[derive(Debug, Clone)]
pub struct State {
    pub components: Vec<GridFunction>,
}

impl State {
    pub fn new(components: Vec<GridFunction>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Problem("state needs at least one component".into()));
        }
        let grid = components[0].grid.clone();
        for c in &components {
            if c.grid != grid {
                return Err(Error::Problem("state components live on different grids".into()));
            }
        }
        Ok(State { components })
    }

    pub fn scalar(u: GridFunction) -> Self {
        State { components: vec![u] }
    }

    pub fn grid(&self) -> &Grid {
        &self.components[0].grid
    }

    pub fn arity(&self) -> usize {
        self.components.len()
    }

    pub fn zeros_like(&self) -> Self {
        State {
            components: self
                .components
                .iter()
                .map(|c| GridFunction::zeros(c.grid.clone()))
                .collect(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.components.iter().map(|c| c.sup_norm()).fold(0.0, f64::max)
    }

    pub fn sup_distance(&self, other: &State) -> f64 {
        assert_eq!(self.arity(), other.arity());
        let mut d = 0.0f64;
        for (a, b) in self.components.iter().zip(&other.components) {
            for (x, y) in a.values.iter().zip(&b.values) {
                d = d.max((x - y).abs());
            }
        }
        d
    }

    /// self += a * dir, componentwise.
    pub fn axpy(&mut self, a: f64, dir: &State) {
        assert_eq!(self.arity(), dir.arity());
        for (c, d) in self.components.iter_mut().zip(&dir.components) {
            for (x, y) in c.values.iter_mut().zip(&d.values) {
                *x += a * y;
            }
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        State {
            components: self.components.iter().map(|c| c.scaled(a)).collect(),
        }
    }
}

/// A validated spec with its precomputed evaluation caches.
pub struct Problem {
    pub spec: ProblemSpec,
    /// Nonlocal quadratic form (fractional family).
    frac: Option<FractionalForm>,
    /// Nodal potential values (Schrodinger / condensate families).
    v_nodes: Option<Vec<f64>>,
    /// Source truncation level for the Minkowski family: half the diameter.
    trunc: f64,
    /// Effective gradient cap for the Euclidean curvature family.
    cap: f64,
}

impl Problem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        spec.family.validate(&spec.grid)?;
        let grid = &spec.grid;
        let frac = match &spec.family {
            Family::Fractional { s, .. } => Some(FractionalForm::new(grid, *s)?),
            _ => None,
        };
        let v_nodes = match &spec.family {
            Family::SchrodingerDual { v, .. } | Family::GrossPitaevskii { v, .. } => Some(
                (0..grid.node_count())
                    .map(|i| v.value(grid.potential_coord(i)))
                    .collect(),
            ),
            _ => None,
        };
        let trunc = 0.5 * grid.domain.diameter();
        let cap = match &spec.family {
            Family::MeanCurvatureEuclid { p, grad_cap, .. } => {
                grad_cap.unwrap_or_else(|| euclid_default_cap(*p))
            }
            _ => f64::INFINITY,
        };
        Ok(Problem { spec, frac, v_nodes, trunc, cap })
    }

    pub fn family(&self) -> &Family {
        &self.spec.family
    }

    pub fn grid(&self) -> &Grid {
        &self.spec.grid
    }

    pub fn arity(&self) -> usize {
        self.spec.family.arity()
    }

    /// Effective gradient cap (Euclidean curvature family only; +inf otherwise).
    pub fn grad_cap(&self) -> f64 {
        self.cap
    }

    /// The precomputed nonlocal quadratic form, when the family has one.
    pub fn fractional_form(&self) -> Option<&FractionalForm> {
        self.frac.as_ref()
    }

    pub fn check_state(&self, x: &State) -> Result<()> {
        if x.arity() != self.arity() {
            return Err(Error::Problem(format!(
                "{} expects {} component(s), state has {}",
                self.spec.family.name(),
                self.arity(),
                x.arity()
            )));
        }
        if *x.grid() != self.spec.grid {
            return Err(Error::Problem("state grid differs from problem grid".into()));
        }
        Ok(())
    }

    pub fn energy(&self, x: &State) -> Result<f64> {
        self.check_state(x)?;
        let grid = &self.spec.grid;
        match &self.spec.family {
            Family::GeneralizedPlap { p, h, g } => {
                let u = &x.components[0];
                let grad = density_energy(u, |m| h.antiderivative(m.powf(*p)) / p);
                Ok(grad - integrate_map(u, |t| g.source_primitive(t)))
            }
            Family::PEigenvalue { p, lambda } => {
                let u = &x.components[0];
                let grad = density_energy(u, |m| m.powf(*p) / p);
                Ok(grad - lambda / p * integrate_map(u, |t| t.abs().powf(*p)))
            }
            Family::NonlinearBoundary { p, q } => {
                let u = &x.components[0];
                let grad = density_energy(u, |m| m.powf(*p) / p);
                let bulk = integrate_map(u, |t| t.abs().powf(*p)) / p;
                Ok(grad + bulk - self.boundary_energy_inner(u, *q))
            }
            Family::AllenCahn { p, q, k } => {
                let u = &x.components[0];
                let grad = density_energy(u, |m| m.powf(*p) / p);
                Ok(grad - integrate_map(u, |t| k * t.abs().powf(*p) / p - t.abs().powf(*q) / q))
            }
            Family::MeanCurvatureEuclid { g, .. } => {
                let u = &x.components[0];
                self.check_euclid_regime(u)?;
                let grad = density_energy(u, |m| (1.0 + m * m).sqrt() - 1.0);
                Ok(grad - integrate_map(u, |t| g.source_primitive(t)))
            }
            Family::MeanCurvatureMinkowski { g, theta } => {
                let u = &x.components[0];
                let h = ScalarFn::CurvatureHMinusTruncated { theta: *theta };
                let grad = density_energy(u, |m| 0.5 * h.antiderivative(m * m));
                let m_cap = self.trunc;
                Ok(grad - integrate_map(u, |t| truncated_primitive(g, m_cap, t)))
            }
            Family::Fractional { g, .. } => {
                let u = &x.components[0];
                let quad = self.frac.as_ref().expect("built at construction").energy(u);
                Ok(quad - integrate_map(u, |t| g.source_primitive(t)))
            }
            Family::HamiltonianDual { p, q } => {
                let (f, gfun) = (&x.components[0], &x.components[1]);
                let alpha = (p + 1.0) / p;
                let beta = (q + 1.0) / q;
                let kg = poisson_solve(gfun)?;
                let powers = integrate_map(f, |t| p / (p + 1.0) * t.abs().powf(alpha))
                    + integrate_map(gfun, |t| q / (q + 1.0) * t.abs().powf(beta));
                let cross = crate::grid::integrate(f, Some(&kg));
                Ok(powers - cross)
            }
            Family::SchrodingerDual { mode, .. } => {
                let v = &x.components[0];
                let omega = match mode {
                    ScalarMode::FixedOmega { omega } => *omega,
                    ScalarMode::FixedMass => 0.0,
                };
                let grad = 0.5 * density_energy(v, |m| m * m);
                let vn = self.v_nodes.as_ref().expect("built at construction");
                let w = grid.quad_weights();
                let nodal = compensated_sum((0..grid.node_count()).map(|i| {
                    let fv = dual_f(v.values[i]);
                    w[i] * ((vn[i] - omega) * fv * fv / 2.0 + fv.powi(4) / 4.0)
                }));
                Ok(grad + nodal)
            }
            Family::GrossPitaevskii { k, b, mode, .. } => {
                let vn = self.v_nodes.as_ref().expect("built at construction");
                let w = grid.quad_weights();
                let omegas = match mode {
                    VectorMode::FixedOmega { omegas } => omegas.clone(),
                    VectorMode::FixedMass => vec![0.0; *k],
                };
                let mut e = 0.0;
                for (c, u) in x.components.iter().enumerate() {
                    e += 0.5 * density_energy(u, |m| m * m);
                    e += compensated_sum(
                        (0..grid.node_count())
                            .map(|i| w[i] * (vn[i] - omegas[c]) * u.values[i] * u.values[i] / 2.0),
                    );
                }
                // quartic coupling (1/4) int rho^T B rho, rho_i = u_i^2
                let quart = compensated_sum((0..grid.node_count()).map(|i| {
                    let rho: Vec<f64> =
                        x.components.iter().map(|u| u.values[i] * u.values[i]).collect();
                    let mut s = 0.0;
                    for a in 0..*k {
                        for bb in 0..*k {
                            s += rho[a] * b[a][bb] * rho[bb];
                        }
                    }
                    w[i] * s
                }));
                Ok(e + 0.25 * quart)
            }
            Family::Tabulated { f } => {
                let u = &x.components[0];
                Ok(integrate_map(u, |t| f.value(t)) / grid.domain.measure())
            }
        }
    }

    /// dE/du at every node (quadrature-weighted "raw" gradient), zeroed on
    /// constrained nodes. One vector per component.
    pub fn raw_gradient(&self, x: &State) -> Result<Vec<Vec<f64>>> {
        self.check_state(x)?;
        let grid = &self.spec.grid;
        let w = grid.quad_weights();
        let mut out: Vec<Vec<f64>> = match &self.spec.family {
            Family::GeneralizedPlap { p, h, g } => {
                let u = &x.components[0];
                let mut r = density_gradient(u, |m| {
                    h.value(m.powf(*p)) * (m * m + EPS_REG).powf((p - 2.0) / 2.0)
                });
                for i in 0..grid.node_count() {
                    r[i] -= w[i] * g.source(u.values[i]);
                }
                vec![r]
            }
            Family::PEigenvalue { p, lambda } => {
                let u = &x.components[0];
                let mut r = density_gradient(u, |m| (m * m + EPS_REG).powf((p - 2.0) / 2.0));
                for i in 0..grid.node_count() {
                    let t = u.values[i];
                    r[i] -= w[i] * lambda * t.signum() * t.abs().powf(p - 1.0);
                }
                vec![r]
            }
            Family::NonlinearBoundary { p, q } => {
                let u = &x.components[0];
                let mut r = density_gradient(u, |m| (m * m + EPS_REG).powf((p - 2.0) / 2.0));
                for i in 0..grid.node_count() {
                    let t = u.values[i];
                    r[i] += w[i] * t.signum() * t.abs().powf(p - 1.0);
                }
                for (i, bw) in boundary_weights(grid) {
                    let t = u.values[i];
                    r[i] -= bw * t.signum() * t.abs().powf(q - 1.0);
                }
                vec![r]
            }
            Family::AllenCahn { p, q, k } => {
                let u = &x.components[0];
                let mut r = density_gradient(u, |m| (m * m + EPS_REG).powf((p - 2.0) / 2.0));
                for i in 0..grid.node_count() {
                    let t = u.values[i];
                    r[i] -= w[i]
                        * t.signum()
                        * (k * t.abs().powf(p - 1.0) - t.abs().powf(q - 1.0));
                }
                vec![r]
            }
            Family::MeanCurvatureEuclid { g, .. } => {
                let u = &x.components[0];
                self.check_euclid_regime(u)?;
                let mut r = density_gradient(u, |m| 1.0 / (1.0 + m * m).sqrt());
                for i in 0..grid.node_count() {
                    r[i] -= w[i] * g.source(u.values[i]);
                }
                vec![r]
            }
            Family::MeanCurvatureMinkowski { g, theta } => {
                let u = &x.components[0];
                let h = ScalarFn::CurvatureHMinusTruncated { theta: *theta };
                let mut r = density_gradient(u, |m| h.value(m * m));
                let m_cap = self.trunc;
                for i in 0..grid.node_count() {
                    r[i] -= w[i] * truncated_source(g, m_cap, u.values[i]);
                }
                vec![r]
            }
            Family::Fractional { g, .. } => {
                let u = &x.components[0];
                let mut r = self.frac.as_ref().expect("built at construction").gradient(u);
                for i in 0..grid.node_count() {
                    r[i] -= w[i] * g.source(u.values[i]);
                }
                vec![r]
            }
            Family::HamiltonianDual { p, q } => {
                let (f, gfun) = (&x.components[0], &x.components[1]);
                let kg = poisson_solve(gfun)?;
                let kf = poisson_solve(f)?;
                let mut rf = vec![0.0; grid.node_count()];
                let mut rg = vec![0.0; grid.node_count()];
                for i in 0..grid.node_count() {
                    let t = f.values[i];
                    rf[i] = w[i] * (t.signum() * t.abs().powf(1.0 / p) - kg.values[i]);
                    let s = gfun.values[i];
                    rg[i] = w[i] * (s.signum() * s.abs().powf(1.0 / q) - kf.values[i]);
                }
                vec![rf, rg]
            }
            Family::SchrodingerDual { mode, .. } => {
                let v = &x.components[0];
                let omega = match mode {
                    ScalarMode::FixedOmega { omega } => *omega,
                    ScalarMode::FixedMass => 0.0,
                };
                let vn = self.v_nodes.as_ref().expect("built at construction");
                let mut r = crate::grid::dirichlet_form_gradient(v);
                for i in 0..grid.node_count() {
                    let fv = dual_f(v.values[i]);
                    let fp = 1.0 / (1.0 + 2.0 * fv * fv).sqrt();
                    r[i] += w[i] * ((vn[i] - omega) * fv + fv.powi(3)) * fp;
                }
                vec![r]
            }
            Family::GrossPitaevskii { k, b, mode, .. } => {
                let vn = self.v_nodes.as_ref().expect("built at construction");
                let omegas = match mode {
                    VectorMode::FixedOmega { omegas } => omegas.clone(),
                    VectorMode::FixedMass => vec![0.0; *k],
                };
                let mut rs = Vec::with_capacity(*k);
                for (c, u) in x.components.iter().enumerate() {
                    let mut r = crate::grid::dirichlet_form_gradient(u);
                    for i in 0..grid.node_count() {
                        let mut coupling = 0.0;
                        for (a, ua) in x.components.iter().enumerate() {
                            coupling += b[c][a] * ua.values[i] * ua.values[i];
                        }
                        r[i] += w[i] * u.values[i] * (vn[i] - omegas[c] + coupling);
                    }
                    rs.push(r);
                }
                rs
            }
            Family::Tabulated { f } => {
                let u = &x.components[0];
                let measure = grid.domain.measure();
                let r = (0..grid.node_count())
                    .map(|i| w[i] * f.d1(u.values[i]) / measure)
                    .collect();
                vec![r]
            }
        };
        for r in &mut out {
            for i in 0..grid.node_count() {
                if grid.is_constrained(i) {
                    r[i] = 0.0;
                }
            }
        }
        Ok(out)
    }

    /// Euler-Lagrange residual field(s): the raw gradient scaled by inverse
    /// quadrature weights, zero at constrained nodes.
    pub fn euler_lagrange(&self, x: &State) -> Result<State> {
        let raw = self.raw_gradient(x)?;
        let grid = &self.spec.grid;
        let w = grid.quad_weights();
        let comps = raw
            .into_iter()
            .map(|mut r| {
                for i in 0..grid.node_count() {
                    if !grid.is_constrained(i) {
                        r[i] /= w[i];
                    }
                }
                GridFunction::new(grid.clone(), r).expect("length preserved")
            })
            .collect();
        Ok(State { components: comps })
    }

    /// Weighted L2 norm of the Euler-Lagrange residual.
    pub fn residual_norm(&self, x: &State) -> Result<f64> {
        let res = self.euler_lagrange(x)?;
        let w = self.spec.grid.quad_weights();
        let mut acc = 0.0;
        for c in &res.components {
            for (i, r) in c.values.iter().enumerate() {
                acc += w[i] * r * r;
            }
        }
        Ok(acc.sqrt())
    }

    /// The boundary term (1/q) int_{boundary} |u|^q of the natural-boundary
    /// family; rejects every other family.
    pub fn boundary_energy(&self, x: &State) -> Result<f64> {
        self.check_state(x)?;
        match &self.spec.family {
            Family::NonlinearBoundary { q, .. } => {
                Ok(self.boundary_energy_inner(&x.components[0], *q))
            }
            _ => Err(Error::Problem(format!(
                "{} has no boundary energy term",
                self.spec.family.name()
            ))),
        }
    }

    fn boundary_energy_inner(&self, u: &GridFunction, q: f64) -> f64 {
        compensated_sum(
            boundary_weights(&self.spec.grid)
                .into_iter()
                .map(|(i, bw)| bw * u.values[i].abs().powf(q) / q),
        )
    }

    /// Mass values, one per constrained component; empty in fixed-omega modes.
    pub fn constraint_value(&self, x: &State) -> Result<Vec<f64>> {
        self.check_state(x)?;
        match &self.spec.family {
            Family::SchrodingerDual { mode: ScalarMode::FixedMass, .. } => {
                let v = &x.components[0];
                Ok(vec![integrate_map(v, |t| {
                    let fv = dual_f(t);
                    fv * fv
                })])
            }
            Family::GrossPitaevskii { mode: VectorMode::FixedMass, .. } => Ok(x
                .components
                .iter()
                .map(|u| integrate_map(u, |t| t * t))
                .collect()),
            _ => Ok(Vec::new()),
        }
    }

    fn check_euclid_regime(&self, u: &GridFunction) -> Result<()> {
        let g = gradient_cells(u);
        let worst = g.magnitude.values.iter().cloned().fold(0.0, f64::max);
        if worst > self.cap {
            return Err(Error::Regime(format!(
                "cell gradient {worst:.6} exceeds the concavity cap {:.6}",
                self.cap
            )));
        }
        Ok(())
    }
}

/// Sum of vol_c * phi(m_c) over cells, m the cell gradient magnitude.
fn density_energy<F: Fn(f64) -> f64>(u: &GridFunction, phi: F) -> f64 {
    let g = gradient_cells(u);
    let vols = u.grid.cell_volumes();
    compensated_sum(
        g.magnitude
            .values
            .iter()
            .zip(vols.iter())
            .map(|(m, v)| v * phi(*m)),
    )
}

/// Raw gradient of a density energy, psi(m) = Phi'(m)/m supplied per family.
fn density_gradient<F: Fn(f64) -> f64>(u: &GridFunction, psi: F) -> Vec<f64> {
    let g = gradient_cells(u);
    let coeff: Vec<f64> = g.magnitude.values.iter().map(|&m| psi(m)).collect();
    weighted_form_gradient(u, &coeff)
}

/// Primitive of the truncated source sign(t) g(min(|t|, m_cap)).
fn truncated_primitive(g: &ScalarFn, m_cap: f64, t: f64) -> f64 {
    let a = t.abs();
    if a <= m_cap {
        g.source_primitive(t)
    } else {
        g.source_primitive(m_cap) + g.source(m_cap) * (a - m_cap)
    }
}

fn truncated_source(g: &ScalarFn, m_cap: f64, t: f64) -> f64 {
    g.source(t.signum() * t.abs().min(m_cap))
}

/// Boundary quadrature: (node index, surface weight) pairs.
/// Intervals carry the counting measure on the two endpoints; rectangles the
/// arc-length trapezoid; radial grids the outer sphere area.
pub fn boundary_weights(grid: &Grid) -> Vec<(usize, f64)> {
    match grid.domain.kind {
        DomainKind::Interval { .. } => vec![(0, 1.0), (grid.n - 1, 1.0)],
        DomainKind::Radial { dim, radius } => vec![(
            grid.n - 1,
            sphere_area_constant(dim) * radius.powi(dim as i32 - 1),
        )],
        DomainKind::Rectangle { .. } => {
            let n = grid.n;
            let hx = grid.h();
            let hy = grid.hy();
            let mut out = Vec::new();
            for idx in 0..grid.node_count() {
                if !grid.is_boundary(idx) {
                    continue;
                }
                let ix = idx / n;
                let iy = idx % n;
                let on_x_edge = ix == 0 || ix == n - 1;
                let on_y_edge = iy == 0 || iy == n - 1;
                let w = if on_x_edge && on_y_edge {
                    0.5 * (hx + hy)
                } else if on_x_edge {
                    // vertical edge: arc runs along y
                    hy
                } else {
                    hx
                };
                out.push((idx, w));
            }
            out
        }
    }
}

/// Convenience wrappers matching the operation-level contracts.
pub fn energy(spec: &ProblemSpec, x: &State) -> Result<f64> {
    Problem::new(spec.clone())?.energy(x)
}

pub fn euler_lagrange(spec: &ProblemSpec, x: &State) -> Result<State> {
    Problem::new(spec.clone())?.euler_lagrange(x)
}

pub fn boundary_energy(spec: &ProblemSpec, x: &State) -> Result<f64> {
    Problem::new(spec.clone())?.boundary_energy(x)
}

pub fn constraint_value(spec: &ProblemSpec, x: &State) -> Result<Vec<f64>> {
    Problem::new(spec.clone())?.constraint_value(x)
}
