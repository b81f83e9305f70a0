//! Grids, quadrature, and the discrete differential operators every other
//! module builds on: nodal grids on intervals, squares, and radial domains,
//! trapezoidal-type quadrature, cell-midpoint gradients, Dirichlet inverse
//! Laplacian, and the nonlocal Gagliardo quadratic form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, conjugate_gradient, DenseChol, DenseSym, Tridiag};

/// Boundary treatment for a domain. Radial domains are always zero at the
/// outer radius; the center behaves as a reflective (natural) node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    DirichletZero,
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    Interval { a: f64, b: f64 },
    Rectangle { ax: f64, bx: f64, ay: f64, by: f64 },
    Radial { dim: u32, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    #[serde(flatten)]
    pub kind: DomainKind,
    #[serde(default = "default_boundary")]
    pub boundary: BoundaryKind,
}

fn default_boundary() -> BoundaryKind {
    BoundaryKind::DirichletZero
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Self {
        Self {
            kind: DomainKind::Interval { a, b },
            boundary: BoundaryKind::DirichletZero,
        }
    }

    pub fn interval_natural(a: f64, b: f64) -> Self {
        Self {
            kind: DomainKind::Interval { a, b },
            boundary: BoundaryKind::Natural,
        }
    }

    pub fn rectangle(ax: f64, bx: f64, ay: f64, by: f64) -> Self {
        Self {
            kind: DomainKind::Rectangle { ax, bx, ay, by },
            boundary: BoundaryKind::DirichletZero,
        }
    }

    pub fn radial(dim: u32, radius: f64) -> Self {
        Self {
            kind: DomainKind::Radial { dim, radius },
            boundary: BoundaryKind::DirichletZero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DomainKind::Interval { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(Error::Domain(format!("interval needs a < b, got [{a}, {b}]")));
                }
            }
            DomainKind::Rectangle { ax, bx, ay, by } => {
                if !(ax < bx && ay < by) || ![ax, bx, ay, by].iter().all(|v| v.is_finite()) {
                    return Err(Error::Domain("rectangle needs ax < bx and ay < by".into()));
                }
            }
            DomainKind::Radial { dim, radius } => {
                if dim < 1 {
                    return Err(Error::Domain("radial dimension must be >= 1".into()));
                }
                if !(radius.is_finite() && radius > 0.0) {
                    return Err(Error::Domain("radial truncation radius must be positive".into()));
                }
                if self.boundary != BoundaryKind::DirichletZero {
                    return Err(Error::Domain(
                        "radial domains are zero at the truncation radius".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Measure of the domain (radial: the ball of the truncation radius).
    pub fn measure(&self) -> f64 {
        match self.kind {
            DomainKind::Interval { a, b } => b - a,
            DomainKind::Rectangle { ax, bx, ay, by } => (bx - ax) * (by - ay),
            DomainKind::Radial { dim, radius } => {
                sphere_area_constant(dim) * radius.powi(dim as i32) / dim as f64
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self.kind {
            DomainKind::Interval { a, b } => b - a,
            DomainKind::Rectangle { ax, bx, ay, by } => ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt(),
            DomainKind::Radial { radius, .. } => 2.0 * radius,
        }
    }
}

/// Surface area of the unit sphere in `dim` dimensions, 2 pi^{d/2}/Gamma(d/2).
pub fn sphere_area_constant(dim: u32) -> f64 {
    let d = dim as f64;
    2.0 * std::f64::consts::PI.powf(d / 2.0) / gamma_half_integer(dim)
}

/// Gamma(d/2) for integer d >= 1.
fn gamma_half_integer(d: u32) -> f64 {
    if d % 2 == 0 {
        // Gamma(k) = (k-1)!
        let k = d / 2;
        (1..k).map(|i| i as f64).product::<f64>().max(1.0)
    } else {
        // Gamma(1/2 + k) = sqrt(pi) (2k)! / (4^k k!)
        let k = (d - 1) / 2;
        let mut v = std::f64::consts::PI.sqrt();
        for i in 1..=k {
            v *= i as f64 - 0.5;
        }
        v
    }
}

/// Uniform nodal grid over a domain. One `n` is the per-axis node count;
/// nodes, quadrature weights, and cell volumes are all reproducible from
/// `(domain, n)` alone.
#[derive(Debug, Clone)]
pub struct Grid {
    pub domain: Domain,
    pub n: usize,
    quad: Vec<f64>,
    cell_vol: Vec<f64>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.domain == other.domain && self.n == other.n
    }
}

/// Grids serialize as `(domain, n)`; the derived arrays are rebuilt on read,
/// so a round trip is bit-exact by construction.
#[derive(Serialize, Deserialize)]
struct GridWire {
    #[serde(flatten)]
    domain: Domain,
    n: usize,
}

impl Serialize for Grid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GridWire {
            domain: self.domain,
            n: self.n,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = GridWire::deserialize(d)?;
        Grid::make(wire.domain, wire.n).map_err(serde::de::Error::custom)
    }
}

pub fn make_grid(domain: Domain, n: usize) -> Result<Grid> {
    Grid::make(domain, n)
}

impl Grid {
    pub fn make(domain: Domain, n: usize) -> Result<Grid> {
        domain.validate()?;
        if n < 8 {
            return Err(Error::Grid(format!("grid needs at least 8 nodes per axis, got {n}")));
        }
        let mut grid = Grid {
            domain,
            n,
            quad: Vec::new(),
            cell_vol: Vec::new(),
        };
        grid.quad = grid.compute_quad_weights();
        grid.cell_vol = grid.compute_cell_volumes();
        Ok(grid)
    }

    /// Spacing along the x (or radial) axis.
    pub fn h(&self) -> f64 {
        match self.domain.kind {
            DomainKind::Interval { a, b } => (b - a) / (self.n - 1) as f64,
            DomainKind::Rectangle { ax, bx, .. } => (bx - ax) / (self.n - 1) as f64,
            DomainKind::Radial { radius, .. } => radius / (self.n - 1) as f64,
        }
    }

    pub fn hy(&self) -> f64 {
        match self.domain.kind {
            DomainKind::Rectangle { ay, by, .. } => (by - ay) / (self.n - 1) as f64,
            _ => self.h(),
        }
    }

    pub fn is_1d(&self) -> bool {
        !matches!(self.domain.kind, DomainKind::Rectangle { .. })
    }

    pub fn node_count(&self) -> usize {
        match self.domain.kind {
            DomainKind::Rectangle { .. } => self.n * self.n,
            _ => self.n,
        }
    }

    pub fn cell_count(&self) -> usize {
        match self.domain.kind {
            DomainKind::Rectangle { .. } => (self.n - 1) * (self.n - 1),
            _ => self.n - 1,
        }
    }

    /// Coordinates of node `idx`; y is 0 for one-dimensional grids.
    pub fn node_coord(&self, idx: usize) -> (f64, f64) {
        let nf = (self.n - 1) as f64;
        match self.domain.kind {
            DomainKind::Interval { a, b } => (a + idx as f64 * (b - a) / nf, 0.0),
            DomainKind::Radial { radius, .. } => (idx as f64 * radius / nf, 0.0),
            DomainKind::Rectangle { ax, bx, ay, by } => {
                let ix = idx / self.n;
                let iy = idx % self.n;
                (
                    ax + ix as f64 * (bx - ax) / nf,
                    ay + iy as f64 * (by - ay) / nf,
                )
            }
        }
    }

    /// Coordinate fed to scalar potentials V: the raw coordinate on an
    /// interval, the radius on radial grids, the distance from the domain
    /// center on rectangles.
    pub fn potential_coord(&self, idx: usize) -> f64 {
        match self.domain.kind {
            DomainKind::Interval { .. } => self.node_coord(idx).0,
            DomainKind::Radial { .. } => self.node_coord(idx).0,
            DomainKind::Rectangle { ax, bx, ay, by } => {
                let (x, y) = self.node_coord(idx);
                let cx = 0.5 * (ax + bx);
                let cy = 0.5 * (ay + by);
                ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()
            }
        }
    }

    /// True when the node value is pinned by a zero boundary condition.
    pub fn is_constrained(&self, idx: usize) -> bool {
        match self.domain.kind {
            DomainKind::Interval { .. } => {
                self.domain.boundary == BoundaryKind::DirichletZero
                    && (idx == 0 || idx == self.n - 1)
            }
            DomainKind::Radial { .. } => idx == self.n - 1,
            DomainKind::Rectangle { .. } => {
                let ix = idx / self.n;
                let iy = idx % self.n;
                self.domain.boundary == BoundaryKind::DirichletZero
                    && (ix == 0 || iy == 0 || ix == self.n - 1 || iy == self.n - 1)
            }
        }
    }

    /// True on the topological boundary regardless of boundary kind.
    /// The radial center r = 0 is an interior node.
    pub fn is_boundary(&self, idx: usize) -> bool {
        match self.domain.kind {
            DomainKind::Interval { .. } => idx == 0 || idx == self.n - 1,
            DomainKind::Radial { .. } => idx == self.n - 1,
            DomainKind::Rectangle { .. } => {
                let ix = idx / self.n;
                let iy = idx % self.n;
                ix == 0 || iy == 0 || ix == self.n - 1 || iy == self.n - 1
            }
        }
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| !self.is_boundary(i)).collect()
    }

    /// Nodal quadrature weights: exact integrals of the nodal hat functions
    /// against the domain measure. On intervals and rectangles this is the
    /// trapezoidal rule; on radial grids the measure is c_N r^{N-1} dr.
    pub fn quad_weights(&self) -> &[f64] {
        &self.quad
    }

    fn compute_quad_weights(&self) -> Vec<f64> {
        match self.domain.kind {
            DomainKind::Interval { .. } => {
                let h = self.h();
                let mut w = vec![h; self.n];
                w[0] = 0.5 * h;
                w[self.n - 1] = 0.5 * h;
                w
            }
            DomainKind::Rectangle { .. } => {
                let hx = self.h();
                let hy = self.hy();
                let wx: Vec<f64> = (0..self.n)
                    .map(|i| if i == 0 || i == self.n - 1 { 0.5 * hx } else { hx })
                    .collect();
                let wy: Vec<f64> = (0..self.n)
                    .map(|i| if i == 0 || i == self.n - 1 { 0.5 * hy } else { hy })
                    .collect();
                let mut w = vec![0.0; self.n * self.n];
                for ix in 0..self.n {
                    for iy in 0..self.n {
                        w[ix * self.n + iy] = wx[ix] * wy[iy];
                    }
                }
                w
            }
            DomainKind::Radial { dim, .. } => {
                let c = sphere_area_constant(dim);
                let h = self.h();
                let nn = dim as i32;
                // integral of r^{n-1} * (alpha r + beta) over [r0, r1]
                let seg = |r0: f64, r1: f64, alpha: f64, beta: f64| -> f64 {
                    let np1 = (nn + 1) as f64;
                    let nf = nn as f64;
                    alpha * (r1.powi(nn + 1) - r0.powi(nn + 1)) / np1
                        + beta * (r1.powi(nn) - r0.powi(nn)) / nf
                };
                let mut w = vec![0.0; self.n];
                for i in 0..self.n {
                    let r = self.node_coord(i).0;
                    let mut v = 0.0;
                    if i > 0 {
                        let r0 = self.node_coord(i - 1).0;
                        // rising hat: (r - r0)/h
                        v += seg(r0, r, 1.0 / h, -r0 / h);
                    }
                    if i + 1 < self.n {
                        let r1 = self.node_coord(i + 1).0;
                        // falling hat: (r1 - r)/h
                        v += seg(r, r1, -1.0 / h, r1 / h);
                    }
                    w[i] = c * v;
                }
                w
            }
        }
    }

    /// Volume assigned to each gradient cell.
    pub fn cell_volumes(&self) -> &[f64] {
        &self.cell_vol
    }

    fn compute_cell_volumes(&self) -> Vec<f64> {
        match self.domain.kind {
            DomainKind::Interval { .. } => vec![self.h(); self.n - 1],
            DomainKind::Rectangle { .. } => vec![self.h() * self.hy(); (self.n - 1) * (self.n - 1)],
            DomainKind::Radial { dim, .. } => {
                let c = sphere_area_constant(dim);
                let nn = dim as i32;
                (0..self.n - 1)
                    .map(|i| {
                        let r0 = self.node_coord(i).0;
                        let r1 = self.node_coord(i + 1).0;
                        c * (r1.powi(nn) - r0.powi(nn)) / nn as f64
                    })
                    .collect()
            }
        }
    }

    /// Node indices of the corners of cell `c` (2 in 1D, 4 on rectangles).
    pub fn cell_nodes(&self, c: usize) -> Vec<usize> {
        match self.domain.kind {
            DomainKind::Rectangle { .. } => {
                let m = self.n - 1;
                let cx = c / m;
                let cy = c % m;
                vec![
                    cx * self.n + cy,
                    cx * self.n + cy + 1,
                    (cx + 1) * self.n + cy,
                    (cx + 1) * self.n + cy + 1,
                ]
            }
            _ => vec![c, c + 1],
        }
    }
}

/// Nodal scalar field over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Grid(format!(
                "value vector has length {}, grid has {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.node_count();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    /// Build from a coordinate function; respects zero boundaries.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: Grid, f: F) -> Self {
        let mut values = Vec::with_capacity(grid.node_count());
        for i in 0..grid.node_count() {
            let (x, y) = grid.node_coord(i);
            if grid.is_constrained(i) {
                values.push(0.0);
            } else {
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    /// Build from a coordinate function without zeroing the boundary.
    pub fn from_fn_unmasked<F: Fn(f64, f64) -> f64>(grid: Grid, f: F) -> Self {
        let values = (0..grid.node_count())
            .map(|i| {
                let (x, y) = grid.node_coord(i);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    pub fn sup_norm(&self) -> f64 {
        crate::linalg::sup_norm(&self.values)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= c;
        }
        out
    }
}

/// Per-cell scalar field (gradient magnitudes, cell energies, ...).
#[derive(Debug, Clone)]
pub struct CellField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

/// Cell-midpoint gradient of a nodal field: per-cell components and magnitude.
#[derive(Debug, Clone)]
pub struct CellGradient {
    pub components: Vec<CellField>,
    pub magnitude: CellField,
}

/// Forward differences to cell midpoints. Second-order accurate at the
/// midpoints; no ghost values are needed because every cell has all of its
/// corner nodes stored (zero boundaries are stored explicitly).
pub fn gradient_cells(u: &GridFunction) -> CellGradient {
    let grid = &u.grid;
    match grid.domain.kind {
        DomainKind::Rectangle { .. } => {
            let m = grid.n - 1;
            let hx = grid.h();
            let hy = grid.hy();
            let mut gx = vec![0.0; m * m];
            let mut gy = vec![0.0; m * m];
            let mut mag = vec![0.0; m * m];
            for c in 0..m * m {
                let nodes = grid.cell_nodes(c);
                let (u00, u01, u10, u11) = (
                    u.values[nodes[0]],
                    u.values[nodes[1]],
                    u.values[nodes[2]],
                    u.values[nodes[3]],
                );
                let dx = ((u10 + u11) - (u00 + u01)) / (2.0 * hx);
                let dy = ((u01 + u11) - (u00 + u10)) / (2.0 * hy);
                gx[c] = dx;
                gy[c] = dy;
                mag[c] = dx.hypot(dy);
            }
            CellGradient {
                components: vec![
                    CellField { grid: grid.clone(), values: gx },
                    CellField { grid: grid.clone(), values: gy },
                ],
                magnitude: CellField { grid: grid.clone(), values: mag },
            }
        }
        _ => {
            let h = grid.h();
            let m = grid.n - 1;
            let mut g = vec![0.0; m];
            for c in 0..m {
                g[c] = (u.values[c + 1] - u.values[c]) / h;
            }
            let mag = g.iter().map(|v| v.abs()).collect();
            CellGradient {
                components: vec![CellField { grid: grid.clone(), values: g }],
                magnitude: CellField { grid: grid.clone(), values: mag },
            }
        }
    }
}

/// Quadrature of `u` (optionally against a nodal weight field) over the
/// domain measure. Linear in `u` by construction; summed with compensation
/// so the result does not depend on accumulation order at the ulp level.
pub fn integrate(u: &GridFunction, weight: Option<&GridFunction>) -> f64 {
    let w = u.grid.quad_weights();
    match weight {
        None => compensated_sum(u.values.iter().zip(w.iter()).map(|(v, q)| v * q)),
        Some(g) => {
            assert_eq!(g.grid, u.grid, "weight field lives on a different grid");
            compensated_sum(
                u.values
                    .iter()
                    .zip(g.values.iter())
                    .zip(w.iter())
                    .map(|((v, m), q)| v * m * q),
            )
        }
    }
}

/// Quadrature of a nodal function applied to `u`.
pub fn integrate_map<F: Fn(f64) -> f64>(u: &GridFunction, f: F) -> f64 {
    compensated_sum(
        u.grid
            .quad_weights()
            .iter()
            .zip(u.values.iter())
            .map(|(q, v)| q * f(*v)),
    )
}

/// The variational stiffness and lumped mass pair for a grid: S from the
/// cell-gradient Dirichlet form, W the nodal quadrature weights. The discrete
/// negative Laplacian is W^{-1} S restricted to free nodes.
pub struct StiffnessParts {
    pub free: Vec<usize>,
    pub tri: Option<Tridiag>,
}

/// Assemble the 1D (interval or radial) stiffness on free nodes.
fn stiffness_1d(grid: &Grid, include_constrained: bool) -> (Vec<usize>, Tridiag) {
    let h = grid.h();
    let vols = grid.cell_volumes();
    let free: Vec<usize> = (0..grid.node_count())
        .filter(|&i| include_constrained || !grid.is_constrained(i))
        .collect();
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
        let (i, j) = (c, c + 1);
        if let Some(pi) = pos[i] {
            diag[pi] += k;
        }
        if let Some(pj) = pos[j] {
            diag[pj] += k;
        }
        if let (Some(pi), Some(pj)) = (pos[i], pos[j]) {
            debug_assert_eq!(pj, pi + 1);
            off[pi] -= k;
        }
    }
    (free, Tridiag { diag, off })
}

/// Apply the variational negative Laplacian (scaled by quadrature weights,
/// i.e. the raw energy gradient of the Dirichlet form) to nodal values.
/// Returns dE/du_i for E = 1/2 * sum_cells vol |grad u|^2.
pub fn dirichlet_form_gradient(u: &GridFunction) -> Vec<f64> {
    let grid = &u.grid;
    let vols = grid.cell_volumes();
    let mut out = vec![0.0; grid.node_count()];
    match grid.domain.kind {
        DomainKind::Rectangle { .. } => {
            let hx = grid.h();
            let hy = grid.hy();
            let m = grid.n - 1;
            for c in 0..m * m {
                let nodes = grid.cell_nodes(c);
                let (u00, u01, u10, u11) = (
                    u.values[nodes[0]],
                    u.values[nodes[1]],
                    u.values[nodes[2]],
                    u.values[nodes[3]],
                );
                let dx = ((u10 + u11) - (u00 + u01)) / (2.0 * hx);
                let dy = ((u01 + u11) - (u00 + u10)) / (2.0 * hy);
                let vol = vols[c];
                let ax = vol * dx / (2.0 * hx);
                let ay = vol * dy / (2.0 * hy);
                out[nodes[0]] += -ax - ay;
                out[nodes[1]] += -ax + ay;
                out[nodes[2]] += ax - ay;
                out[nodes[3]] += ax + ay;
            }
        }
        _ => {
            let h = grid.h();
            for c in 0..grid.n - 1 {
                let k = vols[c] * (u.values[c + 1] - u.values[c]) / (h * h);
                out[c] -= k;
                out[c + 1] += k;
            }
        }
    }
    out
}

/// Raw energy gradient of E = sum_cells vol * Phi(|grad u|) where the caller
/// supplies the per-cell coefficient psi_c = Phi'(m_c) / m_c. Reduces to
/// `dirichlet_form_gradient` when psi = 1. This is the common chain-rule
/// step for every quasilinear gradient energy.
pub fn weighted_form_gradient(u: &GridFunction, psi: &[f64]) -> Vec<f64> {
    let grid = &u.grid;
    let vols = grid.cell_volumes();
    assert_eq!(psi.len(), grid.cell_count(), "one coefficient per cell");
    let mut out = vec![0.0; grid.node_count()];
    match grid.domain.kind {
        DomainKind::Rectangle { .. } => {
            let hx = grid.h();
            let hy = grid.hy();
            let m = grid.n - 1;
            for c in 0..m * m {
                let nodes = grid.cell_nodes(c);
                let (u00, u01, u10, u11) = (
                    u.values[nodes[0]],
                    u.values[nodes[1]],
                    u.values[nodes[2]],
                    u.values[nodes[3]],
                );
                let dx = ((u10 + u11) - (u00 + u01)) / (2.0 * hx);
                let dy = ((u01 + u11) - (u00 + u10)) / (2.0 * hy);
                let s = vols[c] * psi[c];
                let ax = s * dx / (2.0 * hx);
                let ay = s * dy / (2.0 * hy);
                out[nodes[0]] += -ax - ay;
                out[nodes[1]] += -ax + ay;
                out[nodes[2]] += ax - ay;
                out[nodes[3]] += ax + ay;
            }
        }
        _ => {
            let h = grid.h();
            for c in 0..grid.n - 1 {
                let k = vols[c] * psi[c] * (u.values[c + 1] - u.values[c]) / (h * h);
                out[c] -= k;
                out[c + 1] += k;
            }
        }
    }
    out
}

/// Solve -Lap u = f with zero boundary values; returns the nodal solution
/// with zeros on the constrained boundary. This is the operator K used by
/// the dual formulations.
pub fn poisson_solve(f: &GridFunction) -> Result<GridFunction> {
    let grid = &f.grid;
    if grid.domain.boundary != BoundaryKind::DirichletZero {
        return Err(Error::Grid("poisson_solve needs a dirichlet-zero grid".into()));
    }
    let w = grid.quad_weights();
    match grid.domain.kind {
        DomainKind::Rectangle { .. } => {
            let free: Vec<usize> = (0..grid.node_count())
                .filter(|&i| !grid.is_constrained(i))
                .collect();
            let pos = {
                let mut p = vec![usize::MAX; grid.node_count()];
                for (k, &i) in free.iter().enumerate() {
                    p[i] = k;
                }
                p
            };
            let hx = grid.h();
            let hy = grid.hy();
            let n = grid.n;
            let vol = hx * hy;
            let apply = |x: &[f64]| -> Vec<f64> {
                // 5-point FD Laplacian times cell volume on free (interior) nodes
                let mut y = vec![0.0; x.len()];
                for (k, &idx) in free.iter().enumerate() {
                    let ix = idx / n;
                    let iy = idx % n;
                    let get = |jx: usize, jy: usize| -> f64 {
                        let j = jx * n + jy;
                        let pj = pos[j];
                        if pj == usize::MAX {
                            0.0
                        } else {
                            x[pj]
                        }
                    };
                    let c = x[k];
                    let lap = (2.0 * c - get(ix - 1, iy) - get(ix + 1, iy)) / (hx * hx)
                        + (2.0 * c - get(ix, iy - 1) - get(ix, iy + 1)) / (hy * hy);
                    y[k] = vol * lap;
                }
                y
            };
            let rhs: Vec<f64> = free.iter().map(|&i| vol * f.values[i]).collect();
            let sol = conjugate_gradient(apply, &rhs, None, 1e-12, 20_000)?;
            let mut out = GridFunction::zeros(grid.clone());
            for (k, &i) in free.iter().enumerate() {
                out.values[i] = sol[k];
            }
            Ok(out)
        }
        _ => {
            let (free, tri) = stiffness_1d(grid, false);
            let rhs: Vec<f64> = free.iter().map(|&i| w[i] * f.values[i]).collect();
            let sol = tri.solve(&rhs)?;
            let mut out = GridFunction::zeros(grid.clone());
            for (k, &i) in free.iter().enumerate() {
                out.values[i] = sol[k];
            }
            Ok(out)
        }
    }
}

/// Factorized (stiffness + mass) operator used as a smoothing preconditioner
/// by the descent solvers: P = (S + W)^{-1} on free nodes.
pub enum Preconditioner {
    Tri { free: Vec<usize>, tri: Tridiag },
    Rect { grid: Grid },
    /// Exact inverse of a dense SPD nodal form on the free nodes, for
    /// operators whose coupling is not local.
    Dense { free: Vec<usize>, chol: DenseChol },
    Identity,
}

impl Preconditioner {
    pub fn smoothing(grid: &Grid) -> Self {
        match grid.domain.kind {
            DomainKind::Rectangle { .. } => Preconditioner::Rect { grid: grid.clone() },
            _ => {
                let (free, mut tri) = stiffness_1d(grid, false);
                let w = grid.quad_weights();
                for (k, &i) in free.iter().enumerate() {
                    tri.diag[k] += w[i];
                }
                Preconditioner::Tri { free, tri }
            }
        }
    }

    pub fn identity() -> Self {
        Preconditioner::Identity
    }

    /// Metric from a dense SPD nodal form: P = Q_ff^{-1} over free nodes.
    pub fn dense_form(grid: &Grid, q: &DenseSym) -> Result<Self> {
        let free: Vec<usize> =
            (0..grid.node_count()).filter(|&i| !grid.is_constrained(i)).collect();
        let m = free.len();
        let mut qf = DenseSym::zeros(m);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                qf.add(a, b, q.at(i, j));
            }
        }
        let chol = qf.cholesky()?;
        Ok(Preconditioner::Dense { free, chol })
    }

    /// Apply P to a raw energy-gradient vector (dE/du per node), returning a
    /// descent direction field on all nodes (zeros at constrained nodes).
    pub fn apply(&self, grid: &Grid, raw_grad: &[f64]) -> Vec<f64> {
        match self {
            Preconditioner::Identity => {
                // scale by inverse quadrature weights: plain L2 gradient
                let w = grid.quad_weights();
                let mut out = vec![0.0; raw_grad.len()];
                for i in 0..raw_grad.len() {
                    if !grid.is_constrained(i) {
                        out[i] = raw_grad[i] / w[i];
                    }
                }
                out
            }
            Preconditioner::Tri { free, tri } => {
                let rhs: Vec<f64> = free.iter().map(|&i| raw_grad[i]).collect();
                let sol = tri.solve(&rhs).expect("smoothing solve cannot fail: SPD");
                let mut out = vec![0.0; raw_grad.len()];
                for (k, &i) in free.iter().enumerate() {
                    out[i] = sol[k];
                }
                out
            }
            Preconditioner::Dense { free, chol } => {
                let rhs: Vec<f64> = free.iter().map(|&i| raw_grad[i]).collect();
                let sol = chol.solve(&rhs);
                let mut out = vec![0.0; raw_grad.len()];
                for (k, &i) in free.iter().enumerate() {
                    out[i] = sol[k];
                }
                out
            }
            Preconditioner::Rect { grid: g } => {
                let free: Vec<usize> = (0..g.node_count()).filter(|&i| !g.is_constrained(i)).collect();
                let pos = {
                    let mut p = vec![usize::MAX; g.node_count()];
                    for (k, &i) in free.iter().enumerate() {
                        p[i] = k;
                    }
                    p
                };
                let hx = g.h();
                let hy = g.hy();
                let n = g.n;
                let vol = hx * hy;
                let w = g.quad_weights();
                let apply = |x: &[f64]| -> Vec<f64> {
                    let mut y = vec![0.0; x.len()];
                    for (k, &idx) in free.iter().enumerate() {
                        let ix = idx / n;
                        let iy = idx % n;
                        let get = |jx: usize, jy: usize| -> f64 {
                            let pj = pos[jx * n + jy];
                            if pj == usize::MAX {
                                0.0
                            } else {
                                x[pj]
                            }
                        };
                        let c = x[k];
                        let lap = (2.0 * c - get(ix - 1, iy) - get(ix + 1, iy)) / (hx * hx)
                            + (2.0 * c - get(ix, iy - 1) - get(ix, iy + 1)) / (hy * hy);
                        y[k] = vol * lap + w[idx] * c;
                    }
                    y
                };
                let rhs: Vec<f64> = free.iter().map(|&i| raw_grad[i]).collect();
                let sol = conjugate_gradient(apply, &rhs, None, 1e-10, 10_000)
                    .expect("smoothing solve cannot fail: SPD");
                let mut out = vec![0.0; raw_grad.len()];
                for (k, &i) in free.iter().enumerate() {
                    out[i] = sol[k];
                }
                out
            }
        }
    }
}

/// Precomputed quadratic form of the Gagliardo double integral
/// 1/4 iint |u(x)-u(y)|^2 / |x-y|^{1+2s} dx dy
/// over cell midpoints of a 1D interval grid, with zero extension padded out
/// to 4(b-a) beyond each end. The diagonal pair is excluded; adjacent pairs
/// use the analytic local integral of |x-y|^{1-2s} against the linear model
/// of u between midpoints.
pub struct FractionalForm {
    pub grid: Grid,
    pub s: f64,
    q_node: DenseSym,
}

impl FractionalForm {
    pub fn new(grid: &Grid, s: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Grid(format!("fractional order s must be in (0,1), got {s}")));
        }
        if !matches!(grid.domain.kind, DomainKind::Interval { .. }) {
            return Err(Error::Grid("gagliardo form is implemented on interval grids".into()));
        }
        let n = grid.node_count();
        let h = grid.h();
        let n_in = n - 1; // inside cells
        let n_pad = 4 * n_in; // padding cells per side
        let sig = 1.0 - 2.0 * s;
        // analytic integral of |x-y|^(1-2s) over touching cells, divided by h^2
        let adj_w = (2f64.powf(3.0 - 2.0 * s) - 2.0) / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s))
            * h.powf(1.0 - 2.0 * s);
        let far_w = |k: usize| -> f64 { h.powf(1.0 - 2.0 * s) * (k as f64).powf(-(1.0 + 2.0 * s)) };
        let _ = sig;

        // midpoint quadratic form over inside cells
        let mut q_mid = DenseSym::zeros(n_in);
        for i in 0..n_in {
            for j in (i + 1)..n_in {
                let k = j - i;
                let w = if k == 1 { adj_w } else { far_w(k) };
                q_mid.add(i, i, w);
                q_mid.add(j, j, w);
                q_mid.add(i, j, -w);
                q_mid.add(j, i, -w);
            }
            // zero-extension tail: pairs with padding cells on both sides
            let mut d = 0.0;
            for k in 1..=n_pad {
                // left padding cell at offset i + k from inside cell i
                let off_left = i + k;
                d += if off_left == 1 { adj_w } else { far_w(off_left) };
                let off_right = (n_in - 1 - i) + k;
                d += if off_right == 1 { adj_w } else { far_w(off_right) };
            }
            q_mid.add(i, i, d);
        }

        // push through the node->midpoint averaging m_c = (u_c + u_{c+1})/2
        let mut q_node = DenseSym::zeros(n);
        for c1 in 0..n_in {
            for c2 in 0..n_in {
                let v = q_mid.at(c1, c2) * 0.25;
                if v != 0.0 {
                    q_node.add(c1, c2, v);
                    q_node.add(c1, c2 + 1, v);
                    q_node.add(c1 + 1, c2, v);
                    q_node.add(c1 + 1, c2 + 1, v);
                }
            }
        }
        Ok(Self {
            grid: grid.clone(),
            s,
            q_node,
        })
    }

    /// The quadratic energy 1/2 u^T Q u (equals the quartered double integral).
    pub fn energy(&self, u: &GridFunction) -> f64 {
        assert_eq!(u.grid, self.grid);
        let qu = self.q_node.apply(&u.values);
        0.5 * compensated_sum(u.values.iter().zip(qu.iter()).map(|(a, b)| a * b))
    }

    /// Raw energy gradient dE/du = Q u.
    pub fn gradient(&self, u: &GridFunction) -> Vec<f64> {
        assert_eq!(u.grid, self.grid);
        self.q_node.apply(&u.values)
    }

    pub fn matrix(&self) -> &DenseSym {
        &self.q_node
    }
}

/// Gagliardo seminorm energy of a single field (convenience wrapper that
/// builds the quadratic form on the fly).
pub fn gagliardo_energy(u: &GridFunction, s: f64) -> Result<f64> {
    let form = FractionalForm::new(&u.grid, s)?;
    Ok(form.energy(u))
}
