//! Small dense/banded linear algebra helpers used by the grid operators and
//! solvers. Everything here is deliberately allocation-simple: system sizes
//! are desk-scale (n <= a few thousand).

use crate::error::{Error, Result};

/// Symmetric tridiagonal system solved by the Thomas algorithm.
/// `diag` has length n, `off` length n-1 (sub- and super-diagonal equal).
#[derive(Debug, Clone)]
pub struct Tridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiag {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                v += self.off[i] * x[i + 1];
            }
            y[i] = v;
        }
        y
    }

    /// Thomas solve; returns an error on a vanishing pivot.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        assert_eq!(rhs.len(), n);
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut piv = self.diag[0];
        if piv == 0.0 {
            return Err(Error::Solve("tridiagonal pivot is zero".into()));
        }
        if n > 1 {
            c[0] = self.off[0] / piv;
        }
        d[0] = rhs[0] / piv;
        for i in 1..n {
            piv = self.diag[i] - self.off[i - 1] * c[i - 1];
            if piv == 0.0 {
                return Err(Error::Solve("tridiagonal pivot is zero".into()));
            }
            if i + 1 < n {
                c[i] = self.off[i] / piv;
            }
            d[i] = (rhs[i] - self.off[i - 1] * d[i - 1]) / piv;
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] -= c[i] * next;
        }
        Ok(x)
    }
}

/// Dense symmetric positive definite matrix in row-major storage.
#[derive(Debug, Clone)]
pub struct DenseSym {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseSym {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            y[i] = acc;
        }
        y
    }

    /// In-place Cholesky factorization (lower triangle); fails if the matrix
    /// is not positive definite.
    pub fn cholesky(&self) -> Result<DenseChol> {
        let n = self.n;
        let mut l = self.data.clone();
        for j in 0..n {
            let mut d = l[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d <= 0.0 {
                return Err(Error::Solve(format!(
                    "dense Cholesky failed at pivot {j}: not positive definite"
                )));
            }
            let dj = d.sqrt();
            l[j * n + j] = dj;
            for i in (j + 1)..n {
                let mut s = l[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / dj;
            }
        }
        Ok(DenseChol { n, l })
    }
}

/// Cholesky factor of a `DenseSym`.
#[derive(Debug, Clone)]
pub struct DenseChol {
    n: usize,
    l: Vec<f64>,
}

impl DenseChol {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }
}

/// Conjugate gradient for an SPD operator given as a closure.
/// Converges to `tol` relative to the rhs norm; errors if `max_iters` hit.
pub fn conjugate_gradient<F>(
    apply: F,
    rhs: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = rhs.len();
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let ax = apply(&x);
    let mut r: Vec<f64> = rhs.iter().zip(ax.iter()).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    for _ in 0..max_iters {
        if rs.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        let ap = apply(&p);
        let alpha = rs / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rs.sqrt() <= tol * bnorm {
        Ok(x)
    } else {
        Err(Error::Solve(format!(
            "conjugate gradient stalled: residual {:.3e} after {max_iters} iterations",
            rs.sqrt() / bnorm
        )))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Neumaier-compensated sum: exact accumulation of the given terms, rounded
/// once at the end. Summation order stops mattering at this accuracy, which
/// keeps energy comparisons meaningful when true decrements are far below
/// one ulp of the total.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut s = 0.0_f64;
    let mut c = 0.0_f64;
    for t in terms {
        let x = s + t;
        c += if s.abs() >= t.abs() { (s - x) + t } else { (t - x) + s };
        s = x;
    }
    s + c
}

/// Symmetric banded matrix in lower storage: `bands[b][i] = A[i+b][i]` for
/// offsets b = 0..=kd. Factored by banded LDL^T without pivoting, so solves
/// require (near) positive definiteness and fail soft otherwise.
#[derive(Debug, Clone)]
pub struct SymBand {
    pub n: usize,
    pub kd: usize,
    pub bands: Vec<Vec<f64>>,
}

impl SymBand {
    pub fn zeros(n: usize, kd: usize) -> Self {
        let bands = (0..=kd).map(|b| vec![0.0; n.saturating_sub(b)]).collect();
        SymBand { n, kd, bands }
    }

    /// In-place banded LDL^T; returns None when a pivot is not strictly
    /// positive (matrix not positive definite to working precision).
    pub fn ldl(mut self) -> Option<SymBandFactor> {
        let (n, kd) = (self.n, self.kd);
        let mut d = vec![0.0; n];
        for j in 0..n {
            let lo = j.saturating_sub(kd);
            let mut dj = self.bands[0][j];
            for k in lo..j {
                let l = self.bands[j - k][k];
                dj -= l * l * d[k];
            }
            if !(dj > 0.0) || !dj.is_finite() {
                return None;
            }
            d[j] = dj;
            let hi = (j + kd + 1).min(n);
            for i in j + 1..hi {
                let mut v = self.bands[i - j][j];
                let lo2 = i.saturating_sub(kd).max(lo);
                for k in lo2..j {
                    v -= self.bands[i - k][k] * self.bands[j - k][k] * d[k];
                }
                self.bands[i - j][j] = v / dj;
            }
        }
        Some(SymBandFactor { n, kd, l: self.bands, d })
    }
}

/// LDL^T factors of a `SymBand`; `l` reuses the band layout with unit
/// diagonal implied.
#[derive(Debug, Clone)]
pub struct SymBandFactor {
    n: usize,
    kd: usize,
    l: Vec<Vec<f64>>,
    d: Vec<f64>,
}

impl SymBandFactor {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, kd) = (self.n, self.kd);
        assert_eq!(rhs.len(), n);
        let mut y = rhs.to_vec();
        for j in 0..n {
            let hi = (j + kd + 1).min(n);
            let yj = y[j];
            for i in j + 1..hi {
                y[i] -= self.l[i - j][j] * yj;
            }
        }
        for j in 0..n {
            y[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let hi = (j + kd + 1).min(n);
            let mut v = y[j];
            for i in j + 1..hi {
                v -= self.l[i - j][j] * y[i];
            }
            y[j] = v;
        }
        y
    }
}

#[inline]
pub fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Classic fixed-step RK4 for a first-order system y' = f(t, y).
pub fn rk4<F>(f: F, t0: f64, y0: &[f64], t1: f64, steps: usize) -> Vec<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let dim = y0.len();
    let h = (t1 - t0) / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = y0.to_vec();
    out.push(y.clone());
    let mut t = t0;
    for _ in 0..steps {
        let k1 = f(t, &y);
        let y2: Vec<f64> = (0..dim).map(|i| y[i] + 0.5 * h * k1[i]).collect();
        let k2 = f(t + 0.5 * h, &y2);
        let y3: Vec<f64> = (0..dim).map(|i| y[i] + 0.5 * h * k2[i]).collect();
        let k3 = f(t + 0.5 * h, &y3);
        let y4: Vec<f64> = (0..dim).map(|i| y[i] + h * k3[i]).collect();
        let k4 = f(t + h, &y4);
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;
        out.push(y.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tridiag_solve_roundtrip() {
        let m = Tridiag {
            diag: vec![2.0, 2.5, 3.0, 2.0],
            off: vec![-1.0, -0.5, -1.0],
        };
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let b = m.apply(&x);
        let y = m.solve(&b).unwrap();
        for (xi, yi) in x.iter().zip(y.iter()) {
            assert_relative_eq!(xi, yi, max_relative = 1e-12);
        }
    }

    #[test]
    fn cholesky_solve_roundtrip() {
        let n = 6;
        let mut m = DenseSym::zeros(n);
        for i in 0..n {
            m.add(i, i, 4.0);
            if i + 1 < n {
                m.add(i, i + 1, -1.0);
                m.add(i + 1, i, -1.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let b = m.apply(&x);
        let chol = m.cholesky().unwrap();
        let y = chol.solve(&b);
        for (xi, yi) in x.iter().zip(y.iter()) {
            assert_relative_eq!(xi, yi, max_relative = 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = DenseSym::zeros(2);
        m.add(0, 0, 1.0);
        m.add(1, 1, -1.0);
        assert!(m.cholesky().is_err());
    }

    #[test]
    fn cg_matches_direct() {
        let m = Tridiag {
            diag: vec![3.0; 20],
            off: vec![-1.0; 19],
        };
        let b: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).cos()).collect();
        let direct = m.solve(&b).unwrap();
        let cg = conjugate_gradient(|x| m.apply(x), &b, None, 1e-13, 1000).unwrap();
        for (a, c) in direct.iter().zip(cg.iter()) {
            assert_relative_eq!(a, c, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn rk4_exponential() {
        let out = rk4(|_, y| vec![y[0]], 0.0, &[1.0], 1.0, 200);
        let last = out.last().unwrap()[0];
        assert_relative_eq!(last, 1.0_f64.exp(), max_relative = 1e-9);
    }

    #[test]
    fn compensated_sum_recovers_cancelled_tail() {
        // 1 + 1e-16 * 10 == 1 termwise in f64; the compensated total keeps
        // the tail that plain summation drops.
        let mut terms = vec![1.0_f64];
        terms.extend(std::iter::repeat(1e-16).take(10));
        let plain: f64 = terms.iter().sum();
        assert_eq!(plain, 1.0);
        let comp = compensated_sum(terms.iter().copied());
        assert_relative_eq!(comp, 1.0 + 1e-15, max_relative = 1e-15);
    }

    #[test]
    fn band_solve_matches_tridiag_and_dense() {
        // bandwidth 1: identical to the Thomas solve
        let tri = Tridiag { diag: vec![4.0; 15], off: vec![-1.0; 14] };
        let mut sb = SymBand::zeros(15, 1);
        sb.bands[0] = vec![4.0; 15];
        sb.bands[1] = vec![-1.0; 14];
        let b: Vec<f64> = (0..15).map(|i| (0.7 * i as f64).sin()).collect();
        let ref_x = tri.solve(&b).unwrap();
        let x = sb.ldl().unwrap().solve(&b);
        for (a, c) in ref_x.iter().zip(x.iter()) {
            assert_relative_eq!(a, c, max_relative = 1e-12, epsilon = 1e-14);
        }

        // bandwidth 2: check against the dense Cholesky
        let n = 12;
        let mut sb2 = SymBand::zeros(n, 2);
        let mut dense = DenseSym::zeros(n);
        for i in 0..n {
            let d = 6.0 + (i as f64 * 0.4).cos();
            sb2.bands[0][i] = d;
            dense.add(i, i, d);
            if i + 1 < n {
                sb2.bands[1][i] = -1.5;
                dense.add(i, i + 1, -1.5);
                dense.add(i + 1, i, -1.5);
            }
            if i + 2 < n {
                sb2.bands[2][i] = 0.25;
                dense.add(i, i + 2, 0.25);
                dense.add(i + 2, i, 0.25);
            }
        }
        let b2: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let ref2 = dense.cholesky().unwrap().solve(&b2);
        let x2 = sb2.ldl().unwrap().solve(&b2);
        for (a, c) in ref2.iter().zip(x2.iter()) {
            assert_relative_eq!(a, c, max_relative = 1e-11, epsilon = 1e-13);
        }

        // indefinite input fails soft
        let mut bad = SymBand::zeros(3, 1);
        bad.bands[0] = vec![1.0, -2.0, 1.0];
        bad.bands[1] = vec![0.0, 0.0];
        assert!(bad.ldl().is_none());
    }
}
