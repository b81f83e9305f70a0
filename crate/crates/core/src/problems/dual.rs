//! The odd change of unknown f with f(0) = 0 and f'(t) = 1 / sqrt(1 + 2 f(t)^2)
//! that turns the quasilinear Schrodinger equation into a semilinear one.
//!
//! The inverse has a closed form,
//!   f^{-1}(y) = (y/2) sqrt(1 + 2y^2) + arsinh(sqrt(2) y) / (2 sqrt(2)),
//! so forward evaluation is a safeguarded Newton solve of f^{-1}(y) = t,
//! seeded from a precomputed monotone table. Residuals are driven to
//! 1e-13 * (1 + |t|), well inside the 1e-10 * (1 + |y|) round-trip contract.

use std::sync::OnceLock;

/// Closed-form inverse transform, odd in y.
pub fn dual_f_inv(y: f64) -> f64 {
    let a = y.abs();
    let v = 0.5 * a * (1.0 + 2.0 * a * a).sqrt() + (2f64.sqrt() * a).asinh() / (2.0 * 2f64.sqrt());
    v.copysign(y)
}

/// d/dy f^{-1}(y) = sqrt(1 + 2 y^2); even, never below 1.
pub fn dual_f_inv_prime(y: f64) -> f64 {
    (1.0 + 2.0 * y * y).sqrt()
}

const TABLE_LEN: usize = 10_000;
const TABLE_DY: f64 = 0.12;

/// t_k = f^{-1}(k * DY): monotone seed table for forward inversion.
fn seed_table() -> &'static Vec<f64> {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| (0..TABLE_LEN).map(|k| dual_f_inv(k as f64 * TABLE_DY)).collect())
}

/// Forward transform f(t): odd, increasing, f(t) ~ t near 0 and
/// f(t) ~ 2^{1/4} sqrt(t) as t -> +inf.
pub fn dual_f(t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let target = t.abs();
    let table = seed_table();

    // bracket and seed
    let (mut lo, mut hi, mut y);
    if target < *table.last().unwrap() {
        let idx = table.partition_point(|&tk| tk <= target).clamp(1, TABLE_LEN - 1);
        lo = (idx - 1) as f64 * TABLE_DY;
        hi = idx as f64 * TABLE_DY;
        let (t0, t1) = (table[idx - 1], table[idx]);
        y = lo + (hi - lo) * (target - t0) / (t1 - t0);
    } else {
        y = 2f64.powf(0.25) * target.sqrt();
        lo = 0.0;
        hi = y;
        while dual_f_inv(hi) < target {
            lo = hi;
            hi *= 2.0;
        }
        y = y.clamp(lo, hi);
    }

    // Newton with bisection safeguard; f^{-1} is smooth, increasing, convex
    let tol = 1e-13 * (1.0 + target);
    for _ in 0..100 {
        let r = dual_f_inv(y) - target;
        if r.abs() <= tol {
            break;
        }
        if r > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let step = r / dual_f_inv_prime(y);
        let mut next = y - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        y = next;
    }
    y.copysign(t)
}

/// f'(t) = 1 / sqrt(1 + 2 f(t)^2); even, in (0, 1].
pub fn dual_f_prime(t: f64) -> f64 {
    let y = dual_f(t);
    1.0 / (1.0 + 2.0 * y * y).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn inverse_at_one_matches_closed_form() {
        // (1/2) sqrt(3) + arsinh(sqrt 2) / (2 sqrt 2)
        let expect = 0.5 * 3f64.sqrt() + 2f64.sqrt().asinh() / (2.0 * 2f64.sqrt());
        assert_relative_eq!(dual_f_inv(1.0), expect, max_relative = 1e-15);
        assert_relative_eq!(dual_f_inv(1.0), 1.2712738985228156, max_relative = 1e-12);
        assert!((dual_f_inv(1.0) - 1.27128).abs() < 1e-5);
    }

    #[test]
    fn round_trip_both_ways() {
        for &t in &[1e-8, 1e-4, 0.3, 1.0, 7.0, 123.0, 1e6] {
            let y = dual_f(t);
            assert!((dual_f_inv(y) - t).abs() <= 1e-10 * (1.0 + t), "t={t}");
            assert!((dual_f(dual_f_inv(y)) - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
        // odd
        assert_eq!(dual_f(-2.0), -dual_f(2.0));
        assert_eq!(dual_f_inv(-2.0), -dual_f_inv(2.0));
    }

    #[test]
    fn asymptotics() {
        // f(t)/t -> 1 from below
        let r = dual_f(1e-4) / 1e-4;
        assert!(r <= 1.0 && r >= 1.0 - 1e-6, "f(t)/t = {r}");
        // f(t)/sqrt(t) -> 2^{1/4}
        let s = dual_f(1e6) / 1e3;
        assert!((s - 2f64.powf(0.25)).abs() <= 1e-3, "f(t)/sqrt(t) = {s}");
    }

    #[test]
    fn derivative_band() {
        // f(t)/2 <= t f'(t) ... the two-sided band (1/2) f(t) <= t / sqrt(1+2 f^2) <= f(t)
        for &t in &[0.01, 0.5, 1.0, 10.0, 1e4] {
            let y = dual_f(t);
            let mid = t / (1.0 + 2.0 * y * y).sqrt();
            assert!(0.5 * y <= mid + 1e-12 && mid <= y + 1e-12, "band fails at t={t}");
        }
    }

    #[test]
    fn prime_matches_difference_quotient() {
        for &t in &[0.1, 1.0, 5.0] {
            let eps = 1e-6;
            let fd = (dual_f(t + eps) - dual_f(t - eps)) / (2.0 * eps);
            assert_relative_eq!(dual_f_prime(t), fd, max_relative = 1e-7);
        }
    }
}
