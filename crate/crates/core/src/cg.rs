//! Plain (unpreconditioned) conjugate gradient for symmetric positive-definite operators.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// A symmetric linear map applied without storing its matrix.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// Write `self * x` into `out`. Both slices have length [`LinearOperator::dim`].
    fn apply(&self, x: &[f64], out: &mut [f64]);

    fn exec(&self) -> Exec {
        Exec::Sequential
    }
}

/// When to stop iterating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StopConfig {
    /// Stop once `||rhs - A x|| / ||rhs||` drops below this.
    pub rel_tol: f64,
    /// Window length of the stall test.
    pub stall_window: usize,
    /// Minimum relative improvement of the windowed best residual.
    pub stall_factor: f64,
    /// Iteration cap; `None` means `20 * dim`.
    pub max_iters: Option<usize>,
}

impl Default for StopConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-5,
            stall_window: 10,
            stall_factor: 0.01,
            max_iters: None,
        }
    }
}

impl StopConfig {
    pub fn with_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }

    /// Tolerance-only stopping: a window longer than any run never fires.
    pub fn without_stall(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            stall_window: usize::MAX,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(Error::domain(format!(
                "rel_tol must be > 0, got {}",
                self.rel_tol
            )));
        }
        if self.stall_window == 0 {
            return Err(Error::domain("stall_window must be >= 1"));
        }
        if !(self.stall_factor > 0.0 && self.stall_factor < 1.0) {
            return Err(Error::domain(format!(
                "stall_factor must lie in (0, 1), got {}",
                self.stall_factor
            )));
        }
        if self.max_iters == Some(0) {
            return Err(Error::domain("max_iters must be >= 1"));
        }
        Ok(())
    }

    pub fn iteration_cap(&self, dim: usize) -> usize {
        self.max_iters.unwrap_or(20 * dim.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    Stalled,
    MaxIters,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Tolerance => "tolerance",
            StopReason::Stalled => "stalled",
            StopReason::MaxIters => "max_iters",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// True relative residual of the returned iterate.
    pub final_rel_residual: f64,
    pub stop_reason: StopReason,
    pub warm_started: bool,
}

/// Stall test on the residual history (index 0 is the initial residual).
///
/// Stops when the best residual of the latest `window` entries is not at least
/// `factor` (relatively) better than the best of the `window` entries before them.
fn stalled(history: &[f64], window: usize, factor: f64) -> bool {
    let n = history.len();
    if n / 2 < window {
        return false;
    }
    let best = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
    let now = best(&history[n - window..]);
    let before = best(&history[n - 2 * window..n - window]);
    now > (1.0 - factor) * before
}

/// Solve `op x = rhs` starting from `x0` (zero when absent).
pub fn solve<Op: LinearOperator + ?Sized>(
    op: &Op,
    rhs: &[f64],
    x0: Option<&[f64]>,
    stop: &StopConfig,
) -> Result<(Vec<f64>, SolveStats)> {
    stop.validate()?;
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::shape(format!(
            "rhs has {} entries, operator dimension is {n}",
            rhs.len()
        )));
    }
    if let Some(x0) = x0 {
        if x0.len() != n {
            return Err(Error::shape(format!(
                "initial guess has {} entries, operator dimension is {n}",
                x0.len()
            )));
        }
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("rhs contains non-finite values"));
    }
    let exec = op.exec();
    let warm_started = x0.is_some();
    let rhs_norm = par::norm2(exec, rhs);
    if rhs_norm == 0.0 {
        // the unique solution of an SPD system with zero rhs
        let stats = SolveStats {
            iterations: 0,
            final_rel_residual: 0.0,
            stop_reason: StopReason::Tolerance,
            warm_started,
        };
        return Ok((vec![0.0; n], stats));
    }
    let rhs_norm = rhs_norm.max(f64::EPSILON);

    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut ap = vec![0.0; n];
    let mut r = rhs.to_vec();
    if warm_started {
        op.apply(&x, &mut ap);
        par::axpy(exec, -1.0, &ap, &mut r);
    }

    let mut rs = par::dot(exec, &r, &r);
    let mut rel = rs.sqrt() / rhs_norm;
    if !rel.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            reason: "initial residual is not finite".into(),
        });
    }
    let mut history = vec![rel];
    let cap = stop.iteration_cap(n);
    let mut p = r.clone();
    let mut iterations = 0;

    let stop_reason = loop {
        if rel < stop.rel_tol {
            break StopReason::Tolerance;
        }
        if stalled(&history, stop.stall_window, stop.stall_factor) {
            break StopReason::Stalled;
        }
        if iterations >= cap {
            break StopReason::MaxIters;
        }
        iterations += 1;

        op.apply(&p, &mut ap);
        let curvature = par::dot(exec, &p, &ap);
        if !curvature.is_finite() {
            return Err(Error::Divergence {
                iteration: iterations,
                reason: "non-finite curvature".into(),
            });
        }
        if curvature <= 0.0 {
            return Err(Error::domain(format!(
                "operator is not positive definite (p^T A p = {curvature:e} at iteration {iterations})"
            )));
        }
        let step = rs / curvature;
        par::axpy(exec, step, &p, &mut x);
        par::axpy(exec, -step, &ap, &mut r);
        let rs_next = par::dot(exec, &r, &r);
        rel = rs_next.sqrt() / rhs_norm;
        if !rel.is_finite() {
            return Err(Error::Divergence {
                iteration: iterations,
                reason: "residual is not finite".into(),
            });
        }
        history.push(rel);
        par::xpby(exec, &r, rs_next / rs, &mut p);
        rs = rs_next;
    };

    // The recurrence drifts from the true residual; report the latter.
    let final_rel_residual = if iterations == 0 {
        rel
    } else {
        op.apply(&x, &mut ap);
        let mut true_r = rhs.to_vec();
        par::axpy(exec, -1.0, &ap, &mut true_r);
        par::norm2(exec, &true_r) / rhs_norm
    };

    Ok((
        x,
        SolveStats {
            iterations,
            final_rel_residual,
            stop_reason,
            warm_started,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dense {
        n: usize,
        a: Vec<f64>,
    }

    impl LinearOperator for Dense {
        fn dim(&self) -> usize {
            self.n
        }

        fn apply(&self, x: &[f64], out: &mut [f64]) {
            for (i, o) in out.iter_mut().enumerate() {
                *o = (0..self.n).map(|j| self.a[i * self.n + j] * x[j]).sum();
            }
        }
    }

    fn identity(n: usize) -> Dense {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        Dense { n, a }
    }

    #[test]
    fn identity_converges_in_one_step() {
        let b = vec![1.0, -2.0, 3.5];
        let (x, stats) = solve(&identity(3), &b, None, &StopConfig::default()).unwrap();
        assert_eq!(stats.iterations, 1);
        assert_eq!(stats.stop_reason, StopReason::Tolerance);
        assert!(!stats.warm_started);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-15);
        }
    }

    #[test]
    fn two_by_two_closed_form() {
        let op = Dense {
            n: 2,
            a: vec![4.0, 1.0, 1.0, 3.0],
        };
        let (x, stats) = solve(&op, &[1.0, 2.0], None, &StopConfig::with_tol(1e-14)).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
        assert!(stats.iterations <= 2);
    }

    #[test]
    fn exact_initial_guess_needs_no_iterations() {
        let op = Dense {
            n: 2,
            a: vec![4.0, 1.0, 1.0, 3.0],
        };
        let x0 = [1.0 / 11.0, 7.0 / 11.0];
        let (x, stats) = solve(&op, &[1.0, 2.0], Some(&x0), &StopConfig::default()).unwrap();
        assert_eq!(stats.iterations, 0);
        assert_eq!(stats.stop_reason, StopReason::Tolerance);
        assert!(stats.warm_started);
        assert_eq!(x, x0.to_vec());
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let (x, stats) = solve(&identity(4), &[0.0; 4], None, &StopConfig::default()).unwrap();
        assert_eq!(x, vec![0.0; 4]);
        assert_eq!(stats.iterations, 0);
        let (x, stats) = solve(
            &identity(4),
            &[0.0; 4],
            Some(&[1.0, 2.0, 3.0, 4.0]),
            &StopConfig::default(),
        )
        .unwrap();
        assert_eq!(x, vec![0.0; 4]);
        assert!(stats.warm_started);
    }

    #[test]
    fn iteration_cap_is_reported_not_raised() {
        let n = 30;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 2.0 + i as f64;
            if i + 1 < n {
                a[i * n + i + 1] = -1.0;
                a[(i + 1) * n + i] = -1.0;
            }
        }
        let op = Dense { n, a };
        let stop = StopConfig {
            max_iters: Some(3),
            ..StopConfig::with_tol(1e-14)
        };
        let (_, stats) = solve(&op, &vec![1.0; n], None, &stop).unwrap();
        assert_eq!(stats.iterations, 3);
        assert_eq!(stats.stop_reason, StopReason::MaxIters);
        assert!(stats.final_rel_residual > 1e-14);
    }

    #[test]
    fn stall_rule() {
        // flat history: no 1 % improvement across windows
        assert!(stalled(&[1.0; 20], 10, 0.01));
        assert!(!stalled(&[1.0; 19], 10, 0.01));
        let mut h = vec![1.0; 10];
        h.extend([0.98; 10]);
        assert!(!stalled(&h, 10, 0.01));
        let mut h = vec![1.0; 10];
        h.extend([0.995; 10]);
        assert!(stalled(&h, 10, 0.01));
        assert!(!stalled(&[1.0; 100], usize::MAX, 0.01));
    }

    #[test]
    fn rejects_bad_input() {
        let op = identity(2);
        assert!(matches!(
            solve(&op, &[1.0], None, &StopConfig::default()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            solve(&op, &[1.0, 1.0], Some(&[0.0]), &StopConfig::default()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            solve(&op, &[f64::NAN, 1.0], None, &StopConfig::default()),
            Err(Error::Domain(_))
        ));
        let bad = StopConfig {
            stall_factor: 1.0,
            ..StopConfig::default()
        };
        assert!(matches!(
            solve(&op, &[1.0, 1.0], None, &bad),
            Err(Error::Domain(_))
        ));
        let indefinite = Dense {
            n: 2,
            a: vec![1.0, 0.0, 0.0, -1.0],
        };
        assert!(solve(&indefinite, &[0.0, 1.0], None, &StopConfig::default()).is_err());
    }

    #[test]
    fn overflow_is_divergence() {
        let op = Dense {
            n: 1,
            a: vec![f64::INFINITY],
        };
        assert!(matches!(
            solve(&op, &[1.0], None, &StopConfig::default()),
            Err(Error::Divergence { .. })
        ));
    }
}
