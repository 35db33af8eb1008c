//! Differentiable depth integration.
//!
//! The forward pass minimises
//!
//! ```text
//! E(D) = sum (Dx D - gx)^2 + sum (Dy D - gy)^2 + alpha * sum conf * mask * (D - obs)^2
//! ```
//!
//! by conjugate gradient on the normal equations `A^T A d = A^T b`. The
//! backward passes never differentiate through the iterations: since
//! `d = (A^T A)^-1 A^T b`, a cotangent `u` on `d` pulls back through a single
//! adjoint solve `v = (A^T A)^-1 u` (the operator is symmetric), after which
//!
//! * the gradient-field cotangent is the first two blocks of `A v`, and
//! * the confidence cotangent is `v_i * alpha * mask_i * (obs_i - d_i)`.
//!
//! Both solves accept warm starts: the forward pass from a previous primal
//! solution, the backward pass from a previous adjoint solution.

use crate::cg::{self, SolveStats, StopConfig, StopReason};
use crate::error::{Error, Result};
use crate::grid::{ConfidenceMap, DepthMap, GradientField, SparseObservations};
use crate::operators::SystemConfig;
use crate::par::{self, Exec};

/// Default observation weight.
pub const DEFAULT_ALPHA: f64 = 5.0;

/// Residual above which hitting the iteration cap is an error rather than a warning.
pub const CONVERGENCE_FAILURE_RESIDUAL: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct DdiContext<'a> {
    pub alpha: f64,
    pub stop: StopConfig,
    /// Solution whose depth seeds the forward solve.
    pub previous: Option<&'a DdiSolution>,
    pub exec: Exec,
}

impl Default for DdiContext<'_> {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            stop: StopConfig::default(),
            previous: None,
            exec: Exec::default(),
        }
    }
}

impl<'a> DdiContext<'a> {
    pub fn with_tol(rel_tol: f64) -> Self {
        Self {
            stop: StopConfig::with_tol(rel_tol),
            ..Self::default()
        }
    }

    pub fn warm_from(self, previous: &'a DdiSolution) -> Self {
        Self {
            previous: Some(previous),
            ..self
        }
    }
}

/// Result of a forward solve plus everything the backward passes need.
#[derive(Debug, Clone)]
pub struct DdiSolution {
    depth: DepthMap,
    config: SystemConfig,
    observations: SparseObservations,
    stop: StopConfig,
    forward_stats: SolveStats,
    cached_primal: Vec<f64>,
    cached_adjoint: Option<Vec<f64>>,
    last_backward_stats: Option<SolveStats>,
}

/// Cotangents produced by one adjoint solve.
#[derive(Debug, Clone)]
pub struct DdiGrads {
    pub gradients: GradientField,
    /// Present only when the forward solve used a confidence map.
    pub confidence: Option<DepthMap>,
    pub stats: SolveStats,
}

impl DdiSolution {
    pub fn depth(&self) -> &DepthMap {
        &self.depth
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn forward_stats(&self) -> &SolveStats {
        &self.forward_stats
    }

    pub fn cached_primal(&self) -> &[f64] {
        &self.cached_primal
    }

    pub fn cached_adjoint(&self) -> Option<&[f64]> {
        self.cached_adjoint.as_deref()
    }

    pub fn set_cached_adjoint(&mut self, adjoint: Option<Vec<f64>>) {
        self.cached_adjoint = adjoint;
    }

    pub fn last_backward_stats(&self) -> Option<&SolveStats> {
        self.last_backward_stats.as_ref()
    }

    pub fn into_depth(self) -> DepthMap {
        self.depth
    }
}

fn check_convergence(stats: &SolveStats) -> Result<()> {
    if stats.stop_reason == StopReason::MaxIters
        && stats.final_rel_residual > CONVERGENCE_FAILURE_RESIDUAL
    {
        return Err(Error::Convergence {
            iterations: stats.iterations,
            residual: stats.final_rel_residual,
        });
    }
    Ok(())
}

/// Integrate `g` into a depth map anchored by `obs`.
pub fn ddi_forward(
    g: &GradientField,
    obs: &SparseObservations,
    conf: Option<&ConfidenceMap>,
    ctx: &DdiContext<'_>,
) -> Result<DdiSolution> {
    if g.height() != obs.height() || g.width() != obs.width() {
        return Err(Error::shape(format!(
            "gradient field is {}x{} but observations are {}x{}",
            g.height(),
            g.width(),
            obs.height(),
            obs.width()
        )));
    }
    if obs.count() == 0 {
        return Err(Error::SingularSystem);
    }
    let config =
        SystemConfig::new(obs.mask().clone(), ctx.alpha, conf.cloned())?.with_exec(ctx.exec);
    let rhs = config.build_rhs(g, obs)?;

    let warm = match ctx.previous {
        Some(prev) if prev.cached_primal.len() == rhs.len() => Some(prev.cached_primal.as_slice()),
        Some(_) => {
            return Err(Error::shape(
                "warm-start solution has a different grid size",
            ))
        }
        None => None,
    };
    let (x, forward_stats) = cg::solve(&config.normal_operator(), &rhs, warm, &ctx.stop)?;
    check_convergence(&forward_stats)?;

    let depth = DepthMap::new(g.height(), g.width(), x.clone())?;
    Ok(DdiSolution {
        depth,
        config,
        observations: obs.clone(),
        stop: ctx.stop,
        forward_stats,
        cached_primal: x,
        cached_adjoint: None,
        last_backward_stats: None,
    })
}

/// Solve independent problems, in parallel when `exec` allows.
pub fn ddi_forward_batch(
    problems: &[(GradientField, SparseObservations, Option<ConfidenceMap>)],
    ctx: &DdiContext<'_>,
    exec: Exec,
) -> Vec<Result<DdiSolution>> {
    par::map_items(exec, problems, |(g, obs, conf)| {
        ddi_forward(g, obs, conf.as_ref(), ctx)
    })
}

fn check_cotangent(sol: &DdiSolution, grad_out: &DepthMap) -> Result<()> {
    if !grad_out.same_shape(sol.depth.height(), sol.depth.width()) {
        return Err(Error::shape(format!(
            "cotangent is {}x{}, solution is {}x{}",
            grad_out.height(),
            grad_out.width(),
            sol.depth.height(),
            sol.depth.width()
        )));
    }
    Ok(())
}

/// `(A^T A)^-1 grad_out`, warm-started from `warm` or the cached adjoint.
fn adjoint_solve(
    sol: &mut DdiSolution,
    grad_out: &DepthMap,
    warm: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveStats)> {
    check_cotangent(sol, grad_out)?;
    let n = sol.cached_primal.len();
    let start = match warm.or(sol.cached_adjoint.as_deref()) {
        Some(w) if w.len() == n => Some(w.to_vec()),
        Some(_) => return Err(Error::shape("adjoint warm start has a different grid size")),
        None => None,
    };
    let (v, stats) = cg::solve(
        &sol.config.normal_operator(),
        grad_out.values(),
        start.as_deref(),
        &sol.stop,
    )?;
    check_convergence(&stats)?;
    sol.cached_adjoint = Some(v.clone());
    sol.last_backward_stats = Some(stats.clone());
    Ok((v, stats))
}

fn gradient_cotangent(cfg: &SystemConfig, v: &[f64]) -> Result<GradientField> {
    let av = cfg.apply_a(v)?;
    GradientField::new(cfg.height(), cfg.width(), av.rx, av.ry)
}

fn confidence_cotangent(sol: &DdiSolution, v: &[f64]) -> Result<DepthMap> {
    let alpha = sol.config.alpha();
    let values = sol
        .observations
        .mask()
        .bits()
        .iter()
        .zip(sol.observations.values())
        .zip(&sol.cached_primal)
        .zip(v)
        .map(|(((&m, &o), &d), &vi)| if m { vi * alpha * (o - d) } else { 0.0 })
        .collect();
    DepthMap::new(sol.depth.height(), sol.depth.width(), values)
}

/// Both cotangents from a single adjoint solve. `warm` overrides the cached adjoint.
pub fn ddi_backward(
    sol: &mut DdiSolution,
    grad_out: &DepthMap,
    warm: Option<&[f64]>,
) -> Result<DdiGrads> {
    let (v, stats) = adjoint_solve(sol, grad_out, warm)?;
    let gradients = gradient_cotangent(&sol.config, &v)?;
    let confidence = match sol.config.confidence() {
        Some(_) => Some(confidence_cotangent(sol, &v)?),
        None => None,
    };
    Ok(DdiGrads {
        gradients,
        confidence,
        stats,
    })
}

/// Cotangent on the gradient field given a cotangent on the depth.
pub fn ddi_backward_gradients(sol: &mut DdiSolution, grad_out: &DepthMap) -> Result<GradientField> {
    let (v, _) = adjoint_solve(sol, grad_out, None)?;
    gradient_cotangent(&sol.config, &v)
}

/// Cotangent on the confidence map given a cotangent on the depth.
pub fn ddi_backward_confidence(sol: &mut DdiSolution, grad_out: &DepthMap) -> Result<DepthMap> {
    if sol.config.confidence().is_none() {
        return Err(Error::State(
            "solution was computed without a confidence map".into(),
        ));
    }
    let (v, _) = adjoint_solve(sol, grad_out, None)?;
    confidence_cotangent(sol, &v)
}
