//! Iterate-and-integrate refinement loop.
//!
//! Starting from an all-zero gradient field, each step asks a [`Refiner`] for
//! an update, adds it to the current field, and re-integrates. From step 2 on
//! the forward solve starts from the previous step's depth.

use std::fmt;
use std::str::FromStr;

use crate::ddi::{ddi_backward, ddi_forward, DdiContext, DdiSolution};
use crate::error::{Error, Result};
use crate::grid::{ConfidenceMap, DepthMap, GradientField, SparseObservations};

pub const DEFAULT_STEPS: usize = 5;

/// Produces a gradient-field update from the current state of the loop.
pub trait Refiner {
    fn delta(
        &mut self,
        gradients: &GradientField,
        depth: &DepthMap,
        obs: &SparseObservations,
    ) -> Result<GradientField>;
}

/// Never changes the field.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroRefiner;

impl Refiner for ZeroRefiner {
    fn delta(
        &mut self,
        g: &GradientField,
        _: &DepthMap,
        _: &SparseObservations,
    ) -> Result<GradientField> {
        GradientField::zeros(g.height(), g.width())
    }
}

/// Moves a fixed fraction of the way to a known target field each step.
/// A factor of 1 jumps straight to the target.
#[derive(Debug, Clone)]
pub struct DampedOracleRefiner {
    target: GradientField,
    factor: f64,
}

impl DampedOracleRefiner {
    pub fn new(target: GradientField, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::domain(format!(
                "damping factor must lie in (0, 1], got {factor}"
            )));
        }
        Ok(Self { target, factor })
    }

    pub fn oracle(target: GradientField) -> Self {
        Self {
            target,
            factor: 1.0,
        }
    }
}

impl Refiner for DampedOracleRefiner {
    fn delta(
        &mut self,
        g: &GradientField,
        _: &DepthMap,
        _: &SparseObservations,
    ) -> Result<GradientField> {
        let gap = self.target.sub(g)?;
        if self.factor == 1.0 {
            Ok(gap)
        } else {
            gap.scale(self.factor)
        }
    }
}

/// Refiner selection as spelled on the command line: `zero`, `oracle`, `damped:<factor>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefinerSpec {
    Zero,
    Oracle,
    Damped(f64),
}

impl RefinerSpec {
    /// Instantiate; `target` is the ground-truth field the oracle variants chase.
    pub fn build(self, target: &GradientField) -> Result<Box<dyn Refiner + Send>> {
        Ok(match self {
            RefinerSpec::Zero => Box::new(ZeroRefiner),
            RefinerSpec::Oracle => Box::new(DampedOracleRefiner::oracle(target.clone())),
            RefinerSpec::Damped(f) => Box::new(DampedOracleRefiner::new(target.clone(), f)?),
        })
    }
}

impl FromStr for RefinerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(RefinerSpec::Zero),
            "oracle" => Ok(RefinerSpec::Oracle),
            _ => {
                let f = s
                    .strip_prefix("damped:")
                    .and_then(|f| f.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::domain(format!(
                            "unknown refiner {s:?} (expected zero, oracle or damped:<factor>)"
                        ))
                    })?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::domain(format!(
                        "damping factor must lie in (0, 1], got {f}"
                    )));
                }
                Ok(RefinerSpec::Damped(f))
            }
        }
    }
}

impl fmt::Display for RefinerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefinerSpec::Zero => f.write_str("zero"),
            RefinerSpec::Oracle => f.write_str("oracle"),
            RefinerSpec::Damped(x) => write!(f, "damped:{x}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: usize,
    pub gradients: GradientField,
    pub solution: DdiSolution,
}

#[derive(Debug, Clone)]
pub struct RefinementTrace {
    /// Integration of the all-zero initial field (step 0).
    pub initial: DdiSolution,
    pub steps: Vec<StepRecord>,
}

impl RefinementTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }

    /// Forward CG iterations summed over steps `1..=T` (the step-0 solve is excluded).
    pub fn total_iterations(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.solution.forward_stats().iterations)
            .sum()
    }

    /// Gradient-field cotangents for per-step depth cotangents, latest step first
    /// internally so each adjoint solve starts from the one of the step after it.
    /// Returns cotangents in step order, plus total backward CG iterations.
    pub fn backward(
        &mut self,
        grad_outs: &[DepthMap],
        warm_start: bool,
    ) -> Result<(Vec<GradientField>, usize)> {
        if grad_outs.len() != self.steps.len() {
            return Err(Error::shape(format!(
                "{} cotangents for {} steps",
                grad_outs.len(),
                self.steps.len()
            )));
        }
        let mut out = vec![None; self.steps.len()];
        let mut carry: Option<Vec<f64>> = None;
        let mut iterations = 0;
        for (i, rec) in self.steps.iter_mut().enumerate().rev() {
            rec.solution.set_cached_adjoint(None);
            let warm = if warm_start { carry.as_deref() } else { None };
            let grads = ddi_backward(&mut rec.solution, &grad_outs[i], warm)?;
            iterations += grads.stats.iterations;
            carry = rec.solution.cached_adjoint().map(<[f64]>::to_vec);
            out[i] = Some(grads.gradients);
        }
        Ok((
            out.into_iter()
                .map(|g| g.expect("every step visited"))
                .collect(),
            iterations,
        ))
    }
}

/// Run `steps` refinement iterations with warm-started integration.
pub fn run_refinement(
    obs: &SparseObservations,
    conf: Option<&ConfidenceMap>,
    refiner: &mut dyn Refiner,
    steps: usize,
    ctx: &DdiContext<'_>,
) -> Result<RefinementTrace> {
    run_refinement_with(obs, conf, refiner, steps, ctx, true)
}

/// As [`run_refinement`], with warm starting switchable for comparison runs.
pub fn run_refinement_with(
    obs: &SparseObservations,
    conf: Option<&ConfidenceMap>,
    refiner: &mut dyn Refiner,
    steps: usize,
    ctx: &DdiContext<'_>,
    warm_start: bool,
) -> Result<RefinementTrace> {
    if steps == 0 {
        return Err(Error::domain("refinement needs at least one step"));
    }
    let (h, w) = (obs.height(), obs.width());
    let cold = DdiContext {
        previous: None,
        ..*ctx
    };

    let mut gradients = GradientField::zeros(h, w)?;
    let initial = ddi_forward(&gradients, obs, conf, &cold)?;
    let mut records: Vec<StepRecord> = Vec::with_capacity(steps);

    for step in 1..=steps {
        let prev = records.last().map_or(&initial, |r| &r.solution);
        let delta = refiner.delta(&gradients, prev.depth(), obs)?;
        if delta.height() != h || delta.width() != w {
            return Err(Error::shape(format!(
                "refiner returned a {}x{} update for a {h}x{w} field",
                delta.height(),
                delta.width()
            )));
        }
        gradients = gradients.add(&delta)?;
        // step 1 has no refined predecessor to reuse
        let step_ctx = match records.last() {
            Some(r) if warm_start => cold.warm_from(&r.solution),
            _ => cold,
        };
        let solution = ddi_forward(&gradients, obs, conf, &step_ctx)?;
        records.push(StepRecord {
            step,
            gradients: gradients.clone(),
            solution,
        });
    }
    Ok(RefinementTrace {
        initial,
        steps: records,
    })
}
