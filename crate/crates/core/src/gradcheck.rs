//! Finite-difference verification of the backward passes.
//!
//! Every check compares an analytic cotangent against central differences of
//! a scalar loss, re-solving the forward problem for each perturbed input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cg::StopConfig;
use crate::ddi::{ddi_backward_confidence, ddi_backward_gradients, ddi_forward, DdiContext};
use crate::error::{Error, Result};
use crate::eval::{random_problem, ProblemOptions};
use crate::grid::{
    convex_upsample, convex_upsample_vjp, ConfidenceMap, DepthMap, GradientField, Mask,
    UpsampleWeights, NEIGHBOURS,
};
use crate::loss::{loss_depth, loss_depth_grad, Reduction, DEFAULT_GAMMA};

pub const DEFAULT_STEP: f64 = 1e-6;
/// Solver tolerance used inside checks, so solver error does not masquerade as VJP error.
pub const CHECK_TOL: f64 = 1e-12;

/// Relative error of an analytic cotangent against a numeric one, in the max norm:
/// `max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|)`.
///
/// Normalising by the largest entry rather than entry by entry keeps
/// near-zero entries, whose differences are dominated by solver noise of
/// order `tol / step`, from deciding the outcome.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf(analytic).max(inf(numeric)).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

fn check_ctx() -> DdiContext<'static> {
    DdiContext {
        stop: StopConfig::with_tol(CHECK_TOL),
        ..DdiContext::default()
    }
}

fn central_difference(
    n: usize,
    step: f64,
    mut f: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<Vec<f64>> {
    (0..n)
        .map(|k| Ok((f(k, step)? - f(k, -step)?) / (2.0 * step)))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_cotangent(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Result<DepthMap> {
    DepthMap::new(
        height,
        width,
        (0..height * width)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
}

impl CheckResult {
    fn new(analytic: Vec<f64>, numeric: Vec<f64>) -> Self {
        let max_rel_error = max_relative_error(&analytic, &numeric);
        Self {
            analytic,
            numeric,
            max_rel_error,
        }
    }
}

/// Gradient-field VJP against differences of `L = <u, D(G)>` for a random `u`.
pub fn gradient_vjp_check(
    seed: u64,
    height: usize,
    width: usize,
    step: f64,
) -> Result<CheckResult> {
    let p = random_problem(seed, height, width, ProblemOptions::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let u = random_cotangent(&mut rng, height, width)?;
    let ctx = check_ctx();

    let mut sol = ddi_forward(&p.gradients, &p.obs, None, &ctx)?;
    let analytic = ddi_backward_gradients(&mut sol, &u)?.to_flat();

    let base = p.gradients.to_flat();
    let numeric = central_difference(base.len(), step, |k, h| {
        let mut g = base.clone();
        g[k] += h;
        let g = GradientField::from_flat(height, width, &g)?;
        Ok(dot(
            u.values(),
            ddi_forward(&g, &p.obs, None, &ctx)?.depth().values(),
        ))
    })?;
    Ok(CheckResult::new(analytic, numeric))
}

/// Confidence VJP against differences of `L = <u, D(C)>`, confidence drawn inside (0, 1).
pub fn confidence_vjp_check(
    seed: u64,
    height: usize,
    width: usize,
    step: f64,
) -> Result<CheckResult> {
    let opts = ProblemOptions {
        confidence: true,
        obs_fraction: 0.5,
        ..ProblemOptions::default()
    };
    let p = random_problem(seed, height, width, opts)?;
    let conf = p
        .conf
        .clone()
        .ok_or_else(|| Error::State("problem has no confidence".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let u = random_cotangent(&mut rng, height, width)?;
    let ctx = check_ctx();

    let mut sol = ddi_forward(&p.gradients, &p.obs, Some(&conf), &ctx)?;
    let analytic = ddi_backward_confidence(&mut sol, &u)?.into_values();

    let numeric = central_difference(height * width, step, |k, h| {
        let c = ConfidenceMap::new(height, width, {
            let mut v = conf.values().to_vec();
            v[k] += h;
            v
        })?;
        Ok(dot(
            u.values(),
            ddi_forward(&p.gradients, &p.obs, Some(&c), &ctx)?
                .depth()
                .values(),
        ))
    })?;
    Ok(CheckResult::new(analytic, numeric))
}

fn random_convex_weights(
    rng: &mut ChaCha8Rng,
    height: usize,
    width: usize,
) -> Result<UpsampleWeights> {
    let weights = (0..height * width)
        .map(|_| {
            let mut w = [0.0; NEIGHBOURS];
            w.iter_mut().for_each(|v| *v = rng.random_range(0.1..1.0));
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            w
        })
        .collect();
    UpsampleWeights::new(height, width, 1, weights)
}

/// Depth loss composed with integration, differentiated with respect to the
/// gradient field. The "upsampled" branch is a random same-resolution convex
/// blend so both loss terms carry signal. Returns the check and the loss value.
pub fn end_to_end_vjp_check(
    seed: u64,
    height: usize,
    width: usize,
    noise: f64,
) -> Result<(CheckResult, f64)> {
    if height * width > 64 {
        return Err(Error::Size {
            unknowns: height * width,
            cap: 64,
        });
    }
    let opts = ProblemOptions {
        noise,
        ..ProblemOptions::default()
    };
    let p = random_problem(seed, height, width, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let weights = random_convex_weights(&mut rng, height, width)?;
    let valid = Mask::full(height, width)?;
    let ctx = check_ctx();

    let loss_of = |g: &GradientField| -> Result<(f64, DepthMap, DepthMap)> {
        let d = ddi_forward(g, &p.obs, None, &ctx)?.into_depth();
        let up = convex_upsample(&d, &weights)?;
        let l = loss_depth(
            &[(d.clone(), up.clone())],
            &p.gt,
            &valid,
            DEFAULT_GAMMA,
            Reduction::Sum,
        )?;
        Ok((l, d, up))
    };

    let mut sol = ddi_forward(&p.gradients, &p.obs, None, &ctx)?;
    let up = convex_upsample(sol.depth(), &weights)?;
    let pairs = [(sol.depth().clone(), up.clone())];
    let loss = loss_depth(&pairs, &p.gt, &valid, DEFAULT_GAMMA, Reduction::Sum)?;
    let grads = loss_depth_grad(&pairs, &p.gt, &valid, DEFAULT_GAMMA, Reduction::Sum)?;
    let (g_direct, g_up) = &grads[0];
    let through_up = convex_upsample_vjp(g_up, &weights)?;
    let grad_out = DepthMap::new(
        height,
        width,
        g_direct
            .values()
            .iter()
            .zip(through_up.values())
            .map(|(a, b)| a + b)
            .collect(),
    )?;
    let analytic = ddi_backward_gradients(&mut sol, &grad_out)?.to_flat();

    let base = p.gradients.to_flat();
    let numeric = central_difference(base.len(), DEFAULT_STEP, |k, h| {
        let mut g = base.clone();
        g[k] += h;
        Ok(loss_of(&GradientField::from_flat(height, width, &g)?)?.0)
    })?;
    Ok((CheckResult::new(analytic, numeric), loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_definition() {
        assert_eq!(max_relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((max_relative_error(&[1.1], &[1.0]) - 0.1 / 1.1).abs() < 1e-15);
        // a small entry is judged against the largest one
        let e = max_relative_error(&[2.0, 1e-3], &[2.0, 0.0]);
        assert!((e - 5e-4).abs() < 1e-15);
        assert_eq!(max_relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn small_gradient_check() {
        let r = gradient_vjp_check(3, 3, 4, DEFAULT_STEP).unwrap();
        assert!(r.max_rel_error < 1e-5, "{}", r.max_rel_error);
    }
}
