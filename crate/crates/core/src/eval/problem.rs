//! Seeded random integration problems for checks and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::{
    finite_difference, ConfidenceMap, DepthMap, GradientField, Mask, SparseObservations,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemOptions {
    /// Probability that a pixel carries an observation (at least one always does).
    pub obs_fraction: f64,
    /// Standard deviation-ish amplitude of noise added to gradients and observations.
    /// Zero yields a consistent system whose minimiser is the ground truth.
    pub noise: f64,
    /// Draw a confidence map with values strictly inside (0, 1).
    pub confidence: bool,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        Self {
            obs_fraction: 0.3,
            noise: 0.05,
            confidence: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub gt: DepthMap,
    pub gradients: GradientField,
    pub obs: SparseObservations,
    pub conf: Option<ConfidenceMap>,
}

/// Smooth positive ground truth, noisy gradients and observations.
pub fn random_problem(
    seed: u64,
    height: usize,
    width: usize,
    opts: ProblemOptions,
) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fx, fy, px, py) = (
        rng.random_range(0.2..1.2),
        rng.random_range(0.2..1.2),
        rng.random_range(0.0..6.3),
        rng.random_range(0.0..6.3),
    );
    let base = rng.random_range(3.0..6.0);
    let gt = DepthMap::from_fn(height, width, |r, c| {
        base + (fx * c as f64 + px).sin() + 0.8 * (fy * r as f64 + py).cos()
    })?;

    let mut jitter = |v: f64| v + opts.noise * rng.random_range(-1.0..1.0);
    let clean = finite_difference(&gt);
    let gx = clean.gx().iter().map(|&v| jitter(v)).collect();
    let gy = clean.gy().iter().map(|&v| jitter(v)).collect();
    let gradients = GradientField::new(height, width, gx, gy)?;

    let n = height * width;
    let mut bits: Vec<bool> = (0..n)
        .map(|_| rng.random::<f64>() < opts.obs_fraction)
        .collect();
    if !bits.iter().any(|&b| b) {
        bits[rng.random_range(0..n)] = true;
    }
    let values = gt
        .values()
        .iter()
        .zip(&bits)
        .map(|(&v, &m)| {
            if m {
                (v + opts.noise * rng.random_range(-1.0..1.0)).max(0.01)
            } else {
                0.0
            }
        })
        .collect();
    let obs = SparseObservations::new(values, Mask::new(height, width, bits)?)?;

    let conf = if opts.confidence {
        Some(ConfidenceMap::new(
            height,
            width,
            (0..n).map(|_| rng.random_range(0.2..0.9)).collect(),
        )?)
    } else {
        None
    };
    Ok(Problem {
        gt,
        gradients,
        obs,
        conf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_well_formed() {
        let opts = ProblemOptions {
            confidence: true,
            ..ProblemOptions::default()
        };
        let a = random_problem(5, 4, 6, opts).unwrap();
        let b = random_problem(5, 4, 6, opts).unwrap();
        assert_eq!(a.gt, b.gt);
        assert_eq!(a.obs, b.obs);
        assert!(a.obs.count() >= 1);
        assert!(a.conf.unwrap().values().iter().all(|&c| c > 0.0 && c < 1.0));
        let sparse = random_problem(
            1,
            3,
            3,
            ProblemOptions {
                obs_fraction: 0.0,
                ..opts
            },
        )
        .unwrap();
        assert_eq!(sparse.obs.count(), 1);
    }
}
