use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Mask, SparseObservations};

/// Draw `n` distinct pixels uniformly among those with positive depth.
pub fn sample_random_points(gt: &DepthMap, n: usize, seed: u64) -> Result<SparseObservations> {
    let candidates: Vec<usize> = gt
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, _)| i)
        .collect();
    if n > candidates.len() {
        return Err(Error::domain(format!(
            "cannot sample {n} points from {} positive-depth pixels",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = vec![false; gt.len()];
    for k in index::sample(&mut rng, candidates.len(), n) {
        bits[candidates[k]] = true;
    }
    SparseObservations::from_depth(gt, &Mask::new(gt.height(), gt.width(), bits)?)
}

/// Keep observations only on rows `r` with `r % keep_every == 0`.
pub fn subsample_rows(obs: &SparseObservations, keep_every: usize) -> Result<SparseObservations> {
    if keep_every == 0 {
        return Err(Error::domain("keep_every must be >= 1"));
    }
    Ok(obs.restrict(|r, _| r % keep_every == 0))
}

/// Training-time augmentation: half the time return `obs` untouched, otherwise
/// drop each valid point with a probability drawn uniformly from `[0, 1)`.
pub fn random_mask_augment(obs: &SparseObservations, seed: u64) -> SparseObservations {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.random::<f64>() < 0.5 {
        return obs.clone();
    }
    let drop = rng.random::<f64>();
    let w = obs.width();
    let keep: Vec<bool> = obs
        .mask()
        .bits()
        .iter()
        .map(|&m| m && rng.random::<f64>() >= drop)
        .collect();
    obs.restrict(|r, c| keep[r * w + c])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> DepthMap {
        DepthMap::from_fn(20, 30, |r, c| {
            if (r + c) % 7 == 0 {
                0.0
            } else {
                1.0 + r as f64 * 0.1
            }
        })
        .unwrap()
    }

    #[test]
    fn exhaustive_sample_is_positivity_mask() {
        let gt = scene();
        let all = Mask::positive(&gt).count();
        let obs = sample_random_points(&gt, all, 3).unwrap();
        assert_eq!(obs.mask(), &Mask::positive(&gt));
        assert!(sample_random_points(&gt, all + 1, 3).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let gt = scene();
        let a = sample_random_points(&gt, 50, 11).unwrap();
        let b = sample_random_points(&gt, 50, 11).unwrap();
        let c = sample_random_points(&gt, 50, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.count(), 50);
        assert!(a
            .points()
            .iter()
            .all(|&(r, c, d)| d == gt.get(r, c) && d > 0.0));
        assert_eq!(sample_random_points(&gt, 0, 1).unwrap().count(), 0);
    }

    #[test]
    fn row_decimation() {
        let obs =
            SparseObservations::from_points(4, 2, (0..4).map(|r| (r, 1, 1.0 + r as f64))).unwrap();
        assert_eq!(subsample_rows(&obs, 1).unwrap(), obs);
        let kept: Vec<usize> = subsample_rows(&obs, 2)
            .unwrap()
            .points()
            .iter()
            .map(|p| p.0)
            .collect();
        assert_eq!(kept, vec![0, 2]);
        assert_eq!(subsample_rows(&obs, 4).unwrap().count(), 1);
        assert!(subsample_rows(&obs, 0).is_err());
    }

    #[test]
    fn augmentation_branches() {
        let obs = SparseObservations::from_depth(
            &DepthMap::filled(10, 10, 2.0).unwrap(),
            &Mask::full(10, 10).unwrap(),
        )
        .unwrap();
        let mut saw_untouched = false;
        let mut saw_dropped = false;
        for seed in 0..64 {
            let out = random_mask_augment(&obs, seed);
            assert_eq!(out, random_mask_augment(&obs, seed));
            assert!(out.points().iter().all(|&(_, _, d)| d == 2.0));
            if out == obs {
                saw_untouched = true;
            } else {
                saw_dropped = true;
            }
        }
        assert!(saw_untouched && saw_dropped);
    }
}
