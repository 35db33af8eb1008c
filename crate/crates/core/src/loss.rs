//! Training losses over an unrolled refinement.
//!
//! Step `t` of `T` is weighted by `gamma^(T - t)`, so the final step always
//! carries weight 1. Norms are sums over valid entries unless
//! [`Reduction::Mean`] is requested.

use crate::error::{Error, Result};
use crate::grid::{DepthMap, GradientField, Mask};

pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// `[gamma^(T-1), ..., gamma, 1]` for `steps = T`.
pub fn step_weights(steps: usize, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::domain(format!(
            "loss decay must lie in (0, 1], got {gamma}"
        )));
    }
    Ok((1..=steps)
        .map(|t| gamma.powi((steps - t) as i32))
        .collect())
}

fn check_shape(d: &DepthMap, gt: &DepthMap) -> Result<()> {
    if !d.same_shape(gt.height(), gt.width()) {
        return Err(Error::shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            d.height(),
            d.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// `||pred - gt||_2^2 + ||pred - gt||_1` over valid pixels.
fn l2_plus_l1(pred: &DepthMap, gt: &DepthMap, valid: &Mask, reduction: Reduction) -> Result<f64> {
    check_shape(pred, gt)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), &m) in pred.values().iter().zip(gt.values()).zip(valid.bits()) {
        if m {
            let e = p - g;
            sum += e * e + e.abs();
            n += 1;
        }
    }
    Ok(match reduction {
        Reduction::Sum => sum,
        Reduction::Mean if n > 0 => sum / n as f64,
        Reduction::Mean => 0.0,
    })
}

fn check_mask(gt: &DepthMap, valid: &Mask) -> Result<()> {
    if valid.height() != gt.height() || valid.width() != gt.width() {
        return Err(Error::shape("validity mask does not match ground truth"));
    }
    Ok(())
}

/// Depth loss over `(prediction, upsampled prediction)` pairs, oldest step first.
pub fn loss_depth(
    predictions: &[(DepthMap, DepthMap)],
    gt: &DepthMap,
    valid: &Mask,
    gamma: f64,
    reduction: Reduction,
) -> Result<f64> {
    check_mask(gt, valid)?;
    let weights = step_weights(predictions.len(), gamma)?;
    predictions
        .iter()
        .zip(weights)
        .try_fold(0.0, |acc, ((d, up), w)| {
            Ok(acc
                + w * (l2_plus_l1(d, gt, valid, reduction)?
                    + l2_plus_l1(up, gt, valid, reduction)?))
        })
}

/// Derivative of [`loss_depth`] with respect to each prediction, in the same pair layout.
///
/// The L1 term uses `sign(0) = 0`.
pub fn loss_depth_grad(
    predictions: &[(DepthMap, DepthMap)],
    gt: &DepthMap,
    valid: &Mask,
    gamma: f64,
    reduction: Reduction,
) -> Result<Vec<(DepthMap, DepthMap)>> {
    check_mask(gt, valid)?;
    let weights = step_weights(predictions.len(), gamma)?;
    let n = valid.count().max(1) as f64;
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / n,
    };
    let one = |pred: &DepthMap, w: f64| -> Result<DepthMap> {
        check_shape(pred, gt)?;
        let values = pred
            .values()
            .iter()
            .zip(gt.values())
            .zip(valid.bits())
            .map(|((p, g), &m)| {
                if m {
                    let e = p - g;
                    let sign = if e > 0.0 {
                        1.0
                    } else if e < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    w * scale * (2.0 * e + sign)
                } else {
                    0.0
                }
            })
            .collect();
        DepthMap::new(gt.height(), gt.width(), values)
    };
    predictions
        .iter()
        .zip(weights)
        .map(|((d, up), w)| Ok((one(d, w)?, one(up, w)?)))
        .collect()
}

/// L1 loss on predicted gradient fields, oldest step first.
pub fn loss_gradients(
    predictions: &[GradientField],
    gt: &GradientField,
    gamma: f64,
    reduction: Reduction,
) -> Result<f64> {
    let weights = step_weights(predictions.len(), gamma)?;
    let n = gt.len().max(1) as f64;
    predictions
        .iter()
        .zip(weights)
        .try_fold(0.0, |acc, (g, w)| {
            let l1 = g.l1_distance(gt)?;
            Ok(acc
                + w * match reduction {
                    Reduction::Sum => l1,
                    Reduction::Mean => l1 / n,
                })
        })
}

/// `depth_loss + lambda * gradient_loss`.
pub fn combined_loss(depth_loss: f64, gradient_loss: f64, lambda: f64) -> f64 {
    depth_loss + lambda * gradient_loss
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights() {
        assert_eq!(step_weights(2, 0.9).unwrap(), vec![0.9, 1.0]);
        assert_eq!(step_weights(3, 0.9).unwrap(), vec![0.81, 0.9, 1.0]);
        assert_eq!(step_weights(1, 0.5).unwrap(), vec![1.0]);
        assert!(step_weights(3, 0.0).is_err());
        assert!(step_weights(3, 1.5).is_err());
    }

    #[test]
    fn single_pixel_depth_loss() {
        let p = DepthMap::filled(1, 1, 3.0).unwrap();
        let gt = DepthMap::filled(1, 1, 1.0).unwrap();
        let valid = Mask::full(1, 1).unwrap();
        let l = loss_depth(&[(p.clone(), p)], &gt, &valid, 0.9, Reduction::Sum).unwrap();
        assert_eq!(l, 12.0);
    }

    #[test]
    fn perfect_prediction_is_zero_and_invalid_pixels_are_ignored() {
        let gt = DepthMap::new(1, 2, vec![1.0, 2.0]).unwrap();
        let pred = DepthMap::new(1, 2, vec![1.0, 50.0]).unwrap();
        let valid = Mask::new(1, 2, vec![true, false]).unwrap();
        let l = loss_depth(&[(pred.clone(), pred)], &gt, &valid, 0.9, Reduction::Sum).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn mean_reduction_divides_by_valid_count() {
        let gt = DepthMap::filled(2, 2, 1.0).unwrap();
        let pred = DepthMap::filled(2, 2, 2.0).unwrap();
        let valid = Mask::new(2, 2, vec![true, true, false, true]).unwrap();
        let sum = loss_depth(
            &[(pred.clone(), pred.clone())],
            &gt,
            &valid,
            0.9,
            Reduction::Sum,
        )
        .unwrap();
        let mean = loss_depth(&[(pred.clone(), pred)], &gt, &valid, 0.9, Reduction::Mean).unwrap();
        assert_eq!(sum, 12.0);
        assert_eq!(mean, 4.0);
    }

    #[test]
    fn gradient_loss_examples() {
        let gt = GradientField::new(1, 2, vec![0.5], vec![]).unwrap();
        let pred = GradientField::new(1, 2, vec![2.0], vec![]).unwrap();
        assert_eq!(
            loss_gradients(&[pred], &gt, 0.9, Reduction::Sum).unwrap(),
            1.5
        );

        let off = GradientField::new(1, 2, vec![1.5], vec![]).unwrap();
        let l = loss_gradients(&[off.clone(), off.clone(), off], &gt, 0.9, Reduction::Sum).unwrap();
        assert!((l - 2.71).abs() < 1e-15);
        assert_eq!(
            loss_gradients(std::slice::from_ref(&gt), &gt, 0.9, Reduction::Sum).unwrap(),
            0.0
        );
    }

    #[test]
    fn combined_default_lambda() {
        assert_eq!(combined_loss(2.0, 3.0, DEFAULT_LAMBDA), 5.0);
    }

    #[test]
    fn depth_grad_matches_difference_quotient() {
        let gt = DepthMap::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let valid = Mask::new(1, 3, vec![true, true, false]).unwrap();
        let preds = vec![
            (
                DepthMap::new(1, 3, vec![1.5, 1.2, 9.0]).unwrap(),
                DepthMap::new(1, 3, vec![0.2, 2.9, 1.0]).unwrap(),
            ),
            (
                DepthMap::new(1, 3, vec![1.1, 2.3, 9.0]).unwrap(),
                DepthMap::new(1, 3, vec![0.9, 1.7, 1.0]).unwrap(),
            ),
        ];
        let grads = loss_depth_grad(&preds, &gt, &valid, 0.9, Reduction::Sum).unwrap();
        let h = 1e-6;
        for t in 0..2 {
            for i in 0..3 {
                let bump = |delta: f64| {
                    let mut p = preds.clone();
                    let mut v = p[t].0.flatten();
                    v[i] += delta;
                    p[t].0 = DepthMap::new(1, 3, v).unwrap();
                    loss_depth(&p, &gt, &valid, 0.9, Reduction::Sum).unwrap()
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert!((fd - grads[t].0.values()[i]).abs() < 1e-6, "t={t} i={i}");
            }
        }
    }
}
