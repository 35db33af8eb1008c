use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Mask};

/// Predictions are clamped to at least this many meters before inversion.
pub const INVERSE_DEPTH_FLOOR: f64 = 1e-6;

/// Standard depth-completion errors. Inverse-depth metrics are in 1/km.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "rmse_m")]
    pub rmse: f64,
    #[serde(rename = "mae_m")]
    pub mae: f64,
    pub rel: f64,
    #[serde(rename = "irmse_per_km")]
    pub irmse: f64,
    #[serde(rename = "imae_per_km")]
    pub imae: f64,
    pub valid_count: usize,
}

impl MetricReport {
    /// Flat JSON object with the fixed key set.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metric report is always serializable")
    }
}

pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, valid: &Mask) -> Result<MetricReport> {
    if !pred.same_shape(gt.height(), gt.width())
        || valid.height() != gt.height()
        || valid.width() != gt.width()
    {
        return Err(Error::shape(format!(
            "prediction {}x{}, ground truth {}x{} and mask {}x{} must agree",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width(),
            valid.height(),
            valid.width()
        )));
    }
    let (mut se, mut ae, mut rel, mut ise, mut iae) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut n = 0usize;
    for ((&p, &g), &m) in pred.values().iter().zip(gt.values()).zip(valid.bits()) {
        if !m {
            continue;
        }
        if g.is_nan() || g <= 0.0 {
            return Err(Error::domain(format!(
                "ground truth {g} at a valid pixel is not positive"
            )));
        }
        let e = p - g;
        se += e * e;
        ae += e.abs();
        rel += e.abs() / g;
        let ie = 1.0 / p.max(INVERSE_DEPTH_FLOOR) - 1.0 / g;
        ise += ie * ie;
        iae += ie.abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let nf = n as f64;
    Ok(MetricReport {
        rmse: (se / nf).sqrt(),
        mae: ae / nf,
        rel: rel / nf,
        irmse: 1000.0 * (ise / nf).sqrt(),
        imae: 1000.0 * iae / nf,
        valid_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_maps_score_zero() {
        let gt = DepthMap::from_fn(3, 3, |r, c| 1.0 + (r + c) as f64).unwrap();
        let m = compute_metrics(&gt, &gt, &Mask::full(3, 3).unwrap()).unwrap();
        assert_eq!(
            (m.rmse, m.mae, m.rel, m.irmse, m.imae),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(m.valid_count, 9);
    }

    #[test]
    fn constant_offset() {
        let gt = DepthMap::from_fn(2, 5, |r, c| 2.0 + (r * c) as f64).unwrap();
        let pred = gt.map(|v| v + 0.001).unwrap();
        let m = compute_metrics(&pred, &gt, &Mask::full(2, 5).unwrap()).unwrap();
        assert!((m.rmse - 0.001).abs() < 1e-12);
        assert!((m.mae - 0.001).abs() < 1e-12);
    }

    #[test]
    fn one_pixel_units() {
        let gt = DepthMap::filled(1, 1, 1.0).unwrap();
        let pred = DepthMap::filled(1, 1, 2.0).unwrap();
        let m = compute_metrics(&pred, &gt, &Mask::full(1, 1).unwrap()).unwrap();
        assert_eq!(m.mae, 1.0);
        assert_eq!(m.rmse, 1.0);
        assert_eq!(m.rel, 1.0);
        assert_eq!(m.imae, 500.0);
        assert_eq!(m.irmse, 500.0);
    }

    #[test]
    fn errors() {
        let gt = DepthMap::new(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            compute_metrics(&gt, &gt, &Mask::empty(1, 2).unwrap()),
            Err(Error::EmptyMask)
        ));
        assert!(matches!(
            compute_metrics(&gt, &gt, &Mask::full(1, 2).unwrap()),
            Err(Error::Domain(_))
        ));
        let other = DepthMap::filled(2, 1, 1.0).unwrap();
        assert!(matches!(
            compute_metrics(&other, &gt, &Mask::full(1, 2).unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn nonpositive_prediction_is_clamped() {
        let gt = DepthMap::filled(1, 1, 1.0).unwrap();
        let pred = DepthMap::filled(1, 1, -3.0).unwrap();
        let m = compute_metrics(&pred, &gt, &Mask::full(1, 1).unwrap()).unwrap();
        assert!(m.imae.is_finite());
        assert!((m.imae - 1000.0 * (1e6 - 1.0)).abs() < 1e-3);
    }

    #[test]
    fn json_keys() {
        let m = MetricReport {
            rmse: 1.0,
            mae: 0.5,
            rel: 0.25,
            irmse: 2.0,
            imae: 3.0,
            valid_count: 4,
        };
        assert_eq!(
            m.to_json(),
            r#"{"rmse_m":1.0,"mae_m":0.5,"rel":0.25,"irmse_per_km":2.0,"imae_per_km":3.0,"valid_count":4}"#
        );
    }
}
