//! Matrix-free least-squares operators for depth integration.
//!
//! The stacked system is
//!
//! ```text
//!     [ Dx          ]       [ gx       ]
//! A = [ Dy          ],  b = [ gy       ]
//!     [ diag(w)     ]       [ w .* obs ]
//! ```
//!
//! with `w = sqrt(alpha) * sqrt(conf) * mask` per pixel. Nothing is ever
//! assembled; `A`, `A^T` and `A^T A` are applied directly on the grid.

use crate::cg::LinearOperator;
use crate::error::{Error, Result};
use crate::grid::{ConfidenceMap, GradientField, Mask, SparseObservations};
use crate::par::{self, Exec};

/// Residual-shaped vector: the three stacked blocks of `A x - b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    /// `height * (width - 1)` horizontal differences.
    pub rx: Vec<f64>,
    /// `(height - 1) * width` vertical differences.
    pub ry: Vec<f64>,
    /// `height * width` observation rows.
    pub ro: Vec<f64>,
}

impl ResidualVector {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            rx: vec![0.0; height * (width - 1)],
            ry: vec![0.0; (height - 1) * width],
            ro: vec![0.0; height * width],
        }
    }

    pub fn dot(&self, other: &ResidualVector) -> f64 {
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        d(&self.rx, &other.rx) + d(&self.ry, &other.ry) + d(&self.ro, &other.ro)
    }
}

/// Operator configuration: grid size, observation mask, weight and optional confidence.
#[derive(Debug, Clone)]
pub struct SystemConfig {
    height: usize,
    width: usize,
    mask: Mask,
    alpha: f64,
    confidence: Option<ConfidenceMap>,
    /// `sqrt(alpha) * sqrt(conf) * mask`, fixed at construction.
    obs_weight: Vec<f64>,
    exec: Exec,
}

impl SystemConfig {
    /// Fails with [`Error::SingularSystem`] when the mask is empty.
    pub fn new(mask: Mask, alpha: f64, confidence: Option<ConfidenceMap>) -> Result<Self> {
        let cfg = Self::with_singular(mask, alpha, confidence)?;
        if cfg.mask.count() == 0 {
            return Err(Error::SingularSystem);
        }
        Ok(cfg)
    }

    /// Like [`SystemConfig::new`] but accepts an empty mask, leaving `A^T A`
    /// only positive semi-definite.
    pub fn with_singular(
        mask: Mask,
        alpha: f64,
        confidence: Option<ConfidenceMap>,
    ) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::domain(format!(
                "alpha must be positive and finite, got {alpha}"
            )));
        }
        let (height, width) = (mask.height(), mask.width());
        if let Some(c) = &confidence {
            if c.height() != height || c.width() != width {
                return Err(Error::shape(format!(
                    "confidence map is {}x{} but mask is {height}x{width}",
                    c.height(),
                    c.width()
                )));
            }
        }
        let sqrt_alpha = alpha.sqrt();
        let obs_weight = match &confidence {
            None => mask
                .bits()
                .iter()
                .map(|&m| if m { sqrt_alpha } else { 0.0 })
                .collect(),
            Some(c) => mask
                .bits()
                .iter()
                .zip(c.values())
                .map(|(&m, &ci)| if m { sqrt_alpha * ci.sqrt() } else { 0.0 })
                .collect(),
        };
        Ok(Self {
            height,
            width,
            mask,
            alpha,
            confidence,
            obs_weight,
            exec: Exec::default(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn unknowns(&self) -> usize {
        self.height * self.width
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn confidence(&self) -> Option<&ConfidenceMap> {
        self.confidence.as_ref()
    }

    pub fn obs_weight(&self) -> &[f64] {
        &self.obs_weight
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    fn check_primal(&self, len: usize) -> Result<()> {
        if len != self.unknowns() {
            return Err(Error::shape(format!(
                "depth vector has {len} entries, system has {}",
                self.unknowns()
            )));
        }
        Ok(())
    }

    fn check_residual(&self, r: &ResidualVector) -> Result<()> {
        let (h, w) = (self.height, self.width);
        if r.rx.len() != h * (w - 1) || r.ry.len() != (h - 1) * w || r.ro.len() != h * w {
            return Err(Error::shape(format!(
                "residual blocks ({}, {}, {}) do not fit a {h}x{w} system",
                r.rx.len(),
                r.ry.len(),
                r.ro.len()
            )));
        }
        Ok(())
    }

    /// `A d`.
    pub fn apply_a(&self, d: &[f64]) -> Result<ResidualVector> {
        self.check_primal(d.len())?;
        let (h, w) = (self.height, self.width);
        let mut out = ResidualVector::zeros(h, w);
        if w > 1 {
            par::for_each_row(self.exec, &mut out.rx, w - 1, |r, row| {
                let src = &d[r * w..(r + 1) * w];
                for (c, v) in row.iter_mut().enumerate() {
                    *v = src[c + 1] - src[c];
                }
            });
        }
        par::for_each_row(self.exec, &mut out.ry, w, |r, row| {
            let (above, here) = (&d[r * w..(r + 1) * w], &d[(r + 1) * w..(r + 2) * w]);
            for (c, v) in row.iter_mut().enumerate() {
                *v = here[c] - above[c];
            }
        });
        par::for_each_row(self.exec, &mut out.ro, w, |r, row| {
            let (src, wt) = (&d[r * w..(r + 1) * w], &self.obs_weight[r * w..(r + 1) * w]);
            for (c, v) in row.iter_mut().enumerate() {
                *v = wt[c] * src[c];
            }
        });
        Ok(out)
    }

    /// `A^T r`.
    pub fn apply_at(&self, r: &ResidualVector) -> Result<Vec<f64>> {
        self.check_residual(r)?;
        let mut out = vec![0.0; self.unknowns()];
        self.adjoint_into(
            |row, col| r.rx[row * (self.width - 1) + col - 1],
            |row, col| r.ry[(row - 1) * self.width + col],
            |p| r.ro[p],
            &mut out,
        );
        Ok(out)
    }

    /// `A^T A d`, fused. Bit-identical to `apply_at(apply_a(d))`.
    pub fn apply_normal(&self, d: &[f64]) -> Result<Vec<f64>> {
        self.check_primal(d.len())?;
        let mut out = vec![0.0; self.unknowns()];
        self.normal_into(d, &mut out);
        Ok(out)
    }

    /// `A^T b` for gradient targets `g` and observations `obs`.
    pub fn build_rhs(&self, g: &GradientField, obs: &SparseObservations) -> Result<Vec<f64>> {
        if g.height() != self.height || g.width() != self.width {
            return Err(Error::shape(format!(
                "gradient field is {}x{}, system is {}x{}",
                g.height(),
                g.width(),
                self.height,
                self.width
            )));
        }
        if obs.height() != self.height || obs.width() != self.width {
            return Err(Error::shape(format!(
                "observations are {}x{}, system is {}x{}",
                obs.height(),
                obs.width(),
                self.height,
                self.width
            )));
        }
        let b = ResidualVector {
            rx: g.gx().to_vec(),
            ry: g.gy().to_vec(),
            ro: self
                .obs_weight
                .iter()
                .zip(obs.values())
                .map(|(wt, o)| wt * o)
                .collect(),
        };
        self.apply_at(&b)
    }

    pub(crate) fn normal_into(&self, d: &[f64], out: &mut [f64]) {
        let w = self.width;
        self.adjoint_into(
            |row, col| d[row * w + col] - d[row * w + col - 1],
            |row, col| d[row * w + col] - d[(row - 1) * w + col],
            |p| self.obs_weight[p] * d[p],
            out,
        );
    }

    /// Gather form of `A^T`: each output pixel collects the residual entries
    /// touching it. `rx(r, c)` is the x-difference ending at `(r, c)` (c >= 1),
    /// `ry(r, c)` the y-difference ending at `(r, c)` (r >= 1).
    fn adjoint_into<X, Y, O>(&self, rx: X, ry: Y, ro: O, out: &mut [f64])
    where
        X: Fn(usize, usize) -> f64 + Sync + Send,
        Y: Fn(usize, usize) -> f64 + Sync + Send,
        O: Fn(usize) -> f64 + Sync + Send,
    {
        let (h, w) = (self.height, self.width);
        let weight = &self.obs_weight;
        par::for_each_row(self.exec, out, w, |r, row| {
            for (c, v) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                if c > 0 {
                    acc += rx(r, c);
                }
                if c + 1 < w {
                    acc -= rx(r, c + 1);
                }
                if r > 0 {
                    acc += ry(r, c);
                }
                if r + 1 < h {
                    acc -= ry(r + 1, c);
                }
                let p = r * w + c;
                acc += weight[p] * ro(p);
                *v = acc;
            }
        });
    }

    /// The SPD normal operator `A^T A` as a solver input.
    pub fn normal_operator(&self) -> NormalOperator<'_> {
        NormalOperator(self)
    }
}

/// `A^T A` viewed as a [`LinearOperator`].
#[derive(Debug, Clone, Copy)]
pub struct NormalOperator<'a>(pub &'a SystemConfig);

impl LinearOperator for NormalOperator<'_> {
    fn dim(&self) -> usize {
        self.0.unknowns()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.0.normal_into(x, out);
    }

    fn exec(&self) -> Exec {
        self.0.exec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(h: usize, w: usize, bits: Vec<bool>, alpha: f64) -> SystemConfig {
        SystemConfig::new(Mask::new(h, w, bits).unwrap(), alpha, None).unwrap()
    }

    #[test]
    fn constant_has_zero_differences() {
        let c = cfg(
            3,
            3,
            vec![true, false, false, false, true, false, false, false, false],
            5.0,
        );
        let r = c.apply_a(&[2.0; 9]).unwrap();
        assert!(r.rx.iter().chain(&r.ry).all(|&v| v == 0.0));
        assert_eq!(r.ro[0], 5f64.sqrt() * 2.0);
        assert_eq!(r.ro[4], 5f64.sqrt() * 2.0);
        assert_eq!(r.ro[1], 0.0);
    }

    #[test]
    fn one_by_two_forward() {
        let c = cfg(1, 2, vec![true, false], 5.0);
        let r = c.apply_a(&[0.0, 1.0]).unwrap();
        assert_eq!(r.rx, vec![1.0]);
        assert!(r.ry.is_empty());
        assert_eq!(r.ro, vec![0.0, 0.0]);
    }

    #[test]
    fn adjoint_of_zero_and_unit() {
        let c = cfg(2, 3, vec![false, true, false, false, false, false], 5.0);
        assert_eq!(
            c.apply_at(&ResidualVector::zeros(2, 3)).unwrap(),
            vec![0.0; 6]
        );
        let mut e = ResidualVector::zeros(2, 3);
        e.ro[1] = 1.0;
        let out = c.apply_at(&e).unwrap();
        assert_eq!(out, vec![0.0, 5f64.sqrt(), 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn one_by_two_rhs() {
        let c = cfg(1, 2, vec![false, true], 5.0);
        let g = GradientField::new(1, 2, vec![1.0], vec![]).unwrap();
        let obs = SparseObservations::from_points(1, 2, [(0, 1, 2.0)]).unwrap();
        let rhs = c.build_rhs(&g, &obs).unwrap();
        assert_eq!(rhs[0], -1.0);
        assert!((rhs[1] - 11.0).abs() < 1e-14);
    }

    #[test]
    fn zero_rhs_when_nothing_observed() {
        let c = SystemConfig::with_singular(Mask::empty(2, 2).unwrap(), 5.0, None).unwrap();
        let rhs = c
            .build_rhs(
                &GradientField::zeros(2, 2).unwrap(),
                &SparseObservations::empty(2, 2).unwrap(),
            )
            .unwrap();
        assert_eq!(rhs, vec![0.0; 4]);
    }

    #[test]
    fn empty_mask_nullspace() {
        let c = SystemConfig::with_singular(Mask::empty(3, 4).unwrap(), 5.0, None).unwrap();
        assert_eq!(c.apply_normal(&[1.5; 12]).unwrap(), vec![0.0; 12]);
        assert!(matches!(
            SystemConfig::new(Mask::empty(3, 4).unwrap(), 5.0, None),
            Err(Error::SingularSystem)
        ));
    }

    #[test]
    fn shape_errors() {
        let c = cfg(2, 2, vec![true; 4], 1.0);
        assert!(matches!(c.apply_a(&[0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(c.apply_normal(&[0.0; 5]), Err(Error::Shape(_))));
        assert!(matches!(
            c.apply_at(&ResidualVector::zeros(2, 3)),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            SystemConfig::new(Mask::full(2, 2).unwrap(), 0.0, None),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            SystemConfig::new(
                Mask::full(2, 2).unwrap(),
                1.0,
                Some(ConfidenceMap::ones(2, 3).unwrap())
            ),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fused_normal_matches_composition_bitwise() {
        let (h, w) = (5, 7);
        let bits = (0..h * w).map(|i| i % 3 == 0).collect();
        let conf =
            ConfidenceMap::new(h, w, (0..h * w).map(|i| (i % 10) as f64 / 9.0).collect()).unwrap();
        let c = SystemConfig::new(Mask::new(h, w, bits).unwrap(), 5.0, Some(conf)).unwrap();
        let d: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let fused = c.apply_normal(&d).unwrap();
        let composed = c.apply_at(&c.apply_a(&d).unwrap()).unwrap();
        assert_eq!(fused, composed);
    }

    #[test]
    fn single_row_and_column_grids() {
        for (h, w) in [(1, 1), (1, 5), (5, 1)] {
            let c = cfg(h, w, vec![true; h * w], 2.0);
            let d: Vec<f64> = (0..h * w).map(|i| i as f64).collect();
            let r = c.apply_a(&d).unwrap();
            assert_eq!(r.rx.len(), h * (w - 1));
            assert_eq!(r.ry.len(), (h - 1) * w);
            assert_eq!(c.apply_normal(&d).unwrap(), c.apply_at(&r).unwrap());
        }
    }
}
