//! Dense reference solver: assembles `A` row by row from the energy
//! definition and solves the normal equations by Cholesky factorization.
//! Shares no code with the matrix-free operators it is used to check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{ConfidenceMap, DepthMap, GradientField, SparseObservations};

/// Largest number of unknowns the dense solver accepts.
pub const DENSE_CAP: usize = 400;

/// Explicit least-squares system `min ||A d - b||^2`.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl DenseSystem {
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        self.a.transpose() * &self.a
    }

    pub fn normal_rhs(&self) -> DVector<f64> {
        self.a.transpose() * &self.b
    }
}

/// Assemble `A` and `b`; rows are x-differences, y-differences, then one
/// observation row per pixel.
pub fn dense_system(
    height: usize,
    width: usize,
    g: Option<&GradientField>,
    obs: &SparseObservations,
    conf: Option<&ConfidenceMap>,
    alpha: f64,
) -> Result<DenseSystem> {
    let n = height * width;
    if n > DENSE_CAP {
        return Err(Error::Size {
            unknowns: n,
            cap: DENSE_CAP,
        });
    }
    let nx = height * (width - 1);
    let ny = (height - 1) * width;
    let rows = nx + ny + n;
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    let idx = |r: usize, c: usize| r * width + c;

    let mut row = 0;
    for r in 0..height {
        for c in 1..width {
            a[(row, idx(r, c))] = 1.0;
            a[(row, idx(r, c - 1))] = -1.0;
            b[row] = g.map_or(0.0, |g| g.gx()[r * (width - 1) + c - 1]);
            row += 1;
        }
    }
    for r in 1..height {
        for c in 0..width {
            a[(row, idx(r, c))] = 1.0;
            a[(row, idx(r - 1, c))] = -1.0;
            b[row] = g.map_or(0.0, |g| g.gy()[(r - 1) * width + c]);
            row += 1;
        }
    }
    for p in 0..n {
        if obs.mask().bits()[p] {
            let c = conf.map_or(1.0, |c| c.values()[p]);
            let w = (alpha * c).sqrt();
            a[(row, p)] = w;
            b[row] = w * obs.values()[p];
        }
        row += 1;
    }
    Ok(DenseSystem { a, b })
}

/// Minimiser of the integration energy by direct factorization.
pub fn dense_oracle_solve(
    g: &GradientField,
    obs: &SparseObservations,
    conf: Option<&ConfidenceMap>,
    alpha: f64,
) -> Result<DepthMap> {
    let (h, w) = (g.height(), g.width());
    if obs.height() != h || obs.width() != w {
        return Err(Error::shape(
            "gradient field and observations differ in shape",
        ));
    }
    if h * w > DENSE_CAP {
        return Err(Error::Size {
            unknowns: h * w,
            cap: DENSE_CAP,
        });
    }
    if obs.count() == 0 {
        return Err(Error::SingularSystem);
    }
    let sys = dense_system(h, w, Some(g), obs, conf, alpha)?;
    let chol = sys
        .normal_matrix()
        .cholesky()
        .ok_or(Error::SingularSystem)?;
    let x = chol.solve(&sys.normal_rhs());
    DepthMap::new(h, w, x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{finite_difference, Mask};

    #[test]
    fn worked_one_by_two() {
        let g = GradientField::new(1, 2, vec![1.0], vec![]).unwrap();
        let obs = SparseObservations::from_points(1, 2, [(0, 0, 0.0), (0, 1, 2.0)]).unwrap();
        let d = dense_oracle_solve(&g, &obs, None, 5.0).unwrap();
        assert!((d.get(0, 0) - 1.0 / 7.0).abs() < 1e-14);
        assert!((d.get(0, 1) - 13.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn consistent_data_is_recovered() {
        let gt =
            DepthMap::from_fn(5, 6, |r, c| 1.0 + (r as f64 * 0.9).sin() + 0.2 * c as f64).unwrap();
        let obs = SparseObservations::from_depth(
            &gt,
            &Mask::new(5, 6, (0..30).map(|i| i == 17).collect()).unwrap(),
        )
        .unwrap();
        let d = dense_oracle_solve(&finite_difference(&gt), &obs, None, 5.0).unwrap();
        assert!(d.max_abs_diff(&gt) < 1e-12);
    }

    #[test]
    fn errors() {
        let g = GradientField::zeros(21, 20).unwrap();
        let obs = SparseObservations::from_points(21, 20, [(0, 0, 1.0)]).unwrap();
        assert!(matches!(
            dense_oracle_solve(&g, &obs, None, 5.0),
            Err(Error::Size { .. })
        ));
        let g = GradientField::zeros(3, 3).unwrap();
        assert!(matches!(
            dense_oracle_solve(&g, &SparseObservations::empty(3, 3).unwrap(), None, 5.0),
            Err(Error::SingularSystem)
        ));
    }
}
