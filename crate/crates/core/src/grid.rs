//! Grid value types and the resampling / differencing operations on them.
//!
//! Every grid is stored row-major: row (y) outer, column (x) inner, so pixel
//! `(row, col)` lives at flat index `row * width + col`. The solver, the
//! operators and the file formats all share this convention.

use crate::error::{Error, Result};

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::shape(format!(
            "grid dimensions must be >= 1, got {height}x{width}"
        )));
    }
    Ok(())
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::shape(format!(
            "{what}: expected {expected} entries, got {got}"
        )));
    }
    Ok(())
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::domain(format!(
            "{what}: non-finite value at index {i}"
        )));
    }
    Ok(())
}

/// Dense per-pixel depth in meters. Also used for depth-shaped cotangents.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        check_len("depth map", height * width, values.len())?;
        check_finite("depth map", &values)?;
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values)
    }

    /// Inverse of [`DepthMap::flatten`].
    pub fn unflatten(height: usize, width: usize, flat: &[f64]) -> Result<Self> {
        Self::new(height, width, flat.to_vec())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row-major copy of the values.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_shape(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn max_abs_diff(&self, other: &DepthMap) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Top-left `height x width` sub-grid.
    pub fn crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width {
            return Err(Error::shape(format!(
                "cannot crop {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        Self::from_fn(height, width, |r, c| self.get(r, c))
    }
}

/// Boolean validity mask over a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(height, width)?;
        check_len("mask", height * width, bits.len())?;
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![true; height * width])
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![false; height * width])
    }

    /// Pixels where `depth > 0`.
    pub fn positive(depth: &DepthMap) -> Self {
        Self {
            height: depth.height,
            width: depth.width,
            bits: depth.values.iter().map(|&v| v > 0.0).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Depth differences between neighbouring pixels, stored compactly.
///
/// `gx` holds `height * (width - 1)` entries: entry `(r, c - 1)` is
/// `D[r][c] - D[r][c - 1]` for `c in 1..width`. `gy` holds
/// `(height - 1) * width` entries: entry `(r - 1, c)` is `D[r][c] - D[r - 1][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    height: usize,
    width: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn new(height: usize, width: usize, gx: Vec<f64>, gy: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        check_len("gradient gx", height * (width - 1), gx.len())?;
        check_len("gradient gy", (height - 1) * width, gy.len())?;
        check_finite("gradient gx", &gx)?;
        check_finite("gradient gy", &gy)?;
        Ok(Self {
            height,
            width,
            gx,
            gy,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        check_dims(height, width)?;
        Ok(Self {
            height,
            width,
            gx: vec![0.0; height * (width - 1)],
            gy: vec![0.0; (height - 1) * width],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn gx(&self) -> &[f64] {
        &self.gx
    }

    pub fn gy(&self) -> &[f64] {
        &self.gy
    }

    /// Total number of gradient entries (`gx` then `gy`).
    pub fn len(&self) -> usize {
        self.gx.len() + self.gy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries as one vector, `gx` first.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.gx);
        v.extend_from_slice(&self.gy);
        v
    }

    pub fn from_flat(height: usize, width: usize, flat: &[f64]) -> Result<Self> {
        check_dims(height, width)?;
        let nx = height * (width - 1);
        check_len("gradient field", nx + (height - 1) * width, flat.len())?;
        Self::new(height, width, flat[..nx].to_vec(), flat[nx..].to_vec())
    }

    /// Zero-padded `2 x height x width` layout: channel 0 is x, channel 1 is y,
    /// with zeros in column 0 (x) and row 0 (y).
    pub fn to_padded(&self) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let mut out = vec![0.0; 2 * h * w];
        for r in 0..h {
            for c in 1..w {
                out[r * w + c] = self.gx[r * (w - 1) + c - 1];
            }
        }
        for r in 1..h {
            for c in 0..w {
                out[h * w + r * w + c] = self.gy[(r - 1) * w + c];
            }
        }
        out
    }

    /// Inverse of [`GradientField::to_padded`]; the padding entries are ignored.
    pub fn from_padded(height: usize, width: usize, padded: &[f64]) -> Result<Self> {
        check_dims(height, width)?;
        check_len("padded gradient field", 2 * height * width, padded.len())?;
        let (h, w) = (height, width);
        let mut gx = Vec::with_capacity(h * (w - 1));
        for r in 0..h {
            gx.extend((1..w).map(|c| padded[r * w + c]));
        }
        let gy = padded[h * w + w..].to_vec();
        Self::new(h, w, gx, gy)
    }

    fn zip_with(&self, other: &GradientField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::shape(format!(
                "gradient fields {}x{} and {}x{} differ",
                self.height, self.width, other.height, other.width
            )));
        }
        let gx = self
            .gx
            .iter()
            .zip(&other.gx)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let gy = self
            .gy
            .iter()
            .zip(&other.gy)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.height, self.width, gx, gy)
    }

    pub fn add(&self, other: &GradientField) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GradientField) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.gx.iter().map(|v| v * s).collect(),
            self.gy.iter().map(|v| v * s).collect(),
        )
    }

    pub fn l1_distance(&self, other: &GradientField) -> Result<f64> {
        let d = self.sub(other)?;
        Ok(d.gx.iter().chain(&d.gy).map(|v| v.abs()).sum())
    }
}

/// Sparse depth observations: values in meters plus a validity mask.
///
/// Valid observations must be non-negative; zero is accepted so that
/// synthetic problems may anchor at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseObservations {
    values: Vec<f64>,
    mask: Mask,
}

impl SparseObservations {
    pub fn new(values: Vec<f64>, mask: Mask) -> Result<Self> {
        check_len("observation values", mask.bits.len(), values.len())?;
        check_finite("observation values", &values)?;
        if let Some(i) = values
            .iter()
            .zip(&mask.bits)
            .position(|(&v, &m)| m && v < 0.0)
        {
            return Err(Error::domain(format!(
                "observation at index {i} is valid but negative ({})",
                values[i]
            )));
        }
        Ok(Self { values, mask })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(vec![0.0; height * width], Mask::empty(height, width)?)
    }

    /// Observations at every pixel of `depth` selected by `mask`; zero elsewhere.
    pub fn from_depth(depth: &DepthMap, mask: &Mask) -> Result<Self> {
        if !depth.same_shape(mask.height, mask.width) {
            return Err(Error::shape("depth map and mask differ in shape"));
        }
        let values = depth
            .values
            .iter()
            .zip(&mask.bits)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Self::new(values, mask.clone())
    }

    /// Build from `(row, col, depth)` triples. Later duplicates overwrite earlier ones.
    pub fn from_points(
        height: usize,
        width: usize,
        points: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        check_dims(height, width)?;
        let mut values = vec![0.0; height * width];
        let mut bits = vec![false; height * width];
        for (r, c, d) in points {
            if r >= height || c >= width {
                return Err(Error::shape(format!(
                    "observation ({r}, {c}) outside {height}x{width} grid"
                )));
            }
            values[r * width + c] = d;
            bits[r * width + c] = true;
        }
        Self::new(values, Mask::new(height, width, bits)?)
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.count()
    }

    /// Valid observations as `(row, col, depth)` in row-major order.
    pub fn points(&self) -> Vec<(usize, usize, f64)> {
        let w = self.width();
        self.mask
            .bits
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i / w, i % w, self.values[i]))
            .collect()
    }

    /// Same values, restricted to pixels where `keep` is set.
    pub fn restrict(&self, keep: impl Fn(usize, usize) -> bool) -> Self {
        let w = self.width();
        let bits: Vec<bool> = self
            .mask
            .bits
            .iter()
            .enumerate()
            .map(|(i, &m)| m && keep(i / w, i % w))
            .collect();
        let values = self
            .values
            .iter()
            .zip(&bits)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Self {
            values,
            mask: Mask {
                height: self.height(),
                width: w,
                bits,
            },
        }
    }

    pub fn crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height() || width > self.width() {
            return Err(Error::shape("crop larger than observation grid"));
        }
        let w0 = self.width();
        let mut values = Vec::with_capacity(height * width);
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(self.values[r * w0 + c]);
                bits.push(self.mask.bits[r * w0 + c]);
            }
        }
        Self::new(values, Mask::new(height, width, bits)?)
    }
}

/// Per-pixel observation confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        check_len("confidence map", height * width, values.len())?;
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain(format!(
                "confidence at index {i} is {} (must lie in [0, 1])",
                values[i]
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn ones(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![1.0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn with_value(&self, index: usize, value: f64) -> Result<Self> {
        let mut values = self.values.clone();
        values[index] = value;
        Self::new(self.height, self.width, values)
    }
}

/// Number of coefficients per high-resolution pixel (3x3 neighbourhood).
pub const NEIGHBOURS: usize = 9;

/// Convex upsampling coefficients.
///
/// One 9-vector per high-resolution pixel, high-resolution row-major. Within a
/// 9-vector the neighbourhood is ordered row-major over offsets
/// `dy, dx in {-1, 0, 1}`, so index 4 is the parent cell itself.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleWeights {
    low_height: usize,
    low_width: usize,
    factor: usize,
    weights: Vec<[f64; NEIGHBOURS]>,
}

impl UpsampleWeights {
    /// Only checks sizes; the simplex condition is checked by [`convex_upsample`].
    pub fn new(
        low_height: usize,
        low_width: usize,
        factor: usize,
        weights: Vec<[f64; NEIGHBOURS]>,
    ) -> Result<Self> {
        check_dims(low_height, low_width)?;
        if factor == 0 {
            return Err(Error::shape("upsample factor must be >= 1"));
        }
        check_len(
            "upsample weights",
            low_height * factor * low_width * factor,
            weights.len(),
        )?;
        Ok(Self {
            low_height,
            low_width,
            factor,
            weights,
        })
    }

    fn constant(
        low_height: usize,
        low_width: usize,
        factor: usize,
        w: [f64; NEIGHBOURS],
    ) -> Result<Self> {
        let n = low_height * factor * low_width * factor;
        Self::new(low_height, low_width, factor, vec![w; n])
    }

    /// Equal weight 1/9 on every neighbour.
    pub fn uniform(low_height: usize, low_width: usize, factor: usize) -> Result<Self> {
        Self::constant(low_height, low_width, factor, [1.0 / 9.0; NEIGHBOURS])
    }

    /// All weight on the parent cell: nearest-neighbour replication.
    pub fn nearest(low_height: usize, low_width: usize, factor: usize) -> Result<Self> {
        let mut w = [0.0; NEIGHBOURS];
        w[4] = 1.0;
        Self::constant(low_height, low_width, factor, w)
    }

    pub fn low_height(&self) -> usize {
        self.low_height
    }

    pub fn low_width(&self) -> usize {
        self.low_width
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn weights(&self) -> &[[f64; NEIGHBOURS]] {
        &self.weights
    }

    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.weights.iter().enumerate() {
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&v| !v.is_finite() || v < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::domain(format!(
                    "upsample weights at pixel {i} are not a convex combination (sum {sum})"
                )));
            }
        }
        Ok(())
    }

    /// Flat low-resolution index of neighbour `k` of the parent of high-res pixel `(hr, hc)`.
    fn neighbour_index(&self, hr: usize, hc: usize, k: usize) -> usize {
        let pr = (hr / self.factor) as isize;
        let pc = (hc / self.factor) as isize;
        let dy = (k / 3) as isize - 1;
        let dx = (k % 3) as isize - 1;
        let r = (pr + dy).clamp(0, self.low_height as isize - 1) as usize;
        let c = (pc + dx).clamp(0, self.low_width as isize - 1) as usize;
        r * self.low_width + c
    }
}

/// Forward differences along x and y.
pub fn finite_difference(depth: &DepthMap) -> GradientField {
    let (h, w) = (depth.height, depth.width);
    let d = &depth.values;
    let mut gx = Vec::with_capacity(h * (w - 1));
    for r in 0..h {
        gx.extend((1..w).map(|c| d[r * w + c] - d[r * w + c - 1]));
    }
    let gy = (w..h * w).map(|p| d[p] - d[p - w]).collect();
    GradientField {
        height: h,
        width: w,
        gx,
        gy,
    }
}

/// Average of valid observations over each `factor x factor` window.
///
/// A window with no valid input yields value 0 and mask 0.
pub fn masked_avg_pool(obs: &SparseObservations, factor: usize) -> Result<SparseObservations> {
    if factor == 0 {
        return Err(Error::shape("pooling factor must be >= 1"));
    }
    let (h, w) = (obs.height(), obs.width());
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(format!(
            "pooling factor {factor} does not divide {h}x{w}; crop first"
        )));
    }
    let (lh, lw) = (h / factor, w / factor);
    let mut values = vec![0.0; lh * lw];
    let mut bits = vec![false; lh * lw];
    for lr in 0..lh {
        for lc in 0..lw {
            let mut sum = 0.0;
            let mut n = 0usize;
            for r in lr * factor..(lr + 1) * factor {
                for c in lc * factor..(lc + 1) * factor {
                    if obs.mask.bits[r * w + c] {
                        sum += obs.values[r * w + c];
                        n += 1;
                    }
                }
            }
            if n > 0 {
                values[lr * lw + lc] = sum / n as f64;
                bits[lr * lw + lc] = true;
            }
        }
    }
    SparseObservations::new(values, Mask::new(lh, lw, bits)?)
}

/// Plain average pooling of a dense map.
pub fn avg_pool(depth: &DepthMap, factor: usize) -> Result<DepthMap> {
    let all = SparseObservations {
        values: depth.values.clone(),
        mask: Mask::full(depth.height, depth.width)?,
    };
    let pooled = masked_avg_pool(&all, factor)?;
    DepthMap::new(pooled.height(), pooled.width(), pooled.values)
}

fn check_upsample_shape(low: &DepthMap, weights: &UpsampleWeights) -> Result<()> {
    if !low.same_shape(weights.low_height, weights.low_width) {
        return Err(Error::shape(format!(
            "low-resolution map is {}x{} but weights expect {}x{}",
            low.height, low.width, weights.low_height, weights.low_width
        )));
    }
    Ok(())
}

/// Each high-resolution pixel is a convex combination of the 3x3 neighbourhood
/// of its parent cell, with the border replicated.
pub fn convex_upsample(low: &DepthMap, weights: &UpsampleWeights) -> Result<DepthMap> {
    check_upsample_shape(low, weights)?;
    weights.validate()?;
    let f = weights.factor;
    let (hh, hw) = (low.height * f, low.width * f);
    let mut out = Vec::with_capacity(hh * hw);
    for hr in 0..hh {
        for hc in 0..hw {
            let wv = &weights.weights[hr * hw + hc];
            let v = (0..NEIGHBOURS)
                .map(|k| wv[k] * low.values[weights.neighbour_index(hr, hc, k)])
                .sum();
            out.push(v);
        }
    }
    DepthMap::new(hh, hw, out)
}

/// Transpose of [`convex_upsample`] with respect to the low-resolution map.
pub fn convex_upsample_vjp(grad_high: &DepthMap, weights: &UpsampleWeights) -> Result<DepthMap> {
    let f = weights.factor;
    let (hh, hw) = (weights.low_height * f, weights.low_width * f);
    if !grad_high.same_shape(hh, hw) {
        return Err(Error::shape("cotangent does not match upsampled shape"));
    }
    let mut out = vec![0.0; weights.low_height * weights.low_width];
    for hr in 0..hh {
        for hc in 0..hw {
            let g = grad_high.values[hr * hw + hc];
            let wv = &weights.weights[hr * hw + hc];
            for (k, wk) in wv.iter().enumerate() {
                out[weights.neighbour_index(hr, hc, k)] += wk * g;
            }
        }
    }
    DepthMap::new(weights.low_height, weights.low_width, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_is_row_major() {
        let d = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(d.get(1, 0), 3.0);
        assert_eq!(d.flatten(), vec![1.0, 2.0, 3.0, 4.0]);
        let one = DepthMap::filled(1, 1, 7.0).unwrap();
        assert_eq!(one.flatten(), vec![7.0]);
        assert_eq!(DepthMap::unflatten(2, 2, &d.flatten()).unwrap(), d);
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(matches!(DepthMap::new(0, 3, vec![]), Err(Error::Shape(_))));
        assert!(matches!(
            DepthMap::new(2, 2, vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            DepthMap::new(1, 1, vec![f64::NAN]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            ConfidenceMap::new(1, 2, vec![0.5, 1.5]),
            Err(Error::Domain(_))
        ));
        let mask = Mask::new(1, 2, vec![true, false]).unwrap();
        assert!(matches!(
            SparseObservations::new(vec![-1.0, 0.0], mask),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn finite_difference_examples() {
        let c = DepthMap::filled(3, 4, 2.5).unwrap();
        let g = finite_difference(&c);
        assert!(g.gx().iter().chain(g.gy()).all(|&v| v == 0.0));
        assert_eq!(g.gx().len(), 9);
        assert_eq!(g.gy().len(), 8);

        let row = DepthMap::new(1, 3, vec![0.0, 1.0, 3.0]).unwrap();
        let g = finite_difference(&row);
        assert_eq!(g.gx(), &[1.0, 2.0]);
        assert!(g.gy().is_empty());

        let col = DepthMap::new(3, 1, vec![1.0, 4.0, 2.0]).unwrap();
        let g = finite_difference(&col);
        assert!(g.gx().is_empty());
        assert_eq!(g.gy(), &[3.0, -2.0]);
    }

    #[test]
    fn padded_round_trip() {
        let d = DepthMap::from_fn(3, 4, |r, c| (r * r) as f64 + 0.5 * c as f64).unwrap();
        let g = finite_difference(&d);
        let p = g.to_padded();
        assert_eq!(p.len(), 24);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[12..16], [0.0; 4]);
        assert_eq!(GradientField::from_padded(3, 4, &p).unwrap(), g);
    }

    #[test]
    fn pooling_examples() {
        let obs = SparseObservations::from_depth(
            &DepthMap::filled(4, 4, 1.75).unwrap(),
            &Mask::full(4, 4).unwrap(),
        )
        .unwrap();
        let p = masked_avg_pool(&obs, 4).unwrap();
        assert_eq!(p.values(), &[1.75]);
        assert!(p.mask().get(0, 0));

        let obs = SparseObservations::from_points(2, 4, [(0, 0, 2.0), (1, 1, 4.0)]).unwrap();
        let p = masked_avg_pool(&obs, 2).unwrap();
        assert_eq!(p.values(), &[3.0, 0.0]);
        assert_eq!(p.mask().bits(), &[true, false]);

        assert!(matches!(masked_avg_pool(&obs, 0), Err(Error::Shape(_))));
        assert!(matches!(masked_avg_pool(&obs, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn upsample_examples() {
        let low = DepthMap::filled(2, 3, 4.0).unwrap();
        let up = convex_upsample(&low, &UpsampleWeights::uniform(2, 3, 4).unwrap()).unwrap();
        assert_eq!((up.height(), up.width()), (8, 12));
        assert!(up.values().iter().all(|&v| (v - 4.0).abs() < 1e-12));

        let low = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = convex_upsample(&low, &UpsampleWeights::nearest(2, 2, 2).unwrap()).unwrap();
        assert_eq!(
            up.values(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );

        // half on the parent (1.0), half on its right neighbour (3.0)
        let low = DepthMap::new(1, 2, vec![1.0, 3.0]).unwrap();
        let mut w = [0.0; NEIGHBOURS];
        w[4] = 0.5;
        w[5] = 0.5;
        let weights = UpsampleWeights::new(1, 2, 1, vec![w; 2]).unwrap();
        let up = convex_upsample(&low, &weights).unwrap();
        assert_eq!(up.get(0, 0), 2.0);
        // right border replicates: both neighbours are the cell itself
        assert_eq!(up.get(0, 1), 3.0);
    }

    #[test]
    fn upsample_rejects_non_convex_weights() {
        let low = DepthMap::filled(1, 1, 1.0).unwrap();
        let mut w = [0.0; NEIGHBOURS];
        w[0] = 1.5;
        w[1] = -0.5;
        let weights = UpsampleWeights::new(1, 1, 1, vec![w]).unwrap();
        assert!(matches!(
            convex_upsample(&low, &weights),
            Err(Error::Domain(_))
        ));
        let weights = UpsampleWeights::uniform(2, 2, 1).unwrap();
        assert!(matches!(
            convex_upsample(&low, &weights),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn upsample_vjp_is_transpose() {
        let low = DepthMap::from_fn(3, 2, |r, c| (r as f64 * 1.3 - c as f64).sin()).unwrap();
        let hi = DepthMap::from_fn(6, 4, |r, c| (r as f64 + 0.7 * c as f64).cos()).unwrap();
        let mut weights = Vec::new();
        for i in 0..24 {
            let mut w = [0.0; NEIGHBOURS];
            for (k, wk) in w.iter_mut().enumerate() {
                *wk = 1.0 + ((i * 7 + k * 3) % 5) as f64;
            }
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            weights.push(w);
        }
        let weights = UpsampleWeights::new(3, 2, 2, weights).unwrap();
        let up = convex_upsample(&low, &weights).unwrap();
        let back = convex_upsample_vjp(&hi, &weights).unwrap();
        let lhs: f64 = up
            .values()
            .iter()
            .zip(hi.values())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = low
            .values()
            .iter()
            .zip(back.values())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn restrict_and_points() {
        let obs =
            SparseObservations::from_points(3, 2, [(0, 1, 1.0), (2, 0, 2.0), (1, 1, 5.0)]).unwrap();
        assert_eq!(obs.points(), vec![(0, 1, 1.0), (1, 1, 5.0), (2, 0, 2.0)]);
        let even = obs.restrict(|r, _| r % 2 == 0);
        assert_eq!(even.points(), vec![(0, 1, 1.0), (2, 0, 2.0)]);
        assert_eq!(even.values()[3], 0.0);
    }
}
