use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::DepthMap;

/// Recipe for a piecewise-smooth synthetic depth map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Number of tilted planar components summed onto the base depth.
    pub planes: usize,
    /// Number of spherical caps (bumps or dents).
    pub caps: usize,
    /// Number of half-plane depth discontinuities.
    pub steps: usize,
    /// Maximum plane slope, as a fraction of the half depth range across the image.
    pub tilt: f64,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            seed: 0,
            planes: 2,
            caps: 3,
            steps: 2,
            tilt: 0.6,
            min_depth: 1.0,
            max_depth: 10.0,
        }
    }
}

impl SceneSpec {
    pub fn sized(height: usize, width: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::shape("scene dimensions must be >= 1"));
        }
        if self.min_depth.is_nan()
            || self.min_depth <= 0.0
            || !self.max_depth.is_finite()
            || self.max_depth < self.min_depth
        {
            return Err(Error::domain(format!(
                "depth range [{}, {}] must be positive and ordered",
                self.min_depth, self.max_depth
            )));
        }
        if !self.tilt.is_finite() || self.tilt < 0.0 {
            return Err(Error::domain("tilt must be finite and non-negative"));
        }
        Ok(())
    }
}

struct Cap {
    cx: f64,
    cy: f64,
    radius: f64,
    amplitude: f64,
}

struct Step {
    px: f64,
    py: f64,
    nx: f64,
    ny: f64,
    offset: f64,
}

/// Render a scene. Pure function of `spec`; values lie in `[min_depth, max_depth]`.
pub fn synth_scene(spec: &SceneSpec) -> Result<DepthMap> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mid = 0.5 * (spec.min_depth + spec.max_depth);
    let half = 0.5 * (spec.max_depth - spec.min_depth);

    let planes: Vec<(f64, f64)> = (0..spec.planes)
        .map(|_| {
            let a = rng.random_range(-1.0..=1.0);
            let b = rng.random_range(-1.0..=1.0);
            (spec.tilt * half * a, spec.tilt * half * b)
        })
        .collect();
    let caps: Vec<Cap> = (0..spec.caps)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Cap {
                cx: rng.random_range(-0.5..0.5),
                cy: rng.random_range(-0.5..0.5),
                radius: rng.random_range(0.1..0.35),
                amplitude: sign * rng.random_range(0.2..0.6) * half,
            }
        })
        .collect();
    let steps: Vec<Step> = (0..spec.steps)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Step {
                px: rng.random_range(-0.3..0.3),
                py: rng.random_range(-0.3..0.3),
                nx: angle.cos(),
                ny: angle.sin(),
                offset: sign * rng.random_range(0.2..0.5) * half,
            }
        })
        .collect();

    let (h, w) = (spec.height, spec.width);
    let scale = h.max(w) as f64;
    let mut values = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            // normalised coordinates, roughly in (-0.5, 0.5)
            let x = (c as f64 + 0.5) / w as f64 - 0.5;
            let y = (r as f64 + 0.5) / h as f64 - 0.5;
            let mut v = mid;
            for &(a, b) in &planes {
                v += a * x + b * y;
            }
            for cap in &caps {
                let dx = (x - cap.cx) * w as f64 / scale;
                let dy = (y - cap.cy) * h as f64 / scale;
                let t = 1.0 - (dx * dx + dy * dy) / (cap.radius * cap.radius);
                if t > 0.0 {
                    v += cap.amplitude * t.sqrt();
                }
            }
            for s in &steps {
                if (x - s.px) * s.nx + (y - s.py) * s.ny > 0.0 {
                    v += s.offset;
                }
            }
            values.push(v);
        }
    }

    let spread = values.iter().map(|v| (v - mid).abs()).fold(0.0, f64::max);
    if spread > half {
        let s = half / spread;
        for v in &mut values {
            *v = (mid + (*v - mid) * s).clamp(spec.min_depth, spec.max_depth);
        }
    }
    DepthMap::new(h, w, values)
}
