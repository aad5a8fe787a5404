use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::Sample;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip_horizontal: f64,
    pub flip_vertical: f64,
    /// Allowed rotations in degrees, each a multiple of 90.
    pub rotation: Vec<u32>,
    pub scale_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_horizontal: 0.5,
            flip_vertical: 0.5,
            rotation: vec![0, 90, 180, 270],
            scale_range: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    /// Leaves every sample untouched.
    pub fn identity() -> Self {
        Self {
            flip_horizontal: 0.0,
            flip_vertical: 0.0,
            rotation: vec![0],
            scale_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(format!("augmentation: {m}")));
        for (name, p) in [("flip_horizontal", self.flip_horizontal), ("flip_vertical", self.flip_vertical)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.rotation.is_empty() {
            return bad("rotation set is empty".into());
        }
        if let Some(a) = self.rotation.iter().find(|&&a| a % 90 != 0 || a >= 360) {
            return bad(format!("rotation {a} is not one of 0, 90, 180, 270"));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("scale range ({lo}, {hi}) must be positive and ordered"));
        }
        Ok(())
    }
}

/// Rebuilds a square sample by reading each output pixel from a source
/// coordinate.
fn remap(sample: &Sample, f: impl Fn(usize, usize) -> (usize, usize)) -> Sample {
    let n = sample.size();
    let channels = sample.image.shape().channels;
    let image = Tensor::from_fn([1, channels, n, n], |[_, c, y, x]| {
        let (sx, sy) = f(x, y);
        sample.image.at(0, c, sy, sx)
    });
    let mut mask = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (sx, sy) = f(x, y);
            mask.push(sample.mask[sy * n + sx]);
        }
    }
    Sample {
        image,
        mask,
        ..sample.clone()
    }
}

pub fn flip_horizontal(sample: &Sample) -> Sample {
    let n = sample.size();
    remap(sample, |x, y| (n - 1 - x, y))
}

pub fn flip_vertical(sample: &Sample) -> Sample {
    let n = sample.size();
    remap(sample, |x, y| (x, n - 1 - y))
}

/// Rotates by `quarters` × 90° clockwise.
pub fn rotate_quarters(sample: &Sample, quarters: u32) -> Sample {
    let n = sample.size();
    match quarters % 4 {
        0 => sample.clone(),
        1 => remap(sample, |x, y| (y, n - 1 - x)),
        2 => remap(sample, |x, y| (n - 1 - x, n - 1 - y)),
        _ => remap(sample, |x, y| (n - 1 - y, x)),
    }
}

/// Zooms by `factor` about the tile centre, keeping the tile size. Image
/// values are interpolated bilinearly and masks take the nearest label;
/// coordinates past the border clamp to the edge.
pub fn scale(sample: &Sample, factor: f64) -> Sample {
    if factor == 1.0 {
        return sample.clone();
    }
    let n = sample.size();
    let centre = n as f64 / 2.0;
    let last = (n - 1) as f64;
    let src = |i: usize| ((i as f64 + 0.5 - centre) / factor + centre - 0.5).clamp(0.0, last);
    let channels = sample.image.shape().channels;
    let image = Tensor::from_fn([1, channels, n, n], |[_, c, y, x]| {
        let (sx, sy) = (src(x), src(y));
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(n - 1), (y0 + 1).min(n - 1));
        let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
        let at = |xx, yy| sample.image.at(0, c, yy, xx);
        let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
        let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    });
    let mut mask = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (sx, sy) = (src(x).round() as usize, src(y).round() as usize);
            mask.push(sample.mask[sy * n + sx]);
        }
    }
    Sample {
        image,
        mask,
        ..sample.clone()
    }
}

/// Applies one random transform to image and mask together. Four variates
/// are drawn on every call, in a fixed order, whatever the configuration.
pub fn augment_sample<R: Rng>(sample: &Sample, config: &AugmentConfig, rng: &mut R) -> Sample {
    let h = rng.random::<f64>() < config.flip_horizontal;
    let v = rng.random::<f64>() < config.flip_vertical;
    let angle = config.rotation[rng.random_range(0..config.rotation.len())];
    let u = rng.random::<f64>();
    let (lo, hi) = config.scale_range;
    let factor = lo + (hi - lo) * u;

    let mut out = if h { flip_horizontal(sample) } else { sample.clone() };
    if v {
        out = flip_vertical(&out);
    }
    out = rotate_quarters(&out, angle / 90);
    scale(&out, factor)
}
