//! Counterfactual attribution and masking augmentation.
//!
//! Grad-CAM gives a per-class attribution map over the pooled feature
//! map: channel weights are the spatially averaged score gradients, the
//! map is the ReLU of the weighted channel sum. The counterfactual map
//! answers "why this category and not that one" by damping regions the
//! counter category also activates:
//!
//! ```text
//! A = norm( A_c * (max(A_c') - A_c') )
//! ```
//!
//! with min-max normalization to \[0,1\]. Thresholding the upsampled map
//! yields a binary erasure mask; erased pixels are refilled with uniform
//! random bytes from a seeded generator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::knowledge::{top_counter_categories, KnowledgeMatrix};
use crate::toymodel::{ToyImage, ToyModel, ToyModelParams};

/// Dense `width x height x channels` feature tensor, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapTensor {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Indexed `(y * width + x) * channels + c`.
    pub values: Vec<f64>,
}

impl FeatureMapTensor {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid("feature map dimensions must be positive"));
        }
        if values.len() != width * height * channels {
            return Err(Error::dimension(format!(
                "feature map holds {} values, expected {}",
                values.len(),
                width * height * channels
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map contains non-finite values"));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + c]
    }
}

/// Nonnegative saliency grid over a feature map or image box.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub width: usize,
    pub height: usize,
    /// Indexed `y * width + x`.
    pub grid: Vec<f64>,
}

impl AttributionMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.grid[y * self.width + x]
    }

    pub fn max_value(&self) -> f64 {
        self.grid.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Binary erasure mask at image resolution: 1 keeps a pixel, 0 erases.
#[derive(Debug, Clone, PartialEq)]
pub struct ErasureMask {
    pub width: usize,
    pub height: usize,
    pub grid: Vec<u8>,
}

impl ErasureMask {
    pub fn erased_fraction(&self) -> f64 {
        let zeros = self.grid.iter().filter(|v| **v == 0).count();
        zeros as f64 / self.grid.len() as f64
    }
}

/// Masked copy of a sample; flagged so the prototype bank ignores it.
#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub image: ToyImage,
    pub counter_category: usize,
    pub mask: ErasureMask,
}

/// Spatially averaged score gradients per channel.
pub fn channel_weights(grad_map: &FeatureMapTensor) -> Vec<f64> {
    let area = (grad_map.width * grad_map.height) as f64;
    let mut alpha = vec![0.0; grad_map.channels];
    for y in 0..grad_map.height {
        for x in 0..grad_map.width {
            for c in 0..grad_map.channels {
                alpha[c] += grad_map.get(x, y, c);
            }
        }
    }
    for a in &mut alpha {
        *a /= area;
    }
    alpha
}

/// ReLU of the channel-weighted feature sum.
pub fn gradcam(f_pool: &FeatureMapTensor, alpha: &[f64]) -> Result<AttributionMap> {
    if alpha.len() != f_pool.channels {
        return Err(Error::dimension(format!(
            "{} channel weights for {} channels",
            alpha.len(),
            f_pool.channels
        )));
    }
    let mut grid = vec![0.0; f_pool.width * f_pool.height];
    for y in 0..f_pool.height {
        for x in 0..f_pool.width {
            let mut acc = 0.0;
            for (c, a) in alpha.iter().enumerate() {
                acc += a * f_pool.get(x, y, c);
            }
            grid[y * f_pool.width + x] = acc.max(0.0);
        }
    }
    Ok(AttributionMap {
        width: f_pool.width,
        height: f_pool.height,
        grid,
    })
}

/// Min-max normalization to \[0,1\]; a constant map collapses to all zeros.
pub fn norm(map: &AttributionMap) -> AttributionMap {
    let min = map.grid.iter().copied().fold(f64::INFINITY, f64::min);
    let max = map.grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let grid = if range <= 0.0 {
        vec![0.0; map.grid.len()]
    } else {
        map.grid.iter().map(|v| (v - min) / range).collect()
    };
    AttributionMap {
        width: map.width,
        height: map.height,
        grid,
    }
}

/// Counterfactual attribution: strong where the target category activates
/// and the counter category does not.
pub fn counterfactual_map(
    a_c: &AttributionMap,
    a_counter: &AttributionMap,
) -> Result<AttributionMap> {
    if a_c.width != a_counter.width || a_c.height != a_counter.height {
        return Err(Error::dimension(format!(
            "attribution maps {}x{} vs {}x{}",
            a_c.width, a_c.height, a_counter.width, a_counter.height
        )));
    }
    let max_counter = a_counter.max_value();
    let grid: Vec<f64> = a_c
        .grid
        .iter()
        .zip(a_counter.grid.iter())
        .map(|(c, cc)| c * (max_counter - cc))
        .collect();
    Ok(norm(&AttributionMap {
        width: a_c.width,
        height: a_c.height,
        grid,
    }))
}

/// Bilinear resampling to `(width, height)`, corner-aligned. Output
/// values stay inside the input's range.
pub fn upsample_bilinear(map: &AttributionMap, width: usize, height: usize) -> AttributionMap {
    let mut grid = vec![0.0; width * height];
    let sx = if width > 1 {
        (map.width - 1) as f64 / (width - 1) as f64
    } else {
        0.0
    };
    let sy = if height > 1 {
        (map.height - 1) as f64 / (height - 1) as f64
    } else {
        0.0
    };
    for y in 0..height {
        let fy = y as f64 * sy;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(map.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..width {
            let fx = x as f64 * sx;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(map.width - 1);
            let wx = fx - x0 as f64;
            let top = map.get(x0, y0) * (1.0 - wx) + map.get(x1, y0) * wx;
            let bottom = map.get(x0, y1) * (1.0 - wx) + map.get(x1, y1) * wx;
            grid[y * width + x] = top * (1.0 - wy) + bottom * wy;
        }
    }
    AttributionMap {
        width,
        height,
        grid,
    }
}

/// Thresholding rule: attribution at or above `t` is erased (mask 0),
/// everything below survives (mask 1). `t` must lie strictly in (0,1).
pub fn erase_mask(map: &AttributionMap, t: f64) -> Result<ErasureMask> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid(format!(
            "erase threshold {t} must lie in (0,1)"
        )));
    }
    let grid = map
        .grid
        .iter()
        .map(|&v| if v >= t { 0 } else { 1 })
        .collect();
    Ok(ErasureMask {
        width: map.width,
        height: map.height,
        grid,
    })
}

/// Keeps pixels where the mask is 1 and refills erased pixels with
/// uniform random bytes, drawn channel-by-channel in row-major order from
/// the given generator.
pub fn apply_mask(image: &ToyImage, mask: &ErasureMask, rng: &mut ChaCha8Rng) -> Result<ToyImage> {
    if mask.width != image.width || mask.height != image.height {
        return Err(Error::dimension(format!(
            "mask {}x{} does not cover image {}x{}",
            mask.width, mask.height, image.width, image.height
        )));
    }
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            if mask.grid[y * mask.width + x] == 0 {
                for c in 0..3 {
                    out.set_pixel(x, y, c, rng.gen_range(0..=255u8));
                }
            }
        }
    }
    Ok(out)
}

/// End-to-end counterfactual augmentation of one sample: pick a counter
/// category among the `k_e` most similar, build both attribution maps,
/// combine, upsample to the image, threshold at `t`, erase.
pub fn augment(
    image: &ToyImage,
    params: &ToyModelParams,
    model: &ToyModel,
    zeta: &KnowledgeMatrix,
    k_e: usize,
    t: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedSample> {
    let candidates = top_counter_categories(zeta, image.label, k_e)?;
    let counter = candidates[rng.gen_range(0..candidates.len())];
    let map = counterfactual_for_pair(image, params, model, image.label, counter)?;
    let up = upsample_bilinear(&map, image.width, image.height);
    let mask = erase_mask(&up, t)?;
    let mut augmented = apply_mask(image, &mask, rng)?;
    augmented.is_augmented = true;
    Ok(AugmentedSample {
        image: augmented,
        counter_category: counter,
        mask,
    })
}

/// Normalized counterfactual map for an explicit (category, counter) pair
/// at feature-map resolution.
pub fn counterfactual_for_pair(
    image: &ToyImage,
    params: &ToyModelParams,
    model: &ToyModel,
    category: usize,
    counter: usize,
) -> Result<AttributionMap> {
    let a_c = gradcam_for_class(image, params, model, category)?;
    let a_counter = gradcam_for_class(image, params, model, counter)?;
    counterfactual_map(&a_c, &a_counter)
}

/// Grad-CAM map of one class on one image.
pub fn gradcam_for_class(
    image: &ToyImage,
    params: &ToyModelParams,
    model: &ToyModel,
    class: usize,
) -> Result<AttributionMap> {
    let forward = model.forward(params, image);
    let grad = model.score_feature_gradient(params, &forward, class)?;
    let alpha = channel_weights(&grad);
    gradcam(&forward.feature_map, &alpha)
}
