//! Tiny hand-differentiated convolutional classifier and a synthetic
//! few-shot dataset.
//!
//! The architecture is fixed so the reverse pass can be written and
//! audited by hand: two 3x3 valid convolutions with ReLU, global average
//! pooling, and a linear classifier. The post-activation output of the
//! second convolution is the feature map used for attribution; the pooled
//! vector feeds the classifier, the contrastive projection, and the
//! prototype bank. Everything is double precision.
//!
//! Synthetic images are composites of small attribute-keyed parts:
//! categories sharing attribute bits render shared parts, so the binary
//! attribute table is exact ground truth and visually similar categories
//! really are confusable.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::counterfactual::FeatureMapTensor;
use crate::error::{Error, Result};
use crate::io::MatrixFile;
use crate::knowledge::AttributeLabelVector;
use crate::rng::{stream_rng, Stream};

const KERNEL: usize = 3;
const IMAGE_CHANNELS: usize = 3;

/// Which split a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Base,
    Novel,
}

/// One synthetic sample: interleaved RGB bytes, one centered object.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    pub width: usize,
    pub height: usize,
    /// Indexed `(y * width + x) * 3 + c`.
    pub pixels: Vec<u8>,
    pub label: usize,
    pub split: Split,
    pub is_augmented: bool,
}

impl ToyImage {
    pub fn get_pixel(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * 3 + c] = v;
    }

    /// Pixels scaled to \[0,1\], same layout.
    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|p| *p as f64 / 255.0).collect()
    }
}

/// Architecture dimensions. `feature_size = image_size - 4` after two
/// valid 3x3 convolutions; the embedding dimension equals the second
/// convolution's channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub categories: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 16,
            conv1_channels: 6,
            conv2_channels: 12,
            categories: 12,
        }
    }
}

impl ModelConfig {
    pub fn feature_size(&self) -> usize {
        self.image_size - 2 * (KERNEL - 1)
    }

    pub fn embed_dim(&self) -> usize {
        self.conv2_channels
    }

    fn conv1_len(&self) -> usize {
        self.conv1_channels * IMAGE_CHANNELS * KERNEL * KERNEL
    }

    fn conv2_len(&self) -> usize {
        self.conv2_channels * self.conv1_channels * KERNEL * KERNEL
    }
}

/// All learnable tensors, row-major flat buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelParams {
    /// `[out][in][ky][kx]`, in = 3 image channels.
    pub conv1: Vec<f64>,
    /// `[out][in][ky][kx]`, in = conv1 channels.
    pub conv2: Vec<f64>,
    /// `[category][embed_dim]`.
    pub cls_w: Vec<f64>,
    /// `[category]`.
    pub cls_b: Vec<f64>,
    /// Contrastive projection, `[128][embed_dim]`.
    pub proj: Vec<f64>,
}

impl ToyModelParams {
    pub fn parameter_count(&self) -> usize {
        self.conv1.len() + self.conv2.len() + self.cls_w.len() + self.cls_b.len() + self.proj.len()
    }

    /// Checkpoint: one matrix file per tensor plus a JSON config.
    pub fn save(&self, dir: &Path, config: &ModelConfig) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let d = config.embed_dim();
        let tensors: [(&str, &Vec<f64>, usize); 5] = [
            ("conv1", &self.conv1, IMAGE_CHANNELS * KERNEL * KERNEL),
            ("conv2", &self.conv2, config.conv1_channels * KERNEL * KERNEL),
            ("cls_w", &self.cls_w, d),
            ("cls_b", &self.cls_b, config.categories),
            ("proj", &self.proj, d),
        ];
        for (name, data, cols) in tensors {
            let rows = data.len() / cols;
            let m = MatrixFile::new(rows, cols, data.clone())?;
            crate::io::write_matrix(&dir.join(format!("{name}.fsm")), &m)?;
        }
        let text = serde_json::to_string_pretty(config)?;
        std::fs::write(dir.join("model.json"), text + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, ModelConfig)> {
        let text = std::fs::read_to_string(dir.join("model.json"))?;
        let config: ModelConfig = serde_json::from_str(&text)?;
        let read = |name: &str| -> Result<Vec<f64>> {
            Ok(crate::io::read_matrix(&dir.join(format!("{name}.fsm")))?.data)
        };
        let params = ToyModelParams {
            conv1: read("conv1")?,
            conv2: read("conv2")?,
            cls_w: read("cls_w")?,
            cls_b: read("cls_b")?,
            proj: read("proj")?,
        };
        let model = ToyModel::new(config);
        model.check_shapes(&params)?;
        Ok((params, config))
    }
}

/// Outputs and caches of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Pre-activation of conv1, `(y*w1+x)*c1+o`.
    conv1_pre: Vec<f64>,
    /// Post-ReLU conv1 output, same layout.
    conv1_out: Vec<f64>,
    /// Pre-activation of conv2, `(y*w2+x)*c2+o`.
    feature_pre: Vec<f64>,
    /// Post-ReLU conv2 output; the attribution target.
    pub feature_map: FeatureMapTensor,
    /// Global average pool of the feature map.
    pub pooled: Vec<f64>,
    /// Classifier logits.
    pub scores: Vec<f64>,
}

/// Gradients of the loss with respect to every parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub conv1: Vec<f64>,
    pub conv2: Vec<f64>,
    pub cls_w: Vec<f64>,
    pub cls_b: Vec<f64>,
}

impl ParamGrads {
    fn zeros(config: &ModelConfig) -> Self {
        Self {
            conv1: vec![0.0; config.conv1_len()],
            conv2: vec![0.0; config.conv2_len()],
            cls_w: vec![0.0; config.categories * config.embed_dim()],
            cls_b: vec![0.0; config.categories],
        }
    }

    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) {
        for (a, b) in self.conv1.iter_mut().zip(other.conv1.iter()) {
            *a += scale * b;
        }
        for (a, b) in self.conv2.iter_mut().zip(other.conv2.iter()) {
            *a += scale * b;
        }
        for (a, b) in self.cls_w.iter_mut().zip(other.cls_w.iter()) {
            *a += scale * b;
        }
        for (a, b) in self.cls_b.iter_mut().zip(other.cls_b.iter()) {
            *a += scale * b;
        }
    }
}

/// Result of the classification backward pass.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub grads: ParamGrads,
    /// dLoss/dPooled, useful for chaining extra heads.
    pub d_pooled: Vec<f64>,
}

/// The fixed architecture. Holds no state beyond its dimensions.
#[derive(Debug, Clone, Copy)]
pub struct ToyModel {
    pub config: ModelConfig,
}

impl ToyModel {
    pub fn new(config: ModelConfig) -> Self {
        Self { config }
    }

    fn check_shapes(&self, params: &ToyModelParams) -> Result<()> {
        let c = &self.config;
        let want = [
            ("conv1", params.conv1.len(), c.conv1_len()),
            ("conv2", params.conv2.len(), c.conv2_len()),
            ("cls_w", params.cls_w.len(), c.categories * c.embed_dim()),
            ("cls_b", params.cls_b.len(), c.categories),
            (
                "proj",
                params.proj.len(),
                crate::loss::PROJECTION_DIM * c.embed_dim(),
            ),
        ];
        for (name, got, expect) in want {
            if got != expect {
                return Err(Error::dimension(format!(
                    "{name} holds {got} values, expected {expect}"
                )));
            }
        }
        Ok(())
    }

    /// Random initialization scaled by fan-in, drawn from the init stream.
    pub fn init_params(&self, seed: u64) -> ToyModelParams {
        let mut rng = stream_rng(seed, Stream::Init);
        let c = &self.config;
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let a = (1.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-a..a)).collect()
        };
        ToyModelParams {
            conv1: draw(c.conv1_len(), IMAGE_CHANNELS * KERNEL * KERNEL),
            conv2: draw(c.conv2_len(), c.conv1_channels * KERNEL * KERNEL),
            cls_w: draw(c.categories * c.embed_dim(), c.embed_dim()),
            cls_b: vec![0.0; c.categories],
            proj: draw(crate::loss::PROJECTION_DIM * c.embed_dim(), c.embed_dim()),
        }
    }

    pub fn forward(&self, params: &ToyModelParams, image: &ToyImage) -> ForwardPass {
        let cfg = &self.config;
        debug_assert_eq!(image.width, cfg.image_size);
        debug_assert_eq!(image.height, cfg.image_size);
        let input = image.to_f64();
        let s1 = cfg.image_size - (KERNEL - 1);
        let (conv1_pre, conv1_out) = convolve(
            &input,
            cfg.image_size,
            IMAGE_CHANNELS,
            &params.conv1,
            cfg.conv1_channels,
        );
        let s2 = s1 - (KERNEL - 1);
        let (feature_pre, feature_out) =
            convolve(&conv1_out, s1, cfg.conv1_channels, &params.conv2, cfg.conv2_channels);

        let area = (s2 * s2) as f64;
        let mut pooled = vec![0.0; cfg.conv2_channels];
        for cell in feature_out.chunks(cfg.conv2_channels) {
            for (p, v) in pooled.iter_mut().zip(cell.iter()) {
                *p += v;
            }
        }
        for p in &mut pooled {
            *p /= area;
        }

        let d = cfg.embed_dim();
        let mut scores = vec![0.0; cfg.categories];
        for (k, score) in scores.iter_mut().enumerate() {
            *score = params.cls_b[k] + crate::math::dot(&params.cls_w[k * d..(k + 1) * d], &pooled);
        }

        ForwardPass {
            conv1_pre,
            conv1_out,
            feature_pre,
            feature_map: FeatureMapTensor::new(s2, s2, cfg.conv2_channels, feature_out)
                .expect("feature map shape"),
            pooled,
            scores,
        }
    }

    /// Softmax cross-entropy at `target`, with gradients for every
    /// parameter tensor and the pooled vector.
    pub fn backward_ce(
        &self,
        params: &ToyModelParams,
        image: &ToyImage,
        fwd: &ForwardPass,
        target: usize,
    ) -> Result<BackwardPass> {
        let cfg = &self.config;
        if target >= cfg.categories {
            return Err(Error::invalid(format!(
                "target {target} out of range (C = {})",
                cfg.categories
            )));
        }
        let probs = softmax(&fwd.scores);
        let loss = -probs[target].max(f64::MIN_POSITIVE).ln();
        let mut d_scores = probs.clone();
        d_scores[target] -= 1.0;

        let d = cfg.embed_dim();
        let mut grads = ParamGrads::zeros(cfg);
        for k in 0..cfg.categories {
            grads.cls_b[k] = d_scores[k];
            for i in 0..d {
                grads.cls_w[k * d + i] = d_scores[k] * fwd.pooled[i];
            }
        }
        let mut d_pooled = vec![0.0; d];
        for k in 0..cfg.categories {
            for i in 0..d {
                d_pooled[i] += params.cls_w[k * d + i] * d_scores[k];
            }
        }
        let conv_grads = self.backward_from_pooled(params, image, fwd, &d_pooled);
        grads.conv1 = conv_grads.conv1;
        grads.conv2 = conv_grads.conv2;
        Ok(BackwardPass {
            loss,
            probs,
            grads,
            d_pooled,
        })
    }

    /// Propagates an arbitrary dLoss/dPooled through pooling, ReLU, and
    /// both convolutions, returning conv kernel gradients.
    pub fn backward_from_pooled(
        &self,
        params: &ToyModelParams,
        image: &ToyImage,
        fwd: &ForwardPass,
        d_pooled: &[f64],
    ) -> ParamGrads {
        let cfg = &self.config;
        let s1 = cfg.image_size - (KERNEL - 1);
        let s2 = s1 - (KERNEL - 1);
        let area = (s2 * s2) as f64;

        // Pool backward + ReLU mask of conv2.
        let mut d_feature_pre = vec![0.0; s2 * s2 * cfg.conv2_channels];
        for cell in 0..s2 * s2 {
            for o in 0..cfg.conv2_channels {
                let idx = cell * cfg.conv2_channels + o;
                if fwd.feature_pre[idx] > 0.0 {
                    d_feature_pre[idx] = d_pooled[o] / area;
                }
            }
        }

        let mut grads = ParamGrads::zeros(cfg);
        let d_conv1_out = convolve_backward(
            &fwd.conv1_out,
            s1,
            cfg.conv1_channels,
            &params.conv2,
            cfg.conv2_channels,
            &d_feature_pre,
            &mut grads.conv2,
        );

        // ReLU mask of conv1.
        let mut d_conv1_pre = d_conv1_out;
        for (g, pre) in d_conv1_pre.iter_mut().zip(fwd.conv1_pre.iter()) {
            if *pre <= 0.0 {
                *g = 0.0;
            }
        }
        let input = image.to_f64();
        convolve_backward(
            &input,
            cfg.image_size,
            IMAGE_CHANNELS,
            &params.conv1,
            cfg.conv1_channels,
            &d_conv1_pre,
            &mut grads.conv1,
        );
        grads
    }

    /// Gradient of the class score (not the loss) with respect to the
    /// post-activation feature map: classifier row back through pooling.
    pub fn score_feature_gradient(
        &self,
        params: &ToyModelParams,
        fwd: &ForwardPass,
        class: usize,
    ) -> Result<FeatureMapTensor> {
        let cfg = &self.config;
        if class >= cfg.categories {
            return Err(Error::invalid(format!(
                "class {class} out of range (C = {})",
                cfg.categories
            )));
        }
        let d = cfg.embed_dim();
        let s = fwd.feature_map.width;
        let area = (s * s) as f64;
        // d score / d pooled = classifier row; pooling spreads it evenly.
        let d_pooled = &params.cls_w[class * d..(class + 1) * d];
        let mut values = vec![0.0; s * s * d];
        for cell in 0..s * s {
            for k in 0..d {
                values[cell * d + k] = d_pooled[k] / area;
            }
        }
        FeatureMapTensor::new(s, s, d, values)
    }
}

/// Valid convolution, channel-last layout; returns (pre, post-ReLU).
fn convolve(
    input: &[f64],
    in_size: usize,
    in_channels: usize,
    kernels: &[f64],
    out_channels: usize,
) -> (Vec<f64>, Vec<f64>) {
    let out_size = in_size - (KERNEL - 1);
    let mut pre = vec![0.0; out_size * out_size * out_channels];
    for y in 0..out_size {
        for x in 0..out_size {
            for o in 0..out_channels {
                let mut acc = 0.0;
                for i in 0..in_channels {
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            let w =
                                kernels[((o * in_channels + i) * KERNEL + ky) * KERNEL + kx];
                            let v = input[((y + ky) * in_size + (x + kx)) * in_channels + i];
                            acc += w * v;
                        }
                    }
                }
                pre[(y * out_size + x) * out_channels + o] = acc;
            }
        }
    }
    let post = pre.iter().map(|v| v.max(0.0)).collect();
    (pre, post)
}

/// Backward of the valid convolution: accumulates kernel gradients into
/// `d_kernels` and returns the gradient with respect to the input.
fn convolve_backward(
    input: &[f64],
    in_size: usize,
    in_channels: usize,
    kernels: &[f64],
    out_channels: usize,
    d_pre: &[f64],
    d_kernels: &mut [f64],
) -> Vec<f64> {
    let out_size = in_size - (KERNEL - 1);
    let mut d_input = vec![0.0; in_size * in_size * in_channels];
    for y in 0..out_size {
        for x in 0..out_size {
            for o in 0..out_channels {
                let g = d_pre[(y * out_size + x) * out_channels + o];
                if g == 0.0 {
                    continue;
                }
                for i in 0..in_channels {
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            let widx = ((o * in_channels + i) * KERNEL + ky) * KERNEL + kx;
                            let iidx = ((y + ky) * in_size + (x + kx)) * in_channels + i;
                            d_kernels[widx] += g * input[iidx];
                            d_input[iidx] += g * kernels[widx];
                        }
                    }
                }
            }
        }
    }
    d_input
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Dataset generation knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub base_categories: usize,
    pub novel_categories: usize,
    pub k_shot: usize,
    pub samples_per_base: usize,
    pub test_per_category: usize,
    pub image_size: usize,
    pub attribute_count: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            base_categories: 8,
            novel_categories: 4,
            k_shot: 5,
            samples_per_base: 30,
            test_per_category: 25,
            image_size: 16,
            attribute_count: crate::knowledge::DEFAULT_ATTRIBUTE_COUNT,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn total_categories(&self) -> usize {
        self.base_categories + self.novel_categories
    }
}

/// The generated corpus: abundant base training data, exactly k novel
/// shots per novel category, a k-shot fine-tuning pool covering every
/// category, and a held-out test split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub category_names: Vec<String>,
    pub attribute_labels: Vec<AttributeLabelVector>,
    pub base_train: Vec<ToyImage>,
    pub novel_shots: Vec<ToyImage>,
    pub test: Vec<ToyImage>,
}

impl Dataset {
    /// k-shot fine-tuning pool: the first k base-train images of each
    /// base category plus every novel shot.
    pub fn finetune_pool(&self) -> Vec<&ToyImage> {
        let k = self.config.k_shot;
        let mut pool: Vec<&ToyImage> = Vec::new();
        for cat in 0..self.config.base_categories {
            pool.extend(
                self.base_train
                    .iter()
                    .filter(|img| img.label == cat)
                    .take(k),
            );
        }
        pool.extend(self.novel_shots.iter());
        pool
    }

    pub fn is_novel(&self, category: usize) -> bool {
        category >= self.config.base_categories
    }
}

/// Builds the attribute table used when the caller does not supply one:
/// each category sets one family bit (shared between a novel category and
/// its base sibling) and two bits of its own.
pub fn default_attribute_table(config: &DatasetConfig) -> Result<Vec<AttributeLabelVector>> {
    let c = config.total_categories();
    let base = config.base_categories;
    let needed = base + 2 * c;
    if needed > config.attribute_count {
        return Err(Error::invalid(format!(
            "attribute table needs {needed} bits, only {} configured",
            config.attribute_count
        )));
    }
    let mut table = Vec::with_capacity(c);
    for id in 0..c {
        let family = if id < base { id } else { (id - base) % base };
        let mut bits = vec![0u8; config.attribute_count];
        bits[family] = 1;
        bits[base + 2 * id] = 1;
        bits[base + 2 * id + 1] = 1;
        table.push(AttributeLabelVector::new(id, bits)?);
    }
    Ok(table)
}

/// Deterministic synthetic dataset. Same config, same bytes.
pub fn generate_dataset(
    config: &DatasetConfig,
    attribute_table: Option<Vec<AttributeLabelVector>>,
) -> Result<Dataset> {
    let c = config.total_categories();
    if c == 0 {
        return Err(Error::invalid("no categories configured"));
    }
    if config.image_size < 8 {
        return Err(Error::invalid("image size must be at least 8"));
    }
    let table = match attribute_table {
        Some(t) => {
            if t.len() != c {
                return Err(Error::invalid(format!(
                    "attribute table covers {} categories, dataset has {c}",
                    t.len()
                )));
            }
            let width = t[0].bits.len();
            if t.iter().any(|l| l.bits.len() != width) {
                return Err(Error::invalid("attribute table rows differ in length"));
            }
            t
        }
        None => default_attribute_table(config)?,
    };

    let mut names = Vec::with_capacity(c);
    for id in 0..c {
        if id < config.base_categories {
            names.push(format!("base{id}"));
        } else {
            names.push(format!("novel{}", id - config.base_categories));
        }
    }

    let mut rng = stream_rng(config.seed, Stream::Aux);
    let mut base_train = Vec::new();
    for cat in 0..config.base_categories {
        for _ in 0..config.samples_per_base {
            base_train.push(render(config, &table[cat], cat, Split::Base, &mut rng));
        }
    }
    let mut novel_shots = Vec::new();
    for cat in config.base_categories..c {
        for _ in 0..config.k_shot {
            novel_shots.push(render(config, &table[cat], cat, Split::Novel, &mut rng));
        }
    }
    let mut test = Vec::new();
    for (cat, labels) in table.iter().enumerate() {
        let split = if cat < config.base_categories {
            Split::Base
        } else {
            Split::Novel
        };
        for _ in 0..config.test_per_category {
            test.push(render(config, labels, cat, split, &mut rng));
        }
    }

    Ok(Dataset {
        config: config.clone(),
        category_names: names,
        attribute_labels: table,
        base_train,
        novel_shots,
        test,
    })
}

/// Renders one sample: dim noisy background plus one part per set
/// attribute bit, with per-sample jitter in position and intensity.
fn render(
    config: &DatasetConfig,
    labels: &AttributeLabelVector,
    category: usize,
    split: Split,
    rng: &mut ChaCha8Rng,
) -> ToyImage {
    let s = config.image_size;
    let mut img = ToyImage {
        width: s,
        height: s,
        pixels: vec![0; s * s * 3],
        label: category,
        split,
        is_augmented: false,
    };
    for y in 0..s {
        for x in 0..s {
            for ch in 0..3 {
                img.set_pixel(x, y, ch, rng.gen_range(0..48u8));
            }
        }
    }
    for (attr, bit) in labels.bits.iter().enumerate() {
        if *bit == 1 {
            draw_part(&mut img, attr, rng);
        }
    }
    img
}

/// One attribute = one part. Geometry, size, and color derive from the
/// attribute index; the sample adds +-1 pixel jitter and an intensity
/// scale so shots of one category differ.
fn draw_part(img: &mut ToyImage, attr: usize, rng: &mut ChaCha8Rng) {
    let s = img.width;
    let margin = 3usize;
    let usable = s - 2 * margin;
    // Low-discrepancy placement over the canvas interior.
    let cx = margin + (attr * 5 + 1) % usable;
    let cy = margin + (attr * 7 + 3) % usable;
    let dx = rng.gen_range(-2..=2i32);
    let dy = rng.gen_range(-2..=2i32);
    let scale: f64 = rng.gen_range(0.55..1.0);
    let channel = attr % 3;
    let shape = (attr / 3) % 3;
    let value = (200.0 * scale + 40.0) as u8;

    let mut paint = |x: i32, y: i32| {
        if x >= 0 && y >= 0 && (x as usize) < s && (y as usize) < s {
            let (x, y) = (x as usize, y as usize);
            let base = img.get_pixel(x, y, channel);
            img.set_pixel(x, y, channel, base.max(value));
            // Faint spill into a second channel keeps parts from being
            // trivially separable by color alone.
            let spill = (channel + 1) % 3;
            let old = img.get_pixel(x, y, spill);
            img.set_pixel(x, y, spill, old.max(value / 3));
        }
    };

    let cx = cx as i32 + dx;
    let cy = cy as i32 + dy;
    match shape {
        0 => {
            // 3x3 block.
            for oy in -1..=1 {
                for ox in -1..=1 {
                    paint(cx + ox, cy + oy);
                }
            }
        }
        1 => {
            // Horizontal bar.
            for ox in -2..=2 {
                paint(cx + ox, cy);
                paint(cx + ox, cy + 1);
            }
        }
        _ => {
            // Diagonal stroke.
            for o in -2..=2 {
                paint(cx + o, cy + o);
                paint(cx + o + 1, cy + o);
            }
        }
    }
}

const DATASET_MANIFEST: &str = "dataset.json";

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    config: DatasetConfig,
    category_names: Vec<String>,
    attribute_bits: Vec<Vec<u8>>,
    splits: Vec<SplitManifest>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitManifest {
    name: String,
    labels: Vec<usize>,
    novel: Vec<bool>,
}

impl Dataset {
    /// Dumps the dataset: a JSON manifest plus one pixel matrix per split
    /// (one image per row).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let splits: [(&str, &Vec<ToyImage>); 3] = [
            ("base_train", &self.base_train),
            ("novel_shots", &self.novel_shots),
            ("test", &self.test),
        ];
        let mut manifests = Vec::new();
        for (name, images) in splits {
            let rows: Vec<Vec<f64>> = images
                .iter()
                .map(|img| img.pixels.iter().map(|p| *p as f64).collect())
                .collect();
            let m = MatrixFile::from_rows(&rows)?;
            crate::io::write_matrix(&dir.join(format!("{name}.fsm")), &m)?;
            manifests.push(SplitManifest {
                name: name.to_string(),
                labels: images.iter().map(|i| i.label).collect(),
                novel: images.iter().map(|i| i.split == Split::Novel).collect(),
            });
        }
        let manifest = DatasetManifest {
            config: self.config.clone(),
            category_names: self.category_names.clone(),
            attribute_bits: self.attribute_labels.iter().map(|l| l.bits.clone()).collect(),
            splits: manifests,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(dir.join(DATASET_MANIFEST), text + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(DATASET_MANIFEST))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let size = manifest.config.image_size;
        let mut splits: Vec<Vec<ToyImage>> = Vec::new();
        for split in &manifest.splits {
            let m = crate::io::read_matrix(&dir.join(format!("{}.fsm", split.name)))?;
            if m.rows != split.labels.len() {
                return Err(Error::parse(format!(
                    "split {}: {} rows but {} labels",
                    split.name,
                    m.rows,
                    split.labels.len()
                )));
            }
            let mut images = Vec::with_capacity(m.rows);
            for r in 0..m.rows {
                let pixels: Vec<u8> = m.row(r).iter().map(|v| *v as u8).collect();
                if pixels.len() != size * size * 3 {
                    return Err(Error::parse(format!(
                        "split {}: row {r} holds {} pixels, expected {}",
                        split.name,
                        pixels.len(),
                        size * size * 3
                    )));
                }
                images.push(ToyImage {
                    width: size,
                    height: size,
                    pixels,
                    label: split.labels[r],
                    split: if split.novel[r] { Split::Novel } else { Split::Base },
                    is_augmented: false,
                });
            }
            splits.push(images);
        }
        let mut iter = splits.into_iter();
        let attribute_labels: Result<Vec<AttributeLabelVector>> = manifest
            .attribute_bits
            .iter()
            .enumerate()
            .map(|(id, bits)| AttributeLabelVector::new(id, bits.clone()))
            .collect();
        Ok(Dataset {
            config: manifest.config,
            category_names: manifest.category_names,
            attribute_labels: attribute_labels?,
            base_train: iter.next().unwrap_or_default(),
            novel_shots: iter.next().unwrap_or_default(),
            test: iter.next().unwrap_or_default(),
        })
    }
}
