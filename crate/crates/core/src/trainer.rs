//! Two-stage training orchestration.
//!
//! Stage one trains the whole classifier on abundant base-category data
//! with plain cross-entropy. Stage two transfers those parameters and
//! fine-tunes on a k-shot pool covering base and novel categories: each
//! iteration samples a class-balanced batch, optionally replaces images
//! by counterfactually masked copies with probability epsilon, pushes
//! ground-truth pooled features of non-augmented samples into the
//! prototype bank, and takes one SGD step on the weighted objective.
//!
//! Convolutions stay frozen during fine-tuning by default (classifier and
//! projection train); `train_last_conv` additionally unfreezes the second
//! convolution so the contrastive gradient can reshape the shared
//! representation.
//!
//! Randomness is split over three named streams (data, augmentation,
//! init) so ablation arms that consume different amounts of augmentation
//! randomness remain comparable under paired seeds.

use rand::Rng;

use serde::{Deserialize, Serialize};

use crate::bank::PrototypeBank;
use crate::counterfactual::{augment, ErasureMask};
use crate::error::{Error, Result};
use crate::knowledge::KnowledgeMatrix;
use crate::loss::{ccl_grad, total_loss, Lambdas, LossBreakdown, Projection, PROJECTION_DIM};
use crate::math::cosine;
use crate::rng::{stream_rng, Stream};
use crate::toymodel::{
    Dataset, ModelConfig, ParamGrads, ToyImage, ToyModel, ToyModelParams,
};

/// Which training stage a run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Base,
    Finetune,
}

/// Flat training configuration; the file format and CLI flags mirror
/// these fields one-to-one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub k_shot: usize,
    /// Contrastive temperature.
    pub tau: f64,
    /// Objective weights for cls / reg / ccl.
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Per-image augmentation probability.
    pub epsilon: f64,
    /// Erase threshold on the normalized attribution map.
    pub erase_threshold: f64,
    /// Counter categories considered per class.
    pub k_e: usize,
    /// Prototype cluster centers per category.
    pub n_cluster_centers: usize,
    /// Knowledge-matrix construction case (1-5).
    pub knowledge_case: u8,
    /// Clustering count for embedding-based knowledge matrices.
    pub cluster_count: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub use_ccl: bool,
    pub use_knowledge_matrix: bool,
    pub use_clustering: bool,
    pub use_counterfactual: bool,
    pub use_random_mask_baseline: bool,
    /// L2-normalize projected embeddings before dot products.
    pub normalize_embeddings: bool,
    /// Unfreeze the second convolution during fine-tuning.
    pub train_last_conv: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Finetune,
            k_shot: 5,
            tau: 0.2,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            epsilon: 0.05,
            erase_threshold: 0.8,
            k_e: 3,
            n_cluster_centers: 1,
            knowledge_case: 3,
            cluster_count: 5,
            seed: 0,
            learning_rate: 0.8,
            iterations: 600,
            batch_size: 12,
            use_ccl: true,
            use_knowledge_matrix: true,
            use_clustering: true,
            use_counterfactual: true,
            use_random_mask_baseline: false,
            normalize_embeddings: true,
            train_last_conv: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::invalid("tau must be positive"));
        }
        for (name, l) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if l < 0.0 {
                return Err(Error::invalid(format!("{name} must be nonnegative")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid("epsilon must lie in [0,1]"));
        }
        if !(self.erase_threshold > 0.0 && self.erase_threshold < 1.0) {
            return Err(Error::invalid("erase threshold must lie in (0,1)"));
        }
        if self.k_e == 0 || self.n_cluster_centers == 0 || self.batch_size == 0 {
            return Err(Error::invalid("k_e, n_cluster_centers, batch_size must be positive"));
        }
        if self.use_counterfactual && self.use_random_mask_baseline {
            return Err(Error::invalid(
                "counterfactual and random-mask augmentation are mutually exclusive",
            ));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }

    fn lambdas(&self) -> Lambdas {
        Lambdas {
            cls: self.lambda1,
            reg: self.lambda2,
            ccl: self.lambda3,
        }
    }
}

/// Final evaluation numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub per_class_accuracy: Vec<f64>,
    pub base_accuracy: f64,
    pub novel_accuracy: f64,
    pub overall_accuracy: f64,
    /// Mean same-class cosine minus mean cross-class cosine of projected
    /// test embeddings; larger means better separated.
    pub separability_margin: f64,
}

/// Everything a run records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub losses: Vec<LossBreakdown>,
    /// Augmented images per iteration.
    pub augmented: Vec<usize>,
    /// Proposals scored by the contrastive loss per iteration.
    pub ccl_included: Vec<usize>,
    pub eval: EvalSummary,
}

pub struct TrainBaseResult {
    pub params: ToyModelParams,
    pub losses: Vec<LossBreakdown>,
}

pub struct FineTuneResult {
    pub params: ToyModelParams,
    pub metrics: RunMetrics,
}

/// The architecture a dataset implies: default channel widths, the
/// dataset's image size and total category count.
pub fn model_for_dataset(dataset: &Dataset) -> ToyModel {
    ToyModel::new(ModelConfig {
        image_size: dataset.config.image_size,
        categories: dataset.config.total_categories(),
        ..ModelConfig::default()
    })
}

fn group_by_label<'a>(images: &[&'a ToyImage], categories: usize) -> Vec<Vec<&'a ToyImage>> {
    let mut groups: Vec<Vec<&ToyImage>> = vec![Vec::new(); categories];
    for img in images {
        groups[img.label].push(img);
    }
    groups
}

/// Stage one: plain cross-entropy on the base split, every parameter
/// trainable.
pub fn train_base(config: &TrainConfig, dataset: &Dataset) -> Result<TrainBaseResult> {
    config.validate()?;
    if dataset.base_train.is_empty() {
        return Err(Error::invalid("dataset has an empty base split"));
    }
    let model = model_for_dataset(dataset);
    let mut params = model.init_params(config.seed);
    let refs: Vec<&ToyImage> = dataset.base_train.iter().collect();
    let groups = group_by_label(&refs, dataset.config.total_categories());
    let base_cats: Vec<usize> = (0..dataset.config.base_categories)
        .filter(|&c| !groups[c].is_empty())
        .collect();
    if base_cats.is_empty() {
        return Err(Error::invalid("dataset has an empty base split"));
    }

    let mut data_rng = stream_rng(config.seed, Stream::Data);
    let mut losses = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let mut grads: Option<ParamGrads> = None;
        let mut cls_loss = 0.0;
        for _ in 0..config.batch_size {
            let cat = base_cats[data_rng.gen_range(0..base_cats.len())];
            let img = groups[cat][data_rng.gen_range(0..groups[cat].len())];
            let fwd = model.forward(&params, img);
            let back = model.backward_ce(&params, img, &fwd, img.label)?;
            cls_loss += back.loss;
            match &mut grads {
                None => grads = Some(back.grads),
                Some(g) => g.add_scaled(&back.grads, 1.0),
            }
        }
        let scale = 1.0 / config.batch_size as f64;
        cls_loss *= scale;
        if let Some(g) = &grads {
            let lr = config.learning_rate * scale * config.lambda1;
            apply_vec(&mut params.conv1, &g.conv1, lr);
            apply_vec(&mut params.conv2, &g.conv2, lr);
            apply_vec(&mut params.cls_w, &g.cls_w, lr);
            apply_vec(&mut params.cls_b, &g.cls_b, lr);
        }
        losses.push(total_loss(0.0, cls_loss, 0.0, 0.0, config.lambdas())?);
    }
    Ok(TrainBaseResult { params, losses })
}

fn apply_vec(params: &mut [f64], grads: &[f64], lr: f64) {
    if lr == 0.0 {
        return;
    }
    for (p, g) in params.iter_mut().zip(grads.iter()) {
        *p -= lr * g;
    }
}

/// Random-erasing baseline: one uniformly placed rectangle covering a
/// random fraction of the image, refilled with random bytes.
fn random_mask_augment(
    image: &ToyImage,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<ToyImage> {
    let w = image.width;
    let h = image.height;
    let rw = ((w as f64) * rng.gen_range(0.2..0.5)).round().max(1.0) as usize;
    let rh = ((h as f64) * rng.gen_range(0.2..0.5)).round().max(1.0) as usize;
    let x0 = rng.gen_range(0..=w - rw);
    let y0 = rng.gen_range(0..=h - rh);
    let mut grid = vec![1u8; w * h];
    for y in y0..y0 + rh {
        for x in x0..x0 + rw {
            grid[y * w + x] = 0;
        }
    }
    let mask = ErasureMask {
        width: w,
        height: h,
        grid,
    };
    let mut out = crate::counterfactual::apply_mask(image, &mask, rng)?;
    out.is_augmented = true;
    Ok(out)
}

/// Stage two: fine-tuning with bank maintenance, probabilistic masking
/// augmentation, and the weighted joint objective.
pub fn fine_tune(
    model: &ToyModel,
    params: &ToyModelParams,
    config: &TrainConfig,
    dataset: &Dataset,
    zeta: &KnowledgeMatrix,
) -> Result<FineTuneResult> {
    config.validate()?;
    let categories = dataset.config.total_categories();
    if zeta.categories() != categories {
        return Err(Error::dimension(format!(
            "knowledge matrix covers {} categories, dataset has {categories}",
            zeta.categories()
        )));
    }
    let effective_zeta = if config.use_knowledge_matrix {
        zeta.clone()
    } else {
        KnowledgeMatrix::all_ones(zeta.names().to_vec())
    };

    let mut params = params.clone();
    let pool = dataset.finetune_pool();
    let groups = group_by_label(&pool, categories);
    let cats: Vec<usize> = (0..categories).filter(|&c| !groups[c].is_empty()).collect();
    if cats.is_empty() {
        return Err(Error::invalid("fine-tuning pool is empty"));
    }

    let d = model.config.embed_dim();
    let mut bank = PrototypeBank::new(categories, d, config.k_shot);
    let mut data_rng = stream_rng(config.seed, Stream::Data);
    let mut aug_rng = stream_rng(config.seed, Stream::Augment);

    let mut losses = Vec::with_capacity(config.iterations);
    let mut augmented_counts = Vec::with_capacity(config.iterations);
    let mut included_counts = Vec::with_capacity(config.iterations);

    for _ in 0..config.iterations {
        // Assemble the batch: balanced categories, then the epsilon coin
        // per image from the augmentation stream.
        let mut batch: Vec<ToyImage> = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let cat = cats[data_rng.gen_range(0..cats.len())];
            let img = groups[cat][data_rng.gen_range(0..groups[cat].len())];
            let coin: f64 = aug_rng.gen();
            let do_augment = coin < config.epsilon;
            if do_augment && config.use_counterfactual {
                let sample = augment(
                    img,
                    &params,
                    model,
                    &effective_zeta,
                    config.k_e,
                    config.erase_threshold,
                    &mut aug_rng,
                )?;
                batch.push(sample.image);
            } else if do_augment && config.use_random_mask_baseline {
                batch.push(random_mask_augment(img, &mut aug_rng)?);
            } else {
                batch.push((*img).clone());
            }
        }
        augmented_counts.push(batch.iter().filter(|i| i.is_augmented).count());

        // Forward everything, update the bank with real features only.
        let mut cls_grads: Option<ParamGrads> = None;
        let mut cls_loss = 0.0;
        let mut pooled_batch: Vec<Vec<f64>> = Vec::with_capacity(batch.len());
        let mut forwards = Vec::with_capacity(batch.len());
        for img in &batch {
            let fwd = model.forward(&params, img);
            let back = model.backward_ce(&params, img, &fwd, img.label)?;
            cls_loss += back.loss;
            match &mut cls_grads {
                None => cls_grads = Some(back.grads),
                Some(g) => g.add_scaled(&back.grads, 1.0),
            }
            bank.push(img.label, fwd.pooled.clone(), img.is_augmented)?;
            pooled_batch.push(fwd.pooled.clone());
            forwards.push(fwd);
        }
        let batch_scale = 1.0 / batch.len() as f64;
        cls_loss *= batch_scale;

        // Contrastive term against the current prototype centers.
        let mut ccl_value = 0.0;
        let mut proj_grads = vec![0.0; params.proj.len()];
        let mut ccl_conv_grads: Option<ParamGrads> = None;
        let mut included = 0usize;
        if config.use_ccl && !bank.is_empty() {
            let projection = Projection::new(
                params.proj.clone(),
                PROJECTION_DIM,
                d,
                config.normalize_embeddings,
            )?;
            let prototypes = if config.use_clustering {
                bank.centers(config.n_cluster_centers, config.seed)?
            } else {
                bank.all_entries()
            };
            // Prototypes pass through the projection as constants.
            let mut proto_vecs = Vec::with_capacity(prototypes.len());
            for p in &prototypes.centers {
                proto_vecs.push(projection.apply(p)?.output);
            }
            let mut prop_vecs = Vec::with_capacity(batch.len());
            let mut prop_fwds = Vec::with_capacity(batch.len());
            for pooled in &pooled_batch {
                let fwd = projection.apply(pooled)?;
                prop_vecs.push(fwd.output.clone());
                prop_fwds.push(fwd);
            }
            let labels: Vec<usize> = batch.iter().map(|i| i.label).collect();
            let grad = ccl_grad(
                &prop_vecs,
                &labels,
                &proto_vecs,
                &prototypes.labels,
                &effective_zeta,
                config.tau,
            )?;
            ccl_value = grad.output.loss;
            included = grad.output.included;
            for (i, upstream) in grad.wrt_proposals.iter().enumerate() {
                if upstream.iter().all(|g| *g == 0.0) {
                    continue;
                }
                let (dw, dx) = projection.backward(&pooled_batch[i], &prop_fwds[i], upstream);
                for (acc, g) in proj_grads.iter_mut().zip(dw.iter()) {
                    *acc += g;
                }
                if config.train_last_conv {
                    let conv = model.backward_from_pooled(
                        &params,
                        &batch[i],
                        &forwards[i],
                        &dx,
                    );
                    match &mut ccl_conv_grads {
                        None => ccl_conv_grads = Some(conv),
                        Some(acc) => acc.add_scaled(&conv, 1.0),
                    }
                }
            }
        }
        included_counts.push(included);

        // One SGD step on the weighted objective. Convolutions stay
        // frozen unless the last one is explicitly unfrozen.
        let lr = config.learning_rate;
        if let Some(g) = &cls_grads {
            let s = lr * batch_scale * config.lambda1;
            apply_vec(&mut params.cls_w, &g.cls_w, s);
            apply_vec(&mut params.cls_b, &g.cls_b, s);
            if config.train_last_conv {
                apply_vec(&mut params.conv2, &g.conv2, s);
            }
        }
        apply_vec(&mut params.proj, &proj_grads, lr * config.lambda3);
        if let Some(g) = &ccl_conv_grads {
            apply_vec(&mut params.conv2, &g.conv2, lr * config.lambda3);
        }

        losses.push(total_loss(0.0, cls_loss, 0.0, ccl_value, config.lambdas())?);
    }

    let eval = evaluate(model, &params, dataset, config.normalize_embeddings)?;
    Ok(FineTuneResult {
        params,
        metrics: RunMetrics {
            losses,
            augmented: augmented_counts,
            ccl_included: included_counts,
            eval,
        },
    })
}

/// Held-out accuracy per class plus the projected-embedding separability
/// margin.
pub fn evaluate(
    model: &ToyModel,
    params: &ToyModelParams,
    dataset: &Dataset,
    normalize: bool,
) -> Result<EvalSummary> {
    let categories = dataset.config.total_categories();
    let mut correct = vec![0usize; categories];
    let mut total = vec![0usize; categories];
    let projection = Projection::new(
        params.proj.clone(),
        PROJECTION_DIM,
        model.config.embed_dim(),
        normalize,
    )?;
    let mut pooled = Vec::with_capacity(dataset.test.len());
    let mut labels = Vec::with_capacity(dataset.test.len());
    for img in &dataset.test {
        let fwd = model.forward(params, img);
        let predicted = argmax(&fwd.scores);
        total[img.label] += 1;
        if predicted == img.label {
            correct[img.label] += 1;
        }
        pooled.push(fwd.pooled);
        labels.push(img.label);
    }
    let flags = vec![false; pooled.len()];
    let embeddings: Vec<(Vec<f64>, usize)> =
        crate::loss::project(&projection, &pooled, &labels, &flags)?
            .into_iter()
            .map(|e| (e.vector, e.label))
            .collect();
    let per_class: Vec<f64> = correct
        .iter()
        .zip(total.iter())
        .map(|(c, t)| if *t == 0 { 0.0 } else { *c as f64 / *t as f64 })
        .collect();
    let mean_over = |cats: std::ops::Range<usize>| -> f64 {
        let classes: Vec<usize> = cats.filter(|&c| total[c] > 0).collect();
        if classes.is_empty() {
            0.0
        } else {
            classes.iter().map(|&c| per_class[c]).sum::<f64>() / classes.len() as f64
        }
    };
    let base_accuracy = mean_over(0..dataset.config.base_categories);
    let novel_accuracy = mean_over(dataset.config.base_categories..categories);
    let overall = {
        let c: usize = correct.iter().sum();
        let t: usize = total.iter().sum();
        if t == 0 {
            0.0
        } else {
            c as f64 / t as f64
        }
    };
    Ok(EvalSummary {
        per_class_accuracy: per_class,
        base_accuracy,
        novel_accuracy,
        overall_accuracy: overall,
        separability_margin: separability_margin(&embeddings)?,
    })
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Mean same-class cosine minus mean cross-class cosine over all pairs.
pub fn separability_margin(embeddings: &[(Vec<f64>, usize)]) -> Result<f64> {
    let mut intra = (0.0, 0usize);
    let mut inter = (0.0, 0usize);
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            let c = cosine(&embeddings[i].0, &embeddings[j].0)?;
            if embeddings[i].1 == embeddings[j].1 {
                intra.0 += c;
                intra.1 += 1;
            } else {
                inter.0 += c;
                inter.1 += 1;
            }
        }
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(mean(intra) - mean(inter))
}
