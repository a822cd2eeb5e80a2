//! Contrastive losses and the joint training objective.
//!
//! The prototype contrastive loss scores each proposal embedding against
//! every prototype center. Matching-category pairs form the numerator;
//! the denominator runs over all prototypes with each logit scaled by the
//! knowledge-matrix entry for the category pair, so semantically similar
//! negatives repel harder:
//!
//! ```text
//! L = -(1/N') sum_i log( sum_j 1[y_i = y_j] exp(F_i . P_j / tau)
//!                      / sum_j exp(zeta[y_i][y_j] F_i . P_j / tau) )
//! ```
//!
//! Prototypes are constants for differentiation: the gradient stops at P
//! and flows back only through the proposal side. Proposals whose
//! category has no prototype yet are excluded from the outer sum; N'
//! counts the included ones.
//!
//! Also here: the proposal-vs-proposal CPE baseline, the learnable
//! projection into the 128-dimensional contrastive space, and the
//! weighted total objective. Every evaluation is a pure function of its
//! inputs and safe to run concurrently across batches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::KnowledgeMatrix;
use crate::math::dot;

/// Dimension of the common contrastive feature space.
pub const PROJECTION_DIM: usize = 128;

/// A vector in the contrastive space with its category and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedEmbedding {
    pub vector: Vec<f64>,
    pub label: usize,
    pub is_augmented: bool,
}

/// Learnable linear map into the contrastive space, with optional row
/// normalization of the output.
#[derive(Debug, Clone)]
pub struct Projection {
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub out_dim: usize,
    pub in_dim: usize,
    /// L2-normalize outputs. On by default: raw logits are unbounded and
    /// the contrastive space is compared by dot products.
    pub normalize: bool,
}

/// Forward pass cache needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ProjectionForward {
    pub output: Vec<f64>,
    raw_norm: f64,
}

impl Projection {
    pub fn new(weights: Vec<f64>, out_dim: usize, in_dim: usize, normalize: bool) -> Result<Self> {
        if weights.len() != out_dim * in_dim {
            return Err(Error::dimension(format!(
                "projection weights {} != {out_dim}x{in_dim}",
                weights.len()
            )));
        }
        Ok(Self {
            weights,
            out_dim,
            in_dim,
            normalize,
        })
    }

    pub fn apply(&self, features: &[f64]) -> Result<ProjectionForward> {
        if features.len() != self.in_dim {
            return Err(Error::dimension(format!(
                "projection input has {} dims, expected {}",
                features.len(),
                self.in_dim
            )));
        }
        let mut raw = vec![0.0; self.out_dim];
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            raw[o] = dot(row, features);
        }
        if !self.normalize {
            return Ok(ProjectionForward {
                output: raw,
                raw_norm: 1.0,
            });
        }
        let norm = crate::math::l2_norm(&raw);
        if norm == 0.0 {
            return Err(Error::invalid(
                "projection output is the zero vector; cannot normalize",
            ));
        }
        let output = raw.iter().map(|v| v / norm).collect();
        Ok(ProjectionForward {
            output,
            raw_norm: norm,
        })
    }

    /// Back-propagates `upstream = dL/dF` through the (normalized) map.
    /// Returns the weight gradient (same layout as `weights`) and the
    /// input gradient.
    pub fn backward(
        &self,
        features: &[f64],
        fwd: &ProjectionForward,
        upstream: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(upstream.len(), self.out_dim);
        // dL/draw: identity, or (upstream - F (F . upstream)) / |raw|.
        let d_raw: Vec<f64> = if self.normalize {
            let f_dot_up = dot(&fwd.output, upstream);
            fwd.output
                .iter()
                .zip(upstream.iter())
                .map(|(f, u)| (u - f * f_dot_up) / fwd.raw_norm)
                .collect()
        } else {
            upstream.to_vec()
        };
        let mut d_weights = vec![0.0; self.out_dim * self.in_dim];
        for o in 0..self.out_dim {
            for i in 0..self.in_dim {
                d_weights[o * self.in_dim + i] = d_raw[o] * features[i];
            }
        }
        let mut d_input = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                d_input[i] += row[i] * d_raw[o];
            }
        }
        (d_weights, d_input)
    }
}

/// Projects a batch of pooled features, attaching labels and provenance.
pub fn project(
    projection: &Projection,
    features: &[Vec<f64>],
    labels: &[usize],
    augmented: &[bool],
) -> Result<Vec<ProjectedEmbedding>> {
    if features.len() != labels.len() || features.len() != augmented.len() {
        return Err(Error::dimension("project: features/labels/flags lengths"));
    }
    features
        .iter()
        .zip(labels.iter().zip(augmented.iter()))
        .map(|(x, (label, aug))| {
            Ok(ProjectedEmbedding {
                vector: projection.apply(x)?.output,
                label: *label,
                is_augmented: *aug,
            })
        })
        .collect()
}

/// Value of the contrastive loss plus bookkeeping about exclusions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CclOutput {
    pub loss: f64,
    /// Proposals that had at least one matching prototype.
    pub included: usize,
    /// Set when no proposal could be scored; the loss is then 0.
    pub empty: bool,
}

/// Knowledge-weighted prototype contrastive loss.
pub fn ccl_loss(
    proposals: &[Vec<f64>],
    proposal_labels: &[usize],
    prototypes: &[Vec<f64>],
    prototype_labels: &[usize],
    zeta: &KnowledgeMatrix,
    tau: f64,
) -> Result<CclOutput> {
    check_ccl_inputs(proposals, proposal_labels, prototypes, prototype_labels, zeta, tau)?;
    let mut total = 0.0;
    let mut included = 0usize;
    for (f, &yf) in proposals.iter().zip(proposal_labels.iter()) {
        if !prototype_labels.contains(&yf) {
            continue;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, &yp) in prototypes.iter().zip(prototype_labels.iter()) {
            let s = dot(f, p);
            den += ((zeta.get(yf, yp) * s) / tau).exp();
            if yf == yp {
                num += (s / tau).exp();
            }
        }
        total += -(num / den).ln();
        included += 1;
    }
    if included == 0 {
        return Ok(CclOutput {
            loss: 0.0,
            included: 0,
            empty: true,
        });
    }
    Ok(CclOutput {
        loss: total / included as f64,
        included,
        empty: false,
    })
}

/// Analytic gradient of [`ccl_loss`].
#[derive(Debug, Clone)]
pub struct CclGrad {
    /// dL/dF, one row per proposal; excluded proposals get zero rows.
    pub wrt_proposals: Vec<Vec<f64>>,
    /// dL/dP. Identically zero: the gradient stops at the prototypes.
    pub wrt_prototypes: Vec<Vec<f64>>,
    pub output: CclOutput,
}

pub fn ccl_grad(
    proposals: &[Vec<f64>],
    proposal_labels: &[usize],
    prototypes: &[Vec<f64>],
    prototype_labels: &[usize],
    zeta: &KnowledgeMatrix,
    tau: f64,
) -> Result<CclGrad> {
    check_ccl_inputs(proposals, proposal_labels, prototypes, prototype_labels, zeta, tau)?;
    let dim = proposals.first().map(|f| f.len()).unwrap_or(0);
    let mut wrt_proposals = vec![vec![0.0; dim]; proposals.len()];
    let wrt_prototypes = vec![vec![0.0; prototypes.first().map(|p| p.len()).unwrap_or(0)]; prototypes.len()];

    let included: Vec<usize> = (0..proposals.len())
        .filter(|&i| prototype_labels.contains(&proposal_labels[i]))
        .collect();
    if included.is_empty() {
        return Ok(CclGrad {
            wrt_proposals,
            wrt_prototypes,
            output: CclOutput {
                loss: 0.0,
                included: 0,
                empty: true,
            },
        });
    }
    let inv_n = 1.0 / included.len() as f64;
    let mut total = 0.0;
    for &i in &included {
        let f = &proposals[i];
        let yf = proposal_labels[i];
        let mut num = 0.0;
        let mut den = 0.0;
        let mut num_contrib = vec![0.0; prototypes.len()];
        let mut den_contrib = vec![0.0; prototypes.len()];
        for (j, (p, &yp)) in prototypes.iter().zip(prototype_labels.iter()).enumerate() {
            let s = dot(f, p);
            let z = zeta.get(yf, yp);
            let e_den = ((z * s) / tau).exp();
            den += e_den;
            den_contrib[j] = e_den * z / tau;
            if yf == yp {
                let e_num = (s / tau).exp();
                num += e_num;
                num_contrib[j] = e_num / tau;
            }
        }
        total += -(num / den).ln();
        let g = &mut wrt_proposals[i];
        for (j, p) in prototypes.iter().enumerate() {
            let w = inv_n * (den_contrib[j] / den - num_contrib[j] / num);
            for (gk, pk) in g.iter_mut().zip(p.iter()) {
                *gk += w * pk;
            }
        }
    }
    Ok(CclGrad {
        wrt_proposals,
        wrt_prototypes,
        output: CclOutput {
            loss: total * inv_n,
            included: included.len(),
            empty: false,
        },
    })
}

fn check_ccl_inputs(
    proposals: &[Vec<f64>],
    proposal_labels: &[usize],
    prototypes: &[Vec<f64>],
    prototype_labels: &[usize],
    zeta: &KnowledgeMatrix,
    tau: f64,
) -> Result<()> {
    if tau <= 0.0 {
        return Err(Error::invalid(format!("temperature {tau} must be positive")));
    }
    if proposals.len() != proposal_labels.len() {
        return Err(Error::dimension("proposal labels length"));
    }
    if prototypes.len() != prototype_labels.len() {
        return Err(Error::dimension("prototype labels length"));
    }
    if let Some(dim) = proposals.first().map(|f| f.len()) {
        if proposals.iter().any(|f| f.len() != dim)
            || prototypes.iter().any(|p| p.len() != dim)
        {
            return Err(Error::dimension("embedding dimensions disagree"));
        }
    }
    let c = zeta.categories();
    if proposal_labels.iter().chain(prototype_labels.iter()).any(|&y| y >= c) {
        return Err(Error::dimension(format!(
            "label outside the knowledge matrix (C = {c})"
        )));
    }
    Ok(())
}

/// Proposal-vs-proposal contrastive baseline with IoU weighting.
///
/// Each proposal is scored against same-label proposals, normalized over
/// all other proposals; terms whose label appears only once are skipped.
pub fn cpe_loss(
    features: &[Vec<f64>],
    labels: &[usize],
    iou: &[f64],
    tau: f64,
) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::invalid(format!("temperature {tau} must be positive")));
    }
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid("cpe loss needs at least two proposals"));
    }
    if labels.len() != n || iou.len() != n {
        return Err(Error::dimension("cpe labels/iou lengths"));
    }
    if iou.iter().any(|u| !(0.0..=1.0).contains(u)) {
        return Err(Error::invalid("iou scores must lie in [0,1]"));
    }
    let mut counts = vec![0usize; labels.iter().max().unwrap() + 1];
    for &y in labels {
        counts[y] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if counts[labels[i]] < 2 || iou[i] == 0.0 {
            continue;
        }
        let mut den = 0.0;
        for k in 0..n {
            if k != i {
                den += (dot(&features[i], &features[k]) / tau).exp();
            }
        }
        let mut l_fi = 0.0;
        for j in 0..n {
            if j != i && labels[j] == labels[i] {
                l_fi += ((dot(&features[i], &features[j]) / tau).exp() / den).ln();
            }
        }
        total += iou[i] * l_fi / (counts[labels[i]] - 1) as f64;
    }
    Ok(-total / n as f64)
}

/// Weights of the joint objective; all default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub cls: f64,
    pub reg: f64,
    pub ccl: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            cls: 1.0,
            reg: 1.0,
            ccl: 1.0,
        }
    }
}

/// Per-term view of one training step's objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rpn_loss: f64,
    pub cls_loss: f64,
    pub reg_loss: f64,
    pub ccl_loss: f64,
    pub total: f64,
    pub lambdas: (f64, f64, f64),
}

/// Composes `total = rpn + l1*cls + l2*reg + l3*ccl`.
pub fn total_loss(
    rpn: f64,
    cls: f64,
    reg: f64,
    ccl: f64,
    lambdas: Lambdas,
) -> Result<LossBreakdown> {
    for (name, v) in [("rpn", rpn), ("cls", cls), ("reg", reg), ("ccl", ccl)] {
        if !v.is_finite() {
            return Err(Error::invalid(format!("loss part {name} is not finite ({v})")));
        }
    }
    let total = rpn + lambdas.cls * cls + lambdas.reg * reg + lambdas.ccl * ccl;
    Ok(LossBreakdown {
        rpn_loss: rpn,
        cls_loss: cls,
        reg_loss: reg,
        ccl_loss: ccl,
        total,
        lambdas: (lambdas.cls, lambdas.reg, lambdas.ccl),
    })
}
