//! Training objectives: classification on real and augmented features,
//! reconstruction KL, and the two sides of the domain game.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{DisentangledPair, Source};

/// Weights of the model-side objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub const PAPER: LossWeights = LossWeights {
        alpha: 1.5,
        beta: 1.5,
        lambda: 1.0,
        gamma: 1.5,
    };

    /// `true` when any term besides plain classification carries weight.
    pub fn uses_augmentation(&self) -> bool {
        self.beta != 0.0 || self.lambda != 0.0 || self.gamma != 0.0
    }

    pub fn total(&self, clf: f64, clf_aug: f64, kl: f64, adv: f64) -> f64 {
        self.alpha * clf + self.beta * clf_aug + self.lambda * kl + self.gamma * adv
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::PAPER
    }
}

/// Values of every loss term for one training step. `dis` is reported but
/// not part of `total`; the discriminator minimizes it separately.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub clf: f64,
    pub clf_aug: f64,
    pub kl: f64,
    pub adv: f64,
    pub dis: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn new(clf: f64, clf_aug: f64, kl: f64, adv: f64, dis: f64, weights: LossWeights) -> Result<Self> {
        for (name, v) in [
            ("clf", clf),
            ("clf_aug", clf_aug),
            ("kl", kl),
            ("adv", adv),
            ("dis", dis),
        ] {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("loss component {name} is {v}")));
            }
        }
        Ok(Self {
            clf,
            clf_aug,
            kl,
            adv,
            dis,
            total: weights.total(clf, clf_aug, kl, adv),
            weights,
        })
    }
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn loss_clf(g: &mut Graph<'_>, logits: Var, labels: &[usize]) -> Result<Var> {
    let [rows, classes] = g.shape(logits);
    if labels.len() != rows {
        return Err(Error::dim("loss_clf labels", [rows, classes], [labels.len(), 1]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Contract(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let log_probs = g.log_softmax_rows(logits)?;
    let picked = g.pick_per_row(log_probs, labels)?;
    let mean = g.mean(picked)?;
    Ok(g.neg(mean))
}

/// Classification loss on augmented rows against their type donors' labels.
pub fn loss_clf_aug(g: &mut Graph<'_>, aug_logits: Var, donor_labels: &[usize]) -> Result<Var> {
    loss_clf(g, aug_logits, donor_labels)
}

/// Per-row `KL(softmax(p) ‖ softmax(q))` as an `m×1` column.
fn kl_rows(g: &mut Graph<'_>, p: Var, q: Var) -> Result<Var> {
    if g.shape(p) != g.shape(q) {
        return Err(Error::dim("loss_kl", g.shape(p), g.shape(q)));
    }
    let log_p = g.log_softmax_rows(p)?;
    let log_q = g.log_softmax_rows(q)?;
    let probs = g.exp(log_p);
    let diff = g.sub(log_p, log_q)?;
    let weighted = g.mul(probs, diff)?;
    Ok(g.sum_rows(weighted))
}

/// Reconstruction loss: mean over rows and over the two feature kinds of
/// the KL divergence between softmax-normalized original and reconstructed
/// features. `original` must already be row-aligned with `reconstructed`.
pub fn loss_kl(
    g: &mut Graph<'_>,
    original: &DisentangledPair,
    reconstructed: &DisentangledPair,
) -> Result<Var> {
    let content = kl_rows(g, original.content, reconstructed.content)?;
    let type_ = kl_rows(g, original.type_, reconstructed.type_)?;
    let both = g.concat_rows(&[content, type_])?;
    g.mean(both)
}

fn check_tags(g: &Graph<'_>, logits: Var, tags: &[Source]) -> Result<()> {
    let shape = g.shape(logits);
    if tags.is_empty() {
        return Err(Error::Contract("domain loss over an empty pool".into()));
    }
    if shape != [tags.len(), 1] {
        return Err(Error::dim("domain loss tags", shape, [tags.len(), 1]));
    }
    Ok(())
}

/// Discriminator loss: mean binary cross-entropy with encoder rows as the
/// positive class, computed from logits.
pub fn loss_dis(g: &mut Graph<'_>, logits: Var, tags: &[Source]) -> Result<Var> {
    check_tags(g, logits, tags)?;
    let signs: Vec<f64> = tags
        .iter()
        .map(|t| match t {
            Source::Encoder => 1.0,
            Source::Augmented => -1.0,
        })
        .collect();
    let signed = g.mul_const(logits, Tensor::column(&signs))?;
    let log_lik = g.log_sigmoid(signed);
    let mean = g.mean(log_lik)?;
    Ok(g.neg(mean))
}

/// Adversarial loss: mean of `−log p` over augmented rows only.
pub fn loss_adv(g: &mut Graph<'_>, logits: Var, tags: &[Source]) -> Result<Var> {
    check_tags(g, logits, tags)?;
    let augmented: Vec<usize> = tags
        .iter()
        .enumerate()
        .filter(|(_, t)| **t == Source::Augmented)
        .map(|(i, _)| i)
        .collect();
    if augmented.is_empty() {
        return Err(Error::Contract("adversarial loss needs augmented rows".into()));
    }
    let rows = g.gather_rows(logits, &augmented)?;
    let log_lik = g.log_sigmoid(rows);
    let mean = g.mean(log_lik)?;
    Ok(g.neg(mean))
}

/// Graph nodes of the model-side loss terms. Terms are `None` when the
/// augmentation path was not built.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub clf: Var,
    pub clf_aug: Option<Var>,
    pub kl: Option<Var>,
    pub adv: Option<Var>,
}

/// Weighted model-side total. Terms with zero weight are left out of the
/// graph entirely.
pub fn combine(g: &mut Graph<'_>, terms: &LossTerms, weights: &LossWeights) -> Result<Var> {
    let parts = [
        ("clf", Some(terms.clf), weights.alpha),
        ("clf_aug", terms.clf_aug, weights.beta),
        ("kl", terms.kl, weights.lambda),
        ("adv", terms.adv, weights.gamma),
    ];
    let mut total: Option<Var> = None;
    for (name, var, weight) in parts {
        if weight == 0.0 {
            continue;
        }
        let Some(var) = var else {
            return Err(Error::Contract(format!(
                "loss term {name} has weight {weight} but was not computed"
            )));
        };
        let v = g.value(var).item();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss component {name} is {v}")));
        }
        let scaled = g.scale(var, weight);
        total = Some(match total {
            Some(acc) => g.add(acc, scaled)?,
            None => scaled,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => {
            let zero = g.scale(terms.clf, 0.0);
            Ok(zero)
        }
    }
}
