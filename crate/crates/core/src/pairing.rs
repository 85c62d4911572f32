//! Choosing which rows exchange content and type features.
//!
//! A [`PairPlan`] lists `n` pairs `(c_k, t_k)`. Every pair yields two
//! augmented rows, `content(c_k) + type(t_k)` and `content(t_k) + type(c_k)`,
//! so a batch of `n` rows produces `2n` augmented rows. The encoder side of
//! the discriminator pool is `h[c_k]` followed by `h[t_k]`, which keeps the
//! pool balanced at `2n` rows per side.

use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{mix, AugmentedBatch, DisentangledPair, Representation, Source};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingStrategy {
    /// `t = π(c)` for a uniformly random permutation `π`.
    Uniform,
    /// Type donors drawn with replacement, weighted by the inverse training
    /// frequency of their label; each content donor drawn uniformly from
    /// the rows with a different label.
    #[default]
    MinorityBoost,
}

impl FromStr for PairingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PairingStrategy::Uniform),
            "minority-boost" => Ok(PairingStrategy::MinorityBoost),
            other => Err(Error::Config(format!(
                "unknown pairing strategy {other:?} (expected uniform or minority-boost)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairPlan {
    content: Vec<usize>,
    type_: Vec<usize>,
    degenerate: bool,
}

impl PairPlan {
    /// Every row paired with itself.
    pub fn identity(n: usize) -> Self {
        Self {
            content: (0..n).collect(),
            type_: (0..n).collect(),
            degenerate: true,
        }
    }

    /// Plan from a partner map: row `i` is paired with `partner[i]`.
    pub fn from_permutation(partner: Vec<usize>) -> Result<Self> {
        let mut sorted = partner.clone();
        sorted.sort_unstable();
        if sorted.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(Error::Contract(format!("{partner:?} is not a permutation")));
        }
        Ok(Self {
            content: (0..partner.len()).collect(),
            type_: partner,
            degenerate: false,
        })
    }

    pub fn len(&self) -> usize {
        self.content.len()
    }

    pub fn is_empty(&self) -> bool {
        self.content.is_empty()
    }

    /// Set when the batch was too small to pair distinct rows.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn content_donors(&self) -> &[usize] {
        &self.content
    }

    pub fn type_donors(&self) -> &[usize] {
        &self.type_
    }

    /// `(content row, type row)` for each of the `2n` augmented rows.
    pub fn augmented_rows(&self) -> Vec<(usize, usize)> {
        let forward = self.content.iter().copied().zip(self.type_.iter().copied());
        let backward = self.type_.iter().copied().zip(self.content.iter().copied());
        forward.chain(backward).collect()
    }

    /// Encoder rows entering the discriminator pool: `c_k`, then `t_k`.
    pub fn encoder_rows(&self) -> Vec<usize> {
        self.content.iter().chain(&self.type_).copied().collect()
    }

    pub fn donor_labels(&self, labels: &[usize]) -> Vec<usize> {
        self.augmented_rows().iter().map(|&(_, t)| labels[t]).collect()
    }
}

/// Plans pairs for one strategy, given training-set class counts.
#[derive(Clone, Debug)]
pub struct Pairer {
    strategy: PairingStrategy,
    class_weights: Vec<f64>,
}

impl Pairer {
    pub fn new(strategy: PairingStrategy, class_counts: &[usize]) -> Self {
        let class_weights = class_counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
            .collect();
        Self {
            strategy,
            class_weights,
        }
    }

    pub fn strategy(&self) -> PairingStrategy {
        self.strategy
    }

    pub fn plan(&self, labels: &[usize], rng: &mut Rng) -> Result<PairPlan> {
        let n = labels.len();
        if n < 2 {
            return Ok(PairPlan::identity(n));
        }
        match self.strategy {
            PairingStrategy::Uniform => {
                let mut partner: Vec<usize> = (0..n).collect();
                partner.shuffle(rng);
                PairPlan::from_permutation(partner)
            }
            PairingStrategy::MinorityBoost => self.plan_boosted(labels, rng),
        }
    }

    fn plan_boosted(&self, labels: &[usize], rng: &mut Rng) -> Result<PairPlan> {
        let n = labels.len();
        let weights: Vec<f64> = labels
            .iter()
            .map(|&l| {
                self.class_weights.get(l).copied().ok_or_else(|| {
                    Error::Contract(format!("label {l} has no training frequency"))
                })
            })
            .collect::<Result<_>>()?;
        let weights: Vec<f64> = if weights.iter().all(|&w| w == 0.0) {
            vec![1.0; n]
        } else {
            weights
        };
        let donors = WeightedIndex::new(&weights)
            .map_err(|e| Error::Contract(format!("pairing weights: {e}")))?;

        let mut content = Vec::with_capacity(n);
        let mut type_ = Vec::with_capacity(n);
        for _ in 0..n {
            let t = donors.sample(rng);
            // Content comes uniformly from rows of another label, or from
            // any other row when the batch holds a single label.
            let mut others: Vec<usize> = (0..n).filter(|&i| labels[i] != labels[t]).collect();
            if others.is_empty() {
                others = (0..n).filter(|&i| i != t).collect();
            }
            content.push(others[rng.random_range(0..others.len())]);
            type_.push(t);
        }
        Ok(PairPlan {
            content,
            type_,
            degenerate: false,
        })
    }
}

/// Augmented rows for `plan`, plus the original features each augmented
/// row should reconstruct (row-aligned with the augmented batch).
#[derive(Clone, Debug)]
pub struct AugmentedBuild {
    pub batch: AugmentedBatch,
    pub sources: DisentangledPair,
}

pub fn build_augmented_batch(
    g: &mut Graph<'_>,
    plan: &PairPlan,
    features: &DisentangledPair,
    labels: &[usize],
) -> Result<AugmentedBuild> {
    let [rows, _] = g.shape(features.content);
    if g.shape(features.content) != g.shape(features.type_) {
        return Err(Error::dim(
            "build_augmented_batch",
            g.shape(features.content),
            g.shape(features.type_),
        ));
    }
    if plan.len() != rows || labels.len() != rows {
        return Err(Error::dim(
            "build_augmented_batch plan",
            [rows, 0],
            [plan.len(), labels.len()],
        ));
    }
    let aug_rows = plan.augmented_rows();
    let content_idx: Vec<usize> = aug_rows.iter().map(|&(c, _)| c).collect();
    let type_idx: Vec<usize> = aug_rows.iter().map(|&(_, t)| t).collect();
    let content = g.gather_rows(features.content, &content_idx)?;
    let type_ = g.gather_rows(features.type_, &type_idx)?;
    let batch = mix(g, content, type_, &plan.donor_labels(labels))?;
    Ok(AugmentedBuild {
        batch,
        sources: DisentangledPair { content, type_ },
    })
}

/// Stacks the encoder rows named by `plan` on top of the augmented rows.
/// Returns the pooled features and one tag per row.
pub fn discriminator_pool(
    g: &mut Graph<'_>,
    plan: &PairPlan,
    encoded: &Representation,
    augmented: &Representation,
) -> Result<(Var, Vec<Source>)> {
    let enc = g.gather_rows(encoded.h, &plan.encoder_rows())?;
    let n_enc = g.shape(enc)[0];
    let n_aug = g.shape(augmented.h)[0];
    let pool = g.concat_rows(&[enc, augmented.h])?;
    let mut tags = vec![encoded.source(); n_enc];
    tags.extend(std::iter::repeat_n(augmented.source(), n_aug));
    Ok((pool, tags))
}
