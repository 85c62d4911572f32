use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Example, Label};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Synthetic imbalanced corpus with an explicit content/type decomposition.
///
/// Every token is either a *type* word, drawn from a vocabulary owned by
/// the example's class, or (with probability `noise`) a *content* word
/// from a vocabulary shared by all classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Class prior per label, in [`Label::ALL`] order. Shorter vectors use
    /// the first labels only.
    pub priors: Vec<f64>,
    pub vocab_per_class: usize,
    pub content_vocab: usize,
    pub noise: f64,
    pub size: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let mut priors = vec![0.88];
        priors.extend([0.02; 6]);
        Self {
            priors,
            vocab_per_class: 120,
            content_vocab: 600,
            noise: 0.3,
            size: 3000,
            min_tokens: 6,
            max_tokens: 16,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.priors.len();
        if !(2..=Label::COUNT).contains(&k) {
            return Err(Error::Config(format!(
                "need between 2 and {} class priors, got {k}",
                Label::COUNT
            )));
        }
        if self.priors.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config("class priors must be finite and non-negative".into()));
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("class priors sum to {total}, not 1")));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise {} outside [0, 1]", self.noise)));
        }
        if self.vocab_per_class == 0 || (self.noise > 0.0 && self.content_vocab == 0) {
            return Err(Error::Config("vocabularies must be non-empty".into()));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(Error::Config(format!(
                "token range {}..={} is invalid",
                self.min_tokens, self.max_tokens
            )));
        }
        Ok(())
    }

    /// Surface form of type word `k` of `label`.
    pub fn type_word(&self, label: Label, k: usize) -> String {
        pseudo_word(label.index() * self.vocab_per_class + k)
    }

    pub fn content_word(&self, k: usize) -> String {
        pseudo_word(Label::COUNT * self.vocab_per_class + k)
    }
}

const SYLLABLES: [&str; 20] = [
    "ba", "ke", "di", "mo", "lu", "ra", "se", "ti", "vo", "nu", "pa", "ge", "fi", "zo", "hu", "ja",
    "we", "yi", "co", "xu",
];

/// Injective map from an id to a lowercase alphabetic pseudo-word of at
/// least three syllables.
pub fn pseudo_word(mut id: usize) -> String {
    let base = SYLLABLES.len();
    let mut parts = Vec::new();
    loop {
        parts.push(SYLLABLES[id % base]);
        id /= base;
        if id == 0 {
            break;
        }
    }
    // "q" is not a syllable, so padding keeps the map injective.
    while parts.len() < 3 {
        parts.push("q");
    }
    parts.concat()
}

pub fn synth_generate(config: &SynthConfig) -> Result<Vec<Example>> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, Stream::Synth, 0);
    let label_dist = WeightedIndex::new(&config.priors)
        .map_err(|e| Error::Config(format!("class priors: {e}")))?;
    let mut out = Vec::with_capacity(config.size);
    for _ in 0..config.size {
        let label = Label::ALL[label_dist.sample(&mut rng)];
        let n_tokens = rng.random_range(config.min_tokens..=config.max_tokens);
        let words: Vec<String> = (0..n_tokens)
            .map(|_| {
                if config.noise > 0.0 && rng.random::<f64>() < config.noise {
                    config.content_word(rng.random_range(0..config.content_vocab))
                } else {
                    config.type_word(label, rng.random_range(0..config.vocab_per_class))
                }
            })
            .collect();
        out.push(Example::new(words.join(" "), label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn pseudo_words_are_distinct() {
        let words: HashSet<String> = (0..20_000).map(pseudo_word).collect();
        assert_eq!(words.len(), 20_000);
        assert!(words.iter().all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
    }

    #[test]
    fn rejects_bad_priors() {
        let bad = SynthConfig {
            priors: vec![0.5, 0.6],
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&bad), Err(Error::Config(_))));
        let negative = SynthConfig {
            priors: vec![1.5, -0.5],
            ..SynthConfig::default()
        };
        assert!(negative.validate().is_err());
        let one = SynthConfig {
            priors: vec![1.0],
            ..SynthConfig::default()
        };
        assert!(one.validate().is_err());
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig {
            size: 200,
            ..SynthConfig::default()
        };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig { seed: 8, ..cfg.clone() };
        assert_ne!(synth_generate(&cfg).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn noise_zero_uses_only_class_words() {
        let cfg = SynthConfig {
            noise: 0.0,
            size: 300,
            ..SynthConfig::default()
        };
        for ex in synth_generate(&cfg).unwrap() {
            let own: HashSet<String> = (0..cfg.vocab_per_class)
                .map(|k| cfg.type_word(ex.label, k))
                .collect();
            assert!(ex.text.split(' ').all(|w| own.contains(w)), "{ex:?}");
        }
    }
}
