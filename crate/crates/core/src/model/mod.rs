//! Encoder, the four MLP heads and the feature-mixing rule.
//!
//! Parameters live in plain structs ([`ModelParams`], [`DiscriminatorParams`]).
//! A forward pass binds them into a [`Graph`], as trainable leaves or as
//! frozen ones, and the functions here build on the resulting [`Var`]s.

mod checkpoint;

use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Rng, Stream};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader};

const EMBEDDING_STD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Representation width `d`.
    pub dim: usize,
    /// Hash buckets in the token-embedding table.
    pub vocab_size: usize,
    pub num_classes: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.vocab_size == 0 || self.num_classes < 2 {
            return Err(Error::Config(format!("invalid model dimensions {self:?}")));
        }
        Ok(())
    }
}

/// Affine map `x·W + b` with `W: in×out`, `b: 1×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(input, output),
            bias: Tensor::zeros(1, output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let data = (0..input * output).map(|_| dist.sample(rng)).collect();
        Self {
            weight: Tensor::new(input, output, data).expect("shape matches"),
            bias: Tensor::zeros(1, output),
        }
    }
}

/// Two-layer perceptron with one tanh hidden layer of the input width.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            hidden: Linear::zeros(input, input),
            output: Linear::zeros(input, output),
        }
    }

    fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            hidden: Linear::init(input, input, rng),
            output: Linear::init(input, output, rng),
        }
    }

    fn tensors(&self) -> [&Tensor; 4] {
        [
            &self.hidden.weight,
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }

    fn bind<'p>(&'p self, g: &mut Graph<'p>, trainable: bool) -> MlpVars {
        let mut leaf = |t: &'p Tensor| if trainable { g.param(t) } else { g.frozen(t) };
        MlpVars {
            w1: leaf(&self.hidden.weight),
            b1: leaf(&self.hidden.bias),
            w2: leaf(&self.output.weight),
            b2: leaf(&self.output.bias),
        }
    }
}

const MLP_PARTS: [&str; 4] = ["hidden.weight", "hidden.bias", "output.weight", "output.bias"];

#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl MlpVars {
    fn vars(&self) -> [Var; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// `act_out(tanh(x·W1 + b1)·W2 + b2)` with dropout on the hidden layer.
    fn forward(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        dropout: f64,
        rng: Option<&mut Rng>,
        tanh_out: bool,
    ) -> Result<Var> {
        let [_, width] = g.shape(x);
        let expected = g.shape(self.w1)[0];
        if width != expected {
            return Err(Error::dim("mlp input", g.shape(x), g.shape(self.w1)));
        }
        let z1 = g.matmul(x, self.w1)?;
        let z1 = g.add_row(z1, self.b1)?;
        let a1 = g.tanh(z1);
        let a1 = g.dropout(a1, dropout, rng)?;
        let z2 = g.matmul(a1, self.w2)?;
        let z2 = g.add_row(z2, self.b2)?;
        Ok(if tanh_out { g.tanh(z2) } else { z2 })
    }
}

/// Encoder, classifier and the two disentangling heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    pub embedding: Tensor,
    pub encoder: Mlp,
    pub classifier: Mlp,
    pub content: Mlp,
    pub type_head: Mlp,
}

impl ModelParams {
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let normal = Normal::new(0.0, EMBEDDING_STD).expect("positive std");
        let emb: Vec<f64> = (0..dims.vocab_size * dims.dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Ok(Self {
            dims,
            embedding: Tensor::new(dims.vocab_size, dims.dim, emb)?,
            encoder: Mlp::init(dims.dim, dims.dim, &mut rng),
            classifier: Mlp::init(dims.dim, dims.num_classes, &mut rng),
            content: Mlp::init(dims.dim, dims.dim, &mut rng),
            type_head: Mlp::init(dims.dim, dims.dim, &mut rng),
        })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            embedding: Tensor::zeros(dims.vocab_size, dims.dim),
            encoder: Mlp::zeros(dims.dim, dims.dim),
            classifier: Mlp::zeros(dims.dim, dims.num_classes),
            content: Mlp::zeros(dims.dim, dims.dim),
            type_head: Mlp::zeros(dims.dim, dims.dim),
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    /// All tensors with their checkpoint names, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (head, mlp) in self.heads() {
            for (part, t) in MLP_PARTS.iter().zip(mlp.tensors()) {
                out.push((format!("{head}.{part}"), t));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for mlp in [
            &mut self.encoder,
            &mut self.classifier,
            &mut self.content,
            &mut self.type_head,
        ] {
            out.extend(mlp.tensors_mut());
        }
        out
    }

    fn heads(&self) -> [(&'static str, &Mlp); 4] {
        [
            ("encoder", &self.encoder),
            ("classifier", &self.classifier),
            ("content", &self.content),
            ("type", &self.type_head),
        ]
    }

    pub fn bind<'p>(&'p self, g: &mut Graph<'p>, trainable: bool) -> ModelVars {
        ModelVars {
            dims: self.dims,
            embedding: if trainable {
                g.param(&self.embedding)
            } else {
                g.frozen(&self.embedding)
            },
            encoder: self.encoder.bind(g, trainable),
            classifier: self.classifier.bind(g, trainable),
            content: self.content.bind(g, trainable),
            type_head: self.type_head.bind(g, trainable),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn checksum(&self) -> u64 {
        checksum(self.named_tensors().into_iter().map(|(_, t)| t))
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// The domain discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub mlp: Mlp,
}

impl DiscriminatorParams {
    pub fn init(dim: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Init, 1);
        Self {
            mlp: Mlp::init(dim, 1, &mut rng),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mlp: Mlp::zeros(dim, 1),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        MLP_PARTS
            .iter()
            .zip(self.mlp.tensors())
            .map(|(part, t)| (format!("discriminator.{part}"), t))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.tensors_mut().into_iter().collect()
    }

    pub fn bind<'p>(&'p self, g: &mut Graph<'p>, trainable: bool) -> DiscriminatorVars {
        DiscriminatorVars {
            mlp: self.mlp.bind(g, trainable),
        }
    }

    pub fn checksum(&self) -> u64 {
        checksum(self.mlp.tensors())
    }
}

fn checksum<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> u64 {
    use std::hash::{DefaultHasher, Hasher};
    let mut h = DefaultHasher::new();
    for t in tensors {
        h.write_usize(t.rows());
        h.write_usize(t.cols());
        for v in t.data() {
            h.write_u64(v.to_bits());
        }
    }
    h.finish()
}

/// Where a representation row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    Encoder,
    Augmented,
}

/// Rows of `h` sharing one [`Source`].
#[derive(Clone, Copy, Debug)]
pub struct Representation {
    pub h: Var,
    source: Source,
}

impl Representation {
    pub fn new(h: Var, source: Source) -> Self {
        Self { h, source }
    }

    pub fn source(&self) -> Source {
        self.source
    }
}

/// Content and type features of the same rows.
#[derive(Clone, Copy, Debug)]
pub struct DisentangledPair {
    pub content: Var,
    pub type_: Var,
}

/// Classifier output: raw logits and their row-wise softmax.
#[derive(Clone, Copy, Debug)]
pub struct ClassScores {
    pub logits: Var,
    pub probs: Var,
}

/// Discriminator output: logits and `p = σ(logits)`, the probability that a
/// row is an encoder representation.
#[derive(Clone, Copy, Debug)]
pub struct DomainScores {
    pub logits: Var,
    pub probs: Var,
}

/// Augmented rows with the label of each row's type donor.
#[derive(Clone, Debug)]
pub struct AugmentedBatch {
    pub rep: Representation,
    pub donor_labels: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    dims: ModelDims,
    pub embedding: Var,
    pub encoder: MlpVars,
    pub classifier: MlpVars,
    pub content: MlpVars,
    pub type_head: MlpVars,
}

impl ModelVars {
    /// Same order as [`ModelParams::named_tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.embedding];
        for mlp in [&self.encoder, &self.classifier, &self.content, &self.type_head] {
            out.extend(mlp.vars());
        }
        out
    }

    /// Mean-pooled token embeddings through the encoder MLP. `rng` is
    /// `Some` in training mode, which enables dropout.
    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        batch: &LabeledBatch,
        dropout: f64,
        rng: Option<&mut Rng>,
    ) -> Result<Representation> {
        let pooled = g.embedding_mean(self.embedding, &batch.sequences())?;
        let h = self.encoder.forward(g, pooled, dropout, rng, true)?;
        Ok(Representation::new(h, Source::Encoder))
    }

    pub fn classify(
        &self,
        g: &mut Graph<'_>,
        rep: &Representation,
        dropout: f64,
        rng: Option<&mut Rng>,
    ) -> Result<ClassScores> {
        let logits = self.classifier.forward(g, rep.h, dropout, rng, false)?;
        let probs = g.softmax_rows(logits)?;
        Ok(ClassScores { logits, probs })
    }

    /// Content and type heads applied to the same rows. The two heads draw
    /// independent dropout masks from `rng`.
    pub fn disentangle(
        &self,
        g: &mut Graph<'_>,
        rep: &Representation,
        dropout: f64,
        mut rng: Option<&mut Rng>,
    ) -> Result<DisentangledPair> {
        let content = self.content.forward(g, rep.h, dropout, rng.as_deref_mut(), false)?;
        let type_ = self.type_head.forward(g, rep.h, dropout, rng, false)?;
        Ok(DisentangledPair { content, type_ })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorVars {
    pub mlp: MlpVars,
}

impl DiscriminatorVars {
    pub fn vars(&self) -> Vec<Var> {
        self.mlp.vars().to_vec()
    }

    pub fn discriminate(
        &self,
        g: &mut Graph<'_>,
        h: Var,
        dropout: f64,
        rng: Option<&mut Rng>,
    ) -> Result<DomainScores> {
        let logits = self.mlp.forward(g, h, dropout, rng, false)?;
        let probs = g.sigmoid(logits);
        Ok(DomainScores { logits, probs })
    }
}

/// `content + type_`, row by row; each row carries its type donor's label.
pub fn mix(
    g: &mut Graph<'_>,
    content: Var,
    type_: Var,
    donor_labels: &[usize],
) -> Result<AugmentedBatch> {
    let h = g.add(content, type_)?;
    let rows = g.shape(h)[0];
    if donor_labels.len() != rows {
        return Err(Error::dim("mix labels", g.shape(h), [donor_labels.len(), 1]));
    }
    Ok(AugmentedBatch {
        rep: Representation::new(h, Source::Augmented),
        donor_labels: donor_labels.to_vec(),
    })
}
