//! Alternating optimization: one model update, then one discriminator
//! update, per sampled batch.

mod config;

use std::io::Write;
use std::path::Path;

use rand::Rng as _;

pub use config::{Profile, TrainConfig};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{class_counts, EncodedExample, LabeledBatch};
use crate::error::{Error, Result};
use crate::metrics::{argmax_predict, evaluate, MetricsReport};
use crate::model::{
    DiscriminatorParams, DiscriminatorVars, ModelParams, ModelVars, Representation,
};
use crate::objectives::{
    combine, loss_adv, loss_clf, loss_clf_aug, loss_dis, loss_kl, LossBreakdown, LossTerms,
};
use crate::optim::{clip_gradients, AdamW};
use crate::pairing::{build_augmented_batch, discriminator_pool, AugmentedBuild, PairPlan, Pairer};
use crate::rng::{stream_rng, Rng, Stream};

/// Where the dropout and pairing draws of one forward pass come from.
/// Two passes with the same context see the same masks and pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepContext {
    pub seed: u64,
    pub step: u64,
}

impl StepContext {
    pub fn rng(&self, stream: Stream) -> Rng {
        stream_rng(self.seed, stream, self.step)
    }
}

/// Graph nodes of the model-side objective.
#[derive(Clone, Copy, Debug)]
pub struct ModelLoss {
    pub total: Var,
    pub terms: LossTerms,
    /// Discriminator loss on the same pool, for reporting only.
    pub dis: Option<Var>,
}

impl ModelLoss {
    pub fn breakdown(&self, g: &Graph<'_>, config: &TrainConfig) -> Result<LossBreakdown> {
        let value = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
        LossBreakdown::new(
            g.value(self.terms.clf).item(),
            value(self.terms.clf_aug),
            value(self.terms.kl),
            value(self.terms.adv),
            value(self.dis),
            config.weights(),
        )
    }
}

fn encode(
    g: &mut Graph<'_>,
    mv: &ModelVars,
    batch: &LabeledBatch,
    config: &TrainConfig,
    ctx: &StepContext,
) -> Result<Representation> {
    let mut rng = ctx.rng(Stream::EncoderDropout);
    mv.encode(g, batch, config.dropout_model, Some(&mut rng))
}

fn augment(
    g: &mut Graph<'_>,
    mv: &ModelVars,
    enc: &Representation,
    labels: &[usize],
    pairer: &Pairer,
    config: &TrainConfig,
    ctx: &StepContext,
) -> Result<(PairPlan, AugmentedBuild)> {
    let mut rng = ctx.rng(Stream::HeadDropout);
    let features = mv.disentangle(g, enc, config.dropout_model, Some(&mut rng))?;
    let plan = pairer.plan(labels, &mut ctx.rng(Stream::Pairing))?;
    let build = build_augmented_batch(g, &plan, &features, labels)?;
    Ok((plan, build))
}

/// Builds the weighted model objective in training mode. The augmentation
/// branch is left out of the graph when its three weights are all zero.
pub fn model_loss(
    g: &mut Graph<'_>,
    mv: &ModelVars,
    dv: &DiscriminatorVars,
    batch: &LabeledBatch,
    pairer: &Pairer,
    config: &TrainConfig,
    ctx: &StepContext,
) -> Result<ModelLoss> {
    if batch.is_empty() {
        return Err(Error::Contract("training step on an empty batch".into()));
    }
    let weights = config.weights();
    let enc = encode(g, mv, batch, config, ctx)?;
    let scores = mv.classify(
        g,
        &enc,
        config.dropout_model,
        Some(&mut ctx.rng(Stream::ClassifierDropout)),
    )?;
    let clf = loss_clf(g, scores.logits, &batch.labels)?;
    let mut terms = LossTerms {
        clf,
        clf_aug: None,
        kl: None,
        adv: None,
    };
    let mut dis = None;

    if weights.uses_augmentation() {
        let (plan, build) = augment(g, mv, &enc, &batch.labels, pairer, config, ctx)?;
        let aug = &build.batch;
        let aug_scores = mv.classify(
            g,
            &aug.rep,
            config.dropout_model,
            Some(&mut ctx.rng(Stream::AugClassifierDropout)),
        )?;
        terms.clf_aug = Some(loss_clf_aug(g, aug_scores.logits, &aug.donor_labels)?);

        let recon = mv.disentangle(
            g,
            &aug.rep,
            config.dropout_model,
            Some(&mut ctx.rng(Stream::ReconDropout)),
        )?;
        terms.kl = Some(loss_kl(g, &build.sources, &recon)?);

        let (pool, tags) = discriminator_pool(g, &plan, &enc, &aug.rep)?;
        let domain = dv.discriminate(
            g,
            pool,
            config.dropout_disc,
            Some(&mut ctx.rng(Stream::DiscDropout)),
        )?;
        terms.adv = Some(loss_adv(g, domain.logits, &tags)?);
        dis = Some(loss_dis(g, domain.logits, &tags)?);
    }

    let total = combine(g, &terms, &weights)?;
    Ok(ModelLoss { total, terms, dis })
}

/// Discriminator objective over the encoder and augmented pool of `batch`.
pub fn discriminator_loss(
    g: &mut Graph<'_>,
    mv: &ModelVars,
    dv: &DiscriminatorVars,
    batch: &LabeledBatch,
    pairer: &Pairer,
    config: &TrainConfig,
    ctx: &StepContext,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("training step on an empty batch".into()));
    }
    let enc = encode(g, mv, batch, config, ctx)?;
    let (plan, build) = augment(g, mv, &enc, &batch.labels, pairer, config, ctx)?;
    let (pool, tags) = discriminator_pool(g, &plan, &enc, &build.batch.rep)?;
    let domain = dv.discriminate(
        g,
        pool,
        config.dropout_disc,
        Some(&mut ctx.rng(Stream::DiscDropout)),
    )?;
    loss_dis(g, domain.logits, &tags)
}

fn collect_grads(g: &Graph<'_>, loss: Var, vars: &[Var]) -> Result<Vec<Tensor>> {
    let mut grads = g.backward(loss)?;
    Ok(vars.iter().map(|&v| grads.take_or_zeros(v, g.shape(v))).collect())
}

/// Model, discriminator and their optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: ModelParams,
    disc: DiscriminatorParams,
    model_opt: AdamW,
    disc_opt: AdamW,
    pairer: Pairer,
    last_clip_norm: f64,
}

impl Trainer {
    /// Fresh parameters from `config.seed`. `class_counts` are the training
    /// split's label frequencies, used by the pairing strategy.
    pub fn new(config: TrainConfig, class_counts: &[usize]) -> Result<Self> {
        config.validate()?;
        let model = ModelParams::init(config.dims(), config.seed)?;
        let disc = DiscriminatorParams::init(config.dim, config.seed);
        Self::from_parts(config, model, disc, class_counts)
    }

    pub fn from_parts(
        config: TrainConfig,
        model: ModelParams,
        disc: DiscriminatorParams,
        class_counts: &[usize],
    ) -> Result<Self> {
        config.validate()?;
        if model.dims() != config.dims() {
            return Err(Error::Config(format!(
                "model dims {:?} disagree with config {:?}",
                model.dims(),
                config.dims()
            )));
        }
        let model_opt = AdamW::new(model.named_tensors().iter().map(|(_, t)| t.shape()));
        let disc_opt = AdamW::new(disc.named_tensors().iter().map(|(_, t)| t.shape()));
        Ok(Self {
            pairer: Pairer::new(config.pairing, class_counts),
            config,
            model,
            disc,
            model_opt,
            disc_opt,
            last_clip_norm: 0.0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn discriminator(&self) -> &DiscriminatorParams {
        &self.disc
    }

    pub fn pairer(&self) -> &Pairer {
        &self.pairer
    }

    /// Global gradient norm after clipping in the most recent update.
    pub fn last_clipped_norm(&self) -> f64 {
        self.last_clip_norm
    }

    pub fn into_parts(self) -> (ModelParams, DiscriminatorParams) {
        (self.model, self.disc)
    }

    fn context(&self, step: u64) -> StepContext {
        StepContext {
            seed: self.config.seed,
            step,
        }
    }

    /// Updates the model parameters with the discriminator frozen. On
    /// error nothing is modified.
    pub fn model_step(&mut self, batch: &LabeledBatch, step: u64) -> Result<LossBreakdown> {
        let ctx = self.context(step);
        let (breakdown, mut grads) = {
            let mut g = Graph::new();
            let mv = self.model.bind(&mut g, true);
            let dv = self.disc.bind(&mut g, false);
            let loss = model_loss(&mut g, &mv, &dv, batch, &self.pairer, &self.config, &ctx)?;
            let breakdown = loss.breakdown(&g, &self.config)?;
            (breakdown, collect_grads(&g, loss.total, &mv.vars())?)
        };
        let norm = clip_gradients(&mut grads, self.config.clip_norm);
        self.model_opt.step(
            &mut self.model.tensors_mut(),
            &grads,
            self.config.lr_model,
            self.config.weight_decay,
        )?;
        self.last_clip_norm = norm.min(self.config.clip_norm);
        Ok(breakdown)
    }

    /// Updates the discriminator with the model frozen and returns its
    /// loss. On error nothing is modified.
    pub fn discriminator_step(&mut self, batch: &LabeledBatch, step: u64) -> Result<f64> {
        let ctx = self.context(step);
        let (value, mut grads) = {
            let mut g = Graph::new();
            let mv = self.model.bind(&mut g, false);
            let dv = self.disc.bind(&mut g, true);
            let loss =
                discriminator_loss(&mut g, &mv, &dv, batch, &self.pairer, &self.config, &ctx)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("discriminator loss is {value}")));
            }
            (value, collect_grads(&g, loss, &dv.vars())?)
        };
        let norm = clip_gradients(&mut grads, self.config.clip_norm);
        self.disc_opt.step(
            &mut self.disc.tensors_mut(),
            &grads,
            self.config.lr_disc,
            self.config.weight_decay,
        )?;
        self.last_clip_norm = norm.min(self.config.clip_norm);
        Ok(value)
    }
}

/// Uniform sample with replacement from the training split.
pub fn sample_batch(examples: &[EncodedExample], batch_size: usize, seed: u64, step: u64) -> LabeledBatch {
    let mut rng = stream_rng(seed, Stream::BatchSampler, step);
    let picks: Vec<&EncodedExample> = (0..batch_size)
        .map(|_| &examples[rng.random_range(0..examples.len())])
        .collect();
    LabeledBatch::from_examples(picks)
}

const EVAL_BATCH: usize = 256;

/// Class predictions in inference mode (no dropout).
pub fn predict(model: &ModelParams, examples: &[EncodedExample]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let batch = LabeledBatch::from_examples(chunk);
        let mut g = Graph::new();
        let mv = model.bind(&mut g, false);
        let rep = mv.encode(&mut g, &batch, 0.0, None)?;
        let scores = mv.classify(&mut g, &rep, 0.0, None)?;
        out.extend(argmax_predict(g.value(scores.probs)));
    }
    Ok(out)
}

pub fn evaluate_model(
    model: &ModelParams,
    examples: &[EncodedExample],
    mode: crate::data::LabelMode,
) -> Result<MetricsReport> {
    let predictions = predict(model, examples)?;
    let gold: Vec<usize> = examples.iter().map(|e| e.class).collect();
    evaluate(&predictions, &gold, model.dims().num_classes, mode)
}

/// One row of the per-step loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub clf: f64,
    pub clf_aug: f64,
    pub kl: f64,
    pub adv: f64,
    /// Discriminator-step loss; the model step's estimate when the
    /// discriminator update was skipped.
    pub dis: f64,
    pub total: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,clf,clf_aug,kl,adv,dis,total";

pub fn write_loss_csv(w: &mut impl Write, log: &[LossRecord]) -> Result<()> {
    writeln!(w, "{LOSS_CSV_HEADER}")?;
    for r in log {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.step, r.clf, r.clf_aug, r.kl, r.adv, r.dis, r.total
        )?;
    }
    Ok(())
}

pub fn save_loss_csv(path: &Path, log: &[LossRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_loss_csv(&mut w, log)?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the evaluation with the highest dev macro-F1.
    pub best_model: ModelParams,
    pub best_step: u64,
    pub best_report: MetricsReport,
    pub final_model: ModelParams,
    pub discriminator: DiscriminatorParams,
    pub log: Vec<LossRecord>,
    /// `(step, dev macro-F1)` at every evaluation.
    pub evaluations: Vec<(u64, f64)>,
}

/// Runs `config.max_steps` alternating updates, evaluating on `dev` every
/// `config.eval_every` steps and after the last one.
pub fn train(
    train_set: &[EncodedExample],
    dev_set: &[EncodedExample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let num_classes = config.label_mode.num_classes();
    if let Some(bad) = train_set.iter().chain(dev_set).find(|e| e.class >= num_classes) {
        return Err(Error::Config(format!(
            "class {} out of range for {num_classes} classes",
            bad.class
        )));
    }
    let counts = class_counts(train_set, num_classes);
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Config(
            "training data must contain at least two classes".into(),
        ));
    }
    if dev_set.is_empty() {
        return Err(Error::Config("dev split is empty".into()));
    }

    let mut trainer = Trainer::new(config.clone(), &counts)?;
    let mut log = Vec::with_capacity(config.max_steps as usize);
    let mut evaluations = Vec::new();
    let mut best: Option<(u64, MetricsReport, ModelParams)> = None;

    for step in 1..=config.max_steps {
        let batch = sample_batch(train_set, config.batch_size, config.seed, step);
        let mut breakdown = trainer.model_step(&batch, step)?;
        if (step - 1) % config.disc_every_n == 0 {
            breakdown.dis = trainer.discriminator_step(&batch, step)?;
        }
        log.push(LossRecord {
            step,
            clf: breakdown.clf,
            clf_aug: breakdown.clf_aug,
            kl: breakdown.kl,
            adv: breakdown.adv,
            dis: breakdown.dis,
            total: breakdown.total,
        });

        if step % config.eval_every == 0 || step == config.max_steps {
            let report = evaluate_model(trainer.model(), dev_set, config.label_mode)?;
            log::info!(
                "step {step}: clf {:.4} total {:.4} dis {:.4} dev macro-F1 {:.2}",
                breakdown.clf,
                breakdown.total,
                breakdown.dis,
                100.0 * report.macro_f1
            );
            evaluations.push((step, report.macro_f1));
            if best.as_ref().is_none_or(|(_, b, _)| report.macro_f1 > b.macro_f1) {
                best = Some((step, report, trainer.model().clone()));
            }
        }
    }

    let (best_step, best_report, best_model) = best.expect("at least one evaluation runs");
    let (final_model, discriminator) = trainer.into_parts();
    Ok(TrainOutcome {
        best_model,
        best_step,
        best_report,
        final_model,
        discriminator,
        log,
        evaluations,
    })
}
