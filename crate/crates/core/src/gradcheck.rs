//! Finite-difference audit of every parameter gradient in the model and
//! discriminator objectives, on a tiny random model.

use rand::Rng as _;
use serde::Serialize;

use crate::autodiff::{relative_error, Fault, Graph, Tensor};
use crate::data::{EncodedExample, Label, LabeledBatch};
use crate::error::{Error, Result};
use crate::model::{DiscriminatorParams, ModelParams};
use crate::pairing::Pairer;
use crate::rng::{stream_rng, Stream};
use crate::trainer::{discriminator_loss, model_loss, StepContext, TrainConfig};

pub const MAX_DIM: usize = 16;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub dim: usize,
    pub batch: usize,
    pub seed: u64,
    pub vocab_size: usize,
    pub step: f64,
    /// Deliberately wrong backward rule, for negative controls.
    pub fault: Option<Fault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            batch: 4,
            seed: 7,
            vocab_size: 23,
            step: 1e-6,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupResult {
    pub objective: &'static str,
    pub name: String,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupResult>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.relative_error < self.tolerance)
    }
}

fn random_batch(cfg: &GradcheckConfig) -> LabeledBatch {
    let mut rng = stream_rng(cfg.seed, Stream::GradCheck, 0);
    let examples: Vec<EncodedExample> = (0..cfg.batch)
        .map(|i| {
            let len = rng.random_range(1..=6);
            EncodedExample {
                ids: (0..len).map(|_| rng.random_range(0..cfg.vocab_size as u32)).collect(),
                // Alternate the first two rows' classes so pairing always
                // mixes at least two labels.
                class: if i < 2 { i } else { rng.random_range(0..Label::COUNT) },
            }
        })
        .collect();
    LabeledBatch::from_examples(&examples)
}

type Objective<'a> = dyn Fn(&ModelParams, &DiscriminatorParams, Option<Fault>) -> Result<(f64, Vec<Tensor>)> + 'a;

/// Compares analytic gradients against central differences for every
/// model parameter tensor under the model objective and every
/// discriminator tensor under the discriminator objective.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.dim == 0 || cfg.dim > MAX_DIM {
        return Err(Error::Config(format!(
            "gradcheck dim must lie in 1..={MAX_DIM}, got {}",
            cfg.dim
        )));
    }
    if cfg.batch == 0 || cfg.batch > 64 {
        return Err(Error::Config(format!(
            "gradcheck batch must lie in 1..=64, got {}",
            cfg.batch
        )));
    }
    let config = TrainConfig {
        dim: cfg.dim,
        vocab_size: cfg.vocab_size,
        seed: cfg.seed,
        batch_size: cfg.batch,
        ..TrainConfig::default()
    };
    let model = ModelParams::init(config.dims(), cfg.seed)?;
    let disc = DiscriminatorParams::init(cfg.dim, cfg.seed.wrapping_add(1));
    let batch = random_batch(cfg);
    let mut counts = vec![0; Label::COUNT];
    for &l in &batch.labels {
        counts[l] += 1;
    }
    let pairer = Pairer::new(config.pairing, &counts);
    let ctx = StepContext {
        seed: cfg.seed,
        step: 1,
    };

    let model_objective = |m: &ModelParams, d: &DiscriminatorParams, fault: Option<Fault>| {
        let mut g = fault.map_or_else(Graph::new, Graph::with_fault);
        let mv = m.bind(&mut g, true);
        let dv = d.bind(&mut g, false);
        let loss = model_loss(&mut g, &mv, &dv, &batch, &pairer, &config, &ctx)?;
        let value = g.value(loss.total).item();
        let mut grads = g.backward(loss.total)?;
        let grads = mv.vars().iter().map(|&v| grads.take_or_zeros(v, g.shape(v))).collect();
        Ok((value, grads))
    };
    let disc_objective = |m: &ModelParams, d: &DiscriminatorParams, fault: Option<Fault>| {
        let mut g = fault.map_or_else(Graph::new, Graph::with_fault);
        let mv = m.bind(&mut g, false);
        let dv = d.bind(&mut g, true);
        let loss = discriminator_loss(&mut g, &mv, &dv, &batch, &pairer, &config, &ctx)?;
        let value = g.value(loss).item();
        let mut grads = g.backward(loss)?;
        let grads = dv.vars().iter().map(|&v| grads.take_or_zeros(v, g.shape(v))).collect();
        Ok((value, grads))
    };

    let mut groups = Vec::new();
    check_side(
        "model",
        &model_objective,
        &model,
        &disc,
        true,
        cfg,
        &mut groups,
    )?;
    check_side(
        "discriminator",
        &disc_objective,
        &model,
        &disc,
        false,
        cfg,
        &mut groups,
    )?;
    Ok(GradcheckReport {
        groups,
        tolerance: TOLERANCE,
    })
}

fn check_side(
    objective_name: &'static str,
    objective: &Objective<'_>,
    model: &ModelParams,
    disc: &DiscriminatorParams,
    perturb_model: bool,
    cfg: &GradcheckConfig,
    out: &mut Vec<GroupResult>,
) -> Result<()> {
    let (_, analytic) = objective(model, disc, cfg.fault)?;
    let names: Vec<String> = if perturb_model {
        model.named_tensors().into_iter().map(|(n, _)| n).collect()
    } else {
        disc.named_tensors().into_iter().map(|(n, _)| n).collect()
    };
    let mut m = model.clone();
    let mut d = disc.clone();
    let h = cfg.step;
    for (k, (name, grad)) in names.into_iter().zip(&analytic).enumerate() {
        let mut numeric = Tensor::zeros(grad.rows(), grad.cols());
        for i in 0..grad.len() {
            let mut eval_at = |delta: f64| -> Result<f64> {
                let tensors = if perturb_model { m.tensors_mut() } else { d.tensors_mut() };
                let slot = &mut tensors.into_iter().nth(k).expect("tensor index").data_mut()[i];
                let original = *slot;
                *slot = original + delta;
                let value = objective(&m, &d, None)?.0;
                let tensors = if perturb_model { m.tensors_mut() } else { d.tensors_mut() };
                tensors.into_iter().nth(k).expect("tensor index").data_mut()[i] = original;
                Ok(value)
            };
            let plus = eval_at(h)?;
            let minus = eval_at(-h)?;
            numeric.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        out.push(GroupResult {
            objective: objective_name,
            name,
            relative_error: relative_error(grad.data(), numeric.data()),
        });
    }
    Ok(())
}
