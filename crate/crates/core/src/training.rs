//! Cross-entropy training with an optional density penalty, adversarial
//! example augmentation and per-step stability monitoring.

use std::fmt::Write as _;
use std::path::Path;

use crate::attacks::{self, AttackSpec, Norm};
use crate::autodiff::{backward, Graph, Tensor};
use crate::data::{batches, Dataset};
use crate::density_reg::{penalty_in_graph, RegularizerSpec};
use crate::error::{Error, Result};
use crate::evalrep::format_float;
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AdvTrain {
    None,
    Fgsm { eps: f64 },
    Pgd {
        norm: Norm,
        eps: f64,
        alpha: f64,
        steps: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub reg: RegularizerSpec,
    pub adv_train: AdvTrain,
    pub seed: u64,
    pub abort_on_nonfinite: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::adam(),
            reg: RegularizerSpec::default(),
            adv_train: AdvTrain::None,
            seed: 0,
            abort_on_nonfinite: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        self.reg.validate()
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub epoch: usize,
    pub step: usize,
    pub ce_loss: f64,
    pub penalty: f64,
    pub total: f64,
    /// Frobenius norm of the penalized input gradient over the batch.
    pub input_grad_fro: f64,
    pub finite: bool,
    /// Wall-clock seconds for the step. Not written to the CSV log.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<MetricRecord>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,step,ce_loss,penalty,total,input_grad_fro,finite";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAIN_LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.step,
                format_float(r.ce_loss),
                format_float(r.penalty),
                format_float(r.total),
                format_float(r.input_grad_fro),
                r.finite
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn last(&self) -> Option<&MetricRecord> {
        self.records.last()
    }
}

/// Per-parameter optimizer state.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(model: &Model, kind: OptimizerKind, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .parameters()
            .iter()
            .map(|p| vec![0.0; p.numel()])
            .collect();
        Self {
            kind,
            learning_rate,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn deltas(&mut self, grads: &[Tensor]) -> Vec<Vec<f64>> {
        self.t += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => grads
                .iter()
                .map(|g| g.values().iter().map(|&d| -lr * d).collect())
                .collect(),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.t as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                grads
                    .iter()
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                    .map(|(g, (m, v))| {
                        g.values()
                            .iter()
                            .zip(m.iter_mut().zip(v.iter_mut()))
                            .map(|(&d, (mi, vi))| {
                                *mi = beta1 * *mi + (1.0 - beta1) * d;
                                *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                                -lr * (*mi / c1) / ((*vi / c2).sqrt() + eps)
                            })
                            .collect()
                    })
                    .collect()
            }
        }
    }
}

/// Mean cross-entropy of `logits` against `labels`, through log-softmax.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    logits.log_softmax()?.select_per_row(labels)?.mean()?.neg()
}

/// Replaces the batch by adversarial examples when adversarial training is
/// configured. Generation happens outside the parameter graph.
pub fn adversarial_inputs(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    adv: &AdvTrain,
    seed: u64,
) -> Result<Tensor> {
    match *adv {
        AdvTrain::None => Ok(x.detach()),
        AdvTrain::Fgsm { eps } => attacks::fgsm(model, x, labels, eps),
        AdvTrain::Pgd {
            norm,
            eps,
            alpha,
            steps,
        } => attacks::pgd(
            model,
            x,
            labels,
            &AttackSpec::pgd(norm, eps, alpha, steps, true, seed),
        ),
    }
}

fn nonfinite(quantity: &str, epoch: usize, step: usize) -> Error {
    Error::Stability {
        quantity: quantity.into(),
        epoch,
        step,
    }
}

/// One parameter update on `ce + penalty`. Logged values are computed on
/// the pre-update model.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    config: &TrainConfig,
    optimizer: &mut OptimizerState,
    epoch: usize,
    step: usize,
) -> Result<MetricRecord> {
    let start = std::time::Instant::now();
    let inputs = adversarial_inputs(
        model,
        x,
        labels,
        &config.adv_train,
        config.seed ^ (step as u64).wrapping_mul(0xA24B_AED4_963E_E407),
    )?;

    let graph = Graph::new();
    let params = model.attach(&graph);
    let leaf = graph.leaf(&inputs);
    let logits = model.forward_with(&params, &leaf)?;
    let ce = cross_entropy(&logits, labels)?;
    let term = penalty_in_graph(&config.reg, model, &params, &leaf, Some(labels), step as u64)?;
    let total = if config.reg.lambda == 0.0 {
        ce.clone()
    } else {
        ce.add(&term.value)?
    };
    let grads = backward(&total, &params.iter().collect::<Vec<_>>(), false)?;

    let ce_v = ce.item()?;
    let pen_v = term.value.item()?;
    let total_v = total.item()?;
    let fro = term.gradient.frobenius();
    let grads_finite = grads.iter().all(Tensor::all_finite);
    let finite = ce_v.is_finite()
        && pen_v.is_finite()
        && total_v.is_finite()
        && fro.is_finite()
        && grads_finite
        && model.all_finite();
    if config.abort_on_nonfinite && !finite {
        let quantity = if !ce_v.is_finite() {
            "ce_loss"
        } else if !fro.is_finite() || !term.gradient.finite {
            "input_grad_fro"
        } else if !pen_v.is_finite() {
            "penalty"
        } else if !total_v.is_finite() {
            "total"
        } else if !grads_finite {
            "parameter gradient"
        } else {
            "parameters"
        };
        return Err(nonfinite(quantity, epoch, step));
    }
    model.apply_deltas(&optimizer.deltas(&grads))?;
    Ok(MetricRecord {
        epoch,
        step,
        ce_loss: ce_v,
        penalty: pen_v,
        total: total_v,
        input_grad_fro: fro,
        finite,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains for `epochs × ⌈N / batch⌉` steps with per-epoch shuffling derived
/// from the seed. Once any step is non-finite the log's flag stays false.
pub fn train(mut model: Model, dataset: &Dataset, config: &TrainConfig) -> Result<(Model, TrainLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let mut optimizer = OptimizerState::new(&model, config.optimizer, config.learning_rate);
    let mut log = TrainLog::default();
    let mut healthy = true;
    let mut step = 0;
    for epoch in 0..config.epochs {
        let order = batches(
            dataset.len(),
            config.batch_size,
            config.seed.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9)),
        );
        for idx in order {
            let (x, labels) = dataset.batch(&idx)?;
            let mut rec = train_step(&mut model, &x, &labels, config, &mut optimizer, epoch, step)?;
            healthy &= rec.finite;
            rec.finite = healthy;
            log.records.push(rec);
            step += 1;
        }
    }
    Ok((model, log))
}
