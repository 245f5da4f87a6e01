//! FGSM and PGD adversarial examples against the cross-entropy of the true
//! label, and accuracy under attack.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::autodiff::{backward, Graph, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{argmax_rows, Model};

const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L2,
    Linf,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        })
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Norm::L2),
            "linf" => Ok(Norm::Linf),
            other => Err(Error::InvalidArgument(format!("unknown norm `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub norm: Norm,
    pub eps: f64,
    /// Step size; ignored by FGSM.
    pub alpha: f64,
    /// Iterations; ignored by FGSM.
    pub steps: usize,
    pub random_start: bool,
    pub seed: u64,
}

impl AttackSpec {
    pub fn fgsm(eps: f64) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            norm: Norm::Linf,
            eps,
            alpha: eps,
            steps: 1,
            random_start: false,
            seed: 0,
        }
    }

    pub fn pgd(norm: Norm, eps: f64, alpha: f64, steps: usize, random_start: bool, seed: u64) -> Self {
        Self {
            kind: AttackKind::Pgd,
            norm,
            eps,
            alpha,
            steps,
            random_start,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidArgument(format!("eps must be ≥ 0, got {}", self.eps)));
        }
        if self.kind == AttackKind::Pgd && (!(self.alpha > 0.0) || self.steps == 0) {
            return Err(Error::InvalidArgument(
                "PGD needs alpha > 0 and steps ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Gradient of the summed per-sample cross-entropy with respect to `x`.
pub fn loss_gradient(model: &Model, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let graph = Graph::new();
    let leaf = graph.leaf(&x.detach());
    let loss = model
        .forward(&leaf)?
        .log_softmax()?
        .select_per_row(labels)?
        .sum()?
        .neg()?;
    Ok(backward(&loss, &[&leaf], false)?.remove(0))
}

/// Per-sample cross-entropy.
pub fn per_sample_loss(model: &Model, x: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let ls = model.forward(x)?.log_softmax()?.select_per_row(labels)?;
    Ok(ls.values().iter().map(|v| -v).collect())
}

fn clip_unit(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

/// `x + ε·sign(∇_x loss)`, clipped to `[0, 1]`.
pub fn fgsm(model: &Model, x: &Tensor, labels: &[usize], eps: f64) -> Result<Tensor> {
    if eps == 0.0 {
        return Ok(x.detach());
    }
    let g = loss_gradient(model, x, labels)?;
    let mut out: Vec<f64> = x
        .values()
        .iter()
        .zip(g.values())
        .map(|(&xi, &gi)| xi + eps * sign(gi))
        .collect();
    clip_unit(&mut out);
    Tensor::new(x.shape(), out)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projects each row of `delta` onto the `eps`-ball of `norm`, in place.
pub fn project(delta: &mut [f64], cols: usize, norm: Norm, eps: f64) {
    for row in delta.chunks_mut(cols) {
        match norm {
            Norm::Linf => row.iter_mut().for_each(|d| *d = d.clamp(-eps, eps)),
            Norm::L2 => {
                let n = row.iter().map(|d| d * d).sum::<f64>().sqrt();
                if n > eps {
                    let s = eps / n;
                    row.iter_mut().for_each(|d| *d *= s);
                }
            }
        }
    }
}

/// Per-row norm of `a − b`.
pub fn row_distances(a: &[f64], b: &[f64], cols: usize, norm: Norm) -> Vec<f64> {
    a.chunks(cols)
        .zip(b.chunks(cols))
        .map(|(ra, rb)| {
            let diffs = ra.iter().zip(rb).map(|(x, y)| x - y);
            match norm {
                Norm::Linf => diffs.map(f64::abs).fold(0.0, f64::max),
                Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            }
        })
        .collect()
}

fn random_start(x: &[f64], cols: usize, norm: Norm, eps: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut delta = vec![0.0; x.len()];
    match norm {
        Norm::Linf => {
            let u = Uniform::new_inclusive(-eps, eps);
            delta.iter_mut().for_each(|d| *d = u.sample(&mut rng));
        }
        Norm::L2 => {
            let unit = Uniform::new(0.0f64, 1.0);
            for row in delta.chunks_mut(cols) {
                row.iter_mut()
                    .for_each(|d| *d = StandardNormal.sample(&mut rng));
                let n = row.iter().map(|d: &f64| d * d).sum::<f64>().sqrt();
                let radius = eps * unit.sample(&mut rng).powf(1.0 / cols as f64);
                if n > 0.0 {
                    row.iter_mut().for_each(|d| *d *= radius / n);
                }
            }
        }
    }
    let mut start: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
    clip_unit(&mut start);
    start
}

/// PGD returning every iterate, starting point first.
pub fn pgd_iterates(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    spec: &AttackSpec,
) -> Result<Vec<Tensor>> {
    spec.validate()?;
    if spec.eps == 0.0 {
        return Ok(vec![x.detach()]);
    }
    let cols = x.cols();
    let origin = x.values();
    let mut cur = if spec.random_start {
        random_start(origin, cols, spec.norm, spec.eps, spec.seed)
    } else {
        origin.to_vec()
    };
    let mut iterates = vec![Tensor::new(x.shape(), cur.clone())?];
    for _ in 0..spec.steps {
        let g = loss_gradient(model, &Tensor::new(x.shape(), cur.clone())?, labels)?;
        match spec.norm {
            Norm::Linf => cur
                .iter_mut()
                .zip(g.values())
                .for_each(|(c, &gi)| *c += spec.alpha * sign(gi)),
            Norm::L2 => {
                for (row, grow) in cur.chunks_mut(cols).zip(g.values().chunks(cols)) {
                    let n = grow.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > 0.0 {
                        row.iter_mut()
                            .zip(grow)
                            .for_each(|(c, &gi)| *c += spec.alpha * gi / n);
                    }
                }
            }
        }
        let mut delta: Vec<f64> = cur.iter().zip(origin).map(|(c, o)| c - o).collect();
        project(&mut delta, cols, spec.norm, spec.eps);
        cur = origin.iter().zip(&delta).map(|(o, d)| o + d).collect();
        clip_unit(&mut cur);
        iterates.push(Tensor::new(x.shape(), cur.clone())?);
    }
    Ok(iterates)
}

pub fn pgd(model: &Model, x: &Tensor, labels: &[usize], spec: &AttackSpec) -> Result<Tensor> {
    Ok(pgd_iterates(model, x, labels, spec)?
        .pop()
        .expect("at least the starting point"))
}

pub fn attack(model: &Model, x: &Tensor, labels: &[usize], spec: &AttackSpec) -> Result<Tensor> {
    match spec.kind {
        AttackKind::Fgsm => fgsm(model, x, labels, spec.eps),
        AttackKind::Pgd => pgd(model, x, labels, spec),
    }
}

/// Accuracy on attacked inputs (argmax ties to the lowest class).
pub fn adversarial_accuracy(model: &Model, dataset: &Dataset, spec: &AttackSpec) -> Result<f64> {
    spec.validate()?;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0usize;
    for (chunk_no, chunk) in idx.chunks(EVAL_CHUNK).enumerate() {
        let (x, labels) = dataset.batch(chunk)?;
        let chunk_spec = AttackSpec {
            seed: spec.seed.wrapping_add(chunk_no as u64),
            ..*spec
        };
        let adv = attack(model, &x, &labels, &chunk_spec)?;
        correct += argmax_rows(&model.forward(&adv)?)
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / dataset.len().max(1) as f64)
}
