//! Penalties on the input gradient of the log marginal density.
//!
//! A classifier with logits `f(x)` implies an input density proportional to
//! `Z_f(x) = Σ_i exp f_i(x)`, so `∇_x log p(x) = ∇_x log Z_f(x)`. Three
//! routes compute that gradient:
//!
//! * **naive**: `Σ_i ∇_x exp f_i / Σ_i exp f_i`, literally. Overflows once
//!   logits approach ~710.
//! * **stable**: `∇_x f_i − ∇_x log softmax_i` for any class `i`, with two
//!   backward passes. Finite whenever the logits are.
//! * **efficient**: `∇_x (f_i − log softmax_i)` with a single backward pass.
//!   Differentiation is linear, so this equals the stable route exactly.
//!
//! The input-gradient baseline penalizes `∇_x f_label` instead.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{backward, Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::Model;

/// Range of norm orders covered by the reference p-sweep.
pub const STUDIED_P_RANGE: (f64, f64) = (1.2, 2.8);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    InputGrad,
    MarginalNaive,
    MarginalStable,
    MarginalEfficient,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::InputGrad,
        Variant::MarginalNaive,
        Variant::MarginalStable,
        Variant::MarginalEfficient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::InputGrad => "input-grad",
            Variant::MarginalNaive => "marginal-naive",
            Variant::MarginalStable => "marginal-stable",
            Variant::MarginalEfficient => "marginal-efficient",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown regularizer variant `{s}`")))
    }
}

/// Which class index `i` the stable and efficient routes use. The result
/// does not depend on it mathematically.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassRule {
    Label,
    Fixed(usize),
    UniformRandom(u64),
}

impl ClassRule {
    /// Class index per row. `salt` decorrelates successive draws of the
    /// random rule (the training loop passes its step counter).
    pub fn resolve(
        &self,
        labels: Option<&[usize]>,
        rows: usize,
        classes: usize,
        salt: u64,
    ) -> Result<Vec<usize>> {
        let picked = match *self {
            ClassRule::Label => labels.ok_or(Error::MissingLabels)?.to_vec(),
            ClassRule::Fixed(i) => vec![i; rows],
            ClassRule::UniformRandom(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                (0..rows).map(|_| rng.gen_range(0..classes)).collect()
            }
        };
        check_classes(&picked, classes)?;
        Ok(picked)
    }
}

impl fmt::Display for ClassRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassRule::Label => f.write_str("label"),
            ClassRule::Fixed(i) => write!(f, "fixed:{i}"),
            ClassRule::UniformRandom(s) => write!(f, "random:{s}"),
        }
    }
}

impl FromStr for ClassRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown class rule `{s}`"));
        match s.split_once(':') {
            None if s == "label" => Ok(ClassRule::Label),
            Some(("fixed", i)) => Ok(ClassRule::Fixed(i.parse().map_err(|_| bad())?)),
            Some(("random", seed)) => Ok(ClassRule::UniformRandom(seed.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerSpec {
    pub variant: Variant,
    pub p: f64,
    pub lambda: f64,
    pub class_rule: ClassRule,
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        Self {
            variant: Variant::MarginalEfficient,
            p: 2.0,
            lambda: 0.0,
            class_rule: ClassRule::Label,
        }
    }
}

impl RegularizerSpec {
    pub fn new(variant: Variant, lambda: f64) -> Self {
        Self {
            variant,
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0) || !self.p.is_finite() {
            return Err(Error::InvalidArgument(format!("norm order p must be > 0, got {}", self.p)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and ≥ 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// True when `p` lies outside the studied sweep range. Allowed, but
    /// worth a warning.
    pub fn p_outside_studied_range(&self) -> bool {
        self.p < STUDIED_P_RANGE.0 || self.p > STUDIED_P_RANGE.1
    }
}

/// An input gradient together with whether every entry is finite.
#[derive(Clone, Debug)]
pub struct InputGradient {
    pub gradient: Tensor,
    pub finite: bool,
}

impl InputGradient {
    fn new(gradient: Tensor) -> Self {
        let finite = gradient.all_finite();
        Self { gradient, finite }
    }

    /// Frobenius norm over the whole batch.
    pub fn frobenius(&self) -> f64 {
        self.gradient.values().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_classes(classes: &[usize], count: usize) -> Result<()> {
    match classes.iter().find(|&&c| c >= count) {
        Some(&class) => Err(Error::ClassOutOfRange {
            class,
            classes: count,
        }),
        None => Ok(()),
    }
}

fn require_leaf(x: &Tensor) -> Result<()> {
    if !x.is_attached() {
        return Err(Error::Graph("input batch must be attached to a graph".into()));
    }
    Ok(())
}

/// `∇_x Σ_i e^{f_i} / Σ_i e^{f_i}` with no stabilization. `x` must be a
/// graph leaf; `params` are the model parameters (attached or constant).
/// The result is attached so it can be differentiated again.
pub fn naive_gradient_in_graph(model: &Model, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
    require_leaf(x)?;
    let logits = model.forward_with(params, x)?;
    let exps = logits.exp()?;
    let numerator = backward(&exps.sum()?, &[x], true)?.remove(0);
    let partition = exps.sum_axis(1)?.expand(1, x.cols())?;
    numerator.div(&partition)
}

/// `∇_x f_i − ∇_x log softmax_i`, two backward passes.
pub fn stable_gradient_in_graph(
    model: &Model,
    params: &[Tensor],
    x: &Tensor,
    classes: &[usize],
) -> Result<Tensor> {
    require_leaf(x)?;
    check_classes(classes, model.class_count())?;
    let logits = model.forward_with(params, x)?;
    let chosen = logits.select_per_row(classes)?;
    let log_prob = logits.log_softmax()?.select_per_row(classes)?;
    let grad_logit = backward(&chosen.sum()?, &[x], true)?.remove(0);
    let grad_log_prob = backward(&log_prob.sum()?, &[x], true)?.remove(0);
    grad_logit.sub(&grad_log_prob)
}

/// `∇_x (f_i − log softmax_i)`, one backward pass.
pub fn efficient_gradient_in_graph(
    model: &Model,
    params: &[Tensor],
    x: &Tensor,
    classes: &[usize],
) -> Result<Tensor> {
    require_leaf(x)?;
    check_classes(classes, model.class_count())?;
    let logits = model.forward_with(params, x)?;
    let chosen = logits.select_per_row(classes)?;
    let log_prob = logits.log_softmax()?.select_per_row(classes)?;
    backward(&chosen.sub(&log_prob)?.sum()?, &[x], true).map(|mut g| g.remove(0))
}

/// `∇_x f_label`, per sample.
pub fn input_gradient_in_graph(
    model: &Model,
    params: &[Tensor],
    x: &Tensor,
    labels: &[usize],
) -> Result<Tensor> {
    require_leaf(x)?;
    check_classes(labels, model.class_count())?;
    let logits = model.forward_with(params, x)?;
    backward(&logits.select_per_row(labels)?.sum()?, &[x], true).map(|mut g| g.remove(0))
}

/// The gradient the given variant penalizes, attached to `x`'s graph.
pub fn variant_gradient_in_graph(
    variant: Variant,
    model: &Model,
    params: &[Tensor],
    x: &Tensor,
    classes: &[usize],
) -> Result<Tensor> {
    match variant {
        Variant::InputGrad => input_gradient_in_graph(model, params, x, classes),
        Variant::MarginalNaive => naive_gradient_in_graph(model, params, x),
        Variant::MarginalStable => stable_gradient_in_graph(model, params, x, classes),
        Variant::MarginalEfficient => efficient_gradient_in_graph(model, params, x, classes),
    }
}

fn detached<F>(model: &Model, x: &Tensor, f: F) -> Result<Tensor>
where
    F: FnOnce(&Model, &[Tensor], &Tensor) -> Result<Tensor>,
{
    let graph = Graph::new();
    let leaf = graph.leaf(&x.detach());
    Ok(f(model, &model.parameters(), &leaf)?.detach())
}

/// Marginal-density input gradient via the literal exp/sum route. The
/// result may be non-finite; check [`InputGradient::finite`].
pub fn marginal_grad_naive(model: &Model, x: &Tensor) -> Result<InputGradient> {
    detached(model, x, naive_gradient_in_graph).map(InputGradient::new)
}

pub fn marginal_grad_stable(model: &Model, x: &Tensor, classes: &[usize]) -> Result<InputGradient> {
    detached(model, x, |m, p, x| stable_gradient_in_graph(m, p, x, classes)).map(InputGradient::new)
}

pub fn marginal_grad_efficient(
    model: &Model,
    x: &Tensor,
    classes: &[usize],
) -> Result<InputGradient> {
    detached(model, x, |m, p, x| efficient_gradient_in_graph(m, p, x, classes))
        .map(InputGradient::new)
}

/// Per-sample `∇_x f_label(x)`.
pub fn input_grad_penalty_vec(model: &Model, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
    detached(model, x, |m, p, x| input_gradient_in_graph(m, p, x, labels))
}

/// Value of a penalty evaluated inside a graph.
#[derive(Clone, Debug)]
pub struct PenaltyTerm {
    /// `λ · mean_b ||g_b||_p`, attached to the parameters' graph (a detached
    /// zero when `λ = 0`).
    pub value: Tensor,
    /// The penalized input gradient (detached).
    pub gradient: InputGradient,
}

/// `λ · mean_b ||g_b||_p` where `g` is the variant's input gradient.
///
/// `x` must be a leaf of the same graph as `params` for the result to be
/// differentiable with respect to them. With `λ = 0` the term is an exact
/// detached zero and contributes nothing to parameter gradients.
pub fn penalty_in_graph(
    spec: &RegularizerSpec,
    model: &Model,
    params: &[Tensor],
    x: &Tensor,
    labels: Option<&[usize]>,
    salt: u64,
) -> Result<PenaltyTerm> {
    spec.validate()?;
    let classes = spec
        .class_rule
        .resolve(labels, x.rows(), model.class_count(), salt)?;
    let classes = if spec.variant == Variant::InputGrad {
        labels.ok_or(Error::MissingLabels)?.to_vec()
    } else {
        classes
    };
    let gradient = variant_gradient_in_graph(spec.variant, model, params, x, &classes)?;
    let value = if spec.lambda == 0.0 {
        Tensor::scalar(0.0)
    } else {
        gradient.pnorm(spec.p)?.mean()?.scale(spec.lambda)?
    };
    Ok(PenaltyTerm {
        value,
        gradient: InputGradient::new(gradient.detach()),
    })
}

/// Penalty value for a fixed model, with graph-attached parameters so the
/// returned scalar can be differentiated with respect to them. Returns the
/// scalar and the parameter leaves.
pub fn penalty(
    spec: &RegularizerSpec,
    model: &Model,
    x: &Tensor,
    labels: &[usize],
) -> Result<(Tensor, Vec<Tensor>)> {
    let graph = Graph::new();
    let params = model.attach(&graph);
    let leaf = graph.leaf(&x.detach());
    let term = penalty_in_graph(spec, model, &params, &leaf, Some(labels), 0)?;
    Ok((term.value, params))
}
