use std::rc::Rc;

use super::tensor::{Graph, Node, NodeRef, Tensor};
use crate::error::{Error, Result};

/// Primitive operations recorded in a [`Graph`].
///
/// Every primitive's derivative rule is written in terms of primitives from
/// this same set, so gradients can themselves be differentiated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrimitiveKind {
    Leaf,
    /// Rank-2 product `op(a) · op(b)` where `op` optionally transposes.
    MatMul { trans_a: bool, trans_b: bool },
    Add,
    Subtract,
    Scale(f64),
    Multiply,
    /// IEEE quotient.
    Divide,
    /// Quotient taken as 0 wherever the denominator is exactly 0.
    DivideOrZero,
    Exp,
    Log,
    Negate,
    SumAxis(usize),
    /// Inserts a new axis of the given size by repetition; adjoint of `SumAxis`.
    Expand { axis: usize, size: usize },
    MaxAxis(usize),
    Relu,
    Softplus,
    /// Reduction over the last axis (classes).
    LogSumExp,
    /// Normalization over the last axis (classes).
    LogSoftmax,
    /// `(Σ|v|^p)^(1/p)` over the last axis (features).
    PNorm(f64),
    Square,
    Sqrt,
    /// `|x|^e`; 0 at x = 0 for negative exponents.
    AbsPow(f64),
    /// `sign(x)·|x|^e`; 0 at x = 0.
    SignedPow(f64),
}

impl PrimitiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            PrimitiveKind::Leaf => "leaf",
            PrimitiveKind::MatMul { .. } => "matmul",
            PrimitiveKind::Add => "add",
            PrimitiveKind::Subtract => "subtract",
            PrimitiveKind::Scale(_) => "scale",
            PrimitiveKind::Multiply => "multiply",
            PrimitiveKind::Divide => "divide",
            PrimitiveKind::DivideOrZero => "divide-or-zero",
            PrimitiveKind::Exp => "exp",
            PrimitiveKind::Log => "log",
            PrimitiveKind::Negate => "negate",
            PrimitiveKind::SumAxis(_) => "sum-over-axis",
            PrimitiveKind::Expand { .. } => "expand",
            PrimitiveKind::MaxAxis(_) => "max-over-axis",
            PrimitiveKind::Relu => "relu",
            PrimitiveKind::Softplus => "softplus",
            PrimitiveKind::LogSumExp => "logsumexp",
            PrimitiveKind::LogSoftmax => "log-softmax",
            PrimitiveKind::PNorm(_) => "p-norm",
            PrimitiveKind::Square => "square",
            PrimitiveKind::Sqrt => "sqrt",
            PrimitiveKind::AbsPow(_) => "abs-pow",
            PrimitiveKind::SignedPow(_) => "signed-pow",
        }
    }

    fn arity(&self) -> usize {
        match self {
            PrimitiveKind::Leaf => 0,
            PrimitiveKind::MatMul { .. }
            | PrimitiveKind::Add
            | PrimitiveKind::Subtract
            | PrimitiveKind::Multiply
            | PrimitiveKind::Divide
            | PrimitiveKind::DivideOrZero => 2,
            _ => 1,
        }
    }
}

pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn abs_pow(x: f64, e: f64) -> f64 {
    if x == 0.0 && e < 0.0 {
        0.0
    } else {
        x.abs().powf(e)
    }
}

pub(crate) fn signed_pow(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(e)
    }
}

/// `(outer, len, inner)` split of `shape` around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn shape_err(kind: PrimitiveKind, detail: String) -> Error {
    Error::Shape(format!("{}: {}", kind.name(), detail))
}

fn unary(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape.clone(), a.data.iter().map(|&v| f(v)).collect())
}

fn binary(
    kind: PrimitiveKind,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(shape_err(
            kind,
            format!("operand shapes {:?} and {:?} differ", a.shape, b.shape),
        ));
    }
    Ok(Tensor::from_parts(
        a.shape.clone(),
        a.data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    ))
}

fn matmul(a: &Tensor, b: &Tensor, trans_a: bool, trans_b: bool) -> Result<Tensor> {
    let kind = PrimitiveKind::MatMul { trans_a, trans_b };
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(shape_err(
            kind,
            format!("needs rank-2 operands, got {:?} and {:?}", a.shape, b.shape),
        ));
    }
    let (ar, ac) = (a.shape[0], a.shape[1]);
    let (br, bc) = (b.shape[0], b.shape[1]);
    let (m, k, rsa, csa) = if trans_a {
        (ac, ar, 1isize, ac as isize)
    } else {
        (ar, ac, ac as isize, 1isize)
    };
    let (k2, n, rsb, csb) = if trans_b {
        (bc, br, 1isize, bc as isize)
    } else {
        (br, bc, bc as isize, 1isize)
    };
    if k != k2 {
        return Err(shape_err(
            kind,
            format!(
                "inner dims differ: {:?}{} x {:?}{}",
                a.shape,
                if trans_a { "ᵀ" } else { "" },
                b.shape,
                if trans_b { "ᵀ" } else { "" }
            ),
        ));
    }
    let mut out = vec![0.0; m * n];
    // SAFETY: pointers and strides describe the in-bounds buffers above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(Tensor::from_parts(vec![m, n], out.into()))
}

fn reduce_axis(
    kind: PrimitiveKind,
    a: &Tensor,
    axis: usize,
    init: f64,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if axis >= a.shape.len() {
        return Err(shape_err(
            kind,
            format!("axis {axis} out of range for {:?}", a.shape),
        ));
    }
    let (outer, len, inner) = split(&a.shape, axis);
    let mut out = vec![init; outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            for i in 0..inner {
                let slot = &mut out[o * inner + i];
                *slot = f(*slot, a.data[base + i]);
            }
        }
    }
    let mut shape = a.shape.clone();
    shape.remove(axis);
    Ok(Tensor::from_parts(shape, out.into()))
}

/// One-hot mask of the first maximum along `axis`.
fn argmax_mask(a: &Tensor, axis: usize) -> Vec<f64> {
    let (outer, len, inner) = split(&a.shape, axis);
    let mut mask = vec![0.0; a.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for l in 0..len {
                let v = a.data[(o * len + l) * inner + i];
                if l == 0 || v > best_v {
                    best = l;
                    best_v = v;
                }
            }
            mask[(o * len + best) * inner + i] = 1.0;
        }
    }
    mask
}

fn expand(a: &Tensor, axis: usize, size: usize) -> Result<Tensor> {
    let kind = PrimitiveKind::Expand { axis, size };
    if axis > a.shape.len() || size == 0 {
        return Err(shape_err(
            kind,
            format!("cannot insert axis {axis} of size {size} into {:?}", a.shape),
        ));
    }
    let mut shape = a.shape.clone();
    shape.insert(axis, size);
    let (outer, len, inner) = split(&shape, axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let src = &a.data[o * inner..(o + 1) * inner];
        for _ in 0..len {
            out.extend_from_slice(src);
        }
    }
    Ok(Tensor::from_parts(shape, out.into()))
}

/// Last-axis row view: `(rows, len)`; rank 0 is rejected.
fn last_axis(kind: PrimitiveKind, a: &Tensor) -> Result<(usize, usize)> {
    match a.shape.last() {
        Some(&len) => Ok((a.numel() / len, len)),
        None => Err(shape_err(kind, "needs rank ≥ 1".into())),
    }
}

fn row_reduce(kind: PrimitiveKind, a: &Tensor, f: impl Fn(&[f64]) -> f64) -> Result<Tensor> {
    let (rows, len) = last_axis(kind, a)?;
    let out: Vec<f64> = (0..rows).map(|r| f(&a.data[r * len..(r + 1) * len])).collect();
    let shape = a.shape[..a.shape.len() - 1].to_vec();
    Ok(Tensor::from_parts(shape, out.into()))
}

fn max_of(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn logsumexp_row(row: &[f64]) -> f64 {
    let m = max_of(row);
    if m.is_infinite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Computes the forward value of `kind` on detached inputs, plus any
/// constant side data the derivative rule needs.
pub(crate) fn forward_value(
    kind: PrimitiveKind,
    inputs: &[&Tensor],
) -> Result<(Tensor, Option<Rc<[f64]>>)> {
    if inputs.len() != kind.arity() {
        return Err(shape_err(
            kind,
            format!("expects {} inputs, got {}", kind.arity(), inputs.len()),
        ));
    }
    let out = match kind {
        PrimitiveKind::Leaf => unreachable!("leaf has no inputs"),
        PrimitiveKind::MatMul { trans_a, trans_b } => {
            matmul(inputs[0], inputs[1], trans_a, trans_b)?
        }
        PrimitiveKind::Add => binary(kind, inputs[0], inputs[1], |a, b| a + b)?,
        PrimitiveKind::Subtract => binary(kind, inputs[0], inputs[1], |a, b| a - b)?,
        PrimitiveKind::Multiply => binary(kind, inputs[0], inputs[1], |a, b| a * b)?,
        PrimitiveKind::Divide => binary(kind, inputs[0], inputs[1], |a, b| a / b)?,
        PrimitiveKind::DivideOrZero => binary(kind, inputs[0], inputs[1], |a, b| {
            if b == 0.0 {
                0.0
            } else {
                a / b
            }
        })?,
        PrimitiveKind::Scale(c) => unary(inputs[0], |v| c * v),
        PrimitiveKind::Exp => unary(inputs[0], f64::exp),
        PrimitiveKind::Log => {
            if let Some(bad) = inputs[0].data.iter().find(|&&v| !(v > 0.0)) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
            unary(inputs[0], f64::ln)
        }
        PrimitiveKind::Negate => unary(inputs[0], |v| -v),
        PrimitiveKind::SumAxis(axis) => reduce_axis(kind, inputs[0], axis, 0.0, |s, v| s + v)?,
        PrimitiveKind::Expand { axis, size } => expand(inputs[0], axis, size)?,
        PrimitiveKind::MaxAxis(axis) => {
            let out = reduce_axis(kind, inputs[0], axis, f64::NEG_INFINITY, f64::max)?;
            return Ok((out, Some(argmax_mask(inputs[0], axis).into())));
        }
        PrimitiveKind::Relu => {
            let mask: Rc<[f64]> = inputs[0]
                .data
                .iter()
                .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
                .collect();
            return Ok((unary(inputs[0], |v| v.max(0.0)), Some(mask)));
        }
        PrimitiveKind::Softplus => unary(inputs[0], softplus),
        PrimitiveKind::LogSumExp => row_reduce(kind, inputs[0], logsumexp_row)?,
        PrimitiveKind::LogSoftmax => {
            let a = inputs[0];
            let (rows, len) = last_axis(kind, a)?;
            let mut out = Vec::with_capacity(a.numel());
            for r in 0..rows {
                let row = &a.data[r * len..(r + 1) * len];
                let lse = logsumexp_row(row);
                out.extend(row.iter().map(|v| v - lse));
            }
            Tensor::from_parts(a.shape.clone(), out.into())
        }
        PrimitiveKind::PNorm(p) => {
            if !(p > 0.0) {
                return Err(Error::InvalidArgument(format!("p-norm order must be > 0, got {p}")));
            }
            row_reduce(kind, inputs[0], |row| {
                row.iter().map(|&v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
            })?
        }
        PrimitiveKind::Square => unary(inputs[0], |v| v * v),
        PrimitiveKind::Sqrt => {
            if let Some(bad) = inputs[0].data.iter().find(|&&v| v < 0.0) {
                return Err(Error::Domain(format!("sqrt of negative value {bad}")));
            }
            unary(inputs[0], f64::sqrt)
        }
        PrimitiveKind::AbsPow(e) => unary(inputs[0], |v| abs_pow(v, e)),
        PrimitiveKind::SignedPow(e) => unary(inputs[0], |v| signed_pow(v, e)),
    };
    Ok((out, None))
}

/// Applies `kind` to `inputs`, recording a node when any input is attached.
pub fn apply(kind: PrimitiveKind, inputs: &[&Tensor]) -> Result<Tensor> {
    let (mut out, aux) = forward_value(kind, inputs)?;
    let mut graph: Option<&Graph> = None;
    for t in inputs {
        if let Some(n) = &t.node {
            match graph {
                None => graph = Some(&n.graph),
                Some(g) if !g.same(&n.graph) => {
                    return Err(Error::Graph(format!(
                        "{}: inputs belong to different graphs",
                        kind.name()
                    )))
                }
                Some(_) => {}
            }
        }
    }
    if let Some(graph) = graph {
        // Detached operands become constant leaves of the graph.
        let ids = inputs
            .iter()
            .map(|t| match &t.node {
                Some(n) => n.id,
                None => graph.push(Node {
                    kind: PrimitiveKind::Leaf,
                    inputs: Vec::new(),
                    shape: t.shape.clone(),
                    value: t.data.clone(),
                    aux: None,
                }),
            })
            .collect();
        let id = graph.push(Node {
            kind,
            inputs: ids,
            shape: out.shape.clone(),
            value: out.data.clone(),
            aux,
        });
        out.node = Some(NodeRef {
            graph: graph.clone(),
            id,
        });
    }
    Ok(out)
}

impl Tensor {
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        apply(
            PrimitiveKind::MatMul {
                trans_a: false,
                trans_b: false,
            },
            &[self, other],
        )
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        apply(
            PrimitiveKind::MatMul {
                trans_a: false,
                trans_b: true,
            },
            &[self, other],
        )
    }

    pub fn matmul_with(&self, other: &Tensor, trans_a: bool, trans_b: bool) -> Result<Tensor> {
        apply(PrimitiveKind::MatMul { trans_a, trans_b }, &[self, other])
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        apply(PrimitiveKind::Add, &[self, other])
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        apply(PrimitiveKind::Subtract, &[self, other])
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        apply(PrimitiveKind::Multiply, &[self, other])
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        apply(PrimitiveKind::Divide, &[self, other])
    }

    pub fn div_or_zero(&self, other: &Tensor) -> Result<Tensor> {
        apply(PrimitiveKind::DivideOrZero, &[self, other])
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        apply(PrimitiveKind::Scale(c), &[self])
    }

    pub fn exp(&self) -> Result<Tensor> {
        apply(PrimitiveKind::Exp, &[self])
    }

    pub fn ln(&self) -> Result<Tensor> {
        apply(PrimitiveKind::Log, &[self])
    }

    pub fn neg(&self) -> Result<Tensor> {
        apply(PrimitiveKind::Negate, &[self])
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        apply(PrimitiveKind::SumAxis(axis), &[self])
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&self) -> Result<Tensor> {
        let mut t = self.clone();
        while !t.shape.is_empty() {
            t = t.sum_axis(t.shape.len() - 1)?;
        }
        Ok(t)
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    pub fn expand(&self, axis: usize, size: usize) -> Result<Tensor> {
        apply(PrimitiveKind::Expand { axis, size }, &[self])
    }

    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        apply(PrimitiveKind::MaxAxis(axis), &[self])
    }

    pub fn relu(&self) -> Result<Tensor> {
        apply(PrimitiveKind::Relu, &[self])
    }

    pub fn softplus(&self) -> Result<Tensor> {
        apply(PrimitiveKind::Softplus, &[self])
    }

    pub fn logsumexp(&self) -> Result<Tensor> {
        apply(PrimitiveKind::LogSumExp, &[self])
    }

    pub fn log_softmax(&self) -> Result<Tensor> {
        apply(PrimitiveKind::LogSoftmax, &[self])
    }

    pub fn pnorm(&self, p: f64) -> Result<Tensor> {
        apply(PrimitiveKind::PNorm(p), &[self])
    }

    pub fn square(&self) -> Result<Tensor> {
        apply(PrimitiveKind::Square, &[self])
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        apply(PrimitiveKind::Sqrt, &[self])
    }

    pub fn abs_pow(&self, e: f64) -> Result<Tensor> {
        apply(PrimitiveKind::AbsPow(e), &[self])
    }

    pub fn signed_pow(&self, e: f64) -> Result<Tensor> {
        apply(PrimitiveKind::SignedPow(e), &[self])
    }

    /// Expands a tensor reduced over the last axis back to `shape`.
    pub(crate) fn expand_last(&self, shape: &[usize]) -> Result<Tensor> {
        let axis = shape.len() - 1;
        self.expand(axis, shape[axis])
    }

    /// Picks `self[r, index[r]]` for each row of a rank-2 tensor, as a
    /// differentiable masked sum.
    pub fn select_per_row(&self, index: &[usize]) -> Result<Tensor> {
        if self.shape.len() != 2 || self.shape[0] != index.len() {
            return Err(Error::Shape(format!(
                "select_per_row: {} indices for tensor {:?}",
                index.len(),
                self.shape
            )));
        }
        let cols = self.shape[1];
        let mut mask = vec![0.0; self.numel()];
        for (r, &c) in index.iter().enumerate() {
            if c >= cols {
                return Err(Error::ClassOutOfRange {
                    class: c,
                    classes: cols,
                });
            }
            mask[r * cols + c] = 1.0;
        }
        let mask = Tensor::from_parts(self.shape.clone(), mask.into());
        self.mul(&mask)?.sum_axis(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_zero_is_one() {
        let out = Tensor::vector(vec![0.0]).exp().unwrap();
        assert_eq!(out.values(), &[1.0]);
    }

    #[test]
    fn logsumexp_large_equal_inputs() {
        let out = Tensor::vector(vec![1000.0, 1000.0]).logsumexp().unwrap();
        let v = out.item().unwrap();
        assert!(v.is_finite());
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_extreme_magnitudes_stay_finite() {
        let row = vec![1e8, -1e8, 3.0, 1e8 - 1.0];
        let out = Tensor::vector(row.clone()).logsumexp().unwrap().item().unwrap();
        let m = 1e8;
        let expect = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        assert!(out.is_finite());
        assert_eq!(out, expect);
    }

    #[test]
    fn relu_clamps_negatives() {
        let out = Tensor::vector(vec![-2.0, 3.0]).relu().unwrap();
        assert_eq!(out.values(), &[0.0, 3.0]);
    }

    #[test]
    fn softplus_matches_naive_formula_in_safe_range() {
        for z in [-30.0, -2.0, 0.0, 0.5, 20.0] {
            let naive = (1.0 + f64::exp(z)).ln();
            assert!((softplus(z) - naive).abs() < 1e-12);
        }
        assert!(softplus(1000.0).is_finite());
    }

    #[test]
    fn matmul_shape_mismatch_names_primitive() {
        let a = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let b = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("[2, 3]"), "{err}");
        assert!(a.matmul_t(&b).is_ok());
    }

    #[test]
    fn matmul_transpose_variants_agree() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.values(), &[58., 64., 139., 154.]);
        let bt = Tensor::matrix(2, 3, vec![7., 9., 11., 8., 10., 12.]).unwrap();
        assert_eq!(a.matmul_t(&bt).unwrap().values(), ab.values());
        let at = Tensor::matrix(3, 2, vec![1., 4., 2., 5., 3., 6.]).unwrap();
        assert_eq!(at.matmul_with(&b, true, false).unwrap().values(), ab.values());
        assert_eq!(at.matmul_with(&bt, true, true).unwrap().values(), ab.values());
    }

    #[test]
    fn log_rejects_non_positive() {
        let err = Tensor::vector(vec![1.0, 0.0]).ln().unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let t = Tensor::matrix(2, 3, vec![1., 2., 3., -500., 0., 500.]).unwrap();
        let ls = t.log_softmax().unwrap();
        for r in 0..2 {
            let s: f64 = ls.values()[r * 3..r * 3 + 3].iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pnorm_matches_definition() {
        let t = Tensor::matrix(1, 3, vec![3.0, -4.0, 0.0]).unwrap();
        assert!((t.pnorm(2.0).unwrap().values()[0] - 5.0).abs() < 1e-12);
        assert!((t.pnorm(1.0).unwrap().values()[0] - 7.0).abs() < 1e-12);
        assert!(t.pnorm(0.0).is_err());
    }

    #[test]
    fn sum_and_expand_are_adjoint_shapes() {
        let t = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s1 = t.sum_axis(1).unwrap();
        assert_eq!(s1.values(), &[6., 15.]);
        let s0 = t.sum_axis(0).unwrap();
        assert_eq!(s0.values(), &[5., 7., 9.]);
        let e = s1.expand(1, 3).unwrap();
        assert_eq!(e.shape(), &[2, 3]);
        assert_eq!(e.values(), &[6., 6., 6., 15., 15., 15.]);
        let e0 = s0.expand(0, 2).unwrap();
        assert_eq!(e0.values(), &[5., 7., 9., 5., 7., 9.]);
        assert_eq!(t.sum().unwrap().item().unwrap(), 21.0);
    }

    #[test]
    fn max_axis_takes_first_maximum() {
        let t = Tensor::matrix(2, 3, vec![1., 5., 5., -1., -2., -3.]).unwrap();
        assert_eq!(t.max_axis(1).unwrap().values(), &[5., -1.]);
    }

    #[test]
    fn mixed_graphs_are_rejected() {
        let g1 = Graph::new();
        let g2 = Graph::new();
        let a = g1.leaf(&Tensor::vector(vec![1.0]));
        let b = g2.leaf(&Tensor::vector(vec![1.0]));
        assert!(matches!(a.add(&b), Err(Error::Graph(_))));
    }

    #[test]
    fn detached_ops_record_nothing() {
        let g = Graph::new();
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = a.exp().unwrap();
        assert!(!b.is_attached());
        assert!(g.is_empty());
    }
}
