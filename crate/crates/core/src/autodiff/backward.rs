use std::rc::Rc;

use super::ops::PrimitiveKind;
use super::tensor::{Graph, NodeId, NodeRef, Tensor};
use crate::error::{Error, Result};

/// Vector-Jacobian product of one primitive. Every rule is written with
/// `Tensor` ops, so when the operands are attached the rule itself is
/// recorded and can be differentiated again.
fn vjp(
    kind: PrimitiveKind,
    aux: Option<&Rc<[f64]>>,
    inputs: &[Tensor],
    out: &Tensor,
    g: &Tensor,
    needs: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let x = inputs.first();
    let mask = |shape: &[usize]| {
        Tensor::from_parts(shape.to_vec(), aux.expect("mask recorded").clone())
    };
    let one = |t: Result<Tensor>| -> Result<Vec<Option<Tensor>>> { Ok(vec![Some(t?)]) };
    match kind {
        PrimitiveKind::Leaf => Ok(Vec::new()),
        PrimitiveKind::MatMul { trans_a, trans_b } => {
            let (a, b) = (&inputs[0], &inputs[1]);
            let da = if needs[0] {
                Some(match (trans_a, trans_b) {
                    (false, false) => g.matmul_with(b, false, true)?,
                    (false, true) => g.matmul_with(b, false, false)?,
                    (true, false) => b.matmul_with(g, false, true)?,
                    (true, true) => b.matmul_with(g, true, true)?,
                })
            } else {
                None
            };
            let db = if needs[1] {
                Some(match (trans_a, trans_b) {
                    (false, false) => a.matmul_with(g, true, false)?,
                    (false, true) => g.matmul_with(a, true, false)?,
                    (true, false) => a.matmul_with(g, false, false)?,
                    (true, true) => g.matmul_with(a, true, true)?,
                })
            } else {
                None
            };
            Ok(vec![da, db])
        }
        PrimitiveKind::Add => Ok(vec![Some(g.clone()), Some(g.clone())]),
        PrimitiveKind::Subtract => Ok(vec![
            Some(g.clone()),
            if needs[1] { Some(g.neg()?) } else { None },
        ]),
        PrimitiveKind::Multiply => {
            let (a, b) = (&inputs[0], &inputs[1]);
            Ok(vec![
                if needs[0] { Some(g.mul(b)?) } else { None },
                if needs[1] { Some(g.mul(a)?) } else { None },
            ])
        }
        PrimitiveKind::Divide => {
            let b = &inputs[1];
            Ok(vec![
                if needs[0] { Some(g.div(b)?) } else { None },
                if needs[1] {
                    Some(g.mul(out)?.div(b)?.neg()?)
                } else {
                    None
                },
            ])
        }
        PrimitiveKind::DivideOrZero => {
            let b = &inputs[1];
            Ok(vec![
                if needs[0] { Some(g.div_or_zero(b)?) } else { None },
                if needs[1] {
                    Some(g.mul(out)?.div_or_zero(b)?.neg()?)
                } else {
                    None
                },
            ])
        }
        PrimitiveKind::Scale(c) => one(g.scale(c)),
        PrimitiveKind::Exp => one(g.mul(out)),
        PrimitiveKind::Log => one(g.div(x.unwrap())),
        PrimitiveKind::Negate => one(g.neg()),
        PrimitiveKind::SumAxis(axis) => {
            let x = x.unwrap();
            one(g.expand(axis, x.shape()[axis]))
        }
        PrimitiveKind::Expand { axis, .. } => one(g.sum_axis(axis)),
        PrimitiveKind::MaxAxis(axis) => {
            let x = x.unwrap();
            one(g.expand(axis, x.shape()[axis])?.mul(&mask(x.shape())))
        }
        PrimitiveKind::Relu => one(g.mul(&mask(x.unwrap().shape()))),
        PrimitiveKind::Softplus => {
            // softplus' = sigmoid(z) = exp(-softplus(-z))
            let sig = x.unwrap().neg()?.softplus()?.neg()?.exp()?;
            one(g.mul(&sig))
        }
        PrimitiveKind::LogSumExp => {
            let x = x.unwrap();
            let softmax = x.sub(&out.expand_last(x.shape())?)?.exp()?;
            one(g.expand_last(x.shape())?.mul(&softmax))
        }
        PrimitiveKind::LogSoftmax => {
            let shape = out.shape().to_vec();
            let last = shape.len() - 1;
            let total = g.sum_axis(last)?.expand_last(&shape)?;
            one(g.sub(&out.exp()?.mul(&total)?))
        }
        PrimitiveKind::PNorm(p) => {
            let x = x.unwrap();
            let ratio = x.div_or_zero(&out.expand_last(x.shape())?)?;
            one(g.expand_last(x.shape())?.mul(&ratio.signed_pow(p - 1.0)?))
        }
        PrimitiveKind::Square => one(g.mul(&x.unwrap().scale(2.0)?)),
        PrimitiveKind::Sqrt => one(g.scale(0.5)?.div_or_zero(out)),
        PrimitiveKind::AbsPow(e) => one(g.mul(&x.unwrap().signed_pow(e - 1.0)?.scale(e)?)),
        PrimitiveKind::SignedPow(e) => one(g.mul(&x.unwrap().abs_pow(e - 1.0)?.scale(e)?)),
    }
}

struct Snapshot {
    kind: PrimitiveKind,
    inputs: Vec<NodeId>,
}

fn materialize(graph: &Graph, id: NodeId, attach: bool) -> Tensor {
    let (shape, value) = graph.with_node(id, |n| (n.shape.clone(), n.value.clone()));
    let mut t = Tensor::from_parts(shape, value);
    if attach {
        t.node = Some(NodeRef {
            graph: graph.clone(),
            id,
        });
    }
    t
}

/// Reverse-mode gradients of the scalar `output` with respect to each leaf
/// in `wrt`, returned in the same order.
///
/// With `create_graph` the returned gradients are attached to the graph and
/// may be differentiated again.
pub fn backward(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if output.numel() != 1 {
        return Err(Error::NonScalarOutput(output.shape().to_vec()));
    }
    let out_ref = output
        .node
        .as_ref()
        .ok_or_else(|| Error::Graph("backward output is not attached to a graph".into()))?;
    let graph = out_ref.graph.clone();
    let out_id = out_ref.id;

    let mut wrt_ids = Vec::with_capacity(wrt.len());
    for (i, t) in wrt.iter().enumerate() {
        let n = t
            .node
            .as_ref()
            .ok_or_else(|| Error::Graph(format!("wrt[{i}] is not attached to a graph")))?;
        if !n.graph.same(&graph) {
            return Err(Error::Graph(format!("wrt[{i}] belongs to another graph")));
        }
        if graph.with_node(n.id, |node| node.kind) != PrimitiveKind::Leaf {
            return Err(Error::Graph(format!("wrt[{i}] is not a leaf")));
        }
        wrt_ids.push(n.id);
    }

    let snap: Vec<Snapshot> = (0..=out_id)
        .map(|id| {
            graph.with_node(id, |n| Snapshot {
                kind: n.kind,
                inputs: n.inputs.clone(),
            })
        })
        .collect();

    let mut reach = vec![false; out_id + 1];
    reach[out_id] = true;
    for id in (0..=out_id).rev() {
        if reach[id] {
            for &i in &snap[id].inputs {
                reach[i] = true;
            }
        }
    }
    for (i, &id) in wrt_ids.iter().enumerate() {
        if id > out_id || !reach[id] {
            return Err(Error::Unreachable(i));
        }
    }

    let mut needs = vec![false; out_id + 1];
    for &id in &wrt_ids {
        needs[id] = true;
    }
    for id in 0..=out_id {
        if !needs[id] && snap[id].inputs.iter().any(|&i| needs[i]) {
            needs[id] = true;
        }
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; out_id + 1];
    grads[out_id] = Some(Tensor::full(output.shape(), 1.0));
    for id in (0..=out_id).rev() {
        if !reach[id] || !needs[id] || snap[id].kind == PrimitiveKind::Leaf {
            continue;
        }
        let Some(g) = grads[id].take() else { continue };
        let node = &snap[id];
        let inputs: Vec<Tensor> = node
            .inputs
            .iter()
            .map(|&i| materialize(&graph, i, create_graph))
            .collect();
        let out = materialize(&graph, id, create_graph);
        let aux = graph.with_node(id, |n| n.aux.clone());
        let in_needs: Vec<bool> = node.inputs.iter().map(|&i| needs[i]).collect();
        let contribs = vjp(node.kind, aux.as_ref(), &inputs, &out, &g, &in_needs)?;
        for ((&i, need), contrib) in node.inputs.iter().zip(in_needs).zip(contribs) {
            let Some(c) = contrib else { continue };
            if !need {
                continue;
            }
            grads[i] = Some(match grads[i].take() {
                Some(acc) => acc.add(&c)?,
                None => c,
            });
        }
    }

    Ok(wrt_ids
        .iter()
        .zip(wrt)
        .map(|(&id, t)| {
            grads[id]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect())
}
