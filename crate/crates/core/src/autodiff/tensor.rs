use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::ops::PrimitiveKind;
use crate::error::{Error, Result};

/// Identifier of a node inside a [`Graph`]. Ids are assigned in creation
/// order, which is also a valid topological order.
pub type NodeId = usize;

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) kind: PrimitiveKind,
    pub(crate) inputs: Vec<NodeId>,
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Rc<[f64]>,
    /// Constant side operand captured at record time (masks for relu/max).
    pub(crate) aux: Option<Rc<[f64]>>,
}

/// An append-only computation graph.
///
/// Cloning a `Graph` yields another handle to the same graph. A graph is
/// confined to the thread that created it.
#[derive(Clone, Default)]
pub struct Graph {
    inner: Rc<RefCell<Vec<Node>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.borrow().is_empty()
    }

    /// Registers `value` as a leaf of this graph and returns the attached tensor.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let id = self.push(Node {
            kind: PrimitiveKind::Leaf,
            inputs: Vec::new(),
            shape: value.shape.clone(),
            value: value.data.clone(),
            aux: None,
        });
        Tensor {
            shape: value.shape.clone(),
            data: value.data.clone(),
            node: Some(NodeRef {
                graph: self.clone(),
                id,
            }),
        }
    }

    pub(crate) fn push(&self, node: Node) -> NodeId {
        let mut nodes = self.inner.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    pub(crate) fn with_node<R>(&self, id: NodeId, f: impl FnOnce(&Node) -> R) -> R {
        f(&self.inner.borrow()[id])
    }

    pub(crate) fn same(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Recomputes every non-leaf node from its recorded inputs and reports
    /// whether all cached values are reproduced bit for bit.
    pub fn replay_matches(&self) -> bool {
        let nodes = self.inner.borrow();
        let mut values: Vec<Rc<[f64]>> = Vec::with_capacity(nodes.len());
        for node in nodes.iter() {
            if node.kind == PrimitiveKind::Leaf {
                values.push(node.value.clone());
                continue;
            }
            let inputs: Vec<Tensor> = node
                .inputs
                .iter()
                .map(|&i| Tensor {
                    shape: nodes[i].shape.clone(),
                    data: values[i].clone(),
                    node: None,
                })
                .collect();
            let refs: Vec<&Tensor> = inputs.iter().collect();
            let out = match super::ops::forward_value(node.kind, &refs) {
                Ok((out, _)) => out,
                Err(_) => return false,
            };
            let same = out.data.len() == node.value.len()
                && out
                    .data
                    .iter()
                    .zip(node.value.iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return false;
            }
            values.push(out.data);
        }
        true
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct NodeRef {
    pub(crate) graph: Graph,
    pub(crate) id: NodeId,
}

/// Dense row-major `f64` array, optionally attached to a [`Graph`].
#[derive(Clone)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<[f64]>,
    pub(crate) node: Option<NodeRef>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        Ok(Self::from_parts(shape.to_vec(), data.into()))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Rc<[f64]>) -> Self {
        Self {
            shape,
            data,
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(Vec::new(), vec![v].into())
    }

    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::from_parts(vec![n], values.into())
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], values)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![v; n].into())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            self.shape.first().copied().unwrap_or(1)
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_attached(&self) -> bool {
        self.node.is_some()
    }

    pub fn graph(&self) -> Option<&Graph> {
        self.node.as_ref().map(|n| &n.graph)
    }

    /// Same values with no graph attachment.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `r` of a rank-2 tensor as a detached rank-1 tensor.
    pub fn row(&self, r: usize) -> Tensor {
        let c = self.cols();
        Tensor::vector(self.data[r * c..(r + 1) * c].to_vec())
    }

    /// Detached reshape; the element count must be preserved.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    /// Stack detached rank-1 rows of equal length into a matrix.
    pub fn stack_rows(rows: &[Tensor]) -> Result<Tensor> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero rows".into()))?;
        let c = first.numel();
        let mut data = Vec::with_capacity(c * rows.len());
        for r in rows {
            if r.numel() != c {
                return Err(Error::Shape(format!(
                    "row lengths differ: {} vs {}",
                    c,
                    r.numel()
                )));
            }
            data.extend_from_slice(r.values());
        }
        Tensor::matrix(rows.len(), c, data)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("values", &&self.data[..self.data.len().min(8)])
            .field("node", &self.node.as_ref().map(|n| n.id))
            .finish()
    }
}

impl PartialEq for Tensor {
    /// Value equality; graph attachment is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}
