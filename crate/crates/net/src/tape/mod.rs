//! Minimal reverse-mode differentiation over `(N, C, H, W)` arrays.
//!
//! A [`Graph`] records every op in execution order; [`Graph::backward`]
//! walks the record in reverse. Graphs are cheap and single-use: build one
//! per forward pass.

mod conv;
mod ops;

use ndarray::{Array2, Array4, Zip};
use octa_core::Scalar;

use crate::error::{NetError, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

pub(crate) enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, cols: Vec<Array2<T>> },
    Add(Var, Var),
    Concat(Var, Var),
    Relu(Var),
    InstanceNorm { x: Var, gamma: Var, beta: Var, xhat: Array4<T>, inv_std: Array2<T> },
    MaxPool2 { x: Var, argmax: Array4<u8> },
    Upsample2(Var),
    Softplus(Var),
    Scale(Var, T),
    Reparam { mu: Var, sigma: Var, eps: Array4<T> },
    LossL1L2 { y: Var, pred: Var, a: T, b: T },
}

struct Node<T> {
    value: Array4<T>,
    grad: Option<Array4<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// One piecewise decision of a forward pass.
#[derive(Clone, Debug, PartialEq)]
enum Kink {
    /// ReLU: input strictly positive.
    Active(Array4<bool>),
    /// Max-pool winner within each 2×2 window.
    Winner(Array4<u8>),
    /// Sign of `y - pred` in the L1 term.
    Sign(Array4<i8>),
}

/// Every piecewise decision taken by a forward pass, in op order. Two
/// evaluations with equal patterns lie on the same smooth piece.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct KinkPattern(Vec<Kink>);

impl KinkPattern {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
    /// Decisions to replay instead of deciding afresh, with a cursor.
    pinned: Option<(KinkPattern, usize)>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), recording: true, pinned: None }
    }

    /// A graph whose ReLU, max-pool and L1 decisions are replayed from
    /// `pattern` rather than taken from the values: it evaluates the smooth
    /// piece the pattern was recorded on, extended past its kinks. Leaves
    /// must match the recording graph's so the same ops are recorded.
    /// `backward` is unavailable.
    pub fn pinned(pattern: KinkPattern) -> Self {
        Self { nodes: Vec::new(), recording: true, pinned: Some((pattern, 0)) }
    }

    /// A graph that keeps no backward state; `backward` is unavailable.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), recording: false, pinned: None }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input: no gradient is accumulated for it.
    pub fn constant(&mut self, value: Array4<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf (parameter or checked input).
    pub fn leaf(&mut self, value: Array4<T>) -> Var {
        let rg = self.recording;
        self.push(value, Op::Leaf, rg)
    }

    pub fn value(&self, v: Var) -> &Array4<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        let (n, c, h, w) = self.nodes[v.0].value.dim();
        [n, c, h, w]
    }

    pub fn grad(&self, v: Var) -> Option<&Array4<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Array4<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn take_value(&mut self, v: Var) -> Array4<T> {
        std::mem::take(&mut self.nodes[v.0].value)
    }

    /// Single element of a one-element value (losses).
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.iter().next().copied().unwrap_or_else(T::zero)
    }

    fn requires(&self, vars: &[Var]) -> bool {
        self.recording && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push(&mut self, value: Array4<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Array4<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if cfg!(debug_assertions) && value.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite(name));
        }
        let rg = self.requires(inputs);
        let op = if rg { op } else { Op::Leaf };
        Ok(self.push(value, op, rg))
    }

    /// Decisions taken by every recorded ReLU, max-pool and L1 loss.
    pub fn kink_pattern(&self) -> KinkPattern {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => out.push(Kink::Active(self.nodes[x.0].value.mapv(|v| v > T::zero()))),
                Op::MaxPool2 { argmax, .. } => out.push(Kink::Winner(argmax.clone())),
                Op::LossL1L2 { y, pred, .. } => {
                    let mut sign = Array4::zeros(self.nodes[y.0].value.raw_dim());
                    Zip::from(&mut sign).and(&self.nodes[y.0].value).and(&self.nodes[pred.0].value).for_each(|s, &a, &b| {
                        let d = a - b;
                        *s = (d > T::zero()) as i8 - (d < T::zero()) as i8;
                    });
                    out.push(Kink::Sign(sign));
                }
                _ => {}
            }
        }
        KinkPattern(out)
    }

    /// Next pinned decision, if this graph replays a pattern and the op
    /// about to be recorded takes part in it.
    fn next_kink(&mut self, inputs: &[Var]) -> Option<Kink> {
        if !self.requires(inputs) {
            return None;
        }
        let (pattern, cursor) = self.pinned.as_mut()?;
        let k = pattern.0.get(*cursor).cloned();
        *cursor += 1;
        k
    }

    /// Reverse sweep from a one-element `loss`. Leaf gradients accumulate;
    /// intermediate gradients are released once propagated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.recording || self.pinned.is_some() {
            return Err(NetError::Config("backward on an inference or pinned graph".into()));
        }
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(NetError::shape("backward", format!("loss must hold one element, got {shape:?}")));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let seed = Array4::from_elem(self.nodes[loss.0].value.raw_dim(), T::one());
        accumulate(&mut self.nodes[loss.0], seed);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = node.grad.take() else { continue };
            ops::backward_node(&node.op, &g, before);
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(node: &mut Node<T>, g: Array4<T>) {
    if !node.requires_grad {
        return;
    }
    match &mut node.grad {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Nodes preceding the one being differentiated.
pub(crate) struct Inputs<'a, T>(&'a mut [Node<T>]);

impl<T: Scalar> Inputs<'_, T> {
    fn wants(&self, v: Var) -> bool {
        self.0[v.0].requires_grad
    }

    fn value(&self, v: Var) -> &Array4<T> {
        &self.0[v.0].value
    }

    fn add(&mut self, v: Var, g: Array4<T>) {
        accumulate(&mut self.0[v.0], g);
    }
}
