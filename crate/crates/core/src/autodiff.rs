//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation as a node holding its output value, its
//! parents and, for elementwise unary ops, the local derivative evaluated
//! during the forward pass. Parents are always earlier on the tape, so the
//! tape is acyclic by construction and [`Tape::backward`] is a single reverse
//! sweep.
//!
//! ```
//! use dualnet_core::autodiff::Tape;
//! use dualnet_core::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.square(x);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).data(), &[6.0]);
//! ```

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, softplus, tanh, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Tanh,
    Relu,
    Softplus,
    Exp,
    Log,
    Square,
    Sin,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Unary {
        kind: UnaryKind,
        input: Var,
        local: Tensor,
    },
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Unary { kind, .. } => match kind {
                UnaryKind::Tanh => "tanh",
                UnaryKind::Relu => "relu",
                UnaryKind::Softplus => "softplus",
                UnaryKind::Exp => "exp",
                UnaryKind::Log => "log",
                UnaryKind::Square => "square",
                UnaryKind::Sin => "sin",
            },
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Activation applied after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    Softplus,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Operation tag and parents of a node, for inspection and tests.
    pub fn describe(&self, v: Var) -> (&'static str, Vec<Var>) {
        let parents = match &self.nodes[v.0].op {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::AddRow(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Offset(a) | Op::Sum(a) | Op::Mean(a) => vec![*a],
            Op::Unary { input, .. } => vec![*input],
        };
        (self.nodes[v.0].op.tag(), parents)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient (inputs, noise draws, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), f)
            .map_err(|e| Error::contract(format!("{what}: {e}")))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        let value = self.value(a).map(|x| x + shift);
        let rg = self.rg(a);
        self.push(value, Op::Offset(a), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Broadcast-adds a length-`m` row to every row of an `n×m` matrix.
    pub fn add_row(&mut self, matrix: Var, row: Var) -> Result<Var> {
        let (n, m) = self.value(matrix).expect_matrix("add_row")?;
        let r = self.value(row);
        if r.len() != m {
            return Err(Error::contract(format!(
                "add_row: row of {} values for {m} columns",
                r.len()
            )));
        }
        let mut value = self.value(matrix).clone();
        let rv = r.data().to_vec();
        for i in 0..n {
            for (o, b) in value.data_mut()[i * m..(i + 1) * m].iter_mut().zip(&rv) {
                *o += b;
            }
        }
        let rg = self.rg(matrix) || self.rg(row);
        Ok(self.push(value, Op::AddRow(matrix, row), rg))
    }

    fn unary(&mut self, a: Var, kind: UnaryKind) -> Var {
        let x = self.value(a);
        let (value, local) = match kind {
            UnaryKind::Tanh => {
                let y = x.map(tanh);
                let d = y.map(|t| 1.0 - t * t);
                (y, d)
            }
            // Subgradient at exactly 0 is 0.
            UnaryKind::Relu => (
                x.map(|v| v.max(0.0)),
                x.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            ),
            UnaryKind::Softplus => (x.map(softplus), x.map(sigmoid)),
            UnaryKind::Exp => {
                let y = x.map(f64::exp);
                (y.clone(), y)
            }
            UnaryKind::Log => (x.map(f64::ln), x.map(|v| 1.0 / v)),
            UnaryKind::Square => (x.map(|v| v * v), x.map(|v| 2.0 * v)),
            UnaryKind::Sin => (x.map(f64::sin), x.map(f64::cos)),
        };
        let rg = self.rg(a);
        self.push(
            value,
            Op::Unary {
                kind,
                input: a,
                local,
            },
            rg,
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Relu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Log)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Square)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Sin)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Mean of all elements. The mean of an empty tensor is 0.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = if t.is_empty() {
            0.0
        } else {
            t.sum() / t.len() as f64
        };
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    pub fn activate(&mut self, a: Var, activation: Activation) -> Var {
        match activation {
            Activation::Tanh => self.tanh(a),
            Activation::Relu => self.relu(a),
            Activation::Softplus => self.softplus(a),
            Activation::Identity => a,
        }
    }

    /// `activation(input · weights + bias)` for an `n×in` input, `in×out`
    /// weights and a length-`out` bias.
    pub fn dense_forward(
        &mut self,
        weights: Var,
        bias: Var,
        input: Var,
        activation: Activation,
    ) -> Result<Var> {
        let (_, fan_in) = self.value(input).expect_matrix("dense input")?;
        let (w_in, _) = self.value(weights).expect_matrix("dense weights")?;
        if w_in != fan_in {
            return Err(Error::contract(format!(
                "dense: weights expect {w_in} inputs, input has {fan_in}"
            )));
        }
        let z = self.matmul(input, weights)?;
        let z = self.add_row(z, bias)?;
        Ok(self.activate(z, activation))
    }

    /// Gradient of the scalar `root` with respect to every node on the tape.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::contract(format!(
                "backward from non-scalar root of shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, || g.clone());
                    self.accumulate(&mut grads, *b, || g.clone());
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, || g.clone());
                    self.accumulate(&mut grads, *b, || g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.accumulate(&mut grads, *a, || g.zip_map(bv, |x, y| x * y).unwrap());
                    self.accumulate(&mut grads, *b, || g.zip_map(av, |x, y| x * y).unwrap());
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.accumulate(&mut grads, *a, || g.zip_map(bv, |x, y| x / y).unwrap());
                    self.accumulate(&mut grads, *b, || {
                        let q = av.zip_map(bv, |x, y| -x / (y * y)).unwrap();
                        g.zip_map(&q, |x, y| x * y).unwrap()
                    });
                }
                Op::Scale(a, factor) => {
                    let f = *factor;
                    self.accumulate(&mut grads, *a, || g.map(|v| v * f));
                }
                Op::Offset(a) => {
                    self.accumulate(&mut grads, *a, || g.clone());
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.accumulate(&mut grads, *a, || g.matmul_nt(bv));
                    self.accumulate(&mut grads, *b, || av.matmul_tn(&g));
                }
                Op::AddRow(m, row) => {
                    self.accumulate(&mut grads, *m, || g.clone());
                    self.accumulate(&mut grads, *row, || {
                        let cols = g.cols();
                        let mut sums = vec![0.0; cols];
                        for chunk in g.data().chunks(cols) {
                            for (s, v) in sums.iter_mut().zip(chunk) {
                                *s += v;
                            }
                        }
                        Tensor::new(self.value(*row).shape().to_vec(), sums).unwrap()
                    });
                }
                Op::Unary { input, local, .. } => {
                    self.accumulate(&mut grads, *input, || {
                        g.zip_map(local, |x, d| x * d).unwrap()
                    });
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    self.accumulate(&mut grads, *a, || Tensor::full(self.value(*a).shape(), s));
                }
                Op::Mean(a) => {
                    let t = self.value(*a);
                    let s = g.data()[0] / t.len().max(1) as f64;
                    self.accumulate(&mut grads, *a, || Tensor::full(t.shape(), s));
                }
            }
        }

        let shapes = self.nodes[..=root.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor>],
        target: Var,
        contribution: impl FnOnce() -> Tensor,
    ) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let c = contribution();
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&c),
            slot @ None => *slot = Some(c),
        }
    }
}

/// Result of [`Tape::backward`]: gradients of the root with respect to leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` is not on any path to the root.
    pub fn get(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => match self.shapes.get(v.0) {
                Some(shape) => Tensor::zeros(shape),
                None => Tensor::zeros(&[]),
            },
        }
    }

    /// Moves the gradient out, avoiding a copy.
    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(self.shapes.get(v.0).map(Vec::as_slice).unwrap_or(&[])),
        }
    }
}
