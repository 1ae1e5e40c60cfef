//! Scalar tape carrying forward tangents, with a reverse pass over both the
//! values and the tangents.
//!
//! Every node holds a value and its derivative with respect to the network
//! input `x`. The reverse pass accumulates two adjoints per node, so a loss
//! that contains `dN/dx` terms (through [`Tape::tangent_of`]) can still be
//! differentiated with respect to the parameters (reverse over forward).
//!
//! The tape is built once and then replayed: leaf values (parameters, inputs)
//! are overwritten in place and [`Tape::forward`] re-evaluates every node in
//! recording order.

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Node(u32);

impl Node {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Input,
    Param,
    Const,
    Add(Node, Node),
    Sub(Node, Node),
    Mul(Node, Node),
    Div(Node, Node),
    Neg(Node),
    Scale(Node, f64),
    Square(Node),
    Tanh(Node),
    Sin(Node),
    Cos(Node),
    Exp(Node),
    Powf(Node, f64),
    /// `bias + sum_i w[i] * a[i]` with contiguous parameter weights and
    /// contiguous inputs.
    Affine {
        weights: u32,
        inputs: u32,
        len: u32,
        bias: Option<Node>,
    },
    /// Sum over `operands[start..start + len]` in ascending order.
    Sum { start: u32, len: u32 },
    /// Lifts the tangent of a node into the value slot of a new node.
    TangentOf(Node),
}

/// Contiguous block of parameter leaves, created by [`Tape::params`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    first: Node,
    len: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn node(&self, i: usize) -> Node {
        assert!(i < self.len, "parameter index {i} out of range {}", self.len);
        Node(self.first.0 + i as u32)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    /// False for nodes whose tangent is not defined (anything downstream of
    /// a `TangentOf`). Second input derivatives are not supported.
    tracked: Vec<bool>,
    operands: Vec<Node>,
    value: Vec<f64>,
    tangent: Vec<f64>,
    adj_value: Vec<f64>,
    adj_tangent: Vec<f64>,
    params: Option<ParamBlock>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, value: f64, tangent: f64, tracked: bool) -> Node {
        let id = u32::try_from(self.ops.len()).expect("tape exceeds u32 nodes");
        self.ops.push(op);
        self.value.push(value);
        self.tangent.push(if tracked { tangent } else { 0.0 });
        self.tracked.push(tracked);
        Node(id)
    }

    #[inline]
    fn v(&self, n: Node) -> f64 {
        self.value[n.index()]
    }

    #[inline]
    fn t(&self, n: Node) -> f64 {
        self.tangent[n.index()]
    }

    #[inline]
    fn tr(&self, n: Node) -> bool {
        self.tracked[n.index()]
    }

    /// An independent-variable leaf. Its tangent is 1.
    pub fn input(&mut self, x: f64) -> Node {
        self.push(Op::Input, x, 1.0, true)
    }

    /// Registers the parameter leaves. A tape has exactly one parameter
    /// block; parameter `i` of the gradient is leaf `block.node(i)`.
    pub fn params(&mut self, values: &[f64]) -> ParamBlock {
        assert!(self.params.is_none(), "tape already has a parameter block");
        let first = Node(self.ops.len() as u32);
        for &v in values {
            self.push(Op::Param, v, 0.0, true);
        }
        let block = ParamBlock {
            first,
            len: values.len(),
        };
        self.params = Some(block);
        block
    }

    pub fn param_block(&self) -> Option<ParamBlock> {
        self.params
    }

    pub fn constant(&mut self, c: f64) -> Node {
        self.push(Op::Const, c, 0.0, true)
    }

    pub fn add(&mut self, a: Node, b: Node) -> Node {
        let tr = self.tr(a) && self.tr(b);
        self.push(Op::Add(a, b), self.v(a) + self.v(b), self.t(a) + self.t(b), tr)
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Node {
        let tr = self.tr(a) && self.tr(b);
        self.push(Op::Sub(a, b), self.v(a) - self.v(b), self.t(a) - self.t(b), tr)
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Node {
        let tr = self.tr(a) && self.tr(b);
        let (va, vb) = (self.v(a), self.v(b));
        let t = self.t(a) * vb + va * self.t(b);
        self.push(Op::Mul(a, b), va * vb, t, tr)
    }

    pub fn div(&mut self, a: Node, b: Node) -> Node {
        let tr = self.tr(a) && self.tr(b);
        let (va, vb) = (self.v(a), self.v(b));
        let y = va / vb;
        let t = (self.t(a) - y * self.t(b)) / vb;
        self.push(Op::Div(a, b), y, t, tr)
    }

    pub fn neg(&mut self, a: Node) -> Node {
        let tr = self.tr(a);
        self.push(Op::Neg(a), -self.v(a), -self.t(a), tr)
    }

    pub fn scale(&mut self, a: Node, c: f64) -> Node {
        let tr = self.tr(a);
        self.push(Op::Scale(a, c), c * self.v(a), c * self.t(a), tr)
    }

    pub fn square(&mut self, a: Node) -> Node {
        let tr = self.tr(a);
        let va = self.v(a);
        self.push(Op::Square(a), va * va, 2.0 * va * self.t(a), tr)
    }

    pub fn tanh(&mut self, a: Node) -> Node {
        let tr = self.tr(a);
        let y = self.v(a).tanh();
        self.push(Op::Tanh(a), y, (1.0 - y * y) * self.t(a), tr)
    }

    pub fn sin(&mut self, a: Node) -> Node {
        let tr = self.tr(a);
        let va = self.v(a);
        self.push(Op::Sin(a), va.sin(), va.cos() * self.t(a), tr)
    }

    pub fn cos(&mut self, a: Node) -> Node {
        let tr = self.tr(a);
        let va = self.v(a);
        self.push(Op::Cos(a), va.cos(), -va.sin() * self.t(a), tr)
    }

    pub fn exp(&mut self, a: Node) -> Node {
        let tr = self.tr(a);
        let y = self.v(a).exp();
        self.push(Op::Exp(a), y, y * self.t(a), tr)
    }

    /// `a^c` for a constant real exponent.
    pub fn powf(&mut self, a: Node, c: f64) -> Node {
        let tr = self.tr(a);
        let va = self.v(a);
        let (y, d) = powf_d1(va, c);
        self.push(Op::Powf(a, c), y, d * self.t(a), tr)
    }

    /// `bias + sum_i weights[i] * inputs[i]` where `weights` is the first of
    /// `len` consecutive parameter leaves and `inputs` the first of `len`
    /// consecutive nodes.
    pub fn affine(&mut self, weights: Node, inputs: Node, len: usize, bias: Option<Node>) -> Node {
        let (w0, a0) = (weights.index(), inputs.index());
        assert!(
            (w0..w0 + len).all(|i| matches!(self.ops[i], Op::Param)),
            "affine weights must be parameter leaves"
        );
        assert!(a0 + len <= self.ops.len(), "affine inputs out of range");
        let mut tr = (a0..a0 + len).all(|i| self.tracked[i]);
        let (mut v, mut t) = match bias {
            Some(b) => {
                tr &= self.tr(b);
                (self.v(b), self.t(b))
            }
            None => (0.0, 0.0),
        };
        for i in 0..len {
            let w = self.value[w0 + i];
            v += w * self.value[a0 + i];
            t += w * self.tangent[a0 + i];
        }
        let op = Op::Affine {
            weights: weights.0,
            inputs: inputs.0,
            len: len as u32,
            bias,
        };
        self.push(op, v, t, tr)
    }

    /// Sum of `nodes` accumulated left to right.
    pub fn sum(&mut self, nodes: &[Node]) -> Node {
        let start = self.operands.len() as u32;
        self.operands.extend_from_slice(nodes);
        let tr = nodes.iter().all(|&n| self.tr(n));
        let v = nodes.iter().fold(0.0, |acc, &n| acc + self.v(n));
        let t = nodes.iter().fold(0.0, |acc, &n| acc + self.t(n));
        let op = Op::Sum {
            start,
            len: nodes.len() as u32,
        };
        self.push(op, v, t, tr)
    }

    /// A node whose value is the input-derivative of `a`. The new node has
    /// no tangent of its own.
    pub fn tangent_of(&mut self, a: Node) -> Result<Node> {
        if !self.tr(a) {
            return Err(Error::Unsupported("derivative of a derivative node"));
        }
        Ok(self.push(Op::TangentOf(a), self.t(a), 0.0, false))
    }

    pub fn value(&self, n: Node) -> f64 {
        self.v(n)
    }

    /// Derivative of `n` with respect to its input leaf.
    pub fn tangent(&self, n: Node) -> Result<f64> {
        if self.tr(n) {
            Ok(self.t(n))
        } else {
            Err(Error::Unsupported("tangent of a derivative node"))
        }
    }

    pub fn set_input(&mut self, n: Node, x: f64) {
        assert!(matches!(self.ops[n.index()], Op::Input), "not an input leaf");
        self.value[n.index()] = x;
    }

    /// Overwrites the parameter leaves. Takes effect on the next
    /// [`Tape::forward`].
    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        let block = self.params.ok_or(Error::Shape {
            expected: 0,
            actual: values.len(),
        })?;
        if values.len() != block.len {
            return Err(Error::Shape {
                expected: block.len,
                actual: values.len(),
            });
        }
        let s = block.first.index();
        self.value[s..s + block.len].copy_from_slice(values);
        Ok(())
    }

    /// Replays every node in recording order from the current leaf values.
    pub fn forward(&mut self) -> Result<()> {
        for i in 0..self.ops.len() {
            let (v, t) = match self.ops[i] {
                Op::Input => (self.value[i], 1.0),
                Op::Param | Op::Const => (self.value[i], 0.0),
                Op::Add(a, b) => (self.v(a) + self.v(b), self.t(a) + self.t(b)),
                Op::Sub(a, b) => (self.v(a) - self.v(b), self.t(a) - self.t(b)),
                Op::Mul(a, b) => {
                    let (va, vb) = (self.v(a), self.v(b));
                    (va * vb, self.t(a) * vb + va * self.t(b))
                }
                Op::Div(a, b) => {
                    let vb = self.v(b);
                    let y = self.v(a) / vb;
                    (y, (self.t(a) - y * self.t(b)) / vb)
                }
                Op::Neg(a) => (-self.v(a), -self.t(a)),
                Op::Scale(a, c) => (c * self.v(a), c * self.t(a)),
                Op::Square(a) => {
                    let va = self.v(a);
                    (va * va, 2.0 * va * self.t(a))
                }
                Op::Tanh(a) => {
                    let y = self.v(a).tanh();
                    (y, (1.0 - y * y) * self.t(a))
                }
                Op::Sin(a) => {
                    let va = self.v(a);
                    (va.sin(), va.cos() * self.t(a))
                }
                Op::Cos(a) => {
                    let va = self.v(a);
                    (va.cos(), -va.sin() * self.t(a))
                }
                Op::Exp(a) => {
                    let y = self.v(a).exp();
                    (y, y * self.t(a))
                }
                Op::Powf(a, c) => {
                    let (y, d) = powf_d1(self.v(a), c);
                    (y, d * self.t(a))
                }
                Op::Affine {
                    weights,
                    inputs,
                    len,
                    bias,
                } => {
                    let (mut v, mut t) = match bias {
                        Some(b) => (self.v(b), self.t(b)),
                        None => (0.0, 0.0),
                    };
                    let (w0, a0, len) = (weights as usize, inputs as usize, len as usize);
                    let w = &self.value[w0..w0 + len];
                    let av = &self.value[a0..a0 + len];
                    let at = &self.tangent[a0..a0 + len];
                    for k in 0..len {
                        v += w[k] * av[k];
                        t += w[k] * at[k];
                    }
                    (v, t)
                }
                Op::Sum { start, len } => {
                    let ops = &self.operands[start as usize..(start + len) as usize];
                    let v = ops.iter().fold(0.0, |acc, &n| acc + self.v(n));
                    let t = ops.iter().fold(0.0, |acc, &n| acc + self.t(n));
                    (v, t)
                }
                Op::TangentOf(a) => (self.t(a), 0.0),
            };
            if !v.is_finite() || !t.is_finite() {
                return Err(Error::NonFinite { node: i });
            }
            self.value[i] = v;
            self.tangent[i] = if self.tracked[i] { t } else { 0.0 };
        }
        Ok(())
    }

    /// Reverse pass seeded with `d output = 1`. Afterwards
    /// [`Tape::adjoint`] holds `d output / d value` for every node.
    pub fn backward(&mut self, output: Node) {
        let n = self.ops.len();
        self.adj_value.clear();
        self.adj_value.resize(n, 0.0);
        self.adj_tangent.clear();
        self.adj_tangent.resize(n, 0.0);
        self.adj_value[output.index()] = 1.0;

        for i in (0..=output.index()).rev() {
            let gv = self.adj_value[i];
            let gt = self.adj_tangent[i];
            if gv == 0.0 && gt == 0.0 {
                continue;
            }
            match self.ops[i] {
                Op::Input | Op::Param | Op::Const => {}
                Op::Add(a, b) => {
                    self.acc(a, gv, gt);
                    self.acc(b, gv, gt);
                }
                Op::Sub(a, b) => {
                    self.acc(a, gv, gt);
                    self.acc(b, -gv, -gt);
                }
                Op::Mul(a, b) => {
                    let (va, ta, vb, tb) = (self.v(a), self.t(a), self.v(b), self.t(b));
                    self.acc(a, gv * vb + gt * tb, gt * vb);
                    self.acc(b, gv * va + gt * ta, gt * va);
                }
                Op::Div(a, b) => {
                    let (ta, vb, tb) = (self.t(a), self.v(b), self.t(b));
                    let y = self.value[i];
                    let inv = 1.0 / vb;
                    // y = a/b, y' = (a' - y b') / b
                    let dyt_da = -tb * inv * inv;
                    let dyt_db = (-ta + 2.0 * y * tb) * inv * inv;
                    self.acc(a, gv * inv + gt * dyt_da, gt * inv);
                    self.acc(b, -gv * y * inv + gt * dyt_db, -gt * y * inv);
                }
                Op::Neg(a) => self.acc(a, -gv, -gt),
                Op::Scale(a, c) => self.acc(a, c * gv, c * gt),
                Op::Square(a) => {
                    let (va, ta) = (self.v(a), self.t(a));
                    self.acc(a, 2.0 * (gv * va + gt * ta), 2.0 * gt * va);
                }
                Op::Tanh(a) => {
                    let y = self.value[i];
                    let d1 = 1.0 - y * y;
                    let d2 = -2.0 * y * d1;
                    self.unary(a, gv, gt, d1, d2);
                }
                Op::Sin(a) => {
                    let va = self.v(a);
                    self.unary(a, gv, gt, va.cos(), -va.sin());
                }
                Op::Cos(a) => {
                    let va = self.v(a);
                    self.unary(a, gv, gt, -va.sin(), -va.cos());
                }
                Op::Exp(a) => {
                    let y = self.value[i];
                    self.unary(a, gv, gt, y, y);
                }
                Op::Powf(a, c) => {
                    let va = self.v(a);
                    let (_, d1) = powf_d1(va, c);
                    let d2 = if c == 1.0 || c == 0.0 {
                        0.0
                    } else {
                        c * (c - 1.0) * va.powf(c - 2.0)
                    };
                    self.unary(a, gv, gt, d1, d2);
                }
                Op::Affine {
                    weights,
                    inputs,
                    len,
                    bias,
                } => {
                    if let Some(b) = bias {
                        self.acc(b, gv, gt);
                    }
                    let (w0, a0, len) = (weights as usize, inputs as usize, len as usize);
                    let w = &self.value[w0..w0 + len];
                    let av = &self.value[a0..a0 + len];
                    let at = &self.tangent[a0..a0 + len];
                    let a_adj_t = &mut self.adj_tangent[a0..a0 + len];
                    if w0 + len <= a0 {
                        let (lo, hi) = self.adj_value.split_at_mut(a0);
                        let w_adj = &mut lo[w0..w0 + len];
                        let a_adj = &mut hi[..len];
                        for k in 0..len {
                            w_adj[k] += gv * av[k] + gt * at[k];
                            a_adj[k] += gv * w[k];
                            a_adj_t[k] += gt * w[k];
                        }
                    } else {
                        for k in 0..len {
                            self.adj_value[w0 + k] += gv * av[k] + gt * at[k];
                            self.adj_value[a0 + k] += gv * w[k];
                            a_adj_t[k] += gt * w[k];
                        }
                    }
                }
                Op::Sum { start, len } => {
                    for k in start..start + len {
                        let n = self.operands[k as usize];
                        self.acc(n, gv, gt);
                    }
                }
                Op::TangentOf(a) => {
                    self.adj_tangent[a.index()] += gv;
                }
            }
        }
    }

    #[inline]
    fn acc(&mut self, n: Node, gv: f64, gt: f64) {
        self.adj_value[n.index()] += gv;
        self.adj_tangent[n.index()] += gt;
    }

    /// y = g(a), y' = g'(a) a'.
    #[inline]
    fn unary(&mut self, a: Node, gv: f64, gt: f64, d1: f64, d2: f64) {
        let ta = self.t(a);
        self.acc(a, gv * d1 + gt * d2 * ta, gt * d1);
    }

    /// Adjoint of a node's value from the last [`Tape::backward`].
    pub fn adjoint(&self, n: Node) -> f64 {
        self.adj_value.get(n.index()).copied().unwrap_or(0.0)
    }

    /// Copies the parameter gradient from the last [`Tape::backward`] into
    /// `out`, rejecting non-finite entries.
    pub fn param_gradient(&self, out: &mut [f64]) -> Result<()> {
        let block = self.params.ok_or(Error::Shape {
            expected: 0,
            actual: out.len(),
        })?;
        if out.len() != block.len {
            return Err(Error::Shape {
                expected: block.len,
                actual: out.len(),
            });
        }
        let s = block.first.index();
        for (k, g) in out.iter_mut().enumerate() {
            let v = self.adj_value[s + k];
            if !v.is_finite() {
                return Err(Error::NonFinite { node: s + k });
            }
            *g = v;
        }
        Ok(())
    }

    /// Evaluates `out` and its input-derivative at `input = x` with the given
    /// parameters.
    pub fn forward_with_tangent(
        &mut self,
        out: Node,
        input: Node,
        x: f64,
        params: &[f64],
    ) -> Result<(f64, f64)> {
        if self.params.is_some() {
            self.set_params(params)?;
        }
        self.set_input(input, x);
        self.forward()?;
        Ok((self.v(out), self.tangent(out)?))
    }

    /// Full gradient of a scalar `loss` node with respect to the parameter
    /// block, in parameter order.
    pub fn gradient(&mut self, loss: Node, params: &[f64]) -> Result<Vec<f64>> {
        self.set_params(params)?;
        self.forward()?;
        self.backward(loss);
        let mut g = vec![0.0; params.len()];
        self.param_gradient(&mut g)?;
        Ok(g)
    }
}

fn powf_d1(a: f64, c: f64) -> (f64, f64) {
    let y = a.powf(c);
    let d = if c == 0.0 {
        0.0
    } else if c == 1.0 {
        1.0
    } else {
        c * a.powf(c - 1.0)
    };
    (y, d)
}
