//! Reverse-mode automatic differentiation over dense real tensors.
//!
//! Nodes are appended in evaluation order, so parents always precede their
//! children and a single reverse sweep visits every node once. Values are
//! 2-D row-major tensors; a scalar is `1 x 1`. Operations that are awkward
//! to express elementwise (the complex beamformer stages) plug in through
//! [`CustomOp`], carrying whatever forward state their adjoint needs.

use std::fmt;

/// Dense row-major real tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape/data mismatch");
        Tensor { rows, cols, data }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor::new(1, 1, vec![x])
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor::new(1, data.len(), data)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A node whose vector-Jacobian product is supplied by the implementor.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the gradient of the output.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `x w^T + b` with `x: B x in`, `w: out x in`, `b: 1 x out`.
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    /// `softplus(x) + shift`.
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Affine { .. } => "affine",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only computation record.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kinds: Vec<_> = self.nodes.iter().map(|n| n.op.kind()).collect();
        f.debug_struct("Tape").field("nodes", &kinds).finish()
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.rows, x.cols, data);
        self.push(t, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let t = Tensor::new(x.rows, x.cols, data);
        self.push(t, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.rows, x.cols, x.data.iter().map(|p| p * s).collect());
        self.push(t, Op::Scale(a, s))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(xv.cols, wv.cols, "affine input width mismatch");
        assert_eq!(bv.shape(), (1, wv.rows), "affine bias shape mismatch");
        let (batch, inp, out) = (xv.rows, wv.cols, wv.rows);
        let mut y = Tensor::zeros(batch, out);
        for r in 0..batch {
            let xr = &xv.data[r * inp..(r + 1) * inp];
            let yr = &mut y.data[r * out..(r + 1) * out];
            for o in 0..out {
                let wo = &wv.data[o * inp..(o + 1) * inp];
                let mut s = bv.data[o];
                for i in 0..inp {
                    s += xr[i] * wo[i];
                }
                yr[o] = s;
            }
        }
        self.push(y, Op::Affine { x, w, b })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.rows, x.cols, x.data.iter().map(|p| p.max(0.0)).collect());
        self.push(t, Op::Relu(a))
    }

    /// Activity pattern of every ReLU input recorded so far, one flag per
    /// element. Two evaluations with equal patterns lie on the same smooth
    /// piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(self.value(a).data.iter().map(|&x| x > 0.0)),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// `softplus(x) + shift`, elementwise.
    pub fn softplus(&mut self, a: Var, shift: f64) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|&p| softplus(p) + shift).collect();
        let t = Tensor::new(x.rows, x.cols, data);
        self.push(t, Op::Softplus(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data.iter().sum::<f64>() / x.data.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    pub fn custom(&mut self, inputs: Vec<Var>, value: Tensor, op: Box<dyn CustomOp>) -> Var {
        debug_assert!(inputs.iter().all(|v| v.0 < self.nodes.len()));
        self.push(value, Op::Custom { inputs, op })
    }

    /// Reverse sweep from a scalar root. Adds no nodes to the tape.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));

        fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let ga = g.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
                    let gb = g.data.iter().zip(&x.data).map(|(p, q)| p * q).collect();
                    accumulate(&mut grads, *a, Tensor::new(g.rows, g.cols, ga));
                    accumulate(&mut grads, *b, Tensor::new(g.rows, g.cols, gb));
                }
                Op::Scale(a, s) => {
                    let ga = g.data.iter().map(|p| p * s).collect();
                    accumulate(&mut grads, *a, Tensor::new(g.rows, g.cols, ga));
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (batch, inp, out) = (xv.rows, wv.cols, wv.rows);
                    let mut gx = Tensor::zeros(batch, inp);
                    let mut gw = Tensor::zeros(out, inp);
                    let mut gb = Tensor::zeros(1, out);
                    for r in 0..batch {
                        let gr = &g.data[r * out..(r + 1) * out];
                        let xr = &xv.data[r * inp..(r + 1) * inp];
                        let gxr = &mut gx.data[r * inp..(r + 1) * inp];
                        for o in 0..out {
                            let go = gr[o];
                            if go == 0.0 {
                                continue;
                            }
                            gb.data[o] += go;
                            let wo = &wv.data[o * inp..(o + 1) * inp];
                            let gwo = &mut gw.data[o * inp..(o + 1) * inp];
                            for i in 0..inp {
                                gxr[i] += go * wo[i];
                                gwo[i] += go * xr[i];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga = g
                        .data
                        .iter()
                        .zip(&x.data)
                        .map(|(p, &q)| if q > 0.0 { *p } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(g.rows, g.cols, ga));
                }
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    let ga = g
                        .data
                        .iter()
                        .zip(&x.data)
                        .map(|(p, &q)| p * sigmoid(q))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(g.rows, g.cols, ga));
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    let gv = g.item();
                    accumulate(&mut grads, *a, Tensor::new(x.rows, x.cols, vec![gv; x.data.len()]));
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let gv = g.item() / x.data.len() as f64;
                    accumulate(&mut grads, *a, Tensor::new(x.rows, x.cols, vec![gv; x.data.len()]));
                }
                Op::Custom { inputs, op } => {
                    let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                    let gs = op.backward(&values, &node.value, &g);
                    assert_eq!(gs.len(), inputs.len(), "{} returned wrong arity", op.name());
                    for (v, gi) in inputs.iter().zip(gs) {
                        assert_eq!(gi.shape(), self.value(*v).shape(), "{} gradient shape", op.name());
                        accumulate(&mut grads, *v, gi);
                    }
                }
            }
            // leaves keep their gradient for the caller
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }
}

/// Gradients of a scalar root with respect to every node it depends on.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` if the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_and_product() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x);
        let g = t.backward(y);
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);

        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let y = t.leaf(Tensor::scalar(5.0));
        let z = t.mul(x, y);
        let g = t.backward(z);
        assert_eq!(g.wrt(x).unwrap().item(), 5.0);
        assert_eq!(g.wrt(y).unwrap().item(), 2.0);
    }

    #[test]
    fn backward_adds_no_nodes() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row_vector(vec![1.0, -2.0, 3.0]));
        let r = t.relu(x);
        let s = t.softplus(r, 1.0);
        let m = t.mean(s);
        let before = t.len();
        let _ = t.backward(m);
        assert_eq!(t.len(), before);
    }

    #[test]
    fn affine_gradients() {
        // y = sum(x w^T + b), x = [[1, 2]], w = [[3, 4], [5, 6]]
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(1, 2, vec![1.0, 2.0]));
        let w = t.leaf(Tensor::new(2, 2, vec![3.0, 4.0, 5.0, 6.0]));
        let b = t.leaf(Tensor::row_vector(vec![0.5, -0.5]));
        let y = t.affine(x, w, b);
        assert_eq!(t.value(y).data, vec![11.5, 16.5]);
        let s = t.sum(y);
        let g = t.backward(s);
        assert_eq!(g.wrt(x).unwrap().data, vec![8.0, 10.0]);
        assert_eq!(g.wrt(w).unwrap().data, vec![1.0, 2.0, 1.0, 2.0]);
        assert_eq!(g.wrt(b).unwrap().data, vec![1.0, 1.0]);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((sigmoid(-1000.0)).abs() < 1e-300);
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1.0));
        let y = t.leaf(Tensor::scalar(2.0));
        let z = t.scale(x, 3.0);
        let g = t.backward(z);
        assert_eq!(g.wrt(x).unwrap().item(), 3.0);
        assert!(g.wrt(y).is_none());
    }
}
