//! Reverse-mode autodiff over a Wengert tape.
//!
//! Operations are recorded batch-level (a node holds a whole `(N, d)`
//! tensor, not a scalar), which keeps tapes short even when
//! differentiating through hundreds of unrolled solver steps. Nodes are
//! append-only, so the tape is topologically ordered by construction and
//! the backward pass is a single reverse sweep.
//!
//! Parameters are snapshotted from a [`ParamStore`] when recorded; build
//! a fresh tape after every optimizer update.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param {
        name: String,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Neg(NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `x (N,i) · w (o,i)ᵀ + b (o)` → `(N,o)`.
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    ConcatCols(NodeId, NodeId),
    /// Per-row matrix–vector product: `m (N, p·q)` seen as `N` matrices
    /// `(p,q)` applied to the rows of `v (N, q)` → `(N, p)`.
    RowMatVec {
        m: NodeId,
        v: NodeId,
    },
    Sum(NodeId),
    Mean(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.push(Op::Const, Tensor::scalar(value))
    }

    /// Record a parameter leaf; the current store value is snapshotted.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let value = store.value(name)?.clone();
        Ok(self.push(
            Op::Param {
                name: name.to_string(),
            },
            value,
        ))
    }

    fn binary_same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(Error::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data().iter().map(|x| -x).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).unwrap();
        self.push(Op::Neg(a), value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let data = self.value(a).data().iter().map(|x| factor * x).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).unwrap();
        self.push(Op::Scale(a, factor), value)
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.shape().len() != 2 || wv.shape().len() != 2 {
            return Err(Error::Dimension("affine expects 2-d x and w".into()));
        }
        let (n, i) = (xv.rows(), xv.cols());
        let (o, wi) = (wv.rows(), wv.cols());
        if wi != i || bv.len() != o {
            return Err(Error::Dimension(format!(
                "affine: x {:?}, w {:?}, b {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let mut out = vec![0.0; n * o];
        for r in 0..n {
            let xrow = xv.row(r);
            let orow = &mut out[r * o..(r + 1) * o];
            for (c, oc) in orow.iter_mut().enumerate() {
                let wrow = wv.row(c);
                let mut acc = 0.0;
                for k in 0..i {
                    acc += xrow[k] * wrow[k];
                }
                *oc = acc + bv.data()[c];
            }
        }
        let value = Tensor::new(vec![n, o], out)?;
        Ok(self.push(Op::Affine { x, w, b }, value))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).unwrap();
        self.push(Op::Tanh(a), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).unwrap();
        self.push(Op::Sigmoid(a), value)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        // ln(1 + e^x), computed stably for large |x|.
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > 30.0 { x } else { (1.0 + x.exp()).ln() })
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).unwrap();
        self.push(Op::Softplus(a), value)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.rows() != bv.rows() {
            return Err(Error::Dimension(format!(
                "concat_cols: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (n, p, q) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let value = Tensor::new(vec![n, p + q], data)?;
        Ok(self.push(Op::ConcatCols(a, b), value))
    }

    /// `m (N, p·q)` applied row-wise as `(p,q)` matrices to `v (N, q)`.
    pub fn row_matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (mv, vv) = (self.value(m), self.value(v));
        if mv.shape().len() != 2 || vv.shape().len() != 2 || mv.rows() != vv.rows() {
            return Err(Error::Dimension(format!(
                "row_matvec: {:?} vs {:?}",
                mv.shape(),
                vv.shape()
            )));
        }
        let (n, q) = (vv.rows(), vv.cols());
        if q == 0 || mv.cols() % q != 0 {
            return Err(Error::Dimension(format!(
                "row_matvec: {} columns not divisible by q={}",
                mv.cols(),
                q
            )));
        }
        let p = mv.cols() / q;
        let mut data = vec![0.0; n * p];
        for r in 0..n {
            let mrow = mv.row(r);
            let vrow = vv.row(r);
            let orow = &mut data[r * p..(r + 1) * p];
            for (a, oa) in orow.iter_mut().enumerate() {
                let mut acc = 0.0;
                for b in 0..q {
                    acc += mrow[a * q + b] * vrow[b];
                }
                *oa = acc;
            }
        }
        let value = Tensor::new(vec![n, p], data)?;
        Ok(self.push(Op::RowMatVec { m, v }, value))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Mean(a), Tensor::scalar(s / n))
    }

    /// Reverse sweep from a scalar root; parameter gradients accumulate
    /// into `store`. Gradients of nodes recorded after `root` are zero by
    /// construction and the sweep never visits them.
    pub fn backward(&mut self, root: NodeId, store: &mut ParamStore) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param { name } => {
                    store.add_grad(name, &g)?;
                }
                Op::Add(a, b) => {
                    accum(&mut grads, *a, self.value(*a).shape(), |d| {
                        add_into(d, g.data(), 1.0)
                    });
                    accum(&mut grads, *b, self.value(*b).shape(), |d| {
                        add_into(d, g.data(), 1.0)
                    });
                }
                Op::Sub(a, b) => {
                    accum(&mut grads, *a, self.value(*a).shape(), |d| {
                        add_into(d, g.data(), 1.0)
                    });
                    accum(&mut grads, *b, self.value(*b).shape(), |d| {
                        add_into(d, g.data(), -1.0)
                    });
                }
                Op::Neg(a) => {
                    accum(&mut grads, *a, self.value(*a).shape(), |d| {
                        add_into(d, g.data(), -1.0)
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    accum(&mut grads, *a, self.value(*a).shape(), |d| {
                        for ((di, gi), bi) in d.iter_mut().zip(g.data()).zip(bv) {
                            *di += gi * bi;
                        }
                    });
                    accum(&mut grads, *b, self.value(*b).shape(), |d| {
                        for ((di, gi), ai) in d.iter_mut().zip(g.data()).zip(av) {
                            *di += gi * ai;
                        }
                    });
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    accum(&mut grads, *a, self.value(*a).shape(), |d| {
                        add_into(d, g.data(), f)
                    });
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, icols) = (xv.rows(), xv.cols());
                    let o = wv.rows();
                    // dx[n,i] += Σ_o g[n,o]·w[o,i]
                    accum(&mut grads, *x, xv.shape(), |d| {
                        for r in 0..n {
                            let grow = &g.data()[r * o..(r + 1) * o];
                            let drow = &mut d[r * icols..(r + 1) * icols];
                            for (c, &gc) in grow.iter().enumerate() {
                                if gc != 0.0 {
                                    let wrow = wv.row(c);
                                    for k in 0..icols {
                                        drow[k] += gc * wrow[k];
                                    }
                                }
                            }
                        }
                    });
                    // dw[o,i] += Σ_n g[n,o]·x[n,i]
                    accum(&mut grads, *w, wv.shape(), |d| {
                        for r in 0..n {
                            let grow = &g.data()[r * o..(r + 1) * o];
                            let xrow = xv.row(r);
                            for (c, &gc) in grow.iter().enumerate() {
                                if gc != 0.0 {
                                    let drow = &mut d[c * icols..(c + 1) * icols];
                                    for k in 0..icols {
                                        drow[k] += gc * xrow[k];
                                    }
                                }
                            }
                        }
                    });
                    // db[o] += Σ_n g[n,o]
                    accum(&mut grads, *b, self.value(*b).shape(), |d| {
                        for r in 0..n {
                            let grow = &g.data()[r * o..(r + 1) * o];
                            for (c, &gc) in grow.iter().enumerate() {
                                d[c] += gc;
                            }
                        }
                    });
                }
                Op::Tanh(a) => {
                    let yv = self.nodes[i].value.data();
                    accum(&mut grads, *a, self.value(*a).shape(), |d| {
                        for ((di, gi), yi) in d.iter_mut().zip(g.data()).zip(yv) {
                            *di += gi * (1.0 - yi * yi);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let yv = self.nodes[i].value.data();
                    accum(&mut grads, *a, self.value(*a).shape(), |d| {
                        for ((di, gi), yi) in d.iter_mut().zip(g.data()).zip(yv) {
                            *di += gi * yi * (1.0 - yi);
                        }
                    });
                }
                Op::Softplus(a) => {
                    let xv = self.value(*a).data();
                    accum(&mut grads, *a, self.value(*a).shape(), |d| {
                        for ((di, gi), xi) in d.iter_mut().zip(g.data()).zip(xv) {
                            *di += gi / (1.0 + (-xi).exp());
                        }
                    });
                }
                Op::ConcatCols(a, b) => {
                    let (p, q) = (self.value(*a).cols(), self.value(*b).cols());
                    let n = self.value(*a).rows();
                    accum(&mut grads, *a, self.value(*a).shape(), |d| {
                        for r in 0..n {
                            let grow = &g.data()[r * (p + q)..r * (p + q) + p];
                            let drow = &mut d[r * p..(r + 1) * p];
                            for (dk, gk) in drow.iter_mut().zip(grow) {
                                *dk += gk;
                            }
                        }
                    });
                    accum(&mut grads, *b, self.value(*b).shape(), |d| {
                        for r in 0..n {
                            let grow = &g.data()[r * (p + q) + p..(r + 1) * (p + q)];
                            let drow = &mut d[r * q..(r + 1) * q];
                            for (dk, gk) in drow.iter_mut().zip(grow) {
                                *dk += gk;
                            }
                        }
                    });
                }
                Op::RowMatVec { m, v } => {
                    let (mv, vv) = (self.value(*m), self.value(*v));
                    let (n, q) = (vv.rows(), vv.cols());
                    let p = mv.cols() / q;
                    accum(&mut grads, *m, mv.shape(), |d| {
                        for r in 0..n {
                            let grow = &g.data()[r * p..(r + 1) * p];
                            let vrow = vv.row(r);
                            let drow = &mut d[r * p * q..(r + 1) * p * q];
                            for (a, &ga) in grow.iter().enumerate() {
                                if ga != 0.0 {
                                    for (b, &vb) in vrow.iter().enumerate() {
                                        drow[a * q + b] += ga * vb;
                                    }
                                }
                            }
                        }
                    });
                    accum(&mut grads, *v, vv.shape(), |d| {
                        for r in 0..n {
                            let grow = &g.data()[r * p..(r + 1) * p];
                            let mrow = mv.row(r);
                            let drow = &mut d[r * q..(r + 1) * q];
                            for (a, &ga) in grow.iter().enumerate() {
                                if ga != 0.0 {
                                    for (b, db) in drow.iter_mut().enumerate() {
                                        *db += ga * mrow[a * q + b];
                                    }
                                }
                            }
                        }
                    });
                }
                Op::Sum(a) => {
                    let gs = g.item();
                    accum(&mut grads, *a, self.value(*a).shape(), |d| {
                        for di in d.iter_mut() {
                            *di += gs;
                        }
                    });
                }
                Op::Mean(a) => {
                    let gs = g.item() / self.value(*a).len() as f64;
                    accum(&mut grads, *a, self.value(*a).shape(), |d| {
                        for di in d.iter_mut() {
                            *di += gs;
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

fn accum<F: FnOnce(&mut [f64])>(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], f: F) {
    let slot = &mut grads[id.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(shape));
    }
    f(slot.as_mut().unwrap().data_mut());
}

fn add_into(dst: &mut [f64], src: &[f64], factor: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += factor * s;
    }
}
