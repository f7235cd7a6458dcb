//! Tape-based reverse-mode automatic differentiation.
//!
//! Operations are evaluated eagerly and recorded in creation order, so the
//! node list is already topologically sorted: every node's inputs have
//! smaller indices. [`Tape::backward`] walks the list once in reverse and
//! returns a fresh [`Gradients`] map; the tape itself is never mutated by
//! a backward pass, so calling it twice yields identical results.

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, sigmoid, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var),
    AddScalar(Var),
    MulScalar(Var, S),
    AddRow(Var, Var),
    RepeatRows(Var),
    Act(Activation, Var),
    Logit(Var),
    RowSoftmax(Var),
    Sum(Var),
    SoftmaxXent { logits: Var, targets: Vec<Option<usize>>, weight: S, probs: Vec<S> },
    BinaryXent { logits: Var, targets: Vec<Option<S>>, weight: S },
    StraightThrough(Var),
    Surrogate { input: Var, grad: Vec<S>, pass_through: bool },
}

#[derive(Clone, Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<S = f32> {
    nodes: Vec<Node<S>>,
}

/// Gradients of a scalar root with respect to every node that requires them.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    shapes: Vec<(usize, usize)>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for `v`; zeros when the root does not depend on it.
    pub fn get(&self, v: Var) -> Tensor<S> {
        let (r, c) = self.shapes[v.0];
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::new(vec![r, c], g.clone()).expect("gradient shape"),
            None => Tensor::zeros(r, c),
        }
    }

    pub fn get_slice(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn check_finite<S: Scalar>(op: &'static str, data: &[S]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: &'static str, value: Tensor<S>, node_op: Op<S>, requires_grad: bool) -> Result<Var> {
        check_finite(op, value.data())?;
        let shape = vec![value.rows(), value.cols()];
        let value = Tensor::new(shape, value.into_data())?;
        self.nodes.push(Node { value, op: node_op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<S>) -> Result<Var> {
        let rg = t.requires_grad();
        self.push("leaf", t, Op::Leaf, rg)
    }

    pub fn param(&mut self, t: Tensor<S>) -> Result<Var> {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Result<Var> {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, k2, n) = (av.rows(), av.cols(), bv.rows(), bv.cols());
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![S::zero(); m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    pub fn elementwise(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::shape(
                "elementwise",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        if kind == BinaryKind::Div && bv.data().iter().any(|&d| d == S::zero()) {
            return Err(Error::DivideByZero { op: "div" });
        }
        let f: fn(S, S) -> S = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
        };
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(vec![av.rows(), av.cols()], data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("elementwise", out, Op::Binary(kind, a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Div)
    }

    pub fn add_scalar(&mut self, a: Var, s: S) -> Result<Var> {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push("add_scalar", out, Op::AddScalar(a), rg)
    }

    pub fn mul_scalar(&mut self, a: Var, s: S) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push("mul_scalar", out, Op::MulScalar(a, s), rg)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.mul_scalar(a, -S::one())?;
        self.add_scalar(neg, S::one())
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.cols();
        if bv.rows() != 1 || bv.cols() != n {
            return Err(Error::shape(
                "add_row",
                format!("row {:?} against matrix {:?}", bv.shape(), av.shape()),
            ));
        }
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bj) in row.iter_mut().zip(bv.data()) {
                *o = *o + bj;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push("add_row", out, Op::AddRow(a, b), rg)
    }

    /// Stacks `m` copies of the `1 × n` row `a`.
    pub fn repeat_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != 1 {
            return Err(Error::shape("repeat_rows", format!("expected a row, got {:?}", av.shape())));
        }
        let n = av.cols();
        let data: Vec<S> = (0..m).flat_map(|_| av.data().iter().copied()).collect();
        let out = Tensor::new(vec![m, n], data)?;
        let rg = self.rg(a);
        self.push("repeat_rows", out, Op::RepeatRows(a), rg)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let f: fn(S) -> S = match kind {
            Activation::Sigmoid => sigmoid,
            Activation::Tanh => |x: S| x.tanh(),
            Activation::Relu => |x: S| if x > S::zero() { x } else { S::zero() },
        };
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push("activation", out, Op::Act(kind, a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    /// `log(p / (1 - p))`, defined for `p` strictly inside (0, 1).
    pub fn logit(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.data().iter().any(|&p| p <= S::zero() || p >= S::one()) {
            return Err(Error::invalid("logit input outside (0, 1)"));
        }
        let out = av.map(crate::tensor::logit);
        let rg = self.rg(a);
        self.push("logit", out, Op::Logit(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = av.cols();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let rg = self.rg(a);
        self.push("softmax", out, Op::RowSoftmax(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push("sum", Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum(a)?;
        self.mul_scalar(s, S::one() / S::lit(n as f64))
    }

    /// `weight · Σ -log softmax(logits)[r, target_r]` over rows with a target.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[Option<usize>], weight: S) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, classes) = (lv.rows(), lv.cols());
        if targets.len() != rows {
            return Err(Error::shape("softmax_xent", format!("{} targets for {rows} rows", targets.len())));
        }
        let mut probs = vec![S::zero(); rows * classes];
        let mut loss = S::zero();
        for (r, target) in targets.iter().enumerate() {
            let row = lv.row_slice(r);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<S>().ln();
            for (c, &x) in row.iter().enumerate() {
                probs[r * classes + c] = (x - lse).exp();
            }
            if let Some(t) = *target {
                if t >= classes {
                    return Err(Error::ClassIndex { index: t, classes });
                }
                loss = loss + (lse - row[t]);
            }
        }
        let rg = self.rg(logits);
        let op = Op::SoftmaxXent { logits, targets: targets.to_vec(), weight, probs };
        self.push("softmax_xent", Tensor::scalar(loss * weight), op, rg)
    }

    /// `weight · Σ BCE(logit, target)` over cells with a target in {0, 1}.
    pub fn binary_xent(&mut self, logits: Var, targets: &[Option<S>], weight: S) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.len() {
            return Err(Error::shape("binary_xent", format!("{} targets for {} cells", targets.len(), lv.len())));
        }
        let mut loss = S::zero();
        for (&x, target) in lv.data().iter().zip(targets) {
            if let Some(y) = *target {
                if y != S::zero() && y != S::one() {
                    return Err(Error::invalid(format!("binary target {y} not in {{0, 1}}")));
                }
                loss = loss + x.max(S::zero()) - x * y + (S::one() + (-x.abs()).exp()).ln();
            }
        }
        let rg = self.rg(logits);
        let op = Op::BinaryXent { logits, targets: targets.to_vec(), weight };
        self.push("binary_xent", Tensor::scalar(loss * weight), op, rg)
    }

    /// Forward value `value`, backward identity to `input`.
    pub fn straight_through(&mut self, input: Var, value: Tensor<S>) -> Result<Var> {
        if !value.same_shape(self.value(input)) {
            return Err(Error::shape("straight_through", "value shape differs from input"));
        }
        let rg = self.rg(input);
        self.push("straight_through", value, Op::StraightThrough(input), rg)
    }

    /// Forward value `value`; backward adds the fixed estimate `grad` to
    /// `input`, plus the upstream gradient when `pass_through` is set.
    /// The estimate is injected even if the root never reaches this node.
    pub fn surrogate(&mut self, input: Var, value: Tensor<S>, grad: Vec<S>, pass_through: bool) -> Result<Var> {
        let iv = self.value(input);
        if !value.same_shape(iv) || grad.len() != iv.len() {
            return Err(Error::shape("surrogate", "value/grad shape differs from input"));
        }
        check_finite("surrogate", &grad)?;
        let rg = self.rg(input);
        self.push("surrogate", value, Op::Surrogate { input, grad, pass_through }, rg)
    }

    /// Replaces the fixed gradient estimate carried by a [`Tape::surrogate`] node.
    pub fn set_surrogate_grad(&mut self, v: Var, new_grad: Vec<S>) -> Result<()> {
        check_finite("surrogate", &new_grad)?;
        match &mut self.nodes[v.0].op {
            Op::Surrogate { grad, .. } if grad.len() == new_grad.len() => {
                *grad = new_grad;
                Ok(())
            }
            Op::Surrogate { .. } => Err(Error::shape("surrogate", "replacement gradient has the wrong size")),
            _ => Err(Error::invalid("node is not a surrogate")),
        }
    }

    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let shapes: Vec<(usize, usize)> =
            self.nodes.iter().map(|n| (n.value.rows(), n.value.cols())).collect();
        let mut grads: Vec<Option<Vec<S>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![S::one()]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = grads[i].take();
            if g.is_none() && !matches!(node.op, Op::Surrogate { .. }) {
                continue;
            }
            self.propagate(node, g.as_deref(), &mut grads);
            grads[i] = g;
        }

        // Leaves that require grad but were not reached get explicit zeros.
        for (i, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(vec![S::zero(); node.value.len()]);
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node<S>, g: Option<&[S]>, grads: &mut [Option<Vec<S>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let g = g.unwrap();
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    let da = slot(grads, *a, m * k);
                    for i in 0..m {
                        let g_row = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let b_row = &bv.data()[p * n..(p + 1) * n];
                            let dot: S = g_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
                            da[i * k + p] = da[i * k + p] + dot;
                        }
                    }
                }
                if self.rg(*b) {
                    let db = slot(grads, *b, k * n);
                    for i in 0..m {
                        let g_row = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av.data()[i * k + p];
                            if a_ip == S::zero() {
                                continue;
                            }
                            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                                *d = *d + a_ip * gv;
                            }
                        }
                    }
                }
            }
            Op::Binary(kind, a, b) => {
                let g = g.unwrap();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let len = g.len();
                if self.rg(*a) {
                    let da = slot(grads, *a, len);
                    for j in 0..len {
                        da[j] = da[j]
                            + match kind {
                                BinaryKind::Add | BinaryKind::Sub => g[j],
                                BinaryKind::Mul => g[j] * bv[j],
                                BinaryKind::Div => g[j] / bv[j],
                            };
                    }
                }
                if self.rg(*b) {
                    let db = slot(grads, *b, len);
                    for j in 0..len {
                        db[j] = db[j]
                            + match kind {
                                BinaryKind::Add => g[j],
                                BinaryKind::Sub => -g[j],
                                BinaryKind::Mul => g[j] * av[j],
                                BinaryKind::Div => -g[j] * av[j] / (bv[j] * bv[j]),
                            };
                    }
                }
            }
            Op::AddScalar(a) | Op::StraightThrough(a) => {
                let g = g.unwrap();
                add_into(slot(grads, *a, g.len()), g.iter().copied());
            }
            Op::MulScalar(a, s) => {
                let g = g.unwrap();
                add_into(slot(grads, *a, g.len()), g.iter().map(|&x| x * *s));
            }
            Op::AddRow(a, b) => {
                let g = g.unwrap();
                let n = self.value(*b).cols();
                if self.rg(*a) {
                    add_into(slot(grads, *a, g.len()), g.iter().copied());
                }
                if self.rg(*b) {
                    let db = slot(grads, *b, n);
                    for row in g.chunks(n) {
                        add_into(db, row.iter().copied());
                    }
                }
            }
            Op::RepeatRows(a) => {
                let g = g.unwrap();
                let n = self.value(*a).cols();
                let da = slot(grads, *a, n);
                for row in g.chunks(n) {
                    add_into(da, row.iter().copied());
                }
            }
            Op::Act(kind, a) => {
                let g = g.unwrap();
                let x = self.value(*a).data();
                let da = slot(grads, *a, g.len());
                for j in 0..g.len() {
                    let d = match kind {
                        Activation::Sigmoid => y[j] * (S::one() - y[j]),
                        Activation::Tanh => S::one() - y[j] * y[j],
                        Activation::Relu => {
                            if x[j] > S::zero() {
                                S::one()
                            } else {
                                S::zero()
                            }
                        }
                    };
                    da[j] = da[j] + g[j] * d;
                }
            }
            Op::Logit(a) => {
                let g = g.unwrap();
                let x = self.value(*a).data();
                let da = slot(grads, *a, g.len());
                for j in 0..g.len() {
                    da[j] = da[j] + g[j] / (x[j] * (S::one() - x[j]));
                }
            }
            Op::RowSoftmax(a) => {
                let g = g.unwrap();
                let n = node.value.cols();
                let da = slot(grads, *a, g.len());
                for (r, (g_row, y_row)) in g.chunks(n).zip(y.chunks(n)).enumerate() {
                    let dot: S = g_row.iter().zip(y_row).map(|(&gv, &yv)| gv * yv).sum();
                    for j in 0..n {
                        da[r * n + j] = da[r * n + j] + y_row[j] * (g_row[j] - dot);
                    }
                }
            }
            Op::Sum(a) => {
                let g0 = g.unwrap()[0];
                let len = self.value(*a).len();
                add_into(slot(grads, *a, len), std::iter::repeat_n(g0, len));
            }
            Op::SoftmaxXent { logits, targets, weight, probs } => {
                let scale = g.unwrap()[0] * *weight;
                let classes = self.value(*logits).cols();
                let dl = slot(grads, *logits, probs.len());
                for (r, target) in targets.iter().enumerate() {
                    if let Some(t) = *target {
                        for c in 0..classes {
                            let onehot = if c == t { S::one() } else { S::zero() };
                            let j = r * classes + c;
                            dl[j] = dl[j] + scale * (probs[j] - onehot);
                        }
                    }
                }
            }
            Op::BinaryXent { logits, targets, weight } => {
                let scale = g.unwrap()[0] * *weight;
                let x = self.value(*logits).data();
                let dl = slot(grads, *logits, x.len());
                for (j, target) in targets.iter().enumerate() {
                    if let Some(t) = *target {
                        dl[j] = dl[j] + scale * (sigmoid(x[j]) - t);
                    }
                }
            }
            Op::Surrogate { input, grad, pass_through } => {
                let da = slot(grads, *input, grad.len());
                add_into(da, grad.iter().copied());
                if let (true, Some(g)) = (*pass_through, g) {
                    add_into(da, g.iter().copied());
                }
            }
        }
    }
}

fn slot<S: Scalar>(grads: &mut [Option<Vec<S>>], v: Var, len: usize) -> &mut [S] {
    grads[v.0].get_or_insert_with(|| vec![S::zero(); len])
}

fn add_into<S: Scalar>(dst: &mut [S], src: impl Iterator<Item = S>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
