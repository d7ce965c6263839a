use super::{gemm, softmax_in_place, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulTransB(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, Var),
    ScaleConst(Var, f64),
    AddConst(Var),
    Exp(Var),
    Square(Var),
    Relu(Var),
    NormalizeRows {
        input: Var,
        // max(‖row‖, eps) per row, and whether the guard was active.
        norms: Vec<(f64, bool)>,
    },
    PairMean(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        mask_diagonal: bool,
        probs: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulTransB(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::Scale(a, b) => vec![*a, *b],
            Op::ScaleConst(a, _)
            | Op::AddConst(a)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::Relu(a)
            | Op::PairMean(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::NormalizeRows { input, .. } => vec![*input],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a differentiable computation.
///
/// A tape belongs to one forward/backward pass; build a new one per step.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_2d(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op,
            expected: vec![0, 0],
            actual: t.shape().to_vec(),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
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

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `a · b` with `a: n×k`, `b: k×m`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = check_2d(self.value(a), "matmul")?;
        let (k2, m) = check_2d(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                expected: vec![k, m],
                actual: vec![k2, m],
            });
        }
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), "matmul")
    }

    /// `a · bᵀ` with `a: n×k`, `b: m×k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = check_2d(self.value(a), "matmul_t")?;
        let (m, k2) = check_2d(self.value(b), "matmul_t")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_t",
                expected: vec![m, k],
                actual: vec![m, k2],
            });
        }
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, self.value(a).data(), false, self.value(b).data(), true, &mut out, 0.0);
        self.push(Tensor::new(vec![n, m], out)?, Op::MatMulTransB(a, b), "matmul_t")
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, name)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b), "mul")
    }

    /// Adds the vector `bias` to every row of the matrix `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, m) = check_2d(self.value(a), "add_row")?;
        let tb = self.value(bias);
        if tb.len() != m {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                expected: vec![m],
                actual: tb.shape().to_vec(),
            });
        }
        let mut t = self.value(a).clone();
        let b = tb.data().to_vec();
        for row in t.data_mut().chunks_mut(m) {
            row.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        }
        self.push(t, Op::AddRow(a, bias), "add_row")
    }

    /// Multiplies `a` by the scalar node `s`.
    pub fn scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "scale",
                expected: vec![],
                actual: ts.shape().to_vec(),
            });
        }
        let factor = ts.item();
        let t = self.value(a).map(|x| x * factor);
        self.push(t, Op::Scale(a, s), "scale")
    }

    pub fn scale_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::ScaleConst(a, c), "scale_const")
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::AddConst(a), "add_const")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a), "exp")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|x| x * x);
        self.push(t, Op::Square(a), "square")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push(t, Op::Relu(a), "relu")
    }

    /// Divides every row by `max(‖row‖₂, eps)`.
    pub fn l2_normalize(&mut self, a: Var, eps: f64) -> Result<Var> {
        let mut t = self.value(a).clone();
        let c = t.cols();
        let mut norms = Vec::with_capacity(t.rows());
        if c > 0 {
            for row in t.data_mut().chunks_mut(c) {
                let raw = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                let guarded = raw < eps;
                let n = raw.max(eps);
                row.iter_mut().for_each(|x| *x /= n);
                norms.push((n, guarded));
            }
        }
        self.push(t, Op::NormalizeRows { input: a, norms }, "l2_normalize")
    }

    /// Averages consecutive row pairs: row `i` of the output is the mean of
    /// input rows `2i` and `2i + 1`.
    pub fn pair_mean(&mut self, a: Var) -> Result<Var> {
        let (n, p) = check_2d(self.value(a), "pair_mean")?;
        if n % 2 != 0 {
            return Err(Error::ShapeMismatch {
                op: "pair_mean",
                expected: vec![n + 1, p],
                actual: vec![n, p],
            });
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; n / 2 * p];
        for i in 0..n / 2 {
            for j in 0..p {
                out[i * p + j] = 0.5 * (src[2 * i * p + j] + src[(2 * i + 1) * p + j]);
            }
        }
        self.push(Tensor::new(vec![n / 2, p], out)?, Op::PairMean(a), "pair_mean")
    }

    /// Mean over rows of `−log softmax(row)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.cross_entropy_impl(logits, labels, false)
    }

    /// Like [`Tape::cross_entropy`] on a square logit matrix, with the
    /// diagonal entries excluded from every row's softmax.
    pub fn cross_entropy_masked_diagonal(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.cross_entropy_impl(logits, labels, true)
    }

    fn cross_entropy_impl(&mut self, logits: Var, labels: &[usize], mask_diagonal: bool) -> Result<Var> {
        let (n, k) = check_2d(self.value(logits), "cross_entropy")?;
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                expected: vec![n],
                actual: vec![labels.len()],
            });
        }
        if mask_diagonal && n != k {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_masked_diagonal",
                expected: vec![n, n],
                actual: vec![n, k],
            });
        }
        if n == 0 {
            return Err(Error::invalid("cross_entropy over an empty batch"));
        }
        let min_classes = if mask_diagonal { 3 } else { 2 };
        if k < min_classes {
            return Err(Error::invalid("cross_entropy needs at least 2 classes"));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = 0.0;
        for (i, (row, &label)) in probs.chunks_mut(k).zip(labels).enumerate() {
            if label >= k || (mask_diagonal && label == i) {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
            if mask_diagonal {
                row[i] = f64::NEG_INFINITY;
            }
            let target = row[label];
            let lse = super::log_sum_exp(row);
            total += lse - target;
            softmax_in_place(row);
        }
        let loss = Tensor::scalar(total / n as f64);
        self.push(
            loss,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                mask_diagonal,
                probs,
            },
            "cross_entropy",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.is_empty() {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        let t = Tensor::scalar(ta.sum() / ta.len() as f64);
        self.push(t, Op::Mean(a), "mean")
    }

    pub fn backprop(&self, loss: Var) -> Result<Gradients> {
        backprop(self, loss)
    }
}

/// Per-node gradients from one reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; all zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn is_reachable(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Reverse sweep from a scalar `loss` over `tape`.
pub fn backprop(tape: &Tape, loss: Var) -> Result<Gradients> {
    let nodes = &tape.nodes;
    let loss_value = &nodes[loss.0].value;
    if loss_value.len() != 1 {
        return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
    }
    for (id, node) in nodes.iter().enumerate().take(loss.0 + 1) {
        if let Some(input) = node.op.inputs().into_iter().find(|v| v.0 >= id) {
            return Err(Error::TapeCycle { node: id, input: input.0 });
        }
    }

    let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
    grads[loss.0] = Some(vec![1.0]);

    for id in (0..=loss.0).rev() {
        let node = &nodes[id];
        if !node.requires_grad {
            continue;
        }
        let Some(g) = grads[id].take() else { continue };
        let val = |v: Var| &nodes[v.0].value;
        let needs = |v: Var| nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = (val(*a).rows(), val(*a).cols());
                let m = val(*b).cols();
                if needs(*a) {
                    let ga = accumulate(&mut grads, *a, n * k);
                    gemm(n, m, k, &g, false, val(*b).data(), true, ga, 1.0);
                }
                if needs(*b) {
                    let gb = accumulate(&mut grads, *b, k * m);
                    gemm(k, n, m, val(*a).data(), true, &g, false, gb, 1.0);
                }
            }
            Op::MatMulTransB(a, b) => {
                let (n, k) = (val(*a).rows(), val(*a).cols());
                let m = val(*b).rows();
                if needs(*a) {
                    let ga = accumulate(&mut grads, *a, n * k);
                    gemm(n, m, k, &g, false, val(*b).data(), false, ga, 1.0);
                }
                if needs(*b) {
                    let gb = accumulate(&mut grads, *b, m * k);
                    gemm(m, n, k, &g, true, val(*a).data(), false, gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        let gv = accumulate(&mut grads, v, g.len());
                        gv.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    let ga = accumulate(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                }
                if needs(*b) {
                    let gb = accumulate(&mut grads, *b, g.len());
                    gb.iter_mut().zip(&g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let other = val(*b).data();
                    let ga = accumulate(&mut grads, *a, g.len());
                    for ((x, y), o) in ga.iter_mut().zip(&g).zip(other) {
                        *x += y * o;
                    }
                }
                if needs(*b) {
                    let other = val(*a).data();
                    let gb = accumulate(&mut grads, *b, g.len());
                    for ((x, y), o) in gb.iter_mut().zip(&g).zip(other) {
                        *x += y * o;
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if needs(*a) {
                    let ga = accumulate(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                }
                if needs(*bias) {
                    let m = val(*bias).len();
                    let gb = accumulate(&mut grads, *bias, m);
                    for row in g.chunks(m) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Scale(a, s) => {
                let factor = val(*s).item();
                if needs(*a) {
                    let ga = accumulate(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y * factor);
                }
                if needs(*s) {
                    let dot: f64 = g.iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                    accumulate(&mut grads, *s, 1)[0] += dot;
                }
            }
            Op::ScaleConst(a, c) => {
                if needs(*a) {
                    let ga = accumulate(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y * c);
                }
            }
            Op::AddConst(a) => {
                if needs(*a) {
                    let ga = accumulate(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Exp(a) => {
                if needs(*a) {
                    let out = node.value.data();
                    let ga = accumulate(&mut grads, *a, g.len());
                    for ((x, y), o) in ga.iter_mut().zip(&g).zip(out) {
                        *x += y * o;
                    }
                }
            }
            Op::Square(a) => {
                if needs(*a) {
                    let input = val(*a).data();
                    let ga = accumulate(&mut grads, *a, g.len());
                    for ((x, y), i) in ga.iter_mut().zip(&g).zip(input) {
                        *x += 2.0 * y * i;
                    }
                }
            }
            Op::Relu(a) => {
                if needs(*a) {
                    let input = val(*a).data();
                    let ga = accumulate(&mut grads, *a, g.len());
                    for ((x, y), i) in ga.iter_mut().zip(&g).zip(input) {
                        if *i > 0.0 {
                            *x += y;
                        }
                    }
                }
            }
            Op::NormalizeRows { input, norms } => {
                if needs(*input) {
                    let out = node.value.data();
                    let c = node.value.cols();
                    let ga = accumulate(&mut grads, *input, g.len());
                    for (r, &(n, guarded)) in norms.iter().enumerate() {
                        let span = r * c..(r + 1) * c;
                        let (gr, yr) = (&g[span.clone()], &out[span.clone()]);
                        let gx = &mut ga[span];
                        if guarded {
                            gx.iter_mut().zip(gr).for_each(|(x, y)| *x += y / n);
                        } else {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for ((x, gy), y) in gx.iter_mut().zip(gr).zip(yr) {
                                *x += (gy - y * dot) / n;
                            }
                        }
                    }
                }
            }
            Op::PairMean(a) => {
                if needs(*a) {
                    let p = node.value.cols();
                    let ga = accumulate(&mut grads, *a, g.len() * 2);
                    for (i, row) in g.chunks(p).enumerate() {
                        for (j, y) in row.iter().enumerate() {
                            ga[2 * i * p + j] += 0.5 * y;
                            ga[(2 * i + 1) * p + j] += 0.5 * y;
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                mask_diagonal,
                probs,
            } => {
                if needs(*logits) {
                    let k = val(*logits).cols();
                    let n = labels.len();
                    let scale = g[0] / n as f64;
                    let gl = accumulate(&mut grads, *logits, n * k);
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..k {
                            if *mask_diagonal && i == j {
                                continue;
                            }
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            gl[i * k + j] += scale * (probs[i * k + j] - onehot);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    let len = val(*a).len();
                    let ga = accumulate(&mut grads, *a, len);
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                if needs(*a) {
                    let len = val(*a).len();
                    let share = g[0] / len as f64;
                    let ga = accumulate(&mut grads, *a, len);
                    ga.iter_mut().for_each(|x| *x += share);
                }
            }
        }
        // Leaves keep their gradient; intermediates are consumed.
        if matches!(node.op, Op::Leaf) {
            grads[id] = Some(g);
        }
    }

    // Gradients are only meaningful for leaves; drop intermediate buffers.
    for (id, node) in nodes.iter().enumerate() {
        if !matches!(node.op, Op::Leaf) || !node.requires_grad {
            grads[id] = None;
        }
    }
    Ok(Gradients {
        grads,
        shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
    })
}
