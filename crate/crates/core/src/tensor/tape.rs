use std::cell::RefCell;
use std::rc::Rc;

use super::{matmul_into, transpose, ParamId, ParamStore, Tensor, TensorError};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    /// Left-multiplication of consecutive row blocks of `x` by constant blocks.
    BlockMatMul {
        x: usize,
        blocks: Rc<Vec<f64>>,
        out_rows: usize,
        in_rows: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Min(usize, usize),
    AddRow(usize, usize),
    ExpandCols(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    SumCols(usize),
    ConcatCols(usize, usize),
    GatherCols(usize, Rc<Vec<usize>>),
    LogSoftmax(usize),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run gradient tape. Build one per forward pass and drop it after
/// [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, rows: usize, cols: usize, data: Vec<f64>, op: Op, needs_grad: bool) -> Var<'_> {
        debug_assert_eq!(rows * cols, data.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            rows,
            cols,
            data,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a constant. Constants never receive gradient.
    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_matrix(&self, rows: usize, cols: usize, data: Vec<f64>) -> Var<'_> {
        assert_eq!(rows * cols, data.len(), "constant data length");
        self.push(rows, cols, data, Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.push(1, 1, vec![v], Op::Leaf, false)
    }

    /// Records a trainable parameter. Its gradient is written back to the
    /// store by [`Tape::backward`].
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let t = store.get(id);
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Param(id), true)
    }

    /// Records a parameter's current value as a constant (target networks).
    pub fn frozen(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        self.constant(store.get(id))
    }

    /// Reverse-mode sweep from a scalar `loss`. Every parameter of `store`
    /// receives a gradient; parameters not reachable from `loss` get zeros.
    ///
    /// Panics if `loss` is not a single element.
    pub fn backward(&self, loss: Var<'_>, store: &mut ParamStore) {
        assert!(std::ptr::eq(loss.tape, self), "loss recorded on another tape");
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        assert_eq!(
            root.data.len(),
            1,
            "backward requires a scalar loss, got {}x{}",
            root.rows,
            root.cols
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        let mut param_grads: Vec<Option<Vec<f64>>> = vec![None; store.len()];

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let mut send = |target: usize, contrib: Vec<f64>| {
                if !nodes[target].needs_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => match &mut param_grads[pid.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(g.clone()),
                },
                Op::MatMul(a, b) => {
                    let (na, nb) = (&nodes[*a], &nodes[*b]);
                    let (m, k, n) = (na.rows, na.cols, nb.cols);
                    if na.needs_grad {
                        let bt = transpose(&nb.data, k, n);
                        let mut ga = vec![0.0; m * k];
                        matmul_into(&g, &bt, &mut ga, m, n, k);
                        send(*a, ga);
                    }
                    if nb.needs_grad {
                        let at = transpose(&na.data, m, k);
                        let mut gb = vec![0.0; k * n];
                        matmul_into(&at, &g, &mut gb, k, m, n);
                        send(*b, gb);
                    }
                }
                Op::BlockMatMul {
                    x,
                    blocks,
                    out_rows,
                    in_rows,
                } => {
                    let c = nodes[*x].cols;
                    let nblocks = nodes[*x].rows / in_rows;
                    let mut gx = vec![0.0; nodes[*x].data.len()];
                    let bs = out_rows * in_rows;
                    for bi in 0..nblocks {
                        let blk = &blocks[bi * bs..(bi + 1) * bs];
                        let bt = transpose(blk, *out_rows, *in_rows);
                        let gy = &g[bi * out_rows * c..(bi + 1) * out_rows * c];
                        let gxb = &mut gx[bi * in_rows * c..(bi + 1) * in_rows * c];
                        matmul_into(&bt, gy, gxb, *in_rows, *out_rows, c);
                    }
                    send(*x, gx);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.into_iter().map(|v| -v).collect());
                }
                Op::Mul(a, b) => {
                    let (da, db) = (&nodes[*a].data, &nodes[*b].data);
                    send(*a, g.iter().zip(db).map(|(g, y)| g * y).collect());
                    send(*b, g.iter().zip(da).map(|(g, x)| g * x).collect());
                }
                Op::Min(a, b) => {
                    let (da, db) = (&nodes[*a].data, &nodes[*b].data);
                    let pick_a: Vec<bool> = da.iter().zip(db).map(|(x, y)| x <= y).collect();
                    send(
                        *a,
                        g.iter()
                            .zip(&pick_a)
                            .map(|(g, &p)| if p { *g } else { 0.0 })
                            .collect(),
                    );
                    send(
                        *b,
                        g.iter()
                            .zip(&pick_a)
                            .map(|(g, &p)| if p { 0.0 } else { *g })
                            .collect(),
                    );
                }
                Op::AddRow(a, row) => {
                    let c = node.cols;
                    let mut gr = vec![0.0; c];
                    for chunk in g.chunks(c) {
                        gr.iter_mut().zip(chunk).for_each(|(s, v)| *s += v);
                    }
                    send(*a, g);
                    send(*row, gr);
                }
                Op::ExpandCols(a) => {
                    send(*a, g.chunks(node.cols).map(|r| r.iter().sum()).collect());
                }
                Op::Scale(a, k) => send(*a, g.into_iter().map(|v| v * k).collect()),
                Op::AddScalar(a) => send(*a, g),
                Op::Relu(a) => {
                    let da = &nodes[*a].data;
                    send(
                        *a,
                        g.iter()
                            .zip(da)
                            .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                            .collect(),
                    );
                }
                Op::Tanh(a) => send(
                    *a,
                    g.iter()
                        .zip(&node.data)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect(),
                ),
                Op::Exp(a) => send(*a, g.iter().zip(&node.data).map(|(g, y)| g * y).collect()),
                Op::Log(a) => send(
                    *a,
                    g.iter().zip(&nodes[*a].data).map(|(g, x)| g / x).collect(),
                ),
                Op::Square(a) => send(
                    *a,
                    g.iter()
                        .zip(&nodes[*a].data)
                        .map(|(g, x)| 2.0 * g * x)
                        .collect(),
                ),
                Op::Clamp(a, lo, hi) => send(
                    *a,
                    g.iter()
                        .zip(&nodes[*a].data)
                        .map(|(g, x)| if x > lo && x < hi { *g } else { 0.0 })
                        .collect(),
                ),
                Op::Sum(a) => send(*a, vec![g[0]; nodes[*a].data.len()]),
                Op::SumCols(a) => {
                    let c = nodes[*a].cols;
                    send(*a, g.iter().flat_map(|v| std::iter::repeat_n(*v, c)).collect());
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (nodes[*a].cols, nodes[*b].cols);
                    let mut ga = Vec::with_capacity(node.rows * ca);
                    let mut gb = Vec::with_capacity(node.rows * cb);
                    for row in g.chunks(ca + cb) {
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::GatherCols(a, idx) => {
                    let c = nodes[*a].cols;
                    let mut ga = vec![0.0; nodes[*a].data.len()];
                    for (r, (&j, gv)) in idx.iter().zip(&g).enumerate() {
                        ga[r * c + j] = *gv;
                    }
                    send(*a, ga);
                }
                Op::LogSoftmax(a) => {
                    let c = node.cols;
                    let mut ga = Vec::with_capacity(g.len());
                    for (gr, yr) in g.chunks(c).zip(node.data.chunks(c)) {
                        let s: f64 = gr.iter().sum();
                        ga.extend(gr.iter().zip(yr).map(|(gv, y)| gv - y.exp() * s));
                    }
                    send(*a, ga);
                }
            }
        }

        for (i, pg) in param_grads.into_iter().enumerate() {
            let t = store.get_mut(ParamId(i));
            let g = pg.unwrap_or_else(|| vec![0.0; t.len()]);
            t.set_grad(g);
        }
    }
}

// Shape checks make arithmetic fallible, so these are methods rather than operators.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn shape(self) -> (usize, usize) {
        let n = &self.tape.nodes.borrow()[self.id];
        (n.rows, n.cols)
    }

    pub fn rows(self) -> usize {
        self.shape().0
    }

    pub fn cols(self) -> usize {
        self.shape().1
    }

    pub fn requires_grad(self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    pub fn value(self) -> Tensor {
        let n = &self.tape.nodes.borrow()[self.id];
        Tensor::matrix(n.rows, n.cols, n.data.clone())
    }

    pub fn item(self) -> f64 {
        let n = &self.tape.nodes.borrow()[self.id];
        assert_eq!(n.data.len(), 1, "item() on {}x{}", n.rows, n.cols);
        n.data[0]
    }

    pub fn to_vec(self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].data.clone()
    }

    /// Same value, cut from the gradient flow.
    pub fn detach(self) -> Var<'t> {
        let (r, c) = self.shape();
        self.tape.push(r, c, self.to_vec(), Op::Leaf, false)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (rows, cols, data, ng) = {
            let n = &self.tape.nodes.borrow()[self.id];
            (n.rows, n.cols, n.data.iter().map(|&x| f(x)).collect(), n.needs_grad)
        };
        self.tape.push(rows, cols, data, op, ng)
    }

    fn same_shape(self, other: Var<'t>, op: &'static str) -> Result<(), TensorError> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(TensorError::Shape {
                op,
                lhs: vec![a.0, a.1],
                rhs: vec![b.0, b.1],
            });
        }
        Ok(())
    }

    fn zip(self, other: Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>, TensorError> {
        self.same_shape(other, name)?;
        let (rows, cols, data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
            (a.rows, a.cols, data, a.needs_grad || b.needs_grad)
        };
        Ok(self.tape.push(rows, cols, data, op, ng))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let ((m, k), (k2, n)) = (self.shape(), other.shape());
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let (data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let mut out = vec![0.0; m * n];
            matmul_into(&a.data, &b.data, &mut out, m, k, n);
            (out, a.needs_grad || b.needs_grad)
        };
        Ok(self.tape.push(m, n, data, Op::MatMul(self.id, other.id), ng))
    }

    /// Splits `self` into consecutive blocks of `in_rows` rows and left-multiplies
    /// block `b` by the constant `out_rows × in_rows` matrix `blocks[b]`.
    pub fn block_matmul(self, blocks: Rc<Vec<f64>>, out_rows: usize, in_rows: usize) -> Result<Var<'t>, TensorError> {
        let (rows, c) = self.shape();
        let bs = out_rows * in_rows;
        if in_rows == 0 || rows % in_rows != 0 || blocks.len() != (rows / in_rows) * bs {
            return Err(TensorError::Shape {
                op: "block_matmul",
                lhs: vec![rows, c],
                rhs: vec![blocks.len() / bs.max(1), out_rows, in_rows],
            });
        }
        let nblocks = rows / in_rows;
        let (data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            let mut out = vec![0.0; nblocks * out_rows * c];
            for b in 0..nblocks {
                matmul_into(
                    &blocks[b * bs..(b + 1) * bs],
                    &x.data[b * in_rows * c..(b + 1) * in_rows * c],
                    &mut out[b * out_rows * c..(b + 1) * out_rows * c],
                    out_rows,
                    in_rows,
                    c,
                );
            }
            (out, x.needs_grad)
        };
        let op = Op::BlockMatMul {
            x: self.id,
            blocks,
            out_rows,
            in_rows,
        };
        Ok(self.tape.push(nblocks * out_rows, c, data, op, ng))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.zip(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.zip(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.zip(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        self.zip(other, "minimum", Op::Min(self.id, other.id), f64::min)
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>, TensorError> {
        let ((r, c), (rr, rc)) = (self.shape(), row.shape());
        if rr != 1 || rc != c {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: vec![r, c],
                rhs: vec![rr, rc],
            });
        }
        let (data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[row.id]);
            let mut out = a.data.clone();
            for chunk in out.chunks_mut(c.max(1)) {
                chunk.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
            }
            (out, a.needs_grad || b.needs_grad)
        };
        Ok(self.tape.push(r, c, data, Op::AddRow(self.id, row.id), ng))
    }

    /// Repeats an `r × 1` column `n` times.
    pub fn expand_cols(self, n: usize) -> Result<Var<'t>, TensorError> {
        let (r, c) = self.shape();
        if c != 1 {
            return Err(TensorError::Shape {
                op: "expand_cols",
                lhs: vec![r, c],
                rhs: vec![r, 1],
            });
        }
        let (data, ng) = {
            let node = &self.tape.nodes.borrow()[self.id];
            let data = node
                .data
                .iter()
                .flat_map(|v| std::iter::repeat_n(*v, n))
                .collect();
            (data, node.needs_grad)
        };
        Ok(self.tape.push(r, n, data, Op::ExpandCols(self.id), ng))
    }

    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let ((r, ca), (r2, cb)) = (self.shape(), other.shape());
        if r != r2 {
            return Err(TensorError::Shape {
                op: "concat_cols",
                lhs: vec![r, ca],
                rhs: vec![r2, cb],
            });
        }
        let (data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let mut out = Vec::with_capacity(r * (ca + cb));
            for i in 0..r {
                out.extend_from_slice(&a.data[i * ca..(i + 1) * ca]);
                out.extend_from_slice(&b.data[i * cb..(i + 1) * cb]);
            }
            (out, a.needs_grad || b.needs_grad)
        };
        Ok(self
            .tape
            .push(r, ca + cb, data, Op::ConcatCols(self.id, other.id), ng))
    }

    /// Picks column `idx[r]` from each row `r`, giving an `r × 1` column.
    pub fn gather_cols(self, idx: &[usize]) -> Result<Var<'t>, TensorError> {
        let (r, c) = self.shape();
        if idx.len() != r || idx.iter().any(|&j| j >= c) {
            return Err(TensorError::Shape {
                op: "gather_cols",
                lhs: vec![r, c],
                rhs: vec![idx.len()],
            });
        }
        let (data, ng) = {
            let node = &self.tape.nodes.borrow()[self.id];
            let data = idx
                .iter()
                .enumerate()
                .map(|(i, &j)| node.data[i * c + j])
                .collect();
            (data, node.needs_grad)
        };
        let op = Op::GatherCols(self.id, Rc::new(idx.to_vec()));
        Ok(self.tape.push(r, 1, data, op, ng))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, k), |x| x * k)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, k: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + k)
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(self) -> Var<'t> {
        let (s, ng) = {
            let node = &self.tape.nodes.borrow()[self.id];
            (node.data.iter().sum(), node.needs_grad)
        };
        self.tape.push(1, 1, vec![s], Op::Sum(self.id), ng)
    }

    pub fn mean(self) -> Var<'t> {
        let (r, c) = self.shape();
        self.sum().scale(1.0 / (r * c).max(1) as f64)
    }

    /// Row sums: `r × c → r × 1`.
    pub fn sum_cols(self) -> Var<'t> {
        let (r, c, data, ng) = {
            let node = &self.tape.nodes.borrow()[self.id];
            let data = node.data.chunks(node.cols.max(1)).map(|row| row.iter().sum()).collect();
            (node.rows, node.cols, data, node.needs_grad)
        };
        let data = if c == 0 { vec![0.0; r] } else { data };
        self.tape.push(r, 1, data, Op::SumCols(self.id), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(self) -> Var<'t> {
        let (r, c, data, ng) = {
            let node = &self.tape.nodes.borrow()[self.id];
            let mut out = Vec::with_capacity(node.data.len());
            for row in node.data.chunks(node.cols) {
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
                out.extend(row.iter().map(|x| x - lse));
            }
            (node.rows, node.cols, out, node.needs_grad)
        };
        self.tape.push(r, c, data, Op::LogSoftmax(self.id), ng)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(self, values: &[f64]) -> Result<Var<'t>, TensorError> {
        let (r, c) = self.shape();
        if values.len() != r * c {
            return Err(TensorError::Shape {
                op: "mul_const",
                lhs: vec![r, c],
                rhs: vec![values.len()],
            });
        }
        let k = self.tape.constant_matrix(r, c, values.to_vec());
        self.mul(k)
    }

    /// Weighted sum `Σ wᵢ·xᵢ / Σ wᵢ` over all elements, 0 when the weights sum to 0.
    pub fn masked_mean(self, weights: &[f64]) -> Result<Var<'t>, TensorError> {
        let total: f64 = weights.iter().sum();
        let s = self.mul_const(weights)?.sum();
        Ok(if total > 0.0 { s.scale(1.0 / total) } else { s.scale(0.0) })
    }
}
