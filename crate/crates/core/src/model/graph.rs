//! A reverse-mode autodiff tape over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep
//! visits every node after all of its consumers. Parameter nodes borrow
//! their values from the parameter store instead of copying them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

enum Op {
    Input,
    Param(usize),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Softmax(Var),
    /// Per-row normalization to zero mean and unit variance; keeps 1/std.
    Normalize {
        x: Var,
        inv_std: Vec<f64>,
    },
    MulRow(Var, Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    /// `gate * gen[vocab_id] + (1 - gate) * sum(attn[positions])`.
    CopyMix {
        gen: Var,
        attn: Var,
        gate: Var,
        vocab_id: Option<usize>,
        positions: Vec<usize>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

pub struct Graph<'p> {
    params: &'p [Tensor],
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
    rng: Option<ChaCha8Rng>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Graph {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
            rng: None,
        }
    }

    /// Enables dropout, drawing masks from `rng`.
    pub fn with_dropout_rng(mut self, rng: ChaCha8Rng) -> Self {
        self.rng = Some(rng);
        self
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.params[id],
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let v = self.push(Op::Param(id), Tensor::zeros(0, 0));
        self.param_vars[id] = Some(v);
        v
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            out,
        )
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| f(*p, *q))
            .collect();
        Tensor::from_vec(x.rows(), x.cols(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value(a);
        Tensor::from_vec(x.rows(), x.cols(), x.data().iter().map(|p| f(*p)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_map(a, b, |p, q| p + q);
        self.push(Op::Add(a, b), v)
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        let row = self.value(b);
        assert_eq!((1, v.cols()), row.shape(), "add_row shape mismatch");
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(row.data()) {
                *x += y;
            }
        }
        self.push(Op::AddRow(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_map(a, b, |p, q| p * q);
        self.push(Op::Mul(a, b), v)
    }

    /// Multiplies every row of `a` elementwise by the `1 x n` row `b`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        let row = self.value(b);
        assert_eq!((1, v.cols()), row.shape(), "mul_row shape mismatch");
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(row.data()) {
                *x *= y;
            }
        }
        self.push(Op::MulRow(a, b), v)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.map(a, |p| p * s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_bt(self.value(b));
        self.push(Op::MatMulBt(a, b), v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    /// Row-wise softmax. Columns flagged in `masked` get probability 0.
    pub fn softmax(&mut self, a: Var, masked: Option<&[bool]>) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let keep = |c: usize| masked.is_none_or(|m| !m[c]);
            let max = (0..row.len())
                .filter(|&c| keep(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            let o = out.row_mut(r);
            let mut sum = 0.0;
            for c in 0..row.len() {
                if keep(c) {
                    o[c] = (row[c] - max).exp();
                    sum += o[c];
                }
            }
            if sum > 0.0 {
                o.iter_mut().for_each(|p| *p /= sum);
            }
        }
        self.push(Op::Softmax(a), out)
    }

    pub fn normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.cols() as f64;
        let mut out = Tensor::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in out.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push(Op::Normalize { x: a, inv_std }, out)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| {
            0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
        });
        self.push(Op::Gelu(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map(a, sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::ln);
        self.push(Op::Ln(a), v)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice_rows(start, len);
        self.push(Op::SliceRows { x: a, start }, v)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "column slice out of range");
        let mut out = Tensor::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r)
                .copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(Op::SliceCols { x: a, start }, out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.rows(), rows, "concat row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + x.cols()].copy_from_slice(x.row(r));
            }
            offset += x.cols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(1, x.cols());
        for r in 0..x.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        out.scale_assign(1.0 / x.rows() as f64);
        self.push(Op::MeanRows(a), out)
    }

    /// Inverted dropout; the identity when no RNG is attached or `rate` is 0.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if rate <= 0.0 {
            return a;
        }
        let n = self.value(a).len();
        let Some(rng) = self.rng.as_mut() else {
            return a;
        };
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let x = self.value(a);
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let v = Tensor::from_vec(x.rows(), x.cols(), data);
        self.push(Op::Dropout { x: a, mask }, v)
    }

    pub fn copy_mix(
        &mut self,
        gen: Var,
        attn: Var,
        gate: Var,
        vocab_id: Option<usize>,
        positions: &[usize],
    ) -> Var {
        let g = self.value(gate).get(0, 0);
        let from_gen = vocab_id.map_or(0.0, |v| self.value(gen).get(0, v));
        let a = self.value(attn);
        let from_copy: f64 = positions.iter().map(|&p| a.get(0, p)).sum();
        let p = g * from_gen + (1.0 - g) * from_copy;
        self.push(
            Op::CopyMix {
                gen,
                attn,
                gate,
                vocab_id,
                positions: positions.to_vec(),
            },
            Tensor::from_vec(1, 1, vec![p]),
        )
    }

    /// Back-propagates from the scalar `loss`, adding parameter gradients
    /// into `grads` (indexed like the parameter store).
    pub fn backward(&self, loss: Var, grads: &mut [Tensor]) {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar");
        let mut g: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Tensor::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads[*id].add_assign(&dy),
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let acc = slot(&mut g, *table, t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (a, d) in acc.row_mut(id).iter_mut().zip(dy.row(r)) {
                            *a += d;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut g, *a, &dy);
                    accumulate(&mut g, *b, &dy);
                }
                Op::AddRow(a, b) => {
                    accumulate(&mut g, *a, &dy);
                    let acc = slot(&mut g, *b, 1, dy.cols());
                    for r in 0..dy.rows() {
                        for (s, d) in acc.data_mut().iter_mut().zip(dy.row(r)) {
                            *s += d;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da = elementwise(&dy, vb, |d, v| d * v);
                    let db = elementwise(&dy, va, |d, v| d * v);
                    accumulate(&mut g, *a, &da);
                    accumulate(&mut g, *b, &db);
                }
                Op::MulRow(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut da = dy.clone();
                    let mut db = Tensor::zeros(1, dy.cols());
                    for r in 0..dy.rows() {
                        for c in 0..dy.cols() {
                            da.set(r, c, dy.get(r, c) * vb.get(0, c));
                            db.data_mut()[c] += dy.get(r, c) * va.get(r, c);
                        }
                    }
                    accumulate(&mut g, *a, &da);
                    accumulate(&mut g, *b, &db);
                }
                Op::Scale(a, s) => {
                    let da = map_t(&dy, |d| d * s);
                    accumulate(&mut g, *a, &da);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da = dy.matmul_bt(vb);
                    let db = va.matmul_at(&dy);
                    accumulate(&mut g, *a, &da);
                    accumulate(&mut g, *b, &db);
                }
                Op::MatMulBt(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da = dy.matmul(vb);
                    let db = dy.matmul_at(va);
                    accumulate(&mut g, *a, &da);
                    accumulate(&mut g, *b, &db);
                }
                Op::Transpose(a) => accumulate(&mut g, *a, &dy.transpose()),
                Op::Softmax(a) => {
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, dr) = (y.row(r), dy.row(r));
                        let dot: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                        for (o, (p, d)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(dr)) {
                            *o = p * (d - dot);
                        }
                    }
                    accumulate(&mut g, *a, &dx);
                }
                Op::Normalize { x, inv_std } => {
                    let n = y.cols() as f64;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for (r, &s) in inv_std.iter().enumerate() {
                        let (xh, dr) = (y.row(r), dy.row(r));
                        let sum_d: f64 = dr.iter().sum();
                        let sum_dx: f64 = dr.iter().zip(xh).map(|(d, h)| d * h).sum();
                        for (o, (d, h)) in dx.row_mut(r).iter_mut().zip(dr.iter().zip(xh)) {
                            *o = s / n * (n * d - sum_d - h * sum_dx);
                        }
                    }
                    accumulate(&mut g, *x, &dx);
                }
                Op::Gelu(a) => {
                    let da = elementwise(&dy, self.value(*a), |d, x| {
                        let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                        d * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    });
                    accumulate(&mut g, *a, &da);
                }
                Op::Tanh(a) => {
                    let da = elementwise(&dy, y, |d, t| d * (1.0 - t * t));
                    accumulate(&mut g, *a, &da);
                }
                Op::Sigmoid(a) => {
                    let da = elementwise(&dy, y, |d, s| d * s * (1.0 - s));
                    accumulate(&mut g, *a, &da);
                }
                Op::Ln(a) => {
                    let da = elementwise(&dy, self.value(*a), |d, x| d / x);
                    accumulate(&mut g, *a, &da);
                }
                Op::SliceRows { x, start } => {
                    let src = self.value(*x);
                    let acc = slot(&mut g, *x, src.rows(), src.cols());
                    for r in 0..dy.rows() {
                        for (a, d) in acc.row_mut(start + r).iter_mut().zip(dy.row(r)) {
                            *a += d;
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let src = self.value(*x);
                    let acc = slot(&mut g, *x, src.rows(), src.cols());
                    for r in 0..dy.rows() {
                        let row = &mut acc.row_mut(r)[*start..start + dy.cols()];
                        for (a, d) in row.iter_mut().zip(dy.row(r)) {
                            *a += d;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let acc = slot(&mut g, p, dy.rows(), cols);
                        for r in 0..dy.rows() {
                            for (a, d) in acc
                                .row_mut(r)
                                .iter_mut()
                                .zip(&dy.row(r)[offset..offset + cols])
                            {
                                *a += d;
                            }
                        }
                        offset += cols;
                    }
                }
                Op::MeanRows(a) => {
                    let src = self.value(*a);
                    let inv = 1.0 / src.rows() as f64;
                    let acc = slot(&mut g, *a, src.rows(), src.cols());
                    for r in 0..src.rows() {
                        for (s, d) in acc.row_mut(r).iter_mut().zip(dy.data()) {
                            *s += d * inv;
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let data = dy.data().iter().zip(mask).map(|(d, m)| d * m).collect();
                    accumulate(&mut g, *x, &Tensor::from_vec(dy.rows(), dy.cols(), data));
                }
                Op::CopyMix {
                    gen,
                    attn,
                    gate,
                    vocab_id,
                    positions,
                } => {
                    let d = dy.get(0, 0);
                    let gv = self.value(*gate).get(0, 0);
                    let from_gen = vocab_id.map_or(0.0, |v| self.value(*gen).get(0, v));
                    let a = self.value(*attn);
                    let from_copy: f64 = positions.iter().map(|&p| a.get(0, p)).sum();
                    if let Some(v) = vocab_id {
                        let cols = self.value(*gen).cols();
                        let acc = slot(&mut g, *gen, 1, cols);
                        acc.data_mut()[*v] += d * gv;
                    }
                    let cols = a.cols();
                    let acc = slot(&mut g, *attn, 1, cols);
                    for &p in positions {
                        acc.data_mut()[p] += d * (1.0 - gv);
                    }
                    let acc = slot(&mut g, *gate, 1, 1);
                    acc.data_mut()[0] += d * (from_gen - from_copy);
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn slot(g: &mut [Option<Tensor>], v: Var, rows: usize, cols: usize) -> &mut Tensor {
    g[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}

fn accumulate(g: &mut [Option<Tensor>], v: Var, d: &Tensor) {
    match &mut g[v.0] {
        Some(t) => t.add_assign(d),
        none => *none = Some(d.clone()),
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| f(*x, *y))
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn map_t(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_vec(a.rows(), a.cols(), a.data().iter().map(|x| f(*x)).collect())
}
