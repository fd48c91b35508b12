//! Reverse-mode autodiff over [`Mat`] values.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters enter as
//! leaves tagged with their [`ParamId`]; after [`Graph::backward`] their
//! gradients are pulled out with [`Graph::param_grads`]. Attention, layer
//! norm and the masked cross-entropy are fused ops with hand-written
//! backward rules, all of which are covered by finite-difference tests.

use crate::params::ParamId;
use crate::tensor::{self, dot, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnMask {
    /// Every query sees every key.
    Full,
    /// Query `i` sees keys `0..=i`.
    Causal,
    /// Rows are split into consecutive blocks of this size; queries only see
    /// keys inside their own block.
    Block(usize),
}

impl AttnMask {
    fn key_range(self, i: usize, sk: usize) -> (usize, usize) {
        match self {
            AttnMask::Full => (0, sk),
            AttnMask::Causal => (0, i + 1),
            AttnMask::Block(n) => {
                let lo = (i / n) * n;
                (lo, (lo + n).min(sk))
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulScalar(Var, Var),
    ScaleConst(Var, f64),
    Tanh(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: AttnMask,
        probs: Vec<Mat>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Mat,
        count: usize,
    },
    WeightedSum {
        x: Var,
        weights: Mat,
    },
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Mat>>,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn grad_slot_of<'a>(nodes: &[Node], grads: &'a mut [Option<Mat>], v: Var) -> &'a mut Mat {
    let (r, c) = nodes[v.0].value.shape();
    grads[v.0].get_or_insert_with(|| Mat::zeros(r, c))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar node");
        m.data[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input: no gradient flows into it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf(None), false)
    }

    /// A differentiable input that is not a stored parameter (used by tests).
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf(None), true)
    }

    pub fn param(&mut self, id: ParamId, value: Mat, trainable: bool) -> Var {
        self.push(value, Op::Leaf(Some(id)), trainable)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = tensor::matmul(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = tensor::matmul_nt(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMulNT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    /// Broadcast-add a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows, 1, "add_row expects a single row");
        assert_eq!(r.cols, self.value(a).cols);
        let mut v = self.value(a).clone();
        let cols = v.cols;
        for i in 0..v.rows {
            for (x, b) in v.data[i * cols..(i + 1) * cols].iter_mut().zip(&r.data) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(v, Op::AddRow(a, row), rg)
    }

    /// Multiply every entry of `a` by the `1×1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let mut v = self.value(a).clone();
        v.scale(sv);
        let rg = self.rg(a) || self.rg(s);
        self.push(v, Op::MulScalar(a, s), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut v = self.value(a).clone();
        v.scale(c);
        let rg = self.rg(a);
        self.push(v, Op::ScaleConst(a, c), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let v = Mat::from_vec(src.rows, src.cols, src.data.iter().map(|x| x.tanh()).collect());
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let v = Mat::from_vec(src.rows, src.cols, src.data.iter().map(|&x| gelu(x)).collect());
        let rg = self.rg(a);
        self.push(v, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalization followed by the affine `gamma`, `beta` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        assert_eq!(g.len(), cols);
        assert_eq!(b.len(), cols);
        let mut xhat = Mat::zeros(rows, cols);
        let mut out = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.data[r * cols + c] = h;
                out.data[r * cols + c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Multi-head scaled dot-product attention. `q: Sq×D`, `k, v: Sk×D`.
    /// Heads split the feature dimension evenly.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: AttnMask) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (sq, d) = qv.shape();
        let sk = kv.rows;
        assert_eq!(kv.cols, d, "key width");
        assert_eq!(vv.shape(), (sk, d), "value shape");
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        match mask {
            AttnMask::Causal => assert_eq!(sq, sk, "causal attention needs square scores"),
            AttnMask::Block(n) => {
                assert_eq!(sq, sk, "block attention needs square scores");
                assert!(n > 0 && sk % n == 0, "block size {n} does not tile {sk} rows");
            }
            AttnMask::Full => {}
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros(sq, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let off = h * dh;
            let mut p = Mat::zeros(sq, sk);
            for i in 0..sq {
                let qi = &qv.row(i)[off..off + dh];
                let (lo, hi) = mask.key_range(i, sk);
                let prow = p.row_mut(i);
                for j in lo..hi {
                    prow[j] = dot(qi, &kv.row(j)[off..off + dh]) * scale;
                }
                tensor::softmax_in_place(&mut prow[lo..hi]);
                let orow = &mut out.data[i * d + off..i * d + off + dh];
                for j in lo..hi {
                    let pij = prow[j];
                    for (o, x) in orow.iter_mut().zip(&vv.row(j)[off..off + dh]) {
                        *o += pij * x;
                    }
                }
            }
            probs.push(p);
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask,
                probs,
            },
            rg,
        )
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros(ids.len(), t.cols);
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < t.rows, "gather index {id} out of range {}", t.rows);
            out.row_mut(i).copy_from_slice(t.row(id));
        }
        let rg = self.rg(table);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice_rows(start, len);
        let rg = self.rg(x);
        self.push(v, Op::SliceRows { x, start }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Mean cross-entropy over rows with a target; rows with `None` are skipped.
    /// Panics if no row carries a target; callers check that first.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len(), "one target slot per logit row");
        let count = targets.iter().filter(|t| t.is_some()).count();
        assert!(count > 0, "cross_entropy without supervised rows");
        let mut probs = Mat::zeros(lv.rows, lv.cols);
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                assert!(t < lv.cols, "target {t} out of range");
                let prow = probs.row_mut(r);
                prow.copy_from_slice(lv.row(r));
                let max = prow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + prow.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - prow[t];
                for p in prow.iter_mut() {
                    *p = (*p - lse).exp();
                }
            }
        }
        let rg = self.rg(logits);
        self.push(
            Mat::scalar(total / count as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        )
    }

    /// `Σ x ⊙ weights`, a scalar probe used by gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Mat) -> Var {
        assert_eq!(self.value(x).shape(), weights.shape());
        let s = dot(&self.value(x).data, &weights.data);
        let rg = self.rg(x);
        self.push(Mat::scalar(s), Op::WeightedSum { x, weights }, rg)
    }

    fn acc(&mut self, v: Var, g: Mat) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn grad_slot(&mut self, v: Var) -> Option<&mut Mat> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(grad_slot_of(&self.nodes, &mut self.grads, v))
    }

    /// Backpropagate from a scalar node with seed gradient 1.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return;
        }
        self.grads[loss.0] = Some(Mat::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g);
            self.grads[idx] = Some(g);
        }
    }

    fn backprop_node(&mut self, idx: usize, g: &Mat) {
        // Temporarily move the op out so children can be mutated freely.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf(None));
        match &op {
            Op::Leaf(_) => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let slot = grad_slot_of(&self.nodes, &mut self.grads, a);
                    tensor::matmul_nt_acc(g, &self.nodes[b.0].value, slot);
                }
                if self.rg(b) {
                    let slot = grad_slot_of(&self.nodes, &mut self.grads, b);
                    tensor::matmul_tn_acc(&self.nodes[a.0].value, g, slot);
                }
            }
            Op::MatMulNT(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let slot = grad_slot_of(&self.nodes, &mut self.grads, a);
                    tensor::matmul_acc(g, &self.nodes[b.0].value, slot);
                }
                if self.rg(b) {
                    let slot = grad_slot_of(&self.nodes, &mut self.grads, b);
                    tensor::matmul_tn_acc(g, &self.nodes[a.0].value, slot);
                }
            }
            Op::Add(a, b) => {
                self.acc(*a, g.clone());
                self.acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.acc(*a, g.clone());
                if self.rg(*row) {
                    let mut r = Mat::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (x, y) in r.data.iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                    self.acc(*row, r);
                }
            }
            Op::MulScalar(a, s) => {
                let sv = self.nodes[s.0].value.data[0];
                if self.rg(*a) {
                    let mut ga = g.clone();
                    ga.scale(sv);
                    self.acc(*a, ga);
                }
                if self.rg(*s) {
                    let gs = dot(&g.data, &self.nodes[a.0].value.data);
                    self.acc(*s, Mat::scalar(gs));
                }
            }
            Op::ScaleConst(a, c) => {
                let mut ga = g.clone();
                ga.scale(*c);
                self.acc(*a, ga);
            }
            Op::Tanh(a) => {
                let out = &self.nodes[idx].value;
                let ga = Mat::from_vec(
                    g.rows,
                    g.cols,
                    g.data
                        .iter()
                        .zip(&out.data)
                        .map(|(gv, y)| gv * (1.0 - y * y))
                        .collect(),
                );
                self.acc(*a, ga);
            }
            Op::Gelu(a) => {
                let x = &self.nodes[a.0].value;
                let ga = Mat::from_vec(
                    g.rows,
                    g.cols,
                    g.data
                        .iter()
                        .zip(&x.data)
                        .map(|(gv, &xv)| gv * gelu_grad(xv))
                        .collect(),
                );
                self.acc(*a, ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = xhat.shape();
                if self.rg(*gamma) {
                    let mut gg = Mat::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            gg.data[c] += g.data[r * cols + c] * xhat.data[r * cols + c];
                        }
                    }
                    self.acc(*gamma, gg);
                }
                if self.rg(*beta) {
                    let mut gb = Mat::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            gb.data[c] += g.data[r * cols + c];
                        }
                    }
                    self.acc(*beta, gb);
                }
                if self.rg(*x) {
                    let gam = self.nodes[gamma.0].value.data.clone();
                    let mut gx = Mat::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xhat = 0.0;
                        for c in 0..cols {
                            let dy = g.data[r * cols + c] * gam[c];
                            sum_dy += dy;
                            sum_dy_xhat += dy * xhat.data[r * cols + c];
                        }
                        for c in 0..cols {
                            let dy = g.data[r * cols + c] * gam[c];
                            gx.data[r * cols + c] = inv_std[r]
                                * (dy - sum_dy / n - xhat.data[r * cols + c] * sum_dy_xhat / n);
                        }
                    }
                    self.acc(*x, gx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask,
                probs,
            } => {
                let (q, k, v) = (*q, *k, *v);
                let qv = &self.nodes[q.0].value;
                let kv = &self.nodes[k.0].value;
                let vv = &self.nodes[v.0].value;
                let (sq, d) = qv.shape();
                let sk = kv.rows;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = Mat::zeros(sq, d);
                let mut gk = Mat::zeros(sk, d);
                let mut gv = Mat::zeros(sk, d);
                let mut dp = vec![0.0; sk];
                for (h, p) in probs.iter().enumerate() {
                    let off = h * dh;
                    for i in 0..sq {
                        let gi = &g.row(i)[off..off + dh];
                        let prow = p.row(i);
                        let mut weighted = 0.0;
                        let (lo, hi) = mask.key_range(i, sk);
                        for j in lo..hi {
                            let pij = prow[j];
                            if pij == 0.0 {
                                dp[j] = 0.0;
                                continue;
                            }
                            dp[j] = dot(gi, &vv.row(j)[off..off + dh]);
                            weighted += dp[j] * pij;
                            for (o, x) in gv.data[j * d + off..j * d + off + dh].iter_mut().zip(gi) {
                                *o += pij * x;
                            }
                        }
                        let qi = &qv.row(i)[off..off + dh];
                        for j in lo..hi {
                            let pij = prow[j];
                            if pij == 0.0 {
                                continue;
                            }
                            let ds = pij * (dp[j] - weighted) * scale;
                            let kj = &kv.row(j)[off..off + dh];
                            for (o, x) in gq.data[i * d + off..i * d + off + dh].iter_mut().zip(kj) {
                                *o += ds * x;
                            }
                            for (o, x) in gk.data[j * d + off..j * d + off + dh].iter_mut().zip(qi) {
                                *o += ds * x;
                            }
                        }
                    }
                }
                self.acc(q, gq);
                self.acc(k, gk);
                self.acc(v, gv);
            }
            Op::Gather { table, ids } => {
                if self.rg(*table) {
                    let slot = self.grad_slot(*table).unwrap();
                    for (i, &id) in ids.iter().enumerate() {
                        for (o, x) in slot.row_mut(id).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::SliceRows { x, start } => {
                if let Some(slot) = self.grad_slot(*x) {
                    let cols = g.cols;
                    for (o, v) in slot.data[start * cols..(start + g.rows) * cols]
                        .iter_mut()
                        .zip(&g.data)
                    {
                        *o += v;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.rows;
                    if self.rg(p) {
                        self.acc(p, g.slice_rows(row, n));
                    }
                    row += n;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if self.rg(*logits) {
                    let scale = g.data[0] / *count as f64;
                    let mut gl = Mat::zeros(probs.rows, probs.cols);
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let out = gl.row_mut(r);
                            for (o, p) in out.iter_mut().zip(probs.row(r)) {
                                *o = p * scale;
                            }
                            out[t] -= scale;
                        }
                    }
                    self.acc(*logits, gl);
                }
            }
            Op::WeightedSum { x, weights } => {
                let mut gx = weights.clone();
                gx.scale(g.data[0]);
                self.acc(*x, gx);
            }
        }
        self.nodes[idx].op = op;
    }

    /// Gradient of the last `backward` call w.r.t. `v`, zero if nothing flowed.
    pub fn grad(&self, v: Var) -> Mat {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shape(v);
                Mat::zeros(r, c)
            }
        }
    }

    /// Gradients of all parameter leaves, keyed by parameter id.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Mat)> + '_ {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.op {
            Op::Leaf(Some(id)) => self.grads.get(i).and_then(Option::as_ref).map(|g| (id, g)),
            _ => None,
        })
    }
}
