//! Pre-norm transformer block shared by the trajectory encoder and the LM.

use rand::Rng;

use crate::graph::{AttnMask, Graph, Var};
use crate::params::{normal_mat, ones, ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone)]
pub struct Block {
    pub heads: usize,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Projections of the normalized block input, kept so callers can reuse
/// `q` against extra key/value memories.
pub struct AttnInputs {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

impl Block {
    /// `depth` is the total number of blocks in the stack; residual output
    /// projections are scaled down by `1/sqrt(2·depth)`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        group: &str,
        prefix: &str,
        width: usize,
        heads: usize,
        hidden: usize,
        depth: usize,
    ) -> Self {
        let s_in = 1.0 / (width as f64).sqrt();
        let s_res = s_in / (2.0 * depth as f64).sqrt();
        let s_hid = 1.0 / (hidden as f64).sqrt() / (2.0 * depth as f64).sqrt();
        let mut add = |name: &str, m: Mat| store.add(group, &format!("{prefix}.{name}"), m);
        Block {
            heads,
            ln1_g: add("ln1.g", ones(1, width)),
            ln1_b: add("ln1.b", Mat::zeros(1, width)),
            wq: add("attn.wq", normal_mat(rng, width, width, s_in)),
            wk: add("attn.wk", normal_mat(rng, width, width, s_in)),
            wv: add("attn.wv", normal_mat(rng, width, width, s_in)),
            wo: add("attn.wo", normal_mat(rng, width, width, s_res)),
            ln2_g: add("ln2.g", ones(1, width)),
            ln2_b: add("ln2.b", Mat::zeros(1, width)),
            w1: add("mlp.w1", normal_mat(rng, width, hidden, s_in)),
            b1: add("mlp.b1", Mat::zeros(1, hidden)),
            w2: add("mlp.w2", normal_mat(rng, hidden, width, s_hid)),
            b2: add("mlp.b2", Mat::zeros(1, width)),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.ln1_g, self.ln1_b, self.wq, self.wk, self.wv, self.wo, self.ln2_g, self.ln2_b, self.w1,
            self.b1, self.w2, self.b2,
        ]
    }

    pub fn attn_inputs(&self, g: &mut Graph, store: &ParamStore, x: Var) -> AttnInputs {
        let (lg, lb) = (store.leaf(g, self.ln1_g), store.leaf(g, self.ln1_b));
        let h = g.layer_norm(x, lg, lb);
        let (wq, wk, wv) = (store.leaf(g, self.wq), store.leaf(g, self.wk), store.leaf(g, self.wv));
        AttnInputs {
            q: g.matmul(h, wq),
            k: g.matmul(h, wk),
            v: g.matmul(h, wv),
        }
    }

    /// Residual add of the attention output: `x + a·Wo`.
    pub fn attn_residual(&self, g: &mut Graph, store: &ParamStore, x: Var, a: Var) -> Var {
        let wo = store.leaf(g, self.wo);
        let o = g.matmul(a, wo);
        g.add(x, o)
    }

    /// `x + MLP(LN(x))`.
    pub fn mlp(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let (lg, lb) = (store.leaf(g, self.ln2_g), store.leaf(g, self.ln2_b));
        let h = g.layer_norm(x, lg, lb);
        let (w1, b1) = (store.leaf(g, self.w1), store.leaf(g, self.b1));
        let h = g.matmul(h, w1);
        let h = g.add_row(h, b1);
        let h = g.gelu(h);
        let (w2, b2) = (store.leaf(g, self.w2), store.leaf(g, self.b2));
        let h = g.matmul(h, w2);
        let h = g.add_row(h, b2);
        g.add(x, h)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: AttnMask) -> Var {
        let AttnInputs { q, k, v } = self.attn_inputs(g, store, x);
        let a = g.attention(q, k, v, self.heads, mask);
        let x = self.attn_residual(g, store, x, a);
        self.mlp(g, store, x)
    }
}

/// `x·W + b`.
pub fn linear(g: &mut Graph, store: &ParamStore, x: Var, w: ParamId, b: ParamId) -> Var {
    let wv = store.leaf(g, w);
    let y = g.matmul(x, wv);
    let bv = store.leaf(g, b);
    g.add_row(y, bv)
}
