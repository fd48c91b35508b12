//! Decoder-only language model with per-layer trajectory adapters.
//!
//! Each adapter layer projects the trajectory tokens (plus learned query
//! offsets) into the text space and lets every text position attend to them
//! with the layer's own key/value maps. That branch is scaled by
//! `tanh(gate)`, and the gate starts at exactly zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{AttnMask, Graph, Var};
use crate::nn::{linear, AttnInputs, Block};
use crate::params::{normal_mat, ones, ParamId, ParamStore};
use crate::stmt::StmtHead;
use crate::tensor::Mat;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub mlp_hidden: usize,
    pub context_len: usize,
    /// Layers with an adapter; all layers when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter_layers: Option<Vec<usize>>,
    /// Freeze embeddings and every block except the last `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainable_last: Option<usize>,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            layers: 4,
            heads: 4,
            width: 64,
            mlp_hidden: 128,
            context_len: 256,
            adapter_layers: None,
            trainable_last: None,
        }
    }
}

impl LmConfig {
    pub fn adapter_set(&self) -> Vec<usize> {
        self.adapter_layers.clone().unwrap_or_else(|| (0..self.layers).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::Config("the language model needs at least 2 layers".into()));
        }
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "lm width {} must be a positive multiple of {} heads",
                self.width, self.heads
            )));
        }
        if self.context_len == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("lm context and hidden sizes must be positive".into()));
        }
        if let Some(bad) = self.adapter_set().into_iter().find(|&l| l >= self.layers) {
            return Err(Error::Config(format!("adapter layer {bad} outside 0..{}", self.layers)));
        }
        if self.trainable_last.is_some_and(|n| n > self.layers) {
            return Err(Error::Config("trainable_last exceeds the layer count".into()));
        }
        Ok(())
    }
}

/// Token ids with per-position supervision flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

impl TokenSequence {
    pub fn unsupervised(ids: Vec<usize>) -> Self {
        let mask = vec![false; ids.len()];
        TokenSequence { ids, mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Next-token targets: row `s` predicts `ids[s+1]` when that position is supervised.
    pub fn targets(&self) -> Vec<Option<usize>> {
        (0..self.ids.len())
            .map(|s| match self.mask.get(s + 1) {
                Some(true) => Some(self.ids[s + 1]),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Adapter {
    pub query: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub gate: ParamId,
}

#[derive(Debug, Clone)]
pub struct AdapterLm {
    pub cfg: LmConfig,
    pub vocab_size: usize,
    /// Trajectory tokens per step, i.e. the rows of each query offset table.
    pub m: usize,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub blocks: Vec<Block>,
    pub adapters: Vec<Option<Adapter>>,
    pub lnf_g: ParamId,
    pub lnf_b: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// Backtrack-task hook: replaces the last row with a cross-attention
/// readout over `memory` from the head's start layer onward.
#[derive(Clone, Copy)]
pub struct StmtHook<'a> {
    pub head: &'a StmtHead,
    pub memory: Var,
}

impl AdapterLm {
    pub fn new<R: Rng>(cfg: LmConfig, vocab_size: usize, m: usize, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if vocab_size == 0 {
            return Err(Error::Config("empty vocabulary".into()));
        }
        let d = cfg.width;
        let tok_emb = store.add("embeddings", "lm.tok_emb", normal_mat(rng, vocab_size, d, 0.1));
        let pos_emb = store.add("embeddings", "lm.pos_emb", normal_mat(rng, cfg.context_len, d, 0.1));
        let blocks: Vec<Block> = (0..cfg.layers)
            .map(|l| Block::new(store, rng, "lm", &format!("lm.block{l}"), d, cfg.heads, cfg.mlp_hidden, cfg.layers))
            .collect();
        let wanted = cfg.adapter_set();
        let adapters = (0..cfg.layers)
            .map(|l| {
                wanted.contains(&l).then(|| Adapter {
                    query: store.add("adapters", &format!("adapter{l}.query"), normal_mat(rng, m, d, 0.1)),
                    proj_w: store.add(
                        "adapters",
                        &format!("adapter{l}.proj.w"),
                        normal_mat(rng, d, d, 1.0 / (d as f64).sqrt()),
                    ),
                    proj_b: store.add("adapters", &format!("adapter{l}.proj.b"), Mat::zeros(1, d)),
                    gate: store.add("adapters", &format!("adapter{l}.gate"), Mat::scalar(0.0)),
                })
            })
            .collect();
        let lnf_g = store.add("lm", "lm.lnf.g", ones(1, d));
        let lnf_b = store.add("lm", "lm.lnf.b", Mat::zeros(1, d));
        let head_w = store.add("lm", "lm.head.w", normal_mat(rng, d, vocab_size, 1.0 / (d as f64).sqrt()));
        let head_b = store.add("lm", "lm.head.b", Mat::zeros(1, vocab_size));
        let lm = AdapterLm {
            cfg,
            vocab_size,
            m,
            tok_emb,
            pos_emb,
            blocks,
            adapters,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
        };
        lm.apply_trainable_policy(store);
        Ok(lm)
    }

    /// With `trainable_last = n`, embeddings and all but the last `n` blocks are frozen.
    pub fn apply_trainable_policy(&self, store: &mut ParamStore) {
        let Some(n) = self.cfg.trainable_last else {
            return;
        };
        store.set_trainable(self.tok_emb, false);
        store.set_trainable(self.pos_emb, false);
        for b in &self.blocks[..self.cfg.layers - n] {
            for id in b.param_ids() {
                store.set_trainable(id, false);
            }
        }
    }

    pub fn adapter_param_ids(&self) -> Vec<ParamId> {
        self.adapters
            .iter()
            .flatten()
            .flat_map(|a| [a.query, a.proj_w, a.proj_b, a.gate])
            .collect()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.tok_emb, self.pos_emb];
        for b in &self.blocks {
            ids.extend(b.param_ids());
        }
        ids.extend(self.adapter_param_ids());
        ids.extend([self.lnf_g, self.lnf_b, self.head_w, self.head_b]);
        ids
    }

    fn adapter(&self, l: usize) -> Result<&Adapter> {
        self.adapters.get(l).and_then(Option::as_ref).ok_or(Error::NoAdapter(l))
    }

    /// `ρ_l[t·M + m] = proj_l(traj[t·M + m] + q_l[m])`.
    pub fn adapt_features(&self, g: &mut Graph, store: &ParamStore, traj: Var, l: usize) -> Result<Var> {
        let a = self.adapter(l)?;
        let (rows, cols) = g.shape(traj);
        if cols != self.cfg.width || rows % self.m != 0 {
            return Err(Error::Shape {
                what: "trajectory tokens",
                expected: (self.m, self.cfg.width),
                got: (rows, cols),
            });
        }
        let q = store.leaf(g, a.query);
        let ids: Vec<usize> = (0..rows).map(|r| r % self.m).collect();
        let q = g.gather(q, &ids);
        let x = g.add(traj, q);
        Ok(linear(g, store, x, a.proj_w, a.proj_b))
    }

    /// Attention sublayer of block `l` with the gated branch over `rho`:
    /// `x + (CausalAttn(x) + tanh(gate)·Attn(x → ρ))·Wo`.
    pub fn zero_attn_inject(&self, g: &mut Graph, store: &ParamStore, l: usize, rho: Var, x: Var) -> Result<Var> {
        let a = self.adapter(l)?;
        let block = &self.blocks[l];
        let AttnInputs { q, k, v } = block.attn_inputs(g, store, x);
        let text = g.attention(q, k, v, block.heads, AttnMask::Causal);
        let (wk, wv) = (store.leaf(g, block.wk), store.leaf(g, block.wv));
        let rk = g.matmul(rho, wk);
        let rv = g.matmul(rho, wv);
        let cross = g.attention(q, rk, rv, block.heads, AttnMask::Full);
        let gate = store.leaf(g, a.gate);
        let gain = g.tanh(gate);
        let cross = g.mul_scalar(cross, gain);
        let mixed = g.add(text, cross);
        Ok(block.attn_residual(g, store, x, mixed))
    }

    /// Final-norm hidden states, `S × width`.
    pub fn hidden(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ids: &[usize],
        traj: Option<Var>,
        hook: Option<StmtHook<'_>>,
    ) -> Result<Var> {
        let s = ids.len();
        if s == 0 {
            return Err(Error::Data("empty token sequence".into()));
        }
        if s > self.cfg.context_len {
            return Err(Error::ContextOverflow {
                len: s,
                context: self.cfg.context_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::Index {
                index: bad,
                len: self.vocab_size,
            });
        }
        let te = store.leaf(g, self.tok_emb);
        let pe = store.leaf(g, self.pos_emb);
        let tok = g.gather(te, ids);
        let pos_ids: Vec<usize> = (0..s).collect();
        let pos = g.gather(pe, &pos_ids);
        let mut x = g.add(tok, pos);
        for (l, block) in self.blocks.iter().enumerate() {
            x = match (traj, &self.adapters[l]) {
                (Some(t), Some(_)) => {
                    let rho = self.adapt_features(g, store, t, l)?;
                    self.zero_attn_inject(g, store, l, rho, x)?
                }
                _ => {
                    let AttnInputs { q, k, v } = block.attn_inputs(g, store, x);
                    let a = g.attention(q, k, v, block.heads, AttnMask::Causal);
                    block.attn_residual(g, store, x, a)
                }
            };
            x = block.mlp(g, store, x);
            if let Some(h) = hook {
                if l >= h.head.l_s {
                    let last = g.slice_rows(x, s - 1, 1);
                    let new = h.head.cross_attn_inject(g, store, last, h.memory, l);
                    x = if s > 1 {
                        let head = g.slice_rows(x, 0, s - 1);
                        g.concat_rows(&[head, new])
                    } else {
                        new
                    };
                }
            }
        }
        let (fg, fb) = (store.leaf(g, self.lnf_g), store.leaf(g, self.lnf_b));
        Ok(g.layer_norm(x, fg, fb))
    }

    pub fn logits(&self, g: &mut Graph, store: &ParamStore, hidden: Var) -> Var {
        linear(g, store, hidden, self.head_w, self.head_b)
    }

    /// Logits `S × vocab`. Without trajectory tokens this is a plain decoder.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ids: &[usize], traj: Option<Var>) -> Result<Var> {
        let h = self.hidden(g, store, ids, traj, None)?;
        Ok(self.logits(g, store, h))
    }
}

/// Mean next-token cross-entropy over supervised target positions.
pub fn loss_autoregressive(g: &mut Graph, logits: Var, seq: &TokenSequence) -> Result<Var> {
    if seq.mask.len() != seq.ids.len() {
        return Err(Error::Shape {
            what: "supervision mask",
            expected: (seq.ids.len(), 1),
            got: (seq.mask.len(), 1),
        });
    }
    let targets = seq.targets();
    if targets.iter().all(Option::is_none) {
        return Err(Error::EmptyMask);
    }
    Ok(g.cross_entropy(logits, &targets))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Ancestral sampling from `softmax(row / temperature)`.
pub fn sample_token<R: Rng>(row: &[f64], temperature: f64, rng: &mut R) -> usize {
    assert!(temperature > 0.0, "temperature must be positive");
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = row.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    argmax(row)
}
