//! Backtrack prediction: from the query token at the end of the backtrack
//! prompt, predict which subview of the current viewpoint leads back to the
//! previous one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{AttnMask, Graph, Var};
use crate::lm::TokenSequence;
use crate::params::{normal_mat, ones, ParamId, ParamStore};
use crate::prompts::PromptRegistry;
use crate::tensor::{self, Mat};
use crate::vocab::{Vocab, ACT};
use crate::world::{Trajectory, TrajectoryStep, WorldGrid};
use crate::{Error, Result};

const GROUP: &str = "stmt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StmtConfig {
    /// First block whose output gets the cross-attention readout; `L − 2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_layer: Option<usize>,
    /// Weight of the backtrack loss in the joint objective.
    pub weight: f64,
}

impl Default for StmtConfig {
    fn default() -> Self {
        StmtConfig {
            start_layer: None,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossAttn {
    pub ln_g: ParamId,
    pub ln_b: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Debug, Clone)]
pub struct StmtHead {
    pub l_s: usize,
    pub heads: usize,
    /// `D_p × D_I` bilinear readout.
    pub w: ParamId,
    /// One cross-attention per layer `≥ l_s`.
    pub cross: Vec<Option<CrossAttn>>,
}

impl StmtHead {
    pub fn new<R: Rng>(
        cfg: &StmtConfig,
        layers: usize,
        d_p: usize,
        d_i: usize,
        heads: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let l_s = cfg.start_layer.unwrap_or(layers.saturating_sub(2));
        if l_s > layers {
            return Err(Error::Config(format!("stmt start layer {l_s} exceeds {layers} layers")));
        }
        // Unit-scale logits for layer-normed inputs of norm √d_p and √d_i.
        let w = store.add(GROUP, "stmt.w", normal_mat(rng, d_p, d_i, 1.0 / ((d_p * d_i) as f64).sqrt()));
        let cross = (0..layers)
            .map(|l| {
                (l >= l_s).then(|| {
                    let p = format!("stmt.cross{l}");
                    CrossAttn {
                        ln_g: store.add(GROUP, &format!("{p}.ln.g"), ones(1, d_p)),
                        ln_b: store.add(GROUP, &format!("{p}.ln.b"), Mat::zeros(1, d_p)),
                        wq: store.add(GROUP, &format!("{p}.wq"), normal_mat(rng, d_p, d_p, 1.0 / (d_p as f64).sqrt())),
                        wk: store.add(GROUP, &format!("{p}.wk"), normal_mat(rng, d_i, d_p, 1.0 / (d_i as f64).sqrt())),
                        wv: store.add(GROUP, &format!("{p}.wv"), normal_mat(rng, d_i, d_p, 1.0 / (d_i as f64).sqrt())),
                        wo: store.add(GROUP, &format!("{p}.wo"), Mat::zeros(d_p, d_p)),
                    }
                })
            })
            .collect();
        Ok(StmtHead { l_s, heads, w, cross })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w];
        for c in self.cross.iter().flatten() {
            ids.extend([c.ln_g, c.ln_b, c.wq, c.wk, c.wv, c.wo]);
        }
        ids
    }

    /// Residual cross-attention of the query row over `memory` (`K × D_I`) at
    /// layer `l`; identity below the start layer.
    pub fn cross_attn_inject(&self, g: &mut Graph, store: &ParamStore, x: Var, memory: Var, l: usize) -> Var {
        let Some(Some(c)) = self.cross.get(l) else {
            return x;
        };
        let (lg, lb) = (store.leaf(g, c.ln_g), store.leaf(g, c.ln_b));
        let h = g.layer_norm(x, lg, lb);
        let (wq, wk, wv, wo) = (
            store.leaf(g, c.wq),
            store.leaf(g, c.wk),
            store.leaf(g, c.wv),
            store.leaf(g, c.wo),
        );
        let q = g.matmul(h, wq);
        let k = g.matmul(memory, wk);
        let v = g.matmul(memory, wv);
        let a = g.attention(q, k, v, self.heads, AttnMask::Full);
        let o = g.matmul(a, wo);
        g.add(x, o)
    }

    /// Backtrack logits `x·W·Iᵀ`, shape `1 × K`.
    pub fn predict_backtrack(&self, g: &mut Graph, store: &ParamStore, x_final: Var, memory: Var) -> Var {
        let w = store.leaf(g, self.w);
        let xw = g.matmul(x_final, w);
        g.matmul_nt(xw, memory)
    }
}

/// Softmax of a `1 × K` logit row.
pub fn probabilities(logits: &Mat) -> Vec<f64> {
    let mut p = logits.data.clone();
    tensor::softmax_in_place(&mut p);
    p
}

/// `−ln A_t[a_p]`.
pub fn loss_stmt(g: &mut Graph, logits: Var, target: usize) -> Result<Var> {
    let k = g.shape(logits).1;
    if target >= k {
        return Err(Error::Index { index: target, len: k });
    }
    Ok(g.cross_entropy(logits, &[Some(target)]))
}

/// Prompt tokens followed by the query token; the prefix's last step
/// supplies the candidate views.
pub fn build_stmt_input(
    prefix: &[TrajectoryStep],
    prompts: &PromptRegistry,
    vocab: &Vocab,
) -> Result<TokenSequence> {
    if prefix.len() < 2 {
        return Err(Error::NoPreviousViewpoint(prefix.len()));
    }
    let current = &prefix[prefix.len() - 1];
    let mut toks = prompts.backtrack_prompt(&current.candidates);
    toks.push(ACT.to_string());
    Ok(TokenSequence::unsupervised(vocab.encode(&toks)?))
}

/// Subview at step `t` (0-based, `t ≥ 1`) that points back at step `t − 1`.
pub fn backtrack_target(world: &WorldGrid, traj: &Trajectory, t: usize) -> Result<usize> {
    if t == 0 || t >= traj.len() {
        return Err(Error::NoPreviousViewpoint(t + 1));
    }
    let (cur, prev) = (traj.steps[t].viewpoint, traj.steps[t - 1].viewpoint);
    if !world.nav_graph[cur].contains(&prev) {
        return Err(Error::Data(format!("{cur} and {prev} are not neighbors")));
    }
    Ok(world.action_towards(cur, prev, traj.k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, rand_mat};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head(l_s: Option<usize>) -> (ParamStore, StmtHead, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let cfg = StmtConfig {
            start_layer: l_s,
            weight: 1.0,
        };
        let h = StmtHead::new(&cfg, 4, 8, 6, 2, &mut store, &mut rng).unwrap();
        (store, h, rng)
    }

    #[test]
    fn injection_is_gated_by_layer_and_zero_output_projection() {
        let (mut store, h, mut rng) = head(None);
        assert_eq!(h.l_s, 2);
        let x0 = rand_mat(&mut rng, 1, 8, 1.0);
        let mem = rand_mat(&mut rng, 5, 6, 1.0);
        let run = |s: &ParamStore, l: usize| {
            let mut g = Graph::new();
            let x = g.constant(x0.clone());
            let m = g.constant(mem.clone());
            let y = h.cross_attn_inject(&mut g, s, x, m, l);
            g.value(y).clone()
        };
        assert_eq!(run(&store, 0), x0);
        assert_eq!(run(&store, 3), x0);
        let wo = h.cross[3].as_ref().unwrap().wo;
        *store.get_mut(wo) = rand_mat(&mut rng, 8, 8, 0.3);
        assert_ne!(run(&store, 3), x0);
    }

    #[test]
    fn zero_readout_is_uniform_and_single_view_is_certain() {
        let (mut store, h, mut rng) = head(None);
        *store.get_mut(h.w) = Mat::zeros(8, 6);
        let mut g = Graph::new();
        let x = g.constant(rand_mat(&mut rng, 1, 8, 1.0));
        let m = g.constant(rand_mat(&mut rng, 8, 6, 1.0));
        let logits = h.predict_backtrack(&mut g, &store, x, m);
        for p in probabilities(g.value(logits)) {
            assert!((p - 0.125).abs() < 1e-15);
        }
        let loss = loss_stmt(&mut g, logits, 3).unwrap();
        assert!((g.scalar(loss) - 8f64.ln()).abs() < 1e-12);
        assert!(matches!(loss_stmt(&mut g, logits, 8), Err(Error::Index { .. })));
        let one = g.constant(rand_mat(&mut rng, 1, 6, 1.0));
        let l1 = h.predict_backtrack(&mut g, &store, x, one);
        assert_eq!(probabilities(g.value(l1)), vec![1.0]);
    }

    #[test]
    fn readout_matches_hand_rolled_product() {
        let (store, h, mut rng) = head(None);
        let x = rand_mat(&mut rng, 1, 8, 1.0);
        let mem = rand_mat(&mut rng, 4, 6, 1.0);
        let w = store.get(h.w);
        let mut logits = [0.0; 4];
        for (k, l) in logits.iter_mut().enumerate() {
            for i in 0..8 {
                for j in 0..6 {
                    *l += x.get(0, i) * w.get(i, j) * mem.get(k, j);
                }
            }
        }
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let mut g = Graph::new();
        let (xv, mv) = (g.constant(x), g.constant(mem));
        let out = h.predict_backtrack(&mut g, &store, xv, mv);
        for (p, l) in probabilities(g.value(out)).iter().zip(logits) {
            assert!((p - l.exp() / z).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_gradient_is_softmax_minus_one_hot() {
        let mut g = Graph::new();
        let l = g.input(Mat::from_vec(1, 4, vec![0.3, -1.0, 2.0, 0.5]));
        let loss = loss_stmt(&mut g, l, 2).unwrap();
        g.backward(loss);
        let p = probabilities(g.value(l));
        let grad = g.grad(l);
        for k in 0..4 {
            let expect = p[k] - if k == 2 { 1.0 } else { 0.0 };
            assert!((grad.data[k] - expect).abs() < 1e-12);
        }
        let hot = Mat::from_vec(1, 3, vec![0.0, 800.0, 0.0]);
        let mut g = Graph::new();
        let l = g.constant(hot);
        let loss = loss_stmt(&mut g, l, 1).unwrap();
        assert_eq!(g.scalar(loss), 0.0);
    }

    #[test]
    fn cross_attention_gradients_reach_memory() {
        let (mut store, h, mut rng) = head(Some(0));
        let c = h.cross[1].as_ref().unwrap().clone();
        *store.get_mut(c.wo) = rand_mat(&mut rng, 8, 8, 0.3);
        let x = rand_mat(&mut rng, 1, 8, 1.0);
        let mem = rand_mat(&mut rng, 5, 6, 1.0);
        let report = check_gradients(&[x, mem], |g, v| {
            let y = h.cross_attn_inject(g, &store, v[0], v[1], 1);
            let logits = h.predict_backtrack(g, &store, y, v[1]);
            g.cross_entropy(logits, &[Some(2)])
        });
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
