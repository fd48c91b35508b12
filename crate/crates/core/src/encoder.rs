//! Trajectory encoder: subview projection, positional augmentation and
//! per-step aggregation into `M` tokens.
//!
//! All steps of a trajectory are encoded in one pass. Row-wise ops never mix
//! rows, and the aggregator blocks use block-diagonal attention, so each
//! step's output depends only on that step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{AttnMask, Graph, Var};
use crate::nn::{linear, Block};
use crate::params::{normal_mat, ones, ParamId, ParamStore};
use crate::tensor::Mat;
use crate::world::TrajectoryStep;
use crate::{Error, Result};

const GROUP: &str = "encoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub k: usize,
    pub m: usize,
    pub d_raw: usize,
    pub d_i: usize,
    pub d_p: usize,
    pub n_blocks: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub t_max: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            k: 8,
            m: 4,
            d_raw: 32,
            d_i: 32,
            d_p: 64,
            n_blocks: 2,
            heads: 4,
            mlp_hidden: 128,
            t_max: 8,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.k, self.m, self.d_raw, self.d_i, self.d_p, self.heads, self.mlp_hidden, self.t_max];
        if dims.contains(&0) {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.n_blocks == 0 {
            return Err(Error::Config("encoder needs at least one block".into()));
        }
        if self.d_p % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder width {} is not divisible by {} heads",
                self.d_p, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryEncoder {
    pub cfg: EncoderConfig,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub norm_g: ParamId,
    pub norm_b: ParamId,
    pub pos_v: ParamId,
    pub pos_h: ParamId,
    pub pos_a: ParamId,
    pub pos_o: ParamId,
    pub stem: Option<(ParamId, ParamId)>,
    pub agg: ParamId,
    pub blocks: Vec<Block>,
}

/// Graph handles for an encoded trajectory.
#[derive(Debug, Clone, Copy)]
pub struct EncodedTrajectory {
    /// `(T·M) × D_p`, step-major.
    pub tokens: Var,
    /// `(T·K) × D_I` projected subview features.
    pub projected: Var,
    pub steps: usize,
}

impl TrajectoryEncoder {
    pub fn new<R: Rng>(cfg: EncoderConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (k, di, dp) = (cfg.k, cfg.d_i, cfg.d_p);
        let proj_w = store.add(GROUP, "encoder.proj.w", normal_mat(rng, cfg.d_raw, di, 1.0 / (cfg.d_raw as f64).sqrt()));
        let proj_b = store.add(GROUP, "encoder.proj.b", Mat::zeros(1, di));
        let norm_g = store.add(GROUP, "encoder.norm.g", ones(1, di));
        let norm_b = store.add(GROUP, "encoder.norm.b", Mat::zeros(1, di));
        let pos_v = store.add(GROUP, "encoder.pos_v", normal_mat(rng, k, di, 0.1));
        let pos_h = store.add(GROUP, "encoder.pos_h", normal_mat(rng, cfg.t_max, di, 0.1));
        let pos_a = store.add(GROUP, "encoder.pos_a", normal_mat(rng, 1, di, 0.1));
        let pos_o = store.add(GROUP, "encoder.pos_o", normal_mat(rng, 1, di, 0.1));
        let stem = (di != dp).then(|| {
            (
                store.add(GROUP, "encoder.stem.w", normal_mat(rng, di, dp, 1.0 / (di as f64).sqrt())),
                store.add(GROUP, "encoder.stem.b", Mat::zeros(1, dp)),
            )
        });
        let agg = store.add(GROUP, "encoder.agg", normal_mat(rng, cfg.m, dp, 0.5));
        let blocks = (0..cfg.n_blocks)
            .map(|b| {
                Block::new(
                    store,
                    rng,
                    GROUP,
                    &format!("encoder.block{b}"),
                    dp,
                    cfg.heads,
                    cfg.mlp_hidden,
                    cfg.n_blocks,
                )
            })
            .collect();
        Ok(TrajectoryEncoder {
            cfg,
            proj_w,
            proj_b,
            norm_g,
            norm_b,
            pos_v,
            pos_h,
            pos_a,
            pos_o,
            stem,
            agg,
            blocks,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.proj_w, self.proj_b, self.norm_g, self.norm_b, self.pos_v, self.pos_h, self.pos_a, self.pos_o,
        ];
        if let Some((w, b)) = self.stem {
            ids.extend([w, b]);
        }
        ids.push(self.agg);
        for b in &self.blocks {
            ids.extend(b.param_ids());
        }
        ids
    }

    /// Linear map followed by layer normalization; works on any number of
    /// stacked `K`-row panoramas.
    pub fn project_subviews(&self, g: &mut Graph, store: &ParamStore, raw: Var) -> Result<Var> {
        let (r, c) = g.shape(raw);
        if c != self.cfg.d_raw || r == 0 || r % self.cfg.k != 0 {
            return Err(Error::Shape {
                what: "raw subview features",
                expected: (self.cfg.k, self.cfg.d_raw),
                got: (r, c),
            });
        }
        let h = linear(g, store, raw, self.proj_w, self.proj_b);
        let (ng, nb) = (store.leaf(g, self.norm_g), store.leaf(g, self.norm_b));
        Ok(g.layer_norm(h, ng, nb))
    }

    /// Add spatial, history and action/other encodings to one step.
    pub fn augment_step(&self, g: &mut Graph, store: &ParamStore, projected: Var, action: usize, t: usize) -> Result<Var> {
        self.augment_steps(g, store, projected, &[(action, t)])
    }

    fn augment_steps(&self, g: &mut Graph, store: &ParamStore, projected: Var, steps: &[(usize, usize)]) -> Result<Var> {
        let k = self.cfg.k;
        let shape = g.shape(projected);
        if shape != (steps.len() * k, self.cfg.d_i) {
            return Err(Error::Shape {
                what: "projected subviews",
                expected: (steps.len() * k, self.cfg.d_i),
                got: shape,
            });
        }
        let mut view_ids = Vec::with_capacity(shape.0);
        let mut hist_ids = Vec::with_capacity(shape.0);
        let mut kind_ids = Vec::with_capacity(shape.0);
        for &(action, t) in steps {
            if t >= self.cfg.t_max {
                return Err(Error::Capacity {
                    step: t,
                    capacity: self.cfg.t_max,
                });
            }
            if action > k {
                return Err(Error::Index { index: action, len: k + 1 });
            }
            for j in 0..k {
                view_ids.push(j);
                hist_ids.push(t);
                // Row 0 of the kind table is pos_a, row 1 is pos_o. STOP (= K) never matches.
                kind_ids.push(if j == action { 0 } else { 1 });
            }
        }
        let pv = store.leaf(g, self.pos_v);
        let ph = store.leaf(g, self.pos_h);
        let pa = store.leaf(g, self.pos_a);
        let po = store.leaf(g, self.pos_o);
        let kinds = g.concat_rows(&[pa, po]);
        let v = g.gather(pv, &view_ids);
        let h = g.gather(ph, &hist_ids);
        let a = g.gather(kinds, &kind_ids);
        let x = g.add(projected, v);
        let x = g.add(x, h);
        Ok(g.add(x, a))
    }

    /// Run the aggregator blocks over `[agg tokens; step rows]` for one or
    /// more stacked steps and return the `M` aggregator outputs per step.
    pub fn aggregate_step(&self, g: &mut Graph, store: &ParamStore, augmented: Var) -> Result<Var> {
        let (k, m) = (self.cfg.k, self.cfg.m);
        let (r, c) = g.shape(augmented);
        if c != self.cfg.d_i || r == 0 || r % k != 0 {
            return Err(Error::Shape {
                what: "augmented subviews",
                expected: (k, self.cfg.d_i),
                got: (r, c),
            });
        }
        let n = r / k;
        let x = match self.stem {
            Some((w, b)) => linear(g, store, augmented, w, b),
            None => augmented,
        };
        let agg = store.leaf(g, self.agg);
        let pool = g.concat_rows(&[agg, x]);
        let mut order = Vec::with_capacity(n * (m + k));
        let mut picks = Vec::with_capacity(n * m);
        for s in 0..n {
            picks.extend((0..m).map(|i| s * (m + k) + i));
            order.extend(0..m);
            order.extend((0..k).map(|j| m + s * k + j));
        }
        let mut h = g.gather(pool, &order);
        for b in &self.blocks {
            h = b.forward(g, store, h, AttnMask::Block(m + k));
        }
        Ok(g.gather(h, &picks))
    }

    /// Encode a full trajectory (or prefix).
    pub fn encode_steps(&self, g: &mut Graph, store: &ParamStore, steps: &[TrajectoryStep]) -> Result<EncodedTrajectory> {
        if steps.len() > self.cfg.t_max {
            return Err(Error::Capacity {
                step: steps.len(),
                capacity: self.cfg.t_max,
            });
        }
        let raw = raw_features(steps, self.cfg.k, self.cfg.d_raw)?;
        let raw = g.constant(raw);
        let projected = self.project_subviews(g, store, raw)?;
        let meta: Vec<(usize, usize)> = steps.iter().enumerate().map(|(t, s)| (s.action, t)).collect();
        let augmented = self.augment_steps(g, store, projected, &meta)?;
        let tokens = self.aggregate_step(g, store, augmented)?;
        Ok(EncodedTrajectory {
            tokens,
            projected,
            steps: steps.len(),
        })
    }

    pub fn encode_trajectory(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        traj: &crate::world::Trajectory,
    ) -> Result<EncodedTrajectory> {
        self.encode_steps(g, store, &traj.steps)
    }
}

/// Stack the raw subview features of `steps` into a `(T·K) × D_raw` matrix.
pub fn raw_features(steps: &[TrajectoryStep], k: usize, d_raw: usize) -> Result<Mat> {
    let mut data = Vec::with_capacity(steps.len() * k * d_raw);
    for s in steps {
        let p = &s.panorama.subviews;
        if p.len() != k {
            return Err(Error::Shape {
                what: "panorama",
                expected: (k, d_raw),
                got: (p.len(), p.first().map_or(0, Vec::len)),
            });
        }
        for f in p {
            if f.len() != d_raw {
                return Err(Error::Shape {
                    what: "panorama",
                    expected: (k, d_raw),
                    got: (p.len(), f.len()),
                });
            }
            data.extend_from_slice(f);
        }
    }
    Ok(Mat::from_vec(steps.len() * k, d_raw, data))
}
