//! The full instruction generator: trajectory encoder, adapter LM and
//! backtrack head over one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, TrajectoryEncoder};
use crate::graph::{Graph, Var};
use crate::lm::{loss_autoregressive, AdapterLm, LmConfig, StmtHook, TokenSequence};
use crate::params::ParamStore;
use crate::stmt::{loss_stmt, StmtConfig, StmtHead};
use crate::tensor::Mat;
use crate::world::TrajectoryStep;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub lm: LmConfig,
    pub stmt: StmtConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.lm.validate()?;
        if self.encoder.d_p != self.lm.width {
            return Err(Error::Config(format!(
                "encoder width {} must equal lm width {}",
                self.encoder.d_p, self.lm.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub encoder: TrajectoryEncoder,
    pub lm: AdapterLm,
    pub stmt: StmtHead,
}

impl Model {
    pub fn new(cfg: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = TrajectoryEncoder::new(cfg.encoder.clone(), &mut store, &mut rng)?;
        let lm = AdapterLm::new(cfg.lm.clone(), vocab_size, cfg.encoder.m, &mut store, &mut rng)?;
        let stmt = StmtHead::new(
            &cfg.stmt,
            cfg.lm.layers,
            cfg.lm.width,
            cfg.encoder.d_i,
            cfg.lm.heads,
            &mut store,
            &mut rng,
        )?;
        Ok(Model {
            cfg,
            store,
            encoder,
            lm,
            stmt,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.lm.vocab_size
    }

    /// Masked next-token loss of `seq` conditioned on `steps`.
    pub fn lm_loss(&self, g: &mut Graph, steps: &[TrajectoryStep], seq: &TokenSequence) -> Result<Var> {
        let enc = self.encoder.encode_steps(g, &self.store, steps)?;
        let logits = self.lm.forward(g, &self.store, &seq.ids, Some(enc.tokens))?;
        loss_autoregressive(g, logits, seq)
    }

    /// Backtrack logits (`1 × K`) for a trajectory prefix.
    pub fn stmt_logits(&self, g: &mut Graph, prefix: &[TrajectoryStep], seq: &TokenSequence) -> Result<Var> {
        if prefix.len() < 2 {
            return Err(Error::NoPreviousViewpoint(prefix.len()));
        }
        let enc = self.encoder.encode_steps(g, &self.store, prefix)?;
        let k = self.cfg.encoder.k;
        let memory = g.slice_rows(enc.projected, (prefix.len() - 1) * k, k);
        let hook = StmtHook {
            head: &self.stmt,
            memory,
        };
        let hidden = self.lm.hidden(g, &self.store, &seq.ids, Some(enc.tokens), Some(hook))?;
        let last = g.slice_rows(hidden, seq.len() - 1, 1);
        Ok(self.stmt.predict_backtrack(g, &self.store, last, memory))
    }

    pub fn stmt_loss(&self, g: &mut Graph, prefix: &[TrajectoryStep], seq: &TokenSequence, target: usize) -> Result<Var> {
        let logits = self.stmt_logits(g, prefix, seq)?;
        loss_stmt(g, logits, target)
    }

    /// Trajectory tokens as a plain matrix, for repeated decoding.
    pub fn encode_constant(&self, steps: &[TrajectoryStep]) -> Result<Mat> {
        let mut g = Graph::new();
        let enc = self.encoder.encode_steps(&mut g, &self.store, steps)?;
        Ok(g.value(enc.tokens).clone())
    }

    /// Logits of the token following `ids`.
    pub fn next_token_logits(&self, traj: &Mat, ids: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let t = g.constant(traj.clone());
        let h = self.lm.hidden(&mut g, &self.store, ids, Some(t), None)?;
        let last = g.slice_rows(h, ids.len() - 1, 1);
        let logits = self.lm.logits(&mut g, &self.store, last);
        Ok(g.value(logits).data.clone())
    }
}
