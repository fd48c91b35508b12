//! Two-stage inference: landmarks first, then the instruction conditioned on
//! the (possibly overridden) landmark list and the style prompt.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::GenerateConfig;
use crate::lm::{argmax, sample_token};
use crate::model::Model;
use crate::prompts::{parse_landmarks, PromptRegistry};
use crate::tensor::Mat;
use crate::trainer::step_seed;
use crate::vocab::{detokenize, tokenize, Vocab, BOS, EOS, SEP};
use crate::world::{Style, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Greedy,
    Temperature(f64),
}

impl Sampling {
    pub fn from_temperature(t: f64) -> Result<Self> {
        if t > 0.0 && t.is_finite() {
            Ok(Sampling::Temperature(t))
        } else {
            Err(Error::Config(format!("temperature must be positive, got {t}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub style: Style,
    pub landmark_override: Option<Vec<String>>,
    pub temperature: f64,
    /// Instruction token budget; the configured default when absent.
    pub max_tokens: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerationFlags {
    pub landmarks_truncated: bool,
    pub instruction_truncated: bool,
    /// Stage-one pieces that were not known landmark names.
    pub dropped_landmarks: Vec<String>,
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub trajectory_id: String,
    pub style: Style,
    pub landmarks_predicted: Vec<String>,
    pub landmarks_used: Vec<String>,
    pub instruction: String,
    pub flags: GenerationFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<String>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkPrediction {
    pub names: Vec<String>,
    pub dropped: Vec<String>,
    pub truncated: bool,
}

pub struct Generator<'a> {
    pub model: &'a Model,
    pub vocab: &'a Vocab,
    pub prompts: PromptRegistry,
    /// Names stage one may produce.
    pub known: Vec<String>,
    pub cfg: GenerateConfig,
}

impl<'a> Generator<'a> {
    pub fn new(model: &'a Model, vocab: &'a Vocab, known: Vec<String>, cfg: GenerateConfig) -> Self {
        Generator {
            model,
            vocab,
            prompts: PromptRegistry::default(),
            known,
            cfg,
        }
    }

    /// Continue `[BOS] prompt [SEP]` until EOS or `max_tokens` new tokens.
    pub fn decode(&self, traj: &Mat, prompt: &[String], sampling: Sampling, max_tokens: usize, seed: u64) -> Result<Decoded> {
        let mut ids = vec![self.vocab.special(BOS)];
        ids.extend(self.vocab.encode(prompt)?);
        ids.push(self.vocab.special(SEP));
        let context = self.model.cfg.lm.context_len;
        if ids.len() + max_tokens > context {
            return Err(Error::ContextOverflow {
                len: ids.len() + max_tokens,
                context,
            });
        }
        let eos = self.vocab.special(EOS);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for _ in 0..max_tokens {
            let logits = self.model.next_token_logits(traj, &ids)?;
            let next = match sampling {
                Sampling::Greedy => argmax(&logits),
                Sampling::Temperature(t) => sample_token(&logits, t, &mut rng),
            };
            if next == eos {
                return Ok(Decoded {
                    tokens: self.vocab.decode(&out),
                    truncated: false,
                });
            }
            ids.push(next);
            out.push(next);
        }
        Ok(Decoded {
            tokens: self.vocab.decode(&out),
            truncated: true,
        })
    }

    pub fn encode(&self, traj: &Trajectory) -> Result<Mat> {
        self.model.encode_constant(&traj.steps)
    }

    pub fn predict_landmarks_encoded(&self, feats: &Mat, style: Style, sampling: Sampling, seed: u64) -> Result<LandmarkPrediction> {
        let d = self.decode(
            feats,
            &self.prompts.landmark_prompt(style),
            sampling,
            self.cfg.max_landmark_tokens,
            seed,
        )?;
        let (names, dropped) = parse_landmarks(&d.tokens, &self.known);
        if !dropped.is_empty() {
            log::warn!("dropping unknown landmark names {dropped:?}");
        }
        Ok(LandmarkPrediction {
            names,
            dropped,
            truncated: d.truncated,
        })
    }

    pub fn predict_landmarks(&self, traj: &Trajectory, style: Style, temperature: f64, seed: u64) -> Result<LandmarkPrediction> {
        let sampling = Sampling::from_temperature(temperature)?;
        self.predict_landmarks_encoded(&self.encode(traj)?, style, sampling, seed)
    }

    pub fn generate_instruction_encoded(
        &self,
        feats: &Mat,
        style: Style,
        landmarks: &[String],
        sampling: Sampling,
        max_tokens: usize,
        seed: u64,
    ) -> Result<Decoded> {
        let prompt = self.prompts.instruction_prompt(style, landmarks);
        self.decode(feats, &prompt, sampling, max_tokens, seed)
    }

    pub fn generate_instruction(
        &self,
        traj: &Trajectory,
        style: Style,
        landmarks: &[String],
        temperature: f64,
        seed: u64,
    ) -> Result<Decoded> {
        let sampling = Sampling::from_temperature(temperature)?;
        let feats = self.encode(traj)?;
        self.generate_instruction_encoded(&feats, style, landmarks, sampling, self.cfg.max_instruction_tokens, seed)
    }

    /// Full pipeline for one trajectory. Stage one always runs so the record
    /// can show what the override replaced.
    pub fn generate(&self, traj: &Trajectory, req: &GenerationRequest) -> Result<GenerationRecord> {
        let sampling = Sampling::from_temperature(req.temperature)?;
        self.generate_with(traj, req, sampling)
    }

    pub fn generate_with(&self, traj: &Trajectory, req: &GenerationRequest, sampling: Sampling) -> Result<GenerationRecord> {
        if let Some(names) = &req.landmark_override {
            for n in names {
                self.vocab.encode(&tokenize(n))?;
            }
        }
        let feats = self.encode(traj)?;
        let predicted = self.predict_landmarks_encoded(&feats, req.style, sampling, req.seed)?;
        let used = req.landmark_override.clone().unwrap_or_else(|| predicted.names.clone());
        let max_tokens = req.max_tokens.unwrap_or(self.cfg.max_instruction_tokens);
        let text = self.generate_instruction_encoded(
            &feats,
            req.style,
            &used,
            sampling,
            max_tokens,
            step_seed(req.seed, 1),
        )?;
        Ok(GenerationRecord {
            trajectory_id: traj.id.clone(),
            style: req.style,
            landmarks_predicted: predicted.names,
            landmarks_used: used,
            instruction: detokenize(&text.tokens),
            flags: GenerationFlags {
                landmarks_truncated: predicted.truncated,
                instruction_truncated: text.truncated,
                dropped_landmarks: predicted.dropped,
                overridden: req.landmark_override.is_some(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::data::{Corpus, WorldConfig};
    use crate::trainer::build_vocab;

    fn setup() -> (Corpus, Vocab, Model) {
        let mut cfg = RunConfig::default();
        cfg.world = WorldConfig {
            worlds: 2,
            paths_per_world: 2,
            ..WorldConfig::default()
        };
        cfg.lm.layers = 2;
        cfg.lm.width = 16;
        cfg.lm.heads = 2;
        cfg.encoder.m = 2;
        cfg.encoder.heads = 2;
        let corpus = Corpus::generate(&cfg.world, 1).unwrap();
        let vocab = build_vocab(&corpus, &PromptRegistry::default());
        let mut model = Model::new(cfg.model_config(), vocab.len(), 4).unwrap();
        // Open the adapter gates so trajectories influence the output.
        for a in model.lm.adapters.clone().iter().flatten() {
            *model.store.get_mut(a.gate) = Mat::scalar(1.0);
        }
        (corpus, vocab, model)
    }

    fn gen<'a>(corpus: &Corpus, vocab: &'a Vocab, model: &'a Model) -> Generator<'a> {
        let cfg = GenerateConfig {
            max_landmark_tokens: 6,
            max_instruction_tokens: 8,
            ..GenerateConfig::default()
        };
        Generator::new(model, vocab, corpus.lexicon().nouns(), cfg)
    }

    fn req(seed: u64) -> GenerationRequest {
        GenerationRequest {
            style: Style::FineGrained,
            landmark_override: None,
            temperature: 1.0,
            max_tokens: None,
            seed,
        }
    }

    #[test]
    fn tiny_temperature_matches_greedy_ids() {
        let (corpus, vocab, model) = setup();
        let g = gen(&corpus, &vocab, &model);
        let feats = g.encode(&corpus.trajectories[0]).unwrap();
        let prompt = g.prompts.landmark_prompt(Style::HighLevel);
        let greedy = g.decode(&feats, &prompt, Sampling::Greedy, 8, 0).unwrap();
        let cold = g.decode(&feats, &prompt, Sampling::Temperature(1e-6), 8, 99).unwrap();
        assert_eq!(greedy, cold);
    }

    #[test]
    fn same_seed_same_record() {
        let (corpus, vocab, model) = setup();
        let g = gen(&corpus, &vocab, &model);
        let t = &corpus.trajectories[1];
        assert_eq!(g.generate(t, &req(5)).unwrap(), g.generate(t, &req(5)).unwrap());
    }

    #[test]
    fn override_is_used_verbatim() {
        let (corpus, vocab, model) = setup();
        let g = gen(&corpus, &vocab, &model);
        let t = &corpus.trajectories[0];
        let plain = g.generate(t, &req(2)).unwrap();
        assert_eq!(plain.landmarks_used, plain.landmarks_predicted);
        let mut r = req(2);
        r.landmark_override = Some(vec!["lamp".into()]);
        let rec = g.generate(t, &r).unwrap();
        assert_eq!(rec.landmarks_used, ["lamp"]);
        assert!(rec.flags.overridden);
        r.landmark_override = Some(vec![]);
        assert!(g.generate(t, &r).unwrap().landmarks_used.is_empty());
        r.landmark_override = Some(vec!["zeppelin".into()]);
        assert!(matches!(g.generate(t, &r), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn untrained_decoding_hits_the_budget() {
        let (corpus, vocab, model) = setup();
        let g = gen(&corpus, &vocab, &model);
        let d = g
            .generate_instruction(&corpus.trajectories[0], Style::FineGrained, &[], 1.0, 0)
            .unwrap();
        assert!(d.tokens.len() <= 8);
        assert_eq!(d.truncated, d.tokens.len() == 8);
    }

    #[test]
    fn bad_temperature_and_overlong_budget_are_rejected() {
        let (corpus, vocab, model) = setup();
        let g = gen(&corpus, &vocab, &model);
        let t = &corpus.trajectories[0];
        let mut r = req(0);
        r.temperature = 0.0;
        assert!(matches!(g.generate(t, &r), Err(Error::Config(_))));
        let mut r = req(0);
        r.max_tokens = Some(10_000);
        assert!(matches!(g.generate(t, &r), Err(Error::ContextOverflow { .. })));
    }
}
