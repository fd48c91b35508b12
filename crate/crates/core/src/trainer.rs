//! Training samples, the task/style mixing stream and the optimization loop.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{MixRatios, RunConfig};
use crate::data::{Corpus, Split};
use crate::graph::Graph;
use crate::landmarks::landmark_set;
use crate::lm::TokenSequence;
use crate::model::Model;
use crate::optim::{clip_global_norm, lr_at, AdamW};
use crate::params::Grads;
use crate::prompts::{landmark_tokens, PromptRegistry, NO_LANDMARKS};
use crate::stmt::{backtrack_target, build_stmt_input};
use crate::vocab::{Vocab, BOS, EOS, SEP};
use crate::world::Style;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Instruction,
    Landmark,
    Stmt,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Instruction => "instruction",
            Task::Landmark => "landmark",
            Task::Stmt => "stmt",
        }
    }
}

/// Pools in the order of [`MixRatios::as_array`].
pub const POOLS: [(Task, Option<Style>); 5] = [
    (Task::Instruction, Some(Style::FineGrained)),
    (Task::Instruction, Some(Style::HighLevel)),
    (Task::Landmark, Some(Style::FineGrained)),
    (Task::Landmark, Some(Style::HighLevel)),
    (Task::Stmt, None),
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub task: Task,
    pub style: Option<Style>,
    /// Trajectory index in the corpus.
    pub traj: usize,
    /// Leading steps the item conditions on.
    pub prefix_len: usize,
    pub seq: TokenSequence,
    /// Backtrack target for STMT items.
    pub target: Option<usize>,
}

/// `[BOS] prompt [SEP] completion [EOS]`, supervised on completion and EOS.
fn prompt_completion(vocab: &Vocab, prompt: &[String], completion: &[String]) -> Result<TokenSequence> {
    let mut ids = vec![vocab.special(BOS)];
    ids.extend(vocab.encode(prompt)?);
    ids.push(vocab.special(SEP));
    let start = ids.len();
    ids.extend(vocab.encode(completion)?);
    ids.push(vocab.special(EOS));
    let mut mask = vec![false; ids.len()];
    mask[start..].iter_mut().for_each(|m| *m = true);
    Ok(TokenSequence { ids, mask })
}

/// Landmark-prediction sample; `None` (with a warning) for an empty set.
pub fn build_landmark_sample(
    prompts: &PromptRegistry,
    vocab: &Vocab,
    landmarks: &[String],
    style: Style,
) -> Result<Option<TokenSequence>> {
    if landmarks.is_empty() {
        log::warn!("skipping landmark sample with no landmarks ({style})");
        return Ok(None);
    }
    prompt_completion(vocab, &prompts.landmark_prompt(style), &landmark_tokens(landmarks)).map(Some)
}

/// Instruction sample conditioned on the instruction's own landmarks.
pub fn build_instruction_sample(
    prompts: &PromptRegistry,
    vocab: &Vocab,
    landmarks: &[String],
    text: &[String],
    style: Style,
) -> Result<TokenSequence> {
    if text.is_empty() {
        return Err(Error::EmptyInstruction);
    }
    prompt_completion(vocab, &prompts.instruction_prompt(style, landmarks), text)
}

/// Every token the corpus, prompts and landmark lists can produce.
pub fn build_vocab(corpus: &Corpus, prompts: &PromptRegistry) -> Vocab {
    let mut toks: Vec<String> = prompts.template_tokens();
    toks.push(NO_LANDMARKS.into());
    toks.push(",".into());
    toks.extend((0..corpus.config.k).map(|k| k.to_string()));
    toks.extend(corpus.lexicon().nouns());
    for s in &corpus.samples {
        toks.extend(s.text.iter().cloned());
        for r in &s.reference_texts {
            toks.extend(r.iter().cloned());
        }
    }
    Vocab::build(toks.iter().map(String::as_str))
}

/// Items for one split, grouped by pool.
pub fn build_pools(
    corpus: &Corpus,
    cfg: &RunConfig,
    prompts: &PromptRegistry,
    vocab: &Vocab,
    split: Split,
) -> Result<[Vec<TrainItem>; 5]> {
    let nouns = corpus.lexicon().nouns();
    let mut pools: [Vec<TrainItem>; 5] = Default::default();
    for i in corpus.indices(split) {
        let traj = &corpus.trajectories[i];
        for (p, style) in Style::ALL.into_iter().enumerate() {
            let Some(sample) = corpus.sample(i, style) else {
                continue;
            };
            let set = landmark_set(&sample.text, &nouns, traj, cfg.landmarks.beta, cfg.landmarks.strategy)?;
            pools[p].push(TrainItem {
                task: Task::Instruction,
                style: Some(style),
                traj: i,
                prefix_len: traj.len(),
                seq: build_instruction_sample(prompts, vocab, &set.linguistic, &sample.text, style)?,
                target: None,
            });
            if let Some(seq) = build_landmark_sample(prompts, vocab, &set.full, style)? {
                pools[2 + p].push(TrainItem {
                    task: Task::Landmark,
                    style: Some(style),
                    traj: i,
                    prefix_len: traj.len(),
                    seq,
                    target: None,
                });
            }
        }
        let world = corpus.world_of(i);
        for t in 1..traj.len() {
            pools[4].push(TrainItem {
                task: Task::Stmt,
                style: None,
                traj: i,
                prefix_len: t + 1,
                seq: build_stmt_input(&traj.steps[..=t], prompts, vocab)?,
                target: Some(backtrack_target(world, traj, t)?),
            });
        }
    }
    Ok(pools)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the RNG used at `step`, so any step can be replayed in isolation.
pub fn step_seed(seed: u64, step: usize) -> u64 {
    splitmix(splitmix(seed) ^ step as u64)
}

/// Seeded interleaving of the sample pools.
#[derive(Debug, Clone)]
pub struct MixStream {
    cumulative: [f64; 5],
    sizes: [usize; 5],
    seed: u64,
}

impl MixStream {
    pub fn new(ratios: &MixRatios, sizes: [usize; 5], seed: u64) -> Result<Self> {
        ratios.validate()?;
        let r = ratios.as_array();
        let mut cumulative = [0.0; 5];
        let mut acc = 0.0;
        for i in 0..5 {
            if r[i] > 0.0 && sizes[i] == 0 {
                let (task, style) = POOLS[i];
                let name = style.map_or(task.as_str().to_string(), |s| format!("{} ({s})", task.as_str()));
                return Err(Error::Config(format!("no {name} samples but its mixing ratio is {}", r[i])));
            }
            acc += r[i];
            cumulative[i] = acc;
        }
        Ok(MixStream { cumulative, sizes, seed })
    }

    /// `(pool, item)` pairs for one step.
    pub fn draw(&self, step: usize, batch: usize) -> Vec<(usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed(self.seed, step));
        let total = self.cumulative[4];
        (0..batch)
            .map(|_| {
                let u = rng.gen::<f64>() * total;
                let pool = (0..5)
                    .find(|&i| u < self.cumulative[i] && self.sizes[i] > 0)
                    .unwrap_or_else(|| (0..5).rev().find(|&i| self.sizes[i] > 0).expect("a non-empty pool"));
                (pool, rng.gen_range(0..self.sizes[pool]))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub task: Task,
    pub split: Split,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub lr: f64,
    pub grad_norm: f64,
    pub losses: Vec<(Task, f64)>,
}

pub struct Trainer<'a> {
    pub cfg: RunConfig,
    pub corpus: &'a Corpus,
    pub prompts: PromptRegistry,
    pub vocab: Vocab,
    pub pools: [Vec<TrainItem>; 5],
    pub val: BTreeMap<Task, Vec<TrainItem>>,
    pub model: Model,
    pub opt: AdamW,
    /// Steps completed.
    pub step: usize,
    pub metrics: Vec<MetricRow>,
    stream: MixStream,
    lr_scale: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: RunConfig, corpus: &'a Corpus) -> Result<Self> {
        cfg.validate()?;
        if corpus.config.k != cfg.world.k || corpus.config.d_raw != cfg.world.d_raw {
            return Err(Error::Config(format!(
                "corpus was generated with k={}, d_raw={} but the config expects k={}, d_raw={}",
                corpus.config.k, corpus.config.d_raw, cfg.world.k, cfg.world.d_raw
            )));
        }
        let prompts = PromptRegistry::default();
        let vocab = build_vocab(corpus, &prompts);
        let pools = build_pools(corpus, &cfg, &prompts, &vocab, Split::Train)?;
        let val_pools = build_pools(corpus, &cfg, &prompts, &vocab, Split::Val)?;
        let mut val = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for (i, pool) in val_pools.into_iter().enumerate() {
            val.entry(POOLS[i].0).or_insert_with(Vec::new).extend(pool);
        }
        for items in val.values_mut() {
            items.shuffle(&mut rng);
            if cfg.train.eval_samples > 0 {
                items.truncate(cfg.train.eval_samples);
            }
        }
        let sizes = std::array::from_fn(|i| pools[i].len());
        let stream = MixStream::new(&cfg.train.ratios, sizes, cfg.seed)?;
        let model = Model::new(cfg.model_config(), vocab.len(), cfg.seed)?;
        let opt = AdamW::new(&model.store, cfg.train.weight_decay);
        let lr_scale = model
            .store
            .entries()
            .iter()
            .map(|e| cfg.train.lr_scale.get(&e.group).copied().unwrap_or(1.0))
            .collect();
        Ok(Trainer {
            cfg,
            corpus,
            prompts,
            vocab,
            pools,
            val,
            model,
            opt,
            step: 0,
            metrics: Vec::new(),
            stream,
            lr_scale,
        })
    }

    /// Continue from a checkpoint; the run configuration comes from the checkpoint.
    pub fn resume(ckpt: &Checkpoint, corpus: &'a Corpus) -> Result<Self> {
        let cfg = ckpt.config()?;
        let mut t = Trainer::new(cfg, corpus)?;
        if t.vocab.words() != ckpt.vocab.as_slice() {
            return Err(Error::Data("checkpoint vocabulary does not match the corpus".into()));
        }
        ckpt.restore_params(&mut t.model.store)?;
        t.opt = ckpt
            .optimizer
            .clone()
            .ok_or_else(|| Error::Data("checkpoint has no optimizer state".into()))?;
        t.step = ckpt.step as usize;
        Ok(t)
    }

    /// Swap in new training pools and rebuild the mixing stream over them.
    pub fn set_pools(&mut self, pools: [Vec<TrainItem>; 5]) -> Result<()> {
        let sizes = std::array::from_fn(|i| pools[i].len());
        self.stream = MixStream::new(&self.cfg.train.ratios, sizes, self.cfg.seed)?;
        self.pools = pools;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.cfg, &self.vocab, &self.model.store, Some(&self.opt), self.step as u64)
    }

    fn item_loss(&self, g: &mut Graph, item: &TrainItem) -> Result<crate::graph::Var> {
        let steps = &self.corpus.trajectories[item.traj].steps[..item.prefix_len];
        match item.task {
            Task::Stmt => {
                let target = item.target.expect("stmt items carry a target");
                let loss = self.model.stmt_loss(g, steps, &item.seq, target)?;
                Ok(g.scale(loss, self.cfg.stmt.weight))
            }
            _ => self.model.lm_loss(g, steps, &item.seq),
        }
    }

    /// Unweighted loss of one item without building gradients.
    pub fn eval_item(&self, item: &TrainItem) -> Result<f64> {
        let mut g = Graph::new();
        let steps = &self.corpus.trajectories[item.traj].steps[..item.prefix_len];
        let loss = match item.task {
            Task::Stmt => self.model.stmt_loss(&mut g, steps, &item.seq, item.target.unwrap_or(0))?,
            _ => self.model.lm_loss(&mut g, steps, &item.seq)?,
        };
        Ok(g.value(loss).data[0])
    }

    /// One optimizer step over a freshly drawn batch.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let step = self.step;
        let draws = self.stream.draw(step, self.cfg.train.batch_size);
        let mut grads = Grads::new(&self.model.store);
        let mut losses = Vec::new();
        for (pool, idx) in draws {
            let item = &self.pools[pool][idx];
            if item.task == Task::Stmt && self.cfg.stmt.weight == 0.0 {
                continue;
            }
            let mut g = Graph::new();
            let loss = self.item_loss(&mut g, item)?;
            let value = g.value(loss).data[0];
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    task: item.task.as_str().into(),
                    grad_norm: grads.global_norm(),
                });
            }
            g.backward(loss);
            grads.accumulate(&g);
            losses.push((item.task, value));
        }
        grads.scale(1.0 / self.cfg.train.batch_size as f64);
        let grad_norm = clip_global_norm(&mut grads, self.cfg.train.grad_clip);
        if !grad_norm.is_finite() {
            let task = losses.last().map_or("none", |(t, _)| t.as_str());
            return Err(Error::NonFinite {
                step,
                task: task.into(),
                grad_norm,
            });
        }
        let t = &self.cfg.train;
        let lr = lr_at(step, t.steps, t.warmup, t.lr, t.lr_floor);
        self.opt.step_scaled(&mut self.model.store, &grads, lr, &self.lr_scale);
        for &(task, loss) in &losses {
            self.metrics.push(MetricRow {
                step,
                task,
                split: Split::Train,
                loss,
            });
        }
        self.step += 1;
        Ok(StepReport {
            step,
            lr,
            grad_norm,
            losses,
        })
    }

    /// Mean held-out loss per task.
    pub fn validate(&self) -> Result<BTreeMap<Task, f64>> {
        let mut out = BTreeMap::new();
        for (&task, items) in &self.val {
            if items.is_empty() {
                continue;
            }
            let mut sum = 0.0;
            for item in items {
                sum += self.eval_item(item)?;
            }
            out.insert(task, sum / items.len() as f64);
        }
        Ok(out)
    }

    fn log_validation(&mut self) -> Result<BTreeMap<Task, f64>> {
        let v = self.validate()?;
        let step = self.step.saturating_sub(1);
        for (&task, &loss) in &v {
            self.metrics.push(MetricRow {
                step,
                task,
                split: Split::Val,
                loss,
            });
        }
        Ok(v)
    }

    /// Train until `cfg.train.steps`, validating periodically and at the end.
    pub fn run(&mut self) -> Result<BTreeMap<Task, f64>> {
        let total = self.cfg.train.steps;
        let every = self.cfg.train.eval_every;
        let mut last = BTreeMap::new();
        while self.step < total {
            let r = self.train_step()?;
            if every > 0 && self.step % every == 0 && self.step < total {
                last = self.log_validation()?;
                log::info!("step {} lr {:.2e} grad {:.3} val {:?}", r.step, r.lr, r.grad_norm, last);
            }
        }
        if every > 0 || last.is_empty() {
            last = self.log_validation()?;
        }
        Ok(last)
    }

    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(out, "step,task,split,loss")?;
        for r in &self.metrics {
            let split = match r.split {
                Split::Train => "train",
                Split::Val => "val",
            };
            writeln!(out, "{},{},{},{}", r.step, r.task.as_str(), split, r.loss)?;
        }
        out.flush()?;
        Ok(())
    }
}
