//! Stage functions shared by the CLI and the end-to-end pipeline.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{LandmarkConfig, RunConfig};
use crate::data::{Corpus, Split, TrajectoryRecord};
use crate::follower::{follow, Lexicon};
use crate::generator::{GenerationRecord, GenerationRequest, Generator};
use crate::landmarks::{landmark_set, ScoredLandmark};
use crate::metrics::{evaluate_corpus, EvalItem, MetricReport, METRIC_NAMES};
use crate::model::Model;
use crate::trainer::{step_seed, Task, Trainer};
use crate::vocab::{tokenize, Vocab};
use crate::world::{InstructionSample, Style, WorldGrid};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRecord {
    pub trajectory_id: String,
    pub style: Style,
    pub lambda_x: Vec<String>,
    pub lambda_v: Vec<ScoredLandmark>,
    pub beta: f64,
}

pub fn landmark_records(corpus: &Corpus, cfg: &LandmarkConfig) -> Result<Vec<LandmarkRecord>> {
    let nouns = corpus.lexicon().nouns();
    let mut out = Vec::with_capacity(corpus.samples.len());
    for s in &corpus.samples {
        let i = corpus
            .index_of(&s.trajectory_id)
            .ok_or_else(|| Error::Data(format!("unknown trajectory {}", s.trajectory_id)))?;
        let set = landmark_set(&s.text, &nouns, &corpus.trajectories[i], cfg.beta, cfg.strategy)?;
        out.push(LandmarkRecord {
            trajectory_id: s.trajectory_id.clone(),
            style: s.style,
            lambda_x: set.linguistic,
            lambda_v: set.visual,
            beta: cfg.beta,
        });
    }
    Ok(out)
}

/// Generate both styles for every trajectory of `split`.
pub fn generate_split(model: &Model, vocab: &Vocab, cfg: &RunConfig, corpus: &Corpus, split: Split) -> Result<Vec<GenerationRecord>> {
    let gen = Generator::new(model, vocab, corpus.lexicon().nouns(), cfg.generate.clone());
    let mut out = Vec::new();
    for (n, i) in corpus.indices(split).into_iter().enumerate() {
        for (s, style) in Style::ALL.into_iter().enumerate() {
            let req = GenerationRequest {
                style,
                landmark_override: None,
                temperature: cfg.generate.temperature(style),
                max_tokens: None,
                seed: step_seed(cfg.seed, 2 * n + s),
            };
            out.push(gen.generate(&corpus.trajectories[i], &req)?);
        }
    }
    Ok(out)
}

/// Pair each generation with the references of the same trajectory and style.
pub fn eval_items(samples: &[InstructionSample], preds: &[GenerationRecord]) -> Result<Vec<EvalItem>> {
    let refs: HashMap<(&str, Style), &InstructionSample> =
        samples.iter().map(|s| ((s.trajectory_id.as_str(), s.style), s)).collect();
    preds
        .iter()
        .map(|p| {
            let s = refs.get(&(p.trajectory_id.as_str(), p.style)).ok_or_else(|| {
                Error::Data(format!("no reference for {} ({})", p.trajectory_id, p.style))
            })?;
            Ok(EvalItem {
                id: format!("{}/{}", p.trajectory_id, p.style),
                candidate: tokenize(&p.instruction),
                references: s.reference_texts.clone(),
            })
        })
        .collect()
}

/// Keep only the requested metrics in the corpus table.
pub fn select_metrics(report: &mut MetricReport, names: &[String]) -> Result<()> {
    for n in names {
        if !METRIC_NAMES.contains(&n.as_str()) {
            return Err(Error::Config(format!("unknown metric {n:?} (known: {})", METRIC_NAMES.join(","))));
        }
    }
    report.corpus.retain(|k, _| names.contains(k));
    Ok(())
}

pub fn write_metric_report(report: &MetricReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let json = dir.join("metrics.json");
    fs::write(&json, serde_json::to_string_pretty(report)?)?;
    let csv = dir.join("samples.csv");
    let mut out = BufWriter::new(fs::File::create(&csv)?);
    writeln!(out, "id,bleu1,bleu4,rougeL,cider,meteorLite,references,empty_candidate")?;
    for s in &report.samples {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.id, s.bleu1, s.bleu4, s.rouge_l, s.cider, s.meteor_lite, s.references, s.empty_candidate
        )?;
    }
    out.flush()?;
    Ok(vec![json, csv])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowRecord {
    pub trajectory_id: String,
    pub style: Style,
    pub success: bool,
    pub spl: f64,
    pub parsed: bool,
    pub steps_taken: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowReport {
    pub samples: Vec<FollowRecord>,
    pub sr: f64,
    pub spl: f64,
    pub parse_rate: f64,
    /// Success with instructions paired to the wrong trajectories.
    pub shuffled_sr: f64,
    pub shuffled_spl: f64,
}

/// Worlds and trajectory paths, as stored in the corpus sidecar.
pub struct Scene<'a> {
    pub worlds: &'a [WorldGrid],
    pub records: &'a [TrajectoryRecord],
    pub lexicon: Lexicon,
    pub view_range: f64,
}

impl Scene<'_> {
    fn run(&self, traj: &TrajectoryRecord, instruction: &[String]) -> crate::follower::FollowResult {
        let world = &self.worlds[traj.world];
        let start = traj.path[0];
        let goal = *traj.path.last().expect("non-empty path");
        follow(world, instruction, start, goal, &self.lexicon, self.view_range)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Follow every prediction on its own trajectory, and again on a seeded
/// derangement of the trajectories.
pub fn follow_generations(scene: &Scene<'_>, preds: &[GenerationRecord], seed: u64) -> Result<FollowReport> {
    let index: HashMap<&str, usize> = scene.records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let mut own = Vec::with_capacity(preds.len());
    for p in preds {
        let &i = index
            .get(p.trajectory_id.as_str())
            .ok_or_else(|| Error::Data(format!("unknown trajectory {}", p.trajectory_id)))?;
        own.push(i);
    }
    let mut samples = Vec::with_capacity(preds.len());
    for (p, &i) in preds.iter().zip(&own) {
        let r = scene.run(&scene.records[i], &tokenize(&p.instruction));
        samples.push(FollowRecord {
            trajectory_id: p.trajectory_id.clone(),
            style: p.style,
            success: r.success,
            spl: r.spl,
            parsed: r.parsed,
            steps_taken: r.path.len().saturating_sub(1),
        });
    }
    let mut perm: Vec<usize> = (0..preds.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for k in 0..perm.len() {
        if own[perm[k]] == own[k] {
            let j = (k + 1) % perm.len();
            perm.swap(k, j);
        }
    }
    let mut shuffled = Vec::with_capacity(preds.len());
    for (k, p) in preds.iter().enumerate() {
        let r = scene.run(&scene.records[own[perm[k]]], &tokenize(&p.instruction));
        shuffled.push((r.success, r.spl));
    }
    Ok(FollowReport {
        sr: mean(samples.iter().map(|s| f64::from(u8::from(s.success)))),
        spl: mean(samples.iter().map(|s| s.spl)),
        parse_rate: mean(samples.iter().map(|s| f64::from(u8::from(s.parsed)))),
        shuffled_sr: mean(shuffled.iter().map(|s| f64::from(u8::from(s.0)))),
        shuffled_spl: mean(shuffled.iter().map(|s| s.1)),
        samples,
    })
}

pub fn write_follow_report(report: &FollowReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let json = dir.join("follow.json");
    fs::write(&json, serde_json::to_string_pretty(report)?)?;
    let csv = dir.join("follow.csv");
    let mut out = BufWriter::new(fs::File::create(&csv)?);
    writeln!(out, "trajectory_id,style,success,spl,parsed,steps_taken")?;
    for s in &report.samples {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.trajectory_id, s.style, s.success, s.spl, s.parsed, s.steps_taken
        )?;
    }
    out.flush()?;
    Ok(vec![json, csv])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    /// Path relative to the output directory → SHA-256 hex digest.
    pub files: BTreeMap<String, String>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

pub fn build_manifest(seed: u64, root: &Path, files: &[PathBuf]) -> Result<Manifest> {
    let mut out = BTreeMap::new();
    for f in files {
        let rel = f.strip_prefix(root).unwrap_or(f).to_string_lossy().replace('\\', "/");
        out.insert(rel, file_digest(f)?);
    }
    Ok(Manifest { seed, files: out })
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub manifest: Manifest,
    pub validation: BTreeMap<Task, f64>,
    pub metrics: MetricReport,
    pub follow: FollowReport,
}

/// `gen-data → landmarks → train → generate → evaluate → follow`, all under `out`.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineOutcome> {
    fs::create_dir_all(out)?;
    let mut files = Vec::new();

    let data_dir = out.join("data");
    let corpus = Corpus::generate(&cfg.world, cfg.seed).map_err(|e| e.in_stage("gen-data"))?;
    files.extend(corpus.write(&data_dir).map_err(|e| e.in_stage("gen-data"))?);
    log::info!("corpus: {} trajectories, {} instructions", corpus.trajectories.len(), corpus.samples.len());

    let lm_path = out.join("landmarks.jsonl");
    let lms = landmark_records(&corpus, &cfg.landmarks).map_err(|e| e.in_stage("landmarks"))?;
    write_jsonl(&lm_path, &lms).map_err(|e| e.in_stage("landmarks"))?;
    files.push(lm_path);

    let mut trainer = Trainer::new(cfg.clone(), &corpus).map_err(|e| e.in_stage("train"))?;
    let validation = trainer.run().map_err(|e| e.in_stage("train"))?;
    let ckpt_path = out.join("model.ckpt");
    trainer.checkpoint().save(&ckpt_path).map_err(|e| e.in_stage("train"))?;
    let metrics_path = out.join("metrics.csv");
    trainer.write_metrics(&metrics_path).map_err(|e| e.in_stage("train"))?;
    files.extend([ckpt_path, metrics_path]);

    let gens = generate_split(&trainer.model, &trainer.vocab, cfg, &corpus, Split::Val)
        .map_err(|e| e.in_stage("generate"))?;
    let gen_path = out.join("generations.jsonl");
    write_jsonl(&gen_path, &gens).map_err(|e| e.in_stage("generate"))?;
    files.push(gen_path);

    let items = eval_items(&corpus.samples, &gens).map_err(|e| e.in_stage("evaluate"))?;
    let report = evaluate_corpus(&items);
    files.extend(write_metric_report(&report, &out.join("eval")).map_err(|e| e.in_stage("evaluate"))?);

    let scene = Scene {
        worlds: &corpus.worlds,
        records: &corpus.records,
        lexicon: corpus.lexicon(),
        view_range: cfg.world.view_range,
    };
    let follow = follow_generations(&scene, &gens, cfg.seed).map_err(|e| e.in_stage("follow"))?;
    files.extend(write_follow_report(&follow, &out.join("follow")).map_err(|e| e.in_stage("follow"))?);

    let manifest = build_manifest(cfg.seed, out, &files)?;
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(PipelineOutcome {
        manifest,
        validation,
        metrics: report,
        follow,
    })
}
