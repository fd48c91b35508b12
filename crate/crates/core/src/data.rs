//! Corpus generation and persistence: a JSON sidecar with worlds and
//! trajectory paths, and a JSONL file with one instruction per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::follower::Lexicon;
use crate::vocab::{detokenize, tokenize};
use crate::world::{
    default_vocab, generate_world, sample_trajectory, synthesize_instruction, trajectory_from_path,
    InstructionSample, Style, Trajectory, ViewConfig, WorldGrid, ROOM_TYPES,
};
use crate::{Error, Result};

pub const CORPUS_SCHEMA: u32 = 1;
pub const SIDECAR_FILE: &str = "worlds.json";
pub const CORPUS_FILE: &str = "corpus.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub worlds: usize,
    pub paths_per_world: usize,
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub d_raw: usize,
    pub view_range: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of worlds held out for validation.
    pub val_fraction: f64,
    pub objects: Vec<String>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            worlds: 40,
            paths_per_world: 15,
            width: 8,
            height: 8,
            k: 8,
            d_raw: 32,
            view_range: 2.5,
            min_len: 3,
            max_len: 6,
            val_fraction: 0.1,
            objects: default_vocab(),
        }
    }
}

impl WorldConfig {
    pub fn view(&self) -> ViewConfig {
        ViewConfig {
            k: self.k,
            d_raw: self.d_raw,
            view_range: self.view_range,
        }
    }

    pub fn lexicon(&self) -> Lexicon {
        Lexicon {
            objects: self.objects.clone(),
            rooms: ROOM_TYPES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.worlds < 2 {
            return Err(Error::Config("world.worlds must be at least 2".into()));
        }
        if self.paths_per_world == 0 {
            return Err(Error::Config("world.paths_per_world must be positive".into()));
        }
        if self.k < 2 || self.d_raw == 0 {
            return Err(Error::Config("world.k must be ≥ 2 and world.d_raw positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("world.val_fraction must lie in (0, 1)".into()));
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return Err(Error::InvalidLengthRange {
                min: self.min_len,
                max: self.max_len,
            });
        }
        if self.objects.is_empty() {
            return Err(Error::EmptyVocab);
        }
        Ok(())
    }

    /// Number of held-out worlds; the last worlds form the validation split.
    pub fn val_worlds(&self) -> usize {
        ((self.worlds as f64 * self.val_fraction).round() as usize).clamp(1, self.worlds - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub world: usize,
    pub path: Vec<usize>,
    pub split: Split,
}

/// Contents of the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema: u32,
    pub seed: u64,
    pub config: WorldConfig,
    pub worlds: Vec<WorldGrid>,
    pub trajectories: Vec<TrajectoryRecord>,
}

impl Sidecar {
    pub fn read(path: &Path) -> Result<Sidecar> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        let sidecar: Sidecar =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if sidecar.schema != CORPUS_SCHEMA {
            return Err(Error::Data(format!(
                "corpus schema {} is not supported (expected {CORPUS_SCHEMA})",
                sidecar.schema
            )));
        }
        Ok(sidecar)
    }
}

/// One JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub trajectory_id: String,
    pub style: Style,
    pub text: String,
    pub landmarks: Vec<String>,
    pub references: Vec<String>,
}

impl From<&InstructionSample> for CorpusRecord {
    fn from(s: &InstructionSample) -> Self {
        CorpusRecord {
            trajectory_id: s.trajectory_id.clone(),
            style: s.style,
            text: detokenize(&s.text),
            landmarks: s.linguistic_landmarks.clone(),
            references: s.reference_texts.iter().map(|r| detokenize(r)).collect(),
        }
    }
}

impl From<CorpusRecord> for InstructionSample {
    fn from(r: CorpusRecord) -> Self {
        InstructionSample {
            trajectory_id: r.trajectory_id,
            style: r.style,
            text: tokenize(&r.text),
            linguistic_landmarks: r.landmarks,
            reference_texts: r.references.iter().map(|t| tokenize(t)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub config: WorldConfig,
    pub worlds: Vec<WorldGrid>,
    pub records: Vec<TrajectoryRecord>,
    /// Rendered trajectories, aligned with `records`.
    pub trajectories: Vec<Trajectory>,
    pub samples: Vec<InstructionSample>,
}

fn world_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(i as u64)
}

impl Corpus {
    pub fn generate(cfg: &WorldConfig, seed: u64) -> Result<Corpus> {
        cfg.validate()?;
        let view = cfg.view();
        let n_val = cfg.val_worlds();
        let mut worlds = Vec::with_capacity(cfg.worlds);
        let mut records = Vec::new();
        let mut trajectories = Vec::new();
        let mut samples = Vec::new();
        for w in 0..cfg.worlds {
            let world = generate_world(world_seed(seed, w), cfg.width, cfg.height, &cfg.objects)?;
            let split = if w + n_val >= cfg.worlds { Split::Val } else { Split::Train };
            for j in 0..cfg.paths_per_world {
                let traj = sample_trajectory(&world, j as u64, (cfg.min_len, cfg.max_len), &view)?;
                for style in Style::ALL {
                    samples.push(synthesize_instruction(&traj, &world, style, seed));
                }
                records.push(TrajectoryRecord {
                    id: traj.id.clone(),
                    world: w,
                    path: traj.viewpoints(),
                    split,
                });
                trajectories.push(traj);
            }
            worlds.push(world);
        }
        Ok(Corpus {
            seed,
            config: cfg.clone(),
            worlds,
            records,
            trajectories,
            samples,
        })
    }

    pub fn sidecar_path(dir: &Path) -> PathBuf {
        dir.join(SIDECAR_FILE)
    }

    pub fn jsonl_path(dir: &Path) -> PathBuf {
        dir.join(CORPUS_FILE)
    }

    /// Write the sidecar and the JSONL corpus; returns both paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let sidecar = Sidecar {
            schema: CORPUS_SCHEMA,
            seed: self.seed,
            config: self.config.clone(),
            worlds: self.worlds.clone(),
            trajectories: self.records.clone(),
        };
        let sp = Self::sidecar_path(dir);
        fs::write(&sp, serde_json::to_string(&sidecar)?)?;
        let jp = Self::jsonl_path(dir);
        let mut out = BufWriter::new(fs::File::create(&jp)?);
        for s in &self.samples {
            serde_json::to_writer(&mut out, &CorpusRecord::from(s))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(vec![sp, jp])
    }

    /// Load a corpus directory, re-rendering every trajectory from its path.
    pub fn load(dir: &Path) -> Result<Corpus> {
        let sidecar = Sidecar::read(&Self::sidecar_path(dir))?;
        let view = sidecar.config.view();
        let mut trajectories = Vec::with_capacity(sidecar.trajectories.len());
        for r in &sidecar.trajectories {
            let world = sidecar
                .worlds
                .get(r.world)
                .ok_or_else(|| Error::Data(format!("trajectory {} names missing world {}", r.id, r.world)))?;
            trajectories.push(trajectory_from_path(world, &r.id, &r.path, &view)?);
        }
        let jp = Self::jsonl_path(dir);
        let file = fs::File::open(&jp).map_err(|e| Error::Data(format!("cannot read {}: {e}", jp.display())))?;
        let mut samples = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CorpusRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", jp.display(), n + 1)))?;
            samples.push(rec.into());
        }
        let corpus = Corpus {
            seed: sidecar.seed,
            config: sidecar.config,
            worlds: sidecar.worlds,
            records: sidecar.trajectories,
            trajectories,
            samples,
        };
        for s in &corpus.samples {
            if corpus.index_of(&s.trajectory_id).is_none() {
                return Err(Error::Data(format!("instruction for unknown trajectory {}", s.trajectory_id)));
            }
        }
        Ok(corpus)
    }

    pub fn index_of(&self, trajectory_id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == trajectory_id)
    }

    pub fn world_of(&self, traj: usize) -> &WorldGrid {
        &self.worlds[self.records[traj].world]
    }

    pub fn split_of(&self, traj: usize) -> Split {
        self.records[traj].split
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }

    /// Instruction for a trajectory in a style, if the corpus has one.
    pub fn sample(&self, traj: usize, style: Style) -> Option<&InstructionSample> {
        let id = &self.records[traj].id;
        self.samples.iter().find(|s| &s.trajectory_id == id && s.style == style)
    }

    pub fn lexicon(&self) -> Lexicon {
        self.config.lexicon()
    }
}
