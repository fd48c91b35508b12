use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wayfarer_core::checkpoint::Checkpoint;
use wayfarer_core::config::RunConfig;
use wayfarer_core::data::{Corpus, CorpusRecord, Sidecar, Split};
use wayfarer_core::generator::{GenerationRecord, GenerationRequest, Generator};
use wayfarer_core::landmarks::SelectionStrategy;
use wayfarer_core::metrics::evaluate_corpus;
use wayfarer_core::pipeline::{
    eval_items, follow_generations, generate_split, landmark_records, read_jsonl, run_pipeline, select_metrics,
    write_follow_report, write_jsonl, write_metric_report, Scene,
};
use wayfarer_core::trainer::Trainer;
use wayfarer_core::world::{InstructionSample, Style};
use wayfarer_core::{Error, Result};

#[derive(Parser)]
#[command(name = "wayfarer", version, about = "Landmark-guided navigation instruction generation")]
struct Cli {
    /// Run configuration (TOML); defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root for default artifact locations.
    #[arg(long, global = true, env = "WAYFARER_OUT", default_value = "runs")]
    root: PathBuf,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate worlds, trajectories and instructions.
    GenData(GenData),
    /// Score landmarks for every instruction of a corpus.
    Landmarks(LandmarksCmd),
    /// Train a model on a corpus.
    Train(TrainCmd),
    /// Generate instructions with a trained checkpoint.
    Generate(GenerateCmd),
    /// Score generated instructions against references.
    Evaluate(EvaluateCmd),
    /// Run the rule-based follower on generated instructions.
    Follow(FollowCmd),
    /// gen-data, landmarks, train, generate, evaluate and follow in one go.
    Pipeline(PipelineCmd),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    worlds: Option<usize>,
    #[arg(long)]
    paths_per_world: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LandmarksCmd {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<SelectionStrategy>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    /// Continue from a checkpoint (its embedded configuration is used).
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateCmd {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// One trajectory; without it every held-out trajectory is generated in both styles.
    #[arg(long)]
    trajectory_id: Option<String>,
    #[arg(long, value_parser = parse_style, default_value = "fine_grained")]
    style: Style,
    #[arg(long)]
    temperature: Option<f64>,
    /// Comma-separated landmark override.
    #[arg(long)]
    landmarks: Option<String>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// JSONL output for batch generation.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateCmd {
    #[arg(long)]
    pred: PathBuf,
    /// Corpus JSONL with references.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, default_value = "bleu1,bleu4,rougeL,cider,meteorLite")]
    metrics: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FollowCmd {
    /// Corpus sidecar with worlds and trajectories.
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineCmd {
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_style(s: &str) -> std::result::Result<Style, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_strategy(s: &str) -> std::result::Result<SelectionStrategy, String> {
    match s {
        "linguistic" => Ok(SelectionStrategy::Linguistic),
        "linguistic_spatial" => Ok(SelectionStrategy::LinguisticSpatial),
        "full" => Ok(SelectionStrategy::Full),
        other => Err(format!("unknown strategy {other:?} (linguistic, linguistic_spatial, full)")),
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn out_root(&self, cfg: &RunConfig) -> PathBuf {
        cfg.out_dir.clone().unwrap_or_else(|| self.root.clone())
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = cli.run_config()?;
    let root = cli.out_root(&cfg);
    let data_dir = |p: &Option<PathBuf>| p.clone().unwrap_or_else(|| root.join("data"));
    match &cli.cmd {
        Command::GenData(a) => {
            if let Some(n) = a.worlds {
                cfg.world.worlds = n;
            }
            if let Some(n) = a.paths_per_world {
                cfg.world.paths_per_world = n;
            }
            if let Some(k) = a.k {
                cfg.world.k = k;
            }
            let corpus = Corpus::generate(&cfg.world, cfg.seed)?;
            let dir = data_dir(&a.out);
            corpus.write(&dir)?;
            eprintln!(
                "wrote {} trajectories and {} instructions to {}",
                corpus.trajectories.len(),
                corpus.samples.len(),
                dir.display()
            );
        }
        Command::Landmarks(a) => {
            if let Some(b) = a.beta {
                cfg.landmarks.beta = b;
            }
            if let Some(s) = a.strategy {
                cfg.landmarks.strategy = s;
            }
            cfg.validate()?;
            let corpus = Corpus::load(&data_dir(&a.corpus))?;
            let recs = landmark_records(&corpus, &cfg.landmarks)?;
            let out = a.out.clone().unwrap_or_else(|| root.join("landmarks.jsonl"));
            write_jsonl(&out, &recs)?;
            eprintln!("wrote {} landmark records to {}", recs.len(), out.display());
        }
        Command::Train(a) => {
            let corpus = Corpus::load(&data_dir(&a.corpus))?;
            let mut trainer = match &a.resume {
                Some(p) => Trainer::resume(&Checkpoint::load(p)?, &corpus)?,
                None => Trainer::new(cfg, &corpus)?,
            };
            if let Some(s) = a.steps {
                trainer.cfg.train.steps = s;
            }
            let val = trainer.run()?;
            let out = a.out.clone().unwrap_or_else(|| root.clone());
            std::fs::create_dir_all(&out)?;
            trainer.checkpoint().save(&out.join("model.ckpt"))?;
            trainer.write_metrics(&out.join("metrics.csv"))?;
            let val: std::collections::BTreeMap<&str, f64> = val.iter().map(|(t, v)| (t.as_str(), *v)).collect();
            print_json(&val)?;
        }
        Command::Generate(a) => generate(cli, a, &root)?,
        Command::Evaluate(a) => {
            let preds: Vec<GenerationRecord> = read_jsonl(&a.pred)?;
            let refs: Vec<CorpusRecord> = read_jsonl(&a.reference)?;
            let refs: Vec<InstructionSample> = refs.into_iter().map(Into::into).collect();
            let mut report = evaluate_corpus(&eval_items(&refs, &preds)?);
            select_metrics(&mut report, &split_list(&a.metrics))?;
            let out = a.out.clone().unwrap_or_else(|| root.join("eval"));
            write_metric_report(&report, &out)?;
            print_json(&report.corpus)?;
        }
        Command::Follow(a) => {
            let sidecar = Sidecar::read(&a.world)?;
            let preds: Vec<GenerationRecord> = read_jsonl(&a.pred)?;
            let scene = Scene {
                worlds: &sidecar.worlds,
                records: &sidecar.trajectories,
                lexicon: sidecar.config.lexicon(),
                view_range: sidecar.config.view_range,
            };
            let report = follow_generations(&scene, &preds, cfg.seed)?;
            let out = a.out.clone().unwrap_or_else(|| root.join("follow"));
            write_follow_report(&report, &out)?;
            print_json(&serde_json::json!({
                "sr": report.sr,
                "spl": report.spl,
                "parse_rate": report.parse_rate,
                "shuffled_sr": report.shuffled_sr,
                "shuffled_spl": report.shuffled_spl,
            }))?;
        }
        Command::Pipeline(a) => {
            let out = a.out.clone().unwrap_or(root);
            let outcome = run_pipeline(&cfg, &out)?;
            print_json(&outcome.manifest)?;
        }
    }
    Ok(())
}

fn generate(cli: &Cli, a: &GenerateCmd, root: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt.clone().unwrap_or_else(|| root.join("model.ckpt")))?;
    let (mut cfg, vocab, model) = ckpt.load_model()?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.max_tokens {
        cfg.generate.max_instruction_tokens = n;
    }
    let corpus = Corpus::load(&a.corpus.clone().unwrap_or_else(|| root.join("data")))?;
    let Some(id) = &a.trajectory_id else {
        if let Some(t) = a.temperature {
            cfg.generate.temperature_fine = t;
            cfg.generate.temperature_high = t;
        }
        let recs = generate_split(&model, &vocab, &cfg, &corpus, Split::Val)?;
        let out = a.out.clone().unwrap_or_else(|| root.join("generations.jsonl"));
        write_jsonl(&out, &recs)?;
        eprintln!("wrote {} generations to {}", recs.len(), out.display());
        return Ok(());
    };
    let i = corpus
        .index_of(id)
        .ok_or_else(|| Error::Data(format!("unknown trajectory {id}")))?;
    let gen = Generator::new(&model, &vocab, corpus.lexicon().nouns(), cfg.generate.clone());
    let req = GenerationRequest {
        style: a.style,
        landmark_override: a.landmarks.as_deref().map(split_list),
        temperature: a.temperature.unwrap_or_else(|| cfg.generate.temperature(a.style)),
        max_tokens: a.max_tokens,
        seed: cfg.seed,
    };
    print_json(&gen.generate(&corpus.trajectories[i], &req)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
