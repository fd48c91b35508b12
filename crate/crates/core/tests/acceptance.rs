//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; the process fails if any criterion does.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use wayfarer_core::checkpoint::Checkpoint;
use wayfarer_core::config::RunConfig;
use wayfarer_core::data::{Corpus, Split};
use wayfarer_core::follower::validates;
use wayfarer_core::generator::{GenerationRecord, GenerationRequest, Generator};
use wayfarer_core::gradcheck::{check_gradients, check_param_gradients, rand_mat};
use wayfarer_core::graph::Graph;
use wayfarer_core::landmarks::{select_visual, spatial_scores, temporal_scores, trajectory_features, SelectionStrategy};
use wayfarer_core::lm::{argmax, loss_autoregressive, LmConfig, TokenSequence};
use wayfarer_core::metrics::{bleu, cider, corpus_bleu, meteor_lite, rouge_l};
use wayfarer_core::model::{Model, ModelConfig};
use wayfarer_core::encoder::EncoderConfig;
use wayfarer_core::pipeline::{follow_generations, run_pipeline, Scene};
use wayfarer_core::stmt::StmtConfig;
use wayfarer_core::tensor::Mat;
use wayfarer_core::trainer::{Task, Trainer};
use wayfarer_core::vocab::tokenize;
use wayfarer_core::world::{PanoramaObservation, Style, Trajectory, TrajectoryStep};

/// Held-out instruction CE of the default pipeline (0.2541 on the first
/// passing run), padded by 1%.
const PINNED_INSTRUCTION_CE: f64 = 0.2567;
/// Controllability floors. The first passing run scored 1.000 / 0.967 on
/// style, 1.000 on override and 1.000 on edits; style keeps the stated
/// floor since 0.967 leaves only one generation of slack.
const PINNED_STYLE_RATE: f64 = 0.95;
const PINNED_OVERRIDE_RATE: f64 = 0.95;
const PINNED_CHANGE_RATE: f64 = 0.90;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn s(v: &str) -> String {
    v.to_string()
}

// ---------------------------------------------------------------- landmarks

fn ocos(a: &[f64], b: &[f64]) -> f64 {
    let (mut d, mut na, mut nb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        d += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    d / (na.sqrt() * nb.sqrt())
}

fn random_trajectory(rng: &mut ChaCha8Rng) -> Trajectory {
    let t_len = rng.gen_range(2..=4);
    let k = rng.gen_range(2..=6);
    let n_names = rng.gen_range(1..=8);
    let dim = rng.gen_range(2..=5);
    let names: Vec<String> = (0..n_names).map(|i| format!("obj{i}")).collect();
    let steps = (0..t_len)
        .map(|t| {
            let subviews: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..dim).map(|_| rng.gen_range(0.05..1.0)).collect())
                .collect();
            let visible: Vec<Vec<String>> = (0..k)
                .map(|_| names.iter().filter(|_| rng.gen_bool(0.35)).cloned().collect())
                .collect();
            let action = if t + 1 == t_len { k } else { rng.gen_range(0..k) };
            let candidates: Vec<usize> = (0..k).filter(|_| rng.gen_bool(0.5)).collect();
            TrajectoryStep {
                viewpoint: t,
                panorama: PanoramaObservation {
                    subviews,
                    subview_headings: vec![0.0; k],
                    visible_objects: visible,
                },
                action,
                candidates,
            }
        })
        .collect();
    Trajectory {
        id: "oracle".into(),
        world_seed: 0,
        k,
        steps,
    }
}

struct OracleLandmark {
    delta_tau: f64,
    delta_a: f64,
    delta: f64,
}

/// Enumerates every (step, action-view object) occurrence and keeps the best
/// score per name.
fn oracle_select(traj: &Trajectory, beta: f64) -> (Vec<f64>, HashMap<String, OracleLandmark>) {
    let pooled: Vec<Vec<f64>> = traj
        .steps
        .iter()
        .map(|st| {
            let v = &st.panorama.subviews;
            (0..v[0].len()).map(|d| v.iter().map(|r| r[d]).sum::<f64>() / v.len() as f64).collect()
        })
        .collect();
    let tau: Vec<f64> = (0..pooled.len() - 1).map(|t| 1.0 - ocos(&pooled[t], &pooled[t + 1])).collect();
    let mut best: HashMap<String, OracleLandmark> = HashMap::new();
    for (t, st) in traj.steps.iter().enumerate() {
        if st.action >= traj.k {
            continue;
        }
        let dt = if t < tau.len() { tau[t] } else { tau[tau.len() - 1] };
        let p = &st.panorama;
        let mut seen = BTreeSet::new();
        for name in &p.visible_objects[st.action] {
            if !seen.insert(name.clone()) {
                continue;
            }
            let mut total = 0.0;
            for &c in &st.candidates {
                if c != st.action && p.visible_objects[c].iter().any(|n| n == name) {
                    total += 1.0 - ocos(&p.subviews[st.action], &p.subviews[c]);
                }
            }
            let da = 1.0 - total;
            let d = da * dt;
            if d < beta {
                continue;
            }
            let better = best.get(name).map_or(true, |b| d > b.delta);
            if better {
                best.insert(
                    name.clone(),
                    OracleLandmark {
                        delta_tau: dt,
                        delta_a: da,
                        delta: d,
                    },
                );
            }
        }
    }
    (tau, best)
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let traj = random_trajectory(&mut rng);
        let beta = match case % 4 {
            0 => 0.0,
            1 => 0.25,
            2 => 0.5,
            _ => rng.gen_range(-0.5..1.0),
        };
        let feats = trajectory_features(&traj);
        let got = select_visual(&traj, &feats, beta, SelectionStrategy::Full).unwrap();
        let (tau, want) = oracle_select(&traj, beta);
        let got_tau = temporal_scores(&feats).unwrap();
        for (a, b) in got_tau.iter().zip(&tau) {
            worst = worst.max((a - b).abs());
        }
        let got_names: BTreeSet<&str> = got.iter().map(|l| l.name.as_str()).collect();
        let want_names: BTreeSet<&str> = want.keys().map(String::as_str).collect();
        if got_names != want_names || got.len() != got_names.len() {
            return verdict(false, format!("case {case}: selected {got_names:?}, oracle {want_names:?}"));
        }
        for l in &got {
            let o = &want[&l.name];
            worst = worst.max((l.delta_tau - o.delta_tau).abs());
            worst = worst.max((l.delta_a - o.delta_a).abs());
            worst = worst.max((l.delta - o.delta).abs());
        }
    }
    verdict(worst < 1e-9, format!("200 instances, max score error {worst:.2e}"))
}

fn two_step_trajectory(first: Vec<Vec<f64>>, second: Vec<Vec<f64>>, visible: Vec<Vec<String>>, candidates: Vec<usize>) -> Trajectory {
    let k = first.len();
    let pano = |subviews: Vec<Vec<f64>>| PanoramaObservation {
        subview_headings: vec![0.0; subviews.len()],
        visible_objects: visible.clone(),
        subviews,
    };
    Trajectory {
        id: "forced".into(),
        world_seed: 0,
        k,
        steps: vec![
            TrajectoryStep {
                viewpoint: 0,
                panorama: pano(first),
                action: 0,
                candidates,
            },
            TrajectoryStep {
                viewpoint: 1,
                panorama: pano(second),
                action: k,
                candidates: Vec::new(),
            },
        ],
    }
}

fn criterion_2() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;

    let p = vec![vec![0.3, 0.9], vec![1.0, 0.2], vec![0.5, 0.5]];
    let tau = temporal_scores(&[p.clone(), p.clone()]).unwrap();
    ok &= tau[0].abs() < 1e-12;
    notes.push(format!("identical panoramas tau={:.1e}", tau[0]));

    let unique = spatial_scores(
        &p,
        &[vec![s("lamp")], vec![s("sofa")], vec![s("sofa")]],
        0,
        &[0, 1, 2],
    )
    .unwrap();
    ok &= unique.len() == 1 && unique[0].1 == 1.0;
    notes.push(format!("unique landmark delta_a={}", unique[0].1));

    let feats = vec![
        vec![1.0, 0.0],
        vec![0.8, 0.6],
        vec![0.7, 0.51f64.sqrt()],
        vec![0.6, 0.8],
    ];
    let vis = vec![vec![s("x")]; 4];
    let shared = spatial_scores(&feats, &vis, 0, &[1, 2, 3]).unwrap();
    ok &= (shared[0].1 - 0.1).abs() < 1e-12;
    notes.push(format!("distances 0.2/0.3/0.4 delta_a={:.12}", shared[0].1));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut empty_at_inf = true;
    let mut nested = true;
    for case in 0..50 {
        let traj = if case == 0 {
            two_step_trajectory(
                feats.clone(),
                vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![0.2, 0.9], vec![0.9, 0.1]],
                vis.clone(),
                vec![1, 2, 3],
            )
        } else {
            random_trajectory(&mut rng)
        };
        let f = trajectory_features(&traj);
        empty_at_inf &= select_visual(&traj, &f, f64::INFINITY, SelectionStrategy::Full).unwrap().is_empty();
        let mut betas = vec![-1.0, 0.0, 0.25, 0.5, 1.0];
        betas.extend((0..5).map(|_| rng.gen_range(-1.0..1.0)));
        betas.sort_by(f64::total_cmp);
        let sets: Vec<BTreeSet<String>> = betas
            .iter()
            .map(|&b| {
                select_visual(&traj, &f, b, SelectionStrategy::Full)
                    .unwrap()
                    .into_iter()
                    .map(|l| l.name)
                    .collect()
            })
            .collect();
        nested &= sets.windows(2).all(|w| w[1].is_subset(&w[0]));
    }
    ok &= empty_at_inf && nested;
    notes.push(format!("beta=inf empty: {empty_at_inf}; nested over 50 sweeps: {nested}"));
    verdict(ok, notes.join("; "))
}

// ------------------------------------------------------------- model pieces

fn random_steps(rng: &mut ChaCha8Rng, t: usize, k: usize, d: usize) -> Vec<TrajectoryStep> {
    (0..t)
        .map(|i| TrajectoryStep {
            viewpoint: i,
            panorama: PanoramaObservation {
                subviews: (0..k).map(|_| rand_mat(rng, 1, d, 1.0).data).collect(),
                subview_headings: vec![0.0; k],
                visible_objects: vec![Vec::new(); k],
            },
            action: if i + 1 == t { k } else { rng.gen_range(0..k) },
            candidates: (0..k).collect(),
        })
        .collect()
}

fn criterion_3() -> Verdict {
    let cfg = RunConfig::default().model_config();
    let (k, d) = (cfg.encoder.k, cfg.encoder.d_raw);
    let model = Model::new(cfg, 60, 3).unwrap();
    let gates_zero = model
        .lm
        .adapters
        .iter()
        .flatten()
        .all(|a| model.store.get(a.gate).data[0] == 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut equal = 0;
    for _ in 0..100 {
        let t = rng.gen_range(2..=6);
        let steps = random_steps(&mut rng, t, k, d);
        let len = rng.gen_range(1..=24);
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..60)).collect();
        let mut g = Graph::new();
        let enc = model.encoder.encode_steps(&mut g, &model.store, &steps).unwrap();
        let with = model.lm.forward(&mut g, &model.store, &ids, Some(enc.tokens)).unwrap();
        let without = model.lm.forward(&mut g, &model.store, &ids, None).unwrap();
        if g.value(with).data == g.value(without).data {
            equal += 1;
        }
    }
    verdict(gates_zero && equal == 100, format!("gates zero: {gates_zero}; bit-identical logits on {equal}/100 inputs"))
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            k: 3,
            m: 2,
            d_raw: 5,
            d_i: 8,
            d_p: 16,
            n_blocks: 1,
            heads: 2,
            mlp_hidden: 16,
            t_max: 4,
        },
        lm: LmConfig {
            layers: 2,
            width: 16,
            heads: 2,
            mlp_hidden: 16,
            context_len: 16,
            adapter_layers: None,
            trainable_last: None,
        },
        stmt: StmtConfig {
            start_layer: Some(1),
            weight: 1.0,
        },
    }
}

fn criterion_4() -> Verdict {
    let mut model = Model::new(tiny_model_config(), 12, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for a in model.lm.adapters.clone().iter().flatten() {
        *model.store.get_mut(a.gate) = Mat::scalar(0.4);
    }
    for c in model.stmt.cross.clone().iter().flatten() {
        *model.store.get_mut(c.wo) = rand_mat(&mut rng, 16, 16, 0.3);
    }
    let steps = random_steps(&mut rng, 3, 3, 5);
    let seq = TokenSequence {
        ids: vec![1, 4, 7, 2, 9, 3, 5],
        mask: vec![false, false, false, true, true, true, true],
    };
    let stmt_seq = TokenSequence::unsupervised(vec![1, 6, 8, 2]);
    let m = model.clone();
    let ids: Vec<_> = model.store.ids().collect();
    let report = check_param_gradients(&mut model.store, &ids, |store| {
        let mm = Model {
            store: store.clone(),
            ..m.clone()
        };
        let mut g = Graph::new();
        let a = mm.lm_loss(&mut g, &steps, &seq).unwrap();
        let b = mm.stmt_loss(&mut g, &steps, &stmt_seq, 1).unwrap();
        let l = g.add(a, b);
        (g, l)
    });
    let logits = rand_mat(&mut rng, 7, 12, 1.0);
    let ce = check_gradients(&[logits], |g, v| loss_autoregressive(g, v[0], &seq).unwrap());
    let worst = report.max_rel_err.max(ce.max_rel_err);
    verdict(
        worst < 1e-4,
        format!(
            "{} parameter entries (encoder, adapters, lm, stmt) + {} logits, max rel err {worst:.2e}",
            report.checked, ce.checked
        ),
    )
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut leaked = 0usize;
    let mut silent = 0usize;
    let mut decomposition: f64 = 0.0;
    for _ in 0..20 {
        let len = rng.gen_range(3..12);
        let vocab = 9;
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
        let mut mask: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.5)).collect();
        mask[0] = false;
        mask[len - 1] = true;
        let seq = TokenSequence { ids, mask };
        let logits = rand_mat(&mut rng, len, vocab, 1.0);
        let grad_for = |seq: &TokenSequence| {
            let mut g = Graph::new();
            let x = g.input(logits.clone());
            let l = loss_autoregressive(&mut g, x, seq).unwrap();
            g.backward(l);
            g.grad(x)
        };
        let full = grad_for(&seq);
        // Row p predicts token p + 1.
        for p in 0..len - 1 {
            let row = &full.data[p * vocab..(p + 1) * vocab];
            if seq.mask[p + 1] {
                silent += usize::from(row.iter().all(|&v| v == 0.0));
            } else {
                leaked += row.iter().filter(|&&v| v != 0.0).count();
            }
        }
        leaked += full.data[(len - 1) * vocab..].iter().filter(|&&v| v != 0.0).count();
        let supervised: Vec<usize> = (1..len).filter(|&p| seq.mask[p]).collect();
        let mut sum = Mat::zeros(len, vocab);
        for &p in &supervised {
            let mut single = seq.clone();
            single.mask = (0..len).map(|q| q == p).collect();
            let gp = grad_for(&single);
            for (a, b) in sum.data.iter_mut().zip(&gp.data) {
                *a += b / supervised.len() as f64;
            }
        }
        for (a, b) in sum.data.iter().zip(&full.data) {
            decomposition = decomposition.max((a - b).abs());
        }
    }
    verdict(
        leaked == 0 && silent == 0 && decomposition < 1e-12,
        format!(
            "nonzero grads at unsupervised targets: {leaked}; dead supervised rows: {silent}; decomposition err {decomposition:.1e}"
        ),
    )
}

fn stmt_accuracy(t: &Trainer<'_>, corpus: &Corpus, pool: usize) -> f64 {
    let items = &t.pools[pool];
    let mut ok = 0;
    for it in items {
        let steps = &corpus.trajectories[it.traj].steps[..it.prefix_len];
        let mut g = Graph::new();
        let l = t.model.stmt_logits(&mut g, steps, &it.seq).unwrap();
        ok += usize::from(argmax(&g.value(l).data) == it.target.unwrap());
    }
    ok as f64 / items.len() as f64
}

fn criterion_6() -> Verdict {
    let cfg = RunConfig::from_toml_str(
        "seed = 17\n\
         [world]\nworlds = 2\npaths_per_world = 20\nval_fraction = 0.5\nk = 8\n\
         [train]\nsteps = 500\nbatch_size = 4\neval_every = 0\n\
         [train.ratios]\ninstruction_fine = 0.0\ninstruction_high = 0.0\nlandmark_fine = 0.0\nlandmark_high = 0.0\nstmt = 1.0\n",
    )
    .unwrap();
    let corpus = Corpus::generate(&cfg.world, cfg.seed).unwrap();
    let mut t = Trainer::new(cfg, &corpus).unwrap();
    let mut pools = t.pools.clone();
    if pools[4].len() < 50 {
        return verdict(false, format!("only {} backtrack samples in the training world", pools[4].len()));
    }
    pools[4].truncate(50);
    t.set_pools(pools).unwrap();
    let before = stmt_accuracy(&t, &corpus, 4);
    t.run().unwrap();
    let after = stmt_accuracy(&t, &corpus, 4);
    verdict(after >= 0.9, format!("backtrack accuracy {before:.3} -> {after:.3} on 50 samples after 500 steps"))
}

// ------------------------------------------------------------ trained model

struct Trained {
    cfg: RunConfig,
    corpus: Corpus,
    model: Model,
    vocab: wayfarer_core::vocab::Vocab,
    validation: std::collections::BTreeMap<Task, f64>,
    follow_sr: f64,
    follow_spl: f64,
    shuffled_sr: f64,
    gens: Vec<GenerationRecord>,
}

fn train_default(dir: &Path) -> Trained {
    let cfg = RunConfig::default();
    let outcome = run_pipeline(&cfg, dir).unwrap();
    let corpus = Corpus::load(&dir.join("data")).unwrap();
    let (cfg, vocab, model) = Checkpoint::load(&dir.join("model.ckpt")).unwrap().load_model().unwrap();
    let gens = wayfarer_core::pipeline::read_jsonl(&dir.join("generations.jsonl")).unwrap();
    Trained {
        cfg,
        corpus,
        model,
        vocab,
        validation: outcome.validation,
        follow_sr: outcome.follow.sr,
        follow_spl: outcome.follow.spl,
        shuffled_sr: outcome.follow.shuffled_sr,
        gens,
    }
}

fn criterion_7(tr: &Trained) -> Verdict {
    let with = tr.validation[&Task::Instruction];
    let mut cfg = tr.cfg.clone();
    cfg.stmt.weight = 0.0;
    let mut t = Trainer::new(cfg, &tr.corpus).unwrap();
    let without = t.run().unwrap()[&Task::Instruction];
    let pinned_ok = with < PINNED_INSTRUCTION_CE;
    let stmt_ok = with <= without * 1.02;
    verdict(
        pinned_ok && stmt_ok,
        format!(
            "held-out instruction CE {with:.4} (pinned < {PINNED_INSTRUCTION_CE:.4}); without backtrack task {without:.4}"
        ),
    )
}

fn criterion_8(tr: &Trained) -> Verdict {
    let lex = tr.corpus.lexicon();
    let objects = lex.objects.clone();
    let gen = Generator::new(&tr.model, &tr.vocab, lex.nouns(), tr.cfg.generate.clone());
    let val = tr.corpus.indices(Split::Val);
    let request = |style: Style, over: Option<Vec<String>>, seed: u64| GenerationRequest {
        style,
        landmark_override: over,
        temperature: tr.cfg.generate.temperature(style),
        max_tokens: None,
        seed,
    };

    let mut style_rates = Vec::new();
    for style in Style::ALL {
        let mut valid = 0;
        for (n, &i) in val.iter().enumerate() {
            let r = gen.generate(&tr.corpus.trajectories[i], &request(style, None, n as u64)).unwrap();
            valid += usize::from(validates(&tokenize(&r.instruction), style, &lex));
        }
        style_rates.push(valid as f64 / val.len() as f64);
    }

    let (mut applicable, mut appeared, mut pairs, mut changed) = (0, 0, 0, 0);
    for (n, &i) in val.iter().enumerate() {
        let traj = &tr.corpus.trajectories[i];
        let base = gen.generate(traj, &request(Style::FineGrained, None, n as u64)).unwrap();
        let seen: BTreeSet<&String> = traj
            .steps
            .iter()
            .flat_map(|st| st.panorama.visible_objects.iter().flatten())
            .collect();
        if let Some(x) = objects.iter().find(|o| seen.contains(o) && !base.landmarks_predicted.contains(o)) {
            applicable += 1;
            let r = gen
                .generate(traj, &request(Style::FineGrained, Some(vec![x.clone()]), n as u64))
                .unwrap();
            appeared += usize::from(tokenize(&r.instruction).contains(x));
        }
        let used = base.landmarks_used.clone();
        let Some(last) = used.last() else {
            continue;
        };
        let pool: Vec<&String> = if objects.contains(last) { objects.iter().collect() } else { lex.rooms.iter().collect() };
        if let Some(other) = pool.into_iter().find(|o| !used.contains(o)) {
            let mut edited = used.clone();
            *edited.last_mut().unwrap() = other.clone();
            let a = gen.generate(traj, &request(Style::FineGrained, Some(used.clone()), n as u64)).unwrap();
            let b = gen.generate(traj, &request(Style::FineGrained, Some(edited), n as u64)).unwrap();
            pairs += 1;
            changed += usize::from(a.instruction != b.instruction);
        }
    }
    let appear_rate = appeared as f64 / applicable.max(1) as f64;
    let change_rate = changed as f64 / pairs.max(1) as f64;
    let ok = style_rates.iter().all(|&r| r >= PINNED_STYLE_RATE)
        && applicable > 0
        && appear_rate >= PINNED_OVERRIDE_RATE
        && pairs > 0
        && change_rate >= PINNED_CHANGE_RATE;
    verdict(
        ok,
        format!(
            "style validity fine {:.3} high {:.3}; override present {appeared}/{applicable} ({appear_rate:.3}); edit changes output {changed}/{pairs} ({change_rate:.3})",
            style_rates[0], style_rates[1]
        ),
    )
}

// ------------------------------------------------------------------ metrics

#[derive(Deserialize)]
struct Pair {
    candidate: String,
    references: Vec<String>,
}

fn o_ngrams(toks: &[String], n: usize) -> HashMap<Vec<String>, f64> {
    let mut m = HashMap::new();
    for i in 0..(toks.len() + 1).saturating_sub(n) {
        *m.entry(toks[i..i + n].to_vec()).or_insert(0.0) += 1.0;
    }
    m
}

/// Sentence statistics: clipped matches and totals per order, candidate
/// length and the shortest reference length.
fn o_bleu_stats(c: &[String], refs: &[Vec<String>]) -> ([f64; 4], [f64; 4], f64, f64) {
    let mut matches = [0.0; 4];
    let mut totals = [0.0; 4];
    for n in 1..=4 {
        let cand = o_ngrams(c, n);
        for (g, cnt) in &cand {
            let best = refs.iter().map(|r| *o_ngrams(r, n).get(g).unwrap_or(&0.0)).fold(0.0, f64::max);
            matches[n - 1] += cnt.min(best);
        }
        totals[n - 1] = cand.values().sum();
    }
    let shortest = refs.iter().map(Vec::len).fold(usize::MAX, usize::min);
    (matches, totals, c.len() as f64, shortest as f64)
}

fn o_bleu_from(matches: [f64; 4], totals: [f64; 4], c: f64, r: f64, n: usize) -> f64 {
    if c == 0.0 || matches[..n].iter().any(|&m| m == 0.0) {
        return 0.0;
    }
    let geo: f64 = (0..n).map(|i| matches[i] / totals[i]).product::<f64>().powf(1.0 / n as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp().min(1.0) };
    bp * geo
}

fn o_rouge(c: &[String], refs: &[Vec<String>]) -> f64 {
    let mut best: f64 = 0.0;
    for r in refs {
        let mut t = vec![vec![0usize; r.len() + 1]; c.len() + 1];
        for i in 1..=c.len() {
            for j in 1..=r.len() {
                t[i][j] = if c[i - 1] == r[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
            }
        }
        let l = t[c.len()][r.len()] as f64;
        if l > 0.0 {
            let (p, rc) = (l / c.len() as f64, l / r.len() as f64);
            let b = 1.2f64 * 1.2;
            best = best.max((1.0 + b) * p * rc / (rc + b * p));
        }
    }
    best
}

fn o_cider(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Vec<f64> {
    let docs = cands.len() as f64;
    let mut out = vec![0.0; cands.len()];
    for n in 1..=4 {
        let mut df: HashMap<Vec<String>, f64> = HashMap::new();
        for rs in refs {
            let mut set: BTreeSet<Vec<String>> = BTreeSet::new();
            for r in rs {
                set.extend(o_ngrams(r, n).into_keys());
            }
            for g in set {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
        let vec_of = |t: &[String]| -> HashMap<Vec<String>, f64> {
            o_ngrams(t, n)
                .into_iter()
                .map(|(g, c)| {
                    let d = df.get(&g).copied().unwrap_or(1.0).max(1.0);
                    (g, c * (docs / d).ln())
                })
                .collect()
        };
        for i in 0..cands.len() {
            let vc = vec_of(&cands[i]);
            let nc: f64 = vc.values().map(|v| v * v).sum::<f64>().sqrt();
            let mut total = 0.0;
            for r in &refs[i] {
                let vr = vec_of(r);
                let nr: f64 = vr.values().map(|v| v * v).sum::<f64>().sqrt();
                if nc > 0.0 && nr > 0.0 {
                    total += vc.iter().map(|(g, v)| v * vr.get(g).unwrap_or(&0.0)).sum::<f64>() / (nc * nr);
                }
            }
            out[i] += 10.0 * total / refs[i].len() as f64 / 4.0;
        }
    }
    out
}

/// Exact-match METEOR: sequential-preferring greedy alignment, harmonic mean
/// weighted 9:1 towards recall, fragmentation penalty 0.5·((chunks−1)/m)³.
fn o_meteor(c: &[String], refs: &[Vec<String>]) -> f64 {
    let mut best: f64 = 0.0;
    for r in refs {
        let mut taken = vec![false; r.len()];
        let mut aligned: Vec<Option<usize>> = Vec::new();
        for w in c {
            let prev = aligned.last().copied().flatten();
            let mut pick = None;
            if let Some(p) = prev {
                if p + 1 < r.len() && !taken[p + 1] && r[p + 1] == *w {
                    pick = Some(p + 1);
                }
            }
            if pick.is_none() {
                pick = r.iter().enumerate().position(|(j, x)| !taken[j] && x == w);
            }
            if let Some(j) = pick {
                taken[j] = true;
            }
            aligned.push(pick);
        }
        let m = aligned.iter().filter(|a| a.is_some()).count() as f64;
        if m == 0.0 {
            continue;
        }
        let mut chunks = 0.0;
        for i in 0..aligned.len() {
            if let Some(j) = aligned[i] {
                let continues = i > 0 && aligned[i - 1] == Some(j.wrapping_sub(1)) && j > 0;
                if !continues {
                    chunks += 1.0;
                }
            }
        }
        let (p, rc) = (m / c.len() as f64, m / r.len() as f64);
        let f = p * rc / (0.9 * p + 0.1 * rc);
        best = best.max(f * (1.0 - 0.5 * ((chunks - 1.0) / m).powi(3)));
    }
    best
}

fn criterion_9(follow: &[(f64, f64)]) -> Verdict {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/metric_pairs.json");
    let pairs: Vec<Pair> = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let cands: Vec<Vec<String>> = pairs.iter().map(|p| tokenize(&p.candidate)).collect();
    let refs: Vec<Vec<Vec<String>>> = pairs
        .iter()
        .map(|p| p.references.iter().map(|r| tokenize(r)).collect())
        .collect();
    let mut worst: f64 = 0.0;
    let mut err = |a: f64, b: f64| worst = worst.max((a - b).abs());
    let (mut sm, mut st, mut sc, mut sr) = ([0.0; 4], [0.0; 4], 0.0, 0.0);
    for (c, r) in cands.iter().zip(&refs) {
        let (m, t, cl, rl) = o_bleu_stats(c, r);
        err(bleu(c, r, 1), o_bleu_from(m, t, cl, rl, 1));
        err(bleu(c, r, 4), o_bleu_from(m, t, cl, rl, 4));
        err(rouge_l(c, r), o_rouge(c, r));
        err(meteor_lite(c, r), o_meteor(c, r));
        for i in 0..4 {
            sm[i] += m[i];
            st[i] += t[i];
        }
        sc += cl;
        sr += rl;
    }
    let corpus_pairs: Vec<(Vec<String>, Vec<Vec<String>>)> = cands.iter().cloned().zip(refs.iter().cloned()).collect();
    err(corpus_bleu(&corpus_pairs, 1), o_bleu_from(sm, st, sc, sr, 1));
    err(corpus_bleu(&corpus_pairs, 4), o_bleu_from(sm, st, sc, sr, 4));
    let ours = cider(&cands, &refs);
    for (a, b) in ours.per_sample.iter().zip(o_cider(&cands, &refs)) {
        err(*a, b);
    }

    let ident_refs: Vec<Vec<Vec<String>>> = cands.iter().map(|c| vec![c.clone()]).collect();
    let mut identity_ok = true;
    for c in &cands {
        let one = [c.clone()];
        identity_ok &= (bleu(c, &one, 1) - 1.0).abs() < 1e-12;
        identity_ok &= c.len() < 4 || (bleu(c, &one, 4) - 1.0).abs() < 1e-12;
        identity_ok &= (rouge_l(c, &one) - 1.0).abs() < 1e-12;
        identity_ok &= (meteor_lite(c, &one) - 1.0).abs() < 1e-12;
    }
    // Distinct candidates, each its own single reference: every n-gram of a
    // document is rarer than the corpus, except those shared by all. A
    // sentence shorter than four tokens has no n-grams of the missing orders,
    // so it gets 10 · len / 4.
    let ident = cider(&cands, &ident_refs);
    let cider_identity = ident
        .per_sample
        .iter()
        .zip(&cands)
        .all(|(&v, c)| (v - 10.0 * c.len().min(4) as f64 / 4.0).abs() < 1e-9);
    let spl_ok = follow.iter().all(|&(sr, spl)| spl <= sr + 1e-12);
    verdict(
        worst < 1e-6 && identity_ok && cider_identity && spl_ok,
        format!(
            "max oracle deviation {worst:.1e} over 20 pairs; identity scores ok: {}; SPL <= SR on {} runs: {spl_ok}",
            identity_ok && cider_identity,
            follow.len()
        ),
    )
}

// ------------------------------------------------------------------ follower

fn criterion_10(tr: &Trained) -> (Verdict, (f64, f64)) {
    let gt: Vec<GenerationRecord> = tr
        .corpus
        .samples
        .iter()
        .filter(|s| s.style == Style::FineGrained)
        .map(|s| GenerationRecord {
            trajectory_id: s.trajectory_id.clone(),
            style: s.style,
            landmarks_predicted: Vec::new(),
            landmarks_used: Vec::new(),
            instruction: s.text.join(" "),
            flags: Default::default(),
        })
        .collect();
    let scene = Scene {
        worlds: &tr.corpus.worlds,
        records: &tr.corpus.records,
        lexicon: tr.corpus.lexicon(),
        view_range: tr.cfg.world.view_range,
    };
    let rep = follow_generations(&scene, &gt, tr.cfg.seed).unwrap();
    let ok = rep.sr == 1.0 && rep.spl == 1.0 && tr.follow_sr > tr.shuffled_sr;
    (
        verdict(
            ok,
            format!(
                "ground truth SR {:.3} SPL {:.3} on {} instructions; generated SR {:.3} vs shuffled {:.3} ({} generations)",
                rep.sr,
                rep.spl,
                gt.len(),
                tr.follow_sr,
                tr.shuffled_sr,
                tr.gens.len()
            ),
        ),
        (rep.sr, rep.spl),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Verdict, f64)> = Vec::new();
    let mut timed = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let t0 = Instant::now();
        let v = f();
        let secs = t0.elapsed().as_secs_f64();
        println!("{} criterion {n} ({name}): {} [{secs:.1}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v, secs));
    };
    timed(1, "landmark oracle", &mut criterion_1);
    timed(2, "forced landmark values", &mut criterion_2);
    timed(3, "zero-gate identity", &mut criterion_3);
    timed(4, "gradient checks", &mut criterion_4);
    timed(5, "supervision mask", &mut criterion_5);
    timed(6, "backtrack learnability", &mut criterion_6);

    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let trained = train_default(dir.path());
    println!("(default pipeline trained in {:.1}s)", t0.elapsed().as_secs_f64());
    let mut follow_runs = vec![(trained.follow_sr, trained.follow_spl)];
    timed(7, "end-to-end training", &mut || criterion_7(&trained));
    timed(8, "controllability", &mut || criterion_8(&trained));
    let (v10, gt) = criterion_10(&trained);
    follow_runs.push(gt);
    timed(9, "metric oracles", &mut || criterion_9(&follow_runs));
    timed(10, "follower duality", &mut || verdict(v10.pass, v10.detail.clone()));

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", results.len());
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
