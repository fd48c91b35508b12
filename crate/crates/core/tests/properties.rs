use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wayfarer_core::checkpoint::Checkpoint;
use wayfarer_core::config::{MixRatios, RunConfig};
use wayfarer_core::follower::{follow, Lexicon};
use wayfarer_core::gradcheck::rand_mat;
use wayfarer_core::graph::Graph;
use wayfarer_core::landmarks::{select_visual, trajectory_features, SelectionStrategy};
use wayfarer_core::lm::{loss_autoregressive, TokenSequence};
use wayfarer_core::metrics::{bleu, meteor_lite, rouge_l};
use wayfarer_core::model::Model;
use wayfarer_core::trainer::MixStream;
use wayfarer_core::vocab::{detokenize, tokenize, Vocab};
use wayfarer_core::world::{
    default_vocab, generate_world, sample_trajectory, synthesize_instruction, Style, ViewConfig,
};

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["go", "left", "the", "lamp", "stop", ",", "into"]), 0..12)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn extra_reference_never_lowers_scores(cand in words(), refs in prop::collection::vec(words(), 1..4), extra in words()) {
        let mut more = refs.clone();
        more.push(extra);
        for n in [1, 4] {
            prop_assert!(bleu(&cand, &more, n) >= bleu(&cand, &refs, n));
        }
        prop_assert!(rouge_l(&cand, &more) >= rouge_l(&cand, &refs));
        prop_assert!(meteor_lite(&cand, &more) >= meteor_lite(&cand, &refs));
    }

    #[test]
    fn scores_stay_in_range(cand in words(), refs in prop::collection::vec(words(), 1..4)) {
        for v in [bleu(&cand, &refs, 1), bleu(&cand, &refs, 4), rouge_l(&cand, &refs), meteor_lite(&cand, &refs)] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "{v}");
        }
    }

    #[test]
    fn tokenization_is_stable(text in "[a-zA-Z ,.]{0,40}") {
        let once = tokenize(&text);
        prop_assert_eq!(tokenize(&detokenize(&once)), once);
    }

    #[test]
    fn higher_threshold_selects_a_subset(seed in any::<u64>(), b1 in -0.5f64..1.0, b2 in -0.5f64..1.0) {
        let world = generate_world(seed, 8, 8, &default_vocab()).unwrap();
        let traj = sample_trajectory(&world, seed, (2, 6), &ViewConfig::toy());
        prop_assume!(traj.is_ok());
        let traj = traj.unwrap();
        let f = trajectory_features(&traj);
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let names = |b| -> Vec<String> {
            select_visual(&traj, &f, b, SelectionStrategy::Full).unwrap().into_iter().map(|l| l.name).collect()
        };
        let (wide, narrow) = (names(lo), names(hi));
        prop_assert!(narrow.iter().all(|n| wide.contains(n)));
    }

    #[test]
    fn unsupervised_targets_get_no_gradient(seed in any::<u64>(), len in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..6)).collect();
        let mut mask: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.5)).collect();
        mask[len - 1] = true;
        let seq = TokenSequence { ids, mask };
        let mut g = Graph::new();
        let x = g.input(rand_mat(&mut rng, len, 6, 2.0));
        let l = loss_autoregressive(&mut g, x, &seq).unwrap();
        g.backward(l);
        let grad = g.grad(x);
        for p in 0..len {
            let row = &grad.data[p * 6..(p + 1) * 6];
            let supervised = p + 1 < len && seq.mask[p + 1];
            prop_assert_eq!(row.iter().any(|&v| v != 0.0), supervised);
        }
    }

    #[test]
    fn mixing_follows_ratios(w in prop::array::uniform5(0.0f64..1.0), seed in any::<u64>()) {
        let total: f64 = w.iter().sum();
        prop_assume!(total > 0.1);
        let r = w.map(|x| x / total);
        let ratios = MixRatios {
            instruction_fine: r[0],
            instruction_high: r[1],
            landmark_fine: r[2],
            landmark_high: r[3],
            stmt: 1.0 - r[0] - r[1] - r[2] - r[3],
        };
        let stream = MixStream::new(&ratios, [7, 7, 5, 5, 11], seed).unwrap();
        let mut counts = [0usize; 5];
        let steps = 3000;
        for step in 0..steps {
            for (pool, item) in stream.draw(step, 2) {
                prop_assert!(item < [7, 7, 5, 5, 11][pool]);
                counts[pool] += 1;
            }
        }
        for (c, want) in counts.iter().zip(ratios.as_array()) {
            prop_assert!((*c as f64 / (2 * steps) as f64 - want).abs() < 0.03, "{counts:?} vs {ratios:?}");
        }
    }

    #[test]
    fn follower_never_reports_spl_above_success(seed in any::<u64>(), noise in words()) {
        let world = generate_world(seed, 8, 8, &default_vocab()).unwrap();
        let traj = sample_trajectory(&world, seed, (3, 6), &ViewConfig::toy());
        prop_assume!(traj.is_ok());
        let traj = traj.unwrap();
        let lex = Lexicon::default();
        let (start, goal) = (traj.start(), traj.goal());
        let truth = synthesize_instruction(&traj, &world, Style::FineGrained, seed);
        let r = follow(&world, &truth.text, start, goal, &lex, 2.5);
        prop_assert!(r.success && (r.spl - 1.0).abs() < 1e-12, "{:?}", truth.text);
        let r = follow(&world, &noise, start, goal, &lex, 2.5);
        prop_assert!(r.spl <= f64::from(u8::from(r.success)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_roundtrip_is_exact(seed in any::<u64>(), step in any::<u64>()) {
        let mut cfg = RunConfig::default();
        cfg.lm.width = 16;
        cfg.lm.heads = 2;
        cfg.lm.layers = 2;
        cfg.lm.context_len = 32;
        cfg.encoder.d_i = 8;
        cfg.encoder.heads = 2;
        let vocab = Vocab::build(["go", "north", "lamp"].into_iter());
        let model = Model::new(cfg.model_config(), vocab.len(), seed).unwrap();
        let ckpt = Checkpoint::capture(&cfg, &vocab, &model.store, None, step);
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        let mut fresh = Model::new(cfg.model_config(), vocab.len(), seed ^ 1).unwrap();
        back.restore_params(&mut fresh.store).unwrap();
        for (a, b) in model.store.entries().iter().zip(fresh.store.entries()) {
            prop_assert_eq!(&a.name, &b.name);
            let same = a.value.data.iter().zip(&b.value.data).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same, "{}", a.name);
        }
        prop_assert_eq!(back.config().unwrap(), cfg);
        prop_assert_eq!(back.step, step);
    }
}
