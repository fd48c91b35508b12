//! Text similarity metrics against multiple references.
//!
//! Inputs are token lists produced by [`crate::vocab::tokenize`]; special
//! tokens are stripped before scoring. METEOR here is the exact-match
//! variant: no stemming, synonyms or paraphrase tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::vocab::strip_special;

pub const METRIC_NAMES: [&str; 5] = ["bleu1", "bleu4", "rougeL", "cider", "meteorLite"];

/// Recall weight relative to precision in ROUGE-L's F-measure.
pub const ROUGE_BETA: f64 = 1.2;

type Ngram<'a> = &'a [String];

fn ngram_counts(toks: &[String], n: usize) -> BTreeMap<Ngram<'_>, usize> {
    let mut m = BTreeMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and candidate totals for orders `1..=4`, plus the
/// candidate length and the shortest reference length.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn new(cand: &[String], refs: &[Vec<String>]) -> Self {
        let mut s = BleuStats {
            cand_len: cand.len(),
            ..Default::default()
        };
        // Shortest reference, so an extra reference can only relax the penalty.
        s.ref_len = refs.iter().map(Vec::len).min().unwrap_or(0);
        for n in 1..=4 {
            let cc = ngram_counts(cand, n);
            let mut max_ref: BTreeMap<Ngram<'_>, usize> = BTreeMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            s.totals[n - 1] = cand.len().saturating_sub(n - 1);
            s.matches[n - 1] = cc
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    fn add(&mut self, o: &BleuStats) {
        for i in 0..4 {
            self.matches[i] += o.matches[i];
            self.totals[i] += o.totals[i];
        }
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
    }

    pub fn score(&self, n: usize) -> f64 {
        assert!((1..=4).contains(&n), "BLEU order must be 1..=4");
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_p = 0.0;
        for i in 0..n {
            if self.matches[i] == 0 {
                return 0.0;
            }
            log_p += (self.matches[i] as f64 / self.totals[i] as f64).ln();
        }
        let bp = if self.cand_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        };
        bp * (log_p / n as f64).exp()
    }
}

pub fn bleu(cand: &[String], refs: &[Vec<String>], n: usize) -> f64 {
    BleuStats::new(cand, refs).score(n)
}

/// Corpus BLEU: statistics are summed before the precision and brevity
/// penalty are computed.
pub fn corpus_bleu(pairs: &[(Vec<String>, Vec<Vec<String>>)], n: usize) -> f64 {
    let mut total = BleuStats::default();
    for (c, r) in pairs {
        total.add(&BleuStats::new(c, r));
    }
    total.score(n)
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(cand: &[String], refs: &[Vec<String>]) -> f64 {
    refs.iter()
        .map(|r| {
            let l = lcs(cand, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / cand.len() as f64;
            let rc = l / r.len() as f64;
            let b2 = ROUGE_BETA * ROUGE_BETA;
            (1.0 + b2) * p * rc / (rc + b2 * p)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiderScores {
    pub corpus: f64,
    pub per_sample: Vec<f64>,
    /// Fewer than two samples: every document frequency saturates.
    pub degenerate: bool,
}

fn tfidf<'t>(toks: &'t [String], n: usize, df: &BTreeMap<Ngram<'_>, usize>, log_n: f64) -> BTreeMap<Ngram<'t>, f64> {
    ngram_counts(toks, n)
        .into_iter()
        .map(|(g, c)| {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            (g, c as f64 * (log_n - d.ln()))
        })
        .collect()
}

/// CIDEr with n = 1..4, document frequencies from the reference sets, and
/// the usual ×10 scale.
pub fn cider(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> CiderScores {
    assert_eq!(cands.len(), refs.len(), "one reference set per candidate");
    let n_docs = cands.len();
    let log_n = (n_docs.max(1) as f64).ln();
    let mut per_sample = vec![0.0; n_docs];
    for n in 1..=4 {
        let mut df: BTreeMap<Ngram<'_>, usize> = BTreeMap::new();
        for rs in refs {
            let mut seen: Vec<Ngram<'_>> = rs.iter().flat_map(|r| ngram_counts(r, n).into_keys()).collect();
            seen.sort();
            seen.dedup();
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (i, (c, rs)) in cands.iter().zip(refs).enumerate() {
            if rs.is_empty() {
                continue;
            }
            let vc = tfidf(c, n, &df, log_n);
            let nc = vc.values().map(|v| v * v).sum::<f64>().sqrt();
            let mut acc = 0.0;
            for r in rs {
                let vr = tfidf(r, n, &df, log_n);
                let nr = vr.values().map(|v| v * v).sum::<f64>().sqrt();
                if nc == 0.0 || nr == 0.0 {
                    continue;
                }
                let dotp: f64 = vc.iter().map(|(g, v)| v * vr.get(g).copied().unwrap_or(0.0)).sum();
                acc += dotp / (nc * nr);
            }
            per_sample[i] += acc / rs.len() as f64;
        }
    }
    for s in &mut per_sample {
        *s *= 10.0 / 4.0;
    }
    let corpus = if n_docs == 0 {
        0.0
    } else {
        per_sample.iter().sum::<f64>() / n_docs as f64
    };
    CiderScores {
        corpus,
        per_sample,
        degenerate: n_docs < 2,
    }
}

/// Exact-match alignment. Each candidate token takes the reference position
/// right after the previous match when that position holds the same word,
/// otherwise the earliest unused position holding it.
fn align(cand: &[String], reference: &[String]) -> Vec<Option<usize>> {
    let mut used = vec![false; reference.len()];
    let mut out = Vec::with_capacity(cand.len());
    let mut prev: Option<usize> = None;
    for w in cand {
        let next = prev.map(|p| p + 1).filter(|&j| j < reference.len() && !used[j] && &reference[j] == w);
        let pick = next.or_else(|| (0..reference.len()).find(|&j| !used[j] && &reference[j] == w));
        if let Some(j) = pick {
            used[j] = true;
        }
        out.push(pick);
        prev = pick;
    }
    out
}

fn meteor_single(cand: &[String], reference: &[String]) -> f64 {
    let al = align(cand, reference);
    let m = al.iter().flatten().count();
    if m == 0 {
        return 0.0;
    }
    let mut chunks = 0;
    let mut last: Option<usize> = None;
    for a in &al {
        match (*a, last) {
            (Some(j), Some(p)) if j == p + 1 => {}
            (Some(_), _) => chunks += 1,
            (None, _) => {}
        }
        last = *a;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    // Breaks between chunks rather than chunks, so one contiguous match costs nothing.
    let penalty = 0.5 * ((chunks - 1) as f64 / m as f64).powi(3);
    fmean * (1.0 - penalty)
}

pub fn meteor_lite(cand: &[String], refs: &[Vec<String>]) -> f64 {
    refs.iter().map(|r| meteor_single(cand, r)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub id: String,
    pub bleu1: f64,
    pub bleu4: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub cider: f64,
    #[serde(rename = "meteorLite")]
    pub meteor_lite: f64,
    pub references: usize,
    pub empty_candidate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: Vec<SampleScores>,
    /// Corpus BLEU uses pooled statistics; the other metrics are sample means.
    pub corpus: BTreeMap<String, f64>,
    pub references_used: usize,
    pub empty_candidates: usize,
    pub cider_degenerate: bool,
}

pub struct EvalItem {
    pub id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

pub fn evaluate_corpus(items: &[EvalItem]) -> MetricReport {
    let cands: Vec<Vec<String>> = items.iter().map(|i| strip_special(&i.candidate)).collect();
    let refs: Vec<Vec<Vec<String>>> = items
        .iter()
        .map(|i| i.references.iter().map(|r| strip_special(r)).collect())
        .collect();
    let cid = cider(&cands, &refs);
    let mut samples = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        let (c, r) = (&cands[i], &refs[i]);
        samples.push(SampleScores {
            id: it.id.clone(),
            bleu1: bleu(c, r, 1),
            bleu4: bleu(c, r, 4),
            rouge_l: rouge_l(c, r),
            cider: cid.per_sample[i],
            meteor_lite: meteor_lite(c, r),
            references: r.len(),
            empty_candidate: c.is_empty(),
        });
    }
    let pairs: Vec<(Vec<String>, Vec<Vec<String>>)> = cands.into_iter().zip(refs).collect();
    let n = samples.len().max(1) as f64;
    let mean = |f: fn(&SampleScores) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let mut corpus = BTreeMap::new();
    corpus.insert("bleu1".to_string(), corpus_bleu(&pairs, 1));
    corpus.insert("bleu4".to_string(), corpus_bleu(&pairs, 4));
    corpus.insert("rougeL".to_string(), mean(|s| s.rouge_l));
    corpus.insert("cider".to_string(), cid.corpus);
    corpus.insert("meteorLite".to_string(), mean(|s| s.meteor_lite));
    MetricReport {
        references_used: samples.iter().map(|s| s.references).sum(),
        empty_candidates: samples.iter().filter(|s| s.empty_candidate).count(),
        samples,
        corpus,
        cider_degenerate: cid.degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::tokenize;

    fn t(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn bleu_brevity_penalty_example() {
        let b = bleu(&t("go up the stairs"), &[t("go up the stairs then stop")], 1);
        assert!((b - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(bleu(&t("a b c d"), &[t("a b c d")], 4), 1.0);
        assert_eq!(bleu(&t("a b"), &[t("c d")], 1), 0.0);
        assert_eq!(bleu(&[], &[t("c d")], 1), 0.0);
    }

    #[test]
    fn bleu_clips_repeated_ngrams() {
        let b = bleu(&t("the the the the"), &[t("the cat"), t("the the dog")], 1);
        // Clip at 2 occurrences; shortest reference length 2, no penalty.
        assert!((b - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rouge_l_examples() {
        assert!((rouge_l(&t("a b c"), &[t("a x c")]) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_l(&t("a b c"), &[t("a b c")]), 1.0);
        assert_eq!(rouge_l(&t("a b"), &[t("c")]), 0.0);
    }

    #[test]
    fn cider_identity_and_disjoint() {
        let cands = vec![t("go north past the sofa"), t("a b c d e"), t("x y z w v")];
        let refs = vec![
            vec![t("go north past the sofa")],
            vec![t("q r s t u")],
            vec![t("k l m n o")],
        ];
        let c = cider(&cands, &refs);
        assert!((c.per_sample[0] - 10.0).abs() < 1e-12);
        assert_eq!(c.per_sample[1], 0.0);
        assert!(!c.degenerate);
        let single = cider(&cands[..1], &refs[..1]);
        assert!(single.degenerate);
    }

    #[test]
    fn meteor_identity_and_chunks() {
        assert_eq!(meteor_lite(&t("a b c d"), &[t("a b c d")]), 1.0);
        assert_eq!(meteor_lite(&t("a b"), &[t("c d")]), 0.0);
        // Two chunks, three matches: P = 1, R = 3/4.
        let s = meteor_lite(&t("a b d"), &[t("a b c d")]);
        let fmean = 10.0 * 0.75 / (0.75 + 9.0);
        assert!((s - fmean * (1.0 - 0.5 * (1.0f64 / 3.0).powi(3))).abs() < 1e-12);
    }

    #[test]
    fn report_strips_special_tokens() {
        let items = vec![
            EvalItem {
                id: "a".into(),
                candidate: t("<bos> go north <eos>"),
                references: vec![t("go north")],
            },
            EvalItem {
                id: "b".into(),
                candidate: t("go south"),
                references: vec![t("go south"), t("walk south")],
            },
        ];
        let r = evaluate_corpus(&items);
        assert_eq!(r.samples[0].bleu1, 1.0);
        assert_eq!(r.references_used, 3);
        assert_eq!(r.corpus["bleu1"], 1.0);
    }
}
