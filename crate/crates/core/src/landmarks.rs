//! Landmark extraction: nouns named by an instruction plus visually salient
//! objects scored along the trajectory.
//!
//! A visual candidate is an object seen in the action view at step `t`. Its
//! spatial score is `1 − Σ d(f[a_t], f[c])` over the other navigable views
//! `c` that also show it (`d` = cosine distance), and its temporal score is
//! the cosine distance between the mean features of steps `t` and `t + 1`.
//! Candidates with `spatial · temporal ≥ β` are kept.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::tensor::cosine;
use crate::world::Trajectory;
use crate::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Instruction nouns only.
    Linguistic,
    /// Instruction nouns plus spatially scored objects (temporal score fixed to 1).
    LinguisticSpatial,
    /// Instruction nouns plus objects passing the combined score.
    #[default]
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLandmark {
    pub name: String,
    pub step: usize,
    pub delta_tau: f64,
    pub delta_a: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub linguistic: Vec<String>,
    pub visual: Vec<ScoredLandmark>,
    pub full: Vec<String>,
}

fn push_unique(out: &mut Vec<String>, name: &str) {
    if !out.iter().any(|n| n == name) {
        out.push(name.to_string());
    }
}

/// Nouns of `text` in order of first appearance. `nouns` is the closed set
/// of object and room names.
pub fn extract_linguistic(text: &[String], nouns: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for tok in text {
        if nouns.contains(tok) {
            push_unique(&mut out, tok);
        }
    }
    out
}

fn mean_row(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows.first().map_or(0, Vec::len);
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// `δ_τ[t] = 1 − cos(mean_t, mean_{t+1})` for `t` in `0..T−1`.
/// `features` is indexed `[step][view][dim]`.
pub fn temporal_scores(features: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    if features.len() < 2 {
        return Err(Error::Data(format!(
            "temporal scores need at least 2 steps, got {}",
            features.len()
        )));
    }
    let pooled: Vec<Vec<f64>> = features.iter().map(|f| mean_row(f)).collect();
    (0..pooled.len() - 1)
        .map(|t| {
            let c = cosine(&pooled[t], &pooled[t + 1]).ok_or_else(|| {
                let bad = if pooled[t].iter().all(|v| *v == 0.0) { t } else { t + 1 };
                Error::DegenerateFeature(bad)
            })?;
            Ok(1.0 - c)
        })
        .collect()
}

/// Spatial score of every object visible in the action view, in view order.
/// STOP (any `action ≥ K`) yields nothing.
pub fn spatial_scores(
    features: &[Vec<f64>],
    visible: &[Vec<String>],
    action: usize,
    candidates: &[usize],
) -> Result<Vec<(String, f64)>> {
    if action >= features.len() {
        return Ok(Vec::new());
    }
    let mut out: Vec<(String, f64)> = Vec::new();
    for name in &visible[action] {
        if out.iter().any(|(n, _)| n == name) {
            continue;
        }
        let mut sum = 0.0;
        for &c in candidates {
            if c == action || !visible[c].contains(name) {
                continue;
            }
            let cos = cosine(&features[action], &features[c]).ok_or(Error::DegenerateFeature(c))?;
            sum += 1.0 - cos;
        }
        out.push((name.clone(), 1.0 - sum));
    }
    Ok(out)
}

/// Raw subview features of a trajectory, `[step][view][dim]`.
pub fn trajectory_features(traj: &Trajectory) -> Vec<Vec<Vec<f64>>> {
    traj.steps.iter().map(|s| s.panorama.subviews.clone()).collect()
}

/// Visual landmarks scoring at least `beta`, one per name (the highest
/// scoring occurrence), ordered by step and then by position in the view.
pub fn select_visual(
    traj: &Trajectory,
    features: &[Vec<Vec<f64>>],
    beta: f64,
    strategy: SelectionStrategy,
) -> Result<Vec<ScoredLandmark>> {
    if strategy == SelectionStrategy::Linguistic {
        return Ok(Vec::new());
    }
    if features.len() != traj.len() {
        return Err(Error::Shape {
            what: "trajectory features",
            expected: (traj.len(), traj.k),
            got: (features.len(), features.first().map_or(0, Vec::len)),
        });
    }
    let tau = temporal_scores(features)?;
    // (step, position in view) → best record, keyed by name.
    let mut best: HashMap<String, ((usize, usize), ScoredLandmark)> = HashMap::new();
    for (t, step) in traj.steps.iter().enumerate() {
        let delta_tau = match strategy {
            SelectionStrategy::LinguisticSpatial => 1.0,
            _ => tau[t.min(tau.len() - 1)],
        };
        let spatial = spatial_scores(&features[t], &step.panorama.visible_objects, step.action, &step.candidates)?;
        for (pos, (name, delta_a)) in spatial.into_iter().enumerate() {
            let delta = delta_a * delta_tau;
            if !(delta >= beta) {
                continue;
            }
            let rec = ScoredLandmark {
                name: name.clone(),
                step: t,
                delta_tau,
                delta_a,
                delta,
            };
            match best.get(&name) {
                Some((_, prev)) if prev.delta >= delta => {}
                _ => {
                    best.insert(name, ((t, pos), rec));
                }
            }
        }
    }
    let mut out: Vec<((usize, usize), ScoredLandmark)> = best.into_values().collect();
    out.sort_by_key(|(k, _)| *k);
    Ok(out.into_iter().map(|(_, r)| r).collect())
}

/// Union of names: linguistic first, then visual.
pub fn full_set(linguistic: &[String], visual: &[ScoredLandmark]) -> Vec<String> {
    let mut out = Vec::new();
    for n in linguistic {
        push_unique(&mut out, n);
    }
    for v in visual {
        push_unique(&mut out, &v.name);
    }
    out
}

pub fn landmark_set(
    text: &[String],
    nouns: &[String],
    traj: &Trajectory,
    beta: f64,
    strategy: SelectionStrategy,
) -> Result<LandmarkSet> {
    let linguistic = extract_linguistic(text, nouns);
    let visual = select_visual(traj, &trajectory_features(traj), beta, strategy)?;
    let full = full_set(&linguistic, &visual);
    Ok(LandmarkSet {
        linguistic,
        visual,
        full,
    })
}
