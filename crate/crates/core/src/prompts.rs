//! Prompt templates for landmark prediction, instruction generation and the
//! backtrack task.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::vocab::tokenize;
use crate::world::Style;
use crate::{Error, Result};

pub const LANDMARK_SLOT: &str = "<landmarks>";
pub const VIEWPOINT_SLOT: &str = "<viewpoints>";
/// Filler for an empty landmark list.
pub const NO_LANDMARKS: &str = "none";

const FINE_LANDMARK: &str =
    "You are given a sequence of views of a path. Please extract critical landmarks in the path.";
const FINE_INSTRUCTION: &str = "You are given a sequence of views of a path in an indoor environment. \
Please describe the path according to the given landmarks in detail for an intelligent agent to follow. \
Landmarks: <landmarks>.";
const HIGH_LANDMARK: &str = "You are given a sequence of views of a path in an indoor environment. \
Please extract several critical landmarks in the path for generating a brief high-level target-oriented instruction.";
const HIGH_INSTRUCTION: &str = "You are given a sequence of views of a path in an indoor environment and \
critical landmarks for a brief high-level target-oriented instruction. Please generate the indicated \
high-level target-oriented instruction briefly for an intelligent agent to follow. Landmarks: <landmarks>.";
const BACKTRACK: &str = "You are an intelligent embodied agent that navigates in an indoor environment. \
Your task is to move among the static viewpoints (positions) of a pre-defined graph of the environment. \
You are given several candidate views. You are also given a sequence of panoramic views showing previous \
steps you have taken and the previous viewpoint you should return to. Now you should make an action by \
selecting a candidate view to return to the previous viewpoint. Candidate Views: <viewpoints>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRegistry {
    landmark: BTreeMap<Style, String>,
    instruction: BTreeMap<Style, String>,
    backtrack: String,
}

impl Default for PromptRegistry {
    fn default() -> Self {
        PromptRegistry::new(
            [
                (Style::FineGrained, FINE_LANDMARK.to_string()),
                (Style::HighLevel, HIGH_LANDMARK.to_string()),
            ]
            .into(),
            [
                (Style::FineGrained, FINE_INSTRUCTION.to_string()),
                (Style::HighLevel, HIGH_INSTRUCTION.to_string()),
            ]
            .into(),
            BACKTRACK.to_string(),
        )
        .expect("built-in prompts are well formed")
    }
}

fn slot_count(template: &str, slot: &str) -> usize {
    template.matches(slot).count()
}

/// Tokenize a template, replacing its single `slot` with `fill`.
fn fill(template: &str, slot: &str, fill: &[String]) -> Vec<String> {
    let (head, tail) = template.split_once(slot).expect("validated slot");
    let mut out = tokenize(head);
    out.extend_from_slice(fill);
    out.extend(tokenize(tail));
    out
}

impl PromptRegistry {
    pub fn new(
        landmark: BTreeMap<Style, String>,
        instruction: BTreeMap<Style, String>,
        backtrack: String,
    ) -> Result<Self> {
        for style in Style::ALL {
            if !landmark.contains_key(&style) || !instruction.contains_key(&style) {
                return Err(Error::Config(format!("missing prompts for style {style}")));
            }
            let n = slot_count(&instruction[&style], LANDMARK_SLOT);
            if n != 1 {
                return Err(Error::Config(format!(
                    "instruction prompt for {style} has {n} landmark slots, expected exactly one"
                )));
            }
        }
        if slot_count(&backtrack, VIEWPOINT_SLOT) != 1 {
            return Err(Error::Config("backtrack prompt needs one viewpoint slot".into()));
        }
        Ok(PromptRegistry {
            landmark,
            instruction,
            backtrack,
        })
    }

    pub fn landmark_prompt(&self, style: Style) -> Vec<String> {
        tokenize(&self.landmark[&style])
    }

    /// Landmarks are serialized as `a , b , c`; an empty list becomes `none`.
    pub fn instruction_prompt(&self, style: Style, landmarks: &[String]) -> Vec<String> {
        let names = if landmarks.is_empty() {
            vec![NO_LANDMARKS.to_string()]
        } else {
            landmark_tokens(landmarks)
        };
        fill(&self.instruction[&style], LANDMARK_SLOT, &names)
    }

    /// Candidate subview indices fill the viewpoint slot as number words.
    pub fn backtrack_prompt(&self, candidates: &[usize]) -> Vec<String> {
        let mut views = Vec::new();
        for (i, c) in candidates.iter().enumerate() {
            if i > 0 {
                views.push(",".to_string());
            }
            views.push(c.to_string());
        }
        fill(&self.backtrack, VIEWPOINT_SLOT, &views)
    }

    /// Every token any prompt can produce, excluding slot fillers.
    pub fn template_tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in Style::ALL {
            out.extend(self.landmark_prompt(s));
            out.extend(self.instruction_prompt(s, &[]));
        }
        out.extend(self.backtrack_prompt(&[]));
        out
    }
}

/// `["sofa", "lamp"]` → `sofa , lamp`.
pub fn landmark_tokens(names: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, n) in names.iter().enumerate() {
        if i > 0 {
            out.push(",".to_string());
        }
        out.extend(tokenize(n));
    }
    out
}

/// Inverse of [`landmark_tokens`]: split on commas, keep names found in `known`.
/// Returns the kept names and the dropped pieces.
pub fn parse_landmarks(tokens: &[String], known: &[String]) -> (Vec<String>, Vec<String>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for piece in tokens.split(|t| t == ",") {
        if piece.is_empty() {
            continue;
        }
        let name = piece.join(" ");
        if known.contains(&name) {
            if !kept.contains(&name) {
                kept.push(name);
            }
        } else {
            dropped.push(name);
        }
    }
    (kept, dropped)
}
