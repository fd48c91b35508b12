//! Word-level tokenizer over the closed synthetic vocabulary.
//!
//! Text is lowercased and split on whitespace; the punctuation characters
//! `. , : ; ? ! ( ) "` become tokens of their own. Metrics use the same
//! scheme.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";
/// Query token whose final hidden state predicts the backtrack action.
pub const ACT: &str = "<act>";
pub const UNK: &str = "<unk>";

pub const SPECIALS: [&str; 6] = [PAD, BOS, EOS, SEP, ACT, UNK];

const PUNCT: &[char] = &['.', ',', ':', ';', '?', '!', '(', ')', '"'];

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if PUNCT.contains(&ch) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.extend(ch.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

pub fn is_special(tok: &str) -> bool {
    SPECIALS.contains(&tok)
}

/// Drop special tokens, as done before scoring text.
pub fn strip_special(tokens: &[String]) -> Vec<String> {
    tokens.iter().filter(|t| !is_special(t)).cloned().collect()
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// Specials first, then every distinct word in sorted order.
    pub fn build<'a, I>(tokens: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let set: BTreeSet<&str> = tokens.into_iter().filter(|t| !is_special(t)).collect();
        let words: Vec<String> = SPECIALS.iter().copied().chain(set).map(String::from).collect();
        Vocab::from(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, tok: &str) -> Option<usize> {
        self.index.get(tok).copied()
    }

    pub fn special(&self, tok: &str) -> usize {
        self.id(tok).expect("special tokens are always present")
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| self.id(t).ok_or_else(|| Error::UnknownToken(t.clone())))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.words[i].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_is_split_and_case_folded() {
        assert_eq!(
            tokenize("Go North, past the Sofa. Landmarks: (a)"),
            vec!["go", "north", ",", "past", "the", "sofa", ".", "landmarks", ":", "(", "a", ")"]
        );
        assert_eq!(tokenize("pre-defined  x"), vec!["pre-defined", "x"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn vocab_round_trips_and_rejects_unknowns() {
        let v = Vocab::build(["b", "a", "b", "<eos>"]);
        assert_eq!(v.len(), SPECIALS.len() + 2);
        assert_eq!(v.id("a"), Some(SPECIALS.len()));
        let ids = v.encode(&["b".to_string(), EOS.to_string()]).unwrap();
        assert_eq!(v.decode(&ids), vec!["b", EOS]);
        assert!(matches!(v.encode(&["zzz".to_string()]), Err(Error::UnknownToken(_))));
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }

    #[test]
    fn stripping_removes_only_specials() {
        let toks: Vec<String> = [BOS, "go", PAD, "north", EOS].iter().map(|s| s.to_string()).collect();
        assert_eq!(strip_special(&toks), vec!["go", "north"]);
    }
}
