//! Named parameter storage shared by every model component.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    /// Checkpoint group: `encoder`, `lm`, `adapters`, `stmt` or `embeddings`.
    pub group: String,
    pub value: Mat,
    pub trainable: bool,
    /// Whether decoupled weight decay applies (matrices only).
    pub decay: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, group: &str, name: &str, value: Mat) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        let decay = value.rows > 1 && value.cols > 1;
        self.entries.push(ParamEntry {
            name: name.to_string(),
            group: group.to_string(),
            value,
            trainable: true,
            decay,
        });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.data.len()).sum()
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Insert parameter `id` into `g` as a leaf.
    pub fn leaf(&self, g: &mut Graph, id: ParamId) -> Var {
        let e = &self.entries[id.0];
        g.param(id, e.value.clone(), e.trainable)
    }
}

/// Gradient accumulator aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads {
    bufs: Vec<Option<Mat>>,
}

impl Grads {
    pub fn new(store: &ParamStore) -> Self {
        Grads {
            bufs: vec![None; store.len()],
        }
    }

    pub fn accumulate(&mut self, g: &Graph) {
        for (id, grad) in g.param_grads() {
            match &mut self.bufs[id.0] {
                Some(b) => b.add_assign(grad),
                slot @ None => *slot = Some(grad.clone()),
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.bufs[id.0].as_ref()
    }

    pub fn scale(&mut self, s: f64) {
        for b in self.bufs.iter_mut().flatten() {
            b.scale(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.bufs.iter().flatten().map(Mat::sq_norm).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.bufs.iter().flatten().all(Mat::is_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.bufs
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.as_ref().map(|m| (ParamId(i), m)))
    }
}

pub fn normal_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("finite std");
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

pub fn ones(rows: usize, cols: usize) -> Mat {
    Mat::from_vec(rows, cols, vec![1.0; rows * cols])
}
