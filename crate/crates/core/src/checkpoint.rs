//! Single-file checkpoint container.
//!
//! Layout: 8-byte magic, schema (u32 LE), payload length (u64 LE), the
//! bincode payload, then the SHA-256 of the payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::model::Model;
use crate::optim::AdamW;
use crate::params::ParamStore;
use crate::tensor::Mat;
use crate::vocab::Vocab;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"WAYFCKPT";
pub const CHECKPOINT_SCHEMA: u32 = 1;
const HEADER: usize = 8 + 4 + 8;
const DIGEST: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub group: String,
    pub trainable: bool,
    pub value: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// The run configuration as TOML.
    pub config: String,
    pub vocab: Vec<String>,
    pub step: u64,
    pub params: Vec<ParamRecord>,
    pub optimizer: Option<AdamW>,
}

impl Checkpoint {
    pub fn capture(cfg: &RunConfig, vocab: &Vocab, store: &ParamStore, opt: Option<&AdamW>, step: u64) -> Self {
        Checkpoint {
            config: cfg.to_toml_string(),
            vocab: vocab.words().to_vec(),
            step,
            params: store
                .entries()
                .iter()
                .map(|e| ParamRecord {
                    name: e.name.clone(),
                    group: e.group.clone(),
                    trainable: e.trainable,
                    value: e.value.clone(),
                })
                .collect(),
            optimizer: opt.cloned(),
        }
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::from_toml_str(&self.config)
    }

    /// Parameter names by group.
    pub fn groups(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for p in &self.params {
            out.entry(p.group.as_str()).or_default().push(p.name.as_str());
        }
        out
    }

    /// Copy stored values into a store with the same layout.
    pub fn restore_params(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (id, rec) in store.ids().collect::<Vec<_>>().into_iter().zip(&self.params) {
            let e = store.entry(id);
            if e.name != rec.name || e.group != rec.group || e.value.shape() != rec.value.shape() {
                return Err(Error::Data(format!(
                    "checkpoint parameter {} ({}, {:?}) does not match model parameter {} ({}, {:?})",
                    rec.name,
                    rec.group,
                    rec.value.shape(),
                    e.name,
                    e.group,
                    e.value.shape()
                )));
            }
            *store.get_mut(id) = rec.value.clone();
            store.set_trainable(id, rec.trainable);
        }
        Ok(())
    }

    /// Rebuild the configuration, vocabulary and model.
    pub fn load_model(&self) -> Result<(RunConfig, Vocab, Model)> {
        let cfg = self.config()?;
        let vocab = Vocab::from(self.vocab.clone());
        let mut model = Model::new(cfg.model_config(), vocab.len(), cfg.seed)?;
        self.restore_params(&mut model.store)?;
        Ok((cfg, vocab, model))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = bincode::serialize(self).expect("checkpoint serializes");
        let mut out = Vec::with_capacity(HEADER + payload.len() + DIGEST);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_SCHEMA.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER || &bytes[..8] != MAGIC {
            return Err(Error::Integrity("not a checkpoint file (bad magic or truncated header)".into()));
        }
        let schema = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if schema != CHECKPOINT_SCHEMA {
            return Err(Error::Migration {
                found: schema,
                expected: CHECKPOINT_SCHEMA,
            });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        if bytes.len() != HEADER + len + DIGEST {
            return Err(Error::Integrity(format!(
                "expected {} bytes, found {}",
                HEADER + len + DIGEST,
                bytes.len()
            )));
        }
        let payload = &bytes[HEADER..HEADER + len];
        if Sha256::digest(payload).as_slice() != &bytes[HEADER + len..] {
            return Err(Error::Integrity("payload digest mismatch".into()));
        }
        bincode::deserialize(payload).map_err(|e| Error::Integrity(format!("undecodable payload: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
