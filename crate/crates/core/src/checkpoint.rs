//! Self-contained model checkpoints.
//!
//! A checkpoint carries everything `predict` needs apart from the embedding
//! table: the model config, the vocabulary, the definition texts and every
//! parameter tensor by name. The table is pinned by a content hash.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dare::EmbeddingTable;
use crate::ingest::Vocab;
use crate::model::{DefinitionBank, DesyrModel, ModelConfig};
use crate::nn::Tensor;
use crate::util::{read_to_string, write_atomic};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "desyr-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelConfig,
    pub gamma: f64,
    pub seed: u64,
    pub split: usize,
    pub max_len: usize,
    pub pos_backoff: bool,
    pub vocab: Vocab,
    pub definitions: Option<DefinitionBank>,
    pub embeddings_hash: String,
    pub params: BTreeMap<String, Tensor>,
}

/// sha256 over the text serialization of a table.
pub fn table_hash(table: &EmbeddingTable) -> String {
    Sha256::digest(table.to_text().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Checkpoint {
    pub fn from_model(
        model: &DesyrModel,
        gamma: f64,
        seed: u64,
        split: usize,
        max_len: usize,
        pos_backoff: bool,
        vocab: &Vocab,
        definitions: Option<&DefinitionBank>,
        table: &EmbeddingTable,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            model: model.config.clone(),
            gamma,
            seed,
            split,
            max_len,
            pos_backoff,
            vocab: vocab.clone(),
            definitions: definitions.cloned(),
            embeddings_hash: table_hash(table),
            params: model.store.to_named(),
        }
    }

    /// Rebuild the model. Fails on a format or parameter-shape mismatch.
    pub fn restore(&self) -> Result<DesyrModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Schema(format!("unsupported checkpoint format {:?}", self.format)));
        }
        let (nc, nn) = self
            .definitions
            .as_ref()
            .map(|d| (d.claim.len(), d.nonclaim.len()))
            .unwrap_or((0, 0));
        let mut model = DesyrModel::new(self.model.clone(), nc, nn, self.seed)?;
        model.store.load_named(&self.params)?;
        Ok(model)
    }

    /// Refuse a table other than the one the model was trained with.
    pub fn check_table(&self, table: &EmbeddingTable) -> Result<()> {
        let h = table_hash(table);
        if h != self.embeddings_hash {
            return Err(Error::Config(format!(
                "embedding table hash {h} does not match checkpoint {}",
                self.embeddings_hash
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c: Checkpoint = serde_json::from_str(&read_to_string(path)?)?;
        c.vocab.rebuild_index();
        Ok(c)
    }
}
