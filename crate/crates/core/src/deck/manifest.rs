use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deck::{Card, Deck, DeckMode};
use crate::error::{IoContext, Result};
use crate::gate::SignatureIndex;
use crate::nn::checkpoint;
use crate::prune::{Method, PruneScope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardEntry {
    pub checkpoint: PathBuf,
    pub augmentation_id: String,
    pub method: Method,
    pub scope: PruneScope,
}

/// JSON description of a deck. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeckManifest {
    pub cards: Vec<CardEntry>,
    #[serde(default)]
    pub gate_indexes: Vec<PathBuf>,
    pub mode: DeckMode,
}

impl DeckManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_str(
            &std::fs::read_to_string(path).at(path)?,
        )?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").at(path)
    }

    /// Load every checkpoint and index.
    pub fn build(&self, base: impl AsRef<Path>) -> Result<Deck> {
        let base = base.as_ref();
        let mut cards = Vec::with_capacity(self.cards.len());
        for c in &self.cards {
            let net = checkpoint::load(base.join(&c.checkpoint))?;
            cards.push(Card::new(net, c.augmentation_id.clone(), c.method, c.scope));
        }
        let gate = if self.gate_indexes.is_empty() {
            None
        } else {
            Some(
                self.gate_indexes
                    .iter()
                    .map(|p| SignatureIndex::load(base.join(p)))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        Deck::new(cards, gate)
    }
}
