//! Ensembles of compressed networks and their memory footprint.

mod manifest;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::{select, GateDecision, SignatureIndex};
use crate::nn::loss::argmax;
use crate::nn::{Dataset, Network};
use crate::prune::{Method, PruneScope};
use crate::tensor::Tensor;

pub use manifest::{CardEntry, DeckManifest};

/// Bits needed to store the surviving weights (biases are not counted).
pub fn memory_bits(net: &Network) -> u64 {
    net.prunable()
        .map(|(_, p)| p.surviving() as u64 * p.precision.bits_per_weight())
        .sum()
}

/// Megabits as reported in tables: `bits / 1e6`.
pub fn mbit(bits: u64) -> f64 {
    bits as f64 / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compression {
    pub method: Method,
    pub scope: PruneScope,
    pub achieved_sparsity: f64,
}

#[derive(Debug, Clone)]
pub struct Card {
    pub network: Network,
    pub augmentation_id: String,
    pub compression: Compression,
}

impl Card {
    pub fn new(
        network: Network,
        augmentation_id: impl Into<String>,
        method: Method,
        scope: PruneScope,
    ) -> Self {
        let achieved_sparsity = network.sparsity();
        Self {
            network,
            augmentation_id: augmentation_id.into(),
            compression: Compression {
                method,
                scope,
                achieved_sparsity,
            },
        }
    }

    pub fn memory_bits(&self) -> u64 {
        memory_bits(&self.network)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeckMode {
    Agnostic,
    Adaptive,
}

impl std::str::FromStr for DeckMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agnostic" => Ok(DeckMode::Agnostic),
            "adaptive" => Ok(DeckMode::Adaptive),
            _ => Err(Error::Unknown {
                what: "deck mode",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug)]
pub struct Deck {
    cards: Vec<Card>,
    groups: BTreeMap<String, Vec<usize>>,
    gate: Option<Vec<SignatureIndex>>,
    forward_passes: AtomicUsize,
}

impl Deck {
    pub fn new(cards: Vec<Card>, gate: Option<Vec<SignatureIndex>>) -> Result<Self> {
        if cards.is_empty() {
            return Err(Error::Empty("deck"));
        }
        let classes = cards[0].network.num_classes();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (k, c) in cards.iter().enumerate() {
            if c.network.num_classes() != classes
                || c.network.input_shape() != cards[0].network.input_shape()
            {
                return Err(Error::invalid(format!(
                    "card {k} disagrees with card 0 on shapes"
                )));
            }
            groups.entry(c.augmentation_id.clone()).or_default().push(k);
        }
        if let Some(g) = &gate {
            for aug in groups.keys() {
                if !g.iter().any(|i| &i.augmentation_id == aug) {
                    return Err(Error::invalid(format!(
                        "no gate index for augmentation {aug}"
                    )));
                }
            }
        }
        Ok(Self {
            cards,
            groups,
            gate,
            forward_passes: AtomicUsize::new(0),
        })
    }

    pub fn cards(&self) -> &[Card] {
        &self.cards
    }

    pub fn groups(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.groups
    }

    pub fn gate(&self) -> Option<&[SignatureIndex]> {
        self.gate.as_deref()
    }

    pub fn memory_bits(&self) -> u64 {
        self.cards.iter().map(Card::memory_bits).sum()
    }

    /// Card forward passes performed so far.
    pub fn forward_passes(&self) -> usize {
        self.forward_passes.load(Ordering::Relaxed)
    }

    pub fn reset_counter(&self) {
        self.forward_passes.store(0, Ordering::Relaxed);
    }

    /// Mean softmax of the given cards, combined in card order.
    fn mean_output(&self, which: &[usize], batch: &Tensor) -> Result<Tensor> {
        let outs: Vec<Result<Tensor>> = which
            .par_iter()
            .map(|&k| {
                self.forward_passes.fetch_add(1, Ordering::Relaxed);
                self.cards[k].network.predict_proba(batch)
            })
            .collect();
        let mut acc: Vec<f64> = Vec::new();
        let mut shape = Vec::new();
        for o in outs {
            let o = o?;
            if acc.is_empty() {
                acc = vec![0.0; o.len()];
                shape = o.shape().to_vec();
            }
            for (a, &v) in acc.iter_mut().zip(o.data()) {
                *a += v as f64;
            }
        }
        let n = which.len() as f64;
        Tensor::new(shape, acc.iter().map(|a| (a / n) as f32).collect())
    }

    /// Average of every card's softmax output.
    pub fn predict_agnostic(&self, batch: &Tensor) -> Result<Tensor> {
        let all: Vec<usize> = (0..self.cards.len()).collect();
        self.mean_output(&all, batch)
    }

    /// Route the batch through the gate, then average only the selected groups.
    pub fn predict_adaptive(&self, batch: &Tensor) -> Result<(Tensor, GateDecision)> {
        let gate = self
            .gate
            .as_deref()
            .ok_or_else(|| Error::invalid("adaptive prediction needs gate indexes"))?;
        let decision = select(gate, batch)?;
        let mut which = Vec::new();
        for aug in &decision.selected {
            let g = self
                .groups
                .get(aug)
                .ok_or_else(|| Error::EmptyGroup(aug.clone()))?;
            which.extend_from_slice(g);
        }
        which.sort_unstable();
        Ok((self.mean_output(&which, batch)?, decision))
    }

    pub fn predict(
        &self,
        mode: DeckMode,
        batch: &Tensor,
    ) -> Result<(Tensor, Option<GateDecision>)> {
        match mode {
            DeckMode::Agnostic => Ok((self.predict_agnostic(batch)?, None)),
            DeckMode::Adaptive => {
                let (t, d) = self.predict_adaptive(batch)?;
                Ok((t, Some(d)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeckReport {
    pub mode: DeckMode,
    pub clean_acc: f64,
    /// `(corruption name, accuracy)` in suite order.
    pub corrupted: Vec<(String, f64)>,
    pub mean_corrupted_acc: Option<f64>,
    pub memory_bits: u64,
    /// Batches routed to each augmentation (adaptive mode, all sets pooled).
    pub selections: BTreeMap<String, usize>,
    pub forward_passes: usize,
}

fn deck_accuracy(
    deck: &Deck,
    mode: DeckMode,
    data: &Dataset,
    batch_size: usize,
    selections: &mut BTreeMap<String, usize>,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("deck evaluation set"));
    }
    let mut correct = 0;
    for chunk in data.chunks(batch_size) {
        let (out, decision) = deck.predict(mode, chunk.images())?;
        if let Some(d) = decision {
            for s in d.selected {
                *selections.entry(s).or_default() += 1;
            }
        }
        correct += out
            .data()
            .chunks(out.row_len())
            .zip(chunk.labels())
            .filter(|(row, &l)| argmax(row) == l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Accuracy on the clean set and every corrupted set, with test batches of
/// `batch_size` routed independently.
pub fn evaluate_deck(
    deck: &Deck,
    mode: DeckMode,
    clean: &Dataset,
    suite: &[(String, Dataset)],
    batch_size: usize,
) -> Result<DeckReport> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    deck.reset_counter();
    let mut selections = BTreeMap::new();
    let clean_acc = deck_accuracy(deck, mode, clean, batch_size, &mut selections)?;
    let mut corrupted = Vec::with_capacity(suite.len());
    for (name, d) in suite {
        corrupted.push((
            name.clone(),
            deck_accuracy(deck, mode, d, batch_size, &mut selections)?,
        ));
    }
    let mean_corrupted_acc = (!corrupted.is_empty())
        .then(|| corrupted.iter().map(|c| c.1).sum::<f64>() / corrupted.len() as f64);
    Ok(DeckReport {
        mode,
        clean_acc,
        corrupted,
        mean_corrupted_acc,
        memory_bits: deck.memory_bits(),
        selections,
        forward_passes: deck.forward_passes(),
    })
}
