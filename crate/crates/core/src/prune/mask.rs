//! Ranking-based mask selection shared by every pruning method.
//!
//! Candidates are ranked by `(key, flat index)` ascending, where the flat index
//! runs over all prunable layers in network order; the lowest-ranked
//! candidates are removed. Magnitude pruning uses `|w|` as the key, popup
//! methods use `|score|`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mask, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneScope {
    /// One budget over all prunable weights pooled together.
    Global,
    /// The same fraction in every prunable layer.
    Layerwise,
}

impl PruneScope {
    pub fn as_str(&self) -> &'static str {
        match self {
            PruneScope::Global => "global",
            PruneScope::Layerwise => "layerwise",
        }
    }
}

impl std::str::FromStr for PruneScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(PruneScope::Global),
            "layerwise" => Ok(PruneScope::Layerwise),
            _ => Err(Error::Unknown {
                what: "prune scope",
                name: s.to_string(),
            }),
        }
    }
}

fn check_sparsity(s: f64) -> Result<()> {
    if (0.0..1.0).contains(&s) {
        Ok(())
    } else {
        Err(Error::Sparsity(s))
    }
}

/// Split `total` across buckets proportionally to `weights` (Hamilton /
/// largest remainder). Each bucket gets `floor(share)` or `floor(share) + 1`,
/// never more than `caps[i]`.
pub(crate) fn largest_remainder(total: usize, weights: &[usize], caps: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut out = Vec::with_capacity(weights.len());
    let mut rema = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        // Exact integer arithmetic: share = total * w / sum.
        let num = (total as u128) * (w as u128);
        let base = (num / sum as u128) as usize;
        out.push(base.min(caps[i]));
        rema.push((num % sum as u128, i));
    }
    let mut left = total.saturating_sub(out.iter().sum());
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rema.iter().cycle().take(rema.len() * 2) {
        if left == 0 {
            break;
        }
        if out[i] < caps[i] {
            out[i] += 1;
            left -= 1;
        }
    }
    out
}

/// How many candidates to remove.
enum Removal {
    Global(usize),
    PerLayer(Vec<usize>),
}

fn rank(a: (f32, usize), b: (f32, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Remove the lowest-ranked candidates. Under global removal no layer is left
/// without a surviving weight.
fn remove_lowest(keys: &[Vec<f32>], current: &[Mask], removal: Removal) -> Result<Vec<Mask>> {
    let mut masks: Vec<Mask> = current.to_vec();
    let mut offsets = Vec::with_capacity(keys.len());
    let mut off = 0;
    for k in keys {
        offsets.push(off);
        off += k.len();
    }
    match removal {
        Removal::Global(count) => {
            let mut cands: Vec<(f32, usize, usize, usize)> = Vec::new();
            for (l, (k, m)) in keys.iter().zip(current).enumerate() {
                for (i, (&v, &kept)) in k.iter().zip(m.keep()).enumerate() {
                    if kept {
                        cands.push((v, offsets[l] + i, l, i));
                    }
                }
            }
            cands.sort_by(|a, b| rank((a.0, a.1), (b.0, b.1)));
            let mut alive: Vec<usize> = current.iter().map(Mask::kept).collect();
            let mut removed = 0;
            for &(_, _, l, i) in &cands {
                if removed == count {
                    break;
                }
                if alive[l] <= 1 {
                    continue;
                }
                masks[l].keep_mut()[i] = false;
                alive[l] -= 1;
                removed += 1;
            }
            if removed < count {
                let layer = alive.iter().position(|&a| a <= 1).unwrap_or(0);
                return Err(Error::DegenerateLayer { layer });
            }
        }
        Removal::PerLayer(counts) => {
            for (l, (k, m)) in keys.iter().zip(current).enumerate() {
                let mut cands: Vec<(f32, usize)> = k
                    .iter()
                    .zip(m.keep())
                    .enumerate()
                    .filter(|(_, (_, &kept))| kept)
                    .map(|(i, (&v, _))| (v, i))
                    .collect();
                if counts[l] > cands.len() {
                    return Err(Error::DegenerateLayer { layer: l });
                }
                cands.sort_by(|a, b| rank(*a, *b));
                for &(_, i) in cands.iter().take(counts[l]) {
                    masks[l].keep_mut()[i] = false;
                }
            }
        }
    }
    Ok(masks)
}

/// Current masks (all-ones where absent).
pub fn current_masks(net: &Network) -> Vec<Mask> {
    net.prunable()
        .map(|(_, p)| p.mask.clone().unwrap_or_else(|| Mask::ones(p.len())))
        .collect()
}

fn magnitudes(net: &Network) -> Vec<Vec<f32>> {
    net.prunable()
        .map(|(_, p)| p.weight.data().iter().map(|w| w.abs()).collect())
        .collect()
}

/// Mask out `floor(sparsity * candidates)` of the currently surviving weights
/// with the smallest magnitude, globally or within each layer. Weights that are
/// already masked stay masked.
pub fn magnitude_mask(net: &Network, sparsity: f64, scope: PruneScope) -> Result<Vec<Mask>> {
    check_sparsity(sparsity)?;
    let current = current_masks(net);
    let alive: Vec<usize> = current.iter().map(Mask::kept).collect();
    let total: usize = alive.iter().sum();
    let count = (sparsity * total as f64).floor() as usize;
    let removal = match scope {
        PruneScope::Global => Removal::Global(count),
        PruneScope::Layerwise => {
            let caps: Vec<usize> = alive.iter().map(|a| a.saturating_sub(1)).collect();
            Removal::PerLayer(largest_remainder(count, &alive, &caps))
        }
    };
    remove_lowest(&magnitudes(net), &current, removal)
}

/// Number of weights pruned in total (and per layer) at an overall sparsity.
fn total_targets(sizes: &[usize], sparsity: f64, scope: PruneScope) -> (usize, Vec<usize>) {
    let n: usize = sizes.iter().sum();
    let target = (sparsity * n as f64).floor() as usize;
    let per_layer = match scope {
        PruneScope::Global => Vec::new(),
        PruneScope::Layerwise => {
            let caps: Vec<usize> = sizes.iter().map(|s| s.saturating_sub(1)).collect();
            largest_remainder(target, sizes, &caps)
        }
    };
    (target, per_layer)
}

/// Extend the existing masks by magnitude so that `floor(sparsity * N)` of the
/// `N` prunable weights are removed overall.
pub fn magnitude_mask_to_total(
    net: &Network,
    sparsity: f64,
    scope: PruneScope,
) -> Result<Vec<Mask>> {
    check_sparsity(sparsity)?;
    let current = current_masks(net);
    let sizes: Vec<usize> = current.iter().map(Mask::len).collect();
    let pruned: Vec<usize> = current.iter().map(|m| m.len() - m.kept()).collect();
    let (target, per_layer) = total_targets(&sizes, sparsity, scope);
    let removal = match scope {
        PruneScope::Global => Removal::Global(target.saturating_sub(pruned.iter().sum())),
        PruneScope::Layerwise => Removal::PerLayer(
            per_layer
                .iter()
                .zip(&pruned)
                .map(|(t, p)| t.saturating_sub(*p))
                .collect(),
        ),
    };
    remove_lowest(&magnitudes(net), &current, removal)
}

/// Keep the `N - floor(sparsity * N)` weights with the largest `|score|`.
pub fn top_score_mask(scores: &[&[f32]], sparsity: f64, scope: PruneScope) -> Result<Vec<Mask>> {
    check_sparsity(sparsity)?;
    let sizes: Vec<usize> = scores.iter().map(|s| s.len()).collect();
    let current: Vec<Mask> = sizes.iter().map(|&n| Mask::ones(n)).collect();
    let keys: Vec<Vec<f32>> = scores
        .iter()
        .map(|s| s.iter().map(|v| v.abs()).collect())
        .collect();
    let (target, per_layer) = total_targets(&sizes, sparsity, scope);
    let removal = match scope {
        PruneScope::Global => Removal::Global(target),
        PruneScope::Layerwise => Removal::PerLayer(per_layer),
    };
    remove_lowest(&keys, &current, removal)
}

/// Install one mask per prunable layer, in network order.
pub fn apply_masks(net: &mut Network, masks: Vec<Mask>) -> Result<()> {
    let n = net.prunable().count();
    if masks.len() != n {
        return Err(Error::shape("mask list", &[n], &[masks.len()]));
    }
    for ((_, p), m) in net.prunable_mut().zip(masks) {
        p.set_mask(m)?;
    }
    Ok(())
}
