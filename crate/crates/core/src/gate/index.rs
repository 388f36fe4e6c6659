use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::gate::kdtree::KdTree;
use crate::nn::{Dataset, SampleTransform};
use crate::rng;
use crate::spectral::signature;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CDSI";
const VERSION: u16 = 1;
const SAMPLE_STREAM: u64 = 0x5341_4d50;
const AUGMENT_STREAM: u64 = 0x4741_5547;

/// Metadata written next to an index file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSidecar {
    pub augmentation_id: String,
    pub seed: u64,
    pub points: usize,
    pub dim: usize,
    /// SHA-256 of the dataset manifest the samples came from.
    pub source_manifest_sha256: Option<String>,
}

/// Unit-norm training signatures for one augmentation.
#[derive(Debug, Clone)]
pub struct SignatureIndex {
    pub augmentation_id: String,
    pub seed: u64,
    pub source_manifest_sha256: Option<String>,
    tree: KdTree,
}

impl SignatureIndex {
    /// `points` is row-major, each row a unit-norm signature of length `dim`.
    pub fn from_points(
        augmentation_id: impl Into<String>,
        dim: usize,
        points: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::invalid(
                "index needs at least one point of positive dimension",
            ));
        }
        for (k, p) in points.chunks_exact(dim).enumerate() {
            let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("index point {k} has norm {n}")));
            }
        }
        Ok(Self {
            augmentation_id: augmentation_id.into(),
            seed,
            source_manifest_sha256: None,
            tree: KdTree::build(points, dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.tree.dim()
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.tree.point(i)
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    /// Euclidean distance from `q` to the nearest stored signature.
    pub fn distance(&self, q: &[f64]) -> Result<f64> {
        if q.len() != self.dim() {
            return Err(Error::shape("gate query", &[self.dim()], &[q.len()]));
        }
        Ok(self.tree.nearest(q).expect("non-empty index").1.sqrt())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(22 + self.tree.points().len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in self.tree.points() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], sidecar: &IndexSidecar) -> Result<Self> {
        let bad = |r: &str| Error::format("signature index", r.to_string());
        if bytes.len() < 22 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let n = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
        let seed = u64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes"));
        let body = &bytes[22..];
        if body.len() != dim * n * 8 {
            return Err(bad("point block length does not match header"));
        }
        if sidecar.dim != dim || sidecar.points != n || sidecar.seed != seed {
            return Err(bad("sidecar disagrees with index header"));
        }
        let points = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut idx = Self::from_points(sidecar.augmentation_id.clone(), dim, points, seed)?;
        idx.source_manifest_sha256 = sidecar.source_manifest_sha256.clone();
        Ok(idx)
    }

    pub fn sidecar(&self) -> IndexSidecar {
        IndexSidecar {
            augmentation_id: self.augmentation_id.clone(),
            seed: self.seed,
            points: self.len(),
            dim: self.dim(),
            source_manifest_sha256: self.source_manifest_sha256.clone(),
        }
    }

    /// Writes `path` and `path` with a `.json` extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).at(path)?;
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(&side, json + "\n").at(&side)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let sidecar: IndexSidecar =
            serde_json::from_str(&std::fs::read_to_string(&side).at(&side)?)?;
        Self::decode(&std::fs::read(path).at(path)?, &sidecar)
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Signatures of every image in a batch `(n, ...)`, in order.
pub fn batch_signatures(batch: &Tensor) -> Result<Vec<Vec<f64>>> {
    let shape = &batch.shape()[1..];
    (0..batch.rows())
        .into_par_iter()
        .map(|k| signature(batch.row(k), shape))
        .collect()
}

/// Signatures of `p` training images drawn without replacement by `seed`,
/// each passed through `transform` first when one is given.
pub fn build_index(
    data: &Dataset,
    augmentation_id: &str,
    p: usize,
    seed: u64,
    transform: Option<&dyn SampleTransform>,
) -> Result<SignatureIndex> {
    if p == 0 {
        return Err(Error::invalid("an index needs at least one point"));
    }
    if p > data.len() {
        return Err(Error::NotEnoughSamples {
            requested: p,
            available: data.len(),
        });
    }
    let picks = sample(&mut rng::stream(seed, &[SAMPLE_STREAM]), data.len(), p).into_vec();
    let shape = data.sample_shape();
    let sigs: Vec<Result<Vec<f64>>> = picks
        .par_iter()
        .enumerate()
        .map(|(k, &i)| {
            let img = data.image(i);
            match transform {
                Some(t) => {
                    let s = rng::derive(seed, &[AUGMENT_STREAM, k as u64]);
                    signature(&t.apply(img, s), shape)
                }
                None => signature(img, shape),
            }
        })
        .collect();
    let mut points = Vec::new();
    for s in sigs {
        points.extend(s?);
    }
    let dim = points.len() / p;
    SignatureIndex::from_points(augmentation_id, dim, points, seed)
}

/// Mean of the per-image unit signatures of a batch (not itself unit norm).
pub fn batch_mean_signature(batch: &Tensor) -> Result<Vec<f64>> {
    if batch.rows() == 0 {
        return Err(Error::Empty("gate batch"));
    }
    let sigs = batch_signatures(batch)?;
    let mut mean = vec![0.0; sigs[0].len()];
    for s in &sigs {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    let m = sigs.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    Ok(mean)
}

/// Spectral similarity: distance from the batch-mean signature to the nearest
/// stored training signature.
pub fn d_ss(index: &SignatureIndex, batch: &Tensor) -> Result<f64> {
    index.distance(&batch_mean_signature(batch)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    /// All augmentations attaining the minimum distance, in index order.
    pub selected: Vec<String>,
    pub distances: BTreeMap<String, f64>,
    pub batch_size: usize,
}

/// Route a batch to the augmentation(s) whose training signatures it resembles most.
pub fn select(indexes: &[SignatureIndex], batch: &Tensor) -> Result<GateDecision> {
    if indexes.is_empty() {
        return Err(Error::Empty("gate index set"));
    }
    let q = batch_mean_signature(batch)?;
    let mut dists = Vec::with_capacity(indexes.len());
    for idx in indexes {
        dists.push((idx.augmentation_id.clone(), idx.distance(&q)?));
    }
    let best = dists.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
    let mut selected: Vec<String> = Vec::new();
    for (id, d) in &dists {
        if *d == best && !selected.contains(id) {
            selected.push(id.clone());
        }
    }
    Ok(GateDecision {
        selected,
        distances: dists.into_iter().collect(),
        batch_size: batch.rows(),
    })
}
