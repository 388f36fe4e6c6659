//! Experiment grids: every (architecture, method, sparsity, scope,
//! augmentation, seed) cell is trained, compressed and evaluated, then decks,
//! gate indexes and heatmaps are assembled into a report directory.
//!
//! Layout of the report directory:
//!
//! ```text
//! config.toml        normalized copy of the grid
//! cards.csv          one row per card cell
//! decks.csv          agnostic and adaptive rows per deck and seed
//! gating.csv         share of corrupted batches routed to each index
//! failures.csv       cells that returned an error
//! cells/<id>/        checkpoint and result of each cell (resume state)
//! indexes/           gate indexes and their sidecars
//! heatmaps/          error maps, and differences against the dense cell
//! ```
//!
//! Every file is a pure function of the config, so a rerun (or a resumed run)
//! reproduces the directory byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::deck::{evaluate_deck, mbit, memory_bits, Card, Deck, DeckMode, DeckReport};
use crate::error::{Error, IoContext, Result};
use crate::gate::{build_index, select, SignatureIndex};
use crate::harness::augment::{AugmentationSpec, Augmenter};
use crate::harness::corrupt::corrupted_suite;
use crate::harness::data::{generate_dataset, read_dataset, SyntheticSpec};
use crate::nn::{checkpoint, evaluate, Architecture, Dataset, Network, SampleTransform};
use crate::prune::{
    GmpSchedule, Method, PruneManifest, PruneScope, RewindParams, ScheduleKind, TrainInput,
    TrainSpec,
};
use crate::rng;
use crate::spectral::{diff_heatmap, heatmap, Heatmap, HeatmapConfig};

const INDEX_STREAM: u64 = 0x4944_5853;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateParams {
    /// Training signatures stored per index.
    pub points: usize,
    /// Test images per routed batch.
    pub batch: usize,
}

impl Default for GateParams {
    fn default() -> Self {
        Self {
            points: 500,
            batch: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapParams {
    pub eps: f64,
    /// Leading test images used for every cell.
    pub samples: usize,
}

/// One card per augmentation, all sharing architecture and compression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeckSpec {
    pub name: String,
    /// Index into `architectures`.
    #[serde(default)]
    pub architecture: usize,
    pub method: Method,
    #[serde(default = "default_scope")]
    pub scope: PruneScope,
    #[serde(default)]
    pub sparsity: f64,
    #[serde(default = "default_deck_augs")]
    pub augmentations: Vec<String>,
}

fn default_scope() -> PruneScope {
    PruneScope::Global
}

fn default_deck_augs() -> Vec<String> {
    vec!["mix".into(), "gaussian".into()]
}

/// Train and test sets stored on disk instead of generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalData {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub data: SyntheticSpec,
    pub external: Option<ExternalData>,
    /// Settings for weight-training methods.
    #[serde(default = "default_train")]
    pub train: TrainSpec,
    /// Settings for score-training methods (EP, BP).
    #[serde(default = "default_popup_train")]
    pub popup_train: TrainSpec,
    #[serde(default)]
    pub architectures: Vec<Architecture>,
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub sparsities: Vec<f64>,
    #[serde(default = "default_scopes")]
    pub scopes: Vec<PruneScope>,
    #[serde(default)]
    pub augmentations: Vec<String>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_severities")]
    pub severities: Vec<u8>,
    pub finetune_epochs: Option<usize>,
    pub gmp: Option<GmpSchedule>,
    #[serde(default)]
    pub rewind: RewindParams,
    #[serde(default)]
    pub gate: GateParams,
    #[serde(default)]
    pub decks: Vec<DeckSpec>,
    pub heatmap: Option<HeatmapParams>,
}

/// Weight methods train at `lr = 0.01` on the step schedule.
pub fn default_train() -> TrainSpec {
    TrainSpec {
        epochs: 20,
        lr: 0.01,
        ..TrainSpec::default()
    }
}

/// Score training wants a much larger, cosine-annealed rate and no decay.
pub fn default_popup_train() -> TrainSpec {
    TrainSpec {
        epochs: 20,
        lr: 0.5,
        schedule: ScheduleKind::Cosine,
        weight_decay: 0.0,
        ..TrainSpec::default()
    }
}

fn default_scopes() -> Vec<PruneScope> {
    vec![PruneScope::Global]
}

fn default_severities() -> Vec<u8> {
    vec![1, 2, 3, 4, 5]
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            data: SyntheticSpec::default(),
            external: None,
            train: default_train(),
            popup_train: default_popup_train(),
            architectures: Vec::new(),
            methods: Vec::new(),
            sparsities: Vec::new(),
            scopes: default_scopes(),
            augmentations: Vec::new(),
            seeds: Vec::new(),
            severities: default_severities(),
            finetune_epochs: None,
            gmp: None,
            rewind: RewindParams::default(),
            gate: GateParams::default(),
            decks: Vec::new(),
            heatmap: None,
        }
    }
}

impl GridConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path).at(path)?)?;
        if let Some(ext) = &mut cfg.external {
            let base = path.parent().unwrap_or(Path::new("."));
            ext.train = base.join(&ext.train);
            ext.test = base.join(&ext.test);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("grid config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for a in &self.augmentations {
            AugmentationSpec::by_id(a)?;
        }
        for &s in &self.sparsities {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::Sparsity(s));
            }
        }
        if self.gate.batch == 0 || self.gate.points == 0 {
            return Err(Error::invalid(
                "gate batch and point counts must be positive",
            ));
        }
        for d in &self.decks {
            if d.architecture >= self.architectures.len() {
                return Err(Error::invalid(format!(
                    "deck {} names architecture {} of {}",
                    d.name,
                    d.architecture,
                    self.architectures.len()
                )));
            }
            if d.augmentations.is_empty() {
                return Err(Error::invalid(format!(
                    "deck {} has no augmentations",
                    d.name
                )));
            }
            for a in &d.augmentations {
                AugmentationSpec::by_id(a)?;
            }
        }
        Ok(())
    }

    fn train_for(&self, method: Method) -> &TrainSpec {
        if method.is_initialization_based() {
            &self.popup_train
        } else {
            &self.train
        }
    }

    /// Every cell the grid and its decks need, in report order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut set = BTreeSet::new();
        for arch in 0..self.architectures.len() {
            for &method in &self.methods {
                for aug in &self.augmentations {
                    for &seed in &self.seeds {
                        if method == Method::Dense {
                            set.insert(CellKey::new(
                                arch,
                                method,
                                PruneScope::Global,
                                0.0,
                                aug,
                                seed,
                            ));
                            continue;
                        }
                        for &scope in &self.scopes {
                            for &s in &self.sparsities {
                                set.insert(CellKey::new(arch, method, scope, s, aug, seed));
                            }
                        }
                    }
                }
            }
        }
        for d in &self.decks {
            for aug in &d.augmentations {
                for &seed in &self.seeds {
                    set.insert(d.card_key(aug, seed));
                }
            }
        }
        set.into_iter().collect()
    }
}

impl DeckSpec {
    fn card_key(&self, aug: &str, seed: u64) -> CellKey {
        let sparsity = if self.method == Method::Dense {
            0.0
        } else {
            self.sparsity
        };
        CellKey::new(
            self.architecture,
            self.method,
            self.scope,
            sparsity,
            aug,
            seed,
        )
    }
}

/// Coordinates of one card. Sparsity is kept in basis points so keys order
/// and compare exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub architecture: usize,
    pub method: Method,
    pub scope: PruneScope,
    pub sparsity_bp: u32,
    pub augmentation: String,
    pub seed: u64,
}

impl CellKey {
    pub fn new(
        architecture: usize,
        method: Method,
        scope: PruneScope,
        sparsity: f64,
        aug: &str,
        seed: u64,
    ) -> Self {
        Self {
            architecture,
            method,
            scope,
            sparsity_bp: (sparsity * 10_000.0).round() as u32,
            augmentation: aug.to_string(),
            seed,
        }
    }

    pub fn sparsity(&self) -> f64 {
        self.sparsity_bp as f64 / 10_000.0
    }

    pub fn id(&self, cfg: &GridConfig) -> String {
        let arch = cfg.architectures[self.architecture].label();
        if self.method == Method::Dense {
            format!("{arch}-dense-{}-s{}", self.augmentation, self.seed)
        } else {
            format!(
                "{arch}-{}-{}-sp{:04}-{}-s{}",
                self.method,
                self.scope.as_str(),
                self.sparsity_bp,
                self.augmentation,
                self.seed
            )
        }
    }

    fn dense_key(&self) -> CellKey {
        CellKey::new(
            self.architecture,
            Method::Dense,
            PruneScope::Global,
            0.0,
            &self.augmentation,
            self.seed,
        )
    }
}

/// Evaluation of one card, stored next to its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub id: String,
    pub key: CellKey,
    pub achieved_sparsity: f64,
    pub shots: usize,
    pub final_loss: Option<f64>,
    pub clean_acc: f64,
    /// `(corruption name, accuracy)` in suite order.
    pub corrupted: Vec<(String, f64)>,
    pub memory_bits: u64,
    pub heatmap: Option<Heatmap>,
}

impl CellResult {
    pub fn mean_corrupted(&self) -> Option<f64> {
        (!self.corrupted.is_empty())
            .then(|| self.corrupted.iter().map(|c| c.1).sum::<f64>() / self.corrupted.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredCell {
    fingerprint: String,
    result: CellResult,
}

/// Outcome of a grid run.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub out: PathBuf,
    pub cells: usize,
    /// Cells (re)computed rather than restored from a previous run.
    pub computed: usize,
    pub failures: Vec<(String, String)>,
}

struct Context {
    train: Dataset,
    test: Dataset,
    range: (f32, f32),
    suite: Vec<(String, Dataset)>,
    data_fingerprint: String,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn load_context(cfg: &GridConfig) -> Result<Context> {
    let (train, test, range, seed) = match &cfg.external {
        Some(ext) => {
            let (train, m) = read_dataset(&ext.train)?;
            let (test, _) = read_dataset(&ext.test)?;
            (train, test, m.value_range, m.seed)
        }
        None => {
            let (train, test) = generate_dataset(&cfg.data)?;
            (train, test, cfg.data.value_range(), cfg.data.seed)
        }
    };
    let suite_sets = corrupted_suite(&test, range, &cfg.severities, seed)?;
    let mut h = Sha256::new();
    for d in [&train, &test] {
        h.update(f32_bytes(d.images().data()));
        h.update(
            d.labels()
                .iter()
                .flat_map(|&l| (l as u32).to_le_bytes())
                .collect::<Vec<_>>(),
        );
    }
    Ok(Context {
        train,
        test,
        range,
        suite: suite_sets,
        data_fingerprint: hex::encode(h.finalize()),
    })
}

fn augmenter(aug: &str, ctx: &Context) -> Result<Augmenter> {
    let dims: [usize; 3] = match *ctx.train.sample_shape() {
        [c, h, w] => [c, h, w],
        [h, w] => [1, h, w],
        ref s => return Err(Error::invalid(format!("expected image samples, got {s:?}"))),
    };
    Augmenter::new(AugmentationSpec::by_id(aug)?, dims, ctx.range)
}

fn manifest_for(cfg: &GridConfig, key: &CellKey) -> PruneManifest {
    let mut m = PruneManifest::new(
        key.method,
        key.scope,
        key.sparsity(),
        cfg.train_for(key.method).clone(),
        key.seed,
    );
    m.finetune_epochs = cfg.finetune_epochs;
    m.gmp = cfg.gmp;
    m.rewind = cfg.rewind.clone();
    m
}

fn fingerprint(cfg: &GridConfig, ctx: &Context, key: &CellKey) -> String {
    let job = serde_json::json!({
        "data": ctx.data_fingerprint,
        "architecture": cfg.architectures[key.architecture],
        "manifest": manifest_for(cfg, key),
        "augmentation": key.augmentation,
        "severities": cfg.severities,
        "heatmap": cfg.heatmap,
    });
    sha_hex(job.to_string().as_bytes())
}

fn cell_dir(out: &Path, id: &str) -> PathBuf {
    out.join("cells").join(id)
}

fn compute_cell(
    cfg: &GridConfig,
    ctx: &Context,
    key: &CellKey,
    id: &str,
) -> Result<(CellResult, Network)> {
    let arch = &cfg.architectures[key.architecture];
    let net = arch.build(ctx.train.sample_shape(), ctx.train.num_classes())?;
    let aug = augmenter(&key.augmentation, ctx)?;
    let transform: Option<&dyn SampleTransform> = match aug.spec {
        AugmentationSpec::Clean => None,
        _ => Some(&aug),
    };
    let input = TrainInput {
        data: &ctx.train,
        transform,
    };
    let outcome = manifest_for(cfg, key).run(net, input)?;
    let network = outcome.network;
    let clean_acc = evaluate(&network, &ctx.test)?;
    let mut corrupted = Vec::with_capacity(ctx.suite.len());
    for (name, d) in &ctx.suite {
        corrupted.push((name.clone(), evaluate(&network, d)?));
    }
    let heatmap = match &cfg.heatmap {
        Some(h) => {
            let n = h.samples.min(ctx.test.len());
            let subset = ctx.test.subset(&(0..n).collect::<Vec<_>>());
            let hc = HeatmapConfig {
                eps: h.eps,
                seed: key.seed,
                value_range: Some(ctx.range),
                model_id: id.to_string(),
            };
            Some(heatmap(&network, &subset, &hc)?)
        }
        None => None,
    };
    let result = CellResult {
        id: id.to_string(),
        key: key.clone(),
        achieved_sparsity: outcome.report.achieved_sparsity,
        shots: outcome.report.shots,
        final_loss: outcome.report.log.final_loss(),
        clean_acc,
        corrupted,
        memory_bits: memory_bits(&network),
        heatmap,
    };
    Ok((result, network))
}

/// Restore a finished cell whose fingerprint matches, or compute and store it.
fn run_cell(
    cfg: &GridConfig,
    ctx: &Context,
    out: &Path,
    key: &CellKey,
) -> Result<(CellResult, bool)> {
    let id = key.id(cfg);
    let dir = cell_dir(out, &id);
    let result_path = dir.join("result.json");
    let ckpt = dir.join("network.ckpt");
    let fp = fingerprint(cfg, ctx, key);
    if let Ok(text) = std::fs::read_to_string(&result_path) {
        if let Ok(stored) = serde_json::from_str::<StoredCell>(&text) {
            if stored.fingerprint == fp && ckpt.exists() {
                return Ok((stored.result, false));
            }
        }
    }
    let (result, network) = compute_cell(cfg, ctx, key, &id)?;
    std::fs::create_dir_all(&dir).at(&dir)?;
    checkpoint::save(&network, &ckpt)?;
    let stored = StoredCell {
        fingerprint: fp,
        result,
    };
    write_atomic(
        &result_path,
        (serde_json::to_string_pretty(&stored)? + "\n").as_bytes(),
    )?;
    Ok((stored.result, true))
}

/// Write through a temporary file so an interrupted run never leaves a
/// truncated result behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}

fn load_card(cfg: &GridConfig, out: &Path, key: &CellKey) -> Result<Card> {
    let id = key.id(cfg);
    let net = checkpoint::load(cell_dir(out, &id).join("network.ckpt"))?;
    Ok(Card::new(
        net,
        key.augmentation.clone(),
        key.method,
        key.scope,
    ))
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).at(path)?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(f))
}

fn write_cards(cfg: &GridConfig, path: &Path, results: &[CellResult]) -> Result<()> {
    let kinds: Vec<&str> = crate::harness::corrupt::CorruptionKind::ALL
        .iter()
        .map(|k| k.as_str())
        .collect();
    let mut dense: BTreeMap<(usize, String), Vec<&CellResult>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.key.method == Method::Dense) {
        dense
            .entry((r.key.architecture, r.key.augmentation.clone()))
            .or_default()
            .push(r);
    }
    let mean = |v: &[&CellResult], f: &dyn Fn(&CellResult) -> Option<f64>| -> Option<f64> {
        let xs: Vec<f64> = v.iter().filter_map(|r| f(r)).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = [
        "id",
        "architecture",
        "method",
        "scope",
        "augmentation",
        "seed",
        "nominal_sparsity",
        "achieved_sparsity",
        "shots",
        "memory_mbit",
        "clean_acc",
        "corrupted_acc",
        "clean_pp_vs_dense",
        "corrupted_pp_vs_dense",
    ]
    .map(String::from)
    .to_vec();
    header.extend(kinds.iter().map(|k| format!("{k}_acc")));
    w.write_record(&header)?;
    for r in results {
        let base = dense.get(&(r.key.architecture, r.key.augmentation.clone()));
        let dense_clean = base.and_then(|b| mean(b, &|x| Some(x.clean_acc)));
        let dense_corr = base.and_then(|b| mean(b, &|x| x.mean_corrupted()));
        let pp = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| 100.0 * (a - b));
        let mut row = vec![
            r.id.clone(),
            cfg.architectures[r.key.architecture].label(),
            r.key.method.to_string(),
            r.key.scope.as_str().to_string(),
            r.key.augmentation.clone(),
            r.key.seed.to_string(),
            fmt(r.key.sparsity()),
            fmt(r.achieved_sparsity),
            r.shots.to_string(),
            fmt(mbit(r.memory_bits)),
            fmt(r.clean_acc),
            fmt_opt(r.mean_corrupted()),
            fmt_opt(pp(Some(r.clean_acc), dense_clean)),
            fmt_opt(pp(r.mean_corrupted(), dense_corr)),
        ];
        for k in &kinds {
            let prefix = format!("{k}-");
            let xs: Vec<f64> = r
                .corrupted
                .iter()
                .filter(|(n, _)| n.starts_with(&prefix))
                .map(|c| c.1)
                .collect();
            row.push(fmt_opt(
                (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64),
            ));
        }
        w.write_record(&row)?;
    }
    w.flush().at(path)?;
    Ok(())
}

/// Build (or restore) the gate index of every augmentation for every seed.
fn build_indexes(
    cfg: &GridConfig,
    ctx: &Context,
    out: &Path,
    augs: &BTreeSet<String>,
) -> Result<BTreeMap<(String, u64), SignatureIndex>> {
    let dir = out.join("indexes");
    if !augs.is_empty() && !cfg.seeds.is_empty() {
        std::fs::create_dir_all(&dir).at(&dir)?;
    }
    let jobs: Vec<(String, u64)> = augs
        .iter()
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (a.clone(), s)))
        .collect();
    let built: Vec<Result<SignatureIndex>> = jobs
        .par_iter()
        .map(|(aug, seed)| {
            let a = augmenter(aug, ctx)?;
            let t: Option<&dyn SampleTransform> = match a.spec {
                AugmentationSpec::Clean => None,
                _ => Some(&a),
            };
            let s = rng::derive(*seed, &[INDEX_STREAM, rng::tag(aug)]);
            let mut idx = build_index(&ctx.train, aug, cfg.gate.points, s, t)?;
            idx.source_manifest_sha256 = Some(ctx.data_fingerprint.clone());
            idx.save(dir.join(format!("{aug}-s{seed}.cdsi")))?;
            Ok(idx)
        })
        .collect();
    let mut map = BTreeMap::new();
    for (job, idx) in jobs.into_iter().zip(built) {
        map.insert(job, idx?);
    }
    Ok(map)
}

fn write_gating(
    cfg: &GridConfig,
    ctx: Option<&Context>,
    path: &Path,
    indexes: &BTreeMap<(String, u64), SignatureIndex>,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["seed", "corruption", "augmentation", "batches", "share"])?;
    let Some(ctx) = ctx else {
        w.flush().at(path)?;
        return Ok(());
    };
    for &seed in &cfg.seeds {
        let idx: Vec<SignatureIndex> = indexes
            .iter()
            .filter(|((_, s), _)| *s == seed)
            .map(|(_, i)| i.clone())
            .collect();
        if idx.is_empty() {
            continue;
        }
        let sets = std::iter::once(("clean".to_string(), &ctx.test))
            .chain(ctx.suite.iter().map(|(n, d)| (n.clone(), d)));
        for (name, data) in sets {
            let chunks = data.chunks(cfg.gate.batch);
            let decisions: Vec<Result<Vec<String>>> = chunks
                .par_iter()
                .map(|c| select(&idx, c.images()).map(|d| d.selected))
                .collect();
            let mut counts: BTreeMap<String, usize> =
                idx.iter().map(|i| (i.augmentation_id.clone(), 0)).collect();
            for d in decisions {
                for s in d? {
                    *counts.entry(s).or_default() += 1;
                }
            }
            for (aug, n) in counts {
                w.write_record([
                    seed.to_string(),
                    name.clone(),
                    aug,
                    chunks.len().to_string(),
                    fmt(n as f64 / chunks.len() as f64),
                ])?;
            }
        }
    }
    w.flush().at(path)?;
    Ok(())
}

fn evaluate_decks(
    cfg: &GridConfig,
    ctx: &Context,
    out: &Path,
    indexes: &BTreeMap<(String, u64), SignatureIndex>,
    failed: &BTreeSet<CellKey>,
    failures: &mut Vec<(String, String)>,
) -> Result<Vec<(String, u64, DeckReport)>> {
    let mut rows = Vec::new();
    for d in &cfg.decks {
        for &seed in &cfg.seeds {
            let label = format!("deck {} seed {seed}", d.name);
            let keys: Vec<CellKey> = d
                .augmentations
                .iter()
                .map(|a| d.card_key(a, seed))
                .collect();
            if keys.iter().any(|k| failed.contains(k)) {
                failures.push((label, "a card of this deck failed".into()));
                continue;
            }
            let result = (|| -> Result<Vec<DeckReport>> {
                let cards = keys
                    .iter()
                    .map(|k| load_card(cfg, out, k))
                    .collect::<Result<Vec<_>>>()?;
                let augs: BTreeSet<&String> = d.augmentations.iter().collect();
                let gate: Vec<SignatureIndex> = augs
                    .iter()
                    .map(|a| {
                        indexes
                            .get(&((*a).clone(), seed))
                            .cloned()
                            .ok_or_else(|| Error::invalid(format!("no index for {a}")))
                    })
                    .collect::<Result<_>>()?;
                let deck = Deck::new(cards, Some(gate))?;
                [DeckMode::Agnostic, DeckMode::Adaptive]
                    .into_iter()
                    .map(|m| evaluate_deck(&deck, m, &ctx.test, &ctx.suite, cfg.gate.batch))
                    .collect()
            })();
            match result {
                Ok(reports) => rows.extend(reports.into_iter().map(|r| (d.name.clone(), seed, r))),
                Err(e) => failures.push((label, e.to_string())),
            }
        }
    }
    Ok(rows)
}

fn write_decks(path: &Path, rows: &[(String, u64, DeckReport)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "deck",
        "seed",
        "mode",
        "clean_acc",
        "corrupted_acc",
        "memory_mbit",
        "forward_passes",
        "selections",
    ])?;
    for (name, seed, r) in rows {
        let sel: Vec<String> = r
            .selections
            .iter()
            .map(|(k, v)| format!("{k}:{v}"))
            .collect();
        w.write_record([
            name.clone(),
            seed.to_string(),
            match r.mode {
                DeckMode::Agnostic => "agnostic".to_string(),
                DeckMode::Adaptive => "adaptive".to_string(),
            },
            fmt(r.clean_acc),
            fmt_opt(r.mean_corrupted_acc),
            fmt(mbit(r.memory_bits)),
            r.forward_passes.to_string(),
            sel.join(";"),
        ])?;
    }
    w.flush().at(path)?;
    Ok(())
}

fn write_heatmaps(out: &Path, results: &[CellResult]) -> Result<()> {
    let by_key: BTreeMap<&CellKey, &CellResult> = results.iter().map(|r| (&r.key, r)).collect();
    let dir = out.join("heatmaps");
    for r in results {
        let Some(h) = &r.heatmap else { continue };
        std::fs::create_dir_all(&dir).at(&dir)?;
        h.save(dir.join(&r.id), false)?;
        if r.key.method == Method::Dense {
            continue;
        }
        if let Some(base) = by_key
            .get(&r.key.dense_key())
            .and_then(|b| b.heatmap.as_ref())
        {
            diff_heatmap(h, base)?.save(dir.join(format!("{}-minus-dense", r.id)), true)?;
        }
    }
    Ok(())
}

fn write_failures(path: &Path, failures: &[(String, String)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cell", "error"])?;
    for (c, e) in failures {
        w.write_record([c, e])?;
    }
    w.flush().at(path)?;
    Ok(())
}

/// Run every cell of `cfg` into `out`, reusing finished cells found there.
/// Cell failures are recorded in `failures.csv` and do not stop the run.
pub fn run_experiment(cfg: &GridConfig, out: impl AsRef<Path>) -> Result<GridSummary> {
    cfg.validate()?;
    let out = out.as_ref();
    std::fs::create_dir_all(out).at(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()).at(out.join("config.toml"))?;
    let keys = cfg.cells();
    let mut failures = Vec::new();
    let mut results = Vec::new();
    let mut computed = 0;
    let mut failed = BTreeSet::new();

    let needs_data = !keys.is_empty();
    let ctx = if needs_data {
        Some(load_context(cfg)?)
    } else {
        None
    };
    if let Some(ctx) = &ctx {
        let outcomes: Vec<Result<(CellResult, bool)>> = keys
            .par_iter()
            .map(|k| run_cell(cfg, ctx, out, k))
            .collect();
        for (k, o) in keys.iter().zip(outcomes) {
            match o {
                Ok((r, fresh)) => {
                    computed += fresh as usize;
                    results.push(r);
                }
                Err(e) => {
                    failures.push((k.id(cfg), e.to_string()));
                    failed.insert(k.clone());
                }
            }
        }
    }
    write_cards(cfg, &out.join("cards.csv"), &results)?;
    write_heatmaps(out, &results)?;

    let mut augs: BTreeSet<String> = cfg.augmentations.iter().cloned().collect();
    augs.extend(
        cfg.decks
            .iter()
            .flat_map(|d| d.augmentations.iter().cloned()),
    );
    let decks = match &ctx {
        Some(ctx) => {
            let indexes = build_indexes(cfg, ctx, out, &augs)?;
            write_gating(cfg, Some(ctx), &out.join("gating.csv"), &indexes)?;
            evaluate_decks(cfg, ctx, out, &indexes, &failed, &mut failures)?
        }
        None => {
            write_gating(cfg, None, &out.join("gating.csv"), &BTreeMap::new())?;
            Vec::new()
        }
    };
    write_decks(&out.join("decks.csv"), &decks)?;
    write_failures(&out.join("failures.csv"), &failures)?;
    Ok(GridSummary {
        out: out.to_path_buf(),
        cells: keys.len(),
        computed,
        failures,
    })
}
