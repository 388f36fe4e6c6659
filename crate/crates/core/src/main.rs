use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use carddeck::deck::{evaluate_deck, DeckManifest, DeckMode};
use carddeck::gate::{build_index, select, SignatureIndex};
use carddeck::harness::{
    corrupted_suite, generate_dataset, read_dataset, read_tensor, run_experiment, write_dataset,
    AugmentationSpec, Augmenter, GridConfig, SyntheticSpec,
};
use carddeck::nn::{checkpoint, evaluate, Architecture, Dataset, SampleTransform};
use carddeck::prune::{Method, PruneManifest, PruneScope, TrainInput, TrainSpec};
use carddeck::spectral::{diff_heatmap, heatmap, radial_power_spectrum, signature, HeatmapConfig};
use carddeck::{Error, Result};

#[derive(Parser)]
#[command(
    name = "carddeck",
    version,
    about = "Compressed robust networks and spectrally gated decks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand accepts.
#[derive(Args, Clone, Default)]
struct Common {
    /// Base seed; overrides any seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--out is required".into()))
    }

    fn config(&self) -> Result<&Path> {
        self.config
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--config is required".into()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train.json and test.json under --out).
    Data {
        #[command(flatten)]
        common: Common,
    },
    /// Train a dense network.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run one compression method from a prune manifest (--config).
    Prune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Fourier sensitivity heatmap of a checkpoint.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        eps: f64,
        /// Leading images of the dataset to use.
        #[arg(long)]
        samples: Option<usize>,
        /// Also write the difference against this checkpoint's heatmap.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Radial power spectra and gate signatures of a dataset, as CSV.
    Spectra {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Build a gate index from a dataset under one augmentation.
    GateBuild {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        aug: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "P", default_value_t = 500)]
        points: usize,
    },
    /// Route a batch tensor; prints the JSON gate decision.
    GateQuery {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., required = true)]
        indexes: Vec<PathBuf>,
        /// A tensor file, or a dataset manifest whose images form the batch.
        #[arg(long)]
        batch: PathBuf,
        /// Leading images to use when `--batch` is a dataset manifest.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Evaluate a deck manifest (--config) on a test set and its corruptions.
    DeckEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the manifest's mode.
        #[arg(long)]
        mode: Option<DeckMode>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        severities: Vec<u8>,
        #[arg(long, default_value_t = 32)]
        batch: usize,
    },
    /// Run an experiment grid (--config) into a report directory (--out).
    Grid {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// `mlp:64`, `mlp:128x64` or `conv2:8`.
    #[arg(long, default_value = "mlp:64")]
    arch: Architecture,
    /// Training dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "clean")]
    aug: String,
}

fn dims_of(data: &Dataset) -> Result<[usize; 3]> {
    match *data.sample_shape() {
        [c, h, w] => Ok([c, h, w]),
        [h, w] => Ok([1, h, w]),
        ref s => Err(Error::InvalidArgument(format!(
            "expected images, got shape {s:?}"
        ))),
    }
}

fn head(data: &Dataset, n: Option<usize>) -> Dataset {
    match n {
        Some(n) if n < data.len() => data.subset(&(0..n).collect::<Vec<_>>()),
        _ => data.clone(),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run_model(mut manifest: PruneManifest, common: &Common, model: &ModelArgs) -> Result<()> {
    if let Some(s) = common.seed {
        manifest.seed = s;
    }
    let (data, meta) = read_dataset(&model.data)?;
    let aug = Augmenter::new(
        AugmentationSpec::by_id(&model.aug)?,
        dims_of(&data)?,
        meta.value_range,
    )?;
    let transform: Option<&dyn SampleTransform> = match aug.spec {
        AugmentationSpec::Clean => None,
        _ => Some(&aug),
    };
    let net = model.arch.build(data.sample_shape(), data.num_classes())?;
    let outcome = manifest.run(
        net,
        TrainInput {
            data: &data,
            transform,
        },
    )?;
    let out = common.out()?;
    checkpoint::save(&outcome.network, out)?;
    write_json(&out.with_extension("json"), &outcome.report)?;
    println!(
        "{} sparsity {:.6} train acc {:.4}",
        manifest.method,
        outcome.report.achieved_sparsity,
        evaluate(&outcome.network, &data)?
    );
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Data { common } => {
            let mut spec = match &common.config {
                Some(p) => toml::from_str::<SyntheticSpec>(&read_text(p)?)?,
                None => SyntheticSpec::default(),
            };
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            let out = common.out()?;
            let (train, test) = generate_dataset(&spec)?;
            for (stem, d) in [("train", &train), ("test", &test)] {
                let p = write_dataset(out, stem, d, spec.value_range(), spec.seed)?;
                println!("{} ({} images)", p.display(), d.len());
            }
        }
        Command::Train { common, model } => {
            let train = match &common.config {
                Some(p) => toml::from_str::<TrainSpec>(&read_text(p)?)?,
                None => carddeck::harness::default_train(),
            };
            let manifest = PruneManifest::new(Method::Dense, PruneScope::Global, 0.0, train, 0);
            run_model(manifest, &common, &model)?;
        }
        Command::Prune { common, model } => {
            let manifest = PruneManifest::load(common.config()?)?;
            run_model(manifest, &common, &model)?;
        }
        Command::Heatmap {
            common,
            model,
            data,
            eps,
            samples,
            baseline,
        } => {
            let (data, meta) = read_dataset(&data)?;
            let data = head(&data, samples);
            let cfg = HeatmapConfig {
                eps,
                seed: common.seed.unwrap_or(0),
                value_range: Some(meta.value_range),
                model_id: model.display().to_string(),
            };
            let out = common.out()?;
            let h = heatmap(&checkpoint::load(&model)?, &data, &cfg)?;
            h.save(out, false)?;
            if let Some(b) = baseline {
                let base_cfg = HeatmapConfig {
                    model_id: b.display().to_string(),
                    ..cfg
                };
                let base = heatmap(&checkpoint::load(&b)?, &data, &base_cfg)?;
                let stem = format!("{}-minus-baseline", out.display());
                diff_heatmap(&h, &base)?.save(stem, true)?;
            }
        }
        Command::Spectra {
            common,
            data,
            samples,
        } => {
            let (data, _) = read_dataset(&data)?;
            let data = head(&data, samples);
            let shape = data.sample_shape().to_vec();
            let mut csv = String::from("image,label,kind,bin,value\n");
            for k in 0..data.len() {
                let spec = radial_power_spectrum(data.image(k), &shape)?;
                for (r, p) in spec.power.iter().enumerate() {
                    csv.push_str(&format!("{k},{},power,{r},{p:e}\n", data.label(k)));
                }
                for (r, v) in signature(data.image(k), &shape)?.iter().enumerate() {
                    csv.push_str(&format!("{k},{},signature,{r},{v:e}\n", data.label(k)));
                }
            }
            write_text(common.out()?, &csv)?;
        }
        Command::GateBuild {
            common,
            aug,
            manifest,
            points,
        } => {
            let (data, meta) = read_dataset(&manifest)?;
            let a = Augmenter::new(
                AugmentationSpec::by_id(&aug)?,
                dims_of(&data)?,
                meta.value_range,
            )?;
            let t: Option<&dyn SampleTransform> = match a.spec {
                AugmentationSpec::Clean => None,
                _ => Some(&a),
            };
            let mut idx = build_index(&data, &aug, points, common.seed.unwrap_or(0), t)?;
            idx.source_manifest_sha256 =
                Some(carddeck::harness::DatasetManifest::file_hash(&manifest)?);
            idx.save(common.out()?)?;
        }
        Command::GateQuery {
            common,
            indexes,
            batch,
            limit,
        } => {
            let idx = indexes
                .iter()
                .map(SignatureIndex::load)
                .collect::<Result<Vec<_>>>()?;
            let batch = if batch.extension().is_some_and(|e| e == "json") {
                let (d, _) = read_dataset(&batch)?;
                head(&d, limit).images().clone()
            } else {
                read_tensor(&batch)?
            };
            let decision = select(&idx, &batch)?;
            match &common.out {
                Some(p) => write_json(p, &decision)?,
                None => println!("{}", serde_json::to_string_pretty(&decision)?),
            }
        }
        Command::DeckEval {
            common,
            data,
            mode,
            severities,
            batch,
        } => {
            let path = common.config()?;
            let manifest = DeckManifest::load(path)?;
            let deck = manifest.build(path.parent().unwrap_or(Path::new(".")))?;
            let (test, meta) = read_dataset(&data)?;
            let seed = common.seed.unwrap_or(meta.seed);
            let sets = corrupted_suite(&test, meta.value_range, &severities, seed)?;
            let report = evaluate_deck(&deck, mode.unwrap_or(manifest.mode), &test, &sets, batch)?;
            let mut csv = String::from("set,accuracy\n");
            csv.push_str(&format!("clean,{:.6}\n", report.clean_acc));
            for (n, a) in &report.corrupted {
                csv.push_str(&format!("{n},{a:.6}\n"));
            }
            if let Some(m) = report.mean_corrupted_acc {
                csv.push_str(&format!("mean-corrupted,{m:.6}\n"));
            }
            match &common.out {
                Some(p) => {
                    write_text(p, &csv)?;
                    write_json(&p.with_extension("json"), &report)?;
                }
                None => print!("{csv}"),
            }
        }
        Command::Grid { common } => {
            let mut cfg = GridConfig::load(common.config()?)?;
            if let Some(s) = common.seed {
                cfg.seeds = vec![s];
            }
            let summary = run_experiment(&cfg, common.out()?)?;
            println!(
                "{} cells ({} computed), {} failures, report in {}",
                summary.cells,
                summary.computed,
                summary.failures.len(),
                summary.out.display()
            );
            if !summary.failures.is_empty() {
                for (c, e) in &summary.failures {
                    eprintln!("failed: {c}: {e}");
                }
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
