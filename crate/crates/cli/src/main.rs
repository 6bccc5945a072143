//! `spic`: command-line front end for the semantic compression pipeline.
//!
//! Verbs: `encode`, `decode`, `train`, `sweep`, `plot`, `make-synthetic`.
//! Machine-readable results go to stdout as JSON; progress and warnings go
//! to stderr. Exit code is 0 exactly when every requested output was
//! written.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use spic_core::diffusion::train::trailing_mean;
use spic_core::diffusion::{
    checkpoint, sample, Denoiser, DenoiserConfig, NoiseSchedule, SamplerConfig, TrainConfig,
    TrainItem, Trainer,
};
use spic_core::encoder::{
    decode_bitstream, encode_image, EncodeOptions, GroundTruthSegmenter, Segmenter,
};
use spic_core::harness::{
    emit_plots, generate_synthetic, ingest, run_sweep, synthetic_segmenter, write_csv,
    DatasetManifest, Layout, SweepConfig, SyntheticConfig,
};
use spic_core::io::{read_image, read_labels, write_image, write_labels};

#[derive(Parser)]
#[command(name = "spic", version, about = "Semantic image compression pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Flat,
    CityscapesLike,
}

impl From<LayoutArg> for Layout {
    fn from(v: LayoutArg) -> Self {
        match v {
            LayoutArg::Flat => Layout::Flat,
            LayoutArg::CityscapesLike => Layout::CityscapesLike,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Compress an RGB PNG into a .spic bitstream and print the rate report.
    Encode {
        /// Input image (PNG).
        #[arg(long)]
        image: PathBuf,
        /// Output bitstream path.
        #[arg(long)]
        out: PathBuf,
        /// Coarse codec quality, 1-51; higher is coarser.
        #[arg(long, default_value_t = 30)]
        quality: u8,
        /// Ground-truth label PNG to code as the SSM. Without it the
        /// synthetic-corpus color rule segments the image.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Reconstruct an image from a .spic bitstream with a trained model.
    Decode {
        /// Input bitstream.
        #[arg(long)]
        input: PathBuf,
        /// Output image (PNG).
        #[arg(long)]
        out: PathBuf,
        /// Model checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the decoded segmentation map here.
        #[arg(long)]
        labels_out: Option<PathBuf>,
        /// Reverse diffusion steps.
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// First timestep of the reverse chain; defaults to a quarter of
        /// the schedule.
        #[arg(long)]
        t_start: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the denoiser on an ingested dataset and write a checkpoint.
    Train {
        /// Dataset root directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = LayoutArg::Flat)]
        layout: LayoutArg,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// TOML config; `[model]` and `[train]` tables mirror the library
        /// config types field for field.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Coarse quality whose decoded output conditions training.
        #[arg(long, default_value_t = 30)]
        coarse_quality: u8,
        /// Progress print period, in steps.
        #[arg(long, default_value_t = 50)]
        log_every: usize,
    },
    /// Rate-distortion sweep over a dataset; writes sweep.csv.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = LayoutArg::Flat)]
        layout: LayoutArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// TOML config; the `[sweep]` table mirrors the sweep config type.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Render mIoU-vs-BPP and FID-vs-BPP SVG plots from a sweep CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate the synthetic-shapes corpus in the flat layout.
    MakeSynthetic {
        /// Corpus root directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

/// Optional TOML sidecar; each table mirrors the corresponding library
/// config struct, so its keys are exactly the struct's field names.
#[derive(Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<DenoiserConfig>,
    train: Option<TrainConfig>,
    sweep: Option<SweepConfig>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Ingests and reports skips on stderr; an unusable dataset is an error.
fn ingest_or_fail(root: &Path, layout: LayoutArg) -> Result<DatasetManifest> {
    let manifest = ingest(root, layout.into())?;
    for s in &manifest.skipped {
        eprintln!("warning: skipped {}: {}", s.path.display(), s.reason);
    }
    if manifest.is_empty() {
        bail!(
            "no usable images under {} ({} candidate(s) skipped)",
            root.display(),
            manifest.skipped.len()
        );
    }
    Ok(manifest)
}

fn run_encode(image: &Path, out: &Path, quality: u8, labels: Option<&Path>) -> Result<()> {
    let img = read_image(image)?;
    let seg: Box<dyn Segmenter> = match labels {
        Some(p) => Box::new(GroundTruthSegmenter::new(read_labels(p, None)?)),
        None => Box::new(synthetic_segmenter()),
    };
    let opts = EncodeOptions {
        coarse_quality: quality,
        ..Default::default()
    };
    let (bytes, report) = encode_image(&img, seg.as_ref(), &opts)?;
    fs::write(out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run_decode(
    input: &Path,
    out: &Path,
    ckpt: &Path,
    labels_out: Option<&Path>,
    steps: usize,
    t_start: Option<usize>,
    seed: u64,
) -> Result<()> {
    // Decode the bitstream before touching the checkpoint so a corrupt
    // input fails with a message about the input.
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let decoded = decode_bitstream(&bytes)
        .with_context(|| format!("decoding {}", input.display()))?;
    let (model, sparams) = checkpoint::load(ckpt)?;
    let sched = NoiseSchedule::from_params(&sparams)?;
    let recon = sample(
        &model,
        &sched,
        &decoded.coarse,
        &decoded.ssm,
        &SamplerConfig {
            steps,
            t_start,
            seed,
        },
    )?;
    write_image(out, &recon)?;
    if let Some(p) = labels_out {
        write_labels(p, &decoded.ssm)?;
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "out": out,
            "height": decoded.ssm.height(),
            "width": decoded.ssm.width(),
            "n_classes": decoded.ssm.n_classes(),
            "coarse_quality": decoded.meta.coarse_quality,
            "steps": steps,
        }))?
    );
    Ok(())
}

/// Encodes each image at `quality` and pairs it with what the receiver will
/// actually see: the decoded (lossy) coarse and the decoded SSM.
fn build_train_items(
    manifest: &DatasetManifest,
    quality: u8,
) -> Result<Vec<TrainItem>> {
    let opts = EncodeOptions {
        coarse_quality: quality,
        ..Default::default()
    };
    let mut items = Vec::new();
    for (_, img, ssm) in manifest.load_all()? {
        let seg = GroundTruthSegmenter::new(ssm);
        let (bytes, _) = encode_image(&img, &seg, &opts)?;
        let decoded = decode_bitstream(&bytes)?;
        items.push(TrainItem {
            image: img,
            coarse: decoded.coarse,
            ssm: decoded.ssm,
        });
    }
    Ok(items)
}

fn run_train(
    data: &Path,
    layout: LayoutArg,
    out: &Path,
    config: Option<&Path>,
    coarse_quality: u8,
    log_every: usize,
) -> Result<()> {
    let cfg = load_config(config)?;
    let manifest = ingest_or_fail(data, layout)?;
    let model_cfg = match cfg.model {
        Some(m) => {
            if m.n_classes != manifest.n_classes {
                bail!(
                    "model n_classes {} does not match dataset n_classes {}",
                    m.n_classes,
                    manifest.n_classes
                );
            }
            m
        }
        None => DenoiserConfig {
            n_classes: manifest.n_classes,
            ..Default::default()
        },
    };
    let train_cfg = cfg.train.unwrap_or_default();

    let items = build_train_items(&manifest, coarse_quality)?;
    let model = Denoiser::new(model_cfg, train_cfg.seed)?;
    eprintln!(
        "training on {} image(s), {} parameters, {} steps",
        items.len(),
        model.params().n_scalars(),
        train_cfg.steps
    );
    let mut trainer = Trainer::new(model, train_cfg)?;
    trainer.train(&items, |step, loss| {
        if log_every > 0 && (step + 1) % log_every == 0 {
            eprintln!("step {:>6}  loss {loss:.6}", step + 1);
        }
    })?;

    let schedule = trainer.config().schedule;
    checkpoint::save(out, &trainer.model, &schedule)?;
    let smoothed = trailing_mean(&trainer.loss_history, 50);
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "checkpoint": out,
            "steps": trainer.loss_history.len(),
            "final_loss_smoothed": smoothed.last(),
        }))?
    );
    Ok(())
}

fn run_sweep_cmd(
    data: &Path,
    layout: LayoutArg,
    ckpt: &Path,
    config: Option<&Path>,
    out_dir: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let mut sweep_cfg = cfg.sweep.unwrap_or_default();
    if let Some(d) = out_dir {
        sweep_cfg.out_dir = d;
    }
    let manifest = ingest_or_fail(data, layout)?;
    let items = manifest.load_all()?;
    let (model, sparams) = checkpoint::load(ckpt)?;
    let sched = NoiseSchedule::from_params(&sparams)?;
    let seg = synthetic_segmenter();

    let outcome = run_sweep(&items, &model, &sched, &seg, &sweep_cfg)?;
    for f in &outcome.failures {
        eprintln!(
            "warning: {} q{} {}: {}",
            f.method, f.quality, f.image_id, f.reason
        );
    }
    for s in &outcome.skipped_methods {
        eprintln!("note: baseline unavailable: {s}");
    }
    fs::create_dir_all(&sweep_cfg.out_dir)?;
    let csv = sweep_cfg.out_dir.join("sweep.csv");
    write_csv(&outcome.rows, &csv)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "csv": csv,
            "rows": outcome.rows.len(),
            "failures": outcome.failures.len(),
            "skipped_methods": outcome.skipped_methods,
        }))?
    );
    Ok(())
}

fn run_plot(csv: &Path, out_dir: &Path) -> Result<()> {
    let files = emit_plots(csv, out_dir)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({ "plots": files }))?
    );
    Ok(())
}

fn run_make_synthetic(out: &Path, cfg: &SyntheticConfig) -> Result<()> {
    let manifest = generate_synthetic(out, cfg)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "root": manifest.root,
            "count": manifest.len(),
            "height": cfg.height,
            "width": cfg.width,
            "n_classes": manifest.n_classes,
        }))?
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Encode {
            image,
            out,
            quality,
            labels,
        } => run_encode(&image, &out, quality, labels.as_deref()),
        Cmd::Decode {
            input,
            out,
            checkpoint,
            labels_out,
            steps,
            seed,
        } => run_decode(&input, &out, &checkpoint, labels_out.as_deref(), steps, seed),
        Cmd::Train {
            data,
            layout,
            out,
            config,
            coarse_quality,
            log_every,
        } => run_train(&data, layout, &out, config.as_deref(), coarse_quality, log_every),
        Cmd::Sweep {
            data,
            layout,
            checkpoint,
            config,
            out_dir,
        } => run_sweep_cmd(&data, layout, &checkpoint, config.as_deref(), out_dir),
        Cmd::Plot { csv, out_dir } => run_plot(&csv, &out_dir),
        Cmd::MakeSynthetic {
            out,
            count,
            height,
            width,
            seed,
        } => run_make_synthetic(
            &out,
            &SyntheticConfig {
                count,
                height,
                width,
                seed,
            },
        ),
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
