//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 validation failure (bad flags, config or
//! checkpoint mismatch), 2 runtime error, 3 failed check (gradient checks).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::checkpoint::{check_compatible, load_checkpoint, save_checkpoint, CheckpointError};
use crate::checks::{gradcheck_csv, run_gradcheck_suite};
use crate::config::{ConfigError, RunConfig};
use crate::data::{
    augment_rotations, build_patch_split, read_manifest, read_raster, scene_patches, write_manifest, write_raster,
    DataError, LabeledRaster, ManifestRow, Patch,
};
use crate::inference::{
    compute_metrics, connected_components, evaluate_scene, lambda_ablation, lambda_grid, majority_vote_postprocess,
    scaled_min_area, stride_sweep, summarize, write_overlay, AblationCell, InferenceError, MetricsReport, WindowModel,
};
use crate::network::{NetworkError, VoteNet};
use crate::train::{dataset_eta, prepare_samples, train, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(ConfigError::Read { .. }) => 2,
            CliError::Config(_) | CliError::Validation(_) => 1,
            CliError::Checkpoint(CheckpointError::Mismatch(_)) => 1,
            CliError::CheckFailed(_) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "votenet", version, about = "Voting-based contour-levee segmentation")]
pub struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the dataset directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Stride,
    Lambda,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes, sample train/eval patches and write the manifest.
    Synth,
    /// Sample contour and background patches from one labelled scene.
    Sample {
        /// Raster stem (`<stem>.image.png`, `<stem>.mask.png`, `<stem>.ids.png`).
        #[arg(long)]
        scene: PathBuf,
        /// Add the rotated copies of every patch.
        #[arg(long)]
        augment: bool,
    },
    /// Train on the manifest's train split; writes a checkpoint and a loss log.
    Train,
    /// Evaluate a checkpoint on the configured split.
    Eval,
    /// Run the finite-difference gradient checks.
    Gradcheck {
        /// Append a check with a deliberately wrong adjoint (must fail).
        #[arg(long)]
        inject_bug: bool,
    },
    /// Produce the stride or loss-weight table.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
    },
    /// Overlay whole-image predictions on scenes.
    Render {
        /// Raster stem to render; defaults to every eval scene.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Apply majority-vote postprocessing first.
        #[arg(long)]
        postprocess: bool,
    },
}

/// Parses the process arguments, runs the command and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Resolves the configuration: defaults, then the file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.paths.out = o.clone();
    }
    if let Some(d) = &cli.data {
        cfg.paths.data = d.clone();
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg).map(|n| println!("wrote {n} patches to {}", cfg.paths.data.display())),
        Command::Sample { scene, augment } => cmd_sample(&cfg, scene, *augment).map(|n| println!("wrote {n} patches")),
        Command::Train => cmd_train(&cfg),
        Command::Eval => cmd_eval(&cfg).map(|csv| print!("{csv}")),
        Command::Gradcheck { inject_bug } => cmd_gradcheck(&cfg, *inject_bug),
        Command::Sweep { kind } => cmd_sweep(&cfg, *kind).map(|(csv, best)| println!("{csv}{best}")),
        Command::Render { image, postprocess } => cmd_render(&cfg, image.as_deref(), *postprocess),
    }
}

fn create_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(io_err(p))
}

fn write_text(p: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(p, text).map_err(io_err(p))
}

fn manifest_row(id: &str, patch: &Patch) -> ManifestRow {
    ManifestRow {
        patch_id: id.to_string(),
        source_scene: patch.scene.clone(),
        center_x: patch.center.1,
        center_y: patch.center.0,
        rotation_deg: patch.rotation_deg,
        class: patch.class,
        path: PathBuf::from("patches").join(id),
    }
}

fn write_patches(dir: &Path, prefix: &str, patches: &[Patch], rows: &mut Vec<ManifestRow>) -> Result<(), CliError> {
    for (i, p) in patches.iter().enumerate() {
        let id = format!("{prefix}_{i:05}");
        write_raster(&p.raster, &dir.join("patches").join(&id))?;
        rows.push(manifest_row(&id, p));
    }
    Ok(())
}

/// Scenes, patches and `manifest.tsv` under the data directory. Returns the
/// number of patches written.
pub fn cmd_synth(cfg: &RunConfig) -> Result<usize, CliError> {
    let dir = &cfg.paths.data;
    create_dir(&dir.join("scenes"))?;
    create_dir(&dir.join("patches"))?;
    let split = build_patch_split(&cfg.dataset, &cfg.sampler, cfg.seed)?;
    for (name, scene) in split.train_scenes.iter().chain(&split.eval_scenes) {
        write_raster(scene, &dir.join("scenes").join(name))?;
    }
    let mut rows = Vec::new();
    write_patches(dir, "train", &split.train, &mut rows)?;
    write_patches(dir, "eval", &split.eval, &mut rows)?;
    write_manifest(&dir.join("manifest.tsv"), &rows)?;
    write_text(&dir.join("run_config.toml"), &cfg.to_toml())?;
    Ok(rows.len())
}

pub fn cmd_sample(cfg: &RunConfig, scene: &Path, augment: bool) -> Result<usize, CliError> {
    let raster = read_raster(scene)?;
    let name = scene.file_name().map_or("scene".into(), |n| n.to_string_lossy().into_owned());
    let mut patches = Vec::new();
    for p in scene_patches(&raster, &cfg.sampler, &name)? {
        if augment {
            patches.extend(augment_rotations(&p, &cfg.sampler.rotation_set)?);
        } else {
            patches.push(p);
        }
    }
    let out = &cfg.paths.out;
    create_dir(&out.join("patches"))?;
    let mut rows = Vec::new();
    write_patches(out, "sample", &patches, &mut rows)?;
    write_manifest(&out.join("manifest.tsv"), &rows)?;
    Ok(rows.len())
}

/// Patches of one split listed in `<data>/manifest.tsv`, in manifest order.
pub fn load_split(data: &Path, split: &str) -> Result<Vec<Patch>, CliError> {
    let manifest = data.join("manifest.tsv");
    if !manifest.exists() {
        return Err(CliError::Validation(format!("no manifest at {}; run synth first", manifest.display())));
    }
    let prefix = format!("{split}_");
    read_manifest(&manifest)?
        .into_iter()
        .filter(|r| r.patch_id.starts_with(&prefix))
        .map(|r| {
            Ok(Patch {
                raster: read_raster(&data.join(&r.path))?,
                scene: r.source_scene,
                center: (r.center_y, r.center_x),
                origin: (0, 0),
                rotation_deg: r.rotation_deg,
                class: r.class,
            })
        })
        .collect()
}

/// Whole scenes of one split written by `synth`, sorted by name.
pub fn load_scenes(data: &Path, split: &str) -> Result<Vec<(String, LabeledRaster)>, CliError> {
    let dir = data.join("scenes");
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".image.png")).map(str::to_string))
        .filter(|n| n.starts_with(&format!("{split}_")))
        .collect();
    names.sort();
    names.into_iter().map(|n| Ok((n.clone(), read_raster(&dir.join(&n))?))).collect()
}

fn train_model(
    cfg: &RunConfig,
    patches: &[Patch],
    train_cfg: &crate::train::TrainConfig,
    lambda: Option<(f64, f64)>,
) -> Result<(VoteNet, crate::train::TrainReport), CliError> {
    let mut loss = cfg.loss.clone();
    if let Some((c, r)) = lambda {
        loss.lambda_c = c;
        loss.lambda_r = r;
    }
    let weights = loss.weights(|| dataset_eta(patches));
    let samples = prepare_samples(patches).map_err(TrainError::from)?;
    let mut model = VoteNet::new(cfg.network.clone(), cfg.seed)?;
    let report = train(&mut model, &samples, &weights, train_cfg, cfg.seed, |_| {})?;
    Ok((model, report))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let patches = load_split(&cfg.paths.data, "train")?;
    let (model, report) = train_model(cfg, &patches, &cfg.train, None)?;
    create_dir(&cfg.paths.out)?;
    save_checkpoint(&cfg.paths.checkpoint_path(), &model)?;
    write_text(&cfg.paths.out.join("train_log.csv"), &report.log_csv())?;
    for (e, m) in report.epoch_means.iter().enumerate() {
        println!("epoch {}: mean total loss {m:.6}", e + 1);
    }
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<VoteNet, CliError> {
    let path = cfg.paths.checkpoint_path();
    if !path.exists() {
        return Err(CliError::Validation(format!("no checkpoint at {}; run train first", path.display())));
    }
    let model = load_checkpoint(&path)?;
    check_compatible(&model, &cfg.network)?;
    Ok(model)
}

/// Hard labels of one window, optionally majority-voted over the model's own
/// segments (4-connected regions of the segment argmax).
pub fn predict_patch(model: &VoteNet, raster: &LabeledRaster, postprocess: bool) -> Result<Vec<u8>, CliError> {
    let out = model.predict_window(&raster.image_tensor())?;
    let labels: Vec<u8> = out.probs.chunks_exact(2).map(|p| u8::from(p[1] > p[0])).collect();
    match (postprocess, out.segments) {
        (true, Some(seg)) => {
            let comps =
                connected_components(&seg, raster.height, raster.width, scaled_min_area(raster.height, raster.width));
            Ok(majority_vote_postprocess(&labels, &comps.eligible_segments())?)
        }
        _ => Ok(labels),
    }
}

/// Pooled pixel metrics over a patch set.
pub fn evaluate_patches(model: &VoteNet, patches: &[Patch], postprocess: bool) -> Result<MetricsReport, CliError> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for p in patches {
        pred.extend(predict_patch(model, &p.raster, postprocess)?);
        truth.extend_from_slice(&p.raster.mask);
    }
    Ok(compute_metrics(&pred, &truth)?)
}

pub const EVAL_HEADER: &str = "split,postprocess,patches,accuracy,ber,f1";

/// Metrics CSV (one row, or two with postprocessing) plus optional overlays.
pub fn cmd_eval(cfg: &RunConfig) -> Result<String, CliError> {
    let model = load_model(cfg)?;
    let patches = load_split(&cfg.paths.data, &cfg.eval.split)?;
    let mut csv = format!("{EVAL_HEADER}\n");
    let modes: &[bool] = if cfg.eval.postprocess { &[false, true] } else { &[false] };
    for &post in modes {
        let m = evaluate_patches(&model, &patches, post)?;
        writeln!(
            csv,
            "{},{},{},{:.4},{:.5},{:.4}",
            cfg.eval.split,
            if post { "on" } else { "off" },
            patches.len(),
            m.accuracy,
            m.ber,
            m.f1
        )
        .expect("writing to a String");
    }
    create_dir(&cfg.paths.out)?;
    write_text(&cfg.paths.out.join("eval_metrics.csv"), &csv)?;
    if cfg.eval.overlays {
        let dir = cfg.paths.out.join("overlays");
        create_dir(&dir)?;
        for (i, p) in patches.iter().enumerate() {
            let labels = predict_patch(&model, &p.raster, false)?;
            let path = dir.join(format!("{}_{i:05}.png", cfg.eval.split));
            write_overlay(&path, p.raster.height, p.raster.width, &p.raster.image, &labels, cfg.eval.overlay_alpha)?;
        }
    }
    Ok(csv)
}

pub fn cmd_gradcheck(cfg: &RunConfig, inject_bug: bool) -> Result<(), CliError> {
    let outcomes = run_gradcheck_suite(inject_bug, cfg.gradcheck.step, cfg.gradcheck.tolerance);
    let csv = gradcheck_csv(&outcomes);
    print!("{csv}");
    create_dir(&cfg.paths.out)?;
    write_text(&cfg.paths.out.join("gradcheck.csv"), &csv)?;
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.report.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        println!("all {} checks passed", outcomes.len());
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "{} of {} checks failed: {}",
            failed.len(),
            outcomes.len(),
            failed.join(", ")
        )))
    }
}

/// Returns the CSV table and the one-line best-row summary.
pub fn cmd_sweep(cfg: &RunConfig, kind: SweepKind) -> Result<(String, String), CliError> {
    let scenes: Vec<LabeledRaster> = load_scenes(&cfg.paths.data, "eval")?.into_iter().map(|(_, r)| r).collect();
    if scenes.is_empty() {
        return Err(CliError::Validation("no eval scenes found; run synth first".into()));
    }
    let (csv, best, file) = match kind {
        SweepKind::Stride => {
            let model = load_model(cfg)?;
            let table = stride_sweep(&model, &scenes, &cfg.sweep.strides, cfg.sweep.postprocess)?;
            (table.to_csv(), table.best_summary(), "stride_sweep.csv")
        }
        SweepKind::Lambda => {
            let mut patches = load_split(&cfg.paths.data, "train")?;
            patches.truncate(cfg.sweep.lambda_patches);
            let grid = lambda_grid(cfg.loss.lambda_c, cfg.loss.lambda_r);
            let table = lambda_ablation(&grid, |s| -> Result<AblationCell, CliError> {
                let (model, report) =
                    train_model(cfg, &patches, &cfg.sweep.lambda_train, Some((s.lambda_c, s.lambda_r)))?;
                let totals = report.steps.iter().map(|r| r.total);
                let range = totals.clone().fold(f64::MIN, f64::max) - totals.fold(f64::MAX, f64::min);
                let reports = scenes
                    .iter()
                    .map(|sc| evaluate_scene(&model, sc, cfg.eval.stride, false).map(|r| r.0))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(AblationCell {
                    loss_range: if report.steps.is_empty() { 0.0 } else { range },
                    summary: summarize(&reports),
                })
            });
            (table.to_csv(), table.best_summary(), "lambda_ablation.csv")
        }
    };
    create_dir(&cfg.paths.out)?;
    write_text(&cfg.paths.out.join(file), &csv)?;
    Ok((csv, best))
}

pub fn cmd_render(cfg: &RunConfig, image: Option<&Path>, postprocess: bool) -> Result<(), CliError> {
    let model = load_model(cfg)?;
    let scenes = match image {
        Some(stem) => {
            let name = stem.file_name().map_or("image".into(), |n| n.to_string_lossy().into_owned());
            vec![(name, read_raster(stem)?)]
        }
        None => load_scenes(&cfg.paths.data, "eval")?,
    };
    let dir = cfg.paths.out.join("render");
    create_dir(&dir)?;
    for (name, scene) in &scenes {
        if scene.height < model.window() || scene.width < model.window() {
            return Err(CliError::Validation(format!("{name} is smaller than the {} px window", model.window())));
        }
        let (metrics, labels) = evaluate_scene(&model, scene, cfg.eval.stride, postprocess)?;
        let path = dir.join(format!("{name}.png"));
        write_overlay(&path, scene.height, scene.width, &scene.image, &labels, cfg.eval.overlay_alpha)?;
        println!("{}: accuracy {:.2}, BER {:.4}, F1 {:.2}", path.display(), metrics.accuracy, metrics.ber, metrics.f1);
    }
    Ok(())
}
