use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use xma_core::checkpoint::{load_audio, load_visual, save_audio, save_visual};
use xma_core::config::{ExperimentConfig, ManipulationSpec};
use xma_core::dataset_io::{load_dataset, save_dataset};
use xma_core::pair_selection::PairSource;
use xma_core::pipeline::{
    ablation_csv, ablation_grid, annotate_all, annotation_manifest_csv, gap_report, run_baseline_grid,
    run_manipulations, summarize_annotations, to_json, write_text, RunReport, SCHEMA_VERSION, TOOL_VERSION,
};
use xma_core::synth::synth_dataset;
use xma_core::training::{pretrain_visual, train_audio_encoder};
use xma_core::{Result, XmaError};

#[derive(Parser)]
#[command(name = "xma", version, about = "Align an audio encoder to a frozen visual expert on synthetic clips")]
struct Cli {
    /// `key = value` experiment config; missing keys use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (a directory for ablation-grid).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress and summary lines.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset file.
    SynthData,
    /// Pretrain and freeze the visual encoder and generator.
    PretrainVisual {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Align a fresh audio encoder to a frozen visual checkpoint.
    TrainAudio {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        visual: PathBuf,
    },
    /// Annotate every clip with its selected moment.
    SelectPairs {
        #[arg(long)]
        dataset: PathBuf,
        /// SELECTED_TOP1 or MID_FRAME.
        #[arg(long, default_value = "SELECTED_TOP1")]
        mode: String,
    },
    /// Retrieval, generation and baseline metrics on the test split.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        visual: PathBuf,
        #[arg(long)]
        audio: PathBuf,
    },
    /// Modality-gap geometry on the test split.
    GapReport {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        visual: PathBuf,
        #[arg(long)]
        audio: PathBuf,
    },
    /// Volume, mixing, interpolation and edit experiments with saliency.
    Manipulate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        visual: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        /// `key = value` manipulation spec; defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Loss variant x pair source x duration grid.
    AblationGrid,
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn wrote(&self, path: &Path) {
        if !self.quiet {
            println!("wrote {}", path.display());
        }
    }

    fn write(&self, path: &Path, text: &str) -> Result<()> {
        write_text(path, text)?;
        self.wrote(path);
        Ok(())
    }
}

/// `out` with its extension replaced by `suffix`.
fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("XMA_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| XmaError::Config(format!("XMA_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| XmaError::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .ok_or_else(|| XmaError::Config("--out is required".into()))?;
    let ctx = Ctx {
        cfg,
        out,
        quiet: cli.quiet,
    };
    let cfg = &ctx.cfg;
    let out = ctx.out.as_path();

    match cli.command {
        Command::SynthData => {
            let ds = synth_dataset(&cfg.synth())?;
            save_dataset(&ds, out)?;
            ctx.wrote(out);
        }
        Command::PretrainVisual { dataset } => {
            let ds = load_dataset(&dataset)?;
            ctx.say(format!("pretraining visual expert on {} clips", ds.clips.len()));
            let (models, pre) = pretrain_visual(&ds, &cfg.pretrain())?;
            save_visual(&models, out)?;
            ctx.wrote(out);
            ctx.write(&sidecar(out, "log.json"), &to_json(&pre.log)?)?;
            let mut report = RunReport::new(cfg, &ds).with_pretrain(&pre);
            report.visual_checksum = Some(models.checksum());
            ctx.write(&sidecar(out, "report.json"), &report.to_json()?)?;
        }
        Command::TrainAudio { dataset, visual } => {
            let ds = load_dataset(&dataset)?;
            let models = load_visual(&visual)?;
            let align = cfg.align();
            ctx.say(format!(
                "aligning audio encoder ({}, {}, duration {})",
                align.variant.kind, align.pair_source, align.duration
            ));
            let (encoder, log) = train_audio_encoder(&ds, &models, &align)?;
            save_audio(&encoder, out)?;
            ctx.wrote(out);
            ctx.write(&sidecar(out, "log.json"), &to_json(&log)?)?;
            let mut report = RunReport::new(cfg, &ds).with_training_log(&log);
            report.visual_checksum = Some(models.checksum());
            report.audio_checksum = Some(encoder.checksum());
            ctx.write(&sidecar(out, "report.json"), &report.to_json()?)?;
        }
        Command::SelectPairs { dataset, mode } => {
            let mode: PairSource = mode.parse()?;
            let ds = load_dataset(&dataset)?;
            let anns = annotate_all(&ds, mode)?;
            ctx.write(out, &annotation_manifest_csv(&ds, &anns))?;
            let summary = summarize_annotations(&ds, &anns, mode);
            ctx.say(format!(
                "{} clips, {} low confidence, top-1 in event {:.3}",
                summary.clips, summary.low_confidence, summary.top1_in_event
            ));
        }
        Command::Evaluate { dataset, visual, audio } => {
            let ds = load_dataset(&dataset)?;
            let models = load_visual(&visual)?;
            let encoder = load_audio(&audio)?;
            let duration = cfg.train.duration;
            let eval = run_baseline_grid(&ds, &models, &encoder, duration, &cfg.eval, cfg.seed)?;
            let (gap, _) = gap_report(&ds, &models, &encoder, duration)?;
            let anns = annotate_all(&ds, PairSource::SelectedTop1)?;
            let mut report = RunReport::new(cfg, &ds);
            report.annotations = Some(summarize_annotations(&ds, &anns, PairSource::SelectedTop1));
            report.visual_checksum = Some(models.checksum());
            report.audio_checksum = Some(encoder.checksum());
            ctx.say(format!("test class R@1 {:.3}", eval.recall.class_r1));
            let per_class = eval.per_class_csv();
            report.eval = Some(eval);
            report.gap = Some(gap);
            ctx.write(out, &report.to_json()?)?;
            ctx.write(&sidecar(out, "per_class.csv"), &per_class)?;
        }
        Command::GapReport { dataset, visual, audio } => {
            let ds = load_dataset(&dataset)?;
            let models = load_visual(&visual)?;
            let encoder = load_audio(&audio)?;
            let (gap, projection) = gap_report(&ds, &models, &encoder, cfg.train.duration)?;
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "tool_version": TOOL_VERSION,
                "gap": gap,
                "mean_orthogonality": gap.mean_orthogonality(),
                "max_abs_centering": gap.max_abs_centering(),
                "projection_explained": projection.explained,
                "projection_rank_deficient": projection.rank_deficient,
            });
            ctx.write(out, &to_json(&doc)?)?;
            ctx.write(&sidecar(out, "projection.csv"), &projection.to_csv())?;
        }
        Command::Manipulate { dataset, visual, audio, spec } => {
            let spec = match spec {
                Some(p) => ManipulationSpec::load(p)?,
                None => ManipulationSpec::default(),
            };
            let ds = load_dataset(&dataset)?;
            let models = load_visual(&visual)?;
            let encoder = load_audio(&audio)?;
            let report = run_manipulations(&ds, &models, &encoder, cfg.train.duration, &spec)?;
            ctx.write(out, &to_json(&report)?)?;
            ctx.write(&sidecar(out, "saliency.csv"), &report.saliency_csv())?;
        }
        Command::AblationGrid => {
            std::fs::create_dir_all(out).map_err(|e| XmaError::io(out, e))?;
            ctx.say("running ablation grid");
            let rows = ablation_grid(cfg)?;
            ctx.write(&out.join("ablation.csv"), &ablation_csv(&rows))?;
            let doc = json!({
                "schema_version": SCHEMA_VERSION,
                "tool_version": TOOL_VERSION,
                "seed": cfg.seed,
                "config_echo": cfg.to_text(),
                "rows": rows,
            });
            ctx.write(&out.join("ablation.json"), &to_json(&doc)?)?;
        }
    }
    Ok(())
}

fn error_path(e: &XmaError) -> Option<&Path> {
    match e {
        XmaError::MissingArtifact(p) => Some(p),
        XmaError::Io { path, .. }
        | XmaError::BadMagic { path, .. }
        | XmaError::VersionMismatch { path, .. }
        | XmaError::Truncated { path, .. }
        | XmaError::Malformed { path, .. } => Some(path),
        _ => None,
    }
}

fn fail(kind: xma_core::ErrorKind, message: String, path: Option<&Path>) -> ExitCode {
    let code = kind.exit_code();
    let doc = json!({
        "error": {
            "kind": kind.as_str(),
            "exit_code": code,
            "message": message,
            "path": path.map(|p| p.display().to_string()),
        }
    });
    eprintln!("{doc}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(xma_core::ErrorKind::Config, e.to_string().trim().to_string(), None),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string(), error_path(&e)),
    }
}
