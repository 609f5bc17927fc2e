mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use headpose::archive::write_atomic;
use headpose::dataset::{
    load_samples, prepare_input, write_synthetic_dataset, ImageSource, Sample, DEFAULT_SYNTHETIC_SIDE,
};
use headpose::eval::{ablate_loss, evaluate, sweep_k, EvalReport, RunPlan};
use headpose::geometry::{squarify_box, HeadPose};
use headpose::net::{build_model, decode_prediction};
use headpose::train::{checkpoint_path, resume, train, Checkpoint};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "headpose", version, about = "Head pose estimation: training, evaluation and margin sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace one config value, e.g. `--override epochs=0` (repeatable)
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset: one PNG per sample plus manifest.json
    SynthData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_SYNTHETIC_SIDE)]
        image_side: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes the checkpoint, history and config to the run directory
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from this checkpoint for `epochs` more epochs
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the configured evaluation set
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Crop margin; defaults to the config's `k`
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate once per margin value
    SweepK {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated K values
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combined loss vs regression alone, per margin value
    AblateLoss {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict yaw, pitch and roll for one face
    Predict {
        #[arg(long)]
        image: PathBuf,
        /// Face box as "left,top,width,height"
        #[arg(long = "box", value_name = "L,T,W,H")]
        face_box: String,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print a saved report.json as a table, or export its plot data
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ReportFormat {
    Text,
    Json,
    Buckets,
    Histogram,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| Ok(std::io::Write::write_all(w, text.as_bytes())?))
        .with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(out: &Path, cfg: Option<&RunConfig>) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    if let Some(cfg) = cfg {
        write_text(&out.join("run_config.json"), &serde_json::to_string_pretty(cfg)?)?;
    }
    Ok(())
}

fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    write_text(&out.join("report.json"), &report.to_json()?)?;
    write_text(&out.join("report.txt"), &report.to_text())?;
    write_text(&out.join("buckets.csv"), &report.buckets_csv())?;
    write_text(&out.join("histogram.csv"), &report.histogram_csv())
}

fn load(manifest: headpose::dataset::DatasetManifest) -> Result<Vec<Sample>> {
    let root = manifest.root.display().to_string();
    let samples = load_samples(&manifest).with_context(|| format!("loading dataset {root}"))?;
    if samples.is_empty() {
        bail!("dataset {root} has no samples");
    }
    Ok(samples)
}

fn parse_box(s: &str) -> Result<[f64; 4]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| anyhow!("--box expects four numbers \"left,top,width,height\", got {s:?}"))?;
    <[f64; 4]>::try_from(v).map_err(|_| anyhow!("--box expects four numbers \"left,top,width,height\", got {s:?}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData {
            n,
            seed,
            image_side,
            out,
        } => {
            let m = write_synthetic_dataset(&out, n, seed, image_side)?;
            println!("wrote {} samples to {}", m.samples.len(), out.display());
        }
        Command::Train { cfg, resume: from, out } => {
            let cfg = cfg.resolve()?;
            prepare_out(&out, Some(&cfg))?;
            let samples = load(cfg.train_manifest()?)?;
            let spec = cfg.model_spec();
            let tc = cfg.train_config();
            let outcome = match from {
                Some(path) => {
                    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
                    resume(ckpt, &spec, &samples, &tc, Some(&out))?
                }
                None => train(build_model(&spec, tc.seed)?, &samples, &tc, Some(&out))?,
            };
            let last = outcome.history.epochs.last();
            println!(
                "trained to epoch {} ({} steps, {} samples dropped){}; checkpoint {}",
                outcome.checkpoint.epoch,
                outcome.checkpoint.step,
                outcome.history.dropped,
                last.map(|e| format!(", final loss {:.4}", e.total)).unwrap_or_default(),
                checkpoint_path(&out).display()
            );
        }
        Command::Eval { cfg, checkpoint, k, out } => {
            let cfg = cfg.resolve()?;
            prepare_out(&out, Some(&cfg))?;
            let ckpt = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let samples = load(cfg.eval_manifest()?)?;
            let mut opts = cfg.eval_options(k.unwrap_or(cfg.k));
            opts.pixel_norm = ckpt.config.pixel_norm;
            let report = evaluate(&ckpt.model, &samples, &opts)?;
            write_report(&out, &report)?;
            print!("{}", report.to_text());
        }
        Command::SweepK { cfg, k, out } => {
            let cfg = cfg.resolve()?;
            prepare_out(&out, Some(&cfg))?;
            let (train_s, eval_s) = (load(cfg.train_manifest()?)?, load(cfg.eval_manifest()?)?);
            let plan = plan(&cfg, &train_s, &eval_s, &out);
            let table = sweep_k(&plan, &k)?;
            write_text(&out.join("sweep.json"), &serde_json::to_string_pretty(&table)?)?;
            write_text(&out.join("sweep.csv"), &table.to_csv())?;
            write_text(&out.join("sweep.txt"), &table.to_text())?;
            print!("{}", table.to_text());
        }
        Command::AblateLoss { cfg, k, out } => {
            let cfg = cfg.resolve()?;
            prepare_out(&out, Some(&cfg))?;
            let (train_s, eval_s) = (load(cfg.train_manifest()?)?, load(cfg.eval_manifest()?)?);
            let plan = plan(&cfg, &train_s, &eval_s, &out);
            let table = ablate_loss(&plan, &k)?;
            write_text(&out.join("ablation.json"), &serde_json::to_string_pretty(&table)?)?;
            write_text(&out.join("ablation.csv"), &table.to_csv())?;
            write_text(&out.join("ablation.txt"), &table.to_text())?;
            print!("{}", table.to_text());
        }
        Command::Predict {
            image,
            face_box,
            k,
            checkpoint,
        } => {
            let [l, t, w, h] = parse_box(&face_box)?;
            let ckpt = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let sample = Sample {
                source_id: image.display().to_string(),
                pose: HeadPose::zero(),
                bbox: squarify_box(l, t, w, h)?,
                image: ImageSource::File(image),
            };
            let patch = prepare_input(&sample, k, ckpt.model.spec().input_side, &ckpt.config.pixel_norm)?;
            let pose = decode_prediction(&ckpt.model.predict(&patch)?);
            println!("yaw {:.3} pitch {:.3} roll {:.3}", pose.yaw, pose.pitch, pose.roll);
        }
        Command::Report { input, format } => {
            let path = if input.is_dir() { input.join("report.json") } else { input };
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let report: EvalReport =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let rendered = match format {
                ReportFormat::Text => report.to_text(),
                ReportFormat::Json => report.to_json()? + "\n",
                ReportFormat::Buckets => report.buckets_csv(),
                ReportFormat::Histogram => report.histogram_csv(),
            };
            print!("{rendered}");
        }
    }
    Ok(())
}

fn plan<'a>(cfg: &RunConfig, train_s: &'a [Sample], eval_s: &'a [Sample], out: &Path) -> RunPlan<'a> {
    RunPlan {
        spec: cfg.model_spec(),
        train: cfg.train_config(),
        eval: cfg.eval_options(cfg.k),
        train_samples: train_s,
        eval_samples: eval_s,
        run_root: Some(out.join("runs")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
