//! Thin command-line front end over [`ehrseq::pipeline`].

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ehrseq::cohort::{Split, Task, TimeTag};
use ehrseq::models::Arch;
use ehrseq::pipeline::{run, Command, PipelineError, RunConfig};

#[derive(Parser)]
#[command(name = "ehrseq", version, about = "EHR timelines, cohorts, sequence models and evaluation")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides `paths.work`.
    #[arg(long, global = true)]
    work: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Write a synthetic resource stream and its ground-truth manifest.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Validate a resource stream into the work directory.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Extract hospitalizations, apply inclusion rules, label and split.
    Cohort,
    /// Fit the quantizer and vocabulary on development patients and write timelines.
    BuildVocab {
        #[arg(long)]
        dump_text: bool,
    },
    /// Train one model for a task and time tag and write its checkpoint.
    Train {
        #[arg(long)]
        arch: Arch,
        #[arg(long)]
        task: Task,
        #[arg(long, allow_hyphen_values = true)]
        at: Option<TimeTag>,
        #[arg(long)]
        per_modality: bool,
    },
    /// Score checkpoints on a split: AUROC with bootstrap CI, calibration and earliness.
    Evaluate {
        #[arg(long)]
        task: Task,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        arch: Option<Arch>,
        #[arg(long, allow_hyphen_values = true)]
        at: Option<TimeTag>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attribute one encounter's prediction to timeline occurrences.
    Explain {
        /// Checkpoint to explain.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        encounter: String,
        #[arg(long, allow_hyphen_values = true)]
        at: TimeTag,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        html: bool,
        #[arg(long)]
        top_k: Option<usize>,
        /// Baseline checkpoint scored alongside the model.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<String, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.seed = cli.seed.or(cfg.seed);
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(w) = cli.work {
        cfg.paths.work = w;
    }
    let cmd = match cli.cmd {
        Sub::Synth { out, manifest } => Command::Synth { out, manifest },
        Sub::Ingest { input } => Command::Ingest { input },
        Sub::Cohort => Command::Cohort,
        Sub::BuildVocab { dump_text } => Command::BuildVocab { dump_text },
        Sub::Train { arch, task, at, per_modality } => Command::Train { arch, task, at, per_modality },
        Sub::Evaluate { task, split, arch, at, out } => Command::Evaluate { task, split, arch, at, out },
        Sub::Explain { model, encounter, at, out, html, top_k, baseline } => {
            if let Some(k) = top_k {
                cfg.explain.top_k = k;
            }
            Command::Explain { model, encounter, at, out, html, baseline }
        }
    };
    let outcome = run(&cmd, &cfg)?;
    let mut text = outcome.summary;
    for p in outcome.outputs {
        text.push_str(&format!("\n  wrote {}", p.display()));
    }
    Ok(text)
}
