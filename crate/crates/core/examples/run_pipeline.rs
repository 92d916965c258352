//! Runs every stage of the file-based pipeline in a scratch directory, the
//! same way the `ehrseq` binary does.

use ehrseq::cohort::{Split, Task};
use ehrseq::models::Arch;
use ehrseq::pipeline::{run, Command, PathsConfig, RunConfig};

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("ehrseq_pipeline_example");
    let mut cfg = RunConfig::from_toml(
        r#"
        seed = 2024
        [synth]
        n_patients = 300
        note_weight = 2.5
        [models.lstm]
        epochs = 2
        [evaluate]
        n_resamples = 300
        "#,
    )?;
    cfg.paths = PathsConfig { input: dir.join("raw.ndjson"), work: dir.join("work"), synth_manifest: None };
    let train = |arch| Command::Train { arch, task: Task::Mortality, at: None, per_modality: false };
    let stages = [
        Command::Synth { out: None, manifest: None },
        Command::Ingest { input: None },
        Command::Cohort,
        Command::BuildVocab { dump_text: true },
        train(Arch::Logistic),
        train(Arch::Tann),
        train(Arch::Lstm),
        train(Arch::Stumps),
        train(Arch::Ensemble),
        Command::Evaluate { task: Task::Mortality, split: Split::Test, arch: None, at: None, out: dir.join("metrics.json") },
    ];
    for stage in &stages {
        let outcome = run(stage, &cfg)?;
        println!("[{}] {}", stage.name(), outcome.summary);
    }
    println!("artifacts under {}", dir.display());
    Ok(())
}
