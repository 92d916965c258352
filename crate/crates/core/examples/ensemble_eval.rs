//! Compares the baseline, each sequence model and their mean ensemble on the
//! same test encounters: AUROC with bootstrap interval, work-up to detection
//! ratio at 80% sensitivity and a calibration table.

use ehrseq::cohort::{Split, Stage, Task, TimeTag};
use ehrseq::dataset::{score, train_model, Dataset, DatasetConfig, ModelParams};
use ehrseq::eval::metrics_report;
use ehrseq::models::{ensemble, Arch};
use ehrseq::synth::{generate_cohort, SynthConfig};

fn main() -> anyhow::Result<()> {
    let out = generate_cohort(&SynthConfig { n_patients: 1000, note_weight: 2.5, p_high: 0.9, seed: 17, ..SynthConfig::default() })?;
    let ds = Dataset::build(&out.resources, &DatasetConfig { seed: 17, ..DatasetConfig::default() })?;
    let (task, tag) = (Task::Mortality, TimeTag::Plus24h);
    let train = ds.samples(Stage::Train, task, tag, Split::Dev)?;
    let test = ds.samples(Stage::Evaluate, task, tag, Split::Test)?;
    let mut params = ModelParams::default().with_seed(17);
    params.lstm.epochs = 4;

    let mut members = Vec::new();
    let mut rows = Vec::new();
    for arch in [Arch::Logistic, Arch::Tann, Arch::Lstm, Arch::Stumps] {
        let m = train_model(arch, task, &train, ds.vocab.size(), &params)?.model;
        rows.push((arch.to_string(), metrics_report(task, tag, &score(&m, &test, 0)?, 1000, 17)?));
        if arch != Arch::Logistic {
            members.push(m);
        }
    }
    let ens = ensemble(members)?;
    rows.push(("ensemble".into(), metrics_report(task, tag, &score(&ens, &test, 0)?, 1000, 17)?));

    println!("{} test encounters, {} deaths", rows[0].1.n, rows[0].1.positives);
    println!("{:<10} {:>7} {:>17} {:>8}", "model", "AUROC", "95% CI", "NNE@80");
    for (name, r) in &rows {
        println!("{name:<10} {:>7.3} [{:.3}, {:.3}] {:>8.2}", r.auroc, r.ci_low, r.ci_high, r.nne_at_80);
    }
    println!("\nensemble calibration");
    for b in &rows.last().unwrap().1.calibration {
        println!("  predicted {:.3}  observed {:.3}  n={}", b.mean_pred, b.empirical_rate, b.count);
    }
    Ok(())
}
