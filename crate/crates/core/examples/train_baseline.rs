//! Trains the three logistic baselines (aEWS for mortality, mHOSPITAL for
//! readmission, mLiu for long stays) and reports test AUROC with bootstrap
//! intervals.

use ehrseq::cohort::{Split, Stage, Task};
use ehrseq::dataset::{score, train_model, Dataset, DatasetConfig, ModelParams};
use ehrseq::eval::metrics_report;
use ehrseq::models::{Arch, Model};
use ehrseq::synth::{generate_cohort, SynthConfig};

fn main() -> anyhow::Result<()> {
    let out = generate_cohort(&SynthConfig { n_patients: 800, seed: 5, ..SynthConfig::default() })?;
    let ds = Dataset::build(&out.resources, &DatasetConfig { seed: 5, ..DatasetConfig::default() })?;
    let params = ModelParams::default().with_seed(5);
    for task in [Task::Mortality, Task::Readmission, Task::LongLos] {
        let tag = task.primary_tag();
        let train = ds.samples(Stage::Train, task, tag, Split::Dev)?;
        let test = ds.samples(Stage::Evaluate, task, tag, Split::Test)?;
        let trained = train_model(Arch::Logistic, task, &train, ds.vocab.size(), &params)?;
        let Model::Logistic(m) = &trained.model else { unreachable!() };
        let r = metrics_report(task, tag, &score(&trained.model, &test, 0)?, 500, 5)?;
        println!(
            "{task:<12} {:<10} {} inputs ({} mask columns)  AUROC {:.3} [{:.3}, {:.3}]  NNE@80 {:.2}",
            m.featurizer.kind.as_str(),
            m.logistic.weights().len(),
            m.mask_columns.len(),
            r.auroc,
            r.ci_low,
            r.ci_high,
            r.nne_at_80
        );
    }
    Ok(())
}
