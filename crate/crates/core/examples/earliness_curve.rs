//! AUROC of the attention network across the mortality prediction grid,
//! from 24 h before admission to 24 h after, one model per timepoint.

use ehrseq::cohort::{Split, Stage, Task};
use ehrseq::dataset::{score, train_model, Dataset, DatasetConfig, ModelParams};
use ehrseq::eval::{earliness_curve, earliness_table};
use ehrseq::models::Arch;
use ehrseq::synth::{generate_cohort, SynthConfig};

fn main() -> anyhow::Result<()> {
    let out = generate_cohort(&SynthConfig { n_patients: 1000, note_weight: 2.5, p_high: 0.9, seed: 23, ..SynthConfig::default() })?;
    let ds = Dataset::build(&out.resources, &DatasetConfig { seed: 23, ..DatasetConfig::default() })?;
    let params = ModelParams::default().with_seed(23);
    let task = Task::Mortality;
    let mut per_tag = Vec::new();
    for &tag in task.grid() {
        let train = ds.samples(Stage::Train, task, tag, Split::Dev)?;
        let test = ds.samples(Stage::Evaluate, task, tag, Split::Test)?;
        let m = train_model(Arch::Tann, task, &train, ds.vocab.size(), &params)?.model;
        per_tag.push((tag, score(&m, &test, 0)?));
    }
    let curve = earliness_curve(task, &per_tag, 1000, 23)?;
    print!("{}", earliness_table(&curve));
    Ok(())
}
