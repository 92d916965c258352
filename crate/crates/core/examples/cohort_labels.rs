//! Extracts hospitalizations, applies the inclusion rules and prints label
//! prevalence per task and split.

use ehrseq::cohort::{extract_encounters, Cohort, CohortRules, LabelReader, Split, Stage, Task};
use ehrseq::synth::{generate_cohort, SynthConfig};

fn main() -> anyhow::Result<()> {
    let out = generate_cohort(&SynthConfig { n_patients: 400, seed: 3, ..SynthConfig::default() })?;
    let rules = CohortRules::default();
    let (all, report) = extract_encounters(&out.resources, &rules);
    println!("extracted {} hospitalizations, skipped {:?}", report.encounters, report.skipped);
    let cohort = Cohort::build(&all, &rules, 3)?;
    println!("{} kept after the adult / 24 h stay rules", cohort.encounters.len());

    // Training code reads labels through the stage gate; only evaluation sees test labels.
    let train_reader = LabelReader::new(&cohort, Stage::Train);
    assert!(train_reader.labeled(Task::Mortality, Split::Test).is_err());
    let eval_reader = LabelReader::new(&cohort, Stage::Evaluate);
    for task in [Task::Mortality, Task::Readmission, Task::LongLos] {
        for split in [Split::Dev, Split::Val, Split::Test] {
            let rows = eval_reader.labeled(task, split)?;
            let pos = rows.iter().filter(|(_, l)| l.as_bool() == Some(true)).count();
            println!("{task:<12} {split:?}: {pos:>4}/{:<4} positive", rows.len());
        }
    }
    let rows = cohort.manifest_rows();
    println!("{} manifest rows; first: {}", rows.len(), serde_json::to_string(&rows[0])?);
    Ok(())
}
