//! Boosts time-windowed decision stumps and prints the first rules it picks.

use ehrseq::cohort::{Split, Stage, Task, TimeTag};
use ehrseq::dataset::{Dataset, DatasetConfig};
use ehrseq::eval::{auroc, ScoredSet};
use ehrseq::models::{train_stumps, Predicate, StumpConfig};
use ehrseq::synth::{generate_cohort, SynthConfig};

fn main() -> anyhow::Result<()> {
    let out = generate_cohort(&SynthConfig { n_patients: 800, note_weight: 2.5, p_high: 0.9, seed: 4, ..SynthConfig::default() })?;
    let ds = Dataset::build(&out.resources, &DatasetConfig { seed: 4, ..DatasetConfig::default() })?;
    let train = ds.samples(Stage::Train, Task::Mortality, TimeTag::Plus24h, Split::Dev)?;
    let test = ds.samples(Stage::Evaluate, Task::Mortality, TimeTag::Plus24h, Split::Test)?;
    let examples: Vec<_> = train.iter().map(|s| s.example()).collect();
    let labels: Vec<bool> = train.iter().map(|s| s.binary()).collect::<Result<_, _>>()?;

    let m = train_stumps(&examples, &labels, &StumpConfig { rounds: 60, seed: 4, ..StumpConfig::default() })?;
    let window = |w: usize| match m.windows[w] {
        Some(h) => format!("last {h} h"),
        None => "any time".to_string(),
    };
    println!("intercept {:.3}, {} stumps", m.intercept, m.stumps.len());
    for s in m.stumps.iter().take(10) {
        let rule = match &s.predicate {
            Predicate::Token { token, window: w } => format!("{} in {}", ds.vocab.token(*token), window(*w)),
            Predicate::Numeric { key, window: w, threshold } => format!("latest {key} >= {threshold:.2} in {}", window(*w)),
        };
        println!("  {:+.3}  {rule}", s.alpha);
    }
    let scores: Vec<f64> = test.iter().map(|s| m.predict(&s.input())).collect();
    let test_labels: Vec<bool> = test.iter().map(|s| s.binary()).collect::<Result<_, _>>()?;
    println!("test AUROC {:.3}", auroc(&ScoredSet::from_pairs(scores, test_labels)?)?);
    Ok(())
}
