//! Trains the time-aware attention network on mortality at admission + 24 h
//! and shows where it attends for the highest-risk test case.

use ehrseq::cohort::{Split, Stage, Task, TimeTag};
use ehrseq::dataset::{Dataset, DatasetConfig, ModelParams};
use ehrseq::eval::{auroc, ScoredSet};
use ehrseq::models::tann::train_tann;
use ehrseq::synth::{generate_cohort, SynthConfig};

fn main() -> anyhow::Result<()> {
    let out = generate_cohort(&SynthConfig { n_patients: 800, note_weight: 2.5, p_high: 0.9, seed: 8, ..SynthConfig::default() })?;
    let ds = Dataset::build(&out.resources, &DatasetConfig { seed: 8, ..DatasetConfig::default() })?;
    let train = ds.samples(Stage::Train, Task::Mortality, TimeTag::Plus24h, Split::Dev)?;
    let test = ds.samples(Stage::Evaluate, Task::Mortality, TimeTag::Plus24h, Split::Test)?;
    let examples: Vec<_> = train.iter().map(|s| s.example()).collect();
    let labels: Vec<bool> = train.iter().map(|s| s.binary()).collect::<Result<_, _>>()?;

    let cfg = ModelParams::default().with_seed(8).tann;
    let fit = train_tann(&examples, &labels, ds.vocab.size(), &cfg)?;
    for (epoch, loss) in fit.loss_history.iter().enumerate() {
        println!("epoch {epoch:>2}  loss {loss:.4}");
    }
    let scores: Vec<f64> = test.iter().map(|s| fit.model.predict(&s.input())[0]).collect();
    let test_labels: Vec<bool> = test.iter().map(|s| s.binary()).collect::<Result<_, _>>()?;
    println!("test AUROC {:.3}", auroc(&ScoredSet::from_pairs(scores.clone(), test_labels)?)?);

    let top = (0..test.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
    let s = &test[top];
    let (_, weights) = fit.model.attention(&s.input());
    let mut weights = weights;
    weights.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("highest risk: {} (p = {:.3})", s.encounter.encounter_id, scores[top]);
    for (pos, w) in weights.iter().take(5) {
        let o = &s.prefix[*pos];
        println!("  {:.3}  {:<36} {:>6.1} h before", w, ds.vocab.token(o.token_id), (s.at - o.time) as f64 / 3.6e6);
    }
    Ok(())
}
