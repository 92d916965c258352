//! Trains the bagged-time-step LSTM on a small cohort and prints its loss
//! curve and test AUROC.

use ehrseq::cohort::{Split, Stage, Task, TimeTag};
use ehrseq::dataset::{Dataset, DatasetConfig};
use ehrseq::eval::{auroc, ScoredSet};
use ehrseq::models::lstm::bag_tokens;
use ehrseq::models::{train_lstm, LstmConfig};
use ehrseq::synth::{generate_cohort, SynthConfig};

fn main() -> anyhow::Result<()> {
    let out = generate_cohort(&SynthConfig { n_patients: 400, note_weight: 2.5, p_high: 0.9, seed: 12, ..SynthConfig::default() })?;
    let ds = Dataset::build(&out.resources, &DatasetConfig { seed: 12, ..DatasetConfig::default() })?;
    let train = ds.samples(Stage::Train, Task::Mortality, TimeTag::Plus24h, Split::Dev)?;
    let test = ds.samples(Stage::Evaluate, Task::Mortality, TimeTag::Plus24h, Split::Test)?;
    let examples: Vec<_> = train.iter().map(|s| s.example()).collect();
    let labels: Vec<bool> = train.iter().map(|s| s.binary()).collect::<Result<_, _>>()?;

    let cfg = LstmConfig { d: 16, h: 16, epochs: 5, seed: 12, ..LstmConfig::default() };
    let bags = bag_tokens(&examples[0], cfg.bag_hours, cfg.max_bags);
    println!("first example: {} tokens in {} bags of {} h", examples[0].len(), bags.0.len(), cfg.bag_hours);
    let fit = train_lstm(&examples, &labels, ds.vocab.size(), &cfg)?;
    for (epoch, loss) in fit.loss_history.iter().enumerate() {
        println!("epoch {epoch}  loss {loss:.4}");
    }
    let scores: Vec<f64> = test.iter().map(|s| fit.model.predict(&s.input())[0]).collect();
    let test_labels: Vec<bool> = test.iter().map(|s| s.binary()).collect::<Result<_, _>>()?;
    println!("test AUROC {:.3}", auroc(&ScoredSet::from_pairs(scores, test_labels)?)?);
    Ok(())
}
