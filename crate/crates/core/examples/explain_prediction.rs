//! Explains one high-risk prediction: attention and occlusion attributions,
//! then a report rendered as JSON and HTML.
//!
//! cargo run --example explain_prediction -- [report.html]

use ehrseq::cohort::{Split, Stage, Task, TimeTag};
use ehrseq::dataset::{train_model, Dataset, DatasetConfig, ModelParams};
use ehrseq::explain::{attention_attribution, occlusion_attribution, render_report, ReportInput};
use ehrseq::models::{Arch, Model};
use ehrseq::synth::{generate_cohort, SynthConfig};

fn main() -> anyhow::Result<()> {
    let html_path = std::env::args().nth(1).unwrap_or_else(|| "report.html".into());
    let out = generate_cohort(&SynthConfig { n_patients: 800, note_weight: 2.5, p_high: 0.9, seed: 2, ..SynthConfig::default() })?;
    let ds = Dataset::build(&out.resources, &DatasetConfig { seed: 2, ..DatasetConfig::default() })?;
    let (task, tag) = (Task::Mortality, TimeTag::Plus24h);
    let train = ds.samples(Stage::Train, task, tag, Split::Dev)?;
    let params = ModelParams::default().with_seed(2);
    let model = train_model(Arch::Tann, task, &train, ds.vocab.size(), &params)?.model;
    let baseline = train_model(Arch::Logistic, task, &train, ds.vocab.size(), &params)?.model;
    let Model::Tann(tann) = &model else { unreachable!() };

    let test = ds.samples(Stage::Explain, task, tag, Split::Val)?;
    let s = test
        .iter()
        .max_by(|a, b| model.predict_one(&a.input()).total_cmp(&model.predict_one(&b.input())))
        .expect("validation split is not empty");
    let input = s.input();
    let attention = attention_attribution(tann, &input);
    let occlusion = occlusion_attribution(&model, &input, 5)?;
    println!("{} at {tag}: p = {:.3}", s.encounter.encounter_id, model.predict_one(&input));
    println!("occlusion top 5:");
    for a in &occlusion {
        println!("  {:+.4}  {}", a.weight, ds.vocab.token(a.token_id));
    }

    let report = render_report(
        &ReportInput {
            task,
            time_tag: tag,
            encounter: &s.encounter,
            at: s.at,
            model: Arch::Tann,
            model_score: model.predict_one(&input),
            baseline_score: Some(baseline.predict_one(&input)),
            prefix: &s.prefix,
            vocab: &ds.vocab,
            top_k: 8,
        },
        &attention,
        &[],
    );
    for h in &report.highlights {
        println!("#{} {:<36} {:.3}  {}", h.rank, h.token, h.weight, h.context.as_deref().unwrap_or(""));
    }
    std::fs::write(&html_path, report.to_html())?;
    println!("wrote {html_path}");
    Ok(())
}
