//! Acceptance gate. Each test prints one `criterion N: PASS|FAIL` line to the
//! process stdout (bypassing the harness capture) and then asserts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ehrseq::cohort::{
    extract_encounters, is_included, label_long_los, label_mortality, prediction_grid, Cohort, CohortRules, EncounterRecord, Split, Stage,
    Task, TimeTag,
};
use ehrseq::dataset::{score, train_model, Dataset, DatasetConfig, ModelParams, Sample};
use ehrseq::eval::{
    auroc, bootstrap_ci, calibration_curve, choose_threshold, metrics_report, micro_f1, nne_at_sensitivity, weighted_auroc, ScoredSet,
    DEFAULT_RESAMPLES,
};
use ehrseq::explain::{attention_attribution, occlusion_attribution};
use ehrseq::math::rng_for;
use ehrseq::models::lstm::Bags;
use ehrseq::models::{
    ensemble, gradient_check, train_baseline, train_logistic, Arch, BaselineKind, LogisticConfig, LogisticModel, LstmModel, Model,
    PredictionInput, SeqExample, TannModel,
};
use ehrseq::pipeline::{run, Command, PathsConfig, RunConfig};
use ehrseq::synth::{bayes_auroc, generate_cohort, ManifestEntry, SynthConfig, SynthOutput};
use ehrseq::timeline::{input_prefix, TokenOccurrence};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const HOUR: i64 = 3_600_000;
const DAY: i64 = 24 * HOUR;

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    let line = format!("criterion {n:>2}: {} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

// Brute-force oracles.

fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi && !yj {
                pairs += 1.0;
                credit += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    credit / pairs
}

/// Highest threshold (score >= t flags) whose sensitivity reaches `target`.
fn sweep_nne(scores: &[f64], labels: &[bool], target: f64) -> f64 {
    let p = labels.iter().filter(|&&y| y).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    for t in thresholds {
        let flagged = scores.iter().filter(|&&s| s >= t).count() as f64;
        let tp = scores.iter().zip(labels).filter(|(&s, &y)| s >= t && y).count() as f64;
        if tp / p >= target {
            return flagged / tp;
        }
    }
    unreachable!()
}

fn random_scored_set<R: Rng>(rng: &mut R) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.random_range(2..=50);
        let levels = rng.random_range(2..=12);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().any(|&y| y) && labels.iter().any(|&y| !y) {
            return (scores, labels);
        }
    }
}

#[test]
fn criterion_01_metric_oracles() {
    let t = Instant::now();
    let mut rng = rng_for(101, 0);
    let (mut worst_auc, mut worst_nne) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (scores, labels) = random_scored_set(&mut rng);
        let s = ScoredSet::from_pairs(scores.clone(), labels.clone()).unwrap();
        worst_auc = worst_auc.max((auroc(&s).unwrap() - pairwise_auroc(&scores, &labels)).abs());
        worst_nne = worst_nne.max((nne_at_sensitivity(&s, 0.8).unwrap() - sweep_nne(&scores, &labels, 0.8)).abs());
    }
    let elapsed = t.elapsed();
    let ok = worst_auc <= 1e-12 && worst_nne <= 1e-12 && elapsed < Duration::from_secs(10);
    verdict(1, "metric oracle equivalence", ok, &format!("max |dAUROC| {worst_auc:.1e}, max |dNNE| {worst_nne:.1e}, {elapsed:.2?}"));
}

fn random_seq<R: Rng>(rng: &mut R, vocab: usize) -> SeqExample {
    let n = rng.random_range(1..=8);
    let mut ex = SeqExample::default();
    for i in 0..n {
        ex.tokens.push(rng.random_range(2..vocab as u32));
        ex.delta_h.push(rng.random_range(0.0..2000.0));
        ex.resource_types.push(ehrseq::fhir::ResourceType::Observation);
        ex.source.push(i);
    }
    ex
}

#[test]
fn criterion_02_gradient_checks() {
    let t = Instant::now();
    let mut rng = rng_for(202, 0);
    let (mut tann_err, mut lstm_err, mut logit_err) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..20 {
        let tann = TannModel::init(12, 4, &[0.3], &mut rng_for(202, 100 + i));
        let ex = random_seq(&mut rng, 12);
        let y = [rng.random_bool(0.5) as u8 as f64];
        tann_err = tann_err.max(gradient_check(&tann, &ex, &y, 1e-4).unwrap());

        let lstm = LstmModel::init(12, 4, 3, &[0.3], &mut rng_for(202, 200 + i));
        let bags = Bags((0..rng.random_range(1..5)).map(|_| (0..rng.random_range(0..4)).map(|_| rng.random_range(2..12)).collect()).collect());
        lstm_err = lstm_err.max(gradient_check(&lstm, &bags, &y, 1e-4).unwrap());

        let w: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let logit = LogisticModel::new(w, rng.random_range(-1.0..1.0), 1e-3);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        logit_err = logit_err.max(gradient_check(&logit, &x, &y, 1e-4).unwrap());
    }
    let elapsed = t.elapsed();
    let ok = tann_err < 1e-4 && lstm_err < 1e-4 && logit_err < 1e-8 && elapsed < Duration::from_secs(60);
    verdict(
        2,
        "gradient correctness",
        ok,
        &format!("max rel err tann {tann_err:.1e}, lstm {lstm_err:.1e}, logistic {logit_err:.1e}, {elapsed:.2?}"),
    );
}

fn test_manifest(synth: &SynthOutput, test: &[Sample]) -> Vec<ManifestEntry> {
    let ids: BTreeSet<&str> = test.iter().map(|s| s.encounter.encounter_id.as_str()).collect();
    synth.manifest.iter().filter(|m| ids.contains(m.encounter_id.as_str())).cloned().collect()
}

#[test]
fn criterion_03_discrimination_ceiling() {
    let t = Instant::now();
    let cfg = SynthConfig { n_patients: 2500, note_weight: 0.0, seed: 303, ..SynthConfig::default() };
    let synth = generate_cohort(&cfg).unwrap();
    let ds = Dataset::build(&synth.resources, &DatasetConfig { seed: 303, ..DatasetConfig::default() }).unwrap();
    let train = ds.samples(Stage::Train, Task::Mortality, TimeTag::Plus24h, Split::Dev).unwrap();
    let test = ds.samples(Stage::Evaluate, Task::Mortality, TimeTag::Plus24h, Split::Test).unwrap();
    let params = ModelParams::default().with_seed(303);
    let m = train_model(Arch::Logistic, Task::Mortality, &train, ds.vocab.size(), &params).unwrap();
    let model_auc = auroc(&score(&m.model, &test, 0).unwrap()).unwrap();
    let bayes = bayes_auroc(&test_manifest(&synth, &test)).unwrap();
    let elapsed = t.elapsed();
    let gap = (model_auc - bayes).abs();
    let ok = gap <= 0.02 && elapsed < Duration::from_secs(300);
    verdict(
        3,
        "synthetic discrimination ceiling",
        ok,
        &format!(
            "{} generated encounters, test n={}: logistic {model_auc:.4} vs bayes {bayes:.4} (gap {gap:.4}), {elapsed:.2?}",
            synth.manifest.len(),
            test.len()
        ),
    );
}

/// Note-signal cohort shared by the deep-model criteria.
struct NoteWorld {
    ds: Dataset,
    params: ModelParams,
    tann: Model,
    stumps: Model,
    baseline: Model,
    test: Vec<Sample>,
    built_in: Duration,
}

fn note_world() -> &'static NoteWorld {
    static WORLD: OnceLock<NoteWorld> = OnceLock::new();
    WORLD.get_or_init(|| {
        let t = Instant::now();
        let cfg = SynthConfig { n_patients: 2500, note_weight: 2.5, p_high: 0.9, p_low: 0.05, seed: 11, ..SynthConfig::default() };
        let synth = generate_cohort(&cfg).unwrap();
        let ds = Dataset::build(&synth.resources, &DatasetConfig { seed: 11, ..DatasetConfig::default() }).unwrap();
        let params = ModelParams::default().with_seed(11);
        let train = ds.samples(Stage::Train, Task::Mortality, TimeTag::Plus24h, Split::Dev).unwrap();
        let test = ds.samples(Stage::Evaluate, Task::Mortality, TimeTag::Plus24h, Split::Test).unwrap();
        let fit = |arch| train_model(arch, Task::Mortality, &train, ds.vocab.size(), &params).unwrap().model;
        let (tann, stumps, baseline) = (fit(Arch::Tann), fit(Arch::Stumps), fit(Arch::Logistic));
        NoteWorld { ds, params, tann, stumps, baseline, test, built_in: t.elapsed() }
    })
}

#[test]
fn criterion_04_deep_vs_baseline_gap() {
    let t = Instant::now();
    let w = note_world();
    let tann = score(&w.tann, &w.test, 0).unwrap();
    let stumps = score(&w.stumps, &w.test, 0).unwrap();
    let base = score(&w.baseline, &w.test, 0).unwrap();
    let ens = ensemble(vec![w.tann.clone(), w.stumps.clone()]).unwrap();
    let ens_scores = score(&ens, &w.test, 0).unwrap();
    let (a_t, a_s, a_b) = (auroc(&tann).unwrap(), auroc(&stumps).unwrap(), auroc(&base).unwrap());
    let (nne_e, nne_b) = (nne_at_sensitivity(&ens_scores, 0.8).unwrap(), nne_at_sensitivity(&base, 0.8).unwrap());
    let elapsed = t.elapsed().max(w.built_in);
    let ok = a_t - a_b >= 0.03 && a_s - a_b >= 0.03 && nne_e <= nne_b && elapsed < Duration::from_secs(600);
    verdict(
        4,
        "deep vs baseline gap",
        ok,
        &format!(
            "test n={}: tann {a_t:.4}, stumps {a_s:.4}, aEWS {a_b:.4}; NNE@80 ensemble {nne_e:.2} vs aEWS {nne_b:.2}, {elapsed:.2?}",
            w.test.len()
        ),
    );
}

#[test]
fn criterion_05_earliness_shape() {
    let w = note_world();
    let grid = Task::Mortality.grid();
    let e = &w.ds.cohort.encounters[0];
    let points = prediction_grid(e, Task::Mortality);
    let spaced = points.windows(2).all(|p| p[1].time - p[0].time == 12 * HOUR) && points[0].time == e.admit_time - DAY;
    let early_train = w.ds.samples(Stage::Train, Task::Mortality, TimeTag::Minus24h, Split::Dev).unwrap();
    let early_test = w.ds.samples(Stage::Evaluate, Task::Mortality, TimeTag::Minus24h, Split::Test).unwrap();
    let early = train_model(Arch::Tann, Task::Mortality, &early_train, w.ds.vocab.size(), &w.params).unwrap().model;
    let a_early = auroc(&score(&early, &early_test, 0).unwrap()).unwrap();
    let a_late = auroc(&score(&w.tann, &w.test, 0).unwrap()).unwrap();
    let ok = grid.len() == 5 && points.len() == 5 && spaced && a_late - a_early >= 0.05;
    verdict(
        5,
        "earliness curve shape",
        ok,
        &format!("{} grid points 12 h apart from admit-24h: {spaced}; TANN AUROC admit-24h {a_early:.4}, admit+24h {a_late:.4}", points.len()),
    );
}

// Independent readmission oracle: matched(i) is the earliest candidate of
// index i not matched by any earlier index.
fn oracle_readmissions(stays: &[EncounterRecord]) -> Vec<bool> {
    fn candidates(stays: &[EncounterRecord], i: usize) -> BTreeSet<usize> {
        let index = &stays[i];
        (i + 1..stays.len())
            .filter(|&j| {
                let r = &stays[j];
                !r.planned_flag
                    && r.institution_id == index.institution_id
                    && r.admit_time >= index.discharge_time
                    && r.admit_time - index.discharge_time <= 30 * DAY
            })
            .collect()
    }
    let mut matched: BTreeMap<usize, usize> = BTreeMap::new();
    for i in (0..stays.len()).filter(|&i| is_included(&stays[i])) {
        let taken: BTreeSet<usize> = matched.values().copied().collect();
        if let Some(&j) = candidates(stays, i).difference(&taken).next() {
            matched.insert(i, j);
        }
    }
    (0..stays.len()).map(|i| matched.contains_key(&i)).collect()
}

fn random_patient<R: Rng>(rng: &mut R, pid: usize) -> Vec<EncounterRecord> {
    let n = rng.random_range(1..=6);
    let mut t = rng.random_range(0..1000) * DAY;
    let base_age = rng.random_range(16.0..40.0);
    let mut out = Vec::new();
    for k in 0..n {
        let los = match rng.random_range(0..4) {
            0 => 24 * HOUR,
            1 => 24 * HOUR - 1,
            2 => 7 * DAY,
            _ => rng.random_range(1..400) * HOUR,
        };
        let age = match rng.random_range(0..5) {
            0 => 18.0,
            1 => 17.999_999,
            _ => base_age + k as f64,
        };
        out.push(EncounterRecord {
            encounter_id: format!("q{pid}-{k}"),
            patient_id: format!("q{pid}"),
            institution_id: if rng.random_bool(0.8) { "a".into() } else { "b".into() },
            admit_time: t,
            discharge_time: t + los,
            discharge_disposition: if rng.random_bool(0.15) { "expired".into() } else { "home".into() },
            hospital_service: "medicine".into(),
            admit_source: "emergency".into(),
            gender: "female".into(),
            age_at_admit: age,
            icd9_codes: BTreeSet::new(),
            planned_flag: rng.random_bool(0.2),
            prior_admissions: k as u32,
        });
        let gap = match rng.random_range(0..4) {
            0 => 30 * DAY,
            1 => 30 * DAY + 1,
            2 => 0,
            _ => rng.random_range(0..60) * DAY + rng.random_range(0..24) * HOUR,
        };
        t += los + gap;
    }
    out
}

#[test]
fn criterion_06_labeling_laws() {
    let rules = CohortRules::default();
    let mut rng = rng_for(606, 0);
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for pid in 0..1000 {
        let stays = random_patient(&mut rng, pid);
        let cohort = Cohort::build(&stays, &rules, 1).unwrap();
        let expected = oracle_readmissions(&stays);
        for (k, e) in stays.iter().enumerate() {
            let adult = e.age_at_admit >= 18.0;
            let long_enough = e.discharge_time - e.admit_time >= 24 * HOUR;
            match cohort.labels.get(&e.encounter_id) {
                None if adult && long_enough => mismatches.push(format!("{} wrongly excluded", e.encounter_id)),
                None => {}
                Some(_) if !(adult && long_enough) => mismatches.push(format!("{} wrongly included", e.encounter_id)),
                Some(l) => {
                    checked += 1;
                    if l.readmit30 != expected[k] {
                        mismatches.push(format!("{} readmit30 {} vs oracle {}", e.encounter_id, l.readmit30, expected[k]));
                    }
                    if l.mortality != (e.discharge_disposition == "expired") || l.mortality != label_mortality(e, &rules) {
                        mismatches.push(format!("{} mortality", e.encounter_id));
                    }
                    if l.long_los != (e.discharge_time - e.admit_time >= 7 * DAY) || l.long_los != label_long_los(e) {
                        mismatches.push(format!("{} long_los", e.encounter_id));
                    }
                }
            }
        }
    }
    // Explicit boundaries.
    let base = random_patient(&mut rng_for(606, 1), 0).remove(0);
    let at = |age: f64, los: i64| EncounterRecord { age_at_admit: age, discharge_time: base.admit_time + los, ..base.clone() };
    let boundaries = is_included(&at(18.0, 24 * HOUR))
        && !is_included(&at(17.999_999, 24 * HOUR))
        && !is_included(&at(18.0, 24 * HOUR - 1));
    let ok = mismatches.is_empty() && boundaries;
    verdict(
        6,
        "labeling law suite",
        ok,
        &format!("1000 sequences, {checked} included stays, {} mismatches {:?}, inclusive boundaries {boundaries}", mismatches.len(), mismatches.first()),
    );
}

#[test]
fn criterion_07_no_leakage() {
    let synth = generate_cohort(&SynthConfig { n_patients: 150, note_weight: 2.0, seed: 707, ..SynthConfig::default() }).unwrap();
    let ds = Dataset::build(&synth.resources, &DatasetConfig { seed: 707, min_count: 2, ..DatasetConfig::default() }).unwrap();
    let mut params = ModelParams::default().with_seed(707);
    params.tann.epochs = 2;
    params.lstm.epochs = 1;
    params.stumps.rounds = 20;
    let train = ds.samples(Stage::Train, Task::Mortality, TimeTag::Plus24h, Split::Dev).unwrap();
    let inputs: Vec<PredictionInput> = train.iter().map(Sample::input).collect();
    let labels: Vec<bool> = train.iter().map(|s| s.binary().unwrap()).collect();
    let mut models: Vec<Model> = [Arch::Tann, Arch::Lstm, Arch::Stumps]
        .into_iter()
        .map(|a| train_model(a, Task::Mortality, &train, ds.vocab.size(), &params).unwrap().model)
        .collect();
    for kind in [BaselineKind::Aews, BaselineKind::MHospital, BaselineKind::MLiu] {
        models.push(Model::Logistic(train_baseline(kind, params.baseline.clone(), &inputs, &labels, &params.logistic).unwrap()));
    }
    let mut rng = rng_for(707, 0);
    let mut changed = 0;
    let mut perturbed_total = 0;
    for _ in 0..100 {
        let e = &ds.cohort.encounters[rng.random_range(0..ds.cohort.encounters.len())];
        let task = Task::ALL[rng.random_range(0..Task::ALL.len())];
        let grid = prediction_grid(e, task);
        let at = grid[rng.random_range(0..grid.len())].time;
        let timeline = ds.timeline(&e.patient_id).unwrap();
        let clean = input_prefix(timeline, at, e.admit_time);
        let mut dirty = clean.clone();
        for o in timeline.occurrences.iter().filter(|o| o.time > at) {
            dirty.push(TokenOccurrence {
                token_id: rng.random_range(0..ds.vocab.size() as u32),
                time: o.time + rng.random_range(0..DAY),
                raw_numeric_value: Some(rng.random_range(-1e3..1e3)),
                ..o.clone()
            });
            perturbed_total += 1;
        }
        for m in &models {
            let a = m.predict(&PredictionInput::new(&clean, at, e));
            let b = m.predict(&PredictionInput::new(&dirty, at, e));
            if a.iter().map(|x| x.to_bits()).ne(b.iter().map(|x| x.to_bits())) {
                changed += 1;
            }
        }
    }
    verdict(
        7,
        "no-leakage mutation",
        changed == 0 && perturbed_total > 0,
        &format!("100 pairs x {} models, {perturbed_total} post-cutoff occurrences perturbed, {changed} outputs changed", models.len()),
    );
}

#[test]
fn criterion_08_calibration() {
    let w = [1.0, -0.5, 0.8];
    let b = -0.2;
    let draw = |stream: u64, n: usize| -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = rng_for(808, stream);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z: f64 = b + w.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>();
            ys.push(rng.random_bool(1.0 / (1.0 + (-z).exp())));
            xs.push(x);
        }
        (xs, ys)
    };
    let (xs, ys) = draw(1, 10_000);
    let m = train_logistic(&xs, &ys, &LogisticConfig::default()).unwrap();
    let (tx, ty) = draw(2, 10_000);
    let s = ScoredSet::from_pairs(tx.iter().map(|x| m.predict(x)).collect(), ty).unwrap();
    let bins = calibration_curve(&s, 10);
    let worst = bins.iter().map(|c| (c.mean_pred - c.empirical_rate).abs()).fold(0.0, f64::max);
    let total: usize = bins.iter().map(|c| c.count).sum();
    verdict(
        8,
        "calibration sanity",
        worst < 0.05 && total == 10_000,
        &format!("{} bins, max |mean predicted - empirical| {worst:.4}, smallest bin {}", bins.len(), bins.iter().map(|c| c.count).min().unwrap()),
    );
}

#[test]
fn criterion_09_multilabel_protocol() {
    let mut rng = rng_for(909, 0);
    let mut rescan_ok = true;
    for _ in 0..20 {
        let rows = rng.random_range(5..40);
        let width = rng.random_range(1..6);
        let scores: Vec<Vec<f64>> = (0..rows).map(|_| (0..width).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let mut labels: Vec<Vec<bool>> = (0..rows).map(|_| (0..width).map(|_| rng.random_bool(0.3)).collect()).collect();
        labels[0][0] = true;
        let chosen = choose_threshold(&scores, &labels).unwrap();
        let f_chosen = micro_f1(&scores, &labels, chosen).unwrap();
        let best = (0..=100).map(|k| micro_f1(&scores, &labels, k as f64 / 100.0).unwrap()).fold(f64::NEG_INFINITY, f64::max);
        rescan_ok &= f_chosen == best && ((chosen * 100.0).round() - chosen * 100.0).abs() < 1e-9;
    }
    let common = ScoredSet::from_pairs(vec![0.9, 0.8, 0.7, 0.3, 0.2, 0.1], vec![true, true, true, false, false, false]).unwrap();
    let rare = ScoredSet::from_pairs(vec![0.5; 6], vec![true, false, false, false, false, false]).unwrap();
    let w = weighted_auroc(&[("common".into(), common), ("rare".into(), rare)]).unwrap();
    let ok = rescan_ok && (w.value - 0.875).abs() < 1e-12;
    verdict(9, "multi-label protocol", ok, &format!("threshold rescans agree: {rescan_ok}; weighted AUROC {{3,1}} fixture {}", w.value));
}

#[test]
fn criterion_10_attribution_fidelity() {
    let w = note_world();
    let Model::Tann(tann) = &w.tann else { unreachable!() };
    let signal = w.ds.vocab.get("note:empyema").expect("signal word is in the vocabulary");
    let strong: Vec<&Sample> = w
        .test
        .iter()
        .filter(|s| s.binary().unwrap() && s.prefix.iter().any(|o| o.token_id == signal && o.time >= s.encounter.admit_time))
        .collect();
    let (mut in_top5, mut positive_occlusion) = (0, 0);
    for s in &strong {
        let input = s.input();
        if attention_attribution(tann, &input).iter().take(5).any(|a| a.token_id == signal) {
            in_top5 += 1;
        }
        let occ = occlusion_attribution(&w.tann, &input, usize::MAX).unwrap();
        if occ.iter().filter(|a| a.token_id == signal).any(|a| a.weight > 0.0) {
            positive_occlusion += 1;
        }
    }
    let n = strong.len().max(1) as f64;
    let (r_att, r_occ) = (in_top5 as f64 / n, positive_occlusion as f64 / n);
    let ok = !strong.is_empty() && r_att >= 0.9 && r_occ >= 0.9;
    verdict(
        10,
        "attribution fidelity",
        ok,
        &format!("{} positive test cases with the signal note: top-5 attention {r_att:.3}, positive occlusion {r_occ:.3}", strong.len()),
    );
}

fn pipeline_run(dir: &Path, jobs: usize) -> (Vec<u8>, Vec<u8>) {
    let mut cfg = RunConfig::from_toml(
        "seed = 1111\n[synth]\nn_patients = 160\nnote_weight = 2.5\n[vocab]\nmin_count = 2\n\
         [models.tann]\nepochs = 3\n[models.lstm]\nepochs = 1\n[models.stumps]\nrounds = 15\n[evaluate]\nn_resamples = 200\n",
    )
    .unwrap();
    cfg.jobs = jobs;
    cfg.paths = PathsConfig { input: dir.join("raw.ndjson"), work: dir.join("work"), synth_manifest: None };
    let steps = [
        Command::Synth { out: None, manifest: None },
        Command::Ingest { input: None },
        Command::Cohort,
        Command::BuildVocab { dump_text: false },
        Command::Train { arch: Arch::Logistic, task: Task::Mortality, at: None, per_modality: false },
        Command::Train { arch: Arch::Tann, task: Task::Mortality, at: None, per_modality: false },
        Command::Train { arch: Arch::Lstm, task: Task::Mortality, at: None, per_modality: false },
        Command::Train { arch: Arch::Stumps, task: Task::Mortality, at: None, per_modality: false },
        Command::Train { arch: Arch::Ensemble, task: Task::Mortality, at: None, per_modality: false },
        Command::Evaluate { task: Task::Mortality, split: Split::Test, arch: None, at: None, out: dir.join("metrics.json") },
    ];
    for s in &steps {
        run(s, &cfg).unwrap();
    }
    let cohort: Cohort = serde_json::from_str(&std::fs::read_to_string(dir.join("work/cohort.json")).unwrap()).unwrap();
    let e = cohort.encounters.iter().find(|e| cohort.split_of(e) == Split::Test).unwrap();
    run(
        &Command::Explain {
            model: dir.join("work/checkpoints/mortality_ensemble_p24h.ckpt"),
            encounter: e.encounter_id.clone(),
            at: TimeTag::Plus24h,
            out: dir.join("report.json"),
            html: true,
            baseline: None,
        },
        &cfg,
    )
    .unwrap();
    let mut report = std::fs::read(dir.join("report.json")).unwrap();
    report.extend(std::fs::read(dir.join("report.html")).unwrap());
    (std::fs::read(dir.join("metrics.json")).unwrap(), report)
}

#[test]
fn criterion_11_pipeline_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ma, ra) = pipeline_run(a.path(), 1);
    let (mb, rb) = pipeline_run(b.path(), 4);
    let ok = ma == mb && ra == rb && !ma.is_empty();
    verdict(
        11,
        "pipeline determinism",
        ok,
        &format!("metrics {} bytes identical: {}; report {} bytes identical: {} (1 vs 4 threads)", ma.len(), ma == mb, ra.len(), ra == rb),
    );
}

#[test]
fn criterion_12_bootstrap_protocol() {
    let mut rng = rng_for(1212, 0);
    let n = 120;
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    let scores: Vec<f64> = labels.iter().map(|&y| rng.random_range(0.0..1.0) + if y { 0.3 } else { 0.0 }).collect();
    let s = ScoredSet::from_pairs(scores.clone(), labels.clone()).unwrap();
    let report = metrics_report(Task::Mortality, TimeTag::Plus24h, &s, DEFAULT_RESAMPLES, 5).unwrap();
    let again = metrics_report(Task::Mortality, TimeTag::Plus24h, &s, DEFAULT_RESAMPLES, 5).unwrap();
    let other = metrics_report(Task::Mortality, TimeTag::Plus24h, &s, DEFAULT_RESAMPLES, 6).unwrap();
    let ci = bootstrap_ci(&s, ehrseq::eval::auroc_raw, DEFAULT_RESAMPLES, 5).unwrap();
    // Oracle: replay the resample streams, pairwise AUROC, linear-interpolated percentiles.
    let mut values = Vec::new();
    for i in 0..1000u64 {
        let mut r = rng_for(5, i);
        loop {
            let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let ys: Vec<bool> = idx.iter().map(|&j| labels[j]).collect();
            if ys.iter().any(|&y| y) && ys.iter().any(|&y| !y) {
                values.push(pairwise_auroc(&idx.iter().map(|&j| scores[j]).collect::<Vec<_>>(), &ys));
                break;
            }
        }
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |p: f64| {
        let h = 999.0 * p;
        let (lo, frac) = (h.floor() as usize, h - h.floor());
        values[lo] + frac * (values[(lo + 1).min(999)] - values[lo])
    };
    let (lo, hi) = (pct(0.025), pct(0.975));
    let matches = (ci.low - lo).abs() < 1e-12 && (ci.high - hi).abs() < 1e-12 && (report.ci_low, report.ci_high) == (ci.low, ci.high);
    let reproducible = report == again && (other.ci_low, other.ci_high) != (report.ci_low, report.ci_high);
    let ok = DEFAULT_RESAMPLES == 1000 && report.n_resamples == 1000 && ci.resamples == 1000 && matches && reproducible;
    verdict(
        12,
        "bootstrap protocol",
        ok,
        &format!(
            "{} resamples, CI [{:.4}, {:.4}] vs oracle [{lo:.4}, {hi:.4}], same seed identical and new seed differs: {reproducible}",
            ci.resamples, ci.low, ci.high
        ),
    );
}

#[test]
fn extracted_records_round_trip_through_cohort() {
    // Guards the shared fixture path used above: synth -> extract -> cohort.
    let synth = generate_cohort(&SynthConfig { n_patients: 20, seed: 3, ..SynthConfig::default() }).unwrap();
    let (all, report) = extract_encounters(&synth.resources, &CohortRules::default());
    assert_eq!(report.encounters as usize, synth.manifest.len());
    let cohort = Cohort::build(&all, &CohortRules::default(), 3).unwrap();
    assert!(cohort.encounters.iter().all(is_included));
}
