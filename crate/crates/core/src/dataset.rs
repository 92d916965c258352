//! In-memory view of a prepared cohort: timelines, vocabulary and labels,
//! plus the glue that turns them into model inputs, trained models and
//! scored sets.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{extract_encounters, Cohort, CohortRules, EncounterRecord, Label, LabelReader, Split, Stage, Task, TimeTag};
use crate::error::{Error, Result};
use crate::eval::ScoredSet;
use crate::fhir::{FhirResource, ResourceType};
use crate::math::rng_for;
use crate::models::lstm::train_lstm;
use crate::models::tann::train_tann_multi;
use crate::models::{
    ensemble, train_baseline, train_diagnoses_head, train_stumps, train_tann, Arch, BaselineKind, BaselineSpec, LogisticConfig,
    LstmConfig, Model, PredictionInput, SeqExample, StumpConfig, TannConfig,
};
use crate::timeline::{
    build_timelines, build_vocabulary, fit_quantizer, input_prefix, numeric_observations, NumericQuantizer, PatientTimeline,
    TokenOccurrence, TokenizerConfig, Vocabulary,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub rules: CohortRules,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { rules: CohortRules::default(), min_count: 5, seed: 1 }
    }
}

pub struct Dataset {
    pub cohort: Cohort,
    pub vocab: Vocabulary,
    pub quantizer: NumericQuantizer,
    timelines: BTreeMap<String, PatientTimeline>,
    by_encounter: HashMap<String, usize>,
}

/// Resources of development-split patients.
pub fn dev_resources<'a>(resources: &'a [FhirResource], cohort: &'a Cohort) -> impl Iterator<Item = &'a FhirResource> {
    resources.iter().filter(|r| cohort.split.get(&r.patient_id) == Some(Split::Dev))
}

/// Fits the quantizer and vocabulary on development patients only.
pub fn fit_vocabulary(resources: &[FhirResource], cohort: &Cohort, min_count: u64) -> Result<(NumericQuantizer, Vocabulary)> {
    let cfg = TokenizerConfig::default();
    let q = fit_quantizer(&numeric_observations(dev_resources(resources, cohort), &cfg));
    let v = build_vocabulary(dev_resources(resources, cohort), &q, &cfg, min_count)?;
    Ok((q, v))
}

impl Dataset {
    /// Runs extraction, labeling, splitting, vocabulary fitting and
    /// timeline construction on an in-memory resource set.
    pub fn build(resources: &[FhirResource], cfg: &DatasetConfig) -> Result<Dataset> {
        let (all, _) = extract_encounters(resources, &cfg.rules);
        let cohort = Cohort::build(&all, &cfg.rules, cfg.seed)?;
        let (quantizer, vocab) = fit_vocabulary(resources, &cohort, cfg.min_count)?;
        let timelines = build_timelines(resources, &vocab, &quantizer, &TokenizerConfig::default());
        Ok(Dataset::from_parts(cohort, vocab, quantizer, timelines))
    }

    pub fn from_parts(cohort: Cohort, vocab: Vocabulary, quantizer: NumericQuantizer, timelines: Vec<PatientTimeline>) -> Dataset {
        let by_encounter = cohort.encounters.iter().enumerate().map(|(i, e)| (e.encounter_id.clone(), i)).collect();
        let timelines = timelines.into_iter().map(|t| (t.patient_id.clone(), t)).collect();
        Dataset { cohort, vocab, quantizer, timelines, by_encounter }
    }

    pub fn timelines(&self) -> impl Iterator<Item = &PatientTimeline> {
        self.timelines.values()
    }

    pub fn timeline(&self, patient_id: &str) -> Option<&PatientTimeline> {
        self.timelines.get(patient_id)
    }

    pub fn encounter(&self, encounter_id: &str) -> Option<&EncounterRecord> {
        self.by_encounter.get(encounter_id).map(|&i| &self.cohort.encounters[i])
    }

    /// Model-visible prefix: occurrences up to `at`, minus the stay's own billing codes.
    pub fn prefix(&self, e: &EncounterRecord, at: i64) -> Vec<TokenOccurrence> {
        self.timeline(&e.patient_id).map(|t| input_prefix(t, at, e.admit_time)).unwrap_or_default()
    }

    pub fn sample(&self, e: &EncounterRecord, tag: TimeTag, label: Label) -> Sample {
        let at = tag.time_for(e);
        Sample { encounter: e.clone(), at, prefix: self.prefix(e, at), label }
    }

    /// Labeled samples of one split at one timepoint, read through the
    /// split-aware label gate of `stage`.
    pub fn samples(&self, stage: Stage, task: Task, tag: TimeTag, split: Split) -> Result<Vec<Sample>> {
        let rows = LabelReader::new(&self.cohort, stage).labeled(task, split)?;
        Ok(rows.into_par_iter().map(|(e, label)| self.sample(e, tag, label)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub encounter: EncounterRecord,
    pub at: i64,
    pub prefix: Vec<TokenOccurrence>,
    pub label: Label,
}

impl Sample {
    pub fn input(&self) -> PredictionInput<'_> {
        PredictionInput::new(&self.prefix, self.at, &self.encounter)
    }

    pub fn example(&self) -> SeqExample {
        SeqExample::from_prefix(&self.prefix, self.at, None)
    }

    pub fn binary(&self) -> Result<bool> {
        self.label.as_bool().ok_or_else(|| Error::invalid("sample carries a code-set label"))
    }

    pub fn codes(&self) -> BTreeSet<String> {
        match &self.label {
            Label::Codes(c) => c.clone(),
            Label::Binary(_) => BTreeSet::new(),
        }
    }
}

/// Hyperparameters of every architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub logistic: LogisticConfig,
    pub baseline: BaselineSpec,
    pub tann: TannConfig,
    pub lstm: LstmConfig,
    pub stumps: StumpConfig,
    pub diagnoses_min_count: usize,
    /// Train one TANN per resource type and average them.
    pub per_modality: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            logistic: LogisticConfig::default(),
            baseline: BaselineSpec::default(),
            tann: TannConfig::default(),
            lstm: LstmConfig::default(),
            stumps: StumpConfig::default(),
            diagnoses_min_count: 5,
            per_modality: false,
        }
    }
}

impl ModelParams {
    /// Gives every trainer its own seed derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        let child = |k: u64| rng_for(seed, 0x5eed_0000 + k).next_u64();
        self.logistic.seed = child(1);
        self.tann.seed = child(2);
        self.lstm.seed = child(3);
        self.stumps.seed = child(4);
        self
    }
}

/// The logistic baseline used for each task.
pub fn baseline_for(task: Task) -> Option<BaselineKind> {
    match task {
        Task::Mortality => Some(BaselineKind::Aews),
        Task::Readmission => Some(BaselineKind::MHospital),
        Task::LongLos => Some(BaselineKind::MLiu),
        Task::Diagnoses => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub outputs: Vec<String>,
    pub excluded_codes: Vec<String>,
}

fn binary_labels(samples: &[Sample]) -> Result<Vec<bool>> {
    samples.iter().map(Sample::binary).collect()
}

/// Trains `arch` on `samples` (all drawn at one timepoint). `Arch::Ensemble`
/// trains TANN, LSTM and stumps and averages them.
pub fn train_model(arch: Arch, task: Task, samples: &[Sample], vocab_size: usize, params: &ModelParams) -> Result<TrainedModel> {
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let binary = |model: Model| TrainedModel { model, outputs: vec![task.as_str().to_string()], excluded_codes: Vec::new() };
    if task == Task::Diagnoses {
        if arch != Arch::Tann {
            return Err(Error::Unsupported(format!("the diagnoses task is trained with tann, not {arch}")));
        }
        let examples: Vec<SeqExample> = samples.par_iter().map(Sample::example).collect();
        let codes: Vec<BTreeSet<String>> = samples.iter().map(Sample::codes).collect();
        let head = train_diagnoses_head(&examples, &codes, vocab_size, params.diagnoses_min_count, &params.tann)?;
        return Ok(TrainedModel { model: Model::Tann(head.model), outputs: head.codes, excluded_codes: head.excluded.into_keys().collect() });
    }
    let labels = binary_labels(samples)?;
    match arch {
        Arch::Logistic => {
            let kind = baseline_for(task).ok_or_else(|| Error::Unsupported(format!("no baseline for {task}")))?;
            let inputs: Vec<PredictionInput> = samples.iter().map(Sample::input).collect();
            let m = train_baseline(kind, params.baseline.clone(), &inputs, &labels, &params.logistic)?;
            Ok(binary(Model::Logistic(m)))
        }
        Arch::Tann if params.per_modality => {
            let examples: Vec<SeqExample> = samples.par_iter().map(Sample::example).collect();
            let present: BTreeSet<ResourceType> = examples.iter().flat_map(|ex| ex.resource_types.iter().copied()).collect();
            let targets: Vec<Vec<f64>> = labels.iter().map(|&y| vec![y as u8 as f64]).collect();
            let mut members = Vec::new();
            for rt in present {
                let cfg = TannConfig { modality: Some(rt), ..params.tann.clone() };
                members.push(Model::Tann(train_tann_multi(&examples, &targets, vocab_size, &cfg)?.model));
            }
            Ok(binary(ensemble(members)?))
        }
        Arch::Tann => {
            let examples: Vec<SeqExample> = samples.par_iter().map(Sample::example).collect();
            Ok(binary(Model::Tann(train_tann(&examples, &labels, vocab_size, &params.tann)?.model)))
        }
        Arch::Lstm => {
            let examples: Vec<SeqExample> = samples.par_iter().map(Sample::example).collect();
            Ok(binary(Model::Lstm(train_lstm(&examples, &labels, vocab_size, &params.lstm)?.model)))
        }
        Arch::Stumps => {
            let examples: Vec<SeqExample> = samples.par_iter().map(Sample::example).collect();
            Ok(binary(Model::Stumps(train_stumps(&examples, &labels, &params.stumps)?)))
        }
        Arch::Ensemble => {
            let mut members = Vec::new();
            for a in [Arch::Tann, Arch::Lstm, Arch::Stumps] {
                members.push(train_model(a, task, samples, vocab_size, params)?.model);
            }
            Ok(binary(ensemble(members)?))
        }
    }
}

/// Model outputs for each sample, in sample order.
pub fn predict_all(model: &Model, samples: &[Sample]) -> Vec<Vec<f64>> {
    samples.par_iter().map(|s| model.predict(&s.input())).collect()
}

/// Binary scored set from output `output` of `model`.
pub fn score(model: &Model, samples: &[Sample], output: usize) -> Result<ScoredSet> {
    let preds = predict_all(model, samples);
    let scores = preds.iter().map(|p| p[output]).collect();
    let labels = binary_labels(samples)?;
    ScoredSet::new(scores, labels, samples.iter().map(|s| s.encounter.encounter_id.clone()).collect())
}

/// Per-code scored sets for a diagnoses head with output names `codes`.
pub fn score_codes(preds: &[Vec<f64>], samples: &[Sample], codes: &[String]) -> Result<Vec<(String, ScoredSet)>> {
    let ids: Vec<String> = samples.iter().map(|s| s.encounter.encounter_id.clone()).collect();
    let sets: Vec<BTreeSet<String>> = samples.iter().map(Sample::codes).collect();
    codes
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let scores = preds.iter().map(|p| p[k]).collect();
            let labels = sets.iter().map(|s| s.contains(c)).collect();
            Ok((c.clone(), ScoredSet::new(scores, labels, ids.clone())?))
        })
        .collect()
}

/// Indicator matrix of `codes` per sample.
pub fn code_matrix(samples: &[Sample], codes: &[String]) -> Vec<Vec<bool>> {
    samples.iter().map(|s| {
        let set = s.codes();
        codes.iter().map(|c| set.contains(c)).collect()
    }).collect()
}
