//! Risk models: logistic baselines, attention network (TANN), LSTM, boosted
//! time-based stumps and their ensemble.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cohort::{EncounterRecord, Task, TimeTag};
use crate::error::{Error, Result};
use crate::fhir::ResourceType;
use crate::math::MS_PER_HOUR;
use crate::timeline::{input_prefix, numeric_key, PatientTimeline, TokenOccurrence};

pub mod baseline;
pub mod lstm;
pub mod optim;
pub mod stumps;
pub mod tann;

pub use baseline::{featurize_baseline, train_baseline, train_logistic, BaselineFeatureVector, BaselineFeaturizer, BaselineKind, BaselineModel, BaselineSpec, LogisticConfig, LogisticModel};
pub use lstm::{train_lstm, LstmConfig, LstmModel};
pub use optim::{gradient_check, Adam, Differentiable, OptimConfig};
pub use stumps::{train_stumps, Predicate, Stump, StumpConfig, StumpEnsemble};
pub use tann::{train_diagnoses_head, train_tann, DiagnosesHead, TannConfig, TannModel};

/// Everything a model may look at for one prediction.
#[derive(Debug, Clone, Copy)]
pub struct PredictionInput<'a> {
    /// Occurrences with `time <= at`; later ones are ignored if present.
    pub prefix: &'a [TokenOccurrence],
    pub at: i64,
    pub encounter: &'a EncounterRecord,
}

impl<'a> PredictionInput<'a> {
    pub fn new(prefix: &'a [TokenOccurrence], at: i64, encounter: &'a EncounterRecord) -> Self {
        PredictionInput { prefix, at, encounter }
    }
}

/// Builds the model-visible prefix for `encounter` at `at`.
pub fn prefix_for(timeline: &PatientTimeline, encounter: &EncounterRecord, at: i64) -> Vec<TokenOccurrence> {
    input_prefix(timeline, at, encounter.admit_time)
}

/// Token view of a prefix shared by the sequence models.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeqExample {
    pub tokens: Vec<u32>,
    /// Hours between the occurrence and the prediction time.
    pub delta_h: Vec<f64>,
    pub resource_types: Vec<ResourceType>,
    /// Position of each kept occurrence in the original prefix.
    pub source: Vec<usize>,
    pub numeric: Vec<NumericObs>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericObs {
    pub key: Arc<str>,
    pub delta_h: f64,
    pub value: f64,
}

impl SeqExample {
    pub fn from_prefix(prefix: &[TokenOccurrence], at: i64, modality: Option<ResourceType>) -> Self {
        let mut ex = SeqExample::default();
        for (i, o) in prefix.iter().enumerate() {
            if o.time > at || modality.is_some_and(|m| m != o.resource_type) {
                continue;
            }
            let delta_h = (at - o.time) as f64 / MS_PER_HOUR as f64;
            ex.tokens.push(o.token_id);
            ex.delta_h.push(delta_h);
            ex.resource_types.push(o.resource_type);
            ex.source.push(i);
            if let Some(value) = o.raw_numeric_value {
                ex.numeric.push(NumericObs { key: Arc::from(numeric_key(o.resource_type, &o.attribute)), delta_h, value });
            }
        }
        ex
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Logistic,
    Tann,
    Lstm,
    Stumps,
    Ensemble,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Logistic => "logistic",
            Arch::Tann => "tann",
            Arch::Lstm => "lstm",
            Arch::Stumps => "stumps",
            Arch::Ensemble => "ensemble",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "logistic" => Arch::Logistic,
            "tann" => Arch::Tann,
            "lstm" => Arch::Lstm,
            "stumps" => Arch::Stumps,
            "ensemble" => Arch::Ensemble,
            _ => return Err(Error::invalid(format!("unknown architecture {s:?}"))),
        })
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Logistic(BaselineModel),
    Tann(TannModel),
    Lstm(LstmModel),
    Stumps(StumpEnsemble),
    Ensemble(Vec<Model>),
}

impl Model {
    pub fn arch(&self) -> Arch {
        match self {
            Model::Logistic(_) => Arch::Logistic,
            Model::Tann(_) => Arch::Tann,
            Model::Lstm(_) => Arch::Lstm,
            Model::Stumps(_) => Arch::Stumps,
            Model::Ensemble(_) => Arch::Ensemble,
        }
    }

    /// Probabilities, one per output (a single one for binary tasks).
    pub fn predict(&self, input: &PredictionInput) -> Vec<f64> {
        match self {
            Model::Logistic(m) => vec![m.predict(input)],
            Model::Tann(m) => m.predict(input),
            Model::Lstm(m) => m.predict(input),
            Model::Stumps(m) => vec![m.predict(input)],
            Model::Ensemble(members) => {
                let outs: Vec<Vec<f64>> = members.iter().map(|m| m.predict(input)).collect();
                ensemble_predict(&outs).expect("ensembles are built with at least one member")
            }
        }
    }

    pub fn predict_one(&self, input: &PredictionInput) -> f64 {
        self.predict(input)[0]
    }
}

pub fn ensemble(members: Vec<Model>) -> Result<Model> {
    if members.is_empty() {
        return Err(Error::invalid("ensemble needs at least one member"));
    }
    Ok(Model::Ensemble(members))
}

/// Coordinate-wise arithmetic mean of member outputs.
pub fn ensemble_predict(members: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = members.first().ok_or_else(|| Error::invalid("empty member list"))?;
    if members.iter().any(|m| m.len() != first.len()) {
        return Err(Error::invalid("members disagree on output width"));
    }
    let n = members.len() as f64;
    Ok((0..first.len()).map(|k| members.iter().map(|m| m[k]).sum::<f64>() / n).collect())
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EHRSQMDL";
pub const CHECKPOINT_SCHEMA: &str = "ehrseq.checkpoint.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub task: Task,
    pub time_tag: TimeTag,
    pub model: Model,
    /// Output names: diagnosis codes for the diagnoses head, the task name otherwise.
    pub outputs: Vec<String>,
    /// Codes dropped for falling under the minimum training count.
    pub excluded_codes: Vec<String>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(task: Task, time_tag: TimeTag, model: Model, outputs: Vec<String>, seed: u64) -> Self {
        Checkpoint { schema: CHECKPOINT_SCHEMA.into(), task, time_tag, model, outputs, excluded_codes: Vec::new(), seed }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        let schema = CHECKPOINT_SCHEMA.as_bytes();
        out.write_all(&(schema.len() as u32).to_le_bytes())?;
        out.write_all(schema)?;
        ciborium::into_writer(self, &mut out).map_err(|e| Error::Format(e.to_string()))?;
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        if len > 1024 {
            return Err(Error::Format("checkpoint schema id too long".into()));
        }
        let mut schema = vec![0u8; len];
        input.read_exact(&mut schema)?;
        if schema != CHECKPOINT_SCHEMA.as_bytes() {
            return Err(Error::Format(format!("unsupported checkpoint schema {:?}", String::from_utf8_lossy(&schema))));
        }
        let ckpt: Checkpoint = ciborium::from_reader(input).map_err(|e| Error::Format(e.to_string()))?;
        Ok(ckpt)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use std::collections::BTreeSet;

    use super::*;

    pub fn encounter(admit: i64) -> EncounterRecord {
        EncounterRecord {
            encounter_id: "e1".into(),
            patient_id: "p1".into(),
            institution_id: "site".into(),
            admit_time: admit,
            discharge_time: admit + 72 * MS_PER_HOUR,
            discharge_disposition: "home".into(),
            hospital_service: "medicine".into(),
            admit_source: "ed".into(),
            gender: "F".into(),
            age_at_admit: 60.0,
            icd9_codes: BTreeSet::new(),
            planned_flag: false,
            prior_admissions: 0,
        }
    }

    pub fn occ(token_id: u32, time: i64, rt: ResourceType, attribute: &str, value: Option<f64>) -> TokenOccurrence {
        TokenOccurrence { token_id, time, resource_type: rt, attribute: Arc::from(attribute), raw_numeric_value: value, billing: false }
    }
}
