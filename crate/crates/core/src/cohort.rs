//! Hospitalizations, inclusion criteria, task labels, prediction timepoints
//! and the patient-level development/validation/test split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fhir::{parse_time, AttrValue, FhirResource, ResourceType};
use crate::math::{MS_PER_DAY, MS_PER_HOUR};

pub const MIN_AGE_YEARS: f64 = 18.0;
pub const MIN_STAY_MS: i64 = 24 * MS_PER_HOUR;
pub const LONG_STAY_MS: i64 = 7 * MS_PER_DAY;
pub const READMIT_WINDOW_MS: i64 = 30 * MS_PER_DAY;
const MS_PER_YEAR: f64 = 365.25 * MS_PER_DAY as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub encounter_id: String,
    pub patient_id: String,
    pub institution_id: String,
    pub admit_time: i64,
    pub discharge_time: i64,
    pub discharge_disposition: String,
    pub hospital_service: String,
    pub admit_source: String,
    pub gender: String,
    pub age_at_admit: f64,
    pub icd9_codes: BTreeSet<String>,
    pub planned_flag: bool,
    /// Earlier hospitalizations of the same patient.
    pub prior_admissions: u32,
}

impl EncounterRecord {
    pub fn length_of_stay_ms(&self) -> i64 {
        self.discharge_time - self.admit_time
    }
}

/// Site-configurable labeling rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortRules {
    pub expired_code: String,
    /// Admission sources that make an admission planned.
    pub planned_admit_sources: Vec<String>,
    /// Encounter `procedure_category` values that make an admission planned.
    pub planned_procedure_categories: Vec<String>,
}

impl Default for CohortRules {
    fn default() -> Self {
        CohortRules {
            expired_code: "expired".into(),
            planned_admit_sources: vec!["elective".into()],
            planned_procedure_categories: Vec::new(),
        }
    }
}

impl CohortRules {
    pub fn is_planned(&self, admit_source: &str, procedure_category: Option<&str>) -> bool {
        self.planned_admit_sources.iter().any(|s| s.eq_ignore_ascii_case(admit_source))
            || procedure_category
                .is_some_and(|c| self.planned_procedure_categories.iter().any(|p| p.eq_ignore_ascii_case(c)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub encounters: u64,
    pub skipped: BTreeMap<String, u64>,
}

fn text_attr<'a>(r: &'a FhirResource, name: &str) -> Option<&'a str> {
    r.attribute(name).and_then(AttrValue::as_text)
}

/// Builds hospitalization records from `Encounter`, `Patient` and billing
/// `Condition` resources. Output is sorted by (patient, admit, encounter id).
pub fn extract_encounters(resources: &[FhirResource], rules: &CohortRules) -> (Vec<EncounterRecord>, ExtractReport) {
    let mut report = ExtractReport::default();
    let mut patients: BTreeMap<&str, (Option<i64>, String)> = BTreeMap::new();
    let mut billing: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for r in resources {
        match r.resource_type {
            ResourceType::Patient => {
                let birth = text_attr(r, "birth_date").and_then(parse_time);
                let gender = text_attr(r, "gender").unwrap_or("").to_string();
                patients.insert(&r.patient_id, (birth, gender));
            }
            ResourceType::Condition if crate::timeline::is_billing(r) => {
                if let (Some(enc), Some(code)) = (text_attr(r, "encounter"), r.attribute("icd9")) {
                    billing.entry(enc).or_default().insert(code.to_string());
                }
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    let mut skip = |reason: &str| *report.skipped.entry(reason.to_string()).or_default() += 1;
    for r in resources.iter().filter(|r| r.resource_type == ResourceType::Encounter) {
        let Some(admit_time) = r.event_time else {
            skip("missing admit time");
            continue;
        };
        let Some(discharge_time) = text_attr(r, "discharge_time").and_then(parse_time) else {
            skip("missing discharge_time");
            continue;
        };
        if discharge_time <= admit_time {
            skip("discharge not after admit");
            continue;
        }
        let Some((Some(birth), gender)) = patients.get(r.patient_id.as_str()) else {
            skip("missing birth_date");
            continue;
        };
        let age_at_admit = (admit_time - birth) as f64 / MS_PER_YEAR;
        if age_at_admit < 0.0 {
            skip("admit before birth");
            continue;
        }
        let admit_source = text_attr(r, "admit_source").unwrap_or("").to_string();
        let planned_flag = rules.is_planned(&admit_source, text_attr(r, "procedure_category"));
        out.push(EncounterRecord {
            encounter_id: r.resource_id.clone(),
            patient_id: r.patient_id.clone(),
            institution_id: text_attr(r, "institution").unwrap_or("").to_string(),
            admit_time,
            discharge_time,
            discharge_disposition: text_attr(r, "discharge_disposition").unwrap_or("").to_string(),
            hospital_service: text_attr(r, "service").unwrap_or("").to_string(),
            admit_source,
            gender: gender.clone(),
            age_at_admit,
            icd9_codes: billing.get(r.resource_id.as_str()).cloned().unwrap_or_default(),
            planned_flag,
            prior_admissions: 0,
        });
    }
    out.sort_by(|a, b| {
        (a.patient_id.as_str(), a.admit_time, a.encounter_id.as_str()).cmp(&(
            b.patient_id.as_str(),
            b.admit_time,
            b.encounter_id.as_str(),
        ))
    });
    for i in 0..out.len() {
        let prior = out[..i]
            .iter()
            .rev()
            .take_while(|e| e.patient_id == out[i].patient_id)
            .filter(|e| e.admit_time < out[i].admit_time)
            .count();
        out[i].prior_admissions = prior as u32;
    }
    report.encounters = out.len() as u64;
    (out, report)
}

/// Adults with stays of at least 24 h. Discharges against medical advice are
/// kept.
pub fn is_included(e: &EncounterRecord) -> bool {
    e.age_at_admit >= MIN_AGE_YEARS && e.length_of_stay_ms() >= MIN_STAY_MS
}

pub fn select_inclusions(encounters: &[EncounterRecord]) -> Vec<&EncounterRecord> {
    encounters.iter().filter(|e| is_included(e)).collect()
}

pub fn label_mortality(e: &EncounterRecord, rules: &CohortRules) -> bool {
    !e.discharge_disposition.is_empty() && e.discharge_disposition.eq_ignore_ascii_case(&rules.expired_code)
}

pub fn label_long_los(e: &EncounterRecord) -> bool {
    e.length_of_stay_ms() >= LONG_STAY_MS
}

/// Full-length billing codes and whether the stay is eligible for the
/// diagnoses task.
pub fn label_diagnoses(e: &EncounterRecord) -> (BTreeSet<String>, bool) {
    let eligible = !e.icd9_codes.is_empty();
    (e.icd9_codes.clone(), eligible)
}

/// 30-day readmission labels for one patient's hospitalizations sorted by
/// admit time. `eligible[i]` says whether stay `i` may serve as an index.
///
/// Greedy forward pass: each eligible index claims the earliest later,
/// unclaimed, unplanned, same-institution admission within 30 days of its
/// discharge. A claimed readmission may itself be an index for a later stay.
pub fn label_readmissions(encounters: &[&EncounterRecord], eligible: &[bool]) -> Result<Vec<bool>> {
    if encounters.len() != eligible.len() {
        return Err(Error::invalid("eligibility mask length mismatch"));
    }
    if let Some(first) = encounters.first() {
        if encounters.iter().any(|e| e.patient_id != first.patient_id) {
            return Err(Error::invalid("encounters from more than one patient"));
        }
    }
    if encounters.windows(2).any(|w| w[0].admit_time > w[1].admit_time) {
        return Err(Error::invalid("encounters not sorted by admit time"));
    }
    let mut consumed = vec![false; encounters.len()];
    let mut labels = vec![false; encounters.len()];
    for (i, index) in encounters.iter().enumerate() {
        if !eligible[i] {
            continue;
        }
        let window_end = index.discharge_time + READMIT_WINDOW_MS;
        let hit = (i + 1..encounters.len()).find(|&j| {
            let e = encounters[j];
            !consumed[j]
                && !e.planned_flag
                && e.institution_id == index.institution_id
                && e.admit_time >= index.discharge_time
                && e.admit_time <= window_end
        });
        if let Some(j) = hit {
            consumed[j] = true;
            labels[i] = true;
        }
    }
    Ok(labels)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub mortality: bool,
    pub readmit30: bool,
    pub long_los: bool,
    pub diagnoses: BTreeSet<String>,
    pub diagnoses_eligible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Mortality,
    Readmission,
    LongLos,
    Diagnoses,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Mortality, Task::Readmission, Task::LongLos, Task::Diagnoses];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Mortality => "mortality",
            Task::Readmission => "readmission",
            Task::LongLos => "long_los",
            Task::Diagnoses => "diagnoses",
        }
    }

    pub fn grid(self) -> &'static [TimeTag] {
        use TimeTag::*;
        match self {
            Task::Mortality => &[Minus24h, Minus12h, Admit, Plus12h, Plus24h],
            Task::Readmission | Task::Diagnoses => &[Admit, Plus24h, Discharge],
            Task::LongLos => &[Admit, Plus24h],
        }
    }

    /// Timepoint reported as the headline result.
    pub fn primary_tag(self) -> TimeTag {
        match self {
            Task::Mortality | Task::LongLos => TimeTag::Plus24h,
            Task::Readmission | Task::Diagnoses => TimeTag::Discharge,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TimeTag {
    #[serde(rename = "-24h")]
    Minus24h,
    #[serde(rename = "-12h")]
    Minus12h,
    #[serde(rename = "admit")]
    Admit,
    #[serde(rename = "+12h")]
    Plus12h,
    #[serde(rename = "+24h")]
    Plus24h,
    #[serde(rename = "discharge")]
    Discharge,
}

impl TimeTag {
    pub const ALL: [TimeTag; 6] =
        [TimeTag::Minus24h, TimeTag::Minus12h, TimeTag::Admit, TimeTag::Plus12h, TimeTag::Plus24h, TimeTag::Discharge];

    pub fn as_str(self) -> &'static str {
        match self {
            TimeTag::Minus24h => "-24h",
            TimeTag::Minus12h => "-12h",
            TimeTag::Admit => "admit",
            TimeTag::Plus12h => "+12h",
            TimeTag::Plus24h => "+24h",
            TimeTag::Discharge => "discharge",
        }
    }

    pub fn time_for(self, e: &EncounterRecord) -> i64 {
        match self {
            TimeTag::Minus24h => e.admit_time - 24 * MS_PER_HOUR,
            TimeTag::Minus12h => e.admit_time - 12 * MS_PER_HOUR,
            TimeTag::Admit => e.admit_time,
            TimeTag::Plus12h => e.admit_time + 12 * MS_PER_HOUR,
            TimeTag::Plus24h => e.admit_time + 24 * MS_PER_HOUR,
            TimeTag::Discharge => e.discharge_time,
        }
    }
}

impl fmt::Display for TimeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TimeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TimeTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown time tag {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub encounter_id: String,
    pub task: Task,
    pub time: i64,
    pub time_tag: TimeTag,
}

pub fn prediction_grid(e: &EncounterRecord, task: Task) -> Vec<PredictionPoint> {
    task.grid()
        .iter()
        .map(|&tag| PredictionPoint { encounter_id: e.encounter_id.clone(), task, time: tag.time_for(e), time_tag: tag })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Dev,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dev" => Ok(Split::Dev),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub bins: BTreeMap<String, Split>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn get(&self, patient_id: &str) -> Option<Split> {
        self.bins.get(patient_id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.bins.values().filter(|&&s| s == split).count()
    }
}

/// Seeded 80/10/10 patient-level split. The result does not depend on the
/// order of `patient_ids`.
pub fn split_patients<S: AsRef<str>>(patient_ids: &[S], seed: u64) -> SplitAssignment {
    let mut ids: Vec<&str> = patient_ids.iter().map(AsRef::as_ref).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = crate::math::rng_for(seed, 0x59717);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_dev = (0.8 * n as f64).round() as usize;
    let n_val = ((0.1 * n as f64).round() as usize).min(n - n_dev);
    let bins = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < n_dev {
                Split::Dev
            } else if i < n_dev + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.to_string(), s)
        })
        .collect();
    SplitAssignment { bins, seed }
}

/// Task label stored in the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Binary(bool),
    Codes(BTreeSet<String>),
}

impl Label {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Label::Binary(b) => Some(*b),
            Label::Codes(_) => None,
        }
    }
}

/// One (encounter, task, prediction point) row of the cohort manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub encounter_id: String,
    pub patient_id: String,
    pub task: Task,
    pub time_tag: TimeTag,
    pub slice_time: i64,
    pub split: Split,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    /// Included hospitalizations, sorted by (patient, admit time).
    pub encounters: Vec<EncounterRecord>,
    pub labels: BTreeMap<String, LabelSet>,
    pub split: SplitAssignment,
}

impl Cohort {
    /// Applies inclusion criteria to `all` (every hospitalization, sorted as
    /// `extract_encounters` returns them), labels the included stays and
    /// splits patients.
    pub fn build(all: &[EncounterRecord], rules: &CohortRules, seed: u64) -> Result<Cohort> {
        let mut labels = BTreeMap::new();
        let mut start = 0;
        while start < all.len() {
            let pid = &all[start].patient_id;
            let end = start + all[start..].iter().take_while(|e| &e.patient_id == pid).count();
            let stays: Vec<&EncounterRecord> = all[start..end].iter().collect();
            let eligible: Vec<bool> = stays.iter().map(|e| is_included(e)).collect();
            let readmit = label_readmissions(&stays, &eligible)?;
            for (k, e) in stays.iter().enumerate() {
                if !eligible[k] {
                    continue;
                }
                let (diagnoses, diagnoses_eligible) = label_diagnoses(e);
                labels.insert(
                    e.encounter_id.clone(),
                    LabelSet {
                        mortality: label_mortality(e, rules),
                        readmit30: readmit[k],
                        long_los: label_long_los(e),
                        diagnoses,
                        diagnoses_eligible,
                    },
                );
            }
            start = end;
        }
        let encounters: Vec<EncounterRecord> =
            all.iter().filter(|e| labels.contains_key(&e.encounter_id)).cloned().collect();
        let patient_ids: Vec<&str> = encounters.iter().map(|e| e.patient_id.as_str()).collect();
        let split = split_patients(&patient_ids, seed);
        Ok(Cohort { encounters, labels, split })
    }

    pub fn encounter(&self, encounter_id: &str) -> Option<&EncounterRecord> {
        self.encounters.iter().find(|e| e.encounter_id == encounter_id)
    }

    pub fn split_of(&self, e: &EncounterRecord) -> Split {
        self.split.get(&e.patient_id).expect("every cohort patient is assigned a split")
    }

    pub fn label(&self, e: &EncounterRecord, task: Task) -> Option<Label> {
        let l = self.labels.get(&e.encounter_id)?;
        Some(match task {
            Task::Mortality => Label::Binary(l.mortality),
            Task::Readmission => Label::Binary(l.readmit30),
            Task::LongLos => Label::Binary(l.long_los),
            Task::Diagnoses => {
                if !l.diagnoses_eligible {
                    return None;
                }
                Label::Codes(l.diagnoses.clone())
            }
        })
    }

    /// Encounters evaluated for `task`; the same set at every timepoint.
    pub fn task_encounters(&self, task: Task) -> impl Iterator<Item = &EncounterRecord> {
        self.encounters.iter().filter(move |e| task != Task::Diagnoses || self.labels[&e.encounter_id].diagnoses_eligible)
    }

    pub fn manifest_rows(&self) -> Vec<ManifestRow> {
        let mut rows = Vec::new();
        for task in Task::ALL {
            for e in self.task_encounters(task) {
                let label = self.label(e, task).expect("task encounters carry labels");
                for p in prediction_grid(e, task) {
                    rows.push(ManifestRow {
                        encounter_id: e.encounter_id.clone(),
                        patient_id: e.patient_id.clone(),
                        task,
                        time_tag: p.time_tag,
                        slice_time: p.time,
                        split: self.split_of(e),
                        label: label.clone(),
                    });
                }
            }
        }
        rows
    }
}

/// Pipeline stages, used to gate access to test-split labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Synth,
    Cohort,
    BuildVocab,
    Train,
    Evaluate,
    Explain,
}

/// Label reader that refuses test-split labels outside evaluation.
pub struct LabelReader<'a> {
    cohort: &'a Cohort,
    stage: Stage,
}

impl<'a> LabelReader<'a> {
    pub fn new(cohort: &'a Cohort, stage: Stage) -> Self {
        LabelReader { cohort, stage }
    }

    pub fn labeled(&self, task: Task, split: Split) -> Result<Vec<(&'a EncounterRecord, Label)>> {
        if split == Split::Test && self.stage != Stage::Evaluate {
            return Err(Error::invalid(format!("test-split labels are only readable by evaluate (stage {:?})", self.stage)));
        }
        let cohort = self.cohort;
        Ok(cohort
            .task_encounters(task)
            .filter(|e| cohort.split_of(e) == split)
            .map(|e| (e, cohort.label(e, task).expect("task encounters carry labels")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn enc(id: &str, admit_h: i64, stay_h: i64) -> EncounterRecord {
        EncounterRecord {
            encounter_id: id.into(),
            patient_id: "p".into(),
            institution_id: "A".into(),
            admit_time: admit_h * MS_PER_HOUR,
            discharge_time: (admit_h + stay_h) * MS_PER_HOUR,
            discharge_disposition: "Home".into(),
            hospital_service: "medicine".into(),
            admit_source: "ed".into(),
            gender: "F".into(),
            age_at_admit: 40.0,
            icd9_codes: BTreeSet::new(),
            planned_flag: false,
            prior_admissions: 0,
        }
    }

    #[test]
    fn inclusion_thresholds() {
        let mut e = enc("a", 0, 48);
        e.age_at_admit = 17.9;
        assert!(!is_included(&e));
        e.age_at_admit = 18.0;
        assert!(is_included(&e));

        let mut short = enc("b", 0, 24);
        short.discharge_time -= 60_000;
        assert!(!is_included(&short));
        assert!(is_included(&enc("c", 0, 24)));

        let mut ama = enc("d", 0, 48);
        ama.discharge_disposition = "Against Medical Advice".into();
        assert!(is_included(&ama));
    }

    #[test]
    fn mortality_labels() {
        let rules = CohortRules::default();
        let mut e = enc("a", 0, 48);
        e.discharge_disposition = "Expired".into();
        assert!(label_mortality(&e, &rules));
        e.discharge_disposition = "Home".into();
        assert!(!label_mortality(&e, &rules));
        e.discharge_disposition = String::new();
        assert!(!label_mortality(&e, &rules));
    }

    #[test]
    fn long_stay_boundary() {
        let mut e = enc("a", 0, 168);
        assert!(label_long_los(&e));
        e.discharge_time -= 6 * 60_000;
        assert!(!label_long_los(&e));
        assert!(label_long_los(&enc("b", 0, 240)));
    }

    #[test]
    fn diagnoses_are_verbatim() {
        let mut e = enc("a", 0, 48);
        e.icd9_codes.insert("250.42".into());
        let (codes, ok) = label_diagnoses(&e);
        assert!(ok && codes.contains("250.42") && !codes.contains("250.4"));
        e.icd9_codes.clear();
        assert_eq!(label_diagnoses(&e), (BTreeSet::new(), false));
        e.icd9_codes = (0..228).map(|i| format!("{}.{}", 400 + i / 10, i % 10)).collect();
        assert_eq!(label_diagnoses(&e).0.len(), 228);
    }

    fn readmit(encs: &[EncounterRecord]) -> Vec<bool> {
        let refs: Vec<&EncounterRecord> = encs.iter().collect();
        label_readmissions(&refs, &vec![true; encs.len()]).unwrap()
    }

    #[test]
    fn readmission_window() {
        // index discharged at day 2; next admits 29 / 30 / 31 days later
        for (gap_days, expect) in [(29, true), (30, true), (31, false)] {
            let a = enc("a", 0, 48);
            let b = enc("b", 48 + gap_days * 24, 48);
            assert_eq!(readmit(&[a, b])[0], expect, "gap {gap_days}");
        }
    }

    #[test]
    fn readmission_chain_counts_each_readmission_once() {
        let a = enc("a", 0, 48);
        let b = enc("b", 10 * 24, 48);
        let c = enc("c", 20 * 24, 48);
        assert_eq!(readmit(&[a, b, c]), [true, true, false]);
    }

    #[test]
    fn readmission_rules() {
        let a = enc("a", 0, 48);
        let mut b = enc("b", 10 * 24, 48);
        b.planned_flag = true;
        assert_eq!(readmit(&[a.clone(), b.clone()]), [false, false]);
        b.planned_flag = false;
        b.institution_id = "B".into();
        assert_eq!(readmit(&[a.clone(), b]), [false, false]);

        let b = enc("b", 10 * 24, 48);
        let refs = [&a, &b];
        assert!(label_readmissions(&[&b, &a], &[true, true]).is_err());
        assert_eq!(label_readmissions(&refs, &[false, true]).unwrap(), [false, false]);
    }

    #[test]
    fn grids() {
        let e = enc("a", 100, 72);
        assert_eq!(prediction_grid(&e, Task::Mortality).len(), 5);
        assert_eq!(prediction_grid(&e, Task::LongLos).len(), 2);
        let r = prediction_grid(&e, Task::Readmission);
        assert_eq!(r.len(), 3);
        assert_eq!(r.last().unwrap().time, e.discharge_time);
        assert_eq!(prediction_grid(&e, Task::Mortality)[0].time, e.admit_time - 24 * MS_PER_HOUR);
    }

    #[test]
    fn split_proportions_and_determinism() {
        let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let s = split_patients(&ids, 3);
        assert_eq!((s.count(Split::Dev), s.count(Split::Val), s.count(Split::Test)), (8, 1, 1));
        assert_eq!(s, split_patients(&ids, 3));
        let mut rev = ids.clone();
        rev.reverse();
        assert_eq!(s, split_patients(&rev, 3));
    }

    #[test]
    fn split_is_patient_level() {
        let mut all: Vec<EncounterRecord> = (0..5).map(|i| enc(&format!("e{i}"), i * 24 * 60, 48)).collect();
        for i in 0..20 {
            let mut e = enc(&format!("x{i}"), 0, 48);
            e.patient_id = format!("q{i:02}");
            all.push(e);
        }
        all.sort_by(|a, b| (a.patient_id.as_str(), a.admit_time).cmp(&(b.patient_id.as_str(), b.admit_time)));
        let c = Cohort::build(&all, &CohortRules::default(), 9).unwrap();
        let bins: BTreeSet<Split> = c.encounters.iter().filter(|e| e.patient_id == "p").map(|e| c.split_of(e)).collect();
        assert_eq!(bins.len(), 1);
    }

    #[test]
    fn test_labels_are_gated() {
        let all = vec![enc("a", 0, 48)];
        let c = Cohort::build(&all, &CohortRules::default(), 1).unwrap();
        assert!(LabelReader::new(&c, Stage::Train).labeled(Task::Mortality, Split::Test).is_err());
        assert!(LabelReader::new(&c, Stage::Evaluate).labeled(Task::Mortality, Split::Test).is_ok());
        assert!(LabelReader::new(&c, Stage::Train).labeled(Task::Mortality, Split::Dev).is_ok());
    }
}
