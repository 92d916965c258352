//! Synthetic FHIR-style cohorts with a known logistic risk model.
//!
//! Every hospitalization draws a standard-normal z-score per lab key and a
//! latent note-borne severity `s ~ N(0, 1)`. The mortality logit is
//! `w·z + v·s + b`; the label is a Bernoulli draw on its sigmoid. A signal
//! word is written into the admission note with probability `p_high` when
//! the logit lies in the top quartile of its (analytic) distribution and
//! `p_low` otherwise. Readmission and long-stay outcomes use the same form
//! with their own scale and bias. All informative data is recorded after
//! admission; pre-admission history is noise.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fhir::{format_time, Attribute, FhirResource, ResourceType};
use crate::math::{rng_for, sigmoid, MS_PER_DAY, MS_PER_HOUR};

/// Upper-quartile point of the standard normal.
pub const NORMAL_Q75: f64 = 0.674_489_750_196_081_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabSpec {
    pub key: String,
    pub mean: f64,
    pub sd: f64,
    /// Weight of this lab's z-score in the mortality logit.
    #[serde(default)]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    /// Multiplier on the mortality lab term `w·z`.
    pub lab_scale: f64,
    pub note_weight: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSpec {
    pub code: String,
    pub prevalence: f64,
    /// Note word written when the code is present (p = 0.9) or absent (p = 0.02).
    #[serde(default)]
    pub marker: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub encounters_min: usize,
    pub encounters_max: usize,
    pub labs: Vec<LabSpec>,
    pub note_weight: f64,
    pub bias: f64,
    pub p_high: f64,
    pub p_low: f64,
    pub signal_word: String,
    pub filler_words: Vec<String>,
    pub readmission: OutcomeSpec,
    pub long_los: OutcomeSpec,
    /// Codes with a marker are mutually exclusive (one categorical draw);
    /// codes without one are drawn independently.
    pub diagnosis_codes: Vec<CodeSpec>,
    pub minor_fraction: f64,
    pub short_stay_fraction: f64,
    pub planned_fraction: f64,
    pub institutions: Vec<String>,
    pub seed: u64,
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        let lab = |key: &str, mean: f64, sd: f64, weight: f64| LabSpec { key: key.into(), mean, sd, weight };
        SynthConfig {
            n_patients: 1000,
            encounters_min: 1,
            encounters_max: 3,
            labs: vec![
                lab("systolic_bp", 125.0, 20.0, -0.4),
                lab("heart_rate", 85.0, 15.0, 0.4),
                lab("resp_rate", 18.0, 4.0, 0.3),
                lab("temperature", 37.0, 0.6, 0.2),
                lab("wbc", 9.0, 3.5, 0.3),
                lab("lactate", 1.6, 0.8, 0.6),
                lab("creatinine", 1.1, 0.5, 0.4),
                lab("sodium", 139.0, 4.0, 0.0),
                lab("hemoglobin", 12.5, 2.0, -0.2),
                lab("potassium", 4.1, 0.5, 0.0),
            ],
            note_weight: 0.0,
            bias: -3.74,
            p_high: 0.8,
            p_low: 0.05,
            signal_word: "empyema".into(),
            filler_words: words(&[
                "patient", "seen", "today", "stable", "reports", "pain", "denies", "fever", "plan", "continue",
                "monitor", "history", "review", "labs", "overnight", "comfortable", "ambulating", "tolerating",
                "diet", "family", "discussed", "follow", "up", "clinic", "noted", "mild", "chronic", "exam",
            ]),
            readmission: OutcomeSpec { lab_scale: 0.5, note_weight: 0.0, bias: -2.0 },
            long_los: OutcomeSpec { lab_scale: 0.8, note_weight: 0.0, bias: -1.1 },
            diagnosis_codes: vec![
                CodeSpec { code: "486".into(), prevalence: 0.25, marker: Some("infiltrate".into()) },
                CodeSpec { code: "428.0".into(), prevalence: 0.25, marker: Some("edema".into()) },
                CodeSpec { code: "401.9".into(), prevalence: 0.4, marker: None },
                CodeSpec { code: "250.00".into(), prevalence: 0.2, marker: None },
                CodeSpec { code: "584.9".into(), prevalence: 0.1, marker: None },
            ],
            minor_fraction: 0.03,
            short_stay_fraction: 0.04,
            planned_fraction: 0.1,
            institutions: vec!["site_a".into()],
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_high, self.p_low, self.minor_fraction, self.short_stay_fraction, self.planned_fraction];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        if let Some(l) = self.labs.iter().find(|l| l.sd <= 0.0 || !l.sd.is_finite()) {
            return Err(Error::invalid(format!("lab {} has non-positive sd", l.key)));
        }
        if self.encounters_min < 1 || self.encounters_max < self.encounters_min {
            return Err(Error::invalid("encounter count range must satisfy 1 <= min <= max"));
        }
        if self.institutions.is_empty() {
            return Err(Error::invalid("at least one institution is required"));
        }
        if self.diagnosis_codes.iter().any(|c| !(0.0..=1.0).contains(&c.prevalence)) {
            return Err(Error::invalid("code prevalence must lie in [0, 1]"));
        }
        Ok(())
    }

    fn lab_weight_norm_sq(&self) -> f64 {
        self.labs.iter().map(|l| l.weight * l.weight).sum()
    }

    /// Logit above which the signal word is emitted with `p_high`.
    pub fn signal_threshold(&self) -> f64 {
        self.bias + NORMAL_Q75 * (self.lab_weight_norm_sq() + self.note_weight * self.note_weight).sqrt()
    }
}

/// Ground truth for one generated hospitalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub encounter_id: String,
    pub patient_id: String,
    pub lab_z: Vec<f64>,
    pub severity: f64,
    pub mortality_logit: f64,
    pub mortality: bool,
    pub readmission_logit: f64,
    pub readmission_draw: bool,
    pub long_los_logit: f64,
    pub long_los_draw: bool,
    pub signal_emitted: bool,
    pub signal_time: Option<i64>,
    pub codes: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SynthOutput {
    pub resources: Vec<FhirResource>,
    pub manifest: Vec<ManifestEntry>,
}

impl SynthOutput {
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.resources {
            writeln!(out, "{}", r.to_line())?;
        }
        Ok(())
    }

    pub fn write_manifest<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for m in &self.manifest {
            serde_json::to_writer(&mut out, m)?;
            writeln!(out)?;
        }
        Ok(())
    }
}

const SERVICES: [&str; 4] = ["medicine", "surgery", "cardiology", "oncology"];
const SOURCES: [&str; 3] = ["ed", "transfer", "clinic"];
const HCCS: [&str; 5] = ["HCC18", "HCC85", "HCC111", "HCC19", "HCC108"];
const MEDS: [(&str, &str); 5] = [
    ("Lasix", "furosemide"),
    ("Zosyn", "piperacillin"),
    ("Lovenox", "enoxaparin"),
    ("Protonix", "pantoprazole"),
    ("Norco", "hydrocodone"),
];
const CPTS: [&str; 4] = ["71046", "93306", "36556", "32555"];
/// 2015-01-01T00:00:00Z
const EPOCH_MS: i64 = 1_420_070_400_000;

struct PatientGen<'a, R: Rng> {
    cfg: &'a SynthConfig,
    rng: R,
    pid: String,
    resources: Vec<FhirResource>,
    manifest: Vec<ManifestEntry>,
    seq: usize,
}

impl<R: Rng> PatientGen<'_, R> {
    fn push(&mut self, rt: ResourceType, time: Option<i64>, attributes: Vec<Attribute>) {
        self.seq += 1;
        self.resources.push(FhirResource {
            resource_type: rt,
            resource_id: format!("{}-r{}", self.pid, self.seq),
            patient_id: self.pid.clone(),
            event_time: time,
            attributes,
        });
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    fn hours(&mut self, lo: f64, hi: f64) -> i64 {
        // minute resolution
        let h = self.rng.random_range(lo..hi);
        ((h * 60.0).round() as i64) * 60_000
    }

    fn filler(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.cfg.filler_words.choose(&mut self.rng).cloned().unwrap_or_default()).collect()
    }

    fn run(mut self, patient_index: usize) -> (Vec<FhirResource>, Vec<ManifestEntry>) {
        let cfg = self.cfg;
        let minor = self.rng.random_bool(cfg.minor_fraction);
        let age_years = if minor { self.rng.random_range(10.0..17.9) } else { self.rng.random_range(20.0..90.0) };
        let first_admit = EPOCH_MS + self.rng.random_range(0..730) * MS_PER_DAY + self.hours(0.0, 24.0);
        let birth = first_admit - (age_years * 365.25 * MS_PER_DAY as f64) as i64;
        let birth_day = birth.div_euclid(MS_PER_DAY) * MS_PER_DAY;
        let gender = if self.rng.random_bool(0.5) { "F" } else { "M" };
        let institution = cfg.institutions.choose(&mut self.rng).cloned().unwrap_or_default();
        self.push(
            ResourceType::Patient,
            Some(first_admit - 365 * MS_PER_DAY),
            vec![
                Attribute::categorical("gender", gender),
                Attribute::categorical("birth_date", &format_time(birth_day)[..10]),
            ],
        );

        let target = self.rng.random_range(cfg.encounters_min..=cfg.encounters_max);
        let mut admit = first_admit;
        let mut planned_next = false;
        let mut i = 0;
        loop {
            let (discharge, died, readmit_draw) = self.encounter(patient_index, i, admit, planned_next, &institution);
            i += 1;
            let extra = i == target && readmit_draw;
            if died || (i >= target && !extra) || i > target {
                break;
            }
            let gap_days = if readmit_draw { self.rng.random_range(1.0..28.0) } else { self.rng.random_range(40.0..400.0) };
            admit = discharge + (gap_days * MS_PER_DAY as f64) as i64;
            planned_next = self.rng.random_bool(cfg.planned_fraction);
        }
        (self.resources, self.manifest)
    }

    /// Emits one hospitalization; returns (discharge time, died, readmission draw).
    fn encounter(&mut self, _patient: usize, idx: usize, admit: i64, planned: bool, institution: &str) -> (i64, bool, bool) {
        let cfg = self.cfg;
        let encounter_id = format!("{}-e{}", self.pid, idx);

        let lab_z: Vec<f64> = (0..cfg.labs.len()).map(|_| self.normal()).collect();
        let severity = self.normal();
        let lab_term: f64 = cfg.labs.iter().zip(&lab_z).map(|(l, z)| l.weight * z).sum();
        let mortality_logit = lab_term + cfg.note_weight * severity + cfg.bias;
        let mortality = self.rng.random_bool(sigmoid(mortality_logit));
        let readmission_logit =
            cfg.readmission.lab_scale * lab_term + cfg.readmission.note_weight * severity + cfg.readmission.bias;
        let readmission_draw = !mortality && self.rng.random_bool(sigmoid(readmission_logit));
        let long_los_logit = cfg.long_los.lab_scale * lab_term + cfg.long_los.note_weight * severity + cfg.long_los.bias;
        let long_los_draw = self.rng.random_bool(sigmoid(long_los_logit));

        let stay_ms = if self.rng.random_bool(cfg.short_stay_fraction) {
            self.hours(4.0, 23.0)
        } else if long_los_draw {
            self.hours(168.0, 360.0)
        } else {
            self.hours(24.0, 167.0)
        };
        let discharge = admit + stay_ms;

        // Pre-admission outpatient history: population draws, no signal.
        let outpatient = admit - self.hours(48.0, 240.0);
        let hr = 80.0 + 12.0 * self.normal();
        let sbp = 128.0 + 15.0 * self.normal();
        self.push(
            ResourceType::Observation,
            Some(outpatient),
            vec![Attribute::categorical("category", "vital-signs"), Attribute::numeric("heart_rate", round2(hr)), Attribute::numeric("systolic_bp", round2(sbp))],
        );
        let n = self.rng.random_range(4..8);
        let text = self.filler(n).join(" ");
        self.push(ResourceType::Note, Some(admit - 72 * MS_PER_HOUR), vec![Attribute::text("text", text)]);

        let service = *SERVICES.choose(&mut self.rng).unwrap();
        let source = if planned { "elective" } else { *SOURCES.choose(&mut self.rng).unwrap() };
        let disposition = if mortality {
            "expired"
        } else if self.rng.random_bool(0.05) {
            "against medical advice"
        } else {
            "home"
        };
        self.push(
            ResourceType::Encounter,
            Some(admit),
            vec![
                Attribute::categorical("class", "inpatient"),
                Attribute::categorical("service", service),
                Attribute::categorical("admit_source", source),
                Attribute::categorical("institution", institution),
                Attribute::categorical("discharge_time", format_time(discharge)),
                Attribute::categorical("discharge_disposition", disposition),
            ],
        );
        let hcc = *HCCS.choose(&mut self.rng).unwrap();
        self.push(
            ResourceType::Condition,
            Some(admit),
            vec![Attribute::categorical("role", "problem-list"), Attribute::categorical("hcc", hcc)],
        );

        let mut labs = vec![Attribute::categorical("category", "laboratory")];
        labs.extend(cfg.labs.iter().zip(&lab_z).map(|(l, z)| Attribute::numeric(&l.key, l.mean + l.sd * z)));
        self.push(ResourceType::Observation, Some(admit + 2 * MS_PER_HOUR), labs);

        let (trade, generic) = *MEDS.choose(&mut self.rng).unwrap();
        self.push(
            ResourceType::MedicationOrder,
            Some(admit + 4 * MS_PER_HOUR),
            vec![
                Attribute::categorical("trade_name", trade),
                Attribute::categorical("generic_name", generic),
                Attribute::categorical("ingredient", generic),
            ],
        );

        // Diagnosis codes: one exclusive marked condition plus independent background codes.
        let mut codes = Vec::new();
        let mut marker_words = Vec::new();
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut chosen = None;
        for (k, c) in cfg.diagnosis_codes.iter().enumerate().filter(|(_, c)| c.marker.is_some()) {
            acc += c.prevalence;
            if chosen.is_none() && u < acc {
                chosen = Some(k);
            }
        }
        for (k, c) in cfg.diagnosis_codes.iter().enumerate() {
            let present = match &c.marker {
                Some(_) => chosen == Some(k),
                None => self.rng.random_bool(c.prevalence),
            };
            if present {
                codes.push(c.code.clone());
            }
            if let Some(m) = &c.marker {
                if self.rng.random_bool(if present { 0.9 } else { 0.02 }) {
                    marker_words.push(m.clone());
                }
            }
        }

        let signal_p = if mortality_logit > cfg.signal_threshold() { cfg.p_high } else { cfg.p_low };
        let signal_emitted = self.rng.random_bool(signal_p);
        let note_time = admit + 6 * MS_PER_HOUR;
        let n = self.rng.random_range(6..11);
        let mut note = self.filler(n);
        for w in marker_words {
            let pos = self.rng.random_range(0..=note.len());
            note.insert(pos, w);
        }
        if signal_emitted {
            let pos = self.rng.random_range(0..=note.len());
            note.insert(pos, cfg.signal_word.clone());
        }
        self.push(ResourceType::Note, Some(note_time), vec![Attribute::text("text", note.join(" ") + ".")]);

        if self.rng.random_bool(0.3) {
            let cpt = *CPTS.choose(&mut self.rng).unwrap();
            self.push(
                ResourceType::Procedure,
                Some(admit + 12 * MS_PER_HOUR),
                vec![Attribute::categorical("cpt", cpt), Attribute::categorical("encounter", encounter_id.clone())],
            );
        }
        if stay_ms > 30 * MS_PER_HOUR {
            let mut repeat = vec![Attribute::categorical("category", "laboratory")];
            for (l, z) in cfg.labs.iter().zip(&lab_z) {
                let noisy = z + 0.5 * self.normal();
                repeat.push(Attribute::numeric(&l.key, l.mean + l.sd * noisy));
            }
            self.push(ResourceType::Observation, Some(admit + 30 * MS_PER_HOUR), repeat);
        }
        for code in &codes {
            self.push(
                ResourceType::Condition,
                Some(discharge),
                vec![
                    Attribute::categorical("role", "billing"),
                    Attribute::categorical("icd9", code.clone()),
                    Attribute::categorical("encounter", encounter_id.clone()),
                ],
            );
        }
        // Encounter resource ids must match the encounter id used for linkage.
        if let Some(r) = self.resources.iter_mut().rev().find(|r| r.resource_type == ResourceType::Encounter) {
            r.resource_id = encounter_id.clone();
        }

        self.manifest.push(ManifestEntry {
            encounter_id,
            patient_id: self.pid.clone(),
            lab_z,
            severity,
            mortality_logit,
            mortality,
            readmission_logit,
            readmission_draw,
            long_los_logit,
            long_los_draw,
            signal_emitted,
            signal_time: signal_emitted.then_some(note_time),
            codes,
        });
        (discharge, mortality, readmission_draw)
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Generates the resource stream and ground-truth manifest. Patients are
/// generated independently from per-patient seed streams, so the output is
/// identical however the work is scheduled.
pub fn generate_cohort(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let width = cfg.n_patients.max(1).to_string().len();
    let parts: Vec<(Vec<FhirResource>, Vec<ManifestEntry>)> = (0..cfg.n_patients)
        .into_par_iter()
        .map(|i| {
            let gen = PatientGen {
                cfg,
                rng: rng_for(cfg.seed, i as u64 + 1),
                pid: format!("p{i:0width$}"),
                resources: Vec::new(),
                manifest: Vec::new(),
                seq: 0,
            };
            gen.run(i)
        })
        .collect();
    let mut out = SynthOutput::default();
    for (r, m) in parts {
        out.resources.extend(r);
        out.manifest.extend(m);
    }
    Ok(out)
}

/// AUROC of the true mortality logit against the drawn labels.
pub fn bayes_auroc(manifest: &[ManifestEntry]) -> Result<f64> {
    if manifest.is_empty() {
        return Err(Error::invalid("empty manifest"));
    }
    let scores: Vec<f64> = manifest.iter().map(|m| m.mortality_logit).collect();
    let labels: Vec<bool> = manifest.iter().map(|m| m.mortality).collect();
    crate::eval::auroc_raw(&scores, &labels)
}
