//! Newline-delimited FHIR-style resource ingestion.
//!
//! Each input line is one JSON object:
//!
//! ```text
//! {"resourceType":"Observation","id":"obs-1","patient":"p1",
//!  "time":"2017-03-01T10:00:00Z",
//!  "attributes":[{"name":"heart_rate","value":88,"kind":"numeric"}]}
//! ```
//!
//! `time` may be an RFC 3339 timestamp, a bare `YYYY-MM-DD` date (stored as
//! midnight UTC) or an integer number of milliseconds since the epoch. It is
//! optional only for `Patient` resources. Attribute `kind` defaults to
//! `numeric` for JSON numbers and `categorical` for strings. The full field
//! layout is in `schema/resource.schema.json`.
//!
//! Values are kept verbatim; no code system is mapped or harmonized.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const REASON_PARSE: &str = "parse";
pub const REASON_MISSING_FIELD: &str = "missing_field";
pub const REASON_UNKNOWN_TYPE: &str = "unknown_type";
pub const REASON_INVALID: &str = "invalid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResourceType {
    Patient,
    Encounter,
    Observation,
    MedicationOrder,
    Procedure,
    Condition,
    Note,
}

impl ResourceType {
    pub const ALL: [ResourceType; 7] = [
        ResourceType::Patient,
        ResourceType::Encounter,
        ResourceType::Observation,
        ResourceType::MedicationOrder,
        ResourceType::Procedure,
        ResourceType::Condition,
        ResourceType::Note,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceType::Patient => "Patient",
            ResourceType::Encounter => "Encounter",
            ResourceType::Observation => "Observation",
            ResourceType::MedicationOrder => "MedicationOrder",
            ResourceType::Procedure => "Procedure",
            ResourceType::Condition => "Condition",
            ResourceType::Note => "Note",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ResourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResourceType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        ResourceType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    Categorical,
    Numeric,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Number(f64),
    Text(String),
}

impl AttrValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            AttrValue::Number(x) => Some(*x),
            AttrValue::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            AttrValue::Text(s) => Some(s),
            AttrValue::Number(_) => None,
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Number(x) => write!(f, "{x}"),
            AttrValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub value: AttrValue,
    pub kind: AttrKind,
}

impl Attribute {
    pub fn categorical(name: impl Into<String>, value: impl Into<String>) -> Self {
        Attribute { name: name.into(), value: AttrValue::Text(value.into()), kind: AttrKind::Categorical }
    }

    pub fn numeric(name: impl Into<String>, value: f64) -> Self {
        Attribute { name: name.into(), value: AttrValue::Number(value), kind: AttrKind::Numeric }
    }

    pub fn text(name: impl Into<String>, value: impl Into<String>) -> Self {
        Attribute { name: name.into(), value: AttrValue::Text(value.into()), kind: AttrKind::Text }
    }
}

/// One parsed clinical event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhirResource {
    pub resource_type: ResourceType,
    pub resource_id: String,
    pub patient_id: String,
    /// UTC milliseconds. Only `Patient` resources may omit it.
    pub event_time: Option<i64>,
    pub attributes: Vec<Attribute>,
}

impl FhirResource {
    pub fn attribute(&self, name: &str) -> Option<&AttrValue> {
        self.attributes.iter().find(|a| a.name == name).map(|a| &a.value)
    }

    /// Serializes to one wire-format line (no trailing newline).
    pub fn to_line(&self) -> String {
        let wire = WireOut {
            resource_type: self.resource_type.as_str(),
            id: &self.resource_id,
            patient: &self.patient_id,
            time: self.event_time.map(format_time),
            attributes: &self.attributes,
        };
        serde_json::to_string(&wire).expect("resource serialization cannot fail")
    }
}

#[derive(Serialize)]
struct WireOut<'a> {
    #[serde(rename = "resourceType")]
    resource_type: &'a str,
    id: &'a str,
    patient: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    time: Option<String>,
    attributes: &'a [Attribute],
}

#[derive(Deserialize)]
struct WireIn {
    #[serde(rename = "resourceType")]
    resource_type: String,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    patient: Option<String>,
    #[serde(default)]
    time: Option<WireTime>,
    #[serde(default)]
    attributes: Vec<WireAttribute>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireTime {
    Millis(i64),
    Text(String),
}

#[derive(Deserialize)]
struct WireAttribute {
    name: String,
    value: AttrValue,
    #[serde(default)]
    kind: Option<AttrKind>,
}

pub fn format_time(ms: i64) -> String {
    DateTime::<Utc>::from_timestamp_millis(ms)
        .map(|t| t.to_rfc3339_opts(SecondsFormat::Millis, true))
        .unwrap_or_else(|| ms.to_string())
}

/// Parses an RFC 3339 timestamp or a bare date (midnight UTC) to milliseconds.
pub fn parse_time(s: &str) -> Option<i64> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp_millis());
    }
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    Some(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp_millis())
}

/// Outcome of checking a resource against its invariants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Ok,
    Invalid(Vec<String>),
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        matches!(self, Validation::Ok)
    }

    pub fn violations(&self) -> &[String] {
        match self {
            Validation::Ok => &[],
            Validation::Invalid(v) => v,
        }
    }
}

pub fn validate_resource(r: &FhirResource) -> Validation {
    let mut violations = Vec::new();
    if r.patient_id.is_empty() {
        violations.push("patient_id empty".to_string());
    }
    if r.event_time.is_none() && r.resource_type != ResourceType::Patient {
        violations.push("event_time missing".to_string());
    }
    if r.attributes.is_empty() {
        violations.push("attributes empty".to_string());
    }
    for a in &r.attributes {
        match (&a.kind, &a.value) {
            (AttrKind::Numeric, AttrValue::Number(x)) if !x.is_finite() => {
                violations.push("non-finite numeric".to_string());
            }
            (AttrKind::Numeric, AttrValue::Text(_)) => {
                violations.push(format!("numeric attribute {} holds text", a.name));
            }
            _ => {}
        }
    }
    if violations.is_empty() {
        Validation::Ok
    } else {
        Validation::Invalid(violations)
    }
}

/// A rejected input line with its reason code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub line_number: u64,
    pub reason: &'static str,
    pub detail: String,
}

/// Parses a single line. Pure, so lines may be processed in any order.
pub fn parse_line(line: &str) -> Result<FhirResource, (&'static str, String)> {
    let wire: WireIn = serde_json::from_str(line).map_err(|e| (REASON_PARSE, e.to_string()))?;
    let resource_type = ResourceType::from_str(&wire.resource_type)
        .map_err(|_| (REASON_UNKNOWN_TYPE, wire.resource_type.clone()))?;
    let patient_id = match wire.patient {
        Some(p) if !p.is_empty() => p,
        _ => return Err((REASON_MISSING_FIELD, "patient".into())),
    };
    let resource_id = match wire.id {
        Some(id) if !id.is_empty() => id,
        _ => return Err((REASON_MISSING_FIELD, "id".into())),
    };
    let event_time = match wire.time {
        Some(WireTime::Millis(ms)) => Some(ms),
        Some(WireTime::Text(s)) => {
            Some(parse_time(&s).ok_or_else(|| (REASON_PARSE, format!("bad time {s:?}")))?)
        }
        None if resource_type == ResourceType::Patient => None,
        None => return Err((REASON_MISSING_FIELD, "time".into())),
    };
    if wire.attributes.is_empty() {
        return Err((REASON_MISSING_FIELD, "attributes".into()));
    }
    let mut attributes = Vec::with_capacity(wire.attributes.len());
    for a in wire.attributes {
        let kind = a.kind.unwrap_or(match a.value {
            AttrValue::Number(_) => AttrKind::Numeric,
            AttrValue::Text(_) => AttrKind::Categorical,
        });
        let value = match (kind, a.value) {
            (AttrKind::Numeric, AttrValue::Text(s)) => match s.trim().parse::<f64>() {
                Ok(x) => AttrValue::Number(x),
                Err(_) => return Err((REASON_PARSE, format!("attribute {} is not numeric", a.name))),
            },
            (AttrKind::Categorical | AttrKind::Text, AttrValue::Number(x)) => AttrValue::Text(x.to_string()),
            (_, v) => v,
        };
        attributes.push(Attribute { name: a.name, value, kind });
    }
    let resource = FhirResource { resource_type, resource_id, patient_id, event_time, attributes };
    match validate_resource(&resource) {
        Validation::Ok => Ok(resource),
        Validation::Invalid(v) => Err((REASON_INVALID, v.join("; "))),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub resources_accepted: u64,
    pub resources_rejected: u64,
    pub rejection_reasons: BTreeMap<String, u64>,
}

impl IngestReport {
    pub fn record_rejection(&mut self, reason: &str) {
        self.resources_rejected += 1;
        *self.rejection_reasons.entry(reason.to_string()).or_default() += 1;
    }

    pub fn total(&self) -> u64 {
        self.resources_accepted + self.resources_rejected
    }

    /// Commutative merge of shard reports.
    pub fn merge(&mut self, other: &IngestReport) {
        self.resources_accepted += other.resources_accepted;
        self.resources_rejected += other.resources_rejected;
        for (k, v) in &other.rejection_reasons {
            *self.rejection_reasons.entry(k.clone()).or_default() += v;
        }
    }
}

/// Streaming reader: holds one line in memory at a time.
pub struct ResourceReader<R> {
    input: R,
    buf: Vec<u8>,
    line_number: u64,
    report: IngestReport,
}

impl<R: BufRead> ResourceReader<R> {
    pub fn new(input: R) -> Self {
        ResourceReader { input, buf: Vec::new(), line_number: 0, report: IngestReport::default() }
    }

    pub fn report(&self) -> &IngestReport {
        &self.report
    }

    pub fn into_report(self) -> IngestReport {
        self.report
    }

    /// Capacity of the internal line buffer; bounded by the longest line seen.
    pub fn buffer_capacity(&self) -> usize {
        self.buf.capacity()
    }

    /// Next line's outcome, or `None` at end of input.
    pub fn next_record(&mut self) -> io::Result<Option<Result<FhirResource, Rejection>>> {
        self.buf.clear();
        let n = self.input.read_until(b'\n', &mut self.buf)?;
        if n == 0 {
            return Ok(None);
        }
        self.line_number += 1;
        let outcome = match std::str::from_utf8(&self.buf) {
            Ok(s) => parse_line(s.trim_end_matches(['\n', '\r'])),
            Err(e) => Err((REASON_PARSE, e.to_string())),
        };
        Ok(Some(match outcome {
            Ok(r) => {
                self.report.resources_accepted += 1;
                Ok(r)
            }
            Err((reason, detail)) => {
                self.report.record_rejection(reason);
                Err(Rejection { line_number: self.line_number, reason, detail })
            }
        }))
    }
}

impl<R: BufRead> Iterator for ResourceReader<R> {
    type Item = io::Result<Result<FhirResource, Rejection>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

/// Reads every line of `input`, keeping accepted resources in input order.
pub fn parse_resource_stream<R: BufRead>(input: R) -> io::Result<(Vec<FhirResource>, IngestReport)> {
    let mut reader = ResourceReader::new(input);
    let mut out = Vec::new();
    while let Some(rec) = reader.next_record()? {
        if let Ok(r) = rec {
            out.push(r);
        }
    }
    Ok((out, reader.into_report()))
}

/// Canonical merge order for sharded ingestion.
pub fn canonical_order(resources: &mut [FhirResource]) {
    resources.sort_by(|a, b| {
        (a.patient_id.as_str(), a.event_time, a.resource_id.as_str())
            .cmp(&(b.patient_id.as_str(), b.event_time, b.resource_id.as_str()))
    });
}

/// Parses `text` in `shards` parallel chunks; the result is in canonical
/// order and is independent of the shard count.
pub fn parse_sharded(text: &str, shards: usize) -> (Vec<FhirResource>, IngestReport) {
    let lines: Vec<&str> = text.lines().collect();
    let chunk = lines.len().div_ceil(shards.max(1)).max(1);
    let parts: Vec<(Vec<FhirResource>, IngestReport)> = lines
        .par_chunks(chunk)
        .map(|chunk| {
            let mut report = IngestReport::default();
            let mut ok = Vec::new();
            for line in chunk {
                match parse_line(line) {
                    Ok(r) => {
                        report.resources_accepted += 1;
                        ok.push(r);
                    }
                    Err((reason, _)) => report.record_rejection(reason),
                }
            }
            (ok, report)
        })
        .collect();
    let mut report = IngestReport::default();
    let mut all = Vec::new();
    for (rs, rep) in parts {
        all.extend(rs);
        report.merge(&rep);
    }
    canonical_order(&mut all);
    (all, report)
}
