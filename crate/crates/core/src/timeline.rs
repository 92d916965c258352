//! Resource-to-token conversion and per-patient token timelines.
//!
//! Token strings:
//! - categorical attribute: `ResourceType:attribute:value`
//! - numeric attribute: `ResourceType:attribute:Qk` (decile bucket, `Qx` for sparse keys)
//! - free-text words: `note:word`

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fhir::{AttrKind, AttrValue, FhirResource, ResourceType};

pub const UNK: u32 = 0;
pub const PAD: u32 = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

/// Keys with fewer training observations than this are not quantized.
pub const MIN_QUANTIZE_OBSERVATIONS: usize = 20;
pub const SPARSE_BUCKET: &str = "Qx";

/// Attributes never emitted as tokens. These carry outcomes, linkage ids or
/// identifiers that would leak labels into model inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub excluded: BTreeSet<(ResourceType, String)>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        let excluded = [
            (ResourceType::Encounter, "discharge_time"),
            (ResourceType::Encounter, "discharge_disposition"),
            (ResourceType::Patient, "birth_date"),
            (ResourceType::Condition, "encounter"),
            (ResourceType::Procedure, "encounter"),
        ]
        .into_iter()
        .map(|(t, n)| (t, n.to_string()))
        .collect();
        TokenizerConfig { excluded }
    }
}

impl TokenizerConfig {
    pub fn none() -> Self {
        TokenizerConfig { excluded: BTreeSet::new() }
    }

    pub fn is_excluded(&self, rt: ResourceType, name: &str) -> bool {
        // BTreeSet<(_, String)> cannot be queried by &str without allocating.
        self.excluded.iter().any(|(t, n)| *t == rt && n == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerKey {
    /// Nine non-decreasing cut points; empty for sparse keys.
    pub cuts: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NumericQuantizer {
    pub keys: BTreeMap<String, QuantizerKey>,
}

pub fn numeric_key(rt: ResourceType, attribute: &str) -> String {
    format!("{}:{}", rt.as_str(), attribute)
}

/// Fits decile cut points per key (linear-interpolation quantiles).
pub fn fit_quantizer(observations: &BTreeMap<String, Vec<f64>>) -> NumericQuantizer {
    let keys = observations
        .iter()
        .map(|(k, values)| {
            let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
            let cuts = if v.len() < MIN_QUANTIZE_OBSERVATIONS {
                Vec::new()
            } else {
                v.sort_by(f64::total_cmp);
                (1..10).map(|i| crate::math::quantile_sorted(&v, i as f64 / 10.0)).collect()
            };
            (k.clone(), QuantizerKey { cuts, count: v.len() })
        })
        .collect();
    NumericQuantizer { keys }
}

impl NumericQuantizer {
    /// Bucket 1..=10 for the value, or `None` when the key is sparse or unseen.
    ///
    /// Buckets are right-closed: `x` lands in `Qk` when `c[k-1] < x <= c[k]`.
    /// A key whose cut points are all equal puts every value in `Q10`.
    pub fn bucket(&self, key: &str, x: f64) -> Option<u8> {
        let k = self.keys.get(key)?;
        if k.cuts.is_empty() {
            return None;
        }
        if k.cuts.first() == k.cuts.last() {
            return Some(10);
        }
        Some(1 + k.cuts.iter().filter(|&&c| c < x).count() as u8)
    }

    pub fn bucket_label(&self, key: &str, x: f64) -> String {
        match self.bucket(key, x) {
            Some(b) => format!("Q{b}"),
            None => SPARSE_BUCKET.to_string(),
        }
    }

    pub fn cuts(&self, key: &str) -> &[f64] {
        self.keys.get(key).map(|k| k.cuts.as_slice()).unwrap_or(&[])
    }
}

/// Collects the numeric observations of `resources` per key.
pub fn numeric_observations<'a>(
    resources: impl IntoIterator<Item = &'a FhirResource>,
    cfg: &TokenizerConfig,
) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in resources {
        for a in &r.attributes {
            if a.kind == AttrKind::Numeric && !cfg.is_excluded(r.resource_type, &a.name) {
                if let AttrValue::Number(x) = a.value {
                    out.entry(numeric_key(r.resource_type, &a.name)).or_default().push(x);
                }
            }
        }
    }
    out
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn note_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase)
}

/// One token string with the attribute and numeric value it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RawToken {
    pub token: String,
    pub attribute: String,
    pub raw_numeric_value: Option<f64>,
}

/// Token strings emitted by one resource, in attribute order.
pub fn resource_tokens(r: &FhirResource, q: &NumericQuantizer, cfg: &TokenizerConfig) -> Vec<RawToken> {
    let rt = r.resource_type;
    let mut out = Vec::with_capacity(r.attributes.len());
    for a in &r.attributes {
        if cfg.is_excluded(rt, &a.name) {
            continue;
        }
        match (a.kind, &a.value) {
            (AttrKind::Text, v) => {
                let text = v.to_string();
                out.extend(note_words(&text).map(|w| RawToken {
                    token: format!("note:{w}"),
                    attribute: a.name.clone(),
                    raw_numeric_value: None,
                }));
            }
            (AttrKind::Numeric, AttrValue::Number(x)) => {
                let key = numeric_key(rt, &a.name);
                out.push(RawToken {
                    token: format!("{}:{}", key, q.bucket_label(&key, *x)),
                    attribute: a.name.clone(),
                    raw_numeric_value: Some(*x),
                });
            }
            (_, v) => out.push(RawToken {
                token: format!("{}:{}:{}", rt.as_str(), a.name, v),
                attribute: a.name.clone(),
                raw_numeric_value: None,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Token strings indexed by id; ids 0 and 1 are UNK and PAD.
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    pub min_count: u64,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>, min_count: u64) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, index, min_count }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(UNK_TOKEN)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: Vocabulary = serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Vocabulary::from_tokens(v.tokens, v.min_count))
    }
}

/// Builds the vocabulary from development-split resources. Ids after the
/// two specials are assigned by descending count, then token string.
pub fn build_vocabulary<'a>(
    resources: impl IntoIterator<Item = &'a FhirResource>,
    q: &NumericQuantizer,
    cfg: &TokenizerConfig,
    min_count: u64,
) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for r in resources {
        for t in resource_tokens(r, q, cfg) {
            *counts.entry(t.token).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens = vec![UNK_TOKEN.to_string(), PAD_TOKEN.to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t).filter(|t| t != UNK_TOKEN && t != PAD_TOKEN));
    Ok(Vocabulary::from_tokens(tokens, min_count))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenOccurrence {
    pub token_id: u32,
    /// UTC milliseconds.
    pub time: i64,
    pub resource_type: ResourceType,
    pub attribute: Arc<str>,
    pub raw_numeric_value: Option<f64>,
    /// Emitted by a billing-role `Condition`; these describe a stay only
    /// after it ends and are withheld from predictions about that stay.
    #[serde(default)]
    pub billing: bool,
}

pub fn is_billing(r: &FhirResource) -> bool {
    r.resource_type == ResourceType::Condition
        && r.attribute("role").and_then(AttrValue::as_text) == Some("billing")
}

/// Tokenizes a resource at its own event time (0 when absent).
pub fn tokenize_resource(
    r: &FhirResource,
    v: &Vocabulary,
    q: &NumericQuantizer,
    cfg: &TokenizerConfig,
) -> Vec<TokenOccurrence> {
    tokenize_resource_at(r, r.event_time.unwrap_or(0), v, q, cfg)
}

pub fn tokenize_resource_at(
    r: &FhirResource,
    time: i64,
    v: &Vocabulary,
    q: &NumericQuantizer,
    cfg: &TokenizerConfig,
) -> Vec<TokenOccurrence> {
    let billing = is_billing(r);
    let mut attrs: HashMap<String, Arc<str>> = HashMap::new();
    resource_tokens(r, q, cfg)
        .into_iter()
        .map(|t| {
            let attribute = attrs.entry(t.attribute).or_insert_with_key(|k| Arc::from(k.as_str())).clone();
            TokenOccurrence {
                token_id: v.id(&t.token),
                time,
                resource_type: r.resource_type,
                attribute,
                raw_numeric_value: t.raw_numeric_value,
                billing,
            }
        })
        .collect()
}

pub fn tokenize_note(text: &str, time: i64, v: &Vocabulary) -> Vec<TokenOccurrence> {
    let attribute: Arc<str> = Arc::from("text");
    note_words(text)
        .map(|w| TokenOccurrence {
            token_id: v.id(&format!("note:{w}")),
            time,
            resource_type: ResourceType::Note,
            attribute: attribute.clone(),
            raw_numeric_value: None,
            billing: false,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTimeline {
    pub patient_id: String,
    /// Ascending by time; equal times keep input order.
    pub occurrences: Vec<TokenOccurrence>,
}

/// Stable-sorts one patient's occurrences. Each occurrence is paired with the
/// patient id it came from.
pub fn assemble_timeline(tagged: Vec<(String, TokenOccurrence)>) -> Result<PatientTimeline> {
    let patient_id = match tagged.first() {
        Some((p, _)) => p.clone(),
        None => return Err(Error::invalid("no occurrences to assemble")),
    };
    if let Some((other, _)) = tagged.iter().find(|(p, _)| *p != patient_id) {
        return Err(Error::invalid(format!("mixed patient ids: {patient_id} and {other}")));
    }
    let mut occurrences: Vec<TokenOccurrence> = tagged.into_iter().map(|(_, o)| o).collect();
    occurrences.sort_by_key(|o| o.time);
    Ok(PatientTimeline { patient_id, occurrences })
}

impl PatientTimeline {
    /// Occurrences with `time <= at`, in timeline order.
    pub fn slice_at(&self, at: i64) -> &[TokenOccurrence] {
        slice_at(&self.occurrences, at)
    }
}

pub fn slice_at(occurrences: &[TokenOccurrence], at: i64) -> &[TokenOccurrence] {
    let k = occurrences.partition_point(|o| o.time <= at);
    &occurrences[..k]
}

/// Model input for a prediction at `at` about the stay admitted at
/// `stay_admit`: the prefix up to `at`, minus billing tokens of that stay.
pub fn input_prefix(timeline: &PatientTimeline, at: i64, stay_admit: i64) -> Vec<TokenOccurrence> {
    timeline
        .slice_at(at)
        .iter()
        .filter(|o| !(o.billing && o.time >= stay_admit))
        .cloned()
        .collect()
}

/// Groups resources by patient and builds one timeline each, sorted by
/// patient id. `Patient` resources without a time are stamped at the
/// patient's earliest event.
pub fn build_timelines(
    resources: &[FhirResource],
    v: &Vocabulary,
    q: &NumericQuantizer,
    cfg: &TokenizerConfig,
) -> Vec<PatientTimeline> {
    let mut by_patient: BTreeMap<&str, Vec<&FhirResource>> = BTreeMap::new();
    for r in resources {
        by_patient.entry(r.patient_id.as_str()).or_default().push(r);
    }
    use rayon::prelude::*;
    let groups: Vec<(&str, Vec<&FhirResource>)> = by_patient.into_iter().collect();
    groups
        .into_par_iter()
        .map(|(pid, rs)| {
            let fallback = rs.iter().filter_map(|r| r.event_time).min().unwrap_or(0);
            let mut occurrences: Vec<TokenOccurrence> = rs
                .iter()
                .flat_map(|r| tokenize_resource_at(r, r.event_time.unwrap_or(fallback), v, q, cfg))
                .collect();
            occurrences.sort_by_key(|o| o.time);
            PatientTimeline { patient_id: pid.to_string(), occurrences }
        })
        .collect()
}

/// Archive layout: the 8-byte magic `EHRTLv01`, then zero or more records,
/// each a little-endian `u32` payload length followed by a CBOR-encoded
/// `PatientTimeline`.
pub const ARCHIVE_MAGIC: &[u8; 8] = b"EHRTLv01";

pub struct ArchiveWriter<W: Write> {
    out: W,
    scratch: Vec<u8>,
}

impl<W: Write> ArchiveWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        out.write_all(ARCHIVE_MAGIC)?;
        Ok(ArchiveWriter { out, scratch: Vec::new() })
    }

    pub fn write(&mut self, t: &PatientTimeline) -> io::Result<()> {
        self.scratch.clear();
        ciborium::into_writer(t, &mut self.scratch).map_err(io::Error::other)?;
        let len = u32::try_from(self.scratch.len()).map_err(io::Error::other)?;
        self.out.write_all(&len.to_le_bytes())?;
        self.out.write_all(&self.scratch)
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub struct ArchiveReader<R: Read> {
    input: R,
    scratch: Vec<u8>,
}

impl<R: Read> ArchiveReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != ARCHIVE_MAGIC {
            return Err(Error::Format("not a timeline archive".into()));
        }
        Ok(ArchiveReader { input, scratch: Vec::new() })
    }

    pub fn next_timeline(&mut self) -> Result<Option<PatientTimeline>> {
        let mut len = [0u8; 4];
        match self.input.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        self.scratch.resize(u32::from_le_bytes(len) as usize, 0);
        self.input.read_exact(&mut self.scratch)?;
        let t = ciborium::from_reader(self.scratch.as_slice()).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Some(t))
    }

    pub fn read_all(mut self) -> Result<Vec<PatientTimeline>> {
        let mut out = Vec::new();
        while let Some(t) = self.next_timeline()? {
            out.push(t);
        }
        Ok(out)
    }
}

/// Tab-separated debug dump: `patient_id  time  resource_type  token`.
pub fn dump_text<W: Write>(timelines: &[PatientTimeline], v: &Vocabulary, mut out: W) -> io::Result<()> {
    for t in timelines {
        for o in &t.occurrences {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                t.patient_id,
                crate::fhir::format_time(o.time),
                o.resource_type,
                v.token(o.token_id)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fhir::Attribute;

    fn occ(time: i64, token_id: u32) -> TokenOccurrence {
        TokenOccurrence {
            token_id,
            time,
            resource_type: ResourceType::Observation,
            attribute: Arc::from("x"),
            raw_numeric_value: None,
            billing: false,
        }
    }

    fn med() -> FhirResource {
        FhirResource {
            resource_type: ResourceType::MedicationOrder,
            resource_id: "m".into(),
            patient_id: "p".into(),
            event_time: Some(100),
            attributes: vec![
                Attribute::categorical("trade_name", "Lasix"),
                Attribute::categorical("generic_name", "furosemide"),
                Attribute::categorical("ingredient", "furosemide"),
            ],
        }
    }

    fn quantizer_1_to_100() -> NumericQuantizer {
        let mut obs = BTreeMap::new();
        obs.insert("Observation:sodium".to_string(), (1..=100).map(f64::from).collect());
        fit_quantizer(&obs)
    }

    #[test]
    fn deciles_of_1_to_100() {
        let q = quantizer_1_to_100();
        let expect = [10.9, 20.8, 30.7, 40.6, 50.5, 60.4, 70.3, 80.2, 90.1];
        for (c, e) in q.cuts("Observation:sodium").iter().zip(expect) {
            assert!((c - e).abs() < 1e-9, "{c} vs {e}");
        }
    }

    #[test]
    fn median_value_is_q5() {
        let q = quantizer_1_to_100();
        assert_eq!(q.bucket("Observation:sodium", 50.5), Some(5));
        assert_eq!(q.bucket("Observation:sodium", -1e9), Some(1));
        assert_eq!(q.bucket("Observation:sodium", 1e9), Some(10));
    }

    #[test]
    fn constant_key_maps_to_q10() {
        let mut obs = BTreeMap::new();
        obs.insert("k".to_string(), vec![3.0; 40]);
        let q = fit_quantizer(&obs);
        assert!(q.cuts("k").iter().all(|&c| c == 3.0));
        for x in [-5.0, 3.0, 7.0] {
            assert_eq!(q.bucket("k", x), Some(10));
        }
    }

    #[test]
    fn sparse_key_is_unquantized() {
        let mut obs = BTreeMap::new();
        obs.insert("k".to_string(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let q = fit_quantizer(&obs);
        assert_eq!(q.bucket_label("k", 3.0), "Qx");
        assert_eq!(q.bucket_label("unseen", 3.0), "Qx");
    }

    #[test]
    fn vocabulary_threshold_boundary() {
        let q = NumericQuantizer::default();
        let cfg = TokenizerConfig::none();
        let rs: Vec<FhirResource> = std::iter::repeat_n(med(), 10).collect();
        let v = build_vocabulary(&rs, &q, &cfg, 10).unwrap();
        // "ingredient:furosemide" and "generic_name:furosemide" are distinct tokens
        assert_eq!(v.size(), 2 + 3);
        assert!(v.get("MedicationOrder:trade_name:Lasix").is_some());

        let v = build_vocabulary(&rs[..9], &q, &cfg, 10).unwrap();
        assert_eq!(v.size(), 2);
        assert_eq!(v.id("MedicationOrder:trade_name:Lasix"), UNK);
        assert!(build_vocabulary(&rs, &q, &cfg, 0).is_err());
    }

    #[test]
    fn one_occurrence_per_attribute() {
        let rs = vec![med()];
        let q = NumericQuantizer::default();
        let cfg = TokenizerConfig::none();
        let v = build_vocabulary(&rs, &q, &cfg, 1).unwrap();
        let occ = tokenize_resource(&med(), &v, &q, &cfg);
        assert_eq!(occ.len(), 3);
        assert!(occ.iter().all(|o| o.time == 100 && o.token_id != UNK));

        let mut unseen = med();
        unseen.attributes[0] = Attribute::categorical("trade_name", "Bumex");
        assert_eq!(tokenize_resource(&unseen, &v, &q, &cfg)[0].token_id, UNK);
    }

    #[test]
    fn median_observation_token() {
        let q = quantizer_1_to_100();
        let r = FhirResource {
            resource_type: ResourceType::Observation,
            resource_id: "o".into(),
            patient_id: "p".into(),
            event_time: Some(5),
            attributes: vec![Attribute::numeric("sodium", 50.5)],
        };
        let toks = resource_tokens(&r, &q, &TokenizerConfig::none());
        assert_eq!(toks[0].token, "Observation:sodium:Q5");
        assert_eq!(toks[0].raw_numeric_value, Some(50.5));
    }

    #[test]
    fn note_tokenization() {
        let v = Vocabulary::from_tokens(
            vec!["<unk>".into(), "<pad>".into(), "note:pleurx".into(), "note:catheter".into(), "note:placed".into(), "note:empyema".into()],
            1,
        );
        let toks = tokenize_note("Pleurx catheter placed.", 7, &v);
        assert_eq!(toks.iter().map(|o| o.token_id).collect::<Vec<_>>(), [2, 3, 4]);
        assert!(tokenize_note("", 7, &v).is_empty());
        let dup = tokenize_note("empyema, empyema", 7, &v);
        assert_eq!(dup.iter().map(|o| o.token_id).collect::<Vec<_>>(), [5, 5]);
    }

    #[test]
    fn assemble_sorts_stably_and_rejects_mixed_patients() {
        let tagged = |xs: &[(i64, u32)]| xs.iter().map(|&(t, id)| ("p".to_string(), occ(t, id))).collect::<Vec<_>>();
        let sorted = assemble_timeline(tagged(&[(1, 2), (2, 3), (3, 4)])).unwrap();
        assert_eq!(sorted.occurrences.iter().map(|o| o.time).collect::<Vec<_>>(), [1, 2, 3]);
        let rev = assemble_timeline(tagged(&[(3, 4), (2, 3), (1, 2)])).unwrap();
        assert_eq!(rev, sorted);
        let ties = assemble_timeline(tagged(&[(5, 9), (1, 2), (5, 7), (5, 8)])).unwrap();
        assert_eq!(ties.occurrences.iter().map(|o| o.token_id).collect::<Vec<_>>(), [2, 9, 7, 8]);

        let mut mixed = tagged(&[(1, 2)]);
        mixed.push(("q".to_string(), occ(2, 3)));
        assert!(matches!(assemble_timeline(mixed), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn slice_boundaries() {
        let t = PatientTimeline {
            patient_id: "p".into(),
            occurrences: [10, 20, 20, 30, 45, 50, 70].iter().enumerate().map(|(i, &t)| occ(t, i as u32)).collect(),
        };
        assert_eq!(t.slice_at(70).len(), 7);
        assert!(t.slice_at(9).is_empty());
        let linear = t.occurrences.iter().filter(|o| o.time <= 33).count();
        assert_eq!(t.slice_at(33).len(), linear);
        assert_eq!(t.slice_at(20).len(), 3);
    }

    #[test]
    fn stay_billing_is_withheld() {
        let mut b = occ(100, 5);
        b.billing = true;
        let mut old_bill = occ(10, 6);
        old_bill.billing = true;
        let t = PatientTimeline { patient_id: "p".into(), occurrences: vec![old_bill, occ(50, 2), occ(100, 3), b] };
        let p = input_prefix(&t, 100, 40);
        assert_eq!(p.iter().map(|o| o.token_id).collect::<Vec<_>>(), [6, 2, 3]);
    }

    #[test]
    fn archive_round_trip() {
        let t = PatientTimeline { patient_id: "p".into(), occurrences: vec![occ(1, 2), occ(2, 3)] };
        let mut w = ArchiveWriter::new(Vec::new()).unwrap();
        w.write(&t).unwrap();
        w.write(&t).unwrap();
        let bytes = w.finish().unwrap();
        let back = ArchiveReader::new(bytes.as_slice()).unwrap().read_all().unwrap();
        assert_eq!(back, vec![t.clone(), t]);
        assert!(ArchiveReader::new(&b"garbage!"[..]).is_err());
    }
}
