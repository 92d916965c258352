//! Per-prediction attributions and human-readable reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cohort::{EncounterRecord, Task, TimeTag};
use crate::error::{Error, Result};
use crate::fhir::{format_time, ResourceType};
use crate::math::MS_PER_HOUR;
use crate::models::{Arch, Model, PredictionInput, TannModel};
use crate::timeline::{TokenOccurrence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Attention,
    Occlusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Index of the occurrence in the prefix.
    pub position: usize,
    pub token_id: u32,
    pub weight: f64,
    pub method: Method,
}

fn rank_desc(mut attrs: Vec<Attribution>) -> Vec<Attribution> {
    attrs.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.position.cmp(&b.position)));
    attrs
}

/// Softmax attention weights over the visible prefix, largest first.
pub fn attention_attribution(m: &TannModel, input: &PredictionInput) -> Vec<Attribution> {
    let (_, weights) = m.attention(input);
    rank_desc(
        weights
            .into_iter()
            .map(|(position, weight)| Attribution {
                position,
                token_id: input.prefix[position].token_id,
                weight,
                method: Method::Attention,
            })
            .collect(),
    )
}

/// `p(full) - p(prefix without the occurrence)` for every visible
/// occurrence; the `top_k` largest are returned, largest first.
pub fn occlusion_attribution(m: &Model, input: &PredictionInput, top_k: usize) -> Result<Vec<Attribution>> {
    if top_k < 1 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    let full = m.predict_one(input);
    let visible: Vec<usize> = (0..input.prefix.len()).filter(|&i| input.prefix[i].time <= input.at).collect();
    let mut reduced: Vec<TokenOccurrence> = Vec::with_capacity(input.prefix.len());
    let mut attrs = Vec::with_capacity(visible.len());
    for &j in &visible {
        reduced.clear();
        reduced.extend(input.prefix.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, o)| o.clone()));
        let without = m.predict_one(&PredictionInput { prefix: &reduced, ..*input });
        attrs.push(Attribution { position: j, token_id: input.prefix[j].token_id, weight: full - without, method: Method::Occlusion });
    }
    let mut ranked = rank_desc(attrs);
    ranked.truncate(top_k);
    Ok(ranked)
}

/// Attention attributions of each single-modality member of a per-modality ensemble.
pub fn modality_attributions(m: &Model, input: &PredictionInput) -> Vec<(ResourceType, f64, Vec<Attribution>)> {
    let Model::Ensemble(members) = m else { return Vec::new() };
    members
        .iter()
        .filter_map(|member| match member {
            Model::Tann(t) => t.modality.map(|rt| (rt, t.predict(input)[0], attention_attribution(t, input))),
            _ => None,
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant or the lengths differ.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma).powi(2);
        vb += (rb[i] - mb).powi(2);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        for k in i..=j {
            ranks[order[k]] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    ranks
}

pub const TIME_BUCKETS: [&str; 5] = ["<=6h", "<=24h", "<=7d", "<=30d", ">30d"];

pub fn time_bucket(delta_h: f64) -> &'static str {
    match delta_h {
        d if d <= 6.0 => TIME_BUCKETS[0],
        d if d <= 24.0 => TIME_BUCKETS[1],
        d if d <= 168.0 => TIME_BUCKETS[2],
        d if d <= 720.0 => TIME_BUCKETS[3],
        _ => TIME_BUCKETS[4],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub task: Task,
    pub time_tag: TimeTag,
    pub encounter_id: String,
    pub patient_id: String,
    pub prediction_time: String,
    pub model: Arch,
    pub model_score: f64,
    pub baseline_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineCount {
    pub resource_type: ResourceType,
    pub bucket: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub rank: usize,
    pub token: String,
    pub resource_type: ResourceType,
    pub time: String,
    pub hours_before: f64,
    pub weight: f64,
    pub method: Method,
    /// Surrounding note words with the highlighted one in brackets.
    pub context: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityHighlights {
    pub resource_type: ResourceType,
    pub score: f64,
    pub highlights: Vec<Highlight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub header: ReportHeader,
    pub timeline: Vec<TimelineCount>,
    pub highlights: Vec<Highlight>,
    pub modalities: Vec<ModalityHighlights>,
}

pub struct ReportInput<'a> {
    pub task: Task,
    pub time_tag: TimeTag,
    pub encounter: &'a EncounterRecord,
    pub at: i64,
    pub model: Arch,
    pub model_score: f64,
    pub baseline_score: Option<f64>,
    pub prefix: &'a [TokenOccurrence],
    pub vocab: &'a Vocabulary,
    /// Highlights to list.
    pub top_k: usize,
}

const CONTEXT_WORDS: usize = 3;

fn note_context(prefix: &[TokenOccurrence], pos: usize, vocab: &Vocabulary) -> Option<String> {
    let o = &prefix[pos];
    if o.resource_type != ResourceType::Note {
        return None;
    }
    let same_note = |i: usize| prefix[i].resource_type == ResourceType::Note && prefix[i].time == o.time;
    let mut lo = pos;
    while lo > 0 && pos - (lo - 1) <= CONTEXT_WORDS && same_note(lo - 1) {
        lo -= 1;
    }
    let mut hi = pos;
    while hi + 1 < prefix.len() && hi + 1 - pos <= CONTEXT_WORDS && same_note(hi + 1) {
        hi += 1;
    }
    let word = |i: usize| {
        let t = vocab.token(prefix[i].token_id);
        t.strip_prefix("note:").unwrap_or(t).to_string()
    };
    let words: Vec<String> = (lo..=hi).map(|i| if i == pos { format!("[{}]", word(i)) } else { word(i) }).collect();
    Some(words.join(" "))
}

fn highlights(r: &ReportInput, attrs: &[Attribution]) -> Vec<Highlight> {
    attrs
        .iter()
        .take(r.top_k)
        .enumerate()
        .map(|(k, a)| {
            let o = &r.prefix[a.position];
            Highlight {
                rank: k + 1,
                token: r.vocab.token(o.token_id).to_string(),
                resource_type: o.resource_type,
                time: format_time(o.time),
                hours_before: (r.at - o.time) as f64 / MS_PER_HOUR as f64,
                weight: a.weight,
                method: a.method,
                context: note_context(r.prefix, a.position, r.vocab),
            }
        })
        .collect()
}

pub fn render_report(r: &ReportInput, attributions: &[Attribution], modalities: &[(ResourceType, f64, Vec<Attribution>)]) -> Report {
    let mut counts: BTreeMap<(ResourceType, usize), usize> = BTreeMap::new();
    for o in r.prefix.iter().filter(|o| o.time <= r.at) {
        let label = time_bucket((r.at - o.time) as f64 / MS_PER_HOUR as f64);
        let b = TIME_BUCKETS.iter().position(|x| *x == label).unwrap_or(0);
        *counts.entry((o.resource_type, b)).or_default() += 1;
    }
    Report {
        header: ReportHeader {
            task: r.task,
            time_tag: r.time_tag,
            encounter_id: r.encounter.encounter_id.clone(),
            patient_id: r.encounter.patient_id.clone(),
            prediction_time: format_time(r.at),
            model: r.model,
            model_score: r.model_score,
            baseline_score: r.baseline_score,
        },
        timeline: counts
            .into_iter()
            .map(|((resource_type, b), count)| TimelineCount { resource_type, bucket: TIME_BUCKETS[b].into(), count })
            .collect(),
        highlights: highlights(r, attributions),
        modalities: modalities
            .iter()
            .map(|(rt, score, attrs)| ModalityHighlights { resource_type: *rt, score: *score, highlights: highlights(r, attrs) })
            .collect(),
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_html(&self) -> String {
        let h = &self.header;
        let mut out = String::from("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>");
        let _ = writeln!(out, "{} risk for {}</title></head><body>", esc(h.task.as_str()), esc(&h.encounter_id));
        let _ = writeln!(out, "<h1>{} at {} ({})</h1>", esc(h.task.as_str()), esc(h.time_tag.as_str()), esc(&h.prediction_time));
        let _ = writeln!(out, "<p>Encounter {} / patient {}</p>", esc(&h.encounter_id), esc(&h.patient_id));
        let _ = write!(out, "<p>{} score: {:.4}", esc(h.model.as_str()), h.model_score);
        if let Some(b) = h.baseline_score {
            let _ = write!(out, "; baseline score: {b:.4}");
        }
        out.push_str("</p>\n<h2>Timeline</h2>\n<table><tr><th>resource</th>");
        for b in TIME_BUCKETS {
            let _ = write!(out, "<th>{}</th>", esc(b));
        }
        out.push_str("</tr>\n");
        let mut by_type: BTreeMap<ResourceType, BTreeMap<&str, usize>> = BTreeMap::new();
        for c in &self.timeline {
            by_type.entry(c.resource_type).or_default().insert(c.bucket.as_str(), c.count);
        }
        for (rt, row) in &by_type {
            let _ = write!(out, "<tr><td>{}</td>", rt.as_str());
            for b in TIME_BUCKETS {
                let _ = write!(out, "<td>{}</td>", row.get(b).copied().unwrap_or(0));
            }
            out.push_str("</tr>\n");
        }
        out.push_str("</table>\n");
        highlight_table(&mut out, "Highlights", &self.highlights);
        for m in &self.modalities {
            highlight_table(&mut out, &format!("{} (score {:.4})", m.resource_type.as_str(), m.score), &m.highlights);
        }
        out.push_str("</body></html>\n");
        out
    }
}

fn highlight_table(out: &mut String, title: &str, hs: &[Highlight]) {
    let _ = writeln!(out, "<h2>{}</h2>", esc(title));
    if hs.is_empty() {
        out.push_str("<p>No highlights.</p>\n");
        return;
    }
    out.push_str("<table><tr><th>#</th><th>token</th><th>hours before</th><th>weight</th><th>context</th></tr>\n");
    for x in hs {
        let _ = writeln!(
            out,
            "<tr><td>{}</td><td>{}</td><td>{:.1}</td><td>{:.4}</td><td>{}</td></tr>",
            x.rank,
            esc(&x.token),
            x.hours_before,
            x.weight,
            esc(x.context.as_deref().unwrap_or(""))
        );
    }
    out.push_str("</table>\n");
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
