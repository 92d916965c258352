//! Discrimination, calibration and alerting metrics with bootstrap intervals.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Task, TimeTag};
use crate::error::{Error, Result};
use crate::math::{quantile_sorted, rng_for};

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_SENSITIVITY: f64 = 0.80;
pub const CALIBRATION_BINS: usize = 10;

/// Parallel score/label/encounter columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub encounter_ids: Vec<String>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>, encounter_ids: Vec<String>) -> Result<Self> {
        if scores.len() != labels.len() || scores.len() != encounter_ids.len() {
            return Err(Error::invalid("scored set columns differ in length"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("non-finite score"));
        }
        Ok(ScoredSet { scores, labels, encounter_ids })
    }

    /// Anonymous set; encounter ids are row indices.
    pub fn from_pairs(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        let ids = (0..scores.len()).map(|i| i.to_string()).collect();
        ScoredSet::new(scores, labels, ids)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }
}

fn check_two_class(labels: &[bool]) -> Result<(usize, usize)> {
    let p = labels.iter().filter(|&&y| y).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::degenerate(format!("{p} positives and {n} negatives")));
    }
    Ok((p, n))
}

/// Rank-based (Mann-Whitney) AUROC with tied scores credited one half.
pub fn auroc_raw(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let (p, n) = check_two_class(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of the positives, doubled to stay integral.
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        // average rank of the group is (i + 1 + j + 1) / 2
        rank_sum_x2 += pos_in_group * (i as u128 + j as u128 + 2);
        i = j + 1;
    }
    let (p, n) = (p as u128, n as u128);
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2 * p * n) as f64)
}

pub fn auroc(s: &ScoredSet) -> Result<f64> {
    auroc_raw(&s.scores, &s.labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub resamples: usize,
    /// Degenerate resamples that were redrawn.
    pub redraws: usize,
}

/// Percentile 95% interval over encounter-level resamples with replacement.
/// Resample `i` draws from its own `(seed, i)` stream, so the interval does
/// not depend on scheduling.
pub fn bootstrap_ci<M>(s: &ScoredSet, metric: M, n_resamples: usize, seed: u64) -> Result<BootstrapCi>
where
    M: Fn(&[f64], &[bool]) -> Result<f64> + Sync,
{
    if n_resamples == 0 {
        return Err(Error::invalid("n_resamples must be positive"));
    }
    check_two_class(&s.labels)?;
    metric(&s.scores, &s.labels)?;
    const MAX_REDRAWS_PER_RESAMPLE: usize = 100;
    let n = s.len();
    let results: Vec<Result<(f64, usize)>> = (0..n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let mut scores = vec![0.0; n];
            let mut labels = vec![false; n];
            for redraws in 0..=MAX_REDRAWS_PER_RESAMPLE {
                for k in 0..n {
                    let j = rng.random_range(0..n);
                    scores[k] = s.scores[j];
                    labels[k] = s.labels[j];
                }
                if check_two_class(&labels).is_ok() {
                    return Ok((metric(&scores, &labels)?, redraws));
                }
            }
            Err(Error::degenerate("bootstrap resamples keep drawing a single class"))
        })
        .collect();
    let mut values = Vec::with_capacity(n_resamples);
    let mut redraws = 0;
    for r in results {
        let (v, k) = r?;
        values.push(v);
        redraws += k;
    }
    values.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        low: quantile_sorted(&values, 0.025),
        high: quantile_sorted(&values, 0.975),
        resamples: n_resamples,
        redraws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub mean_pred: f64,
    pub empirical_rate: f64,
    pub count: usize,
}

/// Equal-width bins on [0, 1]; empty bins are omitted.
pub fn calibration_curve(s: &ScoredSet, n_bins: usize) -> Vec<CalibrationBin> {
    let n_bins = n_bins.max(1);
    let mut sum_pred = vec![0.0; n_bins];
    let mut positives = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&p, &y) in s.scores.iter().zip(&s.labels) {
        let b = ((p.clamp(0.0, 1.0) * n_bins as f64) as usize).min(n_bins - 1);
        sum_pred[b] += p;
        positives[b] += y as usize;
        counts[b] += 1;
    }
    (0..n_bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| CalibrationBin {
            mean_pred: sum_pred[b] / counts[b] as f64,
            empirical_rate: positives[b] as f64 / counts[b] as f64,
            count: counts[b],
        })
        .collect()
}

/// Work-up to detection ratio `(TP + FP) / TP` at the highest threshold whose
/// sensitivity reaches `target`; cases with score >= threshold are flagged.
pub fn nne_at_sensitivity(s: &ScoredSet, target: f64) -> Result<f64> {
    let (p, _) = check_two_class(&s.labels)?;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = s.scores[order[i]];
        while i < order.len() && s.scores[order[i]] == t {
            if s.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp as f64 >= target * p as f64 - 1e-12 {
            return Ok((tp + fp) as f64 / tp as f64);
        }
    }
    unreachable!("flagging every case reaches full sensitivity")
}

fn confusion(scores: &[Vec<f64>], labels: &[Vec<bool>], threshold: f64) -> Result<(usize, usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("score and label rows differ in count"));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (sr, lr) in scores.iter().zip(labels) {
        if sr.len() != lr.len() {
            return Err(Error::invalid("score and label rows differ in width"));
        }
        for (&s, &y) in sr.iter().zip(lr) {
            match (s >= threshold, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    if tp + fn_ == 0 {
        return Err(Error::degenerate("no positive labels"));
    }
    Ok((tp, fp, fn_))
}

/// F1 over pooled (encounter, code) decisions at one global threshold.
pub fn micro_f1(scores: &[Vec<f64>], labels: &[Vec<bool>], threshold: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid("threshold must lie in [0, 1]"));
    }
    let (tp, fp, fn_) = confusion(scores, labels, threshold)?;
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// Grid search over 0.00, 0.01, ..., 1.00; ties go to the lower threshold.
pub fn choose_threshold(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<f64> {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..=100 {
        let t = k as f64 / 100.0;
        let f = micro_f1(scores, labels, t)?;
        if f > best.0 {
            best = (f, t);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAuroc {
    pub value: f64,
    pub included: usize,
    /// Codes without both classes, left out of the mean.
    pub excluded: Vec<String>,
}

/// Positive-frequency-weighted mean of per-code AUROC.
pub fn weighted_auroc(per_code: &[(String, ScoredSet)]) -> Result<WeightedAuroc> {
    let (mut num, mut den) = (0.0, 0.0);
    let mut excluded = Vec::new();
    let mut included = 0;
    for (code, s) in per_code {
        match auroc(s) {
            Ok(a) => {
                let freq = s.positives() as f64;
                num += freq * a;
                den += freq;
                included += 1;
            }
            Err(Error::DegenerateLabels(_)) => excluded.push(code.clone()),
            Err(e) => return Err(e),
        }
    }
    if included == 0 {
        return Err(Error::degenerate("no code has both classes"));
    }
    Ok(WeightedAuroc { value: num / den, included, excluded })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub time_tag: TimeTag,
    pub auroc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub calibration: Vec<CalibrationBin>,
    pub nne_at_80: f64,
    pub n: usize,
    pub positives: usize,
    pub n_resamples: usize,
    pub seed: u64,
}

pub fn metrics_report(task: Task, time_tag: TimeTag, s: &ScoredSet, n_resamples: usize, seed: u64) -> Result<MetricsReport> {
    let a = auroc(s)?;
    let ci = bootstrap_ci(s, auroc_raw, n_resamples, seed)?;
    Ok(MetricsReport {
        task,
        time_tag,
        auroc: a,
        ci_low: ci.low,
        ci_high: ci.high,
        calibration: calibration_curve(s, CALIBRATION_BINS),
        nne_at_80: nne_at_sensitivity(s, DEFAULT_SENSITIVITY)?,
        n: s.len(),
        positives: s.positives(),
        n_resamples,
        seed,
    })
}

/// One report per timepoint. Every timepoint must score the same encounters.
pub fn earliness_curve(task: Task, per_tag: &[(TimeTag, ScoredSet)], n_resamples: usize, seed: u64) -> Result<Vec<MetricsReport>> {
    if let Some((_, first)) = per_tag.first() {
        let ids: BTreeSet<&String> = first.encounter_ids.iter().collect();
        for (tag, s) in per_tag {
            if s.encounter_ids.iter().collect::<BTreeSet<_>>() != ids {
                return Err(Error::invalid(format!("timepoint {tag} scores a different encounter set")));
            }
        }
    }
    per_tag.iter().map(|(tag, s)| metrics_report(task, *tag, s, n_resamples, seed)).collect()
}

/// Tab-separated `time_tag auroc ci_low ci_high` table for plotting.
pub fn earliness_table(reports: &[MetricsReport]) -> String {
    let mut out = String::from("time_tag\tauroc\tci_low\tci_high\tn\n");
    for r in reports {
        let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{:.6}\t{}", r.time_tag, r.auroc, r.ci_low, r.ci_high, r.n);
    }
    out
}
