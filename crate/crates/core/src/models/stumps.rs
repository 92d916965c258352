//! Additive boosting of time-windowed decision stumps under logistic loss.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PredictionInput, SeqExample};
use crate::error::{Error, Result};
use crate::math::{bce_from_logit, quantile_sorted, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StumpConfig {
    pub rounds: usize,
    /// Window upper bounds in hours; window `b` covers `delta <= bounds[b]`.
    /// An unbounded window is always appended.
    pub window_hours: Vec<f64>,
    /// Include the unbounded window.
    pub unbounded_window: bool,
    pub shrinkage: f64,
    /// Ridge penalty on each step weight during the line search.
    pub l2: f64,
    /// Stop once the best round lowers the mean training loss by less than this.
    pub min_gain: f64,
    /// Run the exact line search only on this many candidates with the best
    /// second-order gain estimate. `None` searches every candidate.
    pub refine: Option<usize>,
    pub seed: u64,
}

impl Default for StumpConfig {
    fn default() -> Self {
        StumpConfig {
            rounds: 150,
            window_hours: vec![6.0, 24.0, 168.0, 720.0],
            unbounded_window: true,
            shrinkage: 0.5,
            l2: 1.0,
            min_gain: 1e-6,
            refine: Some(64),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predicate {
    /// Token present with `delta <= window bound`.
    Token { token: u32, window: usize },
    /// Most recent value of `key` within the window is `>= threshold`.
    Numeric { key: String, window: usize, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub predicate: Predicate,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpEnsemble {
    pub intercept: f64,
    pub stumps: Vec<Stump>,
    /// Window bounds in hours; `f64::INFINITY` is stored as `None`.
    pub windows: Vec<Option<f64>>,
    /// Mean training loss after the intercept and after each round.
    pub loss_history: Vec<f64>,
}

fn within(delta: f64, bound: Option<f64>) -> bool {
    bound.is_none_or(|b| delta <= b)
}

/// Per-example summary: earliest distance for each token and the most recent
/// observation for each numeric key.
struct Summary {
    token_delta: BTreeMap<u32, f64>,
    numeric: BTreeMap<Arc<str>, (f64, f64)>,
}

fn summarize(ex: &SeqExample) -> Summary {
    let mut token_delta = BTreeMap::new();
    for (&t, &d) in ex.tokens.iter().zip(&ex.delta_h) {
        let e = token_delta.entry(t).or_insert(d);
        if d < *e {
            *e = d;
        }
    }
    let mut numeric: BTreeMap<Arc<str>, (f64, f64)> = BTreeMap::new();
    for o in &ex.numeric {
        // later entries win ties, matching timeline order
        match numeric.get(&o.key) {
            Some(&(d, _)) if d < o.delta_h => {}
            _ => {
                numeric.insert(o.key.clone(), (o.delta_h, o.value));
            }
        }
    }
    Summary { token_delta, numeric }
}

impl StumpEnsemble {
    fn fires(&self, p: &Predicate, s: &Summary) -> bool {
        match p {
            Predicate::Token { token, window } => s.token_delta.get(token).is_some_and(|&d| within(d, self.windows[*window])),
            Predicate::Numeric { key, window, threshold } => s
                .numeric
                .get(key.as_str())
                .is_some_and(|&(d, v)| within(d, self.windows[*window]) && v >= *threshold),
        }
    }

    pub fn logit_example(&self, ex: &SeqExample) -> f64 {
        let s = summarize(ex);
        self.intercept + self.stumps.iter().filter(|st| self.fires(&st.predicate, &s)).map(|st| st.alpha).sum::<f64>()
    }

    pub fn predict_example(&self, ex: &SeqExample) -> f64 {
        sigmoid(self.logit_example(ex))
    }

    pub fn predict(&self, input: &PredictionInput) -> f64 {
        self.predict_example(&SeqExample::from_prefix(input.prefix, input.at, None))
    }
}

/// Candidate predicates with the examples each one fires on.
pub struct Candidates {
    pub predicates: Vec<Predicate>,
    pub active: Vec<Vec<u32>>,
}

/// Enumerates every predicate that fires on at least one training example,
/// ordered token predicates first (by token, window), then numeric (by key,
/// window, threshold). Numeric thresholds are training deciles of each key.
pub fn enumerate_candidates(examples: &[SeqExample], windows: &[Option<f64>]) -> Candidates {
    let summaries: Vec<Summary> = examples.iter().map(summarize).collect();
    let mut values: BTreeMap<Arc<str>, Vec<f64>> = BTreeMap::new();
    for ex in examples {
        for o in &ex.numeric {
            values.entry(o.key.clone()).or_default().push(o.value);
        }
    }
    let mut thresholds: BTreeMap<Arc<str>, Vec<f64>> = BTreeMap::new();
    for (k, mut v) in values {
        v.sort_by(f64::total_cmp);
        let mut cuts: Vec<f64> = (1..10).map(|i| quantile_sorted(&v, i as f64 / 10.0)).collect();
        cuts.dedup();
        thresholds.insert(k, cuts);
    }

    let mut token_active: BTreeMap<(u32, usize), Vec<u32>> = BTreeMap::new();
    let mut numeric_active: BTreeMap<(Arc<str>, usize, usize), Vec<u32>> = BTreeMap::new();
    for (i, s) in summaries.iter().enumerate() {
        for (&t, &d) in &s.token_delta {
            for (w, &b) in windows.iter().enumerate() {
                if within(d, b) {
                    token_active.entry((t, w)).or_default().push(i as u32);
                }
            }
        }
        for (k, &(d, v)) in &s.numeric {
            for (w, &b) in windows.iter().enumerate() {
                if !within(d, b) {
                    continue;
                }
                for (q, &th) in thresholds[k].iter().enumerate() {
                    if v >= th {
                        numeric_active.entry((k.clone(), w, q)).or_default().push(i as u32);
                    }
                }
            }
        }
    }
    let mut predicates = Vec::new();
    let mut active = Vec::new();
    for ((token, window), a) in token_active {
        predicates.push(Predicate::Token { token, window });
        active.push(a);
    }
    for ((key, window, q), a) in numeric_active {
        let threshold = thresholds[&key][q];
        predicates.push(Predicate::Numeric { key: key.to_string(), window, threshold });
        active.push(a);
    }
    Candidates { predicates, active }
}

/// Minimizes `sum_{i in S} bce(F_i + a, y_i) + l2/2 a^2` over `a` by
/// safeguarded Newton steps. Returns `(a, loss reduction)`.
pub fn line_search(active: &[u32], margins: &[f64], ys: &[f64], l2: f64) -> (f64, f64) {
    let loss = |a: f64| -> f64 {
        active.iter().map(|&i| bce_from_logit(margins[i as usize] + a, ys[i as usize])).sum::<f64>() + 0.5 * l2 * a * a
    };
    let base = loss(0.0);
    let mut a = 0.0;
    let mut cur = base;
    for _ in 0..50 {
        let (mut g, mut h) = (l2 * a, l2);
        for &i in active {
            let p = sigmoid(margins[i as usize] + a);
            g += p - ys[i as usize];
            h += p * (1.0 - p);
        }
        if h <= 0.0 || g.abs() < 1e-12 {
            break;
        }
        let mut step = g / h;
        let mut next = loss(a - step);
        let mut halvings = 0;
        while next > cur && halvings < 30 {
            step *= 0.5;
            next = loss(a - step);
            halvings += 1;
        }
        if next > cur {
            break;
        }
        a -= step;
        let done = cur - next < 1e-13 * cur.abs().max(1.0);
        cur = next;
        if done {
            break;
        }
    }
    (a, base - cur)
}

fn mean_loss(margins: &[f64], ys: &[f64]) -> f64 {
    margins.iter().zip(ys).map(|(&f, &y)| bce_from_logit(f, y)).sum::<f64>() / ys.len() as f64
}

pub fn train_stumps(examples: &[SeqExample], labels: &[bool], cfg: &StumpConfig) -> Result<StumpEnsemble> {
    if cfg.rounds < 1 {
        return Err(Error::invalid("rounds must be at least 1"));
    }
    if examples.len() != labels.len() || examples.is_empty() {
        return Err(Error::invalid("examples and labels must be non-empty and of equal length"));
    }
    if !(cfg.shrinkage > 0.0 && cfg.shrinkage <= 1.0) {
        return Err(Error::invalid("shrinkage must lie in (0, 1]"));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::degenerate("training labels contain a single class"));
    }
    let mut windows: Vec<Option<f64>> = cfg.window_hours.iter().map(|&h| Some(h)).collect();
    if cfg.unbounded_window {
        windows.push(None);
    }
    if windows.is_empty() {
        return Err(Error::invalid("at least one time window is required"));
    }
    let ys: Vec<f64> = labels.iter().map(|&y| y as u8 as f64).collect();
    let n = ys.len() as f64;
    let prior = pos as f64 / n;
    let intercept = (prior / (1.0 - prior)).ln();
    let cand = enumerate_candidates(examples, &windows);
    let mut margins = vec![intercept; ys.len()];
    let mut model = StumpEnsemble { intercept, stumps: Vec::new(), windows, loss_history: vec![mean_loss(&margins, &ys)] };

    for _ in 0..cfg.rounds {
        let shortlist: Vec<usize> = match cfg.refine {
            Some(k) if k < cand.predicates.len() => {
                let p: Vec<f64> = margins.iter().map(|&f| sigmoid(f)).collect();
                let mut scored: Vec<(f64, usize)> = cand
                    .active
                    .par_iter()
                    .enumerate()
                    .map(|(c, act)| {
                        let (mut g, mut h) = (0.0, cfg.l2);
                        for &i in act {
                            let i = i as usize;
                            g += p[i] - ys[i];
                            h += p[i] * (1.0 - p[i]);
                        }
                        (g * g / h, c)
                    })
                    .collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                let mut top: Vec<usize> = scored[..k].iter().map(|&(_, c)| c).collect();
                top.sort_unstable();
                top
            }
            _ => (0..cand.predicates.len()).collect(),
        };
        let searched: Vec<(f64, f64)> =
            shortlist.par_iter().map(|&c| line_search(&cand.active[c], &margins, &ys, cfg.l2)).collect();
        let mut best: Option<(usize, f64, f64)> = None;
        for (&c, &(alpha, gain)) in shortlist.iter().zip(&searched) {
            if best.is_none_or(|(_, _, g)| gain > g) {
                best = Some((c, alpha, gain));
            }
        }
        let Some((c, alpha, gain)) = best else { break };
        if gain / n < cfg.min_gain {
            break;
        }
        let alpha = cfg.shrinkage * alpha;
        for &i in &cand.active[c] {
            margins[i as usize] += alpha;
        }
        model.stumps.push(Stump { predicate: cand.predicates[c].clone(), alpha });
        model.loss_history.push(mean_loss(&margins, &ys));
    }
    Ok(model)
}
