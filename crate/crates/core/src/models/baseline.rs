//! Logistic baselines over hand-built feature vectors (aEWS, mHOSPITAL, mLiu).

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::Differentiable;
use super::PredictionInput;
use crate::error::{Error, Result};
use crate::fhir::ResourceType;
use crate::math::{bce_from_logit, dot, rng_for, sigmoid, MS_PER_HOUR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Aews,
    MHospital,
    MLiu,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Aews => "aews",
            BaselineKind::MHospital => "mhospital",
            BaselineKind::MLiu => "mliu",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aews" => Ok(BaselineKind::Aews),
            "mhospital" => Ok(BaselineKind::MHospital),
            "mliu" => Ok(BaselineKind::MLiu),
            _ => Err(Error::invalid(format!("unknown baseline {s:?}"))),
        }
    }
}

/// Observation attribute names read by the baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineSpec {
    pub vitals: Vec<String>,
    pub labs: Vec<String>,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect();
        BaselineSpec {
            vitals: s(&["systolic_bp", "heart_rate", "resp_rate", "temperature"]),
            labs: s(&[
                "wbc", "hemoglobin", "platelets", "sodium", "potassium", "chloride", "bicarbonate", "bun",
                "creatinine", "glucose", "calcium", "magnesium", "phosphate", "albumin", "total_bilirubin", "ast",
                "alt", "alkaline_phosphatase", "lactate", "troponin", "inr", "ptt", "bnp", "crp",
            ]),
        }
    }
}

/// Dense features with an index map; `missing[j]` marks an absent
/// measurement, whose value is then 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl BaselineFeatureVector {
    fn push(&mut self, name: impl Into<String>, value: Option<f64>) {
        self.names.push(name.into());
        self.values.push(value.unwrap_or(0.0));
        self.missing.push(value.is_none());
    }

    fn one_hot(&mut self, prefix: &str, categories: &[String], value: &str) {
        for c in categories {
            self.push(format!("{prefix}={c}"), Some((c == value) as u8 as f64));
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<Option<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some((!self.missing[j]).then_some(self.values[j]))
    }
}

/// Category lists fitted on training data; unseen values encode as all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFeaturizer {
    pub kind: BaselineKind,
    pub spec: BaselineSpec,
    pub services: Vec<String>,
    pub admit_sources: Vec<String>,
    pub genders: Vec<String>,
    /// Token ids of `Condition` `hcc` values.
    pub hcc_tokens: Vec<u32>,
}

impl BaselineFeaturizer {
    pub fn fit(kind: BaselineKind, spec: BaselineSpec, training: &[PredictionInput]) -> Self {
        let mut services = BTreeSet::new();
        let mut sources = BTreeSet::new();
        let mut genders = BTreeSet::new();
        let mut hcc = BTreeSet::new();
        for x in training {
            services.insert(x.encounter.hospital_service.clone());
            sources.insert(x.encounter.admit_source.clone());
            genders.insert(x.encounter.gender.clone());
            for o in visible(x) {
                if o.resource_type == ResourceType::Condition && &*o.attribute == "hcc" {
                    hcc.insert(o.token_id);
                }
            }
        }
        BaselineFeaturizer {
            kind,
            spec,
            services: services.into_iter().collect(),
            admit_sources: sources.into_iter().collect(),
            genders: genders.into_iter().collect(),
            hcc_tokens: hcc.into_iter().collect(),
        }
    }
}

fn visible<'a>(x: &'a PredictionInput) -> impl Iterator<Item = &'a crate::timeline::TokenOccurrence> {
    let at = x.at;
    x.prefix.iter().filter(move |o| o.time <= at)
}

/// Value of the occurrence with the greatest time; later entries win ties.
fn most_recent(x: &PredictionInput, attribute: &str) -> Option<f64> {
    let mut best: Option<(i64, f64)> = None;
    for o in visible(x) {
        if o.resource_type != ResourceType::Observation || &*o.attribute != attribute {
            continue;
        }
        if let Some(v) = o.raw_numeric_value {
            if best.is_none_or(|(t, _)| o.time >= t) {
                best = Some((o.time, v));
            }
        }
    }
    best.map(|(_, v)| v)
}

pub fn featurize_baseline(f: &BaselineFeaturizer, x: &PredictionInput) -> BaselineFeatureVector {
    let e = x.encounter;
    let mut fv = BaselineFeatureVector { names: Vec::new(), values: Vec::new(), missing: Vec::new() };
    let labs = |fv: &mut BaselineFeatureVector| {
        for k in &f.spec.labs {
            fv.push(k.clone(), most_recent(x, k));
        }
    };
    match f.kind {
        BaselineKind::Aews => {
            for k in &f.spec.vitals {
                fv.push(k.clone(), most_recent(x, k));
            }
            labs(&mut fv);
        }
        BaselineKind::MHospital => {
            fv.push("sodium", most_recent(x, "sodium"));
            fv.push("hemoglobin", most_recent(x, "hemoglobin"));
            fv.one_hot("service", &f.services, &e.hospital_service);
            let cpt = visible(x).filter(|o| o.resource_type == ResourceType::Procedure && o.time >= e.admit_time).count();
            fv.push("cpt_any", Some((cpt > 0) as u8 as f64));
            fv.push("cpt_count", Some(cpt as f64));
            fv.push("prior_admissions", Some(e.prior_admissions as f64));
            let los_h = (x.at - e.admit_time).max(0) as f64 / MS_PER_HOUR as f64;
            fv.push("los_hours", Some(los_h));
        }
        BaselineKind::MLiu => {
            fv.push("age", Some(e.age_at_admit));
            fv.one_hot("gender", &f.genders, &e.gender);
            let present: BTreeSet<u32> = visible(x)
                .filter(|o| o.resource_type == ResourceType::Condition && &*o.attribute == "hcc")
                .map(|o| o.token_id)
                .collect();
            for t in &f.hcc_tokens {
                fv.push(format!("hcc#{t}"), Some(present.contains(t) as u8 as f64));
            }
            fv.one_hot("admit_source", &f.admit_sources, &e.admit_source);
            fv.one_hot("service", &f.services, &e.hospital_service);
            labs(&mut fv);
        }
    }
    fv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Weights followed by the bias.
    params: Vec<f64>,
    pub l2: f64,
}

impl LogisticModel {
    pub fn new(weights: Vec<f64>, bias: f64, l2: f64) -> Self {
        let mut params = weights;
        params.push(bias);
        LogisticModel { params, l2 }
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.params.len() - 1]
    }

    pub fn bias(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        dot(self.weights(), x) + self.bias()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

/// Per-example cross-entropy; the L2 term is applied by the trainer.
impl Differentiable for LogisticModel {
    type Example = Vec<f64>;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss_grad(&self, x: &Vec<f64>, target: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let z = self.logit(x);
        let y = target[0];
        if let Some(g) = grad {
            let r = sigmoid(z) - y;
            let n = x.len();
            for j in 0..n {
                g[j] += r * x[j];
            }
            g[n] += r;
        }
        bce_from_logit(z, y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub l2: f64,
    /// Step size; `None` picks `1 / L` from the curvature bound.
    pub lr: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
    /// Stop once an epoch improves the objective by less than this.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { l2: 1e-4, lr: None, epochs: 3000, seed: 1, tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub model: LogisticModel,
    /// Regularized objective before each epoch, then after the last.
    pub loss_history: Vec<f64>,
}

fn objective(m: &LogisticModel, xs: &[Vec<f64>], ys: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let n = xs.len() as f64;
    let mut total = 0.0;
    match grad {
        Some(g) => {
            g.iter_mut().for_each(|v| *v = 0.0);
            for (x, y) in xs.iter().zip(ys) {
                total += m.loss_grad(x, &[*y], Some(g));
            }
            g.iter_mut().for_each(|v| *v /= n);
            let d = m.weights().len();
            for j in 0..d {
                g[j] += m.l2 * m.params[j];
            }
        }
        None => {
            for (x, y) in xs.iter().zip(ys) {
                total += m.loss_grad(x, &[*y], None);
            }
        }
    }
    total / n + 0.5 * m.l2 * m.weights().iter().map(|w| w * w).sum::<f64>()
}

/// Largest eigenvalue of `Z^T Z / n` for `Z = [X, 1]`, by power iteration.
fn curvature(xs: &[Vec<f64>], seed: u64) -> f64 {
    let d = xs[0].len() + 1;
    let mut rng = rng_for(seed, 0x10_915);
    let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 0.5).collect();
    let mut lambda = 0.0;
    for _ in 0..100 {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        let mut w = vec![0.0; d];
        for x in xs {
            let zv = dot(x, &v[..d - 1]) + v[d - 1];
            for j in 0..d - 1 {
                w[j] += zv * x[j];
            }
            w[d - 1] += zv;
        }
        w.iter_mut().for_each(|a| *a /= xs.len() as f64);
        lambda = dot(&w, &v);
        v = w;
    }
    lambda
}

/// Full-batch gradient descent on L2-regularized cross-entropy.
pub fn train_logistic_traced(xs: &[Vec<f64>], labels: &[bool], cfg: &LogisticConfig) -> Result<LogisticFit> {
    if xs.len() != labels.len() || xs.is_empty() {
        return Err(Error::invalid("features and labels must be non-empty and of equal length"));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::degenerate("training labels contain a single class"));
    }
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d || x.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("feature rows must be finite and of equal width"));
    }
    let ys: Vec<f64> = labels.iter().map(|&y| y as u8 as f64).collect();
    let lipschitz = 0.25 * curvature(xs, cfg.seed) * 1.05 + cfg.l2;
    let lr = cfg.lr.unwrap_or(1.0 / lipschitz);
    let mut m = LogisticModel::new(vec![0.0; d], 0.0, cfg.l2);
    let mut grad = vec![0.0; d + 1];
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let mut prev = objective(&m, xs, &ys, Some(&mut grad));
    history.push(prev);
    for _ in 0..cfg.epochs {
        for (p, g) in m.params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        let cur = objective(&m, xs, &ys, Some(&mut grad));
        history.push(cur);
        if (prev - cur).abs() < cfg.tol {
            break;
        }
        prev = cur;
    }
    if m.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("logistic training diverged"));
    }
    Ok(LogisticFit { model: m, loss_history: history })
}

pub fn train_logistic(xs: &[Vec<f64>], labels: &[bool], cfg: &LogisticConfig) -> Result<LogisticModel> {
    Ok(train_logistic_traced(xs, labels, cfg)?.model)
}

/// Featurizer, standardization and logistic head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub featurizer: BaselineFeaturizer,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Features that were missing somewhere in training; each gets a mask input.
    pub mask_columns: Vec<usize>,
    pub logistic: LogisticModel,
}

impl BaselineModel {
    pub fn design_row(&self, fv: &BaselineFeatureVector) -> Vec<f64> {
        let mut row: Vec<f64> = (0..fv.len())
            .map(|j| if fv.missing[j] { 0.0 } else { (fv.values[j] - self.mean[j]) / self.sd[j] })
            .collect();
        row.extend(self.mask_columns.iter().map(|&j| fv.missing[j] as u8 as f64));
        row
    }

    pub fn predict(&self, x: &PredictionInput) -> f64 {
        let fv = featurize_baseline(&self.featurizer, x);
        self.logistic.predict(&self.design_row(&fv))
    }
}

pub fn train_baseline(
    kind: BaselineKind,
    spec: BaselineSpec,
    training: &[PredictionInput],
    labels: &[bool],
    cfg: &LogisticConfig,
) -> Result<BaselineModel> {
    let featurizer = BaselineFeaturizer::fit(kind, spec, training);
    let fvs: Vec<BaselineFeatureVector> = training.iter().map(|x| featurize_baseline(&featurizer, x)).collect();
    let width = fvs.first().map_or(0, |f| f.len());
    let mut mean = vec![0.0; width];
    let mut sd = vec![1.0; width];
    let mut mask_columns = Vec::new();
    for j in 0..width {
        let present: Vec<f64> = fvs.iter().filter(|f| !f.missing[j]).map(|f| f.values[j]).collect();
        if present.len() < fvs.len() {
            mask_columns.push(j);
        }
        if present.is_empty() {
            continue;
        }
        let m = present.iter().sum::<f64>() / present.len() as f64;
        let var = present.iter().map(|v| (v - m).powi(2)).sum::<f64>() / present.len() as f64;
        mean[j] = m;
        sd[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
    }
    let mut model = BaselineModel { featurizer, mean, sd, mask_columns, logistic: LogisticModel::new(Vec::new(), 0.0, cfg.l2) };
    let rows: Vec<Vec<f64>> = fvs.iter().map(|f| model.design_row(f)).collect();
    model.logistic = train_logistic(&rows, labels, cfg)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fixtures::{encounter, occ};
    use crate::models::optim::gradient_check;

    #[test]
    fn most_recent_value_wins() {
        let e = encounter(0);
        let prefix = vec![
            occ(3, MS_PER_HOUR, ResourceType::Observation, "heart_rate", Some(80.0)),
            occ(4, 2 * MS_PER_HOUR, ResourceType::Observation, "heart_rate", Some(95.0)),
            occ(4, 9 * MS_PER_HOUR, ResourceType::Observation, "heart_rate", Some(120.0)),
        ];
        let x = PredictionInput::new(&prefix, 3 * MS_PER_HOUR, &e);
        let f = BaselineFeaturizer::fit(BaselineKind::Aews, BaselineSpec::default(), &[x]);
        let fv = featurize_baseline(&f, &x);
        assert_eq!(fv.len(), 28);
        assert_eq!(fv.get("heart_rate"), Some(Some(95.0)));
        assert_eq!(fv.get("sodium"), Some(None));
    }

    #[test]
    fn mhospital_masks_missing_sodium() {
        let e = encounter(0);
        let prefix = vec![
            occ(3, MS_PER_HOUR, ResourceType::Observation, "hemoglobin", Some(11.0)),
            occ(8, 2 * MS_PER_HOUR, ResourceType::Procedure, "cpt", None),
        ];
        let x = PredictionInput::new(&prefix, 24 * MS_PER_HOUR, &e);
        let f = BaselineFeaturizer::fit(BaselineKind::MHospital, BaselineSpec::default(), &[x]);
        let fv = featurize_baseline(&f, &x);
        assert_eq!(fv.get("sodium"), Some(None));
        assert_eq!(fv.get("hemoglobin"), Some(Some(11.0)));
        assert_eq!(fv.get("service=medicine"), Some(Some(1.0)));
        assert_eq!(fv.get("cpt_any"), Some(Some(1.0)));
        assert_eq!(fv.get("los_hours"), Some(Some(24.0)));
    }

    #[test]
    fn separable_fixture_is_fit_perfectly() {
        let xs = vec![vec![0.0, 0.0], vec![1.0, 0.2], vec![0.2, 1.0], vec![2.0, 2.0], vec![2.5, 1.5], vec![1.6, 2.4]];
        let ys = vec![false, false, false, true, true, true];
        let cfg = LogisticConfig { l2: 0.0, ..LogisticConfig::default() };
        let fit = train_logistic_traced(&xs, &ys, &cfg).unwrap();
        let acc = xs.iter().zip(&ys).filter(|(x, &y)| (fit.model.predict(x) >= 0.5) == y).count();
        assert_eq!(acc, 6);
        assert!(fit.loss_history.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn independent_labels_shrink_weights() {
        // every feature pattern appears once with each label
        let xs = vec![vec![1.0, -1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, 1.0], vec![0.5, 0.5], vec![0.5, 0.5]];
        let ys = vec![true, false, true, false, true, false];
        let m = train_logistic(&xs, &ys, &LogisticConfig { l2: 0.1, ..LogisticConfig::default() }).unwrap();
        assert!(m.weights().iter().all(|w| w.abs() < 1e-6));
    }

    #[test]
    fn refuses_single_class() {
        let xs = vec![vec![1.0], vec![2.0]];
        assert!(matches!(train_logistic(&xs, &[true, true], &LogisticConfig::default()), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn logistic_gradient_exact() {
        let m = LogisticModel::new(vec![0.3, -1.2, 0.05], 0.4, 0.0);
        let err = gradient_check(&m, &vec![0.7, 1.1, -2.0], &[1.0], 1e-4).unwrap();
        assert!(err < 1e-8, "{err}");
    }
}
