//! Time-aware attention network: token embeddings pooled by attention whose
//! logits depend on both the token and its distance from the prediction time.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::optim::{fit, Differentiable, OptimConfig};
use super::{PredictionInput, SeqExample};
use crate::error::{Error, Result};
use crate::fhir::ResourceType;
use crate::math::{bce_from_logit, rng_for, sigmoid};
use crate::timeline::UNK;

pub const TIME_FEATURES: usize = 6;

/// `[log(1 + delta/1h), one-hot of delta in <=6h, <=24h, <=7d, <=30d, >30d]`.
pub fn time_features(delta_h: f64) -> [f64; TIME_FEATURES] {
    let d = delta_h.max(0.0);
    let mut f = [0.0; TIME_FEATURES];
    f[0] = d.ln_1p();
    let bucket = if d <= 6.0 {
        0
    } else if d <= 24.0 {
        1
    } else if d <= 168.0 {
        2
    } else if d <= 720.0 {
        3
    } else {
        4
    };
    f[1 + bucket] = 1.0;
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TannConfig {
    pub d: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Restrict the model to one resource type.
    pub modality: Option<ResourceType>,
}

impl Default for TannConfig {
    fn default() -> Self {
        TannConfig { d: 32, lr: 0.01, epochs: 12, batch: 32, weight_decay: 1e-4, seed: 1, modality: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TannModel {
    pub vocab_size: usize,
    pub d: usize,
    pub n_out: usize,
    pub modality: Option<ResourceType>,
    /// `E (V x d) | W (d x d) | V (d x 6) | u (d) | out (n_out x d) | b (n_out)`, row-major.
    params: Vec<f64>,
}

struct Layout {
    e: usize,
    w: usize,
    v: usize,
    u: usize,
    out: usize,
    b: usize,
    end: usize,
}

struct Forward {
    rows: Vec<usize>,
    phi: Vec<[f64; TIME_FEATURES]>,
    /// tanh activations, one row of `d` per occurrence.
    h: Vec<f64>,
    alpha: Vec<f64>,
    context: Vec<f64>,
    logits: Vec<f64>,
}

impl TannModel {
    pub fn zeros(vocab_size: usize, d: usize, n_out: usize) -> Self {
        let mut m = TannModel { vocab_size: vocab_size.max(1), d, n_out, modality: None, params: Vec::new() };
        m.params = vec![0.0; m.layout().end];
        m
    }

    /// Small Gaussian initialization; output biases start at the logit of `prior`.
    pub fn init<R: Rng>(vocab_size: usize, d: usize, prior: &[f64], rng: &mut R) -> Self {
        let mut m = TannModel::zeros(vocab_size, d, prior.len());
        let l = m.layout();
        let small = Normal::new(0.0, 0.1).expect("valid sd");
        let wide = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid sd");
        for i in l.e..l.b {
            m.params[i] = if (l.w..l.v).contains(&i) { wide.sample(rng) } else { small.sample(rng) };
        }
        for (k, p) in prior.iter().enumerate() {
            let p = p.clamp(1e-3, 1.0 - 1e-3);
            m.params[l.b + k] = (p / (1.0 - p)).ln();
        }
        m
    }

    fn layout(&self) -> Layout {
        let d = self.d;
        let e = 0;
        let w = e + self.vocab_size * d;
        let v = w + d * d;
        let u = v + d * TIME_FEATURES;
        let out = u + d;
        let b = out + self.n_out * d;
        Layout { e, w, v, u, out, b, end: b + self.n_out }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn row(&self, token: u32) -> usize {
        if (token as usize) < self.vocab_size {
            token as usize
        } else {
            UNK as usize
        }
    }

    fn forward(&self, ex: &SeqExample) -> Forward {
        let l = self.layout();
        let d = self.d;
        let p = &self.params;
        let n = ex.len();
        let rows: Vec<usize> = ex.tokens.iter().map(|&t| self.row(t)).collect();
        let phi: Vec<[f64; TIME_FEATURES]> = ex.delta_h.iter().map(|&x| time_features(x)).collect();
        let mut h = vec![0.0; n * d];
        let mut a = vec![0.0; n];
        for j in 0..n {
            let emb = &p[l.e + rows[j] * d..l.e + (rows[j] + 1) * d];
            for r in 0..d {
                let mut s = 0.0;
                let wr = &p[l.w + r * d..l.w + (r + 1) * d];
                for c in 0..d {
                    s += wr[c] * emb[c];
                }
                let vr = &p[l.v + r * TIME_FEATURES..l.v + (r + 1) * TIME_FEATURES];
                for c in 0..TIME_FEATURES {
                    s += vr[c] * phi[j][c];
                }
                let t = s.tanh();
                h[j * d + r] = t;
                a[j] += p[l.u + r] * t;
            }
        }
        let alpha = softmax(&a);
        let mut context = vec![0.0; d];
        for j in 0..n {
            let emb = &p[l.e + rows[j] * d..l.e + (rows[j] + 1) * d];
            for c in 0..d {
                context[c] += alpha[j] * emb[c];
            }
        }
        let logits = (0..self.n_out)
            .map(|k| {
                let o = &p[l.out + k * d..l.out + (k + 1) * d];
                o.iter().zip(&context).map(|(x, y)| x * y).sum::<f64>() + p[l.b + k]
            })
            .collect();
        Forward { rows, phi, h, alpha, context, logits }
    }

    pub fn predict_example(&self, ex: &SeqExample) -> Vec<f64> {
        self.forward(ex).logits.into_iter().map(sigmoid).collect()
    }

    pub fn example(&self, input: &PredictionInput) -> SeqExample {
        SeqExample::from_prefix(input.prefix, input.at, self.modality)
    }

    pub fn predict(&self, input: &PredictionInput) -> Vec<f64> {
        self.predict_example(&self.example(input))
    }

    /// Attention weights aligned with `ex.tokens`.
    pub fn attention_example(&self, ex: &SeqExample) -> Vec<f64> {
        self.forward(ex).alpha
    }

    /// Probabilities plus `(prefix position, attention weight)` pairs in prefix order.
    pub fn attention(&self, input: &PredictionInput) -> (Vec<f64>, Vec<(usize, f64)>) {
        let ex = self.example(input);
        let f = self.forward(&ex);
        let probs = f.logits.iter().map(|&z| sigmoid(z)).collect();
        (probs, ex.source.iter().copied().zip(f.alpha).collect())
    }
}

pub(crate) fn softmax(a: &[f64]) -> Vec<f64> {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = a.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|x| *x /= s);
    e
}

impl Differentiable for TannModel {
    type Example = SeqExample;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss_grad(&self, ex: &SeqExample, target: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let f = self.forward(ex);
        let loss: f64 = f.logits.iter().zip(target).map(|(&z, &y)| bce_from_logit(z, y)).sum();
        let Some(g) = grad else { return loss };
        let l = self.layout();
        let d = self.d;
        let p = &self.params;
        let n = ex.len();

        let mut dctx = vec![0.0; d];
        for k in 0..self.n_out {
            let gk = sigmoid(f.logits[k]) - target[k];
            g[l.b + k] += gk;
            for c in 0..d {
                g[l.out + k * d + c] += gk * f.context[c];
                dctx[c] += gk * p[l.out + k * d + c];
            }
        }
        if n == 0 {
            return loss;
        }
        // context = sum_j alpha_j e_j
        let emb = |j: usize| &p[l.e + f.rows[j] * d..l.e + (f.rows[j] + 1) * d];
        let dalpha: Vec<f64> = (0..n).map(|j| emb(j).iter().zip(&dctx).map(|(x, y)| x * y).sum()).collect();
        let mean_dalpha: f64 = f.alpha.iter().zip(&dalpha).map(|(a, b)| a * b).sum();
        for j in 0..n {
            let row = l.e + f.rows[j] * d;
            for c in 0..d {
                g[row + c] += f.alpha[j] * dctx[c];
            }
            let da = f.alpha[j] * (dalpha[j] - mean_dalpha);
            if da == 0.0 {
                continue;
            }
            let e_j = emb(j);
            for r in 0..d {
                let hr = f.h[j * d + r];
                g[l.u + r] += da * hr;
                let ds = da * p[l.u + r] * (1.0 - hr * hr);
                for c in 0..d {
                    g[l.w + r * d + c] += ds * e_j[c];
                    g[row + c] += ds * p[l.w + r * d + c];
                }
                for c in 0..TIME_FEATURES {
                    g[l.v + r * TIME_FEATURES + c] += ds * f.phi[j][c];
                }
            }
        }
        loss
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TannFit {
    pub model: TannModel,
    pub loss_history: Vec<f64>,
}

fn check_targets(examples: &[SeqExample], targets: &[Vec<f64>], n_out: usize) -> Result<()> {
    if examples.len() != targets.len() || examples.is_empty() {
        return Err(Error::invalid("examples and targets must be non-empty and of equal length"));
    }
    if targets.iter().any(|t| t.len() != n_out) {
        return Err(Error::invalid("target width does not match the number of outputs"));
    }
    Ok(())
}

fn prevalence(targets: &[Vec<f64>], n_out: usize) -> Vec<f64> {
    (0..n_out).map(|k| targets.iter().map(|t| t[k]).sum::<f64>() / targets.len() as f64).collect()
}

/// Trains a head with one sigmoid output per target column.
pub fn train_tann_multi(examples: &[SeqExample], targets: &[Vec<f64>], vocab_size: usize, cfg: &TannConfig) -> Result<TannFit> {
    let n_out = targets.first().map_or(0, |t| t.len());
    if n_out == 0 {
        return Err(Error::invalid("no outputs to train"));
    }
    check_targets(examples, targets, n_out)?;
    if cfg.d == 0 {
        return Err(Error::invalid("embedding size must be positive"));
    }
    let mut rng = rng_for(cfg.seed, 0x7a_00);
    let mut model = TannModel::init(vocab_size, cfg.d, &prevalence(targets, n_out), &mut rng);
    model.modality = cfg.modality;
    let filtered: Vec<SeqExample>;
    let examples = match cfg.modality {
        Some(m) => {
            filtered = examples.iter().map(|ex| restrict(ex, m)).collect();
            &filtered[..]
        }
        None => examples,
    };
    let optim = OptimConfig { lr: cfg.lr, epochs: cfg.epochs, batch: cfg.batch, weight_decay: cfg.weight_decay, seed: cfg.seed };
    let loss_history = fit(&mut model, examples, targets, &optim)?;
    Ok(TannFit { model, loss_history })
}

/// Keeps the occurrences of one resource type.
pub fn restrict(ex: &SeqExample, m: ResourceType) -> SeqExample {
    let mut out = SeqExample::default();
    for j in 0..ex.len() {
        if ex.resource_types[j] == m {
            out.tokens.push(ex.tokens[j]);
            out.delta_h.push(ex.delta_h[j]);
            out.resource_types.push(m);
            out.source.push(ex.source[j]);
        }
    }
    out.numeric = if m == ResourceType::Observation { ex.numeric.clone() } else { Vec::new() };
    out
}

/// Binary task: `labels[i]` is the outcome of `examples[i]`.
pub fn train_tann(examples: &[SeqExample], labels: &[bool], vocab_size: usize, cfg: &TannConfig) -> Result<TannFit> {
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::degenerate("training labels contain a single class"));
    }
    let targets: Vec<Vec<f64>> = labels.iter().map(|&y| vec![y as u8 as f64]).collect();
    train_tann_multi(examples, &targets, vocab_size, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosesHead {
    pub model: TannModel,
    /// Output order of `model`.
    pub codes: Vec<String>,
    /// Codes under `min_count` in training, with their counts.
    pub excluded: BTreeMap<String, usize>,
    pub loss_history: Vec<f64>,
}

pub fn train_diagnoses_head(
    examples: &[SeqExample],
    code_sets: &[BTreeSet<String>],
    vocab_size: usize,
    min_count: usize,
    cfg: &TannConfig,
) -> Result<DiagnosesHead> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for set in code_sets {
        for c in set {
            *counts.entry(c.as_str()).or_default() += 1;
        }
    }
    let codes: Vec<String> = counts.iter().filter(|(_, &n)| n >= min_count.max(1)).map(|(c, _)| c.to_string()).collect();
    let excluded = counts.iter().filter(|(_, &n)| n < min_count.max(1)).map(|(c, &n)| (c.to_string(), n)).collect();
    if codes.is_empty() {
        return Err(Error::invalid(format!("no diagnosis code occurs at least {min_count} times")));
    }
    let targets: Vec<Vec<f64>> =
        code_sets.iter().map(|set| codes.iter().map(|c| set.contains(c) as u8 as f64).collect()).collect();
    let fit = train_tann_multi(examples, &targets, vocab_size, cfg)?;
    Ok(DiagnosesHead { model: fit.model, codes, excluded, loss_history: fit.loss_history })
}
