//! LSTM over fixed-width time bags of token embeddings.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::optim::{fit, Differentiable, OptimConfig};
use super::{PredictionInput, SeqExample};
use crate::error::{Error, Result};
use crate::math::{bce_from_logit, rng_for, sigmoid};
use crate::timeline::UNK;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub d: usize,
    pub h: usize,
    pub bag_hours: f64,
    /// Occurrences older than this many bags share the oldest bag.
    pub max_bags: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig { d: 32, h: 32, bag_hours: 12.0, max_bags: 64, lr: 0.01, epochs: 10, batch: 32, weight_decay: 1e-4, seed: 1 }
    }
}

/// Token bags, oldest first; the last bag ends at the prediction time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bags(pub Vec<Vec<u32>>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub vocab_size: usize,
    pub d: usize,
    pub h: usize,
    pub n_out: usize,
    pub bag_hours: f64,
    pub max_bags: usize,
    /// `E (V x d) | Wx (4h x d) | Uh (4h x h) | b (4h) | out (n_out x h) | bias (n_out)`,
    /// gate rows ordered input, forget, cell, output.
    params: Vec<f64>,
}

struct Layout {
    e: usize,
    wx: usize,
    uh: usize,
    b: usize,
    out: usize,
    bias: usize,
    end: usize,
}

struct Step {
    x: Vec<f64>,
    /// Gate activations `i | f | g | o`.
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

impl LstmModel {
    pub fn zeros(vocab_size: usize, d: usize, h: usize, n_out: usize) -> Self {
        let mut m = LstmModel {
            vocab_size: vocab_size.max(1),
            d,
            h,
            n_out,
            bag_hours: 12.0,
            max_bags: 64,
            params: Vec::new(),
        };
        m.params = vec![0.0; m.layout().end];
        m
    }

    pub fn init<R: Rng>(vocab_size: usize, d: usize, h: usize, prior: &[f64], rng: &mut R) -> Self {
        let mut m = LstmModel::zeros(vocab_size, d, h, prior.len());
        let l = m.layout();
        let emb = Normal::new(0.0, 0.1).expect("valid sd");
        let wx = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid sd");
        let uh = Normal::new(0.0, 1.0 / (h as f64).sqrt()).expect("valid sd");
        for i in l.e..l.wx {
            m.params[i] = emb.sample(rng);
        }
        for i in l.wx..l.uh {
            m.params[i] = wx.sample(rng);
        }
        for i in l.uh..l.b {
            m.params[i] = uh.sample(rng);
        }
        for r in h..2 * h {
            m.params[l.b + r] = 1.0;
        }
        for i in l.out..l.bias {
            m.params[i] = emb.sample(rng);
        }
        for (k, p) in prior.iter().enumerate() {
            let p = p.clamp(1e-3, 1.0 - 1e-3);
            m.params[l.bias + k] = (p / (1.0 - p)).ln();
        }
        m
    }

    fn layout(&self) -> Layout {
        let (d, h) = (self.d, self.h);
        let e = 0;
        let wx = e + self.vocab_size * d;
        let uh = wx + 4 * h * d;
        let b = uh + 4 * h * h;
        let out = b + 4 * h;
        let bias = out + self.n_out * h;
        Layout { e, wx, uh, b, out, bias, end: bias + self.n_out }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn bags(&self, ex: &SeqExample) -> Bags {
        bag_tokens(ex, self.bag_hours, self.max_bags)
    }

    fn row(&self, token: u32) -> usize {
        if (token as usize) < self.vocab_size {
            token as usize
        } else {
            UNK as usize
        }
    }

    fn forward(&self, bags: &Bags) -> (Vec<Step>, Vec<f64>) {
        let l = self.layout();
        let (d, h) = (self.d, self.h);
        let p = &self.params;
        let mut steps: Vec<Step> = Vec::with_capacity(bags.0.len());
        for bag in &bags.0 {
            let mut x = vec![0.0; d];
            if !bag.is_empty() {
                for &t in bag {
                    let r = l.e + self.row(t) * d;
                    for c in 0..d {
                        x[c] += p[r + c];
                    }
                }
                let inv = 1.0 / bag.len() as f64;
                x.iter_mut().for_each(|v| *v *= inv);
            }
            let zero = vec![0.0; h];
            let (h_prev, c_prev) = steps.last().map_or((&zero, &zero), |s| (&s.h, &s.c));
            let mut gates = vec![0.0; 4 * h];
            for r in 0..4 * h {
                let mut z = p[l.b + r];
                let wr = &p[l.wx + r * d..l.wx + (r + 1) * d];
                for c in 0..d {
                    z += wr[c] * x[c];
                }
                let ur = &p[l.uh + r * h..l.uh + (r + 1) * h];
                for c in 0..h {
                    z += ur[c] * h_prev[c];
                }
                gates[r] = if (2 * h..3 * h).contains(&r) { z.tanh() } else { sigmoid(z) };
            }
            let mut c = vec![0.0; h];
            let mut hh = vec![0.0; h];
            for k in 0..h {
                c[k] = gates[h + k] * c_prev[k] + gates[k] * gates[2 * h + k];
                hh[k] = gates[3 * h + k] * c[k].tanh();
            }
            steps.push(Step { x, gates, c, h: hh });
        }
        let zero = vec![0.0; h];
        let last = steps.last().map_or(&zero, |s| &s.h);
        let logits = (0..self.n_out)
            .map(|k| (0..h).map(|c| p[l.out + k * h + c] * last[c]).sum::<f64>() + p[l.bias + k])
            .collect();
        (steps, logits)
    }

    pub fn predict_bags(&self, bags: &Bags) -> Vec<f64> {
        self.forward(bags).1.into_iter().map(sigmoid).collect()
    }

    pub fn predict(&self, input: &PredictionInput) -> Vec<f64> {
        let ex = SeqExample::from_prefix(input.prefix, input.at, None);
        self.predict_bags(&self.bags(&ex))
    }

    /// Gate activations of every step, for inspection.
    pub fn gate_trace(&self, bags: &Bags) -> Vec<Vec<f64>> {
        self.forward(bags).0.into_iter().map(|s| s.gates).collect()
    }
}

/// Bag `k` (counting back from the prediction time) holds occurrences with
/// `k * bag_hours <= delta < (k + 1) * bag_hours`. The sequence starts at the
/// oldest non-empty bag; empty bags in between are kept.
pub fn bag_tokens(ex: &SeqExample, bag_hours: f64, max_bags: usize) -> Bags {
    let max_bags = max_bags.max(1);
    let idx: Vec<usize> = ex.delta_h.iter().map(|&d| ((d.max(0.0) / bag_hours).floor() as usize).min(max_bags - 1)).collect();
    let Some(&oldest) = idx.iter().max() else { return Bags::default() };
    let mut bags = vec![Vec::new(); oldest + 1];
    for (j, &k) in idx.iter().enumerate() {
        bags[oldest - k].push(ex.tokens[j]);
    }
    Bags(bags)
}

impl Differentiable for LstmModel {
    type Example = Bags;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn loss_grad(&self, bags: &Bags, target: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let (steps, logits) = self.forward(bags);
        let loss = logits.iter().zip(target).map(|(&z, &y)| bce_from_logit(z, y)).sum();
        let Some(g) = grad else { return loss };
        let l = self.layout();
        let (d, h) = (self.d, self.h);
        let p = &self.params;
        let zero = vec![0.0; h];
        let last = steps.last().map_or(&zero, |s| &s.h);
        let mut dh = vec![0.0; h];
        for k in 0..self.n_out {
            let gk = sigmoid(logits[k]) - target[k];
            g[l.bias + k] += gk;
            for c in 0..h {
                g[l.out + k * h + c] += gk * last[c];
                dh[c] += gk * p[l.out + k * h + c];
            }
        }
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            let (h_prev, c_prev) = if t > 0 { (&steps[t - 1].h, &steps[t - 1].c) } else { (&zero, &zero) };
            for k in 0..h {
                let (i, f, gg, o) = (s.gates[k], s.gates[h + k], s.gates[2 * h + k], s.gates[3 * h + k]);
                let tc = s.c[k].tanh();
                let d_o = dh[k] * tc;
                dc[k] += dh[k] * o * (1.0 - tc * tc);
                dz[k] = dc[k] * gg * i * (1.0 - i);
                dz[h + k] = dc[k] * c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dc[k] * i * (1.0 - gg * gg);
                dz[3 * h + k] = d_o * o * (1.0 - o);
                dc[k] *= f;
            }
            let mut dx = vec![0.0; d];
            dh.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..4 * h {
                let z = dz[r];
                if z == 0.0 {
                    continue;
                }
                g[l.b + r] += z;
                for c in 0..d {
                    g[l.wx + r * d + c] += z * s.x[c];
                    dx[c] += z * p[l.wx + r * d + c];
                }
                for c in 0..h {
                    g[l.uh + r * h + c] += z * h_prev[c];
                    dh[c] += z * p[l.uh + r * h + c];
                }
            }
            let bag = &bags.0[t];
            if !bag.is_empty() {
                let inv = 1.0 / bag.len() as f64;
                for &tok in bag {
                    let r = l.e + self.row(tok) * d;
                    for c in 0..d {
                        g[r + c] += dx[c] * inv;
                    }
                }
            }
        }
        loss
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmFit {
    pub model: LstmModel,
    pub loss_history: Vec<f64>,
}

pub fn train_lstm(examples: &[SeqExample], labels: &[bool], vocab_size: usize, cfg: &LstmConfig) -> Result<LstmFit> {
    if examples.len() != labels.len() || examples.is_empty() {
        return Err(Error::invalid("examples and labels must be non-empty and of equal length"));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::degenerate("training labels contain a single class"));
    }
    if cfg.d == 0 || cfg.h == 0 || !(cfg.bag_hours > 0.0) {
        return Err(Error::invalid("d, h and bag_hours must be positive"));
    }
    let prior = pos as f64 / labels.len() as f64;
    let mut model = LstmModel::init(vocab_size, cfg.d, cfg.h, &[prior], &mut rng_for(cfg.seed, 0x15_7a));
    model.bag_hours = cfg.bag_hours;
    model.max_bags = cfg.max_bags.max(1);
    let bags: Vec<Bags> = examples.iter().map(|ex| model.bags(ex)).collect();
    let targets: Vec<Vec<f64>> = labels.iter().map(|&y| vec![y as u8 as f64]).collect();
    let optim = OptimConfig { lr: cfg.lr, epochs: cfg.epochs, batch: cfg.batch, weight_decay: cfg.weight_decay, seed: cfg.seed };
    let loss_history = fit(&mut model, &bags, &targets, &optim)?;
    Ok(LstmFit { model, loss_history })
}
