//! Adam over flat parameter vectors and finite-difference gradient checks.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::rng_for;

/// A model whose parameters live in one flat vector and whose per-example
/// loss has a hand-written gradient.
pub trait Differentiable: Sync {
    type Example: Sync;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Loss on one example; adds its gradient into `grad` when given.
    fn loss_grad(&self, ex: &Self::Example, target: &[f64], grad: Option<&mut [f64]>) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: 0.01, epochs: 10, batch: 32, weight_decay: 1e-4, seed: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    /// One update with decoupled weight decay.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let step = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            params[i] -= self.lr * (step + self.weight_decay * params[i]);
        }
    }
}

/// Examples per gradient work unit. Units are fixed by position, and their
/// partial gradients are summed in order, so results do not depend on the
/// number of worker threads.
const UNIT: usize = 8;

/// Mean loss and gradient over `idx`.
pub fn batch_loss_grad<M: Differentiable>(model: &M, examples: &[M::Example], targets: &[Vec<f64>], idx: &[usize]) -> (f64, Vec<f64>) {
    let n_params = model.params().len();
    let parts: Vec<(f64, Vec<f64>)> = idx
        .par_chunks(UNIT)
        .map(|unit| {
            let mut g = vec![0.0; n_params];
            let mut loss = 0.0;
            for &i in unit {
                loss += model.loss_grad(&examples[i], &targets[i], Some(&mut g));
            }
            (loss, g)
        })
        .collect();
    let mut grad = vec![0.0; n_params];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 1.0 / idx.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (loss * scale, grad)
}

/// Mini-batch Adam. Returns the mean training loss seen in each epoch.
pub fn fit<M: Differentiable>(model: &mut M, examples: &[M::Example], targets: &[Vec<f64>], cfg: &OptimConfig) -> Result<Vec<f64>> {
    if examples.len() != targets.len() {
        return Err(Error::invalid("examples and targets differ in length"));
    }
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::invalid("batch and learning rate must be positive"));
    }
    let mut adam = Adam::new(model.params().len(), cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_for(cfg.seed, 0x0e90_c000 + epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch) {
            let (loss, grad) = batch_loss_grad(model, examples, targets, batch);
            total += loss * batch.len() as f64;
            adam.step(model.params_mut(), &grad);
        }
        let mean = total / examples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::invalid(format!("training diverged in epoch {epoch}")));
        }
        history.push(mean);
    }
    Ok(history)
}

/// Largest relative error between the analytic gradient and a numerical one
/// over every parameter. The numerical derivative uses the fourth-order
/// central stencil with step `eps`; relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check<M: Differentiable + Clone>(model: &M, ex: &M::Example, target: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let n = model.params().len();
    let mut analytic = vec![0.0; n];
    model.loss_grad(ex, target, Some(&mut analytic));
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let x = model.params()[i];
        let mut at = |dx: f64| {
            probe.params_mut()[i] = x + dx;
            probe.loss_grad(ex, target, None)
        };
        let numeric = (-at(2.0 * eps) + 8.0 * at(eps) - 8.0 * at(-eps) + at(-2.0 * eps)) / (12.0 * eps);
        probe.params_mut()[i] = x;
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(w) = 0.5 * |w - target|^2
    #[derive(Clone)]
    struct Quadratic(Vec<f64>);

    impl Differentiable for Quadratic {
        type Example = ();
        fn params(&self) -> &[f64] {
            &self.0
        }
        fn params_mut(&mut self) -> &mut [f64] {
            &mut self.0
        }
        fn loss_grad(&self, _: &(), target: &[f64], grad: Option<&mut [f64]>) -> f64 {
            if let Some(g) = grad {
                for i in 0..self.0.len() {
                    g[i] += self.0[i] - target[i];
                }
            }
            self.0.iter().zip(target).map(|(w, t)| 0.5 * (w - t).powi(2)).sum()
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut q = Quadratic(vec![0.0, 0.0]);
        let cfg = OptimConfig { lr: 0.05, epochs: 400, batch: 1, weight_decay: 0.0, seed: 1 };
        let hist = fit(&mut q, &[()], &[vec![1.0, -2.0]], &cfg).unwrap();
        assert!(hist.last().unwrap() < &1e-4);
        assert!((q.0[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        let q = Quadratic(vec![0.3, -0.7]);
        assert!(gradient_check(&q, &(), &[1.0, 1.0], 1e-3).unwrap() < 1e-9);
        assert!(gradient_check(&q, &(), &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn batch_gradient_is_order_stable() {
        let q = Quadratic(vec![0.1, 0.2]);
        let exs = vec![(); 20];
        let targets: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1, -(i as f64)]).collect();
        let idx: Vec<usize> = (0..20).collect();
        let a = batch_loss_grad(&q, &exs, &targets, &idx);
        let b = batch_loss_grad(&q, &exs, &targets, &idx);
        assert_eq!(a, b);
    }
}
