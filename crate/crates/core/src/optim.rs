//! Adam with an exponentially decaying learning rate.
//!
//! Shared by the scaling-law fit, the FLOPs baselines and the downstream
//! regressions so all of them are optimized the same way.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub initial_lr: f64,
    /// Multiplicative decay per step: `lr_k = lr_0 * decay^k`.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            initial_lr: 0.05,
            decay: 0.999,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
}

impl Adam {
    pub fn new(dim: usize, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.cfg.initial_lr * self.cfg.decay.powi(self.step as i32)
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// One update of `params` in place from `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        let lr = self.learning_rate();
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
            let mhat = self.m[k] / c1;
            let vhat = self.v[k] / c2;
            params[k] -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
        }
    }
}

/// Outcome of [`minimize`].
#[derive(Debug, Clone)]
pub struct MinimizeResult {
    /// Best iterate seen, including the starting point.
    pub params: Vec<f64>,
    pub loss: f64,
    pub steps: usize,
    /// `(step, best loss so far)` every `trace_every` steps.
    pub trace: Vec<(usize, f64)>,
    /// A non-finite loss or gradient was met; the run stopped there.
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct MinimizeOptions {
    pub max_steps: usize,
    /// Stop once the best loss improved by less than
    /// `tolerance * (1 + best)` over the last `patience` steps.
    pub tolerance: f64,
    pub patience: usize,
    pub trace_every: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            max_steps: 20_000,
            tolerance: 1e-10,
            patience: 1_000,
            trace_every: 100,
        }
    }
}

/// Runs projected Adam on `objective`, which writes the gradient into its
/// second argument and returns the loss. `project` is applied after every
/// step. Returns the best iterate seen.
pub fn minimize(
    mut params: Vec<f64>,
    adam: AdamConfig,
    opts: MinimizeOptions,
    mut objective: impl FnMut(&[f64], &mut [f64]) -> f64,
    mut project: impl FnMut(&mut [f64]),
) -> MinimizeResult {
    let dim = params.len();
    let mut opt = Adam::new(dim, adam);
    let mut grad = vec![0.0; dim];
    project(&mut params);
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut trace = Vec::new();
    let mut last_improvement_ref = f64::INFINITY;
    let mut ref_step = 0usize;
    let mut steps = 0usize;
    let mut diverged = false;
    for step in 0..=opts.max_steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = objective(&params, &mut grad);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            diverged = true;
            break;
        }
        if loss < best_loss {
            best_loss = loss;
            best.copy_from_slice(&params);
        }
        if opts.trace_every > 0 && step % opts.trace_every == 0 {
            trace.push((step, best_loss));
        }
        steps = step;
        if step == opts.max_steps {
            break;
        }
        if step >= ref_step + opts.patience {
            if last_improvement_ref - best_loss <= opts.tolerance * (1.0 + best_loss) {
                break;
            }
            last_improvement_ref = best_loss;
            ref_step = step;
        }
        opt.step(&mut params, &grad);
        project(&mut params);
    }
    if trace.last().map(|&(s, _)| s) != Some(steps) && best_loss.is_finite() {
        trace.push((steps, best_loss));
    }
    MinimizeResult {
        params: best,
        loss: best_loss,
        steps,
        trace,
        diverged,
    }
}
