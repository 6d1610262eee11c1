//! Robust fitting.
//!
//! The objective is the Huber loss summed over every observed
//! `(model, benchmark)` cell, minimized with projected Adam from several
//! random starts. Compute features are standardized before optimization;
//! the returned coefficients are mapped back to raw `x(s, t)` form.
//!
//! Gradients are computed by hand through the fixed graph
//! `B -> theta -> eta -> link -> mu -> loss` and checked against central
//! finite differences by [`gradient_check`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AsymptoteConfig, AsymptoteEntry, GammaMode, ScoreTable};
use crate::design::{build_design, DesignMatrix, FeatureAffine, COMPUTE_FEATURES};
use crate::error::{Error, Result};
use crate::model::{
    net_backward, net_forward, predict_scores, project_net, LinkFunction, LinkKind, MonotoneNet,
    NetCache, SlothParams, Variant, DEFAULT_HIDDEN_WIDTH,
};
use crate::optim::{minimize, AdamConfig, MinimizeOptions};
use crate::stats::{logit, sigmoid};

/// Default Huber threshold.
pub const DEFAULT_DELTA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub delta: f64,
    /// Number of latent skills. Ignored by [`Variant::SizeAndTokens`],
    /// which always uses one skill per benchmark.
    pub d: usize,
    pub max_steps: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub restarts: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Overrides the variant's link kind when set.
    pub link: Option<LinkKind>,
    pub hidden_width: usize,
    /// Relative loss-improvement threshold for early stopping.
    pub tolerance: f64,
    pub patience: usize,
    pub standardize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            delta: DEFAULT_DELTA,
            d: 3,
            max_steps: 20_000,
            initial_lr: 0.05,
            lr_decay: 0.999,
            restarts: 5,
            seed: 0,
            variant: Variant::Basic,
            link: None,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            tolerance: 1e-10,
            patience: 1_000,
            standardize: true,
        }
    }
}

impl FitConfig {
    pub fn link_kind(&self) -> LinkKind {
        self.link.unwrap_or_else(|| self.variant.default_link())
    }

    fn check(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden_width must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_loss: f64,
    /// `None` for restarts discarded after divergence.
    pub restart_losses: Vec<Option<f64>>,
    pub restart_steps: Vec<usize>,
    pub chosen_restart: usize,
    pub steps: usize,
    /// Gradient check at the chosen restart's starting point.
    pub gradient_check_max_rel_error: f64,
    pub standardization: FeatureAffine,
    pub variant: Variant,
    pub link: LinkKind,
    pub d: usize,
    pub delta: f64,
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub observed_cells: usize,
    pub design_rank: usize,
    /// `(step, best loss so far)` of the chosen restart.
    pub trace: Vec<(usize, f64)>,
    pub diagnostics: Vec<String>,
}

/// Huber loss: `r^2 / 2` inside `|r| <= delta`, `delta (|r| - delta / 2)`
/// outside.
pub fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber`]; at `|r| = delta` both branches agree.
pub fn huber_derivative(residual: f64, delta: f64) -> f64 {
    if residual.abs() < delta {
        residual
    } else {
        delta * residual.signum()
    }
}

fn check_alignment(params: &SlothParams, design: &DesignMatrix, table: &ScoreTable) -> Result<()> {
    if params.benchmarks != table.benchmarks() {
        return Err(Error::Shape(
            "parameter benchmarks differ from table benchmarks".into(),
        ));
    }
    if design.n() != table.n() {
        return Err(Error::Shape(format!(
            "design has {} rows, table has {} records",
            design.n(),
            table.n()
        )));
    }
    Ok(())
}

/// Huber loss summed over observed cells; missing scores are skipped.
pub fn total_loss(
    params: &SlothParams,
    design: &DesignMatrix,
    table: &ScoreTable,
    delta: f64,
) -> Result<f64> {
    Ok(per_benchmark_loss(params, design, table, delta)?.iter().sum())
}

/// Loss contribution of each benchmark.
pub fn per_benchmark_loss(
    params: &SlothParams,
    design: &DesignMatrix,
    table: &ScoreTable,
    delta: f64,
) -> Result<Vec<f64>> {
    check_alignment(params, design, table)?;
    let mu = predict_scores(params, design)?;
    let mut out = vec![0.0; table.num_benchmarks()];
    for (i, r) in table.records().iter().enumerate() {
        for (j, s) in r.scores.iter().enumerate() {
            if let Some(y) = s {
                out[j] += huber(mu[(i, j)] - y, delta);
            }
        }
    }
    Ok(out)
}

// --- internal objective ---------------------------------------------------

#[derive(Debug, Clone)]
struct Layout {
    loadings: Option<usize>,
    bias: usize,
    coef: usize,
    gamma: Vec<Option<usize>>,
    nets: Vec<Option<usize>>,
    total: usize,
}

/// Flattened, standardized view of a fitting problem.
#[derive(Debug, Clone)]
struct Problem {
    j: usize,
    d: usize,
    width: usize,
    intercept_rows: usize,
    /// Standardized compute features per row.
    z: Vec<[f64; 3]>,
    intercept_of_row: Vec<usize>,
    /// Observed cells `(row, benchmark, score)` in row-major order.
    cells: Vec<(usize, usize, f64)>,
    fixed_gamma: Vec<f64>,
    delta: f64,
    layout: Layout,
}

struct Scratch {
    theta: Vec<f64>,
    dtheta: Vec<f64>,
    cache: NetCache,
}

impl Problem {
    #[allow(clippy::too_many_arguments)]
    fn new(
        design: &DesignMatrix,
        table: &ScoreTable,
        affine: &FeatureAffine,
        d: usize,
        shared_intercept: bool,
        frozen_loadings: bool,
        gammas: &[AsymptoteEntry],
        links: &[LinkKind],
        width: usize,
        delta: f64,
    ) -> Problem {
        let j = table.num_benchmarks();
        let n = design.n();
        let intercept_rows = if shared_intercept {
            1
        } else {
            design.families().len()
        };
        let z = (0..n)
            .map(|i| affine.apply(design.compute_features(i)))
            .collect();
        let intercept_of_row = if shared_intercept {
            vec![0; n]
        } else {
            design.family_of_row().to_vec()
        };
        let mut cells = Vec::new();
        for (i, r) in table.records().iter().enumerate() {
            for (jj, s) in r.scores.iter().enumerate() {
                if let Some(y) = s {
                    cells.push((i, jj, *y));
                }
            }
        }
        let mut off = 0;
        let loadings = if frozen_loadings {
            None
        } else {
            off += j * d;
            Some(0)
        };
        let bias = off;
        off += j;
        let coef = off;
        off += (COMPUTE_FEATURES + intercept_rows) * d;
        let gamma = gammas
            .iter()
            .map(|g| {
                if g.mode == GammaMode::Trainable {
                    off += 1;
                    Some(off - 1)
                } else {
                    None
                }
            })
            .collect();
        let nets = links
            .iter()
            .map(|k| match k {
                LinkKind::Sigmoid => None,
                LinkKind::MonotoneNet => {
                    off += MonotoneNet::num_params(width);
                    Some(off - MonotoneNet::num_params(width))
                }
            })
            .collect();
        Problem {
            j,
            d,
            width,
            intercept_rows,
            z,
            intercept_of_row,
            cells,
            fixed_gamma: gammas.iter().map(|g| g.gamma).collect(),
            delta,
            layout: Layout {
                loadings,
                bias,
                coef,
                gamma,
                nets,
                total: off,
            },
        }
    }

    fn scratch(&self) -> Scratch {
        let n = self.z.len();
        Scratch {
            theta: vec![0.0; n * self.d],
            dtheta: vec![0.0; n * self.d],
            cache: NetCache::default(),
        }
    }

    fn net_len(&self) -> usize {
        MonotoneNet::num_params(self.width)
    }

    /// Loss at `x`; adds the gradient into `grad` when given.
    fn eval(&self, x: &[f64], grad: Option<&mut [f64]>, s: &mut Scratch) -> f64 {
        self.eval_cells(x, grad, s, None)
    }

    /// As [`Problem::eval`], also recording each cell's loss term.
    fn eval_cells(
        &self,
        x: &[f64],
        mut grad: Option<&mut [f64]>,
        s: &mut Scratch,
        mut terms: Option<&mut Vec<f64>>,
    ) -> f64 {
        let d = self.d;
        let l = &self.layout;
        let n = self.z.len();
        for i in 0..n {
            let ir = self.intercept_of_row[i];
            for k in 0..d {
                let mut v = x[l.coef + (COMPUTE_FEATURES + ir) * d + k];
                for c in 0..COMPUTE_FEATURES {
                    v += self.z[i][c] * x[l.coef + c * d + k];
                }
                s.theta[i * d + k] = v;
            }
        }
        if grad.is_some() {
            s.dtheta.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut loss = 0.0;
        for &(i, j, y) in &self.cells {
            let th = &s.theta[i * d..(i + 1) * d];
            let mut eta = x[l.bias + j];
            match l.loadings {
                Some(lo) => {
                    for k in 0..d {
                        eta += x[lo + j * d + k] * th[k];
                    }
                }
                None => eta += th[j],
            }
            let out = match l.nets[j] {
                None => sigmoid(eta),
                Some(off) => {
                    net_forward(&x[off..off + self.net_len()], self.width, eta, &mut s.cache)
                }
            };
            let g = match l.gamma[j] {
                Some(gi) => sigmoid(x[gi]),
                None => self.fixed_gamma[j],
            };
            let mu = g + (1.0 - g) * out;
            let r = mu - y;
            let h = huber(r, self.delta);
            loss += h;
            if let Some(t) = terms.as_deref_mut() {
                t.push(h);
            }
            let Some(grad) = grad.as_deref_mut() else {
                continue;
            };
            let dmu = huber_derivative(r, self.delta);
            if let Some(gi) = l.gamma[j] {
                grad[gi] += dmu * (1.0 - out) * g * (1.0 - g);
            }
            let dout = dmu * (1.0 - g);
            let deta = match l.nets[j] {
                None => dout * out * (1.0 - out),
                Some(off) => {
                    let len = self.net_len();
                    let (params, gslice) = (&x[off..off + len], &mut grad[off..off + len]);
                    net_backward(params, self.width, eta, out, dout, &mut s.cache, Some(gslice))
                }
            };
            grad[l.bias + j] += deta;
            match l.loadings {
                Some(lo) => {
                    for k in 0..d {
                        grad[lo + j * d + k] += deta * th[k];
                        s.dtheta[i * d + k] += deta * x[lo + j * d + k];
                    }
                }
                None => s.dtheta[i * d + j] += deta,
            }
        }
        if let Some(grad) = grad {
            for i in 0..n {
                let ir = self.intercept_of_row[i];
                for k in 0..d {
                    let dt = s.dtheta[i * d + k];
                    if dt == 0.0 {
                        continue;
                    }
                    grad[l.coef + (COMPUTE_FEATURES + ir) * d + k] += dt;
                    for c in 0..COMPUTE_FEATURES {
                        grad[l.coef + c * d + k] += self.z[i][c] * dt;
                    }
                }
            }
        }
        loss
    }

    fn project(&self, x: &mut [f64]) {
        for off in self.layout.nets.iter().flatten() {
            project_net(&mut x[*off..*off + self.net_len()], self.width);
        }
    }

    /// Packs raw-feature parameters into the standardized flat vector.
    fn pack(&self, params: &SlothParams, affine: &FeatureAffine) -> Vec<f64> {
        let l = &self.layout;
        let d = self.d;
        let mut x = vec![0.0; l.total];
        if let Some(lo) = l.loadings {
            for j in 0..self.j {
                for k in 0..d {
                    x[lo + j * d + k] = params.loadings[(j, k)];
                }
            }
        }
        for j in 0..self.j {
            x[l.bias + j] = params.bias[j];
        }
        let b = &params.coefficients;
        for k in 0..d {
            for c in 0..COMPUTE_FEATURES {
                x[l.coef + c * d + k] = b[(c, k)] * affine.scale[c];
            }
            let shift: f64 = (0..COMPUTE_FEATURES)
                .map(|c| affine.mean[c] * b[(c, k)])
                .sum();
            for r in 0..self.intercept_rows {
                x[l.coef + (COMPUTE_FEATURES + r) * d + k] = b[(COMPUTE_FEATURES + r, k)] + shift;
            }
        }
        for (j, gi) in l.gamma.iter().enumerate() {
            if let Some(gi) = gi {
                x[*gi] = logit(params.gammas[j].gamma.clamp(1e-6, 1.0 - 1e-6));
            }
        }
        for (j, off) in l.nets.iter().enumerate() {
            if let (Some(off), LinkFunction::MonotoneNet(net)) = (off, &params.links[j]) {
                x[*off..*off + self.net_len()].copy_from_slice(&net.params);
            }
        }
        x
    }

    /// Inverse of [`Problem::pack`]; `template` supplies names, variant and
    /// fixed asymptotes.
    fn unpack(&self, x: &[f64], affine: &FeatureAffine, template: &SlothParams) -> SlothParams {
        let l = &self.layout;
        let d = self.d;
        let mut out = template.clone();
        out.loadings = match l.loadings {
            Some(lo) => DMatrix::from_fn(self.j, d, |j, k| x[lo + j * d + k]),
            None => DMatrix::identity(self.j, self.j),
        };
        out.bias = DVector::from_fn(self.j, |j, _| x[l.bias + j]);
        let rows = COMPUTE_FEATURES + self.intercept_rows;
        let mut b = DMatrix::zeros(rows, d);
        for k in 0..d {
            for c in 0..COMPUTE_FEATURES {
                b[(c, k)] = x[l.coef + c * d + k] / affine.scale[c];
            }
            let shift: f64 = (0..COMPUTE_FEATURES)
                .map(|c| affine.mean[c] * b[(c, k)])
                .sum();
            for r in 0..self.intercept_rows {
                b[(COMPUTE_FEATURES + r, k)] = x[l.coef + (COMPUTE_FEATURES + r) * d + k] - shift;
            }
        }
        out.coefficients = b;
        for (j, gi) in l.gamma.iter().enumerate() {
            if let Some(gi) = gi {
                out.gammas[j].gamma = sigmoid(x[*gi]);
            }
        }
        for (j, off) in l.nets.iter().enumerate() {
            if let Some(off) = off {
                out.links[j] = LinkFunction::MonotoneNet(MonotoneNet {
                    width: self.width,
                    params: x[*off..*off + self.net_len()].to_vec(),
                });
            }
        }
        out.standardization = *affine;
        out
    }

    fn initial_point<R: Rng>(&self, table: &ScoreTable, gammas: &[AsymptoteEntry], rng: &mut R) -> Vec<f64> {
        let l = &self.layout;
        let d = self.d;
        let mut x = vec![0.0; l.total];
        let scale = 1.0 / (d as f64).sqrt();
        if let Some(lo) = l.loadings {
            for v in &mut x[lo..lo + self.j * d] {
                *v = rng.random_range(-0.5..0.5) * scale;
            }
        }
        for v in &mut x[l.coef..l.coef + (COMPUTE_FEATURES + self.intercept_rows) * d] {
            *v = rng.random_range(-0.5..0.5) * scale;
        }
        for j in 0..self.j {
            let g = gammas[j].gamma;
            let vals: Vec<f64> = table
                .records()
                .iter()
                .filter_map(|r| r.scores[j])
                .map(|y| (y - g) / (1.0 - g))
                .collect();
            let m = if vals.is_empty() {
                0.5
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            x[l.bias + j] = logit(m.clamp(0.01, 0.99));
            if let Some(gi) = l.gamma[j] {
                x[gi] = logit(g.clamp(1e-6, 1.0 - 1e-6));
            }
            if let Some(off) = l.nets[j] {
                let net = MonotoneNet::random(self.width, rng);
                x[off..off + self.net_len()].copy_from_slice(&net.params);
            }
        }
        x
    }
}

/// Result of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
}

fn check_problem_gradient(problem: &Problem, x: &[f64], step: f64) -> GradientCheck {
    let mut s = problem.scratch();
    let mut analytic = vec![0.0; x.len()];
    problem.eval(x, Some(&mut analytic), &mut s);
    let mut probe = x.to_vec();
    let mut out = GradientCheck {
        max_rel_error: 0.0,
        max_abs_analytic: 0.0,
        max_abs_numeric: 0.0,
    };
    // Differencing cell by cell avoids cancelling against the whole loss,
    // which matters for coordinates with gradients near the floor.
    let (mut up, mut down) = (Vec::new(), Vec::new());
    for k in 0..x.len() {
        up.clear();
        down.clear();
        probe[k] = x[k] + step;
        problem.eval_cells(&probe, None, &mut s, Some(&mut up));
        probe[k] = x[k] - step;
        problem.eval_cells(&probe, None, &mut s, Some(&mut down));
        probe[k] = x[k];
        let diff: f64 = up.iter().zip(&down).map(|(u, d)| u - d).sum();
        let numeric = diff / (2.0 * step);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        out.max_rel_error = out.max_rel_error.max(rel);
        out.max_abs_analytic = out.max_abs_analytic.max(a.abs());
        out.max_abs_numeric = out.max_abs_numeric.max(numeric.abs());
    }
    out
}

fn problem_for_params(
    params: &SlothParams,
    design: &DesignMatrix,
    table: &ScoreTable,
    delta: f64,
) -> Result<(Problem, FeatureAffine)> {
    check_alignment(params, design, table)?;
    params.check_shapes()?;
    if !params.variant.shared_intercept() && design.families() != params.families.as_slice() {
        return Err(Error::Shape("design families differ from parameter families".into()));
    }
    let width = params
        .links
        .iter()
        .find_map(|l| match l {
            LinkFunction::MonotoneNet(n) => Some(n.width),
            LinkFunction::Sigmoid => None,
        })
        .unwrap_or(DEFAULT_HIDDEN_WIDTH);
    let kinds: Vec<LinkKind> = params.links.iter().map(LinkFunction::kind).collect();
    let affine = design.standardization();
    let problem = Problem::new(
        design,
        table,
        &affine,
        params.num_skills(),
        params.variant.shared_intercept(),
        params.variant.frozen_loadings(),
        &params.gammas,
        &kinds,
        width,
        delta,
    );
    Ok((problem, affine))
}

/// Compares the analytic gradient of [`total_loss`] with central finite
/// differences (step `1e-5` in the standardized parameterization).
pub fn gradient_check_detailed(
    params: &SlothParams,
    design: &DesignMatrix,
    table: &ScoreTable,
    delta: f64,
) -> Result<GradientCheck> {
    let (problem, affine) = problem_for_params(params, design, table, delta)?;
    let x = problem.pack(params, &affine);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("parameters must be finite".into()));
    }
    Ok(check_problem_gradient(&problem, &x, 1e-5))
}

/// Maximum relative error between analytic and finite-difference
/// gradients, with an absolute floor of `1e-8` in the denominator.
pub fn gradient_check(
    params: &SlothParams,
    design: &DesignMatrix,
    table: &ScoreTable,
    delta: f64,
) -> Result<f64> {
    Ok(gradient_check_detailed(params, design, table, delta)?.max_rel_error)
}

struct RestartOutcome {
    start: Vec<f64>,
    params: Vec<f64>,
    loss: f64,
    steps: usize,
    trace: Vec<(usize, f64)>,
    diverged: bool,
}

/// Fits the model to `table`.
pub fn fit(
    table: &ScoreTable,
    config: &FitConfig,
    asymptotes: &AsymptoteConfig,
) -> Result<(SlothParams, FitReport)> {
    config.check()?;
    let variant = config.variant;
    let j = table.num_benchmarks();
    let d = if variant.frozen_loadings() { j } else { config.d };
    if j == 0 {
        return Err(Error::Validation("table has no benchmarks".into()));
    }
    if j < d {
        return Err(Error::Dimension(format!(
            "{j} benchmarks cannot support d = {d} skills"
        )));
    }
    let gammas = asymptotes.for_benchmarks(table.benchmarks())?;
    let design = build_design(table)?;
    let n = design.n();
    let p = COMPUTE_FEATURES
        + if variant.shared_intercept() {
            1
        } else {
            design.families().len()
        };
    if n < p {
        return Err(Error::Dimension(format!(
            "n = {n} models but p = {p} design columns; identifiable skills need n >= p >= d"
        )));
    }
    if !variant.frozen_loadings() && p < d {
        return Err(Error::Dimension(format!(
            "p = {p} design columns but d = {d} skills; identifiable skills need n >= p >= d"
        )));
    }
    let mut diagnostics: Vec<String> = design.warnings().to_vec();
    let affine = if config.standardize {
        design.standardization()
    } else {
        FeatureAffine::identity()
    };
    let link = config.link_kind();
    let problem = Problem::new(
        &design,
        table,
        &affine,
        d,
        variant.shared_intercept(),
        variant.frozen_loadings(),
        &gammas,
        &vec![link; j],
        config.hidden_width,
        config.delta,
    );
    if problem.cells.is_empty() {
        return Err(Error::Validation("table has no observed scores".into()));
    }

    let adam = AdamConfig {
        initial_lr: config.initial_lr,
        decay: config.lr_decay,
        ..AdamConfig::default()
    };
    let opts = MinimizeOptions {
        max_steps: config.max_steps,
        tolerance: config.tolerance,
        patience: config.patience,
        trace_every: 100,
    };
    let outcomes: Vec<RestartOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r as u64);
            let start = problem.initial_point(table, &gammas, &mut rng);
            let mut scratch = problem.scratch();
            let res = minimize(
                start.clone(),
                adam,
                opts,
                |x, g| problem.eval(x, Some(g), &mut scratch),
                |x| problem.project(x),
            );
            RestartOutcome {
                start,
                params: res.params,
                loss: res.loss,
                steps: res.steps,
                trace: res.trace,
                diverged: res.diverged,
            }
        })
        .collect();

    let mut chosen: Option<usize> = None;
    for (r, o) in outcomes.iter().enumerate() {
        if o.diverged {
            diagnostics.push(format!(
                "restart {r} diverged (non-finite loss) and was discarded"
            ));
            continue;
        }
        if chosen.is_none_or(|c| o.loss < outcomes[c].loss) {
            chosen = Some(r);
        }
    }
    let chosen = chosen.ok_or_else(|| {
        Error::Numerical("every restart diverged; no finite fit available".into())
    })?;
    let best = &outcomes[chosen];

    let template = SlothParams {
        variant,
        benchmarks: table.benchmarks().to_vec(),
        families: design.families().to_vec(),
        loadings: DMatrix::zeros(j, d),
        bias: DVector::zeros(j),
        coefficients: DMatrix::zeros(p, d),
        gammas: gammas.clone(),
        links: vec![LinkFunction::Sigmoid; j],
        standardization: affine,
    };
    let params = problem.unpack(&best.params, &affine, &template);
    let gc = check_problem_gradient(&problem, &best.start, 1e-5);

    let report = FitReport {
        final_loss: best.loss,
        restart_losses: outcomes
            .iter()
            .map(|o| (!o.diverged).then_some(o.loss))
            .collect(),
        restart_steps: outcomes.iter().map(|o| o.steps).collect(),
        chosen_restart: chosen,
        steps: best.steps,
        gradient_check_max_rel_error: gc.max_rel_error,
        standardization: affine,
        variant,
        link,
        d,
        delta: config.delta,
        initial_lr: config.initial_lr,
        lr_decay: config.lr_decay,
        max_steps: config.max_steps,
        seed: config.seed,
        observed_cells: problem.cells.len(),
        design_rank: design.rank(),
        trace: best.trace.clone(),
        diagnostics,
    };
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ModelRecord, ScoreTable};
    use crate::model::Variant;

    #[test]
    fn huber_branches() {
        assert_eq!(huber(0.0, 0.01), 0.0);
        assert!((huber(0.01, 0.01) - 5e-5).abs() < 1e-18);
        assert!((0.5f64 * 0.01 * 0.01 - 0.01 * (0.01 - 0.005)).abs() < 1e-18);
        assert!((huber(0.02, 0.01) - 1.5e-4).abs() < 1e-18);
        assert!((huber(-0.02, 0.01) - 1.5e-4).abs() < 1e-18);
        assert_eq!(huber_derivative(0.01, 0.01), 0.01);
        assert_eq!(huber_derivative(-0.5, 0.01), -0.01);
        assert_eq!(huber_derivative(0.004, 0.01), 0.004);
    }

    fn tiny_table() -> ScoreTable {
        let mk = |id: &str, fam: &str, s: f64, t: f64, a: f64, b: Option<f64>| ModelRecord {
            model_id: id.into(),
            family_id: fam.into(),
            base_family_id: fam.into(),
            version_group: fam.into(),
            size: s,
            tokens: t,
            scores: vec![Some(a), b],
        };
        ScoreTable::new(
            vec!["a".into(), "b".into()],
            vec![
                mk("m1", "x", 1e9, 1e12, 0.3, Some(0.4)),
                mk("m2", "x", 3e9, 2e12, 0.5, None),
                mk("m3", "y", 2e9, 3e12, 0.45, Some(0.5)),
                mk("m4", "y", 7e9, 5e12, 0.6, Some(0.7)),
                mk("m5", "x", 9e9, 4e12, 0.7, Some(0.75)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn too_few_models_is_a_dimension_error() {
        let t = tiny_table().filter(|r| r.model_id == "m1" || r.model_id == "m3");
        let asy = AsymptoteConfig::fixed([("a", 0.0), ("b", 0.0)]).unwrap();
        let cfg = FitConfig {
            d: 1,
            ..FitConfig::default()
        };
        assert!(matches!(fit(&t, &cfg, &asy), Err(Error::Dimension(_))));
    }

    #[test]
    fn fit_is_deterministic_and_best_of_restarts() {
        let t = tiny_table();
        let asy = AsymptoteConfig::fixed([("a", 0.0), ("b", 0.25)]).unwrap();
        let cfg = FitConfig {
            d: 1,
            restarts: 3,
            max_steps: 2_000,
            seed: 11,
            ..FitConfig::default()
        };
        let (p1, r1) = fit(&t, &cfg, &asy).unwrap();
        let (p2, r2) = fit(&t, &cfg, &asy).unwrap();
        assert_eq!(p1.to_json().unwrap(), p2.to_json().unwrap());
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
        let min = r1
            .restart_losses
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r1.final_loss, min);
        assert!(r1.trace.windows(2).all(|w| w[1].1 <= w[0].1));
        // reported loss equals the loss of the returned (un-standardized) params
        let design = build_design(&t).unwrap();
        let direct = total_loss(&p1, &design, &t, cfg.delta).unwrap();
        assert!((direct - r1.final_loss).abs() < 1e-10 * (1.0 + direct));
    }

    #[test]
    fn trainable_gamma_stays_in_range_and_gradients_agree() {
        let t = tiny_table();
        let mut asy = AsymptoteConfig::new();
        asy.insert(
            "a",
            AsymptoteEntry {
                gamma: 0.2,
                mode: GammaMode::Trainable,
            },
        )
        .unwrap();
        asy.insert(
            "b",
            AsymptoteEntry {
                gamma: 0.0,
                mode: GammaMode::Fixed,
            },
        )
        .unwrap();
        let cfg = FitConfig {
            d: 1,
            restarts: 1,
            max_steps: 500,
            variant: Variant::TrainableLink,
            hidden_width: 3,
            ..FitConfig::default()
        };
        let (p, r) = fit(&t, &cfg, &asy).unwrap();
        assert!((0.0..1.0).contains(&p.gammas[0].gamma));
        assert_eq!(p.gammas[1].gamma, 0.0);
        assert!(r.gradient_check_max_rel_error < 1e-3, "{}", r.gradient_check_max_rel_error);
        for l in &p.links {
            match l {
                LinkFunction::MonotoneNet(n) => assert!(n.is_monotone_feasible()),
                LinkFunction::Sigmoid => panic!("expected network link"),
            }
        }
    }
}
