//! Predicting other tasks from latent skills.
//!
//! A task score (or a single question's success rate) is regressed on the
//! skills of the training models through a logistic link,
//! `ŷ = σ(w0 + wᵀθ)`, fitted by ridge-penalized squared error. Skills of a
//! hypothetical model come from the scaling law itself, so the task can be
//! forecast before the model exists. Per-question fits give pass@k curves.

use std::collections::BTreeMap;
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ModelRecord;
use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::model::{skills, SlothParams};
use crate::optim::{minimize, AdamConfig, MinimizeOptions};
use crate::stats::{logit, sigmoid};

/// Outcomes keyed by model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum TaskOutcomes {
    /// One score per model.
    Task { scores: Vec<f64> },
    /// One success rate (or 0/1 outcome) per model and question.
    Items {
        questions: Vec<String>,
        /// `models x questions`, row-major.
        rates: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub model_ids: Vec<String>,
    pub outcomes: TaskOutcomes,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.model_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_ids.is_empty()
    }

    /// Outcome matrix, `models x columns` (one column in task mode).
    pub fn matrix(&self) -> DMatrix<f64> {
        match &self.outcomes {
            TaskOutcomes::Task { scores } => DMatrix::from_column_slice(scores.len(), 1, scores),
            TaskOutcomes::Items { questions, rates } => {
                DMatrix::from_fn(rates.len(), questions.len(), |i, j| rates[i][j])
            }
        }
    }
}

/// Reads `model,score` (task mode) or `model,q1,...,qQ` (item mode).
/// Every cell must be present and lie in `[0, 1]`.
pub fn read_task_csv<R: Read>(reader: R) -> Result<TaskDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            column: "<header>".into(),
            message: "need a model column and at least one outcome column".into(),
        });
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let task_mode = columns.len() == 1 && columns[0] == "score";
    let mut model_ids = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = i + 2;
        let id = rec.get(0).unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                row: row_no,
                column: headers[0].to_string(),
                message: "empty model id".into(),
            });
        }
        let mut vals = Vec::with_capacity(columns.len());
        for (c, name) in columns.iter().enumerate() {
            let cell = rec.get(c + 1).unwrap_or_default();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: row_no,
                column: name.clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parse {
                    row: row_no,
                    column: name.clone(),
                    message: format!("{v} is outside [0, 1]"),
                });
            }
            vals.push(v);
        }
        model_ids.push(id);
        rows.push(vals);
    }
    let outcomes = if task_mode {
        TaskOutcomes::Task {
            scores: rows.into_iter().map(|r| r[0]).collect(),
        }
    } else {
        TaskOutcomes::Items {
            questions: columns,
            rates: rows,
        }
    };
    Ok(TaskDataset { model_ids, outcomes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    /// Ridge strength on the weights of standardized skills.
    pub lambda: f64,
    pub max_steps: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            lambda: 0.01,
            max_steps: 20_000,
            initial_lr: 0.05,
            lr_decay: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRegression {
    /// Weights on raw skills.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    /// Constant outcomes: weights are zero and the intercept is the logit
    /// of the mean.
    pub degenerate: bool,
    pub loss: f64,
    pub warnings: Vec<String>,
}

pub fn predict_task(reg: &SkillRegression, skill: &[f64]) -> Result<f64> {
    if skill.len() != reg.weights.len() {
        return Err(Error::Shape(format!(
            "skill vector has {} entries, regression expects {}",
            skill.len(),
            reg.weights.len()
        )));
    }
    if skill.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("skill vector is not finite".into()));
    }
    let eta = reg.intercept + reg.weights.iter().zip(skill).map(|(w, s)| w * s).sum::<f64>();
    Ok(sigmoid(eta))
}

/// Fits `σ(w0 + wᵀθ)` to `outcomes` by `Σ (ŷ - y)² + λ ‖w‖²`, with the
/// penalty applied on standardized skills.
pub fn fit_task_regression(
    skills: &DMatrix<f64>,
    outcomes: &[f64],
    config: &RegressionConfig,
) -> Result<SkillRegression> {
    let (n, d) = skills.shape();
    if n != outcomes.len() {
        return Err(Error::Shape(format!(
            "{n} skill rows but {} outcomes",
            outcomes.len()
        )));
    }
    if n == 0 {
        return Err(Error::Validation("no training models".into()));
    }
    if !(config.lambda >= 0.0) {
        return Err(Error::Config("lambda must be non-negative".into()));
    }
    if outcomes.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(Error::Domain("outcomes must lie in [0, 1]".into()));
    }
    let mut warnings = Vec::new();
    if n < d + 2 {
        warnings.push(format!(
            "only {n} training models for {d} skills; at least {} are recommended",
            d + 2
        ));
    }
    let ymean = outcomes.iter().sum::<f64>() / n as f64;
    let (ymin, ymax) = outcomes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if ymax - ymin < 1e-12 {
        let intercept = logit(ymean.clamp(1e-6, 1.0 - 1e-6));
        let loss = outcomes
            .iter()
            .map(|y| (sigmoid(intercept) - y).powi(2))
            .sum();
        return Ok(SkillRegression {
            weights: vec![0.0; d],
            intercept,
            lambda: config.lambda,
            degenerate: true,
            loss,
            warnings,
        });
    }
    let mean: Vec<f64> = (0..d).map(|k| skills.column(k).mean()).collect();
    let scale: Vec<f64> = (0..d)
        .map(|k| {
            let v = skills.column(k).iter().map(|x| (x - mean[k]).powi(2)).sum::<f64>() / n as f64;
            if v.sqrt() > 1e-12 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let z = DMatrix::from_fn(n, d, |i, k| (skills[(i, k)] - mean[k]) / scale[k]);
    let lambda = config.lambda;
    let objective = |x: &[f64], g: &mut [f64]| {
        let mut loss = 0.0;
        for i in 0..n {
            let eta = x[0] + (0..d).map(|k| x[1 + k] * z[(i, k)]).sum::<f64>();
            let p = sigmoid(eta);
            let r = p - outcomes[i];
            loss += r * r;
            let de = 2.0 * r * p * (1.0 - p);
            g[0] += de;
            for k in 0..d {
                g[1 + k] += de * z[(i, k)];
            }
        }
        for k in 0..d {
            loss += lambda * x[1 + k] * x[1 + k];
            g[1 + k] += 2.0 * lambda * x[1 + k];
        }
        loss
    };
    let mut start = vec![0.0; d + 1];
    start[0] = logit(ymean.clamp(0.01, 0.99));
    let res = minimize(
        start,
        AdamConfig {
            initial_lr: config.initial_lr,
            decay: config.lr_decay,
            ..AdamConfig::default()
        },
        MinimizeOptions {
            max_steps: config.max_steps,
            tolerance: 1e-12,
            patience: 1_000,
            trace_every: 0,
        },
        objective,
        |_| {},
    );
    if res.diverged {
        return Err(Error::Numerical("skill regression diverged".into()));
    }
    let weights: Vec<f64> = (0..d).map(|k| res.params[1 + k] / scale[k]).collect();
    let intercept = res.params[0] - (0..d).map(|k| weights[k] * mean[k]).sum::<f64>();
    Ok(SkillRegression {
        weights,
        intercept,
        lambda,
        degenerate: false,
        loss: res.loss,
        warnings,
    })
}

/// One regression per question (column of `outcomes`).
pub fn fit_item_models(
    skills: &DMatrix<f64>,
    outcomes: &DMatrix<f64>,
    config: &RegressionConfig,
) -> Result<Vec<SkillRegression>> {
    if skills.nrows() < 2 {
        return Err(Error::Validation("item models need at least 2 training models".into()));
    }
    if skills.nrows() != outcomes.nrows() {
        return Err(Error::Shape(format!(
            "{} skill rows but {} outcome rows",
            skills.nrows(),
            outcomes.nrows()
        )));
    }
    (0..outcomes.ncols())
        .into_par_iter()
        .map(|q| {
            let y: Vec<f64> = outcomes.column(q).iter().copied().collect();
            fit_task_regression(skills, &y, config)
        })
        .collect()
}

/// Per-question success probabilities for one skill vector.
pub fn predict_items(models: &[SkillRegression], skill: &[f64]) -> Result<Vec<f64>> {
    models.iter().map(|m| predict_task(m, skill)).collect()
}

/// `pass@k = mean_j [1 - (1 - p_j)^k]` for each `k`.
pub fn predict_pass_at_k(p_hat: &[f64], k_values: &[u64]) -> Result<Vec<f64>> {
    if p_hat.is_empty() {
        return Err(Error::Validation("pass@k needs at least one question".into()));
    }
    if let Some(p) = p_hat.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    if k_values.contains(&0) {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    let q = p_hat.len() as f64;
    Ok(k_values
        .iter()
        .map(|&k| {
            let total: f64 = if k == 1 {
                p_hat.iter().sum()
            } else {
                p_hat
                    .iter()
                    .map(|&p| {
                        if p >= 1.0 {
                            1.0
                        } else {
                            -(k as f64 * (-p).ln_1p()).exp_m1()
                        }
                    })
                    .sum()
            };
            total / q
        })
        .collect())
}

/// Skills of `records` under `params`, `records.len() x d`. Every
/// record's family must have a fitted intercept.
pub fn skills_for(params: &SlothParams, records: &[ModelRecord]) -> Result<DMatrix<f64>> {
    let design = DesignMatrix::for_families(records, &params.families)?;
    Ok(skills(params, &design)?.values)
}

/// Skills of the models named in `ids`, looked up in `records`.
pub fn skills_for_ids(params: &SlothParams, records: &[ModelRecord], ids: &[String]) -> Result<DMatrix<f64>> {
    let index: BTreeMap<&str, &ModelRecord> = records.iter().map(|r| (r.model_id.as_str(), r)).collect();
    let picked = ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|r| (*r).clone())
                .ok_or_else(|| Error::Validation(format!("model `{id}` is not in the score table")))
        })
        .collect::<Result<Vec<_>>>()?;
    skills_for(params, &picked)
}

/// Skill vector of a model that does not exist yet.
pub fn hypothetical_skill(params: &SlothParams, family: &str, size: f64, tokens: f64) -> Result<DVector<f64>> {
    params.skill_at(family, size, tokens)
}
