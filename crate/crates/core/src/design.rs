//! Compute features `x(s, t) = (ln s, ln t, ln s · ln t)` and the fixed
//! design matrix: three shared compute columns followed by one 0/1
//! intercept column per family.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{ModelRecord, ScoreTable};
use crate::error::{Error, Result};

/// Number of shared compute columns in every design.
pub const COMPUTE_FEATURES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub log_s: f64,
    pub log_t: f64,
    pub interaction: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 3] {
        [self.log_s, self.log_t, self.interaction]
    }
}

pub fn feature_vector(size: f64, tokens: f64) -> Result<FeatureVector> {
    if !(size > 0.0 && tokens > 0.0) || !size.is_finite() || !tokens.is_finite() {
        return Err(Error::Domain(format!(
            "size and tokens must be positive and finite, got ({size}, {tokens})"
        )));
    }
    let log_s = size.ln();
    let log_t = tokens.ln();
    Ok(FeatureVector {
        log_s,
        log_t,
        interaction: log_s * log_t,
    })
}

/// Training compute approximation `c(s, t) = 6 s t`.
pub fn flops(size: f64, tokens: f64) -> Result<f64> {
    if !(size > 0.0 && tokens > 0.0) {
        return Err(Error::Domain(format!(
            "size and tokens must be positive, got ({size}, {tokens})"
        )));
    }
    Ok(6.0 * size * tokens)
}

/// Per-column affine map `z = (x - mean) / scale` applied to the compute
/// features before optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureAffine {
    pub mean: [f64; 3],
    pub scale: [f64; 3],
}

impl FeatureAffine {
    pub fn identity() -> Self {
        FeatureAffine {
            mean: [0.0; 3],
            scale: [1.0; 3],
        }
    }

    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        let mut z = [0.0; 3];
        for c in 0..3 {
            z[c] = (x[c] - self.mean[c]) / self.scale[c];
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    column_roles: Vec<String>,
    families: Vec<String>,
    family_of_row: Vec<usize>,
    model_ids: Vec<String>,
    rank: usize,
    warnings: Vec<String>,
}

impl DesignMatrix {
    /// Builds the design for `records` against a fixed family ordering.
    /// Every record's family must appear in `families`.
    pub fn for_families(records: &[ModelRecord], families: &[String]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Validation("design needs at least one record".into()));
        }
        let index: BTreeMap<&str, usize> = families
            .iter()
            .enumerate()
            .map(|(i, f)| (f.as_str(), i))
            .collect();
        let n = records.len();
        let p = COMPUTE_FEATURES + families.len();
        let mut matrix = DMatrix::zeros(n, p);
        let mut family_of_row = Vec::with_capacity(n);
        for (row, r) in records.iter().enumerate() {
            let x = feature_vector(r.size, r.tokens)?.as_array();
            for (c, v) in x.iter().enumerate() {
                matrix[(row, c)] = *v;
            }
            let f = *index.get(r.family_id.as_str()).ok_or_else(|| {
                Error::Validation(format!(
                    "model `{}` belongs to unknown family `{}`",
                    r.model_id, r.family_id
                ))
            })?;
            matrix[(row, COMPUTE_FEATURES + f)] = 1.0;
            family_of_row.push(f);
        }
        let mut column_roles = vec![
            "log_s".to_string(),
            "log_t".to_string(),
            "log_s*log_t".to_string(),
        ];
        column_roles.extend(families.iter().map(|f| format!("intercept:{f}")));
        let rank = numerical_rank(&matrix, 1e-9);
        let mut warnings = Vec::new();
        if rank < p {
            warnings.push(format!(
                "design matrix is rank deficient: numerical rank {rank} < {p} columns"
            ));
        }
        Ok(DesignMatrix {
            matrix,
            column_roles,
            families: families.to_vec(),
            family_of_row,
            model_ids: records.iter().map(|r| r.model_id.clone()).collect(),
            rank,
            warnings,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn p(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column_roles(&self) -> &[String] {
        &self.column_roles
    }

    pub fn families(&self) -> &[String] {
        &self.families
    }

    pub fn family_index(&self) -> BTreeMap<String, usize> {
        self.families
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), COMPUTE_FEATURES + i))
            .collect()
    }

    /// Family position (0-based among families) of each row.
    pub fn family_of_row(&self) -> &[usize] {
        &self.family_of_row
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn compute_features(&self, row: usize) -> [f64; 3] {
        [
            self.matrix[(row, 0)],
            self.matrix[(row, 1)],
            self.matrix[(row, 2)],
        ]
    }

    /// Mean and population standard deviation of each compute column.
    /// Constant columns get scale 1.
    pub fn standardization(&self) -> FeatureAffine {
        let n = self.n() as f64;
        let mut aff = FeatureAffine::identity();
        for c in 0..COMPUTE_FEATURES {
            let col = self.matrix.column(c);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            aff.mean[c] = mean;
            aff.scale[c] = if var.sqrt() > 1e-12 * mean.abs().max(1.0) {
                var.sqrt()
            } else {
                1.0
            };
        }
        aff
    }
}

/// Design for a whole table; families are sorted so permuting records
/// only permutes rows.
pub fn build_design(table: &ScoreTable) -> Result<DesignMatrix> {
    DesignMatrix::for_families(table.records(), &table.families())
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}
