//! Post-fit identification of the skill basis.
//!
//! A fitted parameter set is only determined up to `(Λ M, B (Mᵀ)⁻¹)` for
//! invertible `M`. The pipeline here picks an interpretable member of that
//! class: whiten the skills to unit covariance, rotate the loadings
//! obliquely towards simple structure with the Geomin criterion, then
//! centre the skills and move their means into the bias. Every stage leaves
//! the predicted scores unchanged.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::model::{matrix_rows, skills, SlothParams};

pub const DEFAULT_GEOMIN_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Convergence threshold on the Frobenius norm of the projected gradient.
    pub tolerance: f64,
    /// Random oblique starts tried in addition to the identity.
    pub random_starts: usize,
    pub seed: u64,
}

impl Default for RotationConfig {
    fn default() -> Self {
        RotationConfig {
            epsilon: DEFAULT_GEOMIN_EPSILON,
            max_iter: 500,
            tolerance: 1e-6,
            random_starts: 20,
            seed: 0,
        }
    }
}

/// Geomin criterion `Σ_j (Π_k (λ_jk² + ε))^{1/d}` and its gradient.
pub fn geomin_criterion(loadings: &DMatrix<f64>, epsilon: f64) -> (f64, DMatrix<f64>) {
    let (p, k) = loadings.shape();
    let mut grad = DMatrix::zeros(p, k);
    let mut f = 0.0;
    for j in 0..p {
        let log_sum: f64 = (0..k)
            .map(|c| (loadings[(j, c)].powi(2) + epsilon).ln())
            .sum();
        let pro = (log_sum / k as f64).exp();
        f += pro;
        for c in 0..k {
            let l = loadings[(j, c)];
            grad[(j, c)] = 2.0 / k as f64 * l / (l * l + epsilon) * pro;
        }
    }
    (f, grad)
}

/// One oblique gradient-projection run.
#[derive(Debug, Clone, PartialEq)]
pub struct GeominRotation {
    /// `Λ M`.
    pub loadings: DMatrix<f64>,
    /// `M = (Tᵀ)⁻¹`; rows of `M⁻¹ = Tᵀ` have unit length.
    pub m: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub criterion: f64,
    pub initial_criterion: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Criterion after each accepted iteration, starting value first.
    pub trace: Vec<f64>,
}

fn normalize_columns(x: &mut DMatrix<f64>) {
    for mut col in x.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
}

fn rotated(a: &DMatrix<f64>, t: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let t_inv = t.clone().try_inverse()?;
    Some((a * t_inv.transpose(), t_inv))
}

/// Gradient-projection oblique rotation of `a` from the start `t0`
/// (columns are normalized first). Only steps that lower the criterion are
/// accepted, so the trace is non-increasing.
pub fn gpa_oblique(
    a: &DMatrix<f64>,
    t0: &DMatrix<f64>,
    epsilon: f64,
    max_iter: usize,
    tolerance: f64,
) -> Result<GeominRotation> {
    let d = a.ncols();
    if t0.shape() != (d, d) {
        return Err(Error::Shape(format!("start rotation must be {d}x{d}")));
    }
    let mut t = t0.clone();
    normalize_columns(&mut t);
    let (mut l, mut t_inv) =
        rotated(a, &t).ok_or_else(|| Error::Numerical("start rotation is singular".into()))?;
    let (mut f, mut gq) = geomin_criterion(&l, epsilon);
    let initial = f;
    let mut grad = -(l.transpose() * &gq * &t_inv).transpose();
    let mut trace = vec![f];
    let mut alpha = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..=max_iter {
        let col_dots = DVector::from_fn(d, |c, _| t.column(c).dot(&grad.column(c)));
        let gp = &grad - &t * DMatrix::from_diagonal(&col_dots);
        let s = gp.norm();
        if s < tolerance {
            converged = true;
            break;
        }
        if iterations == max_iter {
            break;
        }
        alpha *= 2.0;
        let mut accepted = None;
        let mut fallback = None;
        for _ in 0..=10 {
            let mut x = &t - alpha * &gp;
            normalize_columns(&mut x);
            if let Some((lt, ti)) = rotated(a, &x) {
                let (ft, gqt) = geomin_criterion(&lt, epsilon);
                let improvement = f - ft;
                if improvement > 0.5 * s * s * alpha {
                    accepted = Some((x, lt, ti, ft, gqt));
                    break;
                }
                if improvement > 0.0 && fallback.as_ref().is_none_or(|b: &(_, _, _, f64, _)| ft < b.3) {
                    fallback = Some((x, lt, ti, ft, gqt));
                }
            }
            alpha /= 2.0;
        }
        let Some((x, lt, ti, ft, gqt)) = accepted.or(fallback) else {
            // No descent along the projected gradient at any step size.
            break;
        };
        t = x;
        l = lt;
        t_inv = ti;
        f = ft;
        gq = gqt;
        grad = -(l.transpose() * &gq * &t_inv).transpose();
        trace.push(f);
        iterations += 1;
    }
    Ok(GeominRotation {
        m: t_inv.transpose(),
        loadings: l,
        t,
        criterion: f,
        initial_criterion: initial,
        iterations,
        converged,
        trace,
    })
}

/// Geomin rotation from the identity start only.
pub fn geomin_rotate(loadings: &DMatrix<f64>, epsilon: f64) -> Result<GeominRotation> {
    geomin_rotate_with(
        loadings,
        &RotationConfig {
            epsilon,
            random_starts: 0,
            ..RotationConfig::default()
        },
    )
}

/// Geomin rotation keeping the best of the identity start and
/// `config.random_starts` seeded random starts.
pub fn geomin_rotate_with(loadings: &DMatrix<f64>, config: &RotationConfig) -> Result<GeominRotation> {
    if !(config.epsilon > 0.0) {
        return Err(Error::Config("geomin epsilon must be positive".into()));
    }
    let d = loadings.ncols();
    if d == 0 {
        return Err(Error::Shape("loadings have no columns".into()));
    }
    if d == 1 {
        let (f, _) = geomin_criterion(loadings, config.epsilon);
        return Ok(GeominRotation {
            loadings: loadings.clone(),
            m: DMatrix::identity(1, 1),
            t: DMatrix::identity(1, 1),
            criterion: f,
            initial_criterion: f,
            iterations: 0,
            converged: true,
            trace: vec![f],
        });
    }
    let mut starts = vec![DMatrix::identity(d, d)];
    for r in 0..config.random_starts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(r as u64 + 1);
        starts.push(DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng)));
    }
    let runs: Vec<Option<GeominRotation>> = starts
        .par_iter()
        .map(|t0| gpa_oblique(loadings, t0, config.epsilon, config.max_iter, config.tolerance).ok())
        .collect();
    let initial = geomin_criterion(loadings, config.epsilon).0;
    let mut best: Option<GeominRotation> = None;
    for run in runs.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| run.criterion < b.criterion - 1e-12) {
            best = Some(run);
        }
    }
    let mut best = best.ok_or_else(|| Error::Numerical("every rotation start was singular".into()))?;
    // Report against the unrotated input, whatever start won.
    best.initial_criterion = initial;
    if best.criterion > initial {
        let (f, _) = geomin_criterion(loadings, config.epsilon);
        best = GeominRotation {
            loadings: loadings.clone(),
            m: DMatrix::identity(d, d),
            t: DMatrix::identity(d, d),
            criterion: f,
            initial_criterion: f,
            iterations: 0,
            converged: false,
            trace: vec![f],
        };
    }
    Ok(best)
}

fn check_identifiable(params: &SlothParams) -> Result<()> {
    if params.variant.frozen_loadings() {
        return Err(Error::Inapplicable(
            "size-and-tokens fits have no shared skill basis to rotate".into(),
        ));
    }
    params.check_shapes()
}

/// Symmetric inverse square root `Σ^{-1/2}` of the skill covariance.
pub fn whitening_matrix(params: &SlothParams, design: &DesignMatrix) -> Result<DMatrix<f64>> {
    let sk = skills(params, design)?;
    let eig = sk.covariance.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(Error::Numerical(format!(
            "skill covariance is singular (eigenvalues in [{min:.3e}, {max:.3e}]); \
             refit with a smaller d"
        )));
    }
    let inv_sqrt = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose())
}

/// `B ← B A`, `Λ ← Λ (Aᵀ)⁻¹` with `A = Σ^{-1/2}`, giving unit skill
/// covariance.
pub fn whiten(params: &SlothParams, design: &DesignMatrix) -> Result<SlothParams> {
    Ok(whiten_with_matrix(params, design)?.0)
}

fn whiten_with_matrix(
    params: &SlothParams,
    design: &DesignMatrix,
) -> Result<(SlothParams, DMatrix<f64>)> {
    check_identifiable(params)?;
    let a = whitening_matrix(params, design)?;
    let m = a
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("whitening matrix is singular".into()))?;
    Ok((params.reparameterize(&m)?, a))
}

/// Subtracts the skill means from every intercept row and adds
/// `Λ · means` to the bias.
pub fn standardize_skills(params: &SlothParams, design: &DesignMatrix) -> Result<SlothParams> {
    params.check_shapes()?;
    let sk = skills(params, design)?;
    let mut out = params.clone();
    let first = crate::design::COMPUTE_FEATURES;
    for r in first..out.coefficients.nrows() {
        for k in 0..out.num_skills() {
            out.coefficients[(r, k)] -= sk.means[k];
        }
    }
    out.bias = &params.bias + &params.loadings * &sk.means;
    Ok(out)
}

/// Outcome of [`interpret_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct RotationResult {
    /// Oblique rotation including the final column signs and order.
    pub rotation: DMatrix<f64>,
    pub whitening: DMatrix<f64>,
    /// Diagonal rescaling applied at exit to restore unit variances.
    pub scaling: DVector<f64>,
    /// Overall `M` with `Λ_out = Λ_in M` and `B_out = B_in (Mᵀ)⁻¹` before
    /// the final centering.
    pub transform: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
    pub coefficients: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub skill_correlation: DMatrix<f64>,
    pub geomin_criterion: f64,
    pub initial_criterion: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Serialize)]
struct RotationDocument<'a> {
    format: &'static str,
    version: u32,
    benchmarks: &'a [String],
    rotation: Vec<Vec<f64>>,
    whitening: Vec<Vec<f64>>,
    scaling: Vec<f64>,
    transform: Vec<Vec<f64>>,
    loadings: Vec<Vec<f64>>,
    coefficients: Vec<Vec<f64>>,
    bias: Vec<f64>,
    skill_correlation: Vec<Vec<f64>>,
    geomin_criterion: f64,
    initial_criterion: f64,
    epsilon: f64,
    iterations: usize,
    converged: bool,
    trace: &'a [f64],
}

impl RotationResult {
    pub fn to_json(&self, benchmarks: &[String]) -> Result<String> {
        let doc = RotationDocument {
            format: "sloth-rotation",
            version: 1,
            benchmarks,
            rotation: matrix_rows(&self.rotation),
            whitening: matrix_rows(&self.whitening),
            scaling: self.scaling.iter().copied().collect(),
            transform: matrix_rows(&self.transform),
            loadings: matrix_rows(&self.loadings),
            coefficients: matrix_rows(&self.coefficients),
            bias: self.bias.iter().copied().collect(),
            skill_correlation: matrix_rows(&self.skill_correlation),
            geomin_criterion: self.geomin_criterion,
            initial_criterion: self.initial_criterion,
            epsilon: self.epsilon,
            iterations: self.iterations,
            converged: self.converged,
            trace: &self.trace,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Signed permutation: descending column sum of squares, largest-magnitude
/// entry of each column positive.
fn canonical_order(loadings: &DMatrix<f64>) -> DMatrix<f64> {
    let d = loadings.ncols();
    let mut order: Vec<usize> = (0..d).collect();
    let ss: Vec<f64> = (0..d).map(|c| loadings.column(c).norm_squared()).collect();
    order.sort_by(|&a, &b| ss[b].total_cmp(&ss[a]).then(a.cmp(&b)));
    let mut p = DMatrix::zeros(d, d);
    for (new, &old) in order.iter().enumerate() {
        let col = loadings.column(old);
        let mut best = 0;
        for r in 0..col.len() {
            if col[r].abs() > col[best].abs() {
                best = r;
            }
        }
        p[(old, new)] = if col.len() > 0 && col[best] < 0.0 { -1.0 } else { 1.0 };
    }
    p
}

/// Whiten, Geomin-rotate, canonicalize column signs and order, centre the
/// skills and restore unit variances.
pub fn interpret_pipeline(
    params: &SlothParams,
    design: &DesignMatrix,
) -> Result<(SlothParams, RotationResult)> {
    interpret_pipeline_with(params, design, &RotationConfig::default())
}

pub fn interpret_pipeline_with(
    params: &SlothParams,
    design: &DesignMatrix,
    config: &RotationConfig,
) -> Result<(SlothParams, RotationResult)> {
    let (white, a) = whiten_with_matrix(params, design)?;
    let rot = geomin_rotate_with(&white.loadings, config)?;
    let signed = canonical_order(&(&white.loadings * &rot.m));
    let rotation = &rot.m * &signed;
    let rotated = white.reparameterize(&rotation)?;
    let centered = standardize_skills(&rotated, design)?;

    let sk = skills(&centered, design)?;
    let sd = sk.covariance.diagonal().map(f64::sqrt);
    if sd.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Numerical("a rotated skill has zero variance".into()));
    }
    let out = centered.reparameterize(&DMatrix::from_diagonal(&sd))?;
    let final_skills = skills(&out, design)?;
    let sdf = final_skills.covariance.diagonal().map(f64::sqrt);
    let corr = DMatrix::from_fn(sdf.len(), sdf.len(), |i, j| {
        final_skills.covariance[(i, j)] / (sdf[i] * sdf[j])
    });
    let a_inv_t = a
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("whitening matrix is singular".into()))?;
    let (criterion, _) = geomin_criterion(&rotated.loadings, config.epsilon);
    let result = RotationResult {
        transform: &a_inv_t * &rotation * DMatrix::from_diagonal(&sd),
        rotation,
        whitening: a,
        scaling: sd,
        loadings: out.loadings.clone(),
        coefficients: out.coefficients.clone(),
        bias: out.bias.clone(),
        skill_correlation: corr,
        geomin_criterion: criterion,
        initial_criterion: rot.initial_criterion,
        iterations: rot.iterations,
        converged: rot.converged,
        trace: rot.trace,
        epsilon: config.epsilon,
    };
    Ok((out, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AsymptoteEntry, GammaMode, ModelRecord};
    use crate::design::{DesignMatrix, FeatureAffine};
    use crate::model::{predict_scores, LinkFunction, Variant};
    use rand::Rng;

    fn fixture(seed: u64, d: usize) -> (SlothParams, DesignMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fams = ["a", "b", "c"];
        let mut recs = Vec::new();
        for (fi, f) in fams.iter().enumerate() {
            for m in 0..4 {
                let s = 1e8 * 3f64.powi(m) * (1.0 + fi as f64 * 0.3);
                let t = 2e11 * 2f64.powi(m) * rng.random_range(0.5..2.0);
                recs.push(ModelRecord {
                    model_id: format!("{f}{m}"),
                    family_id: f.to_string(),
                    base_family_id: f.to_string(),
                    version_group: f.to_string(),
                    size: s,
                    tokens: t,
                    scores: vec![],
                });
            }
        }
        let families: Vec<String> = fams.iter().map(|s| s.to_string()).collect();
        let design = DesignMatrix::for_families(&recs, &families).unwrap();
        let j = 6;
        let mut coefficients = DMatrix::from_fn(3 + fams.len(), d, |_, _| rng.random_range(-0.3..0.3));
        for k in 0..d {
            coefficients[(2, k)] *= 0.01;
        }
        let params = SlothParams {
            variant: Variant::Basic,
            benchmarks: (0..j).map(|i| format!("b{i}")).collect(),
            families,
            loadings: DMatrix::from_fn(j, d, |_, _| rng.random_range(-1.0..1.0)),
            bias: DVector::from_fn(j, |_, _| rng.random_range(-1.0..1.0)),
            coefficients,
            gammas: vec![
                AsymptoteEntry {
                    gamma: 0.25,
                    mode: GammaMode::Fixed
                };
                j
            ],
            links: vec![LinkFunction::Sigmoid; j],
            standardization: FeatureAffine::identity(),
        };
        (params, design)
    }

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn whitening_gives_identity_covariance() {
        let (p, x) = fixture(3, 3);
        let w = whiten(&p, &x).unwrap();
        let cov = skills(&w, &x).unwrap().covariance;
        assert!(max_abs_diff(&cov, &DMatrix::identity(3, 3)) < 1e-8);
        let before = predict_scores(&p, &x).unwrap();
        let after = predict_scores(&w, &x).unwrap();
        assert!(max_abs_diff(&before, &after) < 1e-10);
        let again = whitening_matrix(&w, &x).unwrap();
        assert!((again - DMatrix::identity(3, 3)).norm() < 1e-6);
    }

    #[test]
    fn diagonal_covariance_is_rescaled() {
        let (mut p, x) = fixture(4, 2);
        let w = whiten(&p, &x).unwrap();
        p.coefficients = w.coefficients.clone();
        p.coefficients.column_mut(0).scale_mut(2.0);
        p.coefficients.column_mut(1).scale_mut(3.0);
        let cov = skills(&p, &x).unwrap().covariance;
        assert!((cov[(0, 0)] - 4.0).abs() < 1e-8 && (cov[(1, 1)] - 9.0).abs() < 1e-8);
        let w2 = whiten(&p, &x).unwrap();
        let cov2 = skills(&w2, &x).unwrap().covariance;
        assert!((cov2[(0, 0)] - 1.0).abs() < 1e-8 && (cov2[(1, 1)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn singular_covariance_suggests_smaller_d() {
        let (mut p, x) = fixture(5, 2);
        let c0 = p.coefficients.column(0).clone_owned();
        p.coefficients.set_column(1, &(c0 * 2.0));
        let err = whiten(&p, &x).unwrap_err().to_string();
        assert!(err.contains("smaller d"), "{err}");
    }

    #[test]
    fn simple_structure_is_a_fixed_point() {
        let l = DMatrix::from_row_slice(
            6,
            3,
            &[
                0.9, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0, 1.1, 0.0, 0.0, 0.6, 0.0, 0.0, 0.0, 0.8, 0.0, 0.0,
                1.3,
            ],
        );
        let r = geomin_rotate(&l, 0.01).unwrap();
        assert!((r.criterion - r.initial_criterion).abs() < 1e-8);
        assert!(max_abs_diff(&r.loadings.abs(), &l.abs()) < 1e-6);
    }

    #[test]
    fn one_skill_is_identity() {
        let l = DMatrix::from_column_slice(4, 1, &[0.3, -0.2, 0.9, 1.0]);
        let r = geomin_rotate(&l, 0.01).unwrap();
        assert_eq!(r.m, DMatrix::identity(1, 1));
    }

    #[test]
    fn criterion_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let (_, g) = geomin_criterion(&l, 0.01);
        for i in 0..5 {
            for k in 0..3 {
                let mut up = l.clone();
                up[(i, k)] += 1e-6;
                let mut dn = l.clone();
                dn[(i, k)] -= 1e-6;
                let fd = (geomin_criterion(&up, 0.01).0 - geomin_criterion(&dn, 0.01).0) / 2e-6;
                assert!((fd - g[(i, k)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn trace_is_non_increasing_and_rows_of_inverse_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
        let r = geomin_rotate(&l, 0.01).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        let m_inv = r.m.clone().try_inverse().unwrap();
        for row in m_inv.row_iter() {
            assert!((row.norm() - 1.0).abs() < 1e-10);
        }
        assert!(max_abs_diff(&r.loadings, &(&l * &r.m)) < 1e-10);
    }

    #[test]
    fn standardize_shifts_bias_by_loadings() {
        let (p, x) = fixture(6, 3);
        let s = standardize_skills(&p, &x).unwrap();
        let means = skills(&s, &x).unwrap().means;
        assert!(means.amax() < 1e-10);
        let again = standardize_skills(&s, &x).unwrap();
        assert!((&again.bias - &s.bias).amax() < 1e-12);
        assert!(max_abs_diff(&predict_scores(&p, &x).unwrap(), &predict_scores(&s, &x).unwrap()) < 1e-10);

        let c = 0.7;
        let mut shifted = s.clone();
        for r in 3..shifted.coefficients.nrows() {
            shifted.coefficients[(r, 1)] += c;
        }
        let back = standardize_skills(&shifted, &x).unwrap();
        for j in 0..p.num_benchmarks() {
            let expect = s.bias[j] + s.loadings[(j, 1)] * c;
            assert!((back.bias[j] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn pipeline_preserves_predictions_and_normalizes_skills() {
        let (p, x) = fixture(7, 3);
        let (out, res) = interpret_pipeline(&p, &x).unwrap();
        let before = predict_scores(&p, &x).unwrap();
        assert!(max_abs_diff(&before, &predict_scores(&out, &x).unwrap()) < 1e-10);
        let sk = skills(&out, &x).unwrap();
        assert!(sk.means.amax() < 1e-8);
        for k in 0..3 {
            assert!((sk.covariance[(k, k)] - 1.0).abs() < 1e-8);
            assert!((res.skill_correlation[(k, k)] - 1.0).abs() < 1e-12);
        }
        let recon = p.reparameterize(&res.transform).unwrap();
        assert!(max_abs_diff(&recon.loadings, &out.loadings) < 1e-8);
        let json = res.to_json(&p.benchmarks).unwrap();
        assert!(json.contains("skill_correlation"));
    }

    #[test]
    fn pipeline_is_idempotent_up_to_symmetry() {
        let (p, x) = fixture(8, 3);
        let (once, _) = interpret_pipeline(&p, &x).unwrap();
        let (twice, _) = interpret_pipeline(&once, &x).unwrap();
        assert!(max_abs_diff(&once.loadings.abs(), &twice.loadings.abs()) < 1e-4);
        assert!(
            max_abs_diff(&predict_scores(&once, &x).unwrap(), &predict_scores(&twice, &x).unwrap())
                < 1e-10
        );
    }
}
