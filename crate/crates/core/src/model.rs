//! Forward model.
//!
//! For a model of family `i` at size `s` and tokens `t`:
//!
//! ```text
//! theta_i(s,t) = alpha_i + B_slopes^T x(s,t)          (d latent skills)
//! eta_i(s,t)   = Lambda theta_i(s,t) + b              (J linear predictors)
//! mu_ij(s,t)   = gamma_j + (1 - gamma_j) sigma_j(eta_ij)
//! ```
//!
//! `sigma_j` is either the logistic function or a small monotone network.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{AsymptoteEntry, GammaMode};
use crate::design::{feature_vector, DesignMatrix, FeatureAffine, COMPUTE_FEATURES};
use crate::error::{Error, Result};
use crate::stats::sigmoid;

/// Hidden width used for monotone link networks unless configured otherwise.
pub const DEFAULT_HIDDEN_WIDTH: usize = 8;

/// Structural variant of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Logistic link, family intercepts, free loadings.
    Basic,
    /// Monotone-network links, family intercepts, free loadings.
    TrainableLink,
    /// Logistic link, one intercept shared by every family.
    SharedIntercept,
    /// Loadings fixed to the identity (`d = J`), monotone-network links.
    SizeAndTokens,
}

impl Variant {
    pub fn shared_intercept(self) -> bool {
        matches!(self, Variant::SharedIntercept)
    }

    pub fn frozen_loadings(self) -> bool {
        matches!(self, Variant::SizeAndTokens)
    }

    pub fn default_link(self) -> LinkKind {
        match self {
            Variant::Basic | Variant::SharedIntercept => LinkKind::Sigmoid,
            Variant::TrainableLink | Variant::SizeAndTokens => LinkKind::MonotoneNet,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Variant::Basic),
            "trainable-link" => Ok(Variant::TrainableLink),
            "shared-intercept" => Ok(Variant::SharedIntercept),
            "size-and-tokens" => Ok(Variant::SizeAndTokens),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Basic => "basic",
            Variant::TrainableLink => "trainable-link",
            Variant::SharedIntercept => "shared-intercept",
            Variant::SizeAndTokens => "size-and-tokens",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    Sigmoid,
    MonotoneNet,
}

/// Two-hidden-layer network `R -> (0,1)` with non-negative multiplicative
/// weights, `tanh` hidden units and a logistic output.
///
/// Flat parameter layout for width `h`:
/// `w1[h] | c1[h] | w2[h*h] (row-major, out x in) | c2[h] | w3[h] | c3`.
/// Only `w1`, `w2`, `w3` are constrained; biases are free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneNet {
    pub width: usize,
    pub params: Vec<f64>,
}

/// Scratch space for one network evaluation.
#[derive(Debug, Clone, Default)]
pub struct NetCache {
    h1: Vec<f64>,
    h2: Vec<f64>,
    da2: Vec<f64>,
}

pub(crate) struct NetLayout {
    pub w1: usize,
    pub c1: usize,
    pub w2: usize,
    pub c2: usize,
    pub w3: usize,
    pub c3: usize,
}

impl NetLayout {
    pub fn new(h: usize) -> Self {
        NetLayout {
            w1: 0,
            c1: h,
            w2: 2 * h,
            c2: 2 * h + h * h,
            w3: 3 * h + h * h,
            c3: 4 * h + h * h,
        }
    }
}

impl MonotoneNet {
    pub fn num_params(width: usize) -> usize {
        width * width + 4 * width + 1
    }

    /// All weights zero: a constant `sigmoid(c3)`.
    pub fn zeros(width: usize) -> Self {
        MonotoneNet {
            width,
            params: vec![0.0; Self::num_params(width)],
        }
    }

    /// Weights `|N(0, 0.5)|`, biases zero.
    pub fn random<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        let normal: Normal<f64> = Normal::new(0.0, 0.5).expect("valid normal");
        let mut net = Self::zeros(width);
        let l = NetLayout::new(width);
        for k in l.w1..l.c1 {
            net.params[k] = f64::abs(normal.sample(rng));
        }
        for k in l.w2..l.c2 {
            net.params[k] = f64::abs(normal.sample(rng));
        }
        for k in l.w3..l.c3 {
            net.params[k] = f64::abs(normal.sample(rng));
        }
        net
    }

    pub fn eval(&self, eta: f64) -> f64 {
        let mut cache = NetCache::default();
        net_forward(&self.params, self.width, eta, &mut cache)
    }

    /// Clamps the multiplicative weights at zero. Idempotent.
    pub fn project(&mut self) {
        project_net(&mut self.params, self.width);
    }

    pub fn is_monotone_feasible(&self) -> bool {
        let l = NetLayout::new(self.width);
        self.params[l.w1..l.c1]
            .iter()
            .chain(&self.params[l.w2..l.c2])
            .chain(&self.params[l.w3..l.c3])
            .all(|&w| w >= 0.0)
    }
}

pub(crate) fn project_net(params: &mut [f64], width: usize) {
    let l = NetLayout::new(width);
    for range in [l.w1..l.c1, l.w2..l.c2, l.w3..l.c3] {
        for w in &mut params[range] {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
    }
}

/// Forward pass; leaves activations in `cache` for [`net_backward`].
pub(crate) fn net_forward(params: &[f64], h: usize, eta: f64, cache: &mut NetCache) -> f64 {
    let l = NetLayout::new(h);
    cache.h1.resize(h, 0.0);
    cache.h2.resize(h, 0.0);
    for k in 0..h {
        cache.h1[k] = (params[l.w1 + k] * eta + params[l.c1 + k]).tanh();
    }
    let mut z = params[l.c3];
    for o in 0..h {
        let row = &params[l.w2 + o * h..l.w2 + (o + 1) * h];
        let a: f64 = row.iter().zip(&cache.h1).map(|(w, x)| w * x).sum::<f64>() + params[l.c2 + o];
        let v = a.tanh();
        cache.h2[o] = v;
        z += params[l.w3 + o] * v;
    }
    sigmoid(z)
}

/// Backward pass for upstream gradient `g = dL/d(out)`. Accumulates
/// parameter gradients into `grad` (same layout as `params`) when given and
/// returns `d out / d eta` scaled by `g`.
pub(crate) fn net_backward(
    params: &[f64],
    h: usize,
    eta: f64,
    out: f64,
    g: f64,
    cache: &mut NetCache,
    grad: Option<&mut [f64]>,
) -> f64 {
    let l = NetLayout::new(h);
    let dz = g * out * (1.0 - out);
    cache.da2.resize(h, 0.0);
    for o in 0..h {
        let h2 = cache.h2[o];
        cache.da2[o] = dz * params[l.w3 + o] * (1.0 - h2 * h2);
    }
    let mut d_eta = 0.0;
    match grad {
        Some(grad) => {
            grad[l.c3] += dz;
            for o in 0..h {
                grad[l.w3 + o] += dz * cache.h2[o];
                grad[l.c2 + o] += cache.da2[o];
            }
            for i in 0..h {
                let mut dh1 = 0.0;
                for o in 0..h {
                    grad[l.w2 + o * h + i] += cache.da2[o] * cache.h1[i];
                    dh1 += params[l.w2 + o * h + i] * cache.da2[o];
                }
                let h1 = cache.h1[i];
                let da1 = dh1 * (1.0 - h1 * h1);
                grad[l.w1 + i] += da1 * eta;
                grad[l.c1 + i] += da1;
                d_eta += da1 * params[l.w1 + i];
            }
        }
        None => {
            for i in 0..h {
                let mut dh1 = 0.0;
                for o in 0..h {
                    dh1 += params[l.w2 + o * h + i] * cache.da2[o];
                }
                let h1 = cache.h1[i];
                d_eta += dh1 * (1.0 - h1 * h1) * params[l.w1 + i];
            }
        }
    }
    d_eta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LinkFunction {
    Sigmoid,
    MonotoneNet(MonotoneNet),
}

impl LinkFunction {
    pub fn kind(&self) -> LinkKind {
        match self {
            LinkFunction::Sigmoid => LinkKind::Sigmoid,
            LinkFunction::MonotoneNet(_) => LinkKind::MonotoneNet,
        }
    }
}

/// Evaluates a link function; non-decreasing in `eta`, values in `[0, 1]`.
pub fn link_eval(link: &LinkFunction, eta: f64) -> f64 {
    match link {
        LinkFunction::Sigmoid => sigmoid(eta),
        LinkFunction::MonotoneNet(net) => net.eval(eta),
    }
}

/// Complete parameter set of a fitted (or ground-truth) model.
#[derive(Debug, Clone, PartialEq)]
pub struct SlothParams {
    pub variant: Variant,
    pub benchmarks: Vec<String>,
    pub families: Vec<String>,
    /// `J x d`.
    pub loadings: DMatrix<f64>,
    /// Length `J`.
    pub bias: DVector<f64>,
    /// Three slope rows followed by one intercept row per family, or a
    /// single shared intercept row for [`Variant::SharedIntercept`].
    pub coefficients: DMatrix<f64>,
    pub gammas: Vec<AsymptoteEntry>,
    pub links: Vec<LinkFunction>,
    /// Affine the optimizer used on the compute features. Coefficients are
    /// always stored in raw-feature form; this is kept for auditing.
    pub standardization: FeatureAffine,
}

impl SlothParams {
    pub fn num_benchmarks(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn num_skills(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn intercept_rows(&self) -> usize {
        if self.variant.shared_intercept() {
            1
        } else {
            self.families.len()
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let j = self.benchmarks.len();
        let d = self.num_skills();
        let rows = COMPUTE_FEATURES + self.intercept_rows();
        if self.loadings.nrows() != j
            || self.bias.len() != j
            || self.gammas.len() != j
            || self.links.len() != j
        {
            return Err(Error::Shape(format!(
                "per-benchmark arrays disagree with {j} benchmarks"
            )));
        }
        if self.coefficients.nrows() != rows || self.coefficients.ncols() != d {
            return Err(Error::Shape(format!(
                "coefficients are {}x{}, expected {rows}x{d}",
                self.coefficients.nrows(),
                self.coefficients.ncols()
            )));
        }
        if self.variant.frozen_loadings() && (d != j || self.loadings != DMatrix::identity(j, j)) {
            return Err(Error::Shape(
                "size-and-tokens variant requires identity loadings with d = J".into(),
            ));
        }
        for g in &self.gammas {
            if !(0.0..1.0).contains(&g.gamma) {
                return Err(Error::Validation(format!("asymptote {} outside [0,1)", g.gamma)));
            }
        }
        Ok(())
    }

    /// Index of the coefficient row holding the intercept for `family`.
    pub fn intercept_row(&self, family: &str) -> Result<usize> {
        if self.variant.shared_intercept() {
            return Ok(COMPUTE_FEATURES);
        }
        self.families
            .iter()
            .position(|f| f == family)
            .map(|i| COMPUTE_FEATURES + i)
            .ok_or_else(|| Error::Validation(format!("family `{family}` not in parameters")))
    }

    /// Skill vector of a (possibly hypothetical) model of `family`.
    pub fn skill_at(&self, family: &str, size: f64, tokens: f64) -> Result<DVector<f64>> {
        let x = feature_vector(size, tokens)?.as_array();
        let row = self.intercept_row(family)?;
        let d = self.num_skills();
        Ok(DVector::from_fn(d, |k, _| {
            self.coefficients[(row, k)]
                + (0..COMPUTE_FEATURES)
                    .map(|c| x[c] * self.coefficients[(c, k)])
                    .sum::<f64>()
        }))
    }

    /// `(Lambda M, B (M^T)^{-1})`: the reparameterization that leaves every
    /// prediction unchanged.
    pub fn reparameterize(&self, m: &DMatrix<f64>) -> Result<SlothParams> {
        let d = self.num_skills();
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::Shape(format!("transform must be {d}x{d}")));
        }
        let inv_t = m
            .transpose()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("transform is singular".into()))?;
        let mut out = self.clone();
        out.loadings = &self.loadings * m;
        out.coefficients = &self.coefficients * inv_t;
        Ok(out)
    }

    /// Trainable-scalar count: loadings (unless fixed to the identity),
    /// one bias and one asymptote per benchmark, and every coefficient.
    /// Link-network weights are not counted.
    pub fn parameter_count(&self) -> usize {
        let j = self.num_benchmarks();
        let loadings = if self.variant.frozen_loadings() {
            0
        } else {
            self.loadings.len()
        };
        loadings + 2 * j + self.coefficients.len()
    }
}

/// Trainable-scalar count of a model with `j` benchmarks, `d` skills and
/// `families` family intercepts, using the same accounting as
/// [`SlothParams::parameter_count`].
pub fn sloth_parameter_count(j: usize, d: usize, families: usize, variant: Variant) -> usize {
    let d = if variant.frozen_loadings() { j } else { d };
    let loadings = if variant.frozen_loadings() { 0 } else { j * d };
    let intercepts = if variant.shared_intercept() { 1 } else { families };
    loadings + 2 * j + (COMPUTE_FEATURES + intercepts) * d
}

/// Latent skills of every design row (`n x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct SkillMatrix {
    pub values: DMatrix<f64>,
    pub means: DVector<f64>,
    /// Population (`1/n`) covariance.
    pub covariance: DMatrix<f64>,
}

impl SkillMatrix {
    pub fn from_values(values: DMatrix<f64>) -> Self {
        let n = values.nrows() as f64;
        let d = values.ncols();
        let means = DVector::from_fn(d, |k, _| values.column(k).sum() / n);
        let mut centered = values.clone();
        for k in 0..d {
            for v in centered.column_mut(k).iter_mut() {
                *v -= means[k];
            }
        }
        let covariance = centered.transpose() * &centered / n;
        SkillMatrix {
            values,
            means,
            covariance,
        }
    }
}

pub fn skills(params: &SlothParams, design: &DesignMatrix) -> Result<SkillMatrix> {
    let d = params.num_skills();
    let x = design.matrix();
    let values = if params.variant.shared_intercept() {
        if params.coefficients.nrows() != COMPUTE_FEATURES + 1 {
            return Err(Error::Shape("shared-intercept coefficients need 4 rows".into()));
        }
        let slopes = params.coefficients.rows(0, COMPUTE_FEATURES);
        let mut v = x.columns(0, COMPUTE_FEATURES) * slopes;
        for mut row in v.row_iter_mut() {
            for k in 0..d {
                row[k] += params.coefficients[(COMPUTE_FEATURES, k)];
            }
        }
        v
    } else {
        if x.ncols() != params.coefficients.nrows() {
            return Err(Error::Shape(format!(
                "design has {} columns, coefficients have {} rows",
                x.ncols(),
                params.coefficients.nrows()
            )));
        }
        if design.families() != params.families.as_slice() {
            return Err(Error::Shape(
                "design family columns differ from parameter families".into(),
            ));
        }
        x * &params.coefficients
    };
    Ok(SkillMatrix::from_values(values))
}

/// `eta = skills Lambda^T + 1 b^T` (`n x J`).
pub fn linear_predictors(params: &SlothParams, skills: &SkillMatrix) -> Result<DMatrix<f64>> {
    if skills.values.ncols() != params.num_skills() {
        return Err(Error::Shape(format!(
            "skills have {} columns, loadings {}",
            skills.values.ncols(),
            params.num_skills()
        )));
    }
    let mut eta = &skills.values * params.loadings.transpose();
    for mut row in eta.row_iter_mut() {
        row += params.bias.transpose();
    }
    Ok(eta)
}

/// Expected scores `mu` (`n x J`), each within `[gamma_j, 1]`.
pub fn predict_scores(params: &SlothParams, design: &DesignMatrix) -> Result<DMatrix<f64>> {
    params.check_shapes()?;
    let sk = skills(params, design)?;
    let eta = linear_predictors(params, &sk)?;
    let mut mu = DMatrix::zeros(eta.nrows(), eta.ncols());
    for i in 0..eta.nrows() {
        for j in 0..eta.ncols() {
            let e = eta[(i, j)];
            if !e.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite linear predictor for model `{}`, benchmark `{}`",
                    design.model_ids()[i],
                    params.benchmarks[j]
                )));
            }
            let g = params.gammas[j].gamma;
            mu[(i, j)] = g + (1.0 - g) * link_eval(&params.links[j], e);
        }
    }
    Ok(mu)
}

// --- JSON envelope -------------------------------------------------------

pub const PARAMS_FORMAT: &str = "sloth-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Shape {
    benchmarks: usize,
    skills: usize,
    coefficient_rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GammaDoc {
    benchmark: String,
    gamma: f64,
    mode: GammaMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsDocument {
    format: String,
    version: u32,
    model: String,
    variant: Variant,
    shape: Shape,
    benchmarks: Vec<String>,
    families: Vec<String>,
    coefficient_rows: Vec<String>,
    loadings: Vec<Vec<f64>>,
    bias: Vec<f64>,
    coefficients: Vec<Vec<f64>>,
    gammas: Vec<GammaDoc>,
    links: Vec<LinkFunction>,
    standardization: FeatureAffine,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape(format!("{what}: ragged rows, expected {ncols} columns")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl SlothParams {
    pub fn to_json(&self) -> Result<String> {
        let mut rows = vec!["log_s".to_string(), "log_t".into(), "log_s*log_t".into()];
        if self.variant.shared_intercept() {
            rows.push("intercept:shared".into());
        } else {
            rows.extend(self.families.iter().map(|f| format!("intercept:{f}")));
        }
        let doc = ParamsDocument {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            model: "sloth".into(),
            variant: self.variant,
            shape: Shape {
                benchmarks: self.num_benchmarks(),
                skills: self.num_skills(),
                coefficient_rows: self.coefficients.nrows(),
            },
            benchmarks: self.benchmarks.clone(),
            families: self.families.clone(),
            coefficient_rows: rows,
            loadings: matrix_rows(&self.loadings),
            bias: self.bias.iter().copied().collect(),
            coefficients: matrix_rows(&self.coefficients),
            gammas: self
                .benchmarks
                .iter()
                .zip(&self.gammas)
                .map(|(b, g)| GammaDoc {
                    benchmark: b.clone(),
                    gamma: g.gamma,
                    mode: g.mode,
                })
                .collect(),
            links: self.links.clone(),
            standardization: self.standardization,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<SlothParams> {
        let doc: ParamsDocument = serde_json::from_str(text)?;
        if doc.format != PARAMS_FORMAT || doc.model != "sloth" {
            return Err(Error::Serde(format!(
                "not a sloth parameter document (format `{}`, model `{}`)",
                doc.format, doc.model
            )));
        }
        if doc.version != PARAMS_VERSION {
            return Err(Error::Serde(format!("unsupported version {}", doc.version)));
        }
        let j = doc.shape.benchmarks;
        let d = doc.shape.skills;
        let loadings = matrix_from_rows(&doc.loadings, d, "loadings")?;
        let coefficients = matrix_from_rows(&doc.coefficients, d, "coefficients")?;
        if loadings.nrows() != j || coefficients.nrows() != doc.shape.coefficient_rows {
            return Err(Error::Shape("declared shape does not match arrays".into()));
        }
        let params = SlothParams {
            variant: doc.variant,
            benchmarks: doc.benchmarks,
            families: doc.families,
            loadings,
            bias: DVector::from_vec(doc.bias),
            coefficients,
            gammas: doc
                .gammas
                .iter()
                .map(|g| AsymptoteEntry {
                    gamma: g.gamma,
                    mode: g.mode,
                })
                .collect(),
            links: doc.links,
            standardization: doc.standardization,
        };
        params.check_shapes()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ModelRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(id: &str, fam: &str, s: f64, t: f64) -> ModelRecord {
        ModelRecord {
            model_id: id.into(),
            family_id: fam.into(),
            base_family_id: fam.into(),
            version_group: fam.into(),
            size: s,
            tokens: t,
            scores: vec![],
        }
    }

    fn basic(j: usize, d: usize, fams: &[&str]) -> SlothParams {
        SlothParams {
            variant: Variant::Basic,
            benchmarks: (0..j).map(|i| format!("b{i}")).collect(),
            families: fams.iter().map(|s| s.to_string()).collect(),
            loadings: DMatrix::zeros(j, d),
            bias: DVector::zeros(j),
            coefficients: DMatrix::zeros(3 + fams.len(), d),
            gammas: vec![
                AsymptoteEntry {
                    gamma: 0.0,
                    mode: GammaMode::Fixed
                };
                j
            ],
            links: vec![LinkFunction::Sigmoid; j],
            standardization: FeatureAffine::identity(),
        }
    }

    #[test]
    fn zero_coefficients_give_zero_skills() {
        let p = basic(2, 2, &["x"]);
        let d = DesignMatrix::for_families(&[rec("a", "x", 5e9, 1e12)], &p.families).unwrap();
        let s = skills(&p, &d).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn skill_from_intercept_and_log_size() {
        let mut p = basic(1, 1, &["x"]);
        p.coefficients[(0, 0)] = 1.0;
        p.coefficients[(3, 0)] = 1.0;
        let d = DesignMatrix::for_families(&[rec("a", "x", std::f64::consts::E, 77.0)], &p.families)
            .unwrap();
        let s = skills(&p, &d).unwrap();
        assert!((s.values[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn shared_intercept_uses_one_row() {
        let mut p = basic(1, 1, &["x", "y"]);
        p.variant = Variant::SharedIntercept;
        p.coefficients = DMatrix::from_row_slice(4, 1, &[0.0, 0.0, 0.0, 3.0]);
        let d = DesignMatrix::for_families(
            &[rec("a", "x", 2.0, 2.0), rec("b", "y", 3.0, 3.0)],
            &p.families,
        )
        .unwrap();
        let s = skills(&p, &d).unwrap();
        assert_eq!(s.values[(0, 0)], 3.0);
        assert_eq!(s.values[(1, 0)], 3.0);
    }

    #[test]
    fn zero_loadings_give_bias() {
        let mut p = basic(3, 2, &["x"]);
        p.bias = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let sk = SkillMatrix::from_values(DMatrix::from_element(4, 2, 1.7));
        let eta = linear_predictors(&p, &sk).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(eta[(i, j)], p.bias[j]);
            }
        }
    }

    #[test]
    fn identity_loadings_pass_skills_through() {
        let mut p = basic(3, 3, &["x"]);
        p.loadings = DMatrix::identity(3, 3);
        let vals = DMatrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let eta = linear_predictors(&p, &SkillMatrix::from_values(vals.clone())).unwrap();
        assert_eq!(eta, vals);
    }

    #[test]
    fn prediction_values() {
        let mut p = basic(1, 1, &["x"]);
        p.gammas[0].gamma = 0.25;
        let d = DesignMatrix::for_families(&[rec("a", "x", 1.0, 1.0)], &p.families).unwrap();
        assert_eq!(predict_scores(&p, &d).unwrap()[(0, 0)], 0.625);

        p.gammas[0].gamma = 0.0;
        p.bias[0] = 20.0;
        assert!((predict_scores(&p, &d).unwrap()[(0, 0)] - 1.0).abs() < 1e-8);

        // zero-weight network: output sigmoid(c3) = 0.5
        p.bias[0] = 0.0;
        p.gammas[0].gamma = 0.5;
        p.links[0] = LinkFunction::MonotoneNet(MonotoneNet::zeros(DEFAULT_HIDDEN_WIDTH));
        assert_eq!(predict_scores(&p, &d).unwrap()[(0, 0)], 0.75);
    }

    #[test]
    fn non_finite_eta_names_record() {
        let mut p = basic(1, 1, &["x"]);
        p.bias[0] = f64::NAN;
        let d = DesignMatrix::for_families(&[rec("zz-model", "x", 1.0, 1.0)], &p.families).unwrap();
        let err = predict_scores(&p, &d).unwrap_err();
        assert!(err.to_string().contains("zz-model"));
    }

    #[test]
    fn sigmoid_link_values() {
        assert_eq!(link_eval(&LinkFunction::Sigmoid, 0.0), 0.5);
        assert!((link_eval(&LinkFunction::Sigmoid, 3f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn random_net_is_monotone_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = LinkFunction::MonotoneNet(MonotoneNet::random(8, &mut rng));
        let vals: Vec<f64> = (-100..=100).map(|k| link_eval(&net, k as f64 * 0.1)).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        assert!(vals.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn net_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = MonotoneNet::random(8, &mut rng);
        let mut cache = NetCache::default();
        for &eta in &[-2.0, -0.3, 0.0, 0.7, 1.9] {
            let out = net_forward(&net.params, 8, eta, &mut cache);
            let analytic = net_backward(&net.params, 8, eta, out, 1.0, &mut cache, None);
            let h = 1e-6;
            let fd = (net.eval(eta + h) - net.eval(eta - h)) / (2.0 * h);
            assert!((analytic - fd).abs() < 1e-7, "{analytic} vs {fd}");
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut net = MonotoneNet {
            width: 2,
            params: (0..MonotoneNet::num_params(2)).map(|k| k as f64 - 6.0).collect(),
        };
        net.project();
        assert!(net.is_monotone_feasible());
        let once = net.clone();
        net.project();
        assert_eq!(once, net);
        // biases untouched
        assert_eq!(net.params[NetLayout::new(2).c1], -4.0);
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let mut p = basic(2, 2, &["x", "y"]);
        p.loadings = DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.5, 1e-17]);
        p.coefficients[(4, 1)] = std::f64::consts::PI;
        p.links[1] = LinkFunction::MonotoneNet(MonotoneNet::random(
            3,
            &mut ChaCha8Rng::seed_from_u64(1),
        ));
        let back = SlothParams::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn appendix_counts() {
        for f in [1usize, 4, 10] {
            assert_eq!(sloth_parameter_count(12, 3, f, Variant::Basic), 69 + 3 * f);
            let p = basic(12, 3, &vec!["f"; f]);
            assert_eq!(p.parameter_count(), 69 + 3 * f);
        }
    }
}
