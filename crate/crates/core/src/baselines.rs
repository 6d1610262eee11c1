//! Comparison laws that ignore the latent-skill structure.
//!
//! - FLOPs: `μ = γ + (1 - γ) σ(α + β log c)` fitted per benchmark with the
//!   same Huber objective and optimizer as the main model, with shared or
//!   family-specific intercepts and slopes.
//! - PCA + FLOPs: principal components of the score matrix, each regressed
//!   on log-FLOPs by least squares and mapped back to scores.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AsymptoteConfig, AsymptoteEntry, GammaMode, ModelRecord, ScoreTable};
use crate::design::flops;
use crate::error::{Error, Result};
use crate::fit::{huber, huber_derivative, FitConfig};
use crate::model::{matrix_from_rows, matrix_rows};
use crate::optim::{minimize, AdamConfig, MinimizeOptions};
use crate::stats::{logit, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sharing {
    /// One intercept and one slope per benchmark.
    SharedAll,
    /// Family intercepts, shared slope.
    FamilyIntercept,
    /// Family intercepts and slopes.
    FamilyBoth,
}

impl Sharing {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "shared-all" | "shared" => Ok(Sharing::SharedAll),
            "family-intercept" | "intercept" => Ok(Sharing::FamilyIntercept),
            "family-both" | "both" => Ok(Sharing::FamilyBoth),
            other => Err(Error::Config(format!(
                "unknown sharing `{other}` (expected shared-all, family-intercept or family-both)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sharing::SharedAll => "shared-all",
            Sharing::FamilyIntercept => "family-intercept",
            Sharing::FamilyBoth => "family-both",
        }
    }

    fn family_intercepts(self) -> bool {
        self != Sharing::SharedAll
    }

    fn family_slopes(self) -> bool {
        self == Sharing::FamilyBoth
    }
}

/// Scalar parameters of the FLOPs law, counted per benchmark as the
/// intercepts, the slopes, an offset and the asymptote.
pub fn flops_parameter_count(j: usize, families: usize, sharing: Sharing) -> usize {
    let a = if sharing.family_intercepts() { families } else { 1 };
    let b = if sharing.family_slopes() { families } else { 1 };
    j * (a + b + 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsParams {
    pub sharing: Sharing,
    pub benchmarks: Vec<String>,
    pub families: Vec<String>,
    pub gammas: Vec<AsymptoteEntry>,
    /// Per benchmark: one value, or one per family in `families` order.
    pub intercepts: Vec<Vec<f64>>,
    pub slopes: Vec<Vec<f64>>,
}

impl FlopsParams {
    pub fn parameter_count(&self) -> usize {
        flops_parameter_count(self.benchmarks.len(), self.families.len(), self.sharing)
    }

    fn family_index(&self, record: &ModelRecord) -> Result<usize> {
        if self.sharing == Sharing::SharedAll {
            return Ok(0);
        }
        self.families
            .iter()
            .position(|f| *f == record.family_id)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "model `{}` belongs to family `{}`, which has no {} parameters",
                    record.model_id,
                    record.family_id,
                    self.sharing.as_str()
                ))
            })
    }

    /// Linear predictor for benchmark `j`.
    pub fn eta(&self, j: usize, record: &ModelRecord) -> Result<f64> {
        let f = self.family_index(record)?;
        let a = &self.intercepts[j];
        let b = &self.slopes[j];
        let lc = flops(record.size, record.tokens)?.ln();
        Ok(a[f.min(a.len() - 1)] + b[f.min(b.len() - 1)] * lc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaFlopsParams {
    pub sharing: Sharing,
    pub benchmarks: Vec<String>,
    pub families: Vec<String>,
    pub d: usize,
    /// Column means of the training scores.
    pub means: Vec<f64>,
    /// `J x J`, columns ordered by descending eigenvalue.
    #[serde(with = "rows")]
    pub eigenvectors: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Per retained component: one intercept per family.
    pub intercepts: Vec<Vec<f64>>,
    /// Per retained component: one slope, or one per family.
    pub slopes: Vec<Vec<f64>>,
    /// Training rows kept (complete score vectors).
    pub training_rows: usize,
}

mod rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let r: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let ncols = r.first().map_or(0, Vec::len);
        matrix_from_rows(&r, ncols, "eigenvectors").map_err(serde::de::Error::custom)
    }
}

impl PcaFlopsParams {
    /// Fraction of total variance in the first `d` components.
    pub fn explained_variance(&self, d: usize) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return 1.0;
        }
        self.eigenvalues.iter().take(d).sum::<f64>() / total
    }

    /// Centered scores projected on the first `d` components and mapped
    /// back.
    pub fn reconstruct_centered(&self, centered: &DMatrix<f64>) -> DMatrix<f64> {
        let u = self.eigenvectors.columns(0, self.d);
        centered * u * u.transpose()
    }

    fn components(&self, record: &ModelRecord) -> Result<DVector<f64>> {
        let f = self
            .families
            .iter()
            .position(|f| *f == record.family_id)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "model `{}` belongs to family `{}`, absent from the PCA training rows",
                    record.model_id, record.family_id
                ))
            })?;
        let lc = flops(record.size, record.tokens)?.ln();
        Ok(DVector::from_fn(self.d, |k, _| {
            let b = &self.slopes[k];
            self.intercepts[k][f] + b[f.min(b.len() - 1)] * lc
        }))
    }
}

/// Any baseline parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "baseline", rename_all = "kebab-case")]
pub enum BaselineParams {
    Flops(FlopsParams),
    PcaFlops(PcaFlopsParams),
}

#[derive(Serialize, Deserialize)]
struct BaselineDocument {
    format: String,
    version: u32,
    model: String,
    #[serde(flatten)]
    params: BaselineParams,
}

impl BaselineParams {
    pub fn to_json(&self) -> Result<String> {
        let doc = BaselineDocument {
            format: "sloth-params".into(),
            version: 1,
            model: "baseline".into(),
            params: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BaselineDocument = serde_json::from_str(text)?;
        if doc.format != "sloth-params" || doc.model != "baseline" || doc.version != 1 {
            return Err(Error::Serde("not a version-1 baseline parameter document".into()));
        }
        Ok(doc.params)
    }

    pub fn benchmarks(&self) -> &[String] {
        match self {
            BaselineParams::Flops(p) => &p.benchmarks,
            BaselineParams::PcaFlops(p) => &p.benchmarks,
        }
    }
}

/// Predictions for `records`, `n x J`. PCA predictions are not clipped;
/// see [`clip_unit`].
pub fn predict_baseline(params: &BaselineParams, records: &[ModelRecord]) -> Result<DMatrix<f64>> {
    match params {
        BaselineParams::Flops(p) => predict_flops(p, records),
        BaselineParams::PcaFlops(p) => predict_pca_flops(p, records),
    }
}

pub fn predict_flops(params: &FlopsParams, records: &[ModelRecord]) -> Result<DMatrix<f64>> {
    let j = params.benchmarks.len();
    let mut out = DMatrix::zeros(records.len(), j);
    for (i, r) in records.iter().enumerate() {
        for jj in 0..j {
            let g = params.gammas[jj].gamma;
            out[(i, jj)] = g + (1.0 - g) * sigmoid(params.eta(jj, r)?);
        }
    }
    Ok(out)
}

pub fn predict_pca_flops(params: &PcaFlopsParams, records: &[ModelRecord]) -> Result<DMatrix<f64>> {
    let j = params.benchmarks.len();
    let u = params.eigenvectors.columns(0, params.d);
    let mut out = DMatrix::zeros(records.len(), j);
    for (i, r) in records.iter().enumerate() {
        let pc = params.components(r)?;
        let y = &u * pc;
        for jj in 0..j {
            out[(i, jj)] = params.means[jj] + y[jj];
        }
    }
    Ok(out)
}

/// Clips to `[0, 1]`; the flag reports whether anything changed.
pub fn clip_unit(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let clipped = m.map(|v| v.clamp(0.0, 1.0));
    let changed = clipped != *m;
    (clipped, changed)
}

// --- FLOPs fitting ---------------------------------------------------------

struct BenchData {
    /// `(standardized log c, family index, score)`.
    cells: Vec<(f64, usize, f64)>,
    gamma: AsymptoteEntry,
    delta: f64,
}

/// Flat layout per benchmark: intercepts, slopes, then raw γ if trainable.
#[derive(Clone, Copy)]
struct BenchLayout {
    na: usize,
    nb: usize,
    trainable: bool,
}

impl BenchLayout {
    fn len(self) -> usize {
        self.na + self.nb + usize::from(self.trainable)
    }
}

fn bench_loss(data: &BenchData, lay: BenchLayout, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let g = if lay.trainable {
        sigmoid(x[lay.na + lay.nb])
    } else {
        data.gamma.gamma
    };
    let mut loss = 0.0;
    let mut grad = grad;
    for &(z, f, y) in &data.cells {
        let ia = f.min(lay.na - 1);
        let ib = f.min(lay.nb - 1);
        let s = sigmoid(x[ia] + x[lay.na + ib] * z);
        let r = g + (1.0 - g) * s - y;
        loss += huber(r, data.delta);
        if let Some(gr) = grad.as_deref_mut() {
            let dmu = huber_derivative(r, data.delta);
            let deta = dmu * (1.0 - g) * s * (1.0 - s);
            gr[ia] += deta;
            gr[lay.na + ib] += deta * z;
            if lay.trainable {
                gr[lay.na + lay.nb] += dmu * (1.0 - s) * g * (1.0 - g);
            }
        }
    }
    loss
}

fn run_adam(
    data: &BenchData,
    lay: BenchLayout,
    start: Vec<f64>,
    config: &FitConfig,
) -> (Vec<f64>, f64, bool) {
    let adam = AdamConfig {
        initial_lr: config.initial_lr,
        decay: config.lr_decay,
        ..AdamConfig::default()
    };
    let opts = MinimizeOptions {
        max_steps: config.max_steps,
        tolerance: config.tolerance,
        patience: config.patience,
        trace_every: 0,
    };
    let res = minimize(start, adam, opts, |x, g| bench_loss(data, lay, x, Some(g)), |_| {});
    (res.params, res.loss, res.diverged)
}

fn expand(x: &[f64], from: BenchLayout, to: BenchLayout) -> Vec<f64> {
    let mut out = Vec::with_capacity(to.len());
    out.extend((0..to.na).map(|i| x[i.min(from.na - 1)]));
    out.extend((0..to.nb).map(|i| x[from.na + i.min(from.nb - 1)]));
    if to.trainable {
        out.push(x[from.na + from.nb]);
    }
    out
}

fn check_family_both(table: &ScoreTable) -> Result<()> {
    let short: Vec<String> = table
        .family_counts()
        .into_iter()
        .filter(|(_, c)| *c < 2)
        .map(|(f, _)| f)
        .collect();
    if short.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "family-specific slopes need at least 2 models per family; too few in: {}",
            short.join(", ")
        )))
    }
}

/// Fits the FLOPs law. Richer sharings are warm-started from the poorer
/// ones, so on the same data the training loss never increases from
/// shared-all to family-intercept to family-both.
pub fn fit_flops(
    table: &ScoreTable,
    sharing: Sharing,
    asymptotes: &AsymptoteConfig,
    config: &FitConfig,
) -> Result<FlopsParams> {
    if table.is_empty() {
        return Err(Error::Validation("cannot fit on an empty table".into()));
    }
    if sharing == Sharing::FamilyBoth {
        check_family_both(table)?;
    }
    let gammas = asymptotes.for_benchmarks(table.benchmarks())?;
    let families = table.families();
    let fam_index: BTreeMap<&str, usize> =
        families.iter().enumerate().map(|(i, f)| (f.as_str(), i)).collect();
    let lc: Vec<f64> = table
        .records()
        .iter()
        .map(|r| flops(r.size, r.tokens).map(f64::ln))
        .collect::<Result<_>>()?;
    let n = lc.len() as f64;
    let mean = lc.iter().sum::<f64>() / n;
    let sd = (lc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 1e-12 { sd } else { 1.0 };

    let nf = families.len();
    let chain: Vec<Sharing> = [Sharing::SharedAll, Sharing::FamilyIntercept, Sharing::FamilyBoth]
        .into_iter()
        .filter(|s| *s <= sharing)
        .collect();

    let per_bench: Vec<Result<(Vec<f64>, BenchLayout)>> = (0..table.num_benchmarks())
        .into_par_iter()
        .map(|j| {
            let cells: Vec<(f64, usize, f64)> = table
                .records()
                .iter()
                .zip(&lc)
                .filter_map(|(r, l)| {
                    r.scores[j].map(|y| ((l - mean) / scale, fam_index[r.family_id.as_str()], y))
                })
                .collect();
            let data = BenchData {
                cells,
                gamma: gammas[j],
                delta: config.delta,
            };
            let trainable = gammas[j].mode == GammaMode::Trainable;
            let g = gammas[j].gamma;
            let m = if data.cells.is_empty() {
                0.5
            } else {
                data.cells.iter().map(|c| (c.2 - g) / (1.0 - g)).sum::<f64>() / data.cells.len() as f64
            };
            let base = BenchLayout {
                na: 1,
                nb: 1,
                trainable,
            };
            let mut x = vec![logit(m.clamp(0.01, 0.99)), 0.0];
            if trainable {
                x.push(logit(g.clamp(1e-6, 1.0 - 1e-6)));
            }
            let mut lay = base;
            for s in &chain {
                let next = BenchLayout {
                    na: if s.family_intercepts() { nf } else { 1 },
                    nb: if s.family_slopes() { nf } else { 1 },
                    trainable,
                };
                let start = expand(&x, lay, next);
                let (sol, _, diverged) = run_adam(&data, next, start.clone(), config);
                if diverged {
                    return Err(Error::Numerical(format!(
                        "FLOPs fit diverged on benchmark `{}`",
                        table.benchmarks()[j]
                    )));
                }
                x = sol;
                lay = next;
            }
            Ok((x, lay))
        })
        .collect();

    let mut intercepts = Vec::new();
    let mut slopes = Vec::new();
    let mut fitted_gammas = gammas.clone();
    for (j, res) in per_bench.into_iter().enumerate() {
        let (x, lay) = res?;
        let b: Vec<f64> = x[lay.na..lay.na + lay.nb].iter().map(|v| v / scale).collect();
        let a: Vec<f64> = (0..lay.na)
            .map(|i| x[i] - b[i.min(lay.nb - 1)] * mean)
            .collect();
        if lay.trainable {
            fitted_gammas[j].gamma = sigmoid(x[lay.na + lay.nb]);
        }
        intercepts.push(a);
        slopes.push(b);
    }
    Ok(FlopsParams {
        sharing,
        benchmarks: table.benchmarks().to_vec(),
        families,
        gammas: fitted_gammas,
        intercepts,
        slopes,
    })
}

/// Huber training loss of a FLOPs fit on `table`.
pub fn flops_loss(params: &FlopsParams, table: &ScoreTable, delta: f64) -> Result<f64> {
    let pred = predict_flops(params, table.records())?;
    let mut loss = 0.0;
    for (i, r) in table.records().iter().enumerate() {
        for (j, s) in r.scores.iter().enumerate() {
            if let Some(y) = s {
                loss += huber(pred[(i, j)] - y, delta);
            }
        }
    }
    Ok(loss)
}

// --- PCA + FLOPs -----------------------------------------------------------

/// Eigenpairs of a symmetric matrix, descending, each vector's
/// largest-magnitude entry made positive.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let n = m.nrows();
    let mut vecs = DMatrix::zeros(n, n);
    let mut vals = Vec::with_capacity(n);
    for (new, &old) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(old).clone_owned();
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v = -v;
        }
        vecs.set_column(new, &v);
        vals.push(eig.eigenvalues[old]);
    }
    (vals, vecs)
}

/// Least squares via normal equations with a `1e-10` ridge.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let xtx = x.transpose() * x + DMatrix::identity(x.ncols(), x.ncols()) * 1e-10;
    let xty = x.transpose() * y;
    xtx.cholesky()
        .map(|c| c.solve(&xty))
        .ok_or_else(|| Error::Numerical("least-squares system is not positive definite".into()))
}

pub fn fit_pca_flops(table: &ScoreTable, d: usize, sharing: Sharing) -> Result<PcaFlopsParams> {
    let j = table.num_benchmarks();
    if d == 0 || d > j {
        return Err(Error::Dimension(format!("PCA needs 1 <= d <= J = {j}, got d = {d}")));
    }
    if sharing == Sharing::SharedAll {
        return Err(Error::Config(
            "PCA + FLOPs supports family-intercept or family-both sharing".into(),
        ));
    }
    let complete = table.filter(|r| r.scores.iter().all(Option::is_some));
    if complete.is_empty() {
        return Err(Error::Validation("no model has a complete score vector".into()));
    }
    if sharing == Sharing::FamilyBoth {
        check_family_both(&complete)?;
    }
    let n = complete.n();
    let y = DMatrix::from_fn(n, j, |i, jj| complete.records()[i].scores[jj].unwrap_or(0.0));
    let means: Vec<f64> = (0..j).map(|jj| y.column(jj).mean()).collect();
    let centered = DMatrix::from_fn(n, j, |i, jj| y[(i, jj)] - means[jj]);
    let cov = centered.transpose() * &centered / n as f64;
    let (eigenvalues, eigenvectors) = sorted_eigen(&cov);
    let pcs = &centered * eigenvectors.columns(0, d);

    let families = complete.families();
    let nf = families.len();
    let fam: Vec<usize> = complete
        .records()
        .iter()
        .map(|r| families.iter().position(|f| *f == r.family_id).unwrap_or(0))
        .collect();
    let lc: Vec<f64> = complete
        .records()
        .iter()
        .map(|r| flops(r.size, r.tokens).map(f64::ln))
        .collect::<Result<_>>()?;
    let lc_mean = lc.iter().sum::<f64>() / n as f64;
    let nb = if sharing == Sharing::FamilyBoth { nf } else { 1 };
    let cols = nf + nb;
    if n < cols {
        return Err(Error::Dimension(format!(
            "{n} complete rows cannot support {cols} regression coefficients"
        )));
    }
    let x = DMatrix::from_fn(n, cols, |i, c| {
        if c < nf {
            f64::from(u8::from(fam[i] == c))
        } else if nb == 1 || fam[i] == c - nf {
            lc[i] - lc_mean
        } else {
            0.0
        }
    });
    let mut intercepts = Vec::with_capacity(d);
    let mut slopes = Vec::with_capacity(d);
    for k in 0..d {
        let coef = ols(&x, &pcs.column(k).clone_owned())?;
        let b: Vec<f64> = (0..nb).map(|c| coef[nf + c]).collect();
        let a: Vec<f64> = (0..nf)
            .map(|f| coef[f] - b[f.min(nb - 1)] * lc_mean)
            .collect();
        intercepts.push(a);
        slopes.push(b);
    }
    Ok(PcaFlopsParams {
        sharing,
        benchmarks: table.benchmarks().to_vec(),
        families,
        d,
        means,
        eigenvectors,
        eigenvalues,
        intercepts,
        slopes,
        training_rows: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(id: &str, fam: &str, s: f64, t: f64, scores: Vec<Option<f64>>) -> ModelRecord {
        ModelRecord {
            model_id: id.into(),
            family_id: fam.into(),
            base_family_id: fam.into(),
            version_group: fam.into(),
            size: s,
            tokens: t,
            scores,
        }
    }

    fn quick() -> FitConfig {
        FitConfig {
            max_steps: 6_000,
            initial_lr: 0.05,
            lr_decay: 0.9995,
            ..FitConfig::default()
        }
    }

    fn flops_table(alpha: &[f64], beta: f64, gamma: f64) -> ScoreTable {
        let mut recs = Vec::new();
        for (fi, a) in alpha.iter().enumerate() {
            for m in 0..4 {
                let s = 1e8 * 2.5f64.powi(m);
                let t = 3e11 * 1.7f64.powi(m);
                let lc = flops(s, t).unwrap().ln();
                let mu = gamma + (1.0 - gamma) * sigmoid(a + beta * lc);
                recs.push(rec(&format!("f{fi}m{m}"), &format!("f{fi}"), s, t, vec![Some(mu), Some(mu)]));
            }
        }
        ScoreTable::new(vec!["x".into(), "y".into()], recs).unwrap()
    }

    #[test]
    fn shared_all_recovers_generating_law() {
        let t = flops_table(&[-20.0, -20.0], 0.4, 0.25);
        let asy = AsymptoteConfig::fixed([("x", 0.25), ("y", 0.25)]).unwrap();
        let p = fit_flops(&t, Sharing::SharedAll, &asy, &quick()).unwrap();
        let pred = predict_flops(&p, t.records()).unwrap();
        for (i, r) in t.records().iter().enumerate() {
            assert!((pred[(i, 0)] - r.scores[0].unwrap()).abs() < 1e-4);
        }
        assert_eq!(p.parameter_count(), 2 * 4);
    }

    #[test]
    fn flat_law_gives_constant_predictions() {
        let t = flops_table(&[0.3], 0.0, 0.0);
        let asy = AsymptoteConfig::fixed([("x", 0.0), ("y", 0.0)]).unwrap();
        let p = fit_flops(&t, Sharing::SharedAll, &asy, &quick()).unwrap();
        let pred = predict_flops(&p, t.records()).unwrap();
        let c = pred[(0, 0)];
        assert!(pred.column(0).iter().all(|v| (v - c).abs() < 1e-4));
    }

    #[test]
    fn one_family_sharings_coincide() {
        let t = flops_table(&[-19.0], 0.38, 0.0);
        let asy = AsymptoteConfig::fixed([("x", 0.0), ("y", 0.0)]).unwrap();
        let a = fit_flops(&t, Sharing::SharedAll, &asy, &quick()).unwrap();
        let b = fit_flops(&t, Sharing::FamilyIntercept, &asy, &quick()).unwrap();
        let pa = predict_flops(&a, t.records()).unwrap();
        let pb = predict_flops(&b, t.records()).unwrap();
        assert!((pa - pb).amax() < 1e-8);
    }

    #[test]
    fn nesting_of_training_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = flops_table(&[-21.0, -19.5, -20.2], 0.41, 0.2);
        let recs: Vec<ModelRecord> = t
            .records()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                for s in r.scores.iter_mut().flatten() {
                    *s = (*s + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0);
                }
                r
            })
            .collect();
        t = ScoreTable::new(t.benchmarks().to_vec(), recs).unwrap();
        let asy = AsymptoteConfig::fixed([("x", 0.2), ("y", 0.2)]).unwrap();
        let cfg = quick();
        let losses: Vec<f64> = [Sharing::SharedAll, Sharing::FamilyIntercept, Sharing::FamilyBoth]
            .iter()
            .map(|s| flops_loss(&fit_flops(&t, *s, &asy, &cfg).unwrap(), &t, cfg.delta).unwrap())
            .collect();
        assert!(losses[0] >= losses[1] && losses[1] >= losses[2], "{losses:?}");
    }

    #[test]
    fn family_both_needs_two_models_per_family() {
        let t = flops_table(&[0.0, 0.0], 0.1, 0.0);
        let t = t.filter(|r| r.family_id == "f0" || r.model_id == "f1m0");
        let asy = AsymptoteConfig::fixed([("x", 0.0), ("y", 0.0)]).unwrap();
        let err = fit_flops(&t, Sharing::FamilyBoth, &asy, &quick()).unwrap_err();
        assert!(err.to_string().contains("f1"));
    }

    #[test]
    fn zero_law_predicts_one_half() {
        let p = FlopsParams {
            sharing: Sharing::SharedAll,
            benchmarks: vec!["x".into()],
            families: vec![],
            gammas: vec![AsymptoteEntry {
                gamma: 0.0,
                mode: GammaMode::Fixed,
            }],
            intercepts: vec![vec![0.0]],
            slopes: vec![vec![0.0]],
        };
        let r = rec("m", "q", 1e9, 1e12, vec![]);
        assert_eq!(predict_flops(&p, &[r]).unwrap()[(0, 0)], 0.5);
    }

    #[test]
    fn unknown_family_is_rejected() {
        let t = flops_table(&[-20.0, -20.0], 0.4, 0.0);
        let asy = AsymptoteConfig::fixed([("x", 0.0), ("y", 0.0)]).unwrap();
        let p = fit_flops(&t, Sharing::FamilyIntercept, &asy, &quick()).unwrap();
        let r = rec("m", "nope", 1e9, 1e12, vec![]);
        assert!(predict_flops(&p, &[r]).is_err());
    }

    fn random_table(seed: u64, n_fam: usize, per: usize, j: usize) -> ScoreTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut recs = Vec::new();
        for f in 0..n_fam {
            for m in 0..per {
                let scores = (0..j).map(|_| Some(rng.random_range(0.0..1.0))).collect();
                recs.push(rec(
                    &format!("f{f}m{m}"),
                    &format!("f{f}"),
                    1e8 * 2f64.powi(m as i32) * rng.random_range(0.8..1.2),
                    1e11 * 3f64.powi(m as i32),
                    scores,
                ));
            }
        }
        ScoreTable::new((0..j).map(|k| format!("b{k}")).collect(), recs).unwrap()
    }

    #[test]
    fn pca_full_basis_roundtrip_and_variance() {
        let t = random_table(1, 4, 5, 6);
        let p = fit_pca_flops(&t, 6, Sharing::FamilyIntercept).unwrap();
        let y = DMatrix::from_fn(t.n(), 6, |i, j| t.records()[i].scores[j].unwrap() - p.means[j]);
        assert!((p.reconstruct_centered(&y) - &y).amax() < 1e-8);
        let ev: Vec<f64> = (1..=6).map(|d| p.explained_variance(d)).collect();
        assert!(ev.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        assert!((ev[5] - 1.0).abs() < 1e-12);
        let u = &p.eigenvectors;
        assert!((u.transpose() * u - DMatrix::identity(6, 6)).amax() < 1e-8);
    }

    #[test]
    fn pca_rank_one_is_exact() {
        let u = [0.2, 0.5, 0.1];
        let mut recs = Vec::new();
        for f in 0..2 {
            for m in 0..4 {
                let v = 0.3 + 0.1 * m as f64 + 0.05 * f as f64;
                recs.push(rec(
                    &format!("f{f}m{m}"),
                    &format!("f{f}"),
                    1e9 * (m + 1) as f64,
                    1e12 * (m + 2) as f64,
                    u.iter().map(|x| Some(x * v)).collect(),
                ));
            }
        }
        let t = ScoreTable::new(vec!["a".into(), "b".into(), "c".into()], recs).unwrap();
        let p = fit_pca_flops(&t, 1, Sharing::FamilyIntercept).unwrap();
        let y = DMatrix::from_fn(t.n(), 3, |i, j| t.records()[i].scores[j].unwrap() - p.means[j]);
        assert!((p.reconstruct_centered(&y) - &y).amax() < 1e-6);
    }

    #[test]
    fn pca_errors() {
        let t = random_table(2, 2, 3, 4);
        assert!(matches!(fit_pca_flops(&t, 5, Sharing::FamilyIntercept), Err(Error::Dimension(_))));
        let tiny = t.filter(|r| r.model_id == "f0m0");
        assert!(fit_pca_flops(&tiny, 1, Sharing::FamilyBoth).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let t = random_table(3, 3, 4, 4);
        let p = BaselineParams::PcaFlops(fit_pca_flops(&t, 2, Sharing::FamilyBoth).unwrap());
        let back = BaselineParams::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);
        assert!(p.to_json().unwrap().contains("\"baseline\": \"pca-flops\""));
    }

    #[test]
    fn clipping_is_flagged() {
        let m = DMatrix::from_row_slice(1, 3, &[-0.1, 0.5, 1.2]);
        let (c, changed) = clip_unit(&m);
        assert!(changed);
        assert_eq!(c, DMatrix::from_row_slice(1, 3, &[0.0, 0.5, 1.0]));
        assert!(!clip_unit(&c).1);
    }
}
