//! Family leave-one-out cross-validation.
//!
//! Each eligible family in turn is the test family: its `k` smallest models
//! are observed during training and the rest are held out. Instruction-tuned
//! (or base) siblings of the test family are dropped from training, and a
//! family is not tested when a newer generation of its line is available for
//! training.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_flops, fit_pca_flops, predict_flops, predict_pca_flops, Sharing};
use crate::dataset::{AsymptoteConfig, ModelRecord, ScoreTable};
use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::fit::{fit, FitConfig};
use crate::model::{predict_scores, Variant};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub family: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test_family: String,
    pub k_observed: usize,
    /// Training model ids, including the observed test-family models.
    pub train: Vec<String>,
    /// The `k` smallest test-family models.
    pub observed: Vec<String>,
    pub held_out: Vec<String>,
    /// Families removed from this plan's training set.
    pub exclusions: Vec<Exclusion>,
}

impl SplitPlan {
    /// Fails if any held-out model is also a training model.
    pub fn check_no_leakage(&self) -> Result<()> {
        let train: BTreeSet<&str> = self.train.iter().map(String::as_str).collect();
        if let Some(m) = self.held_out.iter().find(|m| train.contains(m.as_str())) {
            return Err(Error::Validation(format!(
                "held-out model `{m}` of family `{}` leaked into training",
                self.test_family
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub k_observed: usize,
    pub plans: Vec<SplitPlan>,
    /// Families that produced no plan, with the reason.
    pub skipped: Vec<Exclusion>,
}

/// Orders by size, then tokens, then model id.
fn size_order(a: &ModelRecord, b: &ModelRecord) -> std::cmp::Ordering {
    a.size
        .total_cmp(&b.size)
        .then(a.tokens.total_cmp(&b.tokens))
        .then_with(|| a.model_id.cmp(&b.model_id))
}

struct FamilyInfo<'a> {
    base: &'a str,
    line: &'a str,
    generation: f64,
    records: Vec<&'a ModelRecord>,
}

fn family_info(table: &ScoreTable) -> BTreeMap<&str, FamilyInfo<'_>> {
    let mut out: BTreeMap<&str, FamilyInfo> = BTreeMap::new();
    for r in table.records() {
        let (line, generation) = r.version();
        out.entry(r.family_id.as_str())
            .or_insert_with(|| FamilyInfo {
                base: &r.base_family_id,
                line,
                generation,
                records: Vec::new(),
            })
            .records
            .push(r);
    }
    for info in out.values_mut() {
        info.records.sort_by(|a, b| size_order(a, b));
    }
    out
}

/// Builds one plan per eligible test family.
pub fn make_splits(table: &ScoreTable, k_observed: usize) -> Result<SplitSet> {
    if !(1..=2).contains(&k_observed) {
        return Err(Error::Config(format!(
            "k_observed must be 1 or 2, got {k_observed}"
        )));
    }
    let info = family_info(table);
    let mut plans = Vec::new();
    let mut skipped = Vec::new();
    for (&fam, fi) in &info {
        if fi.records.len() < k_observed + 1 {
            skipped.push(Exclusion {
                family: fam.to_string(),
                reason: format!(
                    "only {} model(s); need at least {}",
                    fi.records.len(),
                    k_observed + 1
                ),
            });
            continue;
        }
        let mut exclusions = Vec::new();
        let mut excluded: BTreeSet<&str> = BTreeSet::new();
        for (&other, oi) in &info {
            if other != fam && oi.base == fi.base {
                excluded.insert(other);
                exclusions.push(Exclusion {
                    family: other.to_string(),
                    reason: format!("sibling of `{fam}` (base family `{}`)", fi.base),
                });
            }
        }
        let newer: Vec<&str> = info
            .iter()
            .filter(|(o, oi)| {
                **o != fam
                    && !excluded.contains(*o)
                    && oi.line == fi.line
                    && oi.generation > fi.generation
            })
            .map(|(o, _)| *o)
            .collect();
        if !newer.is_empty() {
            skipped.push(Exclusion {
                family: fam.to_string(),
                reason: format!(
                    "older generation of line `{}`; newer in training: {}",
                    fi.line,
                    newer.join(", ")
                ),
            });
            continue;
        }
        let observed: Vec<String> = fi.records[..k_observed]
            .iter()
            .map(|r| r.model_id.clone())
            .collect();
        let held_out: Vec<String> = fi.records[k_observed..]
            .iter()
            .map(|r| r.model_id.clone())
            .collect();
        let train: Vec<String> = table
            .records()
            .iter()
            .filter(|r| {
                if r.family_id == fam {
                    observed.contains(&r.model_id)
                } else {
                    !excluded.contains(r.family_id.as_str())
                }
            })
            .map(|r| r.model_id.clone())
            .collect();
        let plan = SplitPlan {
            test_family: fam.to_string(),
            k_observed,
            train,
            observed,
            held_out,
            exclusions,
        };
        plan.check_no_leakage()?;
        plans.push(plan);
    }
    Ok(SplitSet {
        k_observed,
        plans,
        skipped,
    })
}

/// Anything that can be trained on a table and predict score rows.
pub trait Estimator: Send + Sync {
    fn name(&self) -> String;

    /// `Err(reason)` when the estimator cannot run under `plan`.
    fn applicable(&self, _plan: &SplitPlan) -> std::result::Result<(), String> {
        Ok(())
    }

    /// Predicted scores for `test`, `test.len() x J`.
    fn fit_predict(
        &self,
        train: &ScoreTable,
        test: &[ModelRecord],
        asymptotes: &AsymptoteConfig,
    ) -> Result<DMatrix<f64>>;
}

/// The estimators shipped with the library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorSpec {
    Sloth { config: FitConfig },
    Flops { sharing: Sharing, config: FitConfig },
    PcaFlops { d: usize, sharing: Sharing },
}

impl EstimatorSpec {
    /// Parses `name[,key=value...]`, e.g. `sloth,d=3`, `size-and-tokens`,
    /// `flops-shared`, `flops`, `flops-both`, `pca-flops,d=3`.
    /// Unset fit options come from `base`.
    pub fn parse(text: &str, base: &FitConfig) -> Result<Self> {
        let mut parts = text.split(',').map(str::trim);
        let name = parts.next().unwrap_or_default();
        let mut opts = BTreeMap::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("estimator option `{p}` is not key=value")))?;
            opts.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut cfg = base.clone();
        let take_usize = |opts: &mut BTreeMap<String, String>, key: &str| -> Result<Option<usize>> {
            opts.remove(key)
                .map(|v| {
                    v.parse::<usize>()
                        .map_err(|_| Error::Config(format!("`{key}` must be an integer, got `{v}`")))
                })
                .transpose()
        };
        if let Some(v) = take_usize(&mut opts, "restarts")? {
            cfg.restarts = v;
        }
        if let Some(v) = take_usize(&mut opts, "steps")? {
            cfg.max_steps = v;
        }
        let spec = match name {
            "sloth" => {
                if let Some(d) = take_usize(&mut opts, "d")? {
                    cfg.d = d;
                }
                if let Some(v) = opts.remove("variant") {
                    cfg.variant = Variant::parse(&v)?;
                }
                EstimatorSpec::Sloth { config: cfg }
            }
            "sloth-trainable-link" | "sloth-shared-intercept" | "size-and-tokens" => {
                if let Some(d) = take_usize(&mut opts, "d")? {
                    cfg.d = d;
                }
                cfg.variant = Variant::parse(name.trim_start_matches("sloth-"))?;
                EstimatorSpec::Sloth { config: cfg }
            }
            "flops-shared" => EstimatorSpec::Flops {
                sharing: Sharing::SharedAll,
                config: cfg,
            },
            "flops" => EstimatorSpec::Flops {
                sharing: Sharing::FamilyIntercept,
                config: cfg,
            },
            "flops-both" => EstimatorSpec::Flops {
                sharing: Sharing::FamilyBoth,
                config: cfg,
            },
            "pca-flops" | "pca-flops-both" => {
                let d = take_usize(&mut opts, "d")?.unwrap_or(3);
                EstimatorSpec::PcaFlops {
                    d,
                    sharing: if name == "pca-flops" {
                        Sharing::FamilyIntercept
                    } else {
                        Sharing::FamilyBoth
                    },
                }
            }
            other => {
                return Err(Error::Config(format!("unknown estimator `{other}`")));
            }
        };
        if let Some(k) = opts.keys().next() {
            return Err(Error::Config(format!("estimator `{name}` has no option `{k}`")));
        }
        Ok(spec)
    }

    /// Parses a `+`-separated list.
    pub fn parse_list(text: &str, base: &FitConfig) -> Result<Vec<Self>> {
        text.split('+')
            .filter(|s| !s.trim().is_empty())
            .map(|s| Self::parse(s, base))
            .collect()
    }
}

impl Estimator for EstimatorSpec {
    fn name(&self) -> String {
        match self {
            EstimatorSpec::Sloth { config } => match config.variant {
                Variant::SizeAndTokens => "size-and-tokens".into(),
                Variant::Basic => format!("sloth,d={}", config.d),
                v => format!("sloth-{},d={}", v.as_str(), config.d),
            },
            EstimatorSpec::Flops { sharing, .. } => match sharing {
                Sharing::SharedAll => "flops-shared".into(),
                Sharing::FamilyIntercept => "flops".into(),
                Sharing::FamilyBoth => "flops-both".into(),
            },
            EstimatorSpec::PcaFlops { d, sharing } => match sharing {
                Sharing::FamilyBoth => format!("pca-flops-both,d={d}"),
                _ => format!("pca-flops,d={d}"),
            },
        }
    }

    fn applicable(&self, plan: &SplitPlan) -> std::result::Result<(), String> {
        let both = matches!(
            self,
            EstimatorSpec::Flops {
                sharing: Sharing::FamilyBoth,
                ..
            } | EstimatorSpec::PcaFlops {
                sharing: Sharing::FamilyBoth,
                ..
            }
        );
        if both && plan.k_observed < 2 {
            return Err("family-specific slopes need at least 2 observed models".into());
        }
        Ok(())
    }

    fn fit_predict(
        &self,
        train: &ScoreTable,
        test: &[ModelRecord],
        asymptotes: &AsymptoteConfig,
    ) -> Result<DMatrix<f64>> {
        match self {
            EstimatorSpec::Sloth { config } => {
                let (params, _) = fit(train, config, asymptotes)?;
                let design = DesignMatrix::for_families(test, &params.families)?;
                predict_scores(&params, &design)
            }
            EstimatorSpec::Flops { sharing, config } => {
                let p = fit_flops(train, *sharing, asymptotes, config)?;
                predict_flops(&p, test)
            }
            EstimatorSpec::PcaFlops { d, sharing } => {
                let p = fit_pca_flops(train, *d, *sharing)?;
                predict_pca_flops(&p, test)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub estimator: String,
    pub family: String,
    pub benchmark: String,
    pub model_id: String,
    pub prediction: f64,
    pub actual: f64,
    /// `|prediction - actual|` in percentage points.
    pub abs_error: f64,
    /// `|prediction - actual| / actual` in percent; `None` when `actual` is 0.
    pub ape: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    Inapplicable,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub estimator: String,
    pub family: String,
    pub status: RunStatus,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub k_observed: usize,
    pub estimators: Vec<String>,
    pub benchmarks: Vec<String>,
    pub cells: Vec<CellError>,
    pub outcomes: Vec<PlanOutcome>,
    pub skipped_families: Vec<Exclusion>,
    /// Per estimator, held-out cells left out of MAPE because the true
    /// score is 0.
    pub mape_excluded: BTreeMap<String, usize>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Mae,
    Mape,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(Metric::Mae),
            "mape" => Ok(Metric::Mape),
            o => Err(Error::Config(format!("unknown metric `{o}` (expected mae or mape)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Mape => "mape",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Overall,
    PerFamily,
    PerBenchmark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub estimator: String,
    /// Family or benchmark; `None` at the overall level.
    pub key: Option<String>,
    pub value: f64,
    pub families: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub metric: Metric,
    pub level: Level,
    pub rows: Vec<AggregateRow>,
    /// No cells matched the selection.
    pub empty: bool,
}

/// Runs every estimator on every plan. `workers` bounds the thread pool;
/// `None` uses the global pool.
pub fn run_cv(
    table: &ScoreTable,
    estimators: &[&dyn Estimator],
    splits: &SplitSet,
    asymptotes: &AsymptoteConfig,
    workers: Option<usize>,
) -> Result<CVReport> {
    let names: Vec<String> = estimators.iter().map(|e| e.name()).collect();
    let unique: BTreeSet<&String> = names.iter().collect();
    if unique.len() != names.len() {
        return Err(Error::Config("estimator names must be distinct".into()));
    }
    for plan in &splits.plans {
        plan.check_no_leakage()?;
    }
    let jobs: Vec<(usize, usize)> = (0..splits.plans.len())
        .flat_map(|p| (0..estimators.len()).map(move |e| (p, e)))
        .collect();
    let run = |&(p, e): &(usize, usize)| -> (PlanOutcome, Vec<CellError>) {
        let plan = &splits.plans[p];
        let est = estimators[e];
        let outcome = |status, message| PlanOutcome {
            estimator: names[e].clone(),
            family: plan.test_family.clone(),
            status,
            message,
        };
        if let Err(reason) = est.applicable(plan) {
            return (outcome(RunStatus::Inapplicable, Some(reason)), Vec::new());
        }
        let train_ids: BTreeSet<&str> = plan.train.iter().map(String::as_str).collect();
        let train = table.filter(|r| train_ids.contains(r.model_id.as_str()));
        let test: Vec<ModelRecord> = plan
            .held_out
            .iter()
            .filter_map(|m| table.record(m).cloned())
            .collect();
        match est.fit_predict(&train, &test, asymptotes) {
            Err(err) => (outcome(RunStatus::Failed, Some(err.to_string())), Vec::new()),
            Ok(pred) => {
                let mut cells = Vec::new();
                for (i, r) in test.iter().enumerate() {
                    for (j, s) in r.scores.iter().enumerate() {
                        let Some(y) = *s else { continue };
                        let mu = pred[(i, j)];
                        let err = (mu - y).abs();
                        cells.push(CellError {
                            estimator: names[e].clone(),
                            family: plan.test_family.clone(),
                            benchmark: table.benchmarks()[j].clone(),
                            model_id: r.model_id.clone(),
                            prediction: mu,
                            actual: y,
                            abs_error: 100.0 * err,
                            ape: (y > 0.0).then(|| 100.0 * err / y),
                        });
                    }
                }
                (outcome(RunStatus::Ok, None), cells)
            }
        }
    };
    let results: Vec<(PlanOutcome, Vec<CellError>)> = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(|| jobs.par_iter().map(run).collect()),
        None => jobs.par_iter().map(run).collect(),
    };
    let mut outcomes = Vec::with_capacity(results.len());
    let mut cells = Vec::new();
    for (o, c) in results {
        outcomes.push(o);
        cells.extend(c);
    }
    let mut mape_excluded: BTreeMap<String, usize> = names.iter().map(|n| (n.clone(), 0)).collect();
    for c in &cells {
        if c.ape.is_none() {
            *mape_excluded.entry(c.estimator.clone()).or_default() += 1;
        }
    }
    Ok(CVReport {
        k_observed: splits.k_observed,
        estimators: names,
        benchmarks: table.benchmarks().to_vec(),
        cells,
        outcomes,
        skipped_families: splits.skipped.clone(),
        mape_excluded,
        metadata: BTreeMap::new(),
    })
}

fn metric_value(c: &CellError, metric: Metric) -> Option<f64> {
    match metric {
        Metric::Mae => Some(c.abs_error),
        Metric::Mape => c.ape,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean within each family, then the unweighted mean across families.
pub fn aggregate(report: &CVReport, metric: Metric, level: Level) -> AggregateTable {
    // estimator -> key -> family -> values
    let mut groups: BTreeMap<&str, BTreeMap<Option<&str>, BTreeMap<&str, Vec<f64>>>> = BTreeMap::new();
    for c in &report.cells {
        let Some(v) = metric_value(c, metric) else { continue };
        let key = match level {
            Level::Overall => None,
            Level::PerFamily => Some(c.family.as_str()),
            Level::PerBenchmark => Some(c.benchmark.as_str()),
        };
        groups
            .entry(&c.estimator)
            .or_default()
            .entry(key)
            .or_default()
            .entry(&c.family)
            .or_default()
            .push(v);
    }
    let mut rows = Vec::new();
    for est in &report.estimators {
        let Some(by_key) = groups.get(est.as_str()) else { continue };
        for (key, fams) in by_key {
            let fam_means: Vec<f64> = fams.values().map(|v| mean(v)).collect();
            rows.push(AggregateRow {
                estimator: est.clone(),
                key: key.map(str::to_string),
                value: mean(&fam_means),
                families: fam_means.len(),
            });
        }
    }
    AggregateTable {
        metric,
        level,
        empty: rows.is_empty(),
        rows,
    }
}

/// Global mean over all cells per estimator, ignoring families.
pub fn aggregate_weighted(report: &CVReport, metric: Metric) -> AggregateTable {
    let mut rows = Vec::new();
    for est in &report.estimators {
        let vals: Vec<f64> = report
            .cells
            .iter()
            .filter(|c| &c.estimator == est)
            .filter_map(|c| metric_value(c, metric))
            .collect();
        if vals.is_empty() {
            continue;
        }
        let fams: BTreeSet<&str> = report
            .cells
            .iter()
            .filter(|c| &c.estimator == est)
            .map(|c| c.family.as_str())
            .collect();
        rows.push(AggregateRow {
            estimator: est.clone(),
            key: None,
            value: mean(&vals),
            families: fams.len(),
        });
    }
    AggregateTable {
        metric,
        level: Level::Overall,
        empty: rows.is_empty(),
        rows,
    }
}

impl CVReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat per-cell CSV.
    pub fn write_cells_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "estimator",
            "family",
            "benchmark",
            "model",
            "prediction",
            "actual",
            "abs_error",
        ])?;
        for c in &self.cells {
            w.write_record([
                c.estimator.as_str(),
                &c.family,
                &c.benchmark,
                &c.model_id,
                &c.prediction.to_string(),
                &c.actual.to_string(),
                &c.abs_error.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv writer>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Bar-chart data: one row per (estimator, benchmark) plus an `average`
/// row per estimator.
pub fn write_plot_data<W: Write>(report: &CVReport, metric: Metric, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["estimator", "benchmark", "metric", "value", "families"])?;
    let per = aggregate(report, metric, Level::PerBenchmark);
    let overall = aggregate(report, metric, Level::Overall);
    for r in per.rows.iter().chain(&overall.rows) {
        w.write_record([
            r.estimator.as_str(),
            r.key.as_deref().unwrap_or("average"),
            metric.as_str(),
            &r.value.to_string(),
            &r.families.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv writer>".into(),
        source: e,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, fam: &str, base: &str, ver: &str, s: f64, y: Vec<Option<f64>>) -> ModelRecord {
        ModelRecord {
            model_id: id.into(),
            family_id: fam.into(),
            base_family_id: base.into(),
            version_group: ver.into(),
            size: s,
            tokens: 1e12,
            scores: y,
        }
    }

    fn grid() -> ScoreTable {
        let mut recs = Vec::new();
        for f in ["a", "b", "c"] {
            for (m, s) in [1e9, 2e9, 4e9].iter().enumerate() {
                recs.push(rec(&format!("{f}{m}"), f, f, f, *s, vec![Some(0.1 * (m + 1) as f64)]));
            }
        }
        ScoreTable::new(vec!["x".into()], recs).unwrap()
    }

    #[test]
    fn plain_grid_gives_one_plan_per_family() {
        let s = make_splits(&grid(), 1).unwrap();
        assert_eq!(s.plans.len(), 3);
        for p in &s.plans {
            assert_eq!(p.observed.len(), 1);
            assert_eq!(p.held_out.len(), 2);
            assert_eq!(p.train.len(), 7);
            assert!(p.observed[0].ends_with('0'));
        }
        let s2 = make_splits(&grid(), 2).unwrap();
        assert!(s2.plans.iter().all(|p| p.held_out.len() == 1));
    }

    #[test]
    fn siblings_are_removed_from_training() {
        let mut recs = grid().records().to_vec();
        recs.push(rec("a-it0", "a-it", "a", "a", 1e9, vec![Some(0.2)]));
        recs.push(rec("a-it1", "a-it", "a", "a", 3e9, vec![Some(0.3)]));
        let t = ScoreTable::new(vec!["x".into()], recs).unwrap();
        let s = make_splits(&t, 1).unwrap();
        let pa = s.plans.iter().find(|p| p.test_family == "a").unwrap();
        assert!(!pa.train.iter().any(|m| m.starts_with("a-it")));
        assert_eq!(pa.exclusions[0].family, "a-it");
        let pb = s.plans.iter().find(|p| p.test_family == "b").unwrap();
        assert!(pb.train.iter().any(|m| m.starts_with("a-it")));
    }

    #[test]
    fn older_generation_is_not_tested() {
        let mut recs = grid().records().to_vec();
        for (m, s) in [1e9, 5e9].iter().enumerate() {
            recs.push(rec(&format!("v2-{m}"), "v2", "v2", "lab:2", *s, vec![Some(0.3)]));
            recs.push(rec(&format!("v3-{m}"), "v3", "v3", "lab:3", *s, vec![Some(0.4)]));
        }
        let t = ScoreTable::new(vec!["x".into()], recs).unwrap();
        let s = make_splits(&t, 1).unwrap();
        assert!(s.plans.iter().all(|p| p.test_family != "v2"));
        assert!(s.skipped.iter().any(|e| e.family == "v2"));
        assert!(s.plans.iter().any(|p| p.test_family == "v3"));
    }

    #[test]
    fn small_families_are_skipped_with_a_log_entry() {
        let t = grid().filter(|r| r.family_id != "c" || r.model_id == "c0");
        let s = make_splits(&t, 1).unwrap();
        assert_eq!(s.plans.len(), 2);
        assert_eq!(s.skipped[0].family, "c");
    }

    #[test]
    fn size_ties_use_tokens_then_id() {
        let mut recs = vec![
            rec("z", "f", "f", "f", 1e9, vec![Some(0.1)]),
            rec("y", "f", "f", "f", 1e9, vec![Some(0.1)]),
            rec("x", "f", "f", "f", 1e9, vec![Some(0.1)]),
        ];
        recs[0].tokens = 5e11;
        let t = ScoreTable::new(vec!["x".into()], recs).unwrap();
        let s = make_splits(&t, 2).unwrap();
        assert_eq!(s.plans[0].observed, vec!["z".to_string(), "x".to_string()]);
    }

    struct Constant(f64);

    impl Estimator for Constant {
        fn name(&self) -> String {
            format!("const-{}", self.0)
        }

        fn fit_predict(&self, train: &ScoreTable, test: &[ModelRecord], _: &AsymptoteConfig) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_element(test.len(), train.num_benchmarks(), self.0))
        }
    }

    struct Truth;

    impl Estimator for Truth {
        fn name(&self) -> String {
            "truth".into()
        }

        fn fit_predict(&self, _: &ScoreTable, test: &[ModelRecord], _: &AsymptoteConfig) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_fn(test.len(), 1, |i, _| test[i].scores[0].unwrap()))
        }
    }

    #[test]
    fn oracle_and_constant_estimators() {
        let t = grid();
        let s = make_splits(&t, 1).unwrap();
        let asy = AsymptoteConfig::fixed([("x", 0.0)]).unwrap();
        let c = Constant(0.5);
        let r = run_cv(&t, &[&Truth, &c], &s, &asy, Some(2)).unwrap();
        let agg = aggregate(&r, Metric::Mae, Level::Overall);
        assert_eq!(agg.rows[0].estimator, "truth");
        assert_eq!(agg.rows[0].value, 0.0);
        // held-out scores 0.2 and 0.3 in every family
        assert!((agg.rows[1].value - 25.0).abs() < 1e-12);

        let swapped = run_cv(&t, &[&c, &Truth], &s, &asy, Some(1)).unwrap();
        let agg2 = aggregate(&swapped, Metric::Mae, Level::Overall);
        let find = |a: &AggregateTable, n: &str| a.rows.iter().find(|r| r.estimator == n).unwrap().value;
        assert_eq!(find(&agg, "const-0.5"), find(&agg2, "const-0.5"));
    }

    fn report_with(cells: Vec<(&str, &str, f64)>) -> CVReport {
        CVReport {
            k_observed: 1,
            estimators: vec!["e".into()],
            benchmarks: vec!["x".into()],
            cells: cells
                .into_iter()
                .enumerate()
                .map(|(i, (f, b, e))| CellError {
                    estimator: "e".into(),
                    family: f.into(),
                    benchmark: b.into(),
                    model_id: format!("m{i}"),
                    prediction: 0.0,
                    actual: 0.0,
                    abs_error: e,
                    ape: None,
                })
                .collect(),
            outcomes: vec![],
            skipped_families: vec![],
            mape_excluded: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn aggregation_order() {
        let r = report_with(vec![("f", "x", 1.0), ("f", "x", 3.0)]);
        assert_eq!(aggregate(&r, Metric::Mae, Level::Overall).rows[0].value, 2.0);
        let r = report_with(vec![("f", "x", 2.0), ("g", "x", 3.0), ("g", "x", 5.0), ("g", "x", 4.0)]);
        assert_eq!(aggregate(&r, Metric::Mae, Level::Overall).rows[0].value, 3.0);
        assert_eq!(aggregate_weighted(&r, Metric::Mae).rows[0].value, 3.5);
        let per = aggregate(&r, Metric::Mae, Level::PerFamily);
        assert_eq!(per.rows.len(), 2);
        assert!(aggregate(&r, Metric::Mape, Level::Overall).empty);
    }

    #[test]
    fn inapplicable_is_recorded() {
        let t = grid();
        let s = make_splits(&t, 1).unwrap();
        let asy = AsymptoteConfig::fixed([("x", 0.0)]).unwrap();
        let e = EstimatorSpec::parse("flops-both", &FitConfig::default()).unwrap();
        let r = run_cv(&t, &[&e], &s, &asy, None).unwrap();
        assert_eq!(r.outcomes.len(), 3);
        assert!(r.outcomes.iter().all(|o| o.status == RunStatus::Inapplicable));
    }

    #[test]
    fn estimator_parsing() {
        let base = FitConfig::default();
        let l = EstimatorSpec::parse_list("sloth,d=2+size-and-tokens+flops-shared+pca-flops,d=1", &base).unwrap();
        let names: Vec<String> = l.iter().map(|e| e.name()).collect();
        assert_eq!(names, ["sloth,d=2", "size-and-tokens", "flops-shared", "pca-flops,d=1"]);
        assert!(EstimatorSpec::parse("sloth,q=1", &base).is_err());
        assert!(EstimatorSpec::parse("nope", &base).is_err());
    }

    #[test]
    fn leakage_is_detected() {
        let mut p = make_splits(&grid(), 1).unwrap().plans.remove(0);
        p.train.push(p.held_out[0].clone());
        assert!(p.check_no_leakage().is_err());
    }
}
