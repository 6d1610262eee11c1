//! Command-line front end for `sloth-core`.
//!
//! Every subcommand reads its inputs, calls the library and writes JSON/CSV
//! artifacts plus a `manifest.json` into `--out`. Exit status is 0 on
//! success, 2 on usage errors and 1 when the library reports an error; in
//! the last case a JSON error record goes to stderr and `error.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use sloth_core::baselines::{clip_unit, predict_baseline, BaselineParams};
use sloth_core::dataset::{
    load_scores, save_scores, validate, AsymptoteConfig, AsymptoteRule, BenchmarkSpec,
    ColumnSchema, DatasetConfig, ModelRecord, ScoreTable, Severity,
};
use sloth_core::design::DesignMatrix;
use sloth_core::downstream::{
    fit_item_models, fit_task_regression, hypothetical_skill, predict_items, predict_pass_at_k,
    predict_task, read_task_csv, skills_for_ids, RegressionConfig, TaskOutcomes,
};
use sloth_core::evaluate::{
    aggregate, make_splits, run_cv, write_plot_data, Estimator, EstimatorSpec, Level, Metric,
};
use sloth_core::fit::{fit, FitConfig};
use sloth_core::identify::{interpret_pipeline_with, RotationConfig};
use sloth_core::model::{predict_scores, skills, SlothParams, Variant, PARAMS_FORMAT};
use sloth_core::optimal::{
    allocation_table, allocations_markdown, training_bounds, write_allocations_csv, BoundsPolicy,
};
use sloth_core::synth::{generate, SynthSpec};
use sloth_core::Error;

const LEVEL_GRID: usize = 50;

#[derive(Parser, Debug)]
#[command(name = "sloth", version, about = "Latent-skill scaling laws for benchmark scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Run configuration (TOML with optional [fit], [rotation], [regression], [synth] tables).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct Data {
    /// Score table (CSV).
    #[arg(long)]
    data: PathBuf,
    /// Dataset configuration (TOML): column names and asymptote rules.
    #[arg(long)]
    asymptotes: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ModelFlags {
    /// Number of latent skills.
    #[arg(long)]
    d: Option<usize>,
    /// basic, trainable-link, shared-intercept or size-and-tokens.
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to a score table.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Predict scores of the models in a table from fitted parameters.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        params: PathBuf,
    },
    /// Family leave-one-out cross-validation.
    Cv {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        model: ModelFlags,
        /// `+`-separated estimators, e.g. `sloth,d=3+flops-shared`.
        #[arg(long, default_value = "sloth,d=3+flops-shared+flops+pca-flops,d=3")]
        estimators: String,
        #[arg(long, default_value_t = 1)]
        k_observed: usize,
        /// mae or mape.
        #[arg(long, default_value = "mae")]
        metric: String,
    },
    /// Whiten, Geomin-rotate and standardize fitted parameters.
    Rotate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        params: PathBuf,
        /// Family whose intercept is used for the level-curve grid.
        #[arg(long)]
        family: Option<String>,
    },
    /// Compute-optimal allocation of FLOPs budgets.
    Optimal {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        params: PathBuf,
        /// Comma-separated budgets in units of 1e19 FLOPs.
        #[arg(long, default_value = "100,578,3346")]
        budgets: String,
        /// Skill index (0-based), comma list, or `all`.
        #[arg(long, default_value = "all")]
        skill: String,
        /// min-max or quantile:LO:HI.
        #[arg(long, default_value = "min-max")]
        bounds_policy: String,
        #[arg(long)]
        family: Option<String>,
    },
    /// Predict a downstream task from skills.
    Downstream {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        params: PathBuf,
        /// CSV with header `model,score`.
        #[arg(long)]
        task: PathBuf,
        /// Hypothetical models as `family:params:tokens`; repeatable.
        #[arg(long)]
        hypothetical: Vec<String>,
    },
    /// pass@k curves from per-question outcomes.
    Passk {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        params: PathBuf,
        /// CSV with header `model,q1,...`: per-question success rates.
        #[arg(long)]
        task: PathBuf,
        /// Model to predict; excluded from training.
        #[arg(long)]
        target: Option<String>,
        /// Hypothetical target as `family:params:tokens`.
        #[arg(long)]
        hypothetical: Option<String>,
        #[arg(long, default_value = "1,10,100,1000")]
        k: String,
    },
    /// Generate a synthetic score table from known parameters.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        families: Option<usize>,
        #[arg(long)]
        models_per_family: Option<usize>,
        #[arg(long)]
        benchmarks: Option<usize>,
    },
    /// Check a score table against its configuration.
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fit { .. } => "fit",
            Command::Predict { .. } => "predict",
            Command::Cv { .. } => "cv",
            Command::Rotate { .. } => "rotate",
            Command::Optimal { .. } => "optimal",
            Command::Downstream { .. } => "downstream",
            Command::Passk { .. } => "passk",
            Command::Synth { .. } => "synth",
            Command::Validate { .. } => "validate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Fit { common, .. }
            | Command::Predict { common, .. }
            | Command::Cv { common, .. }
            | Command::Rotate { common, .. }
            | Command::Optimal { common, .. }
            | Command::Downstream { common, .. }
            | Command::Passk { common, .. }
            | Command::Synth { common, .. }
            | Command::Validate { common, .. } => common,
        }
    }
}

/// Contents of `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub rotation: RotationConfig,
    pub regression: RegressionConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Module(io_error(path, e)))?;
        toml::from_str(&text).map_err(|e| CliError::Module(Error::Config(format!("{}: {e}", path.display()))))
    }

    fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.fit.seed = s;
            self.rotation.seed = s;
            self.synth.seed = s;
        }
    }

    fn apply_model(&mut self, flags: &ModelFlags) -> Result<(), CliError> {
        if let Some(d) = flags.d {
            self.fit.d = d;
        }
        if let Some(v) = &flags.variant {
            self.fit.variant = Variant::parse(v).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Module(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Module(e)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

/// Collects artifacts and bookkeeping for the manifest.
struct Run {
    out: PathBuf,
    outputs: Vec<String>,
    inputs: Vec<String>,
    warnings: Vec<String>,
    timings: BTreeMap<String, f64>,
}

impl Run {
    fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Module(io_error(dir, e)))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::Module(io_error(&path, e)))?;
        self.outputs.push(rel.to_string());
        Ok(())
    }

    fn write_csv(&mut self, rel: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(Error::from)?;
        for r in rows {
            w.write_record(r).map_err(Error::from)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        self.write(rel, bytes)
    }

    fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let v = f();
        self.timings.insert(label.to_string(), t.elapsed().as_secs_f64());
        v
    }
}

fn json_pretty<T: Serialize>(v: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(v).map_err(Error::from)?)
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit status.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let name = cli.command.name();
    let common = cli.command.common().clone();
    let mut run = Run {
        out: common.out.clone(),
        outputs: Vec::new(),
        inputs: Vec::new(),
        warnings: Vec::new(),
        timings: BTreeMap::new(),
    };
    let start = Instant::now();
    let result = with_workers(common.workers, || execute(&cli.command, &mut run));
    let total = start.elapsed().as_secs_f64();
    match result {
        Ok(config) => {
            run.timings.insert("total".into(), total);
            let manifest = json!({
                "tool": "sloth",
                "version": env!("CARGO_PKG_VERSION"),
                "core_version": sloth_core_version(),
                "subcommand": name,
                "argv": args,
                "seed": common.seed,
                "workers": common.workers,
                "config": config,
                "inputs": run.inputs,
                "outputs": run.outputs,
                "warnings": run.warnings,
                "timings_seconds": run.timings,
                "status": "ok",
            });
            match serde_json::to_string_pretty(&manifest) {
                Ok(text) => match run.write("manifest.json", text) {
                    Ok(()) => 0,
                    Err(e) => report_error(name, &common.out, e),
                },
                Err(e) => report_error(name, &common.out, CliError::Module(e.into())),
            }
        }
        Err(e) => report_error(name, &common.out, e),
    }
}

fn sloth_core_version() -> &'static str {
    // Both crates share the workspace version.
    env!("CARGO_PKG_VERSION")
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

fn report_error(subcommand: &str, out: &Path, err: CliError) -> i32 {
    let (code, kind, message) = match &err {
        CliError::Usage(m) => (2, "usage", m.clone()),
        CliError::Module(e) => (1, e.kind(), e.to_string()),
    };
    let record = json!({
        "status": "error",
        "subcommand": subcommand,
        "kind": kind,
        "message": message,
        "exit_code": code,
    });
    eprintln!("{record}");
    if std::fs::create_dir_all(out).is_ok() {
        let _ = std::fs::write(out.join("error.json"), format!("{:#}\n", record));
    }
    code
}

fn execute(cmd: &Command, run: &mut Run) -> Result<serde_json::Value, CliError> {
    let common = cmd.common();
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply_seed(common.seed);
    if let Some(p) = &common.config {
        run.inputs.push(p.display().to_string());
    }
    std::fs::create_dir_all(&common.out).map_err(|e| CliError::Module(io_error(&common.out, e)))?;
    // A record from an earlier failed run in the same directory would be misleading.
    let _ = std::fs::remove_file(common.out.join("error.json"));
    match cmd {
        Command::Fit { data, model, .. } => {
            cfg.apply_model(model)?;
            cmd_fit(run, &cfg, data)?;
            Ok(json!({ "fit": cfg.fit }))
        }
        Command::Predict { data, params, .. } => {
            cmd_predict(run, data, params)?;
            Ok(json!({}))
        }
        Command::Cv { data, model, estimators, k_observed, metric, .. } => {
            cfg.apply_model(model)?;
            cmd_cv(run, &cfg, data, estimators, *k_observed, metric, common.workers)?;
            Ok(json!({ "fit": cfg.fit, "estimators": estimators, "k_observed": k_observed, "metric": metric }))
        }
        Command::Rotate { data, params, family, .. } => {
            cmd_rotate(run, &cfg, data, params, family.as_deref())?;
            Ok(json!({ "rotation": cfg.rotation }))
        }
        Command::Optimal { data, params, budgets, skill, bounds_policy, family, .. } => {
            cmd_optimal(run, data, params, budgets, skill, bounds_policy, family.as_deref())?;
            Ok(json!({ "budgets_1e19": budgets, "skill": skill, "bounds_policy": bounds_policy }))
        }
        Command::Downstream { data, params, task, hypothetical, .. } => {
            cmd_downstream(run, &cfg, data, params, task, hypothetical)?;
            Ok(json!({ "regression": cfg.regression }))
        }
        Command::Passk { data, params, task, target, hypothetical, k, .. } => {
            cmd_passk(run, &cfg, data, params, task, target.as_deref(), hypothetical.as_deref(), k)?;
            Ok(json!({ "regression": cfg.regression, "k": k }))
        }
        Command::Synth { d, noise, families, models_per_family, benchmarks, .. } => {
            let s = &mut cfg.synth;
            if let Some(v) = d {
                s.d = *v;
            }
            if let Some(v) = noise {
                s.noise = *v;
            }
            if let Some(v) = families {
                s.families = *v;
            }
            if let Some(v) = models_per_family {
                s.models_per_family = *v;
            }
            if let Some(v) = benchmarks {
                s.benchmarks = *v;
            }
            cmd_synth(run, &cfg.synth)?;
            Ok(json!({ "synth": cfg.synth }))
        }
        Command::Validate { data, .. } => {
            cmd_validate(run, data)?;
            Ok(json!({}))
        }
    }
}

// --- inputs -----------------------------------------------------------------

struct Loaded {
    table: ScoreTable,
    asymptotes: AsymptoteConfig,
}

fn load_data(run: &mut Run, data: &Data) -> Result<Loaded, CliError> {
    run.inputs.push(data.data.display().to_string());
    let config = match &data.asymptotes {
        Some(p) => {
            run.inputs.push(p.display().to_string());
            Some(DatasetConfig::load(p)?)
        }
        None => None,
    };
    let schema = config.as_ref().map(|c| c.columns.clone()).unwrap_or_else(ColumnSchema::default);
    let table = load_scores(&data.data, &schema)?;
    let asymptotes = match &config {
        Some(c) if !c.benchmarks.is_empty() => c.asymptotes(Some(&table))?,
        _ => {
            run.warnings.push("no asymptote rules given; every lower asymptote is fixed at 0".into());
            AsymptoteConfig::fixed(table.benchmarks().iter().map(|b| (b.as_str(), 0.0)))?
        }
    };
    Ok(Loaded { table, asymptotes })
}

enum AnyParams {
    Sloth(Box<SlothParams>),
    Baseline(Box<BaselineParams>),
}

fn load_params(run: &mut Run, path: &Path) -> Result<AnyParams, CliError> {
    run.inputs.push(path.display().to_string());
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Module(io_error(path, e)))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    if value.get("format").and_then(|f| f.as_str()) != Some(PARAMS_FORMAT) {
        return Err(Error::Validation(format!("{} is not a parameter file", path.display())).into());
    }
    if value.get("model").and_then(|m| m.as_str()) == Some("baseline") {
        Ok(AnyParams::Baseline(Box::new(BaselineParams::from_json(&text)?)))
    } else {
        Ok(AnyParams::Sloth(Box::new(SlothParams::from_json(&text)?)))
    }
}

fn load_sloth(run: &mut Run, path: &Path) -> Result<SlothParams, CliError> {
    match load_params(run, path)? {
        AnyParams::Sloth(p) => Ok(*p),
        AnyParams::Baseline(_) => Err(Error::Inapplicable(format!(
            "{} holds baseline parameters; this command needs a latent-skill model",
            path.display()
        ))
        .into()),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError> {
    let v: Result<Vec<T>, _> = text.split(',').map(|s| s.trim().parse::<T>()).collect();
    match v {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::Usage(format!("cannot parse {what} list `{text}`"))),
    }
}

/// `family:params:tokens`.
fn parse_hypothetical(text: &str) -> Result<(String, f64, f64), CliError> {
    let parts: Vec<&str> = text.rsplitn(3, ':').collect();
    if parts.len() == 3 {
        if let (Ok(t), Ok(s)) = (parts[0].parse::<f64>(), parts[1].parse::<f64>()) {
            return Ok((parts[2].to_string(), s, t));
        }
    }
    Err(CliError::Usage(format!("hypothetical model `{text}` must look like family:params:tokens")))
}

fn design_for(params: &SlothParams, records: &[ModelRecord]) -> Result<DesignMatrix, CliError> {
    Ok(DesignMatrix::for_families(records, &params.families)?)
}

fn skill_names(d: usize) -> Vec<String> {
    (0..d).map(|k| format!("skill{k}")).collect()
}

fn loadings_rows(params: &SlothParams) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["benchmark".to_string()];
    header.extend(skill_names(params.num_skills()));
    let rows = params
        .benchmarks
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let mut r = vec![b.clone()];
            r.extend((0..params.num_skills()).map(|k| num(params.loadings[(j, k)])));
            r
        })
        .collect();
    (header, rows)
}

fn skills_rows(params: &SlothParams, table: &ScoreTable) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let design = design_for(params, table.records())?;
    let sk = skills(params, &design)?;
    let mut header = vec!["model".to_string(), "family".into()];
    header.extend(skill_names(params.num_skills()));
    let rows = table
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![r.model_id.clone(), r.family_id.clone()];
            row.extend((0..params.num_skills()).map(|k| num(sk.values[(i, k)])));
            row
        })
        .collect();
    Ok((header, rows))
}

// --- subcommands ------------------------------------------------------------

fn cmd_fit(run: &mut Run, cfg: &RunConfig, data: &Data) -> Result<(), CliError> {
    let loaded = load_data(run, data)?;
    let (params, report) = run.time("fit", || fit(&loaded.table, &cfg.fit, &loaded.asymptotes))?;
    run.write("params.json", params.to_json()?)?;
    run.write("fit_report.json", json_pretty(&report)?)?;
    let (h, rows) = loadings_rows(&params);
    run.write_csv("loadings.csv", &h, &rows)?;
    let (h, rows) = skills_rows(&params, &loaded.table)?;
    run.write_csv("skills.csv", &h, &rows)?;
    let trace: Vec<Vec<String>> = report.trace.iter().map(|(s, l)| vec![s.to_string(), num(*l)]).collect();
    run.write_csv("plotdata/fit_trace.csv", &["step".into(), "loss".into()], &trace)?;
    run.warnings.extend(report.diagnostics.iter().cloned());
    Ok(())
}

fn cmd_predict(run: &mut Run, data: &Data, params_path: &Path) -> Result<(), CliError> {
    let loaded = load_data(run, data)?;
    let records = loaded.table.records();
    let (benchmarks, pred) = match load_params(run, params_path)? {
        AnyParams::Sloth(p) => {
            let design = design_for(&p, records)?;
            (p.benchmarks.clone(), predict_scores(&p, &design)?)
        }
        AnyParams::Baseline(p) => {
            let raw = predict_baseline(&p, records)?;
            let (clipped, changed) = clip_unit(&raw);
            if changed {
                run.warnings.push("baseline predictions were clipped to [0, 1]".into());
            }
            (p.benchmarks().to_vec(), clipped)
        }
    };
    if benchmarks != loaded.table.benchmarks() {
        return Err(Error::Shape("parameter benchmarks differ from the table's benchmarks".into()).into());
    }
    let mut header = vec!["model".to_string(), "family".into(), "params".into(), "tokens".into()];
    header.extend(benchmarks.iter().cloned());
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let mut row = vec![r.model_id.clone(), r.family_id.clone(), num(r.size), num(r.tokens)];
        row.extend((0..benchmarks.len()).map(|j| num(pred[(i, j)])));
        rows.push(row);
        for (j, b) in benchmarks.iter().enumerate() {
            curves.push(vec![
                r.family_id.clone(),
                r.model_id.clone(),
                num(r.size),
                num(r.tokens),
                b.clone(),
                r.scores[j].map(num).unwrap_or_default(),
                num(pred[(i, j)]),
            ]);
        }
    }
    run.write_csv("predictions.csv", &header, &rows)?;
    let h: Vec<String> = ["family", "model", "params", "tokens", "benchmark", "actual", "predicted"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    run.write_csv("plotdata/prediction_curves.csv", &h, &curves)
}

fn cmd_cv(
    run: &mut Run,
    cfg: &RunConfig,
    data: &Data,
    estimators: &str,
    k_observed: usize,
    metric: &str,
    workers: Option<usize>,
) -> Result<(), CliError> {
    let metric = Metric::parse(metric).map_err(|e| CliError::Usage(e.to_string()))?;
    if !(1..=2).contains(&k_observed) {
        return Err(CliError::Usage(format!("--k-observed must be 1 or 2, got {k_observed}")));
    }
    let specs = EstimatorSpec::parse_list(estimators, &cfg.fit).map_err(|e| CliError::Usage(e.to_string()))?;
    let loaded = load_data(run, data)?;
    let splits = make_splits(&loaded.table, k_observed)?;
    let refs: Vec<&dyn Estimator> = specs.iter().map(|e| e as &dyn Estimator).collect();
    let report = run.time("cv", || run_cv(&loaded.table, &refs, &splits, &loaded.asymptotes, workers))?;
    run.write("splits.json", json_pretty(&splits)?)?;
    run.write("cv_report.json", report.to_json()?)?;
    let mut cells = Vec::new();
    report.write_cells_csv(&mut cells)?;
    run.write("cv_report.csv", cells)?;
    let mut rows = Vec::new();
    for level in [Level::Overall, Level::PerFamily, Level::PerBenchmark] {
        let lvl = match level {
            Level::Overall => "overall",
            Level::PerFamily => "per-family",
            Level::PerBenchmark => "per-benchmark",
        };
        for r in aggregate(&report, metric, level).rows {
            rows.push(vec![
                r.estimator,
                lvl.to_string(),
                r.key.unwrap_or_default(),
                metric.as_str().to_string(),
                num(r.value),
                r.families.to_string(),
            ]);
        }
    }
    let h: Vec<String> = ["estimator", "level", "key", "metric", "value", "families"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    run.write_csv("cv_aggregates.csv", &h, &rows)?;
    let mut bars = Vec::new();
    write_plot_data(&report, metric, &mut bars)?;
    run.write("plotdata/cv_bars.csv", bars)?;
    for o in &report.outcomes {
        if let Some(m) = &o.message {
            run.warnings.push(format!("{} on {}: {m}", o.estimator, o.family));
        }
    }
    Ok(())
}

fn cmd_rotate(
    run: &mut Run,
    cfg: &RunConfig,
    data: &Data,
    params_path: &Path,
    family: Option<&str>,
) -> Result<(), CliError> {
    let loaded = load_data(run, data)?;
    let params = load_sloth(run, params_path)?;
    let design = design_for(&params, loaded.table.records())?;
    let (rotated, result) = run.time("rotate", || interpret_pipeline_with(&params, &design, &cfg.rotation))?;
    run.write("rotated_params.json", rotated.to_json()?)?;
    run.write("rotation.json", result.to_json(&rotated.benchmarks)?)?;
    let (h, rows) = loadings_rows(&rotated);
    run.write_csv("loadings.csv", &h, &rows)?;
    let (h, rows) = skills_rows(&rotated, &loaded.table)?;
    run.write_csv("skills.csv", &h, &rows)?;

    let names = skill_names(rotated.num_skills());
    let heat: Vec<Vec<String>> = rotated
        .benchmarks
        .iter()
        .enumerate()
        .flat_map(|(j, b)| {
            let rotated = &rotated;
            names.iter().enumerate().map(move |(k, s)| vec![b.clone(), s.clone(), num(rotated.loadings[(j, k)])])
        })
        .collect();
    run.write_csv("plotdata/loadings_heatmap.csv", &["benchmark".into(), "skill".into(), "loading".into()], &heat)?;

    let fam = match family {
        Some(f) => f.to_string(),
        None => rotated
            .families
            .first()
            .cloned()
            .ok_or_else(|| Error::Validation("parameters have no families".into()))?,
    };
    let b = training_bounds(&loaded.table, BoundsPolicy::MinMax)?;
    let mut grid = Vec::new();
    for a in 0..LEVEL_GRID {
        let u = b.u_lo + (b.u_hi - b.u_lo) * a as f64 / (LEVEL_GRID - 1) as f64;
        for c in 0..LEVEL_GRID {
            let v = b.v_lo + (b.v_hi - b.v_lo) * c as f64 / (LEVEL_GRID - 1) as f64;
            let sk = rotated.skill_at(&fam, u.exp(), v.exp())?;
            for (k, s) in names.iter().enumerate() {
                grid.push(vec![fam.clone(), s.clone(), num(u), num(v), num(sk[k])]);
            }
        }
    }
    let h: Vec<String> = ["family", "skill", "log_params", "log_tokens", "value"].iter().map(|s| s.to_string()).collect();
    run.write_csv("plotdata/level_curves.csv", &h, &grid)
}

fn cmd_optimal(
    run: &mut Run,
    data: &Data,
    params_path: &Path,
    budgets: &str,
    skill: &str,
    bounds_policy: &str,
    family: Option<&str>,
) -> Result<(), CliError> {
    let budgets: Vec<f64> = parse_list::<f64>(budgets, "budget")?.into_iter().map(|b| b * 1e19).collect();
    let policy = BoundsPolicy::parse(bounds_policy).map_err(|e| CliError::Usage(e.to_string()))?;
    let loaded = load_data(run, data)?;
    let params = load_sloth(run, params_path)?;
    let skills: Vec<usize> = if skill == "all" {
        (0..params.num_skills()).collect()
    } else {
        parse_list(skill, "skill")?
    };
    let bounds = training_bounds(&loaded.table, policy)?;
    let tables = skills
        .iter()
        .map(|&k| allocation_table(&params, k, family, &budgets, bounds))
        .collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> = skills.iter().map(|k| format!("skill{k}")).collect();
    let mut csv_bytes = Vec::new();
    write_allocations_csv(&names, &tables, &mut csv_bytes)?;
    run.write("allocations.csv", csv_bytes)?;
    run.write("allocations.md", allocations_markdown(&names, &tables))?;
    run.write("bounds.json", json_pretty(&bounds)?)
}

fn cmd_downstream(
    run: &mut Run,
    cfg: &RunConfig,
    data: &Data,
    params_path: &Path,
    task: &Path,
    hypothetical: &[String],
) -> Result<(), CliError> {
    let loaded = load_data(run, data)?;
    let params = load_sloth(run, params_path)?;
    run.inputs.push(task.display().to_string());
    let file = std::fs::File::open(task).map_err(|e| CliError::Module(io_error(task, e)))?;
    let ds = read_task_csv(file)?;
    let TaskOutcomes::Task { scores } = &ds.outcomes else {
        return Err(Error::Validation("downstream needs a `model,score` file; use passk for per-question files".into()).into());
    };
    let sk = skills_for_ids(&params, loaded.table.records(), &ds.model_ids)?;
    let reg = fit_task_regression(&sk, scores, &cfg.regression)?;

    let mut rows = Vec::new();
    for (i, id) in ds.model_ids.iter().enumerate() {
        let row: Vec<f64> = sk.row(i).iter().copied().collect();
        let fitted = predict_task(&reg, &row)?;
        // Leave this model out and refit, when enough models remain.
        let loo = if ds.model_ids.len() > 2 {
            let keep: Vec<usize> = (0..ds.model_ids.len()).filter(|&r| r != i).collect();
            let sub = sk.select_rows(keep.iter());
            let ys: Vec<f64> = keep.iter().map(|&r| scores[r]).collect();
            num(predict_task(&fit_task_regression(&sub, &ys, &cfg.regression)?, &row)?)
        } else {
            String::new()
        };
        rows.push(vec![id.clone(), "observed".into(), num(scores[i]), num(fitted), loo]);
    }
    for h in hypothetical {
        let (fam, s, t) = parse_hypothetical(h)?;
        let skill = hypothetical_skill(&params, &fam, s, t)?;
        let p = predict_task(&reg, skill.as_slice())?;
        rows.push(vec![format!("{fam}:{s:e}:{t:e}"), "hypothetical".into(), String::new(), num(p), String::new()]);
    }
    run.write("downstream.json", json_pretty(&json!({ "regression": reg, "models": ds.model_ids }))?)?;
    let h: Vec<String> = ["model", "kind", "actual", "predicted", "loo_predicted"].iter().map(|s| s.to_string()).collect();
    run.write_csv("downstream_predictions.csv", &h, &rows)?;
    run.warnings.extend(reg.warnings.iter().cloned());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_passk(
    run: &mut Run,
    cfg: &RunConfig,
    data: &Data,
    params_path: &Path,
    task: &Path,
    target: Option<&str>,
    hypothetical: Option<&str>,
    k: &str,
) -> Result<(), CliError> {
    let ks: Vec<u64> = parse_list(k, "k")?;
    if target.is_some() == hypothetical.is_some() {
        return Err(CliError::Usage("give exactly one of --target or --hypothetical".into()));
    }
    let loaded = load_data(run, data)?;
    let params = load_sloth(run, params_path)?;
    run.inputs.push(task.display().to_string());
    let file = std::fs::File::open(task).map_err(|e| CliError::Module(io_error(task, e)))?;
    let ds = read_task_csv(file)?;
    let TaskOutcomes::Items { questions, rates } = &ds.outcomes else {
        return Err(Error::Validation("passk needs a per-question file `model,q1,...`".into()).into());
    };
    let train_idx: Vec<usize> = (0..ds.model_ids.len())
        .filter(|&i| Some(ds.model_ids[i].as_str()) != target)
        .collect();
    let train_ids: Vec<String> = train_idx.iter().map(|&i| ds.model_ids[i].clone()).collect();
    let sk = skills_for_ids(&params, loaded.table.records(), &train_ids)?;
    let outcomes = nalgebra::DMatrix::from_fn(train_idx.len(), questions.len(), |r, q| rates[train_idx[r]][q]);
    let models = run.time("item_models", || fit_item_models(&sk, &outcomes, &cfg.regression))?;

    let (label, skill, observed) = match (target, hypothetical) {
        (Some(id), _) => {
            let s = skills_for_ids(&params, loaded.table.records(), &[id.to_string()])?;
            let observed = ds.model_ids.iter().position(|m| m == id).map(|i| rates[i].clone());
            (id.to_string(), s.row(0).iter().copied().collect::<Vec<f64>>(), observed)
        }
        (None, Some(h)) => {
            let (fam, s, t) = parse_hypothetical(h)?;
            (h.to_string(), hypothetical_skill(&params, &fam, s, t)?.iter().copied().collect(), None)
        }
        _ => unreachable!("checked above"),
    };
    let p_hat = predict_items(&models, &skill)?;
    let predicted = predict_pass_at_k(&p_hat, &ks)?;
    let actual = observed.as_ref().map(|o| predict_pass_at_k(o, &ks)).transpose()?;
    let rows: Vec<Vec<String>> = ks
        .iter()
        .enumerate()
        .map(|(i, k)| {
            vec![
                label.clone(),
                k.to_string(),
                num(predicted[i]),
                actual.as_ref().map(|a| num(a[i])).unwrap_or_default(),
            ]
        })
        .collect();
    let h: Vec<String> = ["target", "k", "pass_at_k", "observed_pass_at_k"].iter().map(|s| s.to_string()).collect();
    run.write_csv("passk.csv", &h, &rows)?;

    let kmax = ks.iter().copied().max().unwrap_or(1).max(2);
    let mut grid: Vec<u64> = (0..LEVEL_GRID)
        .map(|i| ((kmax as f64).ln() * i as f64 / (LEVEL_GRID - 1) as f64).exp().round() as u64)
        .collect();
    grid.dedup();
    let curve = predict_pass_at_k(&p_hat, &grid)?;
    let curve_rows: Vec<Vec<String>> = grid.iter().zip(&curve).map(|(k, v)| vec![label.clone(), k.to_string(), num(*v)]).collect();
    run.write_csv("plotdata/passk_curves.csv", &["target".into(), "k".into(), "pass_at_k".into()], &curve_rows)?;

    let mut per_q = String::from("question,p_hat\n");
    for (q, p) in questions.iter().zip(&p_hat) {
        let _ = writeln!(per_q, "{q},{}", num(*p));
    }
    run.write("item_predictions.csv", per_q)?;
    run.write("item_models.json", json_pretty(&json!({ "questions": questions, "models": models, "training_models": train_ids }))?)
}

fn cmd_synth(run: &mut Run, spec: &SynthSpec) -> Result<(), CliError> {
    let out = run.time("generate", || generate(spec))?;
    let mut scores = Vec::new();
    sloth_core::dataset::write_scores(&out.table, &mut scores)?;
    run.write("scores.csv", scores)?;
    let config = DatasetConfig {
        columns: ColumnSchema::default(),
        benchmarks: out
            .truth
            .benchmarks
            .iter()
            .zip(&out.truth.gammas)
            .map(|(b, g)| BenchmarkSpec {
                name: b.clone(),
                rule: AsymptoteRule::Value { gamma: g.gamma },
                mode: g.mode,
            })
            .collect(),
    };
    run.write("asymptotes.toml", config.to_toml_string()?)?;
    run.write("truth_params.json", out.truth.to_json()?)?;
    run.write("synth_report.json", json_pretty(&out.report)?)?;
    let mut header = vec!["model".to_string()];
    header.extend(out.table.benchmarks().iter().cloned());
    let rows: Vec<Vec<String>> = out
        .table
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![r.model_id.clone()];
            row.extend((0..out.noiseless.ncols()).map(|j| num(out.noiseless[(i, j)])));
            row
        })
        .collect();
    run.write_csv("noiseless.csv", &header, &rows)
}

fn cmd_validate(run: &mut Run, data: &Data) -> Result<(), CliError> {
    let loaded = load_data(run, data)?;
    let diags = validate(&loaded.table, &loaded.asymptotes);
    run.write("diagnostics.json", json_pretty(&diags)?)?;
    let errors: Vec<&str> = diags
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.message.as_str())
        .collect();
    for d in diags.iter().filter(|d| d.severity == Severity::Warning) {
        run.warnings.push(format!("{}: {}", d.code, d.message));
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{} problem(s): {}", errors.len(), errors.join("; "))).into())
    }
}

/// Writes `table` as CSV; used by tests and scripts that build tables in code.
pub fn write_table(table: &ScoreTable, path: &Path) -> sloth_core::Result<()> {
    save_scores(table, path)
}

/// Reads a run configuration document.
pub fn parse_run_config(text: &str) -> sloth_core::Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}
