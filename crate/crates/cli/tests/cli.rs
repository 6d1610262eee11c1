use std::path::{Path, PathBuf};
use std::process::Command;

use sloth_core::dataset::{load_scores, DatasetConfig};
use sloth_core::evaluate::{aggregate, make_splits, run_cv, Estimator, EstimatorSpec, Level, Metric};
use sloth_core::fit::{fit, FitConfig};
use sloth_cli::{dispatch, parse_run_config};

const CONFIG: &str = "[fit]\nrestarts = 2\nmax_steps = 3000\n";

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// Synthetic table, dataset config and a fast run config on disk.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("syn");
        let code = run(&[
            "synth", "--out", s(&out), "--families", "6", "--models-per-family", "4", "--benchmarks", "6",
            "--seed", "5",
        ]);
        assert_eq!(code, 0);
        std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        Fixture { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn data_args(&self) -> Vec<String> {
        vec![
            "--data".into(),
            s(&self.path("syn/scores.csv")).into(),
            "--asymptotes".into(),
            s(&self.path("syn/asymptotes.toml")).into(),
            "--config".into(),
            s(&self.path("run.toml")).into(),
        ]
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["sloth".to_string()];
    argv.extend(args.iter().map(|a| a.to_string()));
    dispatch(argv)
}

fn run_with(args: &[&str], extra: &[String]) -> i32 {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(extra.iter().map(String::as_str));
    run(&all)
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn fit_is_deterministic_and_matches_library() {
    let fx = Fixture::new();
    for name in ["a", "b"] {
        let out = fx.path(name);
        assert_eq!(run_with(&["fit", "--out", s(&out), "--seed", "11", "--d", "3"], &fx.data_args()), 0);
    }
    let a = read(fx.path("a/params.json"));
    assert_eq!(a, read(fx.path("b/params.json")));
    for f in ["fit_report.json", "loadings.csv", "skills.csv", "plotdata/fit_trace.csv", "manifest.json"] {
        assert!(fx.path("a").join(f).is_file(), "missing {f}");
    }

    let config = DatasetConfig::load(fx.path("syn/asymptotes.toml")).unwrap();
    let table = load_scores(fx.path("syn/scores.csv"), &config.columns).unwrap();
    let asy = config.asymptotes(Some(&table)).unwrap();
    let mut cfg: FitConfig = parse_run_config(CONFIG).unwrap().fit;
    cfg.seed = 11;
    cfg.d = 3;
    let (params, _) = fit(&table, &cfg, &asy).unwrap();
    assert_eq!(a, params.to_json().unwrap());

    let manifest: serde_json::Value = serde_json::from_str(&read(fx.path("a/manifest.json"))).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["fit"]["restarts"], 2);
    assert!(manifest["timings_seconds"]["fit"].as_f64().unwrap() >= 0.0);
}

#[test]
fn cv_aggregates_match_library_run() {
    let fx = Fixture::new();
    let out = fx.path("cv");
    let estimators = "sloth,d=3+flops-shared";
    assert_eq!(run_with(&["cv", "--out", s(&out), "--estimators", estimators], &fx.data_args()), 0);

    let config = DatasetConfig::load(fx.path("syn/asymptotes.toml")).unwrap();
    let table = load_scores(fx.path("syn/scores.csv"), &config.columns).unwrap();
    let asy = config.asymptotes(Some(&table)).unwrap();
    let cfg = parse_run_config(CONFIG).unwrap().fit;
    let specs = EstimatorSpec::parse_list(estimators, &cfg).unwrap();
    let refs: Vec<&dyn Estimator> = specs.iter().map(|e| e as &dyn Estimator).collect();
    let splits = make_splits(&table, 1).unwrap();
    let report = run_cv(&table, &refs, &splits, &asy, None).unwrap();

    assert_eq!(read(out.join("cv_report.json")), report.to_json().unwrap());
    let mut cells = Vec::new();
    report.write_cells_csv(&mut cells).unwrap();
    assert_eq!(read(out.join("cv_report.csv")).into_bytes(), cells);

    let mut rdr = csv::Reader::from_path(out.join("cv_aggregates.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let mut checked = 0;
    for (level, tag) in [(Level::Overall, "overall"), (Level::PerFamily, "per-family"), (Level::PerBenchmark, "per-benchmark")] {
        for expect in aggregate(&report, Metric::Mae, level).rows {
            let key = expect.key.clone().unwrap_or_default();
            let row = rows
                .iter()
                .find(|r| r[0] == expect.estimator && &r[1] == tag && r[2] == key)
                .unwrap_or_else(|| panic!("no row for {} {tag} {key}", expect.estimator));
            assert_eq!(row[4].parse::<f64>().unwrap(), expect.value);
            checked += 1;
        }
    }
    assert_eq!(checked, rows.len());
    assert!(out.join("plotdata/cv_bars.csv").is_file());
}

#[test]
fn optimal_rows_spend_the_budget() {
    let fx = Fixture::new();
    let fit_out = fx.path("fit");
    assert_eq!(run_with(&["fit", "--out", s(&fit_out)], &fx.data_args()), 0);
    let out = fx.path("opt");
    let params = fit_out.join("params.json");
    let code = run_with(
        &["optimal", "--out", s(&out), "--params", s(&params), "--budgets", "100,578,3346", "--skill", "1"],
        &fx.data_args(),
    );
    assert_eq!(code, 0);
    let mut rdr = csv::Reader::from_path(out.join("allocations.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for (row, c) in rows.iter().zip([100.0, 578.0, 3346.0]) {
        assert_eq!(&row[0], "skill1");
        let size = row[2].parse::<f64>().unwrap() * 1e9;
        let tokens = row[3].parse::<f64>().unwrap() * 1e12;
        let budget = c * 1e19;
        assert!((6.0 * size * tokens - budget).abs() <= 1e-9 * budget, "{row:?}");
    }
    assert!(read(out.join("allocations.md")).contains("| 3346 |"));
}

#[test]
fn other_subcommands_write_their_artifacts() {
    let fx = Fixture::new();
    let fit_out = fx.path("fit");
    assert_eq!(run_with(&["fit", "--out", s(&fit_out)], &fx.data_args()), 0);
    let params = fit_out.join("params.json");

    assert_eq!(run_with(&["rotate", "--out", s(&fx.path("rot")), "--params", s(&params)], &fx.data_args()), 0);
    let level = read(fx.path("rot/plotdata/level_curves.csv"));
    assert_eq!(level.lines().count(), 1 + 50 * 50 * 3);

    assert_eq!(run_with(&["predict", "--out", s(&fx.path("pred")), "--params", s(&params)], &fx.data_args()), 0);
    assert_eq!(read(fx.path("pred/predictions.csv")).lines().count(), 1 + 24);

    // Downstream score is a fixed blend of two benchmarks.
    let table = read(fx.path("syn/scores.csv"));
    let mut task = String::from("model,score\n");
    let mut items = String::from("model,q0,q1,q2\n");
    for line in table.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (a, b): (f64, f64) = (f[6].parse().unwrap(), f[7].parse().unwrap());
        task.push_str(&format!("{},{}\n", f[0], 0.5 * (a + b)));
        items.push_str(&format!("{},{},{},{}\n", f[0], a, b, a * b));
    }
    std::fs::write(fx.path("task.csv"), task).unwrap();
    std::fs::write(fx.path("items.csv"), items).unwrap();
    let task_path = fx.path("task.csv");
    let code = run_with(
        &["downstream", "--out", s(&fx.path("ds")), "--params", s(&params), "--task", s(&task_path), "--hypothetical", "fam01:3e9:1e12"],
        &fx.data_args(),
    );
    assert_eq!(code, 0);
    assert_eq!(read(fx.path("ds/downstream_predictions.csv")).lines().count(), 1 + 24 + 1);

    let items_path = fx.path("items.csv");
    let code = run_with(
        &["passk", "--out", s(&fx.path("pk")), "--params", s(&params), "--task", s(&items_path), "--target", "fam02-m1"],
        &fx.data_args(),
    );
    assert_eq!(code, 0);
    let pk = read(fx.path("pk/passk.csv"));
    let vals: Vec<f64> = pk.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(vals.len(), 4);
    assert!(vals.windows(2).all(|w| w[0] <= w[1]));

    assert_eq!(run_with(&["validate", "--out", s(&fx.path("val"))], &fx.data_args()), 0);
    assert!(fx.path("val/diagnostics.json").is_file());
}

#[test]
fn inputs_are_not_modified() {
    let fx = Fixture::new();
    let before: Vec<Vec<u8>> = ["syn/scores.csv", "syn/asymptotes.toml", "run.toml"]
        .iter()
        .map(|f| std::fs::read(fx.path(f)).unwrap())
        .collect();
    assert_eq!(run_with(&["fit", "--out", s(&fx.path("fit"))], &fx.data_args()), 0);
    let after: Vec<Vec<u8>> = ["syn/scores.csv", "syn/asymptotes.toml", "run.toml"]
        .iter()
        .map(|f| std::fs::read(fx.path(f)).unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_sloth"))
        .args(["fit", "--out", s(dir.path()), "--data", "x.csv", "--no-such-flag"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("--no-such-flag"));

    // Malformed flag values are usage errors too.
    assert_eq!(run(&["optimal", "--out", s(dir.path()), "--data", "x.csv", "--params", "p.json", "--budgets", "1,two"]), 2);
    assert_eq!(run(&["--help"]), 0);
}

#[test]
fn module_error_exits_one_with_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("missing.csv");
    let output = Command::new(env!("CARGO_BIN_EXE_sloth"))
        .args(["fit", "--out", s(&out), "--data", s(&missing)])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8(output.stderr).unwrap();
    let record: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(record["status"], "error");
    assert_eq!(record["subcommand"], "fit");
    assert_eq!(record["kind"], "io");
    let on_disk: serde_json::Value = serde_json::from_str(&read(out.join("error.json"))).unwrap();
    assert_eq!(on_disk, record);
    assert!(!out.join("manifest.json").exists());

    // Out-of-range scores are rejected while loading.
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "model,family,base_family,version_group,params,tokens,b0\nm0,f0,f0,f0,1e9,1e11,1.5\n").unwrap();
    assert_eq!(run(&["validate", "--out", s(&dir.path().join("load")), "--data", s(&bad)]), 1);

    // A benchmark without an asymptote rule is an error-level diagnostic.
    let table = dir.path().join("t.csv");
    std::fs::write(&table, "model,family,base_family,version_group,params,tokens,b0,b1\nm0,f0,f0,f0,1e9,1e11,0.5,0.2\nm1,f0,f0,f0,2e9,1e11,0.6,0.3\n").unwrap();
    let cfg = dir.path().join("asy.toml");
    std::fs::write(&cfg, "[[benchmarks]]\nname = \"b0\"\nkind = \"multiple-choice\"\nchoices = 4\n").unwrap();
    let val = dir.path().join("val");
    assert_eq!(run(&["validate", "--out", s(&val), "--data", s(&table), "--asymptotes", s(&cfg)]), 1);
    let diags: serde_json::Value = serde_json::from_str(&read(val.join("diagnostics.json"))).unwrap();
    assert!(diags.as_array().unwrap().iter().any(|d| d["severity"] == "error"), "{diags}");
    let rec: serde_json::Value = serde_json::from_str(&read(val.join("error.json"))).unwrap();
    assert_eq!(rec["kind"], "validation");
}
