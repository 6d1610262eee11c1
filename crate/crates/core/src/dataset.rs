//! Benchmark score tables and lower-asymptote configuration.
//!
//! The canonical input is a CSV file with a header row. Required columns are
//! `model, family, base_family, version_group, params, tokens`; every other
//! column is a benchmark. Empty cells are missing scores and stay missing:
//! they are never read as zero. Parameter and token counts are stored in
//! absolute units; a [`ColumnSchema`] may declare a scale factor when the
//! file uses billions or trillions.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// One evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    pub family_id: String,
    /// Groups a base family with its instruction-tuned siblings.
    pub base_family_id: String,
    /// Lineage of a vendor's model generations, written `line` or
    /// `line:generation` (e.g. `llama:3`). See [`ModelRecord::version`].
    pub version_group: String,
    /// Parameter count, absolute.
    pub size: f64,
    /// Training tokens, absolute.
    pub tokens: f64,
    /// Scores aligned with the owning table's benchmark list.
    pub scores: Vec<Option<f64>>,
}

impl ModelRecord {
    /// Splits `version_group` into `(line, generation)`. A group without a
    /// `:generation` suffix has generation 0.
    pub fn version(&self) -> (&str, f64) {
        parse_version(&self.version_group)
    }
}

pub(crate) fn parse_version(group: &str) -> (&str, f64) {
    match group.rsplit_once(':') {
        Some((line, gen)) => match gen.trim().parse::<f64>() {
            Ok(g) => (line, g),
            Err(_) => (group, 0.0),
        },
        None => (group, 0.0),
    }
}

/// A validated table of benchmark scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    benchmarks: Vec<String>,
    records: Vec<ModelRecord>,
}

impl ScoreTable {
    pub fn new(benchmarks: Vec<String>, records: Vec<ModelRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for b in &benchmarks {
            if !seen.insert(b.as_str()) {
                return Err(Error::Validation(format!("duplicate benchmark `{b}`")));
            }
        }
        let mut ids = HashSet::new();
        for r in &records {
            if !ids.insert(r.model_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate model_id `{}`",
                    r.model_id
                )));
            }
            if r.scores.len() != benchmarks.len() {
                return Err(Error::Shape(format!(
                    "model `{}` has {} scores for {} benchmarks",
                    r.model_id,
                    r.scores.len(),
                    benchmarks.len()
                )));
            }
            if !(r.size > 0.0 && r.size.is_finite()) {
                return Err(Error::Validation(format!(
                    "model `{}`: params must be positive, got {}",
                    r.model_id, r.size
                )));
            }
            if !(r.tokens > 0.0 && r.tokens.is_finite()) {
                return Err(Error::Validation(format!(
                    "model `{}`: tokens must be positive, got {}",
                    r.model_id, r.tokens
                )));
            }
            for (j, s) in r.scores.iter().enumerate() {
                if let Some(v) = s {
                    if !(0.0..=1.0).contains(v) {
                        return Err(Error::Validation(format!(
                            "model `{}`, benchmark `{}`: score {} outside [0,1]",
                            r.model_id, benchmarks[j], v
                        )));
                    }
                }
            }
        }
        Ok(ScoreTable {
            benchmarks,
            records,
        })
    }

    pub fn benchmarks(&self) -> &[String] {
        &self.benchmarks
    }

    pub fn records(&self) -> &[ModelRecord] {
        &self.records
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn num_benchmarks(&self) -> usize {
        self.benchmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn benchmark_index(&self, name: &str) -> Option<usize> {
        self.benchmarks.iter().position(|b| b == name)
    }

    pub fn record(&self, model_id: &str) -> Option<&ModelRecord> {
        self.records.iter().find(|r| r.model_id == model_id)
    }

    /// Distinct family ids, sorted.
    pub fn families(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.family_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Count of records per family.
    pub fn family_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.family_id.clone()).or_insert(0) += 1;
        }
        out
    }

    /// A new table holding the records accepted by `keep`, in order.
    pub fn filter(&self, mut keep: impl FnMut(&ModelRecord) -> bool) -> ScoreTable {
        ScoreTable {
            benchmarks: self.benchmarks.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// A new table restricted to the named benchmarks (in the given order).
    pub fn select_benchmarks(&self, names: &[String]) -> Result<ScoreTable> {
        let idx = names
            .iter()
            .map(|n| {
                self.benchmark_index(n)
                    .ok_or_else(|| Error::Validation(format!("unknown benchmark `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let records = self
            .records
            .iter()
            .map(|r| ModelRecord {
                scores: idx.iter().map(|&j| r.scores[j]).collect(),
                ..r.clone()
            })
            .collect();
        ScoreTable::new(names.to_vec(), records)
    }

    /// Number of present score cells.
    pub fn observed_cells(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.scores.iter().filter(|s| s.is_some()).count())
            .sum()
    }
}

/// Maps CSV columns to record roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSchema {
    pub model: String,
    pub family: String,
    pub base_family: String,
    pub version_group: String,
    pub params: String,
    pub tokens: String,
    /// Multiplier turning the params column into absolute counts.
    pub params_scale: f64,
    /// Multiplier turning the tokens column into absolute counts.
    pub tokens_scale: f64,
    /// Benchmark columns to read; all remaining columns when absent.
    pub benchmarks: Option<Vec<String>>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            model: "model".into(),
            family: "family".into(),
            base_family: "base_family".into(),
            version_group: "version_group".into(),
            params: "params".into(),
            tokens: "tokens".into(),
            params_scale: 1.0,
            tokens_scale: 1.0,
            benchmarks: None,
        }
    }
}

/// Reads a score table from a CSV file.
pub fn load_scores(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<ScoreTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores(file, schema)
}

/// Reads a score table from any CSV source.
pub fn read_scores<R: Read>(reader: R, schema: &ColumnSchema) -> Result<ScoreTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 1,
            column: name.to_string(),
            message: "required column missing from header".into(),
        })
    };
    let roles = [
        &schema.model,
        &schema.family,
        &schema.base_family,
        &schema.version_group,
        &schema.params,
        &schema.tokens,
    ];
    let (c_model, c_family, c_base, c_version, c_params, c_tokens) = (
        col(&schema.model)?,
        col(&schema.family)?,
        col(&schema.base_family)?,
        col(&schema.version_group)?,
        col(&schema.params)?,
        col(&schema.tokens)?,
    );
    let benchmarks: Vec<String> = match &schema.benchmarks {
        Some(list) => list.clone(),
        None => headers
            .iter()
            .filter(|h| !roles.iter().any(|r| r.as_str() == h.as_str()))
            .cloned()
            .collect(),
    };
    let bench_cols = benchmarks
        .iter()
        .map(|b| col(b))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell = |c: usize| row.get(c).unwrap_or("");
        let text = |c: usize, name: &str| -> Result<String> {
            let v = cell(c);
            if v.is_empty() {
                Err(Error::Parse {
                    row: line,
                    column: name.to_string(),
                    message: "empty value".into(),
                })
            } else {
                Ok(v.to_string())
            }
        };
        let positive = |c: usize, name: &str, scale: f64| -> Result<f64> {
            let raw = cell(c);
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row: line,
                column: name.to_string(),
                message: format!("cannot parse `{raw}` as a number"),
            })?;
            let v = v * scale;
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parse {
                    row: line,
                    column: name.to_string(),
                    message: format!("value must be positive, got `{raw}`"),
                });
            }
            Ok(v)
        };
        let model_id = text(c_model, &schema.model)?;
        let family_id = text(c_family, &schema.family)?;
        let base = cell(c_base);
        let version = cell(c_version);
        let size = positive(c_params, &schema.params, schema.params_scale)?;
        let tokens = positive(c_tokens, &schema.tokens, schema.tokens_scale)?;
        let mut scores = Vec::with_capacity(bench_cols.len());
        for (b, &c) in benchmarks.iter().zip(&bench_cols) {
            let raw = cell(c);
            if raw.is_empty() {
                scores.push(None);
                continue;
            }
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row: line,
                column: b.clone(),
                message: format!("cannot parse `{raw}` as a score"),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "row {line}, column `{b}`: score {v} outside [0,1]"
                )));
            }
            scores.push(Some(v));
        }
        if !ids.insert(model_id.clone()) {
            return Err(Error::Validation(format!(
                "row {line}: duplicate model_id `{model_id}`"
            )));
        }
        records.push(ModelRecord {
            base_family_id: if base.is_empty() {
                family_id.clone()
            } else {
                base.to_string()
            },
            version_group: if version.is_empty() {
                family_id.clone()
            } else {
                version.to_string()
            },
            model_id,
            family_id,
            size,
            tokens,
            scores,
        });
    }
    ScoreTable::new(benchmarks, records)
}

/// Writes the table in the canonical CSV layout (absolute units).
///
/// Numbers use the shortest round-trip representation, so reading the
/// output back yields bit-identical values.
pub fn write_scores<W: Write>(table: &ScoreTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "model".to_string(),
        "family".into(),
        "base_family".into(),
        "version_group".into(),
        "params".into(),
        "tokens".into(),
    ];
    header.extend(table.benchmarks.iter().cloned());
    w.write_record(&header)?;
    for r in &table.records {
        let mut row = vec![
            r.model_id.clone(),
            r.family_id.clone(),
            r.base_family_id.clone(),
            r.version_group.clone(),
            format!("{:?}", r.size),
            format!("{:?}", r.tokens),
        ];
        row.extend(
            r.scores
                .iter()
                .map(|s| s.map(|v| format!("{v:?}")).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_scores(table: &ScoreTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_scores(table, std::io::BufWriter::new(file))
}

/// Whether a lower asymptote is held fixed or optimized during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    #[default]
    Fixed,
    Trainable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoteEntry {
    /// Lower asymptote in `[0, 1)`; the initial value when trainable.
    pub gamma: f64,
    pub mode: GammaMode,
}

/// Per-benchmark lower asymptotes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AsymptoteConfig {
    entries: BTreeMap<String, AsymptoteEntry>,
}

impl AsymptoteConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, benchmark: impl Into<String>, entry: AsymptoteEntry) -> Result<()> {
        if !(0.0..1.0).contains(&entry.gamma) {
            return Err(Error::Validation(format!(
                "asymptote {} outside [0,1)",
                entry.gamma
            )));
        }
        self.entries.insert(benchmark.into(), entry);
        Ok(())
    }

    /// Convenience constructor for a fully fixed configuration.
    pub fn fixed<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self> {
        let mut cfg = Self::new();
        for (b, g) in pairs {
            cfg.insert(
                b,
                AsymptoteEntry {
                    gamma: g,
                    mode: GammaMode::Fixed,
                },
            )?;
        }
        Ok(cfg)
    }

    pub fn get(&self, benchmark: &str) -> Option<&AsymptoteEntry> {
        self.entries.get(benchmark)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &AsymptoteEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries for `benchmarks` in order; errors on the first missing one.
    pub fn for_benchmarks(&self, benchmarks: &[String]) -> Result<Vec<AsymptoteEntry>> {
        benchmarks
            .iter()
            .map(|b| {
                self.get(b).copied().ok_or_else(|| {
                    Error::Validation(format!("no asymptote configured for benchmark `{b}`"))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subsection {
    pub choices: u32,
    /// Relative weight, usually the item count of the subsection.
    pub weight: f64,
}

/// How a benchmark's default lower asymptote is derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AsymptoteRule {
    /// Chance rate of a single multiple-choice section.
    MultipleChoice { choices: u32 },
    /// Item-weighted average of per-section chance rates.
    Subsections { sections: Vec<Subsection> },
    /// Free-form answers: no chance floor.
    Generative,
    /// Empirical lower percentile of a reference score sample.
    Percentile {
        #[serde(default = "default_percentile")]
        percentile: f64,
        #[serde(default)]
        scores: Option<Vec<f64>>,
    },
    /// Explicit value.
    Value { gamma: f64 },
}

fn default_percentile() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub name: String,
    #[serde(flatten)]
    pub rule: AsymptoteRule,
    #[serde(default)]
    pub mode: GammaMode,
}

/// Derives per-benchmark asymptotes from choice counts.
///
/// `percentile_scores` supplies reference samples for percentile-mode
/// benchmarks that do not carry their own inline `scores`.
pub fn default_asymptotes(
    specs: &[BenchmarkSpec],
    percentile_scores: &BTreeMap<String, Vec<f64>>,
) -> Result<AsymptoteConfig> {
    let mut cfg = AsymptoteConfig::new();
    for spec in specs {
        let gamma = match &spec.rule {
            AsymptoteRule::MultipleChoice { choices } => {
                if *choices < 2 {
                    return Err(Error::Config(format!(
                        "benchmark `{}`: need at least 2 choices",
                        spec.name
                    )));
                }
                1.0 / f64::from(*choices)
            }
            AsymptoteRule::Subsections { sections } => {
                if sections.is_empty() {
                    return Err(Error::Config(format!(
                        "benchmark `{}`: empty subsection list",
                        spec.name
                    )));
                }
                let mut num = 0.0;
                let mut den = 0.0;
                for s in sections {
                    if s.choices < 2 || !(s.weight > 0.0) {
                        return Err(Error::Config(format!(
                            "benchmark `{}`: subsections need >= 2 choices and positive weight",
                            spec.name
                        )));
                    }
                    num += s.weight * (1.0 / f64::from(s.choices));
                    den += s.weight;
                }
                num / den
            }
            AsymptoteRule::Generative => 0.0,
            AsymptoteRule::Percentile { percentile, scores } => {
                let sample = scores
                    .as_ref()
                    .or_else(|| percentile_scores.get(&spec.name))
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "benchmark `{}`: percentile mode needs a non-empty score list",
                            spec.name
                        ))
                    })?;
                if sample.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config(format!(
                        "benchmark `{}`: non-finite reference score",
                        spec.name
                    )));
                }
                stats::quantile(sample, percentile / 100.0).ok_or_else(|| {
                    Error::Config(format!(
                        "benchmark `{}`: percentile {percentile} outside [0,100]",
                        spec.name
                    ))
                })?
            }
            AsymptoteRule::Value { gamma } => *gamma,
        };
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!(
                "benchmark `{}`: derived asymptote {gamma} outside [0,1)",
                spec.name
            )));
        }
        cfg.insert(
            spec.name.clone(),
            AsymptoteEntry {
                gamma,
                mode: spec.mode,
            },
        )?;
    }
    Ok(cfg)
}

/// The sidecar configuration document: column roles plus per-benchmark
/// asymptote rules. Stored as TOML.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub columns: ColumnSchema,
    pub benchmarks: Vec<BenchmarkSpec>,
}

impl DatasetConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Resolves asymptotes, drawing percentile samples from `table` columns
    /// when a percentile rule has no inline scores.
    pub fn asymptotes(&self, table: Option<&ScoreTable>) -> Result<AsymptoteConfig> {
        let mut samples = BTreeMap::new();
        if let Some(t) = table {
            for spec in &self.benchmarks {
                if let (AsymptoteRule::Percentile { scores: None, .. }, Some(j)) =
                    (&spec.rule, t.benchmark_index(&spec.name))
                {
                    let col: Vec<f64> = t.records().iter().filter_map(|r| r.scores[j]).collect();
                    samples.insert(spec.name.clone(), col);
                }
            }
        }
        default_asymptotes(&self.benchmarks, &samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

/// Consistency report for a table and its asymptote configuration.
/// Never mutates either input.
pub fn validate(table: &ScoreTable, config: &AsymptoteConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for b in table.benchmarks() {
        if config.get(b).is_none() {
            out.push(Diagnostic {
                severity: Severity::Error,
                code: "missing-asymptote".into(),
                message: format!("benchmark `{b}` has no configured asymptote"),
            });
        }
    }
    let mut complete: BTreeMap<&str, usize> = BTreeMap::new();
    for r in table.records() {
        let c = complete.entry(r.family_id.as_str()).or_insert(0);
        if r.scores.iter().all(Option::is_some) {
            *c += 1;
        }
    }
    for (fam, count) in complete {
        if count == 0 {
            out.push(Diagnostic {
                severity: Severity::Warning,
                code: "no-complete-rows".into(),
                message: format!("family `{fam}` has no record with every benchmark present"),
            });
        }
    }
    for r in table.records() {
        for (j, s) in r.scores.iter().enumerate() {
            let b = &table.benchmarks()[j];
            if let (Some(v), Some(e)) = (s, config.get(b)) {
                if *v < e.gamma {
                    out.push(Diagnostic {
                        severity: Severity::Warning,
                        code: "score-below-asymptote".into(),
                        message: format!(
                            "model `{}`, benchmark `{b}`: score {v} below asymptote {}",
                            r.model_id, e.gamma
                        ),
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV3: &str = "model,family,base_family,version_group,params,tokens,a,b\n\
        m1,f1,f1,f1,1e9,1e12,0.5,0.25\n\
        m2,f1,f1,f1,2e9,1e12,0.6,\n\
        m3,f2,f2,f2,7e9,2e12,0.7,0.3\n";

    #[test]
    fn parses_three_rows() {
        let t = read_scores(CSV3.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(t.n(), 3);
        assert_eq!(t.num_benchmarks(), 2);
        assert_eq!(t.records()[1].scores[1], None);
        assert_eq!(t.records()[2].size, 7e9);
    }

    #[test]
    fn out_of_range_score_names_cell() {
        let csv = "model,family,base_family,version_group,params,tokens,a\nm1,f,f,f,1,1,1.2\n";
        let err = read_scores(csv.as_bytes(), &ColumnSchema::default()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)));
        assert!(msg.contains("row 2") && msg.contains("`a`"), "{msg}");
    }

    #[test]
    fn malformed_number_names_row_and_column() {
        let csv = "model,family,base_family,version_group,params,tokens,a\nm1,f,f,f,abc,1,0.2\n";
        match read_scores(csv.as_bytes(), &ColumnSchema::default()).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "params");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_model_rejected() {
        let csv = "model,family,base_family,version_group,params,tokens,a\n\
                   m1,f,f,f,1,1,0.2\nm1,f,f,f,2,1,0.3\n";
        let err = read_scores(csv.as_bytes(), &ColumnSchema::default()).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn scale_factors_apply_at_io_edge() {
        let csv = "model,family,base_family,version_group,params,tokens,a\nm1,f,f,f,7,2,0.2\n";
        let schema = ColumnSchema {
            params_scale: 1e9,
            tokens_scale: 1e12,
            ..ColumnSchema::default()
        };
        let t = read_scores(csv.as_bytes(), &schema).unwrap();
        assert_eq!(t.records()[0].size, 7e9);
        assert_eq!(t.records()[0].tokens, 2e12);
    }

    #[test]
    fn version_parsing() {
        assert_eq!(parse_version("llama:3"), ("llama", 3.0));
        assert_eq!(parse_version("qwen:1.5"), ("qwen", 1.5));
        assert_eq!(parse_version("pythia"), ("pythia", 0.0));
    }

    fn mc(name: &str, choices: u32) -> BenchmarkSpec {
        BenchmarkSpec {
            name: name.into(),
            rule: AsymptoteRule::MultipleChoice { choices },
            mode: GammaMode::Fixed,
        }
    }

    #[test]
    fn default_asymptote_rules() {
        let specs = vec![
            mc("mmlu", 4),
            BenchmarkSpec {
                name: "gsm8k".into(),
                rule: AsymptoteRule::Generative,
                mode: GammaMode::Fixed,
            },
            BenchmarkSpec {
                name: "mixed".into(),
                rule: AsymptoteRule::Subsections {
                    sections: vec![
                        Subsection {
                            choices: 4,
                            weight: 100.0,
                        },
                        Subsection {
                            choices: 2,
                            weight: 300.0,
                        },
                    ],
                },
                mode: GammaMode::Fixed,
            },
        ];
        let cfg = default_asymptotes(&specs, &BTreeMap::new()).unwrap();
        assert_eq!(cfg.get("mmlu").unwrap().gamma, 0.25);
        assert_eq!(cfg.get("gsm8k").unwrap().gamma, 0.0);
        assert_eq!(cfg.get("mixed").unwrap().gamma, 0.4375);
    }

    #[test]
    fn percentile_requires_scores() {
        let spec = BenchmarkSpec {
            name: "tqa".into(),
            rule: AsymptoteRule::Percentile {
                percentile: 1.0,
                scores: None,
            },
            mode: GammaMode::Fixed,
        };
        assert!(default_asymptotes(std::slice::from_ref(&spec), &BTreeMap::new()).is_err());
        let mut samples = BTreeMap::new();
        samples.insert("tqa".to_string(), (0..101).map(|i| i as f64 / 200.0).collect());
        let cfg = default_asymptotes(&[spec], &samples).unwrap();
        assert!((cfg.get("tqa").unwrap().gamma - 0.005).abs() < 1e-15);
    }

    #[test]
    fn single_choice_rejected() {
        assert!(default_asymptotes(&[mc("x", 1)], &BTreeMap::new()).is_err());
    }

    #[test]
    fn config_toml_roundtrip() {
        let text = r#"
[columns]
params_scale = 1e9

[[benchmarks]]
name = "mmlu"
kind = "multiple-choice"
choices = 4

[[benchmarks]]
name = "ifeval"
kind = "generative"
mode = "trainable"
"#;
        let cfg = DatasetConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.columns.params_scale, 1e9);
        assert_eq!(cfg.columns.model, "model");
        let asy = cfg.asymptotes(None).unwrap();
        assert_eq!(asy.get("mmlu").unwrap().gamma, 0.25);
        assert_eq!(asy.get("ifeval").unwrap().mode, GammaMode::Trainable);
        let again = DatasetConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn validate_diagnostics() {
        let t = read_scores(CSV3.as_bytes(), &ColumnSchema::default()).unwrap();
        let full = AsymptoteConfig::fixed([("a", 0.0), ("b", 0.0)]).unwrap();
        assert!(validate(&t, &full).is_empty());

        let missing = AsymptoteConfig::fixed([("a", 0.0)]).unwrap();
        let d = validate(&t, &missing);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, "missing-asymptote");

        let csv = "model,family,base_family,version_group,params,tokens,a\nm1,f,f,f,1,1,0.20\n";
        let t = read_scores(csv.as_bytes(), &ColumnSchema::default()).unwrap();
        let cfg = AsymptoteConfig::fixed([("a", 0.25)]).unwrap();
        let d = validate(&t, &cfg);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, "score-below-asymptote");
        assert_eq!(d[0].severity, Severity::Warning);
    }

    #[test]
    fn family_without_complete_rows_warns() {
        let csv = "model,family,base_family,version_group,params,tokens,a,b\nm1,f,f,f,1,1,0.2,\n";
        let t = read_scores(csv.as_bytes(), &ColumnSchema::default()).unwrap();
        let cfg = AsymptoteConfig::fixed([("a", 0.0), ("b", 0.0)]).unwrap();
        let d = validate(&t, &cfg);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, "no-complete-rows");
    }
}
