//! Synthetic score tables drawn from known parameters.
//!
//! The ground truth is canonical: simple-structure positive loadings and
//! skills with zero mean and identity covariance over the generated models,
//! so a fit followed by the identification pipeline should return the same
//! loadings up to column order and sign.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AsymptoteConfig, AsymptoteEntry, GammaMode, ModelRecord, ScoreTable};
use crate::design::{numerical_rank, DesignMatrix, COMPUTE_FEATURES};
use crate::error::{Error, Result};
use crate::identify::{standardize_skills, whiten};
use crate::model::{predict_scores, LinkFunction, SlothParams, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub families: usize,
    pub models_per_family: usize,
    pub benchmarks: usize,
    pub d: usize,
    /// Standard deviation of the additive score noise.
    pub noise: f64,
    pub seed: u64,
    /// Lower asymptote per benchmark; cycles through `[0, 0.25]` when empty.
    pub gammas: Vec<f64>,
    /// Smallest and largest parameter counts.
    pub size_range: (f64, f64),
    /// Range of the per-family tokens-per-parameter ratio.
    pub tokens_per_param: (f64, f64),
    pub loading_range: (f64, f64),
    pub bias_range: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            families: 10,
            models_per_family: 5,
            benchmarks: 12,
            d: 3,
            noise: 0.01,
            seed: 0,
            gammas: Vec::new(),
            size_range: (1e8, 7e10),
            tokens_per_param: (20.0, 2000.0),
            loading_range: (0.6, 1.4),
            bias_range: (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub design_rank: usize,
    pub loadings_rank: usize,
    pub cells: usize,
    /// Noise draws rejected for leaving `[0, 1]` and redrawn.
    pub truncations: usize,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub table: ScoreTable,
    pub truth: SlothParams,
    pub asymptotes: AsymptoteConfig,
    /// Scores before noise, aligned with the table.
    pub noiseless: DMatrix<f64>,
    pub report: SynthReport,
}

fn check(spec: &SynthSpec) -> Result<()> {
    let bad = |m: &str| Err(Error::Config(m.to_string()));
    if spec.families == 0 || spec.models_per_family == 0 || spec.benchmarks == 0 || spec.d == 0 {
        return bad("families, models_per_family, benchmarks and d must be positive");
    }
    if spec.d > spec.benchmarks {
        return bad("d cannot exceed the number of benchmarks");
    }
    if !(spec.noise >= 0.0) {
        return bad("noise must be non-negative");
    }
    if !(spec.size_range.0 > 0.0 && spec.size_range.1 >= spec.size_range.0) {
        return bad("size_range must be positive and ordered");
    }
    if !(spec.tokens_per_param.0 > 0.0 && spec.tokens_per_param.1 >= spec.tokens_per_param.0) {
        return bad("tokens_per_param must be positive and ordered");
    }
    if !spec.gammas.is_empty() && spec.gammas.len() != spec.benchmarks {
        return bad("gammas must be empty or have one entry per benchmark");
    }
    if spec.gammas.iter().any(|g| !(0.0..1.0).contains(g)) {
        return bad("gammas must lie in [0, 1)");
    }
    let n = spec.families * spec.models_per_family;
    let p = COMPUTE_FEATURES + spec.families;
    if n < p || p < spec.d {
        return Err(Error::Dimension(format!(
            "n = {n}, p = {p}, d = {}: identifiable skills need n >= p >= d",
            spec.d
        )));
    }
    Ok(())
}

fn family_models(spec: &SynthSpec, f: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(f as u64 + 1);
    let (lo, hi) = (spec.size_range.0.ln(), spec.size_range.1.ln());
    let m = spec.models_per_family;
    let ratio = rng.random_range(spec.tokens_per_param.0.ln()..=spec.tokens_per_param.1.ln());
    (0..m)
        .map(|k| {
            let frac = if m == 1 { 0.5 } else { k as f64 / (m - 1) as f64 };
            let jitter = rng.random_range(-0.15..0.15);
            let ls = (lo + frac * (hi - lo) + jitter).clamp(lo, hi);
            // Token ratio drifts with size so ln t is not affine in ln s.
            let lt = ls + ratio - 0.3 * (ls - lo) + rng.random_range(-0.4..0.4);
            (ls.exp(), lt.exp())
        })
        .collect()
}

fn draw_noise(rng: &mut ChaCha8Rng, normal: &Normal<f64>, mu: f64) -> (f64, usize) {
    let mut rejected = 0;
    loop {
        let y = mu + normal.sample(rng);
        if (0.0..=1.0).contains(&y) {
            return (y, rejected);
        }
        rejected += 1;
        if rejected >= 10_000 {
            return (y.clamp(0.0, 1.0), rejected);
        }
    }
}

/// Draws a table and its generating parameters.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    check(spec)?;
    let j = spec.benchmarks;
    let d = spec.d;
    let fams: Vec<String> = (0..spec.families).map(|f| format!("fam{f:02}")).collect();
    let grids: Vec<Vec<(f64, f64)>> = (0..spec.families)
        .into_par_iter()
        .map(|f| family_models(spec, f))
        .collect();
    let mut records = Vec::new();
    for (f, grid) in grids.iter().enumerate() {
        for (k, &(s, t)) in grid.iter().enumerate() {
            records.push(ModelRecord {
                model_id: format!("{}-m{k}", fams[f]),
                family_id: fams[f].clone(),
                base_family_id: fams[f].clone(),
                version_group: fams[f].clone(),
                size: s,
                tokens: t,
                scores: vec![None; j],
            });
        }
    }
    let design = DesignMatrix::for_families(&records, &fams)?;
    let p = design.p();
    if design.rank() < p {
        return Err(Error::Dimension(format!(
            "generated design has rank {} < p = {p}",
            design.rank()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let aff = design.standardization();
    let mut coefficients = DMatrix::zeros(p, d);
    for k in 0..d {
        let slopes: Vec<f64> = (0..COMPUTE_FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift: f64 = (0..COMPUTE_FEATURES).map(|c| slopes[c] * aff.mean[c] / aff.scale[c]).sum();
        for c in 0..COMPUTE_FEATURES {
            coefficients[(c, k)] = slopes[c] / aff.scale[c];
        }
        for r in COMPUTE_FEATURES..p {
            coefficients[(r, k)] = rng.random_range(-0.7..0.7) - shift;
        }
    }
    let mut loadings = DMatrix::zeros(j, d);
    for row in 0..j {
        loadings[(row, row % d)] = rng.random_range(spec.loading_range.0..=spec.loading_range.1);
    }
    let bias = DVector::from_fn(j, |_, _| rng.random_range(spec.bias_range.0..=spec.bias_range.1));
    let gammas: Vec<f64> = if spec.gammas.is_empty() {
        (0..j).map(|b| if b % 2 == 0 { 0.0 } else { 0.25 }).collect()
    } else {
        spec.gammas.clone()
    };
    let benchmarks: Vec<String> = (0..j).map(|b| format!("bench{b:02}")).collect();
    let raw = SlothParams {
        variant: Variant::Basic,
        benchmarks: (0..d).map(|k| format!("skill{k}")).collect(),
        families: fams.clone(),
        loadings: DMatrix::identity(d, d),
        bias: DVector::zeros(d),
        coefficients,
        gammas: vec![
            AsymptoteEntry {
                gamma: 0.0,
                mode: GammaMode::Fixed
            };
            d
        ],
        links: vec![LinkFunction::Sigmoid; d],
        standardization: aff,
    };
    // Canonical skills: zero mean, identity covariance.
    let canonical = standardize_skills(&whiten(&raw, &design)?, &design)?;
    let truth = SlothParams {
        benchmarks: benchmarks.clone(),
        loadings,
        bias,
        coefficients: canonical.coefficients,
        gammas: gammas
            .iter()
            .map(|&g| AsymptoteEntry {
                gamma: g,
                mode: GammaMode::Fixed,
            })
            .collect(),
        links: vec![LinkFunction::Sigmoid; j],
        ..raw
    };
    let loadings_rank = numerical_rank(&truth.loadings, 1e-9);
    if loadings_rank < d {
        return Err(Error::Dimension(format!("loadings have rank {loadings_rank} < d = {d}")));
    }
    let noiseless = predict_scores(&truth, &design)?;

    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("noise: {e}")))?;
    let per = spec.models_per_family;
    let noisy: Vec<(Vec<Vec<f64>>, usize)> = (0..spec.families)
        .into_par_iter()
        .map(|f| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_f00d);
            rng.set_stream(f as u64 + 1);
            let mut rows = Vec::with_capacity(per);
            let mut rejected = 0;
            for i in f * per..(f + 1) * per {
                let row = (0..j)
                    .map(|b| {
                        let mu = noiseless[(i, b)];
                        if spec.noise == 0.0 {
                            return mu;
                        }
                        let (y, r) = draw_noise(&mut rng, &normal, mu);
                        rejected += r;
                        y
                    })
                    .collect();
                rows.push(row);
            }
            (rows, rejected)
        })
        .collect();
    let mut truncations = 0;
    let mut i = 0;
    for (rows, r) in noisy {
        truncations += r;
        for row in rows {
            records[i].scores = row.into_iter().map(Some).collect();
            i += 1;
        }
    }
    let table = ScoreTable::new(benchmarks.clone(), records)?;
    let mut asymptotes = AsymptoteConfig::new();
    for (b, g) in benchmarks.iter().zip(&truth.gammas) {
        asymptotes.insert(b.clone(), *g)?;
    }
    let report = SynthReport {
        n: design.n(),
        p,
        d,
        design_rank: design.rank(),
        loadings_rank,
        cells: table.observed_cells(),
        truncations,
        noise: spec.noise,
        seed: spec.seed,
    };
    Ok(SynthOutput {
        table,
        truth,
        asymptotes,
        noiseless,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::build_design;
    use crate::fit::total_loss;
    use crate::model::skills;

    #[test]
    fn noise_free_truth_has_zero_loss() {
        let out = generate(&SynthSpec {
            noise: 0.0,
            ..SynthSpec::default()
        })
        .unwrap();
        let design = build_design(&out.table).unwrap();
        assert_eq!(total_loss(&out.truth, &design, &out.table, 0.01).unwrap(), 0.0);
        assert_eq!(out.report.truncations, 0);
        assert_eq!((out.report.n, out.report.p), (50, 13));
    }

    #[test]
    fn same_seed_same_table() {
        let a = generate(&SynthSpec::default()).unwrap();
        let b = generate(&SynthSpec::default()).unwrap();
        assert_eq!(a.table, b.table);
        let c = generate(&SynthSpec {
            seed: 1,
            ..SynthSpec::default()
        })
        .unwrap();
        assert_ne!(a.table, c.table);
    }

    #[test]
    fn truth_is_canonical() {
        let out = generate(&SynthSpec::default()).unwrap();
        let design = build_design(&out.table).unwrap();
        let sk = skills(&out.truth, &design).unwrap();
        assert!(sk.means.amax() < 1e-10);
        assert!((sk.covariance - DMatrix::identity(3, 3)).amax() < 1e-10);
        for row in out.truth.loadings.row_iter() {
            assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 1);
        }
    }

    #[test]
    fn scores_in_range_and_above_asymptotes_before_noise() {
        let out = generate(&SynthSpec {
            noise: 0.05,
            ..SynthSpec::default()
        })
        .unwrap();
        for (i, r) in out.table.records().iter().enumerate() {
            for (j, s) in r.scores.iter().enumerate() {
                assert!((0.0..=1.0).contains(&s.unwrap()));
                assert!(out.noiseless[(i, j)] >= out.truth.gammas[j].gamma);
            }
        }
    }

    #[test]
    fn infeasible_geometry_is_rejected() {
        let spec = SynthSpec {
            families: 10,
            models_per_family: 1,
            ..SynthSpec::default()
        };
        assert!(matches!(generate(&spec), Err(Error::Dimension(_))));
    }
}
