//! Compute-optimal allocation of a FLOPs budget `c = 6 s t` between
//! parameters and tokens for one skill.
//!
//! With `u = ln s`, `v = ln t` and `l = ln c - ln 6` the skill along the
//! budget line is the quadratic
//! `g(u) = -β2 u² + (β0 - β1 + β2 l) u + (α + β1 l)`, maximized over the
//! interval of `u` allowed by the training-data bounds.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::ScoreTable;
use crate::error::{Error, Result};
use crate::model::SlothParams;
use crate::stats::quantile;

/// Bounds on `u = ln s` and `v = ln t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogBounds {
    pub u_lo: f64,
    pub u_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

impl LogBounds {
    /// From absolute parameter and token ranges.
    pub fn from_ranges(size: (f64, f64), tokens: (f64, f64)) -> Result<Self> {
        if !(size.0 > 0.0 && size.1 >= size.0 && tokens.0 > 0.0 && tokens.1 >= tokens.0) {
            return Err(Error::Domain(format!(
                "bounds must be positive and ordered, got size {size:?}, tokens {tokens:?}"
            )));
        }
        Ok(LogBounds {
            u_lo: size.0.ln(),
            u_hi: size.1.ln(),
            v_lo: tokens.0.ln(),
            v_hi: tokens.1.ln(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BoundsPolicy {
    MinMax,
    /// Linear-interpolation quantiles of the observed values.
    Quantile { lo: f64, hi: f64 },
}

impl BoundsPolicy {
    /// `min-max` or `quantile:LO:HI`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "min-max" {
            return Ok(BoundsPolicy::MinMax);
        }
        let bad = || Error::Config(format!("bounds policy `{s}` is not min-max or quantile:LO:HI"));
        let rest = s.strip_prefix("quantile:").ok_or_else(bad)?;
        let (lo, hi) = rest.split_once(':').ok_or_else(bad)?;
        let lo: f64 = lo.parse().map_err(|_| bad())?;
        let hi: f64 = hi.parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(bad());
        }
        Ok(BoundsPolicy::Quantile { lo, hi })
    }
}

/// Log-size and log-token bounds observed in `table`.
pub fn training_bounds(table: &ScoreTable, policy: BoundsPolicy) -> Result<LogBounds> {
    if table.is_empty() {
        return Err(Error::Validation("bounds need at least one model".into()));
    }
    let u: Vec<f64> = table.records().iter().map(|r| r.size.ln()).collect();
    let v: Vec<f64> = table.records().iter().map(|r| r.tokens.ln()).collect();
    let (qlo, qhi) = match policy {
        BoundsPolicy::MinMax => (0.0, 1.0),
        BoundsPolicy::Quantile { lo, hi } => (lo, hi),
    };
    let q = |xs: &[f64], p: f64| quantile(xs, p).ok_or_else(|| Error::Validation("empty column".into()));
    Ok(LogBounds {
        u_lo: q(&u, qlo)?,
        u_hi: q(&u, qhi)?,
        v_lo: q(&v, qlo)?,
        v_hi: q(&v, qhi)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    pub skill: usize,
    pub family: Option<String>,
    /// Slopes on `(ln s, ln t, ln s · ln t)`.
    pub beta: [f64; 3],
    pub alpha: f64,
    /// FLOPs, absolute.
    pub budget: f64,
    pub bounds: LogBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryFlag {
    InteriorVertex,
    LowerEdge,
    UpperEdge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub budget: f64,
    pub size: f64,
    pub tokens: f64,
    pub log_size: f64,
    pub log_tokens: f64,
    pub skill_value: f64,
    pub flag: BoundaryFlag,
    /// The objective is constant on the feasible interval.
    pub flat: bool,
}

impl AllocationProblem {
    pub fn log_budget(&self) -> f64 {
        self.budget.ln() - 6f64.ln()
    }

    /// `g(u)` for this problem.
    pub fn objective(&self, u: f64) -> f64 {
        let [b0, b1, b2] = self.beta;
        let l = self.log_budget();
        -b2 * u * u + (b0 - b1 + b2 * l) * u + (self.alpha + b1 * l)
    }

    /// Feasible interval of `u`.
    pub fn interval(&self) -> Result<(f64, f64)> {
        if !(self.budget > 0.0) || !self.budget.is_finite() {
            return Err(Error::Domain(format!("budget must be positive, got {}", self.budget)));
        }
        let b = &self.bounds;
        if b.u_lo > b.u_hi || b.v_lo > b.v_hi {
            return Err(Error::Domain("bounds are not ordered".into()));
        }
        let l = self.log_budget();
        let lo = (l - b.v_hi).max(b.u_lo);
        let hi = (l - b.v_lo).min(b.u_hi);
        if lo > hi {
            let reason = if l - b.v_hi > b.u_hi {
                "budget exceeds the largest size and token counts together"
            } else {
                "budget is below the smallest size and token counts together"
            };
            return Err(Error::Infeasible(format!(
                "no allocation for budget {:.4e} FLOPs: {reason} (u in [{lo:.4}, {hi:.4}] is empty)",
                self.budget
            )));
        }
        Ok((lo, hi))
    }
}

pub fn optimal_allocation(problem: &AllocationProblem) -> Result<Allocation> {
    let (lo, hi) = problem.interval()?;
    let [b0, b1, b2] = problem.beta;
    let l = problem.log_budget();
    let lin = b0 - b1 + b2 * l;
    let scale = 1.0 + b0.abs() + b1.abs() + b2.abs() * (1.0 + l.abs());
    let flat = b2.abs() <= 1e-15 * scale && lin.abs() <= 1e-12 * scale;
    let (u, flag) = if flat {
        (0.5 * (lo + hi), BoundaryFlag::InteriorVertex)
    } else if b2 > 0.0 {
        let vertex = lin / (2.0 * b2);
        if vertex <= lo {
            (lo, BoundaryFlag::LowerEdge)
        } else if vertex >= hi {
            (hi, BoundaryFlag::UpperEdge)
        } else {
            (vertex, BoundaryFlag::InteriorVertex)
        }
    } else if problem.objective(hi) > problem.objective(lo) {
        (hi, BoundaryFlag::UpperEdge)
    } else {
        (lo, BoundaryFlag::LowerEdge)
    };
    let v = l - u;
    Ok(Allocation {
        budget: problem.budget,
        size: u.exp(),
        tokens: v.exp(),
        log_size: u,
        log_tokens: v,
        skill_value: problem.objective(u),
        flag,
        flat,
    })
}

/// Allocations for `skill` over `budgets` (absolute FLOPs). `family`
/// only shifts the reported skill value; `None` uses the first family.
pub fn allocation_table(
    params: &SlothParams,
    skill: usize,
    family: Option<&str>,
    budgets: &[f64],
    bounds: LogBounds,
) -> Result<Vec<Allocation>> {
    if skill >= params.num_skills() {
        return Err(Error::Validation(format!(
            "skill {skill} out of range; the model has {} skills",
            params.num_skills()
        )));
    }
    let fam = match family {
        Some(f) => f.to_string(),
        None => params
            .families
            .first()
            .cloned()
            .ok_or_else(|| Error::Validation("parameters have no families".into()))?,
    };
    let row = params.intercept_row(&fam)?;
    let b = &params.coefficients;
    let problem = |budget: f64| AllocationProblem {
        skill,
        family: Some(fam.clone()),
        beta: [b[(0, skill)], b[(1, skill)], b[(2, skill)]],
        alpha: b[(row, skill)],
        budget,
        bounds,
    };
    budgets.iter().map(|&c| optimal_allocation(&problem(c))).collect()
}

/// CSV with budgets in units of `1e19` FLOPs, sizes in billions and
/// tokens in trillions.
pub fn write_allocations_csv<W: Write>(
    skills: &[String],
    tables: &[Vec<Allocation>],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["skill", "flops_1e19", "params_b", "tokens_t", "skill_value", "flag"])?;
    for (name, rows) in skills.iter().zip(tables) {
        for a in rows {
            let flag = match a.flag {
                BoundaryFlag::InteriorVertex => "interior-vertex",
                BoundaryFlag::LowerEdge => "lower-edge",
                BoundaryFlag::UpperEdge => "upper-edge",
            };
            w.write_record([
                name.as_str(),
                &(a.budget / 1e19).to_string(),
                &(a.size / 1e9).to_string(),
                &(a.tokens / 1e12).to_string(),
                &a.skill_value.to_string(),
                flag,
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv writer>".into(),
        source: e,
    })?;
    Ok(())
}

/// Markdown table: one row per budget, a params/tokens column pair per
/// skill. All tables must share the same budgets.
pub fn allocations_markdown(skills: &[String], tables: &[Vec<Allocation>]) -> String {
    let mut out = String::from("| FLOPs (1e19) |");
    for s in skills {
        let _ = write!(out, " {s} Params (B) | {s} Tokens (T) |");
    }
    out.push_str("\n|---:|");
    for _ in skills {
        out.push_str("---:|---:|");
    }
    out.push('\n');
    let rows = tables.first().map_or(0, Vec::len);
    for r in 0..rows {
        let _ = write!(out, "| {} |", fmt_sig(tables[0][r].budget / 1e19));
        for t in tables {
            let a = &t[r];
            let _ = write!(out, " {:.2} | {:.2} |", a.size / 1e9, a.tokens / 1e12);
        }
        out.push('\n');
    }
    out
}

fn fmt_sig(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 * v.abs().max(1.0) {
        format!("{}", v.round())
    } else {
        format!("{v:.3}")
    }
}
