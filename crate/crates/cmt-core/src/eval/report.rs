//! Score normalization, summary statistics, and the evaluation table.

use std::fmt::Write as _;

use super::EvalError;
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnStats {
    pub mean: f64,
    /// Sample standard deviation (n - 1); zero below two samples.
    pub std: f64,
    pub n: usize,
}

pub fn return_stats(returns: &[f64]) -> ReturnStats {
    let n = returns.len();
    if n == 0 {
        return ReturnStats { mean: 0.0, std: 0.0, n };
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        let ss = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>();
        (ss / (n - 1) as f64).sqrt()
    };
    ReturnStats { mean, std, n }
}

/// Map a raw return onto a 0..100 scale where 0 is scripted random play and
/// 100 is the scripted expert.
pub fn normalized_score(raw: f64, random_ref: f64, expert_ref: f64) -> Result<f64, EvalError> {
    let span = expert_ref - random_ref;
    if !span.is_finite() || span.abs() < 1e-9 {
        return Err(EvalError::DegenerateReferences);
    }
    Ok(100.0 * (raw - random_ref) / span)
}

/// One line of the evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub config_id: String,
    pub env: String,
    pub tier: String,
    pub mode: String,
    pub seeds: usize,
    /// Episodes contributing to the row, across all seeds.
    pub episodes: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub norm_score: f64,
}

pub const EVAL_CSV_HEADER: &str =
    "config_id,env,tier,mode,seeds,episodes,return_mean,return_std,norm_score";

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 96 + 64);
    out.push_str(EVAL_CSV_HEADER);
    out.push('\n');
    for r in rows {
        for field in [&r.config_id, &r.env, &r.tier, &r.mode] {
            debug_assert!(!field.contains(','), "CSV field {field:?} holds a comma");
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.6},{:.6}",
            r.config_id,
            r.env,
            r.tier,
            r.mode,
            r.seeds,
            r.episodes,
            r.return_mean,
            r.return_std,
            r.norm_score
        );
    }
    out
}

/// How separable prompt groups are under cosine similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separation {
    /// Mean similarity over pairs drawn from the same group.
    pub within: f64,
    /// Mean similarity over pairs from different groups.
    pub cross: f64,
}

impl Separation {
    pub fn margin(&self) -> f64 {
        self.within - self.cross
    }
}

fn flat_cosine(a: &Tensor, b: &Tensor) -> f64 {
    let (xa, xb) = (a.data(), b.data());
    let dot: f64 = xa.iter().zip(xb).map(|(p, q)| p * q).sum();
    let na: f64 = xa.iter().map(|p| p * p).sum::<f64>().sqrt();
    let nb: f64 = xb.iter().map(|q| q * q).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-12)
}

/// Compare prompts within and across groups. `None` when either side has no
/// pairs to average.
pub fn prompt_separation(groups: &[Vec<Tensor>]) -> Option<Separation> {
    let mut within = (0.0, 0usize);
    let mut cross = (0.0, 0usize);
    for (gi, group) in groups.iter().enumerate() {
        for (i, a) in group.iter().enumerate() {
            for b in group.iter().skip(i + 1) {
                within.0 += flat_cosine(a, b);
                within.1 += 1;
            }
            for other in groups.iter().skip(gi + 1) {
                for b in other {
                    cross.0 += flat_cosine(a, b);
                    cross.1 += 1;
                }
            }
        }
    }
    if within.1 == 0 || cross.1 == 0 {
        return None;
    }
    Some(Separation {
        within: within.0 / within.1 as f64,
        cross: cross.0 / cross.1 as f64,
    })
}
