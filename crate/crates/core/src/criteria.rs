//! Model-comparison scores: WAIC on the training rows and the modified
//! quantile Brier score on the holdout rows.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{fit, CellLikelihood, DrawMatrix, InferenceOptions, PosteriorResult};
use crate::lgm::{LatentModel, ModelSpec, Variant};
use crate::rng::Seed;
use crate::schema::CategoricalSchema;
use crate::stats::{quantile_sorted, sorted};

pub const DEFAULT_ALPHA: f64 = 0.975;

/// Per-row WAIC terms from draws of one success probability:
/// (log mean likelihood, variance of the log likelihood) for y = 1 and y = 0.
fn waic_terms(draws: &[f64]) -> [(f64, f64); 2] {
    let s = draws.len() as f64;
    let term = |log_lik: &dyn Fn(f64) -> f64| {
        let logs: Vec<f64> = draws.iter().map(|&p| log_lik(p)).collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lppd = m + (logs.iter().map(|l| (l - m).exp()).sum::<f64>() / s).ln();
        let mean = logs.iter().sum::<f64>() / s;
        let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (s - 1.0);
        (lppd, var)
    };
    [term(&|p: f64| p.ln()), term(&|p: f64| (1.0 - p).ln())]
}

/// WAIC on the deviance scale from an S x M matrix of per-row success
/// probabilities and the binary responses.
pub fn waic(draws: &DrawMatrix, y: &[u8]) -> Result<f64> {
    if draws.draws < 2 {
        return Err(Error::invalid("WAIC needs at least two draws"));
    }
    if y.len() != draws.cells {
        return Err(Error::invalid(format!("{} responses for {} draw columns", y.len(), draws.cells)));
    }
    let terms: Vec<f64> = (0..draws.cells)
        .into_par_iter()
        .map(|i| {
            let [(l1, v1), (l0, v0)] = waic_terms(&draws.column(i).collect::<Vec<_>>());
            if y[i] == 1 {
                l1 - v1
            } else {
                l0 - v0
            }
        })
        .collect();
    Ok(-2.0 * terms.iter().sum::<f64>())
}

/// WAIC with rows aggregated by cell: every row of a cell shares the cell's
/// probability draws, so the row sum collapses to two terms per cell.
pub fn waic_cells(draws: &DrawMatrix, data: &CellLikelihood) -> Result<f64> {
    if draws.draws < 2 {
        return Err(Error::invalid("WAIC needs at least two draws"));
    }
    if data.trials.len() != draws.cells {
        return Err(Error::invalid("cell count differs between draws and data"));
    }
    let cells: Vec<usize> = data.trials.iter().enumerate().filter(|(_, &n)| n > 0).map(|(j, _)| j).collect();
    let terms: Vec<f64> = cells
        .par_iter()
        .map(|&j| {
            let [(l1, v1), (l0, v0)] = waic_terms(&draws.column(j).collect::<Vec<_>>());
            let s = data.successes[j] as f64;
            let f = (data.trials[j] - data.successes[j]) as f64;
            s * (l1 - v1) + f * (l0 - v0)
        })
        .collect();
    Ok(-2.0 * terms.iter().sum::<f64>())
}

/// Predictive quantiles of one row's success probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantilePair {
    /// q_alpha.
    pub upper: f64,
    /// q_{1 - alpha}.
    pub lower: f64,
}

impl QuantilePair {
    pub fn from_draws(draws: impl IntoIterator<Item = f64>, alpha: f64) -> Self {
        let v = sorted(draws);
        QuantilePair {
            upper: quantile_sorted(&v, alpha),
            lower: quantile_sorted(&v, 1.0 - alpha),
        }
    }

    /// One row's score.
    pub fn score(&self, y: f64) -> Result<f64> {
        let width = self.upper - self.lower;
        if !(width.abs() < 1.0) {
            return Err(Error::DegenerateInterval);
        }
        let d = (y - self.upper).abs().min((y - self.lower).abs());
        Ok(d * d / (1.0 - width * width))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.5 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("MBRIER level must be in (0.5, 1), got {alpha}")))
    }
}

/// Mean modified quantile Brier score over holdout rows.
pub fn mbrier(alpha: f64, rows: &[(QuantilePair, u8)]) -> Result<f64> {
    check_alpha(alpha)?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("holdout rows".into()));
    }
    for (q, _) in rows {
        if !(0.0..=1.0).contains(&q.lower) || !(0.0..=1.0).contains(&q.upper) || q.lower > q.upper {
            return Err(Error::invalid(format!("quantiles ({}, {}) are not an interval in [0, 1]", q.lower, q.upper)));
        }
    }
    let total = rows.iter().map(|(q, y)| q.score(*y as f64)).sum::<Result<f64>>()?;
    Ok(total / rows.len() as f64)
}

/// MBRIER over holdout rows aggregated by cell, with quantiles taken from the
/// cell-probability draws.
pub fn mbrier_cells(alpha: f64, draws: &DrawMatrix, holdout: &CellLikelihood) -> Result<f64> {
    check_alpha(alpha)?;
    if holdout.trials.len() != draws.cells {
        return Err(Error::invalid("cell count differs between draws and holdout"));
    }
    let m = holdout.rows();
    if m == 0 {
        return Err(Error::EmptyInput("holdout rows".into()));
    }
    let cells: Vec<usize> = (0..draws.cells).filter(|&j| holdout.trials[j] > 0).collect();
    let parts: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&j| {
            let q = QuantilePair::from_draws(draws.column(j), alpha);
            let s = holdout.successes[j] as f64;
            let f = (holdout.trials[j] - holdout.successes[j]) as f64;
            Ok(s * q.score(1.0)? + f * q.score(0.0)?)
        })
        .collect();
    let total = parts.into_iter().sum::<Result<f64>>()?;
    Ok(total / m as f64)
}

/// Scores of one fitted model variant for one event.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub event: String,
    pub variant: String,
    pub mlik: f64,
    pub waic: f64,
    pub mbrier: f64,
    pub alpha: f64,
    pub holdout_size: u64,
}

/// Scores a fitted posterior against its training and holdout data.
pub fn score(
    event: &str,
    variant: &str,
    posterior: &PosteriorResult,
    train: &CellLikelihood,
    holdout: &CellLikelihood,
    alpha: f64,
) -> Result<ScoreReport> {
    Ok(ScoreReport {
        event: event.to_string(),
        variant: variant.to_string(),
        mlik: posterior.mlik(),
        waic: waic_cells(&posterior.draws, train)?,
        mbrier: mbrier_cells(alpha, &posterior.draws, holdout)?,
        alpha,
        holdout_size: holdout.rows(),
    })
}

/// Fits and scores each variant on the same data with the same seed and
/// inference options.
#[allow(clippy::too_many_arguments)]
pub fn compare_models(
    schema: &CategoricalSchema,
    event: &str,
    variants: &[Variant],
    train: &CellLikelihood,
    holdout: &CellLikelihood,
    opts: &InferenceOptions,
    draws: usize,
    seed: Seed,
) -> Result<Vec<ScoreReport>> {
    variants
        .iter()
        .map(|&v| {
            let model = LatentModel::new(schema, ModelSpec::variant(schema, v, event))?;
            let posterior = fit(&model, train, opts, draws, seed)?;
            score(event, v.label(), &posterior, train, holdout, DEFAULT_ALPHA)
        })
        .collect()
}

/// Scientific notation with a two-digit signed exponent, e.g. `1.35E-05`.
pub fn sci(x: f64, digits: usize) -> String {
    let s = format!("{x:.digits$E}");
    match s.split_once('E') {
        Some((m, e)) => {
            let (sign, e) = e.strip_prefix('-').map_or(("+", e), |e| ("-", e));
            format!("{m}E{sign}{e:0>2}")
        }
        None => s,
    }
}

fn alpha_tag(alpha: f64) -> String {
    let s = format!("{alpha}");
    s.strip_prefix('0').map(str::to_string).unwrap_or(s)
}

/// Wide score table: one row per event, and MLIK, WAIC and MBRIER columns
/// for each variant in order of first appearance.
pub fn write_score_table<W: Write>(reports: &[ScoreReport], out: W) -> Result<()> {
    let mut events: Vec<&str> = Vec::new();
    let mut variants: Vec<&str> = Vec::new();
    for r in reports {
        if !events.contains(&r.event.as_str()) {
            events.push(&r.event);
        }
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    let alpha = reports.first().map_or(DEFAULT_ALPHA, |r| r.alpha);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["Event".to_string()];
    for v in &variants {
        header.push(format!("MLIK_({v})"));
        header.push(format!("WAIC_({v})"));
        header.push(format!("MBRIER^{}_({v})", alpha_tag(alpha)));
    }
    w.write_record(&header)?;
    for e in &events {
        let mut row = vec![e.to_string()];
        for v in &variants {
            match reports.iter().find(|r| r.event == *e && r.variant == *v) {
                Some(r) => {
                    row.push(format!("{:.2}", r.mlik));
                    row.push(format!("{:.2}", r.waic));
                    row.push(sci(r.mbrier, 2));
                }
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("score table", e))?;
    Ok(())
}

/// Long score table at full precision.
pub fn write_scores_long<W: Write>(reports: &[ScoreReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["event", "variant", "mlik", "waic", "mbrier", "alpha", "holdout_size"])?;
    for r in reports {
        w.write_record([
            r.event.clone(),
            r.variant.clone(),
            format!("{:e}", r.mlik),
            format!("{:e}", r.waic),
            format!("{:e}", r.mbrier),
            r.alpha.to_string(),
            r.holdout_size.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("score table", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(draws: usize, cells: usize, values: Vec<f64>) -> DrawMatrix {
        DrawMatrix { draws, cells, values }
    }

    #[test]
    fn point_mass_waic() {
        let d = matrix(3, 1, vec![0.5; 3]);
        let w = waic(&d, &[1]).unwrap();
        assert!((w + 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rows_double_waic() {
        let d1 = matrix(3, 1, vec![0.2, 0.5, 0.7]);
        let d2 = matrix(3, 2, vec![0.2, 0.2, 0.5, 0.5, 0.7, 0.7]);
        let a = waic(&d1, &[1]).unwrap();
        let b = waic(&d2, &[1, 1]).unwrap();
        assert_eq!(2.0 * a, b);
    }

    #[test]
    fn hand_evaluated_mbrier() {
        let q = QuantilePair { upper: 0.9, lower: 0.1 };
        let v = mbrier(0.975, &[(q, 1)]).unwrap();
        assert!((v - 0.01 / 0.36).abs() < 1e-12);
        assert!((v - 0.0277778).abs() < 1e-7);
    }

    #[test]
    fn mbrier_zero_on_quantile() {
        let q = QuantilePair { upper: 1.0, lower: 0.3 };
        assert_eq!(q.score(1.0).unwrap(), 0.0);
    }

    #[test]
    fn unit_width_is_degenerate() {
        let q = QuantilePair { upper: 1.0, lower: 0.0 };
        assert!(matches!(mbrier(0.975, &[(q, 1)]), Err(Error::DegenerateInterval)));
        assert!(mbrier(0.4, &[(QuantilePair { upper: 0.6, lower: 0.5 }, 1)]).is_err());
    }

    #[test]
    fn sci_format() {
        assert_eq!(sci(1.35e-5, 2), "1.35E-05");
        assert_eq!(sci(12.0, 2), "1.20E+01");
        assert_eq!(alpha_tag(0.975), ".975");
    }
}
