//! Poststratified estimands from cell-probability draws, their quantile
//! summaries, and the national results table.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::census::{CensusCellTable, Selector};
use crate::error::{Error, Result};
use crate::inference::DrawMatrix;
use crate::schema::CategoricalSchema;
use crate::stats::{mean, quantile_sorted, sorted};

/// Reported quantile levels, in table column order.
pub const QUANTILE_LEVELS: [f64; 8] = [0.05, 0.95, 0.025, 0.975, 0.005, 0.995, 0.0005, 0.9995];

/// Column headers of the quantile levels.
pub const QUANTILE_HEADERS: [&str; 8] = [
    "q0.05", "q0.95", "q0.025", "q0.975", "q0.005", "q0.995", "q0.0005", "q0.9995",
];

/// Draw count below which the extreme quantiles rest on too few draws.
pub const MIN_DRAWS: usize = 1000;

/// Per-draw poststratified estimand over the cells picked by `selector`.
pub fn poststratify(
    draws: &DrawMatrix,
    census: &CensusCellTable,
    schema: &CategoricalSchema,
    selector: &Selector,
) -> Result<Vec<f64>> {
    if census.len() != draws.cells {
        return Err(Error::invalid(format!(
            "census has {} cells, draws have {}",
            census.len(),
            draws.cells
        )));
    }
    let w = census.weights(schema, selector)?;
    Ok((0..draws.draws)
        .into_par_iter()
        .map(|s| {
            let row = draws.row(s);
            w.cells.iter().zip(&w.weights).map(|(c, wj)| wj * row[c.0]).sum()
        })
        .collect())
}

/// Histogram rule for the posterior mode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ModeRule {
    /// Bin width 2 IQR / S^(1/3).
    #[default]
    FreedmanDiaconis,
    /// Fixed number of equal-width bins over the draw range.
    Bins(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimandSummary {
    pub label: String,
    pub mean: f64,
    pub mode: f64,
    pub median: f64,
    /// Values at [`QUANTILE_LEVELS`].
    pub quantiles: [f64; 8],
    pub draws: usize,
}

impl EstimandSummary {
    pub fn quantile(&self, level: f64) -> Option<f64> {
        QUANTILE_LEVELS
            .iter()
            .position(|&l| (l - level).abs() < 1e-12)
            .map(|i| self.quantiles[i])
    }

    /// Equal-tailed interval at central credibility `level`, e.g. 0.95.
    pub fn interval(&self, level: f64) -> Option<(f64, f64)> {
        let tail = (1.0 - level) / 2.0;
        Some((self.quantile(tail)?, self.quantile(1.0 - tail)?))
    }
}

/// Center of the fullest histogram bin (first one on ties).
pub fn histogram_mode(sorted_draws: &[f64], rule: ModeRule) -> f64 {
    let n = sorted_draws.len();
    let (lo, hi) = (sorted_draws[0], sorted_draws[n - 1]);
    if !(hi > lo) {
        return lo;
    }
    let bins = match rule {
        ModeRule::FreedmanDiaconis => {
            let iqr = quantile_sorted(sorted_draws, 0.75) - quantile_sorted(sorted_draws, 0.25);
            let width = 2.0 * iqr / (n as f64).cbrt();
            if width > 0.0 {
                ((hi - lo) / width).ceil().max(1.0) as usize
            } else {
                1
            }
        }
        ModeRule::Bins(b) => b.max(1),
    };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in sorted_draws {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let best = counts
        .iter()
        .enumerate()
        .fold(0, |best, (i, &c)| if c > counts[best] { i } else { best });
    lo + (best as f64 + 0.5) * width
}

pub fn summarize(label: &str, theta: &[f64]) -> Result<EstimandSummary> {
    summarize_with(label, theta, ModeRule::default())
}

pub fn summarize_with(label: &str, theta: &[f64], rule: ModeRule) -> Result<EstimandSummary> {
    if theta.is_empty() {
        return Err(Error::EmptyInput(format!("draws for `{label}`")));
    }
    if theta.len() < MIN_DRAWS {
        log::warn!(
            "{label}: {} draws are too few for the 0.0005 and 0.9995 quantiles",
            theta.len()
        );
    }
    let v = sorted(theta.iter().copied());
    let mut quantiles = [0.0; 8];
    for (q, &l) in quantiles.iter_mut().zip(&QUANTILE_LEVELS) {
        *q = quantile_sorted(&v, l);
    }
    Ok(EstimandSummary {
        label: label.to_string(),
        mean: mean(theta),
        mode: histogram_mode(&v, rule),
        median: quantile_sorted(&v, 0.5),
        quantiles,
        draws: theta.len(),
    })
}

/// How far outside the posterior an official figure falls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Flag {
    Inside,
    Outside90,
    Outside95,
    Outside99,
    Outside999,
}

impl Flag {
    /// Superscript used next to the official figure.
    pub fn stars(self) -> &'static str {
        match self {
            Flag::Inside => "",
            Flag::Outside90 => ".",
            Flag::Outside95 => "*",
            Flag::Outside99 => "**",
            Flag::Outside999 => "***",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flag::Inside => "inside",
            Flag::Outside90 => ">90%",
            Flag::Outside95 => ">95%",
            Flag::Outside99 => ">99%",
            Flag::Outside999 => ">99.9%",
        })
    }
}

/// Widest listed central interval that excludes `official`. Intervals are
/// closed, so a value on a bound counts as inside.
pub fn flag_official(summary: &EstimandSummary, official: f64) -> Result<Flag> {
    if !(0.0..=1.0).contains(&official) {
        return Err(Error::invalid(format!("official value {official} is outside [0, 1]")));
    }
    let levels = [
        (0.999, Flag::Outside999),
        (0.99, Flag::Outside99),
        (0.95, Flag::Outside95),
        (0.90, Flag::Outside90),
    ];
    for (level, flag) in levels {
        let (lo, hi) = summary.interval(level).expect("listed level");
        if official < lo || official > hi {
            return Ok(flag);
        }
    }
    Ok(Flag::Inside)
}

/// Summary of one factor level.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub factor: String,
    pub level: String,
    pub summary: EstimandSummary,
}

/// One summary per level of every factor. Levels with no census mass are
/// skipped with a warning.
pub fn marginal_panels(
    draws: &DrawMatrix,
    census: &CensusCellTable,
    schema: &CategoricalSchema,
) -> Result<Vec<Panel>> {
    let mut out = Vec::with_capacity(schema.total_levels());
    for f in &schema.factors {
        for level in &f.levels {
            let sel = Selector::level(schema, &f.name, level)?;
            match poststratify(draws, census, schema, &sel) {
                Ok(theta) => out.push(Panel {
                    factor: f.name.clone(),
                    level: level.clone(),
                    summary: summarize(&sel.to_string(), &theta)?,
                }),
                Err(Error::EmptySubpopulation) => log::warn!("{}={level} has no census mass", f.name),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// One row of the national results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub event: String,
    pub official: Option<f64>,
    pub summary: EstimandSummary,
}

impl ReportRow {
    pub fn flag(&self) -> Result<Option<Flag>> {
        self.official.map(|o| flag_official(&self.summary, o)).transpose()
    }
}

pub const REPORT_HEADER: [&str; 14] = [
    "Event", "Official", "Mean", "Mode", "Median", "q0.05", "q0.95", "q0.025", "q0.975", "q0.005", "q0.995",
    "q0.0005", "q0.9995", "Flag",
];

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

/// Writes the results table: four-decimal figures, the official value
/// suffixed with its stars, and the flag spelled out.
pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        let flag = r.flag()?;
        let s = &r.summary;
        let mut rec = vec![
            r.event.clone(),
            match (r.official, flag) {
                (Some(o), Some(fl)) => format!("{}{}", f4(o), fl.stars()),
                _ => String::new(),
            },
            f4(s.mean),
            f4(s.mode),
            f4(s.median),
        ];
        rec.extend(s.quantiles.iter().map(|&q| f4(q)));
        rec.push(flag.map(|f| f.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("report", e))?;
    Ok(())
}

/// Writes marginal panels at full precision.
pub fn write_panels<W: Write>(event: &str, panels: &[Panel], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["event", "factor", "level", "mean", "mode", "median"];
    header.extend(QUANTILE_HEADERS);
    header.push("draws");
    w.write_record(&header)?;
    for p in panels {
        let s = &p.summary;
        let mut rec = vec![
            event.to_string(),
            p.factor.clone(),
            p.level.clone(),
            format!("{:e}", s.mean),
            format!("{:e}", s.mode),
            format!("{:e}", s.median),
        ];
        rec.extend(s.quantiles.iter().map(|q| format!("{q:e}")));
        rec.push(s.draws.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("panels", e))?;
    Ok(())
}
