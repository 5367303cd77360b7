//! Census cell counts and poststratification weights.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::{CategoricalSchema, CellIndex};

/// Population count N_j of every schema cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CensusCellTable {
    counts: Vec<u64>,
    total: u64,
    /// Cells that were absent from the source file and filled with zero.
    pub filled: Vec<CellIndex>,
}

impl CensusCellTable {
    pub fn from_counts(schema: &CategoricalSchema, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != schema.cell_count() {
            return Err(Error::invalid(format!(
                "census has {} cells, schema has {}",
                counts.len(),
                schema.cell_count()
            )));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyInput("census total population is zero".into()));
        }
        Ok(CensusCellTable {
            counts,
            total,
            filled: Vec::new(),
        })
    }

    pub fn load(path: impl AsRef<Path>, schema: &CategoricalSchema) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file, schema, &path.display().to_string())
    }

    /// Reads a census CSV whose header is the schema's census columns then `count`.
    pub fn read<R: Read>(reader: R, schema: &CategoricalSchema, origin: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let expected: Vec<&str> = schema
            .census_columns
            .iter()
            .map(|c| c.header.as_str())
            .chain(std::iter::once("count"))
            .collect();
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::parse(
                origin,
                1,
                format!("census header must be `{}`", expected.join(",")),
            ));
        }
        let p = schema.cell_count();
        let mut counts: Vec<Option<u64>> = vec![None; p];
        let mut levels = vec![0usize; schema.factors.len()];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            for (col, value) in schema.census_columns.iter().zip(rec.iter()) {
                let factor = &schema.factors[col.factor];
                levels[col.factor] = factor.level_index(value).ok_or_else(|| Error::Unknown {
                    kind: "level",
                    name: format!("{}={} (line {line})", factor.name, value),
                })?;
            }
            let raw = rec.get(expected.len() - 1).unwrap_or("");
            let count: i64 = raw
                .parse()
                .map_err(|_| Error::parse(origin, line, format!("count `{raw}` is not an integer")))?;
            if count < 0 {
                return Err(Error::parse(origin, line, format!("negative count {count}")));
            }
            let cell = schema.cell_id(&levels)?;
            if counts[cell.0].replace(count as u64).is_some() {
                return Err(Error::Duplicate {
                    kind: "census cell",
                    name: schema.cell_label(cell),
                });
            }
        }
        let filled: Vec<CellIndex> = (0..p).filter(|&j| counts[j].is_none()).map(CellIndex).collect();
        if !filled.is_empty() {
            log::warn!("{origin}: {} census cells missing, filled with zero", filled.len());
        }
        let mut table = Self::from_counts(schema, counts.into_iter().map(|c| c.unwrap_or(0)).collect())?;
        table.filled = filled;
        Ok(table)
    }

    pub fn write<W: Write>(&self, writer: W, schema: &CategoricalSchema) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = schema.census_columns.iter().map(|c| c.header.as_str()).collect();
        header.push("count");
        w.write_record(&header)?;
        for cell in schema.cells() {
            let levels = schema.cell_levels(cell);
            let mut row: Vec<String> = schema
                .census_columns
                .iter()
                .map(|c| schema.factors[c.factor].levels[levels[c.factor]].clone())
                .collect();
            row.push(self.counts[cell.0].to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<census>", e))?;
        Ok(())
    }

    pub fn count(&self, cell: CellIndex) -> u64 {
        self.counts[cell.0]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Normalized weights w_j = N_j / sum N_k over the cells matched by `selector`.
    pub fn weights(&self, schema: &CategoricalSchema, selector: &Selector) -> Result<CellWeights> {
        let mut cells = Vec::new();
        let mut mass = 0u64;
        for cell in schema.cells() {
            if selector.matches(schema, cell) {
                cells.push(cell);
                mass += self.counts[cell.0];
            }
        }
        if mass == 0 {
            return Err(Error::EmptySubpopulation);
        }
        let m = mass as f64;
        let weights = cells.iter().map(|c| self.counts[c.0] as f64 / m).collect();
        Ok(CellWeights { cells, weights, mass })
    }
}

/// Weights over the selected cells; sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    pub cells: Vec<CellIndex>,
    pub weights: Vec<f64>,
    /// Census mass of the subpopulation, sum of N_j.
    pub mass: u64,
}

/// A conjunction of per-factor level restrictions.
///
/// Textual form: `all`, or clauses joined by `&`, each `factor=level`,
/// `factor!=level`, or `factor=level|level`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Selector {
    clauses: Vec<Clause>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Clause {
    factor: usize,
    allowed: Vec<bool>,
    text: String,
}

impl Selector {
    pub fn all() -> Self {
        Selector::default()
    }

    /// Restricts `factor` to a single level.
    pub fn level(schema: &CategoricalSchema, factor: &str, level: &str) -> Result<Self> {
        Selector::all().and(schema, factor, &[level], false)
    }

    /// Adds a clause; `negate` excludes the listed levels instead.
    pub fn and(mut self, schema: &CategoricalSchema, factor: &str, levels: &[&str], negate: bool) -> Result<Self> {
        let fidx = schema.factor_index(factor).ok_or_else(|| Error::Unknown {
            kind: "factor",
            name: factor.to_string(),
        })?;
        let f = &schema.factors[fidx];
        let mut allowed = vec![negate; f.len()];
        for l in levels {
            let li = f.level_index(l).ok_or_else(|| Error::Unknown {
                kind: "level",
                name: format!("{factor}={l}"),
            })?;
            allowed[li] = !negate;
        }
        let op = if negate { "!=" } else { "=" };
        self.clauses.push(Clause {
            factor: fidx,
            allowed,
            text: format!("{factor}{op}{}", levels.join("|")),
        });
        Ok(self)
    }

    pub fn parse(schema: &CategoricalSchema, text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() || text == "all" {
            return Ok(Selector::all());
        }
        let mut sel = Selector::all();
        for clause in text.split('&') {
            let clause = clause.trim();
            let (factor, levels, negate) = if let Some((f, l)) = clause.split_once("!=") {
                (f, l, true)
            } else if let Some((f, l)) = clause.split_once('=') {
                (f, l, false)
            } else {
                return Err(Error::invalid(format!("selector clause `{clause}` needs `=` or `!=`")));
            };
            let levels: Vec<&str> = levels.split('|').map(str::trim).collect();
            sel = sel.and(schema, factor.trim(), &levels, negate)?;
        }
        Ok(sel)
    }

    pub fn matches(&self, schema: &CategoricalSchema, cell: CellIndex) -> bool {
        self.clauses
            .iter()
            .all(|c| c.allowed[schema.cell_level(cell, c.factor)])
    }

    pub fn is_all(&self) -> bool {
        self.clauses.is_empty()
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.clauses.is_empty() {
            return write!(f, "all");
        }
        let parts: Vec<&str> = self.clauses.iter().map(|c| c.text.as_str()).collect();
        write!(f, "{}", parts.join(" & "))
    }
}

/// Aggregates raw census rows (possibly repeated cells) into a table.
pub fn aggregate_counts(schema: &CategoricalSchema, rows: &[(CellIndex, u64)]) -> Result<CensusCellTable> {
    let mut map: HashMap<usize, u64> = HashMap::new();
    for &(c, n) in rows {
        *map.entry(c.0).or_default() += n;
    }
    let counts = (0..schema.cell_count()).map(|j| map.get(&j).copied().unwrap_or(0)).collect();
    CensusCellTable::from_counts(schema, counts)
}
