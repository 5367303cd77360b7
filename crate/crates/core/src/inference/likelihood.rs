use crate::error::{Error, Result};
use crate::lgm::{log_sigmoid, sigmoid};
use crate::schema::CellIndex;

/// Per-cell data term of the latent model.
///
/// `eval` returns the log-likelihood, its first derivative, and the negated
/// second derivative in the cell's linear predictor.
pub trait Likelihood: Sync {
    fn n_cells(&self) -> usize;

    /// Cells that carry data, ascending; all other cells contribute nothing.
    fn active(&self) -> &[usize];

    fn eval(&self, cell: usize, eta: f64) -> (f64, f64, f64);
}

/// Binomial sufficient statistics of a Bernoulli response aggregated by cell.
/// The log-likelihood omits binomial coefficients, so it equals the row-level
/// Bernoulli log-likelihood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellLikelihood {
    pub trials: Vec<u64>,
    pub successes: Vec<u64>,
    active: Vec<usize>,
}

impl CellLikelihood {
    pub fn new(trials: Vec<u64>, successes: Vec<u64>) -> Result<Self> {
        if trials.len() != successes.len() {
            return Err(Error::invalid("trials and successes differ in length"));
        }
        if let Some(j) = (0..trials.len()).find(|&j| successes[j] > trials[j]) {
            return Err(Error::invalid(format!("cell {j} has more successes than trials")));
        }
        let active = (0..trials.len()).filter(|&j| trials[j] > 0).collect();
        Ok(CellLikelihood {
            trials,
            successes,
            active,
        })
    }

    /// Aggregates row-level responses into `n_cells` cells.
    pub fn from_rows(n_cells: usize, cells: impl IntoIterator<Item = CellIndex>, y: &[u8]) -> Result<Self> {
        let mut trials = vec![0u64; n_cells];
        let mut successes = vec![0u64; n_cells];
        let mut count = 0;
        for (cell, &yi) in cells.into_iter().zip(y) {
            if cell.0 >= n_cells {
                return Err(Error::invalid(format!("cell {} out of range", cell.0)));
            }
            if yi > 1 {
                return Err(Error::invalid("responses must be 0 or 1"));
            }
            trials[cell.0] += 1;
            successes[cell.0] += yi as u64;
            count += 1;
        }
        if count != y.len() {
            return Err(Error::invalid("fewer cells than responses"));
        }
        Self::new(trials, successes)
    }

    /// Total row count M.
    pub fn rows(&self) -> u64 {
        self.trials.iter().sum()
    }
}

impl Likelihood for CellLikelihood {
    fn n_cells(&self) -> usize {
        self.trials.len()
    }

    fn active(&self) -> &[usize] {
        &self.active
    }

    fn eval(&self, cell: usize, eta: f64) -> (f64, f64, f64) {
        let n = self.trials[cell] as f64;
        let s = self.successes[cell] as f64;
        let p = sigmoid(eta);
        let ll = s * log_sigmoid(eta) + (n - s) * log_sigmoid(-eta);
        (ll, s - n * p, n * p * (1.0 - p))
    }
}

/// Gaussian observations with known precision, one per active cell. Laplace
/// approximations are exact under this likelihood, which makes it a useful
/// reference in tests.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCells {
    pub y: Vec<f64>,
    pub precision: Vec<f64>,
    active: Vec<usize>,
}

impl GaussianCells {
    /// `precision[j] = 0` marks a cell without data.
    pub fn new(y: Vec<f64>, precision: Vec<f64>) -> Result<Self> {
        if y.len() != precision.len() {
            return Err(Error::invalid("y and precision differ in length"));
        }
        if precision.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid("observation precisions must be non-negative"));
        }
        let active = (0..y.len()).filter(|&j| precision[j] > 0.0).collect();
        Ok(GaussianCells { y, precision, active })
    }
}

impl Likelihood for GaussianCells {
    fn n_cells(&self) -> usize {
        self.y.len()
    }

    fn active(&self) -> &[usize] {
        &self.active
    }

    fn eval(&self, cell: usize, eta: f64) -> (f64, f64, f64) {
        let p = self.precision[cell];
        let r = self.y[cell] - eta;
        let ll = 0.5 * (p / (2.0 * std::f64::consts::PI)).ln() - 0.5 * p * r * r;
        (ll, p * r, p)
    }
}
