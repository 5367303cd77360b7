//! Posterior draws of cell probabilities from the grid mixture.

use nalgebra::DVector;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::explore::HyperPosterior;
use crate::error::{Error, Result};
use crate::lgm::{sigmoid, Design, LatentModel};
use crate::rng::Seed;

/// Row-major matrix of S draws by P cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawMatrix {
    pub draws: usize,
    pub cells: usize,
    pub values: Vec<f64>,
}

impl DrawMatrix {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.cells..(s + 1) * self.cells]
    }

    pub fn get(&self, s: usize, cell: usize) -> f64 {
        self.values[s * self.cells + cell]
    }

    /// Draws of one cell.
    pub fn column(&self, cell: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.draws).map(move |s| self.get(s, cell))
    }
}

/// Smallest distance kept between a drawn probability and 0 or 1.
const EDGE: f64 = 1e-15;

fn designs(model: &LatentModel, posterior: &HyperPosterior) -> Result<Vec<Design>> {
    posterior.points.iter().map(|p| model.design(&p.lambda)).collect()
}

/// Draws S cell-probability vectors: grid point by weight, latent vector from
/// its constrained Gaussian approximation, then the inverse logit of each
/// cell's linear predictor. Draw `s` uses its own RNG stream, so the matrix
/// does not depend on thread scheduling.
pub fn sample_cells(model: &LatentModel, posterior: &HyperPosterior, draws: usize, seed: Seed) -> Result<DrawMatrix> {
    if draws == 0 {
        return Err(Error::invalid("draw count must be at least 1"));
    }
    let designs = designs(model, posterior)?;
    let picker = WeightedIndex::new(posterior.points.iter().map(|p| p.weight))
        .map_err(|e| Error::invalid(format!("grid weights: {e}")))?;
    let p = model.n_cells();
    let n = model.n_latent();
    let mut values = vec![0.0; draws * p];
    values.par_chunks_mut(p).enumerate().for_each(|(s, row)| {
        let mut rng = seed.stream(s as u64);
        let k = picker.sample(&mut rng);
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let gamma = posterior.points[k].approx.draw(&z);
        for (cell, out) in row.iter_mut().enumerate() {
            *out = sigmoid(designs[k].eta(cell, &gamma)).clamp(EDGE, 1.0 - EDGE);
        }
    });
    Ok(DrawMatrix {
        draws,
        cells: p,
        values,
    })
}

/// Mixture mean and sd of each cell's linear predictor, computed analytically
/// from the grid's Gaussian approximations.
pub fn eta_moments(model: &LatentModel, posterior: &HyperPosterior) -> Result<Vec<(f64, f64)>> {
    let designs = designs(model, posterior)?;
    let p = model.n_cells();
    let mut m1 = vec![0.0; p];
    let mut m2 = vec![0.0; p];
    for (point, design) in posterior.points.iter().zip(&designs) {
        let a = &point.approx;
        // Conditioned covariance: S - G C S.
        let mut cov = a.covariance.clone();
        if a.constraints.nrows() > 0 {
            cov -= &a.gain * (&a.constraints * &a.covariance);
        }
        for cell in 0..p {
            let row = &design.rows[cell];
            let mean: f64 = row.iter().map(|&(i, v)| v * a.mean[i]).sum();
            let mut var = 0.0;
            for &(i, vi) in row {
                for &(j, vj) in row {
                    var += vi * vj * cov[(i, j)];
                }
            }
            m1[cell] += point.weight * mean;
            m2[cell] += point.weight * (var.max(0.0) + mean * mean);
        }
    }
    Ok(m1
        .into_iter()
        .zip(m2)
        .map(|(a, b)| (a, (b - a * a).max(0.0).sqrt()))
        .collect())
}
