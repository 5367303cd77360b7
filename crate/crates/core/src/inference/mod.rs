//! Approximate Bayesian inference for the latent Gaussian model: conditional
//! Newton mode, Laplace ratio for the hyperparameters, grid or empirical Bayes
//! exploration, marginal likelihood and posterior draws.

mod explore;
mod laplace;
mod likelihood;
mod sample;

use std::fmt;
use std::str::FromStr;

pub use explore::{explore, nelder_mead, GridPoint, HyperPosterior};
pub use laplace::{
    conditional_mode, gauss_hermite, hyper_logposterior, laplace_marginal, ConditionalFit, GaussianApprox,
};
pub use likelihood::{CellLikelihood, GaussianCells, Likelihood};
pub use sample::{eta_moments, sample_cells, DrawMatrix};

use crate::error::{Error, Result};
use crate::lgm::LatentModel;
use crate::rng::Seed;

/// How the hyperparameter posterior is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    #[default]
    Grid,
    EmpiricalBayes,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Grid => "grid",
            Strategy::EmpiricalBayes => "eb",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Strategy::Grid),
            "eb" => Ok(Strategy::EmpiricalBayes),
            other => Err(Error::invalid(format!("unknown strategy `{other}` (expected grid or eb)"))),
        }
    }
}

/// How `p(y | lambda)` is integrated over the latent field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatentIntegration {
    /// Laplace ratio at the conditional mode.
    Laplace,
    /// Adaptive Gauss-Hermite with the given number of nodes per dimension.
    Quadrature { nodes: usize },
    /// Quadrature for small unconstrained models, Laplace otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOptions {
    pub strategy: Strategy,
    /// Grid spacing in whitened sd units.
    pub grid_step: f64,
    /// Grid points further than this below the mode's log posterior are dropped.
    pub prune: f64,
    pub max_grid_points: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub integration: LatentIntegration,
    pub auto_quadrature_max_dim: usize,
    /// Finite-difference step for the hyperparameter Hessian.
    pub fd_step: f64,
    pub mode_tol: f64,
    pub mode_max_evals: usize,
    pub polish_iterations: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            strategy: Strategy::Grid,
            grid_step: 0.5,
            prune: 6.0,
            max_grid_points: 81,
            newton_tol: 1e-8,
            newton_max_iter: 100,
            integration: LatentIntegration::Auto,
            auto_quadrature_max_dim: 3,
            fd_step: 5e-3,
            mode_tol: 1e-7,
            mode_max_evals: 2000,
            polish_iterations: 5,
        }
    }
}

/// Explored hyperparameter posterior with cell-probability draws.
#[derive(Debug, Clone)]
pub struct PosteriorResult {
    pub hyper: HyperPosterior,
    pub draws: DrawMatrix,
}

impl PosteriorResult {
    pub fn mlik(&self) -> f64 {
        self.hyper.mlik
    }

    /// Largest Newton iteration count over the grid.
    pub fn max_newton_iterations(&self) -> usize {
        self.hyper
            .points
            .iter()
            .map(|p| p.approx.newton_iterations)
            .max()
            .unwrap_or(0)
    }
}

/// Explores the hyperparameters, then draws `draws` cell-probability vectors.
pub fn fit(
    model: &LatentModel,
    lik: &dyn Likelihood,
    opts: &InferenceOptions,
    draws: usize,
    seed: Seed,
) -> Result<PosteriorResult> {
    let hyper = explore(model, lik, opts)?;
    log::info!(
        "{}: {} grid points from {} evaluations, mlik {:.4}",
        model.spec.label,
        hyper.points.len(),
        hyper.evaluations,
        hyper.mlik
    );
    let draws = sample_cells(model, &hyper, draws, seed)?;
    Ok(PosteriorResult { hyper, draws })
}
