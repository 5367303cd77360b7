//! Conditional latent mode, Gaussian approximation and the Laplace ratio for
//! the hyperparameter posterior.

use std::f64::consts::{LN_2, PI};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use super::likelihood::Likelihood;
use super::{InferenceOptions, LatentIntegration};
use crate::error::{Error, Result};
use crate::lgm::{Design, HyperParams, LatentModel};

/// Gaussian approximation of `gamma | lambda, y`, already conditioned on the
/// model's linear constraints.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub mean: DVector<f64>,
    /// Covariance before conditioning on the constraints.
    pub covariance: DMatrix<f64>,
    /// Lower Cholesky factor of `covariance`.
    pub factor: DMatrix<f64>,
    /// Constraint matrix C (zero rows when unconstrained).
    pub constraints: DMatrix<f64>,
    /// Kriging gain `Sigma C^T (C Sigma C^T)^{-1}`.
    pub gain: DMatrix<f64>,
    pub newton_iterations: usize,
}

impl GaussianApprox {
    /// Marginal variances after conditioning on the constraints.
    pub fn marginal_variances(&self) -> DVector<f64> {
        let mut v = self.covariance.diagonal();
        if self.constraints.nrows() > 0 {
            let cs = &self.constraints * &self.covariance;
            for i in 0..v.len() {
                v[i] -= (self.gain.row(i) * cs.column(i))[(0, 0)];
            }
        }
        v.map(|x| x.max(0.0))
    }

    /// Maps a standard normal vector to a draw from the approximation.
    pub fn draw(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut x = &self.mean + &self.factor * z;
        if self.constraints.nrows() > 0 {
            let cx = &self.constraints * &x;
            x -= &self.gain * cx;
        }
        x
    }
}

/// Result of evaluating one hyperparameter value.
#[derive(Debug, Clone)]
pub struct ConditionalFit {
    pub log_posterior: f64,
    pub approx: GaussianApprox,
    pub mode: DVector<f64>,
}

struct Newton {
    gamma: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    loglik: f64,
    iterations: usize,
}

fn loglik_and_terms(
    design: &Design,
    lik: &dyn Likelihood,
    gamma: &DVector<f64>,
    with_terms: bool,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let n = gamma.len();
    let mut ll = 0.0;
    let mut grad = DVector::zeros(if with_terms { n } else { 0 });
    let mut info = DMatrix::zeros(if with_terms { n } else { 0 }, if with_terms { n } else { 0 });
    for &j in lik.active() {
        let row = &design.rows[j];
        let eta = design.eta(j, gamma);
        let (l, d, w) = lik.eval(j, eta);
        ll += l;
        if with_terms {
            for &(a, xa) in row {
                grad[a] += d * xa;
                for &(b, xb) in row {
                    info[(a, b)] += w * xa * xb;
                }
            }
        }
    }
    (ll, grad, info)
}

fn objective(design: &Design, lik: &dyn Likelihood, q: &DMatrix<f64>, gamma: &DVector<f64>) -> f64 {
    let (ll, _, _) = loglik_and_terms(design, lik, gamma, false);
    ll - 0.5 * gamma.dot(&(q * gamma))
}

/// Newton-Raphson for the mode of `loglik(X gamma) - gamma^T Q gamma / 2`
/// subject to `C gamma = e`, with step halving.
fn newton(
    q: &DMatrix<f64>,
    design: &Design,
    lik: &dyn Likelihood,
    c: &DMatrix<f64>,
    e: &DVector<f64>,
    opts: &InferenceOptions,
) -> Result<Newton> {
    let n = q.nrows();
    let mut gamma = DVector::zeros(n);
    if c.nrows() > 0 && e.iter().any(|&x| x != 0.0) {
        // Start from the prior mean conditioned on C gamma = e.
        let qc = q.clone().cholesky().ok_or(Error::NotPositiveDefinite("prior precision"))?;
        let qinv_ct = qc.solve(&c.transpose());
        let s = c * &qinv_ct;
        let sc = s.cholesky().ok_or(Error::NotPositiveDefinite("constraint covariance"))?;
        gamma = qinv_ct * sc.solve(e);
    }
    let mut f = objective(design, lik, q, &gamma);
    let mut last_step = f64::INFINITY;
    for it in 0..opts.newton_max_iter {
        let (_, lgrad, info) = loglik_and_terms(design, lik, &gamma, true);
        let grad = lgrad - q * &gamma;
        let hessian = q + info;
        let chol = hessian
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("latent Hessian"))?;
        let mut step = chol.solve(&grad);
        if c.nrows() > 0 {
            let hinv_ct = chol.solve(&c.transpose());
            let s = c * &hinv_ct;
            let sc = s.cholesky().ok_or(Error::NotPositiveDefinite("constraint Hessian"))?;
            let resid = c * (&gamma + &step) - e;
            step -= hinv_ct * sc.solve(&resid);
        }
        let mut t = 1.0;
        let mut next = &gamma + &step;
        let mut f_next = objective(design, lik, q, &next);
        while !(f_next >= f - 1e-12 * f.abs().max(1.0)) && t > 1e-10 {
            t *= 0.5;
            next = &gamma + &step * t;
            f_next = objective(design, lik, q, &next);
        }
        last_step = (&step * t).amax();
        gamma = next;
        f = f_next;
        if last_step < opts.newton_tol {
            let (ll, _, info) = loglik_and_terms(design, lik, &gamma, true);
            let hessian = q + info;
            let chol = hessian
                .clone()
                .cholesky()
                .ok_or(Error::NotPositiveDefinite("latent Hessian"))?;
            return Ok(Newton {
                gamma,
                chol,
                loglik: ll,
                iterations: it + 1,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.newton_max_iter,
        last_step,
    })
}

fn log_det_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Gauss-Hermite nodes and weights for weight function exp(-x^2).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 1 {
        return (vec![0.0], vec![PI.sqrt()]);
    }
    let j = DMatrix::from_fn(n, n, |r, c| {
        if r + 1 == c || c + 1 == r {
            (r.max(c) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], PI.sqrt() * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Dense prior precision, design and constraints at `lambda`.
pub(crate) struct Assembled {
    pub q: DMatrix<f64>,
    pub q_chol: Cholesky<f64, Dyn>,
    pub design: Design,
    pub c: DMatrix<f64>,
}

pub(crate) fn assemble(model: &LatentModel, lambda: &HyperParams) -> Result<Assembled> {
    let q = DMatrix::from(&model.prior_precision(lambda)?);
    let q_chol = q.clone().cholesky().ok_or(Error::NotPositiveDefinite("prior precision"))?;
    Ok(Assembled {
        q,
        q_chol,
        design: model.design(lambda)?,
        c: model.constraints(),
    })
}

fn use_quadrature(model: &LatentModel, opts: &InferenceOptions) -> Option<usize> {
    match opts.integration {
        LatentIntegration::Laplace => None,
        LatentIntegration::Quadrature { nodes } => Some(nodes.max(1)),
        LatentIntegration::Auto => {
            (model.n_latent() <= opts.auto_quadrature_max_dim && model.constraints().nrows() == 0).then_some(15)
        }
    }
}

/// Mode of `gamma | lambda, y` and its Gaussian approximation.
pub fn conditional_mode(
    model: &LatentModel,
    lik: &dyn Likelihood,
    lambda: &HyperParams,
    opts: &InferenceOptions,
) -> Result<ConditionalFit> {
    if lik.n_cells() != model.n_cells() {
        return Err(Error::invalid(format!(
            "likelihood has {} cells, model has {}",
            lik.n_cells(),
            model.n_cells()
        )));
    }
    let a = assemble(model, lambda)?;
    let e = DVector::zeros(a.c.nrows());
    let nt = newton(&a.q, &a.design, lik, &a.c, &e, opts)?;
    let n = nt.gamma.len();
    let k = a.c.nrows();

    let mut log_ratio = nt.loglik - 0.5 * nt.gamma.dot(&(&a.q * &nt.gamma)) + 0.5 * log_det_chol(&a.q_chol)
        - 0.5 * log_det_chol(&nt.chol);
    let h_inv = nt.chol.inverse();
    let gain = if k > 0 {
        let q_inv_ct = a.q_chol.solve(&a.c.transpose());
        let sq = (&a.c * q_inv_ct).cholesky().ok_or(Error::NotPositiveDefinite("constraint covariance"))?;
        let h_inv_ct = &h_inv * a.c.transpose();
        let sh = (&a.c * &h_inv_ct)
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("constraint Hessian"))?;
        log_ratio += 0.5 * log_det_chol(&sq) - 0.5 * log_det_chol(&sh);
        h_inv_ct * sh.inverse()
    } else {
        DMatrix::zeros(n, 0)
    };

    let laplace = GaussianApprox {
        mean: nt.gamma.clone(),
        factor: h_inv
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("latent covariance"))?
            .unpack(),
        covariance: h_inv,
        constraints: a.c.clone(),
        gain,
        newton_iterations: nt.iterations,
    };

    let (log_marginal, approx) = match use_quadrature(model, opts) {
        Some(nodes) if k == 0 && nodes > 1 => {
            let (lm, approx) = adaptive_quadrature(&a, lik, &nt, nodes, laplace)?;
            (lm, approx)
        }
        _ => (log_ratio, laplace),
    };
    Ok(ConditionalFit {
        log_posterior: model.hyper_logprior(lambda) + log_marginal,
        approx,
        mode: nt.gamma,
    })
}

/// Adaptive Gauss-Hermite estimate of `log p(y | lambda)` with the posterior
/// moments of gamma, centred at the mode and scaled by the Hessian.
fn adaptive_quadrature(
    a: &Assembled,
    lik: &dyn Likelihood,
    nt: &Newton,
    nodes: usize,
    fallback: GaussianApprox,
) -> Result<(f64, GaussianApprox)> {
    let n = nt.gamma.len();
    let (x, w) = gauss_hermite(nodes);
    let lt_inv = nt
        .chol
        .l()
        .transpose()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite("latent Hessian"))?;
    let total = nodes.pow(n as u32);
    let mut logs = Vec::with_capacity(total);
    let mut points = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let u = DVector::from_iterator(n, idx.iter().map(|&i| x[i]));
        let log_w: f64 = idx.iter().map(|&i| w[i].ln()).sum::<f64>() + u.norm_squared();
        let g = &nt.gamma + &lt_inv * &u * 2f64.sqrt();
        let f = objective(&a.design, lik, &a.q, &g);
        logs.push(log_w + f);
        points.push(g);
        for d in 0..n {
            idx[d] += 1;
            if idx[d] < nodes {
                break;
            }
            idx[d] = 0;
        }
    }
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let sum: f64 = probs.iter().sum();
    let log_int = m + sum.ln();
    let log_marginal = log_int + 0.5 * n as f64 * LN_2 - 0.5 * log_det_chol(&nt.chol) + 0.5 * log_det_chol(&a.q_chol)
        - 0.5 * n as f64 * (2.0 * PI).ln();

    let mut mean = DVector::zeros(n);
    for (p, g) in probs.iter().zip(&points) {
        mean += g * (p / sum);
    }
    let mut cov = DMatrix::zeros(n, n);
    for (p, g) in probs.iter().zip(&points) {
        let d = g - &mean;
        cov += &d * d.transpose() * (p / sum);
    }
    let approx = match cov.clone().cholesky() {
        Some(ch) => GaussianApprox {
            mean,
            factor: ch.unpack(),
            covariance: cov,
            ..fallback
        },
        None => fallback,
    };
    Ok((log_marginal, approx))
}

/// Laplace approximation of `log p(lambda | y)` up to its normalizing constant.
pub fn hyper_logposterior(
    model: &LatentModel,
    lik: &dyn Likelihood,
    lambda: &HyperParams,
    opts: &InferenceOptions,
) -> Result<f64> {
    Ok(conditional_mode(model, lik, lambda, opts)?.log_posterior)
}

/// Per-coordinate Laplace-corrected marginal of `gamma_i | lambda, y`,
/// tabulated on `points` abscissae spanning +/- `span` approximate sds.
/// Returns (mean, sd).
pub fn laplace_marginal(
    model: &LatentModel,
    lik: &dyn Likelihood,
    lambda: &HyperParams,
    fit: &ConditionalFit,
    coord: usize,
    opts: &InferenceOptions,
) -> Result<(f64, f64)> {
    let a = assemble(model, lambda)?;
    let n = model.n_latent();
    let k = a.c.nrows();
    let mut c = DMatrix::zeros(k + 1, n);
    c.rows_mut(0, k).copy_from(&a.c);
    c[(k, coord)] = 1.0;
    let center = fit.approx.mean[coord];
    let sd = fit.approx.marginal_variances()[coord].sqrt();
    if !(sd > 1e-12) {
        return Ok((center, 0.0));
    }
    let points = 61;
    let span = 6.0;
    let h = 2.0 * span * sd / (points - 1) as f64;
    let mut xs = Vec::with_capacity(points);
    let mut logs = Vec::with_capacity(points);
    for i in 0..points {
        let x = center - span * sd + i as f64 * h;
        let mut e = DVector::zeros(k + 1);
        e[k] = x;
        let nt = newton(&a.q, &a.design, lik, &c, &e, opts)?;
        let f = nt.loglik - 0.5 * nt.gamma.dot(&(&a.q * &nt.gamma));
        let s = (&c * nt.chol.solve(&c.transpose()))
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("constraint Hessian"))?;
        logs.push(f - 0.5 * log_det_chol(&nt.chol) - 0.5 * log_det_chol(&s));
        xs.push(x);
    }
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs
        .iter()
        .enumerate()
        .map(|(i, l)| (l - m).exp() * if i == 0 || i + 1 == points { 0.5 } else { 1.0 })
        .collect();
    let z: f64 = w.iter().sum();
    let mean = xs.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / z;
    let var = xs.iter().zip(&w).map(|(x, w)| (x - mean).powi(2) * w).sum::<f64>() / z;
    Ok((mean, var.sqrt()))
}
