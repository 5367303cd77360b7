//! Hyperparameter mode search, grid exploration and the marginal likelihood.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use super::laplace::{conditional_mode, ConditionalFit, GaussianApprox};
use super::likelihood::Likelihood;
use super::{InferenceOptions, Strategy};
use crate::error::{Error, Result};
use crate::lgm::{HyperParams, LatentModel};

/// One explored hyperparameter value.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub lambda: HyperParams,
    /// Lattice coordinates in whitened units of `step`.
    pub z: Vec<i32>,
    pub log_posterior: f64,
    /// Normalized integration weight.
    pub weight: f64,
    pub approx: GaussianApprox,
}

/// Explored hyperparameter posterior.
#[derive(Debug, Clone)]
pub struct HyperPosterior {
    pub points: Vec<GridPoint>,
    pub mode: HyperParams,
    pub mode_log_posterior: f64,
    /// Covariance of the Gaussian approximation at the mode (internal scale).
    pub covariance: DMatrix<f64>,
    /// log p(y) estimate.
    pub mlik: f64,
    pub evaluations: usize,
    pub strategy: Strategy,
}

impl HyperPosterior {
    /// Posterior mean of the internal hyperparameters.
    pub fn hyper_mean(&self) -> Vec<f64> {
        let d = self.mode.0.len();
        let mut m = vec![0.0; d];
        for p in &self.points {
            for (mi, x) in m.iter_mut().zip(&p.lambda.0) {
                *mi += p.weight * x;
            }
        }
        m
    }

    /// Mixture mean and sd of every latent coordinate.
    pub fn latent_moments(&self) -> Vec<(f64, f64)> {
        let n = self.points[0].approx.mean.len();
        let mut m1 = vec![0.0; n];
        let mut m2 = vec![0.0; n];
        for p in &self.points {
            let var = p.approx.marginal_variances();
            for i in 0..n {
                let mu = p.approx.mean[i];
                m1[i] += p.weight * mu;
                m2[i] += p.weight * (var[i] + mu * mu);
            }
        }
        m1.iter()
            .zip(&m2)
            .map(|(a, b)| (*a, (b - a * a).max(0.0).sqrt()))
            .collect()
    }
}

fn evaluate(model: &LatentModel, lik: &dyn Likelihood, x: &[f64], opts: &InferenceOptions) -> Option<ConditionalFit> {
    let fit = conditional_mode(model, lik, &HyperParams(x.to_vec()), opts).ok()?;
    fit.log_posterior.is_finite().then_some(fit)
}

fn logpost(model: &LatentModel, lik: &dyn Likelihood, x: &[f64], opts: &InferenceOptions) -> f64 {
    evaluate(model, lik, x, opts).map_or(f64::NEG_INFINITY, |f| f.log_posterior)
}

/// Nelder-Mead maximization of `f`. Returns (argmax, max, evaluations).
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: f64, tol: f64, max_evals: usize) -> (Vec<f64>, f64, usize) {
    let d = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = f(&x);
        simplex.push((x, v));
    }
    let mut evals = d + 1;
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| b.1.total_cmp(&a.1));
    while evals < max_evals {
        order(&mut simplex);
        let best = simplex[0].1;
        let worst = simplex[d].1;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (best - worst).abs() < tol && size < tol.sqrt() {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|(x, _)| x[k]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        evals += 1;
        if fr > simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[d] = if fe > fr { (xe, fe) } else { (xr, fr) };
        } else if fr > simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr > simplex[d].1 {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc > simplex[d].1.max(fr) {
                simplex[d] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = s.0.iter().zip(&x_best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let v = f(&x);
                    *s = (x, v);
                }
                evals += d;
            }
        }
    }
    order(&mut simplex);
    let (x, v) = simplex.swap_remove(0);
    (x, v, evals)
}

/// Central finite-difference gradient and Hessian, evaluated in parallel.
fn fd_derivatives<F: Fn(&[f64]) -> f64 + Sync>(f: &F, x: &[f64], h: f64) -> (DVector<f64>, DMatrix<f64>, usize) {
    let d = x.len();
    let mut offsets: Vec<Vec<(usize, f64)>> = vec![vec![]];
    for i in 0..d {
        offsets.push(vec![(i, h)]);
        offsets.push(vec![(i, -h)]);
        for j in 0..i {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                offsets.push(vec![(i, si * h), (j, sj * h)]);
            }
        }
    }
    let values: Vec<f64> = offsets
        .par_iter()
        .map(|o| {
            let mut y = x.to_vec();
            for &(k, dv) in o {
                y[k] += dv;
            }
            f(&y)
        })
        .collect();
    let mut idx = 1;
    let f0 = values[0];
    let mut g = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for i in 0..d {
        plus[i] = values[idx];
        minus[i] = values[idx + 1];
        idx += 2;
        g[i] = (plus[i] - minus[i]) / (2.0 * h);
        hess[(i, i)] = (plus[i] - 2.0 * f0 + minus[i]) / (h * h);
        for j in 0..i {
            let (pp, pm, mp, mm) = (values[idx], values[idx + 1], values[idx + 2], values[idx + 3]);
            idx += 4;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    (g, hess, values.len())
}

/// Makes a negated Hessian positive definite by flooring its eigenvalues.
fn positive_part(neg_hess: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(neg_hess);
    let floor = 1e-6;
    if eig.eigenvalues.iter().all(|&v| v > floor) {
        return eig.recompose();
    }
    log::warn!("hyperparameter Hessian is not negative definite at the mode; flooring eigenvalues");
    let vals = eig.eigenvalues.map(|v| v.abs().max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

struct ModeSearch {
    mode: Vec<f64>,
    covariance: DMatrix<f64>,
    evaluations: usize,
}

fn find_mode(model: &LatentModel, lik: &dyn Likelihood, opts: &InferenceOptions) -> Result<ModeSearch> {
    let d = model.n_hyper();
    let f = |x: &[f64]| logpost(model, lik, x, opts);
    let x0 = model.initial_hyper().0;
    if !f(&x0).is_finite() {
        return Err(Error::ModeSearch("log posterior is not finite at the initial value".into()));
    }
    let (mut x, mut v, mut evals) = nelder_mead(f, &x0, 1.0, opts.mode_tol, opts.mode_max_evals);
    // Polish with Newton steps on finite-difference derivatives.
    let mut neg_hess = DMatrix::identity(d, d);
    for _ in 0..opts.polish_iterations {
        let (g, h, n) = fd_derivatives(&f, &x, opts.fd_step);
        evals += n;
        neg_hess = positive_part(-h);
        let step = neg_hess
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("hyperparameter Hessian"))?
            .solve(&g);
        if step.amax() < 1e-7 {
            break;
        }
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-4 {
            let y: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let fy = f(&y);
            evals += 1;
            if fy > v {
                x = y;
                v = fy;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let (_, h, n) = fd_derivatives(&f, &x, opts.fd_step);
    evals += n;
    neg_hess = if d > 0 { positive_part(-h) } else { neg_hess };
    let covariance = neg_hess
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("hyperparameter Hessian"))?
        .inverse();
    Ok(ModeSearch {
        mode: x,
        covariance,
        evaluations: evals,
    })
}

fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Explores the hyperparameter posterior and estimates the marginal likelihood.
pub fn explore(model: &LatentModel, lik: &dyn Likelihood, opts: &InferenceOptions) -> Result<HyperPosterior> {
    let d = model.n_hyper();
    if d == 0 {
        let fit = conditional_mode(model, lik, &HyperParams(vec![]), opts)?;
        return Ok(HyperPosterior {
            mode: HyperParams(vec![]),
            mode_log_posterior: fit.log_posterior,
            covariance: DMatrix::zeros(0, 0),
            mlik: fit.log_posterior,
            evaluations: 1,
            strategy: opts.strategy,
            points: vec![GridPoint {
                lambda: HyperParams(vec![]),
                z: vec![],
                log_posterior: fit.log_posterior,
                weight: 1.0,
                approx: fit.approx,
            }],
        });
    }
    let search = find_mode(model, lik, opts)?;
    let eig = SymmetricEigen::new(search.covariance.clone());
    let log_det_sigma: f64 = eig.eigenvalues.iter().map(|v| v.ln()).sum();
    let scale = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let to_lambda = |z: &[i32]| -> Vec<f64> {
        let zv = DVector::from_iterator(d, z.iter().map(|&k| k as f64 * opts.grid_step));
        let dx = &scale * zv;
        search.mode.iter().zip(dx.iter()).map(|(m, v)| m + v).collect()
    };

    let center = evaluate(model, lik, &search.mode, opts)
        .ok_or_else(|| Error::ModeSearch("log posterior is not finite at the mode".into()))?;
    let mut evaluations = search.evaluations + 1;

    if opts.strategy == Strategy::EmpiricalBayes {
        let mlik = center.log_posterior + 0.5 * d as f64 * (2.0 * PI).ln() + 0.5 * log_det_sigma;
        return Ok(HyperPosterior {
            mode: HyperParams(search.mode.clone()),
            mode_log_posterior: center.log_posterior,
            covariance: search.covariance,
            mlik,
            evaluations,
            strategy: opts.strategy,
            points: vec![GridPoint {
                lambda: HyperParams(search.mode),
                z: vec![0; d],
                log_posterior: center.log_posterior,
                weight: 1.0,
                approx: center.approx,
            }],
        });
    }

    let top = center.log_posterior;
    let mut accepted: BTreeMap<Vec<i32>, ConditionalFit> = BTreeMap::new();
    let mut seen: BTreeSet<Vec<i32>> = BTreeSet::new();
    let origin = vec![0i32; d];
    seen.insert(origin.clone());
    accepted.insert(origin.clone(), center);
    let mut frontier = vec![origin];
    while !frontier.is_empty() && accepted.len() < opts.max_grid_points {
        let mut ring: BTreeSet<Vec<i32>> = BTreeSet::new();
        for z in &frontier {
            for k in 0..d {
                for s in [-1, 1] {
                    let mut y = z.clone();
                    y[k] += s;
                    if !seen.contains(&y) {
                        ring.insert(y);
                    }
                }
            }
        }
        let ring: Vec<Vec<i32>> = ring.into_iter().collect();
        seen.extend(ring.iter().cloned());
        evaluations += ring.len();
        let fits: Vec<Option<ConditionalFit>> = ring
            .par_iter()
            .map(|z| evaluate(model, lik, &to_lambda(z), opts))
            .collect();
        frontier.clear();
        for (z, fit) in ring.into_iter().zip(fits) {
            if let Some(fit) = fit {
                if fit.log_posterior >= top - opts.prune {
                    frontier.push(z.clone());
                    accepted.insert(z, fit);
                }
            }
        }
    }
    let mut points: Vec<(Vec<i32>, ConditionalFit)> = accepted.into_iter().collect();
    if points.len() > opts.max_grid_points {
        points.sort_by(|a, b| b.1.log_posterior.total_cmp(&a.1.log_posterior).then_with(|| a.0.cmp(&b.0)));
        points.truncate(opts.max_grid_points);
        points.sort_by(|a, b| a.0.cmp(&b.0));
    }

    let h = opts.grid_step;
    let log_cell = d as f64 * h.ln();
    let log_delta = log_cell + 0.5 * log_det_sigma;
    let log_mass = log_sum_exp(points.iter().map(|(_, f)| f.log_posterior + log_delta));
    // Gaussian mass covered by the retained lattice cells; exactly one for an
    // unbounded lattice, less when pruning or the point cap truncates it.
    let log_coverage = log_sum_exp(points.iter().map(|(z, _)| {
        let r2: f64 = z.iter().map(|&k| (k as f64 * h).powi(2)).sum();
        log_cell - 0.5 * d as f64 * (2.0 * PI).ln() - 0.5 * r2
    }));
    let mlik = log_mass - log_coverage.min(0.0);
    let lse = log_sum_exp(points.iter().map(|(_, f)| f.log_posterior));
    let grid = points
        .into_iter()
        .map(|(z, fit)| GridPoint {
            lambda: HyperParams(to_lambda(&z)),
            weight: (fit.log_posterior - lse).exp(),
            z,
            log_posterior: fit.log_posterior,
            approx: fit.approx,
        })
        .collect();
    Ok(HyperPosterior {
        points: grid,
        mode: HyperParams(search.mode),
        mode_log_posterior: top,
        covariance: search.covariance,
        mlik,
        evaluations,
        strategy: opts.strategy,
    })
}
