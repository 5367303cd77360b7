//! Brute-force reference for small logistic latent models: dense trapezoid
//! quadrature over the latent vector (in the eigenbasis of the conditional
//! Hessian) nested inside a dense trapezoid rule over log precision.
//!
//! Shared by the core integration tests and the acceptance suite; it depends
//! only on nalgebra and rayon so it stays independent of the code under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

/// Prior on the common precision of every latent coordinate.
#[derive(Debug, Clone, Copy)]
pub enum TauPrior {
    Fixed(f64),
    /// Exponential prior on sigma with `Pr(sigma > u) = alpha`, placed on log tau.
    Pc { u: f64, alpha: f64 },
}

/// Logistic model with iid N(0, 1/tau) latent coordinates; each cell's linear
/// predictor is the sum of the coordinates it lists.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub n_latent: usize,
    pub rows: Vec<Vec<usize>>,
    pub trials: Vec<u64>,
    pub successes: Vec<u64>,
    pub prior: TauPrior,
}

#[derive(Debug, Clone)]
pub struct Reference {
    pub mlik: f64,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Posterior mean and sd of log tau, when tau is random.
    pub log_tau: Option<(f64, f64)>,
}

fn log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Fixture {
    fn loglik(&self, g: &DVector<f64>) -> f64 {
        self.rows
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let eta: f64 = r.iter().map(|&i| g[i]).sum();
                let (n, s) = (self.trials[j] as f64, self.successes[j] as f64);
                s * eta - n * log1pexp(eta)
            })
            .sum()
    }

    /// log p(y | gamma) + log p(gamma | tau).
    fn log_joint(&self, g: &DVector<f64>, tau: f64) -> f64 {
        let d = self.n_latent as f64;
        self.loglik(g) + 0.5 * d * (tau / (2.0 * std::f64::consts::PI)).ln() - 0.5 * tau * g.norm_squared()
    }

    /// Mode of the log joint and its negated Hessian.
    fn mode(&self, tau: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n_latent;
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for _ in 0..200 {
            let mut grad = -tau * &g;
            h = DMatrix::identity(n, n) * tau;
            for (j, r) in self.rows.iter().enumerate() {
                let eta: f64 = r.iter().map(|&i| g[i]).sum();
                let p = 1.0 / (1.0 + (-eta).exp());
                let (nt, s) = (self.trials[j] as f64, self.successes[j] as f64);
                for &a in r {
                    grad[a] += s - nt * p;
                    for &b in r {
                        h[(a, b)] += nt * p * (1.0 - p);
                    }
                }
            }
            let step = h.clone().lu().solve(&grad).expect("nonsingular Hessian");
            g += &step;
            if step.amax() < 1e-13 {
                break;
            }
        }
        (g, h)
    }

    /// (log integral, first moments, second moments) of the latent vector at one tau.
    fn inner(&self, tau: f64, half_width: f64, half_points: usize) -> (f64, DVector<f64>, DVector<f64>) {
        let n = self.n_latent;
        let (mode, h) = self.mode(tau);
        let eig = SymmetricEigen::new(h);
        let scale = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
        let log_jac: f64 = eig.eigenvalues.iter().map(|v| -0.5 * v.ln()).sum();
        let step = half_width / half_points as f64;
        let per_dim = 2 * half_points + 1;
        let total = per_dim.pow(n as u32);
        let mut logs = Vec::with_capacity(total);
        let mut pts = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            let u = DVector::from_iterator(n, idx.iter().map(|&k| (k as f64 - half_points as f64) * step));
            let g = &mode + &scale * u;
            logs.push(self.log_joint(&g, tau));
            pts.push(g);
            for k in idx.iter_mut() {
                *k += 1;
                if *k < per_dim {
                    break;
                }
                *k = 0;
            }
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        let mut m1 = DVector::zeros(n);
        let mut m2 = DVector::zeros(n);
        for (wi, g) in w.iter().zip(&pts) {
            m1 += g * (wi / z);
            m2 += g.component_mul(g) * (wi / z);
        }
        (m + z.ln() + n as f64 * step.ln() + log_jac, m1, m2)
    }

    /// Half-width in sds and half the point count per latent axis.
    fn resolution(&self) -> (f64, usize) {
        match self.n_latent {
            1 => (12.0, 200),
            2 => (10.0, 60),
            _ => (9.0, 16),
        }
    }

    /// log p(y | tau) by dense quadrature.
    pub fn log_evidence(&self, tau: f64) -> f64 {
        let (hw, hp) = self.resolution();
        self.inner(tau, hw, hp).0
    }

    /// Dense-quadrature posterior summaries.
    pub fn reference(&self) -> Reference {
        let (hw, hp) = self.resolution();
        match self.prior {
            TauPrior::Fixed(tau) => {
                let (li, m1, m2) = self.inner(tau, hw, hp);
                Reference {
                    mlik: li,
                    sds: m1.iter().zip(m2.iter()).map(|(a, b)| (b - a * a).sqrt()).collect(),
                    means: m1.iter().cloned().collect(),
                    log_tau: None,
                }
            }
            TauPrior::Pc { u, alpha } => {
                let r = -alpha.ln() / u;
                let log_prior =
                    |t: f64| r.ln() - r * (-0.5 * t).exp() - 0.5 * t - std::f64::consts::LN_2;
                let (lo, hi, h) = (-14.0, 60.0, 0.2);
                let count = ((hi - lo) / h) as usize + 1;
                let thetas: Vec<f64> = (0..count).map(|k| lo + k as f64 * h).collect();
                let evals: Vec<_> = thetas.par_iter().map(|&t| self.inner(t.exp(), hw, hp)).collect();
                let logs: Vec<f64> = thetas.iter().zip(&evals).map(|(&t, e)| log_prior(t) + e.0).collect();
                let moments: Vec<_> = evals.into_iter().map(|(_, m1, m2)| (m1, m2)).collect();
                let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
                assert!(w[0] < 1e-12 && w[count - 1] < 1e-12, "{}: log tau range too narrow ({} {})", self.name, w[0], w[count - 1]);
                let z: f64 = w.iter().sum();
                let n = self.n_latent;
                let mut m1 = DVector::zeros(n);
                let mut m2 = DVector::zeros(n);
                let (mut t1, mut t2) = (0.0, 0.0);
                for ((wi, (a, b)), t) in w.iter().zip(&moments).zip(&thetas) {
                    m1 += a * (wi / z);
                    m2 += b * (wi / z);
                    t1 += t * wi / z;
                    t2 += t * t * wi / z;
                }
                Reference {
                    mlik: m + (z * h).ln(),
                    sds: m1.iter().zip(m2.iter()).map(|(a, b)| (b - a * a).sqrt()).collect(),
                    means: m1.iter().cloned().collect(),
                    log_tau: Some((t1, (t2 - t1 * t1).sqrt())),
                }
            }
        }
    }
}

/// The five reference fixtures: at most three latent coordinates, at most one
/// hyperparameter and at most 100 rows each.
pub fn fixtures() -> Vec<Fixture> {
    vec![
        Fixture {
            name: "single_observation",
            n_latent: 1,
            rows: vec![vec![0]],
            trials: vec![1],
            successes: vec![1],
            prior: TauPrior::Fixed(1.0),
        },
        Fixture {
            name: "intercept_two_groups_fixed",
            n_latent: 3,
            rows: vec![vec![0, 1], vec![0, 2]],
            trials: vec![30, 25],
            successes: vec![21, 8],
            prior: TauPrior::Fixed(0.5),
        },
        Fixture {
            name: "three_groups_pc",
            n_latent: 3,
            rows: vec![vec![0], vec![1], vec![2]],
            trials: vec![30, 30, 30],
            successes: vec![26, 4, 15],
            prior: TauPrior::Pc { u: 1.0, alpha: 0.1 },
        },
        Fixture {
            name: "intercept_two_groups_pc",
            n_latent: 3,
            rows: vec![vec![0, 1], vec![0, 2]],
            trials: vec![50, 50],
            successes: vec![44, 7],
            prior: TauPrior::Pc { u: 1.0, alpha: 0.1 },
        },
        Fixture {
            name: "two_groups_pc",
            n_latent: 2,
            rows: vec![vec![0], vec![1]],
            trials: vec![40, 40],
            successes: vec![36, 3],
            prior: TauPrior::Pc { u: 1.0, alpha: 0.01 },
        },
    ]
}
