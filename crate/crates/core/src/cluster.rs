//! Latent class segmentation: mixtures of products of multinomials fitted by
//! EM, BIC selection of the class count, and poststratified class profiles.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::census::CensusCellTable;
use crate::error::{Error, Result};
use crate::inference::DrawMatrix;
use crate::ingest::{Preference, SurveyRecord};
use crate::rng::Seed;
use crate::schema::CategoricalSchema;

/// Categorical observations collapsed to distinct patterns with counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalData {
    pub names: Vec<String>,
    pub levels: Vec<Vec<String>>,
    pub patterns: Vec<Vec<usize>>,
    pub counts: Vec<f64>,
}

impl CategoricalData {
    pub fn new(names: Vec<String>, levels: Vec<Vec<String>>, rows: impl IntoIterator<Item = Vec<usize>>) -> Result<Self> {
        if names.len() != levels.len() {
            return Err(Error::invalid("one level list per variable"));
        }
        let mut tally: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for row in rows {
            if row.len() != names.len() || row.iter().zip(&levels).any(|(&x, l)| x >= l.len()) {
                return Err(Error::invalid(format!("row {row:?} does not fit the variables")));
            }
            *tally.entry(row).or_default() += 1.0;
        }
        if tally.is_empty() {
            return Err(Error::EmptyInput("no rows to cluster".into()));
        }
        let (patterns, counts) = tally.into_iter().unzip();
        Ok(CategoricalData {
            names,
            levels,
            patterns,
            counts,
        })
    }

    /// Schema factors followed by the three-way preference variable.
    pub fn from_records(schema: &CategoricalSchema, records: &[SurveyRecord]) -> Result<Self> {
        let mut names: Vec<String> = schema.factors.iter().map(|f| f.name.clone()).collect();
        let mut levels: Vec<Vec<String>> = schema.factors.iter().map(|f| f.levels.clone()).collect();
        names.push("preference".into());
        levels.push(Preference::LEVELS.iter().map(|s| s.to_string()).collect());
        let rows = records.iter().map(|r| {
            let mut row = r.levels.clone();
            row.push(Preference::of(r.choice).index());
            row
        });
        Self::new(names, levels, rows)
    }

    pub fn n(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub k: usize,
    pub weights: Vec<f64>,
    /// `probs[state][variable][level]`.
    pub probs: Vec<Vec<Vec<f64>>>,
    pub loglik: f64,
    pub bic: f64,
    pub iterations: usize,
    /// Log-likelihood after every EM iteration.
    pub trace: Vec<f64>,
    pub restart: usize,
}

impl MixtureModel {
    pub fn free_parameters(k: usize, data: &CategoricalData) -> usize {
        (k - 1) + k * data.levels.iter().map(|l| l.len() - 1).sum::<usize>()
    }

    fn log_joint(&self, pattern: &[usize]) -> Vec<f64> {
        (0..self.k)
            .map(|s| {
                self.weights[s].ln()
                    + pattern
                        .iter()
                        .enumerate()
                        .map(|(v, &x)| self.probs[s][v][x].ln())
                        .sum::<f64>()
            })
            .collect()
    }

    /// State posterior for one pattern.
    pub fn responsibilities(&self, pattern: &[usize]) -> Vec<f64> {
        normalize_logs(&self.log_joint(pattern)).1
    }

    pub fn loglik_of(&self, data: &CategoricalData) -> f64 {
        data.patterns
            .iter()
            .zip(&data.counts)
            .map(|(p, c)| c * normalize_logs(&self.log_joint(p)).0)
            .sum()
    }
}

/// (log-sum-exp, normalized probabilities).
fn normalize_logs(logs: &[f64]) -> (f64, Vec<f64>) {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    (m + z.ln(), e.into_iter().map(|x| x / z).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    /// Pseudo-count added to every category in the M step.
    pub smoothing: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 3000,
            tol: 1e-8,
            restarts: 10,
            smoothing: 1e-10,
        }
    }
}

fn m_step(data: &CategoricalData, resp: &[Vec<f64>], k: usize, eps: f64) -> (Vec<f64>, Vec<Vec<Vec<f64>>>) {
    let n = data.n();
    let mut mass = vec![0.0; k];
    let mut tallies: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|_| data.levels.iter().map(|l| vec![0.0; l.len()]).collect())
        .collect();
    for ((p, &c), r) in data.patterns.iter().zip(&data.counts).zip(resp) {
        for s in 0..k {
            let w = c * r[s];
            mass[s] += w;
            for (v, &x) in p.iter().enumerate() {
                tallies[s][v][x] += w;
            }
        }
    }
    let weights = mass.iter().map(|m| (m + eps) / (n + k as f64 * eps)).collect();
    let probs = tallies
        .into_iter()
        .zip(&mass)
        .map(|(vars, &m)| {
            vars.into_iter()
                .map(|t| {
                    let l = t.len() as f64;
                    t.iter().map(|x| (x + eps) / (m + l * eps)).collect()
                })
                .collect()
        })
        .collect();
    (weights, probs)
}

fn em_run(data: &CategoricalData, k: usize, seed: Seed, restart: usize, opts: &EmOptions) -> MixtureModel {
    let mut rng = seed.rng();
    let mut resp: Vec<Vec<f64>> = data
        .patterns
        .iter()
        .map(|_| {
            let r: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = r.iter().sum();
            r.into_iter().map(|x| x / z).collect()
        })
        .collect();
    let mut model = MixtureModel {
        k,
        weights: vec![],
        probs: vec![],
        loglik: f64::NEG_INFINITY,
        bic: f64::INFINITY,
        iterations: 0,
        trace: vec![],
        restart,
    };
    for it in 0..opts.max_iter {
        let (w, p) = m_step(data, &resp, k, opts.smoothing);
        model.weights = w;
        model.probs = p;
        let log_w: Vec<f64> = model.weights.iter().map(|w| w.ln()).collect();
        let log_p: Vec<Vec<Vec<f64>>> = model
            .probs
            .iter()
            .map(|vars| vars.iter().map(|v| v.iter().map(|x| x.ln()).collect()).collect())
            .collect();
        let mut ll = 0.0;
        for (pat, (c, r)) in data.patterns.iter().zip(data.counts.iter().zip(resp.iter_mut())) {
            for (s, slot) in r.iter_mut().enumerate() {
                *slot = log_w[s] + pat.iter().enumerate().map(|(v, &x)| log_p[s][v][x]).sum::<f64>();
            }
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = r.iter_mut().map(|l| {
                *l = (*l - m).exp();
                *l
            }).sum();
            r.iter_mut().for_each(|x| *x /= z);
            ll += c * (m + z.ln());
        }
        let gain = ll - model.loglik;
        model.loglik = ll;
        model.trace.push(ll);
        model.iterations = it + 1;
        if gain.abs() < opts.tol {
            break;
        }
    }
    let n_par = MixtureModel::free_parameters(k, data) as f64;
    model.bic = -2.0 * model.loglik + n_par * data.n().ln();
    model
}

/// EM with `opts.restarts` random starts run in parallel; keeps the highest
/// log-likelihood, the earliest restart on ties.
pub fn em_fit(data: &CategoricalData, k: usize, seed: Seed, opts: &EmOptions) -> Result<MixtureModel> {
    if k == 0 {
        return Err(Error::invalid("class count must be at least 1"));
    }
    let restarts = if k == 1 { 1 } else { opts.restarts.max(1) };
    let fits: Vec<MixtureModel> = (0..restarts)
        .into_par_iter()
        .map(|r| em_run(data, k, seed.child(r as u64), r, opts))
        .collect();
    Ok(fits
        .into_iter()
        .reduce(|best, m| if m.loglik > best.loglik { m } else { best })
        .expect("at least one restart"))
}

/// Fits K = 1..=k_max and returns the BIC minimizer's K with every fit.
pub fn select_k(data: &CategoricalData, k_max: usize, seed: Seed, opts: &EmOptions) -> Result<(usize, Vec<MixtureModel>)> {
    if k_max == 0 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    let models = (1..=k_max)
        .map(|k| em_fit(data, k, seed.child(k as u64), opts))
        .collect::<Result<Vec<_>>>()?;
    let best = models
        .iter()
        .min_by(|a, b| a.bic.total_cmp(&b.bic).then(a.k.cmp(&b.k)))
        .map(|m| m.k)
        .expect("nonempty");
    Ok((best, models))
}

/// Poststratified view of a fitted mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterProfiles {
    /// `membership[cell][state]`, preference marginalized out.
    pub membership: Vec<Vec<f64>>,
    /// Population share of each state.
    pub sizes: Vec<f64>,
    /// `factor_dist[state][factor][level]`: census-weighted level shares.
    pub factor_dist: Vec<Vec<Vec<f64>>>,
}

/// State memberships per cell from the schema factors (the first
/// `schema.factors.len()` variables of the model), poststratified.
pub fn cluster_profiles(
    model: &MixtureModel,
    census: &CensusCellTable,
    schema: &CategoricalSchema,
) -> Result<ClusterProfiles> {
    let nf = schema.factors.len();
    if model.probs.first().is_some_and(|p| p.len() < nf) {
        return Err(Error::invalid("model has fewer variables than the schema has factors"));
    }
    let total = census.total() as f64;
    if total == 0.0 {
        return Err(Error::EmptySubpopulation);
    }
    let membership: Vec<Vec<f64>> = schema
        .cells()
        .map(|cell| {
            let lv = schema.cell_levels(cell);
            let logs: Vec<f64> = (0..model.k)
                .map(|s| {
                    model.weights[s].ln() + (0..nf).map(|f| model.probs[s][f][lv[f]].ln()).sum::<f64>()
                })
                .collect();
            normalize_logs(&logs).1
        })
        .collect();
    let mut sizes = vec![0.0; model.k];
    let mut factor_dist: Vec<Vec<Vec<f64>>> = (0..model.k)
        .map(|_| schema.factors.iter().map(|f| vec![0.0; f.len()]).collect())
        .collect();
    for cell in schema.cells() {
        let w = census.count(cell) as f64 / total;
        let lv = schema.cell_levels(cell);
        for s in 0..model.k {
            let m = w * membership[cell.0][s];
            sizes[s] += m;
            for f in 0..nf {
                factor_dist[s][f][lv[f]] += m;
            }
        }
    }
    for (s, dist) in factor_dist.iter_mut().enumerate() {
        for levels in dist.iter_mut() {
            for x in levels.iter_mut() {
                *x /= sizes[s].max(f64::MIN_POSITIVE);
            }
        }
    }
    Ok(ClusterProfiles {
        membership,
        sizes,
        factor_dist,
    })
}

/// Per-draw support inside each state: cell probabilities weighted by census
/// count times state membership. Returns `support[state][draw]`.
pub fn cluster_support(profiles: &ClusterProfiles, census: &CensusCellTable, draws: &DrawMatrix) -> Vec<Vec<f64>> {
    let k = profiles.sizes.len();
    (0..k)
        .map(|s| {
            let w: Vec<f64> = (0..draws.cells)
                .map(|j| census.counts()[j] as f64 * profiles.membership[j][s])
                .collect();
            let z: f64 = w.iter().sum();
            (0..draws.draws)
                .map(|d| draws.row(d).iter().zip(&w).map(|(p, wj)| p * wj).sum::<f64>() / z)
                .collect()
        })
        .collect()
}

/// BIC table, one row per K.
pub fn write_bic_table<W: Write>(models: &[MixtureModel], selected: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "loglik", "parameters", "bic", "iterations", "selected"])?;
    for m in models {
        let n_par = m.probs.first().map_or(0, |vars| {
            (m.k - 1) + m.k * vars.iter().map(|l| l.len() - 1).sum::<usize>()
        });
        w.write_record([
            m.k.to_string(),
            format!("{:e}", m.loglik),
            n_par.to_string(),
            format!("{:e}", m.bic),
            m.iterations.to_string(),
            (m.k == selected).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("bic table", e))?;
    Ok(())
}

/// Long-form cluster report: sizes, poststratified factor shares and the
/// fitted within-state probabilities of every variable.
pub fn write_profiles<W: Write>(
    model: &MixtureModel,
    data: &CategoricalData,
    profiles: &ClusterProfiles,
    schema: &CategoricalSchema,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster", "kind", "variable", "level", "value"])?;
    for s in 0..model.k {
        let c = (s + 1).to_string();
        w.write_record([c.as_str(), "size", "", "", &format!("{:e}", profiles.sizes[s])])?;
        w.write_record([c.as_str(), "weight", "", "", &format!("{:e}", model.weights[s])])?;
        for (f, factor) in schema.factors.iter().enumerate() {
            for (l, level) in factor.levels.iter().enumerate() {
                w.write_record([
                    c.as_str(),
                    "poststratified",
                    &factor.name,
                    level,
                    &format!("{:e}", profiles.factor_dist[s][f][l]),
                ])?;
            }
        }
        for (v, name) in data.names.iter().enumerate() {
            for (l, level) in data.levels[v].iter().enumerate() {
                w.write_record([c.as_str(), "fitted", name, level, &format!("{:e}", model.probs[s][v][l])])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("cluster profiles", e))?;
    Ok(())
}
