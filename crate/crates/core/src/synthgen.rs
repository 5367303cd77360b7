//! Synthetic populations with known cell probabilities, biased sampling
//! channels, and planted latent-class segments. Serves as the recovery oracle.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::SymmetricEigen;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::census::CensusCellTable;
use crate::error::{Error, Result};
use crate::ingest::{write_survey, Candidate, Choice, Event, Source, SurveyRecord, VotingPlan};
use crate::lgm::{sigmoid, Bym2Structure};
use crate::rng::Seed;
use crate::schema::{CategoricalSchema, CellIndex};

/// Log-normal law for census cell sizes: `round(exp(log_mean + log_sd z))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSizeLaw {
    pub log_mean: f64,
    pub log_sd: f64,
}

impl Default for CellSizeLaw {
    fn default() -> Self {
        CellSizeLaw {
            log_mean: 9.0,
            log_sd: 1.0,
        }
    }
}

/// Fixed hyperparameters for drawing effects from their priors. An infinite
/// precision switches the block off.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSettings {
    pub intercept: f64,
    /// Precision of nominal-factor effects.
    pub shared_precision: f64,
    /// Marginal precision of ordinal-factor effects.
    pub ordinal_precision: f64,
    /// Lag-one correlation of ordinal effects; zero gives iid effects.
    pub ar1_rho: f64,
    pub region_precision: f64,
    /// Spatially structured share of the region field.
    pub mixing: f64,
    /// Fixed logit slope per level step, `(factor, slope)`, added to the
    /// drawn effects of that factor and centred over its levels.
    pub trends: Vec<(String, f64)>,
    pub cell_sizes: CellSizeLaw,
}

impl Default for TruthSettings {
    fn default() -> Self {
        TruthSettings {
            intercept: -0.5,
            shared_precision: 4.0,
            ordinal_precision: 1.0,
            ar1_rho: 0.8,
            region_precision: 3.0,
            mixing: 0.7,
            trends: Vec::new(),
            cell_sizes: CellSizeLaw::default(),
        }
    }
}

impl TruthSettings {
    /// Every effect switched off: all cells share `sigmoid(intercept)`.
    pub fn degenerate(intercept: f64) -> Self {
        TruthSettings {
            intercept,
            shared_precision: f64::INFINITY,
            ordinal_precision: f64::INFINITY,
            region_precision: f64::INFINITY,
            ..Self::default()
        }
    }

    /// Support falling with age and rising with education, the pattern of
    /// opposition support seen in the field data.
    pub fn polarized() -> Self {
        TruthSettings {
            trends: vec![("age".into(), -0.4), ("education".into(), 0.4)],
            ..Self::default()
        }
    }

    /// All effect precisions multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        TruthSettings {
            shared_precision: self.shared_precision * factor,
            ordinal_precision: self.ordinal_precision * factor,
            region_precision: self.region_precision * factor,
            ..self.clone()
        }
    }
}

/// True effects and cell probabilities of one binary event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTruth {
    pub event: String,
    pub intercept: f64,
    /// `effects[factor][level]`; the spatial factor carries zeros when the
    /// region field is present.
    pub effects: Vec<Vec<f64>>,
    /// Region field per spatial node, empty without a spatial factor.
    pub region: Vec<f64>,
    pub eta: Vec<f64>,
    pub p: Vec<f64>,
}

impl EventTruth {
    /// Linear predictor rebuilt from the stored effects.
    pub fn predictor(&self, schema: &CategoricalSchema, cell: CellIndex) -> f64 {
        let lv = schema.cell_levels(cell);
        let mut eta = self.intercept + lv.iter().enumerate().map(|(f, &l)| self.effects[f][l]).sum::<f64>();
        if let Some(node) = schema.spatial_node(cell) {
            eta += self.region.get(node).copied().unwrap_or(0.0);
        }
        eta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub schema: CategoricalSchema,
    pub census: CensusCellTable,
    pub settings: TruthSettings,
    pub events: Vec<EventTruth>,
}

impl SyntheticTruth {
    pub fn event(&self, name: &str) -> Result<&EventTruth> {
        self.events.iter().find(|e| e.event == name).ok_or_else(|| Error::Unknown {
            kind: "event",
            name: name.to_string(),
        })
    }

    /// Census-weighted population share of an event.
    pub fn theta_pop(&self, event: usize) -> f64 {
        let total = self.census.total() as f64;
        self.events[event]
            .p
            .iter()
            .zip(self.census.counts())
            .map(|(p, &n)| p * n as f64 / total)
            .sum()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn sd_of(precision: f64) -> f64 {
    if precision.is_infinite() {
        0.0
    } else {
        precision.sqrt().recip()
    }
}

/// Stationary AR(1) path with marginal sd `sd`.
fn ar1_path(rng: &mut ChaCha8Rng, n: usize, rho: f64, sd: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut x = sd * normal(rng);
    out.push(x);
    let innov = sd * (1.0 - rho * rho).sqrt();
    for _ in 1..n {
        x = rho * x + innov * normal(rng);
        out.push(x);
    }
    out
}

/// Draw from the scaled ICAR prior restricted to the sum-to-zero subspace.
fn icar_draw(rng: &mut ChaCha8Rng, bym2: &Bym2Structure) -> Vec<f64> {
    let eig = SymmetricEigen::new(bym2.scaled.clone());
    let n = bym2.scaled.nrows();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut x = vec![0.0; n];
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > 1e-10 * max.max(1.0) {
            let z = normal(rng) / ev.sqrt();
            for (r, xr) in x.iter_mut().enumerate() {
                *xr += z * eig.eigenvectors[(r, i)];
            }
        }
    }
    x
}

fn draw_event(schema: &CategoricalSchema, settings: &TruthSettings, name: &str, seed: Seed) -> Result<EventTruth> {
    let mut rng = seed.derive(name).rng();
    let spatial = schema.spatial.as_ref();
    let mut effects = Vec::with_capacity(schema.factors.len());
    for (f, factor) in schema.factors.iter().enumerate() {
        let e = if spatial.is_some_and(|g| g.factor == f) {
            vec![0.0; factor.len()]
        } else if factor.ordinal {
            ar1_path(&mut rng, factor.len(), settings.ar1_rho, sd_of(settings.ordinal_precision))
        } else {
            let sd = sd_of(settings.shared_precision);
            (0..factor.len()).map(|_| sd * normal(&mut rng)).collect()
        };
        let slope = settings.trends.iter().find(|(n, _)| *n == factor.name).map_or(0.0, |t| t.1);
        let mid = (factor.len() as f64 - 1.0) / 2.0;
        effects.push(e.into_iter().enumerate().map(|(l, x)| x + slope * (l as f64 - mid)).collect());
    }
    let region = match spatial {
        Some(g) => {
            let bym2 = Bym2Structure::new(g)?;
            let phi = icar_draw(&mut rng, &bym2);
            let sd = sd_of(settings.region_precision);
            let (a, b) = ((1.0 - settings.mixing).sqrt(), settings.mixing.sqrt());
            phi.iter().map(|ph| sd * (a * normal(&mut rng) + b * ph)).collect()
        }
        None => Vec::new(),
    };
    let mut truth = EventTruth {
        event: name.to_string(),
        intercept: settings.intercept,
        effects,
        region,
        eta: Vec::new(),
        p: Vec::new(),
    };
    truth.eta = schema.cells().map(|c| truth.predictor(schema, c)).collect();
    truth.p = truth.eta.iter().map(|&e| sigmoid(e).clamp(1e-12, 1.0 - 1e-12)).collect();
    Ok(truth)
}

/// Draws census counts and one set of effects per event name, each event on
/// its own named sub-stream.
pub fn generate_truth(
    schema: &CategoricalSchema,
    events: &[&str],
    seed: Seed,
    settings: &TruthSettings,
) -> Result<SyntheticTruth> {
    if !(0.0..=1.0).contains(&settings.mixing) || !(settings.ar1_rho.abs() < 1.0) {
        return Err(Error::invalid("mixing must lie in [0, 1] and |rho| < 1"));
    }
    for (name, _) in &settings.trends {
        schema.factor(name)?;
    }
    let mut rng = seed.derive("census").rng();
    let law = settings.cell_sizes;
    let counts: Vec<u64> = (0..schema.cell_count())
        .map(|_| (law.log_mean + law.log_sd * normal(&mut rng)).exp().round() as u64)
        .collect();
    let census = CensusCellTable::from_counts(schema, counts)?;
    let events = events
        .iter()
        .map(|e| draw_event(schema, settings, e, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticTruth {
        schema: schema.clone(),
        census,
        settings: settings.clone(),
        events,
    })
}

/// Over/under-sampling multipliers of a recruitment channel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelSpec {
    /// `(factor, level, multiplier)`: applies to every cell at that level.
    pub levels: Vec<(String, String, f64)>,
    /// Per-cell multipliers on top of the level ones.
    pub cells: Vec<(CellIndex, f64)>,
}

impl ChannelSpec {
    pub fn unbiased() -> Self {
        Self::default()
    }

    /// Recruitment skewed toward Minsk city, people aged 31-40 and those with
    /// higher education, as in online messenger panels.
    pub fn viber_like() -> Self {
        ChannelSpec {
            levels: vec![
                ("region".into(), "Minsk city".into(), 4.0),
                ("age".into(), "31-40".into(), 3.0),
                ("age".into(), "60+".into(), 0.3),
                ("education".into(), "higher".into(), 3.0),
                ("education".into(), "elementary".into(), 0.3),
                ("area".into(), "rural".into(), 0.5),
            ],
            cells: Vec::new(),
        }
    }

    pub fn with_cells(mut self, cells: impl IntoIterator<Item = CellIndex>, multiplier: f64) -> Self {
        self.cells.extend(cells.into_iter().map(|c| (c, multiplier)));
        self
    }

    /// Product of the matching multipliers for every cell.
    pub fn multipliers(&self, schema: &CategoricalSchema) -> Result<Vec<f64>> {
        let mut m = vec![1.0; schema.cell_count()];
        for (factor, level, x) in &self.levels {
            check_multiplier(*x)?;
            let f = schema.factor_index(factor).ok_or_else(|| Error::Unknown {
                kind: "factor",
                name: factor.clone(),
            })?;
            let l = schema.factors[f].level_index(level).ok_or_else(|| Error::Unknown {
                kind: "level",
                name: format!("{factor}={level}"),
            })?;
            for cell in schema.cells().filter(|&c| schema.cell_level(c, f) == l) {
                m[cell.0] *= x;
            }
        }
        for &(cell, x) in &self.cells {
            check_multiplier(x)?;
            *m.get_mut(cell.0)
                .ok_or_else(|| Error::invalid(format!("cell {} is out of range", cell.0)))? *= x;
        }
        Ok(m)
    }
}

fn check_multiplier(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("multiplier must be positive, got {x}")))
    }
}

/// One synthetic respondent: their cell and one outcome per truth event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRow {
    pub cell: CellIndex,
    pub outcomes: Vec<u8>,
}

/// Respondents drawn from cells with probability proportional to census
/// count times channel multiplier; outcomes are independent Bernoulli draws.
pub fn biased_sample(truth: &SyntheticTruth, channel: &ChannelSpec, n: usize, seed: Seed) -> Result<Vec<SampleRow>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = channel.multipliers(&truth.schema)?;
    let w: Vec<f64> = truth.census.counts().iter().zip(&m).map(|(&c, x)| c as f64 * x).collect();
    let pick = WeightedIndex::new(&w).map_err(|e| Error::invalid(format!("sampling weights: {e}")))?;
    let mut rng = seed.rng();
    Ok((0..n)
        .map(|_| {
            let j = pick.sample(&mut rng);
            let outcomes = truth
                .events
                .iter()
                .map(|e| u8::from(rng.random::<f64>() < e.p[j]))
                .collect();
            SampleRow {
                cell: CellIndex(j),
                outcomes,
            }
        })
        .collect())
}

/// Per-cell trials and successes of one event.
pub fn tabulate(rows: &[SampleRow], cells: usize, event: usize) -> (Vec<u64>, Vec<u64>) {
    let mut n = vec![0; cells];
    let mut y = vec![0; cells];
    for r in rows {
        n[r.cell.0] += 1;
        y[r.cell.0] += r.outcomes[event] as u64;
    }
    (n, y)
}

/// Questionnaire records from sample rows. Candidate events are visited in
/// ballot order and the first success names the choice; no success means
/// undecided. The early-voting event sets the voting plan.
pub fn survey_records(truth: &SyntheticTruth, rows: &[SampleRow], source: Source) -> Vec<SurveyRecord> {
    let index: BTreeMap<Event, usize> = truth
        .events
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.event.parse::<Event>().ok().map(|ev| (ev, i)))
        .collect();
    rows.iter()
        .map(|r| {
            let choice = Event::ALL
                .iter()
                .filter_map(|ev| Some((ev.candidate()?, *index.get(ev)?)))
                .find(|&(_, i)| r.outcomes[i] == 1)
                .map_or(Choice::Undecided, |(c, _)| Choice::Candidate(c));
            let plan = match index.get(&Event::EarlyVoting) {
                Some(&i) if r.outcomes[i] == 1 => VotingPlan::Early,
                _ => VotingPlan::MainDay,
            };
            SurveyRecord {
                levels: truth.schema.cell_levels(r.cell),
                cell: r.cell,
                choice,
                plan,
                source,
                extras: BTreeMap::new(),
            }
        })
        .collect()
}

/// A latent-class population: each segment has its own factor profile,
/// preference split and early-voting rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMixture {
    pub weights: Vec<f64>,
    /// `factors[segment][factor][level]`.
    pub factors: Vec<Vec<Vec<f64>>>,
    /// Lukashenka, Tsikhanouskaya, neither.
    pub preference: Vec<[f64; 3]>,
    pub early: Vec<f64>,
}

fn peaked(rng: &mut ChaCha8Rng, len: usize, peak: usize, height: f64) -> Vec<f64> {
    let mut p: Vec<f64> = (0..len).map(|_| rng.random_range(0.2..1.0)).collect();
    p[peak % len] += height * len as f64;
    let z: f64 = p.iter().sum();
    p.into_iter().map(|x| x / z).collect()
}

impl SegmentMixture {
    /// Three well-separated segments on any schema: each favours different
    /// levels of every factor and leans toward a different preference.
    pub fn planted_three(schema: &CategoricalSchema, seed: Seed) -> Self {
        let mut rng = seed.derive("segments").rng();
        let factors = (0..3)
            .map(|s| {
                schema
                    .factors
                    .iter()
                    .map(|f| peaked(&mut rng, f.len(), s * (f.len() / 3).max(1), 0.6))
                    .collect()
            })
            .collect();
        SegmentMixture {
            weights: vec![0.45, 0.35, 0.2],
            factors,
            preference: vec![[0.08, 0.8, 0.12], [0.6, 0.25, 0.15], [0.15, 0.35, 0.5]],
            early: vec![0.1, 0.4, 0.2],
        }
    }

    /// Expected census counts of a population of `total` people.
    pub fn census(&self, schema: &CategoricalSchema, total: f64) -> Result<CensusCellTable> {
        let counts = schema
            .cells()
            .map(|c| {
                let lv = schema.cell_levels(c);
                let p: f64 = (0..self.weights.len())
                    .map(|s| self.weights[s] * lv.iter().enumerate().map(|(f, &l)| self.factors[s][f][l]).product::<f64>())
                    .sum();
                (total * p).round() as u64
            })
            .collect();
        CensusCellTable::from_counts(schema, counts)
    }

    /// Respondents with their true segment labels.
    pub fn sample(
        &self,
        schema: &CategoricalSchema,
        n: usize,
        source: Source,
        seed: Seed,
    ) -> Result<(Vec<SurveyRecord>, Vec<usize>)> {
        let mut rng = seed.rng();
        let bad = |e| Error::invalid(format!("segment probabilities: {e}"));
        let seg = WeightedIndex::new(&self.weights).map_err(bad)?;
        let per: Vec<Vec<WeightedIndex<f64>>> = self
            .factors
            .iter()
            .map(|fs| fs.iter().map(|p| WeightedIndex::new(p).map_err(bad)).collect())
            .collect::<Result<_>>()?;
        let prefs: Vec<WeightedIndex<f64>> =
            self.preference.iter().map(|p| WeightedIndex::new(p).map_err(bad)).collect::<Result<_>>()?;
        let others = [
            Candidate::Dmitriyeu,
            Candidate::Kanapatskaya,
            Candidate::Cherachen,
            Candidate::AgainstAll,
        ];
        let mut records = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let s = seg.sample(&mut rng);
            let levels: Vec<usize> = per[s].iter().map(|d| d.sample(&mut rng)).collect();
            let choice = match prefs[s].sample(&mut rng) {
                0 => Choice::Candidate(Candidate::Lukashenka),
                1 => Choice::Candidate(Candidate::Tsikhanouskaya),
                _ => match rng.random_range(0..5) {
                    4 => Choice::Undecided,
                    k => Choice::Candidate(others[k]),
                },
            };
            let plan = if rng.random::<f64>() < self.early[s] {
                VotingPlan::Early
            } else {
                VotingPlan::MainDay
            };
            records.push(SurveyRecord {
                cell: schema.cell_id(&levels)?,
                levels,
                choice,
                plan,
                source,
                extras: BTreeMap::new(),
            });
            labels.push(s);
        }
        Ok((records, labels))
    }
}

/// Writes survey and census CSVs in the formats ingest and census read.
pub fn write_corpus<W1: Write, W2: Write>(
    schema: &CategoricalSchema,
    records: &[SurveyRecord],
    census: &CensusCellTable,
    survey_out: W1,
    census_out: W2,
) -> Result<()> {
    write_survey(survey_out, schema, records)?;
    census.write(census_out, schema)
}
