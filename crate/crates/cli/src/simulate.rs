//! Synthetic corpora in the formats the pipeline reads.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use mrp_core::census::CensusCellTable;
use mrp_core::ingest::{write_survey, Event, Source, SurveyRecord};
use mrp_core::rng::Seed;
use mrp_core::schema::CategoricalSchema;
use mrp_core::synthgen::{
    biased_sample, generate_truth, survey_records, ChannelSpec, SegmentMixture, SyntheticTruth, TruthSettings,
};

use crate::error::{CliError, Result};
use crate::manifest::Manifest;

/// Which generator produces the respondents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Cell probabilities from the regression prior; biased messenger channel
    /// and unbiased street channel.
    Truth,
    /// Three planted latent segments; both channels sample the population.
    Segments,
}

impl std::str::FromStr for Kind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truth" => Ok(Kind::Truth),
            "segments" => Ok(Kind::Segments),
            other => Err(CliError::config(format!("unknown simulation kind `{other}` (expected truth or segments)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub kind: Kind,
    pub seed: Seed,
    pub viber_rows: usize,
    pub street_rows: usize,
    /// Population size behind the census table.
    pub population: f64,
    pub schema: CategoricalSchema,
    pub schema_path: Option<PathBuf>,
}

/// Population share of every event among rows that named a ballot option
/// (early voting unconditioned), from per-cell probabilities
/// `probs[cell] = [P(candidate 1..6), P(early)]`.
fn population_shares(census: &CensusCellTable, probs: &[[f64; 7]]) -> Vec<(Event, f64)> {
    let total = census.total() as f64;
    Event::ALL
        .iter()
        .enumerate()
        .map(|(e, &ev)| {
            let theta = probs
                .iter()
                .zip(census.counts())
                .map(|(p, &n)| {
                    let decided: f64 = p[..6].iter().sum();
                    let q = if e < 6 { p[e] / decided } else { p[6] };
                    q * n as f64 / total
                })
                .sum();
            (ev, theta)
        })
        .collect()
}

fn truth_probabilities(truth: &SyntheticTruth) -> Vec<[f64; 7]> {
    let p = |name: &str, cell: usize| truth.event(name).map(|e| e.p[cell]).expect("all events generated");
    (0..truth.census.len())
        .map(|j| {
            let mut out = [0.0; 7];
            let mut none = 1.0;
            for (k, ev) in Event::ALL[..6].iter().enumerate() {
                let pk = p(ev.name(), j);
                out[k] = none * pk;
                none *= 1.0 - pk;
            }
            out[6] = p(Event::EarlyVoting.name(), j);
            out
        })
        .collect()
}

fn segment_probabilities(mix: &SegmentMixture, schema: &CategoricalSchema) -> Vec<[f64; 7]> {
    schema
        .cells()
        .map(|c| {
            let lv = schema.cell_levels(c);
            let post: Vec<f64> = (0..mix.weights.len())
                .map(|s| mix.weights[s] * lv.iter().enumerate().map(|(f, &l)| mix.factors[s][f][l]).product::<f64>())
                .collect();
            let z: f64 = post.iter().sum();
            let mut out = [0.0; 7];
            // "Neither" splits evenly over the four minor options and undecided.
            let mut decided = 0.0;
            let mut early = 0.0;
            for (s, w) in post.iter().enumerate() {
                let pref = mix.preference[s];
                let w = w / z;
                out[0] += w * pref[0];
                out[1] += w * pref[1];
                for o in &mut out[2..6] {
                    *o += w * pref[2] / 5.0;
                }
                let d = 1.0 - pref[2] / 5.0;
                decided += w * d;
                early += w * d * mix.early[s];
            }
            out[6] = early / decided;
            out
        })
        .collect()
}

fn write_file(dir: &Path, name: &str, f: impl FnOnce(BufWriter<File>) -> Result<()>) -> Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    f(BufWriter::new(file))
}

/// Writes `viber.csv`, `street.csv`, `census.csv` and `truth.csv` into `dir`.
pub fn cmd_simulate(opts: &SimulateOptions, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let schema = &opts.schema;
    let (viber, street, census, shares, extra): (Vec<SurveyRecord>, Vec<SurveyRecord>, _, _, Vec<(String, f64)>) =
        match opts.kind {
            Kind::Truth => {
                let names: Vec<&str> = Event::ALL.iter().map(|e| e.name()).collect();
                let mut settings = TruthSettings::polarized();
                let sd = settings.cell_sizes.log_sd;
                settings.cell_sizes.log_mean = (opts.population / schema.cell_count() as f64).ln() - 0.5 * sd * sd;
                let truth = generate_truth(schema, &names, opts.seed.derive("truth"), &settings)?;
                let v = biased_sample(&truth, &ChannelSpec::viber_like(), opts.viber_rows, opts.seed.derive("viber"))?;
                let s = biased_sample(&truth, &ChannelSpec::unbiased(), opts.street_rows, opts.seed.derive("street"))?;
                let shares = population_shares(&truth.census, &truth_probabilities(&truth));
                (
                    survey_records(&truth, &v, Source::Viber),
                    survey_records(&truth, &s, Source::Street),
                    truth.census,
                    shares,
                    Vec::new(),
                )
            }
            Kind::Segments => {
                let mix = SegmentMixture::planted_three(schema, opts.seed.derive("segments"));
                let census = mix.census(schema, opts.population)?;
                let (v, _) = mix.sample(schema, opts.viber_rows, Source::Viber, opts.seed.derive("viber"))?;
                let (s, _) = mix.sample(schema, opts.street_rows, Source::Street, opts.seed.derive("street"))?;
                let shares = population_shares(&census, &segment_probabilities(&mix, schema));
                let extra = mix
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(s, w)| (format!("segment_{}", s + 1), *w))
                    .collect();
                (v, s, census, shares, extra)
            }
        };
    write_file(dir, "viber.csv", |w| Ok(write_survey(w, schema, &viber)?))?;
    write_file(dir, "street.csv", |w| Ok(write_survey(w, schema, &street)?))?;
    write_file(dir, "census.csv", |w| Ok(census.write(w, schema)?))?;
    write_file(dir, "truth.csv", |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["quantity", "value"])?;
        for (e, t) in &shares {
            w.write_record([e.name(), &format!("{t:e}")])?;
        }
        for (name, v) in &extra {
            w.write_record([name.as_str(), &format!("{v:e}")])?;
        }
        w.flush().map_err(|e| CliError::io("truth.csv", e))
    })?;
    let kind = match opts.kind {
        Kind::Truth => "truth",
        Kind::Segments => "segments",
    };
    let schema_line = opts
        .schema_path
        .as_ref()
        .map_or("<built-in>".to_string(), |p| p.display().to_string());
    Manifest {
        command: "simulate".into(),
        seed: opts.seed.0,
        config_hash: None,
        settings: format!(
            "kind = {kind}\nviber_rows = {}\nstreet_rows = {}\npopulation = {}\nschema = {schema_line}\n",
            opts.viber_rows, opts.street_rows, opts.population
        ),
    }
    .write(dir)
}
