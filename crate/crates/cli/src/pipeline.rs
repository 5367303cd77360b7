//! The batch commands: fit, scores, report and cluster.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use mrp_core::census::{CensusCellTable, Selector};
use mrp_core::cluster::{
    cluster_profiles, cluster_support, select_k, write_bic_table, write_profiles, CategoricalData, EmOptions,
};
use mrp_core::criteria::{score, write_score_table, write_scores_long, ScoreReport};
use mrp_core::inference::{explore, sample_cells, CellLikelihood, InferenceOptions, PosteriorResult};
use mrp_core::ingest::{
    merge_and_split, parse_survey_csv, response_vector, ColumnMap, Dataset, Event, RejectionReport, Source,
};
use mrp_core::lgm::LatentModel;
use mrp_core::poststrat::{
    marginal_panels, poststratify, summarize, write_panels, write_report, ReportRow, QUANTILE_HEADERS,
};
use mrp_core::rng::Seed;

use crate::artifact::Artifact;
use crate::config::{FitUnit, RunConfig};
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

/// Ingested, merged and split survey data plus the census.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub census: CensusCellTable,
    pub train: Dataset,
    pub holdout: Dataset,
    pub rejections: RejectionReport,
    pub viber_rows: usize,
    pub street_rows: usize,
}

/// Reads both surveys and the census, then draws the train/holdout split
/// from the `ingest` sub-stream.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let schema = &cfg.schema;
    let map = match &cfg.columns {
        Some(p) => ColumnMap::load(schema, p).map_err(CliError::config)?,
        None => ColumnMap::identity(schema),
    };
    let census = CensusCellTable::load(&cfg.census, schema).map_err(CliError::config)?;
    let (viber, mut rejections) = parse_survey_csv(&cfg.viber, Source::Viber, schema, &map, &cfg.ingest)?;
    let (street, rs) = parse_survey_csv(&cfg.street, Source::Street, schema, &map, &cfg.ingest)?;
    rejections.merge(&rs);
    log::info!(
        "ingest: kept {} viber and {} street rows, rejected {}",
        viber.len(),
        street.len(),
        rejections.total_rejected()
    );
    let (train, holdout) = merge_and_split(&viber, &street, cfg.seed.derive("ingest"))?;
    Ok(Prepared {
        census,
        train,
        holdout,
        rejections,
        viber_rows: viber.len(),
        street_rows: street.len(),
    })
}

/// Binomial cell counts of one event on one data set.
pub fn cell_data(cfg: &RunConfig, data: &Dataset, event: Event) -> Result<CellLikelihood> {
    let resp = response_vector(&data.records, event, cfg.inclusion);
    Ok(CellLikelihood::from_rows(
        cfg.schema.cell_count(),
        resp.cells(&data.records),
        &resp.y,
    )?)
}

pub fn inference_options(cfg: &RunConfig) -> InferenceOptions {
    InferenceOptions {
        strategy: cfg.strategy,
        ..InferenceOptions::default()
    }
}

/// Seed of one unit's draws, from the `inference` sub-stream.
pub fn unit_seed(cfg: &RunConfig, unit: &FitUnit) -> Seed {
    cfg.seed.derive("inference").derive(&unit.stem())
}

pub fn artifact_path(cfg: &RunConfig, unit: &FitUnit) -> PathBuf {
    cfg.output.join("fit").join(format!("{}.csv", unit.stem()))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    Ok(BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?))
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(dir, name)?))
}

fn finish<W: std::io::Write>(mut w: csv::Writer<W>, name: &str) -> Result<()> {
    w.flush().map_err(|e| CliError::io(name, e))
}

/// Fits every configured unit and stores its posterior under `fit/`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.output.join("fit");
    let prep = prepare(cfg)?;
    prep.rejections.write_csv(create(&dir, "rejections.csv")?)?;
    let mut w = csv_writer(&dir, "split.csv")?;
    w.write_record(["set", "rows"])?;
    for (set, n) in [
        ("viber_kept", prep.viber_rows),
        ("street_kept", prep.street_rows),
        ("train", prep.train.len()),
        ("holdout", prep.holdout.len()),
    ] {
        w.write_record([set, &n.to_string()])?;
    }
    finish(w, "split.csv")?;

    let opts = inference_options(cfg);
    let fitted: Vec<(Artifact, LatentModel)> = cfg
        .units
        .par_iter()
        .map(|unit| {
            let lik = cell_data(cfg, &prep.train, unit.event)?;
            let model = LatentModel::new(&cfg.schema, unit.spec.clone())?;
            log::info!("fitting {} on {} rows", unit.stem(), lik.rows());
            let hyper = explore(&model, &lik, &opts)?;
            log::info!(
                "{}: {} grid points, {} evaluations, mlik {:.4}",
                unit.stem(),
                hyper.points.len(),
                hyper.evaluations,
                hyper.mlik
            );
            let artifact = Artifact {
                spec: unit.spec.clone(),
                hyper,
                draw_seed: unit_seed(cfg, unit),
                rows: lik.rows(),
                successes: lik.successes.iter().sum(),
            };
            artifact.save(&artifact_path(cfg, unit))?;
            Ok((artifact, model))
        })
        .collect::<Result<_>>()?;

    let mut summary = csv_writer(&dir, "summary.csv")?;
    summary.write_record(["event", "model", "rows", "successes", "grid_points", "evaluations", "mlik", "max_newton"])?;
    let mut hyper = csv_writer(&dir, "hyper.csv")?;
    hyper.write_record(["event", "model", "parameter", "mode", "mean", "sd"])?;
    let mut latent = csv_writer(&dir, "latent.csv")?;
    latent.write_record(["event", "model", "coordinate", "mean", "sd"])?;
    for (unit, (a, model)) in cfg.units.iter().zip(&fitted) {
        let (ev, label) = (unit.event.name(), unit.label());
        let h = &a.hyper;
        let max_newton = h.points.iter().map(|p| p.approx.newton_iterations).max().unwrap_or(0);
        summary.write_record([
            ev,
            label,
            &a.rows.to_string(),
            &a.successes.to_string(),
            &h.points.len().to_string(),
            &h.evaluations.to_string(),
            &format!("{:e}", h.mlik),
            &max_newton.to_string(),
        ])?;
        let mean = h.hyper_mean();
        for (k, name) in model.hyper_names().iter().enumerate() {
            let sd = h
                .points
                .iter()
                .map(|p| p.weight * (p.lambda.0[k] - mean[k]).powi(2))
                .sum::<f64>()
                .sqrt();
            hyper.write_record([ev, label, name, &format!("{:e}", h.mode.0[k]), &format!("{:e}", mean[k]), &format!("{sd:e}")])?;
        }
        for (name, (m, s)) in model.latent_names(&cfg.schema).iter().zip(h.latent_moments()) {
            latent.write_record([ev, label, name, &format!("{m:e}"), &format!("{s:e}")])?;
        }
    }
    finish(summary, "summary.csv")?;
    finish(hyper, "hyper.csv")?;
    finish(latent, "latent.csv")?;

    let paths: Vec<PathBuf> = cfg.units.iter().map(|u| artifact_path(cfg, u)).collect();
    Manifest::new("fit", cfg)?.write(&dir)?;
    Ok(paths)
}

/// A stored posterior with its draws regenerated.
pub struct Loaded {
    pub unit: FitUnit,
    pub artifact: Artifact,
    pub posterior: PosteriorResult,
}

pub fn load_posterior(cfg: &RunConfig, unit: &FitUnit) -> Result<Loaded> {
    let (artifact, model) = Artifact::load(&artifact_path(cfg, unit), &cfg.schema)?;
    if artifact.spec != unit.spec {
        return Err(CliError::Artifact {
            path: artifact_path(cfg, unit),
            msg: "model differs from the configured one; rerun `mrp fit`".into(),
        });
    }
    let draws = sample_cells(&model, &artifact.hyper, cfg.draws, artifact.draw_seed)?;
    Ok(Loaded {
        unit: unit.clone(),
        posterior: PosteriorResult {
            hyper: artifact.hyper.clone(),
            draws,
        },
        artifact,
    })
}

fn score_units(cfg: &RunConfig, prep: &Prepared) -> Result<Vec<ScoreReport>> {
    cfg.units
        .iter()
        .map(|unit| {
            let loaded = load_posterior(cfg, unit)?;
            let train = cell_data(cfg, &prep.train, unit.event)?;
            let holdout = cell_data(cfg, &prep.holdout, unit.event)?;
            Ok(score(unit.event.label(), unit.label(), &loaded.posterior, &train, &holdout, cfg.alpha)?)
        })
        .collect()
}

fn write_scores(dir: &Path, reports: &[ScoreReport]) -> Result<()> {
    write_score_table(reports, create(dir, "scores.csv")?)?;
    write_scores_long(reports, create(dir, "scores_long.csv")?)?;
    Ok(())
}

/// MLIK, WAIC and MBRIER of every stored posterior.
pub fn cmd_scores(cfg: &RunConfig) -> Result<Vec<ScoreReport>> {
    let dir = cfg.output.join("scores");
    let prep = prepare(cfg)?;
    let reports = score_units(cfg, &prep)?;
    write_scores(&dir, &reports)?;
    Manifest::new("scores", cfg)?.write(&dir)?;
    Ok(reports)
}

/// Official results keyed by event.
pub fn read_officials(path: &Path) -> Result<Vec<(Event, f64)>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let headers = rd.headers()?.clone();
    if headers.iter().ne(["event", "official"]) {
        return Err(CliError::config(format!("{}: header must be `event,official`", path.display())));
    }
    let mut out: Vec<(Event, f64)> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |m: String| CliError::config(format!("{}:{line}: {m}", path.display()));
        let name = rec[0].trim();
        let event = Event::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(name) || e.label().eq_ignore_ascii_case(name))
            .ok_or_else(|| bad(format!("unknown event `{name}`")))?;
        let value: f64 = rec[1].trim().parse().map_err(|_| bad(format!("bad value `{}`", &rec[1])))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(bad(format!("official value {value} outside [0, 1]")));
        }
        if out.iter().any(|(e, _)| *e == event) {
            return Err(bad(format!("event `{name}` listed twice")));
        }
        out.push((event, value));
    }
    Ok(out)
}

/// Results table per model, 21 marginal panels per event and model, and the
/// score table.
pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.output.join("report");
    let officials = match &cfg.official {
        Some(p) => read_officials(p)?,
        None => Vec::new(),
    };
    let prep = prepare(cfg)?;
    let mut reports = Vec::new();
    for label in cfg.labels() {
        let mut rows = Vec::new();
        for unit in cfg.units.iter().filter(|u| u.label() == label) {
            let loaded = load_posterior(cfg, unit)?;
            let draws = &loaded.posterior.draws;
            let theta = poststratify(draws, &prep.census, &cfg.schema, &Selector::all())?;
            let event = unit.event;
            rows.push(ReportRow {
                event: event.label().to_string(),
                official: officials.iter().find(|(e, _)| *e == event).map(|o| o.1),
                summary: summarize(event.label(), &theta)?,
            });
            let panels = marginal_panels(draws, &prep.census, &cfg.schema)?;
            write_panels(event.label(), &panels, create(&dir, &format!("panels/{}.csv", unit.stem()))?)?;
            let train = cell_data(cfg, &prep.train, event)?;
            let holdout = cell_data(cfg, &prep.holdout, event)?;
            reports.push(score(event.label(), &label, &loaded.posterior, &train, &holdout, cfg.alpha)?);
        }
        write_report(&rows, create(&dir, &format!("table_{label}.csv"))?)?;
    }
    // Keep the score table in config order regardless of the label loop.
    let order = |r: &ScoreReport| {
        cfg.units
            .iter()
            .position(|u| u.event.label() == r.event && u.label() == r.variant)
            .unwrap_or(usize::MAX)
    };
    reports.sort_by_key(order);
    write_scores(&dir, &reports)?;
    Manifest::new("report", cfg)?.write(&dir)?;
    Ok(())
}

/// Outcome of the clustering command.
#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub selected: usize,
    pub sizes: Vec<f64>,
}

/// Latent class analysis of the merged training set, with candidate support
/// per cluster when fitted posteriors for those events exist.
pub fn cmd_cluster(cfg: &RunConfig) -> Result<ClusterOutcome> {
    let dir = cfg.output.join("cluster");
    let prep = prepare(cfg)?;
    let data = CategoricalData::from_records(&cfg.schema, &prep.train.records)?;
    let (k, models) = select_k(&data, cfg.k_max, cfg.seed.derive("clustering"), &EmOptions::default())?;
    log::info!("cluster: BIC selects K = {k}");
    let model = &models[k - 1];
    let profiles = cluster_profiles(model, &prep.census, &cfg.schema)?;
    write_bic_table(&models, k, create(&dir, "bic.csv")?)?;
    write_profiles(model, &data, &profiles, &cfg.schema, create(&dir, "profiles.csv")?)?;

    let mut w = csv_writer(&dir, "support.csv")?;
    let mut header = vec!["cluster", "event", "model", "mean", "median"];
    header.extend(QUANTILE_HEADERS);
    w.write_record(&header)?;
    for event in [Event::Lukashenka, Event::Tsikhanouskaya] {
        let Some(unit) = cfg.units.iter().find(|u| u.event == event) else {
            continue;
        };
        let loaded = match load_posterior(cfg, unit) {
            Ok(l) => l,
            Err(CliError::MissingArtifact(p)) => {
                log::warn!("no posterior at {}; skipping cluster support for {event}", p.display());
                continue;
            }
            Err(e) => return Err(e),
        };
        let support = cluster_support(&profiles, &prep.census, &loaded.posterior.draws);
        for (s, theta) in support.iter().enumerate() {
            let sm = summarize(event.label(), theta)?;
            let mut rec = vec![
                (s + 1).to_string(),
                event.label().to_string(),
                unit.label().to_string(),
                format!("{:e}", sm.mean),
                format!("{:e}", sm.median),
            ];
            rec.extend(sm.quantiles.iter().map(|q| format!("{q:e}")));
            w.write_record(&rec)?;
        }
    }
    finish(w, "support.csv")?;
    Manifest::new("cluster", cfg)?.write(&dir)?;
    Ok(ClusterOutcome {
        selected: k,
        sizes: profiles.sizes,
    })
}
