//! Run configuration: a TOML file whose keys can be overridden on the command
//! line. Relative paths resolve against the config file's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use mrp_core::criteria::DEFAULT_ALPHA;
use mrp_core::inference::Strategy;
use mrp_core::ingest::{Event, InclusionRule, IngestOptions};
use mrp_core::lgm::{ModelSpec, Variant};
use mrp_core::rng::Seed;
use mrp_core::schema::CategoricalSchema;

use crate::error::{CliError, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    draws: Option<usize>,
    strategy: Option<String>,
    alpha: Option<f64>,
    events: Option<Vec<String>>,
    variants: Option<Vec<String>>,
    inclusion: Option<String>,
    k_max: Option<usize>,
    cutoff: Option<String>,
    country_code: Option<String>,
    #[serde(default)]
    paths: RawPaths,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPaths {
    schema: Option<PathBuf>,
    viber: Option<PathBuf>,
    street: Option<PathBuf>,
    census: Option<PathBuf>,
    columns: Option<PathBuf>,
    official: Option<PathBuf>,
    output: Option<PathBuf>,
    #[serde(default)]
    models: Vec<PathBuf>,
}

/// Command-line values that replace config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub draws: Option<usize>,
    pub strategy: Option<String>,
    pub alpha: Option<f64>,
    pub events: Option<Vec<String>>,
    pub variants: Option<Vec<String>>,
    pub k_max: Option<usize>,
    pub output: Option<PathBuf>,
    pub official: Option<PathBuf>,
}

/// One model fitted to one event.
#[derive(Debug, Clone, PartialEq)]
pub struct FitUnit {
    pub event: Event,
    pub spec: ModelSpec,
}

impl FitUnit {
    pub fn label(&self) -> &str {
        &self.spec.label
    }

    /// File stem of this unit's artifacts.
    pub fn stem(&self) -> String {
        format!("{}_{}", self.event.name(), self.spec.label)
    }
}

/// Validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub schema: CategoricalSchema,
    pub schema_path: Option<PathBuf>,
    pub viber: PathBuf,
    pub street: PathBuf,
    pub census: PathBuf,
    pub columns: Option<PathBuf>,
    pub official: Option<PathBuf>,
    pub models: Vec<PathBuf>,
    pub output: PathBuf,
    pub seed: Seed,
    pub draws: usize,
    pub strategy: Strategy,
    pub alpha: f64,
    pub events: Vec<Event>,
    pub variants: Vec<Variant>,
    pub inclusion: InclusionRule,
    pub k_max: usize,
    pub ingest: IngestOptions,
    /// Preset variants first, then model files, each in config order.
    pub units: Vec<FitUnit>,
}

pub const DEFAULT_SEED: u64 = 2020;
pub const DEFAULT_DRAWS: usize = 4000;
pub const DEFAULT_K_MAX: usize = 7;

fn existing(base: &Path, key: &str, path: Option<PathBuf>) -> Result<PathBuf> {
    let path = path.ok_or_else(|| CliError::config(format!("missing required key `paths.{key}`")))?;
    let full = base.join(path);
    if !full.is_file() {
        return Err(CliError::config(format!("paths.{key}: {} does not exist", full.display())));
    }
    Ok(full)
}

fn optional(base: &Path, key: &str, path: Option<PathBuf>) -> Result<Option<PathBuf>> {
    path.map(|p| existing(base, key, Some(p))).transpose()
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, overrides)
    }

    /// Parses and validates config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path, o: &Overrides) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::config(e.message()))?;
        let p = raw.paths;
        let schema_path = optional(base, "schema", p.schema)?;
        let schema = match &schema_path {
            Some(path) => CategoricalSchema::load(path).map_err(CliError::config)?,
            None => CategoricalSchema::belarus(),
        };

        let events = match o.events.clone().or(raw.events) {
            Some(names) => {
                let mut out = Vec::new();
                for n in &names {
                    let e: Event = n.parse().map_err(|_| CliError::config(format!("unknown event `{n}`")))?;
                    if out.contains(&e) {
                        return Err(CliError::config(format!("event `{n}` listed twice")));
                    }
                    out.push(e);
                }
                out
            }
            None => Event::ALL.to_vec(),
        };
        if events.is_empty() {
            return Err(CliError::config("event list is empty"));
        }
        let variants = match o.variants.clone().or(raw.variants) {
            Some(names) => names
                .iter()
                .map(|n| n.parse().map_err(|_| CliError::config(format!("unknown model variant `{n}`"))))
                .collect::<Result<Vec<Variant>>>()?,
            None => vec![Variant::I],
        };

        let draws = o.draws.or(raw.draws).unwrap_or(DEFAULT_DRAWS);
        if draws == 0 {
            return Err(CliError::config("draws must be at least 1"));
        }
        let alpha = o.alpha.or(raw.alpha).unwrap_or(DEFAULT_ALPHA);
        if !(alpha > 0.5 && alpha < 1.0) {
            return Err(CliError::config(format!("alpha must lie in (0.5, 1), got {alpha}")));
        }
        let k_max = o.k_max.or(raw.k_max).unwrap_or(DEFAULT_K_MAX);
        if k_max == 0 {
            return Err(CliError::config("k_max must be at least 1"));
        }
        let strategy = match o.strategy.clone().or(raw.strategy) {
            Some(s) => s.parse().map_err(CliError::config)?,
            None => Strategy::Grid,
        };
        let inclusion = match raw.inclusion {
            Some(s) => s.parse().map_err(CliError::config)?,
            None => InclusionRule::default(),
        };
        let mut ingest = IngestOptions::default();
        if let Some(c) = raw.cutoff {
            ingest.cutoff = DateTime::parse_from_rfc3339(&c)
                .map_err(|e| CliError::config(format!("cutoff `{c}`: {e}")))?
                .with_timezone(&Utc);
        }
        if let Some(cc) = raw.country_code {
            ingest.country_code = cc;
        }

        let viber = existing(base, "viber", p.viber)?;
        let street = existing(base, "street", p.street)?;
        let census = existing(base, "census", p.census)?;
        let columns = optional(base, "columns", p.columns)?;
        let models = p
            .models
            .into_iter()
            .map(|m| existing(base, "models", Some(m)))
            .collect::<Result<Vec<_>>>()?;
        let output = o
            .output
            .clone()
            .or_else(|| p.output.map(|out| base.join(out)))
            .ok_or_else(|| CliError::config("missing required key `paths.output`"))?;
        let official = match &o.official {
            Some(path) if !path.is_file() => {
                return Err(CliError::config(format!("official values file {} does not exist", path.display())))
            }
            Some(path) => Some(path.clone()),
            None => optional(base, "official", p.official)?,
        };

        let mut cfg = RunConfig {
            viber,
            street,
            census,
            columns,
            official,
            schema,
            schema_path,
            models,
            output,
            seed: Seed(o.seed.or(raw.seed).unwrap_or(DEFAULT_SEED)),
            draws,
            strategy,
            alpha,
            events,
            variants,
            inclusion,
            k_max,
            ingest,
            units: Vec::new(),
        };
        cfg.units = cfg.build_units()?;
        Ok(cfg)
    }

    fn build_units(&self) -> Result<Vec<FitUnit>> {
        let mut units: Vec<FitUnit> = Vec::new();
        for &event in &self.events {
            for &v in &self.variants {
                units.push(FitUnit {
                    event,
                    spec: ModelSpec::variant(&self.schema, v, event.name()),
                });
            }
        }
        for path in &self.models {
            let mut spec = ModelSpec::load(path).map_err(CliError::config)?;
            let event: Event = spec.event.parse().map_err(|_| {
                CliError::config(format!("{}: unknown event `{}`", path.display(), spec.event))
            })?;
            if !self.events.contains(&event) {
                return Err(CliError::config(format!(
                    "{}: event `{}` is not in the configured event list",
                    path.display(),
                    spec.event
                )));
            }
            if spec.label.is_empty() {
                spec.label = path.file_stem().map_or("custom".into(), |s| s.to_string_lossy().into_owned());
            }
            if spec.label.contains(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '.')) {
                return Err(CliError::config(format!(
                    "{}: model label `{}` may only use letters, digits, `-` and `.`",
                    path.display(),
                    spec.label
                )));
            }
            // Validate the terms against the schema now rather than mid-run.
            mrp_core::lgm::LatentModel::new(&self.schema, spec.clone()).map_err(CliError::config)?;
            units.push(FitUnit { event, spec });
        }
        for (i, u) in units.iter().enumerate() {
            if units[..i].iter().any(|v| v.stem() == u.stem()) {
                return Err(CliError::config(format!("model `{}` is fitted twice", u.stem())));
            }
        }
        Ok(units)
    }

    /// Model labels in order of first appearance.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for u in &self.units {
            if !out.iter().any(|l| l == u.label()) {
                out.push(u.label().to_string());
            }
        }
        out
    }

    /// Canonical text of every setting that influences outputs.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let path = |p: &Path| p.display().to_string();
        let _ = writeln!(s, "seed = {}", self.seed.0);
        let _ = writeln!(s, "draws = {}", self.draws);
        let _ = writeln!(s, "strategy = {}", self.strategy);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "inclusion = {:?}", self.inclusion);
        let _ = writeln!(s, "k_max = {}", self.k_max);
        let _ = writeln!(s, "cutoff = {}", self.ingest.cutoff.to_rfc3339());
        let _ = writeln!(s, "country_code = {}", self.ingest.country_code);
        let _ = writeln!(
            s,
            "events = {}",
            self.events.iter().map(|e| e.name()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(s, "schema = {}", self.schema_path.as_deref().map_or("<built-in>".into(), path));
        let _ = writeln!(s, "viber = {}", path(&self.viber));
        let _ = writeln!(s, "street = {}", path(&self.street));
        let _ = writeln!(s, "census = {}", path(&self.census));
        if let Some(c) = &self.columns {
            let _ = writeln!(s, "columns = {}", path(c));
        }
        if let Some(o) = &self.official {
            let _ = writeln!(s, "official = {}", path(o));
        }
        for u in &self.units {
            let _ = writeln!(s, "[model {}]\n{}", u.stem(), u.spec.to_text().trim_end());
        }
        s
    }

    /// SHA-256 of the canonical settings and the bytes of every input file.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.canonical().as_bytes());
        let mut inputs = vec![&self.viber, &self.street, &self.census];
        inputs.extend(self.schema_path.iter().chain(&self.columns).chain(&self.official));
        for p in inputs {
            let bytes = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}
