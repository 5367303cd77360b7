//! On-disk form of one fitted posterior: the model, the explored grid and the
//! draw seed. Floats are written in shortest round-trip form, so a reloaded
//! posterior reproduces the original draws bit for bit.
//!
//! Long CSV with header `section,point,i,j,value`. `point` is empty for
//! posterior-wide rows; `i` and `j` index vectors and matrices.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use mrp_core::inference::{GaussianApprox, GridPoint, HyperPosterior, Strategy};
use mrp_core::lgm::{HyperParams, LatentModel, ModelSpec};
use mrp_core::rng::Seed;
use mrp_core::schema::CategoricalSchema;

use crate::error::{CliError, Result};

pub const HEADER: [&str; 5] = ["section", "point", "i", "j", "value"];

/// A fitted posterior as stored by `mrp fit`.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub spec: ModelSpec,
    pub hyper: HyperPosterior,
    /// Seed of the cell-probability draws.
    pub draw_seed: Seed,
    pub rows: u64,
    pub successes: u64,
}

struct Rows<W: Write> {
    w: csv::Writer<W>,
}

impl<W: Write> Rows<W> {
    fn put(&mut self, section: &str, point: Option<usize>, i: Option<usize>, j: Option<usize>, value: &str) -> Result<()> {
        let idx = |x: Option<usize>| x.map_or(String::new(), |v| v.to_string());
        self.w.write_record([section, &idx(point), &idx(i), &idx(j), value])?;
        Ok(())
    }

    fn vector(&mut self, section: &str, point: Option<usize>, v: impl IntoIterator<Item = f64>) -> Result<()> {
        for (i, x) in v.into_iter().enumerate() {
            self.put(section, point, Some(i), None, &x.to_string())?;
        }
        Ok(())
    }

    fn matrix(&mut self, section: &str, point: Option<usize>, m: &DMatrix<f64>, lower: bool) -> Result<()> {
        for i in 0..m.nrows() {
            let end = if lower { i + 1 } else { m.ncols() };
            for j in 0..end {
                self.put(section, point, Some(i), Some(j), &m[(i, j)].to_string())?;
            }
        }
        Ok(())
    }
}

impl Artifact {
    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut r = Rows {
            w: csv::Writer::from_writer(out),
        };
        r.w.write_record(HEADER)?;
        for (i, line) in self.spec.to_text().lines().enumerate() {
            r.put("spec", None, Some(i), None, line)?;
        }
        let h = &self.hyper;
        r.put("draw_seed", None, None, None, &self.draw_seed.0.to_string())?;
        r.put("rows", None, None, None, &self.rows.to_string())?;
        r.put("successes", None, None, None, &self.successes.to_string())?;
        r.put("strategy", None, None, None, &h.strategy.to_string())?;
        r.put("mlik", None, None, None, &h.mlik.to_string())?;
        r.put("evaluations", None, None, None, &h.evaluations.to_string())?;
        r.put("mode_log_posterior", None, None, None, &h.mode_log_posterior.to_string())?;
        r.vector("mode", None, h.mode.0.iter().copied())?;
        r.matrix("hyper_covariance", None, &h.covariance, false)?;
        r.put("constraints", None, None, None, &h.points[0].approx.constraints.nrows().to_string())?;
        for (k, p) in h.points.iter().enumerate() {
            let k = Some(k);
            r.vector("lambda", k, p.lambda.0.iter().copied())?;
            for (i, z) in p.z.iter().enumerate() {
                r.put("z", k, Some(i), None, &z.to_string())?;
            }
            r.put("log_posterior", k, None, None, &p.log_posterior.to_string())?;
            r.put("weight", k, None, None, &p.weight.to_string())?;
            r.put("newton_iterations", k, None, None, &p.approx.newton_iterations.to_string())?;
            r.vector("mean", k, p.approx.mean.iter().copied())?;
            r.matrix("factor", k, &p.approx.factor, true)?;
            r.matrix("gain", k, &p.approx.gain, false)?;
        }
        r.w.flush().map_err(|e| CliError::io("artifact", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        self.write(BufWriter::new(file))
    }

    /// Loads an artifact and rebuilds its latent model against `schema`.
    pub fn load(path: &Path, schema: &CategoricalSchema) -> Result<(Artifact, LatentModel)> {
        if !path.is_file() {
            return Err(CliError::MissingArtifact(path.to_path_buf()));
        }
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        Self::read(file, schema).map_err(|e| match e {
            CliError::Artifact { msg, .. } => CliError::Artifact {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }

    pub fn read<R: std::io::Read>(input: R, schema: &CategoricalSchema) -> Result<(Artifact, LatentModel)> {
        let bad = |msg: String| CliError::Artifact {
            path: "<artifact>".into(),
            msg,
        };
        let mut rd = csv::Reader::from_reader(input);
        if rd.headers()?.iter().ne(HEADER) {
            return Err(bad("unexpected header".into()));
        }
        let mut p = Parsed::default();
        for rec in rd.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let err = |m: &str| bad(format!("line {line}: {m}"));
            let idx = |k: usize| -> Result<Option<usize>> {
                match &rec[k] {
                    "" => Ok(None),
                    s => s.parse().map(Some).map_err(|_| err("bad index")),
                }
            };
            let (section, point, i, j, value) = (&rec[0], idx(1)?, idx(2)?, idx(3)?, &rec[4]);
            p.add(section, point, i, j, value).map_err(|m| err(&m))?;
        }
        p.finish(schema).map_err(bad)
    }
}

#[derive(Default)]
struct PointRows {
    lambda: Vec<(usize, f64)>,
    z: Vec<(usize, i32)>,
    log_posterior: Option<f64>,
    weight: Option<f64>,
    newton: Option<usize>,
    mean: Vec<(usize, f64)>,
    factor: Vec<(usize, usize, f64)>,
    gain: Vec<(usize, usize, f64)>,
}

#[derive(Default)]
struct Parsed {
    spec: Vec<(usize, String)>,
    scalars: std::collections::BTreeMap<String, String>,
    mode: Vec<(usize, f64)>,
    hyper_cov: Vec<(usize, usize, f64)>,
    points: Vec<PointRows>,
}

fn num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("bad number `{s}`"))
}

fn dense_vector(mut v: Vec<(usize, f64)>, n: usize, what: &str) -> std::result::Result<Vec<f64>, String> {
    v.sort_by_key(|e| e.0);
    if v.len() != n || v.iter().enumerate().any(|(k, e)| e.0 != k) {
        return Err(format!("{what}: expected {n} entries"));
    }
    Ok(v.into_iter().map(|e| e.1).collect())
}

/// Dense matrix from its listed entries; `lower` matrices list only the lower
/// triangle.
fn dense_matrix(
    entries: Vec<(usize, usize, f64)>,
    r: usize,
    c: usize,
    lower: bool,
    what: &str,
) -> std::result::Result<DMatrix<f64>, String> {
    let expected = if lower { r * (r + 1) / 2 } else { r * c };
    if entries.len() != expected {
        return Err(format!("{what}: expected {expected} entries, found {}", entries.len()));
    }
    let mut m = DMatrix::zeros(r, c);
    for (i, j, x) in entries {
        if i >= r || j >= c || (lower && j > i) {
            return Err(format!("{what}: entry ({i}, {j}) outside {r}x{c}"));
        }
        m[(i, j)] = x;
    }
    Ok(m)
}

impl Parsed {
    fn add(&mut self, section: &str, point: Option<usize>, i: Option<usize>, j: Option<usize>, value: &str) -> std::result::Result<(), String> {
        let need = |x: Option<usize>| x.ok_or_else(|| format!("`{section}` row needs an index"));
        if let Some(k) = point {
            if k >= self.points.len() {
                self.points.resize_with(k + 1, PointRows::default);
            }
            let pt = &mut self.points[k];
            match section {
                "lambda" => pt.lambda.push((need(i)?, num(value)?)),
                "z" => pt.z.push((need(i)?, num(value)?)),
                "log_posterior" => pt.log_posterior = Some(num(value)?),
                "weight" => pt.weight = Some(num(value)?),
                "newton_iterations" => pt.newton = Some(num(value)?),
                "mean" => pt.mean.push((need(i)?, num(value)?)),
                "factor" => pt.factor.push((need(i)?, need(j)?, num(value)?)),
                "gain" => pt.gain.push((need(i)?, need(j)?, num(value)?)),
                other => return Err(format!("unknown grid-point section `{other}`")),
            }
            return Ok(());
        }
        match section {
            "spec" => self.spec.push((need(i)?, value.to_string())),
            "mode" => self.mode.push((need(i)?, num(value)?)),
            "hyper_covariance" => self.hyper_cov.push((need(i)?, need(j)?, num(value)?)),
            _ => {
                self.scalars.insert(section.to_string(), value.to_string());
            }
        }
        Ok(())
    }

    fn scalar<T: std::str::FromStr>(&self, key: &str) -> std::result::Result<T, String> {
        num(self.scalars.get(key).ok_or_else(|| format!("missing `{key}`"))?)
    }

    fn finish(mut self, schema: &CategoricalSchema) -> std::result::Result<(Artifact, LatentModel), String> {
        self.spec.sort_by_key(|e| e.0);
        let text: String = self.spec.iter().map(|e| format!("{}\n", e.1)).collect();
        let spec = ModelSpec::parse_str(&text, "artifact spec").map_err(|e| e.to_string())?;
        let model = LatentModel::new(schema, spec.clone()).map_err(|e| e.to_string())?;
        let (n, d) = (model.n_latent(), model.n_hyper());
        let constraints = model.constraints();
        let m = constraints.nrows();
        let stored: usize = self.scalar("constraints")?;
        if stored != m {
            return Err(format!("artifact has {stored} constraints, model has {m}"));
        }
        if self.points.is_empty() {
            return Err("no grid points".into());
        }
        let strategy: Strategy = self
            .scalars
            .get("strategy")
            .ok_or("missing `strategy`")?
            .parse()
            .map_err(|e: mrp_core::error::Error| e.to_string())?;
        let mut points = Vec::with_capacity(self.points.len());
        for (k, pt) in std::mem::take(&mut self.points).into_iter().enumerate() {
            let what = |s: &str| format!("point {k} {s}");
            let factor = dense_matrix(pt.factor, n, n, true, &what("factor"))?;
            let mut z = pt.z;
            z.sort_by_key(|e| e.0);
            points.push(GridPoint {
                lambda: HyperParams(dense_vector(pt.lambda, d, &what("lambda"))?),
                z: z.into_iter().map(|e| e.1).collect(),
                log_posterior: pt.log_posterior.ok_or_else(|| what("missing log_posterior"))?,
                weight: pt.weight.ok_or_else(|| what("missing weight"))?,
                approx: GaussianApprox {
                    mean: DVector::from_vec(dense_vector(pt.mean, n, &what("mean"))?),
                    covariance: &factor * factor.transpose(),
                    factor,
                    constraints: constraints.clone(),
                    gain: dense_matrix(pt.gain, n, m, false, &what("gain"))?,
                    newton_iterations: pt.newton.unwrap_or(0),
                },
            });
        }
        let hyper = HyperPosterior {
            points,
            mode: HyperParams(dense_vector(std::mem::take(&mut self.mode), d, "mode")?),
            mode_log_posterior: self.scalar("mode_log_posterior")?,
            covariance: dense_matrix(std::mem::take(&mut self.hyper_cov), d, d, false, "hyper_covariance")?,
            mlik: self.scalar("mlik")?,
            evaluations: self.scalar("evaluations")?,
            strategy,
        };
        Ok((
            Artifact {
                spec,
                hyper,
                draw_seed: Seed(self.scalar("draw_seed")?),
                rows: self.scalar("rows")?,
                successes: self.scalar("successes")?,
            },
            model,
        ))
    }
}
