//! One synthetic recovery run: biased sample, MRP fit, and the poststratified
//! estimate next to the truth and the raw sample mean.
//!
//! `cargo run --release -p mrp-core --example recovery -- [seed]`

use std::time::Instant;

use mrp_core::census::Selector;
use mrp_core::inference::{fit, CellLikelihood, InferenceOptions};
use mrp_core::lgm::{LatentModel, ModelSpec, Variant};
use mrp_core::poststrat::{poststratify, summarize};
use mrp_core::rng::Seed;
use mrp_core::schema::{CategoricalSchema, CellIndex};
use mrp_core::synthgen::{biased_sample, generate_truth, tabulate, ChannelSpec, TruthSettings};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = Seed(std::env::args().nth(1).map_or(Ok(1), |s| s.parse())?);
    let schema = CategoricalSchema::belarus();
    let truth = generate_truth(&schema, &["Tsikhanouskaya"], seed.derive("truth"), &TruthSettings::polarized())?;
    let channel = ChannelSpec::viber_like().with_cells([CellIndex(0), CellIndex(350), CellIndex(699)], 5.0);
    let rows = biased_sample(&truth, &channel, 20_000, seed.derive("sample"))?;
    let (n, y) = tabulate(&rows, schema.cell_count(), 0);
    let raw = y.iter().sum::<u64>() as f64 / n.iter().sum::<u64>() as f64;
    let lik = CellLikelihood::new(n, y)?;
    let model = LatentModel::new(&schema, ModelSpec::variant(&schema, Variant::I, "Tsikhanouskaya"))?;
    let start = Instant::now();
    let post = fit(&model, &lik, &InferenceOptions::default(), 2000, seed.derive("inference"))?;
    let theta = poststratify(&post.draws, &truth.census, &schema, &Selector::all())?;
    let s = summarize("population", &theta)?;
    println!(
        "truth {:.4}  raw {:.4}  mean {:.4}  95% [{:.4}, {:.4}]  grid {}  {:.1?}",
        truth.theta_pop(0),
        raw,
        s.mean,
        s.quantile(0.025).unwrap_or(f64::NAN),
        s.quantile(0.975).unwrap_or(f64::NAN),
        post.hyper.points.len(),
        start.elapsed()
    );
    Ok(())
}
