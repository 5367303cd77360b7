//! Fits variants I and III to data generated from variant I's structure and
//! prints their marginal likelihoods and holdout scores.
//!
//! `cargo run --release -p mrp-core --example selection -- [seed] [train rows]`

use mrp_core::criteria::compare_models;
use mrp_core::inference::{CellLikelihood, InferenceOptions};
use mrp_core::lgm::Variant;
use mrp_core::rng::Seed;
use mrp_core::schema::CategoricalSchema;
use mrp_core::synthgen::{biased_sample, generate_truth, tabulate, ChannelSpec, TruthSettings};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed = Seed(args.next().map_or(Ok(1), |s| s.parse())?);
    let n_train: usize = args.next().map_or(Ok(20_000), |s| s.parse())?;
    let schema = CategoricalSchema::belarus();
    let mut settings = TruthSettings::polarized();
    if let Some(rho) = args.next() {
        settings.ar1_rho = rho.parse()?;
    }
    let truth = generate_truth(&schema, &["x"], seed.derive("truth"), &settings)?;
    let cells = schema.cell_count();
    let data = |name: &str, n: usize| -> Result<CellLikelihood, Box<dyn std::error::Error>> {
        let rows = biased_sample(&truth, &ChannelSpec::viber_like(), n, seed.derive(name))?;
        let (n, y) = tabulate(&rows, cells, 0);
        Ok(CellLikelihood::new(n, y)?)
    };
    let (train, holdout) = (data("train", n_train)?, data("holdout", 10_000)?);
    let reports = compare_models(
        &schema,
        "x",
        &[Variant::I, Variant::III],
        &train,
        &holdout,
        &InferenceOptions::default(),
        2000,
        seed.derive("inference"),
    )?;
    for r in &reports {
        println!("{} mlik {:.2} waic {:.2} mbrier {:.3e}", r.variant, r.mlik, r.waic, r.mbrier);
    }
    Ok(())
}
