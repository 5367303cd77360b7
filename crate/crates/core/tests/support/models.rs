//! Builds the library's model for an oracle fixture.

#![allow(dead_code)]

use mrp_core::inference::CellLikelihood;
use mrp_core::lgm::{LatentModel, ModelSpec};
use mrp_core::schema::{CategoricalSchema, Factor};

use super::oracle::{Fixture, TauPrior};

/// Intercept-bearing fixtures list coordinate 0 in every row; the remaining
/// coordinates are one level each of a single factor.
pub fn library_model(f: &Fixture) -> (LatentModel, CellLikelihood) {
    let intercept = f.rows.iter().all(|r| r.contains(&0)) && f.rows.iter().any(|r| r.len() > 1) || f.n_latent == 1;
    let levels = if intercept { (f.n_latent - 1).max(1) } else { f.n_latent };
    assert_eq!(f.rows.len(), levels, "{}: one cell per level", f.name);
    let schema = CategoricalSchema::from_factors(vec![Factor {
        name: "g".into(),
        levels: (0..levels).map(|i| format!("l{i}")).collect(),
        ordinal: false,
    }])
    .unwrap();
    let prior = match f.prior {
        TauPrior::Fixed(t) => format!("fixed {t}"),
        TauPrior::Pc { u, alpha } => format!("pc {u} {alpha}"),
    };
    let mut text = format!(
        "event fixture\nintercept {}\nprecision shared {prior}\n",
        if intercept { "on" } else { "off" }
    );
    if f.n_latent > 1 {
        text += "term g iid\n";
    }
    let spec = ModelSpec::parse_str(&text, f.name).unwrap();
    let model = LatentModel::new(&schema, spec).unwrap();
    assert_eq!(model.n_latent(), f.n_latent, "{}", f.name);
    let lik = CellLikelihood::new(f.trials.clone(), f.successes.clone()).unwrap();
    (model, lik)
}
