use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mrp_cli::artifact::Artifact;
use mrp_cli::error::CliError;
use mrp_core::inference::{explore, sample_cells, CellLikelihood, InferenceOptions, Strategy};
use mrp_core::lgm::{LatentModel, ModelSpec, Variant};
use mrp_core::rng::Seed;
use mrp_core::schema::CategoricalSchema;

fn fitted(schema: &CategoricalSchema, strategy: Strategy) -> (Artifact, LatentModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = schema.cell_count();
    let trials: Vec<u64> = (0..p).map(|_| rng.random_range(0..40)).collect();
    let successes: Vec<u64> = trials.iter().map(|&n| rng.random_range(0..=n)).collect();
    let lik = CellLikelihood::new(trials, successes).unwrap();
    let spec = ModelSpec::variant(schema, Variant::I, "Lukashenka");
    let model = LatentModel::new(schema, spec.clone()).unwrap();
    let opts = InferenceOptions {
        strategy,
        ..InferenceOptions::default()
    };
    let hyper = explore(&model, &lik, &opts).unwrap();
    let artifact = Artifact {
        spec,
        hyper,
        draw_seed: Seed(77),
        rows: lik.rows(),
        successes: lik.successes.iter().sum(),
    };
    (artifact, model)
}

#[test]
fn reloaded_posterior_reproduces_draws_exactly() {
    let schema = CategoricalSchema::belarus();
    for strategy in [Strategy::Grid, Strategy::EmpiricalBayes] {
        let (a, model) = fitted(&schema, strategy);
        let mut buf = Vec::new();
        a.write(&mut buf).unwrap();
        let (b, model_b) = Artifact::read(buf.as_slice(), &schema).unwrap();
        assert_eq!(b.spec, a.spec);
        assert_eq!((b.draw_seed, b.rows, b.successes), (a.draw_seed, a.rows, a.successes));
        assert_eq!(b.hyper.mlik, a.hyper.mlik);
        assert_eq!(b.hyper.strategy, strategy);
        assert_eq!(b.hyper.points.len(), a.hyper.points.len());
        let d1 = sample_cells(&model, &a.hyper, 200, a.draw_seed).unwrap();
        let d2 = sample_cells(&model_b, &b.hyper, 200, b.draw_seed).unwrap();
        assert_eq!(d1, d2);
        // Writing the reloaded artifact gives the same bytes.
        let mut again = Vec::new();
        b.write(&mut again).unwrap();
        assert!(again == buf);
    }
}

#[test]
fn missing_and_malformed_artifacts_are_reported() {
    let schema = CategoricalSchema::belarus();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("none.csv");
    assert!(matches!(Artifact::load(&path, &schema), Err(CliError::MissingArtifact(_))));

    let (a, _) = fitted(&schema, Strategy::EmpiricalBayes);
    let mut buf = Vec::new();
    a.write(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let truncated: String = text.lines().take(text.lines().count() - 3).map(|l| format!("{l}\n")).collect();
    std::fs::write(&path, truncated).unwrap();
    match Artifact::load(&path, &schema) {
        Err(CliError::Artifact { path: p, msg }) => {
            assert_eq!(p, path);
            assert!(msg.contains("gain"), "{msg}");
        }
        other => panic!("expected a malformed-artifact error, got {other:?}"),
    }
}
