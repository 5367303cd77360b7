use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mrp_core::criteria::{
    compare_models, mbrier, mbrier_cells, waic, waic_cells, write_score_table, QuantilePair, ScoreReport,
};
use mrp_core::inference::{CellLikelihood, DrawMatrix, InferenceOptions, Strategy};
use mrp_core::lgm::Variant;
use mrp_core::rng::Seed;
use mrp_core::schema::{CategoricalSchema, Factor};

fn random_draws(rng: &mut ChaCha8Rng, draws: usize, cols: usize) -> DrawMatrix {
    DrawMatrix {
        draws,
        cells: cols,
        values: (0..draws * cols).map(|_| rng.random_range(0.01..0.99)).collect(),
    }
}

/// WAIC written straight from its definition, one row at a time.
fn waic_direct(d: &DrawMatrix, y: &[u8]) -> f64 {
    let s = d.draws as f64;
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let lik: Vec<f64> = (0..d.draws)
            .map(|k| {
                let p = d.values[k * d.cells + i];
                if yi == 1 {
                    p
                } else {
                    1.0 - p
                }
            })
            .collect();
        let lppd = (lik.iter().sum::<f64>() / s).ln();
        let logs: Vec<f64> = lik.iter().map(|l| l.ln()).collect();
        let m = logs.iter().sum::<f64>() / s;
        let var = logs.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / (s - 1.0);
        total += lppd - var;
    }
    -2.0 * total
}

#[test]
fn waic_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let d = random_draws(&mut rng, 50, 12);
        let y: Vec<u8> = (0..12).map(|_| rng.random_range(0..2)).collect();
        let a = waic(&d, &y).unwrap();
        let b = waic_direct(&d, &y);
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn cell_aggregated_waic_equals_row_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cells = 5;
    let d = random_draws(&mut rng, 40, cells);
    let trials: Vec<u64> = (0..cells).map(|_| rng.random_range(0..6)).collect();
    let successes: Vec<u64> = trials.iter().map(|&n| rng.random_range(0..=n)).collect();
    // Expand to one column per row.
    let mut cols = Vec::new();
    let mut y = Vec::new();
    for j in 0..cells {
        for r in 0..trials[j] {
            cols.push(j);
            y.push(u8::from(r < successes[j]));
        }
    }
    let rows = DrawMatrix {
        draws: d.draws,
        cells: cols.len(),
        values: (0..d.draws).flat_map(|s| cols.iter().map(|&j| d.get(s, j)).collect::<Vec<_>>()).collect(),
    };
    let lik = CellLikelihood::new(trials, successes).unwrap();
    let a = waic_cells(&d, &lik).unwrap();
    let b = waic(&rows, &y).unwrap();
    assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} vs {b}");

    let row_pairs: Vec<(QuantilePair, u8)> = cols
        .iter()
        .zip(&y)
        .map(|(&j, &yi)| (QuantilePair::from_draws(d.column(j), 0.975), yi))
        .collect();
    let c = mbrier_cells(0.975, &d, &lik).unwrap();
    let e = mbrier(0.975, &row_pairs).unwrap();
    assert!((c - e).abs() < 1e-12);
}

#[test]
fn mbrier_is_permutation_invariant_and_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rows: Vec<(QuantilePair, u8)> = (0..30)
        .map(|_| {
            let a: f64 = rng.random_range(0.0..0.9);
            let b: f64 = rng.random_range(a..a.max(0.05) + 0.1);
            (QuantilePair { lower: a, upper: b.min(1.0) }, rng.random_range(0..2))
        })
        .collect();
    let a = mbrier(0.975, &rows).unwrap();
    rows.reverse();
    rows.swap(3, 17);
    let b = mbrier(0.975, &rows).unwrap();
    assert!((a - b).abs() < 1e-15);
    for (q, y) in &rows {
        let v = q.score(*y as f64).unwrap();
        assert!(v >= 0.0 && v.is_finite());
    }
}

#[test]
fn widening_interval_increases_weight() {
    // y = 1 sits above both intervals; the nearest quantile moves with the
    // upper end, so compare the weight factor alone.
    let narrow = QuantilePair { lower: 0.4, upper: 0.6 };
    let wide = QuantilePair { lower: 0.2, upper: 0.6 };
    let d2 = 0.4f64 * 0.4;
    assert!(wide.score(1.0).unwrap() / d2 > narrow.score(1.0).unwrap() / d2);
}

fn small_schema() -> CategoricalSchema {
    CategoricalSchema::from_factors(vec![
        Factor {
            name: "sex".into(),
            levels: vec!["f".into(), "m".into()],
            ordinal: false,
        },
        Factor {
            name: "age".into(),
            levels: vec!["a".into(), "b".into(), "c".into()],
            ordinal: true,
        },
    ])
    .unwrap()
}

#[test]
fn compare_models_single_variant_is_deterministic() {
    let schema = small_schema();
    let train = CellLikelihood::new(vec![30, 25, 20, 28, 31, 22], vec![10, 12, 14, 8, 16, 15]).unwrap();
    let holdout = CellLikelihood::new(vec![10, 8, 9, 7, 11, 6], vec![3, 4, 6, 2, 6, 4]).unwrap();
    let opts = InferenceOptions {
        strategy: Strategy::EmpiricalBayes,
        ..InferenceOptions::default()
    };
    let run = || compare_models(&schema, "test", &[Variant::III], &train, &holdout, &opts, 1000, Seed(9)).unwrap();
    let a = run();
    assert_eq!(a.len(), 1);
    assert_eq!(a, run());
    let r: &ScoreReport = &a[0];
    assert!(r.mlik.is_finite() && r.waic.is_finite() && r.mbrier >= 0.0);
    assert_eq!(r.holdout_size, 51);
    let mut buf = Vec::new();
    write_score_table(&a, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("Event,MLIK_(III),WAIC_(III),MBRIER^.975_(III)\n"));
}
