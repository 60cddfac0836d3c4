use delaycomp::linalg::{matrix_exp, psi};
use delaycomp::plants::{IntegratorConfig, PlantModel};
use delaycomp::predictors::{
    lti_predict, numeric_predict, Predictor, PredictorKind, PredictorSpec,
};
use delaycomp::signals::InputHistory;
use delaycomp::validation::{
    oracle_sample, random_history, scaled_error, tolerance, validate_predictors,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn closed_forms_agree_with_integration_across_seeds() {
    for seed in [1, 7, 2024] {
        for report in validate_predictors(100, seed).unwrap() {
            assert!(report.passed, "seed {seed}: {:?}", report);
            assert_eq!(report.samples, 100);
        }
    }
}

#[test]
fn every_sample_is_finite_and_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for kind in [
        PredictorKind::Lti,
        PredictorKind::Cascade,
        PredictorKind::Unicycle,
    ] {
        for sample in 0..100 {
            let e = oracle_sample(&mut rng, kind, sample).unwrap();
            assert!(
                e.is_finite() && e <= tolerance(kind),
                "{kind:?} #{sample}: {e}"
            );
        }
    }
}

#[test]
fn numeric_predictor_is_exact_against_itself() {
    let plant = PlantModel::Feedforward3d;
    let cfg = IntegratorConfig::new(1e-3);
    let spec = PredictorSpec {
        kind: PredictorKind::Numeric,
        r: 0.4,
        tau: 0.3,
    };
    let p = Predictor::new(spec, &plant, cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hist = random_history(&mut rng, 1, 1e-3, p.window_steps(), 1.0, 0.5);
    let x = [0.2, -0.1, 0.4];
    assert_eq!(
        p.predict(&x, &hist).unwrap(),
        numeric_predict(&plant, &x, &hist, &cfg).unwrap()
    );
}

fn small_matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.5f64..1.5, n * n).prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn psi_satisfies_the_exponential_identity(
        a in (1usize..5).prop_flat_map(small_matrix),
        span in 0.01f64..3.0,
    ) {
        let n = a.nrows();
        let lhs = &a * psi(&a, span).unwrap() + DMatrix::identity(n, n);
        let rhs = matrix_exp(&(&a * span)).unwrap();
        let scale = rhs.abs().max().max(1.0);
        prop_assert!((lhs - rhs).abs().max() <= 1e-10 * scale);
    }

    #[test]
    fn exponential_semigroup(a in small_matrix(3), s in 0.0f64..1.5, t in 0.0f64..1.5) {
        let lhs = matrix_exp(&(&a * (s + t))).unwrap();
        let rhs = matrix_exp(&(&a * s)).unwrap() * matrix_exp(&(&a * t)).unwrap();
        prop_assert!((&lhs - rhs).abs().max() <= 1e-11 * lhs.abs().max().max(1.0));
    }

    #[test]
    fn lti_prediction_matches_integration(
        a in small_matrix(2),
        b in prop::collection::vec(-1.0f64..1.0, 2),
        x in prop::collection::vec(-1.0f64..1.0, 2),
        u in prop::collection::vec(-1.0f64..1.0, 1..6),
    ) {
        let b = DMatrix::from_column_slice(2, 1, &b);
        let h = 1e-3;
        let mut hist = InputHistory::new(1, h);
        for v in &u {
            for _ in 0..100 {
                hist.push_constant(&[*v]);
            }
        }
        let plant = PlantModel::lti(a.clone(), b.clone()).unwrap();
        let got = lti_predict(&a, &b, &x, &hist).unwrap();
        let oracle = numeric_predict(&plant, &x, &hist, &IntegratorConfig::new(h)).unwrap();
        prop_assert!(scaled_error(&got, &oracle) < 1e-9);
    }
}
