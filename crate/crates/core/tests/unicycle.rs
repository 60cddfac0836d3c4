use delaycomp::analysis::{deadbeat_bound, deadbeat_report, default_deadbeat_order};
use delaycomp::config::load_scenario;
use delaycomp::controllers::{
    classify_region, exact_regions, nonholonomic_constant_input, unicycle_region, Region,
    UnicycleHold,
};
use delaycomp::signals::norm;
use delaycomp::simulation::{run, ControllerSpec, InitialSegment, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

fn shipped_unicycle() -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../cli/configs/unicycle_zoh.toml");
    load_scenario(&path).unwrap().scenario
}

fn random_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut x = [0.0; 3];
    for v in &mut x {
        *v = rng.random_range(-3.0..3.0);
    }
    // land on the measure-zero sets often enough to exercise them
    match rng.random_range(0..6) {
        0 => x[1] = 0.0,
        1 => x[1] = 0.5 * x[0] * x[2],
        2 => {
            x[1] = 0.0;
            x[2] = 0.0;
        }
        _ => {}
    }
    x
}

#[test]
fn regions_partition_the_state_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100_000 {
        let x = random_point(&mut rng);
        let exact = exact_regions(&x);
        if norm(&x) == 0.0 {
            assert_eq!(exact, [false, false, true]);
            continue;
        }
        assert_eq!(exact.iter().filter(|b| **b).count(), 1, "{x:?}");
        let expected = [Region::C1, Region::C2, Region::C3][exact.iter().position(|b| *b).unwrap()];
        assert_eq!(classify_region(&x), expected, "{x:?}");
    }
}

#[test]
fn three_constant_inputs_reach_the_origin() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let x0 = random_point(&mut rng);
        let t = rng.random_range(0.2..2.0);
        let mut x = x0;
        for _ in 0..3 {
            let (_, k) = unicycle_region(&x, t);
            x = nonholonomic_constant_input(&x, &k, t);
        }
        assert!(norm(&x) <= 1e-9 * (1.0 + norm(&x0)), "{x0:?} T={t}: {x:?}");
    }
}

#[test]
fn chained_hold_is_deadbeat_from_random_poses() {
    let template = shipped_unicycle();
    let order = default_deadbeat_order(&template).unwrap();
    let bound = deadbeat_bound(&template, order).unwrap();
    assert!((bound - 3.5).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let mut s = template.clone();
        let pose: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        s.x0 = InitialSegment::Constant(pose.clone());
        let res = run(&s).unwrap();
        let report = deadbeat_report(&res, 1e-6, bound);
        assert!(report.achieved, "{pose:?}: {report:?}");
    }
}

#[test]
fn holding_vehicle_inputs_is_not_deadbeat() {
    let mut s = shipped_unicycle();
    s.controller = ControllerSpec::UnicycleZoh {
        hold: UnicycleHold::Vehicle,
    };
    let bound = deadbeat_bound(&s, 3).unwrap();
    let res = run(&s).unwrap();
    assert!(!deadbeat_report(&res, 1e-6, bound).achieved);
}
