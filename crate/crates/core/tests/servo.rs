use nalgebra::{Rotation3, Unit};
use peginsert::perception::{RegressorModel, TrainHyper};
use peginsert::pipeline::{configure, CollectionConfig, ConfigureOptions, Decision, DeploymentGate, WorldFactory, BENCH_STREAM};
use peginsert::search::generate_pattern;
use peginsert::seeds;
use peginsert::servoing::{servo_step, visual_servo, ServoConfig};
use peginsert::sim::{new_world, ComponentStyle, TimingModel, WorldConfig, WorldState};
use proptest::prelude::*;

fn oracles(world: &WorldState, sigma: f64) -> Vec<RegressorModel> {
    world.cameras.iter().map(|c| RegressorModel::oracle(c.resolution, sigma)).collect()
}

/// World with zero calibration noise and the TCP `e0` mm from the hole in a
/// seeded random direction.
fn world_at(seed: u64, e0: f64) -> WorldState {
    let mut w = new_world(WorldConfig {
        seed,
        hole_uncertainty_sigma: 0.0,
        grasp_uncertainty_sigma: 0.0,
        extra_error_radius: 0.0,
        ..Default::default()
    })
    .unwrap();
    let t: f64 = rand::Rng::random_range(&mut seeds::rng(seed, &[0xA]), 0.0..std::f64::consts::TAU);
    let start = w.nominal_tcp() + w.plane_vector([e0 * t.cos(), e0 * t.sin()]);
    w.approach(start);
    w
}

#[test]
fn noisy_oracle_contracts_in_one_step() {
    for seed in 0..100 {
        let mut w = world_at(seed, 1.0);
        let cfg = ServoConfig::for_world(&w, oracles(&w, 0.001), 1, TimingModel::default());
        let run = visual_servo(&mut w, &cfg, &mut seeds::rng(seed, &[1])).unwrap();
        assert!(run.residuals[0] < 0.2, "seed {seed}: {}", run.residuals[0]);
    }
}

#[test]
fn calibration_error_still_contracts() {
    // Believed camera positions rotated 2 degrees about the insertion axis.
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut w = world_at(seed, 1.0);
        let mut cfg = ServoConfig::for_world(&w, oracles(&w, 0.0), 1, TimingModel::default());
        let axis = Unit::new_normalize(w.l());
        let rot = Rotation3::from_axis_angle(&axis, 2f64.to_radians());
        for c in &mut cfg.cameras {
            c.position = w.nominal_hole + rot * (c.position - w.nominal_hole);
        }
        let run = visual_servo(&mut w, &cfg, &mut seeds::rng(seed, &[])).unwrap();
        worst = worst.max(run.residuals[0]);
    }
    assert!(worst < 0.3, "worst one-step residual {worst}");
}

#[test]
fn more_iterations_do_not_hurt() {
    let mean_final = |n_iters: usize| {
        (0..100)
            .map(|seed| {
                let mut w = world_at(seed, 1.0);
                let cfg = ServoConfig::for_world(&w, oracles(&w, 0.002), n_iters, TimingModel::default());
                *visual_servo(&mut w, &cfg, &mut seeds::rng(seed, &[2])).unwrap().residuals.last().unwrap()
            })
            .sum::<f64>()
            / 100.0
    };
    let (one, three) = (mean_final(1), mean_final(3));
    assert!(three <= one * 1.05, "n=1: {one}, n=3: {three}");
}

#[test]
fn trained_models_reach_five_hundredths() {
    let wc = WorldConfig::default();
    let factory = WorldFactory::new(wc.clone());
    let conf = configure(
        &factory,
        &[ComponentStyle::DSUB],
        &CollectionConfig::default(),
        &generate_pattern(wc.tolerance, 1.0).unwrap(),
        &TrainHyper::default(),
        &DeploymentGate::for_tolerance(wc.tolerance),
        &ConfigureOptions::default(),
    )
    .unwrap();
    assert_eq!(conf.decision(), Decision::Deploy);
    let models = conf.models_for(ComponentStyle::DSUB).unwrap().to_vec();
    let good = (0..50u64)
        .filter(|&i| {
            let mut w = factory.world(ComponentStyle::DSUB, BENCH_STREAM, i).unwrap();
            let cfg = ServoConfig::for_world(&w, models.clone(), 3, TimingModel::default());
            let run = visual_servo(&mut w, &cfg, &mut seeds::rng(i, &[])).unwrap();
            *run.residuals.last().unwrap() <= 0.05
        })
        .count();
    assert!(good >= 45, "{good}/50 within 0.05 mm");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn steps_are_clamped_and_in_plane(seed in 0u64..10_000, e0 in 0.0f64..6.0, clamp in 0.2f64..3.0, sigma in 0.0f64..0.01) {
        let mut w = world_at(seed, e0);
        let before = w.tcp;
        let mut cfg = ServoConfig::for_world(&w, oracles(&w, sigma), 1, TimingModel::default());
        cfg.clamp_mm = clamp;
        let step = servo_step(&mut w, &cfg, &mut seeds::rng(seed, &[])).unwrap();
        prop_assert!(step.correction.norm() <= clamp * (1.0 + 1e-12));
        prop_assert!((step.new_tcp - before).dot(&w.l()).abs() < 1e-9);
        prop_assert_eq!(w.tcp, step.new_tcp);
        if sigma == 0.0 && e0 < clamp * 0.999 {
            prop_assert!(!step.saturated);
            prop_assert!(w.in_plane_error(&w.tcp).norm() < 1e-9);
        }
    }
}
