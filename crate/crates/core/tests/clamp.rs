//! Clamp exactness over random windows/specs and through training.

mod common;

use kdp_core::drift::{drift_field, DriftConfig};
use kdp_core::numkit::Matrix;
use kdp_core::rng;
use kdp_core::trainer::{drifted_target, TrainConfig, Trainer};
use kdp_core::trajkit::{clamp, key, ConditionSpec, ConstraintMask, GoalSpec, TrajectoryWindow, WindowShape};
use rand::Rng as _;

fn random_spec(shape: WindowShape, r: &mut rng::Rng) -> ConditionSpec {
    let start: Vec<f32> = (0..shape.state_dim()).map(|_| r.random_range(-5.0..5.0)).collect();
    let spec = ConditionSpec::start(start.clone());
    if r.random_bool(0.5) {
        return spec;
    }
    let t = r.random_range(1..shape.horizon());
    let n = r.random_range(1..=shape.state_dim());
    let mut idx: Vec<usize> = (0..shape.state_dim()).collect();
    idx.truncate(n);
    let values = idx.iter().map(|_| r.random_range(-5.0..5.0)).collect();
    spec.with_goal(GoalSpec { indices: idx, values, timestep: t })
}

fn assert_exact(values: &[f32], shape: WindowShape, spec: &ConditionSpec) {
    for (i, v) in spec.assignments(shape) {
        assert_eq!(values[i].to_bits(), v.to_bits(), "index {i}");
    }
}

#[test]
fn random_windows_and_specs() {
    let mut r = rng::seeded(42);
    for n in 0..10_000 {
        let shape = WindowShape::new(r.random_range(2..10), r.random_range(1..5), r.random_range(1..4)).unwrap();
        let spec = random_spec(shape, &mut r);
        spec.validate(shape).unwrap();
        let mut vals = vec![0.0f32; shape.numel()];
        rng::fill_normal(&mut r, &mut vals);
        if n % 7 == 0 {
            vals.iter_mut().for_each(|v| *v *= 1e6);
        }
        let w = TrajectoryWindow::from_values(shape, vals.clone()).unwrap();
        let c = clamp(&w, &spec).unwrap();
        assert_exact(c.values(), shape, &spec);
        assert_eq!(key(&c), spec.start.as_slice());
        assert_eq!(clamp(&c, &spec).unwrap(), c);
        let mask = ConstraintMask::for_spec(shape, &spec).unwrap();
        for (k, (a, b)) in vals.iter().zip(c.values()).enumerate() {
            if mask.free_flags()[k] {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}

#[test]
fn drift_and_target_respect_goal_masks() {
    let mut r = rng::seeded(3);
    let shape = WindowShape::new(6, 3, 2).unwrap();
    for _ in 0..200 {
        let b = 6;
        let specs: Vec<ConditionSpec> = (0..b).map(|_| random_spec(shape, &mut r)).collect();
        let masks: Vec<ConstraintMask> = specs.iter().map(|s| ConstraintMask::for_spec(shape, s).unwrap()).collect();
        let mut gen = Matrix::zeros(b, shape.numel());
        let mut data = Matrix::zeros(b, shape.numel());
        rng::fill_normal(&mut r, gen.as_mut_slice());
        rng::fill_normal(&mut r, data.as_mut_slice());
        for i in 0..b {
            kdp_core::trajkit::clamp_slice(gen.row_mut(i), shape, &specs[i]);
            kdp_core::trajkit::clamp_slice(data.row_mut(i), shape, &specs[i]);
        }
        let drift = drift_field(&gen, &data, shape, &masks, &DriftConfig::default()).unwrap();
        for i in 0..b {
            for (k, &free) in masks[i].free_flags().iter().enumerate() {
                if !free {
                    assert_eq!(drift.v.get(i, k), 0.0);
                }
            }
        }
        // a corrupted drift on clamped coordinates must still give an exact target
        let mut v = drift.v.clone();
        v.as_mut_slice().iter_mut().for_each(|x| *x += 1e3);
        let target = drifted_target(&gen, &v, shape, &specs).unwrap();
        for i in 0..b {
            assert_exact(target.row(i), shape, &specs[i]);
        }
    }
}

#[test]
fn thousand_training_steps_stay_clamped() {
    let ds = common::bimodal_dataset(40, 1);
    let shape = ds.shape();
    let cfg = TrainConfig { batch_size: 16, noise_dim: 4, hidden: vec![16], steps: 1000, eval_every: 0, ..Default::default() };
    let mut trainer = Trainer::new(&ds, cfg).unwrap();
    let mask = ConstraintMask::start_only(shape);
    let mut r = rng::seeded(9);
    for _ in 0..1000 {
        let idx: Vec<usize> = (0..16).map(|_| r.random_range(0..ds.len())).collect();
        let t = trainer.step_tensors(&idx).unwrap();
        for i in 0..16 {
            let spec = ConditionSpec::start(t.data.row(i)[..shape.state_dim()].to_vec());
            assert_exact(t.gen.row(i), shape, &spec);
            assert_exact(t.target.row(i), shape, &spec);
            for (k, &free) in mask.free_flags().iter().enumerate() {
                if !free {
                    assert_eq!(t.drift.v.get(i, k), 0.0);
                }
            }
        }
        trainer.step().unwrap();
    }
}
