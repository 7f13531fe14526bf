//! Fixed seeds give identical datasets, parameters and rollouts.

mod common;

use kdp_core::bc::{train_bc, BcConfig};
use kdp_core::diffuser::{train_denoiser, DiffuserConfig};
use kdp_core::envs::Env;
use kdp_core::planner::{evaluate, PlannerConfig};
use kdp_core::scorer::{train_scorer, ScorerConfig};
use kdp_core::trainer::{train, TrainConfig};

#[test]
fn datasets_and_models_repeat() {
    let a = common::maze_dataset(3, 9);
    let b = common::maze_dataset(3, 9);
    assert_eq!(a.encode(), b.encode());
    assert_ne!(a.encode(), common::maze_dataset(3, 10).encode());

    let cfg = TrainConfig { batch_size: 16, noise_dim: 4, hidden: vec![16], steps: 25, eval_every: 10, ..Default::default() };
    let (p1, r1) = train(&a, cfg.clone()).unwrap();
    let (p2, r2) = train(&b, cfg.clone()).unwrap();
    assert_eq!(p1, p2);
    let strip = |r: &kdp_core::trainer::TrainReport| {
        r.rows.iter().map(|x| (x.step, x.loss.to_bits(), x.drift_rms.to_bits(), x.action_div)).collect::<Vec<_>>()
    };
    assert_eq!(strip(&r1), strip(&r2));
    let (p3, _) = train(&a, TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(p1, p3);

    let sc = ScorerConfig { hidden: vec![8], steps: 10, ..Default::default() };
    assert_eq!(train_scorer(&a, &sc).unwrap().0, train_scorer(&b, &sc).unwrap().0);
    let dc = DiffuserConfig { hidden: vec![8], steps: 10, ..Default::default() };
    assert_eq!(train_denoiser(&a, &dc).unwrap().0, train_denoiser(&b, &dc).unwrap().0);
    let bc = BcConfig { hidden: vec![8], steps: 10, ..Default::default() };
    assert_eq!(train_bc(&a, &bc).unwrap().0, train_bc(&b, &bc).unwrap().0);

    let env = Env::by_name("pointmaze2d").unwrap();
    let (scorer, _) = train_scorer(&a, &sc).unwrap();
    let pc = PlannerConfig { k: 4, chunk: 2, ranked: true, seed: 5 };
    let run = || {
        evaluate(&env, &p1, &pc, Some(&scorer), 2, 2)
            .unwrap()
            .into_iter()
            .map(|r| (r.nfe_total(), r.episode, r.success))
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
