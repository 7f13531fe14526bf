use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{parse_config, EpisodeLog};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::trajkit::WindowShape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BimodalConfig {
    pub version: u32,
    pub step_size: f32,
    /// Data actions are `±mode` plus noise.
    pub mode: f32,
    pub action_noise: f32,
    pub action_bound: f32,
    pub start_range: [f32; 2],
    pub episode_steps: usize,
    pub horizon: usize,
}

impl Default for BimodalConfig {
    fn default() -> Self {
        parse_config(include_str!("../../configs/bimodal1d.toml"), "bimodal1d").expect("built-in config")
    }
}

/// `s' = s + step_size · a`; the data policy picks a sign uniformly at every step.
#[derive(Clone, Debug, PartialEq)]
pub struct Bimodal1D {
    cfg: BimodalConfig,
}

impl Bimodal1D {
    pub fn new(cfg: BimodalConfig) -> Result<Self> {
        if cfg.horizon == 0 || cfg.episode_steps < cfg.horizon || cfg.action_bound <= 0.0 {
            return Err(Error::Config(format!("invalid bimodal1d config {cfg:?}")));
        }
        Ok(Bimodal1D { cfg })
    }

    pub fn config(&self) -> &BimodalConfig {
        &self.cfg
    }

    pub fn shape(&self) -> WindowShape {
        WindowShape::new(self.cfg.horizon, 1, 1).expect("validated")
    }

    pub fn step(&self, state: &[f32], action: &[f32]) -> (Vec<f32>, f32) {
        let a = action[0].clamp(-self.cfg.action_bound, self.cfg.action_bound);
        (vec![state[0] + self.cfg.step_size * a], 0.0)
    }

    pub fn reset(&self, rng: &mut Rng) -> Vec<f32> {
        let [lo, hi] = self.cfg.start_range;
        vec![rng.random_range(lo..hi)]
    }

    pub fn scripted_episode(&self, rng: &mut Rng) -> EpisodeLog {
        let mut s = self.reset(rng);
        let mut ep = EpisodeLog::new(s.clone());
        for _ in 0..self.cfg.episode_steps {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let raw = sign * self.cfg.mode + self.cfg.action_noise * rng::normal(rng);
            let a = vec![raw.clamp(-self.cfg.action_bound, self.cfg.action_bound)];
            let (next, r) = self.step(&s, &a);
            ep.push(a, next.clone(), r);
            s = next;
        }
        ep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{collect_dataset, Env};

    #[test]
    fn linear_dynamics() {
        let env = Bimodal1D::new(BimodalConfig::default()).unwrap();
        assert_eq!(env.step(&[0.0], &[1.0]), (vec![0.1], 0.0));
        assert_eq!(env.step(&[0.0], &[5.0]).0, vec![0.1 * 2.0]);
    }

    #[test]
    fn first_actions_split_evenly() {
        let env = Env::by_name("bimodal1d").unwrap();
        let ds = collect_dataset(&env, 1000, 5).unwrap();
        let shape = ds.shape();
        let pos = (0..ds.len()).filter(|&i| ds.window_values(i)[shape.state_dim()] > 0.0).count();
        let frac = pos as f64 / ds.len() as f64;
        assert!((0.45..=0.55).contains(&frac), "{frac}");
        assert_eq!(ds.len(), 1000 * (32 - 8 + 1));
    }

    #[test]
    fn actions_are_two_separated_modes_in_every_bucket() {
        let env = Env::by_name("bimodal1d").unwrap();
        let ds = collect_dataset(&env, 400, 9).unwrap();
        let cfg = BimodalConfig::default();
        let mut buckets = vec![(Vec::new(), Vec::new()); 4];
        for i in 0..ds.len() {
            let w = ds.window_values(i);
            let b = (((w[0] + 1.0) / 0.5).floor().clamp(0.0, 3.0)) as usize;
            if w[1] > 0.0 {
                buckets[b].0.push(w[1]);
            } else {
                buckets[b].1.push(w[1]);
            }
        }
        for (pos, neg) in buckets {
            assert!(pos.len() > 100 && neg.len() > 100);
            let mp = pos.iter().sum::<f32>() / pos.len() as f32;
            let mn = neg.iter().sum::<f32>() / neg.len() as f32;
            assert!((mp - 1.0).abs() < 0.02 && (mn + 1.0).abs() < 0.02);
            assert!(mp - mn > 10.0 * cfg.action_noise);
        }
    }
}
