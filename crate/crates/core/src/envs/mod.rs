//! Toy environments with scripted multimodal data-collection policies.

mod bimodal;
mod pointmaze;

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;

pub use bimodal::{Bimodal1D, BimodalConfig};
pub use pointmaze::{Homotopy, ObstacleRect, PdController, PointMaze2D, PointMazeConfig};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::trajkit::{sliding_windows, DatasetManifest, WindowDataset, WindowShape};

pub const ENV_CONFIG_VERSION: u32 = 1;

/// States, actions and rewards of one episode. `states[t]` is the state the
/// action `actions[t]` was taken from; `final_state` follows the last action.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EpisodeLog {
    pub states: Vec<Vec<f32>>,
    pub actions: Vec<Vec<f32>>,
    pub rewards: Vec<f32>,
    pub final_state: Vec<f32>,
    pub terminal: bool,
}

impl EpisodeLog {
    pub fn new(initial: Vec<f32>) -> Self {
        EpisodeLog { final_state: initial, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push(&mut self, action: Vec<f32>, next: Vec<f32>, reward: f32) {
        let prev = std::mem::replace(&mut self.final_state, next);
        self.states.push(prev);
        self.actions.push(action);
        self.rewards.push(reward);
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().map(|&r| r as f64).sum()
    }
}

/// The environments this crate ships, dispatched by name.
#[derive(Clone, Debug, PartialEq)]
pub enum Env {
    PointMaze(PointMaze2D),
    Bimodal(Bimodal1D),
}

pub const ENV_NAMES: [&str; 2] = ["pointmaze2d", "bimodal1d"];

pub(crate) fn parse_config<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    let value: toml::Table = text.parse().map_err(|e| Error::Config(format!("{what} config: {e}")))?;
    match value.get("version").and_then(|v| v.as_integer()) {
        Some(v) if v == ENV_CONFIG_VERSION as i64 => {}
        other => {
            return Err(Error::Config(format!(
                "{what} config version {other:?}, expected {ENV_CONFIG_VERSION}"
            )))
        }
    }
    toml::from_str(text).map_err(|e| Error::Config(format!("{what} config: {e}")))
}

impl Env {
    /// Environment with its built-in config.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "pointmaze2d" => Ok(Env::PointMaze(PointMaze2D::new(PointMazeConfig::default())?)),
            "bimodal1d" => Ok(Env::Bimodal(Bimodal1D::new(BimodalConfig::default())?)),
            other => Err(Error::Config(format!(
                "unknown environment {other:?} (expected one of {})",
                ENV_NAMES.join(", ")
            ))),
        }
    }

    /// Environment `name` configured from a TOML file.
    pub fn from_config_file(name: &str, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match name {
            "pointmaze2d" => Ok(Env::PointMaze(PointMaze2D::new(parse_config(&text, name)?)?)),
            "bimodal1d" => Ok(Env::Bimodal(Bimodal1D::new(parse_config(&text, name)?)?)),
            _ => Self::by_name(name),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Env::PointMaze(_) => "pointmaze2d",
            Env::Bimodal(_) => "bimodal1d",
        }
    }

    pub fn shape(&self) -> WindowShape {
        match self {
            Env::PointMaze(e) => e.shape(),
            Env::Bimodal(e) => e.shape(),
        }
    }

    /// Deterministic transition; actions outside bounds are clipped.
    pub fn step(&self, state: &[f32], action: &[f32]) -> (Vec<f32>, f32) {
        match self {
            Env::PointMaze(e) => e.step(state, action),
            Env::Bimodal(e) => e.step(state, action),
        }
    }

    pub fn reset(&self, rng: &mut Rng) -> Vec<f32> {
        match self {
            Env::PointMaze(e) => e.reset(rng),
            Env::Bimodal(e) => e.reset(rng),
        }
    }

    /// Whether a closed-loop rollout may stop early at `state`.
    pub fn reached_goal(&self, state: &[f32]) -> bool {
        match self {
            Env::PointMaze(e) => e.in_goal(state),
            Env::Bimodal(_) => false,
        }
    }

    pub fn success(&self, episode: &EpisodeLog) -> bool {
        match self {
            Env::PointMaze(e) => e.in_goal(&episode.final_state),
            Env::Bimodal(_) => true,
        }
    }

    pub fn max_rollout_steps(&self) -> usize {
        match self {
            Env::PointMaze(e) => e.config().max_rollout_steps,
            Env::Bimodal(e) => e.config().episode_steps,
        }
    }

    pub fn config_toml(&self) -> String {
        match self {
            Env::PointMaze(e) => toml::to_string(e.config()).expect("config serializes"),
            Env::Bimodal(e) => toml::to_string(e.config()).expect("config serializes"),
        }
    }

    fn policy_id(&self) -> &'static str {
        match self {
            Env::PointMaze(_) => "pd_waypoint_mix_v1",
            Env::Bimodal(_) => "sign_mix_v1",
        }
    }

    /// One scripted data episode and its behaviour-class label.
    pub fn scripted_episode(&self, rng: &mut Rng) -> (EpisodeLog, &'static str) {
        match self {
            Env::PointMaze(e) => {
                let (ep, _) = e.scripted_episode(rng);
                let label = e.homotopy(&ep).label();
                (ep, label)
            }
            Env::Bimodal(e) => (e.scripted_episode(rng), "sign_mix"),
        }
    }
}

/// Runs `episodes` scripted episodes and slices them into windows.
/// Episode `i` draws from stream `i` of `seed`, so the result depends only on
/// `(env config, episodes, seed)`.
pub fn collect_dataset(env: &Env, episodes: usize, seed: u64) -> Result<WindowDataset> {
    if episodes == 0 {
        return Err(Error::Config("collect_dataset needs at least one episode".into()));
    }
    let shape = env.shape();
    let mut windows = Vec::new();
    let mut rewards = Vec::new();
    let mut classes: BTreeMap<String, f64> = BTreeMap::new();
    let mut successes = 0usize;
    for i in 0..episodes {
        let mut r = rng::stream(seed, i as u64);
        let (ep, label) = env.scripted_episode(&mut r);
        successes += env.success(&ep) as usize;
        *classes.entry(label.to_string()).or_default() += 1.0;
        let (w, rw) = sliding_windows(shape, &ep.states, &ep.actions, &ep.rewards)?;
        windows.extend(w);
        rewards.extend(rw);
    }
    if windows.is_empty() {
        return Err(Error::Config(format!("episodes shorter than horizon {}", shape.horizon())));
    }
    classes.values_mut().for_each(|v| *v /= episodes as f64);
    let manifest = DatasetManifest {
        env: env.name().into(),
        env_config_version: ENV_CONFIG_VERSION,
        seed,
        policy_id: env.policy_id().into(),
        episodes,
        has_rewards: true,
        class_proportions: classes,
        scripted_success_rate: successes as f64 / episodes as f64,
    };
    WindowDataset::new(shape, windows, Some(rewards), manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_env_is_config_error() {
        assert!(matches!(Env::by_name("cartpole"), Err(Error::Config(_))));
    }

    #[test]
    fn config_version_is_checked() {
        let text = include_str!("../../configs/bimodal1d.toml").replace("version = 1", "version = 7");
        assert!(parse_config::<BimodalConfig>(&text, "bimodal1d").is_err());
        let ok: BimodalConfig = parse_config(include_str!("../../configs/bimodal1d.toml"), "bimodal1d").unwrap();
        assert_eq!(ok, BimodalConfig::default());
    }

    #[test]
    fn config_file_round_trip() {
        let env = Env::by_name("pointmaze2d").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("maze.toml");
        std::fs::write(&p, env.config_toml()).unwrap();
        assert_eq!(Env::from_config_file("pointmaze2d", &p).unwrap(), env);
    }

    #[test]
    fn episode_log_lengths() {
        let env = Env::by_name("bimodal1d").unwrap();
        let (ep, _) = env.scripted_episode(&mut rng::seeded(0));
        assert_eq!(ep.states.len(), ep.actions.len());
        assert_eq!(ep.rewards.len(), ep.actions.len());
        assert!(ep.rewards.iter().all(|r| r.is_finite()));
        assert!(collect_dataset(&env, 0, 1).is_err());
    }
}
