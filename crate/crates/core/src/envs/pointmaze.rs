use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{parse_config, EpisodeLog};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::trajkit::WindowShape;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleRect {
    pub x_min: f32,
    pub x_max: f32,
    pub y_min: f32,
    pub y_max: f32,
}

impl ObstacleRect {
    /// Strict interior; the boundary itself is free space.
    pub fn contains(&self, x: f32, y: f32) -> bool {
        x > self.x_min && x < self.x_max && y > self.y_min && y < self.y_max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdController {
    pub kp: f32,
    pub kd: f32,
    pub waypoint_left: [f32; 2],
    pub waypoint_right: [f32; 2],
    pub waypoint_jitter: f32,
    /// Switch from waypoint to goal once `x > waypoint.x - switch_margin`.
    pub switch_margin: f32,
    pub action_noise: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMazeConfig {
    pub version: u32,
    pub dt: f32,
    pub drag: f32,
    pub bounds: [f32; 2],
    pub obstacle: ObstacleRect,
    pub goal: [f32; 2],
    pub goal_radius: f32,
    pub start_x: [f32; 2],
    pub start_y: [f32; 2],
    pub horizon: usize,
    /// Length of scripted data episodes (no early termination).
    pub episode_steps: usize,
    pub max_rollout_steps: usize,
    pub controller: PdController,
}

impl Default for PointMazeConfig {
    fn default() -> Self {
        parse_config(include_str!("../../configs/pointmaze2d.toml"), "pointmaze2d").expect("built-in config")
    }
}

/// Which side of the obstacle an episode passed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Homotopy {
    /// Above the obstacle (on the left when travelling towards +x).
    PassLeft,
    PassRight,
    /// Never crossed the obstacle's centre line.
    Undetermined,
}

impl Homotopy {
    pub fn label(self) -> &'static str {
        match self {
            Homotopy::PassLeft => "pass_left",
            Homotopy::PassRight => "pass_right",
            Homotopy::Undetermined => "undetermined",
        }
    }
}

/// Point mass in a walled square with one rectangular obstacle.
/// State `[x, y, vx, vy]`, action `[ax, ay]` in `[-1, 1]²`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMaze2D {
    cfg: PointMazeConfig,
}

impl PointMaze2D {
    pub fn new(cfg: PointMazeConfig) -> Result<Self> {
        let o = cfg.obstacle;
        let ok = cfg.dt > 0.0
            && cfg.drag >= 0.0
            && cfg.bounds[0] < cfg.bounds[1]
            && o.x_min < o.x_max
            && o.y_min < o.y_max
            && cfg.goal_radius >= 0.0
            && cfg.horizon >= 1
            && cfg.episode_steps >= cfg.horizon;
        if !ok {
            return Err(Error::Config(format!("invalid pointmaze2d config {cfg:?}")));
        }
        Ok(PointMaze2D { cfg })
    }

    pub fn config(&self) -> &PointMazeConfig {
        &self.cfg
    }

    pub fn shape(&self) -> WindowShape {
        WindowShape::new(self.cfg.horizon, 4, 2).expect("validated")
    }

    pub fn distance_to_goal(&self, state: &[f32]) -> f32 {
        let dx = state[0] as f64 - self.cfg.goal[0] as f64;
        let dy = state[1] as f64 - self.cfg.goal[1] as f64;
        (dx * dx + dy * dy).sqrt() as f32
    }

    /// Closed ball of radius `goal_radius`.
    pub fn in_goal(&self, state: &[f32]) -> bool {
        self.distance_to_goal(state) <= self.cfg.goal_radius
    }

    /// Velocity Verlet with linear drag, then inelastic wall and obstacle contact.
    pub fn step(&self, state: &[f32], action: &[f32]) -> (Vec<f32>, f32) {
        let c = &self.cfg;
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        let (p, v) = ([state[0], state[1]], [state[2], state[3]]);
        let mut pn = [0.0f32; 2];
        let mut vn = [0.0f32; 2];
        for k in 0..2 {
            let acc = a[k] - c.drag * v[k];
            let vh = v[k] + 0.5 * c.dt * acc;
            pn[k] = p[k] + c.dt * vh;
            let acc2 = a[k] - c.drag * vh;
            vn[k] = vh + 0.5 * c.dt * acc2;
        }
        for k in 0..2 {
            if pn[k] < c.bounds[0] {
                pn[k] = c.bounds[0];
                vn[k] = 0.0;
            } else if pn[k] > c.bounds[1] {
                pn[k] = c.bounds[1];
                vn[k] = 0.0;
            }
        }
        if c.obstacle.contains(pn[0], pn[1]) {
            let (axis, face) = self.entry_face(p, pn);
            pn[axis] = face;
            vn[axis] = 0.0;
        }
        let next = vec![pn[0], pn[1], vn[0], vn[1]];
        let r = -self.distance_to_goal(&next);
        (next, r)
    }

    /// Face of the obstacle the segment `p → pn` crosses first (slab method):
    /// the axis whose slab is entered last is the one hit.
    fn entry_face(&self, p: [f32; 2], pn: [f32; 2]) -> (usize, f32) {
        let o = self.cfg.obstacle;
        let lo = [o.x_min, o.y_min];
        let hi = [o.x_max, o.y_max];
        let mut best: Option<(f32, usize, f32)> = None;
        for k in 0..2 {
            let face = if p[k] <= lo[k] {
                lo[k]
            } else if p[k] >= hi[k] {
                hi[k]
            } else {
                continue;
            };
            let d = pn[k] - p[k];
            let t = if d == 0.0 { 0.0 } else { (face - p[k]) / d };
            if best.is_none_or(|(bt, _, _)| t > bt) {
                best = Some((t, k, face));
            }
        }
        match best {
            Some((_, k, face)) => (k, face),
            // Started inside (only reachable from a hand-made state): push out the nearest face.
            None => {
                let cands = [(0, lo[0]), (0, hi[0]), (1, lo[1]), (1, hi[1])];
                *cands
                    .iter()
                    .min_by(|a, b| (pn[a.0] - a.1).abs().total_cmp(&(pn[b.0] - b.1).abs()))
                    .unwrap()
            }
        }
    }

    pub fn reset(&self, rng: &mut Rng) -> Vec<f32> {
        let x = rng.random_range(self.cfg.start_x[0]..self.cfg.start_x[1]);
        let y = rng.random_range(self.cfg.start_y[0]..self.cfg.start_y[1]);
        vec![x, y, 0.0, 0.0]
    }

    /// Noisy PD controller through a per-episode waypoint on a randomly chosen
    /// side of the obstacle, then on to the goal.
    pub fn scripted_episode(&self, rng: &mut Rng) -> (EpisodeLog, Homotopy) {
        let ctl = &self.cfg.controller;
        let left = rng.random_bool(0.5);
        let mut s = self.reset(rng);
        let base = if left { ctl.waypoint_left } else { ctl.waypoint_right };
        let j = ctl.waypoint_jitter;
        let wp = [
            base[0] + rng.random_range(-j..=j),
            base[1] + rng.random_range(-j..=j),
        ];
        let mut to_goal = false;
        let mut ep = EpisodeLog::new(s.clone());
        for _ in 0..self.cfg.episode_steps {
            if !to_goal && s[0] > wp[0] - ctl.switch_margin {
                to_goal = true;
            }
            let target = if to_goal { self.cfg.goal } else { wp };
            let a: Vec<f32> = (0..2)
                .map(|k| {
                    let u = ctl.kp * (target[k] - s[k]) - ctl.kd * s[2 + k] + ctl.action_noise * rng::normal(rng);
                    u.clamp(-1.0, 1.0)
                })
                .collect();
            let (next, r) = self.step(&s, &a);
            ep.push(a, next.clone(), r);
            s = next;
        }
        let intended = if left { Homotopy::PassLeft } else { Homotopy::PassRight };
        (ep, intended)
    }

    /// Side-of-obstacle label from where the path first crosses the obstacle's centre line.
    pub fn homotopy(&self, ep: &EpisodeLog) -> Homotopy {
        let o = self.cfg.obstacle;
        let cx = 0.5 * (o.x_min + o.x_max);
        let cy = 0.5 * (o.y_min + o.y_max);
        ep.states
            .iter()
            .chain(std::iter::once(&ep.final_state))
            .find(|s| s[0] >= cx)
            .map(|s| if s[1] > cy { Homotopy::PassLeft } else { Homotopy::PassRight })
            .unwrap_or(Homotopy::Undetermined)
    }
}
