use serde::{Deserialize, Serialize};

use super::window::{TrajectoryWindow, WindowShape};
use crate::error::{Error, Result};

/// Goal inpainting: state coordinates `indices` at timestep `timestep` are fixed to `values`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub indices: Vec<usize>,
    pub values: Vec<f32>,
    pub timestep: usize,
}

/// Clamp specification: the start state `c` and an optional goal.
/// Indices are zero-based state coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub start: Vec<f32>,
    pub goal: Option<GoalSpec>,
}

impl ConditionSpec {
    pub fn start(c: Vec<f32>) -> Self {
        ConditionSpec { start: c, goal: None }
    }

    pub fn with_goal(mut self, goal: GoalSpec) -> Self {
        self.goal = Some(goal);
        self
    }

    pub fn validate(&self, shape: WindowShape) -> Result<()> {
        if self.start.len() != shape.state_dim() {
            return Err(Error::Spec(format!(
                "start state has {} entries, state dimension is {}",
                self.start.len(),
                shape.state_dim()
            )));
        }
        if self.start.iter().any(|v| !v.is_finite()) {
            return Err(Error::Spec("start state is not finite".into()));
        }
        if let Some(g) = &self.goal {
            if g.indices.len() != g.values.len() {
                return Err(Error::Spec(format!(
                    "{} goal indices but {} goal values",
                    g.indices.len(),
                    g.values.len()
                )));
            }
            if g.timestep >= shape.horizon() {
                return Err(Error::Spec(format!(
                    "goal timestep {} outside horizon {}",
                    g.timestep,
                    shape.horizon()
                )));
            }
            for (n, &i) in g.indices.iter().enumerate() {
                if i >= shape.state_dim() {
                    return Err(Error::Spec(format!("goal index {i} >= state dimension {}", shape.state_dim())));
                }
                if g.indices[..n].contains(&i) {
                    return Err(Error::Spec(format!("goal index {i} repeated")));
                }
                if g.timestep == 0 && g.values[n].to_bits() != self.start[i].to_bits() {
                    return Err(Error::Spec(format!("goal at t = 0 contradicts start state at index {i}")));
                }
            }
            if g.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Spec("goal values are not finite".into()));
            }
        }
        Ok(())
    }

    /// Flat `(offset, value)` pairs this spec writes, start state first.
    pub fn assignments(&self, shape: WindowShape) -> Vec<(usize, f32)> {
        let mut out: Vec<(usize, f32)> = self.start.iter().enumerate().map(|(k, &v)| (k, v)).collect();
        if let Some(g) = &self.goal {
            for (&i, &v) in g.indices.iter().zip(&g.values) {
                out.push((shape.index(g.timestep, i), v));
            }
        }
        out
    }
}

/// Writes the spec into a flat window buffer. The spec must already be validated.
pub fn clamp_slice(values: &mut [f32], shape: WindowShape, spec: &ConditionSpec) {
    values[..shape.state_dim()].copy_from_slice(&spec.start);
    if let Some(g) = &spec.goal {
        for (&i, &v) in g.indices.iter().zip(&g.values) {
            values[shape.index(g.timestep, i)] = v;
        }
    }
}

pub fn clamp_in_place(x: &mut TrajectoryWindow, spec: &ConditionSpec) -> Result<()> {
    spec.validate(x.shape())?;
    let shape = x.shape();
    clamp_slice(x.values_mut(), shape, spec);
    Ok(())
}

/// Hard constraint: row 0's state block becomes `c`, goal coordinates become `g`.
pub fn clamp(x: &TrajectoryWindow, spec: &ConditionSpec) -> Result<TrajectoryWindow> {
    let mut out = x.clone();
    clamp_in_place(&mut out, spec)?;
    Ok(out)
}

/// Binary H×D mask: `true` = free, `false` = clamped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintMask {
    shape: WindowShape,
    free: Vec<bool>,
}

impl ConstraintMask {
    pub fn for_spec(shape: WindowShape, spec: &ConditionSpec) -> Result<Self> {
        spec.validate(shape)?;
        let mut free = vec![true; shape.numel()];
        for (i, _) in spec.assignments(shape) {
            free[i] = false;
        }
        Ok(ConstraintMask { shape, free })
    }

    /// Mask for a start-only condition.
    pub fn start_only(shape: WindowShape) -> Self {
        let mut free = vec![true; shape.numel()];
        free[..shape.state_dim()].iter_mut().for_each(|f| *f = false);
        ConstraintMask { shape, free }
    }

    pub fn shape(&self) -> WindowShape {
        self.shape
    }

    pub fn is_free(&self, t: usize, k: usize) -> bool {
        self.free[self.shape.index(t, k)]
    }

    pub fn free_flags(&self) -> &[bool] {
        &self.free
    }

    /// Sets clamped entries of a flat window buffer to exactly 0.
    pub fn apply(&self, values: &mut [f32]) {
        for (v, &f) in values.iter_mut().zip(&self.free) {
            if !f {
                *v = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> WindowShape {
        WindowShape::new(4, 2, 1).unwrap()
    }

    #[test]
    fn clamp_zero_window() {
        let out = clamp(&TrajectoryWindow::zeros(shape()), &ConditionSpec::start(vec![1.0, 2.0])).unwrap();
        assert_eq!(out.state(0), &[1.0, 2.0]);
        assert_eq!(out.values().iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn goal_clamp_touches_only_spec_entries() {
        let s = shape();
        let x = TrajectoryWindow::from_values(s, (0..s.numel()).map(|i| i as f32 * 0.37 + 0.1).collect()).unwrap();
        let spec = ConditionSpec::start(vec![-3.0, -4.0]).with_goal(GoalSpec {
            indices: vec![0],
            values: vec![5.0],
            timestep: s.horizon() - 1,
        });
        let out = clamp(&x, &spec).unwrap();
        assert_eq!(out.get(s.horizon() - 1, 0), 5.0);
        let changed = x.values().iter().zip(out.values()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 3);
    }

    #[test]
    fn spec_errors() {
        let s = shape();
        let x = TrajectoryWindow::zeros(s);
        let bad_t = ConditionSpec::start(vec![0.0, 0.0]).with_goal(GoalSpec {
            indices: vec![1],
            values: vec![1.0],
            timestep: 4,
        });
        assert!(matches!(clamp(&x, &bad_t), Err(Error::Spec(_))));
        assert!(clamp(&x, &ConditionSpec::start(vec![0.0])).is_err());
        let bad_len = ConditionSpec::start(vec![0.0, 0.0]).with_goal(GoalSpec {
            indices: vec![0, 1],
            values: vec![1.0],
            timestep: 0,
        });
        assert!(clamp(&x, &bad_len).is_err());
        let bad_idx = ConditionSpec::start(vec![0.0, 0.0]).with_goal(GoalSpec {
            indices: vec![2],
            values: vec![1.0],
            timestep: 0,
        });
        assert!(clamp(&x, &bad_idx).is_err());
        let conflict = ConditionSpec::start(vec![0.0, 0.0]).with_goal(GoalSpec {
            indices: vec![1],
            values: vec![1.0],
            timestep: 0,
        });
        assert!(clamp(&x, &conflict).is_err());
    }

    #[test]
    fn mask_layout() {
        let s = shape();
        let m = ConstraintMask::start_only(s);
        assert!(!m.is_free(0, 0) && !m.is_free(0, 1) && m.is_free(0, 2) && m.is_free(1, 0));
        let spec = ConditionSpec::start(vec![0.0, 0.0]).with_goal(GoalSpec {
            indices: vec![1],
            values: vec![1.0],
            timestep: 2,
        });
        let g = ConstraintMask::for_spec(s, &spec).unwrap();
        assert_eq!(g.free_flags().iter().filter(|f| !**f).count(), 3);
        assert!(!g.is_free(2, 1));
        let mut v = vec![1.0; s.numel()];
        g.apply(&mut v);
        assert_eq!(v[s.index(2, 1)], 0.0);
        assert_eq!(v.iter().filter(|&&x| x == 0.0).count(), 3);
    }
}
