use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};

/// Window geometry: `H` timesteps of `D = d_s + d_a` values each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawShape", into = "RawShape")]
pub struct WindowShape {
    horizon: usize,
    state_dim: usize,
    action_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct RawShape {
    horizon: usize,
    state_dim: usize,
    action_dim: usize,
}

impl TryFrom<RawShape> for WindowShape {
    type Error = Error;
    fn try_from(r: RawShape) -> Result<Self> {
        WindowShape::new(r.horizon, r.state_dim, r.action_dim)
    }
}

impl From<WindowShape> for RawShape {
    fn from(s: WindowShape) -> Self {
        RawShape { horizon: s.horizon, state_dim: s.state_dim, action_dim: s.action_dim }
    }
}

impl WindowShape {
    pub fn new(horizon: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if horizon == 0 || state_dim == 0 || action_dim == 0 {
            return Err(Error::Config(format!(
                "window shape needs H, d_s, d_a >= 1, got ({horizon}, {state_dim}, {action_dim})"
            )));
        }
        Ok(WindowShape { horizon, state_dim, action_dim })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Row width `D`.
    pub fn width(&self) -> usize {
        self.state_dim + self.action_dim
    }

    /// `H · D`.
    pub fn numel(&self) -> usize {
        self.horizon * self.width()
    }

    /// Flat offset of entry `(t, k)`.
    pub fn index(&self, t: usize, k: usize) -> usize {
        t * self.width() + k
    }
}

/// One H×D window stored row-major; each row is `[state | action]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryWindow {
    shape: WindowShape,
    values: Vec<f32>,
}

impl TrajectoryWindow {
    pub fn zeros(shape: WindowShape) -> Self {
        TrajectoryWindow { shape, values: vec![0.0; shape.numel()] }
    }

    pub fn from_values(shape: WindowShape, values: Vec<f32>) -> Result<Self> {
        ensure_shape!(
            values.len() == shape.numel(),
            "{} values for a {}x{} window",
            values.len(),
            shape.horizon(),
            shape.width()
        );
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("window entry {i}")));
        }
        Ok(TrajectoryWindow { shape, values })
    }

    pub fn shape(&self) -> WindowShape {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, t: usize, k: usize) -> f32 {
        self.values[self.shape.index(t, k)]
    }

    pub fn set(&mut self, t: usize, k: usize, v: f32) {
        let i = self.shape.index(t, k);
        self.values[i] = v;
    }

    pub fn row(&self, t: usize) -> &[f32] {
        let d = self.shape.width();
        &self.values[t * d..(t + 1) * d]
    }

    pub fn state(&self, t: usize) -> &[f32] {
        &self.row(t)[..self.shape.state_dim()]
    }

    pub fn action(&self, t: usize) -> &[f32] {
        &self.row(t)[self.shape.state_dim()..]
    }

    pub fn state_mut(&mut self, t: usize) -> &mut [f32] {
        let (d, ds) = (self.shape.width(), self.shape.state_dim());
        &mut self.values[t * d..t * d + ds]
    }

    pub fn action_mut(&mut self, t: usize) -> &mut [f32] {
        let (d, ds) = (self.shape.width(), self.shape.state_dim());
        &mut self.values[t * d + ds..(t + 1) * d]
    }
}
