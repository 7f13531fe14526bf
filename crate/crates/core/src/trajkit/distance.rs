use super::window::TrajectoryWindow;
use crate::error::{ensure_shape, Result};

/// Conditioning key: the initial state block.
pub fn key(x: &TrajectoryWindow) -> &[f32] {
    x.state(0)
}

/// Euclidean distance, accumulated in f64.
pub fn euclidean(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt() as f32
}

pub fn key_distance(x: &TrajectoryWindow, y: &TrajectoryWindow) -> Result<f32> {
    ensure_shape!(x.shape() == y.shape(), "key distance between {:?} and {:?}", x.shape(), y.shape());
    Ok(euclidean(key(x), key(y)))
}

/// Euclidean distance over all H·D entries (the no-keying comparator).
pub fn full_window_distance(x: &TrajectoryWindow, y: &TrajectoryWindow) -> Result<f32> {
    ensure_shape!(x.shape() == y.shape(), "window distance between {:?} and {:?}", x.shape(), y.shape());
    Ok(euclidean(x.values(), y.values()))
}
