#![allow(dead_code)]

use kdp_core::envs::{collect_dataset, Env};
use kdp_core::trajkit::WindowDataset;

/// f64 forward pass over the flat parameter layout: per layer a row-major
/// `fan_in × fan_out` weight then the bias; tanh on hidden layers.
pub fn mlp_f64(sizes: &[usize], params: &[f64], input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    let mut off = 0;
    let layers = sizes.len() - 1;
    for l in 0..layers {
        let (fi, fo) = (sizes[l], sizes[l + 1]);
        let w = &params[off..off + fi * fo];
        let b = &params[off + fi * fo..off + fi * fo + fo];
        off += fi * fo + fo;
        let mut y: Vec<f64> = b.to_vec();
        for i in 0..fi {
            for j in 0..fo {
                y[j] += x[i] * w[i * fo + j];
            }
        }
        if l + 1 < layers {
            y.iter_mut().for_each(|v| *v = v.tanh());
        }
        x = y;
    }
    x
}

pub fn bimodal_dataset(episodes: usize, seed: u64) -> WindowDataset {
    collect_dataset(&Env::by_name("bimodal1d").unwrap(), episodes, seed).unwrap()
}

pub fn maze_dataset(episodes: usize, seed: u64) -> WindowDataset {
    collect_dataset(&Env::by_name("pointmaze2d").unwrap(), episodes, seed).unwrap()
}
