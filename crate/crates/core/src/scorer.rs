//! Learned return model `J(window, c)` used to rank candidate windows.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::model::{ModelCard, ModelKind};
use crate::numkit::{AdamConfig, AdamState, FeedForwardNet, Matrix};
use crate::rng;
use crate::stats;
use crate::trainer::EpochSampler;
use crate::trajkit::{NormStats, WindowDataset, WindowShape};

/// `Σ_t γ^t r_t`.
pub fn window_return(rewards: &[f32], gamma: f32) -> f64 {
    let mut acc = 0.0f64;
    let mut g = 1.0f64;
    for &r in rewards {
        acc += g * r as f64;
        g *= gamma as f64;
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub gamma: f32,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            hidden: vec![256, 256],
            steps: 3000,
            batch_size: 256,
            lr: 1e-3,
            gamma: 0.99,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Scores `[normalized window | normalized c]`. The network regresses
/// `return / label_scale`; scores are reported in return units.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnModel {
    net: FeedForwardNet,
    gamma: f32,
    label_scale: f32,
    shape: WindowShape,
    norm: NormStats,
}

fn input_dim(shape: WindowShape) -> usize {
    shape.numel() + shape.state_dim()
}

impl ReturnModel {
    pub fn from_parts(net: FeedForwardNet, gamma: f32, label_scale: f32, shape: WindowShape, norm: NormStats) -> Result<Self> {
        ensure_shape!(
            net.input_dim() == input_dim(shape) && net.output_dim() == 1,
            "scorer net {:?} for windows of {} values",
            net.sizes(),
            shape.numel()
        );
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Config(format!("discount must be in (0, 1], got {gamma}")));
        }
        if !(label_scale.is_finite() && label_scale > 0.0) {
            return Err(Error::Config(format!("label scale {label_scale}")));
        }
        Ok(ReturnModel { net, gamma, label_scale, shape, norm })
    }

    /// All-zero parameters: every score is 0.
    pub fn zeros(shape: WindowShape, norm: NormStats, hidden: &[usize], gamma: f32) -> Result<Self> {
        let mut sizes = vec![input_dim(shape)];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::from_parts(FeedForwardNet::zeros(&sizes)?, gamma, 1.0, shape, norm)
    }

    pub fn net(&self) -> &FeedForwardNet {
        &self.net
    }

    pub fn gamma(&self) -> f32 {
        self.gamma
    }

    pub fn label_scale(&self) -> f32 {
        self.label_scale
    }

    pub fn shape(&self) -> WindowShape {
        self.shape
    }

    pub fn card(&self, env: &str, config_hash: String, train_steps: usize) -> ModelCard {
        ModelCard {
            model: ModelKind::Scorer { gamma: self.gamma, label_scale: self.label_scale },
            env: env.into(),
            shape: self.shape,
            norm: self.norm.clone(),
            config_hash,
            train_steps,
        }
    }

    /// Network input for already-normalized windows and conditions.
    fn normalized_input(&self, windows: &Matrix, conds: &Matrix) -> Result<Matrix> {
        ensure_shape!(
            windows.cols() == self.shape.numel() && conds.cols() == self.shape.state_dim(),
            "scoring {}-value windows with {}-value conditions",
            windows.cols(),
            conds.cols()
        );
        windows.hcat(conds)
    }

    /// Scores raw windows (one per row) under raw conditions (one per row, or one shared).
    pub fn score_batch(&self, windows: &Matrix, conds: &Matrix) -> Result<Vec<f32>> {
        ensure_shape!(
            conds.rows() == windows.rows() || conds.rows() == 1,
            "{} conditions for {} windows",
            conds.rows(),
            windows.rows()
        );
        let mut w = windows.clone();
        self.norm.normalize(w.as_mut_slice());
        let c = Matrix::from_fn(windows.rows(), self.shape.state_dim(), |r, k| {
            let row = if conds.rows() == 1 { 0 } else { r };
            (conds.get(row, k) - self.norm.mean[k]) / self.norm.std[k]
        });
        let out = self.net.forward(&self.normalized_input(&w, &c)?)?;
        Ok(out.as_slice().iter().map(|v| v * self.label_scale).collect())
    }

    pub fn score(&self, window: &[f32], cond: &[f32]) -> Result<f32> {
        let w = Matrix::from_vec(1, window.len(), window.to_vec())?;
        let c = Matrix::from_vec(1, cond.len(), cond.to_vec())?;
        Ok(self.score_batch(&w, &c)?[0])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScorerReport {
    pub losses: Vec<f64>,
    /// RMS error over max(RMS label, 1) on the holdout split.
    pub holdout_rel_err: f64,
    pub holdout_spearman: f64,
    pub holdout_size: usize,
}

/// Regresses discounted window returns. Conditions are the window keys.
pub fn train_scorer(dataset: &WindowDataset, cfg: &ScorerConfig) -> Result<(ReturnModel, ScorerReport)> {
    let rewards = dataset
        .rewards()
        .ok_or_else(|| Error::Config("scorer training needs a dataset with rewards".into()))?;
    if !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) || !(0.0..1.0).contains(&cfg.holdout_fraction) || cfg.batch_size == 0 {
        return Err(Error::Config(format!("invalid scorer config {cfg:?}")));
    }
    let shape = dataset.shape();
    let h = shape.horizon();
    let n = dataset.len();
    let returns: Vec<f64> = (0..n).map(|i| window_return(&rewards[i * h..(i + 1) * h], cfg.gamma)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(cfg.seed, 10));
    let n_hold = ((n as f64 * cfg.holdout_fraction).round() as usize).min(n - 1);
    let (hold, train_idx) = order.split_at(n_hold);

    let train_returns: Vec<f64> = train_idx.iter().map(|&i| returns[i]).collect();
    let mean = stats::mean(&train_returns);
    let sd = stats::std(&train_returns);
    let scale = if sd > 1e-6 * mean.abs().max(1.0) { sd } else { mean.abs().max(1.0) } as f32;

    let mut sizes = vec![input_dim(shape)];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let mut net = FeedForwardNet::xavier(&sizes, &mut rng::stream(cfg.seed, 11))?;
    net.scale_output_layer(0.1);
    let last = net.n_layers() - 1;
    net.bias_mut(last)[0] = (mean / scale as f64) as f32;
    let mut model = ReturnModel::from_parts(net, cfg.gamma, scale, shape, dataset.norm().clone())?;

    let data = dataset.normalized_matrix();
    let rows = |idx: &[usize]| -> (Matrix, Vec<f32>) {
        let x = Matrix::from_fn(idx.len(), input_dim(shape), |r, c| {
            let row = data.row(idx[r]);
            if c < shape.numel() { row[c] } else { row[c - shape.numel()] }
        });
        (x, idx.iter().map(|&i| (returns[i] / scale as f64) as f32).collect())
    };

    let batch = cfg.batch_size.min(train_idx.len());
    let mut sampler = EpochSampler::new(train_idx.len(), rng::stream(cfg.seed, 12));
    let mut adam = AdamState::new(model.net.param_count(), AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = sampler.next_batch(batch)?.iter().map(|&k| train_idx[k]).collect();
        let (x, y) = rows(&idx);
        let (out, mut tape) = model.net.forward_recorded(&x)?;
        let mut loss = 0.0f64;
        let mut grad = Matrix::zeros(idx.len(), 1);
        for (i, (p, t)) in out.as_slice().iter().zip(&y).enumerate() {
            let d = p - t;
            loss += (d as f64) * (d as f64);
            grad.as_mut_slice()[i] = 2.0 * d / idx.len() as f32;
        }
        loss /= idx.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("scorer loss at step {}", step + 1)));
        }
        model.net.backward(&mut tape, &grad)?;
        adam.step(model.net.params_mut(), tape.gradients())?;
        losses.push(loss);
    }

    let mut report = ScorerReport { losses, holdout_size: hold.len(), ..Default::default() };
    if !hold.is_empty() {
        let (x, _) = rows(hold);
        let pred: Vec<f64> = model.net.forward(&x)?.as_slice().iter().map(|&v| v as f64 * scale as f64).collect();
        let truth: Vec<f64> = hold.iter().map(|&i| returns[i]).collect();
        let se: f64 = pred.iter().zip(&truth).map(|(p, t)| (p - t).powi(2)).sum();
        let sy: f64 = truth.iter().map(|t| t * t).sum();
        report.holdout_rel_err = (se / sy.max(truth.len() as f64)).sqrt();
        report.holdout_spearman = stats::spearman(&pred, &truth);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajkit::DatasetManifest;

    #[test]
    fn returns() {
        assert_eq!(window_return(&[0.0; 4], 0.9), 0.0);
        assert_eq!(window_return(&[1.0; 5], 1.0), 5.0);
        assert_eq!(window_return(&[1.0, 2.0, 3.0], 0.5), 2.75);
    }

    fn constant_dataset(reward: f32) -> WindowDataset {
        let shape = WindowShape::new(4, 2, 1).unwrap();
        let n = 400;
        let mut w = vec![0.0; n * shape.numel()];
        rng::fill_normal(&mut rng::seeded(1), &mut w);
        let manifest = DatasetManifest {
            env: "const".into(),
            env_config_version: 1,
            seed: 0,
            policy_id: "none".into(),
            episodes: n,
            has_rewards: true,
            class_proportions: Default::default(),
            scripted_success_rate: 1.0,
        };
        WindowDataset::new(shape, w, Some(vec![reward; n * 4]), manifest).unwrap()
    }

    #[test]
    fn constant_rewards_are_learned() {
        let ds = constant_dataset(-2.0);
        let cfg = ScorerConfig { hidden: vec![32], steps: 200, batch_size: 64, ..Default::default() };
        let (model, report) = train_scorer(&ds, &cfg).unwrap();
        let truth = window_return(&[-2.0; 4], cfg.gamma);
        assert!(report.holdout_rel_err < 0.05, "{report:?}");
        let s = model.score(ds.window_values(0), &ds.window_values(0)[..2]).unwrap() as f64;
        assert!(((s - truth) / truth).abs() < 0.05);
    }

    #[test]
    fn zero_steps_and_zero_params() {
        let ds = constant_dataset(1.0);
        let cfg = ScorerConfig { hidden: vec![8], steps: 0, ..Default::default() };
        let (model, report) = train_scorer(&ds, &cfg).unwrap();
        assert!(report.losses.is_empty());
        let s = model.score(ds.window_values(3), &[0.0, 0.0]).unwrap();
        assert!(s.is_finite());
        assert_eq!(s, model.score(ds.window_values(3), &[0.0, 0.0]).unwrap());
        let zero = ReturnModel::zeros(ds.shape(), ds.norm().clone(), &[8], 0.99).unwrap();
        assert_eq!(zero.score(ds.window_values(3), &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn missing_rewards_is_config_error() {
        let ds = constant_dataset(1.0);
        let no_r = WindowDataset::new(
            ds.shape(),
            ds.raw_values().to_vec(),
            None,
            DatasetManifest { has_rewards: false, ..ds.manifest().clone() },
        )
        .unwrap();
        assert!(matches!(train_scorer(&no_r, &ScorerConfig::default()), Err(Error::Config(_))));
    }
}
