//! Behaviour-cloning baseline: a deterministic map from the start state to a
//! whole window, fit by weighted regression onto the data windows.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::model::{ModelCard, ModelKind};
use crate::numkit::{AdamConfig, AdamState, FeedForwardNet, Matrix};
use crate::rng;
use crate::trainer::{normalize_spec, weighted_loss, weighted_loss_grad, EpochSampler};
use crate::trajkit::{clamp_slice, ConditionSpec, ConstraintMask, NormStats, WindowDataset, WindowShape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub lambda_s: f32,
    pub lambda_a: f32,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig { hidden: vec![256, 256], steps: 5000, batch_size: 128, lr: 3e-4, lambda_s: 1.0, lambda_a: 10.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcPolicy {
    net: FeedForwardNet,
    shape: WindowShape,
    norm: NormStats,
}

impl BcPolicy {
    pub fn from_parts(net: FeedForwardNet, shape: WindowShape, norm: NormStats) -> Result<Self> {
        ensure_shape!(
            net.input_dim() == shape.state_dim() && net.output_dim() == shape.numel(),
            "bc net {:?} for {}-value windows",
            net.sizes(),
            shape.numel()
        );
        Ok(BcPolicy { net, shape, norm })
    }

    pub fn net(&self) -> &FeedForwardNet {
        &self.net
    }

    pub fn shape(&self) -> WindowShape {
        self.shape
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn card(&self, env: &str, config_hash: String, train_steps: usize) -> ModelCard {
        ModelCard {
            model: ModelKind::Bc,
            env: env.into(),
            shape: self.shape,
            norm: self.norm.clone(),
            config_hash,
            train_steps,
        }
    }

    /// Raw windows for raw specs, one row per spec.
    pub fn generate(&self, specs: &[ConditionSpec]) -> Result<Matrix> {
        let normed: Vec<ConditionSpec> = specs
            .iter()
            .map(|s| s.validate(self.shape).map(|_| normalize_spec(s, &self.norm)))
            .collect::<Result<_>>()?;
        let conds = Matrix::from_fn(specs.len(), self.shape.state_dim(), |r, c| normed[r].start[c]);
        let mut out = self.net.forward(&conds)?;
        for (i, (n, raw)) in normed.iter().zip(specs).enumerate() {
            let row = out.row_mut(i);
            clamp_slice(row, self.shape, n);
            self.norm.denormalize(row);
            clamp_slice(row, self.shape, raw);
        }
        Ok(out)
    }
}

pub fn train_bc(dataset: &WindowDataset, cfg: &BcConfig) -> Result<(BcPolicy, Vec<f64>)> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let shape = dataset.shape();
    let mut sizes = vec![shape.state_dim()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(shape.numel());
    let net = FeedForwardNet::xavier(&sizes, &mut rng::stream(cfg.seed, 30))?;
    let mut policy = BcPolicy::from_parts(net, shape, dataset.norm().clone())?;
    let data = dataset.normalized_matrix();
    let mask = ConstraintMask::start_only(shape);
    let batch = cfg.batch_size.min(dataset.len());
    let mut sampler = EpochSampler::new(dataset.len(), rng::stream(cfg.seed, 31));
    let mut adam = AdamState::new(policy.net.param_count(), AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = sampler.next_batch(batch)?.to_vec();
        let y = Matrix::from_fn(batch, shape.numel(), |r, c| data.get(idx[r], c));
        let conds = Matrix::from_fn(batch, shape.state_dim(), |r, c| y.get(r, c));
        let (mut out, mut tape) = policy.net.forward_recorded(&conds)?;
        for i in 0..batch {
            out.row_mut(i)[..shape.state_dim()].copy_from_slice(conds.row(i));
        }
        let loss = weighted_loss(&out, &y, shape, cfg.lambda_s, cfg.lambda_a)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("bc loss at step {}", step + 1)));
        }
        let mut grad = weighted_loss_grad(&out, &y, shape, cfg.lambda_s, cfg.lambda_a)?;
        for i in 0..batch {
            mask.apply(grad.row_mut(i));
        }
        policy.net.backward(&mut tape, &grad)?;
        adam.step(policy.net.params_mut(), tape.gradients())?;
        losses.push(loss);
    }
    Ok((policy, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{collect_dataset, Env};

    #[test]
    fn deterministic_and_clamped() {
        let ds = collect_dataset(&Env::by_name("pointmaze2d").unwrap(), 4, 2).unwrap();
        let cfg = BcConfig { hidden: vec![16], steps: 20, batch_size: 32, ..Default::default() };
        let (p, losses) = train_bc(&ds, &cfg).unwrap();
        assert_eq!(losses.len(), 20);
        let spec = ConditionSpec::start(vec![1.5, 5.0, 0.0, 0.0]);
        let a = p.generate(&[spec.clone(), spec.clone()]).unwrap();
        assert_eq!(a.row(0), a.row(1));
        assert_eq!(&a.row(0)[..4], &[1.5, 5.0, 0.0, 0.0]);
        let (q, _) = train_bc(&ds, &cfg).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn regression_reduces_loss() {
        let ds = collect_dataset(&Env::by_name("pointmaze2d").unwrap(), 8, 2).unwrap();
        let cfg = BcConfig { hidden: vec![64], steps: 300, batch_size: 64, lr: 1e-3, ..Default::default() };
        let (_, losses) = train_bc(&ds, &cfg).unwrap();
        let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = losses[losses.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(tail < 0.7 * head, "{head} -> {tail}");
    }
}
