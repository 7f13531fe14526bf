//! Minimal DDPM trajectory diffuser with inpainting conditioning; the
//! T-sequential-step comparator for the one-step generator.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::model::{ModelCard, ModelKind};
use crate::numkit::{AdamConfig, AdamState, FeedForwardNet, Matrix};
use crate::planner::ForwardCounter;
use crate::rng::{self, Rng};
use crate::trainer::{normalize_spec, EpochSampler};
use crate::trajkit::{clamp_slice, ConditionSpec, ConstraintMask, NormStats, WindowDataset, WindowShape};

pub const TIME_EMBED_DIM: usize = 16;

/// `β_t` for `t = 1..=T` and the derived `α_t`, `ᾱ_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::Config(format!("betas must lie in (0, 1), got {betas:?}")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0f64;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        if alpha_bars.windows(2).any(|w| w[1] >= w[0]) || alpha_bars[0] >= 1.0 {
            return Err(Error::Config("cumulative alpha is not strictly decreasing".into()));
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    /// Linearly spaced `β_1 = start … β_T = end`.
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion needs T >= 1".into()));
        }
        let betas = (0..steps)
            .map(|i| if steps == 1 { start } else { start + (end - start) * i as f64 / (steps - 1) as f64 })
            .collect();
        Self::from_betas(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 { 1.0 } else { self.alpha_bars[t - 1] }
    }

    /// Reverse-step standard deviation, `σ_t² = β_t`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.beta(t).sqrt()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::Config(format!("timestep {t} outside 0..={}", self.steps())));
        }
        Ok(())
    }
}

/// Closed-form marginal `x_t = √ᾱ_t x₀ + √(1−ᾱ_t) ε`.
pub fn forward_noise(x0: &[f32], t: usize, schedule: &NoiseSchedule, noise: &[f32]) -> Result<Vec<f32>> {
    schedule.check_t(t)?;
    ensure_shape!(x0.len() == noise.len(), "x0 has {} values, noise {}", x0.len(), noise.len());
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(noise).map(|(&x, &e)| (a * x as f64 + b * e as f64) as f32).collect())
}

/// `t` one-step transitions `x_s = √(1−β_s) x_{s−1} + √β_s ε_s`.
pub fn forward_chain(x0: &[f32], t: usize, schedule: &NoiseSchedule, rng: &mut Rng) -> Result<Vec<f32>> {
    schedule.check_t(t)?;
    let mut x: Vec<f64> = x0.iter().map(|&v| v as f64).collect();
    for s in 1..=t {
        let (a, b) = (schedule.alpha(s).sqrt(), schedule.beta(s).sqrt());
        for v in x.iter_mut() {
            *v = a * *v + b * rng::normal(rng) as f64;
        }
    }
    Ok(x.into_iter().map(|v| v as f32).collect())
}

/// Sinusoidal features of the timestep.
pub fn time_embedding(t: usize) -> [f32; TIME_EMBED_DIM] {
    let mut out = [0.0f32; TIME_EMBED_DIM];
    let half = TIME_EMBED_DIM / 2;
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half as f64);
        let arg = t as f64 * freq;
        out[2 * i] = arg.sin() as f32;
        out[2 * i + 1] = arg.cos() as f32;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffuserConfig {
    /// Diffusion steps `T`.
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden: Vec<usize>,
    /// Training steps.
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Output-layer weight scale at init, so initial predictions sit near 0.
    pub init_output_scale: f32,
    pub seed: u64,
}

impl Default for DiffuserConfig {
    fn default() -> Self {
        DiffuserConfig {
            diffusion_steps: 20,
            beta_start: 1e-4,
            beta_end: 2e-2,
            hidden: vec![256, 256],
            steps: 5000,
            batch_size: 128,
            lr: 3e-4,
            init_output_scale: 1e-2,
            seed: 0,
        }
    }
}

impl DiffuserConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }
}

/// `ε_θ([x_t | emb(t) | c])` over normalized windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    net: FeedForwardNet,
    schedule: NoiseSchedule,
    shape: WindowShape,
    norm: NormStats,
    beta_range: (f64, f64),
}

impl Denoiser {
    pub fn new(shape: WindowShape, norm: NormStats, cfg: &DiffuserConfig, rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![shape.numel() + TIME_EMBED_DIM + shape.state_dim()];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(shape.numel());
        let mut net = FeedForwardNet::xavier(&sizes, rng)?;
        net.scale_output_layer(cfg.init_output_scale);
        Self::from_parts(net, cfg.schedule()?, shape, norm, (cfg.beta_start, cfg.beta_end))
    }

    pub fn from_parts(
        net: FeedForwardNet,
        schedule: NoiseSchedule,
        shape: WindowShape,
        norm: NormStats,
        beta_range: (f64, f64),
    ) -> Result<Self> {
        ensure_shape!(
            net.input_dim() == shape.numel() + TIME_EMBED_DIM + shape.state_dim() && net.output_dim() == shape.numel(),
            "denoiser net {:?} for {}-value windows",
            net.sizes(),
            shape.numel()
        );
        Ok(Denoiser { net, schedule, shape, norm, beta_range })
    }

    pub fn net(&self) -> &FeedForwardNet {
        &self.net
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn shape(&self) -> WindowShape {
        self.shape
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn card(&self, env: &str, config_hash: String, train_steps: usize) -> ModelCard {
        ModelCard {
            model: ModelKind::Diffuser {
                steps: self.schedule.steps(),
                beta_start: self.beta_range.0,
                beta_end: self.beta_range.1,
                time_embed_dim: TIME_EMBED_DIM,
            },
            env: env.into(),
            shape: self.shape,
            norm: self.norm.clone(),
            config_hash,
            train_steps,
        }
    }

    fn input(&self, xt: &Matrix, ts: &[usize], conds: &Matrix) -> Result<Matrix> {
        let emb = Matrix::from_fn(xt.rows(), TIME_EMBED_DIM, |r, c| time_embedding(ts[r])[c]);
        xt.hcat(&emb)?.hcat(conds)
    }

    /// Predicted noise for normalized `x_t` rows at timesteps `ts`.
    pub fn predict(&self, xt: &Matrix, ts: &[usize], conds: &Matrix) -> Result<Matrix> {
        self.net.forward(&self.input(xt, ts, conds)?)
    }

    /// `K` raw windows for one raw spec. Each reverse step is one batched
    /// network call: nfe += 1 and bef += K per step.
    pub fn sample(&self, spec: &ConditionSpec, k: usize, rng: &mut Rng, counter: &mut ForwardCounter) -> Result<Matrix> {
        spec.validate(self.shape)?;
        let normed = normalize_spec(spec, &self.norm);
        let mut x = Matrix::zeros(k, self.shape.numel());
        rng::fill_normal(rng, x.as_mut_slice());
        for i in 0..k {
            clamp_slice(x.row_mut(i), self.shape, &normed);
        }
        let conds = Matrix::from_fn(k, self.shape.state_dim(), |_, c| normed.start[c]);
        for t in (1..=self.schedule.steps()).rev() {
            let eps = self.predict(&x, &vec![t; k], &conds)?;
            counter.record(k);
            let alpha = self.schedule.alpha(t);
            let coef = self.schedule.beta(t) / (1.0 - self.schedule.alpha_bar(t)).sqrt();
            let inv_sqrt_alpha = 1.0 / alpha.sqrt();
            let sigma = if t > 1 { self.schedule.sigma(t) } else { 0.0 };
            for (xv, ev) in x.as_mut_slice().iter_mut().zip(eps.as_slice()) {
                let mean = (*xv as f64 - coef * *ev as f64) * inv_sqrt_alpha;
                let z = if sigma > 0.0 { rng::normal(rng) as f64 } else { 0.0 };
                *xv = (mean + sigma * z) as f32;
            }
            for i in 0..k {
                clamp_slice(x.row_mut(i), self.shape, &normed);
            }
        }
        for i in 0..k {
            let row = x.row_mut(i);
            self.norm.denormalize(row);
            clamp_slice(row, self.shape, spec);
        }
        Ok(x)
    }
}

/// Noisy inputs, uniform timesteps and the noise to predict for a batch of
/// normalized clean windows; clamped coordinates of `x_t` hold clean values.
fn noised_batch(x0: &Matrix, den: &Denoiser, mask: &ConstraintMask, rng: &mut Rng) -> Result<(Matrix, Vec<usize>, Matrix)> {
    let b = x0.rows();
    let mut eps = Matrix::zeros(b, x0.cols());
    rng::fill_normal(rng, eps.as_mut_slice());
    let ts: Vec<usize> = (0..b).map(|_| rng.random_range(1..=den.schedule.steps())).collect();
    let mut xt = Matrix::zeros(b, x0.cols());
    for i in 0..b {
        let noisy = forward_noise(x0.row(i), ts[i], &den.schedule, eps.row(i))?;
        let row = xt.row_mut(i);
        row.copy_from_slice(&noisy);
        for (k, &free) in mask.free_flags().iter().enumerate() {
            if !free {
                row[k] = x0.get(i, k);
            }
        }
    }
    Ok((xt, ts, eps))
}

/// Per-sample squared noise error over free coordinates, averaged over the batch.
fn masked_loss(pred: &Matrix, eps: &Matrix, mask: &ConstraintMask) -> (f64, Matrix) {
    let b = pred.rows();
    let mut grad = Matrix::zeros(b, pred.cols());
    let mut loss = 0.0f64;
    for i in 0..b {
        for (k, &free) in mask.free_flags().iter().enumerate() {
            if free {
                let d = pred.get(i, k) - eps.get(i, k);
                loss += d as f64 * d as f64;
                grad.set(i, k, 2.0 * d / b as f32);
            }
        }
    }
    (loss / b as f64, grad)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiffuserReport {
    pub losses: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Noise-prediction loss of `den` on `n` random (window, t, ε) draws from the dataset.
pub fn evaluate_loss(den: &Denoiser, dataset: &WindowDataset, n: usize, seed: u64) -> Result<f64> {
    let data = dataset.normalized_matrix();
    let mut r = rng::stream(seed, 23);
    let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..data.rows())).collect();
    let x0 = Matrix::from_fn(n, data.cols(), |i, c| data.get(idx[i], c));
    let mask = ConstraintMask::start_only(den.shape);
    let (xt, ts, eps) = noised_batch(&x0, den, &mask, &mut r)?;
    let conds = Matrix::from_fn(n, den.shape.state_dim(), |i, c| x0.get(i, c));
    let pred = den.predict(&xt, &ts, &conds)?;
    Ok(masked_loss(&pred, &eps, &mask).0)
}

pub fn train_denoiser(dataset: &WindowDataset, cfg: &DiffuserConfig) -> Result<(Denoiser, DiffuserReport)> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let shape = dataset.shape();
    let mut den = Denoiser::new(shape, dataset.norm().clone(), cfg, &mut rng::stream(cfg.seed, 20))?;
    let data = dataset.normalized_matrix();
    let mask = ConstraintMask::start_only(shape);
    let batch = cfg.batch_size.min(dataset.len());
    let mut sampler = EpochSampler::new(dataset.len(), rng::stream(cfg.seed, 21));
    let mut r = rng::stream(cfg.seed, 22);
    let mut adam = AdamState::new(den.net.param_count(), AdamConfig { lr: cfg.lr, ..Default::default() });
    let eval_n = 1000.min(dataset.len().max(1) * 4);
    let initial_loss = evaluate_loss(&den, dataset, eval_n, cfg.seed)?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = sampler.next_batch(batch)?.to_vec();
        let x0 = Matrix::from_fn(batch, data.cols(), |i, c| data.get(idx[i], c));
        let (xt, ts, eps) = noised_batch(&x0, &den, &mask, &mut r)?;
        let conds = Matrix::from_fn(batch, shape.state_dim(), |i, c| x0.get(i, c));
        let (pred, mut tape) = den.net.forward_recorded(&den.input(&xt, &ts, &conds)?)?;
        let (loss, grad) = masked_loss(&pred, &eps, &mask);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("denoiser loss at step {}", step + 1)));
        }
        den.net.backward(&mut tape, &grad)?;
        adam.step(den.net.params_mut(), tape.gradients())?;
        losses.push(loss);
    }
    let final_loss = evaluate_loss(&den, dataset, eval_n, cfg.seed)?;
    Ok((den, DiffuserReport { losses, initial_loss, final_loss }))
}
