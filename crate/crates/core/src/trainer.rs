//! One-step generator training against the stop-gradient drifted target.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::drift::{drift_field, DriftBatch, DriftConfig};
use crate::error::{ensure_shape, Error, Result};
use crate::model::{config_hash, ModelCard, ModelKind};
use crate::numkit::{AdamConfig, AdamState, FeedForwardNet, Matrix};
use crate::rng::{self, Rng};
use crate::stats;
use crate::trajkit::{clamp_slice, ConditionSpec, ConstraintMask, NormStats, TrajectoryWindow, WindowDataset, WindowShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to 0 over the run.
    Cosine,
}

impl LrSchedule {
    pub fn lr(self, base: f32, step: usize, total: usize) -> f32 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                (base as f64 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())) as f32
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub noise_dim: usize,
    pub lambda_s: f32,
    pub lambda_a: f32,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub seed: u64,
    pub drift: DriftConfig,
    pub adam: AdamConfig,
    pub lr_schedule: LrSchedule,
    /// Steps between action-diversity probes and intermediate checkpoints; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            noise_dim: 64,
            lambda_s: 1.0,
            lambda_a: 10.0,
            hidden: vec![256, 256],
            steps: 5000,
            seed: 0,
            drift: DriftConfig::default(),
            adam: AdamConfig::default(),
            lr_schedule: LrSchedule::Constant,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    /// Defaults tuned per environment. PointMaze2D uses a small noise
    /// dimension and a lower, cosine-decayed learning rate.
    pub fn preset(env: &str) -> Self {
        match env {
            "pointmaze2d" => TrainConfig {
                noise_dim: 8,
                steps: 20_000,
                adam: AdamConfig { lr: 1e-4, ..AdamConfig::default() },
                lr_schedule: LrSchedule::Cosine,
                eval_every: 2000,
                ..TrainConfig::default()
            },
            _ => TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.drift.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.batch_size == 1 {
            log::warn!("batch size 1 leaves no negatives for repulsion");
        }
        if self.noise_dim == 0 {
            return Err(Error::Config("noise dimension must be >= 1".into()));
        }
        if !(self.lambda_s >= 0.0 && self.lambda_a >= 0.0) || (self.lambda_s == 0.0 && self.lambda_a == 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be >= 0 and not both 0, got ({}, {})",
                self.lambda_s, self.lambda_a
            )));
        }
        if !(self.adam.lr.is_finite() && self.adam.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {}", self.adam.lr)));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Raw-unit spec mapped to normalized units.
pub fn normalize_spec(spec: &ConditionSpec, norm: &NormStats) -> ConditionSpec {
    let mut out = ConditionSpec::start(norm.normalize_state(&spec.start));
    if let Some(g) = &spec.goal {
        let mut g = g.clone();
        for (v, &i) in g.values.iter_mut().zip(&g.indices) {
            *v = (*v - norm.mean[i]) / norm.std[i];
        }
        out.goal = Some(g);
    }
    out
}

/// `g_ψ(z, c)` followed by the clamp. The network maps `[z | c]` (c normalized)
/// to a flattened normalized window.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorPolicy {
    net: FeedForwardNet,
    noise_dim: usize,
    shape: WindowShape,
    norm: NormStats,
}

impl GeneratorPolicy {
    pub fn new(shape: WindowShape, norm: NormStats, noise_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![noise_dim + shape.state_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(shape.numel());
        Self::from_parts(FeedForwardNet::xavier(&sizes, rng)?, noise_dim, shape, norm)
    }

    pub fn from_parts(net: FeedForwardNet, noise_dim: usize, shape: WindowShape, norm: NormStats) -> Result<Self> {
        ensure_shape!(
            net.input_dim() == noise_dim + shape.state_dim() && net.output_dim() == shape.numel(),
            "generator net {:?} does not map noise {noise_dim} + state {} to a {}-value window",
            net.sizes(),
            shape.state_dim(),
            shape.numel()
        );
        ensure_shape!(norm.width() == shape.width(), "norm stats width {}", norm.width());
        Ok(GeneratorPolicy { net, noise_dim, shape, norm })
    }

    pub fn net(&self) -> &FeedForwardNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut FeedForwardNet {
        &mut self.net
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn shape(&self) -> WindowShape {
        self.shape
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn card(&self, env: &str, config_hash: String, train_steps: usize) -> ModelCard {
        ModelCard {
            model: ModelKind::Kdp { noise_dim: self.noise_dim },
            env: env.into(),
            shape: self.shape,
            norm: self.norm.clone(),
            config_hash,
            train_steps,
        }
    }

    fn input(&self, conds: &Matrix, noise: &Matrix) -> Result<Matrix> {
        ensure_shape!(
            conds.cols() == self.shape.state_dim() && noise.cols() == self.noise_dim && conds.rows() == noise.rows(),
            "conditions {}x{} / noise {}x{}",
            conds.rows(),
            conds.cols(),
            noise.rows(),
            noise.cols()
        );
        noise.hcat(conds)
    }

    /// Normalized-space generation for normalized start states (`B × d_s`).
    pub fn generate_normalized(&self, conds: &Matrix, noise: &Matrix) -> Result<Matrix> {
        let mut out = self.net.forward(&self.input(conds, noise)?)?;
        for i in 0..out.rows() {
            out.row_mut(i)[..self.shape.state_dim()].copy_from_slice(conds.row(i));
        }
        Ok(out)
    }

    /// Raw-unit windows for raw specs (one candidate per spec), each clamped
    /// in normalized space and again after denormalizing.
    pub fn generate(&self, specs: &[ConditionSpec], noise: &Matrix) -> Result<Matrix> {
        let normed: Vec<ConditionSpec> = specs
            .iter()
            .map(|s| s.validate(self.shape).map(|_| normalize_spec(s, &self.norm)))
            .collect::<Result<_>>()?;
        let conds = Matrix::from_fn(specs.len(), self.shape.state_dim(), |r, c| normed[r].start[c]);
        let mut out = self.net.forward(&self.input(&conds, noise)?)?;
        for (i, (n, raw)) in normed.iter().zip(specs).enumerate() {
            let row = out.row_mut(i);
            clamp_slice(row, self.shape, n);
            self.norm.denormalize(row);
            clamp_slice(row, self.shape, raw);
        }
        Ok(out)
    }
}

/// Clamped raw windows for raw start states `conditions`, noise drawn from `seed`.
pub fn sample_generator(policy: &GeneratorPolicy, conditions: &[Vec<f32>], seed: u64) -> Result<Vec<TrajectoryWindow>> {
    let specs: Vec<ConditionSpec> = conditions.iter().map(|c| ConditionSpec::start(c.clone())).collect();
    let mut noise = Matrix::zeros(specs.len(), policy.noise_dim());
    rng::fill_normal(&mut rng::seeded(seed), noise.as_mut_slice());
    let out = policy.generate(&specs, &noise)?;
    (0..out.rows())
        .map(|i| TrajectoryWindow::from_values(policy.shape(), out.row(i).to_vec()))
        .collect()
}

/// `clamp(sg(x̂ + V))`, row by row, for per-row specs (or one shared spec).
pub fn drifted_target(gen: &Matrix, v: &Matrix, shape: WindowShape, specs: &[ConditionSpec]) -> Result<Matrix> {
    ensure_shape!(
        gen.rows() == v.rows() && gen.cols() == v.cols() && gen.cols() == shape.numel(),
        "generated {}x{} vs drift {}x{}",
        gen.rows(),
        gen.cols(),
        v.rows(),
        v.cols()
    );
    ensure_shape!(specs.len() == 1 || specs.len() == gen.rows(), "{} specs for {} rows", specs.len(), gen.rows());
    for s in specs {
        s.validate(shape)?;
    }
    let mut target = gen.clone();
    target.add_assign(v)?;
    for i in 0..target.rows() {
        clamp_slice(target.row_mut(i), shape, &specs[if specs.len() == 1 { 0 } else { i }]);
    }
    Ok(target)
}

fn check_pair(gen: &Matrix, target: &Matrix, shape: WindowShape) -> Result<()> {
    ensure_shape!(
        gen.rows() == target.rows() && gen.cols() == target.cols() && gen.cols() == shape.numel() && gen.rows() > 0,
        "loss between {}x{} and {}x{} for {}-value windows",
        gen.rows(),
        gen.cols(),
        target.rows(),
        target.cols(),
        shape.numel()
    );
    Ok(())
}

/// `mean_i Σ_t λ_s‖Δs_t‖² + λ_a‖Δa_t‖²` with `Δ = gen − target`.
pub fn weighted_loss(gen: &Matrix, target: &Matrix, shape: WindowShape, lambda_s: f32, lambda_a: f32) -> Result<f64> {
    check_pair(gen, target, shape)?;
    let d = shape.width();
    let ds = shape.state_dim();
    let mut total = 0.0f64;
    for (k, (g, t)) in gen.as_slice().iter().zip(target.as_slice()).enumerate() {
        let diff = *g as f64 - *t as f64;
        let w = if k % d < ds { lambda_s } else { lambda_a } as f64;
        total += w * diff * diff;
    }
    Ok(total / gen.rows() as f64)
}

/// Gradient of [`weighted_loss`] with respect to `gen`, target held fixed.
pub fn weighted_loss_grad(gen: &Matrix, target: &Matrix, shape: WindowShape, lambda_s: f32, lambda_a: f32) -> Result<Matrix> {
    check_pair(gen, target, shape)?;
    let d = shape.width();
    let ds = shape.state_dim();
    let scale = 2.0 / gen.rows() as f32;
    let mut g = gen.sub(target)?;
    for (k, v) in g.as_mut_slice().iter_mut().enumerate() {
        *v *= scale * if k % d < ds { lambda_s } else { lambda_a };
    }
    Ok(g)
}

/// Shuffled pass over the dataset; batches never repeat an index within an
/// epoch and the remainder that does not fill a batch is dropped.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl EpochSampler {
    pub fn new(n: usize, rng: Rng) -> Self {
        EpochSampler { order: (0..n).collect(), pos: n, rng }
    }

    pub fn next_batch(&mut self, b: usize) -> Result<&[usize]> {
        if b > self.order.len() {
            return Err(Error::Config(format!("batch size {b} exceeds dataset size {}", self.order.len())));
        }
        if self.pos + b > self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let s = &self.order[self.pos..self.pos + b];
        self.pos += b;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainRow {
    pub step: usize,
    pub loss: f64,
    pub drift_rms: f32,
    pub wplus_entropy: f32,
    pub action_div: Option<f32>,
    pub ms_per_step: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<TrainRow>,
    pub config_hash: String,
}

pub const REPORT_HEADER: [&str; 6] = ["step", "loss", "drift_rms", "wplus_entropy", "action_div", "ms_per_step"];

impl TrainReport {
    /// Mean loss over rows `range`.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let v: Vec<f64> = self.rows[range].iter().map(|r| r.loss).collect();
        stats::mean(&v)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::State(format!("writing train report: {e}"));
        w.write_record(REPORT_HEADER).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.loss.to_string(),
                r.drift_rms.to_string(),
                r.wplus_entropy.to_string(),
                r.action_div.map(|v| v.to_string()).unwrap_or_default(),
                format!("{:.4}", r.ms_per_step),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::State(format!("writing train report: {e}")))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Seeded stream ids.
const STREAM_INIT: u64 = 0;
const STREAM_SAMPLER: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_PROBE: u64 = 3;
const PROBES: usize = 8;
const PROBE_SAMPLES: usize = 32;

/// Stateful training loop. Each [`step`](Self::step) is one iteration of the
/// keyed drifting objective.
pub struct Trainer {
    data: Matrix,
    shape: WindowShape,
    cfg: TrainConfig,
    policy: GeneratorPolicy,
    adam: AdamState,
    sampler: EpochSampler,
    noise_rng: Rng,
    probes: Vec<Vec<f32>>,
    mask: ConstraintMask,
    step: usize,
    last_drift: Option<DriftBatch>,
}

impl Trainer {
    pub fn new(dataset: &WindowDataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let shape = dataset.shape();
        let policy = GeneratorPolicy::new(
            shape,
            dataset.norm().clone(),
            cfg.noise_dim,
            &cfg.hidden,
            &mut rng::stream(cfg.seed, STREAM_INIT),
        )?;
        Self::with_policy(dataset, cfg, policy)
    }

    /// Starts from an existing policy (e.g. a tiny hand-built network in tests).
    pub fn with_policy(dataset: &WindowDataset, cfg: TrainConfig, policy: GeneratorPolicy) -> Result<Self> {
        cfg.validate()?;
        let shape = dataset.shape();
        ensure_shape!(policy.shape() == shape, "policy shape {:?} vs dataset {:?}", policy.shape(), shape);
        if cfg.batch_size > dataset.len() {
            return Err(Error::Config(format!(
                "batch size {} exceeds dataset size {}",
                cfg.batch_size,
                dataset.len()
            )));
        }
        let data = dataset.normalized_matrix();
        let stride = (dataset.len() / PROBES).max(1);
        let probes = (0..PROBES.min(dataset.len()))
            .map(|p| data.row(p * stride)[..shape.state_dim()].to_vec())
            .collect();
        let adam = AdamState::new(policy.net().param_count(), cfg.adam);
        Ok(Trainer {
            sampler: EpochSampler::new(dataset.len(), rng::stream(cfg.seed, STREAM_SAMPLER)),
            noise_rng: rng::stream(cfg.seed, STREAM_NOISE),
            mask: ConstraintMask::start_only(shape),
            data,
            shape,
            cfg,
            policy,
            adam,
            probes,
            step: 0,
            last_drift: None,
        })
    }

    pub fn policy(&self) -> &GeneratorPolicy {
        &self.policy
    }

    pub fn into_policy(self) -> GeneratorPolicy {
        self.policy
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn last_drift(&self) -> Option<&DriftBatch> {
        self.last_drift.as_ref()
    }

    /// Generated batch, drift and target of one step, without a parameter update.
    /// Conditions are the keys of the sampled data windows.
    pub fn step_tensors(&mut self, idx: &[usize]) -> Result<StepTensors> {
        let b = idx.len();
        let ds = self.shape.state_dim();
        let y = Matrix::from_fn(b, self.shape.numel(), |r, c| self.data.get(idx[r], c));
        let conds = Matrix::from_fn(b, ds, |r, c| y.get(r, c));
        let mut noise = Matrix::zeros(b, self.cfg.noise_dim);
        rng::fill_normal(&mut self.noise_rng, noise.as_mut_slice());
        let input = noise.hcat(&conds)?;
        let (mut gen, tape) = self.policy.net().forward_recorded(&input)?;
        for i in 0..b {
            gen.row_mut(i)[..ds].copy_from_slice(conds.row(i));
        }
        let drift = drift_field(&gen, &y, self.shape, std::slice::from_ref(&self.mask), &self.cfg.drift)?;
        let specs: Vec<ConditionSpec> = (0..b).map(|i| ConditionSpec::start(conds.row(i).to_vec())).collect();
        let target = drifted_target(&gen, &drift.v, self.shape, &specs)?;
        Ok(StepTensors { data: y, input, gen, target, drift, tape })
    }

    /// Loss of `t` against its frozen target; the parameter gradient is
    /// accumulated into `t.tape`. Clamped coordinates get zero gradient.
    pub fn loss_and_gradient(&self, t: &mut StepTensors) -> Result<f64> {
        let (ls, la) = (self.cfg.lambda_s, self.cfg.lambda_a);
        let loss = weighted_loss(&t.gen, &t.target, self.shape, ls, la)?;
        if !loss.is_finite() {
            return Ok(loss);
        }
        let mut grad = weighted_loss_grad(&t.gen, &t.target, self.shape, ls, la)?;
        for i in 0..grad.rows() {
            self.mask.apply(grad.row_mut(i));
        }
        self.policy.net().backward(&mut t.tape, &grad)?;
        Ok(loss)
    }

    pub fn step(&mut self) -> Result<TrainRow> {
        let t0 = Instant::now();
        let idx = self.sampler.next_batch(self.cfg.batch_size)?.to_vec();
        let mut tensors = self.step_tensors(&idx)?;
        let loss = self.loss_and_gradient(&mut tensors)?;
        let StepTensors { drift, tape, .. } = tensors;
        let diag = |what: &str| {
            let rms: Vec<f64> = drift.raw_rms.iter().map(|&r| r as f64).collect();
            format!(
                "{what} at step {}: loss {loss}, drift raw rms mean {} max {}, batch indices {:?}",
                self.step + 1,
                stats::mean(&rms),
                rms.iter().cloned().fold(f64::NAN, f64::max),
                &idx[..idx.len().min(16)]
            )
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite(diag("loss")));
        }
        let lr = self.cfg.lr_schedule.lr(self.cfg.adam.lr, self.step, self.cfg.steps);
        self.adam.set_lr(lr);
        self.adam
            .step(self.policy.net_mut().params_mut(), tape.gradients())
            .map_err(|e| Error::NonFinite(format!("{e}; {}", diag("update"))))?;
        self.step += 1;
        let action_div = if self.cfg.eval_every > 0 && (self.step.is_multiple_of(self.cfg.eval_every) || self.step == self.cfg.steps) {
            Some(self.probe_diversity()? as f32)
        } else {
            None
        };
        let row = TrainRow {
            step: self.step,
            loss,
            drift_rms: drift.mean_raw_rms(),
            wplus_entropy: drift.wplus_entropy(),
            action_div,
            ms_per_step: t0.elapsed().as_secs_f64() * 1e3,
        };
        self.last_drift = Some(drift);
        Ok(row)
    }

    /// Raw-unit action diversity at the fixed probe conditions.
    pub fn probe_diversity(&self) -> Result<f64> {
        let mut r = rng::stream(self.cfg.seed, STREAM_PROBE);
        let ds = self.shape.state_dim();
        let mut samples = Vec::with_capacity(self.probes.len());
        for c in &self.probes {
            let conds = Matrix::from_fn(PROBE_SAMPLES, ds, |_, k| c[k]);
            let mut noise = Matrix::zeros(PROBE_SAMPLES, self.cfg.noise_dim);
            rng::fill_normal(&mut r, noise.as_mut_slice());
            let out = self.policy.generate_normalized(&conds, &noise)?;
            samples.push(
                (0..PROBE_SAMPLES)
                    .map(|i| self.policy.norm().denormalize_action(&out.row(i)[ds..self.shape.width()], ds))
                    .collect(),
            );
        }
        Ok(stats::action_diversity(&samples))
    }
}

/// Intermediates of one training step.
pub struct StepTensors {
    pub data: Matrix,
    /// Network input `[z | c]`, c normalized.
    pub input: Matrix,
    pub gen: Matrix,
    pub target: Matrix,
    pub drift: DriftBatch,
    pub tape: crate::numkit::GradientTape,
}

/// Runs `cfg.steps` steps. `on_eval` sees the policy every `eval_every`
/// steps (for intermediate checkpoints).
pub fn train_with(
    dataset: &WindowDataset,
    cfg: TrainConfig,
    mut on_eval: impl FnMut(&GeneratorPolicy, usize) -> Result<()>,
) -> Result<(GeneratorPolicy, TrainReport)> {
    let hash = cfg.hash();
    let mut trainer = Trainer::new(dataset, cfg)?;
    let mut report = TrainReport { rows: Vec::with_capacity(trainer.cfg.steps), config_hash: hash };
    let every = trainer.cfg.eval_every;
    for _ in 0..trainer.cfg.steps {
        let row = trainer.step()?;
        if every > 0 && row.step % every == 0 && row.step < trainer.cfg.steps {
            on_eval(trainer.policy(), row.step)?;
        }
        report.rows.push(row);
    }
    Ok((trainer.into_policy(), report))
}

pub fn train(dataset: &WindowDataset, cfg: TrainConfig) -> Result<(GeneratorPolicy, TrainReport)> {
    train_with(dataset, cfg, |_, _| Ok(()))
}
