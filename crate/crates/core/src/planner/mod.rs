//! Receding-horizon control with best-of-K ranking, action chunking and
//! per-step cost instrumentation.

mod backend;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use backend::{ForwardCounter, PlanningBackend};

use crate::envs::{Env, EpisodeLog};
use crate::error::{ensure_shape, Error, Result};
use crate::numkit::Matrix;
use crate::rng::{self, Rng};
use crate::scorer::ReturnModel;
use crate::stats;
use crate::trajkit::{ConditionSpec, WindowShape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Candidates per plan call.
    pub k: usize,
    /// Actions executed open-loop per plan call.
    pub chunk: usize,
    pub ranked: bool,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig { k: 16, chunk: 1, ranked: true, seed: 0 }
    }
}

impl PlannerConfig {
    pub fn validate(&self, shape: WindowShape, has_scorer: bool) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if self.chunk == 0 || self.chunk > shape.horizon() {
            return Err(Error::Config(format!("chunk length {} outside 1..={}", self.chunk, shape.horizon())));
        }
        if self.ranked && !has_scorer {
            return Err(Error::Config("ranked planning needs a scorer checkpoint".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepMetrics {
    pub nfe: u64,
    pub bef: u64,
    pub pl_ms: f64,
    /// Plan plus executing the chunk; filled in by [`rollout`].
    pub e2e_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub selected_index: usize,
    pub candidates: Matrix,
    pub scores: Option<Vec<f32>>,
    /// First `chunk` actions of the selected window.
    pub executed: Vec<Vec<f32>>,
    pub metrics: StepMetrics,
}

impl PlanResult {
    pub fn selected(&self) -> &[f32] {
        self.candidates.row(self.selected_index)
    }
}

/// Index of the largest score; ties go to the lowest index and NaN never wins.
pub fn select_best(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] || scores[best].is_nan() {
            best = i;
        }
    }
    best
}

/// One plan call: `K` candidates from a single batched backend call, then
/// argmax under the scorer (ranked) or the first candidate.
pub fn plan(
    backend: &dyn PlanningBackend,
    spec: &ConditionSpec,
    cfg: &PlannerConfig,
    scorer: Option<&ReturnModel>,
    rng: &mut Rng,
) -> Result<PlanResult> {
    let shape = backend.shape();
    cfg.validate(shape, scorer.is_some())?;
    spec.validate(shape)?;
    let t0 = Instant::now();
    let mut counter = ForwardCounter::default();
    let candidates = backend.generate(spec, cfg.k, rng, &mut counter)?;
    let (selected_index, scores) = match (cfg.ranked, scorer) {
        (true, Some(s)) => {
            let cond = Matrix::from_vec(1, spec.start.len(), spec.start.clone())?;
            let scores = s.score_batch(&candidates, &cond)?;
            (select_best(&scores), Some(scores))
        }
        _ => (0, None),
    };
    let pl_ms = t0.elapsed().as_secs_f64() * 1e3;
    let row = candidates.row(selected_index);
    let executed = (0..cfg.chunk)
        .map(|t| row[shape.index(t, shape.state_dim())..shape.index(t + 1, 0)].to_vec())
        .collect();
    Ok(PlanResult {
        selected_index,
        candidates,
        scores,
        executed,
        metrics: StepMetrics { nfe: counter.nfe, bef: counter.bef, pl_ms, e2e_ms: 0.0 },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub episode: EpisodeLog,
    pub success: bool,
    pub steps: Vec<StepMetrics>,
}

impl RolloutResult {
    pub fn plan_calls(&self) -> usize {
        self.steps.len()
    }

    pub fn nfe_total(&self) -> u64 {
        self.steps.iter().map(|s| s.nfe).sum()
    }

    pub fn pl_p50_ms(&self) -> f64 {
        stats::median(&self.steps.iter().map(|s| s.pl_ms).collect::<Vec<_>>())
    }

    pub fn e2e_p50_ms(&self) -> f64 {
        stats::median(&self.steps.iter().map(|s| s.e2e_ms).collect::<Vec<_>>())
    }
}

/// Closed loop from `start`: every `chunk` env steps, plan from the current
/// state and execute the chunk open-loop. Stops at the goal or after `max_steps`.
pub fn rollout(
    env: &Env,
    backend: &dyn PlanningBackend,
    cfg: &PlannerConfig,
    scorer: Option<&ReturnModel>,
    start: Vec<f32>,
    max_steps: usize,
    rng: &mut Rng,
) -> Result<RolloutResult> {
    ensure_shape!(env.shape() == backend.shape(), "env shape {:?} vs backend {:?}", env.shape(), backend.shape());
    cfg.validate(env.shape(), scorer.is_some())?;
    let mut episode = EpisodeLog::new(start);
    let mut steps = Vec::new();
    while episode.len() < max_steps && !env.reached_goal(&episode.final_state) {
        let t0 = Instant::now();
        let spec = ConditionSpec::start(episode.final_state.clone());
        let mut result = plan(backend, &spec, cfg, scorer, rng)?;
        for a in &result.executed {
            if episode.len() >= max_steps {
                break;
            }
            let (next, r) = env.step(&episode.final_state, a);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("rollout state {next:?} after {} steps", episode.len())));
            }
            episode.push(a.clone(), next, r);
            if env.reached_goal(&episode.final_state) {
                break;
            }
        }
        result.metrics.e2e_ms = t0.elapsed().as_secs_f64() * 1e3;
        steps.push(result.metrics);
    }
    let success = env.success(&episode);
    Ok(RolloutResult { episode, success, steps })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub success: bool,
    #[serde(rename = "return")]
    pub ret: f64,
    pub steps: usize,
    pub nfe_total: u64,
    pub pl_p50_ms: f64,
    pub e2e_p50_ms: f64,
}

pub const METRICS_HEADER: [&str; 7] = ["episode", "success", "return", "steps", "nfe_total", "pl_p50_ms", "e2e_p50_ms"];

pub const RESET_STREAM: u64 = 1 << 32;
pub const PLAN_STREAM: u64 = 2 << 32;

/// `episodes` rollouts from env resets. Episode `e` draws its start and its
/// planning noise from streams keyed by `(cfg.seed, e)`, so results do not
/// depend on `threads`.
pub fn evaluate(
    env: &Env,
    backend: &dyn PlanningBackend,
    cfg: &PlannerConfig,
    scorer: Option<&ReturnModel>,
    episodes: usize,
    threads: usize,
) -> Result<Vec<RolloutResult>> {
    cfg.validate(env.shape(), scorer.is_some())?;
    let run = |e: usize| {
        let start = env.reset(&mut rng::stream(cfg.seed, RESET_STREAM + e as u64));
        let mut r = rng::stream(cfg.seed, PLAN_STREAM + e as u64);
        rollout(env, backend, cfg, scorer, start, env.max_rollout_steps(), &mut r)
    };
    let threads = threads.clamp(1, episodes.max(1));
    let mut slots: Vec<Option<Result<RolloutResult>>> = (0..episodes).map(|_| None).collect();
    std::thread::scope(|s| {
        for (w, chunk) in slots.chunks_mut(episodes.div_ceil(threads).max(1)).enumerate() {
            let run = &run;
            let base = w * episodes.div_ceil(threads).max(1);
            s.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run(base + j));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every episode ran")).collect()
}

pub fn episode_metrics(results: &[RolloutResult]) -> Vec<EpisodeMetrics> {
    results
        .iter()
        .enumerate()
        .map(|(e, r)| EpisodeMetrics {
            episode: e,
            success: r.success,
            ret: r.episode.total_reward(),
            steps: r.episode.len(),
            nfe_total: r.nfe_total(),
            pl_p50_ms: r.pl_p50_ms(),
            e2e_p50_ms: r.e2e_p50_ms(),
        })
        .collect()
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::State(format!("writing csv: {e}"))
}

pub fn write_metrics_csv<W: Write>(rows: &[EpisodeMetrics], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// Per-step `episode, t, s_0.., a_0..` rows for plotting. The terminal
/// state of each episode gets empty action fields.
pub fn write_trajectory_csv<W: Write>(results: &[RolloutResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = results.iter().find(|r| !r.episode.is_empty()) else {
        return w.flush().map_err(csv_err);
    };
    let mut header = vec!["episode".to_string(), "t".to_string()];
    header.extend((0..first.episode.final_state.len()).map(|i| format!("s{i}")));
    let da = first.episode.actions[0].len();
    header.extend((0..da).map(|i| format!("a{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (e, r) in results.iter().enumerate() {
        let ep = &r.episode;
        for t in 0..=ep.len() {
            let mut rec = vec![e.to_string(), t.to_string()];
            let s = if t < ep.len() { &ep.states[t] } else { &ep.final_state };
            rec.extend(s.iter().map(|v| v.to_string()));
            if t < ep.len() {
                rec.extend(ep.actions[t].iter().map(|v| v.to_string()));
            } else {
                rec.extend(std::iter::repeat_n(String::new(), da));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)
}

/// Mean over probes of the per-dimension std of the `k` first actions.
pub fn action_diversity(backend: &dyn PlanningBackend, probes: &[Vec<f32>], k: usize, seed: u64) -> Result<f64> {
    if k < 2 {
        return Err(Error::Config("action diversity needs K >= 2".into()));
    }
    let shape = backend.shape();
    let (ds, w) = (shape.state_dim(), shape.width());
    let mut r = rng::seeded(seed);
    let mut samples = Vec::with_capacity(probes.len());
    for p in probes {
        let out = backend.generate(&ConditionSpec::start(p.clone()), k, &mut r, &mut ForwardCounter::default())?;
        samples.push((0..k).map(|i| out.row(i)[ds..w].to_vec()).collect());
    }
    Ok(stats::action_diversity(&samples))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub nfe: u64,
    pub bef: u64,
    pub pl_p50_ms: f64,
    pub e2e_p50_ms: f64,
}

pub const BENCH_HEADER: [&str; 7] = ["method", "K", "T", "nfe", "bef", "pl_p50_ms", "e2e_p50_ms"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub ks: Vec<usize>,
    pub warmup: usize,
    pub calls: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { ks: vec![1, 16, 64], warmup: 20, calls: 200, seed: 0 }
    }
}

/// Unranked plan calls from `start` for every backend and K. PL times the
/// plan call; E2E adds one env step and bookkeeping. nfe and bef are per call.
pub fn latency_bench(env: &Env, backends: &[&dyn PlanningBackend], start: &[f32], cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    let spec = ConditionSpec::start(start.to_vec());
    for b in backends {
        ensure_shape!(b.shape() == env.shape(), "backend {} shape {:?} vs env {:?}", b.name(), b.shape(), env.shape());
        for &k in &cfg.ks {
            let pc = PlannerConfig { k, chunk: 1, ranked: false, seed: cfg.seed };
            let mut r = rng::seeded(cfg.seed);
            for _ in 0..cfg.warmup {
                plan(*b, &spec, &pc, None, &mut r)?;
            }
            let mut pl = Vec::with_capacity(cfg.calls);
            let mut e2e = Vec::with_capacity(cfg.calls);
            let mut metrics = StepMetrics::default();
            for _ in 0..cfg.calls {
                let t0 = Instant::now();
                let res = plan(*b, &spec, &pc, None, &mut r)?;
                let (next, _) = env.step(start, &res.executed[0]);
                std::hint::black_box(next);
                e2e.push(t0.elapsed().as_secs_f64() * 1e3);
                pl.push(res.metrics.pl_ms);
                metrics = res.metrics;
            }
            rows.push(BenchRow {
                method: b.name().into(),
                k,
                t: b.steps(),
                nfe: metrics.nfe,
                bef: metrics.bef,
                pl_p50_ms: stats::median(&pl),
                e2e_p50_ms: stats::median(&e2e),
            });
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(BENCH_HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}
