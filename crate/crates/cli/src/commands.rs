use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;
use serde_json::json;

use kdp_core::bc::{train_bc, BcConfig, BcPolicy};
use kdp_core::diffuser::{train_denoiser, Denoiser, DiffuserConfig, NoiseSchedule};
use kdp_core::drift::Ablation;
use kdp_core::envs::{collect_dataset, Env};
use kdp_core::model::{config_hash, load_model, save_model, ModelCard, ModelKind};
use kdp_core::planner::{
    self, episode_metrics, evaluate, latency_bench, write_bench_csv, write_metrics_csv, write_trajectory_csv, BenchConfig,
    PlannerConfig, PlanningBackend,
};
use kdp_core::rng;
use kdp_core::scorer::{train_scorer, ReturnModel, ScorerConfig};
use kdp_core::stats;
use kdp_core::trainer::{GeneratorPolicy, TrainConfig, TrainReport, Trainer};
use kdp_core::trajkit::WindowDataset;

use crate::overrides::layer;
use crate::svg;
use crate::{AblateArgs, BenchArgs, Cli, Command, EvalArgs, GenDataArgs, OverrideArgs, TrainArgs, UsageError, Variant};

pub fn run(cli: Cli) -> Result<()> {
    let out = cli.out_dir;
    match cli.command {
        Command::GenData(a) => gen_data(&out, a),
        Command::Train(a) => train(&out, a),
        Command::Eval(a) => eval(&out, a),
        Command::Bench(a) => bench(&out, a),
        Command::Ablate(a) => ablate(&out, a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| kdp_core::Error::io(dir, e).into())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| kdp_core::Error::io(path, e).into())
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    let f = fs::File::create(path).map_err(|e| kdp_core::Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// Writes `{ "run": .., "sha256": .. }` to `<dir>/<name>.config.json`.
fn write_run_config(dir: &Path, name: &str, run: serde_json::Value) -> Result<String> {
    let hash = config_hash(&run);
    let text = serde_json::to_string_pretty(&json!({ "run": run, "sha256": hash }))? + "\n";
    write_text(&dir.join(format!("{name}.config.json")), &text)?;
    Ok(hash)
}

/// JSON value printed the way the struct serializes (f32 fields stay short).
fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::from_str(&serde_json::to_string(v)?)?)
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(kdp_core::Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found"))).into());
    }
    Ok(())
}

fn env_for(name: &str, config: Option<&Path>) -> Result<Env> {
    Ok(match config {
        Some(p) => Env::from_config_file(name, p)?,
        None => Env::by_name(name)?,
    })
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn gen_data(out: &Path, a: GenDataArgs) -> Result<()> {
    let env = env_for(&a.env, a.env_config.as_deref())?;
    if a.episodes == 0 {
        return Err(UsageError("--episodes must be >= 1".into()).into());
    }
    let path = a.out.clone().unwrap_or_else(|| out.join(format!("{}.kdpw", env.name())));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    create_dir(&dir)?;
    let ds = collect_dataset(&env, a.episodes, a.seed)?;
    ds.save(&path)?;
    write_run_config(
        &dir,
        "gen-data",
        json!({
            "command": "gen-data",
            "env": env.name(),
            "env_config": env.config_toml(),
            "episodes": a.episodes,
            "seed": a.seed,
            "out": path_str(&path),
        }),
    )?;
    let m = ds.manifest();
    println!(
        "dataset {} windows={} episodes={} scripted_success_rate={:.3} classes={:?}",
        path.display(),
        ds.len(),
        m.episodes,
        m.scripted_success_rate,
        m.class_proportions
    );
    Ok(())
}

fn layered<T: Serialize + serde::de::DeserializeOwned>(base: T, o: &OverrideArgs) -> Result<T> {
    let file = match &o.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| kdp_core::Error::io(p, e))?),
        None => None,
    };
    let mut sets = o.sets.clone();
    if let Some(s) = o.steps {
        sets.push(format!("steps={s}"));
    }
    if let Some(s) = o.seed {
        sets.push(format!("seed={s}"));
    }
    Ok(layer(&base, file.as_deref(), &sets)?)
}

fn loss_svg(path: &Path, title: &str, losses: &[f64]) -> Result<()> {
    let xs: Vec<f64> = (1..=losses.len()).map(|s| s as f64).collect();
    write_text(path, &svg::line_plot(title, &xs, &[("loss", losses.to_vec())]))
}

fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut f = create_file(path)?;
    writeln!(f, "step,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(f, "{},{}", i + 1, l)?;
    }
    f.flush()?;
    Ok(())
}

fn train(out: &Path, a: TrainArgs) -> Result<()> {
    require_file(&a.dataset, "dataset")?;
    if a.variant != Variant::Kdp && (a.ablate.is_some() || a.dump_drift) {
        return Err(UsageError("--ablate and --dump-drift apply to `train kdp` only".into()).into());
    }
    let ds = WindowDataset::load(&a.dataset)?;
    create_dir(out)?;
    let env = ds.manifest().env.clone();
    let name = a.variant.name();
    let run = |config: serde_json::Value| {
        json!({
            "command": "train",
            "variant": name,
            "dataset": path_str(&a.dataset),
            "dataset_env": env,
            "ablate": a.ablate,
            "config": config,
        })
    };
    let ckpt = out.join(format!("{name}.kdpn"));
    match a.variant {
        Variant::Kdp => {
            let mut cfg = layered(TrainConfig::preset(&env), &a.overrides)?;
            if let Some(ab) = &a.ablate {
                Ablation::parse(ab)?.apply(&mut cfg.drift);
            }
            cfg.validate()?;
            write_run_config(out, "train-kdp", run(to_json(&cfg)?))?;
            train_kdp(out, &ds, cfg, &a)?;
        }
        Variant::Diffuser => {
            let cfg = layered(DiffuserConfig::default(), &a.overrides)?;
            let hash = write_run_config(out, "train-diffuser", run(to_json(&cfg)?))?;
            let (den, rep) = train_denoiser(&ds, &cfg)?;
            save_model(den.net(), &den.card(&env, hash, cfg.steps), &ckpt)?;
            write_loss_csv(&out.join("diffuser_report.csv"), &rep.losses)?;
            if a.svg {
                loss_svg(&out.join("diffuser_loss.svg"), "diffuser loss", &rep.losses)?;
            }
            println!("diffuser {} initial_loss={:.4} final_loss={:.4}", ckpt.display(), rep.initial_loss, rep.final_loss);
        }
        Variant::Bc => {
            let cfg = layered(BcConfig::default(), &a.overrides)?;
            let hash = write_run_config(out, "train-bc", run(to_json(&cfg)?))?;
            let (p, losses) = train_bc(&ds, &cfg)?;
            save_model(p.net(), &p.card(&env, hash, cfg.steps), &ckpt)?;
            write_loss_csv(&out.join("bc_report.csv"), &losses)?;
            if a.svg {
                loss_svg(&out.join("bc_loss.svg"), "bc loss", &losses)?;
            }
            println!("bc {} final_loss={:.4}", ckpt.display(), losses.last().copied().unwrap_or(f64::NAN));
        }
        Variant::Scorer => {
            let cfg = layered(ScorerConfig::default(), &a.overrides)?;
            let hash = write_run_config(out, "train-scorer", run(to_json(&cfg)?))?;
            let (m, rep) = train_scorer(&ds, &cfg)?;
            save_model(m.net(), &m.card(&env, hash, cfg.steps), &ckpt)?;
            write_loss_csv(&out.join("scorer_report.csv"), &rep.losses)?;
            let summary = json!({
                "holdout_size": rep.holdout_size,
                "holdout_rel_err": rep.holdout_rel_err,
                "holdout_spearman": rep.holdout_spearman,
            });
            write_text(&out.join("scorer_holdout.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
            if a.svg {
                loss_svg(&out.join("scorer_loss.svg"), "scorer loss", &rep.losses)?;
            }
            println!(
                "scorer {} holdout_rel_err={:.4} holdout_spearman={:.4}",
                ckpt.display(),
                rep.holdout_rel_err,
                rep.holdout_spearman
            );
        }
    }
    Ok(())
}

fn save_policy(p: &GeneratorPolicy, env: &str, cfg: &TrainConfig, steps: usize, path: &Path) -> Result<()> {
    Ok(save_model(p.net(), &p.card(env, cfg.hash(), steps), path)?)
}

/// KDP training with checkpoints at the eval cadence. A numerical abort
/// leaves the last good checkpoint and writes `kdp_abort.txt`.
fn train_kdp(out: &Path, ds: &WindowDataset, cfg: TrainConfig, a: &TrainArgs) -> Result<()> {
    let env = ds.manifest().env.clone();
    let mut trainer = Trainer::new(ds, cfg.clone())?;
    let mut report = TrainReport { rows: Vec::with_capacity(cfg.steps), config_hash: cfg.hash() };
    for _ in 0..cfg.steps {
        match trainer.step() {
            Ok(row) => {
                if let Some(d) = row.action_div {
                    log::info!("step {} loss {:.4} action_div {:.4}", row.step, row.loss, d);
                }
                if cfg.eval_every > 0 && row.step % cfg.eval_every == 0 && row.step < cfg.steps {
                    save_policy(trainer.policy(), &env, &cfg, row.step, &out.join(format!("kdp_step{:06}.kdpn", row.step)))?;
                }
                report.rows.push(row);
            }
            Err(e) => {
                report.save_csv(&out.join("kdp_report.csv"))?;
                let mut text = format!("training aborted after {} steps\n{e}\n", trainer.steps_done());
                if let Some(d) = trainer.last_drift() {
                    text += &format!(
                        "last good step: drift raw rms mean {}, wplus entropy {}, degenerate repulsion {}\n",
                        d.mean_raw_rms(),
                        d.wplus_entropy(),
                        d.degenerate_repulsion
                    );
                }
                write_text(&out.join("kdp_abort.txt"), &text)?;
                return Err(e.into());
            }
        }
    }
    let ckpt = out.join("kdp.kdpn");
    save_policy(trainer.policy(), &env, &cfg, cfg.steps, &ckpt)?;
    report.save_csv(&out.join("kdp_report.csv"))?;
    if a.svg {
        let losses: Vec<f64> = report.rows.iter().map(|r| r.loss).collect();
        loss_svg(&out.join("kdp_loss.svg"), "kdp loss", &losses)?;
    }
    if a.dump_drift {
        match trainer.last_drift() {
            Some(d) => d.write_csv(&trainer.config().drift.temperatures, create_file(&out.join("kdp_drift.csv"))?)?,
            None => log::warn!("no training step ran; nothing to dump"),
        }
    }
    let n = report.rows.len();
    let tail = if n > 0 { report.mean_loss(n.saturating_sub(100)..n) } else { f64::NAN };
    println!("kdp {} steps={} final_loss={:.4} config_hash={}", ckpt.display(), n, tail, cfg.hash());
    Ok(())
}

/// A loaded generating model.
pub enum Backend {
    Kdp(GeneratorPolicy),
    Diffuser(Denoiser),
    Bc(BcPolicy),
}

impl Backend {
    pub fn as_dyn(&self) -> &dyn PlanningBackend {
        match self {
            Backend::Kdp(p) => p,
            Backend::Diffuser(d) => d,
            Backend::Bc(b) => b,
        }
    }
}

pub fn load_backend(path: &Path) -> Result<(Backend, ModelCard)> {
    require_file(path, "checkpoint")?;
    let (net, card) = load_model(path)?;
    let (shape, norm) = (card.shape, card.norm.clone());
    let b = match card.model {
        ModelKind::Kdp { noise_dim } => Backend::Kdp(GeneratorPolicy::from_parts(net, noise_dim, shape, norm)?),
        ModelKind::Diffuser { steps, beta_start, beta_end, .. } => {
            let sched = NoiseSchedule::linear(steps, beta_start, beta_end)?;
            Backend::Diffuser(Denoiser::from_parts(net, sched, shape, norm, (beta_start, beta_end))?)
        }
        ModelKind::Bc => Backend::Bc(BcPolicy::from_parts(net, shape, norm)?),
        ModelKind::Scorer { .. } => {
            return Err(UsageError(format!("{} is a scorer, not a planning checkpoint", path.display())).into())
        }
    };
    Ok((b, card))
}

pub fn load_scorer(path: &Path) -> Result<ReturnModel> {
    require_file(path, "scorer checkpoint")?;
    let (net, card) = load_model(path)?;
    match card.model {
        ModelKind::Scorer { gamma, label_scale } => Ok(ReturnModel::from_parts(net, gamma, label_scale, card.shape, card.norm)?),
        other => Err(UsageError(format!("{} holds a {} model, not a scorer", path.display(), other.name())).into()),
    }
}

fn threads(n: Option<usize>) -> usize {
    n.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn eval(out: &Path, a: EvalArgs) -> Result<()> {
    if a.ranked && a.scorer.is_none() {
        return Err(UsageError("--ranked needs --scorer".into()).into());
    }
    let (backend, card) = load_backend(&a.checkpoint)?;
    let scorer = a.scorer.as_deref().map(load_scorer).transpose()?;
    let env = env_for(&card.env, a.env_config.as_deref())?;
    if env.shape() != card.shape || scorer.as_ref().is_some_and(|s| s.shape() != card.shape) {
        return Err(UsageError(format!("checkpoint shape {:?} does not match env {} / scorer", card.shape, env.name())).into());
    }
    let cfg = PlannerConfig { k: a.k, chunk: a.chunk, ranked: a.ranked, seed: a.seed };
    cfg.validate(env.shape(), scorer.is_some())?;
    create_dir(out)?;
    let max_steps = a.max_steps.unwrap_or(env.max_rollout_steps());
    write_run_config(
        out,
        "eval",
        json!({
            "command": "eval",
            "checkpoint": path_str(&a.checkpoint),
            "checkpoint_config_hash": card.config_hash,
            "scorer": a.scorer.as_deref().map(path_str),
            "env": env.name(),
            "env_config": env.config_toml(),
            "planner": to_json(&cfg)?,
            "episodes": a.episodes,
            "max_steps": max_steps,
        }),
    )?;
    let results = run_episodes(&env, backend.as_dyn(), &cfg, scorer.as_ref(), a.episodes, max_steps, threads(a.threads))?;
    let metrics = episode_metrics(&results);
    write_metrics_csv(&metrics, create_file(&out.join("eval_metrics.csv"))?)?;
    if a.dump_trajectories {
        write_trajectory_csv(&results, create_file(&out.join("eval_trajectories.csv"))?)?;
    }
    if a.svg {
        match &env {
            Env::PointMaze(m) => {
                let paths: Vec<_> = results
                    .iter()
                    .map(|r| {
                        let ep = &r.episode;
                        let pts = ep.states.iter().chain(std::iter::once(&ep.final_state)).map(|s| (s[0], s[1])).collect();
                        (pts, r.success)
                    })
                    .collect();
                write_text(&out.join("eval_trajectories.svg"), &svg::maze_plot(m, &paths))?;
            }
            _ => log::warn!("--svg draws PointMaze2D rollouts only"),
        }
    }
    let succ = metrics.iter().filter(|m| m.success).count() as f64 / metrics.len().max(1) as f64;
    let ret = stats::mean(&metrics.iter().map(|m| m.ret).collect::<Vec<_>>());
    let pl: Vec<f64> = results.iter().flat_map(|r| r.steps.iter().map(|s| s.pl_ms)).collect();
    println!(
        "eval episodes={} success_rate={:.3} mean_return={:.3} pl_p50_ms={:.3}",
        metrics.len(),
        succ,
        ret,
        stats::median(&pl)
    );
    Ok(())
}

/// [`evaluate`] with an explicit step cap.
fn run_episodes(
    env: &Env,
    backend: &dyn PlanningBackend,
    cfg: &PlannerConfig,
    scorer: Option<&ReturnModel>,
    episodes: usize,
    max_steps: usize,
    threads: usize,
) -> Result<Vec<planner::RolloutResult>> {
    if max_steps == env.max_rollout_steps() {
        return Ok(evaluate(env, backend, cfg, scorer, episodes, threads)?);
    }
    let mut out = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let start = env.reset(&mut rng::stream(cfg.seed, planner::RESET_STREAM + e as u64));
        let mut r = rng::stream(cfg.seed, planner::PLAN_STREAM + e as u64);
        out.push(planner::rollout(env, backend, cfg, scorer, start, max_steps, &mut r)?);
    }
    Ok(out)
}

fn bench(out: &Path, a: BenchArgs) -> Result<()> {
    let mut loaded = Vec::new();
    for p in [&a.kdp, &a.diffuser, &a.bc].into_iter().flatten() {
        loaded.push(load_backend(p)?);
    }
    let Some((_, first)) = loaded.first() else {
        return Err(UsageError("bench needs at least one of --kdp, --diffuser, --bc".into()).into());
    };
    let env = env_for(&first.env, a.env_config.as_deref())?;
    if loaded.iter().any(|(_, c)| c.shape != env.shape()) {
        return Err(UsageError("bench checkpoints disagree on window shape".into()).into());
    }
    if a.ks.is_empty() || a.ks.contains(&0) || a.calls == 0 {
        return Err(UsageError("--ks must list K >= 1 and --calls must be >= 1".into()).into());
    }
    create_dir(out)?;
    let cfg = BenchConfig { ks: a.ks.clone(), warmup: a.warmup, calls: a.calls, seed: a.seed };
    write_run_config(
        out,
        "bench",
        json!({
            "command": "bench",
            "kdp": a.kdp.as_deref().map(path_str),
            "diffuser": a.diffuser.as_deref().map(path_str),
            "bc": a.bc.as_deref().map(path_str),
            "env": env.name(),
            "bench": to_json(&cfg)?,
        }),
    )?;
    let start = env.reset(&mut rng::seeded(a.seed));
    let backends: Vec<&dyn PlanningBackend> = loaded.iter().map(|(b, _)| b.as_dyn()).collect();
    let rows = latency_bench(&env, &backends, &start, &cfg)?;
    write_bench_csv(&rows, create_file(&out.join("bench.csv"))?)?;
    println!("{:<10} {:>4} {:>4} {:>5} {:>6} {:>10} {:>11}", "method", "K", "T", "NFE", "BEF", "PL p50 ms", "E2E p50 ms");
    for r in &rows {
        println!(
            "{:<10} {:>4} {:>4} {:>5} {:>6} {:>10.3} {:>11.3}",
            r.method, r.k, r.t, r.nfe, r.bef, r.pl_p50_ms, r.e2e_p50_ms
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    variant: &'static str,
    config_hash: String,
    final_loss: f64,
    action_diversity: f64,
    success_rate: f64,
    diverged: bool,
}

/// Probe start states: keys of evenly spaced dataset windows, raw units.
pub fn probe_states(ds: &WindowDataset, n: usize) -> Vec<Vec<f32>> {
    let ds_dim = ds.shape().state_dim();
    let stride = (ds.len() / n.max(1)).max(1);
    (0..n.min(ds.len())).map(|p| ds.window_values(p * stride)[..ds_dim].to_vec()).collect()
}

fn ablate(out: &Path, a: AblateArgs) -> Result<()> {
    require_file(&a.dataset, "dataset")?;
    let ds = WindowDataset::load(&a.dataset)?;
    let env = env_for(&ds.manifest().env, a.env_config.as_deref())?;
    let scorer = a.scorer.as_deref().map(load_scorer).transpose()?;
    let base = layered(TrainConfig::preset(env.name()), &a.overrides)?;
    base.validate()?;
    let pcfg = PlannerConfig { k: a.k, chunk: a.chunk, ranked: scorer.is_some(), seed: base.seed };
    pcfg.validate(env.shape(), scorer.is_some())?;
    if a.probe_samples < 2 {
        return Err(UsageError("--probe-samples must be >= 2".into()).into());
    }
    create_dir(out)?;
    write_run_config(
        out,
        "ablate",
        json!({
            "command": "ablate",
            "dataset": path_str(&a.dataset),
            "scorer": a.scorer.as_deref().map(path_str),
            "base": to_json(&base)?,
            "planner": to_json(&pcfg)?,
            "episodes": a.episodes,
            "probes": a.probes,
            "probe_samples": a.probe_samples,
            "variants": Ablation::ALL.iter().map(|v| v.name()).collect::<Vec<_>>(),
        }),
    )?;
    let probes = probe_states(&ds, a.probes);
    let mut rows = Vec::new();
    for ab in Ablation::ALL {
        let mut cfg = base.clone();
        ab.apply(&mut cfg.drift);
        let row = ablation_row(out, &ds, &env, cfg, ab, &probes, &a, &pcfg, scorer.as_ref())?;
        println!(
            "{:<24} loss={:.4} action_div={:.4} success={:.3}{}",
            row.variant,
            row.final_loss,
            row.action_diversity,
            row.success_rate,
            if row.diverged { " DIVERGED" } else { "" }
        );
        rows.push(row);
    }
    let mut w = csv::Writer::from_writer(create_file(&out.join("ablate.csv"))?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ablation_row(
    out: &Path,
    ds: &WindowDataset,
    env: &Env,
    cfg: TrainConfig,
    ab: Ablation,
    probes: &[Vec<f32>],
    a: &AblateArgs,
    pcfg: &PlannerConfig,
    scorer: Option<&ReturnModel>,
) -> Result<AblationRow> {
    let mut row = AblationRow {
        variant: ab.name(),
        config_hash: cfg.hash(),
        final_loss: f64::NAN,
        action_diversity: f64::NAN,
        success_rate: f64::NAN,
        diverged: false,
    };
    let numerical = |e: &kdp_core::Error| matches!(e, kdp_core::Error::NonFinite(_));
    let mut trainer = Trainer::new(ds, cfg.clone())?;
    let mut report = TrainReport { rows: Vec::new(), config_hash: cfg.hash() };
    for _ in 0..cfg.steps {
        match trainer.step() {
            Ok(r) => report.rows.push(r),
            Err(e) if numerical(&e) => {
                log::warn!("{}: {e}", ab.name());
                row.diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    report.save_csv(&out.join(format!("ablate_{}_report.csv", ab.name())))?;
    let n = report.rows.len();
    if n > 0 {
        row.final_loss = report.mean_loss(n.saturating_sub(100)..n);
    }
    if row.diverged {
        return Ok(row);
    }
    let policy = trainer.into_policy();
    save_model(policy.net(), &policy.card(env.name(), cfg.hash(), n), &out.join(format!("ablate_{}.kdpn", ab.name())))?;
    row.action_diversity = planner::action_diversity(&policy, probes, a.probe_samples, cfg.seed)?;
    match evaluate(env, &policy, pcfg, scorer, a.episodes, threads(a.threads)) {
        Ok(res) => {
            row.success_rate = res.iter().filter(|r| r.success).count() as f64 / res.len().max(1) as f64;
        }
        Err(e) if numerical(&e) => row.diverged = true,
        Err(e) => return Err(e.into()),
    }
    if !row.action_diversity.is_finite() {
        row.diverged = true;
    }
    Ok(row)
}
