//! Subcommand bodies. Each resolves its inputs (defaults < config file <
//! flags), runs the corresponding library call, writes artifacts plus a
//! `.meta` sidecar, and keeps stdout for machine-readable output only.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use cmt_core::env::{
    generate_dataset, load_dataset, save_dataset, Dataset, Dir, EnvFamily, EnvSpec, TaskParam,
    Tier,
};
use cmt_core::eval::{
    episode_prompts, eval_csv, evaluate_fixed_prompts, normalized_score, return_stats, EvalRow,
};
use cmt_core::model::{adaptor_apply, init_bundle, load_bundle, save_bundle, ModelBundle};
use cmt_core::pipeline::{
    improvement_tune, meta_test, meta_train, metrics_csv, pretrain_representation,
    strip_wall_seconds, MetricsRow, TuneMode,
};
use cmt_core::optim::AdamConfig;
use cmt_core::pipeline::{TrainConfig, TuneConfig};

use crate::config::load_settings;
use crate::runmeta::RunMeta;

pub fn run(cmd: crate::Command) -> Result<()> {
    match cmd {
        crate::Command::GenData(a) => gen_data(a),
        crate::Command::Pretrain(a) => pretrain(a),
        crate::Command::Tune(a) => tune(a),
        crate::Command::MetaTrain(a) => meta_train_cmd(a),
        crate::Command::MetaTest(a) => meta_test_cmd(a),
        crate::Command::Eval(a) => eval(a),
        crate::Command::Report(a) => report(a),
    }
}

// ---- shared plumbing ----

fn require<T>(v: Option<T>, what: &str) -> Result<T> {
    v.with_context(|| format!("missing required `{what}` (pass --{what} or set it in the config)"))
}

/// `family[:task]`, e.g. `chain`, `chain:1`, `gridgoal:left`,
/// `pointline_vel:-0.5`. Omitted tasks fall back to a fixed default.
fn parse_env_spec(s: &str) -> Result<EnvSpec> {
    let (fam, task) = match s.split_once(':') {
        Some((f, t)) => (f, Some(t)),
        None => (s, None),
    };
    let Some(family) = EnvFamily::parse(fam) else {
        bail!("unknown environment `{fam}` (expected pointline_vel, gridgoal, or chain)");
    };
    Ok(match family {
        EnvFamily::PointlineVel => {
            let v: f64 = task
                .unwrap_or("1.0")
                .parse()
                .with_context(|| format!("pointline_vel task must be a velocity, got `{}`", task.unwrap_or("")))?;
            EnvSpec::pointline(v)?
        }
        EnvFamily::Gridgoal => match task.unwrap_or("right") {
            "left" => EnvSpec::gridgoal(Dir::Left),
            "right" => EnvSpec::gridgoal(Dir::Right),
            other => bail!("gridgoal task must be `left` or `right`, got `{other}`"),
        },
        EnvFamily::Chain => {
            let p: u64 = task
                .unwrap_or("0")
                .parse()
                .with_context(|| format!("chain task must be an integer, got `{}`", task.unwrap_or("")))?;
            EnvSpec::chain(p)
        }
    })
}

/// The qualified name `parse_env_spec` round-trips.
fn env_cli_name(spec: &EnvSpec) -> String {
    match spec.task {
        TaskParam::Velocity(v) => format!("pointline_vel:{v}"),
        TaskParam::Direction(Dir::Left) => "gridgoal:left".into(),
        TaskParam::Direction(Dir::Right) => "gridgoal:right".into(),
        TaskParam::PermSeed(p) => format!("chain:{p}"),
    }
}

fn parse_tier(s: &str) -> Result<Tier> {
    Tier::parse(s)
        .with_context(|| format!("unknown tier `{s}` (expected random, medium, expert, or mixed)"))
}

fn load_data(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_ckpt(path: &Path) -> Result<ModelBundle> {
    load_bundle(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn opt_path(flag: Option<PathBuf>, cfg: &Option<String>) -> Option<PathBuf> {
    flag.or_else(|| cfg.as_ref().map(PathBuf::from))
}

fn write_metrics(path: &Path, mut rows: Vec<MetricsRow>, timing: bool) -> Result<()> {
    if !timing {
        strip_wall_seconds(&mut rows);
    }
    fs::write(path, metrics_csv(&rows)).with_context(|| format!("writing {}", path.display()))
}

fn metrics_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".metrics.csv");
    PathBuf::from(name)
}

fn echo_adam(meta: &mut RunMeta, a: &AdamConfig) {
    meta.push("lr", a.lr);
    meta.push("beta1", a.beta1);
    meta.push("beta2", a.beta2);
    meta.push("eps", a.eps);
    meta.push("weight_decay", a.weight_decay);
}

fn echo_train(meta: &mut RunMeta, t: &TrainConfig) {
    meta.push("epochs", t.epochs);
    meta.push("batch_size", t.batch_size);
    echo_adam(meta, &t.adam);
    meta.push("clip", t.clip);
    meta.push("gamma", t.gamma);
    meta.push("alpha", t.alpha);
    meta.push("frag_len", t.frag_len);
    meta.push("margin_frac", t.margin_frac);
}

fn echo_tune(meta: &mut RunMeta, t: &TuneConfig) {
    meta.push("mode", t.mode.name());
    meta.push("epochs", t.epochs);
    meta.push("batch_size", t.batch_size);
    echo_adam(meta, &t.adam);
    meta.push("clip", t.clip);
    meta.push("beta", t.beta);
    meta.push("ascent_steps", t.ascent.steps);
    meta.push("ascent_step_size", t.ascent.step_size);
}

fn echo_model(meta: &mut RunMeta, b: &ModelBundle) {
    meta.push("embed_dim", b.cfg.embed_dim);
    meta.push("layers", b.cfg.layers);
    meta.push("heads", b.cfg.heads);
    meta.push("prompt_len", b.cfg.prompt_len);
}

// ---- gen-data ----

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Environment, optionally with a task: `chain:1`, `gridgoal:left`, `pointline_vel:-0.5`.
    #[arg(long)]
    env: Option<String>,
    /// Collection policy tier: random, medium, expert, or mixed.
    #[arg(long)]
    tier: Option<String>,
    /// Episode count.
    #[arg(long)]
    n: Option<usize>,
    /// Output dataset path (JSON lines).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root of all randomness in the run.
    #[arg(long)]
    seed: Option<u64>,
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = load_settings(a.config.as_deref())?;
    let spec = parse_env_spec(&require(a.env.or_else(|| cfg.env.clone()), "env")?)?;
    let tier = parse_tier(&require(a.tier.or_else(|| cfg.tier.clone()), "tier")?)?;
    let n = require(a.n.or(cfg.n), "n")?;
    let out = require(opt_path(a.out, &cfg.out), "out")?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);

    let ds = generate_dataset(&spec, tier, n, seed)?;
    save_dataset(&ds, &out).with_context(|| format!("writing {}", out.display()))?;

    let mut meta = RunMeta::new("gen-data");
    meta.push("seed", seed);
    meta.push("env", env_cli_name(&spec));
    meta.push("tier", tier.name());
    meta.push("n", n);
    meta.push("random_ref", ds.manifest.random_ref);
    meta.push("expert_ref", ds.manifest.expert_ref);
    meta.push_file("out", &out)?;
    meta.write_for(&out)?;

    eprintln!("wrote {n} episodes to {}", out.display());
    Ok(())
}

// ---- pretrain ----

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Training dataset (from gen-data).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root of all randomness in the run.
    #[arg(long)]
    seed: Option<u64>,
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let cfg = load_settings(a.config.as_deref())?;
    let data = require(opt_path(a.data, &cfg.data), "data")?;
    let out = require(opt_path(a.out, &cfg.out), "out")?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);

    let ds = load_data(&data)?;
    let spec = ds.manifest.env;
    let mcfg = cfg.model_config(spec.state_dim(), spec.action_kind());
    mcfg.validate()?;
    let mut bundle = init_bundle(&mcfg, seed);
    let tc = cfg.train_config(seed);
    let rows = pretrain_representation(&mut bundle, &ds, &tc)?;

    save_bundle(&bundle, &out)?;
    let csv = metrics_path(&out);
    let last = rows.last().map(|r| r.l1.unwrap_or(f64::NAN));
    write_metrics(&csv, rows, cfg.timing.unwrap_or(false))?;

    let mut meta = RunMeta::new("pretrain");
    meta.push("seed", seed);
    echo_model(&mut meta, &bundle);
    echo_train(&mut meta, &tc);
    meta.push("timing", cfg.timing.unwrap_or(false));
    meta.push_file("data", &data)?;
    meta.push_file("out", &out)?;
    meta.push_file("metrics", &csv)?;
    meta.write_for(&out)?;

    if let Some(l1) = last {
        eprintln!(
            "pretrained {} epochs on {}; final reconstruction loss {l1:.4}",
            tc.epochs,
            data.display()
        );
    }
    Ok(())
}

// ---- tune ----

#[derive(Args, Debug)]
pub struct TuneArgs {
    /// Dataset whose episodes drive adaptor tuning.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pretrained checkpoint to start from (not modified).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Adaptor objective: `direct` or `distill`.
    #[arg(long)]
    mode: Option<String>,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root of all randomness in the run.
    #[arg(long)]
    seed: Option<u64>,
}

fn tune(a: TuneArgs) -> Result<()> {
    let cfg = load_settings(a.config.as_deref())?;
    let data = require(opt_path(a.data, &cfg.data), "data")?;
    let ckpt = require(opt_path(a.ckpt, &cfg.ckpt), "ckpt")?;
    let out = require(opt_path(a.out, &cfg.out), "out")?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let mode_name = a.mode.or_else(|| cfg.mode.clone()).unwrap_or_else(|| "direct".into());
    let Some(mode) = TuneMode::parse(&mode_name) else {
        bail!("unknown tune mode `{mode_name}` (expected direct or distill)");
    };

    let ds = load_data(&data)?;
    let mut bundle = load_ckpt(&ckpt)?;
    let tc = cfg.tune_config(seed, mode);
    let rows = improvement_tune(&mut bundle, &ds, &tc)?;

    save_bundle(&bundle, &out)?;
    let csv = metrics_path(&out);
    let last = rows.last().and_then(|r| r.adaptor_loss);
    write_metrics(&csv, rows, cfg.timing.unwrap_or(false))?;

    let mut meta = RunMeta::new("tune");
    meta.push("seed", seed);
    echo_tune(&mut meta, &tc);
    meta.push("timing", cfg.timing.unwrap_or(false));
    meta.push_file("data", &data)?;
    meta.push_file("ckpt", &ckpt)?;
    meta.push_file("out", &out)?;
    meta.push_file("metrics", &csv)?;
    meta.write_for(&out)?;

    if let Some(loss) = last {
        eprintln!("tuned adaptor ({}) for {} epochs; final objective {loss:.4}", tc.mode.name(), tc.epochs);
    }
    Ok(())
}

// ---- meta-train ----

#[derive(Args, Debug)]
pub struct MetaTrainArgs {
    /// Comma-separated task datasets (two or more, distinct tasks).
    #[arg(long)]
    data: Option<String>,
    /// Output checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root of all randomness in the run.
    #[arg(long)]
    seed: Option<u64>,
}

fn meta_train_cmd(a: MetaTrainArgs) -> Result<()> {
    let cfg = load_settings(a.config.as_deref())?;
    let data = require(a.data.or_else(|| cfg.data.clone()), "data")?;
    let out = require(opt_path(a.out, &cfg.out), "out")?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);

    let paths: Vec<PathBuf> = data
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .collect();
    if paths.len() < 2 {
        bail!("meta-train needs at least two comma-separated datasets, got {}", paths.len());
    }
    let datasets = paths.iter().map(|p| load_data(p)).collect::<Result<Vec<_>>>()?;

    let spec = datasets[0].manifest.env;
    let mcfg = cfg.model_config(spec.state_dim(), spec.action_kind());
    mcfg.validate()?;
    let mut bundle = init_bundle(&mcfg, seed);
    let tc = cfg.train_config(seed);
    let mode_name = cfg.mode.clone().unwrap_or_else(|| "direct".into());
    let Some(mode) = TuneMode::parse(&mode_name) else {
        bail!("unknown tune mode `{mode_name}` (expected direct or distill)");
    };
    let tune_cfg = cfg.tune_config(seed, mode);
    let rows = meta_train(&mut bundle, &datasets, &tc, &tune_cfg)?;

    save_bundle(&bundle, &out)?;
    let csv = metrics_path(&out);
    write_metrics(&csv, rows, cfg.timing.unwrap_or(false))?;

    let mut meta = RunMeta::new("meta-train");
    meta.push("seed", seed);
    echo_model(&mut meta, &bundle);
    echo_train(&mut meta, &tc);
    echo_tune(&mut meta, &tune_cfg);
    meta.push("timing", cfg.timing.unwrap_or(false));
    for (i, p) in paths.iter().enumerate() {
        meta.push_file(&format!("data.{i}"), p)?;
    }
    meta.push_file("out", &out)?;
    meta.push_file("metrics", &csv)?;
    meta.write_for(&out)?;

    eprintln!("meta-trained on {} tasks for {} epochs", datasets.len(), tc.epochs);
    Ok(())
}

// ---- meta-test ----

#[derive(Args, Debug)]
pub struct MetaTestArgs {
    /// Checkpoint to deploy.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Deployment task, e.g. `gridgoal:left`.
    #[arg(long)]
    env: Option<String>,
    /// Consecutive episodes on the task.
    #[arg(long)]
    episodes: Option<usize>,
    /// Also write the per-episode CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root of all randomness in the run.
    #[arg(long)]
    seed: Option<u64>,
}

fn meta_test_cmd(a: MetaTestArgs) -> Result<()> {
    let cfg = load_settings(a.config.as_deref())?;
    let ckpt = require(opt_path(a.ckpt, &cfg.ckpt), "ckpt")?;
    let spec = parse_env_spec(&require(a.env.or_else(|| cfg.env.clone()), "env")?)?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let mut mt = cfg.meta_test_config(seed);
    if let Some(e) = a.episodes {
        mt.episodes = e;
    }

    let bundle = load_ckpt(&ckpt)?;
    let episodes = meta_test(&bundle, &spec, &mt)?;

    let mut csv = String::from("episode,return\n");
    for (i, ep) in episodes.iter().enumerate() {
        csv.push_str(&format!("{},{:.6}\n", i + 1, ep.traj.ret()));
    }
    print!("{csv}");

    if let Some(out) = opt_path(a.out, &cfg.out) {
        fs::write(&out, &csv).with_context(|| format!("writing {}", out.display()))?;
        let mut meta = RunMeta::new("meta-test");
        meta.push("seed", seed);
        meta.push("env", env_cli_name(&spec));
        meta.push("episodes", mt.episodes);
        meta.push("ctx_len", mt.ctx_len);
        meta.push("buffer_cap", mt.buffer_cap);
        meta.push_file("ckpt", &ckpt)?;
        meta.push_file("out", &out)?;
        meta.write_for(&out)?;
    }
    Ok(())
}

// ---- eval ----

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to score.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Dataset supplying prompts and score references.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Prompt handling: `reconstruct` (as encoded) or `tuned` (through the adaptor).
    #[arg(long)]
    mode: Option<String>,
    /// Rollout episodes (one prompt each).
    #[arg(long)]
    episodes: Option<usize>,
    /// Also write the CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root of all randomness in the run.
    #[arg(long)]
    seed: Option<u64>,
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = load_settings(a.config.as_deref())?;
    let ckpt = require(opt_path(a.ckpt, &cfg.ckpt), "ckpt")?;
    let data = require(opt_path(a.data, &cfg.data), "data")?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let episodes = a.episodes.or(cfg.episodes).unwrap_or(20);
    if episodes == 0 {
        bail!("eval needs at least one episode");
    }
    let mode = a.mode.or_else(|| cfg.mode.clone()).unwrap_or_else(|| "reconstruct".into());
    if mode != "reconstruct" && mode != "tuned" {
        bail!("unknown eval mode `{mode}` (expected reconstruct or tuned)");
    }

    let bundle = load_ckpt(&ckpt)?;
    let ds = load_data(&data)?;
    let spec = ds.manifest.env;

    let mut prompts = episode_prompts(&bundle, &ds, episodes, seed)?;
    if mode == "tuned" {
        prompts = prompts
            .iter()
            .map(|z| adaptor_apply(&bundle, z))
            .collect::<Result<_, _>>()?;
    }
    let returns = evaluate_fixed_prompts(&bundle, &spec, &prompts, seed)?;
    let stats = return_stats(&returns);
    let score = normalized_score(stats.mean, ds.manifest.random_ref, ds.manifest.expert_ref)?;

    let config_id = ckpt
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ckpt".into());
    let rows = vec![EvalRow {
        config_id,
        env: env_cli_name(&spec),
        tier: ds.manifest.tier.name().to_string(),
        mode,
        seeds: 1,
        episodes: stats.n,
        return_mean: stats.mean,
        return_std: stats.std,
        norm_score: score,
    }];
    let csv = eval_csv(&rows);
    print!("{csv}");

    if let Some(out) = a.out {
        fs::write(&out, &csv).with_context(|| format!("writing {}", out.display()))?;
        let mut meta = RunMeta::new("eval");
        meta.push("seed", seed);
        meta.push("mode", &rows[0].mode);
        meta.push("episodes", stats.n);
        meta.push_file("ckpt", &ckpt)?;
        meta.push_file("data", &data)?;
        meta.push_file("out", &out)?;
        meta.write_for(&out)?;
    }
    Ok(())
}

// ---- report ----

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Dataset to summarize.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to summarize.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

fn report(a: ReportArgs) -> Result<()> {
    if a.data.is_none() && a.ckpt.is_none() {
        bail!("report needs --data and/or --ckpt");
    }
    if let Some(path) = &a.data {
        let ds = load_data(path)?;
        ds.verify_replay()
            .with_context(|| format!("replaying {}", path.display()))?;
        let returns: Vec<f64> = ds.episodes.iter().map(|e| e.traj.ret()).collect();
        let stats = return_stats(&returns);
        println!("dataset {}", path.display());
        println!("  env         = {}", env_cli_name(&ds.manifest.env));
        println!("  tier        = {}", ds.manifest.tier.name());
        println!("  episodes    = {}", ds.manifest.n);
        println!("  random_ref  = {:.6}", ds.manifest.random_ref);
        println!("  expert_ref  = {:.6}", ds.manifest.expert_ref);
        println!("  return mean = {:.6} (std {:.6})", stats.mean, stats.std);
        println!("  replay      = verified");
    }
    if let Some(path) = &a.ckpt {
        let b = load_ckpt(path)?;
        let count = |set: &cmt_core::optim::ParamSet| -> usize {
            set.iter().map(|(_, t)| t.data().len()).sum()
        };
        println!("checkpoint {}", path.display());
        println!(
            "  model       = embed_dim {}, layers {}, heads {}, prompt_len {}",
            b.cfg.embed_dim, b.cfg.layers, b.cfg.heads, b.cfg.prompt_len
        );
        println!(
            "  params      = encoder {}, generator {}, adaptor {}",
            count(&b.encoder),
            count(&b.generator),
            count(&b.adaptor)
        );
        println!(
            "  frozen      = encoder {}, generator {}",
            b.frozen_encoder, b.frozen_generator
        );
        for (k, v) in &b.provenance {
            println!("  {k} = {v}");
        }
    }
    Ok(())
}
