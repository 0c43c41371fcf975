//! Representation training: the encoder and generator learn jointly from
//! offline episodes, single-task or across a family of tasks.

use std::time::Instant;

use super::tune::{tune_adaptor_over, TuneConfig};
use super::{check_compat, MetricsRow, PipelineError};
use crate::env::Dataset;
use crate::losses::{pretrain_loss, ContrastKnobs, PretrainItem};
use crate::model::{Bound, ModelBundle};
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::rng::RngStream;
use crate::traj::Trajectory;
use crate::Graph;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm ceiling.
    pub clip: f64,
    /// Weight of the contrastive terms.
    pub gamma: f64,
    /// InfoNCE temperature.
    pub alpha: f64,
    /// Steps per sampled fragment, for reconstruction and contrast alike.
    pub frag_len: usize,
    /// Return-contrast margin as a fraction of the pooled return range.
    pub margin_frac: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            adam: AdamConfig::default(),
            clip: 0.5,
            gamma: 0.1,
            alpha: 0.2,
            frag_len: 16,
            margin_frac: 0.1,
            seed: 0,
        }
    }
}

/// Train encoder and generator on one task's offline data.
pub fn pretrain_representation(
    bundle: &mut ModelBundle,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRow>, PipelineError> {
    run_representation(bundle, std::slice::from_ref(ds), cfg, false, "pretrain")
}

/// Train across several tasks of one family, then tune the adaptor on the
/// pooled episodes. During representation training each episode is paired
/// with a context — the leading fragment of a different episode of its own
/// task — and batches carry task labels for the task-level contrast. Several
/// datasets may carry the same task (say, tiers of different quality); their
/// episodes form one pool per task. Half the episodes are reconstructed from
/// the context alone (the encoder never sees them), because deployment builds
/// prompts from nothing but a context fragment. The adaptor stage is the same
/// one single-task tuning runs, over all tasks' episodes.
pub fn meta_train(
    bundle: &mut ModelBundle,
    datasets: &[Dataset],
    cfg: &TrainConfig,
    tune_cfg: &TuneConfig,
) -> Result<Vec<MetricsRow>, PipelineError> {
    let mut labels: Vec<String> = datasets
        .iter()
        .map(|d| d.manifest.env.task_label())
        .collect();
    labels.sort();
    labels.dedup();
    if labels.len() < 2 {
        return Err(PipelineError::Config(
            "multi-task training needs at least two distinct tasks; \
             for a single task use pretrain_representation"
                .into(),
        ));
    }
    let mut rows = run_representation(bundle, datasets, cfg, true, "meta_train")?;

    bundle.frozen_encoder = true;
    bundle.frozen_generator = true;
    let trajs: Vec<&Trajectory> = datasets
        .iter()
        .flat_map(|d| d.episodes.iter().map(|e| &e.traj))
        .collect();
    rows.extend(tune_adaptor_over(bundle, &trajs, tune_cfg)?);
    let specs: Vec<String> = datasets
        .iter()
        .map(|d| serde_json::to_string(&d.manifest.env).expect("serializable spec"))
        .collect();
    bundle.provenance.insert("tuned_on".into(), specs.join(";"));
    Ok(rows)
}

fn run_representation(
    bundle: &mut ModelBundle,
    datasets: &[Dataset],
    cfg: &TrainConfig,
    with_context: bool,
    stage: &'static str,
) -> Result<Vec<MetricsRow>, PipelineError> {
    if bundle.frozen_encoder || bundle.frozen_generator {
        return Err(PipelineError::Config(
            "representation is frozen; this bundle already entered the improvement stage".into(),
        ));
    }
    if cfg.epochs == 0 {
        return Err(PipelineError::Config("zero training epochs".into()));
    }
    if cfg.batch_size < 2 {
        return Err(PipelineError::Config(
            "contrastive terms need batches of at least two episodes".into(),
        ));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for ds in datasets {
        check_compat(&bundle.cfg, &ds.manifest.env)?;
        if ds.episodes.is_empty() {
            return Err(PipelineError::Config("a dataset is empty".into()));
        }
        let (l, h) = ds.return_range();
        lo = lo.min(l);
        hi = hi.max(h);
    }
    let return_margin = cfg.margin_frac * (hi - lo);

    // Datasets sharing a task label pool their episodes: contexts and the
    // task contrast work on tasks, not on files.
    let mut labels: Vec<String> = Vec::new();
    let task_of: Vec<usize> = datasets
        .iter()
        .map(|d| {
            let l = d.manifest.env.task_label();
            labels.iter().position(|x| *x == l).unwrap_or_else(|| {
                labels.push(l);
                labels.len() - 1
            })
        })
        .collect();
    let mut task_pool: Vec<Vec<(usize, usize)>> = vec![Vec::new(); labels.len()];
    let mut pool_base = vec![0usize; datasets.len()];
    for (t, ds) in datasets.iter().enumerate() {
        let k = task_of[t];
        pool_base[t] = task_pool[k].len();
        task_pool[k].extend((0..ds.episodes.len()).map(|i| (t, i)));
    }
    if with_context {
        if let Some(k) = task_pool.iter().position(|p| p.len() < 2) {
            return Err(PipelineError::Config(format!(
                "context sampling needs at least two episodes of task {}",
                labels[k]
            )));
        }
    }

    let pool: Vec<(usize, usize)> = datasets
        .iter()
        .enumerate()
        .flat_map(|(t, ds)| (0..ds.episodes.len()).map(move |i| (t, i)))
        .collect();

    let mut adam = Adam::new(cfg.adam);
    let mut rows = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut rng = RngStream::new(cfg.seed, epoch as u64);
        let knobs = ContrastKnobs {
            gamma: cfg.gamma,
            alpha: cfg.alpha,
            frag_len: cfg.frag_len,
            return_margin,
            seed: rng.next_u64(),
        };
        let mut order = pool.clone();
        rng.shuffle(&mut order);

        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            batches += 1;

            let views: Vec<(Option<Trajectory>, bool)> = chunk
                .iter()
                .map(|&(t, i)| {
                    if !with_context {
                        return (None, false);
                    }
                    // Uniform over the task's other episodes, whichever
                    // dataset holds them; the context is that episode's
                    // opening, where behavior from the shared start still
                    // tells the tasks apart.
                    let peers = &task_pool[task_of[t]];
                    let my = pool_base[t] + i;
                    let mut j = rng.below(peers.len() as u64 - 1) as usize;
                    if j >= my {
                        j += 1;
                    }
                    let (tj, ij) = peers[j];
                    let src = &datasets[tj].episodes[ij].traj;
                    let len = cfg.frag_len.clamp(1, src.steps());
                    let ctx = src.fragment(0, len);
                    // Half the time the episode is hidden from the encoder,
                    // so its prompt must be read off the context alone — the
                    // only view deployment ever gets.
                    (Some(ctx), rng.chance(0.5))
                })
                .collect();
            let items: Vec<PretrainItem> = chunk
                .iter()
                .zip(&views)
                .map(|(&(t, i), (ctx, hidden))| PretrainItem {
                    key: ((t as u64) << 32) | i as u64,
                    episode: &datasets[t].episodes[i].traj,
                    ctx: ctx.as_ref(),
                    ctx_only: *hidden,
                    task: with_context.then_some(task_of[t]),
                })
                .collect();

            let mut g = Graph::new();
            let mut p = Bound::new();
            p.bind(&mut g, &bundle.encoder, true);
            p.bind(&mut g, &bundle.generator, true);
            let parts = pretrain_loss(&mut g, &bundle.cfg, &p, &items, &knobs)?;
            let total = g.value(parts.total).data()[0];
            if !total.is_finite() {
                return Err(PipelineError::NonFinite {
                    stage,
                    epoch,
                    batch: batches,
                });
            }
            sums[0] += g.value(parts.l1).data()[0];
            sums[1] += g.value(parts.l2_traj).data()[0];
            sums[2] += g.value(parts.l2_return).data()[0];
            if let Some(lt) = parts.l2_task {
                sums[3] += g.value(lt).data()[0];
            }

            g.backward(parts.total)?;
            let mut grads_enc = p.grads_for(&g, &bundle.encoder);
            let mut grads_gen = p.grads_for(&g, &bundle.generator);
            clip_global_norm(&mut [&mut grads_enc, &mut grads_gen], cfg.clip);
            adam.step(&mut [
                (&mut bundle.encoder, &grads_enc),
                (&mut bundle.generator, &grads_gen),
            ])?;
        }
        if batches == 0 {
            return Err(PipelineError::Config(
                "data is too small for one batch of at least two episodes".into(),
            ));
        }
        let denom = batches as f64;
        rows.push(MetricsRow {
            stage,
            epoch,
            l1: Some(sums[0] / denom),
            l2_traj: Some(sums[1] / denom),
            l2_return: Some(sums[2] / denom),
            l2_task: with_context.then(|| sums[3] / denom),
            adaptor_loss: None,
            eval_return_mean: None,
            eval_return_std: None,
            wall_seconds: Some(started.elapsed().as_secs_f64()),
        });
    }

    let specs: Vec<String> = datasets
        .iter()
        .map(|d| serde_json::to_string(&d.manifest.env).expect("serializable spec"))
        .collect();
    bundle.provenance.insert("stage".into(), stage.into());
    bundle.provenance.insert("trained_on".into(), specs.join(";"));
    let mut tiers: Vec<&str> = datasets.iter().map(|d| d.manifest.tier.name()).collect();
    tiers.sort_unstable();
    tiers.dedup();
    bundle.provenance.insert("tier".into(), tiers.join(";"));
    Ok(rows)
}
