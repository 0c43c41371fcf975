//! Improvement stage: the encoder and generator freeze, and the adaptor
//! learns to move prompts toward higher predicted return.

use std::time::Instant;

use super::{check_compat, MetricsRow, PipelineError};
use crate::env::Dataset;
use crate::losses::{adaptor_direct_loss, adaptor_distill_loss, prompt_ascent, AscentConfig};
use crate::model::{encode, Bound, ModelBundle};
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::parallel::parallel_map;
use crate::rng::RngStream;
use crate::traj::Trajectory;
use crate::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneMode {
    /// Ascend predicted return directly through the frozen generator.
    Direct,
    /// Match explicit gradient-ascent targets computed per prompt.
    Distill,
}

impl TuneMode {
    pub fn name(&self) -> &'static str {
        match self {
            TuneMode::Direct => "direct",
            TuneMode::Distill => "distill",
        }
    }

    pub fn parse(s: &str) -> Option<TuneMode> {
        match s {
            "direct" => Some(TuneMode::Direct),
            "distill" => Some(TuneMode::Distill),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TuneConfig {
    pub mode: TuneMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub clip: f64,
    /// Weight of the drift penalty keeping adapted prompts near their input.
    pub beta: f64,
    /// Gradient-ascent schedule behind distillation targets.
    pub ascent: AscentConfig,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            mode: TuneMode::Direct,
            epochs: 20,
            batch_size: 64,
            adam: AdamConfig::default(),
            clip: 0.5,
            beta: 1.0,
            ascent: AscentConfig::default(),
            seed: 0,
        }
    }
}

/// Tune the adaptor on one task's data. Freezes the representation: after
/// this call the encoder and generator never change again.
pub fn improvement_tune(
    bundle: &mut ModelBundle,
    ds: &Dataset,
    cfg: &TuneConfig,
) -> Result<Vec<MetricsRow>, PipelineError> {
    check_compat(&bundle.cfg, &ds.manifest.env)?;
    if ds.episodes.is_empty() {
        return Err(PipelineError::Config("a dataset is empty".into()));
    }
    bundle.frozen_encoder = true;
    bundle.frozen_generator = true;
    let trajs: Vec<&Trajectory> = ds.episodes.iter().map(|e| &e.traj).collect();
    let rows = tune_adaptor_over(bundle, &trajs, cfg)?;
    bundle.provenance.insert(
        "tuned_on".into(),
        serde_json::to_string(&ds.manifest.env).expect("serializable spec"),
    );
    Ok(rows)
}

/// The adaptor-training loop shared by single-task tuning and the tail of
/// multi-task training. Expects the representation already frozen.
pub(crate) fn tune_adaptor_over(
    bundle: &mut ModelBundle,
    trajs: &[&Trajectory],
    cfg: &TuneConfig,
) -> Result<Vec<MetricsRow>, PipelineError> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(PipelineError::Config("degenerate tuning schedule".into()));
    }
    let stage = match cfg.mode {
        TuneMode::Direct => "tune_direct",
        TuneMode::Distill => "tune_distill",
    };

    // Both frozen networks make per-episode prompts (and distillation
    // targets) constants; compute them once up front.
    let prompts: Vec<Tensor> = parallel_map(trajs, |t| encode(bundle, None, t))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let targets: Option<Vec<Tensor>> = match cfg.mode {
        TuneMode::Direct => None,
        TuneMode::Distill => {
            let idx: Vec<usize> = (0..trajs.len()).collect();
            let outs = parallel_map(&idx, |&i| {
                prompt_ascent(&bundle.cfg, &bundle.generator, &prompts[i], trajs[i], &cfg.ascent)
                    .map(|o| o.prompt)
            });
            Some(outs.into_iter().collect::<Result<_, _>>()?)
        }
    };

    let mut adam = Adam::new(cfg.adam);
    let mut rows = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut rng = RngStream::new(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..trajs.len()).collect();
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            batches += 1;
            let mut g = Graph::new();
            let mut p = Bound::new();
            p.bind(&mut g, &bundle.adaptor, true);
            if cfg.mode == TuneMode::Direct {
                p.bind(&mut g, &bundle.generator, false);
            }
            let mut total: Option<crate::autodiff::NodeId> = None;
            for &i in chunk {
                let term = match (cfg.mode, &targets) {
                    (TuneMode::Direct, _) => adaptor_direct_loss(
                        &mut g,
                        &bundle.cfg,
                        &p,
                        &prompts[i],
                        trajs[i],
                        cfg.beta,
                    )?,
                    (TuneMode::Distill, Some(ts)) => adaptor_distill_loss(
                        &mut g,
                        &bundle.cfg,
                        &p,
                        &prompts[i],
                        &ts[i],
                        cfg.beta,
                    )?,
                    (TuneMode::Distill, None) => unreachable!("targets precomputed"),
                };
                total = Some(match total {
                    Some(t) => g.add(t, term)?,
                    None => term,
                });
            }
            let sum = total.expect("nonempty chunk");
            let loss = g.scale(sum, 1.0 / chunk.len() as f64)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(PipelineError::NonFinite {
                    stage,
                    epoch,
                    batch: batches,
                });
            }
            loss_sum += value;
            g.backward(loss)?;
            let mut grads = p.grads_for(&g, &bundle.adaptor);
            clip_global_norm(&mut [&mut grads], cfg.clip);
            adam.step(&mut [(&mut bundle.adaptor, &grads)])?;
        }
        rows.push(MetricsRow {
            stage,
            epoch,
            l1: None,
            l2_traj: None,
            l2_return: None,
            l2_task: None,
            adaptor_loss: Some(loss_sum / batches as f64),
            eval_return_mean: None,
            eval_return_std: None,
            wall_seconds: Some(started.elapsed().as_secs_f64()),
        });
    }

    bundle
        .provenance
        .insert("tune_mode".into(), cfg.mode.name().into());
    Ok(rows)
}
