//! Per-epoch training metrics and their CSV form.

use std::fmt::Write as _;

/// One row of a run's metrics stream: an epoch of a training stage, or an
/// evaluation snapshot. Columns missing from a row stay empty in the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub stage: &'static str,
    /// 1-based epoch index.
    pub epoch: usize,
    /// Reconstruction loss over states, actions, and rewards.
    pub l1: Option<f64>,
    /// Same-trajectory contrastive loss.
    pub l2_traj: Option<f64>,
    /// Return-ordering contrastive loss.
    pub l2_return: Option<f64>,
    /// Same-task contrastive loss (multi-task stages only).
    pub l2_task: Option<f64>,
    /// Improvement-stage adaptor objective.
    pub adaptor_loss: Option<f64>,
    pub eval_return_mean: Option<f64>,
    pub eval_return_std: Option<f64>,
    /// Wall-clock time of the epoch. The one column that varies between
    /// otherwise identical runs, so persisted CSVs keep it only when timing
    /// is explicitly requested; see [`strip_wall_seconds`].
    pub wall_seconds: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str = "stage,epoch,L1,L2_traj,L2_return,L2_task,\
                                      adaptor_loss,eval_return_mean,eval_return_std,wall_seconds";

/// Clear the timing column so the CSV is byte-stable across identically
/// seeded runs.
pub fn strip_wall_seconds(rows: &mut [MetricsRow]) {
    for r in rows {
        r.wall_seconds = None;
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    fn cell(v: Option<f64>) -> String {
        v.map(|x| format!("{x:.6}")).unwrap_or_default()
    }
    let mut out = String::with_capacity(rows.len() * 96 + 96);
    out.push_str(METRICS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.stage,
            r.epoch,
            cell(r.l1),
            cell(r.l2_traj),
            cell(r.l2_return),
            cell(r.l2_task),
            cell(r.adaptor_loss),
            cell(r.eval_return_mean),
            cell(r.eval_return_std),
            r.wall_seconds.map(|w| format!("{w:.3}")).unwrap_or_default(),
        );
    }
    out
}
