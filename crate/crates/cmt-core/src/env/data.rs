//! Offline dataset generation and the JSONL on-disk format.
//!
//! A dataset file is one manifest line followed by one line per episode.
//! Floats in episode lines are written with 17 significant digits, so every
//! f64 round-trips bit-exactly and same-seed generation produces
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvError, EnvSpec, Tier, HORIZON};
use crate::model::ActionKind;
use crate::rng::RngStream;
use crate::traj::{Actions, Trajectory};

pub const FORMAT_VERSION: u32 = 1;
/// Episode count behind the normalization anchors in every manifest.
pub const REF_EPISODES: usize = 200;
/// Seed of the anchor episodes. Fixed so anchors never depend on the
/// dataset's own seed.
pub const REF_SEED: u64 = 0x0A11_CE5E;

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// Per-episode seed; with the recorded actions it replays exactly.
    pub seed: u64,
    pub traj: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub env: EnvSpec,
    pub tier: Tier,
    pub n: usize,
    /// Mean return of scripted random play, for score normalization.
    pub random_ref: f64,
    /// Mean return of the scripted expert.
    pub expert_ref: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub episodes: Vec<Episode>,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("episode {index} does not replay from its seed: {msg}")]
    Replay { index: usize, msg: String },
}

fn parse_err(line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Seed for episode `index` of a dataset generated with `seed`.
pub fn episode_seed(seed: u64, index: u64) -> u64 {
    RngStream::new(seed, index).next_u64()
}

/// Mean returns of scripted random and expert play on `spec`, from
/// [`REF_EPISODES`] episodes seeded independently of any dataset.
pub fn reference_returns(spec: &EnvSpec) -> Result<(f64, f64), EnvError> {
    let mean = |tier: Tier| -> Result<f64, EnvError> {
        let mut total = 0.0;
        for i in 0..REF_EPISODES {
            let seed = episode_seed(REF_SEED, i as u64);
            total += spec.run_episode(tier, seed)?.traj.ret();
        }
        Ok(total / REF_EPISODES as f64)
    };
    Ok((mean(Tier::Random)?, mean(Tier::Expert)?))
}

/// Generate `n` episodes of `tier` play on `spec`.
pub fn generate_dataset(
    spec: &EnvSpec,
    tier: Tier,
    n: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut episodes = Vec::with_capacity(n);
    for i in 0..n {
        episodes.push(spec.run_episode(tier, episode_seed(seed, i as u64))?);
    }
    let (random_ref, expert_ref) = reference_returns(spec)?;
    Ok(Dataset {
        manifest: Manifest {
            format_version: FORMAT_VERSION,
            env: *spec,
            tier,
            n,
            random_ref,
            expert_ref,
        },
        episodes,
    })
}

/// `{:.16e}` — 17 significant digits, enough for exact f64 round-trips.
fn push_f64(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

fn push_f64_array(out: &mut String, vals: &[f64]) {
    out.push('[');
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_f64(out, *v);
    }
    out.push(']');
}

fn episode_line(ep: &Episode) -> String {
    let mut out = String::with_capacity(4096);
    let _ = write!(out, r#"{{"seed":{},"states":["#, ep.seed);
    for (i, s) in ep.traj.states.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_f64_array(&mut out, s);
    }
    out.push_str("],\"actions\":[");
    match &ep.traj.actions {
        Actions::Continuous(rows) => {
            for (i, r) in rows.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                push_f64_array(&mut out, r);
            }
        }
        Actions::Discrete(ks) => {
            for (i, k) in ks.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{k}");
            }
        }
    }
    out.push_str("],\"rewards\":");
    push_f64_array(&mut out, &ep.traj.rewards);
    out.push('}');
    out
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut out = serde_json::to_string(&ds.manifest)
        .map_err(|e| DataError::Manifest(e.to_string()))?;
    out.push('\n');
    for ep in &ds.episodes {
        out.push_str(&episode_line(ep));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ActionsWire {
    Discrete(Vec<usize>),
    Continuous(Vec<Vec<f64>>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeWire {
    seed: u64,
    states: Vec<Vec<f64>>,
    actions: ActionsWire,
    rewards: Vec<f64>,
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| DataError::Manifest("file is empty".into()))?;
    let manifest: Manifest =
        serde_json::from_str(first).map_err(|e| DataError::Manifest(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(DataError::Manifest(format!(
            "format_version {} is not supported (this build reads {})",
            manifest.format_version, FORMAT_VERSION
        )));
    }
    manifest.env.validate()?;
    if !(manifest.expert_ref - manifest.random_ref).is_finite() {
        return Err(DataError::Manifest("non-finite reference returns".into()));
    }

    let state_dim = manifest.env.state_dim();
    let kind = manifest.env.action_kind();
    let mut episodes = Vec::with_capacity(manifest.n);
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let wire: EpisodeWire =
            serde_json::from_str(line).map_err(|e| parse_err(line_no, e.to_string()))?;
        let actions = match (wire.actions, kind) {
            (ActionsWire::Continuous(rows), ActionKind::Continuous { dim }) => {
                if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
                    return Err(parse_err(
                        line_no,
                        format!("action {bad:?} should have dim {dim}"),
                    ));
                }
                Actions::Continuous(rows)
            }
            (ActionsWire::Discrete(ks), ActionKind::Discrete { cardinality }) => {
                if let Some(bad) = ks.iter().find(|&&k| k >= cardinality) {
                    return Err(parse_err(
                        line_no,
                        format!("action {bad} is outside 0..{cardinality}"),
                    ));
                }
                Actions::Discrete(ks)
            }
            // An empty list parses as Discrete; episodes are never empty.
            _ => {
                return Err(parse_err(
                    line_no,
                    format!("actions do not match the manifest's {kind:?}"),
                ))
            }
        };
        let traj = Trajectory {
            states: wire.states,
            actions,
            rewards: wire.rewards,
        };
        if traj.steps() != HORIZON || !traj.has_trailing_state() {
            return Err(parse_err(
                line_no,
                format!(
                    "episode must have {HORIZON} steps and a trailing state, got {} steps / {} states",
                    traj.steps(),
                    traj.states.len()
                ),
            ));
        }
        if let Some(bad) = traj.states.iter().find(|s| s.len() != state_dim) {
            return Err(parse_err(
                line_no,
                format!("state {bad:?} should have dim {state_dim}"),
            ));
        }
        if traj.rewards.iter().any(|r| !r.is_finite())
            || traj.states.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(parse_err(line_no, "non-finite value"));
        }
        episodes.push(Episode {
            seed: wire.seed,
            traj,
        });
    }
    if episodes.len() != manifest.n {
        return Err(DataError::Manifest(format!(
            "manifest says {} episodes, file holds {}",
            manifest.n,
            episodes.len()
        )));
    }
    Ok(Dataset { manifest, episodes })
}

impl Dataset {
    /// Re-simulate every episode from its seed and recorded actions and
    /// check states and rewards match bit-for-bit.
    pub fn verify_replay(&self) -> Result<(), DataError> {
        for (index, ep) in self.episodes.iter().enumerate() {
            let mut env_rng = RngStream::new(ep.seed, 1);
            let mut state = self.manifest.env.initial_state(&mut env_rng);
            if state != ep.traj.states[0] {
                return Err(DataError::Replay {
                    index,
                    msg: "initial state differs".into(),
                });
            }
            for t in 0..ep.traj.steps() {
                let action = ep.traj.actions.get(t);
                let (next, reward) = self.manifest.env.step(&state, &action, &mut env_rng)?;
                if next != ep.traj.states[t + 1] || reward != ep.traj.rewards[t] {
                    return Err(DataError::Replay {
                        index,
                        msg: format!("divergence at step {t}"),
                    });
                }
                state = next;
            }
        }
        Ok(())
    }

    /// Range of episode returns, for the contrastive return margin.
    pub fn return_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for ep in &self.episodes {
            let r = ep.traj.ret();
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Dir;

    #[test]
    fn generation_is_deterministic_and_replayable() {
        let spec = EnvSpec::pointline(0.8).unwrap();
        let a = generate_dataset(&spec, Tier::Mixed, 6, 99).unwrap();
        let b = generate_dataset(&spec, Tier::Mixed, 6, 99).unwrap();
        for (x, y) in a.episodes.iter().zip(&b.episodes) {
            assert_eq!(x, y);
        }
        a.verify_replay().unwrap();
        let c = generate_dataset(&spec, Tier::Mixed, 6, 100).unwrap();
        assert_ne!(a.episodes[0], c.episodes[0]);
        // Anchors do not depend on the dataset seed.
        assert_eq!(a.manifest.random_ref, c.manifest.random_ref);
        assert_eq!(a.manifest.expert_ref, c.manifest.expert_ref);
        assert!(a.manifest.expert_ref > a.manifest.random_ref);
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for spec in [
            EnvSpec::pointline(-1.7).unwrap(),
            EnvSpec::gridgoal(Dir::Right),
            EnvSpec::chain(5),
        ] {
            let path = dir.path().join(format!("{}.jsonl", spec.family.name()));
            let ds = generate_dataset(&spec, Tier::Medium, 5, 7).unwrap();
            save_dataset(&ds, &path).unwrap();
            let loaded = load_dataset(&path).unwrap();
            assert_eq!(loaded.manifest, ds.manifest);
            for (a, b) in loaded.episodes.iter().zip(&ds.episodes) {
                assert_eq!(a, b, "round trip must be bit-exact");
            }
            loaded.verify_replay().unwrap();
        }
    }

    #[test]
    fn resave_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        let ds = generate_dataset(&EnvSpec::chain(1), Tier::Random, 4, 3).unwrap();
        save_dataset(&ds, &p1).unwrap();
        let loaded = load_dataset(&p1).unwrap();
        save_dataset(&loaded, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn load_reports_the_offending_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let ds = generate_dataset(&EnvSpec::gridgoal(Dir::Left), Tier::Random, 3, 1).unwrap();
        save_dataset(&ds, &path).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        // Corrupt the second episode line (file line 3).
        let third_start = text
            .match_indices('\n')
            .nth(1)
            .map(|(i, _)| i + 1)
            .unwrap();
        text.insert_str(third_start, "{broken");
        fs::write(&path, &text).unwrap();
        match load_dataset(&path) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_count_mismatch_and_bad_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let ds = generate_dataset(&EnvSpec::chain(0), Tier::Expert, 3, 1).unwrap();
        save_dataset(&ds, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.pop();
        fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(load_dataset(&path), Err(DataError::Manifest(_))));

        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        fs::write(&path, bumped).unwrap();
        match load_dataset(&path) {
            Err(DataError::Manifest(msg)) => assert!(msg.contains("format_version")),
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn tampered_rewards_fail_replay() {
        let mut ds = generate_dataset(&EnvSpec::chain(0), Tier::Expert, 2, 1).unwrap();
        ds.episodes[1].traj.rewards[4] += 1.0;
        match ds.verify_replay() {
            Err(DataError::Replay { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected replay error, got {other:?}"),
        }
    }

    #[test]
    fn return_range_spans_the_tiers() {
        let ds = generate_dataset(&EnvSpec::pointline(1.5).unwrap(), Tier::Mixed, 20, 2).unwrap();
        let (lo, hi) = ds.return_range();
        assert!(lo < hi);
        assert!(hi > ds.manifest.random_ref);
    }
}
