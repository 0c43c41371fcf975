//! Line-oriented `key = value` run configuration.
//!
//! Precedence is defaults < file < flags. Unknown keys are rejected with
//! their line number so a misspelled hyperparameter can never fall back to
//! its default silently. `#` starts a comment line; later occurrences of a
//! key override earlier ones.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cmt_core::model::{ActionKind, ModelConfig};
use cmt_core::optim::AdamConfig;
use cmt_core::pipeline::{MetaTestConfig, TrainConfig, TuneConfig, TuneMode};

/// Every settable key, each optional so a command can tell "set by file or
/// flag" apart from "use the stage default".
#[derive(Debug, Default, Clone)]
pub struct Settings {
    // model shape
    pub embed_dim: Option<usize>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub prompt_len: Option<usize>,
    // optimizer
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub weight_decay: Option<f64>,
    // training loop
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub clip: Option<f64>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub frag_len: Option<usize>,
    pub margin_frac: Option<f64>,
    // improvement stage
    pub beta: Option<f64>,
    pub ascent_steps: Option<usize>,
    pub ascent_step_size: Option<f64>,
    pub mode: Option<String>,
    // deployment and evaluation
    pub episodes: Option<usize>,
    pub ctx_len: Option<usize>,
    pub buffer_cap: Option<usize>,
    /// Keep wall-clock timings in persisted metrics CSVs. Off by default so
    /// identically seeded runs write identical files.
    pub timing: Option<bool>,
    // run identity and paths
    pub seed: Option<u64>,
    pub env: Option<String>,
    pub tier: Option<String>,
    pub n: Option<usize>,
    pub data: Option<String>,
    pub ckpt: Option<String>,
    pub out: Option<String>,
}

pub fn load_settings(path: Option<&Path>) -> Result<Settings> {
    match path {
        None => Ok(Settings::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            parse_str(&text, &p.display().to_string())
        }
    }
}

pub fn parse_str(text: &str, origin: &str) -> Result<Settings> {
    let mut s = Settings::default();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{origin}:{line_no}: expected `key = value`, got `{line}`");
        };
        s.set(key.trim(), value.trim(), origin, line_no)?;
    }
    Ok(s)
}

impl Settings {
    fn set(&mut self, key: &str, raw: &str, origin: &str, line: usize) -> Result<()> {
        fn uint(raw: &str, origin: &str, line: usize, key: &str) -> Result<usize> {
            raw.parse()
                .with_context(|| format!("{origin}:{line}: `{key}` expects an integer, got `{raw}`"))
        }
        fn uint64(raw: &str, origin: &str, line: usize, key: &str) -> Result<u64> {
            raw.parse()
                .with_context(|| format!("{origin}:{line}: `{key}` expects an integer, got `{raw}`"))
        }
        fn float(raw: &str, origin: &str, line: usize, key: &str) -> Result<f64> {
            raw.parse()
                .with_context(|| format!("{origin}:{line}: `{key}` expects a number, got `{raw}`"))
        }
        fn boolean(raw: &str, origin: &str, line: usize, key: &str) -> Result<bool> {
            match raw {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => bail!("{origin}:{line}: `{key}` expects `true` or `false`, got `{raw}`"),
            }
        }
        match key {
            "embed_dim" => self.embed_dim = Some(uint(raw, origin, line, key)?),
            "layers" => self.layers = Some(uint(raw, origin, line, key)?),
            "heads" => self.heads = Some(uint(raw, origin, line, key)?),
            "prompt_len" => self.prompt_len = Some(uint(raw, origin, line, key)?),
            "lr" => self.lr = Some(float(raw, origin, line, key)?),
            "beta1" => self.beta1 = Some(float(raw, origin, line, key)?),
            "beta2" => self.beta2 = Some(float(raw, origin, line, key)?),
            "eps" => self.eps = Some(float(raw, origin, line, key)?),
            "weight_decay" => self.weight_decay = Some(float(raw, origin, line, key)?),
            "epochs" => self.epochs = Some(uint(raw, origin, line, key)?),
            "batch_size" => self.batch_size = Some(uint(raw, origin, line, key)?),
            "clip" => self.clip = Some(float(raw, origin, line, key)?),
            "gamma" => self.gamma = Some(float(raw, origin, line, key)?),
            "alpha" => self.alpha = Some(float(raw, origin, line, key)?),
            "frag_len" => self.frag_len = Some(uint(raw, origin, line, key)?),
            "margin_frac" => self.margin_frac = Some(float(raw, origin, line, key)?),
            "beta" => self.beta = Some(float(raw, origin, line, key)?),
            "ascent_steps" => self.ascent_steps = Some(uint(raw, origin, line, key)?),
            "ascent_step_size" => self.ascent_step_size = Some(float(raw, origin, line, key)?),
            "mode" => self.mode = Some(raw.to_string()),
            "episodes" => self.episodes = Some(uint(raw, origin, line, key)?),
            "ctx_len" => self.ctx_len = Some(uint(raw, origin, line, key)?),
            "buffer_cap" => self.buffer_cap = Some(uint(raw, origin, line, key)?),
            "timing" => self.timing = Some(boolean(raw, origin, line, key)?),
            "seed" => self.seed = Some(uint64(raw, origin, line, key)?),
            "env" => self.env = Some(raw.to_string()),
            "tier" => self.tier = Some(raw.to_string()),
            "n" => self.n = Some(uint(raw, origin, line, key)?),
            "data" => self.data = Some(raw.to_string()),
            "ckpt" => self.ckpt = Some(raw.to_string()),
            "out" => self.out = Some(raw.to_string()),
            _ => bail!("{origin}:{line}: unknown key `{key}`"),
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        let mut a = AdamConfig::default();
        if let Some(v) = self.lr {
            a.lr = v;
        }
        if let Some(v) = self.beta1 {
            a.beta1 = v;
        }
        if let Some(v) = self.beta2 {
            a.beta2 = v;
        }
        if let Some(v) = self.eps {
            a.eps = v;
        }
        if let Some(v) = self.weight_decay {
            a.weight_decay = v;
        }
        a
    }

    pub fn model_config(&self, state_dim: usize, action_kind: ActionKind) -> ModelConfig {
        let mut m = ModelConfig::base(state_dim, action_kind);
        if let Some(v) = self.embed_dim {
            m.embed_dim = v;
        }
        if let Some(v) = self.layers {
            m.layers = v;
        }
        if let Some(v) = self.heads {
            m.heads = v;
        }
        if let Some(v) = self.prompt_len {
            m.prompt_len = v;
        }
        m
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut t = TrainConfig {
            adam: self.adam(),
            seed,
            ..TrainConfig::default()
        };
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.clip {
            t.clip = v;
        }
        if let Some(v) = self.gamma {
            t.gamma = v;
        }
        if let Some(v) = self.alpha {
            t.alpha = v;
        }
        if let Some(v) = self.frag_len {
            t.frag_len = v;
        }
        if let Some(v) = self.margin_frac {
            t.margin_frac = v;
        }
        t
    }

    pub fn tune_config(&self, seed: u64, mode: TuneMode) -> TuneConfig {
        let mut t = TuneConfig {
            mode,
            adam: self.adam(),
            seed,
            ..TuneConfig::default()
        };
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.clip {
            t.clip = v;
        }
        if let Some(v) = self.beta {
            t.beta = v;
        }
        if let Some(v) = self.ascent_steps {
            t.ascent.steps = v;
        }
        if let Some(v) = self.ascent_step_size {
            t.ascent.step_size = v;
        }
        t
    }

    pub fn meta_test_config(&self, seed: u64) -> MetaTestConfig {
        let mut m = MetaTestConfig {
            seed,
            ..MetaTestConfig::default()
        };
        if let Some(v) = self.episodes {
            m.episodes = v;
        }
        if let Some(v) = self.ctx_len {
            m.ctx_len = v;
        }
        if let Some(v) = self.buffer_cap {
            m.buffer_cap = v;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_keeps_all_defaults() {
        let s = parse_str("", "t").unwrap();
        let t = s.train_config(0);
        assert_eq!(t.epochs, TrainConfig::default().epochs);
        assert_eq!(s.adam().lr, AdamConfig::default().lr);
    }

    #[test]
    fn comments_blanks_and_last_wins() {
        let text = "# a comment\n\nlr = 0.001\nlr = 0.01\n  epochs =  3  \n";
        let s = parse_str(text, "t").unwrap();
        assert_eq!(s.lr, Some(0.01));
        assert_eq!(s.epochs, Some(3));
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let err = parse_str("lr = 0.1\n\nfoo = 1\n", "run.conf").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("run.conf:3"), "{msg}");
        assert!(msg.contains("unknown key `foo`"), "{msg}");
    }

    #[test]
    fn type_mismatch_names_key_line_and_type() {
        let err = parse_str("epochs = fast\n", "run.conf").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("run.conf:1"), "{msg}");
        assert!(msg.contains("`epochs` expects an integer"), "{msg}");

        let err = parse_str("timing = yes\n", "run.conf").unwrap_err();
        assert!(format!("{err:#}").contains("expects `true` or `false`"));
    }

    #[test]
    fn missing_equals_is_rejected() {
        let err = parse_str("epochs 3\n", "t").unwrap_err();
        assert!(format!("{err:#}").contains("expected `key = value`"));
    }

    #[test]
    fn file_values_flow_into_stage_configs() {
        let text = "epochs = 7\nlr = 0.5\nbeta = 2.0\nascent_steps = 3\nctx_len = 4\nmode = distill\n";
        let s = parse_str(text, "t").unwrap();
        let tr = s.train_config(9);
        assert_eq!((tr.epochs, tr.adam.lr, tr.seed), (7, 0.5, 9));
        let tu = s.tune_config(9, TuneMode::Distill);
        assert_eq!((tu.epochs, tu.beta, tu.ascent.steps), (7, 2.0, 3));
        let mt = s.meta_test_config(9);
        assert_eq!(mt.ctx_len, 4);
        assert_eq!(mt.buffer_cap, MetaTestConfig::default().buffer_cap);
    }
}
