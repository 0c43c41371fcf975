//! Binary checkpoint format.
//!
//! Layout: the magic `CMT1`, a length-prefixed `key = value` text block
//! (model config, freeze flags, free-form `meta.*` provenance), then a
//! length-prefixed list of named tensors (u32 name length, name bytes, u32
//! rank, u32 dims, f64 little-endian data). Tensors are written in sorted
//! name order per set, so saving the same bundle twice produces identical
//! bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::model::params::parameter_specs;
use crate::model::{ActionKind, ConfigError, ModelBundle, ModelConfig};
use crate::optim::ParamSet;
use crate::Tensor;

const MAGIC: &[u8; 4] = b"CMT1";
/// Per-tensor element cap; rejects absurd dims before allocating.
const MAX_NUMEL: usize = 1 << 28;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint does not match the parameter inventory: {0}")]
    Inventory(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn action_kind_str(k: ActionKind) -> String {
    match k {
        ActionKind::Continuous { dim } => format!("continuous:{dim}"),
        ActionKind::Discrete { cardinality } => format!("discrete:{cardinality}"),
    }
}

fn parse_action_kind(s: &str) -> Result<ActionKind, CheckpointError> {
    let bad = || CheckpointError::Malformed(format!("bad action_kind `{s}`"));
    let (kind, num) = s.split_once(':').ok_or_else(bad)?;
    let n: usize = num.parse().map_err(|_| bad())?;
    match kind {
        "continuous" => Ok(ActionKind::Continuous { dim: n }),
        "discrete" => Ok(ActionKind::Discrete { cardinality: n }),
        _ => Err(bad()),
    }
}

fn config_block(bundle: &ModelBundle) -> Result<String, CheckpointError> {
    let c = &bundle.cfg;
    let mut out = String::new();
    let _ = writeln!(out, "embed_dim = {}", c.embed_dim);
    let _ = writeln!(out, "layers = {}", c.layers);
    let _ = writeln!(out, "heads = {}", c.heads);
    let _ = writeln!(out, "prompt_len = {}", c.prompt_len);
    let _ = writeln!(out, "max_horizon = {}", c.max_horizon);
    let _ = writeln!(out, "state_dim = {}", c.state_dim);
    let _ = writeln!(out, "action_kind = {}", action_kind_str(c.action_kind));
    let _ = writeln!(out, "dropout = {:.16e}", c.dropout);
    let _ = writeln!(out, "frozen_encoder = {}", bundle.frozen_encoder);
    let _ = writeln!(out, "frozen_generator = {}", bundle.frozen_generator);
    for (k, v) in &bundle.provenance {
        if k.contains('\n') || k.contains(" = ") || v.contains('\n') {
            return Err(CheckpointError::Malformed(format!(
                "provenance entry `{k}` contains a newline or ` = `"
            )));
        }
        let _ = writeln!(out, "meta.{k} = {v}");
    }
    Ok(out)
}

fn push_u32(buf: &mut Vec<u8>, v: usize) -> Result<(), CheckpointError> {
    let v = u32::try_from(v)
        .map_err(|_| CheckpointError::Malformed(format!("length {v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn push_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<(), CheckpointError> {
    push_u32(buf, name.len())?;
    buf.extend_from_slice(name.as_bytes());
    push_u32(buf, t.shape().len())?;
    for &d in t.shape() {
        push_u32(buf, d)?;
    }
    buf.extend_from_slice(&t.to_f64_le_bytes());
    Ok(())
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let cfg_text = config_block(bundle)?;
    push_u32(&mut buf, cfg_text.len())?;
    buf.extend_from_slice(cfg_text.as_bytes());
    let total = bundle.encoder.len() + bundle.generator.len() + bundle.adaptor.len();
    push_u32(&mut buf, total)?;
    for set in [&bundle.encoder, &bundle.generator, &bundle.adaptor] {
        for (name, t) in set.iter() {
            push_tensor(&mut buf, name, t)?;
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Malformed(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

fn parse_config(
    text: &str,
) -> Result<(ModelConfig, bool, bool, BTreeMap<String, String>), CheckpointError> {
    let mut kv = BTreeMap::new();
    let mut provenance = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once(" = ").ok_or_else(|| {
            CheckpointError::Malformed(format!("config line {} is not `key = value`", i + 1))
        })?;
        if let Some(meta) = k.strip_prefix("meta.") {
            provenance.insert(meta.to_string(), v.to_string());
        } else {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let mut get = |k: &str| {
        kv.remove(k)
            .ok_or_else(|| CheckpointError::Malformed(format!("config key `{k}` missing")))
    };
    let usize_of = |k: &str, v: String| {
        v.parse::<usize>()
            .map_err(|_| CheckpointError::Malformed(format!("config key `{k}`: bad integer `{v}`")))
    };
    let bool_of = |k: &str, v: String| {
        v.parse::<bool>()
            .map_err(|_| CheckpointError::Malformed(format!("config key `{k}`: bad bool `{v}`")))
    };
    let cfg = ModelConfig {
        embed_dim: usize_of("embed_dim", get("embed_dim")?)?,
        layers: usize_of("layers", get("layers")?)?,
        heads: usize_of("heads", get("heads")?)?,
        prompt_len: usize_of("prompt_len", get("prompt_len")?)?,
        max_horizon: usize_of("max_horizon", get("max_horizon")?)?,
        state_dim: usize_of("state_dim", get("state_dim")?)?,
        action_kind: parse_action_kind(&get("action_kind")?)?,
        dropout: get("dropout")?.parse::<f64>().map_err(|_| {
            CheckpointError::Malformed("config key `dropout`: bad float".into())
        })?,
    };
    let frozen_encoder = bool_of("frozen_encoder", get("frozen_encoder")?)?;
    let frozen_generator = bool_of("frozen_generator", get("frozen_generator")?)?;
    if let Some((k, _)) = kv.into_iter().next() {
        return Err(CheckpointError::Malformed(format!(
            "unknown config key `{k}`"
        )));
    }
    cfg.validate()?;
    Ok((cfg, frozen_encoder, frozen_generator, provenance))
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle, CheckpointError> {
    let bytes = fs::read(path)?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let cfg_len = r.u32()?;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
        .map_err(|_| CheckpointError::Malformed("config block is not UTF-8".into()))?;
    let (cfg, frozen_encoder, frozen_generator, provenance) = parse_config(cfg_text)?;

    let n_tensors = r.u32()?;
    let mut loaded: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..n_tensors {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()?);
        }
        let numel: usize = shape.iter().product();
        if numel > MAX_NUMEL {
            return Err(CheckpointError::Malformed(format!(
                "tensor `{name}` claims {numel} elements"
            )));
        }
        let raw = r.take(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        let t = Tensor::from_vec(&shape, data)
            .map_err(|e| CheckpointError::Malformed(format!("tensor `{name}`: {e}")))?;
        if loaded.insert(name.clone(), t).is_some() {
            return Err(CheckpointError::Malformed(format!(
                "tensor `{name}` appears twice"
            )));
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }

    // Route into sets and check the exact inventory for this config.
    let specs = parameter_specs(&cfg);
    let mut encoder = ParamSet::new();
    let mut generator = ParamSet::new();
    let mut adaptor = ParamSet::new();
    for spec in &specs {
        let t = loaded.remove(&spec.name).ok_or_else(|| {
            CheckpointError::Inventory(format!("`{}` is missing", spec.name))
        })?;
        if t.shape() != &spec.shape[..] {
            return Err(CheckpointError::Inventory(format!(
                "`{}` has shape {:?}, expected {:?}",
                spec.name,
                t.shape(),
                spec.shape
            )));
        }
        if !t.all_finite() {
            return Err(CheckpointError::Malformed(format!(
                "`{}` contains non-finite values",
                spec.name
            )));
        }
        let set = match spec.name.split('.').next() {
            Some("enc") => &mut encoder,
            Some("gen") => &mut generator,
            Some("adapt") => &mut adaptor,
            _ => unreachable!("inventory names always carry a known prefix"),
        };
        set.insert(spec.name.clone(), t);
    }
    if let Some((name, _)) = loaded.into_iter().next() {
        return Err(CheckpointError::Inventory(format!(
            "`{name}` is not part of this config's inventory"
        )));
    }

    Ok(ModelBundle {
        cfg,
        encoder,
        generator,
        adaptor,
        frozen_encoder,
        frozen_generator,
        provenance,
    })
}
