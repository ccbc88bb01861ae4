//! Checkpoint directories.
//!
//! ```text
//! <dir>/manifest       coupondt-checkpoint-v1, then `name<TAB>shape<TAB>byte offset` per tensor
//! <dir>/weights.bin    f32 little-endian values in manifest order
//! <dir>/config.toml    model config and inference conditioning
//! <dir>/normalizer.tsv state normalizer
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::datapipe::Normalizer;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "coupondt-checkpoint-v1";
const NORMALIZER_VERSION: &str = "coupondt-normalizer-v1";

/// Inference-time conditioning fitted on the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conditioning {
    /// Initial return-to-go target.
    pub rtg_target: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub normalizer: Normalizer,
    pub conditioning: Conditioning,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: ModelConfig,
    conditioning: Conditioning,
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x")
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    let p = &ckpt.params;
    p.check_finite("checkpoint")?;
    if ckpt.normalizer.dim() != p.config.state_dim {
        return Err(Error::Shape("normalizer dimension differs from state_dim".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("{CHECKPOINT_VERSION}\n");
    let mut blob = Vec::with_capacity(p.n_params() * 4);
    p.visit(|name, _, t| {
        let _ = writeln!(manifest, "{name}\t{}\t{}", shape_str(&t.shape), blob.len());
        for v in &t.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    });
    write(&dir.join("manifest"), manifest)?;
    write(&dir.join("weights.bin"), blob)?;
    let cfg = ConfigFile { model: p.config.clone(), conditioning: ckpt.conditioning.clone() };
    let toml = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    write(&dir.join("config.toml"), toml)?;
    let mut norm = format!("{NORMALIZER_VERSION}\tdim={}\n", ckpt.normalizer.dim());
    for (m, s) in ckpt.normalizer.mu.iter().zip(&ckpt.normalizer.sigma) {
        let _ = writeln!(norm, "{m:.16e}\t{s:.16e}");
    }
    write(&dir.join("normalizer.tsv"), norm)
}

/// Load a checkpoint and require its model config to equal `expected`.
pub fn load_checkpoint_for(dir: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(dir)?;
    if &ckpt.params.config != expected {
        return Err(Error::Checkpoint {
            path: dir.to_path_buf(),
            msg: format!("config mismatch: checkpoint has {:?}, expected {:?}", ckpt.params.config, expected),
        });
    }
    Ok(ckpt)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let fail = |msg: String| Error::Checkpoint { path: dir.to_path_buf(), msg };
    if !dir.is_dir() {
        return Err(fail("no such checkpoint directory".into()));
    }
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| Error::io(path, e))
    };
    let text = |name: &str| -> Result<String> {
        String::from_utf8(read(name)?).map_err(|_| fail(format!("{name} is not UTF-8")))
    };

    let cfg: ConfigFile =
        toml::from_str(&text("config.toml")?).map_err(|e| fail(format!("config.toml: {e}")))?;
    cfg.model.validate()?;
    let mut params = ModelParams::<f32>::zeros(&cfg.model);

    let manifest = text("manifest")?;
    let mut lines = manifest.lines();
    match lines.next() {
        Some(CHECKPOINT_VERSION) => {}
        Some(other) => {
            return Err(Error::Version {
                path: dir.join("manifest"),
                found: other.to_string(),
                expected: CHECKPOINT_VERSION,
            })
        }
        None => return Err(fail("empty manifest".into())),
    }
    let blob = read("weights.bin")?;
    let mut offset = 0usize;
    let mut err = None;
    params.visit_mut(|name, _, t| {
        if err.is_some() {
            return;
        }
        let want = format!("{name}\t{}\t{offset}", shape_str(&t.shape));
        let line = lines.next();
        if line != Some(want.as_str()) {
            err = Some(match line.map(|l| l.split('\t').collect::<Vec<_>>()) {
                Some(f) if f.first() == Some(&name) => format!(
                    "tensor {name}: manifest entry {:?}, expected shape {} at offset {offset}",
                    f[1..].join(" "),
                    shape_str(&t.shape)
                ),
                Some(f) => format!("expected tensor {name}, manifest lists {:?}", f.first().unwrap_or(&"")),
                None => format!("manifest ends before tensor {name}"),
            });
            return;
        }
        let end = offset + 4 * t.len();
        let Some(bytes) = blob.get(offset..end) else {
            err = Some(format!("weights.bin truncated inside tensor {name}"));
            return;
        };
        for (v, c) in t.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        offset = end;
    });
    if let Some(msg) = err {
        return Err(fail(msg));
    }
    if let Some(extra) = lines.find(|l| !l.is_empty()) {
        return Err(fail(format!("unexpected manifest entry {extra:?}")));
    }
    if blob.len() != offset {
        return Err(fail(format!("weights.bin holds {} bytes, manifest covers {offset}", blob.len())));
    }

    let norm_text = text("normalizer.tsv")?;
    let mut nl = norm_text.lines();
    let header = nl.next().unwrap_or("");
    let dim_ok = header.strip_prefix(NORMALIZER_VERSION).and_then(|r| r.strip_prefix("\tdim="));
    if dim_ok.and_then(|d| d.parse::<usize>().ok()) != Some(cfg.model.state_dim) {
        return Err(fail(format!("normalizer.tsv header {header:?} does not match state_dim")));
    }
    let mut normalizer = Normalizer { mu: Vec::new(), sigma: Vec::new() };
    for (i, line) in nl.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let parsed = (f.len() == 2).then(|| (f[0].parse::<f64>(), f[1].parse::<f64>()));
        match parsed {
            Some((Ok(m), Ok(s))) if s > 0.0 => {
                normalizer.mu.push(m);
                normalizer.sigma.push(s);
            }
            _ => return Err(fail(format!("normalizer.tsv line {}: malformed", i + 2))),
        }
    }
    if normalizer.dim() != cfg.model.state_dim {
        return Err(fail("normalizer.tsv row count does not match state_dim".into()));
    }
    Ok(Checkpoint { params, normalizer, conditioning: cfg.conditioning })
}
