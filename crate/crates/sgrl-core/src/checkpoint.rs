//! Bit-exact checkpoint serialization.
//!
//! Layout: magic "SGRL", version u32 LE, config block (u32 LE byte length +
//! UTF-8 key=value lines), tensor count u32 LE, then per tensor: name length
//! u16 LE, UTF-8 name, rank u8, dims as u32 LE each, payload as f32 LE
//! row-major.

use crate::contrastive::ContrastiveEncoder;
use crate::encoder::IgEncoder;
use crate::error::{CheckpointError, Error, Result};
use crate::gbdt::ImportanceKind;
use crate::graph::ATTR_COUNT;
use crate::pipeline::{CheckpointBundle, PipelineConfig};
use crate::seed::stream_rng;
use crate::ssa::{PseudoLabelSpec, SsaEncoder};
use crate::tensor::Tensor;
use std::path::Path;

const MAGIC: &[u8; 4] = b"SGRL";
const VERSION: u32 = 1;

pub fn save_checkpoint(bundle: &CheckpointBundle, path: &Path) -> Result<()> {
    std::fs::write(path, serialize_bundle(bundle))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointBundle> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    deserialize_bundle(&bytes)
}

/// FNV-1a over the serialized bytes; detection must leave this unchanged.
pub fn bundle_checksum(bundle: &CheckpointBundle) -> u64 {
    let bytes = serialize_bundle(bundle);
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn serialize_bundle(bundle: &CheckpointBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());

    let config = config_block(&bundle.config, &bundle.pseudo);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());

    let tensors = named_tensors(bundle);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(tensor.dims().len() as u8);
        for &d in tensor.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn named_tensors(bundle: &CheckpointBundle) -> Vec<(String, &Tensor<f32>)> {
    let mut out = bundle.sss.named_tensors("sss.");
    out.extend(bundle.ss.named_tensors("ss."));
    out.extend(bundle.ssa.named_tensors("ssa."));
    out.extend(bundle.detect.named_tensors("det."));
    out
}

fn config_block(config: &PipelineConfig, pseudo: &PseudoLabelSpec) -> String {
    let importance = pseudo
        .importance
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let gbdt = &config.gbdt;
    format!(
        "f={}\nf1={}\nf_det={}\nf1_det={}\nk={}\nrho={}\nr_hat={}\nmax_epochs={}\n\
         probe_holdout={}\nprobe_patience={}\nlearning_rate={}\nsgrl_sa={}\nseed={}\n\
         gbdt.learning_rate={}\ngbdt.max_depth={}\ngbdt.n_estimators={}\ngbdt.subsample={}\n\
         gbdt.colsample_bytree={}\ngbdt.early_stopping_rounds={}\ngbdt.lambda={}\ngbdt.importance={}\n\
         pseudo.idx_a={}\npseudo.idx_b={}\npseudo.importance={}\n",
        config.f,
        config.f1,
        config.f_det,
        config.f1_det,
        config.k,
        config.rho,
        config.r_hat,
        config.max_epochs,
        config.probe_holdout,
        config.probe_patience,
        config.learning_rate,
        config.sgrl_sa,
        config.seed,
        gbdt.learning_rate,
        gbdt.max_depth,
        gbdt.n_estimators,
        gbdt.subsample,
        gbdt.colsample_bytree,
        gbdt.early_stopping_rounds,
        gbdt.lambda,
        match gbdt.importance {
            ImportanceKind::Gain => "gain",
            ImportanceKind::Frequency => "frequency",
        },
        pseudo.idx_a,
        pseudo.idx_b,
        importance,
    )
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.at + n > self.bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "unexpected end of file reading {what}"
            )));
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u16(&mut self, what: &str) -> std::result::Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> std::result::Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }
}

pub fn deserialize_bundle(bytes: &[u8]) -> Result<CheckpointBundle> {
    let mut r = Reader { bytes, at: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        }
        .into());
    }
    let config_len = r.u32("config length")? as usize;
    let config_bytes = r.take(config_len, "config block")?;
    let config_text = std::str::from_utf8(config_bytes)
        .map_err(|_| CheckpointError::Malformed("config block is not UTF-8".to_string()))?;
    let (config, pseudo) = parse_config_block(config_text)?;
    config
        .validate()
        .map_err(|e| CheckpointError::ShapeInconsistency(e.to_string()))?;

    // Skeleton with the right shapes; every tensor is then overwritten.
    let mut bundle = skeleton(&config, pseudo)?;

    let count = r.u32("tensor count")? as usize;
    let expected: Vec<(String, Vec<usize>)> = named_tensors(&bundle)
        .iter()
        .map(|(name, t)| (name.clone(), t.dims().to_vec()))
        .collect();
    if count != expected.len() {
        return Err(CheckpointError::ShapeInconsistency(format!(
            "checkpoint has {count} tensors, config implies {}",
            expected.len()
        ))
        .into());
    }
    let mut loaded: Vec<Vec<f32>> = Vec::with_capacity(count);
    for (name, dims) in &expected {
        let name_len = r.u16("tensor name length")? as usize;
        let got_name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".to_string()))?;
        if got_name != name {
            return Err(CheckpointError::ShapeInconsistency(format!(
                "expected tensor \"{name}\", found \"{got_name}\""
            ))
            .into());
        }
        let rank = r.u8("tensor rank")? as usize;
        if rank != dims.len() {
            return Err(CheckpointError::ShapeInconsistency(format!(
                "tensor \"{name}\": rank {rank}, config implies {:?}",
                dims
            ))
            .into());
        }
        let mut got_dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            got_dims.push(r.u32("tensor dim")? as usize);
        }
        if &got_dims != dims {
            return Err(CheckpointError::ShapeInconsistency(format!(
                "tensor \"{name}\": dims {got_dims:?}, config implies {dims:?}"
            ))
            .into());
        }
        let len: usize = dims.iter().product();
        let payload = match r.take(4 * len, "tensor payload") {
            Ok(p) => p,
            Err(_) => {
                return Err(CheckpointError::TruncatedTensor {
                    name: name.clone(),
                }
                .into())
            }
        };
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        loaded.push(data);
    }
    if r.at != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.at
        ))
        .into());
    }

    let mut tensors = bundle_tensors_mut(&mut bundle);
    for (t, data) in tensors.iter_mut().zip(loaded) {
        t.data_mut().copy_from_slice(&data);
    }
    Ok(bundle)
}

fn bundle_tensors_mut(bundle: &mut CheckpointBundle) -> Vec<&mut Tensor<f32>> {
    let mut out = bundle.sss.tensors_mut();
    out.extend(bundle.ss.tensors_mut());
    out.extend(bundle.ssa.tensors_mut());
    out.extend(bundle.detect.tensors_mut());
    out
}

fn skeleton(config: &PipelineConfig, pseudo: PseudoLabelSpec) -> Result<CheckpointBundle> {
    let enc_cfg = crate::encoder::EncoderConfig {
        f: config.f,
        f1: config.f1,
        f2: config.f2(),
        rho: config.rho,
    };
    let det_cfg = crate::encoder::EncoderConfig {
        f: config.f_det,
        f1: config.f1_det,
        f2: config.f2_det(),
        rho: config.rho,
    };
    let mut rng = stream_rng(0, "checkpoint-skeleton");
    Ok(CheckpointBundle {
        config: config.clone(),
        sss: ContrastiveEncoder::init(&enc_cfg, &mut rng)?,
        ss: ContrastiveEncoder::init(&enc_cfg, &mut rng)?,
        ssa: SsaEncoder::init(&enc_cfg, &mut rng)?,
        pseudo,
        detect: IgEncoder::init(&det_cfg, &mut rng)?,
    })
}

fn parse_config_block(text: &str) -> std::result::Result<(PipelineConfig, PseudoLabelSpec), CheckpointError> {
    let mut config = PipelineConfig::default();
    let mut pseudo = PseudoLabelSpec {
        idx_a: 0,
        idx_b: 1,
        importance: [0.0; ATTR_COUNT],
    };
    let bad = |key: &str, value: &str| {
        CheckpointError::Malformed(format!("bad config value {key}={value}"))
    };
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Malformed(format!("bad config line {line:?}")))?;
        match key {
            "f" => config.f = value.parse().map_err(|_| bad(key, value))?,
            "f1" => config.f1 = value.parse().map_err(|_| bad(key, value))?,
            "f_det" => config.f_det = value.parse().map_err(|_| bad(key, value))?,
            "f1_det" => config.f1_det = value.parse().map_err(|_| bad(key, value))?,
            "k" => config.k = value.parse().map_err(|_| bad(key, value))?,
            "rho" => config.rho = value.parse().map_err(|_| bad(key, value))?,
            "r_hat" => config.r_hat = value.parse().map_err(|_| bad(key, value))?,
            "max_epochs" => config.max_epochs = value.parse().map_err(|_| bad(key, value))?,
            "probe_holdout" => config.probe_holdout = value.parse().map_err(|_| bad(key, value))?,
            "probe_patience" => config.probe_patience = value.parse().map_err(|_| bad(key, value))?,
            "learning_rate" => config.learning_rate = value.parse().map_err(|_| bad(key, value))?,
            "sgrl_sa" => config.sgrl_sa = value.parse().map_err(|_| bad(key, value))?,
            "seed" => config.seed = value.parse().map_err(|_| bad(key, value))?,
            "gbdt.learning_rate" => {
                config.gbdt.learning_rate = value.parse().map_err(|_| bad(key, value))?
            }
            "gbdt.max_depth" => {
                config.gbdt.max_depth = value.parse().map_err(|_| bad(key, value))?
            }
            "gbdt.n_estimators" => {
                config.gbdt.n_estimators = value.parse().map_err(|_| bad(key, value))?
            }
            "gbdt.subsample" => {
                config.gbdt.subsample = value.parse().map_err(|_| bad(key, value))?
            }
            "gbdt.colsample_bytree" => {
                config.gbdt.colsample_bytree = value.parse().map_err(|_| bad(key, value))?
            }
            "gbdt.early_stopping_rounds" => {
                config.gbdt.early_stopping_rounds = value.parse().map_err(|_| bad(key, value))?
            }
            "gbdt.lambda" => config.gbdt.lambda = value.parse().map_err(|_| bad(key, value))?,
            "gbdt.importance" => {
                config.gbdt.importance = match value {
                    "gain" => ImportanceKind::Gain,
                    "frequency" => ImportanceKind::Frequency,
                    _ => return Err(bad(key, value)),
                }
            }
            "pseudo.idx_a" => pseudo.idx_a = value.parse().map_err(|_| bad(key, value))?,
            "pseudo.idx_b" => pseudo.idx_b = value.parse().map_err(|_| bad(key, value))?,
            "pseudo.importance" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != ATTR_COUNT {
                    return Err(bad(key, value));
                }
                for (slot, part) in pseudo.importance.iter_mut().zip(parts) {
                    *slot = part.parse().map_err(|_| bad(key, value))?;
                }
            }
            _ => {
                return Err(CheckpointError::Malformed(format!(
                    "unknown config key {key:?}"
                )))
            }
        }
    }
    if pseudo.idx_a >= ATTR_COUNT || pseudo.idx_b >= ATTR_COUNT || pseudo.idx_a == pseudo.idx_b {
        return Err(CheckpointError::Malformed(format!(
            "bad pseudo-label indices ({}, {})",
            pseudo.idx_a, pseudo.idx_b
        )));
    }
    Ok((config, pseudo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::GbdtConfig;
    use crate::pipeline::pretrain;
    use crate::synth;

    fn small_bundle(seed: u64) -> CheckpointBundle {
        let data = synth::generate(&synth::SynthConfig {
            n_normal: 60,
            n_motifs: 2,
            seed,
            ..synth::default_config()
        })
        .unwrap();
        let cfg = PipelineConfig {
            f: 2,
            f1: 4,
            f_det: 4,
            f1_det: 8,
            max_epochs: 2,
            seed,
            gbdt: GbdtConfig {
                n_estimators: 10,
                early_stopping_rounds: 5,
                ..GbdtConfig::default()
            },
            ..PipelineConfig::default()
        };
        pretrain(&data.graph, &cfg).unwrap().bundle
    }

    #[test]
    fn round_trip_is_identity() {
        let bundle = small_bundle(11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sgrl");
        save_checkpoint(&bundle, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(bundle, loaded);
        // saving the loaded bundle reproduces the bytes
        assert_eq!(serialize_bundle(&bundle), serialize_bundle(&loaded));
    }

    #[test]
    fn corruption_modes_give_distinct_errors() {
        let bundle = small_bundle(12);
        let bytes = serialize_bundle(&bundle);

        // bad magic
        let mut bad = bytes.clone();
        bad[0] = b'X';
        match deserialize_bundle(&bad) {
            Err(Error::Checkpoint(CheckpointError::BadMagic)) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }

        // version mismatch
        let mut bad = bytes.clone();
        bad[4] = 99;
        match deserialize_bundle(&bad) {
            Err(Error::Checkpoint(CheckpointError::VersionMismatch { found: 99, .. })) => {}
            other => panic!("expected VersionMismatch, got {other:?}"),
        }

        // truncated final tensor
        let bad = &bytes[..bytes.len() - 3];
        match deserialize_bundle(bad) {
            Err(Error::Checkpoint(CheckpointError::TruncatedTensor { name })) => {
                assert!(name.starts_with("det."), "truncated {name}");
            }
            other => panic!("expected TruncatedTensor, got {other:?}"),
        }

        // shape/config inconsistency: claim a different f1 in the config block
        let text = String::from_utf8(bytes.clone()).ok();
        let _ = text;
        let mut bad = bytes.clone();
        // find "f1=4" inside the config block and bump it
        let cfg_start = 4 + 4 + 4;
        let window = &bytes[cfg_start..cfg_start + 64];
        let pos = window.windows(5).position(|w| w == b"\nf1=4").unwrap();
        bad[cfg_start + pos + 4] = b'6';
        match deserialize_bundle(&bad) {
            Err(Error::Checkpoint(CheckpointError::ShapeInconsistency(_))) => {}
            other => panic!("expected ShapeInconsistency, got {other:?}"),
        }
    }

    #[test]
    fn checksum_tracks_content() {
        let a = small_bundle(13);
        let mut b = a.clone();
        assert_eq!(bundle_checksum(&a), bundle_checksum(&b));
        b.detect.head.b_p3.data_mut()[0] += 1.0;
        assert_ne!(bundle_checksum(&a), bundle_checksum(&b));
    }
}
