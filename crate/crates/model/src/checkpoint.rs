//! Versioned binary checkpoint format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        b"TANC"
//! version      u32
//! config       channels, smfm_count, rb_per_smfm, transformer_blocks,
//!              heads, patch_h, patch_w, scale          (u32 each)
//!              attention_scope, use_layer_norm, variant (u8 each)
//! per param    name_len u32, name bytes,
//!              dtype u8 (0 = f64, 1 = f32),
//!              rank u32, extents u32 × rank,
//!              raw values (8 or 4 bytes each)
//! ```
//!
//! Parameters are written in name order and read until EOF. The loader
//! rejects an unknown version and any parameter set that does not match
//! the config (missing, extra, or misshapen tensors).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use tanet_tensor::{Precision, Tensor};

use crate::params::expected_params;
use crate::{AttentionScope, ModelConfig, ModelError, Result, TANetParams, Variant};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TANC";

pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    params: &TANetParams,
    precision: Precision,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_config(&mut w, cfg)?;
    for (name, tensor) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let dtype: u8 = match precision {
            Precision::F64 => 0,
            Precision::F32 => 1,
        };
        w.write_all(&[dtype])?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &extent in tensor.shape() {
            w.write_all(&(extent as u32).to_le_bytes())?;
        }
        match precision {
            Precision::F64 => {
                for &v in tensor.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Precision::F32 => {
                for &v in tensor.data() {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, TANetParams)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "bad magic {magic:?}, not a TANC checkpoint"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unknown format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let cfg = read_config(&mut r)?;
    cfg.validate()?;

    let mut params = TANetParams::default();
    loop {
        let mut len_buf = [0u8; 4];
        match r.read(&mut len_buf)? {
            0 => break,
            4 => {}
            n => {
                r.read_exact(&mut len_buf[n..])?;
            }
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| ModelError::Checkpoint("parameter name is not UTF-8".into()))?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = match dtype[0] {
            0 => {
                let mut buf = vec![0u8; numel * 8];
                r.read_exact(&mut buf)?;
                buf.chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            }
            1 => {
                let mut buf = vec![0u8; numel * 4];
                r.read_exact(&mut buf)?;
                buf.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                    .collect()
            }
            other => {
                return Err(ModelError::Checkpoint(format!(
                    "unknown dtype tag {other} for parameter {name}"
                )))
            }
        };
        if params.contains(&name) {
            return Err(ModelError::Checkpoint(format!("duplicate parameter {name}")));
        }
        params.insert(name, Tensor::new(shape, data).map_err(ModelError::Tensor)?);
    }

    validate_against_config(&cfg, &params)?;
    Ok((cfg, params))
}

fn validate_against_config(cfg: &ModelConfig, params: &TANetParams) -> Result<()> {
    let expected = expected_params(cfg);
    if expected.len() != params.len() {
        return Err(ModelError::Checkpoint(format!(
            "config expects {} parameters, checkpoint holds {}",
            expected.len(),
            params.len()
        )));
    }
    for (name, shape) in expected {
        let tensor = params
            .get(&name)
            .map_err(|_| ModelError::Checkpoint(format!("missing parameter {name}")))?;
        if tensor.shape() != shape.as_slice() {
            return Err(ModelError::Checkpoint(format!(
                "parameter {name} has shape {:?}, config expects {shape:?}",
                tensor.shape()
            )));
        }
    }
    Ok(())
}

fn write_config(w: &mut impl Write, cfg: &ModelConfig) -> std::io::Result<()> {
    for v in [
        cfg.channels,
        cfg.smfm_count,
        cfg.rb_per_smfm,
        cfg.transformer_blocks,
        cfg.heads,
        cfg.patch_h,
        cfg.patch_w,
        cfg.scale,
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    let scope: u8 = match cfg.attention_scope {
        AttentionScope::PerPatch => 0,
        AttentionScope::FullImage => 1,
    };
    let variant: u8 = match cfg.variant {
        Variant::Full => 0,
        Variant::NoLocal => 1,
        Variant::NoGlobal => 2,
    };
    w.write_all(&[scope, cfg.use_layer_norm as u8, variant])
}

fn read_config(r: &mut impl Read) -> Result<ModelConfig> {
    let mut fields = [0usize; 8];
    for f in fields.iter_mut() {
        *f = read_u32(r)? as usize;
    }
    let mut tags = [0u8; 3];
    r.read_exact(&mut tags)?;
    let attention_scope = match tags[0] {
        0 => AttentionScope::PerPatch,
        1 => AttentionScope::FullImage,
        t => return Err(ModelError::Checkpoint(format!("bad attention scope tag {t}"))),
    };
    let variant = match tags[2] {
        0 => Variant::Full,
        1 => Variant::NoLocal,
        2 => Variant::NoGlobal,
        t => return Err(ModelError::Checkpoint(format!("bad variant tag {t}"))),
    };
    Ok(ModelConfig {
        channels: fields[0],
        smfm_count: fields[1],
        rb_per_smfm: fields[2],
        transformer_blocks: fields[3],
        heads: fields[4],
        patch_h: fields[5],
        patch_w: fields[6],
        scale: fields[7],
        attention_scope,
        use_layer_norm: tags[1] != 0,
        variant,
    })
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
