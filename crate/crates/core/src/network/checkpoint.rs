//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "SNNC" | version u32 | record count u32
//! metadata length u32 | UTF-8 `key=value` lines
//! per record: name length u16 | UTF-8 name | rank u8 | dims u32 × rank | f32 × prod(dims)
//! ```
//!
//! Records are named `<role>.weight` / `<role>.bias`, in layer order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::model::{BackboneMode, Layer, LayerRole, ModelConfig, ModelParameters};
use crate::binio::{put_f32s, put_u16, put_u32, Reader};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SNNC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn metadata(config: &ModelConfig) -> String {
    let mut meta = String::new();
    match config.backbone {
        BackboneMode::Builtin {
            height,
            width,
            channels,
        } => {
            meta.push_str("backbone=builtin\n");
            meta.push_str(&format!(
                "input_height={height}\ninput_width={width}\ninput_channels={channels}\n"
            ));
        }
        BackboneMode::Precomputed { feature_dim } => {
            meta.push_str("backbone=precomputed\n");
            meta.push_str(&format!("feature_dim={feature_dim}\n"));
        }
    }
    meta.push_str(&format!("normalize={}\n", config.normalize));
    meta.push_str(&format!("dropout={}\n", config.dropout));
    meta
}

fn parse_metadata(text: &str) -> Result<ModelConfig> {
    let mut kv = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed metadata line `{line}`")))?;
        kv.insert(k, v);
    }
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| Error::Format(format!("metadata is missing `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("metadata `{k}` is not an integer")))
    };
    let backbone = match get("backbone")? {
        "builtin" => BackboneMode::Builtin {
            height: num("input_height")?,
            width: num("input_width")?,
            channels: num("input_channels")?,
        },
        "precomputed" => BackboneMode::Precomputed {
            feature_dim: num("feature_dim")?,
        },
        other => return Err(Error::Format(format!("unknown backbone `{other}`"))),
    };
    let normalize = get("normalize")?
        .parse()
        .map_err(|_| Error::Format("metadata `normalize` is not a bool".into()))?;
    let dropout = get("dropout")?
        .parse()
        .map_err(|_| Error::Format("metadata `dropout` is not a number".into()))?;
    Ok(ModelConfig {
        backbone,
        normalize,
        dropout,
    })
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u16(out, name.len() as u16);
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    put_f32s(out, t.data());
}

pub fn encode_checkpoint(params: &ModelParameters<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_parameters() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, (params.layers.len() * 2) as u32);
    let meta = metadata(&params.config);
    put_u32(&mut out, meta.len() as u32);
    out.extend_from_slice(meta.as_bytes());
    for layer in &params.layers {
        put_record(&mut out, &format!("{}.weight", layer.role), &layer.weight);
        put_record(&mut out, &format!("{}.bias", layer.role), &layer.bias);
    }
    out
}

fn read_record(r: &mut Reader<'_>) -> Result<(String, Tensor<f32>)> {
    let name_len = r.u16("record name length")? as usize;
    let name = r.utf8(name_len, "record name")?.to_string();
    let rank = r.u8("record rank")? as usize;
    if rank == 0 {
        return Err(Error::Format(format!("record `{name}` has rank 0")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = r.u32("record dimension")? as usize;
        if d == 0 {
            return Err(Error::Format(format!(
                "record `{name}` has a zero dimension"
            )));
        }
        dims.push(d);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("record `{name}` is too large")))?;
    let data = r.f32s(count, "record values")?;
    Ok((name, Tensor::new(dims, data)?))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParameters<f32>> {
    let mut r = Reader::new(bytes, "checkpoint");
    if r.bytes(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let records = r.u32("record count")? as usize;
    let meta_len = r.u32("metadata length")? as usize;
    let config = parse_metadata(r.utf8(meta_len, "metadata")?)?;
    if records % 2 != 0 {
        return Err(Error::Format(format!("odd record count {records}")));
    }
    let mut layers = Vec::with_capacity(records / 2);
    for _ in 0..records / 2 {
        let (wname, weight) = read_record(&mut r)?;
        let (bname, bias) = read_record(&mut r)?;
        let role_name = wname
            .strip_suffix(".weight")
            .ok_or_else(|| Error::Format(format!("expected a weight record, got `{wname}`")))?;
        if bname != format!("{role_name}.bias") {
            return Err(Error::Format(format!(
                "expected `{role_name}.bias`, got `{bname}`"
            )));
        }
        layers.push(Layer {
            role: role_name.parse::<LayerRole>()?,
            weight,
            bias,
        });
    }
    r.finish()?;
    let params = ModelParameters { config, layers };
    params
        .validate()
        .map_err(|e| Error::Format(format!("inconsistent checkpoint: {e}")))?;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParameters<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParameters<f32>> {
    decode_checkpoint(&fs::read(path)?)
}
