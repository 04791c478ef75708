//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CAMNETCK"            8-byte magic
//! version: u32          currently 1
//! meta_len: u32         followed by that many UTF-8 bytes of
//!                       key=value lines (arch, input, heads, frozen,
//!                       seed, scalar)
//! count: u32            parameter records, in registry order:
//!   name_len: u16, name bytes
//!   trainable: u8
//!   rank: u8, dims: u32 each
//!   raw values, little-endian scalars
//! crc: u32              CRC-32 of every preceding byte
//! ```
//!
//! Loading rebuilds the network from the meta block, then fills every
//! parameter by name, so a checkpoint is valid only if it matches its
//! architecture string exactly.

use std::collections::HashMap;
use std::path::Path;

use crate::arch;
use crate::network::NetworkModel;
use crate::tensor::Scalar;
use crate::util::{crc32, ByteReader};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CAMNETCK";
const VERSION: u32 = 1;

/// What a checkpoint says about itself, readable without loading it.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub scalar: String,
    pub arch: String,
    pub input: Vec<usize>,
    pub head_classes: Vec<usize>,
    pub frozen: bool,
    pub seed: u64,
}

/// Write a model checkpoint.
pub fn save<E: Scalar>(path: &Path, model: &NetworkModel<E>) -> Result<()> {
    let meta = model.meta();
    let mut text = String::new();
    text.push_str(&format!("arch={}\n", meta.arch));
    text.push_str(&format!("input={}\n", join_usize(&meta.input)));
    text.push_str(&format!("heads={}\n", join_usize(&meta.head_classes)));
    text.push_str(&format!("frozen={}\n", u8::from(meta.frozen)));
    text.push_str(&format!("seed={}\n", meta.seed));
    text.push_str(&format!("scalar={}\n", E::NAME));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (_, p) in model.params.iter() {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(u8::from(p.trainable));
        out.push(p.tensor.rank() as u8);
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.tensor.values() {
            v.write_le(&mut out);
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn join_usize(v: &[usize]) -> String {
    v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_usize_list(path: &Path, s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|d| {
            d.trim().parse::<usize>().map_err(|_| Error::format(path, format!("bad number {d:?}")))
        })
        .collect()
}

struct RawCheckpoint<'a> {
    info: CheckpointInfo,
    body: ByteReader<'a>,
}

fn open<'a>(path: &Path, bytes: &'a [u8]) -> Result<RawCheckpoint<'a>> {
    if bytes.len() < MAGIC.len() + 12 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let (payload, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32(payload);
    if stored != computed {
        return Err(Error::format(
            path,
            format!("checksum {computed:#010x} does not match stored {stored:#010x}"),
        ));
    }
    let mut r = ByteReader::new(payload);
    r.take(8);
    let version = r.u32_le().ok_or_else(|| Error::format(path, "truncated header"))?;
    if version != VERSION {
        return Err(Error::format(path, format!("version {version}, want {VERSION}")));
    }
    let meta_len = r.u32_le().ok_or_else(|| Error::format(path, "truncated header"))? as usize;
    let meta_bytes =
        r.take(meta_len).ok_or_else(|| Error::format(path, "truncated meta block"))?;
    let text = std::str::from_utf8(meta_bytes)
        .map_err(|_| Error::format(path, "meta block is not UTF-8"))?;
    let mut fields = HashMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| {
        fields
            .get(k)
            .cloned()
            .ok_or_else(|| Error::format(path, format!("meta block is missing {k}")))
    };
    let info = CheckpointInfo {
        scalar: get("scalar")?,
        arch: get("arch")?,
        input: parse_usize_list(path, &get("input")?)?,
        head_classes: parse_usize_list(path, &get("heads")?)?,
        frozen: get("frozen")? == "1",
        seed: get("seed")?
            .parse()
            .map_err(|_| Error::format(path, "bad seed in meta block"))?,
    };
    Ok(RawCheckpoint { info, body: r })
}

/// Read a checkpoint's description without rebuilding the model.
pub fn peek(path: &Path) -> Result<CheckpointInfo> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(open(path, &bytes)?.info)
}

/// Load a checkpoint saved with the same scalar type.
pub fn load<E: Scalar>(path: &Path) -> Result<NetworkModel<E>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let RawCheckpoint { info, mut body } = open(path, &bytes)?;
    if info.scalar != E::NAME {
        return Err(Error::format(
            path,
            format!("stored scalars are {}, loader wants {}", info.scalar, E::NAME),
        ));
    }
    let spec = arch::ArchSpec::parse(&info.arch)?;
    if spec.frozen != info.frozen {
        return Err(Error::format(path, "frozen flag disagrees with architecture"));
    }
    let mut model =
        arch::build_network::<E>(&spec, &info.input, info.head_classes[0], info.seed)?;
    for &classes in &info.head_classes[1..] {
        arch::add_head(&mut model, classes, info.seed)?;
    }

    let count = body.u32_le().ok_or_else(|| Error::format(path, "truncated body"))? as usize;
    if count != model.params.len() {
        return Err(Error::format(
            path,
            format!("{count} parameters stored, architecture has {}", model.params.len()),
        ));
    }
    let mut filled = vec![false; count];
    for _ in 0..count {
        let name_len =
            body.u16_le().ok_or_else(|| Error::format(path, "truncated record"))? as usize;
        let name_bytes =
            body.take(name_len).ok_or_else(|| Error::format(path, "truncated record"))?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?;
        let trainable =
            body.u8().ok_or_else(|| Error::format(path, "truncated record"))? != 0;
        let rank = body.u8().ok_or_else(|| Error::format(path, "truncated record"))? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(
                body.u32_le().ok_or_else(|| Error::format(path, "truncated record"))? as usize,
            );
        }
        let len: usize = dims.iter().product();
        let raw = body
            .take(len * E::BYTES)
            .ok_or_else(|| Error::format(path, "truncated values"))?;
        let id = model.params.id_by_name(name).ok_or_else(|| {
            Error::format(path, format!("parameter {name:?} does not fit the architecture"))
        })?;
        if model.params.shape(id) != dims.as_slice() {
            return Err(Error::format(
                path,
                format!(
                    "parameter {name:?} stored as {dims:?}, architecture wants {:?}",
                    model.params.shape(id)
                ),
            ));
        }
        if filled[id.index()] {
            return Err(Error::format(path, format!("parameter {name:?} appears twice")));
        }
        filled[id.index()] = true;
        let p = model.params.get_mut(id);
        p.trainable = trainable;
        for (slot, chunk) in p.tensor.values_mut().iter_mut().zip(raw.chunks_exact(E::BYTES)) {
            *slot = E::read_le(chunk);
        }
    }
    if body.remaining() != 0 {
        return Err(Error::format(path, "trailing bytes after the last parameter"));
    }
    Ok(model)
}
