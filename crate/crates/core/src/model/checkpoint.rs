//! Checkpoint container: a text header (architecture, margin, seed,
//! free-form training metadata) followed by named parameter tensors as
//! little-endian f32 with explicit shapes. Load followed by save
//! reproduces the file byte for byte.

use super::{build_model, BackboneConfig, BackboneKind, HeadConfig, SiameseModel};
use crate::error::{Error, Result};
use std::path::Path;

const MAGIC: &[u8; 8] = b"PLOCCKP1";

/// A named parameter tensor: (name, shape, data).
pub type NamedTensor = (String, Vec<usize>, Vec<f64>);

/// Metadata stored alongside the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub alpha: f64,
    pub seed: u64,
    /// Ordered free-form entries (for example `epoch=7`). Keys must not
    /// collide with the architecture fields.
    pub extra: Vec<(String, String)>,
}

impl CheckpointMeta {
    pub fn new(alpha: f64, seed: u64) -> Self {
        Self {
            alpha,
            seed,
            extra: Vec::new(),
        }
    }

    pub fn with_extra(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }
}

fn header_text(model: &SiameseModel, meta: &CheckpointMeta) -> String {
    let bb = model.backbone_config();
    let [l1, l2, l3] = model.head_config().layer_sizes;
    let mut s = String::new();
    s.push_str(&format!("backbone={}\n", bb.kind));
    s.push_str(&format!("input_height={}\n", bb.input_height));
    s.push_str(&format!("input_width={}\n", bb.input_width));
    if let (Some(m), Some(d)) = (bb.channel_mean, bb.channel_std) {
        s.push_str(&format!("input_mean={},{},{}\n", m[0], m[1], m[2]));
        s.push_str(&format!("input_std={},{},{}\n", d[0], d[1], d[2]));
    }
    s.push_str(&format!("head={l1},{l2},{l3}\n"));
    s.push_str(&format!("alpha={}\n", meta.alpha));
    s.push_str(&format!("seed={}\n", meta.seed));
    for (k, v) in &meta.extra {
        s.push_str(&format!("{k}={v}\n"));
    }
    s
}

/// Serialize the model parameters plus metadata.
pub fn save_checkpoint(model: &SiameseModel, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let header = header_text(model, meta);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());

    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    model.visit_params(&mut |name, shape, data| {
        tensors.push((name.to_string(), shape.to_vec(), data.to_vec()));
    });

    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(shape.len() as u8);
        for d in &shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} is truncated at byte {}",
                self.path.display(),
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Parsed header plus raw tensor list.
pub(crate) struct CheckpointFile {
    pub header: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

pub(crate) fn read_checkpoint_file(path: &Path) -> Result<CheckpointFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let header_len = cur.u32()? as usize;
    let header_bytes = cur.take(header_len)?;
    let header_str = std::str::from_utf8(header_bytes)
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let mut header = Vec::new();
    for line in header_str.lines() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed header line '{line}'")))?;
        header.push((k.to_string(), v.to_string()));
    }

    let n_tensors = cur.u32()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = cur.take(count * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.push((name, shape, data));
    }
    Ok(CheckpointFile { header, tensors })
}

/// Read only the named tensors of a checkpoint (for pretrained loading).
pub fn read_named_tensors(path: &Path) -> Result<Vec<NamedTensor>> {
    Ok(read_checkpoint_file(path)?.tensors)
}

/// Rebuild a model (architecture from the header, parameters from the
/// tensor records) together with its metadata.
pub fn load_checkpoint(path: &Path) -> Result<(SiameseModel, CheckpointMeta)> {
    let file = read_checkpoint_file(path)?;
    let lookup = |key: &str| -> Result<&str> {
        file.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("header misses '{key}'")))
    };

    let kind: BackboneKind = lookup("backbone")?.parse().map_err(Error::Checkpoint)?;
    let input_height: usize = lookup("input_height")?
        .parse()
        .map_err(|e| Error::Checkpoint(format!("bad input_height: {e}")))?;
    let input_width: usize = lookup("input_width")?
        .parse()
        .map_err(|e| Error::Checkpoint(format!("bad input_width: {e}")))?;
    let head_parts: Vec<usize> = lookup("head")?
        .split(',')
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Checkpoint(format!("bad head sizes: {e}")))?;
    if head_parts.len() != 3 {
        return Err(Error::Checkpoint("head must list three sizes".into()));
    }
    let alpha: f64 = lookup("alpha")?
        .parse()
        .map_err(|e| Error::Checkpoint(format!("bad alpha: {e}")))?;
    let seed: u64 = lookup("seed")?
        .parse()
        .map_err(|e| Error::Checkpoint(format!("bad seed: {e}")))?;

    let triple = |key: &str| -> Result<Option<[f64; 3]>> {
        let raw = match file.header.iter().find(|(k, _)| k == key) {
            Some((_, v)) => v,
            None => return Ok(None),
        };
        let parts: Vec<f64> = raw
            .split(',')
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Checkpoint(format!("bad {key}: {e}")))?;
        if parts.len() != 3 {
            return Err(Error::Checkpoint(format!("{key} must list three values")));
        }
        Ok(Some([parts[0], parts[1], parts[2]]))
    };

    const KNOWN: [&str; 8] = [
        "backbone",
        "input_height",
        "input_width",
        "input_mean",
        "input_std",
        "head",
        "alpha",
        "seed",
    ];
    let extra: Vec<(String, String)> = file
        .header
        .iter()
        .filter(|(k, _)| !KNOWN.contains(&k.as_str()))
        .cloned()
        .collect();

    let mut backbone_cfg = BackboneConfig::new(kind, input_height, input_width);
    if let (Some(m), Some(d)) = (triple("input_mean")?, triple("input_std")?) {
        backbone_cfg = backbone_cfg.with_standardization(m, d)?;
    }
    let mut model = build_model(
        backbone_cfg,
        HeadConfig::new(head_parts[0], head_parts[1], head_parts[2])?,
        seed,
    )?;
    model.load_named_tensors(&file.tensors)?;
    Ok((model, CheckpointMeta { alpha, seed, extra }))
}
