//! Parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"EGNNCKPT"            magic
//! u32                    format version (1)
//! u64, [u8]              length and bytes of the ModelConfig as JSON
//! u32                    tensor count
//! per tensor:
//!   u16, [u8]            name length and UTF-8 name
//!   u8                   rank (1 or 2)
//!   u64 × rank           shape
//!   f64 × product(shape) values, row-major
//! ```
//!
//! Tensor names are `w_in`, `b_in`, `w_layers.<k>` (0-based), `b_shifts`,
//! `w_out`, `b_out`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 8] = b"EGNNCKPT";
pub const FORMAT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, shape: &[usize], values: impl Iterator<Item = f64>) {
    buf.extend((name.len() as u16).to_le_bytes());
    buf.extend(name.as_bytes());
    buf.push(shape.len() as u8);
    for &s in shape {
        buf.extend((s as u64).to_le_bytes());
    }
    for v in values {
        buf.extend(v.to_le_bytes());
    }
}

pub fn encode(config: &ModelConfig, params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend(MAGIC);
    buf.extend(FORMAT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(config).expect("config serializes");
    buf.extend((json.len() as u64).to_le_bytes());
    buf.extend(&json);
    buf.extend((params.w_layers.len() as u32 + 5).to_le_bytes());
    let mat = |buf: &mut Vec<u8>, name: &str, w: &Array2<f64>| put_tensor(buf, name, &[w.nrows(), w.ncols()], w.iter().copied());
    mat(&mut buf, "w_in", &params.w_in);
    put_tensor(&mut buf, "b_in", &[params.b_in.len()], params.b_in.iter().copied());
    for (k, w) in params.w_layers.iter().enumerate() {
        mat(&mut buf, &format!("w_layers.{k}"), w);
    }
    put_tensor(&mut buf, "b_shifts", &[params.b_shifts.len()], params.b_shifts.iter().copied());
    mat(&mut buf, "w_out", &params.w_out);
    put_tensor(&mut buf, "b_out", &[params.b_out.len()], params.b_out.iter().copied());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.array()?)).map_err(|_| bad("length overflows usize"))
    }
}

struct Tensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, ModelParams)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let json_len = r.u64()?;
    let config: ModelConfig =
        serde_json::from_slice(r.take(json_len)?).map_err(|e| bad(format!("bad embedded config: {e}")))?;
    let count = u32::from_le_bytes(r.array()?) as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.array()?) as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = r.array::<1>()?[0] as usize;
        if !(1..=2).contains(&rank) {
            return Err(bad(format!("tensor {name} has rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).ok_or_else(|| bad("shape overflows"))?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| bad("shape overflows"))?)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor { name, shape, values });
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after last tensor"));
    }

    let mut it = tensors.into_iter();
    let mut next = |expected: &str, rank: usize| -> Result<Tensor> {
        let t = it.next().ok_or_else(|| bad(format!("missing tensor {expected}")))?;
        if t.name != expected || t.shape.len() != rank {
            return Err(bad(format!("expected rank-{rank} tensor {expected}, found {}", t.name)));
        }
        Ok(t)
    };
    let mat = |t: Tensor| Array2::from_shape_vec((t.shape[0], t.shape[1]), t.values).expect("length checked");
    let vec1 = |t: Tensor| Array1::from_vec(t.values);

    let w_in = mat(next("w_in", 2)?);
    let b_in = vec1(next("b_in", 1)?);
    let w_layers = (0..count.saturating_sub(5))
        .map(|k| next(&format!("w_layers.{k}"), 2).map(mat))
        .collect::<Result<Vec<_>>>()?;
    let b_shifts = next("b_shifts", 1)?.values;
    let w_out = mat(next("w_out", 2)?);
    let b_out = vec1(next("b_out", 1)?);
    let params = ModelParams {
        w_in,
        b_in,
        w_layers,
        b_shifts,
        w_out,
        b_out,
    };
    config.validate()?;
    params
        .check_shapes(&config, params.w_in.nrows(), params.w_out.ncols())
        .map_err(|e| bad(e.to_string()))?;
    Ok((config, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(config, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    decode(&bytes)
}
