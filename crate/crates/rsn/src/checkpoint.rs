//! `RSN1` tensor archives.
//!
//! Layout (little-endian): magic `RSN1`, version `u32`, record count `u32`, then per
//! record a `u32` name length, the UTF-8 name, a dtype byte (0 = f32, 1 = f64), the
//! shape as four `u32` (N, C, H, W) and the IEEE-754 payload.

use std::io::{Read, Write};
use std::path::Path;

use rsn_core::arch::Network;
use rsn_core::graph::ParamStore;
use rsn_core::optim::AdamState;
use rsn_core::train::TrainState;
use rsn_core::{DType, Scalar, Shape, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RSN1";
pub const VERSION: u32 = 1;

const STEP_KEY: &str = "train.step";
const ADAM_T_KEY: &str = "adam.t";

/// A tensor in its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum Stored {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl Stored {
    pub fn dtype(&self) -> DType {
        match self {
            Stored::F32(_) => DType::F32,
            Stored::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            Stored::F32(t) => t.shape(),
            Stored::F64(t) => t.shape(),
        }
    }

    /// The tensor in precision `S`; exact when `S` is the stored type.
    pub fn to<S: Scalar>(&self) -> Tensor<S> {
        match self {
            Stored::F32(t) => t.cast(),
            Stored::F64(t) => t.cast(),
        }
    }

    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Self {
        match S::DTYPE {
            DType::F32 => Stored::F32(t.cast()),
            DType::F64 => Stored::F64(t.cast()),
        }
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn dim(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format("checkpoint", format!("dimension {v} exceeds u32")))
}

pub fn write_archive(w: &mut impl Write, records: &[(String, Stored)]) -> Result<()> {
    let io = |e| Error::format("checkpoint", format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    put_u32(w, VERSION).map_err(io)?;
    put_u32(w, dim(records.len())?).map_err(io)?;
    for (name, t) in records {
        put_u32(w, dim(name.len())?).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&[t.dtype().code()]).map_err(io)?;
        for d in t.shape().dims() {
            put_u32(w, dim(d)?).map_err(io)?;
        }
        let mut bytes = Vec::with_capacity(t.shape().numel() * t.dtype().size_of());
        match t {
            Stored::F32(t) => t.data().iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes())),
            Stored::F64(t) => t.data().iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes())),
        }
        w.write_all(&bytes).map_err(io)?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format("checkpoint", format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn read_archive(r: &mut impl Read) -> Result<Vec<(String, Stored)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::format("checkpoint", format!("read failed: {e}")))?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic, expected RSN1"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::format("checkpoint", format!("record {i}: name is not UTF-8")))?
            .to_string();
        let code = c.take(1)?[0];
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::format("checkpoint", format!("record {i} ({name}): unknown dtype {code}")))?;
        let d = [c.u32()?, c.u32()?, c.u32()?, c.u32()?].map(|v| v as usize);
        let shape = Shape::new(d[0], d[1], d[2], d[3]);
        let numel = d.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
        let bytes = numel
            .and_then(|n| n.checked_mul(dtype.size_of()))
            .ok_or_else(|| Error::format("checkpoint", format!("record {i} ({name}): shape overflows")))?;
        let payload = c.take(bytes)?;
        let t = match dtype {
            DType::F32 => Stored::F32(Tensor::new(
                shape,
                payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4"))).collect(),
            )?),
            DType::F64 => Stored::F64(Tensor::new(
                shape,
                payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8"))).collect(),
            )?),
        };
        out.push((name, t));
    }
    if c.pos != buf.len() {
        return Err(Error::format("checkpoint", format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(out)
}

pub fn save(path: &Path, records: &[(String, Stored)]) -> Result<()> {
    let mut bytes = Vec::new();
    write_archive(&mut bytes, records)?;
    std::fs::write(path, bytes).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<Vec<(String, Stored)>> {
    let mut f = std::fs::File::open(path).map_err(Error::io(path))?;
    read_archive(&mut f)
}

/// Parameters followed by buffers, under their graph names.
pub fn store_records<S: Scalar>(params: &ParamStore<S>) -> Vec<(String, Stored)> {
    params
        .named_tensors()
        .map(|(n, t)| (n.to_string(), Stored::from_tensor(t)))
        .collect()
}

/// Overwrite every parameter and buffer of `params` from `records`; all must be present.
pub fn restore_store<S: Scalar>(params: &mut ParamStore<S>, records: &[(String, Stored)]) -> Result<()> {
    let names: Vec<String> = params.named_tensors().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let (_, t) = records
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::format("checkpoint", format!("missing tensor `{name}`")))?;
        params.assign(&name, t.to::<S>())?;
    }
    Ok(())
}

pub fn save_params<S: Scalar>(path: &Path, params: &ParamStore<S>) -> Result<()> {
    save(path, &store_records(params))
}

/// Fresh parameters for `net` overwritten from the archive at `path`.
pub fn load_params<S: Scalar>(path: &Path, net: &Network) -> Result<ParamStore<S>> {
    let mut p = net.graph.init_params::<S>(0);
    restore_store(&mut p, &load(path)?)?;
    Ok(p)
}

fn counter(v: u64) -> Stored {
    Stored::F64(Tensor::scalar(v as f64))
}

fn read_counter(records: &[(String, Stored)], key: &str) -> Result<u64> {
    let (_, t) = records
        .iter()
        .find(|(n, _)| n == key)
        .ok_or_else(|| Error::format("checkpoint", format!("missing `{key}`")))?;
    let v = t.to::<f64>().data().first().copied().unwrap_or(f64::NAN);
    if !(v >= 0.0 && v.fract() == 0.0 && v < 9.0e15) {
        return Err(Error::format("checkpoint", format!("`{key}` is not a step count: {v}")));
    }
    Ok(v as u64)
}

/// Parameters, buffers, Adam moments and counters.
pub fn train_records(state: &TrainState) -> Vec<(String, Stored)> {
    let mut out = store_records(&state.params);
    for (i, name) in state.params.param_names().iter().enumerate() {
        out.push((format!("adam.m/{name}"), Stored::from_tensor(&state.adam.m[i])));
        out.push((format!("adam.v/{name}"), Stored::from_tensor(&state.adam.v[i])));
    }
    out.push((ADAM_T_KEY.into(), counter(state.adam.t)));
    out.push((STEP_KEY.into(), counter(state.step)));
    out
}

pub fn save_train_state(path: &Path, state: &TrainState) -> Result<()> {
    save(path, &train_records(state))
}

pub fn restore_train_state(net: &Network, records: &[(String, Stored)]) -> Result<TrainState> {
    let mut params = net.graph.init_params::<f32>(0);
    restore_store(&mut params, records)?;
    let mut adam = AdamState::new(params.params(), Default::default());
    for (i, name) in params.param_names().iter().enumerate() {
        for (prefix, slot) in [("adam.m", &mut adam.m[i]), ("adam.v", &mut adam.v[i])] {
            let key = format!("{prefix}/{name}");
            let (_, t) = records
                .iter()
                .find(|(n, _)| *n == key)
                .ok_or_else(|| Error::format("checkpoint", format!("missing `{key}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::format("checkpoint", format!("`{key}` has shape {}", t.shape())));
            }
            *slot = t.to();
        }
    }
    adam.t = read_counter(records, ADAM_T_KEY)?;
    let step = read_counter(records, STEP_KEY)?;
    Ok(TrainState { params, adam, step })
}

pub fn load_train_state(path: &Path, net: &Network) -> Result<TrainState> {
    restore_train_state(net, &load(path)?)
}
