//! `HMP1` heatmap dumps: magic, `K`, `H`, `W` as little-endian `u32`, `K*H*W` float32
//! values in channel-major order, then the six float64 coefficients of the
//! heatmap-to-image transform `[a, b, c, d, e, f]` (`x' = a x + b y + c`, `y' = d x + e y + f`).

use std::path::Path;

use rsn_core::codec::{Affine, HeatmapStack};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HMP1";

pub fn encode(h: &HeatmapStack) -> Result<Vec<u8>> {
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::format("heatmap", format!("dimension {v} exceeds u32")));
    let mut out = Vec::with_capacity(16 + h.values.len() * 4 + 48);
    out.extend_from_slice(MAGIC);
    for d in [h.k, h.h, h.w] {
        out.extend_from_slice(&dim(d)?.to_le_bytes());
    }
    for v in &h.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in h.transform.0 {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<HeatmapStack> {
    let bad = |m: String| Error::format("heatmap", m);
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic, expected HMP1".into()));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (k, h, w) = (u(4), u(8), u(12));
    let n = k
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| bad(format!("{k}x{h}x{w} overflows")))?;
    let expected = n.checked_mul(4).and_then(|v| v.checked_add(16 + 48));
    if expected != Some(bytes.len()) {
        return Err(bad(format!("{} bytes for a {k}x{h}x{w} stack", bytes.len())));
    }
    let values = bytes[16..16 + 4 * n]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4")))
        .collect();
    let mut t = [0.0; 6];
    for (i, c) in bytes[16 + 4 * n..].chunks_exact(8).enumerate() {
        t[i] = f64::from_le_bytes(c.try_into().expect("8"));
    }
    Ok(HeatmapStack::new(k, h, w, values, Affine(t))?)
}

pub fn write(path: &Path, h: &HeatmapStack) -> Result<()> {
    std::fs::write(path, encode(h)?).map_err(Error::io(path))
}

pub fn read(path: &Path) -> Result<HeatmapStack> {
    decode(&std::fs::read(path).map_err(Error::io(path))?)
}
