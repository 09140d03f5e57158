//! Flat `key = value` network configuration files.
//!
//! One assignment per line; `#` starts a comment. Keys not given keep the values of
//! the `rsn18` preset, so a file only needs what differs from it.

use std::fmt::Write as _;
use std::path::Path;

use rsn_core::arch::{FusionMode, NetworkConfig};

use crate::error::{Error, Result};

fn list<const N: usize>(v: &str) -> std::result::Result<[usize; N], String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated values"));
    }
    let mut out = [0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("`{p}` is not a non-negative integer"))?;
    }
    Ok(out)
}

/// `HxW`, e.g. `256x192`.
pub fn parse_hw(v: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = v.split_once(['x', 'X']).ok_or_else(|| format!("`{v}` is not HxW"))?;
    let p = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("`{v}` is not HxW"));
    Ok((p(h)?, p(w)?))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn number<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("`{v}` is not a number"))
}

pub fn parse(text: &str) -> Result<NetworkConfig> {
    let mut c = NetworkConfig::rsn18();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format("config", format!("line {}: {msg}", i + 1));
        let (key, value) = line.split_once('=').ok_or_else(|| bad("expected `key = value`".into()))?;
        let (key, v) = (key.trim(), value.trim());
        let r: std::result::Result<(), String> = match key {
            "name" => {
                c.name = v.to_string();
                Ok(())
            }
            "stages" => number(v).map(|x| c.stages = x),
            "blocks" => list::<4>(v).map(|x| c.blocks = x),
            "channels" => list::<4>(v).map(|x| c.channels = x),
            "stem_channels" => number(v).map(|x| c.stem_channels = x),
            "expansion" => number(v).map(|x| c.expansion = x),
            "head_channels" => number(v).map(|x| c.head_channels = x),
            "keypoints" => number(v).map(|x| c.keypoints = x),
            "input" => parse_hw(v).map(|x| c.input = x),
            "branches" => number(v).map(|x| c.branches = x),
            "fusion" => v.parse::<FusionMode>().map(|x| c.fusion = x).map_err(|e| e.to_string()),
            "width_mult" => number(v).map(|x| c.width_mult = x),
            "prm" => boolean(v).map(|x| c.prm = x),
            "batchnorm" => boolean(v).map(|x| c.batchnorm = x),
            _ => Err(format!("unknown key `{key}`")),
        };
        r.map_err(bad)?;
    }
    c.validate()?;
    Ok(c)
}

/// Canonical text form; `parse(&to_text(c)) == c` for every valid `c`.
pub fn to_text(c: &NetworkConfig) -> String {
    let j = |a: &[usize; 4]| a.map(|x| x.to_string()).join(", ");
    let mut s = String::new();
    let _ = writeln!(s, "name = {}", c.name);
    let _ = writeln!(s, "stages = {}", c.stages);
    let _ = writeln!(s, "blocks = {}", j(&c.blocks));
    let _ = writeln!(s, "channels = {}", j(&c.channels));
    let _ = writeln!(s, "stem_channels = {}", c.stem_channels);
    let _ = writeln!(s, "expansion = {}", c.expansion);
    let _ = writeln!(s, "head_channels = {}", c.head_channels);
    let _ = writeln!(s, "keypoints = {}", c.keypoints);
    let _ = writeln!(s, "input = {}x{}", c.input.0, c.input.1);
    let _ = writeln!(s, "branches = {}", c.branches);
    let _ = writeln!(s, "fusion = {}", c.fusion.as_str());
    let _ = writeln!(s, "width_mult = {}", c.width_mult);
    let _ = writeln!(s, "prm = {}", c.prm);
    let _ = writeln!(s, "batchnorm = {}", c.batchnorm);
    s
}

/// A preset name (`rsn18`, `rsn-tiny`, ...) or a path to a config file.
/// `name.cfg` falls back to the preset `name` when no such file exists.
pub fn resolve(spec: &str) -> Result<NetworkConfig> {
    let path = Path::new(spec);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        return parse(&text);
    }
    let stem = spec.strip_suffix(".cfg").unwrap_or(spec);
    let stem = Path::new(stem).file_name().and_then(|s| s.to_str()).unwrap_or(stem);
    NetworkConfig::preset(stem).map_err(|_| Error::format("config", format!("`{spec}` is neither a file nor a preset")))
}
