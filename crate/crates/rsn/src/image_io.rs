//! Binary portable graymaps (`P5`) and pixmaps (`P6`), 8 bits per sample.

use std::path::Path;

use rsn_core::data::Image;

use crate::error::{Error, Result};

pub fn encode(img: &Image) -> Result<Vec<u8>> {
    let magic = match img.c {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::format("image", format!("{c} channels cannot be stored as PGM/PPM"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.w, img.h).into_bytes();
    let plane = img.h * img.w;
    for i in 0..plane {
        for c in 0..img.c {
            let v = img.data[c * plane + i].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

fn header(bytes: &[u8]) -> Result<(Vec<String>, usize)> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format("image", "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    Ok((fields, i + 1))
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let (f, start) = header(bytes)?;
    let c = match f[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::format("image", format!("unsupported format `{m}`"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format("image", format!("bad header field `{s}`")));
    let (w, h, max) = (num(&f[1])?, num(&f[2])?, num(&f[3])?);
    if max != 255 {
        return Err(Error::format("image", format!("only 8-bit maps are supported, maxval {max}")));
    }
    let raster = bytes.get(start..).unwrap_or(&[]);
    if raster.len() != w * h * c {
        return Err(Error::format("image", format!("{} raster bytes for {w}x{h}x{c}", raster.len())));
    }
    let plane = w * h;
    let mut data = vec![0.0f32; c * plane];
    for (i, px) in raster.chunks_exact(c).enumerate() {
        for (ch, &b) in px.iter().enumerate() {
            data[ch * plane + i] = b as f32 / 255.0;
        }
    }
    Ok(Image::from_data(c, h, w, data)?)
}

pub fn write(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode(img)?).map_err(Error::io(path))
}

pub fn read(path: &Path) -> Result<Image> {
    decode(&std::fs::read(path).map_err(Error::io(path))?)
}

/// Values rounded to the 8-bit grid, as they come back from a file.
pub fn quantized(img: &Image) -> Image {
    let mut out = img.clone();
    for v in &mut out.data {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    out
}
