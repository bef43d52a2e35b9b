//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Gray,
    Rgb,
}

impl Kind {
    fn channels(self) -> usize {
        match self {
            Kind::Gray => 1,
            Kind::Rgb => 3,
        }
    }

    fn magic(self) -> &'static [u8; 2] {
        match self {
            Kind::Gray => b"P5",
            Kind::Rgb => b"P6",
        }
    }
}

struct Header {
    kind: Kind,
    width: usize,
    height: usize,
    data_offset: usize,
}

fn parse_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        reason: reason.into(),
    }
}

fn skip_space(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        match bytes.get(pos) {
            Some(b'#') => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => pos += 1,
            _ => return pos,
        }
    }
}

fn read_uint(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let start = skip_space(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(parse_err(start, format!("expected {what}")));
    }
    let v = std::str::from_utf8(&bytes[start..end])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(start, format!("{what} out of range")))?;
    Ok((v, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let kind = match bytes.get(..2) {
        Some(b"P5") => Kind::Gray,
        Some(b"P6") => Kind::Rgb,
        _ => return Err(parse_err(0, "expected P5 or P6 magic")),
    };
    let (width, pos) = read_uint(bytes, 2, "width")?;
    let (height, pos) = read_uint(bytes, pos, "height")?;
    let (maxval, pos) = read_uint(bytes, pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(pos, format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(parse_err(pos, format!("unsupported maxval {maxval}")));
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => {}
        _ => return Err(parse_err(pos, "expected whitespace after maxval")),
    }
    Ok(Header {
        kind,
        width,
        height,
        data_offset: pos + 1,
    })
}

/// Decodes to a `(1, C, H, W)` tensor with values in `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<(Kind, Tensor<f32>)> {
    let h = parse_header(bytes)?;
    let c = h.kind.channels();
    let need = h.width * h.height * c;
    let payload = &bytes[h.data_offset..];
    if payload.len() < need {
        return Err(parse_err(
            h.data_offset + payload.len(),
            format!("truncated payload: expected {need} bytes, found {}", payload.len()),
        ));
    }
    let plane = h.width * h.height;
    let mut data = vec![0.0f32; need];
    for (i, px) in payload[..need].chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            data[ch * plane + i] = f32::from(v) / 255.0;
        }
    }
    let t = Tensor::from_values((1, c, h.height, h.width), data)?;
    Ok((h.kind, t))
}

/// Encodes channel 0 (gray) or channels 0..3 (RGB) of the first batch item.
pub fn encode(t: &Tensor<f32>, kind: Kind) -> Result<Vec<u8>> {
    let s = t.shape();
    let c = kind.channels();
    if s.n != 1 || s.c != c {
        return Err(Error::InvalidShape {
            op: "netpbm_encode",
            shape: s,
            reason: format!("expected (1,{c},H,W)"),
        });
    }
    let mut out = Vec::with_capacity(20 + s.numel());
    out.extend_from_slice(kind.magic());
    out.extend_from_slice(format!("\n{} {}\n255\n", s.w, s.h).as_bytes());
    let plane = s.plane();
    for i in 0..plane {
        for ch in 0..c {
            let v = t.data()[ch * plane + i];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let (kind, t) = decode(&fs::read(path)?)?;
    if kind != Kind::Rgb {
        return Err(Error::InvalidArgument(format!("{}: expected a P6 image", path.display())));
    }
    Ok(t)
}

/// Loads a P5 mask binarized at 0.5.
pub fn load_mask(path: &Path) -> Result<Tensor<f32>> {
    let (kind, t) = decode(&fs::read(path)?)?;
    if kind != Kind::Gray {
        return Err(Error::InvalidArgument(format!("{}: expected a P5 mask", path.display())));
    }
    Ok(binarize(&t))
}

pub fn binarize(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

pub fn save_image(t: &Tensor<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode(t, Kind::Rgb)?)?;
    Ok(())
}

pub fn save_mask(t: &Tensor<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode(t, Kind::Gray)?)?;
    Ok(())
}
