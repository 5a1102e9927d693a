//! PFM / PPM / PGM readers and writers.
//!
//! Depth maps travel as grayscale PFM ("Pf", f32, rows bottom-to-top, scale
//! sign giving endianness — we write -1.0, little-endian). Color images are
//! binary P6 PPM, grayscale dumps binary P5 PGM. Decoding errors report the
//! byte offset where the input stopped making sense.

use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::tensor::Tensor;
use std::path::Path;

/// Write a [H, W] or [H, W, 1] map as grayscale PFM.
pub fn write_pfm(path: &Path, map: &Tensor) -> Result<()> {
    let (h, w) = map_extents(map)?;
    map.validate_finite("pfm payload")?;
    let mut buf = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    // PFM scanlines run bottom-to-top
    for row in (0..h).rev() {
        for col in 0..w {
            let v = map.data()[row * w + col] as f32;
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &buf)
}

/// Read a grayscale PFM into a [H, W, 1] tensor.
pub fn read_pfm(path: &Path) -> Result<Tensor> {
    let buf = std::fs::read(path)?;
    let mut pos = 0usize;
    let magic = token(&buf, &mut pos)?;
    if magic != b"Pf" {
        return Err(Error::Io(format!(
            "bad PFM magic {:?} at byte 0 (only grayscale \"Pf\" is supported)",
            String::from_utf8_lossy(magic)
        )));
    }
    let w = parse_usize(&buf, &mut pos, "width")?;
    let h = parse_usize(&buf, &mut pos, "height")?;
    let scale_at = pos;
    let scale: f64 = std::str::from_utf8(token(&buf, &mut pos)?)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Io(format!("unparsable PFM scale at byte {scale_at}")))?;
    // exactly one whitespace byte separates the scale from the payload;
    // `token` already consumed it
    let little_endian = scale < 0.0;
    let want = w * h * 4;
    if buf.len() - pos < want {
        return Err(Error::Io(format!(
            "PFM payload truncated at byte {}: want {want} bytes, have {}",
            pos,
            buf.len() - pos
        )));
    }
    let payload = &buf[pos..pos + want];
    let mut data = vec![0.0f64; w * h];
    for row in 0..h {
        for col in 0..w {
            let i = (row * w + col) * 4;
            let bytes: [u8; 4] = payload[i..i + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
            // flip back to top-to-bottom
            data[(h - 1 - row) * w + col] = v as f64;
        }
    }
    Tensor::from_vec(&[h, w, 1], data)
}

/// Write an [H, W, 3] image in [0, 1] as binary P6 PPM.
pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    if image.rank() != 3 || image.shape()[2] != 3 {
        return Err(Error::Argument(format!("write_ppm wants [H, W, 3], got {:?}", image.shape())));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut buf = format!("P6\n{w} {h}\n255\n").into_bytes();
    buf.extend(image.data().iter().map(|&v| quantize(v)));
    atomic_write(path, &buf)
}

/// Read a binary P6 PPM into an [H, W, 3] tensor with values in [0, 1].
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let buf = std::fs::read(path)?;
    let (w, h, pos) = netpbm_header(&buf, b"P6")?;
    let want = w * h * 3;
    if buf.len() - pos < want {
        return Err(Error::Io(format!(
            "PPM payload truncated at byte {pos}: want {want} bytes, have {}",
            buf.len() - pos
        )));
    }
    let data = buf[pos..pos + want].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(&[h, w, 3], data)
}

/// Write a [H, W] or [H, W, 1] map as binary P5 PGM, min-max normalized.
pub fn write_pgm(path: &Path, map: &Tensor) -> Result<()> {
    let (h, w) = map_extents(map)?;
    let lo = map.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
    buf.extend(map.data().iter().map(|&v| quantize((v - lo) / span)));
    atomic_write(path, &buf)
}

/// Read a binary P5 PGM into an [H, W, 1] tensor with values in [0, 1].
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let buf = std::fs::read(path)?;
    let (w, h, pos) = netpbm_header(&buf, b"P5")?;
    let want = w * h;
    if buf.len() - pos < want {
        return Err(Error::Io(format!(
            "PGM payload truncated at byte {pos}: want {want} bytes, have {}",
            buf.len() - pos
        )));
    }
    let data = buf[pos..pos + want].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(&[h, w, 1], data)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn map_extents(map: &Tensor) -> Result<(usize, usize)> {
    match map.shape() {
        [h, w] => Ok((*h, *w)),
        [h, w, 1] => Ok((*h, *w)),
        other => Err(Error::Argument(format!("expected [H, W] or [H, W, 1] map, got {other:?}"))),
    }
}

/// Next whitespace-delimited token, skipping `#` comment lines.
fn token<'a>(buf: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < buf.len() && buf[*pos] == b'#' {
            while *pos < buf.len() && buf[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= buf.len() {
        return Err(Error::Io(format!("unexpected end of header at byte {pos}", pos = *pos)));
    }
    let start = *pos;
    while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let tok = &buf[start..*pos];
    if *pos < buf.len() {
        *pos += 1; // consume the single separator after the token
    }
    Ok(tok)
}

fn parse_usize(buf: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let at = *pos;
    std::str::from_utf8(token(buf, pos)?)
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&v: &usize| v > 0)
        .ok_or_else(|| Error::Io(format!("unparsable {what} at byte {at}")))
}

fn netpbm_header(buf: &[u8], magic: &[u8]) -> Result<(usize, usize, usize)> {
    let mut pos = 0usize;
    let got = token(buf, &mut pos)?;
    if got != magic {
        return Err(Error::Io(format!(
            "bad magic {:?} at byte 0, want {:?}",
            String::from_utf8_lossy(got),
            String::from_utf8_lossy(magic)
        )));
    }
    let w = parse_usize(buf, &mut pos, "width")?;
    let h = parse_usize(buf, &mut pos, "height")?;
    let maxval_at = pos;
    let maxval = parse_usize(buf, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Io(format!("unsupported maxval {maxval} at byte {maxval_at}")));
    }
    Ok((w, h, pos))
}
