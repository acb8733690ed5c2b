//! Binary PGM (P5) and PPM (P6) with maxval 255. Values quantize by
//! round-half-up; readers rescale to [0, 1].

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor() as u8
}

/// Interprets a map as a single grayscale plane.
fn gray_plane(map: &Tensor) -> Result<(usize, usize)> {
    match map.shape() {
        [h, w] => Ok((*h, *w)),
        [1, h, w] => Ok((*h, *w)),
        other => Err(Error::ShapeMismatch {
            location: "pgm map".into(),
            expected: "[h, w] or [1, h, w]".into(),
            got: format!("{other:?}"),
        }),
    }
}

fn check_range(data: &[f64], what: &str) -> Result<()> {
    if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(format!("{what} values must lie in [0, 1]")));
    }
    Ok(())
}

pub fn encode_pgm(map: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = gray_plane(map)?;
    check_range(map.data(), "pgm")?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn encode_ppm(rgb: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = match rgb.shape() {
        [3, h, w] => (3, *h, *w),
        other => {
            return Err(Error::ShapeMismatch {
                location: "ppm image".into(),
                expected: "[3, h, w]".into(),
                got: format!("{other:?}"),
            })
        }
    };
    check_range(rgb.data(), "ppm")?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            out.push(quantize(rgb.data()[ch * plane + p]));
        }
    }
    Ok(out)
}

/// Pulls the next whitespace-delimited ASCII token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::MalformedHeader("unexpected end of pnm header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::MalformedHeader("non-numeric pnm header field".into()))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::BadMagic);
    }
    let mut pos = 2;
    let w = next_token(bytes, &mut pos)?;
    let h = next_token(bytes, &mut pos)?;
    let maxval = next_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::MalformedHeader(format!(
            "unsupported pgm maxval {maxval}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::MalformedHeader("zero pgm dimension".into()));
    }
    // Exactly one whitespace byte separates header and raster.
    pos += 1;
    let expected = h * w;
    let got = bytes.len().saturating_sub(pos);
    if got != expected {
        return Err(Error::SizeMismatch { expected, got });
    }
    let data = bytes[pos..].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![h, w], data)
}

pub fn write_pgm(map: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(map)?)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_ppm(rgb: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(rgb)?)?;
    Ok(())
}
