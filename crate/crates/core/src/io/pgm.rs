//! 8-bit binary portable graymaps (P5).

use crate::error::{Error, Result};

/// Encodes `values` (row-major `height x width`) mapping `[lo, hi]` linearly
/// onto `0..=255`; values outside the range saturate.
pub fn encode_pgm(
    width: usize,
    height: usize,
    values: &[f64],
    lo: f64,
    hi: f64,
) -> Result<Vec<u8>> {
    if values.len() != width * height || width == 0 || height == 0 {
        return Err(Error::Shape(format!(
            "{} values for a {width}x{height} graymap",
            values.len()
        )));
    }
    if !(hi > lo) {
        return Err(Error::Invalid(format!(
            "graymap range [{lo}, {hi}] is empty"
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(
        values
            .iter()
            .map(|v| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

/// Decodes a P5 graymap with `maxval <= 255` into `(width, height, maxval, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, u16, Vec<u8>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated graymap header".into()));
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| Error::Format("bad header".into()))?,
        );
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!(
            "not a binary graymap (magic {})",
            fields[0]
        )));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad header field '{s}'")))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    let data = bytes.get(pos + 1..).unwrap_or(&[]);
    if data.len() != w * h {
        return Err(Error::Format(format!(
            "graymap holds {} pixels, header says {}",
            data.len(),
            w * h
        )));
    }
    Ok((w, h, maxval as u16, data.to_vec()))
}
