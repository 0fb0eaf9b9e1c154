use std::path::Path;

use super::{DataError, Result};

/// Binary greymap (P5, maxval 255).
pub fn encode_pgm(pixels: &[u8], h: usize, w: usize) -> Result<Vec<u8>> {
    if pixels.len() != h * w || h == 0 || w == 0 {
        return Err(DataError::Contract(format!(
            "{} pixels do not form a {h}×{w} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Returns `(height, width, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(DataError::Format {
                offset: pos as u64,
                detail: "truncated PGM header".into(),
            });
        }
        fields.push((start, &bytes[start..pos]));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let (_, magic) = fields[0];
    if magic != b"P5" {
        return Err(DataError::Format {
            offset: 0,
            detail: format!(
                "expected magic \"P5\", found {:?}",
                String::from_utf8_lossy(magic)
            ),
        });
    }
    let number = |i: usize| -> Result<usize> {
        let (at, raw) = fields[i];
        std::str::from_utf8(raw)
            .ok()
            .and_then(|s| s.parse().ok())
            .filter(|&v: &usize| v > 0)
            .ok_or_else(|| DataError::Format {
                offset: at as u64,
                detail: format!("bad header number {:?}", String::from_utf8_lossy(raw)),
            })
    };
    let (w, h, maxval) = (number(1)?, number(2)?, number(3)?);
    if maxval != 255 {
        return Err(DataError::Format {
            offset: fields[3].0 as u64,
            detail: format!("only maxval 255 is supported, got {maxval}"),
        });
    }
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != h * w {
        return Err(DataError::Format {
            offset: bytes.len() as u64,
            detail: format!("raster has {} bytes, expected {}", raster.len(), h * w),
        });
    }
    Ok((h, w, raster.to_vec()))
}

pub fn write_pgm(path: &Path, pixels: &[u8], h: usize, w: usize) -> Result<()> {
    std::fs::write(path, encode_pgm(pixels, h, w)?)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode_pgm(&std::fs::read(path)?)
}
