//! Grayscale PGM images (ASCII `P2` and binary `P5`) mapped to `(1, 1, H, W)`
//! tensors with intensities in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn image_extent<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize)> {
    match image.dims() {
        [h, w] | [1, 1, h, w] => Ok((*h, *w)),
        d => Err(Error::Format(format!("PGM needs a single-channel image, got dims {d:?}"))),
    }
}

/// Encodes with maxval 255; values are clamped to `[0, 1]` and rounded.
pub fn encode_pgm<T: Scalar>(image: &Tensor<T>, binary: bool) -> Result<Vec<u8>> {
    let (h, w) = image_extent(image)?;
    let levels: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut out = format!("{} {w} {h} 255\n", if binary { "P5" } else { "P2" }).into_bytes();
    if binary {
        out.extend_from_slice(&levels);
    } else {
        for row in levels.chunks(w) {
            let line: Vec<String> = row.iter().map(u8::to_string).collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    }
    Ok(out)
}

pub fn decode_pgm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let num = |s: String| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let w = num(token()?)?;
    let h = num(token()?)?;
    let maxval = num(token()?)?;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("bad extent or maxval"));
    }
    let n = w * h;
    let scale = 1.0 / maxval as f64;
    let values: Vec<usize> = match magic.as_str() {
        "P2" => (0..n).map(|_| token().and_then(num)).collect::<Result<_>>()?,
        "P5" => {
            // exactly one whitespace byte separates the header from the raster
            let body = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
            let wide = maxval > 255;
            let need = if wide { 2 * n } else { n };
            if body.len() < need {
                return Err(bad("raster shorter than header claims"));
            }
            if wide {
                body[..need]
                    .chunks(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as usize)
                    .collect()
            } else {
                body[..n].iter().map(|&b| b as usize).collect()
            }
        }
        _ => return Err(bad("expected P2 or P5 magic")),
    };
    if values.iter().any(|&v| v > maxval) {
        return Err(bad("sample exceeds maxval"));
    }
    Tensor::new(
        vec![1, 1, h, w],
        values.into_iter().map(|v| T::lit(v as f64 * scale)).collect(),
    )
}

pub fn write_pgm<T: Scalar>(path: &Path, image: &Tensor<T>, binary: bool) -> Result<()> {
    std::fs::write(path, encode_pgm(image, binary)?)?;
    Ok(())
}

pub fn read_pgm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    decode_pgm(&std::fs::read(path)?)
}
