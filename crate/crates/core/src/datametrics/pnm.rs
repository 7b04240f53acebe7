//! Binary PGM (P5) and PPM (P6) images, maxval 255.

use std::path::Path;

use fvsr_tensor::Tensor;

use crate::{CoreError, Result};

/// `round_half_up(v · 255)` after clamping to `[0, 1]`.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes a `[1, H, W]` / `[H, W]` frame as P5 or a `[3, H, W]` frame as P6.
pub fn encode_pnm(frame: &Tensor<f64>) -> Result<Vec<u8>> {
    let (c, h, w) = match *frame.shape() {
        [h, w] => (1, h, w),
        [c @ (1 | 3), h, w] => (c, h, w),
        _ => {
            return Err(CoreError::Contract(format!(
                "PNM frames must be [H, W], [1, H, W] or [3, H, W], got {:?}",
                frame.shape()
            )))
        }
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let d = frame.data();
    for p in 0..plane {
        for ch in 0..c {
            out.push(to_byte(d[ch * plane + p]));
        }
    }
    Ok(out)
}

/// Decodes P5/P6 into `[C, H, W]` with values `byte / 255`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor<f64>> {
    let mut pos = 0;
    let mut fields = Vec::new();
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
            return Err(CoreError::Format {
                offset: pos,
                msg: "truncated PNM header".into(),
            });
        }
        fields.push((
            start,
            String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let c = match fields[0].1.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => {
            return Err(CoreError::Format {
                offset: 0,
                msg: format!("unsupported PNM magic `{m}`"),
            })
        }
    };
    let num = |i: usize| -> Result<usize> {
        fields[i].1.parse().map_err(|_| CoreError::Format {
            offset: fields[i].0,
            msg: format!("bad header field `{}`", fields[i].1),
        })
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(CoreError::Format {
            offset: fields[3].0,
            msg: format!("maxval {maxval} unsupported, expected 255"),
        });
    }
    let plane = h * w;
    let raster = bytes.get(pos..pos + c * plane).ok_or(CoreError::Format {
        offset: pos.min(bytes.len()),
        msg: format!("raster needs {} bytes", c * plane),
    })?;
    Ok(Tensor::from_fn([c, h, w], |i| {
        let (ch, p) = (i / plane, i % plane);
        raster[p * c + ch] as f64 / 255.0
    }))
}

pub fn save_pnm(path: impl AsRef<Path>, frame: &Tensor<f64>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pnm(frame)?).map_err(|e| CoreError::io(path, e))
}

pub fn load_pnm(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let path = path.as_ref();
    decode_pnm(&std::fs::read(path).map_err(|e| CoreError::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fvsr_tensor::Rng;

    #[test]
    fn rounding_half_up() {
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(0.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(-3.0), 0);
    }

    #[test]
    fn zeros_encode_to_zero_bytes() {
        let bytes = encode_pnm(&Tensor::zeros([1, 3, 5])).unwrap();
        assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
        assert!(bytes[11..].iter().all(|&b| b == 0));
        assert_eq!(bytes.len(), 11 + 15);
    }

    #[test]
    fn round_trip_within_quantization() {
        let mut rng = Rng::new(4);
        for c in [1, 3] {
            let x: Tensor<f64> = Tensor::uniform([c, 7, 9], 0.0, 1.0, &mut rng);
            let back = decode_pnm(&encode_pnm(&x).unwrap()).unwrap();
            assert_eq!(back.shape(), x.shape());
            assert!(x.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn malformed_headers() {
        assert!(decode_pnm(b"P4\n1 1\n255\n\0").is_err());
        assert!(decode_pnm(b"P5\n2 2\n255\n\0").is_err());
        assert!(decode_pnm(b"P5\nx 2\n255\n\0\0\0\0").is_err());
        assert!(decode_pnm(b"P5\n").is_err());
        assert!(decode_pnm(b"P5\n# c\n1 1\n255\n\x80").is_ok());
    }
}
