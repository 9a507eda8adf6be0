//! Binary PGM (P5) and PPM (P6) images with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    payload: usize,
}

fn skip_space_and_comments(b: &[u8], mut i: usize) -> usize {
    loop {
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < b.len() && b[i] == b'#' {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
        } else {
            return i;
        }
    }
}

fn header_number(b: &[u8], i: &mut usize, what: &str) -> Result<usize> {
    *i = skip_space_and_comments(b, *i);
    let start = *i;
    while *i < b.len() && b[*i].is_ascii_digit() {
        *i += 1;
    }
    if start == *i {
        return Err(parse_err(start, format!("expected {what}")));
    }
    std::str::from_utf8(&b[start..*i])
        .expect("ascii digits")
        .parse()
        .map_err(|_| parse_err(start, format!("{what} out of range")))
}

fn parse_header(b: &[u8]) -> Result<Header> {
    let channels = match b.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(parse_err(0, "bad magic, expected P5 or P6")),
    };
    let mut i = 2;
    let width = header_number(b, &mut i, "width")?;
    let height = header_number(b, &mut i, "height")?;
    let maxval_at = skip_space_and_comments(b, i);
    let maxval = header_number(b, &mut i, "maxval")?;
    if maxval != 255 {
        return Err(parse_err(maxval_at, format!("maxval {maxval} unsupported, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(2, "zero image extent"));
    }
    match b.get(i) {
        Some(c) if c.is_ascii_whitespace() => Ok(Header {
            channels,
            width,
            height,
            payload: i + 1,
        }),
        _ => Err(parse_err(i, "expected single whitespace before payload")),
    }
}

/// Decode to `[C, H, W]` with values `p / 255`.
pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let h = parse_header(bytes)?;
    let n = h.channels * h.width * h.height;
    let payload = &bytes[h.payload..];
    if payload.len() < n {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: {} of {n} bytes", payload.len()),
        ));
    }
    let plane = h.width * h.height;
    let mut data = vec![0.0f32; n];
    for (p, px) in payload[..n].chunks_exact(h.channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * plane + p] = v as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[h.channels, h.height, h.width], data)
}

/// Encode a `[1, H, W]` (P5) or `[3, H, W]` (P6) tensor, quantising
/// `round(255 v)` after clamping to [0, 1].
pub fn encode(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = match t.shape() {
        &[c @ (1 | 3), h, w] => (c, h, w),
        s => return Err(Error::shape(s, "netpbm needs [1|3, H, W]")),
    };
    let mut out = format!("{}\n{w} {h}\n255\n", if c == 1 { "P5" } else { "P6" }).into_bytes();
    let plane = h * w;
    let d = t.data();
    out.reserve(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            out.push((d[ch * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn save(path: &Path, t: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode(t)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_values() {
        let t = decode(b"P5\n2 2\n255\n\x00\xff\x80\x40").unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        let expect = [0.0, 1.0, 0.50196, 0.25098];
        for (a, e) in t.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-5);
        }
    }

    #[test]
    fn p6_is_planar_after_decode() {
        let t = decode(b"P6 # comment\n2 1 255\n\x01\x02\x03\x04\x05\x06").unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        let bytes: Vec<u8> = t.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(bytes, [1, 4, 2, 5, 3, 6]);
    }

    #[test]
    fn errors_name_offsets() {
        assert!(matches!(decode(b"P3\n1 1\n255\n"), Err(Error::Parse { offset: 0, .. })));
        let e = decode(b"P6\n2 1\n255\n\x00\x00\x00\x00\x00").unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 16, .. }), "{e}");
        assert!(matches!(decode(b"P5\n1 1\n65535\n\x00\x00"), Err(Error::Parse { offset: 7, .. })));
        assert!(decode(b"P5\n1\n").is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let data: Vec<f32> = (0..12).map(|i| (i * 21) as f32 / 255.0).collect();
        let t = Tensor::from_vec(&[3, 2, 2], data).unwrap();
        let back = decode(&encode(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
