//! Binary tensor files and named-tensor checkpoints.
//!
//! A tensor file is the magic `LMBF0001`, a little-endian `u32` rank, one
//! `u32` per extent, then the values as little-endian `f32`. A checkpoint
//! directory holds one such file per named tensor and a `manifest.txt`
//! with one `name file shape` line per tensor (shape written as `8x3x3x3`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const MAGIC: &[u8; 8] = b"LMBF0001";
pub const MANIFEST: &str = "manifest.txt";

pub fn encode_tensor<T: Element>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Parse {
            offset,
            message: "truncated header".into(),
        })
}

pub fn decode_tensor<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, expected LMBF0001".into(),
        });
    }
    let rank = read_u32(bytes, 8)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(read_u32(bytes, 12 + 4 * i)? as usize);
    }
    let start = 12 + 4 * rank;
    let n: usize = shape.iter().product();
    let payload = bytes.get(start..start + 4 * n).ok_or_else(|| Error::Parse {
        offset: bytes.len(),
        message: format!("truncated payload: expected {} bytes of f32 data", 4 * n),
    })?;
    if bytes.len() != start + 4 * n {
        return Err(Error::Parse {
            offset: start + 4 * n,
            message: "trailing bytes after tensor payload".into(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    Tensor::from_vec(&shape, data)
}

pub fn save_tensor<T: Element>(path: &Path, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn load_tensor<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

fn shape_string(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn file_name(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:04}_{clean}.bin")
}

pub fn save_checkpoint<'a, T: Element + 'a>(
    dir: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, (name, t)) in tensors.into_iter().enumerate() {
        if name.split_whitespace().count() != 1 {
            return Err(Error::Contract(format!("tensor name {name:?} must be one word")));
        }
        let file = file_name(i, name);
        save_tensor(&dir.join(&file), t)?;
        manifest.push_str(&format!("{name} {file} {}\n", shape_string(t.shape())));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Element>(dir: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if let [name, file, shape] = fields[..] {
            let t: Tensor<T> = load_tensor(&dir.join(file))?;
            if shape_string(t.shape()) != shape {
                return Err(Error::Parse {
                    offset,
                    message: format!("{name}: manifest shape {shape} but file holds {:?}", t.shape()),
                });
            }
            out.push((name.to_string(), t));
        } else if !line.trim().is_empty() {
            return Err(Error::Parse {
                offset,
                message: format!("manifest line must be `name file shape`: {line:?}"),
            });
        }
        offset += line.len() + 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_vec(&[2, 1], vec![1.0, -0.5]).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(&b[..8], b"LMBF0001");
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..20], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[20..24], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 28);
    }

    #[test]
    fn round_trip_and_errors() {
        let t = Tensor::<f32>::from_vec(&[1, 2, 3], vec![0.1, 0.2, 0.3, -4.0, 5.5, 1e-7]).unwrap();
        let back: Tensor<f32> = decode_tensor(&encode_tensor(&t)).unwrap();
        assert_eq!(back, t);

        let mut bad = encode_tensor(&t);
        bad[0] = b'X';
        assert!(matches!(decode_tensor::<f32>(&bad), Err(Error::Parse { offset: 0, .. })));
        let short = &encode_tensor(&t)[..30];
        assert!(decode_tensor::<f32>(short).is_err());
    }

    #[test]
    fn checkpoint_directory() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::full(&[1, 3, 2, 2], 0.25).unwrap();
        save_checkpoint(dir.path(), [("enc.w", &a), ("enc.b", &b)]).unwrap();
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(manifest, "enc.w 0000_enc.w.bin 2\nenc.b 0001_enc.b.bin 1x3x2x2\n");
        let loaded = load_checkpoint::<f32>(dir.path()).unwrap();
        assert_eq!(loaded, vec![("enc.w".to_string(), a), ("enc.b".to_string(), b)]);
    }
}
