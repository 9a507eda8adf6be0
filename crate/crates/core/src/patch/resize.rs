use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMode {
    Bilinear,
    Nearest,
}

/// Source coordinate of output index `o` under the half-pixel-centre
/// (align-corners false) convention.
fn source(o: usize, in_len: usize, out_len: usize) -> f64 {
    ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).clamp(0.0, (in_len - 1) as f64)
}

/// Resize each channel of a `[C, H, W]` tensor.
pub fn resize(t: &Tensor<f32>, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Tensor<f32>> {
    let &[c, h, w] = t.shape() else {
        return Err(Error::shape(t.shape(), "resize needs [C, H, W]"));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape(&[out_h, out_w], "resize target must be >= 1"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(t.clone());
    }
    let d = t.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    match mode {
        ResizeMode::Nearest => {
            let idx = |o: usize, n: usize, m: usize| ((o * 2 + 1) * n / (2 * m)).min(n - 1);
            for ch in 0..c {
                for y in 0..out_h {
                    let sy = idx(y, h, out_h);
                    for x in 0..out_w {
                        out.push(d[(ch * h + sy) * w + idx(x, w, out_w)]);
                    }
                }
            }
        }
        ResizeMode::Bilinear => {
            let taps = |o, n, m| {
                let s = source(o, n, m);
                let i0 = s.floor() as usize;
                (i0, (i0 + 1).min(n - 1), s - i0 as f64)
            };
            let xs: Vec<_> = (0..out_w).map(|x| taps(x, w, out_w)).collect();
            for ch in 0..c {
                for y in 0..out_h {
                    let (y0, y1, fy) = taps(y, h, out_h);
                    for &(x0, x1, fx) in &xs {
                        let at = |yy: usize, xx: usize| d[(ch * h + yy) * w + xx] as f64;
                        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                        let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                        out.push((top * (1.0 - fy) + bottom * fy) as f32);
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_bitwise() {
        let t = Tensor::from_vec(&[1, 2, 3], vec![0.1, 0.7, 0.3, 0.9, 0.2, 0.5]).unwrap();
        assert_eq!(resize(&t, 2, 3, ResizeMode::Bilinear).unwrap(), t);
    }

    #[test]
    fn bilinear_upsample_half_pixel() {
        // 1×2 → 1×4: sources -0.25→0, 0.25, 0.75, 1.25→1
        let t = Tensor::from_vec(&[1, 1, 2], vec![0.0, 1.0]).unwrap();
        let r = resize(&t, 1, 4, ResizeMode::Bilinear).unwrap();
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn nearest_keeps_binary_and_extents() {
        let data: Vec<f32> = (0..565 * 584).map(|i| ((i * 7) % 3 == 0) as u8 as f32).collect();
        let t = Tensor::from_vec(&[1, 584, 565], data).unwrap();
        let r = resize(&t, 640, 640, ResizeMode::Nearest).unwrap();
        assert_eq!(r.shape(), &[1, 640, 640]);
        assert!(r.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let b = resize(&t.map(|v| v * 0.5), 640, 640, ResizeMode::Bilinear).unwrap();
        assert!(b.data().iter().all(|&v| (0.0..=0.5).contains(&v)));
    }
}
