//! Slow, direct reference implementations used to check the optimized
//! kernels in `cat-core`, plus a reader for the PGM files the tool writes.

use std::path::Path;

use cat_core::Tensor;
use rand::Rng;

/// A tensor of independent draws from `lo..hi`.
pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi)).unwrap()
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "oracle length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Shannon entropy (natural log) of `softmax(logits)`.
pub fn oracle_entropy(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&v| (v - m).exp()).sum();
    logits
        .iter()
        .map(|&v| {
            let p = (v - m).exp() / z;
            -p * p.max(1e-12).ln()
        })
        .sum()
}

/// Direct-loop cross-correlation with zero padding.
pub fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64], pad: (usize, usize), stride: (usize, usize)) -> Vec<f64> {
    let (n, c, h, w) = x.dims4().unwrap();
    let (o, _, kh, kw) = k.dims4().unwrap();
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (w + 2 * pad.1 - kw) / stride.1 + 1;
    let mut out = Vec::with_capacity(n * o * oh * ow);
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b[oi];
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride.0 + dy) as isize - pad.0 as isize;
                                let ix = (xx * stride.1 + dx) as isize - pad.1 as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.at(&[ni, ci, iy as usize, ix as usize]) * k.at(&[oi, ci, dy, dx]);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Reflects `i` into `0..n` without repeating the edge sample.
pub fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n as isize {
            i = 2 * (n as isize - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Normalized Gaussian smoothing with mirrored borders, either vertical
/// only or separable over both axes when `full` is set.
pub fn naive_gaussian(x: &Tensor<f64>, k: usize, sigma: f64, full: bool) -> Vec<f64> {
    let r = (k / 2) as isize;
    let raw: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    let taps: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let (n, c, h, w) = x.dims4().unwrap();
    let mut out = Vec::with_capacity(x.len());
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for (ty, &a) in taps.iter().enumerate() {
                        let sy = mirror(y as isize + ty as isize - r, h);
                        if full {
                            for (tx, &b) in taps.iter().enumerate() {
                                let sx = mirror(xx as isize + tx as isize - r, w);
                                acc += a * b * x.at(&[ni, ci, sy, sx]);
                            }
                        } else {
                            acc += a * x.at(&[ni, ci, sy, xx]);
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Reads a binary PGM and returns `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> std::io::Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let bad = |what: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {what}", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("not an 8-bit P5 image"));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
    let (w, h) = (dim(&fields[1])?, dim(&fields[2])?);
    let pixels = bytes.get(pos + 1..).filter(|p| p.len() == w * h).ok_or_else(|| bad("pixel count mismatch"))?;
    Ok((w, h, pixels.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_of_uniform_and_peaked() {
        assert!((oracle_entropy(&[0.3; 8]) - 8f64.ln()).abs() < 1e-12);
        assert!(oracle_entropy(&[100.0, 0.0, 0.0]) < 1e-12);
        assert_eq!(oracle_entropy(&[4.0]), 0.0);
    }

    #[test]
    fn mirror_reflects_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| mirror(i, 4)).collect();
        assert_eq!(got, [3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(mirror(-5, 1), 0);
    }

    #[test]
    fn conv_with_delta_kernel_is_identity() {
        let x = Tensor::from_fn(vec![1, 1, 3, 4], |i| i as f64).unwrap();
        let mut k = Tensor::<f64>::zeros([1, 1, 3, 3]).unwrap();
        k.data_mut()[4] = 1.0;
        assert_eq!(naive_conv(&x, &k, &[0.0], (1, 1), (1, 1)), x.data());
        let sums = naive_conv(&x, &Tensor::full([1, 1, 3, 4], 1.0).unwrap(), &[0.5], (0, 0), (1, 1));
        assert_eq!(sums, [66.5]);
    }

    #[test]
    fn gaussian_preserves_constants() {
        let x = Tensor::<f64>::full([1, 2, 5, 3], 2.5).unwrap();
        for full in [false, true] {
            assert!(naive_gaussian(&x, 5, 1.3, full).iter().all(|v| (v - 2.5).abs() < 1e-12));
        }
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        std::fs::write(&path, b"P5\n3 2\n255\n\x00\x01\x02\x03\x04\xff").unwrap();
        assert_eq!(read_pgm(&path).unwrap(), (3, 2, vec![0, 1, 2, 3, 4, 255]));
        std::fs::write(&path, b"P5\n3 2\n255\n\x00").unwrap();
        assert!(read_pgm(&path).is_err());
    }
}
