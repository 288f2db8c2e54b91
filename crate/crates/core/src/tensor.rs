//! Dense row-major `f64` tensors and the handful of kernels the layers need.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolution kernels are always 5×5 with same-size zero padding.
pub const KERNEL: usize = 5;
pub const PAD: usize = KERNEL / 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.contains(&0) || n != data.len() {
            return Err(Error::dim("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Builds a 2-D tensor from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension (batch size for activations).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all dimensions after the first.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transpose2(&self) -> Tensor {
        assert_eq!(self.shape.len(), 2, "transpose2 needs a matrix");
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor {
            shape: vec![n, m],
            data: out,
        }
    }

    /// Gathers the listed leading-dimension rows into a new tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Tensor {
        let w = self.row_len();
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            data.extend_from_slice(&self.data[r * w..(r + 1) * w]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Tensor { shape, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `c[i,j] = Σ_l a[i,l]·b[l,j]`, accumulated in ascending `l` for every output element.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::dim("matmul", &a.shape, &b.shape));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut c = vec![0.0; m * n];
    matmul_into(&a.data, &b.data, &mut c, m, k, n);
    Ok(Tensor {
        shape: vec![m, n],
        data: c,
    })
}

/// Accumulates `a (m×k) · b (k×n)` into `c`. The i-l-j loop order keeps each
/// `c[i,j]` summed in ascending `l`, identical to the textbook triple loop.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Unfolds a `C×H×W` image into a `(C·25)×(H·W)` patch matrix with zero padding.
pub(crate) fn im2col(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; c * KERNEL * KERNEL * hw];
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ch * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - PAD as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    for x in 0..w {
                        let sx = x as isize + kx as isize - PAD as isize;
                        if sx >= 0 && (sx as usize) < w {
                            dst[y * w + x] = plane[sy * w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
pub(crate) fn col2im(cols: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut img = vec![0.0; c * hw];
    for ch in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ch * KERNEL + ky) * KERNEL + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - PAD as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    for x in 0..w {
                        let sx = x as isize + kx as isize - PAD as isize;
                        if sx >= 0 && (sx as usize) < w {
                            img[ch * hw + sy * w + sx as usize] += src[y * w + x];
                        }
                    }
                }
            }
        }
    }
    img
}

/// Same-size 5×5 cross-correlation of a `C_in×H×W` image with `C_out×C_in×5×5` kernels.
pub fn conv2d(input: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let ks = kernels.shape();
    if input.shape.len() != 3 || ks.len() != 4 || ks[1] != input.shape[0] || ks[2] != KERNEL || ks[3] != KERNEL {
        return Err(Error::dim("conv2d", &input.shape, ks));
    }
    let (c_in, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let c_out = ks[0];
    let cols = im2col(&input.data, c_in, h, w);
    let mut out = vec![0.0; c_out * h * w];
    matmul_into(&kernels.data, &cols, &mut out, c_out, c_in * KERNEL * KERNEL, h * w);
    Ok(Tensor {
        shape: vec![c_out, h, w],
        data: out,
    })
}

/// Output spatial size of a 2×2 stride-2 pool; a trailing odd row/column forms a 1-wide window.
pub fn pooled_len(n: usize) -> usize {
    n.div_ceil(2)
}

/// Non-overlapping 2×2 max pooling over a `C×H×W` image.
///
/// Returns the pooled image and, per output element, the flat input index of the
/// maximum. Ties go to the smallest flat index.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if input.shape.len() != 3 {
        return Err(Error::dim("maxpool2", &input.shape, &[0, 0, 0]));
    }
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (ph, pw) = (pooled_len(h), pooled_len(w));
    let mut out = Vec::with_capacity(c * ph * pw);
    let mut argmax = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for oy in 0..ph {
            for ox in 0..pw {
                let mut best_idx = usize::MAX;
                let mut best = f64::NEG_INFINITY;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x in 2 * ox..(2 * ox + 2).min(w) {
                        let idx = (ch * h + y) * w + x;
                        let v = input.data[idx];
                        // scan order is increasing flat index, so strict > keeps the first
                        if best_idx == usize::MAX || v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((
        Tensor {
            shape: vec![c, ph, pw],
            data: out,
        },
        argmax,
    ))
}
