//! 2-D convolution and max pooling on channel-last tensors, with backward
//! passes.
//!
//! Convolution lowers row bands of the input to an im2col matrix and hands
//! the products to `matrixmultiply`. Weights are laid out `[ky][kx][cin][cout]`
//! so the weight matrix is `(k·k·cin) × cout` row-major, and an output band is
//! directly `(rows·W_out) × cout`, i.e. channel-last.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Upper bound on the im2col scratch buffer, in elements.
const BAND_ELEMS: usize = 1 << 18;

/// `c = a·b + beta·c` with optional transposition of the stored operands.
///
/// `a` is logically `m×k`, `b` is `k×n`, `c` is `m×n` row-major. When a
/// `*_t` flag is set the operand is stored as the transpose (row-major).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe exactly the m×k, k×n and m×n regions of
    // the slices, whose lengths were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride-1 convolution with "same" zero padding.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels * self.out_channels
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.out_channels
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel || wp < self.kernel {
            return Err(Error::TooSmall {
                height: h,
                width: w,
                reason: format!("kernel {} does not fit", self.kernel),
            });
        }
        Ok((
            (hp - self.kernel) / self.stride + 1,
            (wp - self.kernel) / self.stride + 1,
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(spec: ConvSpec) -> Self {
        Self {
            spec,
            weight: vec![0.0; spec.weight_len()],
            bias: vec![0.0; spec.out_channels],
        }
    }

    /// He-normal weights (std `sqrt(2 / fan_in)`), zero bias.
    pub fn he_normal(spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let fan_in = (spec.kernel * spec.kernel * spec.in_channels) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
        let weight = (0..spec.weight_len()).map(|_| normal.sample(rng)).collect();
        Self {
            spec,
            weight,
            bias: vec![0.0; spec.out_channels],
        }
    }

    fn check_input(&self, x: &ImageTensor) -> Result<(usize, usize)> {
        if x.channels() != self.spec.in_channels {
            return Err(Error::ChannelCount {
                expected: self.spec.in_channels.to_string(),
                actual: x.channels(),
            });
        }
        self.spec.output_size(x.height(), x.width())
    }

    fn band_rows(&self, wo: usize) -> usize {
        let kk = self.spec.kernel * self.spec.kernel * self.spec.in_channels;
        (BAND_ELEMS / (wo * kk).max(1)).max(1)
    }

    /// Fills `col` with the patches for output rows `y0..y0+rows`.
    fn im2col(&self, x: &ImageTensor, wo: usize, y0: usize, rows: usize, col: &mut [f64]) {
        let s = self.spec;
        let (h, w, cin) = (x.height() as isize, x.width() as isize, s.in_channels);
        let kk = s.kernel * s.kernel * cin;
        let src = x.as_slice();
        for r in 0..rows {
            let oy = (y0 + r) as isize;
            for ox in 0..wo {
                let dst = &mut col[(r * wo + ox) * kk..(r * wo + ox + 1) * kk];
                let mut off = 0;
                for ky in 0..s.kernel {
                    let iy = oy * s.stride as isize + ky as isize - s.padding as isize;
                    for kx in 0..s.kernel {
                        let ix = ox as isize * s.stride as isize + kx as isize - s.padding as isize;
                        let d = &mut dst[off..off + cin];
                        if iy < 0 || iy >= h || ix < 0 || ix >= w {
                            d.fill(0.0);
                        } else {
                            let base = ((iy * w + ix) as usize) * cin;
                            d.copy_from_slice(&src[base..base + cin]);
                        }
                        off += cin;
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], wo: usize, y0: usize, rows: usize, gx: &mut ImageTensor) {
        let s = self.spec;
        let (h, w, cin) = (gx.height() as isize, gx.width() as isize, s.in_channels);
        let kk = s.kernel * s.kernel * cin;
        let dst = gx.as_mut_slice();
        for r in 0..rows {
            let oy = (y0 + r) as isize;
            for ox in 0..wo {
                let src = &col[(r * wo + ox) * kk..(r * wo + ox + 1) * kk];
                let mut off = 0;
                for ky in 0..s.kernel {
                    let iy = oy * s.stride as isize + ky as isize - s.padding as isize;
                    for kx in 0..s.kernel {
                        let ix = ox as isize * s.stride as isize + kx as isize - s.padding as isize;
                        if iy >= 0 && iy < h && ix >= 0 && ix < w {
                            let base = ((iy * w + ix) as usize) * cin;
                            for (d, v) in dst[base..base + cin].iter_mut().zip(&src[off..off + cin]) {
                                *d += v;
                            }
                        }
                        off += cin;
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &ImageTensor) -> Result<ImageTensor> {
        let (ho, wo) = self.check_input(x)?;
        let s = self.spec;
        let kk = s.kernel * s.kernel * s.in_channels;
        let cout = s.out_channels;
        let mut out = vec![0.0; ho * wo * cout];
        let band = self.band_rows(wo).min(ho);
        let mut col = vec![0.0; band * wo * kk];
        let mut y0 = 0;
        while y0 < ho {
            let rows = band.min(ho - y0);
            let m = rows * wo;
            self.im2col(x, wo, y0, rows, &mut col);
            let dst = &mut out[y0 * wo * cout..(y0 + rows) * wo * cout];
            for px in dst.chunks_exact_mut(cout) {
                px.copy_from_slice(&self.bias);
            }
            gemm(m, kk, cout, &col, false, &self.weight, false, 1.0, dst);
            y0 += rows;
        }
        ImageTensor::from_vec(ho, wo, cout, out)
    }

    /// Accumulates weight/bias gradients into `grad_w`/`grad_b` and returns
    /// the input gradient when `need_input_grad` is set.
    pub fn backward(
        &self,
        x: &ImageTensor,
        grad_out: &ImageTensor,
        grad_w: &mut [f64],
        grad_b: &mut [f64],
        need_input_grad: bool,
    ) -> Result<Option<ImageTensor>> {
        let (ho, wo) = self.check_input(x)?;
        let s = self.spec;
        if grad_out.shape().height != ho || grad_out.width() != wo || grad_out.channels() != s.out_channels {
            return Err(Error::ShapeMismatch {
                left: format!("{ho}x{wo}x{}", s.out_channels),
                right: grad_out.shape().to_string(),
            });
        }
        let kk = s.kernel * s.kernel * s.in_channels;
        let cout = s.out_channels;
        for px in grad_out.as_slice().chunks_exact(cout) {
            for (b, g) in grad_b.iter_mut().zip(px) {
                *b += g;
            }
        }
        let mut gx = need_input_grad.then(|| ImageTensor::zeros(x.height(), x.width(), s.in_channels));
        let band = self.band_rows(wo).min(ho);
        let mut col = vec![0.0; band * wo * kk];
        let mut y0 = 0;
        while y0 < ho {
            let rows = band.min(ho - y0);
            let m = rows * wo;
            let gy = &grad_out.as_slice()[y0 * wo * cout..(y0 + rows) * wo * cout];
            self.im2col(x, wo, y0, rows, &mut col);
            // dW += col^T · dY
            gemm(kk, m, cout, &col, true, gy, false, 1.0, grad_w);
            if let Some(gx) = gx.as_mut() {
                // dcol = dY · W^T
                gemm(m, cout, kk, gy, false, &self.weight, true, 0.0, &mut col[..m * kk]);
                self.col2im(&col, wo, y0, rows, gx);
            }
            y0 += rows;
        }
        Ok(gx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    pub fn same(window: usize) -> Self {
        Self {
            window,
            stride: 1,
            padding: window / 2,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: self.window,
            stride: self.stride,
            padding: self.padding,
        }
        .output_size(h, w)
    }
}

/// Max pooling; padded positions never win. Returns the output and, per
/// output element, the flat input index of the winning sample (first in scan
/// order on ties).
pub fn max_pool(x: &ImageTensor, p: PoolSpec) -> Result<(ImageTensor, Vec<u32>)> {
    let (ho, wo) = p.output_size(x.height(), x.width())?;
    let (h, w, c) = (x.height() as isize, x.width() as isize, x.channels());
    let src = x.as_slice();
    let mut out = vec![0.0; ho * wo * c];
    let mut arg = vec![0u32; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for ky in 0..p.window {
                    let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for kx in 0..p.window {
                        let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                        if ix < 0 || ix >= w {
                            continue;
                        }
                        let i = ((iy * w + ix) as usize) * c + ch;
                        if src[i] > best || best_i == usize::MAX {
                            best = src[i];
                            best_i = i;
                        }
                    }
                }
                let o = (oy * wo + ox) * c + ch;
                out[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    Ok((ImageTensor::from_vec(ho, wo, c, out)?, arg))
}

pub fn max_pool_backward(input_shape: (usize, usize, usize), argmax: &[u32], grad_out: &ImageTensor) -> ImageTensor {
    let (h, w, c) = input_shape;
    let mut g = ImageTensor::zeros(h, w, c);
    let dst = g.as_mut_slice();
    for (&i, &v) in argmax.iter().zip(grad_out.as_slice()) {
        dst[i as usize] += v;
    }
    g
}

pub fn relu_inplace(x: &mut ImageTensor) {
    for v in x.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward_inplace(activated: &ImageTensor, grad: &mut ImageTensor) {
    for (g, &a) in grad.as_mut_slice().iter_mut().zip(activated.as_slice()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}
