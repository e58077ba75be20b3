//! Pixel-level primitives shared by the losses and the metrics.
//!
//! Windowed operations (SSIM moments, Sobel, Gaussian blur) pad by mirror
//! reflection without repeating the edge sample (`… 2 1 | 0 1 2 … n-1 | n-2 …`).
//! SSIM uses a uniform box window; moments are population moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Rec. 601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Mirror-reflects an out-of-range index into `0..n`.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

pub fn to_grayscale(img: &ImageTensor) -> Result<ImageTensor> {
    img.ensure_channels(&[3])?;
    let data = img
        .as_slice()
        .chunks_exact(3)
        .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
        .collect();
    ImageTensor::from_vec(img.height(), img.width(), 1, data)
}

/// Adjoint of [`to_grayscale`]: spreads a luminance gradient over RGB.
pub(crate) fn grayscale_backward(grad: &ImageTensor) -> ImageTensor {
    ImageTensor::from_fn(grad.height(), grad.width(), 3, |y, x, c| LUMA[c] * grad.get(y, x, 0))
}

fn luminance(img: &ImageTensor) -> Result<ImageTensor> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => to_grayscale(img),
        n => Err(Error::ChannelCount {
            expected: "1 or 3".into(),
            actual: n,
        }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub d1: f64,
    pub d2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            d1: 1e-4,
            d2: 9e-4,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::validation(
                "ssim.window",
                format!("must be odd and >= 3, got {}", self.window),
            ));
        }
        if !(self.d1 > 0.0) {
            return Err(Error::validation("ssim.d1", "must be > 0"));
        }
        if !(self.d2 > 0.0) {
            return Err(Error::validation("ssim.d2", "must be > 0"));
        }
        Ok(())
    }
}

/// One plane of an image, stored row-major.
struct Plane<'a> {
    h: usize,
    w: usize,
    data: &'a [f64],
}

fn box_rows(src: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let inv = 1.0 / k as f64;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = 0.0;
            for d in -r..=r {
                s += row[reflect_index(x as isize + d, w)];
            }
            out[y * w + x] = s * inv;
        }
    }
    out
}

fn box_cols(src: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let inv = 1.0 / k as f64;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for d in -r..=r {
            let sy = reflect_index(y as isize + d, h);
            let (dst, srow) = (&mut out[y * w..(y + 1) * w], &src[sy * w..(sy + 1) * w]);
            for (o, s) in dst.iter_mut().zip(srow) {
                *o += s;
            }
        }
        for o in &mut out[y * w..(y + 1) * w] {
            *o *= inv;
        }
    }
    out
}

fn box_rows_adjoint(g: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let inv = 1.0 / k as f64;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let v = g[y * w + x] * inv;
            for d in -r..=r {
                out[y * w + reflect_index(x as isize + d, w)] += v;
            }
        }
    }
    out
}

fn box_cols_adjoint(g: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let inv = 1.0 / k as f64;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for d in -r..=r {
            let ty = reflect_index(y as isize + d, h);
            for x in 0..w {
                out[ty * w + x] += g[y * w + x] * inv;
            }
        }
    }
    out
}

/// Uniform `k×k` window mean with reflective borders.
fn box_mean(p: &Plane<'_>, k: usize) -> Vec<f64> {
    box_cols(&box_rows(p.data, p.h, p.w, k), p.h, p.w, k)
}

fn box_mean_adjoint(g: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    box_rows_adjoint(&box_cols_adjoint(g, h, w, k), h, w, k)
}

/// Local moments of a pair of images over the SSIM window.
#[derive(Clone, Debug)]
pub struct WindowStats {
    pub mu_e: ImageTensor,
    pub mu_c: ImageTensor,
    pub var_e: ImageTensor,
    pub var_c: ImageTensor,
    pub cov_ec: ImageTensor,
}

struct PlaneMoments {
    mu_e: Vec<f64>,
    mu_c: Vec<f64>,
    var_e: Vec<f64>,
    var_c: Vec<f64>,
    cov: Vec<f64>,
}

fn plane_moments(e: &[f64], c: &[f64], h: usize, w: usize, k: usize) -> PlaneMoments {
    let mean = |d: &[f64]| box_mean(&Plane { h, w, data: d }, k);
    let ee: Vec<f64> = e.iter().map(|v| v * v).collect();
    let cc: Vec<f64> = c.iter().map(|v| v * v).collect();
    let ec: Vec<f64> = e.iter().zip(c).map(|(a, b)| a * b).collect();
    let mu_e = mean(e);
    let mu_c = mean(c);
    let e2 = mean(&ee);
    let c2 = mean(&cc);
    let ec = mean(&ec);
    let n = h * w;
    let mut var_e = vec![0.0; n];
    let mut var_c = vec![0.0; n];
    let mut cov = vec![0.0; n];
    for i in 0..n {
        var_e[i] = e2[i] - mu_e[i] * mu_e[i];
        var_c[i] = c2[i] - mu_c[i] * mu_c[i];
        cov[i] = ec[i] - mu_e[i] * mu_c[i];
    }
    PlaneMoments {
        mu_e,
        mu_c,
        var_e,
        var_c,
        cov,
    }
}

fn check_pair(e: &ImageTensor, c: &ImageTensor, p: &SsimParams) -> Result<()> {
    p.validate()?;
    e.ensure_same_shape(c)?;
    if e.is_empty() {
        return Err(Error::TooSmall {
            height: e.height(),
            width: e.width(),
            reason: "empty image".into(),
        });
    }
    Ok(())
}

fn interleave(planes: Vec<Vec<f64>>, h: usize, w: usize) -> ImageTensor {
    let ch = planes.len();
    ImageTensor::from_fn(h, w, ch, |y, x, c| planes[c][y * w + x])
}

pub fn window_stats(e: &ImageTensor, c: &ImageTensor, p: &SsimParams) -> Result<WindowStats> {
    check_pair(e, c, p)?;
    let (h, w) = (e.height(), e.width());
    let mut parts: [Vec<Vec<f64>>; 5] = Default::default();
    for ch in 0..e.channels() {
        let m = plane_moments(e.channel(ch).as_slice(), c.channel(ch).as_slice(), h, w, p.window);
        parts[0].push(m.mu_e);
        parts[1].push(m.mu_c);
        parts[2].push(m.var_e);
        parts[3].push(m.var_c);
        parts[4].push(m.cov);
    }
    let [mu_e, mu_c, var_e, var_c, cov_ec] = parts.map(|p| interleave(p, h, w));
    Ok(WindowStats {
        mu_e,
        mu_c,
        var_e,
        var_c,
        cov_ec,
    })
}

#[inline]
fn ssim_terms(mu_e: f64, mu_c: f64, var_e: f64, var_c: f64, cov: f64, p: &SsimParams) -> [f64; 4] {
    [
        2.0 * mu_e * mu_c + p.d1,
        2.0 * cov + p.d2,
        mu_e * mu_e + mu_c * mu_c + p.d1,
        var_e + var_c + p.d2,
    ]
}

/// Per-pixel, per-channel SSIM over a uniform window.
pub fn ssim_map(e: &ImageTensor, c: &ImageTensor, p: &SsimParams) -> Result<ImageTensor> {
    check_pair(e, c, p)?;
    let (h, w) = (e.height(), e.width());
    let mut planes = Vec::with_capacity(e.channels());
    for ch in 0..e.channels() {
        let m = plane_moments(e.channel(ch).as_slice(), c.channel(ch).as_slice(), h, w, p.window);
        let s = (0..h * w)
            .map(|i| {
                let [a1, a2, b1, b2] = ssim_terms(m.mu_e[i], m.mu_c[i], m.var_e[i], m.var_c[i], m.cov[i], p);
                (a1 * a2) / (b1 * b2)
            })
            .collect();
        planes.push(s);
    }
    Ok(interleave(planes, h, w))
}

/// Mean SSIM over all pixels and channels.
pub fn mean_ssim(e: &ImageTensor, c: &ImageTensor, p: &SsimParams) -> Result<f64> {
    Ok(ssim_map(e, c, p)?.mean())
}

/// Mean SSIM and its gradient with respect to `e`.
pub(crate) fn mean_ssim_with_grad(e: &ImageTensor, c: &ImageTensor, p: &SsimParams) -> Result<(f64, ImageTensor)> {
    check_pair(e, c, p)?;
    let (h, w, chans) = (e.height(), e.width(), e.channels());
    let n = (h * w * chans) as f64;
    let mut total = 0.0;
    let mut grad = ImageTensor::zeros(h, w, chans);
    for ch in 0..chans {
        let ep = e.channel(ch);
        let cp = c.channel(ch);
        let m = plane_moments(ep.as_slice(), cp.as_slice(), h, w, p.window);
        // dS/d(mu_e), dS/d(E[e^2]), dS/d(E[ec]) per window centre
        let mut g_mu = vec![0.0; h * w];
        let mut g_e2 = vec![0.0; h * w];
        let mut g_ec = vec![0.0; h * w];
        for i in 0..h * w {
            let (mu_e, mu_c) = (m.mu_e[i], m.mu_c[i]);
            let [a1, a2, b1, b2] = ssim_terms(mu_e, mu_c, m.var_e[i], m.var_c[i], m.cov[i], p);
            let s = (a1 * a2) / (b1 * b2);
            total += s;
            g_mu[i] = s * (2.0 * mu_c / a1 - 2.0 * mu_c / a2 - 2.0 * mu_e / b1 + 2.0 * mu_e / b2) / n;
            g_e2[i] = -s / b2 / n;
            g_ec[i] = 2.0 * s / a2 / n;
        }
        let a = box_mean_adjoint(&g_mu, h, w, p.window);
        let b = box_mean_adjoint(&g_e2, h, w, p.window);
        let d = box_mean_adjoint(&g_ec, h, w, p.window);
        for i in 0..h * w {
            let (y, x) = (i / w, i % w);
            let ev = ep.as_slice()[i];
            let cv = cp.as_slice()[i];
            grad.set(y, x, ch, a[i] + 2.0 * ev * b[i] + cv * d[i]);
        }
    }
    Ok((total / n, grad))
}

fn check_sobel_size(img: &ImageTensor) -> Result<()> {
    if img.height() < 3 || img.width() < 3 {
        return Err(Error::TooSmall {
            height: img.height(),
            width: img.width(),
            reason: "Sobel needs at least 3x3".into(),
        });
    }
    Ok(())
}

fn sobel_gradients(lum: &ImageTensor) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (lum.height(), lum.width());
    let src = lum.as_slice();
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        let rows = [-1isize, 0, 1].map(|d| reflect_index(y as isize + d, h) * w);
        for x in 0..w {
            let cols = [-1isize, 0, 1].map(|d| reflect_index(x as isize + d, w));
            let at = |r: usize, c: usize| src[rows[r] + cols[c]];
            // positive and negative halves summed in the same order, so flat
            // regions cancel exactly
            gx[y * w + x] = (at(0, 2) + 2.0 * at(1, 2) + at(2, 2)) - (at(0, 0) + 2.0 * at(1, 0) + at(2, 0));
            gy[y * w + x] = (at(2, 0) + 2.0 * at(2, 1) + at(2, 2)) - (at(0, 0) + 2.0 * at(0, 1) + at(0, 2));
        }
    }
    (gx, gy)
}

/// Sobel gradient magnitude of the luminance.
pub fn sobel_edge_map(img: &ImageTensor) -> Result<ImageTensor> {
    check_sobel_size(img)?;
    let lum = luminance(img)?;
    let (gx, gy) = sobel_gradients(&lum);
    let data = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    ImageTensor::from_vec(img.height(), img.width(), 1, data)
}

/// Vector-Jacobian product of [`sobel_edge_map`]. Where the magnitude is
/// zero the (non-existent) derivative is taken as zero.
pub(crate) fn sobel_edge_backward(img: &ImageTensor, grad_out: &ImageTensor) -> Result<ImageTensor> {
    check_sobel_size(img)?;
    let lum = luminance(img)?;
    let (h, w) = (lum.height(), lum.width());
    let (gx, gy) = sobel_gradients(&lum);
    let mut g_lum = ImageTensor::zeros(h, w, 1);
    let gl = g_lum.as_mut_slice();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mag = gx[i].hypot(gy[i]);
            if mag == 0.0 {
                continue;
            }
            let go = grad_out.as_slice()[i];
            let (ux, uy) = (go * gx[i] / mag, go * gy[i] / mag);
            for (ky, dy) in (-1isize..=1).enumerate() {
                let yy = reflect_index(y as isize + dy, h);
                for (kx, dx) in (-1isize..=1).enumerate() {
                    let xx = reflect_index(x as isize + dx, w);
                    gl[yy * w + xx] += SOBEL_X[ky][kx] * ux + SOBEL_Y[ky][kx] * uy;
                }
            }
        }
    }
    Ok(if img.channels() == 3 {
        grayscale_backward(&g_lum)
    } else {
        g_lum
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur applied to every channel.
pub fn gaussian_blur(img: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::validation("blur_sigma", "must be finite and > 0"));
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut tmp = ImageTensor::zeros(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut s = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    s += kv * img.get(y, reflect_index(x as isize + j as isize - r, w), c);
                }
                tmp.set(y, x, c, s);
            }
        }
    }
    let mut out = ImageTensor::zeros(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut s = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    s += kv * tmp.get(reflect_index(y as isize + j as isize - r, h), x, c);
                }
                out.set(y, x, c, s);
            }
        }
    }
    Ok(out)
}
