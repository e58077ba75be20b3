//! Composite restoration loss `L = L_SL + L_PL + L_EL`.
//!
//! * structural: `1 - mean SSIM` over pixels and channels
//! * perceptual: `MSE + 2·MAE + ||φ(e) - φ(c)||₂`
//! * edge: `||Ω(e) - Ω(c)||₂` with Ω the Sobel magnitude of the luminance
//!
//! Every term has an analytic gradient with respect to the enhanced image
//! `e`; the clear image `c` is a constant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::imaging::{mean_ssim_with_grad, sobel_edge_backward, sobel_edge_map, SsimParams};
use crate::tensor::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossToggles {
    pub use_structural: bool,
    pub use_perceptual: bool,
    pub use_edge: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self::ALL
    }
}

impl LossToggles {
    pub const ALL: LossToggles = LossToggles {
        use_structural: true,
        use_perceptual: true,
        use_edge: true,
    };

    pub fn new(use_structural: bool, use_perceptual: bool, use_edge: bool) -> Self {
        Self {
            use_structural,
            use_perceptual,
            use_edge,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.use_structural || self.use_perceptual || self.use_edge) {
            return Err(Error::validation("toggles", "at least one loss term must be enabled"));
        }
        Ok(())
    }

    /// The seven valid combinations.
    pub fn all_valid() -> Vec<LossToggles> {
        (1u8..8)
            .map(|m| LossToggles::new(m & 1 != 0, m & 2 != 0, m & 4 != 0))
            .collect()
    }

    /// Parses a comma-separated subset of `sl,pl,el`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut t = LossToggles::new(false, false, false);
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "sl" => t.use_structural = true,
                "pl" => t.use_perceptual = true,
                "el" => t.use_edge = true,
                other => {
                    return Err(Error::validation(
                        "toggles",
                        format!("unknown term `{other}` (expected sl, pl, el)"),
                    ))
                }
            }
        }
        t.validate()?;
        Ok(t)
    }
}

/// How the Euclidean norms of the feature and edge terms are scaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormScaling {
    /// Plain `||d||₂`.
    #[default]
    Sum,
    /// `||d||₂ / sqrt(len)`, i.e. the root mean square.
    Mean,
}

impl NormScaling {
    fn factor(self, len: usize) -> f64 {
        match self {
            NormScaling::Sum => 1.0,
            NormScaling::Mean => 1.0 / (len.max(1) as f64).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub toggles: LossToggles,
    pub ssim: SsimParams,
    pub norm: NormScaling,
    /// Evaluate disabled terms for reporting (they never enter `total`).
    #[serde(default)]
    pub report_disabled: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sl: f64,
    pub pl_mse: f64,
    pub pl_mae: f64,
    pub pl_feat: f64,
    pub el: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `pl_mse + 2·pl_mae + pl_feat`.
    pub fn pl(&self) -> f64 {
        self.pl_mse + 2.0 * self.pl_mae + self.pl_feat
    }

    /// Sum of the enabled terms.
    pub fn enabled_sum(&self, t: &LossToggles) -> f64 {
        let mut s = 0.0;
        if t.use_structural {
            s += self.sl;
        }
        if t.use_perceptual {
            s += self.pl();
        }
        if t.use_edge {
            s += self.el;
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        [self.sl, self.pl_mse, self.pl_mae, self.pl_feat, self.el, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.sl += b.sl;
            m.pl_mse += b.pl_mse;
            m.pl_mae += b.pl_mae;
            m.pl_feat += b.pl_feat;
            m.el += b.el;
            m.total += b.total;
        }
        m.sl /= n;
        m.pl_mse /= n;
        m.pl_mae /= n;
        m.pl_feat /= n;
        m.el /= n;
        m.total /= n;
        m
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PerceptualParts {
    pub mse: f64,
    pub mae: f64,
    pub feat: f64,
}

impl PerceptualParts {
    pub fn combined(&self) -> f64 {
        self.mse + 2.0 * self.mae + self.feat
    }
}

fn check_rgb_pair(e: &ImageTensor, c: &ImageTensor) -> Result<()> {
    e.ensure_same_shape(c)?;
    e.ensure_channels(&[3])
}

pub fn structural_loss(e: &ImageTensor, c: &ImageTensor, p: &SsimParams) -> Result<f64> {
    Ok(structural_loss_with_grad(e, c, p)?.0)
}

pub fn structural_loss_with_grad(e: &ImageTensor, c: &ImageTensor, p: &SsimParams) -> Result<(f64, ImageTensor)> {
    check_rgb_pair(e, c)?;
    let (m, g) = mean_ssim_with_grad(e, c, p)?;
    Ok((1.0 - m, g.map(|v| -v)))
}

fn euclidean(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    (n, d)
}

fn extractor_err(phi: &dyn FeatureExtractor, e: Error) -> Error {
    match e {
        e @ Error::Extractor { .. } => e,
        other => Error::Extractor {
            extractor: phi.name().into(),
            reason: other.to_string(),
        },
    }
}

pub fn perceptual_loss(
    e: &ImageTensor,
    c: &ImageTensor,
    phi: &dyn FeatureExtractor,
    norm: NormScaling,
) -> Result<PerceptualParts> {
    Ok(perceptual_loss_impl(e, c, phi, norm, false)?.0)
}

pub fn perceptual_loss_with_grad(
    e: &ImageTensor,
    c: &ImageTensor,
    phi: &dyn FeatureExtractor,
    norm: NormScaling,
) -> Result<(PerceptualParts, ImageTensor)> {
    let (parts, g) = perceptual_loss_impl(e, c, phi, norm, true)?;
    Ok((parts, g.expect("gradient requested")))
}

fn perceptual_loss_impl(
    e: &ImageTensor,
    c: &ImageTensor,
    phi: &dyn FeatureExtractor,
    norm: NormScaling,
    want_grad: bool,
) -> Result<(PerceptualParts, Option<ImageTensor>)> {
    e.ensure_same_shape(c)?;
    let n = e.len() as f64;
    let (mut mse, mut mae) = (0.0, 0.0);
    for (a, b) in e.as_slice().iter().zip(c.as_slice()) {
        let d = a - b;
        mse += d * d;
        mae += d.abs();
    }
    let fe = phi.extract(e).map_err(|err| extractor_err(phi, err))?;
    let fc = phi.extract(c).map_err(|err| extractor_err(phi, err))?;
    if fe.len() != fc.len() {
        return Err(Error::Extractor {
            extractor: phi.name().into(),
            reason: format!("feature lengths differ: {} vs {}", fe.len(), fc.len()),
        });
    }
    let scale = norm.factor(fe.len());
    let (dist, diff) = euclidean(&fe, &fc);
    let parts = PerceptualParts {
        mse: mse / n,
        mae: mae / n,
        feat: scale * dist,
    };
    if !want_grad {
        return Ok((parts, None));
    }
    let mut grad = e.zip_map(c, |a, b| {
        let d = a - b;
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        (2.0 * d + 2.0 * sign) / n
    })?;
    if dist > 0.0 {
        let gf: Vec<f64> = diff.iter().map(|d| scale * d / dist).collect();
        let gfeat = phi.backward(e, &gf).map_err(|err| extractor_err(phi, err))?;
        grad.add_assign(&gfeat)?;
    }
    Ok((parts, Some(grad)))
}

pub fn edge_loss(e: &ImageTensor, c: &ImageTensor, norm: NormScaling) -> Result<f64> {
    e.ensure_same_shape(c)?;
    let (de, dc) = (sobel_edge_map(e)?, sobel_edge_map(c)?);
    Ok(norm.factor(de.len()) * euclidean(de.as_slice(), dc.as_slice()).0)
}

pub fn edge_loss_with_grad(e: &ImageTensor, c: &ImageTensor, norm: NormScaling) -> Result<(f64, ImageTensor)> {
    e.ensure_same_shape(c)?;
    let (de, dc) = (sobel_edge_map(e)?, sobel_edge_map(c)?);
    let scale = norm.factor(de.len());
    let (dist, diff) = euclidean(de.as_slice(), dc.as_slice());
    if dist == 0.0 {
        return Ok((0.0, ImageTensor::zeros(e.height(), e.width(), e.channels())));
    }
    let g = ImageTensor::from_vec(
        de.height(),
        de.width(),
        1,
        diff.iter().map(|d| scale * d / dist).collect(),
    )?;
    Ok((scale * dist, sobel_edge_backward(e, &g)?))
}

pub fn composite_loss(
    e: &ImageTensor,
    c: &ImageTensor,
    cfg: &LossConfig,
    phi: &dyn FeatureExtractor,
) -> Result<LossBreakdown> {
    Ok(composite_impl(e, c, cfg, phi, false)?.0)
}

/// Loss breakdown plus the gradient of `total` with respect to `e`.
pub fn composite_loss_with_grad(
    e: &ImageTensor,
    c: &ImageTensor,
    cfg: &LossConfig,
    phi: &dyn FeatureExtractor,
) -> Result<(LossBreakdown, ImageTensor)> {
    let (b, g) = composite_impl(e, c, cfg, phi, true)?;
    Ok((b, g.expect("gradient requested")))
}

fn composite_impl(
    e: &ImageTensor,
    c: &ImageTensor,
    cfg: &LossConfig,
    phi: &dyn FeatureExtractor,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<ImageTensor>)> {
    let t = cfg.toggles;
    t.validate()?;
    check_rgb_pair(e, c)?;
    let mut b = LossBreakdown::default();
    let mut grad = want_grad.then(|| ImageTensor::zeros(e.height(), e.width(), e.channels()));

    let mut accumulate = |g: ImageTensor| -> Result<()> {
        if let Some(acc) = grad.as_mut() {
            acc.add_assign(&g)?;
        }
        Ok(())
    };

    if t.use_structural {
        if want_grad {
            let (v, g) = structural_loss_with_grad(e, c, &cfg.ssim)?;
            b.sl = v;
            accumulate(g)?;
        } else {
            b.sl = structural_loss(e, c, &cfg.ssim)?;
        }
    } else if cfg.report_disabled {
        b.sl = structural_loss(e, c, &cfg.ssim)?;
    }

    if t.use_perceptual || cfg.report_disabled {
        let (parts, g) = perceptual_loss_impl(e, c, phi, cfg.norm, want_grad && t.use_perceptual)?;
        b.pl_mse = parts.mse;
        b.pl_mae = parts.mae;
        b.pl_feat = parts.feat;
        if let Some(g) = g {
            accumulate(g)?;
        }
    }

    if t.use_edge {
        if want_grad {
            let (v, g) = edge_loss_with_grad(e, c, cfg.norm)?;
            b.el = v;
            accumulate(g)?;
        } else {
            b.el = edge_loss(e, c, cfg.norm)?;
        }
    } else if cfg.report_disabled {
        b.el = edge_loss(e, c, cfg.norm)?;
    }

    b.total = b.enabled_sum(&t);
    Ok((b, grad))
}
