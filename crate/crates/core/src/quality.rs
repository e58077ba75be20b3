//! Spatial/spectral-entropy quality features and the shadow ratio.
//!
//! Per scale (full, ½, ¼ via 2×2 box averaging) the grayscale image is cut
//! into non-overlapping 8×8 blocks. Each block yields a spatial entropy (of a
//! 256-bin histogram over `[0, 1]`, bin width 1/256) and a spectral entropy
//! (of its normalized squared 2-D DCT-II coefficients, DC excluded). Each
//! entropy list is pooled to its central 60% and summarized by mean and
//! skewness, giving 12 features ordered scale-major as
//! `[spatial_mean, spatial_skew, spectral_mean, spectral_skew]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::to_grayscale;
use crate::tensor::ImageTensor;

pub const BLOCK: usize = 8;
pub const SCALES: usize = 3;
pub const HIST_BINS: usize = 256;
/// Largest possible spatial entropy of a 64-pixel block, in bits.
pub const MAX_BLOCK_ENTROPY: f64 = 6.0;

pub const FEATURE_NAMES: [&str; 12] = [
    "s1_spatial_mean",
    "s1_spatial_skew",
    "s1_spectral_mean",
    "s1_spectral_skew",
    "s2_spatial_mean",
    "s2_spatial_skew",
    "s2_spectral_mean",
    "s2_spectral_skew",
    "s3_spatial_mean",
    "s3_spatial_skew",
    "s3_spectral_mean",
    "s3_spectral_skew",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SseqFeatures {
    pub values: [f64; 12],
}

impl SseqFeatures {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.values[i])
    }

    /// Pooled mean spatial entropy of each scale.
    pub fn spatial_means(&self) -> [f64; SCALES] {
        [self.values[0], self.values[4], self.values[8]]
    }

    pub fn spectral_means(&self) -> [f64; SCALES] {
        [self.values[2], self.values[6], self.values[10]]
    }
}

fn entropy_bits<I: IntoIterator<Item = f64>>(probs: I) -> f64 {
    probs
        .into_iter()
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum::<f64>()
        .max(0.0)
}

/// Shannon entropy of the 256-bin histogram of `values` (assumed in [0, 1]).
pub fn spatial_entropy(values: &[f64]) -> f64 {
    let mut hist = [0u32; HIST_BINS];
    for &v in values {
        let b = (v.clamp(0.0, 1.0) * HIST_BINS as f64) as usize;
        hist[b.min(HIST_BINS - 1)] += 1;
    }
    let n = values.len() as f64;
    entropy_bits(hist.iter().map(|&c| c as f64 / n))
}

fn dct_basis() -> [[f64; BLOCK]; BLOCK] {
    let mut m = [[0.0; BLOCK]; BLOCK];
    let n = BLOCK as f64;
    for (k, row) in m.iter_mut().enumerate() {
        let a = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for (i, v) in row.iter_mut().enumerate() {
            *v = a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n)).cos();
        }
    }
    m
}

/// Orthonormal 2-D DCT-II of a row-major 8×8 block.
pub fn dct8x8(block: &[f64; BLOCK * BLOCK]) -> [f64; BLOCK * BLOCK] {
    let d = dct_basis();
    let mut tmp = [0.0; BLOCK * BLOCK];
    for u in 0..BLOCK {
        for x in 0..BLOCK {
            tmp[u * BLOCK + x] = (0..BLOCK).map(|y| d[u][y] * block[y * BLOCK + x]).sum();
        }
    }
    let mut out = [0.0; BLOCK * BLOCK];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            out[u * BLOCK + v] = (0..BLOCK).map(|x| d[v][x] * tmp[u * BLOCK + x]).sum();
        }
    }
    out
}

/// Entropy of the normalized squared AC coefficients; 0 without AC energy.
pub fn spectral_entropy(block: &[f64; BLOCK * BLOCK]) -> f64 {
    let c = dct8x8(block);
    let energy: Vec<f64> = c[1..].iter().map(|v| v * v).collect();
    let total: f64 = energy.iter().sum();
    // round-off floor: a constant block leaves ~1e-32 of AC energy
    if total <= 1e-24 * (1.0 + c[0] * c[0]) {
        return 0.0;
    }
    entropy_bits(energy.iter().map(|e| e / total))
}

/// Central 60% of the sorted values (20% dropped from each end).
pub fn pool_central(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let drop = v.len() / 5;
    v[drop..v.len() - drop].to_vec()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Standardized third moment; 0 for constant lists.
pub fn skewness(v: &[f64]) -> f64 {
    let m = mean(v);
    let n = v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    if !(var > 1e-24) {
        return 0.0;
    }
    let m3 = v.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / var.powf(1.5)
}

fn downsample2(img: &ImageTensor) -> ImageTensor {
    let (h, w) = (img.height() / 2, img.width() / 2);
    ImageTensor::from_fn(h, w, 1, |y, x, _| {
        0.25 * (img.get(2 * y, 2 * x, 0)
            + img.get(2 * y, 2 * x + 1, 0)
            + img.get(2 * y + 1, 2 * x, 0)
            + img.get(2 * y + 1, 2 * x + 1, 0))
    })
}

/// Per-block `(spatial, spectral)` entropies in row-major block order.
pub fn block_entropies(gray: &ImageTensor) -> Vec<(f64, f64)> {
    let (bh, bw) = (gray.height() / BLOCK, gray.width() / BLOCK);
    let mut out = Vec::with_capacity(bh * bw);
    for by in 0..bh {
        for bx in 0..bw {
            let mut block = [0.0; BLOCK * BLOCK];
            for y in 0..BLOCK {
                for x in 0..BLOCK {
                    block[y * BLOCK + x] = gray.get(by * BLOCK + y, bx * BLOCK + x, 0);
                }
            }
            out.push((spatial_entropy(&block), spectral_entropy(&block)));
        }
    }
    out
}

pub fn sseq_features(img: &ImageTensor) -> Result<SseqFeatures> {
    img.ensure_channels(&[1, 3])?;
    let min = BLOCK << (SCALES - 1);
    if img.height() < min || img.width() < min {
        return Err(Error::TooSmall {
            height: img.height(),
            width: img.width(),
            reason: format!("need at least {min}x{min} for one {BLOCK}x{BLOCK} block at the coarsest scale"),
        });
    }
    let mut gray = if img.channels() == 3 {
        to_grayscale(img)?
    } else {
        img.clone()
    };
    let mut values = [0.0; 12];
    for s in 0..SCALES {
        if s > 0 {
            gray = downsample2(&gray);
        }
        let (spatial, spectral): (Vec<f64>, Vec<f64>) = block_entropies(&gray).into_iter().unzip();
        let (sp, fr) = (pool_central(&spatial), pool_central(&spectral));
        values[4 * s..4 * s + 4].copy_from_slice(&[mean(&sp), skewness(&sp), mean(&fr), skewness(&fr)]);
    }
    Ok(SseqFeatures { values })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Injected,
    Regressor,
    Proxy,
}

impl std::fmt::Display for ScoreSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreSource::Injected => "injected",
            ScoreSource::Regressor => "regressor",
            ScoreSource::Proxy => "proxy",
        })
    }
}

/// Higher means more degraded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub value: f64,
    pub source: ScoreSource,
}

impl QualityScore {
    pub fn injected(value: f64) -> Self {
        Self {
            value,
            source: ScoreSource::Injected,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressorKind {
    Affine,
    Rbf,
}

/// Regressor weights file.
///
/// `affine`: `bias + Σ weights[i]·f[feature_order[i]]`.
/// `rbf`: `bias + Σ_j weights[j]·exp(-gamma·||f - support_vectors[j]||²)`
/// where `f` is the feature vector in `feature_order`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regressor {
    #[serde(rename = "type")]
    pub kind: RegressorKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_order: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub support_vectors: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl Regressor {
    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.feature_order.iter().find(|n| !FEATURE_NAMES.contains(&n.as_str())) {
            return Err(Error::validation("feature_order", format!("unknown feature `{bad}`")));
        }
        if self.feature_order.is_empty() {
            return Err(Error::validation("feature_order", "must not be empty"));
        }
        match self.kind {
            RegressorKind::Affine => {
                if self.weights.len() != self.feature_order.len() {
                    return Err(Error::validation(
                        "weights",
                        "affine weights must match feature_order in length",
                    ));
                }
            }
            RegressorKind::Rbf => {
                if self.support_vectors.len() != self.weights.len() || self.support_vectors.is_empty() {
                    return Err(Error::validation(
                        "support_vectors",
                        "need one support vector per weight",
                    ));
                }
                if self.support_vectors.iter().any(|s| s.len() != self.feature_order.len()) {
                    return Err(Error::validation(
                        "support_vectors",
                        "each must match feature_order in length",
                    ));
                }
                if !self.gamma.is_some_and(|g| g > 0.0) {
                    return Err(Error::validation("gamma", "rbf needs gamma > 0"));
                }
            }
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::validation("weights", "must be finite"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let r: Regressor = serde_json::from_slice(&bytes)?;
        r.validate()?;
        Ok(r)
    }

    pub fn predict(&self, f: &SseqFeatures) -> Result<f64> {
        self.validate()?;
        let x: Vec<f64> = self
            .feature_order
            .iter()
            .map(|n| f.get(n).expect("validated name"))
            .collect();
        Ok(match self.kind {
            RegressorKind::Affine => self.bias + self.weights.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>(),
            RegressorKind::Rbf => {
                let g = self.gamma.expect("validated gamma");
                self.bias
                    + self
                        .support_vectors
                        .iter()
                        .zip(&self.weights)
                        .map(|(sv, w)| {
                            let d2: f64 = sv.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
                            w * (-g * d2).exp()
                        })
                        .sum::<f64>()
            }
        })
    }
}

/// `100 · (1 - mean pooled spatial entropy / 6 bits)`.
pub fn proxy_score(f: &SseqFeatures) -> f64 {
    let m = mean(&f.spatial_means());
    100.0 * (1.0 - m / MAX_BLOCK_ENTROPY)
}

pub fn quality_score(f: &SseqFeatures, regressor: Option<&Regressor>) -> Result<QualityScore> {
    let (value, source) = match regressor {
        Some(r) => (r.predict(f)?, ScoreSource::Regressor),
        None => (proxy_score(f), ScoreSource::Proxy),
    };
    if !value.is_finite() {
        return Err(Error::validation("quality_score", "score is not finite"));
    }
    Ok(QualityScore { value, source })
}

/// `(shadow - clear) / clear`.
pub fn shadow_ratio(clear: QualityScore, shadow: QualityScore) -> Result<f64> {
    if clear.source != shadow.source {
        return Err(Error::validation(
            "score source",
            format!("clear is {} but shadow is {}", clear.source, shadow.source),
        ));
    }
    if clear.value == 0.0 {
        return Err(Error::Undefined("shadow ratio: clear score is 0".into()));
    }
    Ok((shadow.value - clear.value) / clear.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::gaussian_blur;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_has_zero_entropies() {
        let f = sseq_features(&ImageTensor::filled(32, 32, 3, 0.4)).unwrap();
        for s in 0..3 {
            assert_eq!(f.values[4 * s], 0.0);
            assert_eq!(f.values[4 * s + 2], 0.0);
        }
        assert_eq!(proxy_score(&f), 100.0);
    }

    #[test]
    fn two_value_block_is_one_bit() {
        let v: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 0.1 } else { 0.9 }).collect();
        assert!((spatial_entropy(&v) - 1.0).abs() < 1e-15);
        let all: Vec<f64> = (0..64).map(|i| i as f64 / 64.0).collect();
        assert!((spatial_entropy(&all) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn dct_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b: [f64; 64] = std::array::from_fn(|_| rng.random());
        let c = dct8x8(&b);
        let e1: f64 = b.iter().map(|v| v * v).sum();
        let e2: f64 = c.iter().map(|v| v * v).sum();
        assert!((e1 - e2).abs() < 1e-12);
        assert!((c[0] - b.iter().sum::<f64>() / 8.0).abs() < 1e-12);
    }

    #[test]
    fn single_ac_coefficient_has_zero_spectral_entropy() {
        let d = dct_basis();
        let b: [f64; 64] = std::array::from_fn(|i| 0.5 + 0.1 * d[1][i / 8]);
        assert!(spectral_entropy(&b).abs() < 1e-9);
    }

    #[test]
    fn pooling_and_skew() {
        let v: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(pool_central(&v), vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(skewness(&[3.0; 5]), 0.0);
        assert!(skewness(&[0.0, 0.0, 0.0, 10.0]) > 0.0);
    }

    #[test]
    fn blurred_noise_has_lower_spatial_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = ImageTensor::from_fn(64, 64, 3, |_, _, _| rng.random());
        let blurred = gaussian_blur(&noise, 1.5).unwrap();
        let a = mean(&sseq_features(&noise).unwrap().spatial_means());
        let b = mean(&sseq_features(&blurred).unwrap().spatial_means());
        assert!(b < a, "{b} !< {a}");
    }

    #[test]
    fn too_small_image_is_rejected() {
        assert!(matches!(
            sseq_features(&ImageTensor::zeros(31, 64, 3)),
            Err(Error::TooSmall { .. })
        ));
    }

    #[test]
    fn regressors() {
        let f = SseqFeatures {
            values: std::array::from_fn(|i| i as f64),
        };
        let affine = Regressor {
            kind: RegressorKind::Affine,
            weights: vec![2.0, -1.0],
            bias: 0.5,
            feature_order: vec!["s1_spatial_skew".into(), "s3_spectral_skew".into()],
            support_vectors: vec![],
            gamma: None,
        };
        assert_eq!(
            quality_score(&f, Some(&affine)).unwrap(),
            QualityScore {
                value: 0.5 + 2.0 - 11.0,
                source: ScoreSource::Regressor
            }
        );
        let rbf = Regressor {
            kind: RegressorKind::Rbf,
            weights: vec![3.0],
            bias: 1.0,
            feature_order: vec!["s1_spatial_mean".into()],
            support_vectors: vec![vec![1.0]],
            gamma: Some(0.5),
        };
        assert!((rbf.predict(&f).unwrap() - (1.0 + 3.0 * (-0.5f64).exp())).abs() < 1e-15);
        let bad = Regressor {
            feature_order: vec!["nope".into()],
            ..affine
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn shadow_ratio_contract() {
        let q = QualityScore::injected;
        assert_eq!(shadow_ratio(q(40.0), q(40.0)).unwrap(), 0.0);
        assert!(shadow_ratio(q(0.0), q(1.0)).is_err());
        let p = QualityScore {
            value: 1.0,
            source: ScoreSource::Proxy,
        };
        assert!(shadow_ratio(q(1.0), p).is_err());
    }
}
