//! Frozen feature extractors for the perceptual loss.
//!
//! An extractor maps an image to a flat feature vector and can back-propagate
//! a feature-space gradient to the image. Parameters never change after
//! construction.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::{max_pool, max_pool_backward, relu_backward_inplace, relu_inplace, Conv2d, ConvSpec, PoolSpec};
use crate::tensor::ImageTensor;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;

    /// Per-channel `(mean, std)` the extractor subtracts/divides internally.
    fn input_normalization(&self) -> Option<([f64; 3], [f64; 3])> {
        None
    }

    fn extract(&self, img: &ImageTensor) -> Result<Vec<f64>>;

    /// Vector-Jacobian product: `(d features / d img)^T · grad`.
    fn backward(&self, img: &ImageTensor, grad: &[f64]) -> Result<ImageTensor>;
}

/// Features are the raw pixels.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn name(&self) -> &str {
        "identity"
    }

    fn extract(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        Ok(img.as_slice().to_vec())
    }

    fn backward(&self, img: &ImageTensor, grad: &[f64]) -> Result<ImageTensor> {
        ImageTensor::from_vec(img.height(), img.width(), img.channels(), grad.to_vec())
    }
}

/// A fixed random linear map `R^n -> R^k`, entries `N(0, 1/n)`.
#[derive(Clone, Debug)]
pub struct LinearProjection {
    input_len: usize,
    matrix: Vec<f64>,
}

impl LinearProjection {
    pub fn new(input_len: usize, output_len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (input_len.max(1) as f64).sqrt()).expect("finite std");
        let matrix = (0..input_len * output_len).map(|_| normal.sample(&mut rng)).collect();
        Self { input_len, matrix }
    }

    pub fn output_len(&self) -> usize {
        self.matrix.len() / self.input_len.max(1)
    }

    /// Row-major `output_len × input_len`.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    fn check(&self, img: &ImageTensor) -> Result<()> {
        if img.len() != self.input_len {
            return Err(Error::Extractor {
                extractor: self.name().into(),
                reason: format!("expects {} inputs, image has {}", self.input_len, img.len()),
            });
        }
        Ok(())
    }
}

impl FeatureExtractor for LinearProjection {
    fn name(&self) -> &str {
        "linear-projection"
    }

    fn extract(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        self.check(img)?;
        let x = img.as_slice();
        Ok(self
            .matrix
            .chunks_exact(self.input_len)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn backward(&self, img: &ImageTensor, grad: &[f64]) -> Result<ImageTensor> {
        self.check(img)?;
        let mut out = vec![0.0; self.input_len];
        for (row, g) in self.matrix.chunks_exact(self.input_len).zip(grad) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * g;
            }
        }
        ImageTensor::from_vec(img.height(), img.width(), img.channels(), out)
    }
}

#[derive(Clone, Debug)]
pub enum Stage {
    Conv { conv: Conv2d, relu: bool },
    MaxPool(PoolSpec),
}

/// A frozen sequential conv stack with per-channel input normalization.
///
/// [`ConvFeatureExtractor::resnet50_stem`] has the shape of the first six
/// weight-bearing layers of ResNet-50 with each batch norm folded into the
/// preceding convolution:
///
/// ```text
/// conv 7x7/2, 64 (+bn1) -> relu -> maxpool 3x3/2
/// layer1.0.conv1 1x1, 64 (+bn1) -> relu
/// layer1.0.conv2 3x3, 64 (+bn2) -> relu        (features)
/// ```
#[derive(Clone, Debug)]
pub struct ConvFeatureExtractor {
    name: String,
    mean: [f64; 3],
    std: [f64; 3],
    stages: Vec<Stage>,
}

/// On-disk form of a [`ConvFeatureExtractor`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorFile {
    pub name: String,
    pub input_mean: [f64; 3],
    pub input_std: [f64; 3],
    pub layers: Vec<LayerFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerFile {
    /// `weight` is laid out `[ky][kx][in][out]`.
    Conv {
        kernel: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
        relu: bool,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Maxpool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
}

impl ConvFeatureExtractor {
    /// ResNet-50 stem shapes with He-normal weights drawn from `seed`; a
    /// stand-in for when pretrained weights are unavailable.
    pub fn resnet50_stem(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = vec![
            Stage::Conv {
                conv: Conv2d::he_normal(
                    ConvSpec {
                        in_channels: 3,
                        out_channels: 64,
                        kernel: 7,
                        stride: 2,
                        padding: 3,
                    },
                    &mut rng,
                ),
                relu: true,
            },
            Stage::MaxPool(PoolSpec {
                window: 3,
                stride: 2,
                padding: 1,
            }),
            Stage::Conv {
                conv: Conv2d::he_normal(ConvSpec::same(64, 64, 1), &mut rng),
                relu: true,
            },
            Stage::Conv {
                conv: Conv2d::he_normal(ConvSpec::same(64, 64, 3), &mut rng),
                relu: true,
            },
        ];
        Self {
            name: format!("resnet50-stem-random-{seed}"),
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
            stages,
        }
    }

    pub fn from_file(file: ExtractorFile) -> Result<Self> {
        let err = |reason: String| Error::Extractor {
            extractor: file.name.clone(),
            reason,
        };
        if file.input_std.iter().any(|s| !(*s > 0.0)) {
            return Err(err("input_std entries must be > 0".into()));
        }
        let mut stages = Vec::with_capacity(file.layers.len());
        let mut channels = 3;
        for (i, l) in file.layers.iter().enumerate() {
            match l {
                LayerFile::Conv {
                    kernel,
                    stride,
                    padding,
                    in_channels,
                    out_channels,
                    relu,
                    weight,
                    bias,
                } => {
                    let spec = ConvSpec {
                        in_channels: *in_channels,
                        out_channels: *out_channels,
                        kernel: *kernel,
                        stride: *stride,
                        padding: *padding,
                    };
                    if *in_channels != channels {
                        return Err(err(format!(
                            "layer {i}: expects {in_channels} channels, receives {channels}"
                        )));
                    }
                    if *stride == 0 || weight.len() != spec.weight_len() || bias.len() != *out_channels {
                        return Err(err(format!(
                            "layer {i}: weight/bias sizes do not match the declared shape"
                        )));
                    }
                    channels = *out_channels;
                    stages.push(Stage::Conv {
                        conv: Conv2d {
                            spec,
                            weight: weight.clone(),
                            bias: bias.clone(),
                        },
                        relu: *relu,
                    });
                }
                LayerFile::Maxpool {
                    kernel,
                    stride,
                    padding,
                } => {
                    if *stride == 0 || *kernel == 0 {
                        return Err(err(format!("layer {i}: kernel and stride must be > 0")));
                    }
                    stages.push(Stage::MaxPool(PoolSpec {
                        window: *kernel,
                        stride: *stride,
                        padding: *padding,
                    }));
                }
            }
        }
        Ok(Self {
            name: file.name,
            mean: file.input_mean,
            std: file.input_std,
            stages,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_file(serde_json::from_slice(&bytes)?)
    }

    pub fn to_file(&self) -> ExtractorFile {
        let layers = self
            .stages
            .iter()
            .map(|s| match s {
                Stage::Conv { conv, relu } => LayerFile::Conv {
                    kernel: conv.spec.kernel,
                    stride: conv.spec.stride,
                    padding: conv.spec.padding,
                    in_channels: conv.spec.in_channels,
                    out_channels: conv.spec.out_channels,
                    relu: *relu,
                    weight: conv.weight.clone(),
                    bias: conv.bias.clone(),
                },
                Stage::MaxPool(p) => LayerFile::Maxpool {
                    kernel: p.window,
                    stride: p.stride,
                    padding: p.padding,
                },
            })
            .collect();
        ExtractorFile {
            name: self.name.clone(),
            input_mean: self.mean,
            input_std: self.std,
            layers,
        }
    }

    fn normalize(&self, img: &ImageTensor) -> Result<ImageTensor> {
        img.ensure_channels(&[3])?;
        Ok(ImageTensor::from_fn(img.height(), img.width(), 3, |y, x, c| {
            (img.get(y, x, c) - self.mean[c]) / self.std[c]
        }))
    }

    fn wrap(&self, e: Error) -> Error {
        Error::Extractor {
            extractor: self.name.clone(),
            reason: e.to_string(),
        }
    }
}

impl FeatureExtractor for ConvFeatureExtractor {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_normalization(&self) -> Option<([f64; 3], [f64; 3])> {
        Some((self.mean, self.std))
    }

    fn extract(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        let mut x = self.normalize(img).map_err(|e| self.wrap(e))?;
        for s in &self.stages {
            x = match s {
                Stage::Conv { conv, relu } => {
                    let mut y = conv.forward(&x).map_err(|e| self.wrap(e))?;
                    if *relu {
                        relu_inplace(&mut y);
                    }
                    y
                }
                Stage::MaxPool(p) => max_pool(&x, *p).map_err(|e| self.wrap(e))?.0,
            };
        }
        Ok(x.into_vec())
    }

    fn backward(&self, img: &ImageTensor, grad: &[f64]) -> Result<ImageTensor> {
        let wrap = |e| self.wrap(e);
        let mut acts = vec![self.normalize(img).map_err(wrap)?];
        let mut argmaxes = Vec::new();
        for s in &self.stages {
            let x = acts.last().expect("non-empty");
            let y = match s {
                Stage::Conv { conv, relu } => {
                    let mut y = conv.forward(x).map_err(wrap)?;
                    if *relu {
                        relu_inplace(&mut y);
                    }
                    argmaxes.push(Vec::new());
                    y
                }
                Stage::MaxPool(p) => {
                    let (y, a) = max_pool(x, *p).map_err(wrap)?;
                    argmaxes.push(a);
                    y
                }
            };
            acts.push(y);
        }
        let last = acts.last().expect("non-empty");
        let mut g = ImageTensor::from_vec(last.height(), last.width(), last.channels(), grad.to_vec()).map_err(wrap)?;
        for (i, s) in self.stages.iter().enumerate().rev() {
            let (x, y) = (&acts[i], &acts[i + 1]);
            g = match s {
                Stage::Conv { conv, relu } => {
                    if *relu {
                        relu_backward_inplace(y, &mut g);
                    }
                    let mut gw = vec![0.0; conv.weight.len()];
                    let mut gb = vec![0.0; conv.bias.len()];
                    conv.backward(x, &g, &mut gw, &mut gb, true)
                        .map_err(wrap)?
                        .expect("input grad requested")
                }
                Stage::MaxPool(_) => max_pool_backward((x.height(), x.width(), x.channels()), &argmaxes[i], &g),
            };
        }
        Ok(ImageTensor::from_fn(g.height(), g.width(), 3, |y, x, c| {
            g.get(y, x, c) / self.std[c]
        }))
    }
}

/// How the training/evaluation code picks its extractor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExtractorSource {
    Identity,
    ResnetStemRandom { seed: u64 },
    File { path: std::path::PathBuf },
}

impl Default for ExtractorSource {
    fn default() -> Self {
        ExtractorSource::ResnetStemRandom { seed: 0 }
    }
}

impl ExtractorSource {
    pub fn instantiate(&self) -> Result<Box<dyn FeatureExtractor>> {
        Ok(match self {
            ExtractorSource::Identity => Box::new(IdentityExtractor),
            ExtractorSource::ResnetStemRandom { seed } => Box::new(ConvFeatureExtractor::resnet50_stem(*seed)),
            ExtractorSource::File { path } => Box::new(ConvFeatureExtractor::load(path)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn stem_backward_matches_finite_differences() {
        let ext = ConvFeatureExtractor::resnet50_stem(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = ImageTensor::from_fn(12, 12, 3, |_, _, _| rng.random());
        let f = ext.extract(&img).unwrap();
        let probe: Vec<f64> = (0..f.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let g = ext.backward(&img, &probe).unwrap();
        let eps = 1e-6;
        for i in [0, 50, 211, img.len() - 1] {
            let (mut a, mut b) = (img.clone(), img.clone());
            a.as_mut_slice()[i] += eps;
            b.as_mut_slice()[i] -= eps;
            let fd = (dot(&ext.extract(&a).unwrap(), &probe) - dot(&ext.extract(&b).unwrap(), &probe)) / (2.0 * eps);
            assert!(
                (fd - g.as_slice()[i]).abs() < 1e-5 * (1.0 + fd.abs()),
                "{i}: {fd} vs {}",
                g.as_slice()[i]
            );
        }
    }

    #[test]
    fn stem_file_round_trip() {
        let ext = ConvFeatureExtractor::resnet50_stem(1);
        let json = serde_json::to_string(&ext.to_file()).unwrap();
        let back = ConvFeatureExtractor::from_file(serde_json::from_str(&json).unwrap()).unwrap();
        let img = ImageTensor::filled(9, 9, 3, 0.5);
        assert_eq!(ext.extract(&img).unwrap(), back.extract(&img).unwrap());
    }

    #[test]
    fn inconsistent_file_is_rejected() {
        let mut file = ConvFeatureExtractor::resnet50_stem(1).to_file();
        if let LayerFile::Conv { bias, .. } = &mut file.layers[0] {
            bias.pop();
        }
        let err = ConvFeatureExtractor::from_file(file).unwrap_err();
        assert!(matches!(err, Error::Extractor { .. }));
    }

    #[test]
    fn projection_rejects_wrong_size() {
        let p = LinearProjection::new(12, 4, 0);
        assert!(p.extract(&ImageTensor::zeros(2, 2, 3)).is_ok());
        let err = p.extract(&ImageTensor::zeros(2, 3, 3)).unwrap_err();
        assert!(err.to_string().contains("linear-projection"));
    }
}
