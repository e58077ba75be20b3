//! The MiniRes enhancement network.
//!
//! Topology, for input `x`:
//!
//! ```text
//! out1 = EM1(x)
//! out2 = EM2(out1 + x)
//! out3 = EM3(out2 + x)        (network output)
//! ```
//!
//! Each enhancement module (EM) is
//!
//! ```text
//! a  = relu(lift(z))            3 -> C channels, k×k
//! p  = maxpool(a)               stride 1, same padding
//! h1 = block1(p); h2 = block2(h1); h3 = block3(h2)
//! o  = head(h3 + p)             C -> 3 channels, linear
//! ```
//!
//! and a MiniRes block is a ResNet basic block without batch normalization:
//! `relu(h + conv2(relu(conv1(h))))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::conv::{max_pool, max_pool_backward, relu_backward_inplace, relu_inplace, Conv2d, ConvSpec, PoolSpec};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShortcutMerge {
    #[default]
    ElementwiseAdd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub window: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// `[height, width, channels]`
    pub input_size: [usize; 3],
    pub output_channels: usize,
    pub em_count: usize,
    pub blocks_per_em: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub pool: PoolConfig,
    pub shortcut_merge: ShortcutMerge,
    /// Shortcut from the first MiniRes input to the last MiniRes output.
    pub em_shortcut: bool,
    /// Shortcuts from the network input into EM2, EM3, ...
    pub input_shortcuts: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: [256, 256, 3],
            output_channels: 3,
            em_count: 3,
            blocks_per_em: 3,
            conv_channels: 32,
            kernel: 3,
            pool: PoolConfig { window: 3, stride: 1 },
            shortcut_merge: ShortcutMerge::ElementwiseAdd,
            em_shortcut: true,
            input_shortcuts: true,
        }
    }
}

impl NetworkConfig {
    /// Same topology at a different spatial size and width.
    pub fn scaled(height: usize, width: usize, conv_channels: usize) -> Self {
        Self {
            input_size: [height, width, 3],
            conv_channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w, c] = self.input_size;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Build(format!("input_size {h}x{w}x{c} has a zero extent")));
        }
        if self.conv_channels == 0 {
            return Err(Error::Build("conv_channels must be > 0".into()));
        }
        if self.em_count == 0 {
            return Err(Error::Build("em_count must be >= 1".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Build(format!("kernel must be odd, got {}", self.kernel)));
        }
        if self.pool.window.is_multiple_of(2) || self.pool.stride != 1 {
            return Err(Error::Build(format!(
                "pool {}x{} stride {} would resample; only odd windows with stride 1 keep the EM output at the input size",
                self.pool.window, self.pool.window, self.pool.stride
            )));
        }
        if self.output_channels == 0 {
            return Err(Error::Build("output_channels must be > 0".into()));
        }
        if self.input_shortcuts
            && self.em_count > 1
            && self.shortcut_merge == ShortcutMerge::ElementwiseAdd
            && self.output_channels != c
        {
            return Err(Error::Build(format!(
                "elementwise-add shortcut merges {c}-channel input with {}-channel EM output",
                self.output_channels
            )));
        }
        if self.em_count > 1 && self.output_channels != c {
            return Err(Error::Build(format!(
                "EM2 consumes EM1's {} output channels but expects {c} input channels",
                self.output_channels
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn pool_spec(&self) -> PoolSpec {
        PoolSpec::same(self.pool.window)
    }

    /// Every conv layer of the graph, in canonical order.
    pub fn layer_specs(&self) -> Vec<(String, ConvSpec)> {
        let c = self.conv_channels;
        let k = self.kernel;
        let mut out = Vec::new();
        for em in 1..=self.em_count {
            out.push((format!("em{em}.lift"), ConvSpec::same(self.input_size[2], c, k)));
            for b in 1..=self.blocks_per_em {
                out.push((format!("em{em}.block{b}.conv1"), ConvSpec::same(c, c, k)));
                out.push((format!("em{em}.block{b}.conv2"), ConvSpec::same(c, c, k)));
            }
            out.push((format!("em{em}.head"), ConvSpec::same(c, self.output_channels, k)));
        }
        out
    }
}

/// Parameter gradients, aligned with [`Network::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, b)| *a += b);
            b.iter_mut().zip(ob).for_each(|(a, b)| *a += b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    names: Vec<String>,
    layers: Vec<Conv2d>,
}

struct BlockCache {
    input: ImageTensor,
    hidden: ImageTensor,
    output: ImageTensor,
}

struct EmCache {
    input: ImageTensor,
    lifted: ImageTensor,
    argmax: Vec<u32>,
    blocks: Vec<BlockCache>,
    merged: ImageTensor,
}

/// Activations kept by [`Network::forward_train`] for the backward pass.
pub struct ForwardCache {
    ems: Vec<EmCache>,
}

impl Network {
    /// Builds a network with He-normal weights drawn from `seed`; the second
    /// conv of every MiniRes block starts at zero.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (names, layers) = config
            .layer_specs()
            .into_iter()
            .map(|(n, s)| {
                // residual branches start as identity
                let conv = if n.ends_with(".conv2") {
                    Conv2d::zeros(s)
                } else {
                    Conv2d::he_normal(s, &mut rng)
                };
                (n, conv)
            })
            .unzip();
        Ok(Self { config, names, layers })
    }

    /// Builds a network whose weights and biases are all zero.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let (names, layers) = config
            .layer_specs()
            .into_iter()
            .map(|(n, s)| (n, Conv2d::zeros(s)))
            .unzip();
        Ok(Self { config, names, layers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Conv2d] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Conv2d] {
        &mut self.layers
    }

    pub fn layer_names(&self) -> &[String] {
        &self.names
    }

    /// Names of all parameter tensors (`<layer>.weight`, `<layer>.bias`).
    pub fn parameter_names(&self) -> Vec<String> {
        self.names
            .iter()
            .flat_map(|n| [format!("{n}.weight"), format!("{n}.bias")])
            .collect()
    }

    /// `(name, shape, values)` for every parameter tensor. Weight shapes are
    /// `[k, k, in, out]`.
    pub fn named_parameters(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        self.names
            .iter()
            .zip(&self.layers)
            .flat_map(|(n, l)| {
                let s = l.spec;
                [
                    (
                        format!("{n}.weight"),
                        vec![s.kernel, s.kernel, s.in_channels, s.out_channels],
                        l.weight.as_slice(),
                    ),
                    (format!("{n}.bias"), vec![s.out_channels], l.bias.as_slice()),
                ]
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn layer_index(&self, em: usize) -> usize {
        em * (2 + 2 * self.config.blocks_per_em)
    }

    fn check_input(&self, x: &ImageTensor) -> Result<()> {
        let [h, w, c] = self.config.input_size;
        if (x.height(), x.width(), x.channels()) != (h, w, c) {
            return Err(Error::ShapeMismatch {
                left: format!("expected {h}x{w}x{c}"),
                right: format!("got {}", x.shape()),
            });
        }
        Ok(())
    }

    fn em_forward(&self, em: usize, z: ImageTensor) -> Result<(ImageTensor, EmCache)> {
        let base = self.layer_index(em);
        let mut lifted = self.layers[base].forward(&z)?;
        relu_inplace(&mut lifted);
        let (pooled, argmax) = max_pool(&lifted, self.config.pool_spec())?;
        let mut blocks = Vec::with_capacity(self.config.blocks_per_em);
        let mut h = pooled.clone();
        for b in 0..self.config.blocks_per_em {
            let c1 = &self.layers[base + 1 + 2 * b];
            let c2 = &self.layers[base + 2 + 2 * b];
            let mut hidden = c1.forward(&h)?;
            relu_inplace(&mut hidden);
            let mut output = c2.forward(&hidden)?;
            output.add_assign(&h)?;
            relu_inplace(&mut output);
            blocks.push(BlockCache {
                input: h,
                hidden,
                output: output.clone(),
            });
            h = output;
        }
        let mut merged = h;
        if self.config.em_shortcut {
            merged.add_assign(&pooled)?;
        }
        let head = &self.layers[base + 1 + 2 * self.config.blocks_per_em];
        let out = head.forward(&merged)?;
        Ok((
            out,
            EmCache {
                input: z,
                lifted,
                argmax,
                blocks,
                merged,
            },
        ))
    }

    /// Unclamped forward pass that records what the backward pass needs.
    pub fn forward_train(&self, x: &ImageTensor) -> Result<(ImageTensor, ForwardCache)> {
        self.check_input(x)?;
        let mut ems = Vec::with_capacity(self.config.em_count);
        let mut z = x.clone();
        for em in 0..self.config.em_count {
            let (o, cache) = self.em_forward(em, z)?;
            ems.push(cache);
            if em + 1 == self.config.em_count {
                return Ok((o, ForwardCache { ems }));
            }
            z = o;
            if self.config.input_shortcuts {
                z.add_assign(x)?;
            }
        }
        unreachable!("em_count >= 1 is validated")
    }

    /// Unclamped forward pass.
    pub fn forward_raw(&self, x: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.forward_train(x)?.0)
    }

    /// Inference: forward pass with outputs clamped to `[0, 1]`.
    pub fn forward(&self, x: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.forward_raw(x)?.clamp01())
    }

    pub fn forward_batch(&self, batch: &[ImageTensor]) -> Result<Vec<ImageTensor>> {
        batch.iter().map(|x| self.forward(x)).collect()
    }

    /// Accumulates `d(objective)/d(params)` into `grads`, given the gradient
    /// with respect to the network output.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &ImageTensor, grads: &mut Gradients) -> Result<()> {
        let blocks = self.config.blocks_per_em;
        let mut g = grad_out.clone();
        for em in (0..self.config.em_count).rev() {
            let c = &cache.ems[em];
            let base = self.layer_index(em);
            let head = base + 1 + 2 * blocks;
            let (gw, gb) = &mut grads.layers[head];
            let g_merged = self.layers[head]
                .backward(&c.merged, &g, gw, gb, true)?
                .expect("input grad requested");
            let mut g_h = g_merged.clone();
            for b in (0..blocks).rev() {
                let bc = &c.blocks[b];
                relu_backward_inplace(&bc.output, &mut g_h);
                let i2 = base + 2 + 2 * b;
                let (gw, gb) = &mut grads.layers[i2];
                let mut g_hidden = self.layers[i2]
                    .backward(&bc.hidden, &g_h, gw, gb, true)?
                    .expect("input grad requested");
                relu_backward_inplace(&bc.hidden, &mut g_hidden);
                let i1 = base + 1 + 2 * b;
                let (gw, gb) = &mut grads.layers[i1];
                let g_in = self.layers[i1]
                    .backward(&bc.input, &g_hidden, gw, gb, true)?
                    .expect("input grad requested");
                g_h.add_assign(&g_in)?;
            }
            if self.config.em_shortcut {
                g_h.add_assign(&g_merged)?;
            }
            let l = &c.lifted;
            let mut g_lift = max_pool_backward((l.height(), l.width(), l.channels()), &c.argmax, &g_h);
            relu_backward_inplace(l, &mut g_lift);
            let (gw, gb) = &mut grads.layers[base];
            let g_z = self.layers[base].backward(&c.input, &g_lift, gw, gb, em > 0)?;
            if let Some(g_z) = g_z {
                // z_em = out_{em-1} (+ x); only the EM output path carries parameters
                g = g_z;
            }
        }
        Ok(())
    }

    /// Replaces parameters from `(name, values)` pairs, checking names and lengths.
    pub fn load_parameters<'a>(&mut self, params: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> Result<()> {
        let mut seen = vec![[false; 2]; self.layers.len()];
        for (name, values) in params {
            let (layer, kind) = name
                .rsplit_once('.')
                .ok_or_else(|| Error::Checkpoint(format!("bad parameter name {name}")))?;
            let idx = self
                .names
                .iter()
                .position(|n| n == layer)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            let (dst, slot) = match kind {
                "weight" => (&mut self.layers[idx].weight, 0),
                "bias" => (&mut self.layers[idx].bias, 1),
                _ => return Err(Error::Checkpoint(format!("unknown parameter {name}"))),
            };
            if dst.len() != values.len() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected {} values, found {}",
                    dst.len(),
                    values.len()
                )));
            }
            dst.copy_from_slice(values);
            seen[idx][slot] = true;
        }
        if let Some(i) = seen.iter().position(|s| !(s[0] && s[1])) {
            return Err(Error::Checkpoint(format!("missing parameters for {}", self.names[i])));
        }
        Ok(())
    }
}
