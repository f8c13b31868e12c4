//! A small U-Net style encoder-decoder.
//!
//! With `C_i = base * 2^i` and `d = depth`, the network is:
//!
//! * encoder stage `i` in `0..d`: two 3x3 same-padded conv + ReLU to `C_i`
//!   channels, then 2x2 max pooling;
//! * bottleneck: two 3x3 conv + ReLU to `C_d` channels;
//! * decoder stage `i` in `(0..d).rev()`: nearest-neighbour upsampling,
//!   concatenation with the encoder stage `i` output, two 3x3 conv + ReLU to
//!   `C_i` channels;
//! * head: 1x1 conv to one channel (multi-level) or `m + 1` channels
//!   (softmax), with no activation.
//!
//! Parameter count, with `cin` input channels and `k` head channels:
//!
//! ```text
//!   sum_{i<d} [9 in_i C_i + C_i + 9 C_i^2 + C_i]         in_0 = cin, in_i = C_{i-1}
//! + 9 C_{d-1} C_d + C_d + 9 C_d^2 + C_d
//! + sum_{i<d} [9 (C_{i+1} + C_i) C_i + C_i + 9 C_i^2 + C_i]
//! + C_0 k + k
//! ```
//!
//! See [`param_count`].

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Bindings, Graph, Padding, ParamStore, Tensor, Var};
use crate::{Error, Result};

/// Gain applied to the He-scaled init of the 1x1 head so that initial logits
/// stay close to zero.
pub const HEAD_INIT_GAIN: f64 = 0.1;

/// Output head of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// One channel fed to the multi-level activation.
    MultiLevel,
    /// `m + 1` channels fed to softmax.
    Softmax,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::MultiLevel => "multilevel",
            Head::Softmax => "softmax",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "multilevel" => Ok(Head::MultiLevel),
            "softmax" => Ok(Head::Softmax),
            other => Err(Error::config(format!("head must be multilevel or softmax (got `{other}`)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Number of pooling stages.
    pub depth: usize,
    pub base_channels: usize,
    pub input_channels: usize,
    pub head: Head,
    /// Nesting depth of the labels.
    pub m: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            input_channels: 1,
            head: Head::MultiLevel,
            m: 2,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::config("depth >= 1"));
        }
        if self.base_channels < 1 {
            return Err(Error::config("base_channels >= 1"));
        }
        if self.input_channels < 1 {
            return Err(Error::config("input_channels >= 1"));
        }
        if self.m < 1 {
            return Err(Error::config("m >= 1"));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        match self.head {
            Head::MultiLevel => 1,
            Head::Softmax => self.m + 1,
        }
    }

    fn channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    /// Checks that an `h x w` input survives `depth` poolings.
    pub fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let factor = 1usize << self.depth;
        if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} must have height and width divisible by 2^depth = {factor}"
            )));
        }
        Ok(())
    }
}

/// Closed-form parameter count of [`build_network`].
pub fn param_count(cfg: &NetworkConfig) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| k * k * cin * cout + cout;
    let d = cfg.depth;
    let c = |i: usize| cfg.channels(i);
    let mut total = 0;
    for i in 0..d {
        let cin = if i == 0 { cfg.input_channels } else { c(i - 1) };
        total += conv(cin, c(i), 3) + conv(c(i), c(i), 3);
    }
    total += conv(c(d - 1), c(d), 3) + conv(c(d), c(d), 3);
    for i in 0..d {
        total += conv(c(i + 1) + c(i), c(i), 3) + conv(c(i), c(i), 3);
    }
    total + conv(c(0), cfg.out_channels(), 1)
}

#[derive(Debug, Clone)]
struct ConvLayer {
    weight: String,
    bias: String,
}

/// Layer layout of a built network; parameter values live in a
/// [`ParamStore`].
#[derive(Debug, Clone)]
pub struct UNet {
    cfg: NetworkConfig,
    encoder: Vec<[ConvLayer; 2]>,
    bottleneck: [ConvLayer; 2],
    decoder: Vec<[ConvLayer; 2]>,
    head: ConvLayer,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn conv(
        &mut self,
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        gain: f64,
    ) -> Result<ConvLayer> {
        let fan_in = (cin * k * k) as f64;
        let std = gain * (2.0 / fan_in).sqrt();
        let weights = (0..cout * cin * k * k)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                std * z
            })
            .collect();
        let layer = ConvLayer {
            weight: format!("{name}.weight"),
            bias: format!("{name}.bias"),
        };
        store.insert(&layer.weight, Tensor::new(vec![cout, cin, k, k], weights)?)?;
        store.insert(&layer.bias, Tensor::zeros(vec![cout]))?;
        Ok(layer)
    }

    fn double(&mut self, store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<[ConvLayer; 2]> {
        Ok([
            self.conv(store, &format!("{name}.conv0"), cin, cout, 3, 1.0)?,
            self.conv(store, &format!("{name}.conv1"), cout, cout, 3, 1.0)?,
        ])
    }
}

/// Builds the network layout and its He-initialised parameters.
pub fn build_network(cfg: &NetworkConfig) -> Result<(ParamStore, UNet)> {
    cfg.validate()?;
    let mut store = ParamStore::new(cfg.seed);
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let d = cfg.depth;
    let mut encoder = Vec::with_capacity(d);
    for i in 0..d {
        let cin = if i == 0 { cfg.input_channels } else { cfg.channels(i - 1) };
        encoder.push(init.double(&mut store, &format!("enc{i}"), cin, cfg.channels(i))?);
    }
    let bottleneck = init.double(&mut store, "mid", cfg.channels(d - 1), cfg.channels(d))?;
    let mut decoder = Vec::with_capacity(d);
    for i in (0..d).rev() {
        let cin = cfg.channels(i + 1) + cfg.channels(i);
        decoder.push(init.double(&mut store, &format!("dec{i}"), cin, cfg.channels(i))?);
    }
    let head = init.conv(&mut store, "head", cfg.channels(0), cfg.out_channels(), 1, HEAD_INIT_GAIN)?;
    let net = UNet {
        cfg: *cfg,
        encoder,
        bottleneck,
        decoder,
        head,
    };
    Ok((store, net))
}

impl UNet {
    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    /// Names of the head parameters (weight, bias).
    pub fn head_params(&self) -> (&str, &str) {
        (&self.head.weight, &self.head.bias)
    }

    fn conv(&self, g: &mut Graph, p: &Bindings, layer: &ConvLayer, x: Var) -> Result<Var> {
        let w = p.var(&layer.weight)?;
        let b = p.var(&layer.bias)?;
        Ok(g.conv2d(x, w, b, Padding::Same)?)
    }

    fn double(&self, g: &mut Graph, p: &Bindings, layers: &[ConvLayer; 2], x: Var) -> Result<Var> {
        let y = self.conv(g, p, &layers[0], x)?;
        let y = g.relu(y);
        let y = self.conv(g, p, &layers[1], y)?;
        Ok(g.relu(y))
    }

    /// Raw logit map `[B, out_channels, H, W]` for `image [B, Cin, H, W]`.
    pub fn forward(&self, g: &mut Graph, params: &Bindings, image: Var) -> Result<Var> {
        let shape = g.shape(image).to_vec();
        let [_, cin, h, w] = <[usize; 4]>::try_from(shape.as_slice())
            .map_err(|_| Error::Shape(format!("network input must be [B, C, H, W], got {shape:?}")))?;
        if cin != self.cfg.input_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channel(s), got {cin}",
                self.cfg.input_channels
            )));
        }
        self.cfg.check_spatial(h, w)?;

        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut x = image;
        for stage in &self.encoder {
            let y = self.double(g, params, stage, x)?;
            skips.push(y);
            x = g.max_pool2(y)?;
        }
        x = self.double(g, params, &self.bottleneck, x)?;
        for stage in &self.decoder {
            let up = g.upsample2(x)?;
            let skip = skips.pop().expect("one skip per stage");
            let cat = g.concat_channels(up, skip)?;
            x = self.double(g, params, stage, cat)?;
        }
        self.conv(g, params, &self.head, x)
    }
}
