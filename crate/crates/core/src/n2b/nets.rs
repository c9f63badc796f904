//! The denoising network (U-Net) and the noise-extraction network.

use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamSet, Tensor, TensorError, Var};

pub const DEFAULT_SLOPE: f64 = 0.1;
pub const NENET_WIDTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub channels: usize,
    /// Feature widths, one per resolution level, finest first.
    pub widths: Vec<usize>,
    pub slope: f64,
}

impl UNetConfig {
    /// `depth` levels with widths doubling from `base_width`.
    pub fn new(channels: usize, depth: usize, base_width: usize) -> Self {
        Self {
            channels,
            widths: (0..depth).map(|i| base_width << i).collect(),
            slope: DEFAULT_SLOPE,
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// Spatial extents must be multiples of this (one halving between
    /// consecutive levels).
    pub fn size_multiple(&self) -> usize {
        1 << (self.depth().saturating_sub(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvLayer {
    weight: usize,
    bias: usize,
    inputs: usize,
    outputs: usize,
}

fn add_conv<T: Scalar>(params: &mut ParamSet<T>, name: &str, inputs: usize, outputs: usize, slope: f64, rng: &mut ChaCha8Rng) -> ConvLayer {
    let fan_in = (inputs * 9) as f64;
    let bound = (6.0 / ((1.0 + slope * slope) * fan_in)).sqrt();
    let weight = Tensor::from_fn(&[outputs, inputs, 3, 3], |_| T::lit(rng.random_range(-bound..bound)));
    let weight = params.push(format!("{name}.weight"), weight);
    let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[outputs]));
    ConvLayer {
        weight,
        bias,
        inputs,
        outputs,
    }
}

fn apply_conv<T: Scalar>(g: &mut Graph<T>, vars: &[Var], layer: ConvLayer, x: Var) -> Result<Var, TensorError> {
    g.conv2d(x, vars[layer.weight], vars[layer.bias], 1, 1)
}

fn conv_act<T: Scalar>(g: &mut Graph<T>, vars: &[Var], layer: ConvLayer, x: Var, slope: T) -> Result<Var, TensorError> {
    let y = apply_conv(g, vars, layer, x)?;
    g.leaky_relu(y, slope)
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum NetError {
    #[error("input {h}x{w} is not divisible by {multiple}")]
    Indivisible { h: usize, w: usize, multiple: usize },
    #[error("input has {got} channels, network expects {expected}")]
    Channels { got: usize, expected: usize },
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone)]
struct Level {
    first: ConvLayer,
    second: ConvLayer,
}

#[derive(Debug, Clone)]
struct UpLevel {
    up: ConvLayer,
    merge: ConvLayer,
    refine: ConvLayer,
}

/// U-Net mapping a noisy image to a same-shape denoised image.
#[derive(Debug, Clone)]
pub struct DnNet<T> {
    pub config: UNetConfig,
    pub params: ParamSet<T>,
    encoder: Vec<Level>,
    decoder: Vec<UpLevel>,
    head: ConvLayer,
    forwards: Cell<u64>,
}

impl<T: Scalar> DnNet<T> {
    pub fn build(config: UNetConfig, seed: u64) -> Result<Self, NetError> {
        if config.depth() == 0 || config.channels == 0 || config.widths.contains(&0) {
            return Err(NetError::Config(format!("{config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let s = config.slope;
        let mut encoder = Vec::new();
        let mut prev = config.channels;
        for (i, &w) in config.widths.iter().enumerate() {
            encoder.push(Level {
                first: add_conv(&mut params, &format!("enc{i}.conv1"), prev, w, s, &mut rng),
                second: add_conv(&mut params, &format!("enc{i}.conv2"), w, w, s, &mut rng),
            });
            prev = w;
        }
        let mut decoder = Vec::new();
        for i in (0..config.depth() - 1).rev() {
            let (w, coarse) = (config.widths[i], config.widths[i + 1]);
            decoder.push(UpLevel {
                up: add_conv(&mut params, &format!("dec{i}.up"), coarse, w, s, &mut rng),
                merge: add_conv(&mut params, &format!("dec{i}.merge"), 2 * w, w, s, &mut rng),
                refine: add_conv(&mut params, &format!("dec{i}.refine"), w, w, s, &mut rng),
            });
        }
        let head = add_conv(&mut params, "head", config.widths[0], config.channels, s, &mut rng);
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            head,
            forwards: Cell::new(0),
        })
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<(), NetError> {
        let [_, c, h, w] = shape else {
            return Err(TensorError::Rank {
                op: "dnnet",
                expected: 4,
                shape: shape.to_vec(),
            }
            .into());
        };
        if *c != self.config.channels {
            return Err(NetError::Channels {
                got: *c,
                expected: self.config.channels,
            });
        }
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 || *h == 0 || *w == 0 {
            return Err(NetError::Indivisible { h: *h, w: *w, multiple: m });
        }
        Ok(())
    }

    /// `F(x)` recorded on `g`, with parameters previously bound as `vars`.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var, NetError> {
        self.check_input(g.value(x).shape())?;
        self.forwards.set(self.forwards.get() + 1);
        let slope = T::lit(self.config.slope);
        let mut skips = Vec::new();
        let mut h = x;
        for (i, level) in self.encoder.iter().enumerate() {
            if i > 0 {
                h = g.maxpool2(h)?;
            }
            h = conv_act(g, vars, level.first, h, slope)?;
            h = conv_act(g, vars, level.second, h, slope)?;
            skips.push(h);
        }
        skips.pop();
        for level in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder level");
            h = g.upsample2_nearest(h)?;
            h = conv_act(g, vars, level.up, h, slope)?;
            h = g.concat_channels(h, skip)?;
            h = conv_act(g, vars, level.merge, h, slope)?;
            h = conv_act(g, vars, level.refine, h, slope)?;
        }
        Ok(apply_conv(g, vars, self.head, h)?)
    }

    /// Number of forward passes recorded so far.
    pub fn forward_count(&self) -> u64 {
        self.forwards.get()
    }

    /// Layer list as `(inputs, outputs)` pairs in parameter order.
    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for l in &self.encoder {
            out.push((l.first.inputs, l.first.outputs));
            out.push((l.second.inputs, l.second.outputs));
        }
        for l in &self.decoder {
            for c in [l.up, l.merge, l.refine] {
                out.push((c.inputs, c.outputs));
            }
        }
        out.push((self.head.inputs, self.head.outputs));
        out
    }

    /// Inference-only forward pass on a batch tensor.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.iter().map(|p| g.constant(p.value.clone())).collect();
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &vars, xv)?;
        Ok(g.value(y).clone())
    }
}

/// Three 3x3 convolutions, `in -> 32 -> 32 -> in`, no output activation.
#[derive(Debug, Clone)]
pub struct NENet<T> {
    pub channels: usize,
    pub slope: f64,
    pub params: ParamSet<T>,
    layers: [ConvLayer; 3],
    forwards: Cell<u64>,
}

impl<T: Scalar> NENet<T> {
    pub fn build(channels: usize, seed: u64) -> Result<Self, NetError> {
        if channels == 0 {
            return Err(NetError::Config("zero channels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let s = DEFAULT_SLOPE;
        let layers = [
            add_conv(&mut params, "conv1", channels, NENET_WIDTH, s, &mut rng),
            add_conv(&mut params, "conv2", NENET_WIDTH, NENET_WIDTH, s, &mut rng),
            add_conv(&mut params, "conv3", NENET_WIDTH, channels, s, &mut rng),
        ];
        Ok(Self {
            channels,
            slope: s,
            params,
            layers,
            forwards: Cell::new(0),
        })
    }

    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var, NetError> {
        let c = g.value(x).shape().get(1).copied().unwrap_or(0);
        if c != self.channels {
            return Err(NetError::Channels {
                got: c,
                expected: self.channels,
            });
        }
        self.forwards.set(self.forwards.get() + 1);
        let slope = T::lit(self.slope);
        let h = conv_act(g, vars, self.layers[0], x, slope)?;
        let h = conv_act(g, vars, self.layers[1], h, slope)?;
        Ok(apply_conv(g, vars, self.layers[2], h)?)
    }

    pub fn forward_count(&self) -> u64 {
        self.forwards.get()
    }

    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.inputs, l.outputs)).collect()
    }
}
