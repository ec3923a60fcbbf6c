//! Feed-forward decoder from target features to a four-level Laplacian
//! pyramid, and its training losses.

mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use train::{
    pair_loss, pair_losses, stylize_decoder, DecoderStylizeConfig, DecoderTrainer, LossReport, TrainConfig,
    TrainingPair, DECODER_LEVELS,
};

use crate::error::{Error, Result};
use crate::extractor::{Extractor, Hypercolumns};
use crate::imaging::pyramid::collapse_tensor_pyramid;
use crate::imaging::{resize_tensor, resize_tensor_adjoint, ImageRgb, LaplacianPyramid};
use crate::nn::{depth_to_space, leaky_relu_backward, leaky_relu_in_place, space_to_depth, Conv2d};
use crate::synthesis::cosine_objective;
use crate::tensor::Tensor3;
use crate::weights::TensorArchive;

/// Output channels of the four branches, finest level first.
pub const BRANCH_OUT: [usize; 4] = [48, 12, 3, 3];
pub const LAYERS_PER_BRANCH: usize = 5;
pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub in_channels: usize,
    pub hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            in_channels: 2688,
            hidden: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub layers: Vec<Conv2d>,
    pub residual: Conv2d,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderWeights {
    /// Output long side this model was trained for.
    pub scale: usize,
    pub config: DecoderConfig,
    pub branches: Vec<Branch>,
}

fn he_conv(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Conv2d {
    let normal = Normal::new(0.0f32, (2.0 / (inp * 9) as f32).sqrt()).expect("positive std");
    let weight = (0..out * inp * 9).map(|_| normal.sample(rng)).collect();
    Conv2d::new(out, inp, 3, weight, vec![0.0; out]).expect("consistent shapes")
}

impl DecoderWeights {
    /// He-normal weights, zero biases.
    pub fn random(config: DecoderConfig, scale: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branches = BRANCH_OUT
            .iter()
            .map(|&out| {
                let mut layers = Vec::with_capacity(LAYERS_PER_BRANCH);
                let mut inp = config.in_channels;
                for l in 0..LAYERS_PER_BRANCH {
                    let o = if l + 1 == LAYERS_PER_BRANCH { out } else { config.hidden };
                    layers.push(he_conv(o, inp, &mut rng));
                    inp = o;
                }
                Branch {
                    layers,
                    residual: he_conv(out, config.in_channels, &mut rng),
                }
            })
            .collect();
        Self {
            scale,
            config,
            branches,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, c) in z.convs_mut() {
            c.weight.fill(0.0);
            c.bias.fill(0.0);
        }
        z
    }

    /// Every convolution with its archive name stem, in a fixed order.
    pub fn convs(&self) -> Vec<(String, &Conv2d)> {
        let mut out = Vec::new();
        for (j, b) in self.branches.iter().enumerate() {
            for (l, c) in b.layers.iter().enumerate() {
                out.push((format!("decoder.{}.branch{}.layer{}", self.scale, j + 1, l + 1), c));
            }
            out.push((format!("decoder.{}.branch{}.residual", self.scale, j + 1), &b.residual));
        }
        out
    }

    pub fn convs_mut(&mut self) -> Vec<(String, &mut Conv2d)> {
        let scale = self.scale;
        let mut out = Vec::new();
        for (j, b) in self.branches.iter_mut().enumerate() {
            for (l, c) in b.layers.iter_mut().enumerate() {
                out.push((format!("decoder.{scale}.branch{}.layer{}", j + 1, l + 1), c));
            }
            out.push((format!("decoder.{scale}.branch{}.residual", j + 1), &mut b.residual));
        }
        out
    }

    /// Sizes of the parameter groups (weight, bias per conv) in [`Self::convs`] order.
    pub fn group_sizes(&self) -> Vec<usize> {
        self.convs()
            .iter()
            .flat_map(|(_, c)| [c.weight.len(), c.bias.len()])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.convs().iter().map(|(_, c)| c.param_count()).sum()
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = TensorArchive::new();
        for (name, c) in self.convs() {
            let dims = vec![c.out_channels as u32, c.in_channels as u32, 3, 3];
            a.insert(format!("{name}.weight"), dims, c.weight.clone())?;
            a.insert(format!("{name}.bias"), vec![c.out_channels as u32], c.bias.clone())?;
        }
        Ok(a)
    }

    /// Reads the model for `scale`; widths are inferred from the first branch.
    pub fn from_archive(archive: &TensorArchive, scale: usize) -> Result<Self> {
        let probe = format!("decoder.{scale}.branch1.layer1.weight");
        let t = archive
            .get(&probe)
            .ok_or_else(|| Error::Weights(format!("missing tensor {probe}")))?;
        if t.dims.len() != 4 {
            return Err(Error::Weights(format!("{probe} has dims {:?}", t.dims)));
        }
        let config = DecoderConfig {
            in_channels: t.dims[1] as usize,
            hidden: t.dims[0] as usize,
        };
        let mut w = Self::random(config, scale, 0);
        for (name, c) in w.convs_mut() {
            for (field, dst, dims) in [
                ("weight", &mut c.weight, vec![c.out_channels as u32, c.in_channels as u32, 3, 3]),
                ("bias", &mut c.bias, vec![c.out_channels as u32]),
            ] {
                let key = format!("{name}.{field}");
                let t = archive
                    .get(&key)
                    .ok_or_else(|| Error::Weights(format!("missing tensor {key}")))?;
                if t.dims != dims {
                    return Err(Error::Weights(format!("{key} has dims {:?}, expected {dims:?}", t.dims)));
                }
                dst.copy_from_slice(&t.data);
            }
        }
        Ok(w)
    }

    /// Scales with a model in `archive`.
    pub fn scales_in(archive: &TensorArchive) -> Vec<usize> {
        let mut scales: Vec<usize> = archive
            .names()
            .filter_map(|n| n.strip_prefix("decoder.")?.split('.').next()?.parse().ok())
            .collect();
        scales.sort_unstable();
        scales.dedup();
        scales
    }
}

/// Activations kept for the backward pass.
pub struct DecoderTape {
    input: Tensor3,
    /// Per branch: post-activation outputs of layers 1-4.
    hidden: Vec<Vec<Tensor3>>,
    grid: (usize, usize),
}

fn features_tensor(t: &Hypercolumns) -> Tensor3 {
    t.gather_planes(0..t.channels())
}

/// Output image dims for a feature grid; errors unless they are multiples of 8.
pub fn output_dims(grid_h: usize, grid_w: usize) -> Result<(usize, usize)> {
    let (h, w) = (4 * grid_h, 4 * grid_w);
    if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!(
            "decoder output {h}x{w} must have sides divisible by 8"
        )));
    }
    Ok((h, w))
}

impl DecoderWeights {
    fn check(&self, t: &Hypercolumns) -> Result<(usize, usize)> {
        if t.channels() != self.config.in_channels {
            return Err(Error::shape(format!(
                "decoder takes {} channels, target has {}",
                self.config.in_channels,
                t.channels()
            )));
        }
        output_dims(t.grid_h(), t.grid_w())
    }

    /// Pyramid levels (full, half, quarter, eighth resolution) for `t`.
    pub fn forward_pyramid(&self, t: &Hypercolumns) -> Result<(LaplacianPyramid, DecoderTape)> {
        let (h, w) = self.check(t)?;
        let x = features_tensor(t);
        let mut outs = Vec::with_capacity(4);
        let mut hidden = Vec::with_capacity(4);
        for b in &self.branches {
            let mut acts = Vec::with_capacity(LAYERS_PER_BRANCH - 1);
            let mut cur = x.clone();
            for (l, conv) in b.layers.iter().enumerate() {
                let mut y = conv.forward(&cur);
                if l + 1 < LAYERS_PER_BRANCH {
                    leaky_relu_in_place(&mut y, LEAKY_SLOPE);
                    acts.push(y.clone());
                } else {
                    y.add_assign(&b.residual.forward(&x));
                }
                cur = y;
            }
            outs.push(cur);
            hidden.push(acts);
        }
        let levels = vec![
            depth_to_space(&outs[0], 4)?,
            depth_to_space(&outs[1], 2)?,
            outs[2].clone(),
            resize_tensor(&outs[3], h / 8, w / 8),
        ];
        let pyr = LaplacianPyramid::from_levels(levels)?;
        Ok((
            pyr,
            DecoderTape {
                input: x,
                hidden,
                grid: (t.grid_h(), t.grid_w()),
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` given gradients w.r.t.
    /// every pyramid level.
    pub fn backward(&self, tape: &DecoderTape, level_grads: &LaplacianPyramid, grads: &mut DecoderWeights) -> Result<()> {
        let g = level_grads.levels();
        let (gh, gw) = tape.grid;
        let outs = [
            space_to_depth(&g[0], 4)?,
            space_to_depth(&g[1], 2)?,
            g[2].clone(),
            resize_tensor_adjoint(&g[3], gh, gw),
        ];
        for (bi, (b, gb)) in self.branches.iter().zip(grads.branches.iter_mut()).enumerate() {
            let acts = &tape.hidden[bi];
            let mut gy = outs[bi].clone();
            let res = &mut gb.residual;
            b.residual.backward_params(&tape.input, &gy, &mut res.weight, &mut res.bias);
            for l in (0..LAYERS_PER_BRANCH).rev() {
                let input = if l == 0 { &tape.input } else { &acts[l - 1] };
                let gc = &mut gb.layers[l];
                b.layers[l].backward_params(input, &gy, &mut gc.weight, &mut gc.bias);
                if l > 0 {
                    let mut gx = b.layers[l].backward_input(&gy);
                    leaky_relu_backward(&mut gx, &acts[l - 1], LEAKY_SLOPE);
                    gy = gx;
                }
            }
        }
        Ok(())
    }
}

/// Decodes target features to an image.
pub fn decode(t: &Hypercolumns, w: &DecoderWeights) -> Result<ImageRgb> {
    let (pyr, _) = w.forward_pyramid(t)?;
    ImageRgb::from_tensor(collapse_tensor_pyramid(&pyr))
}

/// Sum over levels of the channel-summed L1 difference divided by the
/// level's pixel count, with its gradient w.r.t. `predicted`.
pub fn reconstruction_loss_and_grad(
    truth: &LaplacianPyramid,
    predicted: &LaplacianPyramid,
) -> Result<(f64, LaplacianPyramid)> {
    if truth.len() != predicted.len()
        || truth
            .levels()
            .iter()
            .zip(predicted.levels())
            .any(|(a, b)| !a.same_dims(b))
    {
        return Err(Error::shape("reconstruction pyramids differ in shape"));
    }
    let mut grad = predicted.zeros_like();
    let mut total = 0.0f64;
    for ((s, p), g) in truth.levels().iter().zip(predicted.levels()).zip(grad.levels_mut()) {
        let pixels = (s.height() * s.width()) as f64;
        let mut sum = 0.0f64;
        for ((&a, &b), gv) in s.data().iter().zip(p.data()).zip(g.data_mut()) {
            let d = b as f64 - a as f64;
            sum += d.abs();
            *gv = if d > 0.0 {
                (1.0 / pixels) as f32
            } else if d < 0.0 {
                (-1.0 / pixels) as f32
            } else {
                0.0
            };
        }
        total += sum / pixels;
    }
    Ok((total, grad))
}

pub fn reconstruction_loss(truth: &LaplacianPyramid, predicted: &LaplacianPyramid) -> Result<f64> {
    Ok(reconstruction_loss_and_grad(truth, predicted)?.0)
}

/// Mean cosine distance between `t` and the features of `decoded`.
pub fn cycle_loss(t: &Hypercolumns, decoded: &ImageRgb, extractor: &Extractor) -> Result<f64> {
    let f = extractor.hypercolumns(decoded)?;
    Ok(1.0 + cosine_objective(&f, t)?.0)
}
