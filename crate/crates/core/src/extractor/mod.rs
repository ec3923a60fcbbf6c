//! Multi-layer CNN features sampled onto a quarter-resolution grid, with the
//! reverse-mode gradient of that map.

mod features;
mod pool;
mod weights;

use std::sync::Arc;

pub use features::{Hypercolumns, LayerLayout};
pub use pool::{guide_rows, PoolCell, PoolOptions, StylePool};
pub use weights::{
    slim_vgg16_shapes, vgg16_shapes, vgg_archive_name, ExtractorLayer, ExtractorWeights, LayerShape, VGG16_CHANNELS,
    VGG16_LAYERS,
};

use crate::error::{Error, Result};
use crate::imaging::{resize_tensor, resize_tensor_adjoint, ImageRgb};
use crate::nn::{max_pool2, max_pool2_backward, relu_backward, relu_in_place};
use crate::tensor::Tensor3;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Smallest accepted input side.
pub const MIN_INPUT_SIDE: usize = 8;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExtractorOptions {
    /// Tap layers before their ReLU instead of after.
    pub pre_relu: bool,
    /// Layers to include in the hypercolumns, by name; `None` keeps all.
    pub layers: Option<Vec<String>>,
}

/// Per-layer activations plus the assembled hypercolumn grid.
#[derive(Clone, Debug)]
pub struct FeatureStack {
    pub activations: Vec<Tensor3>,
    pub hypercolumns: Hypercolumns,
}

/// State kept from a forward pass for [`Extractor::backward`].
pub struct Tape {
    height: usize,
    width: usize,
    /// Post-ReLU output of every evaluated layer.
    posts: Vec<Tensor3>,
    /// Pool argmax indices and pre-pool dims for layers followed by a pool.
    pools: Vec<Option<(Vec<u32>, usize, usize)>>,
}

#[derive(Clone, Debug)]
pub struct Extractor {
    weights: Arc<ExtractorWeights>,
    pre_relu: bool,
    taps: Vec<bool>,
    /// Number of leading layers that must run to produce every tap.
    depth: usize,
    layout: Arc<LayerLayout>,
}

impl Extractor {
    pub fn new(weights: Arc<ExtractorWeights>, options: &ExtractorOptions) -> Result<Self> {
        let layers = weights.layers();
        let taps = match &options.layers {
            None => vec![true; layers.len()],
            Some(names) => {
                let mut taps = vec![false; layers.len()];
                for name in names {
                    let i = layers
                        .iter()
                        .position(|l| &l.name == name)
                        .ok_or_else(|| Error::invalid(format!("unknown layer {name}")))?;
                    taps[i] = true;
                }
                taps
            }
        };
        let depth = taps
            .iter()
            .rposition(|&t| t)
            .map(|i| i + 1)
            .ok_or_else(|| Error::invalid("at least one layer must be selected"))?;
        let layout = Arc::new(LayerLayout::new(
            layers
                .iter()
                .zip(&taps)
                .filter(|(_, &t)| t)
                .map(|(l, _)| (l.name.clone(), l.conv.out_channels)),
        ));
        Ok(Self {
            weights,
            pre_relu: options.pre_relu,
            taps,
            depth,
            layout,
        })
    }

    pub fn with_defaults(weights: ExtractorWeights) -> Self {
        Self::new(Arc::new(weights), &ExtractorOptions::default()).expect("default options are valid")
    }

    pub fn weights(&self) -> &ExtractorWeights {
        &self.weights
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn channels(&self) -> usize {
        self.layout.channels()
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        if height % 4 != 0 || width % 4 != 0 || height < MIN_INPUT_SIDE || width < MIN_INPUT_SIDE {
            return Err(Error::shape(format!(
                "extractor input must be at least {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE} with sides divisible by 4, got {height}x{width}"
            )));
        }
        let (mut h, mut w) = (height, width);
        for layer in &self.weights.layers()[..self.depth] {
            if layer.pool_after {
                h /= 2;
                w /= 2;
            }
            if h == 0 || w == 0 {
                return Err(Error::shape(format!("{height}x{width} input pools away before {}", layer.name)));
            }
        }
        Ok(())
    }

    pub fn forward(&self, img: &ImageRgb) -> Result<FeatureStack> {
        let (hyper, tape, taps) = self.run(img.tensor(), true)?;
        drop(tape);
        Ok(FeatureStack {
            activations: taps,
            hypercolumns: hyper,
        })
    }

    pub fn hypercolumns(&self, img: &ImageRgb) -> Result<Hypercolumns> {
        self.hypercolumns_tensor(img.tensor())
    }

    pub fn hypercolumns_tensor(&self, img: &Tensor3) -> Result<Hypercolumns> {
        Ok(self.run(img, false)?.0)
    }

    /// Forward pass that also records what [`Extractor::backward`] needs.
    /// The input may be any 3-plane tensor (it need not lie in `[0, 1]`).
    pub fn forward_with_tape(&self, img: &Tensor3) -> Result<(Hypercolumns, Tape)> {
        let (hyper, tape, _) = self.run(img, false)?;
        Ok((hyper, tape))
    }

    fn run(&self, img: &Tensor3, keep_taps: bool) -> Result<(Hypercolumns, Tape, Vec<Tensor3>)> {
        if img.channels() != 3 {
            return Err(Error::shape(format!("expected 3 input planes, got {}", img.channels())));
        }
        let (h, w) = (img.height(), img.width());
        self.check_input(h, w)?;
        let (gh, gw) = (h / 4, w / 4);
        let mut hyper = Hypercolumns::zeros(gh, gw, self.layout.clone());

        let mut x = img.clone();
        for c in 0..3 {
            let (m, s) = (IMAGENET_MEAN[c], IMAGENET_STD[c]);
            x.plane_mut(c).iter_mut().for_each(|v| *v = (*v - m) / s);
        }

        let mut posts = Vec::with_capacity(self.depth);
        let mut pools = Vec::with_capacity(self.depth);
        let mut kept = Vec::new();
        let mut offset = 0;
        for (i, layer) in self.weights.layers()[..self.depth].iter().enumerate() {
            let mut y = layer.conv.forward(&x);
            if self.taps[i] && self.pre_relu {
                hyper.scatter_planes(&resize_tensor(&y, gh, gw), offset);
                offset += y.channels();
                if keep_taps {
                    kept.push(y.clone());
                }
            }
            relu_in_place(&mut y);
            if self.taps[i] && !self.pre_relu {
                hyper.scatter_planes(&resize_tensor(&y, gh, gw), offset);
                offset += y.channels();
                if keep_taps {
                    kept.push(y.clone());
                }
            }
            if layer.pool_after && i + 1 < self.depth {
                let (p, arg) = max_pool2(&y);
                pools.push(Some((arg, y.height(), y.width())));
                x = p;
            } else {
                pools.push(None);
                x = y.clone();
            }
            posts.push(y);
        }
        Ok((
            hyper,
            Tape {
                height: h,
                width: w,
                posts,
                pools,
            },
            kept,
        ))
    }

    /// Gradient w.r.t. the input image of `<hypercolumns(img), cotangent>`.
    pub fn backward(&self, tape: &Tape, cotangent: &Hypercolumns) -> Result<Tensor3> {
        let (gh, gw) = (tape.height / 4, tape.width / 4);
        if cotangent.grid_h() != gh || cotangent.grid_w() != gw || cotangent.layout() != &self.layout {
            return Err(Error::shape(format!(
                "cotangent is {}x{}x{}, forward output was {gh}x{gw}x{}",
                cotangent.grid_h(),
                cotangent.grid_w(),
                cotangent.channels(),
                self.channels()
            )));
        }
        let layers = &self.weights.layers()[..self.depth];
        let mut tap_ranges = vec![None; layers.len()];
        let mut next = 0;
        for (i, slot) in tap_ranges.iter_mut().enumerate() {
            if self.taps[i] {
                *slot = Some(self.layout.ranges()[next].clone());
                next += 1;
            }
        }

        // Gradient w.r.t. the input of the layer after `i`.
        let mut g_next: Option<Tensor3> = None;
        for i in (0..layers.len()).rev() {
            let post = &tape.posts[i];
            let tap_grad = tap_ranges[i]
                .clone()
                .map(|r| resize_tensor_adjoint(&cotangent.gather_planes(r), post.height(), post.width()));
            let mut g_post = match (g_next.take(), &tape.pools[i]) {
                (Some(g), Some((arg, ph, pw))) => max_pool2_backward(&g, arg, *ph, *pw),
                (Some(g), None) => g,
                (None, _) => Tensor3::zeros(post.channels(), post.height(), post.width()),
            };
            if !self.pre_relu {
                if let Some(t) = &tap_grad {
                    g_post.add_assign(t);
                }
            }
            relu_backward(&mut g_post, post);
            if self.pre_relu {
                if let Some(t) = &tap_grad {
                    g_post.add_assign(t);
                }
            }
            g_next = Some(layers[i].conv.backward_input(&g_post));
        }
        let mut g = g_next.expect("at least one layer");
        for c in 0..3 {
            let s = IMAGENET_STD[c];
            g.plane_mut(c).iter_mut().for_each(|v| *v /= s);
        }
        Ok(g)
    }

    pub fn vjp(&self, img: &ImageRgb, cotangent: &Hypercolumns) -> Result<Tensor3> {
        let (_, tape) = self.forward_with_tape(img.tensor())?;
        self.backward(&tape, cotangent)
    }
}
