//! Convolutional stacks for the extractor, loaded from archives or drawn at
//! random.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::weights::TensorArchive;

/// `(block, index, in, out)` for the ten VGG16 layers kept, in order.
pub const VGG16_LAYERS: [(usize, usize, usize, usize); 10] = [
    (1, 1, 3, 64),
    (1, 2, 64, 64),
    (2, 1, 64, 128),
    (2, 2, 128, 128),
    (3, 1, 128, 256),
    (3, 2, 256, 256),
    (3, 3, 256, 256),
    (4, 1, 256, 512),
    (4, 2, 512, 512),
    (4, 3, 512, 512),
];

/// Hypercolumn width of the full VGG16 stack.
pub const VGG16_CHANNELS: usize = 2688;

/// Shape of one extractor layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub pool_after: bool,
}

impl LayerShape {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize, pool_after: bool) -> Self {
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            pool_after,
        }
    }
}

/// VGG16 blocks 1-4 with pooling after the last conv of blocks 1-3.
pub fn vgg16_shapes() -> Vec<LayerShape> {
    VGG16_LAYERS
        .iter()
        .map(|&(b, i, cin, cout)| {
            let last_in_block = matches!((b, i), (1, 2) | (2, 2) | (3, 3));
            LayerShape::new(format!("conv{b}_{i}"), cin, cout, 3, last_in_block)
        })
        .collect()
}

/// VGG16 topology with every layer width divided by `divisor`. Used for fast
/// experiments and tests.
pub fn slim_vgg16_shapes(divisor: usize) -> Vec<LayerShape> {
    let d = divisor.max(1);
    vgg16_shapes()
        .into_iter()
        .map(|mut s| {
            if s.in_channels != 3 {
                s.in_channels = (s.in_channels / d).max(1);
            }
            s.out_channels = (s.out_channels / d).max(1);
            s
        })
        .collect()
}

pub fn vgg_archive_name(block: usize, index: usize, field: &str) -> String {
    format!("vgg.block{block}.conv{index}.{field}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorLayer {
    pub name: String,
    pub conv: Conv2d,
    pub pool_after: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorWeights {
    layers: Vec<ExtractorLayer>,
}

impl ExtractorWeights {
    pub fn from_layers(layers: Vec<ExtractorLayer>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::invalid("an extractor needs at least one layer"))?;
        if first.conv.in_channels != 3 {
            return Err(Error::shape(format!(
                "first layer takes {} channels, expected 3",
                first.conv.in_channels
            )));
        }
        for pair in layers.windows(2) {
            if pair[0].conv.out_channels != pair[1].conv.in_channels {
                return Err(Error::shape(format!(
                    "{} produces {} channels but {} expects {}",
                    pair[0].name, pair[0].conv.out_channels, pair[1].name, pair[1].conv.in_channels
                )));
            }
        }
        Ok(Self { layers })
    }

    /// He-normal weights and zero biases.
    pub fn random(shapes: &[LayerShape], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = shapes
            .iter()
            .map(|s| {
                let fan_in = (s.in_channels * s.kernel * s.kernel) as f32;
                let normal = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).expect("positive std");
                let n = s.out_channels * s.in_channels * s.kernel * s.kernel;
                let weight = (0..n).map(|_| normal.sample(&mut rng)).collect();
                Ok(ExtractorLayer {
                    name: s.name.clone(),
                    conv: Conv2d::new(s.out_channels, s.in_channels, s.kernel, weight, vec![0.0; s.out_channels])?,
                    pool_after: s.pool_after,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn random_vgg16(seed: u64) -> Self {
        Self::random(&vgg16_shapes(), seed).expect("vgg16 shapes are consistent")
    }

    /// Reads the ten VGG16 layers under their canonical names. Extra entries
    /// (e.g. decoder tensors) are ignored.
    pub fn vgg16_from_archive(archive: &TensorArchive) -> Result<Self> {
        let mut layers = Vec::with_capacity(VGG16_LAYERS.len());
        for shape in vgg16_shapes() {
            let (b, i) = parse_vgg_name(&shape.name);
            let wname = vgg_archive_name(b, i, "weight");
            let bname = vgg_archive_name(b, i, "bias");
            let k = shape.kernel as u32;
            let wdims = [shape.out_channels as u32, shape.in_channels as u32, k, k];
            let w = fetch(archive, &wname, &wdims)?;
            let bias = fetch(archive, &bname, &[shape.out_channels as u32])?;
            layers.push(ExtractorLayer {
                name: shape.name.clone(),
                conv: Conv2d::new(shape.out_channels, shape.in_channels, shape.kernel, w, bias)?,
                pool_after: shape.pool_after,
            });
        }
        Self::from_layers(layers)
    }

    pub fn load_vgg16(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::vgg16_from_archive(&TensorArchive::load(path)?)
    }

    /// Archive under canonical names; only meaningful for VGG-named layers
    /// (`conv{b}_{i}`).
    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut archive = TensorArchive::new();
        for layer in &self.layers {
            let (b, i) = try_parse_vgg_name(&layer.name)
                .ok_or_else(|| Error::invalid(format!("layer {} has no canonical archive name", layer.name)))?;
            let c = &layer.conv;
            let k = c.kernel as u32;
            archive.insert(
                vgg_archive_name(b, i, "weight"),
                vec![c.out_channels as u32, c.in_channels as u32, k, k],
                c.weight.clone(),
            )?;
            archive.insert(vgg_archive_name(b, i, "bias"), vec![c.out_channels as u32], c.bias.clone())?;
        }
        Ok(archive)
    }

    pub fn layers(&self) -> &[ExtractorLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ExtractorLayer] {
        &mut self.layers
    }

    pub fn total_channels(&self) -> usize {
        self.layers.iter().map(|l| l.conv.out_channels).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.conv.param_count()).sum()
    }
}

fn try_parse_vgg_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("conv")?;
    let (b, i) = rest.split_once('_')?;
    Some((b.parse().ok()?, i.parse().ok()?))
}

fn parse_vgg_name(name: &str) -> (usize, usize) {
    try_parse_vgg_name(name).expect("canonical layer name")
}

fn fetch(archive: &TensorArchive, name: &str, dims: &[u32]) -> Result<Vec<f32>> {
    let t = archive
        .get(name)
        .ok_or_else(|| Error::Weights(format!("missing tensor {name}")))?;
    if t.dims != dims {
        return Err(Error::Weights(format!(
            "tensor {name} has dims {:?}, expected {dims:?}",
            t.dims
        )));
    }
    Ok(t.data.clone())
}
