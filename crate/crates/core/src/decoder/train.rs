//! Decoder training on prepared (content, style) pairs, checkpointing, and
//! decoder-based stylization.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{reconstruction_loss_and_grad, DecoderWeights};
use crate::error::{Error, Result};
use crate::extractor::{guide_rows, Extractor, Hypercolumns, PoolOptions, StylePool};
use crate::imaging::pyramid::{build_tensor_pyramid, collapse_adjoint, collapse_tensor_pyramid};
use crate::imaging::{resize_bilinear, resize_tensor, ImageRgb, LaplacianPyramid};
use crate::matcher::{match_features, MatchConfig, MatchMode};
use crate::nn::{Adam, AdamConfig};
use crate::synthesis::{
    blend_for_matching, cosine_objective, objective, scale_dims, Guides, MatchEvent, Phase, ScaleTrace,
    SynthesisObserver, SynthesisTrace,
};
use crate::weights::TensorArchive;

/// Pyramid depth of the decoder output.
pub const DECODER_LEVELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Long side of the training images.
    pub scale: usize,
    pub seed: u64,
    pub rotations: usize,
    pub matching: MatchConfig,
    pub pool: PoolOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            adam: AdamConfig {
                lr: 2e-3,
                beta1: 0.0,
                beta2: 0.99,
                eps: 1e-8,
            },
            scale: 64,
            seed: 0,
            rotations: 4,
            matching: MatchConfig::default(),
            pool: PoolOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.scale < 16 {
            return Err(Error::invalid(format!("training scale {} is below 16 pixels", self.scale)));
        }
        if !(1..=4).contains(&self.rotations) {
            return Err(Error::invalid(format!("rotation count {} outside 1..=4", self.rotations)));
        }
        if matches!(self.matching.mode, MatchMode::Split) {
            return Err(Error::invalid("training targets need hypercolumn or patch matching"));
        }
        self.matching.validate()
    }
}

/// Everything about one (content, style) pair that does not depend on the
/// decoder weights.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub style_features: Hypercolumns,
    pub style_pyramid: LaplacianPyramid,
    pub target: Hypercolumns,
}

impl TrainingPair {
    /// Resizes both images to the training scale (sides multiples of 8),
    /// extracts style features and matches content against the style pool.
    pub fn prepare(extractor: &Extractor, content: &ImageRgb, style: &ImageRgb, cfg: &TrainConfig) -> Result<Self> {
        let (h, w) = scale_dims(content.height(), content.width(), cfg.scale, 8);
        let (sh, sw) = scale_dims(style.height(), style.width(), cfg.scale, 8);
        let content = resize_bilinear(content, h, w);
        let style = resize_bilinear(style, sh, sw);
        let pool = StylePool::build(extractor, &style, None, cfg.rotations, cfg.pool)?;
        let target = match_features(&extractor.hypercolumns(&content)?, &pool, None, &cfg.matching)?.target;
        Ok(Self {
            style_features: extractor.hypercolumns(&style)?,
            style_pyramid: build_tensor_pyramid(style.tensor(), DECODER_LEVELS)?,
            target,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Mean of `reconstruction + cycle` over the batch.
    pub total: f64,
    pub reconstruction: f64,
    pub cycle: f64,
    pub per_example: Vec<f64>,
}

/// Reconstruction and cycle losses of one pair; parameter gradients scaled by
/// `weight` are accumulated into `grads` when given.
pub fn pair_losses(
    w: &DecoderWeights,
    pair: &TrainingPair,
    extractor: &Extractor,
    grads: Option<(&mut DecoderWeights, f32)>,
) -> Result<(f64, f64)> {
    let (s_hat, s_tape) = w.forward_pyramid(&pair.style_features)?;
    let (l_r, mut g_r) = reconstruction_loss_and_grad(&pair.style_pyramid, &s_hat)?;

    let (c_hat, c_tape) = w.forward_pyramid(&pair.target)?;
    let x = collapse_tensor_pyramid(&c_hat);
    let (features, ex_tape) = extractor.forward_with_tape(&x)?;
    let (obj, cot) = cosine_objective(&features, &pair.target)?;
    let l_cycle = 1.0 + obj;

    if let Some((g, scale)) = grads {
        let gx = extractor.backward(&ex_tape, &cot)?;
        let mut g_c = collapse_adjoint(&gx, &c_hat);
        g_r.scale(scale);
        g_c.scale(scale);
        w.backward(&s_tape, &g_r, g)?;
        w.backward(&c_tape, &g_c, g)?;
    }
    Ok((l_r, l_cycle))
}

/// Combined loss of one pair.
pub fn pair_loss(w: &DecoderWeights, pair: &TrainingPair, extractor: &Extractor) -> Result<f64> {
    let (r, c) = pair_losses(w, pair, extractor, None)?;
    Ok(r + c)
}

/// One decoder model with its optimizer state.
pub struct DecoderTrainer {
    pub weights: DecoderWeights,
    pub config: TrainConfig,
    adam: Adam,
}

impl DecoderTrainer {
    pub fn new(weights: DecoderWeights, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(config.adam, &weights.group_sizes());
        Ok(Self { weights, config, adam })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step_count()
    }

    /// Batch indices for the next step. Depends only on the seed and the
    /// step count, so a resumed run draws the same batches.
    pub fn sample_batch(&self, pairs: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.adam.step_count());
        (0..self.config.batch_size).map(|_| rng.random_range(0..pairs)).collect()
    }

    /// Losses and mean gradient over `batch` without updating.
    pub fn evaluate(
        &self,
        pairs: &[TrainingPair],
        batch: &[usize],
        extractor: &Extractor,
        grads: Option<&mut DecoderWeights>,
    ) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let scale = 1.0 / batch.len() as f32;
        let mut report = LossReport::default();
        let mut grads = grads;
        for &i in batch {
            let pair = pairs
                .get(i)
                .ok_or_else(|| Error::invalid(format!("pair index {i} out of range")))?;
            let (r, c) = pair_losses(&self.weights, pair, extractor, grads.as_deref_mut().map(|g| (g, scale)))?;
            report.reconstruction += r / batch.len() as f64;
            report.cycle += c / batch.len() as f64;
            report.per_example.push(r + c);
        }
        report.total = report.reconstruction + report.cycle;
        Ok(report)
    }

    /// Samples a batch, computes the loss at the current weights and applies
    /// one Adam update.
    pub fn train_step(&mut self, pairs: &[TrainingPair], extractor: &Extractor) -> Result<LossReport> {
        if pairs.is_empty() {
            return Err(Error::invalid("no training pairs"));
        }
        let batch = self.sample_batch(pairs.len());
        let mut grads = self.weights.zeros_like();
        let report = self.evaluate(pairs, &batch, extractor, Some(&mut grads))?;
        if !report.total.is_finite() {
            return Err(Error::invalid(format!("training loss became {}", report.total)));
        }
        let params: Vec<(&mut [f32], &[f32])> = self
            .weights
            .convs_mut()
            .into_iter()
            .zip(grads.convs())
            .flat_map(|((_, c), (_, g))| {
                let crate::nn::Conv2d { weight, bias, .. } = c;
                [(&mut weight[..], &g.weight[..]), (&mut bias[..], &g.bias[..])]
            })
            .collect();
        self.adam.step(params);
        Ok(report)
    }

    /// Weights plus optimizer state.
    pub fn checkpoint(&self) -> Result<TensorArchive> {
        let mut a = self.weights.to_archive()?;
        let scale = self.weights.scale;
        a.insert(format!("optim.{scale}.step"), vec![1], vec![self.adam.step_count() as f32])?;
        let names = self.param_names();
        for ((name, m), v) in names.iter().zip(self.adam.first_moments()).zip(self.adam.second_moments()) {
            a.insert(format!("optim.{name}.m"), vec![m.len() as u32], m.clone())?;
            a.insert(format!("optim.{name}.v"), vec![v.len() as u32], v.clone())?;
        }
        Ok(a)
    }

    /// Restores a checkpoint written by [`Self::checkpoint`]. Archives
    /// without optimizer state start a fresh optimizer.
    pub fn resume(archive: &TensorArchive, scale: usize, config: TrainConfig) -> Result<Self> {
        let weights = DecoderWeights::from_archive(archive, scale)?;
        let mut trainer = Self::new(weights, config)?;
        let Some(step) = archive.get(&format!("optim.{scale}.step")) else {
            return Ok(trainer);
        };
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, size) in trainer.param_names().iter().zip(trainer.weights.group_sizes()) {
            for (suffix, dst) in [("m", &mut m), ("v", &mut v)] {
                let key = format!("optim.{name}.{suffix}");
                let t = archive
                    .get(&key)
                    .ok_or_else(|| Error::Weights(format!("missing tensor {key}")))?;
                if t.data.len() != size {
                    return Err(Error::Weights(format!("{key} has {} values, expected {size}", t.data.len())));
                }
                dst.push(t.data.clone());
            }
        }
        let step = step.data.first().copied().unwrap_or(0.0);
        trainer.adam = Adam::from_state(trainer.config.adam, step as u64, m, v)
            .ok_or_else(|| Error::Weights("optimizer state does not fit the model".into()))?;
        Ok(trainer)
    }

    fn param_names(&self) -> Vec<String> {
        self.weights
            .convs()
            .iter()
            .flat_map(|(n, _)| [format!("{n}.weight"), format!("{n}.bias")])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderStylizeConfig {
    pub size: usize,
    pub alpha: f32,
    /// Feature-splitting passes at the finest scale.
    pub split_passes: usize,
    pub single_scale: bool,
    pub rotations: usize,
    pub matching: MatchConfig,
    pub pool: PoolOptions,
}

impl Default for DecoderStylizeConfig {
    fn default() -> Self {
        Self {
            size: 512,
            alpha: 0.25,
            split_passes: 5,
            single_scale: false,
            rotations: 4,
            matching: MatchConfig::default(),
            pool: PoolOptions::default(),
        }
    }
}

/// Coarse-to-fine stylization with one decoder per scale. Scales are the
/// decoders' long sides up to `cfg.size`; a decoder for `cfg.size` itself
/// is required. The finest scale ends with `split_passes` passes that
/// re-match the current output per layer and decode again.
pub fn stylize_decoder(
    content: &ImageRgb,
    style: &ImageRgb,
    extractor: &Extractor,
    decoders: &[DecoderWeights],
    cfg: &DecoderStylizeConfig,
    guides: Option<Guides<'_>>,
    observer: &mut dyn SynthesisObserver,
) -> Result<(ImageRgb, SynthesisTrace)> {
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::invalid(format!("alpha {} outside [0, 1]", cfg.alpha)));
    }
    if !(1..=4).contains(&cfg.rotations) {
        return Err(Error::invalid(format!("rotation count {} outside 1..=4", cfg.rotations)));
    }
    if matches!(cfg.matching.mode, MatchMode::Split) {
        return Err(Error::invalid("the first pass needs hypercolumn or patch matching"));
    }
    let mut chosen: Vec<&DecoderWeights> = decoders
        .iter()
        .filter(|d| d.scale <= cfg.size && (!cfg.single_scale || d.scale == cfg.size))
        .collect();
    chosen.sort_by_key(|d| d.scale);
    chosen.dedup_by_key(|d| d.scale);
    if chosen.last().map(|d| d.scale) != Some(cfg.size) {
        let have: Vec<usize> = decoders.iter().map(|d| d.scale).collect();
        return Err(Error::invalid(format!(
            "no decoder for size {} (checkpoints cover {have:?})",
            cfg.size
        )));
    }
    for d in &chosen {
        if d.config.in_channels != extractor.channels() {
            return Err(Error::Weights(format!(
                "decoder {} takes {} channels, extractor yields {}",
                d.scale,
                d.config.in_channels,
                extractor.channels()
            )));
        }
    }

    let start = Instant::now();
    let split_cfg = cfg.matching.with_mode(MatchMode::Split);
    let mut trace = SynthesisTrace::default();
    let mut previous: Option<ImageRgb> = None;
    for (si, dec) in chosen.iter().enumerate() {
        let t0 = Instant::now();
        let long = dec.scale;
        let (h, w) = scale_dims(content.height(), content.width(), long, 8);
        let (sh, sw) = scale_dims(style.height(), style.width(), h.max(w), 4);
        let content_s = resize_bilinear(content, h, w);
        let style_s = resize_bilinear(style, sh, sw);
        let style_guide = guides.as_ref().map(|g| resize_tensor(g.style, sh, sw));
        let content_guide = guides.as_ref().map(|g| guide_rows(g.content, h / 4, w / 4));
        let pool = StylePool::build(extractor, &style_s, style_guide.as_ref(), cfg.rotations, cfg.pool)?;
        let matching = match &previous {
            None => content_s,
            Some(prev) => blend_for_matching(&resize_bilinear(prev, h, w), &content_s, cfg.alpha)?,
        };

        let t = match_features(&extractor.hypercolumns(&matching)?, &pool, content_guide.as_deref(), &cfg.matching)?;
        observer.on_match(&MatchEvent {
            scale: long,
            phase: Phase::Hyper,
            step: 0,
            result: &t,
            pool: &pool,
        });
        let mut out = super::decode(&t.target, dec)?.clamped();
        trace.scales.push(ScaleTrace {
            scale: long,
            phase: Some(Phase::Hyper),
            height: h,
            width: w,
            pool_rows: pool.rows(),
            steps: 1,
            initial_objective: objective(matching.tensor(), &t.target, extractor)?,
            final_objective: objective(out.tensor(), &t.target, extractor)?,
            seconds: t0.elapsed().as_secs_f64(),
            distinct_matches: t.distinct_rows(),
            objectives: Vec::new(),
        });

        if si + 1 == chosen.len() && cfg.split_passes > 0 {
            let t1 = Instant::now();
            let mut st = ScaleTrace {
                scale: long,
                phase: Some(Phase::Split),
                height: h,
                width: w,
                pool_rows: pool.rows(),
                steps: cfg.split_passes,
                ..ScaleTrace::default()
            };
            for pass in 0..cfg.split_passes {
                let feats = extractor.hypercolumns(&out)?;
                let t = match_features(&feats, &pool, content_guide.as_deref(), &split_cfg)?;
                observer.on_match(&MatchEvent {
                    scale: long,
                    phase: Phase::Split,
                    step: pass,
                    result: &t,
                    pool: &pool,
                });
                let before = cosine_objective(&feats, &t.target)?.0;
                if pass == 0 {
                    st.initial_objective = before;
                }
                observer.on_step(long, Phase::Split, pass, before);
                out = super::decode(&t.target, dec)?.clamped();
                st.final_objective = objective(out.tensor(), &t.target, extractor)?;
                st.distinct_matches = t.distinct_rows();
            }
            st.seconds = t1.elapsed().as_secs_f64();
            trace.scales.push(st);
        }
        previous = Some(out);
    }
    trace.seconds = start.elapsed().as_secs_f64();
    Ok((previous.expect("at least one scale"), trace))
}
