//! Coarse-to-fine image optimization against matched style features.

mod objective;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use objective::{cosine_objective, objective, objective_and_grad, objective_and_pyramid_grad};

use crate::error::{Error, Result};
use crate::extractor::{guide_rows, Extractor, PoolOptions, StylePool};
use crate::imaging::pyramid::{build_tensor_pyramid, collapse_tensor_pyramid, max_levels};
use crate::imaging::{resize_bilinear, resize_tensor, ImageRgb};
use crate::matcher::{match_features, MatchConfig, MatchMode, MatchResult};
use crate::nn::{Adam, AdamConfig};
use crate::tensor::Tensor3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Target computed once from the matching input, then held fixed.
    Hyper,
    /// Target recomputed per layer from the current output before every step.
    Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    /// Long side of the output.
    pub size: usize,
    /// Weight of the upsampled previous output in the matching input.
    pub alpha: f32,
    pub steps_hyper: usize,
    pub steps_split: usize,
    pub adam: AdamConfig,
    pub pyramid_levels: usize,
    /// Run only the finest scale, initialized from the content.
    pub single_scale: bool,
    /// Style rotations in the pool (1 disables augmentation).
    pub rotations: usize,
    pub matching: MatchConfig,
    pub pool: PoolOptions,
    /// Keep every step's objective in the trace.
    pub record_steps: bool,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            size: 512,
            alpha: 0.25,
            steps_hyper: 200,
            steps_split: 200,
            adam: AdamConfig::default(),
            pyramid_levels: 8,
            single_scale: false,
            rotations: 4,
            matching: MatchConfig::default(),
            pool: PoolOptions::default(),
            record_steps: false,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.size < 8 {
            return Err(Error::invalid(format!("output size {} is below 8 pixels", self.size)));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::invalid("pyramid needs at least one level"));
        }
        if !(1..=4).contains(&self.rotations) {
            return Err(Error::invalid(format!("rotation count {} outside 1..=4", self.rotations)));
        }
        if matches!(self.matching.mode, MatchMode::Split) {
            return Err(Error::invalid("the hyper phase needs hypercolumn or patch matching"));
        }
        Ok(())
    }

    /// Long sides of every scale, coarsest first.
    pub fn scales(&self) -> Vec<usize> {
        if self.single_scale {
            return vec![self.size];
        }
        let mut out: Vec<usize> = [8, 4, 2, 1].iter().map(|d| (self.size / d).max(8)).collect();
        out.dedup();
        out
    }
}

/// Dimensions with the given long side, each rounded to a multiple of
/// `multiple` and at least `2 * multiple`.
pub fn scale_dims(height: usize, width: usize, long_side: usize, multiple: usize) -> (usize, usize) {
    let f = long_side as f64 / height.max(width) as f64;
    let round = |v: usize| {
        let r = ((v as f64 * f) / multiple as f64).round() as usize * multiple;
        r.max(2 * multiple)
    };
    (round(height), round(width))
}

/// Matching input `alpha * previous + (1 - alpha) * content`.
pub fn blend_for_matching(previous: &ImageRgb, content: &ImageRgb, alpha: f32) -> Result<ImageRgb> {
    if previous.height() != content.height() || previous.width() != content.width() {
        return Err(Error::shape("blend inputs differ in size"));
    }
    let mut t = content.tensor().clone();
    t.scale(1.0 - alpha);
    t.axpy(alpha, previous.tensor());
    ImageRgb::from_tensor(t)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaleTrace {
    pub scale: usize,
    pub phase: Option<Phase>,
    pub height: usize,
    pub width: usize,
    pub pool_rows: usize,
    pub steps: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub seconds: f64,
    /// Distinct pool rows used by the last target.
    pub distinct_matches: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub objectives: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisTrace {
    pub scales: Vec<ScaleTrace>,
    pub seconds: f64,
}

/// What a target was matched against, passed to observers.
pub struct MatchEvent<'a> {
    pub scale: usize,
    pub phase: Phase,
    pub step: usize,
    pub result: &'a MatchResult,
    pub pool: &'a StylePool,
}

/// Hooks for inspecting a synthesis run as it happens.
pub trait SynthesisObserver {
    fn on_match(&mut self, _event: &MatchEvent<'_>) {}
    fn on_step(&mut self, _scale: usize, _phase: Phase, _step: usize, _objective: f64) {}
}

pub struct NoopObserver;

impl SynthesisObserver for NoopObserver {}

/// Inputs shared by both phases at one scale.
pub struct ScaleInputs<'a> {
    pub scale: usize,
    pub extractor: &'a Extractor,
    pub pool: &'a StylePool,
    /// Content guide at the matching grid, cell-major.
    pub guide: Option<&'a [f32]>,
}

/// Runs one phase at one scale starting from `init`. In the hyper phase the
/// target comes from `content_for_match`; in the split phase it is rebuilt
/// from the current output before each step. Returns the clamped result.
pub fn optimize_scale(
    init: &ImageRgb,
    content_for_match: &ImageRgb,
    inputs: &ScaleInputs<'_>,
    cfg: &OptConfig,
    phase: Phase,
    observer: &mut dyn SynthesisObserver,
) -> Result<(ImageRgb, ScaleTrace)> {
    let start = Instant::now();
    let (h, w) = (init.height(), init.width());
    if (content_for_match.height(), content_for_match.width()) != (h, w) {
        return Err(Error::shape("matching input and initialization differ in size"));
    }
    let ex = inputs.extractor;
    ex.check_input(h, w)?;
    let steps = match phase {
        Phase::Hyper => cfg.steps_hyper,
        Phase::Split => cfg.steps_split,
    };
    let mut trace = ScaleTrace {
        scale: inputs.scale,
        phase: Some(phase),
        height: h,
        width: w,
        pool_rows: inputs.pool.rows(),
        steps,
        ..ScaleTrace::default()
    };

    let split_cfg = cfg.matching.with_mode(MatchMode::Split);
    let mut target = match phase {
        Phase::Hyper => {
            let feats = ex.hypercolumns(content_for_match)?;
            Some(match_features(&feats, inputs.pool, inputs.guide, &cfg.matching)?)
        }
        Phase::Split => None,
    };
    if let Some(t) = &target {
        observer.on_match(&MatchEvent {
            scale: inputs.scale,
            phase,
            step: 0,
            result: t,
            pool: inputs.pool,
        });
    }
    if steps == 0 {
        let t = match target {
            Some(t) => t,
            None => match_features(&ex.hypercolumns(init)?, inputs.pool, inputs.guide, &split_cfg)?,
        };
        let obj = objective(init.tensor(), &t.target, ex)?;
        trace.initial_objective = obj;
        trace.final_objective = obj;
        trace.distinct_matches = t.distinct_rows();
        trace.seconds = start.elapsed().as_secs_f64();
        return Ok((init.clone(), trace));
    }

    let levels = cfg.pyramid_levels.min(max_levels(h, w));
    let mut pyr = build_tensor_pyramid(init.tensor(), levels)?;
    let sizes: Vec<usize> = pyr.levels().iter().map(|l| l.data().len()).collect();
    let mut adam = Adam::new(cfg.adam, &sizes);

    for step in 0..steps {
        let x = collapse_tensor_pyramid(&pyr);
        let (features, tape) = ex.forward_with_tape(&x)?;
        if phase == Phase::Split {
            let t = match_features(&features, inputs.pool, inputs.guide, &split_cfg)?;
            observer.on_match(&MatchEvent {
                scale: inputs.scale,
                phase,
                step,
                result: &t,
                pool: inputs.pool,
            });
            target = Some(t);
        }
        let t = target.as_ref().expect("target set before stepping");
        let (loss, cot) = cosine_objective(&features, &t.target)?;
        if !loss.is_finite() {
            return Err(Error::invalid(format!("objective became {loss} at step {step}")));
        }
        if step == 0 {
            trace.initial_objective = loss;
        }
        if cfg.record_steps {
            trace.objectives.push(loss);
        }
        observer.on_step(inputs.scale, phase, step, loss);
        let g = ex.backward(&tape, &cot)?;
        let grad = crate::imaging::pyramid::collapse_adjoint(&g, &pyr);
        adam.step(
            pyr.levels_mut()
                .iter_mut()
                .zip(grad.levels())
                .map(|(p, g)| (p.data_mut(), g.data())),
        );
    }

    let out = ImageRgb::from_tensor(collapse_tensor_pyramid(&pyr))?.clamped();
    let t = target.expect("at least one step ran");
    trace.final_objective = objective(out.tensor(), &t.target, ex)?;
    trace.distinct_matches = t.distinct_rows();
    trace.seconds = start.elapsed().as_secs_f64();
    Ok((out, trace))
}

/// Optional guide planes for content and style at their input resolutions.
pub struct Guides<'a> {
    pub content: &'a Tensor3,
    pub style: &'a Tensor3,
}

/// Full multi-scale synthesis. Each scale starts from the upsampled previous
/// output and matches against a blend of it with the content; the finest
/// scale ends with the split phase.
pub fn stylize_opt(
    content: &ImageRgb,
    style: &ImageRgb,
    extractor: &Extractor,
    cfg: &OptConfig,
    guides: Option<Guides<'_>>,
    observer: &mut dyn SynthesisObserver,
) -> Result<(ImageRgb, SynthesisTrace)> {
    cfg.validate()?;
    if let Some(g) = &guides {
        if g.content.channels() != g.style.channels() {
            return Err(Error::shape("content and style guides have different channel counts"));
        }
        if (g.content.height(), g.content.width()) != (content.height(), content.width())
            || (g.style.height(), g.style.width()) != (style.height(), style.width())
        {
            return Err(Error::shape("guides must match their image sizes"));
        }
    }
    let start = Instant::now();
    let scales = cfg.scales();
    let mut trace = SynthesisTrace::default();
    let mut previous: Option<ImageRgb> = None;
    for (si, &long) in scales.iter().enumerate() {
        let (h, w) = scale_dims(content.height(), content.width(), long, 4);
        let (sh, sw) = scale_dims(style.height(), style.width(), h.max(w), 4);
        let content_s = resize_bilinear(content, h, w);
        let style_s = resize_bilinear(style, sh, sw);
        let style_guide = guides.as_ref().map(|g| resize_tensor(g.style, sh, sw));
        let content_guide = guides.as_ref().map(|g| guide_rows(g.content, h / 4, w / 4));
        let pool = StylePool::build(extractor, &style_s, style_guide.as_ref(), cfg.rotations, cfg.pool)?;

        let (init, matching) = match &previous {
            None => (content_s.clone(), content_s.clone()),
            Some(prev) => {
                let up = resize_bilinear(prev, h, w);
                let blend = blend_for_matching(&up, &content_s, cfg.alpha)?;
                (up, blend)
            }
        };
        let inputs = ScaleInputs {
            scale: long,
            extractor,
            pool: &pool,
            guide: content_guide.as_deref(),
        };
        let (mut out, t) = optimize_scale(&init, &matching, &inputs, cfg, Phase::Hyper, observer)?;
        trace.scales.push(t);
        if si + 1 == scales.len() && cfg.steps_split > 0 {
            let (o, t) = optimize_scale(&out, &out, &inputs, cfg, Phase::Split, observer)?;
            out = o;
            trace.scales.push(t);
        }
        previous = Some(out);
    }
    trace.seconds = start.elapsed().as_secs_f64();
    Ok((previous.expect("at least one scale"), trace))
}
