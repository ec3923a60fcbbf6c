use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, ValueEnum};
use serde::Serialize;

use nnst::color_post::{apply_color_post, detect_monochrome, ColorMode, ColorPostConfig};
use nnst::decoder::{stylize_decoder, DecoderStylizeConfig, DecoderWeights};
use nnst::extractor::{Extractor, ExtractorOptions, ExtractorWeights, PoolOptions};
use nnst::imaging::ImageRgb;
use nnst::matcher::{MatchConfig, MatchMode};
use nnst::synthesis::{stylize_opt, Guides, NoopObserver, OptConfig, SynthesisTrace};
use nnst::weights::TensorArchive;

use crate::failure::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Opt,
    Decoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Colorize {
    Auto,
    On,
    Off,
}

/// Matching used by the last phase at the finest scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalMode {
    /// Per-layer re-matching against the current output.
    Split,
    /// Whole-hypercolumn matching only; no split phase.
    Hypercolumn,
    /// 3x3 patch matching in place of hypercolumns; no split phase.
    Patch3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Extractor weight archive.
    #[arg(long, env = "NNST_WEIGHTS")]
    pub weights: PathBuf,
    #[arg(long, value_enum, default_value = "opt")]
    pub variant: Variant,
    /// Decoder checkpoint archive; defaults to the weights archive.
    #[arg(long)]
    pub decoder: Option<PathBuf>,
    /// Long side of the output in pixels.
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f32,
    #[arg(long, value_enum, default_value = "auto")]
    pub colorize: Colorize,
    #[arg(long, requires = "guide_style")]
    pub guide_content: Option<PathBuf>,
    #[arg(long, requires = "guide_content")]
    pub guide_style: Option<PathBuf>,
    /// Seeds the style-pool subsampling phase.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "split")]
    pub mode: FinalMode,
    #[arg(long, value_enum, default_value = "on")]
    pub centered: Toggle,
    /// Comma-separated subset of extractor layers, e.g. conv1_1,conv3_1.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<String>>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, default_value_t = 200)]
    pub steps_hyper: usize,
    #[arg(long, default_value_t = 200)]
    pub steps_split: usize,
    /// Take features before the ReLU instead of after it.
    #[arg(long)]
    pub pre_relu: bool,
    /// Skip the coarser scales.
    #[arg(long)]
    pub single_scale: bool,
    /// Style rotations in the pool (1 to 4).
    #[arg(long, default_value_t = 4)]
    pub rotations: usize,
}

#[derive(Serialize)]
struct RunReport<'a> {
    variant: Variant,
    output: &'a Path,
    height: usize,
    width: usize,
    colorize: Colorize,
    color_applied: bool,
    trace: &'a SynthesisTrace,
}

fn load_image(path: &Path, what: &str) -> Result<ImageRgb, Failure> {
    ImageRgb::load(path).map_err(|e| Failure::from(e).context(format!("{what} {}", path.display())))
}

pub fn load_extractor(path: &Path, options: &ExtractorOptions) -> Result<Extractor, Failure> {
    let archive = TensorArchive::load(path).map_err(|e| Failure::from(e).context(path.display()))?;
    let weights = ExtractorWeights::vgg16_from_archive(&archive).map_err(|e| Failure::from(e).context(path.display()))?;
    Ok(Extractor::new(Arc::new(weights), options)?)
}

fn load_decoders(path: &Path) -> Result<Vec<DecoderWeights>, Failure> {
    let archive = TensorArchive::load(path).map_err(|e| Failure::from(e).context(path.display()))?;
    let scales = DecoderWeights::scales_in(&archive);
    if scales.is_empty() {
        return Err(Failure::Weights(format!("{} holds no decoder checkpoints", path.display())));
    }
    scales
        .into_iter()
        .map(|s| DecoderWeights::from_archive(&archive, s).map_err(Failure::from))
        .collect()
}

fn validate(args: &RunArgs) -> Result<(), Failure> {
    if args.size < 64 {
        return Err(Failure::flags(format!("--size {} is below 64", args.size)));
    }
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(Failure::flags(format!("--alpha {} outside [0, 1]", args.alpha)));
    }
    if !(1..=4).contains(&args.rotations) {
        return Err(Failure::flags(format!("--rotations {} outside 1..=4", args.rotations)));
    }
    for (p, name) in [(&args.content, "--content"), (&args.style, "--style"), (&args.out, "--out")] {
        if p.as_os_str().is_empty() {
            return Err(Failure::flags(format!("{name} is empty")));
        }
    }
    Ok(())
}

pub fn run(args: &RunArgs) -> Result<(), Failure> {
    validate(args)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| Failure::flags(format!("--threads: {e}")))?;
    pool.install(|| run_inner(args))
}

fn run_inner(args: &RunArgs) -> Result<(), Failure> {
    let content = load_image(&args.content, "content")?;
    let style = load_image(&args.style, "style")?;
    let guides = match (&args.guide_content, &args.guide_style) {
        (Some(gc), Some(gs)) => Some((
            load_image(gc, "content guide")?.into_tensor(),
            load_image(gs, "style guide")?.into_tensor(),
        )),
        _ => None,
    };
    let options = ExtractorOptions {
        pre_relu: args.pre_relu,
        layers: args.layers.clone(),
    };
    let extractor = load_extractor(&args.weights, &options)?;

    let base = match args.mode {
        FinalMode::Patch3 => MatchMode::Patch(3),
        _ => MatchMode::Hypercolumn,
    };
    let matching = MatchConfig {
        centered: args.centered == Toggle::On,
        ..MatchConfig::default()
    }
    .with_mode(base);
    let pool_options = PoolOptions {
        seed: args.seed,
        ..PoolOptions::default()
    };
    let split = args.mode == FinalMode::Split;
    let guide_refs = guides.as_ref().map(|(c, s)| Guides { content: c, style: s });

    let (stylized, trace) = match args.variant {
        Variant::Opt => {
            let cfg = OptConfig {
                size: args.size,
                alpha: args.alpha,
                steps_hyper: args.steps_hyper,
                steps_split: if split { args.steps_split } else { 0 },
                single_scale: args.single_scale,
                rotations: args.rotations,
                matching,
                pool: pool_options,
                ..OptConfig::default()
            };
            stylize_opt(&content, &style, &extractor, &cfg, guide_refs, &mut NoopObserver)?
        }
        Variant::Decoder => {
            let path = args.decoder.as_ref().unwrap_or(&args.weights);
            let decoders = load_decoders(path)?;
            let cfg = DecoderStylizeConfig {
                size: args.size,
                alpha: args.alpha,
                split_passes: if split { 5 } else { 0 },
                single_scale: args.single_scale,
                rotations: args.rotations,
                matching,
                pool: pool_options,
            };
            stylize_decoder(&content, &style, &extractor, &decoders, &cfg, guide_refs, &mut NoopObserver)?
        }
    };

    let color = ColorPostConfig {
        mode: match args.colorize {
            Colorize::Auto => ColorMode::Auto,
            Colorize::On => ColorMode::On,
            Colorize::Off => ColorMode::Off,
        },
        ..ColorPostConfig::default()
    };
    let color_applied = match args.colorize {
        Colorize::On => true,
        Colorize::Off => false,
        Colorize::Auto => !detect_monochrome(&style, &color),
    };
    let output = apply_color_post(&stylized, &content, &style, &color);
    output
        .save_png(&args.out)
        .map_err(|e| Failure::from(e).context(format!("writing {}", args.out.display())))?;

    let report = RunReport {
        variant: args.variant,
        output: &args.out,
        height: output.height(),
        width: output.width(),
        colorize: args.colorize,
        color_applied,
        trace: &trace,
    };
    println!("{}", serde_json::to_string(&report).map_err(|e| Failure::Io(e.to_string()))?);
    Ok(())
}
