use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use nnst::decoder::{DecoderConfig, DecoderTrainer, DecoderWeights, TrainConfig, TrainingPair};
use nnst::extractor::{slim_vgg16_shapes, Extractor, ExtractorOptions, ExtractorWeights};
use nnst::imaging::ImageRgb;
use nnst::nn::AdamConfig;
use nnst::weights::TensorArchive;

use crate::failure::Failure;
use crate::run::load_extractor;

/// Randomly initialized extractor with every width divided by `divisor`,
/// for toy runs without pretrained weights.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomExtractor {
    #[serde(default)]
    seed: u64,
    #[serde(default = "one")]
    divisor: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    content_dir: PathBuf,
    style_dir: PathBuf,
    out_dir: PathBuf,
    weights: Option<PathBuf>,
    random_extractor: Option<RandomExtractor>,
    #[serde(default = "default_scales")]
    scales: Vec<usize>,
    #[serde(default = "default_steps")]
    steps: u64,
    #[serde(default = "default_batch")]
    batch_size: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_hidden")]
    hidden: usize,
    #[serde(default = "default_lr")]
    lr: f32,
    #[serde(default)]
    beta1: f32,
    #[serde(default = "default_beta2")]
    beta2: f32,
    #[serde(default = "default_rotations")]
    rotations: usize,
    #[serde(default = "default_true")]
    resume: bool,
    /// Steps between checkpoints; 0 saves only at the end.
    #[serde(default)]
    checkpoint_every: u64,
}

fn default_scales() -> Vec<usize> {
    vec![64, 128, 256, 512]
}
fn default_steps() -> u64 {
    200
}
fn default_batch() -> usize {
    4
}
fn default_hidden() -> usize {
    256
}
fn default_lr() -> f32 {
    2e-3
}
fn default_beta2() -> f32 {
    0.99
}
fn default_rotations() -> usize {
    4
}
fn default_true() -> bool {
    true
}

#[derive(Serialize)]
struct ScaleSummary {
    scale: usize,
    pairs: usize,
    first_step: u64,
    steps: u64,
    initial_loss: Option<f64>,
    final_loss: Option<f64>,
    checkpoint: PathBuf,
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let p = entry?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Failure::flags(format!("{} contains no PNG or JPEG images", dir.display())));
    }
    Ok(out)
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<ImageRgb>, Failure> {
    paths
        .iter()
        .map(|p| ImageRgb::load(p).map_err(|e| Failure::from(e).context(p.display())))
        .collect()
}

/// Rows after the header with a step below `keep_below`.
fn kept_rows(csv: &Path, keep_below: u64) -> Vec<String> {
    let Ok(text) = fs::read_to_string(csv) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .is_some_and(|s| s < keep_below)
        })
        .map(str::to_owned)
        .collect()
}

pub fn train(config_path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(config_path).map_err(|e| Failure::Io(format!("{}: {e}", config_path.display())))?;
    let file: TrainFile =
        toml::from_str(&text).map_err(|e| Failure::flags(format!("{}: {e}", config_path.display())))?;
    let root = config_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { root.join(p) };

    if file.scales.is_empty() {
        return Err(Failure::flags("no training scales"));
    }
    let extractor = match (&file.weights, &file.random_extractor) {
        (Some(w), None) => load_extractor(&resolve(w), &ExtractorOptions::default())?,
        (None, Some(r)) => {
            let w = ExtractorWeights::random(&slim_vgg16_shapes(r.divisor), r.seed)?;
            Extractor::new(Arc::new(w), &ExtractorOptions::default())?
        }
        _ => return Err(Failure::flags("set exactly one of `weights` and `random_extractor`")),
    };
    let contents = load_all(&list_images(&resolve(&file.content_dir))?)?;
    let styles = load_all(&list_images(&resolve(&file.style_dir))?)?;
    let out_dir = resolve(&file.out_dir);
    fs::create_dir_all(&out_dir)?;

    let mut merged = TensorArchive::new();
    for &scale in &file.scales {
        let cfg = TrainConfig {
            batch_size: file.batch_size,
            adam: AdamConfig {
                lr: file.lr,
                beta1: file.beta1,
                beta2: file.beta2,
                eps: 1e-8,
            },
            scale,
            seed: file.seed,
            rotations: file.rotations,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        let mut pairs = Vec::with_capacity(contents.len() * styles.len());
        for c in &contents {
            for s in &styles {
                pairs.push(TrainingPair::prepare(&extractor, c, s, &cfg)?);
            }
        }

        let ckpt = out_dir.join(format!("decoder_{scale}.nnstw"));
        let csv_path = out_dir.join(format!("loss_{scale}.csv"));
        let mut trainer = if file.resume && ckpt.exists() {
            let archive = TensorArchive::load(&ckpt).map_err(|e| Failure::from(e).context(ckpt.display()))?;
            DecoderTrainer::resume(&archive, scale, cfg)?
        } else {
            let config = DecoderConfig {
                in_channels: extractor.channels(),
                hidden: file.hidden,
            };
            DecoderTrainer::new(DecoderWeights::random(config, scale, file.seed), cfg)?
        };
        if trainer.weights.config.in_channels != extractor.channels() {
            return Err(Failure::Weights(format!(
                "{} expects {} feature channels, extractor yields {}",
                ckpt.display(),
                trainer.weights.config.in_channels,
                extractor.channels()
            )));
        }

        let first_step = trainer.step_count();
        let rows = if first_step > 0 { kept_rows(&csv_path, first_step) } else { Vec::new() };
        let mut csv = fs::File::create(&csv_path)?;
        writeln!(csv, "step,total,reconstruction,cycle")?;
        for r in &rows {
            writeln!(csv, "{r}")?;
        }

        let mut summary = ScaleSummary {
            scale,
            pairs: pairs.len(),
            first_step,
            steps: 0,
            initial_loss: None,
            final_loss: None,
            checkpoint: ckpt.clone(),
        };
        while trainer.step_count() < file.steps {
            let step = trainer.step_count();
            let report = trainer.train_step(&pairs, &extractor)?;
            writeln!(csv, "{step},{},{},{}", report.total, report.reconstruction, report.cycle)?;
            summary.initial_loss.get_or_insert(report.total);
            summary.final_loss = Some(report.total);
            summary.steps += 1;
            if file.checkpoint_every > 0 && trainer.step_count() % file.checkpoint_every == 0 {
                trainer.checkpoint()?.save(&ckpt)?;
            }
        }
        trainer.checkpoint()?.save(&ckpt)?;
        merged.merge(trainer.weights.to_archive()?).map_err(nnst::Error::from)?;
        println!("{}", serde_json::to_string(&summary).map_err(|e| Failure::Io(e.to_string()))?);
    }
    merged.save(out_dir.join("decoders.nnstw"))?;
    Ok(())
}
