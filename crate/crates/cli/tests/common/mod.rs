#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use nnst::extractor::ExtractorWeights;
use nnst::imaging::ImageRgb;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nnst"));
    c.env_remove("NNST_WEIGHTS");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn nnst")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn colorful(h: usize, w: usize, phase: f32) -> ImageRgb {
    ImageRgb::from_fn(h, w, |y, x| {
        let (fy, fx) = (y as f32 / h as f32, x as f32 / w as f32);
        [
            0.5 + 0.45 * (9.0 * fx + phase).sin(),
            0.5 + 0.45 * (6.0 * fy - 2.0 * phase).cos(),
            0.5 + 0.4 * (4.0 * (fx + 2.0 * fy) + phase).sin(),
        ]
    })
}

pub fn gray(h: usize, w: usize) -> ImageRgb {
    ImageRgb::from_fn(h, w, |y, x| {
        let v = 0.5 + 0.4 * ((x as f32 * 0.3).sin() * (y as f32 * 0.2).cos());
        [v, v, v]
    })
}

pub fn write(img: &ImageRgb, dir: &Path, name: &str) -> PathBuf {
    let p = dir.join(name);
    img.save_png(&p).unwrap();
    p
}

/// Random full-width extractor weights, or the archive named by
/// `NNST_WEIGHTS` when it is set.
pub fn weights() -> &'static Path {
    static PATH: OnceLock<PathBuf> = OnceLock::new();
    PATH.get_or_init(|| {
        if let Some(p) = std::env::var_os("NNST_WEIGHTS") {
            return PathBuf::from(p);
        }
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR"));
        let p = dir.join("random_vgg16_seed0.nnstw");
        if !p.exists() {
            let tmp = dir.join(format!("random_vgg16_seed0.{}.partial", std::process::id()));
            ExtractorWeights::random_vgg16(0).to_archive().unwrap().save(&tmp).unwrap();
            std::fs::rename(&tmp, &p).unwrap();
        }
        p
    })
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
