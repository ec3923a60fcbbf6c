use std::path::Path;

use nnst::decoder::DecoderWeights;
use nnst::extractor::{ExtractorWeights, VGG16_CHANNELS};
use nnst::weights::TensorArchive;

use crate::failure::Failure;

pub fn inspect(path: &Path) -> Result<(), Failure> {
    let archive = TensorArchive::load(path).map_err(|e| Failure::from(e).context(path.display()))?;
    for (name, t) in archive.iter() {
        let dims: Vec<String> = t.dims.iter().map(u32::to_string).collect();
        println!("{name} [{}]", dims.join(", "));
    }
    println!("{} tensors, {} parameters", archive.len(), archive.parameter_count());

    if archive.names().any(|n| n.starts_with("vgg.")) {
        let w = ExtractorWeights::vgg16_from_archive(&archive)?;
        let width = w.total_channels();
        if width != VGG16_CHANNELS {
            return Err(Failure::Weights(format!("hypercolumn width {width}, expected {VGG16_CHANNELS}")));
        }
        println!("extractor: {} conv layers, hypercolumn width {width}", w.layers().len());
    }
    for scale in DecoderWeights::scales_in(&archive) {
        let d = DecoderWeights::from_archive(&archive, scale)?;
        println!(
            "decoder {scale}: {} input channels, hidden width {}, {} parameters",
            d.config.in_channels,
            d.config.hidden,
            d.parameter_count()
        );
    }
    Ok(())
}
