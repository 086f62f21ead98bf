//! Pretrains a small masked-token generator on eight synthetic source
//! classes, then adapts it to four unseen classes by training only a
//! factorized prompt generator. Prints Fréchet distances of the tuned model
//! against two baselines and saves the tuned checkpoint.
//!
//! ```text
//! cargo run --release --example prompt_transfer [OUT_DIR]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use promptgen::decode::{generate_images, DecodeConfig, PromptSource};
use promptgen::io::ppm::write_image;
use promptgen::io::synth::{synth_dataset, SyntheticDatasetSpec};
use promptgen::metrics::image_frechet;
use promptgen::train::{init_transfer, pretrain, transfer, ModelInit, PromptSettings, TokenDataset, TrainConfig, TransferMode};
use promptgen::{fit_codebook, GenModel, Image, ModelKind, TransformerConfig};

const SAMPLES_PER_CLASS: usize = 25;

fn samples(model: &GenModel, conds: &[usize], seed: u64) -> promptgen::Result<Vec<Image>> {
    let sources = conds
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, SAMPLES_PER_CLASS))
        .map(|c| model.prompt_for(c).map(PromptSource::Constant))
        .collect::<promptgen::Result<Vec<_>>>()?;
    let config = DecodeConfig {
        steps: 4,
        ..DecodeConfig::default()
    };
    generate_images(model, &sources, &config, seed)
}

fn main() -> promptgen::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("promptgen-examples"));
    std::fs::create_dir_all(&out)?;
    let start = Instant::now();

    let source_data = synth_dataset(&SyntheticDatasetSpec {
        size: 16,
        ..SyntheticDatasetSpec::source(50, 0)
    })?;
    let book = fit_codebook(&source_data.images, 32, 4, 4, 10, 0)?;
    let mut config = TransformerConfig::toy(ModelKind::Nar, source_data.classes);
    config.dim = 48;
    config.layers = 3;
    config.grid_h = 4;
    config.grid_w = 4;
    config.codebook_size = book.len();
    let tokens = TokenDataset::encode(&source_data, &book)?;
    let pretrained = pretrain(&tokens, config, book, &TrainConfig {
        epochs: 40,
        ..TrainConfig::for_mode(TransferMode::Scratch)
    })?;
    let first = pretrained.log.first().map_or(f64::NAN, |r| r.loss);
    let last = pretrained.log.last().map_or(f64::NAN, |r| r.loss);
    println!("pretrained source: loss {first:.3} -> {last:.3} ({:.0}s)", start.elapsed().as_secs_f64());
    let source = pretrained.checkpoint;

    let target = synth_dataset(&SyntheticDatasetSpec {
        size: 16,
        ..SyntheticDatasetSpec::target(50, 1)
    })?;
    let held_out = synth_dataset(&SyntheticDatasetSpec {
        size: 16,
        ..SyntheticDatasetSpec::target(50, 2)
    })?;
    let target_tokens = TokenDataset::encode(&target, &source.model.codebook)?;
    let settings = PromptSettings::factorized(ModelKind::Nar, 4, 32);
    let tune = TrainConfig::for_mode(TransferMode::Prompt);
    let (untrained, _) = init_transfer(&target_tokens, ModelInit::Source(&source), settings, &tune)?;
    let tuned = transfer(&target_tokens, ModelInit::Source(&source), settings, &tune)?;
    let last = tuned.log.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "prompt tuning: {} trainable weights, final loss {last:.3} ({:.0}s)",
        tuned.checkpoint.model.params.trainable_count(),
        start.elapsed().as_secs_f64()
    );

    let classes: Vec<usize> = (0..target.classes).collect();
    let tuned_images = samples(&tuned.checkpoint.model, &classes, 7)?;
    let rows = [
        ("prompt-tuned", image_frechet(&tuned_images, &held_out.images)?),
        ("untrained prompt", image_frechet(&samples(&untrained, &classes, 7)?, &held_out.images)?),
        ("source classes", image_frechet(&samples(&source.model, &classes, 7)?, &held_out.images)?),
    ];
    println!("Fréchet distance to held-out target images:");
    for (name, fd) in rows {
        println!("  {name:<17} {fd:.3}");
    }

    let ckpt = out.join("prompt_tuned.ckpt");
    tuned.checkpoint.save(&ckpt)?;
    let grid = out.join("prompt_tuned_samples.ppm");
    write_image(&grid, &Image::tile(&tuned_images, SAMPLES_PER_CLASS)?)?;
    println!("wrote {} and {}", ckpt.display(), grid.display());
    Ok(())
}
