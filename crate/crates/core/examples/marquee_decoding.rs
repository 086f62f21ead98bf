//! Instance-conditioned prompt tuning followed by marquee decoding: the
//! prompt drifts from one training image's condition to another's during
//! the first decoding steps.
//!
//! ```text
//! cargo run --release --example marquee_decoding [OUT_DIR]
//! ```

use std::path::PathBuf;

use promptgen::decode::{generate_images, DecodeConfig, MarqueeSpec, PromptSource};
use promptgen::io::ppm::write_image;
use promptgen::io::synth::{synth_dataset, SyntheticDatasetSpec};
use promptgen::prompt::{marquee_weight, InterpolationLevel};
use promptgen::train::{pretrain, transfer, ModelInit, PromptSettings, TokenDataset, TrainConfig, TransferMode};
use promptgen::{fit_codebook, Condition, Image, ModelKind, TransformerConfig};

const STEPS: usize = 6;
const T_CUTOFF: usize = 4;
const SAMPLES: usize = 6;

fn main() -> promptgen::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("promptgen-examples"));
    std::fs::create_dir_all(&out)?;

    let source_data = synth_dataset(&SyntheticDatasetSpec {
        size: 16,
        ..SyntheticDatasetSpec::source(30, 0)
    })?;
    let book = fit_codebook(&source_data.images, 32, 4, 4, 10, 0)?;
    let mut config = TransformerConfig::toy(ModelKind::Nar, source_data.classes);
    config.dim = 48;
    config.layers = 2;
    config.grid_h = 4;
    config.grid_w = 4;
    config.codebook_size = book.len();
    let tokens = TokenDataset::encode(&source_data, &book)?;
    let source = pretrain(&tokens, config, book, &TrainConfig {
        epochs: 30,
        ..TrainConfig::for_mode(TransferMode::Scratch)
    })?
    .checkpoint;

    let target = synth_dataset(&SyntheticDatasetSpec {
        recipes: vec![8, 9],
        size: 16,
        ..SyntheticDatasetSpec::target(6, 1)
    })?;
    let target_tokens = TokenDataset::encode(&target, &source.model.codebook)?;
    let tuned = transfer(
        &target_tokens,
        ModelInit::Source(&source),
        PromptSettings::factorized(ModelKind::Nar, 4, 32),
        &TrainConfig {
            epochs: 150,
            learning_rate: 1e-2,
            instance_conditioning: true,
            ..TrainConfig::for_mode(TransferMode::Prompt)
        },
    )?
    .checkpoint
    .model;
    let space = tuned.condition_space().expect("prompt-tuned model");
    println!("{} classes and {} instance conditions", space.classes, space.instances);

    let weights: Vec<String> = (1..=STEPS)
        .map(|t| marquee_weight(t, T_CUTOFF).map(|w| format!("{w:.2}")))
        .collect::<promptgen::Result<_>>()?;
    println!("interpolation weight per step: {}", weights.join(" "));

    let (from, to) = (space.id(Condition::Instance(0))?, space.id(Condition::Instance(1))?);
    let generator = tuned.prompt_generator().expect("prompt-tuned model");
    let marquee = MarqueeSpec {
        cond_1: from,
        cond_2: to,
        t_cutoff: T_CUTOFF,
    }
    .prompts(generator, &tuned.params, STEPS, InterpolationLevel::Representation)?;
    let decode = DecodeConfig {
        steps: STEPS,
        ..DecodeConfig::default()
    };
    let mut sources = vec![PromptSource::Constant(tuned.prompt_for(from)?); SAMPLES];
    sources.extend(vec![marquee; SAMPLES]);
    sources.extend(vec![PromptSource::Constant(tuned.prompt_for(to)?); SAMPLES]);
    let images = generate_images(&tuned, &sources, &decode, 3)?;

    let mut rows = vec![target.images[0].clone()];
    rows.extend(images[..SAMPLES].iter().cloned());
    rows.push(Image::filled(16, 16, [0.0; 3]));
    rows.extend(images[SAMPLES..2 * SAMPLES].iter().cloned());
    rows.push(target.images[1].clone());
    rows.extend(images[2 * SAMPLES..].iter().cloned());
    let path = out.join("marquee.ppm");
    write_image(&path, &Image::tile(&rows, SAMPLES + 1)?)?;
    println!("wrote {} (rows: instance 0, marquee 0 -> 1, instance 1; first column is the training image)", path.display());
    Ok(())
}
