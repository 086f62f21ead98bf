//! Compares prompt tuning, adapter tuning, fine-tuning and training from
//! scratch on the same small target set.
//!
//! ```text
//! cargo run --release --example transfer_modes
//! ```

use std::time::Instant;

use promptgen::io::synth::{synth_dataset, SyntheticDatasetSpec};
use promptgen::train::{pretrain, transfer, ModelInit, PromptSettings, TokenDataset, TrainConfig, TransferMode};
use promptgen::{fit_codebook, ModelKind, TransformerConfig};

fn main() -> promptgen::Result<()> {
    let source_data = synth_dataset(&SyntheticDatasetSpec {
        size: 16,
        ..SyntheticDatasetSpec::source(20, 0)
    })?;
    let book = fit_codebook(&source_data.images, 32, 4, 4, 10, 0)?;
    let mut config = TransformerConfig::toy(ModelKind::Nar, source_data.classes);
    config.dim = 32;
    config.layers = 2;
    config.grid_h = 4;
    config.grid_w = 4;
    config.codebook_size = book.len();
    let tokens = TokenDataset::encode(&source_data, &book)?;
    let source = pretrain(&tokens, config.clone(), book.clone(), &TrainConfig {
        epochs: 30,
        ..TrainConfig::for_mode(TransferMode::Scratch)
    })?
    .checkpoint;

    let target = synth_dataset(&SyntheticDatasetSpec {
        size: 16,
        ..SyntheticDatasetSpec::target(20, 1)
    })?;
    let target_tokens = TokenDataset::encode(&target, &book)?;
    let prompt = PromptSettings::factorized(ModelKind::Nar, 4, 32);

    println!("{:<9} {:>10} {:>10} {:>11} {:>7}", "mode", "trainable", "frozen", "final loss", "time");
    for mode in [TransferMode::Prompt, TransferMode::Adapter, TransferMode::Finetune, TransferMode::Scratch] {
        let start = Instant::now();
        let init = match mode {
            TransferMode::Scratch => {
                let mut fresh = config.clone();
                fresh.source_classes = 0;
                ModelInit::Scratch {
                    config: fresh,
                    codebook: book.clone(),
                }
            }
            _ => ModelInit::Source(&source),
        };
        let run = transfer(&target_tokens, init, prompt, &TrainConfig {
            epochs: 20,
            adapter_hidden: 16,
            ..TrainConfig::for_mode(mode)
        })?;
        let params = &run.checkpoint.model.params;
        let loss = run.log.last().map_or(f64::NAN, |r| r.loss);
        println!(
            "{:<9} {:>10} {:>10} {:>11.3} {:>6.1}s",
            mode.to_string(),
            params.trainable_count(),
            params.frozen_count(),
            loss,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
