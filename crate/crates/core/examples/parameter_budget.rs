//! Parameter budgets of the two prompt generators, and what each transfer
//! mode trains on a toy transformer.
//!
//! ```text
//! cargo run --release --example parameter_budget
//! ```

use promptgen::autodiff::ParamSet;
use promptgen::train::{param_partition, TransferMode};
use promptgen::{ModelKind, PromptConfig, PromptGenerator, PromptKind, Transformer, TransformerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn prompt(kind: PromptKind, c: usize, s: usize, d: usize, f: usize) -> PromptConfig {
    PromptConfig {
        kind,
        seq_len: s,
        conditions: c,
        hidden: 768,
        token_dim: d,
        factors: f,
    }
}

fn millions(n: u64) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

fn main() -> promptgen::Result<()> {
    println!("prompt generators at P = 768");
    println!("{:<36} {:>10}", "configuration", "weights");
    let rows = [
        ("baseline    C=100 S=128 D=768", prompt(PromptKind::Baseline, 100, 128, 768, 1)),
        ("factorized  C=100 S=128 D=768 F=1", prompt(PromptKind::Factorized, 100, 128, 768, 1)),
        ("factorized  C=100 S=1   D=768 F=1", prompt(PromptKind::Factorized, 100, 1, 768, 1)),
        ("factorized  C=100 S=16  D=768 F=1", prompt(PromptKind::Factorized, 100, 16, 768, 1)),
        ("factorized  C=100 S=256 D=1024 F=1", prompt(PromptKind::Factorized, 100, 256, 1024, 1)),
        ("factorized  C=100 S=256 D=1024 F=16", prompt(PromptKind::Factorized, 100, 256, 1024, 16)),
    ];
    for (name, config) in &rows {
        let n = config.count_params();
        println!("{name:<36} {n:>10}  {}", millions(n));
    }

    println!();
    println!("trainable weights per transfer mode");
    println!("(toy NAR transformer, adapter width 64, 16-token prompt for 4 classes)");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let config = TransformerConfig::toy(ModelKind::Nar, 8);
    let mut params = ParamSet::new();
    let mut transformer = Transformer::init(config.clone(), &mut params, &mut rng)?;
    transformer.attach_adapters(&mut params, 64, &mut rng)?;
    let toy_prompt = PromptConfig {
        hidden: 64,
        ..prompt(PromptKind::Factorized, 4, 16, config.dim, 1)
    };
    PromptGenerator::init(toy_prompt, &mut params, &mut rng)?;
    for mode in [TransferMode::Prompt, TransferMode::Adapter, TransferMode::Finetune] {
        let (trainable, frozen) = param_partition(&mut params, mode);
        let count = |ids: &[promptgen::autodiff::ParamId]| -> usize { ids.iter().map(|&id| params.value(id).numel()).sum() };
        println!("{:<10} trainable {:>9}  frozen {:>9}", mode.to_string(), count(&trainable), count(&frozen));
    }
    println!("transformer weights: {}", config.param_count());
    println!("adapter weights:     {}", config.adapter_param_count(64));
    println!("prompt weights:      {}", params.count_with_prefix("prompt."));
    Ok(())
}
