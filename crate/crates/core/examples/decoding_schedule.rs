//! Scheduled parallel decoding: how many tokens each step finalizes, the
//! training-time mask fraction, and which step fixed each grid position.
//!
//! ```text
//! cargo run --release --example decoding_schedule
//! ```

use promptgen::autodiff::{ParamSet, Tensor};
use promptgen::decode::{decode_nar, make_schedule, PromptSource, Sampling, ScheduleShape};
use promptgen::train::sample_mask;
use promptgen::{ModelKind, Transformer, TransformerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> promptgen::Result<()> {
    for shape in [ScheduleShape::Cosine, ScheduleShape::Uniform] {
        for steps in [1, 4, 8] {
            let schedule = make_schedule(steps, 8, 8, shape)?;
            println!("{shape:?} over {steps} steps on 8x8: {:?}", schedule.counts());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let draws = 20_000;
    let masked: usize = (0..draws).map(|_| sample_mask(8, 8, &mut rng).len()).sum();
    println!(
        "mean training mask fraction {:.4} (2/pi = {:.4})",
        masked as f64 / (draws * 64) as f64,
        2.0 / std::f64::consts::PI
    );

    let mut config = TransformerConfig::toy(ModelKind::Nar, 0);
    config.grid_h = 6;
    config.grid_w = 6;
    config.codebook_size = 16;
    let mut params = ParamSet::new();
    let model = Transformer::init(config.clone(), &mut params, &mut rng)?;
    let prompt = PromptSource::Constant(Tensor::zeros(&[1, config.dim]));
    let schedule = make_schedule(6, 6, 6, ScheduleShape::Cosine)?;
    let trace = decode_nar(&model, &params, &prompt, &schedule, &mut rng, Sampling::default())?;
    println!("step at which each position was finalized (untrained model):");
    for row in trace.finalize_step.chunks(6) {
        let line: Vec<String> = row.iter().map(|s| s.to_string()).collect();
        println!("  {}", line.join(" "));
    }
    println!("decoded tokens:");
    for row in trace.grid.tokens().chunks(6) {
        let line: Vec<String> = row.iter().map(|t| format!("{t:>2}")).collect();
        println!("  {}", line.join(" "));
    }
    Ok(())
}
