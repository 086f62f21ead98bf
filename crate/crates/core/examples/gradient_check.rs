//! Checks reverse-mode gradients of a prompt-tuning loss against finite
//! differences, for every prompt-generator weight.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use promptgen::autodiff::{finite_diff_check, Graph, ParamSet, Tensor};
use promptgen::prompt::{PromptConfig, PromptGenerator, PromptKind};
use promptgen::train::nar_loss_with_masks;
use promptgen::{ModelKind, TokenGrid, Transformer, TransformerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> promptgen::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut config = TransformerConfig::toy(ModelKind::Nar, 0);
    config.codebook_size = 4;
    config.grid_h = 2;
    config.grid_w = 2;
    config.dim = 8;
    config.heads = 2;
    config.layers = 1;
    let mut params = ParamSet::new();
    let transformer = Transformer::init(config, &mut params, &mut rng)?;
    let prompt_config = PromptConfig {
        kind: PromptKind::Factorized,
        seq_len: 2,
        conditions: 3,
        hidden: 4,
        token_dim: 8,
        factors: 2,
    };
    let generator = PromptGenerator::init(prompt_config, &mut params, &mut rng)?;
    // Freshly initialized weights are tiny, so the loss barely depends on the
    // prompt. Larger random weights make the gradients worth checking.
    let ids: Vec<_> = params
        .iter()
        .filter(|(_, p)| !p.name.contains("ln") && p.name != "prompt.factor")
        .map(|(id, p)| (id, p.value.shape().to_vec()))
        .collect();
    for (id, shape) in ids {
        *params.value_mut(id) = Tensor::randn(&shape, 0.3, &mut rng);
    }
    let grid = TokenGrid::new(2, 2, (0..4).map(|_| rng.random_range(0..4)).collect())?;
    let masks = vec![vec![false, true, false, true]];

    let ids: Vec<_> = params.ids_with_prefix("prompt.").collect();
    let point: Vec<f32> = ids.iter().flat_map(|&id| params.value(id).data().to_vec()).collect();
    println!("checking {} prompt weights", point.len());

    let mut work = params.clone();
    let loss_and_grad = |x: &[f32]| -> promptgen::Result<(f64, Vec<f32>)> {
        let mut offset = 0;
        for &id in &ids {
            let v = work.value_mut(id).data_mut();
            let n = v.len();
            v.copy_from_slice(&x[offset..offset + n]);
            offset += n;
        }
        let mut g = Graph::new();
        let prefix = generator.forward(&mut g, &work, &[1])?;
        let loss = nar_loss_with_masks(&mut g, &transformer, &work, prefix, &[&grid], &masks)?;
        let value = g.value(loss).data()[0] as f64;
        let grads = g.backward(loss)?;
        let flat = ids
            .iter()
            .flat_map(|&id| match grads.param(id) {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; work.value(id).numel()],
            })
            .collect();
        Ok((value, flat))
    };
    let error = finite_diff_check(loss_and_grad, &point, 5e-3)?;
    println!("max relative error {error:.2e}");
    Ok(())
}
