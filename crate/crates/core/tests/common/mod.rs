//! Builders shared by the integration tests and the acceptance suite.

#![allow(dead_code)]

use promptgen::autodiff::{ParamSet, Tensor};
use promptgen::prompt::{ConditionSpace, PromptConfig, PromptGenerator, PromptKind};
use promptgen::transformer::{ModelKind, Transformer, TransformerConfig};
use promptgen::vq::Codebook;
use promptgen::{Conditioner, GenModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny_config(kind: ModelKind, grid: usize, codewords: usize, layers: usize, dim: usize) -> TransformerConfig {
    TransformerConfig {
        kind,
        layers,
        dim,
        heads: 2,
        mlp_ratio: 2,
        codebook_size: codewords,
        source_classes: 3,
        grid_h: grid,
        grid_w: grid,
        adapter_hidden: None,
    }
}

/// Random codebook of `k` distinct 2×2 codewords.
pub fn random_codebook(k: usize, rng: &mut ChaCha8Rng) -> Codebook {
    let words = (0..k)
        .map(|_| (0..12).map(|_| rng.random::<f32>()).collect())
        .collect();
    Codebook::from_codewords(2, 2, words).unwrap()
}

/// Transformer plus prompt generator with freshly initialized weights.
pub fn tiny_prompt_model(
    config: TransformerConfig,
    prompt_kind: PromptKind,
    seq_len: usize,
    space: ConditionSpace,
    seed: u64,
) -> GenModel {
    let mut r = rng(seed);
    let mut params = ParamSet::new();
    let transformer = Transformer::init(config.clone(), &mut params, &mut r).unwrap();
    let pc = PromptConfig {
        kind: prompt_kind,
        seq_len,
        conditions: space.total(),
        hidden: 4,
        token_dim: config.dim,
        factors: 2,
    };
    let generator = PromptGenerator::init(pc, &mut params, &mut r).unwrap();
    GenModel {
        params,
        transformer,
        conditioner: Conditioner::Prompt { generator, space },
        codebook: random_codebook(config.codebook_size, &mut r),
    }
}

/// Overwrites every weight except normalization parameters and the prompt
/// factor vector with normal(0, `std`) noise so that outputs depend strongly
/// on inputs. The factor vector keeps its initial ones: near zero it feeds an
/// almost constant vector into a LayerNorm, where the loss becomes too sharp
/// for a finite-difference oracle.
pub fn scramble(params: &mut ParamSet, std: f32, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = params
        .iter()
        .filter(|(_, p)| !p.name.contains("ln") && p.name != "prompt.factor")
        .map(|(id, p)| (id, p.value.shape().to_vec()))
        .collect();
    for (id, shape) in ids {
        *params.value_mut(id) = Tensor::randn(&shape, std, rng);
    }
}

/// Random token grid with ids below `k`.
pub fn random_tokens(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}
