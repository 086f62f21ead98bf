//! Teacher-forced AR loss and masked-token NAR loss.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamSet};
use crate::error::{Error, Result};
use crate::prompt::ConditionSpace;
use crate::transformer::{ModelKind, Transformer};
use crate::vq::TokenGrid;

fn check_grids(model: &Transformer, grids: &[&TokenGrid]) -> Result<()> {
    let cfg = model.config();
    if grids.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for g in grids {
        if g.height() != cfg.grid_h || g.width() != cfg.grid_w {
            return Err(Error::shape(
                "loss",
                format!("{}x{} grid for a {}x{} model", g.height(), g.width(), cfg.grid_h, cfg.grid_w),
            ));
        }
        if let Some(&t) = g.tokens().iter().find(|&&t| t >= cfg.codebook_size) {
            return Err(Error::OutOfRange(format!("token {t} with {} codewords", cfg.codebook_size)));
        }
    }
    Ok(())
}

/// Mean over batch and positions of `−log P(z_i | z_<i, prefix)`.
pub fn ar_loss(
    g: &mut Graph,
    model: &Transformer,
    params: &ParamSet,
    prefix: NodeId,
    grids: &[&TokenGrid],
) -> Result<NodeId> {
    if model.kind() != ModelKind::Ar {
        return Err(Error::invalid("ar_loss needs an AR model"));
    }
    check_grids(model, grids)?;
    let n = model.config().seq_len();
    let inputs: Vec<Vec<usize>> = grids.iter().map(|g| g.tokens()[..n - 1].to_vec()).collect();
    let logits = model.forward(g, params, prefix, &inputs)?;
    let k = model.config().codebook_size;
    let flat = g.reshape(logits, &[grids.len() * n, k])?;
    let targets: Vec<Option<usize>> = grids.iter().flat_map(|g| g.tokens().iter().map(|&t| Some(t))).collect();
    g.cross_entropy(flat, &targets)
}

/// Cross-entropy averaged over masked positions only; `masks[b][i]` marks
/// position `i` of sample `b` as masked.
pub fn nar_loss_with_masks(
    g: &mut Graph,
    model: &Transformer,
    params: &ParamSet,
    prefix: NodeId,
    grids: &[&TokenGrid],
    masks: &[Vec<bool>],
) -> Result<NodeId> {
    if model.kind() != ModelKind::Nar {
        return Err(Error::invalid("nar_loss needs a NAR model"));
    }
    check_grids(model, grids)?;
    let cfg = model.config();
    let (n, k) = (cfg.seq_len(), cfg.codebook_size);
    if masks.len() != grids.len() || masks.iter().any(|m| m.len() != n) {
        return Err(Error::shape("nar_loss", "one mask of grid length per sample"));
    }
    if masks.iter().any(|m| !m.contains(&true)) {
        return Err(Error::invalid("every mask needs at least one position"));
    }
    let mask_id = cfg.mask_token().expect("NAR has a mask token");
    let mut inputs = Vec::with_capacity(grids.len());
    let mut targets = Vec::with_capacity(grids.len() * n);
    for (grid, mask) in grids.iter().zip(masks) {
        inputs.push(
            grid.tokens()
                .iter()
                .zip(mask)
                .map(|(&t, &m)| if m { mask_id } else { t })
                .collect::<Vec<_>>(),
        );
        targets.extend(grid.tokens().iter().zip(mask).map(|(&t, &m)| m.then_some(t)));
    }
    let logits = model.forward(g, params, prefix, &inputs)?;
    let flat = g.reshape(logits, &[grids.len() * n, k])?;
    g.cross_entropy(flat, &targets)
}

/// NAR loss with a fresh mask per sample from [`sample_mask`].
pub fn nar_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &Transformer,
    params: &ParamSet,
    prefix: NodeId,
    grids: &[&TokenGrid],
    rng: &mut R,
) -> Result<NodeId> {
    let cfg = model.config();
    let masks: Vec<Vec<bool>> = grids
        .iter()
        .map(|_| {
            let mut m = vec![false; cfg.seq_len()];
            for i in sample_mask(cfg.grid_h, cfg.grid_w, rng) {
                m[i] = true;
            }
            m
        })
        .collect();
    nar_loss_with_masks(g, model, params, prefix, grids, &masks)
}

/// `⌈cos(πr/2)·n⌉`, clamped to `[1, n]`.
pub fn mask_count(r: f64, n: usize) -> usize {
    ((FRAC_PI_2 * r).cos() * n as f64).ceil().clamp(1.0, n as f64) as usize
}

/// Draws `r ~ U(0, 1)` and masks [`mask_count`] positions chosen uniformly
/// without replacement. Returns the masked positions in increasing order.
pub fn sample_mask<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Vec<usize> {
    let n = h * w;
    let count = mask_count(rng.random::<f64>(), n);
    let mut picked = rand::seq::index::sample(rng, n, count).into_vec();
    picked.sort_unstable();
    picked
}

/// Picks the instance condition with probability `instance_prob`, otherwise
/// the class condition.
pub fn sample_condition<R: Rng + ?Sized>(
    class: usize,
    instance: Option<usize>,
    space: ConditionSpace,
    instance_prob: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&instance_prob) {
        return Err(Error::invalid(format!("instance probability {instance_prob} outside [0, 1]")));
    }
    if space.instances == 0 || instance_prob == 0.0 {
        return space.id(crate::prompt::Condition::Class(class));
    }
    let instance = instance.ok_or_else(|| Error::invalid("instance conditioning needs an instance id"))?;
    if rng.random::<f64>() < instance_prob {
        space.id(crate::prompt::Condition::Instance(instance))
    } else {
        space.id(crate::prompt::Condition::Class(class))
    }
}
