//! Token-grid generation: raster-order sampling for AR models and scheduled
//! parallel decoding for NAR models, optionally with a prompt that changes
//! from step to step.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::GenModel;
use crate::prompt::{InterpolationLevel, PromptGenerator};
use crate::transformer::{ModelKind, Transformer};
use crate::vq::TokenGrid;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScheduleShape {
    #[default]
    Cosine,
    Uniform,
}

impl std::str::FromStr for ScheduleShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(ScheduleShape::Cosine),
            "uniform" => Ok(ScheduleShape::Uniform),
            _ => Err(Error::invalid(format!("unknown schedule `{s}`"))),
        }
    }
}

/// Number of tokens finalized at each NAR decoding step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeSchedule {
    counts: Vec<usize>,
}

impl DecodeSchedule {
    /// Wraps explicit per-step counts; every count must be at least 1.
    pub fn from_counts(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() || counts.contains(&0) {
            return Err(Error::invalid("schedule needs at least one step and positive counts"));
        }
        Ok(Self { counts })
    }

    pub fn steps(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Splits `H·W` tokens over `steps` steps.
///
/// `Cosine` allots step `t` the drop of `H·W·cos(πt / 2T)` from the previous
/// step, rounded by largest remainder so the counts sum to `H·W`. `Uniform`
/// spreads tokens as evenly as possible. Steps that would round to zero are
/// raised to one at the expense of the largest step.
pub fn make_schedule(steps: usize, h: usize, w: usize, shape: ScheduleShape) -> Result<DecodeSchedule> {
    let n = h * w;
    if steps == 0 || steps > n {
        return Err(Error::OutOfRange(format!("{steps} steps for {n} tokens")));
    }
    let ideal: Vec<f64> = match shape {
        ScheduleShape::Uniform => vec![n as f64 / steps as f64; steps],
        ScheduleShape::Cosine => {
            let m = |t: usize| (FRAC_PI_2 * t as f64 / steps as f64).cos();
            (1..=steps)
                .map(|t| n as f64 * (m(t - 1) - if t == steps { 0.0 } else { m(t) }))
                .collect()
        }
    };
    let mut counts: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..steps).collect();
    // larger remainder first; equal remainders go to the later step
    order.sort_by(|&a, &b| {
        let (fa, fb) = (ideal[a] - ideal[a].floor(), ideal[b] - ideal[b].floor());
        fb.total_cmp(&fa).then(b.cmp(&a))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    while let Some(z) = counts.iter().position(|&c| c == 0) {
        let max = *counts.iter().max().expect("non-empty");
        let big = counts.iter().position(|&c| c == max).expect("max exists");
        counts[big] -= 1;
        counts[z] = 1;
    }
    DecodeSchedule::from_counts(counts)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sampling {
    /// 0 selects the most likely token.
    pub temperature: f32,
    /// Keep only the `k` largest logits before sampling.
    pub top_k: Option<usize>,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: None,
        }
    }
}

impl Sampling {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.top_k == Some(0) {
            return Err(Error::invalid("top_k must be positive"));
        }
        Ok(())
    }

    /// Draws one token from a logit row. Returns the token and its
    /// probability under the (temperature-scaled, truncated) distribution.
    pub fn sample<R: Rng + ?Sized>(&self, logits: &[f32], rng: &mut R) -> (usize, f64) {
        let mut keep = vec![true; logits.len()];
        if let Some(k) = self.top_k.filter(|&k| k < logits.len()) {
            let mut idx: Vec<usize> = (0..logits.len()).collect();
            idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
            keep.fill(false);
            for &i in &idx[..k] {
                keep[i] = true;
            }
        }
        let t = if self.temperature == 0.0 { 1.0 } else { self.temperature as f64 };
        let max = logits
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { ((v as f64 - max) / t).exp() } else { 0.0 })
            .collect();
        let total: f64 = weights.iter().sum();
        let token = if self.temperature == 0.0 {
            let mut best = 0;
            for (i, &w) in weights.iter().enumerate() {
                if w > weights[best] {
                    best = i;
                }
            }
            best
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = weights.iter().rposition(|&w| w > 0.0).expect("some weight");
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        (token, weights[token] / total)
    }
}

fn prefix_node(g: &mut Graph, prompts: &[&Tensor], dim: usize) -> Result<crate::autodiff::NodeId> {
    let s = prompts[0].shape().first().copied().unwrap_or(0);
    if prompts
        .iter()
        .any(|p| p.shape() != [s, dim] || s == 0)
    {
        return Err(Error::shape("decode", format!("prompts must all be [S, {dim}] with S >= 1")));
    }
    let data: Vec<f32> = prompts.iter().flat_map(|p| p.data().iter().copied()).collect();
    g.constant(Tensor::new(vec![prompts.len(), s, dim], data)?)
}

/// Samples one AR grid per prompt in raster order. Sample `b` draws only from
/// `rngs[b]`, so results do not depend on batch composition.
pub fn decode_ar_batch<R: Rng>(
    model: &Transformer,
    params: &ParamSet,
    prompts: &[&Tensor],
    rngs: &mut [R],
    sampling: Sampling,
) -> Result<Vec<TokenGrid>> {
    if model.kind() != ModelKind::Ar {
        return Err(Error::invalid("decode_ar needs an AR model"));
    }
    sampling.validate()?;
    if prompts.is_empty() || prompts.len() != rngs.len() {
        return Err(Error::invalid("need one rng per prompt and at least one prompt"));
    }
    let cfg = model.config();
    let (n, k) = (cfg.seq_len(), cfg.codebook_size);
    let mut seqs: Vec<Vec<usize>> = vec![Vec::with_capacity(n); prompts.len()];
    for i in 0..n {
        let mut g = Graph::new();
        let p = prefix_node(&mut g, prompts, cfg.dim)?;
        let out = model.forward(&mut g, params, p, &seqs)?;
        let logits = g.value(out).data();
        for (b, seq) in seqs.iter_mut().enumerate() {
            let row = &logits[(b * (i + 1) + i) * k..(b * (i + 1) + i + 1) * k];
            seq.push(sampling.sample(row, &mut rngs[b]).0);
        }
    }
    seqs.into_iter()
        .map(|s| TokenGrid::new(cfg.grid_h, cfg.grid_w, s))
        .collect()
}

pub fn decode_ar<R: Rng>(
    model: &Transformer,
    params: &ParamSet,
    prompt: &Tensor,
    rng: &mut R,
    sampling: Sampling,
) -> Result<TokenGrid> {
    let mut grids = decode_ar_batch(model, params, &[prompt], std::slice::from_mut(rng), sampling)?;
    Ok(grids.remove(0))
}

/// Prompt used at each NAR decoding step.
#[derive(Clone, Debug)]
pub enum PromptSource {
    Constant(Tensor),
    /// One prompt per step, `steps[t - 1]` for step `t`.
    PerStep(Vec<Tensor>),
}

impl PromptSource {
    pub fn at(&self, t: usize) -> Result<&Tensor> {
        match self {
            PromptSource::Constant(p) => Ok(p),
            PromptSource::PerStep(ps) => ps
                .get(t - 1)
                .ok_or_else(|| Error::OutOfRange(format!("no prompt for step {t} of {}", ps.len()))),
        }
    }
}

/// Steering from `cond_1` to `cond_2` over the first `t_cutoff` steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MarqueeSpec {
    pub cond_1: usize,
    pub cond_2: usize,
    pub t_cutoff: usize,
}

impl MarqueeSpec {
    /// Per-step prompts for a `steps`-step decode.
    pub fn prompts(
        &self,
        generator: &PromptGenerator,
        params: &ParamSet,
        steps: usize,
        level: InterpolationLevel,
    ) -> Result<PromptSource> {
        if self.t_cutoff < 2 || self.t_cutoff > steps {
            return Err(Error::invalid(format!(
                "T_cutoff {} must lie in [2, {steps}]",
                self.t_cutoff
            )));
        }
        let ps = (1..=steps)
            .map(|t| generator.marquee_prompt(params, self.cond_1, self.cond_2, t, self.t_cutoff, level))
            .collect::<Result<Vec<_>>>()?;
        Ok(PromptSource::PerStep(ps))
    }
}

/// A decoded NAR grid with its decoding history.
#[derive(Clone, Debug, PartialEq)]
pub struct NarTrace {
    pub grid: TokenGrid,
    /// Step (from 1) at which each position was finalized.
    pub finalize_step: Vec<usize>,
    /// Finalized tokens after each step; `None` while still masked.
    pub states: Vec<Vec<Option<usize>>>,
}

/// Scheduled parallel decoding. At step `t` every masked position gets a
/// fresh sample; the `n_t` most confident samples (ties to the lower raster
/// index) are kept and never revisited. Sample `b` draws only from `rngs[b]`.
pub fn decode_nar_batch<R: Rng>(
    model: &Transformer,
    params: &ParamSet,
    sources: &[&PromptSource],
    schedule: &DecodeSchedule,
    rngs: &mut [R],
    sampling: Sampling,
) -> Result<Vec<NarTrace>> {
    if model.kind() != ModelKind::Nar {
        return Err(Error::invalid("decode_nar needs a NAR model"));
    }
    sampling.validate()?;
    let cfg = model.config();
    let (n, k) = (cfg.seq_len(), cfg.codebook_size);
    if schedule.total() != n {
        return Err(Error::invalid(format!(
            "schedule finalizes {} tokens, grid has {n}",
            schedule.total()
        )));
    }
    if sources.is_empty() || sources.len() != rngs.len() {
        return Err(Error::invalid("need one rng per prompt source and at least one source"));
    }
    let mask = cfg.mask_token().expect("NAR has a mask token");
    let batch = sources.len();
    let mut state: Vec<Vec<Option<usize>>> = vec![vec![None; n]; batch];
    let mut steps_of: Vec<Vec<usize>> = vec![vec![0; n]; batch];
    let mut history: Vec<Vec<Vec<Option<usize>>>> = vec![Vec::new(); batch];
    for (ti, &count) in schedule.counts().iter().enumerate() {
        let t = ti + 1;
        let prompts = sources.iter().map(|s| s.at(t)).collect::<Result<Vec<_>>>()?;
        let inputs: Vec<Vec<usize>> = state
            .iter()
            .map(|s| s.iter().map(|v| v.unwrap_or(mask)).collect())
            .collect();
        let mut g = Graph::new();
        let p = prefix_node(&mut g, &prompts, cfg.dim)?;
        let out = model.forward(&mut g, params, p, &inputs)?;
        let logits = g.value(out).data();
        for b in 0..batch {
            let mut cands: Vec<(usize, usize, f64)> = Vec::new();
            for pos in (0..n).filter(|&pos| state[b][pos].is_none()) {
                let row = &logits[(b * n + pos) * k..(b * n + pos + 1) * k];
                let (tok, conf) = sampling.sample(row, &mut rngs[b]);
                cands.push((pos, tok, conf));
            }
            cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
            for &(pos, tok, _) in cands.iter().take(count) {
                state[b][pos] = Some(tok);
                steps_of[b][pos] = t;
            }
            history[b].push(state[b].clone());
        }
    }
    (0..batch)
        .map(|b| {
            let tokens = state[b].iter().map(|v| v.expect("all finalized")).collect();
            Ok(NarTrace {
                grid: TokenGrid::new(cfg.grid_h, cfg.grid_w, tokens)?,
                finalize_step: std::mem::take(&mut steps_of[b]),
                states: std::mem::take(&mut history[b]),
            })
        })
        .collect()
}

pub fn decode_nar<R: Rng>(
    model: &Transformer,
    params: &ParamSet,
    source: &PromptSource,
    schedule: &DecodeSchedule,
    rng: &mut R,
    sampling: Sampling,
) -> Result<NarTrace> {
    let mut t = decode_nar_batch(model, params, &[source], schedule, std::slice::from_mut(rng), sampling)?;
    Ok(t.remove(0))
}

/// Decoding settings shared by AR and NAR generation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    /// NAR steps; ignored for AR models.
    pub steps: usize,
    pub schedule: ScheduleShape,
    pub sampling: Sampling,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            steps: 8,
            schedule: ScheduleShape::Cosine,
            sampling: Sampling::default(),
        }
    }
}

/// Generates one grid per prompt source with either model kind. AR models
/// use the step-1 prompt of each source.
pub fn generate_grids<R: Rng>(
    model: &GenModel,
    sources: &[PromptSource],
    config: &DecodeConfig,
    rngs: &mut [R],
) -> Result<Vec<TokenGrid>> {
    let refs: Vec<&PromptSource> = sources.iter().collect();
    match model.kind() {
        ModelKind::Ar => {
            let prompts = refs.iter().map(|s| s.at(1)).collect::<Result<Vec<_>>>()?;
            decode_ar_batch(&model.transformer, &model.params, &prompts, rngs, config.sampling)
        }
        ModelKind::Nar => {
            let cfg = model.transformer.config();
            let schedule = make_schedule(config.steps, cfg.grid_h, cfg.grid_w, config.schedule)?;
            Ok(decode_nar_batch(&model.transformer, &model.params, &refs, &schedule, rngs, config.sampling)?
                .into_iter()
                .map(|t| t.grid)
                .collect())
        }
    }
}

/// Generator for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64))
}

/// Decodes one image per prompt source in batches of [`DECODE_BATCH`].
/// Sample `i` uses [`sample_rng`]`(seed, i)`, so results do not depend on
/// batching.
pub fn generate_images(
    model: &GenModel,
    sources: &[PromptSource],
    config: &DecodeConfig,
    seed: u64,
) -> Result<Vec<Image>> {
    let mut out = Vec::with_capacity(sources.len());
    for (c, chunk) in sources.chunks(DECODE_BATCH).enumerate() {
        let mut rngs: Vec<ChaCha8Rng> = (0..chunk.len())
            .map(|i| sample_rng(seed, c * DECODE_BATCH + i))
            .collect();
        for grid in generate_grids(model, chunk, config, &mut rngs)? {
            out.push(model.codebook.decode(&grid)?);
        }
    }
    Ok(out)
}

pub const DECODE_BATCH: usize = 32;
