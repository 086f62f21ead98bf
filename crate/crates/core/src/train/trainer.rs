//! Training loops for source pretraining and for transfer to a target set.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::io::checkpoint::Checkpoint;
use crate::io::synth::Dataset;
use crate::model::{Conditioner, GenModel};
use crate::prompt::{ConditionSpace, PromptConfig, PromptGenerator, PromptKind};
use crate::transformer::{ModelKind, Transformer, TransformerConfig};
use crate::vq::{Codebook, TokenGrid};

use super::losses::{ar_loss, nar_loss, sample_condition};
use super::optim::{lr_factor, Adam};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferMode {
    /// Only the prompt generator learns.
    Prompt,
    /// Prompt generator plus per-block adapters.
    Adapter,
    /// Everything learns, starting from the source weights.
    Finetune,
    /// Everything learns, starting from a fresh transformer.
    Scratch,
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferMode::Prompt => "prompt",
            TransferMode::Adapter => "adapter",
            TransferMode::Finetune => "finetune",
            TransferMode::Scratch => "scratch",
        })
    }
}

impl FromStr for TransferMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prompt" => Ok(TransferMode::Prompt),
            "adapter" => Ok(TransferMode::Adapter),
            "finetune" => Ok(TransferMode::Finetune),
            "scratch" => Ok(TransferMode::Scratch),
            _ => Err(Error::invalid(format!("unknown transfer mode `{s}`"))),
        }
    }
}

/// Tags parameters trainable or frozen for `mode` and returns
/// `(trainable, frozen)`. Prompt parameters are trainable in every mode;
/// adapters in adapter, fine-tune and scratch modes; transformer weights in
/// fine-tune and scratch modes.
pub fn param_partition(params: &mut ParamSet, mode: TransferMode) -> (Vec<ParamId>, Vec<ParamId>) {
    let ids: Vec<(ParamId, String)> = params.iter().map(|(id, p)| (id, p.name.clone())).collect();
    let mut trainable = Vec::new();
    let mut frozen = Vec::new();
    for (id, name) in ids {
        let on = match mode {
            TransferMode::Prompt => name.starts_with("prompt."),
            TransferMode::Adapter => name.starts_with("prompt.") || name.starts_with("adapter."),
            TransferMode::Finetune | TransferMode::Scratch => true,
        };
        params.set_trainable(id, on);
        if on {
            trainable.push(id);
        } else {
            frozen.push(id);
        }
    }
    (trainable, frozen)
}

/// A dataset already quantized into token grids.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDataset {
    pub grids: Vec<TokenGrid>,
    pub labels: Vec<usize>,
    pub instance_ids: Vec<usize>,
    pub classes: usize,
}

impl TokenDataset {
    pub fn encode(data: &Dataset, codebook: &Codebook) -> Result<Self> {
        Ok(Self {
            grids: data
                .images
                .iter()
                .map(|im| codebook.encode(im))
                .collect::<Result<_>>()?,
            labels: data.labels.clone(),
            instance_ids: data.instance_ids.clone(),
            classes: data.classes,
        })
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TransferMode,
    /// Rate for parameters created for this run (prompt, adapters, or all
    /// parameters of a fresh model).
    pub learning_rate: f64,
    /// Rate for source weights when fine-tuning.
    pub pretrained_learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Adds one condition id per training image.
    pub instance_conditioning: bool,
    pub instance_sample_prob: f64,
    /// Adapter bottleneck width (adapter mode).
    pub adapter_hidden: usize,
}

impl TrainConfig {
    pub fn for_mode(mode: TransferMode) -> Self {
        let (weight_decay, warmup_epochs) = match mode {
            TransferMode::Prompt | TransferMode::Adapter => (0.0, 0),
            TransferMode::Finetune => (0.045, 0),
            TransferMode::Scratch => (0.045, 1),
        };
        Self {
            mode,
            learning_rate: 1e-3,
            pretrained_learning_rate: 1e-4,
            batch_size: 32,
            epochs: 30,
            warmup_epochs,
            weight_decay,
            seed: 0,
            instance_conditioning: false,
            instance_sample_prob: 0.5,
            adapter_hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !(self.pretrained_learning_rate >= 0.0) {
            return Err(Error::invalid("learning rates must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.instance_sample_prob) {
            return Err(Error::invalid("instance_sample_prob must lie in [0, 1]"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(())
    }
}

/// Shape of the prompt generator created for a transfer run. The condition
/// count and token width follow from the data and the transformer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PromptSettings {
    pub kind: PromptKind,
    pub seq_len: usize,
    pub hidden: usize,
    pub factors: usize,
}

impl PromptSettings {
    /// Factorized generator with `F = 1` for NAR and `F = 16` for AR models.
    pub fn factorized(kind: ModelKind, seq_len: usize, hidden: usize) -> Self {
        Self {
            kind: PromptKind::Factorized,
            seq_len,
            hidden,
            factors: match kind {
                ModelKind::Nar => 1,
                ModelKind::Ar => 16,
            },
        }
    }
}

/// Where a transfer run's transformer comes from.
#[derive(Clone, Debug)]
pub enum ModelInit<'a> {
    Source(&'a Checkpoint),
    Scratch {
        config: TransformerConfig,
        codebook: Codebook,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.epoch, self.loss, self.lr)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

impl TrainOutput {
    /// One `epoch,loss,lr` line per epoch.
    pub fn log_text(&self) -> String {
        self.log.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// Trains a class-token-conditioned model from scratch on `data`.
pub fn pretrain(
    data: &TokenDataset,
    transformer: TransformerConfig,
    codebook: Codebook,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    if transformer.source_classes != data.classes {
        return Err(Error::invalid(format!(
            "model reserves {} class tokens for {} classes",
            transformer.source_classes, data.classes
        )));
    }
    check_codebook(&transformer, &codebook)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamSet::new();
    let t = Transformer::init(transformer, &mut params, &mut rng)?;
    let model = GenModel {
        params,
        transformer: t,
        conditioner: Conditioner::ClassToken,
        codebook,
    };
    run(model, data, config, &HashSet::new(), rng)
}

fn check_codebook(config: &TransformerConfig, codebook: &Codebook) -> Result<()> {
    if codebook.len() != config.codebook_size {
        return Err(Error::invalid(format!(
            "codebook has {} codewords, model expects {}",
            codebook.len(),
            config.codebook_size
        )));
    }
    Ok(())
}

/// Builds the untrained transfer model: the source (or a fresh) transformer,
/// adapters in adapter mode, and a new prompt generator over the target
/// classes (plus one condition per image with instance conditioning).
pub fn init_transfer(
    data: &TokenDataset,
    init: ModelInit<'_>,
    prompt: PromptSettings,
    config: &TrainConfig,
) -> Result<(GenModel, HashSet<ParamId>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_9e4e);
    let (mut params, mut transformer, codebook, pretrained) = match (init, config.mode) {
        (ModelInit::Scratch { config: tc, codebook }, TransferMode::Scratch) => {
            check_codebook(&tc, &codebook)?;
            let mut params = ParamSet::new();
            let t = Transformer::init(tc, &mut params, &mut rng)?;
            (params, t, codebook, HashSet::new())
        }
        (ModelInit::Source(ck), mode) if mode != TransferMode::Scratch => {
            if !matches!(ck.model.conditioner, Conditioner::ClassToken) {
                return Err(Error::invalid("source checkpoint must be a class-token pretrained model"));
            }
            let m = ck.model.clone();
            let pretrained: HashSet<ParamId> = m.params.iter().map(|(id, _)| id).collect();
            (m.params, m.transformer, m.codebook, pretrained)
        }
        (ModelInit::Scratch { .. }, mode) => {
            return Err(Error::invalid(format!("mode {mode} needs a source checkpoint")))
        }
        (ModelInit::Source(_), _) => {
            return Err(Error::invalid("scratch mode starts from a fresh transformer, not a checkpoint"))
        }
    };
    if config.mode == TransferMode::Adapter {
        transformer.attach_adapters(&mut params, config.adapter_hidden, &mut rng)?;
    }
    let space = ConditionSpace {
        classes: data.classes,
        instances: if config.instance_conditioning { data.len() } else { 0 },
    };
    let pc = PromptConfig {
        kind: prompt.kind,
        seq_len: prompt.seq_len,
        conditions: space.total(),
        hidden: prompt.hidden,
        token_dim: transformer.config().dim,
        factors: prompt.factors,
    };
    let generator = PromptGenerator::init(pc, &mut params, &mut rng)?;
    param_partition(&mut params, config.mode);
    let model = GenModel {
        params,
        transformer,
        conditioner: Conditioner::Prompt { generator, space },
        codebook,
    };
    model.check_prompt_width()?;
    Ok((model, pretrained))
}

/// Adapts to `data` in `config.mode`.
pub fn transfer(
    data: &TokenDataset,
    init: ModelInit<'_>,
    prompt: PromptSettings,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    let (model, pretrained) = init_transfer(data, init, prompt, config)?;
    let rng = ChaCha8Rng::seed_from_u64(config.seed);
    run(model, data, config, &pretrained, rng)
}

fn snapshot(model: &GenModel, config: &TrainConfig) -> Checkpoint {
    let mut ck = Checkpoint::new(model.clone());
    ck.meta.insert("train.mode".into(), config.mode.to_string());
    ck.meta.insert("train.seed".into(), config.seed.to_string());
    ck.meta.insert("train.epochs".into(), config.epochs.to_string());
    ck.meta.insert("train.batch_size".into(), config.batch_size.to_string());
    ck.meta.insert("train.learning_rate".into(), config.learning_rate.to_string());
    ck
}

fn run(
    mut model: GenModel,
    data: &TokenDataset,
    config: &TrainConfig,
    pretrained: &HashSet<ParamId>,
    mut rng: ChaCha8Rng,
) -> Result<TrainOutput> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if data.labels.len() != data.len() || data.instance_ids.len() != data.len() {
        return Err(Error::invalid("labels and instance ids must match the grids"));
    }
    let frozen_before = model.params.frozen_hash();
    let batches = data.len().div_ceil(config.batch_size);
    let total = config.epochs * batches;
    let warmup = config.warmup_epochs * batches;
    let mut adam = Adam::new(config.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut factor = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            factor = lr_factor(step, total, warmup);
            let before = model.params.clone();
            let diverged = |model: &GenModel| Error::Diverged {
                epoch,
                step: b,
                last_finite: Box::new(snapshot(
                    &GenModel {
                        params: before.clone(),
                        ..model.clone()
                    },
                    config,
                )),
            };
            let outcome = train_step(&mut model, data, chunk, config, &mut rng);
            let (loss, grads) = match outcome {
                Ok(v) if v.0.is_finite() => v,
                Ok(_) | Err(Error::NonFinite { .. }) => return Err(diverged(&model)),
                Err(e) => return Err(e),
            };
            adam.step(&mut model.params, &grads, |id| {
                let base = if pretrained.contains(&id) {
                    config.pretrained_learning_rate
                } else {
                    config.learning_rate
                };
                base * factor
            });
            if !model.params.all_finite() {
                return Err(diverged(&model));
            }
            loss_sum += loss;
            step += 1;
        }
        if model.params.frozen_hash() != frozen_before {
            return Err(Error::invalid("frozen parameters changed during training"));
        }
        log.push(EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            lr: config.learning_rate * factor,
        });
    }
    Ok(TrainOutput {
        checkpoint: snapshot(&model, config),
        log,
    })
}

fn train_step(
    model: &mut GenModel,
    data: &TokenDataset,
    chunk: &[usize],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, crate::autodiff::Gradients)> {
    let conds = chunk
        .iter()
        .map(|&i| match model.condition_space() {
            Some(space) => sample_condition(
                data.labels[i],
                Some(data.instance_ids[i]),
                space,
                config.instance_sample_prob,
                rng,
            ),
            None => Ok(data.labels[i]),
        })
        .collect::<Result<Vec<_>>>()?;
    let grids: Vec<&TokenGrid> = chunk.iter().map(|&i| &data.grids[i]).collect();
    let mut g = Graph::new();
    let prefix = model.prefix(&mut g, &conds)?;
    let loss = match model.kind() {
        ModelKind::Ar => ar_loss(&mut g, &model.transformer, &model.params, prefix, &grids)?,
        ModelKind::Nar => nar_loss(&mut g, &model.transformer, &model.params, prefix, &grids, rng)?,
    };
    let value = g.value(loss).data()[0] as f64;
    let grads = g.backward(loss)?;
    Ok((value, grads))
}
