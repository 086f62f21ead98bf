//! A generator: frozen-or-trainable transformer weights, the conditioning
//! channel that produces its prefix, and the codebook that gives tokens
//! pixel meaning.

use crate::autodiff::{Graph, NodeId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::prompt::{ConditionSpace, PromptGenerator};
use crate::transformer::{ModelKind, Transformer};
use crate::vq::Codebook;

#[derive(Clone, Debug)]
pub enum Conditioner {
    /// One class-token embedding from the transformer's own vocabulary.
    ClassToken,
    /// A learned prompt generator over classes and instances.
    Prompt {
        generator: PromptGenerator,
        space: ConditionSpace,
    },
}

#[derive(Clone, Debug)]
pub struct GenModel {
    pub params: ParamSet,
    pub transformer: Transformer,
    pub conditioner: Conditioner,
    pub codebook: Codebook,
}

impl GenModel {
    pub fn kind(&self) -> ModelKind {
        self.transformer.kind()
    }

    /// Number of condition ids the conditioner accepts.
    pub fn conditions(&self) -> usize {
        match &self.conditioner {
            Conditioner::ClassToken => self.transformer.config().source_classes,
            Conditioner::Prompt { space, .. } => space.total(),
        }
    }

    pub fn prompt_generator(&self) -> Option<&PromptGenerator> {
        match &self.conditioner {
            Conditioner::Prompt { generator, .. } => Some(generator),
            Conditioner::ClassToken => None,
        }
    }

    pub fn condition_space(&self) -> Option<ConditionSpace> {
        match &self.conditioner {
            Conditioner::Prompt { space, .. } => Some(*space),
            Conditioner::ClassToken => None,
        }
    }

    /// `[B, S, D]` prefix for a batch of condition ids.
    pub fn prefix(&self, g: &mut Graph, conds: &[usize]) -> Result<NodeId> {
        match &self.conditioner {
            Conditioner::ClassToken => self.transformer.class_prefix(g, &self.params, conds),
            Conditioner::Prompt { generator, .. } => generator.forward(g, &self.params, conds),
        }
    }

    /// The `S × D` prefix for one condition id.
    pub fn prompt_for(&self, cond: usize) -> Result<Tensor> {
        match &self.conditioner {
            Conditioner::ClassToken => {
                let id = self.transformer.config().class_token(cond)?;
                self.transformer.embedding_rows(&self.params, &[id])
            }
            Conditioner::Prompt { generator, .. } => generator.generate(&self.params, cond),
        }
    }

    pub fn check_prompt_width(&self) -> Result<()> {
        if let Conditioner::Prompt { generator, .. } = &self.conditioner {
            if generator.config().token_dim != self.transformer.config().dim {
                return Err(Error::invalid(format!(
                    "prompt token width {} differs from transformer width {}",
                    generator.config().token_dim,
                    self.transformer.config().dim
                )));
            }
        }
        Ok(())
    }
}
