//! Conditional prompt-token generators.
//!
//! Both generators map a condition id (a class, or an instance indexed after
//! the classes) to `S` continuous tokens of width `D`:
//!
//! * baseline: a `C × S × P` table followed by a dense `P → D` layer;
//! * factorized: condition and position embeddings of shape `P × F` are
//!   summed, weighted by a learned factor vector, reduced over `F`,
//!   layer-normalized over `P` and projected by a dense `P → D` layer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::transformer::INIT_STD;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptKind {
    Baseline,
    Factorized,
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKind::Baseline => "baseline",
            PromptKind::Factorized => "factorized",
        })
    }
}

impl FromStr for PromptKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(PromptKind::Baseline),
            "factorized" => Ok(PromptKind::Factorized),
            _ => Err(Error::invalid(format!("unknown prompt kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptConfig {
    pub kind: PromptKind,
    /// Prompt length `S`.
    pub seq_len: usize,
    /// Number of condition ids `C` (classes plus instances).
    pub conditions: usize,
    /// Hidden width `P`.
    pub hidden: usize,
    /// Token width `D`; must equal the transformer width.
    pub token_dim: usize,
    /// Number of factors `F` (factorized only).
    pub factors: usize,
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.conditions == 0 || self.hidden == 0 || self.token_dim == 0 {
            return Err(Error::invalid("S, C, P and D must all be at least 1"));
        }
        if self.kind == PromptKind::Factorized && self.factors == 0 {
            return Err(Error::invalid("factorized generator needs F >= 1"));
        }
        Ok(())
    }

    /// Weight-matrix parameter count: `P·(C·S + D)` for the baseline and
    /// `P·(F·(C + S) + D)` for the factorized generator. Dense biases and
    /// layer-norm affine terms are not included.
    pub fn count_params(&self) -> u64 {
        let (p, c, s, d, f) = (
            self.hidden as u64,
            self.conditions as u64,
            self.seq_len as u64,
            self.token_dim as u64,
            self.factors as u64,
        );
        match self.kind {
            PromptKind::Baseline => p * (c * s + d),
            PromptKind::Factorized => p * (f * (c + s) + d),
        }
    }

    /// Every registered scalar, including biases and layer-norm affine terms.
    pub fn count_all_params(&self) -> u64 {
        let extra = match self.kind {
            PromptKind::Baseline => self.token_dim,
            PromptKind::Factorized => self.token_dim + 2 * self.hidden + self.factors,
        };
        self.count_params() + extra as u64
    }

    /// Width of one condition representation (`P·F`, or `S·P` for the baseline).
    pub fn representation_dim(&self) -> usize {
        match self.kind {
            PromptKind::Baseline => self.seq_len * self.hidden,
            PromptKind::Factorized => self.hidden * self.factors,
        }
    }
}

/// Splits condition ids into classes `[0, C)` and instances `[C, C + N)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConditionSpace {
    pub classes: usize,
    pub instances: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Condition {
    Class(usize),
    Instance(usize),
}

impl ConditionSpace {
    pub fn total(&self) -> usize {
        self.classes + self.instances
    }

    pub fn id(&self, cond: Condition) -> Result<usize> {
        match cond {
            Condition::Class(c) if c < self.classes => Ok(c),
            Condition::Instance(i) if i < self.instances => Ok(self.classes + i),
            _ => Err(Error::OutOfRange(format!("{cond:?} in {self:?}"))),
        }
    }

    pub fn condition(&self, id: usize) -> Result<Condition> {
        if id < self.classes {
            Ok(Condition::Class(id))
        } else if id < self.total() {
            Ok(Condition::Instance(id - self.classes))
        } else {
            Err(Error::OutOfRange(format!("condition id {id} in {self:?}")))
        }
    }
}

impl FromStr for Condition {
    type Err = Error;
    /// Parses `class:N` or `instance:N`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, n) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("condition `{s}` must be class:N or instance:N")))?;
        let n: usize = n
            .parse()
            .map_err(|_| Error::invalid(format!("bad condition index in `{s}`")))?;
        match kind {
            "class" => Ok(Condition::Class(n)),
            "instance" => Ok(Condition::Instance(n)),
            _ => Err(Error::invalid(format!("condition `{s}` must be class:N or instance:N"))),
        }
    }
}

/// Where marquee interpolation happens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InterpolationLevel {
    /// Blend condition representations, then run the rest of the generator.
    #[default]
    Representation,
    /// Blend the final prompt tokens.
    Token,
}

#[derive(Clone, Debug)]
enum Weights {
    Baseline {
        table: ParamId,
        out_w: ParamId,
        out_b: ParamId,
    },
    Factorized {
        class: ParamId,
        position: ParamId,
        factor: ParamId,
        ln_gamma: ParamId,
        ln_beta: ParamId,
        out_w: ParamId,
        out_b: ParamId,
    },
}

/// Parameter handles under the `prompt.` prefix of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct PromptGenerator {
    config: PromptConfig,
    weights: Weights,
}

impl PromptGenerator {
    /// Tables start at normal(0, 0.02), the factor vector at ones, the
    /// output bias at zero.
    pub fn init<R: Rng>(config: PromptConfig, params: &mut ParamSet, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (p, d) = (config.hidden, config.token_dim);
        let weights = match config.kind {
            PromptKind::Baseline => Weights::Baseline {
                table: params.insert(
                    "prompt.table",
                    Tensor::randn(&[config.conditions, config.seq_len * p], INIT_STD, rng),
                    true,
                )?,
                out_w: params.insert("prompt.out.w", Tensor::randn(&[p, d], INIT_STD, rng), true)?,
                out_b: params.insert("prompt.out.b", Tensor::zeros(&[d]), true)?,
            },
            PromptKind::Factorized => {
                let pf = p * config.factors;
                Weights::Factorized {
                    class: params.insert("prompt.class", Tensor::randn(&[config.conditions, pf], INIT_STD, rng), true)?,
                    position: params.insert(
                        "prompt.position",
                        Tensor::randn(&[config.seq_len, pf], INIT_STD, rng),
                        true,
                    )?,
                    factor: params.insert("prompt.factor", Tensor::full(&[config.factors, 1], 1.0), true)?,
                    ln_gamma: params.insert("prompt.ln.gamma", Tensor::full(&[p], 1.0), true)?,
                    ln_beta: params.insert("prompt.ln.beta", Tensor::zeros(&[p]), true)?,
                    out_w: params.insert("prompt.out.w", Tensor::randn(&[p, d], INIT_STD, rng), true)?,
                    out_b: params.insert("prompt.out.b", Tensor::zeros(&[d]), true)?,
                }
            }
        };
        Ok(Self { config, weights })
    }

    pub fn from_params(config: PromptConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        let (p, d, s, c) = (config.hidden, config.token_dim, config.seq_len, config.conditions);
        let look = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = params.require(name)?;
            if params.value(id).shape() != shape {
                return Err(Error::shape(
                    "prompt",
                    format!("{name}: expected {shape:?}, found {:?}", params.value(id).shape()),
                ));
            }
            Ok(id)
        };
        let weights = match config.kind {
            PromptKind::Baseline => Weights::Baseline {
                table: look("prompt.table", &[c, s * p])?,
                out_w: look("prompt.out.w", &[p, d])?,
                out_b: look("prompt.out.b", &[d])?,
            },
            PromptKind::Factorized => {
                let pf = p * config.factors;
                Weights::Factorized {
                    class: look("prompt.class", &[c, pf])?,
                    position: look("prompt.position", &[s, pf])?,
                    factor: look("prompt.factor", &[config.factors, 1])?,
                    ln_gamma: look("prompt.ln.gamma", &[p])?,
                    ln_beta: look("prompt.ln.beta", &[p])?,
                    out_w: look("prompt.out.w", &[p, d])?,
                    out_b: look("prompt.out.b", &[d])?,
                }
            }
        };
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &PromptConfig {
        &self.config
    }

    fn check(&self, cond: usize) -> Result<()> {
        if cond >= self.config.conditions {
            return Err(Error::OutOfRange(format!(
                "condition {cond} with {} conditions",
                self.config.conditions
            )));
        }
        Ok(())
    }

    /// Representation rows for `conds`, shape `[B, P·F]` (or `[B, S·P]`).
    pub fn representations(&self, g: &mut Graph, params: &ParamSet, conds: &[usize]) -> Result<NodeId> {
        for &c in conds {
            self.check(c)?;
        }
        let table = match self.weights {
            Weights::Baseline { table, .. } => table,
            Weights::Factorized { class, .. } => class,
        };
        let t = g.param(params, table)?;
        g.gather(t, conds)
    }

    /// Runs everything after the representation lookup. `reps` is `[B, R]`;
    /// the result is `[B, S, D]`.
    pub fn from_representations(&self, g: &mut Graph, params: &ParamSet, reps: NodeId) -> Result<NodeId> {
        let cfg = &self.config;
        let (s, p, d, f) = (cfg.seq_len, cfg.hidden, cfg.token_dim, cfg.factors);
        let batch = g.shape(reps)[0];
        match self.weights {
            Weights::Baseline { out_w, out_b, .. } => {
                let x = g.reshape(reps, &[batch * s, p])?;
                let w = g.param(params, out_w)?;
                let b = g.param(params, out_b)?;
                let y = g.matmul(x, w)?;
                let y = g.add(y, b)?;
                g.reshape(y, &[batch, s, d])
            }
            Weights::Factorized {
                position,
                factor,
                ln_gamma,
                ln_beta,
                out_w,
                out_b,
                ..
            } => {
                // repeat each condition row over the S positions: [B, S, P·F]
                let cls = g.reshape(reps, &[batch, 1, p * f])?;
                let cls = if s == 1 { cls } else { g.concat(&vec![cls; s], 1)? };
                let pos = g.param(params, position)?;
                let summed = g.add(cls, pos)?;
                // (fac ⊙ x).sum(-1) as a product with the [F, 1] factor column
                let summed = g.reshape(summed, &[batch * s * p, f])?;
                let fac = g.param(params, factor)?;
                let embed = g.matmul(summed, fac)?;
                let embed = g.reshape(embed, &[batch * s, p])?;
                let gamma = g.param(params, ln_gamma)?;
                let beta = g.param(params, ln_beta)?;
                let normed = g.layer_norm(embed, gamma, beta)?;
                let w = g.param(params, out_w)?;
                let b = g.param(params, out_b)?;
                let y = g.matmul(normed, w)?;
                let y = g.add(y, b)?;
                g.reshape(y, &[batch, s, d])
            }
        }
    }

    /// Prompts for a batch of condition ids, shape `[B, S, D]`.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, conds: &[usize]) -> Result<NodeId> {
        let reps = self.representations(g, params, conds)?;
        self.from_representations(g, params, reps)
    }

    /// The `S × D` prompt for one condition.
    pub fn generate(&self, params: &ParamSet, cond: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, params, &[cond])?;
        g.value(out)
            .clone()
            .reshape(&[self.config.seq_len, self.config.token_dim])
    }

    /// Condition representation used for analysis and interpolation.
    pub fn representation(&self, params: &ParamSet, cond: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let r = self.representations(&mut g, params, &[cond])?;
        g.value(r).clone().reshape(&[self.config.representation_dim()])
    }

    /// Prompt for decoding step `t` when steering from `cond_1` towards
    /// `cond_2`: the two representations are blended with weight
    /// [`marquee_weight`] and the rest of the generator runs on the blend.
    pub fn marquee_prompt(
        &self,
        params: &ParamSet,
        cond_1: usize,
        cond_2: usize,
        t: usize,
        t_cutoff: usize,
        level: InterpolationLevel,
    ) -> Result<Tensor> {
        let w = marquee_weight(t, t_cutoff)?;
        self.check(cond_1)?;
        self.check(cond_2)?;
        if w == 0.0 || cond_1 == cond_2 {
            return self.generate(params, cond_1);
        }
        if w == 1.0 {
            return self.generate(params, cond_2);
        }
        match level {
            InterpolationLevel::Representation => {
                let r1 = self.representation(params, cond_1)?;
                let r2 = self.representation(params, cond_2)?;
                let blend = lerp(&r1, &r2, w);
                let mut g = Graph::new();
                let reps = g.constant(blend.reshape(&[1, self.config.representation_dim()])?)?;
                let out = self.from_representations(&mut g, params, reps)?;
                g.value(out)
                    .clone()
                    .reshape(&[self.config.seq_len, self.config.token_dim])
            }
            InterpolationLevel::Token => {
                let p1 = self.generate(params, cond_1)?;
                let p2 = self.generate(params, cond_2)?;
                Ok(lerp(&p1, &p2, w))
            }
        }
    }
}

fn lerp(a: &Tensor, b: &Tensor, w: f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ((1.0 - w) * x as f64 + w * y as f64) as f32)
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// `w_t = min(((t - 1) / (T_cutoff - 1))², 1)` for step `t ≥ 1`.
pub fn marquee_weight(t: usize, t_cutoff: usize) -> Result<f64> {
    if t_cutoff < 2 {
        return Err(Error::invalid(format!("T_cutoff must be at least 2, got {t_cutoff}")));
    }
    if t == 0 {
        return Err(Error::invalid("decoding steps start at 1"));
    }
    let r = (t - 1) as f64 / (t_cutoff - 1) as f64;
    Ok((r * r).min(1.0))
}
