//! Command-line front end: `pretrain`, `transfer`, `generate`, `eval` and
//! `inspect`.
//!
//! Flags are `--key value`. A `--config FILE` of `key=value` lines supplies
//! the same keys; flags win. Exit codes: 0 success, 1 usage error, 2 runtime
//! failure.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use crate::decode::{generate_images, DecodeConfig, MarqueeSpec, PromptSource, Sampling, ScheduleShape};
use crate::error::Error;
use crate::image::Image;
use crate::io::checkpoint::Checkpoint;
use crate::io::config::{parse_config, parse_pairs};
use crate::io::ppm::{read_image_dir, write_image};
use crate::io::synth::{synth_dataset, Dataset, SyntheticDatasetSpec, SOURCE_RECIPES, TARGET_RECIPES};
use crate::metrics::{image_frechet, intra_cluster_diversity, representation_nmi};
use crate::model::{Conditioner, GenModel};
use crate::prompt::{Condition, InterpolationLevel, PromptConfig, PromptKind};
use crate::train::{
    pretrain, transfer, ModelInit, PromptSettings, TokenDataset, TrainConfig, TrainOutput,
    TransferMode,
};
use crate::transformer::{ModelKind, TransformerConfig};
use crate::vq::fit_codebook;

const USAGE: &str = "\
usage: promptgen <command> [--key value ...] [--config FILE]

commands:
  pretrain  --out CKPT [--kind nar|ar] [--data DIR | --classes N --images-per-class N]
  transfer  --mode prompt|adapter|finetune|scratch --source CKPT --out CKPT [--data DIR]
  generate  --checkpoint CKPT --out GRID.ppm [--cond class:N,... | --marquee cond1=..,cond2=..,tcutoff=T]
  eval      --checkpoint CKPT [--data DIR] [--report FILE.csv]
  inspect   --prompt-config P=..,D=..,C=..,S=..[,F=..][,kind=baseline] | --checkpoint CKPT
";

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parsed `--key value` options merged over an optional config file.
struct Opts {
    values: BTreeMap<String, String>,
}

impl Opts {
    fn parse(args: &[String], allowed: &[&str]) -> CliResult<Self> {
        let mut flags = BTreeMap::new();
        let mut it = args.iter();
        while let Some(a) = it.next() {
            let key = a
                .strip_prefix("--")
                .ok_or_else(|| usage(format!("unexpected argument `{a}`")))?;
            if key != "config" && !allowed.contains(&key) {
                return Err(usage(format!("unknown flag `--{key}`")));
            }
            let value = it.next().ok_or_else(|| usage(format!("flag `--{key}` needs a value")))?;
            if flags.insert(key.to_string(), value.clone()).is_some() {
                return Err(usage(format!("flag `--{key}` given twice")));
            }
        }
        let mut values = match flags.remove("config") {
            Some(path) => {
                let text = fs::read_to_string(&path)?;
                parse_config(&text, allowed).map_err(|e| usage(e.to_string()))?
            }
            None => BTreeMap::new(),
        };
        values.extend(flags);
        Ok(Self { values })
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> CliResult<&str> {
        self.str(key).ok_or_else(|| usage(format!("missing required `--{key}`")))
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        match self.str(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|e| usage(format!("bad value `{s}` for `--{key}`: {e}"))),
        }
    }

    fn opt<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        self.str(key)
            .map(|s| {
                s.parse()
                    .map_err(|e| usage(format!("bad value `{s}` for `--{key}`: {e}")))
            })
            .transpose()
    }
}

/// Runs one command and returns its exit code.
pub fn run(argv: &[String]) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run`] with explicit output streams.
pub fn run_with(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(cmd) = argv.first() else {
        let _ = write!(err, "{USAGE}");
        return 1;
    };
    let rest = &argv[1..];
    let result = match cmd.as_str() {
        "pretrain" => cmd_pretrain(rest, out),
        "transfer" => cmd_transfer(rest, out),
        "generate" => cmd_generate(rest, out),
        "eval" => cmd_eval(rest, out),
        "inspect" => cmd_inspect(rest, out),
        "help" | "--help" | "-h" => {
            let _ = write!(out, "{USAGE}");
            return 0;
        }
        other => Err(usage(format!("unknown command `{other}`"))),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n\n{USAGE}");
            1
        }
        Err(CliError::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

const DATA_KEYS: &[&str] = &["data", "classes", "images-per-class", "image-size", "jitter", "data-seed"];
const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch-size",
    "lr",
    "pretrained-lr",
    "weight-decay",
    "warmup-epochs",
    "seed",
    "log",
];
const MODEL_KEYS: &[&str] = &["kind", "layers", "dim", "heads", "mlp-ratio", "codebook", "patch", "codebook-iters"];
const PROMPT_KEYS: &[&str] = &[
    "prompt-kind",
    "prompt-len",
    "prompt-hidden",
    "factors",
    "instance",
    "instance-prob",
    "adapter-hidden",
];

fn allowed(groups: &[&[&'static str]], extra: &[&'static str]) -> Vec<&'static str> {
    groups.iter().flat_map(|g| g.iter().copied()).chain(extra.iter().copied()).collect()
}

/// Reads `--data DIR`, or renders the synthetic set for `recipes`.
fn load_data(o: &Opts, recipes: std::ops::Range<usize>) -> CliResult<Dataset> {
    if let Some(dir) = o.str("data") {
        let l = read_image_dir(dir)?;
        return Ok(Dataset::from_labeled(l.images, l.labels)?);
    }
    let classes: usize = o.get("classes", recipes.len())?;
    if classes == 0 || classes > recipes.len() {
        return Err(usage(format!("--classes must lie in 1..={}", recipes.len())));
    }
    let spec = SyntheticDatasetSpec {
        recipes: recipes.take(classes).collect(),
        images_per_class: o.get("images-per-class", 50)?,
        size: o.get("image-size", 32)?,
        jitter: o.get("jitter", 1.0)?,
        seed: o.get("data-seed", 0)?,
    };
    Ok(synth_dataset(&spec)?)
}

fn train_config(o: &Opts, mode: TransferMode) -> CliResult<TrainConfig> {
    let d = TrainConfig::for_mode(mode);
    Ok(TrainConfig {
        mode,
        learning_rate: o.get("lr", d.learning_rate)?,
        pretrained_learning_rate: o.get("pretrained-lr", d.pretrained_learning_rate)?,
        batch_size: o.get("batch-size", d.batch_size)?,
        epochs: o.get("epochs", d.epochs)?,
        warmup_epochs: o.get("warmup-epochs", d.warmup_epochs)?,
        weight_decay: o.get("weight-decay", d.weight_decay)?,
        seed: o.get("seed", d.seed)?,
        instance_conditioning: o.get("instance", d.instance_conditioning)?,
        instance_sample_prob: o.get("instance-prob", d.instance_sample_prob)?,
        adapter_hidden: o.get("adapter-hidden", d.adapter_hidden)?,
    })
}

fn write_log(o: &Opts, result: &TrainOutput, out: &mut dyn Write) -> CliResult<()> {
    match o.str("log") {
        Some(path) => fs::write(path, result.log_text())?,
        None => write!(out, "{}", result.log_text())?,
    }
    Ok(())
}

/// Fits a codebook on `data` and sizes a transformer for it.
fn fresh_model(o: &Opts, data: &Dataset, source_classes: usize) -> CliResult<(TransformerConfig, crate::vq::Codebook)> {
    let kind: ModelKind = o.get("kind", ModelKind::Nar)?;
    let patch: usize = o.get("patch", 4)?;
    let k: usize = o.get("codebook", 64)?;
    let book = fit_codebook(&data.images, k, patch, patch, o.get("codebook-iters", 10)?, o.get("seed", 0)?)?;
    let im = &data.images[0];
    let mut tc = TransformerConfig::toy(kind, source_classes);
    tc.layers = o.get("layers", tc.layers)?;
    tc.dim = o.get("dim", tc.dim)?;
    tc.heads = o.get("heads", tc.heads)?;
    tc.mlp_ratio = o.get("mlp-ratio", tc.mlp_ratio)?;
    tc.codebook_size = book.len();
    tc.grid_h = im.height() / patch;
    tc.grid_w = im.width() / patch;
    Ok((tc, book))
}

fn cmd_pretrain(args: &[String], out: &mut dyn Write) -> CliResult<()> {
    let o = Opts::parse(args, &allowed(&[DATA_KEYS, TRAIN_KEYS, MODEL_KEYS], &["out"]))?;
    let path = PathBuf::from(o.required("out")?);
    let data = load_data(&o, SOURCE_RECIPES)?;
    let (tc, book) = fresh_model(&o, &data, data.classes)?;
    let config = train_config(&o, TransferMode::Scratch)?;
    let tokens = TokenDataset::encode(&data, &book)?;
    let result = pretrain(&tokens, tc, book, &config)?;
    result.checkpoint.save(&path)?;
    write_log(&o, &result, out)
}

fn cmd_transfer(args: &[String], out: &mut dyn Write) -> CliResult<()> {
    let o = Opts::parse(
        args,
        &allowed(&[DATA_KEYS, TRAIN_KEYS, MODEL_KEYS, PROMPT_KEYS], &["mode", "source", "out"]),
    )?;
    let mode: TransferMode = o.required("mode")?.parse().map_err(|e: Error| usage(e.to_string()))?;
    let source = match (o.str("source"), mode) {
        (Some(p), _) => Some(Checkpoint::load(p)?),
        (None, TransferMode::Scratch) => None,
        (None, m) => return Err(usage(format!("--mode {m} needs --source CKPT"))),
    };
    let path = PathBuf::from(o.required("out")?);
    let data = load_data(&o, TARGET_RECIPES)?;
    let config = train_config(&o, mode)?;
    let init = match (&source, mode) {
        (Some(ck), TransferMode::Scratch) => {
            let mut tc = ck.model.transformer.config().clone();
            tc.source_classes = 0;
            tc.adapter_hidden = None;
            ModelInit::Scratch {
                config: tc,
                codebook: ck.model.codebook.clone(),
            }
        }
        (Some(ck), _) => ModelInit::Source(ck),
        (None, _) => {
            let (tc, codebook) = fresh_model(&o, &data, 0)?;
            ModelInit::Scratch { config: tc, codebook }
        }
    };
    let (codebook, kind) = match &init {
        ModelInit::Source(ck) => (&ck.model.codebook, ck.model.kind()),
        ModelInit::Scratch { config, codebook } => (codebook, config.kind),
    };
    let default_len = match mode {
        TransferMode::Prompt | TransferMode::Adapter => 16,
        TransferMode::Finetune | TransferMode::Scratch => 1,
    };
    let mut prompt = PromptSettings::factorized(kind, o.get("prompt-len", default_len)?, o.get("prompt-hidden", 64)?);
    prompt.kind = o.get("prompt-kind", PromptKind::Factorized)?;
    prompt.factors = o.get("factors", prompt.factors)?;
    let tokens = TokenDataset::encode(&data, codebook)?;
    let result = transfer(&tokens, init, prompt, &config)?;
    result.checkpoint.save(&path)?;
    write_log(&o, &result, out)
}

fn parse_condition(model: &GenModel, s: &str) -> CliResult<usize> {
    let cond: Condition = s.parse().map_err(|e: Error| usage(e.to_string()))?;
    match (&model.conditioner, cond) {
        (Conditioner::Prompt { space, .. }, c) => Ok(space.id(c)?),
        (Conditioner::ClassToken, Condition::Class(c)) if c < model.conditions() => Ok(c),
        (Conditioner::ClassToken, Condition::Class(c)) => {
            Err(Error::OutOfRange(format!("class {c} of {}", model.conditions())).into())
        }
        (Conditioner::ClassToken, Condition::Instance(_)) => {
            Err(usage("a class-token model has no instance conditions"))
        }
    }
}

fn decode_config(o: &Opts) -> CliResult<DecodeConfig> {
    Ok(DecodeConfig {
        steps: o.get("steps", 8)?,
        schedule: o.get("schedule", ScheduleShape::Cosine)?,
        sampling: Sampling {
            temperature: o.get("temperature", 1.0)?,
            top_k: o.opt("top-k")?,
        },
    })
}

fn cmd_generate(args: &[String], _out: &mut dyn Write) -> CliResult<()> {
    let o = Opts::parse(
        args,
        &[
            "checkpoint",
            "out",
            "index",
            "cond",
            "marquee",
            "samples",
            "steps",
            "schedule",
            "temperature",
            "top-k",
            "seed",
            "columns",
            "interpolation",
        ],
    )?;
    let ck = Checkpoint::load(o.required("checkpoint")?)?;
    let model = &ck.model;
    let out_path = PathBuf::from(o.required("out")?);
    let samples: usize = o.get("samples", 4)?;
    let decode = decode_config(&o)?;
    let seed: u64 = o.get("seed", 0)?;
    let mut sources = Vec::new();
    let mut labels = Vec::new();
    match (o.str("cond"), o.str("marquee")) {
        (Some(_), Some(_)) => return Err(usage("--cond and --marquee are exclusive")),
        (None, Some(spec)) => {
            let m = parse_pairs(spec, &["cond1", "cond2", "tcutoff"]).map_err(|e| usage(e.to_string()))?;
            let get = |k: &str| m.get(k).ok_or_else(|| usage(format!("--marquee needs {k}=")));
            let (c1, c2) = (get("cond1")?, get("cond2")?);
            let t_cutoff: usize = get("tcutoff")?
                .parse()
                .map_err(|_| usage("tcutoff must be an integer"))?;
            let generator = model
                .prompt_generator()
                .ok_or_else(|| usage("marquee decoding needs a prompt-tuned checkpoint"))?;
            if model.kind() != ModelKind::Nar {
                return Err(usage("marquee decoding needs a NAR model"));
            }
            let spec = MarqueeSpec {
                cond_1: parse_condition(model, c1)?,
                cond_2: parse_condition(model, c2)?,
                t_cutoff,
            };
            let level: InterpolationLevel = match o.str("interpolation").unwrap_or("representation") {
                "representation" => InterpolationLevel::Representation,
                "token" => InterpolationLevel::Token,
                other => return Err(usage(format!("unknown interpolation `{other}`"))),
            };
            let source = spec.prompts(generator, &model.params, decode.steps, level)?;
            for _ in 0..samples {
                sources.push(source.clone());
                labels.push(format!("marquee:{c1}->{c2}@{t_cutoff}"));
            }
        }
        (cond, None) => {
            let list: Vec<String> = match cond {
                Some(s) => s.split(',').map(str::to_string).collect(),
                None => (0..model.conditions())
                    .map(|c| match model.condition_space() {
                        Some(space) => match space.condition(c) {
                            Ok(Condition::Instance(i)) => format!("instance:{i}"),
                            _ => format!("class:{c}"),
                        },
                        None => format!("class:{c}"),
                    })
                    .filter(|s| s.starts_with("class:"))
                    .collect(),
            };
            for s in list {
                let id = parse_condition(model, &s)?;
                let prompt = model.prompt_for(id)?;
                for _ in 0..samples {
                    sources.push(PromptSource::Constant(prompt.clone()));
                    labels.push(s.clone());
                }
            }
        }
    }
    let images = generate_images(model, &sources, &decode, seed)?;
    let columns: usize = o.get("columns", samples.max(1))?;
    write_image(&out_path, &Image::tile(&images, columns)?)?;
    let index_path = o
        .str("index")
        .map(PathBuf::from)
        .unwrap_or_else(|| out_path.with_extension("txt"));
    let mut index = String::from("tile,row,column,condition\n");
    for (i, l) in labels.iter().enumerate() {
        index.push_str(&format!("{i},{},{},{l}\n", i / columns, i % columns));
    }
    fs::write(index_path, index)?;
    Ok(())
}

fn cmd_eval(args: &[String], out: &mut dyn Write) -> CliResult<()> {
    let o = Opts::parse(
        args,
        &allowed(
            &[DATA_KEYS],
            &["checkpoint", "samples", "steps", "schedule", "temperature", "top-k", "seed", "report"],
        ),
    )?;
    let ck = Checkpoint::load(o.required("checkpoint")?)?;
    let model = &ck.model;
    let recipes = match model.conditioner {
        Conditioner::ClassToken => SOURCE_RECIPES,
        Conditioner::Prompt { .. } => TARGET_RECIPES,
    };
    let data = load_data(&o, recipes)?;
    let classes = match model.condition_space() {
        Some(space) => space.classes,
        None => model.conditions(),
    };
    if data.classes > classes {
        return Err(Error::invalid(format!(
            "data has {} classes, model knows {classes}",
            data.classes
        ))
        .into());
    }
    let per_class: usize = o.get("samples", 25)?;
    let mut sources = Vec::new();
    for c in 0..data.classes {
        let p = model.prompt_for(c)?;
        sources.extend((0..per_class).map(|_| PromptSource::Constant(p.clone())));
    }
    let images = generate_images(model, &sources, &decode_config(&o)?, o.get("seed", 0)?)?;
    let mut rows: Vec<(String, String)> = Vec::new();
    rows.push(("frechet".into(), image_frechet(&images, &data.images)?.to_string()));
    let div = intra_cluster_diversity(&images, &data.images)?;
    rows.push(("diversity".into(), div.value.to_string()));
    rows.push(("diversity_clusters".into(), div.clusters.to_string()));
    rows.push(("diversity_singletons".into(), div.singletons.to_string()));
    if let (Some(generator), Some(space)) = (model.prompt_generator(), model.condition_space()) {
        if space.instances == data.len() && data.classes > 1 {
            let reps = (0..space.instances)
                .map(|i| {
                    generator
                        .representation(&model.params, space.classes + i)
                        .map(|t| t.data().iter().map(|&v| v as f64).collect())
                })
                .collect::<crate::Result<Vec<Vec<f64>>>>()?;
            rows.push(("nmi".into(), representation_nmi(&reps, &data.labels, 0)?.to_string()));
        }
    }
    for (k, v) in &rows {
        writeln!(out, "{k}={v}")?;
    }
    if let Some(path) = o.str("report") {
        let header: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
        let values: Vec<&str> = rows.iter().map(|r| r.1.as_str()).collect();
        fs::write(path, format!("{}\n{}\n", header.join(","), values.join(",")))?;
    }
    Ok(())
}

fn cmd_inspect(args: &[String], out: &mut dyn Write) -> CliResult<()> {
    let o = Opts::parse(args, &["prompt-config", "checkpoint"])?;
    match (o.str("prompt-config"), o.str("checkpoint")) {
        (Some(spec), None) => {
            let m = parse_pairs(spec, &["P", "D", "C", "S", "F", "kind"]).map_err(|e| usage(e.to_string()))?;
            let num = |k: &str, default: Option<usize>| -> CliResult<usize> {
                match m.get(k) {
                    Some(v) => v.parse().map_err(|_| usage(format!("{k} must be an integer"))),
                    None => default.ok_or_else(|| usage(format!("--prompt-config needs {k}="))),
                }
            };
            let kind: PromptKind = m
                .get("kind")
                .map_or(Ok(PromptKind::Factorized), |s| s.parse())
                .map_err(|e: Error| usage(e.to_string()))?;
            let config = PromptConfig {
                kind,
                seq_len: num("S", None)?,
                conditions: num("C", None)?,
                hidden: num("P", None)?,
                token_dim: num("D", None)?,
                factors: num("F", Some(1))?,
            };
            config.validate().map_err(|e| usage(e.to_string()))?;
            writeln!(out, "{}", config.count_params())?;
        }
        (None, Some(path)) => {
            let ck = Checkpoint::load(path)?;
            let p = &ck.model.params;
            writeln!(out, "kind={}", ck.model.kind())?;
            writeln!(out, "total={}", p.trainable_count() + p.frozen_count())?;
            writeln!(out, "trainable={}", p.trainable_count())?;
            writeln!(out, "frozen={}", p.frozen_count())?;
            writeln!(out, "transformer={}", p.count_with_prefix("transformer."))?;
            writeln!(out, "adapter={}", p.count_with_prefix("adapter."))?;
            writeln!(out, "prompt={}", p.count_with_prefix("prompt."))?;
            if let Some(g) = ck.model.prompt_generator() {
                writeln!(out, "prompt_weights={}", g.config().count_params())?;
            }
            writeln!(out, "codewords={}", ck.model.codebook.len())?;
        }
        _ => return Err(usage("inspect needs exactly one of --prompt-config or --checkpoint")),
    }
    Ok(())
}
