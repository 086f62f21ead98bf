//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GPTX"  u32 version
//! u32 tensor count
//!   per tensor: u32 name length, UTF-8 name, u8 dtype (0 = f32), u32 rank,
//!               u64 dims[rank], f32 payload, u32 CRC-32 of the payload
//! u32 metadata count
//!   per entry:  u32 key length, key, u32 value length, value
//! ```
//!
//! Model configuration, codebook geometry and frozen/trainable tags live in
//! metadata keys under `model.`; everything else is caller metadata.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::image::CHANNELS;
use crate::model::{Conditioner, GenModel};
use crate::prompt::{ConditionSpace, PromptConfig, PromptGenerator};
use crate::transformer::{Transformer, TransformerConfig};
use crate::vq::Codebook;

pub const MAGIC: &[u8; 4] = b"GPTX";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const CODEBOOK_TENSOR: &str = "codebook.codewords";
const RESERVED: &str = "model.";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: GenModel,
    /// Caller metadata (seed, provenance, training settings). Keys must not
    /// start with `model.`.
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(model: GenModel) -> Self {
        Self {
            model,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if let Some(k) = self.meta.keys().find(|k| k.starts_with(RESERVED)) {
            return Err(Error::invalid(format!("metadata key `{k}` uses the reserved prefix")));
        }
        let mut meta = model_meta(&self.model);
        meta.extend(self.meta.iter().map(|(k, v)| (k.clone(), v.clone())));

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let book = &self.model.codebook;
        let codewords = Tensor::new(
            vec![book.len(), book.patch_dim()],
            book.codewords().iter().flatten().copied().collect(),
        )?;
        let count = self.model.params.len() + 1;
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (_, p) in self.model.params.iter() {
            write_tensor(&mut out, &p.name, &p.value);
        }
        write_tensor(&mut out, CODEBOOK_TENSOR, &codewords);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        for (k, v) in &meta {
            write_str(&mut out, k);
            write_str(&mut out, v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.err_at(0, "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err_at(4, format!("version {version}, expected {VERSION}")));
        }
        let count = r.u32()? as usize;
        let mut seen = HashSet::new();
        let mut tensors = Vec::new();
        for _ in 0..count {
            let start = r.pos;
            let name = r.string()?;
            if !seen.insert(name.clone()) {
                return Err(r.err_at(start, format!("duplicate tensor `{name}`")));
            }
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(r.err_at(r.pos - 1, format!("tensor `{name}`: unknown dtype {dtype}")));
            }
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 8 {
                return Err(r.err_at(r.pos - 4, format!("tensor `{name}`: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = usize::try_from(r.u64()?).map_err(|_| r.err_at(r.pos - 8, "dimension overflow"))?;
                shape.push(d);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n > 0 && n <= (bytes.len() - r.pos) / 4)
                .ok_or_else(|| r.err_at(r.pos, format!("tensor `{name}`: shape {shape:?} does not fit the file")))?;
            let payload_at = r.pos;
            let payload = r.take(numel * 4)?;
            let crc = r.u32()?;
            if crc32fast::hash(payload) != crc {
                return Err(r.err_at(payload_at, format!("tensor `{name}`: payload checksum mismatch")));
            }
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let value = Tensor::new(shape, data).map_err(|e| r.err_at(start, e.to_string()))?;
            tensors.push((name, value));
        }
        let meta_at = r.pos;
        let entries = r.u32()? as usize;
        let mut meta = BTreeMap::new();
        for _ in 0..entries {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        if r.pos != bytes.len() {
            return Err(r.err_at(r.pos, "trailing bytes"));
        }
        let model = rebuild(tensors, &meta).map_err(|e| r.err_at(meta_at, e.to_string()))?;
        meta.retain(|k, _| !k.starts_with(RESERVED));
        Ok(Self { model, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    write_str(out, name);
    out.push(DTYPE_F32);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    let payload = t.to_le_bytes();
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err_at(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Checkpoint {
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err_at(self.pos, format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let at = self.pos;
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err_at(at, "string is not UTF-8"))
    }
}

fn model_meta(model: &GenModel) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(format!("{RESERVED}{k}"), v);
    };
    let t = model.transformer.config();
    put("kind", t.kind.to_string());
    put("layers", t.layers.to_string());
    put("dim", t.dim.to_string());
    put("heads", t.heads.to_string());
    put("mlp_ratio", t.mlp_ratio.to_string());
    put("codebook_size", t.codebook_size.to_string());
    put("source_classes", t.source_classes.to_string());
    put("grid_h", t.grid_h.to_string());
    put("grid_w", t.grid_w.to_string());
    if let Some(h) = t.adapter_hidden {
        put("adapter_hidden", h.to_string());
    }
    match &model.conditioner {
        Conditioner::ClassToken => put("conditioner", "class_token".into()),
        Conditioner::Prompt { generator, space } => {
            let c = generator.config();
            put("conditioner", "prompt".into());
            put("prompt.kind", c.kind.to_string());
            put("prompt.seq_len", c.seq_len.to_string());
            put("prompt.conditions", c.conditions.to_string());
            put("prompt.hidden", c.hidden.to_string());
            put("prompt.token_dim", c.token_dim.to_string());
            put("prompt.factors", c.factors.to_string());
            put("space.classes", space.classes.to_string());
            put("space.instances", space.instances.to_string());
        }
    }
    let book = &model.codebook;
    put("codebook.patch_h", book.patch_h().to_string());
    put("codebook.patch_w", book.patch_w().to_string());
    put(
        "codebook.max_fit_distance",
        format!("{:016x}", book.max_fit_distance().to_bits()),
    );
    let frozen: Vec<&str> = model
        .params
        .iter()
        .filter(|(_, p)| !p.trainable)
        .map(|(_, p)| p.name.as_str())
        .collect();
    put("frozen", frozen.join(","));
    m
}

struct MetaReader<'a>(&'a BTreeMap<String, String>);

impl MetaReader<'_> {
    fn str(&self, key: &str) -> Result<&str> {
        self.0
            .get(&format!("{RESERVED}{key}"))
            .map(String::as_str)
            .ok_or_else(|| Error::invalid(format!("missing metadata `{RESERVED}{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let s = self.str(key)?;
        s.parse()
            .map_err(|_| Error::invalid(format!("bad metadata `{RESERVED}{key}` = `{s}`")))
    }
}

fn rebuild(tensors: Vec<(String, Tensor)>, meta: &BTreeMap<String, String>) -> Result<GenModel> {
    let m = MetaReader(meta);
    let frozen: HashSet<&str> = m.str("frozen")?.split(',').filter(|s| !s.is_empty()).collect();
    let mut params = ParamSet::new();
    let mut codewords = None;
    for (name, value) in tensors {
        if name == CODEBOOK_TENSOR {
            codewords = Some(value);
        } else {
            let trainable = !frozen.contains(name.as_str());
            params.insert(name, value, trainable)?;
        }
    }
    let config = TransformerConfig {
        kind: m.str("kind")?.parse()?,
        layers: m.parse("layers")?,
        dim: m.parse("dim")?,
        heads: m.parse("heads")?,
        mlp_ratio: m.parse("mlp_ratio")?,
        codebook_size: m.parse("codebook_size")?,
        source_classes: m.parse("source_classes")?,
        grid_h: m.parse("grid_h")?,
        grid_w: m.parse("grid_w")?,
        adapter_hidden: match m.str("adapter_hidden") {
            Ok(_) => Some(m.parse("adapter_hidden")?),
            Err(_) => None,
        },
    };
    let transformer = Transformer::from_params(config, &mut params)?;
    let conditioner = match m.str("conditioner")? {
        "class_token" => Conditioner::ClassToken,
        "prompt" => {
            let config = PromptConfig {
                kind: m.str("prompt.kind")?.parse()?,
                seq_len: m.parse("prompt.seq_len")?,
                conditions: m.parse("prompt.conditions")?,
                hidden: m.parse("prompt.hidden")?,
                token_dim: m.parse("prompt.token_dim")?,
                factors: m.parse("prompt.factors")?,
            };
            Conditioner::Prompt {
                generator: PromptGenerator::from_params(config, &params)?,
                space: ConditionSpace {
                    classes: m.parse("space.classes")?,
                    instances: m.parse("space.instances")?,
                },
            }
        }
        other => return Err(Error::invalid(format!("unknown conditioner `{other}`"))),
    };
    let codewords = codewords.ok_or_else(|| Error::invalid("checkpoint has no codebook"))?;
    let (patch_h, patch_w): (usize, usize) = (m.parse("codebook.patch_h")?, m.parse("codebook.patch_w")?);
    let dim = patch_h * patch_w * CHANNELS;
    if codewords.rank() != 2 || codewords.shape()[1] != dim {
        return Err(Error::shape("checkpoint", format!("codebook tensor {:?}", codewords.shape())));
    }
    let mut codebook = Codebook::from_codewords(
        patch_h,
        patch_w,
        codewords.data().chunks(dim).map(<[f32]>::to_vec).collect(),
    )?;
    let bits = u64::from_str_radix(m.str("codebook.max_fit_distance")?, 16)
        .map_err(|_| Error::invalid("bad codebook fit distance"))?;
    codebook.set_max_fit_distance(f64::from_bits(bits));
    if codebook.len() != transformer.config().codebook_size {
        return Err(Error::invalid(format!(
            "codebook has {} codewords, model expects {}",
            codebook.len(),
            transformer.config().codebook_size
        )));
    }
    let model = GenModel {
        params,
        transformer,
        conditioner,
        codebook,
    };
    model.check_prompt_width()?;
    Ok(model)
}
