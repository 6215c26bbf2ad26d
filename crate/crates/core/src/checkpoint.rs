//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SEGMACKP"            8 bytes
//! version               u32
//! metadata length       u32
//! metadata              UTF-8 `key=value` lines
//! parameter blocks      f64, in the order listed below
//! crc32                 u32 over every preceding byte
//! ```
//!
//! Blocks: encoder `(W, b)` per layer, decoder `(W, b)` per layer, means
//! (row-major `K × D`), masses, then the first and second Adam moments of the
//! encoder, decoder and means optimizers, each following its parameter order.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::error::{CheckpointError, Error, Result};
use crate::gmm::GaussianMixturePrior;
use crate::nn::{Activation, AdamState, Dense, DenseNet};
use crate::trainer::{ModelState, TrainingConfig};

pub const MAGIC: &[u8; 8] = b"SEGMACKP";
pub const VERSION: u32 = 1;

type Meta = BTreeMap<String, String>;

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn net_meta(meta: &mut Meta, prefix: &str, net: &DenseNet) {
    meta.insert(format!("{prefix}.shape"), join(&net.shape()));
    let acts: Vec<&str> = net.layers().iter().map(|l| l.activation.name()).collect();
    meta.insert(format!("{prefix}.activations"), acts.join(","));
}

fn adam_meta(meta: &mut Meta, prefix: &str, opt: &AdamState) {
    meta.insert(format!("{prefix}.learning_rate"), opt.learning_rate.to_string());
    meta.insert(format!("{prefix}.beta1"), opt.beta1.to_string());
    meta.insert(format!("{prefix}.beta2"), opt.beta2.to_string());
    meta.insert(format!("{prefix}.eps"), opt.eps.to_string());
    meta.insert(format!("{prefix}.step"), opt.step.to_string());
}

fn metadata(model: &ModelState) -> Meta {
    let c = &model.config;
    let mut meta = Meta::new();
    meta.insert("alpha".into(), c.alpha.to_string());
    meta.insert("beta".into(), c.beta.to_string());
    meta.insert("learning_rate".into(), c.learning_rate.to_string());
    meta.insert(
        "means_learning_rate".into(),
        c.means_learning_rate.map_or_else(|| "none".into(), |v| v.to_string()),
    );
    meta.insert("batch_size".into(), c.batch_size.to_string());
    meta.insert("epochs".into(), c.epochs.to_string());
    meta.insert("seed".into(), c.seed.to_string());
    meta.insert("log_eps".into(), c.log_eps.to_string());
    meta.insert("latent_dim".into(), c.latent_dim.to_string());
    meta.insert("encoder_hidden".into(), join(&c.encoder_hidden));
    meta.insert("decoder_hidden".into(), join(&c.decoder_hidden));
    meta.insert("deterministic".into(), c.deterministic.to_string());
    meta.insert("val_limit".into(), c.val_limit.to_string());
    meta.insert("input_shape".into(), join(&model.input_shape));
    meta.insert("n_classes".into(), model.n_classes().to_string());
    meta.insert("step".into(), model.step.to_string());
    net_meta(&mut meta, "encoder", &model.encoder);
    net_meta(&mut meta, "decoder", &model.decoder);
    adam_meta(&mut meta, "adam.encoder", &model.encoder_opt);
    adam_meta(&mut meta, "adam.decoder", &model.decoder_opt);
    adam_meta(&mut meta, "adam.means", &model.means_opt);
    meta
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(model: &ModelState) -> Vec<u8> {
    let mut meta_text = String::new();
    for (k, v) in metadata(model) {
        meta_text.push_str(&k);
        meta_text.push('=');
        meta_text.push_str(&v);
        meta_text.push('\n');
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
    out.extend_from_slice(meta_text.as_bytes());

    for block in model.encoder.param_blocks() {
        push_f64s(&mut out, block);
    }
    for block in model.decoder.param_blocks() {
        push_f64s(&mut out, block);
    }
    push_f64s(&mut out, model.prior.means().as_slice().expect("standard layout"));
    push_f64s(&mut out, model.prior.masses());
    for opt in [&model.encoder_opt, &model.decoder_opt, &model.means_opt] {
        for (m, v) in &opt.moments {
            push_f64s(&mut out, m);
            push_f64s(&mut out, v);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_checkpoint(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

fn bad(msg: impl Into<String>) -> Error {
    CheckpointError::Metadata(msg.into()).into()
}

struct MetaReader(Meta);

impl MetaReader {
    fn parse(text: &str) -> Result<Self> {
        let mut meta = Meta::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line without '=': {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        Ok(Self(meta))
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("missing key {key}")))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| bad(format!("bad value for {key}: {raw:?}")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.raw(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| s.parse().map_err(|_| bad(format!("bad list entry for {key}: {s:?}"))))
            .collect()
    }

    fn activations(&self, key: &str) -> Result<Vec<Activation>> {
        self.raw(key)?
            .split(',')
            .map(|s| Activation::parse(s).ok_or_else(|| bad(format!("unknown activation {s:?}"))))
            .collect()
    }

    fn adam(&self, prefix: &str, block_sizes: &[usize]) -> Result<AdamState> {
        let mut opt = AdamState::new(self.get(&format!("{prefix}.learning_rate"))?, block_sizes);
        opt.beta1 = self.get(&format!("{prefix}.beta1"))?;
        opt.beta2 = self.get(&format!("{prefix}.beta2"))?;
        opt.eps = self.get(&format!("{prefix}.eps"))?;
        opt.step = self.get(&format!("{prefix}.step"))?;
        Ok(opt)
    }
}

/// Layout recovered from the metadata block.
struct Layout {
    encoder_shape: Vec<usize>,
    encoder_acts: Vec<Activation>,
    decoder_shape: Vec<usize>,
    decoder_acts: Vec<Activation>,
    n_classes: usize,
    latent_dim: usize,
}

impl Layout {
    fn from_meta(meta: &MetaReader) -> Result<Self> {
        let layout = Self {
            encoder_shape: meta.list("encoder.shape")?,
            encoder_acts: meta.activations("encoder.activations")?,
            decoder_shape: meta.list("decoder.shape")?,
            decoder_acts: meta.activations("decoder.activations")?,
            n_classes: meta.get("n_classes")?,
            latent_dim: meta.get("latent_dim")?,
        };
        for (shape, acts) in [
            (&layout.encoder_shape, &layout.encoder_acts),
            (&layout.decoder_shape, &layout.decoder_acts),
        ] {
            if shape.len() < 2 || acts.len() != shape.len() - 1 {
                return Err(bad("network shape and activation list disagree"));
            }
        }
        if layout.n_classes == 0 || layout.latent_dim == 0 {
            return Err(bad("empty prior"));
        }
        Ok(layout)
    }

    fn net_blocks(shape: &[usize]) -> Vec<usize> {
        shape.windows(2).flat_map(|w| [w[0] * w[1], w[1]]).collect()
    }

    fn n_floats(&self) -> usize {
        let enc: usize = Self::net_blocks(&self.encoder_shape).iter().sum();
        let dec: usize = Self::net_blocks(&self.decoder_shape).iter().sum();
        let means = self.n_classes * self.latent_dim;
        3 * (enc + dec + means) + self.n_classes
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let slice = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn net(&mut self, shape: &[usize], acts: &[Activation]) -> Result<DenseNet> {
        let mut layers = Vec::with_capacity(acts.len());
        for (w, &activation) in shape.windows(2).zip(acts) {
            let weights = Array2::from_shape_vec((w[1], w[0]), self.f64s(w[0] * w[1])?)
                .map_err(|e| bad(e.to_string()))?;
            let bias = Array1::from(self.f64s(w[1])?);
            layers.push(Dense {
                weights,
                bias,
                activation,
            });
        }
        DenseNet::from_layers(layers)
    }

    fn moments(&mut self, opt: &mut AdamState) -> Result<()> {
        for (m, v) in opt.moments.iter_mut() {
            *m = self.f64s(m.len())?;
            *v = self.f64s(v.len())?;
        }
        Ok(())
    }
}

fn verify_crc(bytes: &[u8], body_len: usize) -> Result<()> {
    let stored_bytes = bytes
        .get(body_len..body_len + 4)
        .ok_or(CheckpointError::Truncated)?;
    let stored = u32::from_le_bytes(stored_bytes.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed }.into());
    }
    Ok(())
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelState> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            expected: VERSION,
            found: version,
        }
        .into());
    }
    let meta_len = cur.u32()? as usize;
    let meta_bytes = cur.take(meta_len)?;
    let header_len = cur.pos;

    let parsed = std::str::from_utf8(meta_bytes)
        .map_err(|_| bad("metadata is not UTF-8"))
        .and_then(|text| {
            let meta = MetaReader::parse(text)?;
            let layout = Layout::from_meta(&meta)?;
            Ok((meta, layout))
        });
    let (meta, layout) = match parsed {
        Ok(v) => v,
        Err(e) => {
            // A damaged metadata block is reported as a checksum failure when the
            // checksum disagrees; otherwise the metadata itself is malformed.
            if bytes.len() >= header_len + 4 {
                verify_crc(bytes, bytes.len() - 4)?;
            }
            return Err(e);
        }
    };

    let body_len = header_len + layout.n_floats() * 8;
    if bytes.len() < body_len + 4 {
        return Err(CheckpointError::Truncated.into());
    }
    if bytes.len() > body_len + 4 {
        verify_crc(bytes, bytes.len() - 4)?;
        return Err(bad(format!("{} trailing bytes", bytes.len() - body_len - 4)));
    }
    verify_crc(bytes, body_len)?;

    let encoder = cur.net(&layout.encoder_shape, &layout.encoder_acts)?;
    let decoder = cur.net(&layout.decoder_shape, &layout.decoder_acts)?;
    let (k, d) = (layout.n_classes, layout.latent_dim);
    let means = Array2::from_shape_vec((k, d), cur.f64s(k * d)?).map_err(|e| bad(e.to_string()))?;
    let masses = cur.f64s(k)?;
    let prior = GaussianMixturePrior::new(means, masses)?;

    let mut encoder_opt = meta.adam("adam.encoder", &Layout::net_blocks(&layout.encoder_shape))?;
    let mut decoder_opt = meta.adam("adam.decoder", &Layout::net_blocks(&layout.decoder_shape))?;
    let mut means_opt = meta.adam("adam.means", &[k * d])?;
    cur.moments(&mut encoder_opt)?;
    cur.moments(&mut decoder_opt)?;
    cur.moments(&mut means_opt)?;

    let means_learning_rate = match meta.raw("means_learning_rate")? {
        "none" => None,
        _ => Some(meta.get("means_learning_rate")?),
    };
    let config = TrainingConfig {
        alpha: meta.get("alpha")?,
        beta: meta.get("beta")?,
        learning_rate: meta.get("learning_rate")?,
        means_learning_rate,
        batch_size: meta.get("batch_size")?,
        epochs: meta.get("epochs")?,
        seed: meta.get("seed")?,
        log_eps: meta.get("log_eps")?,
        latent_dim: d,
        encoder_hidden: meta.list("encoder_hidden")?,
        decoder_hidden: meta.list("decoder_hidden")?,
        deterministic: meta.get("deterministic")?,
        val_limit: meta.get("val_limit")?,
    };

    if encoder.out_dim() != d || decoder.in_dim() != d {
        return Err(Error::DimensionMismatch {
            what: "checkpoint latent dimension",
            expected: d,
            found: encoder.out_dim(),
        });
    }
    if decoder.out_dim() != encoder.in_dim() {
        return Err(Error::DimensionMismatch {
            what: "checkpoint decoder output",
            expected: encoder.in_dim(),
            found: decoder.out_dim(),
        });
    }

    Ok(ModelState {
        encoder,
        decoder,
        prior,
        encoder_opt,
        decoder_opt,
        means_opt,
        step: meta.get("step")?,
        config,
        input_shape: meta.list("input_shape")?,
    })
}
