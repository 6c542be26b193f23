//! Shared-encoder, dual-decoder U-Net.
//!
//! The encoder downsamples with (conv3x3+relu, conv3x3+relu, maxpool)
//! blocks; each decoder mirrors it with (nearest upsample, skip concat,
//! conv3x3+relu, conv3x3+relu) and a final 1x1 conv. The segmentation head
//! emits raw logits; the distance-map head passes through relu so predicted
//! distances stay nonnegative. `Heads::SegOnly` drops the distance decoder
//! and realizes the single-task baseline.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Grads, Tape, Tensor};
use crate::tensormap::{self, ElemData, Entry};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MTLC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heads {
    SegOnly,
    SegAndDt,
}

impl fmt::Display for Heads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Heads::SegOnly => "seg_only",
            Heads::SegAndDt => "seg_and_dt",
        })
    }
}

impl FromStr for Heads {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seg_only" => Ok(Heads::SegOnly),
            "seg_and_dt" => Ok(Heads::SegAndDt),
            other => Err(Error::Config(format!(
                "unknown heads value {other:?} (expected seg_only or seg_and_dt)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub heads: Heads,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            base_channels: 16,
            depth: 3,
            heads: Heads::SegAndDt,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("model depth must be at least 1".into()));
        }
        if self.base_channels < 1 || self.in_channels < 1 {
            return Err(Error::Config("channel counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Spatial dims must be divisible by 2^depth.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.depth
    }
}

/// One learnable tensor: conv weight (OIHW) or bias (O).
#[derive(Debug, Clone)]
pub struct ParamEntry<E: Element> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<E>,
    pub grad: Option<Vec<E>>,
}

/// Complete learnable state of the network, serializable to a checkpoint.
/// Entry order is fixed by the block plan and deterministic.
#[derive(Debug, Clone)]
pub struct ModelParams<E: Element> {
    pub config: ModelConfig,
    entries: Vec<ParamEntry<E>>,
}

/// (name, shape) of every parameter implied by a config, in build order.
pub fn param_spec(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let base = config.base_channels;
    let mut spec = Vec::new();
    let mut conv_block = |prefix: &str, which: &str, cin: usize, cout: usize, k: usize| {
        spec.push((format!("{prefix}.{which}.weight"), vec![cout, cin, k, k]));
        spec.push((format!("{prefix}.{which}.bias"), vec![cout]));
    };
    for i in 0..config.depth {
        let cin = if i == 0 {
            config.in_channels
        } else {
            base << (i - 1)
        };
        let cout = base << i;
        conv_block(&format!("enc{i}"), "conv1", cin, cout, 3);
        conv_block(&format!("enc{i}"), "conv2", cout, cout, 3);
    }
    let bneck_in = base << (config.depth - 1);
    let bneck_out = base << config.depth;
    conv_block("bottleneck", "conv1", bneck_in, bneck_out, 3);
    conv_block("bottleneck", "conv2", bneck_out, bneck_out, 3);
    let heads: &[&str] = match config.heads {
        Heads::SegOnly => &["seg"],
        Heads::SegAndDt => &["seg", "dt"],
    };
    for head in heads {
        for i in (0..config.depth).rev() {
            let above = if i == config.depth - 1 {
                base << config.depth
            } else {
                base << (i + 1)
            };
            let skip = base << i;
            let cout = base << i;
            conv_block(&format!("{head}.dec{i}"), "conv1", above + skip, cout, 3);
            conv_block(&format!("{head}.dec{i}"), "conv2", cout, cout, 3);
        }
        conv_block(head, "out", base, 1, 1);
    }
    spec
}

/// He-normal initialization (std = sqrt(2/fan_in)) for conv weights from a
/// seeded generator; zero biases. Deterministic for a fixed seed.
pub fn build<E: Element>(config: &ModelConfig) -> Result<ModelParams<E>> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let normal = StandardNormal;
    let entries = param_spec(config)
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = if shape.len() == 4 {
                let fan_in: usize = shape[1] * shape[2] * shape[3];
                let std = (2.0 / fan_in as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let z: f64 = normal.sample(&mut rng);
                        E::from_f64(z * std)
                    })
                    .collect()
            } else {
                vec![E::zero(); n]
            };
            ParamEntry {
                name,
                shape,
                data,
                grad: None,
            }
        })
        .collect();
    Ok(ModelParams {
        config: *config,
        entries,
    })
}

impl<E: Element> ModelParams<E> {
    pub fn entries(&self) -> &[ParamEntry<E>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<E>] {
        &mut self.entries
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<E>> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Aligned mutable data and gradient views for the optimizer. Entries
    /// without an accumulated gradient are skipped on both sides.
    pub fn optim_views(&mut self) -> (Vec<&mut [E]>, Vec<&[E]>) {
        let mut params = Vec::new();
        let mut grads = Vec::new();
        for e in &mut self.entries {
            if let Some(g) = &e.grad {
                params.push(e.data.as_mut_slice());
                grads.push(g.as_slice());
            }
        }
        (params, grads)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Copy gradients out of a finished backward pass into the entries'
    /// grad buffers, accumulating if a buffer already exists.
    pub fn accumulate_grads(&mut self, bound: &BoundModel<E>, grads: &Grads<E>) {
        for (e, var) in self.entries.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.of(var) {
                match &mut e.grad {
                    Some(buf) => {
                        for (b, &v) in buf.iter_mut().zip(g) {
                            *b += v;
                        }
                    }
                    None => e.grad = Some(g.to_vec()),
                }
            }
        }
    }

    pub fn cast<T: Element>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config,
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data: e.data.iter().map(|&v| T::from_f64(v.as_f64())).collect(),
                    grad: None,
                })
                .collect(),
        }
    }

    /// Register every parameter as a leaf on the tape.
    pub fn bind(&self, tape: &mut Tape<E>) -> BoundModel<E> {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                let t = Tensor::from_vec(e.shape.clone(), e.data.clone())
                    .expect("entry shape/data consistent");
                tape.leaf(&t)
            })
            .collect();
        BoundModel {
            config: self.config,
            names: self.entries.iter().map(|e| e.name.clone()).collect(),
            vars,
        }
    }
}

/// Model parameters registered as leaves on an active tape.
pub struct BoundModel<E: Element> {
    config: ModelConfig,
    names: Vec<String>,
    vars: Vec<Tensor<E>>,
}

pub struct ForwardOutput<E: Element> {
    pub seg_logits: Tensor<E>,
    pub dt_pred: Option<Tensor<E>>,
}

impl<E: Element> BoundModel<E> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn var(&self, name: &str) -> &Tensor<E> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"));
        &self.vars[i]
    }

    pub fn vars_with_names(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.names.iter().map(|n| n.as_str()).zip(&self.vars)
    }

    fn conv_relu(
        &self,
        tape: &mut Tape<E>,
        x: &Tensor<E>,
        prefix: &str,
        which: &str,
        pad: usize,
    ) -> Result<Tensor<E>> {
        let w = self.var(&format!("{prefix}.{which}.weight"));
        let b = self.var(&format!("{prefix}.{which}.bias"));
        let y = tape.conv2d(x, w, b, 1, pad)?;
        Ok(tape.relu(&y))
    }

    fn decode(
        &self,
        tape: &mut Tape<E>,
        head: &str,
        bottom: &Tensor<E>,
        skips: &[Tensor<E>],
    ) -> Result<Tensor<E>> {
        let mut x = bottom.clone();
        for i in (0..self.config.depth).rev() {
            let up = tape.upsample_nearest2(&x)?;
            let cat = tape.concat_channels(&up, &skips[i])?;
            let prefix = format!("{head}.dec{i}");
            x = self.conv_relu(tape, &cat, &prefix, "conv1", 1)?;
            x = self.conv_relu(tape, &x, &prefix, "conv2", 1)?;
        }
        let w = self.var(&format!("{head}.out.weight"));
        let b = self.var(&format!("{head}.out.bias"));
        tape.conv2d(&x, w, b, 1, 0)
    }

    /// Full forward pass. Input is N x in_channels x H x W with H, W
    /// divisible by 2^depth.
    pub fn forward(&self, tape: &mut Tape<E>, image: &Tensor<E>) -> Result<ForwardOutput<E>> {
        let shape = image.shape();
        if shape.len() != 4 || shape[1] != self.config.in_channels {
            return Err(Error::Dim(format!(
                "model input must be Nx{}xHxW, got {:?}",
                self.config.in_channels, shape
            )));
        }
        let div = self.config.spatial_divisor();
        if shape[2] % div != 0 || shape[3] % div != 0 {
            return Err(Error::Geometry(format!(
                "input spatial dims {}x{} not divisible by 2^depth = {}",
                shape[2], shape[3], div
            )));
        }
        let mut x = image.clone();
        let mut skips = Vec::with_capacity(self.config.depth);
        for i in 0..self.config.depth {
            let prefix = format!("enc{i}");
            x = self.conv_relu(tape, &x, &prefix, "conv1", 1)?;
            x = self.conv_relu(tape, &x, &prefix, "conv2", 1)?;
            skips.push(x.clone());
            x = tape.max_pool2d(&x, 2)?;
        }
        x = self.conv_relu(tape, &x, "bottleneck", "conv1", 1)?;
        x = self.conv_relu(tape, &x, "bottleneck", "conv2", 1)?;

        let seg_logits = self.decode(tape, "seg", &x, &skips)?;
        let dt_pred = match self.config.heads {
            Heads::SegOnly => None,
            Heads::SegAndDt => {
                let raw = self.decode(tape, "dt", &x, &skips)?;
                Some(tape.relu(&raw))
            }
        };
        Ok(ForwardOutput {
            seg_logits,
            dt_pred,
        })
    }
}

fn config_block(config: &ModelConfig) -> String {
    format!(
        "in_channels={}\nbase_channels={}\ndepth={}\nheads={}\nseed={}\n",
        config.in_channels, config.base_channels, config.depth, config.heads, config.seed
    )
}

fn parse_config_block(text: &str, label: &str) -> Result<ModelConfig> {
    let mut config = ModelConfig::default();
    for line in text.lines() {
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidInput(format!("{label}: malformed config line {line:?}"))
        })?;
        let bad = |_| Error::InvalidInput(format!("{label}: bad value for {key}: {value:?}"));
        match key {
            "in_channels" => config.in_channels = value.parse().map_err(bad)?,
            "base_channels" => config.base_channels = value.parse().map_err(bad)?,
            "depth" => config.depth = value.parse().map_err(bad)?,
            "heads" => config.heads = value.parse()?,
            "seed" => config.seed = value.parse().map_err(bad)?,
            other => {
                return Err(Error::InvalidInput(format!(
                    "{label}: unknown config key {other:?}"
                )))
            }
        }
    }
    Ok(config)
}

pub fn checkpoint_to_vec<E: Element>(params: &ModelParams<E>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = config_block(&params.config);
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let entries: Vec<Entry> = params
        .entries
        .iter()
        .map(|e| {
            let data = match E::TAG {
                0 => ElemData::F32(e.data.iter().map(|&v| v.as_f64() as f32).collect()),
                _ => ElemData::F64(e.data.iter().map(|&v| v.as_f64()).collect()),
            };
            Entry::new(e.name.clone(), e.shape.clone(), data).expect("consistent entry")
        })
        .collect();
    out.extend_from_slice(&tensormap::write_to_vec(&entries));
    out
}

pub fn save_checkpoint<E: Element>(params: &ModelParams<E>, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_vec(params)).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_from_slice<E: Element>(bytes: &[u8], label: &str) -> Result<ModelParams<E>> {
    if bytes.len() < 4 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: label.to_string(),
            expected: CHECKPOINT_MAGIC,
        });
    }
    if bytes.len() < 6 {
        return Err(Error::Truncated {
            path: label.to_string(),
            entry: "version".into(),
        });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion {
            path: label.to_string(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 10 {
        return Err(Error::Truncated {
            path: label.to_string(),
            entry: "config block length".into(),
        });
    }
    let cfg_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if bytes.len() < 10 + cfg_len {
        return Err(Error::Truncated {
            path: label.to_string(),
            entry: "config block".into(),
        });
    }
    let cfg_text = std::str::from_utf8(&bytes[10..10 + cfg_len])
        .map_err(|_| Error::InvalidInput(format!("{label}: config block is not UTF-8")))?;
    let config = parse_config_block(cfg_text, label)?;
    config.validate()?;
    let entries = tensormap::read_from_slice(&bytes[10 + cfg_len..], label)?;

    let spec = param_spec(&config);
    let missing: Vec<String> = spec
        .iter()
        .filter(|(name, _)| !entries.iter().any(|e| &e.name == name))
        .map(|(name, _)| name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingParams { names: missing });
    }
    let unexpected: Vec<String> = entries
        .iter()
        .filter(|e| !spec.iter().any(|(name, _)| name == &e.name))
        .map(|e| e.name.clone())
        .collect();
    if !unexpected.is_empty() {
        return Err(Error::UnexpectedParams { names: unexpected });
    }

    let mut out = Vec::with_capacity(spec.len());
    for (name, shape) in &spec {
        let e = entries.iter().find(|e| &e.name == name).unwrap();
        if &e.shape != shape {
            return Err(Error::Dim(format!(
                "{label}: parameter {name} has shape {:?}, expected {:?}",
                e.shape, shape
            )));
        }
        let data: Vec<E> = match &e.data {
            ElemData::F32(v) => v.iter().map(|&x| E::from_f64(x as f64)).collect(),
            ElemData::F64(v) => v.iter().map(|&x| E::from_f64(x)).collect(),
        };
        out.push(ParamEntry {
            name: name.clone(),
            shape: shape.clone(),
            data,
            grad: None,
        });
    }
    Ok(ModelParams {
        config,
        entries: out,
    })
}

pub fn load_checkpoint<E: Element>(path: &Path) -> Result<ModelParams<E>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_slice(&bytes, &path.display().to_string())
}

/// Load a checkpoint and verify it matches an expected head configuration.
pub fn load_checkpoint_expecting<E: Element>(path: &Path, heads: Heads) -> Result<ModelParams<E>> {
    let params = load_checkpoint::<E>(path)?;
    if params.config.heads != heads {
        let want = ModelConfig {
            heads,
            ..params.config
        };
        let have: Vec<(String, Vec<usize>)> = param_spec(&params.config);
        let missing: Vec<String> = param_spec(&want)
            .into_iter()
            .filter(|(name, _)| !have.iter().any(|(n, _)| n == name))
            .map(|(name, _)| name)
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingParams { names: missing });
        }
    }
    Ok(params)
}
