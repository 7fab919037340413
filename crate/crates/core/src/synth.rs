//! Synthetic tensors with controlled statistics, and an order-0 entropy
//! oracle used to sanity-check compression numbers.
//!
//! Randomness comes from `ChaCha8Rng` seeded with the tensor's `seed`;
//! normal variates use the Box–Muller transform. Output is deterministic
//! for a fixed seed within this implementation.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitplane::{disaggregate, plane_len};
use crate::container::{Layout, ManifestEntry, TensorInput, TensorManifest};
use crate::error::{Error, Result};
use crate::float_format::{encode_nearest, FloatFormat, FormatRegistry, ValueBlock};
use crate::kv::{
    delta_forward, group_by_channel, kv_bitplane_concat, split_groups, DEFAULT_GROUP_TOKENS,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    /// `N(0, sigma^2)` rounded to the nearest representable word.
    GaussianWeights {
        count: usize,
        sigma: f64,
    },
    /// `k[t][j] = b_j * (1 + eps[t][j])` with `b_j ~ N(0, sigma_b^2)` and
    /// `eps ~ N(0, sigma_eps^2)`.
    ChannelCorrelatedKv {
        tokens: usize,
        channels: usize,
        sigma_b: f64,
        sigma_eps: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tokens_per_group: Option<usize>,
    },
    /// Uniformly random bit patterns.
    UniformRandom {
        count: usize,
    },
    Constant {
        count: usize,
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub dtype: String,
    pub seed: u64,
    #[serde(flatten)]
    pub kind: SynthKind,
}

/// A set of tensors to generate, as read from a JSON plan file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthPlan {
    pub tensors: Vec<SynthSpec>,
}

impl SynthPlan {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct SynthTensor {
    pub name: String,
    pub layout: Layout,
    pub shape: Vec<u64>,
    pub tokens_per_group: Option<usize>,
    pub data: ValueBlock,
}

impl SynthTensor {
    pub fn to_input(&self) -> TensorInput {
        match self.layout {
            Layout::Kv => TensorInput::kv(
                self.name.clone(),
                self.data.clone(),
                self.shape[1] as usize,
                self.tokens_per_group.unwrap_or(DEFAULT_GROUP_TOKENS),
            ),
            _ => TensorInput::weights(self.name.clone(), self.data.clone()),
        }
    }

    pub fn manifest_entry(&self, path: PathBuf) -> ManifestEntry {
        ManifestEntry {
            name: self.name.clone(),
            dtype: self.data.format().name().to_string(),
            shape: self.shape.clone(),
            path,
            layout: self.layout,
            tokens_per_group: self.tokens_per_group,
            channels: (self.layout == Layout::Kv).then(|| self.shape[1] as usize),
        }
    }
}

/// Standard normal sampler (Box–Muller, both outputs used).
struct Normal {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Normal {
    fn new(seed: u64) -> Self {
        Normal {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps ln finite
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        self.spare = Some(r * (TAU * u2).sin());
        r * (TAU * u2).cos()
    }
}

fn positive(name: &str, what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::arg(format!(
            "`{name}`: {what} must be finite and non-negative, got {v}"
        )))
    }
}

pub fn generate(spec: &SynthSpec, registry: &FormatRegistry) -> Result<SynthTensor> {
    let format = registry.get(&spec.dtype)?;
    let name = spec.name.clone();
    if name.is_empty() {
        return Err(Error::arg("synthetic tensor needs a name"));
    }
    let mask = format.word_mask();
    match spec.kind {
        SynthKind::GaussianWeights { count, sigma } => {
            positive(&name, "sigma", sigma)?;
            format.require_exponent("gaussian weights are rounded floats")?;
            let mut normal = Normal::new(spec.seed);
            let words = (0..count)
                .map(|_| encode_nearest(sigma * normal.sample(), &format))
                .collect::<Result<Vec<_>>>()?;
            Ok(weights(name, format, words))
        }
        SynthKind::ChannelCorrelatedKv {
            tokens,
            channels,
            sigma_b,
            sigma_eps,
            tokens_per_group,
        } => {
            positive(&name, "sigma_b", sigma_b)?;
            positive(&name, "sigma_eps", sigma_eps)?;
            format.require_exponent("kv data is rounded floats")?;
            if tokens == 0 || channels == 0 {
                return Err(Error::arg(format!(
                    "`{name}`: tokens and channels must be positive"
                )));
            }
            let mut normal = Normal::new(spec.seed);
            let bases: Vec<f64> = (0..channels).map(|_| sigma_b * normal.sample()).collect();
            let mut words = Vec::with_capacity(tokens * channels);
            for _ in 0..tokens {
                for &b in &bases {
                    words.push(encode_nearest(
                        b * (1.0 + sigma_eps * normal.sample()),
                        &format,
                    )?);
                }
            }
            Ok(SynthTensor {
                name,
                layout: Layout::Kv,
                shape: vec![tokens as u64, channels as u64],
                tokens_per_group,
                data: ValueBlock::new_unchecked(format, words),
            })
        }
        SynthKind::UniformRandom { count } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let words = (0..count).map(|_| rng.random::<u32>() & mask).collect();
            Ok(weights(name, format, words))
        }
        SynthKind::Constant { count, value } => {
            let word = encode_nearest(value, &format)?;
            Ok(weights(name, format, vec![word; count]))
        }
    }
}

fn weights(name: String, format: FloatFormat, words: Vec<u32>) -> SynthTensor {
    SynthTensor {
        name,
        layout: Layout::Weights,
        shape: vec![words.len() as u64],
        tokens_per_group: None,
        data: ValueBlock::new_unchecked(format, words),
    }
}

/// Generates every tensor of `plan` into `out_dir` as `<name>.bin` plus a
/// `manifest.json`. Returns the manifest.
pub fn write_corpus(
    plan: &SynthPlan,
    out_dir: &Path,
    registry: &FormatRegistry,
) -> Result<TensorManifest> {
    fs::create_dir_all(out_dir)?;
    let mut manifest = TensorManifest::default();
    for spec in &plan.tensors {
        let tensor = generate(spec, registry)?;
        let file: String = tensor
            .name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let rel = PathBuf::from(format!("{file}.bin"));
        fs::write(out_dir.join(&rel), tensor.data.to_packed())?;
        manifest.tensors.push(tensor.manifest_entry(rel));
    }
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Layout the entropy oracle segments a tensor into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleLayout {
    /// Packed words cut into plane-sized chunks.
    ByteRaw,
    BitPlane,
    KvClustered {
        channels: usize,
        tokens_per_group: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentEntropy {
    pub superblock: usize,
    pub segment: usize,
    pub bytes: usize,
    /// Order-0 byte entropy times length, in bytes.
    pub byte_bound: f64,
    /// Order-0 bit entropy times length, in bytes.
    pub bit_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyReport {
    pub layout: OracleLayout,
    pub original_bytes: usize,
    /// Uncompressed side data (base exponents) charged at full size.
    pub meta_bytes: usize,
    pub segments: Vec<SegmentEntropy>,
}

impl EntropyReport {
    /// Lower bound on the compressed size from byte entropy.
    pub fn bound_bytes(&self) -> f64 {
        self.meta_bytes as f64 + self.segments.iter().map(|s| s.byte_bound).sum::<f64>()
    }

    pub fn bound_ratio(&self) -> f64 {
        self.original_bytes as f64 / self.bound_bytes().max(f64::MIN_POSITIVE)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.segments {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shannon entropy of the byte histogram, times the length, in bytes.
pub fn byte_entropy_bound(bytes: &[u8]) -> f64 {
    if bytes.is_empty() {
        return 0.0;
    }
    let mut hist = [0u64; 256];
    for &b in bytes {
        hist[b as usize] += 1;
    }
    let n = bytes.len() as f64;
    let bits_per_byte: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    bits_per_byte * n / 8.0
}

/// Binary entropy of the set bits, times the bit count, in bytes.
pub fn bit_entropy_bound(bytes: &[u8], bits: usize) -> f64 {
    if bits == 0 {
        return 0.0;
    }
    let ones: u64 = bytes.iter().map(|b| b.count_ones() as u64).sum();
    let p = ones as f64 / bits as f64;
    let h = if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    };
    h * bits as f64 / 8.0
}

fn segment(superblock: usize, segment: usize, bytes: &[u8], bits: usize) -> SegmentEntropy {
    SegmentEntropy {
        superblock,
        segment,
        bytes: bytes.len(),
        byte_bound: byte_entropy_bound(bytes),
        bit_bound: bit_entropy_bound(bytes, bits),
    }
}

/// Order-0 entropy bound of `block` under `layout`, with superblocks of
/// `superblock_values` values (KV layouts use one token group per superblock).
pub fn entropy_oracle(
    block: &ValueBlock,
    layout: OracleLayout,
    superblock_values: usize,
) -> Result<EntropyReport> {
    if superblock_values == 0 {
        return Err(Error::arg("superblock size must be positive"));
    }
    let format = block.format();
    let n = format.total_bits() as usize;
    let mut segments = Vec::new();
    let mut meta_bytes = 0;
    match layout {
        OracleLayout::ByteRaw => {
            for (sb, chunk) in block.words().chunks(superblock_values).enumerate() {
                let packed = ValueBlock::new_unchecked(format.clone(), chunk.to_vec()).to_packed();
                let seg = plane_len(chunk.len());
                for (i, part) in packed.chunks(seg).enumerate() {
                    segments.push(segment(sb, i, part, part.len() * 8));
                }
            }
        }
        OracleLayout::BitPlane => {
            for (sb, chunk) in block.words().chunks(superblock_values).enumerate() {
                let m = disaggregate(&ValueBlock::new_unchecked(format.clone(), chunk.to_vec()));
                for rank in 0..n {
                    segments.push(segment(sb, rank, m.plane(rank), chunk.len()));
                }
            }
        }
        OracleLayout::KvClustered {
            channels,
            tokens_per_group,
        } => {
            for (sb, group) in split_groups(block, channels, tokens_per_group)?
                .iter()
                .enumerate()
            {
                let (delta, meta) = delta_forward(&group_by_channel(group))?;
                meta_bytes += meta.channels();
                let m = kv_bitplane_concat(&delta);
                for rank in 0..n {
                    segments.push(segment(sb, rank, m.plane(rank), m.count()));
                }
            }
        }
    }
    Ok(EntropyReport {
        layout,
        original_bytes: block.packed_len(),
        meta_bytes,
        segments,
    })
}
