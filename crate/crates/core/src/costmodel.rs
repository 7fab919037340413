//! Closed-form DRAM traffic, energy and latency estimates for precision
//! schedules.
//!
//! For every superblock the model fetches one contiguous run (header,
//! metadata and the top `k` plane payloads) and charges
//!
//! ```text
//! activations = ceil(run_bytes / row_buffer_bytes)
//! energy      = bytes * 8 * energy_read_per_bit + activations * energy_activate
//! latency     = bytes / (channels * per_channel_bandwidth) + fixed_latency
//! ```
//!
//! The byte-level baseline stores words contiguously. Compressed byte-level
//! data must be fetched whole; uncompressed data may skip the trailing
//! (least significant) bytes of each word that hold no kept bit, while still
//! opening every row it strides across.
//!
//! Energy constants are placeholders to be replaced with device data.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bitplane::PrecisionTable;
use crate::codec::{CompressionAlgo, SegmentKind};
use crate::container::{
    build_container, reader_from_bytes, ContainerReader, ContainerStats, Layout, LayoutOverride,
    TensorInput, TensorManifest, TensorStats, WriteSettings,
};
use crate::error::{Error, Result};
use crate::float_format::FloatFormat;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DramConfig {
    pub channels: u32,
    /// Bytes per second per channel.
    pub per_channel_bandwidth: f64,
    pub row_buffer_bytes: u64,
    /// Joules per bit read.
    pub energy_read_per_bit: f64,
    /// Joules per row activation.
    pub energy_activate: f64,
    /// Seconds added once per load.
    pub fixed_latency: f64,
}

impl Default for DramConfig {
    /// Four DDR5-4800 channels.
    fn default() -> Self {
        DramConfig {
            channels: 4,
            per_channel_bandwidth: 38.4e9,
            row_buffer_bytes: 8192,
            energy_read_per_bit: 5e-12,
            energy_activate: 2e-9,
            fixed_latency: 1e-7,
        }
    }
}

impl DramConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: DramConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::arg(format!(
                    "dram config: {name} must be positive, got {v}"
                )))
            }
        };
        positive("channels", self.channels as f64)?;
        positive("per_channel_bandwidth", self.per_channel_bandwidth)?;
        positive("row_buffer_bytes", self.row_buffer_bytes as f64)?;
        positive("energy_read_per_bit", self.energy_read_per_bit)?;
        positive("energy_activate", self.energy_activate)?;
        positive("fixed_latency", self.fixed_latency)
    }

    fn activations(&self, run_bytes: u64) -> u64 {
        run_bytes.div_ceil(self.row_buffer_bytes)
    }

    fn transfer_seconds(&self, bytes: u64) -> f64 {
        bytes as f64 / (self.channels as f64 * self.per_channel_bandwidth)
    }
}

/// A plane count or a named precision such as `"fp8"` or `"full"`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Precision {
    Planes(usize),
    Named(String),
}

impl Default for Precision {
    fn default() -> Self {
        Precision::Named("full".into())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleRule {
    /// Tensor-name glob; `*` matches any run, `?` one character.
    pub pattern: String,
    pub precision: Precision,
}

/// Assignment of precisions to tensors; the first matching rule wins.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecisionSchedule {
    #[serde(default)]
    pub rules: Vec<ScheduleRule>,
    #[serde(default)]
    pub default: Precision,
    /// Extra or replacement named precisions, per format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precisions: Option<PrecisionTable>,
}

impl PrecisionSchedule {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn uniform(precision: Precision) -> Self {
        PrecisionSchedule {
            default: precision,
            ..Default::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Plane count for tensor `name` of `format`.
    pub fn resolve(&self, name: &str, format: &FloatFormat) -> Result<usize> {
        let precision = self
            .rules
            .iter()
            .find(|r| glob_match(&r.pattern, name))
            .map_or(&self.default, |r| &r.precision);
        let n = format.total_bits() as usize;
        match precision {
            Precision::Planes(k) if (1..=n).contains(k) => Ok(*k),
            Precision::Planes(k) => Err(Error::Schedule(format!(
                "`{name}`: {k} planes outside 1..={n} for `{format}`"
            ))),
            Precision::Named(label) => {
                let mut table = PrecisionTable::default();
                if let Some(extra) = &self.precisions {
                    table.merge(extra);
                }
                table
                    .resolve(label, format)
                    .map_err(|e| Error::Schedule(format!("`{name}`: {e}")))
            }
        }
    }
}

/// Glob match with `*` and `?` over characters.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let s: Vec<char> = name.chars().collect();
    let (mut pi, mut si) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while si < s.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == s[si]) {
            pi += 1;
            si += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, si));
            pi += 1;
        } else if let Some((sp, ss)) = star {
            pi = sp + 1;
            si = ss + 1;
            star = Some((sp, ss + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorAccess {
    pub name: String,
    pub planes: usize,
    pub bytes_fetched: u64,
    /// Superblock headers and metadata.
    pub overhead_bytes: u64,
    /// Bytes fetched per stored segment, MSB plane first.
    pub plane_bytes: Vec<u64>,
    pub activations: u64,
    pub read_energy_joules: f64,
    pub activation_energy_joules: f64,
    pub energy_joules: f64,
    /// Transfer time only; the fixed latency is charged once per report.
    pub latency_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccessReport {
    pub schema_version: u32,
    pub model: String,
    pub bytes_fetched: u64,
    pub activations: u64,
    pub read_energy_joules: f64,
    pub activation_energy_joules: f64,
    pub energy_joules: f64,
    pub fixed_latency_seconds: f64,
    pub latency_seconds: f64,
    pub tensors: Vec<TensorAccess>,
}

impl AccessReport {
    fn from_tensors(model: &str, tensors: Vec<TensorAccess>, config: &DramConfig) -> Self {
        let bytes_fetched = tensors.iter().map(|t| t.bytes_fetched).sum();
        let activations = tensors.iter().map(|t| t.activations).sum();
        let read_energy_joules = tensors.iter().map(|t| t.read_energy_joules).sum();
        let activation_energy_joules = tensors.iter().map(|t| t.activation_energy_joules).sum();
        let energy_joules = tensors.iter().map(|t| t.energy_joules).sum();
        let transfer: f64 = tensors.iter().map(|t| t.latency_seconds).sum();
        AccessReport {
            schema_version: REPORT_SCHEMA_VERSION,
            model: model.to_string(),
            bytes_fetched,
            activations,
            read_energy_joules,
            activation_energy_joules,
            energy_joules,
            fixed_latency_seconds: config.fixed_latency,
            latency_seconds: transfer + config.fixed_latency,
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorAccess> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per tensor plus a `*` total row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_access_csv(std::slice::from_ref(self), out)
    }
}

#[derive(Serialize)]
struct AccessRow<'a> {
    schema_version: u32,
    model: &'a str,
    tensor: &'a str,
    planes: String,
    bytes_fetched: u64,
    activations: u64,
    read_energy_joules: f64,
    activation_energy_joules: f64,
    energy_joules: f64,
    latency_seconds: f64,
}

/// CSV columns: schema_version, model, tensor, planes, bytes_fetched,
/// activations, read_energy_joules, activation_energy_joules, energy_joules,
/// latency_seconds.
pub fn write_access_csv<W: Write>(reports: &[AccessReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        for t in &r.tensors {
            w.serialize(AccessRow {
                schema_version: r.schema_version,
                model: &r.model,
                tensor: &t.name,
                planes: t.planes.to_string(),
                bytes_fetched: t.bytes_fetched,
                activations: t.activations,
                read_energy_joules: t.read_energy_joules,
                activation_energy_joules: t.activation_energy_joules,
                energy_joules: t.energy_joules,
                latency_seconds: t.latency_seconds,
            })?;
        }
        w.serialize(AccessRow {
            schema_version: r.schema_version,
            model: &r.model,
            tensor: "*",
            planes: String::new(),
            bytes_fetched: r.bytes_fetched,
            activations: r.activations,
            read_energy_joules: r.read_energy_joules,
            activation_energy_joules: r.activation_energy_joules,
            energy_joules: r.energy_joules,
            latency_seconds: r.latency_seconds,
        })?;
    }
    w.flush()?;
    Ok(())
}

struct Tally {
    bytes: u64,
    overhead: u64,
    planes: Vec<u64>,
    activations: u64,
}

impl Tally {
    fn new(n: usize) -> Self {
        Tally {
            bytes: 0,
            overhead: 0,
            planes: vec![0; n],
            activations: 0,
        }
    }

    fn finish(self, name: &str, k: usize, config: &DramConfig) -> TensorAccess {
        let read = self.bytes as f64 * 8.0 * config.energy_read_per_bit;
        let act = self.activations as f64 * config.energy_activate;
        TensorAccess {
            name: name.to_string(),
            planes: k,
            bytes_fetched: self.bytes,
            overhead_bytes: self.overhead,
            plane_bytes: self.planes,
            activations: self.activations,
            read_energy_joules: read,
            activation_energy_joules: act,
            energy_joules: read + act,
            latency_seconds: config.transfer_seconds(self.bytes),
        }
    }
}

fn prefix_access(t: &TensorStats, k: usize, config: &DramConfig) -> TensorAccess {
    let n = t.info.plane_count();
    let fetch = if t.layout == Layout::Raw { n } else { k };
    let mut tally = Tally::new(n);
    for sb in &t.info.superblocks {
        let overhead = (sb.header.header_len() + sb.header.meta_len) as u64;
        let run = sb.bytes_for_planes(fetch) as u64;
        tally.bytes += run;
        tally.overhead += overhead;
        for (rank, &len) in sb.header.plane_lens[..fetch].iter().enumerate() {
            tally.planes[rank] += len as u64;
        }
        tally.activations += config.activations(run);
    }
    tally.finish(&t.name, k, config)
}

/// Bit-plane model: fetch header, metadata and the top `k` planes of every
/// superblock, as a container prefix read does.
pub fn estimate_access(
    stats: &ContainerStats,
    schedule: &PrecisionSchedule,
    config: &DramConfig,
) -> Result<AccessReport> {
    config.validate()?;
    let tensors = stats
        .tensors
        .iter()
        .map(|t| {
            let k = schedule.resolve(&t.name, &t.info.format)?;
            Ok(prefix_access(t, k, config))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AccessReport::from_tensors("bitplane", tensors, config))
}

/// Kept bytes of segment `[start, end)` of a packed little-endian stream of
/// `word_bytes`-byte words when only the top `keep` bytes of each word are read.
fn kept_bytes(start: usize, end: usize, word_bytes: usize, keep: usize) -> u64 {
    let drop = word_bytes - keep;
    let count_below = |x: usize| -> usize {
        // positions p < x with p % word_bytes >= drop
        let full = x / word_bytes;
        let rem = x % word_bytes;
        full * keep + rem.saturating_sub(drop)
    };
    (count_below(end) - count_below(start)) as u64
}

/// Byte-level model over a byte-layout container (`Layout::Raw` tensors).
pub fn estimate_byte_level(
    stats: &ContainerStats,
    schedule: &PrecisionSchedule,
    config: &DramConfig,
) -> Result<AccessReport> {
    config.validate()?;
    let tensors = stats
        .tensors
        .iter()
        .map(|t| {
            if t.layout != Layout::Raw {
                return Err(Error::arg(format!(
                    "byte-level model needs the raw layout, `{}` is {}",
                    t.name,
                    t.layout.name()
                )));
            }
            let format = &t.info.format;
            let k = schedule.resolve(&t.name, format)?;
            let n = format.total_bits() as usize;
            let skippable = stats.algo == CompressionAlgo::None && n.is_multiple_of(8) && k < n;
            if !skippable {
                return Ok(prefix_access(t, n, config).with_planes(k));
            }
            let word_bytes = n / 8;
            let keep = k.div_ceil(8);
            let mut tally = Tally::new(n);
            for sb in &t.info.superblocks {
                let overhead = (sb.header.header_len() + sb.header.meta_len) as u64;
                let mut fetched = overhead;
                let mut pos = 0usize;
                for (rank, &len) in sb.header.plane_lens.iter().enumerate() {
                    debug_assert_eq!(
                        len,
                        SegmentKind::Bytes.raw_len(format, sb.header.value_count, rank)
                    );
                    let kept = kept_bytes(pos, pos + len, word_bytes, keep);
                    tally.planes[rank] += kept;
                    fetched += kept;
                    pos += len;
                }
                tally.bytes += fetched;
                tally.overhead += overhead;
                // strided reads still open every row of the superblock
                tally.activations += config.activations(sb.header.serialized_len() as u64);
            }
            Ok(tally.finish(&t.name, k, config))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AccessReport::from_tensors("byte_level", tensors, config))
}

impl TensorAccess {
    fn with_planes(mut self, k: usize) -> Self {
        self.planes = k;
        self
    }
}

/// Paired estimates for the same data stored bit-plane (P) and byte-level (T).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutComparison {
    pub bitplane: AccessReport,
    pub byte_level: AccessReport,
}

/// Builds the proposed and byte-level containers in memory and estimates
/// both under one schedule and DRAM configuration.
pub fn compare_layouts_inputs(
    inputs: &[TensorInput],
    settings: &WriteSettings,
    schedule: &PrecisionSchedule,
    config: &DramConfig,
) -> Result<LayoutComparison> {
    let proposed = reader_from_bytes(build_container(inputs, settings)?)?.stats();
    let raw_settings = WriteSettings {
        layout: Some(LayoutOverride::Raw),
        ..settings.clone()
    };
    let baseline = reader_from_bytes(build_container(inputs, &raw_settings)?)?.stats();
    Ok(LayoutComparison {
        bitplane: estimate_access(&proposed, schedule, config)?,
        byte_level: estimate_byte_level(&baseline, schedule, config)?,
    })
}

pub fn compare_layouts(
    manifest: &TensorManifest,
    base_dir: &Path,
    settings: &WriteSettings,
    schedule: &PrecisionSchedule,
    config: &DramConfig,
) -> Result<LayoutComparison> {
    let inputs = manifest.ingest(base_dir, &settings.registry)?;
    compare_layouts_inputs(&inputs, settings, schedule, config)
}

/// Estimates the container as stored (P) against a byte-level re-encoding
/// of its decoded tensors with the same algorithm and superblock size (T).
pub fn compare_container<R: std::io::Read + std::io::Seek>(
    reader: &mut ContainerReader<R>,
    schedule: &PrecisionSchedule,
    config: &DramConfig,
) -> Result<LayoutComparison> {
    let stats = reader.stats();
    let bitplane = estimate_access(&stats, schedule, config)?;
    let inputs = decode_inputs(reader)?;
    let settings = WriteSettings {
        algo: reader.header().algo,
        superblock_values: reader.header().superblock_values,
        layout: Some(LayoutOverride::Raw),
        ..Default::default()
    };
    let baseline = reader_from_bytes(build_container(&inputs, &settings)?)?.stats();
    Ok(LayoutComparison {
        bitplane,
        byte_level: estimate_byte_level(&baseline, schedule, config)?,
    })
}

/// Decodes every tensor of a container back into writable inputs.
pub fn decode_inputs<R: std::io::Read + std::io::Seek>(
    reader: &mut ContainerReader<R>,
) -> Result<Vec<TensorInput>> {
    let infos = reader.tensors().to_vec();
    infos
        .iter()
        .map(|info| {
            let data = reader
                .read_tensor(&info.name, None)?
                .data
                .into_value_block();
            Ok(TensorInput {
                name: info.name.clone(),
                layout: info.layout,
                kv: info.kv,
                data,
            })
        })
        .collect()
}
