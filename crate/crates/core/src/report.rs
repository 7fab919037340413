//! Compression experiment reports: per-tensor and per-plane breakdowns,
//! size-weighted aggregates, JSON and CSV output.

use std::io::Write;

use serde::Serialize;

use crate::codec::CompressionAlgo;
use crate::container::{
    build_container, reader_from_bytes, ContainerStats, LayoutOverride, PlaneStats, TensorInput,
    WriteSettings,
};
use crate::costmodel::REPORT_SCHEMA_VERSION;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorReport {
    /// Which encoding run the row belongs to, e.g. `raw` or `bitplane`.
    pub variant: String,
    pub tensor: String,
    pub dtype: String,
    pub layout: String,
    pub algo: String,
    pub block_bytes: usize,
    pub original_bytes: u64,
    pub stored_bytes: u64,
    pub ratio: f64,
    pub footprint_reduction_pct: f64,
    /// Superblock headers plus per-group metadata.
    pub overhead_bytes: u64,
    pub planes: Vec<PlaneStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub variant: String,
    pub original_bytes: u64,
    pub stored_bytes: u64,
    pub ratio: f64,
    pub footprint_reduction_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub algo: String,
    pub superblock_values: usize,
    pub tensors: Vec<TensorReport>,
    pub aggregates: Vec<Aggregate>,
}

/// `1 - 1/ratio`, in percent.
pub fn footprint_reduction_pct(original: u64, stored: u64) -> f64 {
    if original == 0 || stored == 0 {
        0.0
    } else {
        100.0 * (1.0 - stored as f64 / original as f64)
    }
}

fn ratio(original: u64, stored: u64) -> f64 {
    if stored == 0 {
        1.0
    } else {
        original as f64 / stored as f64
    }
}

impl ExperimentReport {
    fn empty(algo: CompressionAlgo, superblock_values: usize) -> Self {
        ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            algo: algo.to_string(),
            superblock_values,
            tensors: Vec::new(),
            aggregates: Vec::new(),
        }
    }

    /// Report over one container's tensors.
    pub fn from_stats(stats: &ContainerStats) -> Self {
        let mut report = Self::empty(stats.algo, stats.superblock_values);
        report.push_variant("container", stats);
        report
    }

    fn push_variant(&mut self, variant: &str, stats: &ContainerStats) {
        for t in &stats.tensors {
            self.tensors.push(TensorReport {
                variant: variant.to_string(),
                tensor: t.name.clone(),
                dtype: t.dtype.clone(),
                layout: t.layout.name().to_string(),
                algo: t.algo.clone(),
                block_bytes: t.block_bytes(stats.superblock_values),
                original_bytes: t.original_bytes,
                stored_bytes: t.stored_bytes,
                ratio: t.ratio(),
                footprint_reduction_pct: footprint_reduction_pct(t.original_bytes, t.stored_bytes),
                overhead_bytes: t.header_bytes + t.meta_bytes,
                planes: t.planes.clone(),
            });
        }
        let original: u64 = stats.tensors.iter().map(|t| t.original_bytes).sum();
        let stored: u64 = stats.tensors.iter().map(|t| t.stored_bytes).sum();
        self.aggregates.push(Aggregate {
            variant: variant.to_string(),
            original_bytes: original,
            stored_bytes: stored,
            ratio: ratio(original, stored),
            footprint_reduction_pct: footprint_reduction_pct(original, stored),
        });
    }

    pub fn aggregate(&self, variant: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.variant == variant)
    }

    pub fn tensor(&self, variant: &str, name: &str) -> Option<&TensorReport> {
        self.tensors
            .iter()
            .find(|t| t.variant == variant && t.tensor == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per plane, one `overhead` row and one `total` row per tensor,
    /// then one `aggregate` row per variant. Plane and overhead rows sum to
    /// the tensor's stored bytes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for t in &self.tensors {
            let row = |kind: &'static str,
                       rank: Option<usize>,
                       bit: Option<usize>,
                       orig: u64,
                       stored: u64,
                       ratio: f64| CsvRow {
                schema_version: self.schema_version,
                variant: &t.variant,
                tensor: &t.tensor,
                dtype: &t.dtype,
                layout: &t.layout,
                algo: &t.algo,
                block_bytes: t.block_bytes,
                row: kind,
                rank,
                bit,
                original_bytes: orig,
                stored_bytes: stored,
                ratio,
                footprint_reduction_pct: footprint_reduction_pct(orig, stored),
            };
            for p in &t.planes {
                w.serialize(row(
                    "plane",
                    Some(p.rank),
                    p.bit,
                    p.raw_bytes,
                    p.stored_bytes,
                    p.ratio,
                ))?;
            }
            w.serialize(row("overhead", None, None, 0, t.overhead_bytes, 0.0))?;
            w.serialize(row(
                "total",
                None,
                None,
                t.original_bytes,
                t.stored_bytes,
                t.ratio,
            ))?;
        }
        for a in &self.aggregates {
            w.serialize(CsvRow {
                schema_version: self.schema_version,
                variant: &a.variant,
                tensor: "*",
                dtype: "",
                layout: "",
                algo: &self.algo,
                block_bytes: 0,
                row: "aggregate",
                rank: None,
                bit: None,
                original_bytes: a.original_bytes,
                stored_bytes: a.stored_bytes,
                ratio: a.ratio,
                footprint_reduction_pct: a.footprint_reduction_pct,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    schema_version: u32,
    variant: &'a str,
    tensor: &'a str,
    dtype: &'a str,
    layout: &'a str,
    algo: &'a str,
    block_bytes: usize,
    row: &'static str,
    rank: Option<usize>,
    bit: Option<usize>,
    original_bytes: u64,
    stored_bytes: u64,
    ratio: f64,
    footprint_reduction_pct: f64,
}

/// Encodes the same tensors as byte-level (`raw`), plain bit-plane
/// (`bitplane`) and clustered KV (`kv`, weights unchanged) and reports all
/// three. `settings.layout` is ignored.
pub fn compare_compression(
    inputs: &[TensorInput],
    settings: &WriteSettings,
) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::empty(settings.algo, settings.superblock_values);
    for (variant, layout) in [
        ("raw", LayoutOverride::Raw),
        ("bitplane", LayoutOverride::Bitplane),
        ("kv", LayoutOverride::Kv),
    ] {
        let s = WriteSettings {
            layout: Some(layout),
            ..settings.clone()
        };
        let stats = reader_from_bytes(build_container(inputs, &s)?)?.stats();
        report.push_variant(variant, &stats);
    }
    Ok(report)
}
