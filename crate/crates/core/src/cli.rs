//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data or
//! integrity error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::codec::{CompressionAlgo, DEFAULT_ZSTD_LEVEL};
use crate::container::{
    write_container, ContainerReader, LayoutOverride, TensorManifest, WriteSettings,
    DEFAULT_SUPERBLOCK_VALUES,
};
use crate::costmodel::{
    compare_container, write_access_csv, DramConfig, Precision, PrecisionSchedule,
    REPORT_SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::float_format::FormatRegistry;
use crate::report::{compare_compression, ExperimentReport};
use crate::synth::{entropy_oracle, write_corpus, OracleLayout, SynthPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "bplc",
    version,
    about = "Bit-plane tensor compression and DRAM access estimates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic tensors and a manifest from a JSON plan.
    Synth {
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode the tensors of a manifest into a container.
    Compress {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        encode: EncodeArgs,
    },
    /// Decode tensors to `<name>.bin` files, optionally at reduced precision.
    Decompress {
        container: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Plane count or precision name (e.g. 8, fp8, full).
        #[arg(long)]
        planes: Option<String>,
        /// Decode only this tensor.
        #[arg(long)]
        tensor: Option<String>,
    },
    /// Compression statistics for a container, or a layout comparison for a manifest.
    Stats {
        #[arg(required_unless_present = "manifest", conflicts_with = "manifest")]
        container: Option<PathBuf>,
        /// Encode this manifest as raw, bitplane and kv and compare.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Write `<out>.json` and `<out>.csv` instead of printing JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        encode: EncodeArgs,
    },
    /// DRAM traffic, energy and latency for a precision schedule.
    Simulate {
        container: PathBuf,
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Uniform precision for every tensor when no schedule is given.
        #[arg(long, conflicts_with = "schedule")]
        planes: Option<String>,
        #[arg(long)]
        dram_config: Option<PathBuf>,
        /// Write `<out>.json` and `<out>.csv` instead of printing JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Order-0 entropy bounds of a manifest's tensors under each layout.
    Entropy {
        manifest: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SUPERBLOCK_VALUES)]
        superblock: usize,
        #[arg(long)]
        group_tokens: Option<usize>,
        /// Write per-segment bounds as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    None,
    Lz4,
    Zstd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Bitplane,
    Raw,
    Kv,
}

#[derive(Clone, Debug, Args)]
pub struct EncodeArgs {
    #[arg(long, value_enum, default_value_t = AlgoArg::Zstd)]
    pub algo: AlgoArg,
    #[arg(long, default_value_t = DEFAULT_ZSTD_LEVEL, allow_negative_numbers = true)]
    pub zstd_level: i32,
    /// Values per superblock: 8192, 16384, 32768 or 65536.
    #[arg(long, default_value_t = DEFAULT_SUPERBLOCK_VALUES)]
    pub superblock: usize,
    /// Tokens per KV group; overrides the manifest.
    #[arg(long)]
    pub group_tokens: Option<usize>,
    /// Force one layout for every tensor.
    #[arg(long, value_enum)]
    pub layout: Option<LayoutArg>,
}

impl EncodeArgs {
    pub fn settings(&self) -> Result<WriteSettings> {
        let algo = match self.algo {
            AlgoArg::None => CompressionAlgo::None,
            AlgoArg::Lz4 => CompressionAlgo::Lz4,
            AlgoArg::Zstd => CompressionAlgo::Zstd {
                level: self.zstd_level,
            },
        };
        Ok(WriteSettings {
            algo,
            superblock_values: self.superblock,
            group_tokens: self.group_tokens,
            layout: self.layout.map(|l| match l {
                LayoutArg::Bitplane => LayoutOverride::Bitplane,
                LayoutArg::Raw => LayoutOverride::Raw,
                LayoutArg::Kv => LayoutOverride::Kv,
            }),
            registry: FormatRegistry::default(),
        })
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Results go to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(&cli.command) {
        Ok(output) => {
            if !output.is_empty() {
                println!("{output}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_USAGE
            }
        }
    }
}

/// Runs one command and returns what it prints.
pub fn execute(command: &Command) -> Result<String> {
    match command {
        Command::Synth { plan, out } => {
            let manifest = write_corpus(&SynthPlan::load(plan)?, out, &FormatRegistry::default())?;
            Ok(serde_json::to_string_pretty(&serde_json::json!({
                "schema_version": REPORT_SCHEMA_VERSION,
                "manifest": out.join("manifest.json"),
                "tensors": manifest.tensors.len(),
            }))?)
        }
        Command::Compress {
            manifest,
            out,
            encode,
        } => {
            let settings = encode.settings()?;
            let m = TensorManifest::load(manifest)?;
            let summary = write_container(&m, base_dir(manifest), &settings, out)?;
            Ok(serde_json::to_string_pretty(&serde_json::json!({
                "schema_version": REPORT_SCHEMA_VERSION,
                "summary": summary,
            }))?)
        }
        Command::Decompress {
            container,
            out,
            planes,
            tensor,
        } => decompress(container, out, planes.as_deref(), tensor.as_deref()),
        Command::Stats {
            container,
            manifest,
            out,
            encode,
        } => {
            let report = match (container, manifest) {
                (Some(path), _) => {
                    ExperimentReport::from_stats(&ContainerReader::open(path)?.stats())
                }
                (None, Some(path)) => {
                    let settings = encode.settings()?;
                    let inputs =
                        TensorManifest::load(path)?.ingest(base_dir(path), &settings.registry)?;
                    compare_compression(&inputs, &settings)?
                }
                (None, None) => {
                    return Err(Error::Argument("need a container or --manifest".into()))
                }
            };
            let json = report.to_json()?;
            match out {
                Some(prefix) => {
                    fs::write(with_ext(prefix, "json"), &json)?;
                    report.write_csv(fs::File::create(with_ext(prefix, "csv"))?)?;
                    Ok(String::new())
                }
                None => Ok(json),
            }
        }
        Command::Simulate {
            container,
            schedule,
            planes,
            dram_config,
            out,
        } => {
            let schedule = match (schedule, planes) {
                (Some(path), _) => PrecisionSchedule::load(path)?,
                (None, Some(p)) => PrecisionSchedule::uniform(parse_precision(p)),
                (None, None) => PrecisionSchedule::full(),
            };
            let config = match dram_config {
                Some(path) => DramConfig::load(path)?,
                None => DramConfig::default(),
            };
            let mut reader = ContainerReader::open(container)?;
            let cmp = compare_container(&mut reader, &schedule, &config)?;
            let json = serde_json::to_string_pretty(&serde_json::json!({
                "schema_version": REPORT_SCHEMA_VERSION,
                "dram_config": config,
                "schedule": schedule,
                "bitplane": cmp.bitplane,
                "byte_level": cmp.byte_level,
            }))?;
            match out {
                Some(prefix) => {
                    fs::write(with_ext(prefix, "json"), &json)?;
                    write_access_csv(
                        &[cmp.bitplane, cmp.byte_level],
                        fs::File::create(with_ext(prefix, "csv"))?,
                    )?;
                    Ok(String::new())
                }
                None => Ok(json),
            }
        }
        Command::Entropy {
            manifest,
            superblock,
            group_tokens,
            out,
        } => entropy(manifest, *superblock, *group_tokens, out.as_deref()),
    }
}

fn base_dir(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or(Path::new("."))
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn parse_precision(s: &str) -> Precision {
    s.parse()
        .map_or_else(|_| Precision::Named(s.to_string()), Precision::Planes)
}

#[derive(Serialize)]
struct DecodedTensor {
    name: String,
    planes: usize,
    values: usize,
    bytes_touched: u64,
    path: PathBuf,
}

fn decompress(
    container: &Path,
    out: &Path,
    planes: Option<&str>,
    only: Option<&str>,
) -> Result<String> {
    let mut reader = ContainerReader::open(container)?;
    let schedule = planes.map(|p| PrecisionSchedule::uniform(parse_precision(p)));
    let names: Vec<String> = match only {
        Some(name) => vec![reader.tensor(name)?.name.clone()],
        None => reader.tensors().iter().map(|t| t.name.clone()).collect(),
    };
    // resolve every precision before writing anything
    let ks = names
        .iter()
        .map(|name| {
            let format = &reader.tensor(name)?.format;
            schedule
                .as_ref()
                .map(|s| s.resolve(name, format))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    let mut decoded = Vec::new();
    for (name, k) in names.iter().zip(ks) {
        let read = reader.read_tensor(name, k)?;
        let block = read.data.into_value_block();
        let file: String = name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let path = out.join(format!("{file}.bin"));
        fs::write(&path, block.to_packed())?;
        decoded.push(DecodedTensor {
            name: name.clone(),
            planes: read.planes,
            values: block.len(),
            bytes_touched: read.bytes_touched,
            path,
        });
    }
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "tensors": decoded,
    }))?)
}

#[derive(Serialize)]
struct EntropyRow<'a> {
    schema_version: u32,
    tensor: &'a str,
    layout: &'static str,
    superblock: usize,
    segment: usize,
    bytes: usize,
    byte_bound: f64,
    bit_bound: f64,
}

fn entropy(
    manifest: &Path,
    superblock: usize,
    group_tokens: Option<usize>,
    out: Option<&Path>,
) -> Result<String> {
    let registry = FormatRegistry::default();
    let inputs = TensorManifest::load(manifest)?.ingest(base_dir(manifest), &registry)?;
    let mut summary = Vec::new();
    let mut csv_out = out
        .map(|p| fs::File::create(p).map(csv::Writer::from_writer))
        .transpose()?;
    for input in &inputs {
        let mut layouts = vec![
            ("raw", OracleLayout::ByteRaw),
            ("bitplane", OracleLayout::BitPlane),
        ];
        if let Some(kv) = input.kv {
            layouts.push((
                "kv",
                OracleLayout::KvClustered {
                    channels: kv.channels,
                    tokens_per_group: group_tokens.unwrap_or(kv.tokens_per_group),
                },
            ));
        }
        for (label, layout) in layouts {
            let report = entropy_oracle(&input.data, layout, superblock)?;
            if let Some(w) = csv_out.as_mut() {
                for s in &report.segments {
                    w.serialize(EntropyRow {
                        schema_version: REPORT_SCHEMA_VERSION,
                        tensor: &input.name,
                        layout: label,
                        superblock: s.superblock,
                        segment: s.segment,
                        bytes: s.bytes,
                        byte_bound: s.byte_bound,
                        bit_bound: s.bit_bound,
                    })?;
                }
            }
            summary.push(serde_json::json!({
                "tensor": input.name,
                "layout": label,
                "original_bytes": report.original_bytes,
                "bound_bytes": report.bound_bytes(),
                "bound_ratio": report.bound_ratio(),
            }));
        }
    }
    if let Some(mut w) = csv_out {
        w.flush()?;
    }
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "bounds": summary,
    }))?)
}
