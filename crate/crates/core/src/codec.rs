//! Per-plane block compression of bit-plane matrices.
//!
//! A superblock compresses each of its `n` plane segments independently so a
//! reader can decode the top `k` planes without touching the rest. A plane
//! whose compressed form is not smaller than the plane itself is stored raw;
//! a stored length equal to the raw length marks it.
//!
//! Serialized superblock (little-endian):
//!
//! ```text
//! value_count u32 | plane_count u8 | meta_len u32 | plane_len u32 x plane_count
//! | meta bytes | plane payloads, MSB plane first
//! ```

use std::fmt;

use crate::bitplane::{plane_len, BitPlaneMatrix};
use crate::error::{Error, Result};
use crate::float_format::{packed_len, FloatFormat};
use crate::kv::DeltaMeta;

pub const DEFAULT_ZSTD_LEVEL: i32 = 3;

/// Fixed part of a superblock header, before the plane-length table.
pub const SUPERBLOCK_FIXED_HEADER: usize = 4 + 1 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CompressionAlgo {
    None,
    Lz4,
    Zstd { level: i32 },
}

impl Default for CompressionAlgo {
    fn default() -> Self {
        CompressionAlgo::Zstd {
            level: DEFAULT_ZSTD_LEVEL,
        }
    }
}

impl CompressionAlgo {
    pub fn zstd() -> Self {
        Self::default()
    }

    /// Stable wire identifier.
    pub fn id(self) -> u8 {
        match self {
            CompressionAlgo::None => 0,
            CompressionAlgo::Lz4 => 1,
            CompressionAlgo::Zstd { .. } => 2,
        }
    }

    /// Level recorded in container headers; 0 unless zstd.
    pub fn level(self) -> i32 {
        match self {
            CompressionAlgo::Zstd { level } => level,
            _ => 0,
        }
    }

    pub fn from_id(id: u8, level: i32) -> Result<Self> {
        match id {
            0 => Ok(CompressionAlgo::None),
            1 => Ok(CompressionAlgo::Lz4),
            2 => Ok(CompressionAlgo::Zstd { level }),
            other => Err(Error::corrupt(format!("unknown compression id {other}"))),
        }
    }

    pub fn parse(name: &str, zstd_level: i32) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "none" => Ok(CompressionAlgo::None),
            "lz4" => Ok(CompressionAlgo::Lz4),
            "zstd" => Ok(CompressionAlgo::Zstd { level: zstd_level }),
            other => Err(Error::arg(format!("unknown algorithm `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CompressionAlgo::None => "none",
            CompressionAlgo::Lz4 => "lz4",
            CompressionAlgo::Zstd { .. } => "zstd",
        }
    }
}

impl fmt::Display for CompressionAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompressionAlgo::Zstd { level } => write!(f, "zstd:{level}"),
            other => f.write_str(other.name()),
        }
    }
}

/// What a superblock's segments hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    /// Segment `i` is bit-plane rank `i` (MSB first).
    Planes,
    /// Byte-level baseline: the packed word stream cut into `n` consecutive
    /// chunks of `ceil(m / 8)` bytes (the last ones may be short or empty).
    Bytes,
}

impl SegmentKind {
    /// Uncompressed length of segment `index`.
    pub fn raw_len(self, format: &FloatFormat, value_count: usize, index: usize) -> usize {
        let chunk = plane_len(value_count);
        match self {
            SegmentKind::Planes => chunk,
            SegmentKind::Bytes => {
                let total = packed_len(value_count, format.total_bits());
                total.saturating_sub(index * chunk).min(chunk)
            }
        }
    }
}

/// Compressed form of one superblock.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedSuperblock {
    format: FloatFormat,
    kind: SegmentKind,
    value_count: usize,
    algo: CompressionAlgo,
    meta: Option<DeltaMeta>,
    payloads: Vec<Vec<u8>>,
}

/// A decoded prefix of a superblock together with the bytes that had to be
/// read to produce it.
#[derive(Clone, Debug)]
pub struct Decompressed {
    pub matrix: BitPlaneMatrix,
    pub bytes_touched: usize,
}

impl CompressedSuperblock {
    pub fn format(&self) -> &FloatFormat {
        &self.format
    }

    pub fn kind(&self) -> SegmentKind {
        self.kind
    }

    pub fn value_count(&self) -> usize {
        self.value_count
    }

    pub fn plane_count(&self) -> usize {
        self.payloads.len()
    }

    pub fn algo(&self) -> CompressionAlgo {
        self.algo
    }

    pub fn meta(&self) -> Option<&DeltaMeta> {
        self.meta.as_ref()
    }

    pub fn meta_len(&self) -> usize {
        self.meta.as_ref().map_or(0, DeltaMeta::channels)
    }

    /// Stored length of each segment, MSB plane first.
    pub fn plane_lens(&self) -> Vec<usize> {
        self.payloads.iter().map(Vec::len).collect()
    }

    pub fn payload(&self, rank: usize) -> &[u8] {
        &self.payloads[rank]
    }

    pub fn is_raw(&self, rank: usize) -> bool {
        self.payloads[rank].len() == self.kind.raw_len(&self.format, self.value_count, rank)
    }

    pub fn header_len(&self) -> usize {
        header_len(self.plane_count())
    }

    /// Uncompressed size of the segments.
    pub fn raw_len(&self) -> usize {
        (0..self.plane_count())
            .map(|i| self.kind.raw_len(&self.format, self.value_count, i))
            .sum()
    }

    /// `S_comp`: header, metadata and all payloads.
    pub fn serialized_len(&self) -> usize {
        self.bytes_for_planes(self.plane_count())
    }

    /// Bytes read to decode the top `k` planes.
    pub fn bytes_for_planes(&self, k: usize) -> usize {
        self.header_len() + self.meta_len() + self.payloads[..k].iter().map(Vec::len).sum::<usize>()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.reserve(self.serialized_len());
        out.extend_from_slice(&(self.value_count as u32).to_le_bytes());
        out.push(self.plane_count() as u8);
        out.extend_from_slice(&(self.meta_len() as u32).to_le_bytes());
        for p in &self.payloads {
            out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        }
        if let Some(meta) = &self.meta {
            out.extend_from_slice(&meta.base_exponents);
        }
        for p in &self.payloads {
            out.extend_from_slice(p);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out);
        out
    }

    /// Parses a superblock holding the top `k <= n` planes (a prefix read
    /// may stop after plane `k`).
    pub fn parse_prefix(
        format: FloatFormat,
        kind: SegmentKind,
        algo: CompressionAlgo,
        bytes: &[u8],
    ) -> Result<(Self, usize)> {
        let header = SuperblockHeader::parse(bytes)?;
        let n = format.total_bits() as usize;
        if header.plane_lens.len() != n {
            return Err(Error::corrupt(format!(
                "superblock has {} planes, format `{format}` has {n}",
                header.plane_lens.len()
            )));
        }
        let mut pos = header.header_len();
        let meta = if header.meta_len > 0 {
            let end = pos + header.meta_len;
            let slice = bytes
                .get(pos..end)
                .ok_or_else(|| Error::corrupt("superblock metadata truncated"))?;
            pos = end;
            Some(DeltaMeta::from_bytes(slice))
        } else {
            None
        };
        let mut payloads = Vec::new();
        for &len in &header.plane_lens {
            match bytes.get(pos..pos + len) {
                Some(p) => payloads.push(p.to_vec()),
                None => break,
            }
            pos += len;
        }
        Ok((
            CompressedSuperblock {
                format,
                kind,
                value_count: header.value_count,
                algo,
                meta,
                payloads,
            },
            pos,
        ))
    }
}

/// The self-describing part of a serialized superblock.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperblockHeader {
    pub value_count: usize,
    pub meta_len: usize,
    pub plane_lens: Vec<usize>,
}

pub fn header_len(plane_count: usize) -> usize {
    SUPERBLOCK_FIXED_HEADER + 4 * plane_count
}

impl SuperblockHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let fixed = bytes
            .get(..SUPERBLOCK_FIXED_HEADER)
            .ok_or_else(|| Error::corrupt("superblock header truncated"))?;
        let value_count = u32::from_le_bytes(fixed[0..4].try_into().unwrap()) as usize;
        let plane_count = fixed[4] as usize;
        let meta_len = u32::from_le_bytes(fixed[5..9].try_into().unwrap()) as usize;
        let table = bytes
            .get(SUPERBLOCK_FIXED_HEADER..header_len(plane_count))
            .ok_or_else(|| Error::corrupt("superblock plane table truncated"))?;
        let plane_lens = table
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        if value_count == 0 || plane_count == 0 {
            return Err(Error::corrupt("empty superblock"));
        }
        Ok(SuperblockHeader {
            value_count,
            meta_len,
            plane_lens,
        })
    }

    pub fn header_len(&self) -> usize {
        header_len(self.plane_lens.len())
    }

    pub fn serialized_len(&self) -> usize {
        self.header_len() + self.meta_len + self.plane_lens.iter().sum::<usize>()
    }
}

struct Engine {
    algo: CompressionAlgo,
    zstd: Option<zstd::bulk::Compressor<'static>>,
}

impl Engine {
    fn new(algo: CompressionAlgo) -> Result<Self> {
        let zstd = match algo {
            CompressionAlgo::Zstd { level } => Some(zstd::bulk::Compressor::new(level).map_err(
                |e| Error::Codec {
                    plane: 0,
                    message: e.to_string(),
                },
            )?),
            _ => None,
        };
        Ok(Engine { algo, zstd })
    }

    fn compress(&mut self, plane: usize, raw: &[u8]) -> Result<Vec<u8>> {
        let packed = match self.algo {
            CompressionAlgo::None => return Ok(raw.to_vec()),
            CompressionAlgo::Lz4 => lz4_flex::block::compress(raw),
            CompressionAlgo::Zstd { .. } => self
                .zstd
                .as_mut()
                .expect("zstd engine")
                .compress(raw)
                .map_err(|e| Error::Codec {
                    plane,
                    message: e.to_string(),
                })?,
        };
        Ok(if packed.len() >= raw.len() {
            raw.to_vec()
        } else {
            packed
        })
    }
}

fn decode_segment(
    algo: CompressionAlgo,
    rank: usize,
    stored: &[u8],
    raw_len: usize,
) -> Result<Vec<u8>> {
    if stored.len() == raw_len {
        return Ok(stored.to_vec());
    }
    let integrity = |message: String| Error::Integrity {
        plane: rank,
        message,
    };
    let out = match algo {
        CompressionAlgo::None => {
            return Err(integrity(format!(
                "uncompressed plane has {} bytes, expected {raw_len}",
                stored.len()
            )))
        }
        CompressionAlgo::Lz4 => {
            lz4_flex::block::decompress(stored, raw_len).map_err(|e| integrity(e.to_string()))?
        }
        CompressionAlgo::Zstd { .. } => {
            zstd::bulk::decompress(stored, raw_len).map_err(|e| integrity(e.to_string()))?
        }
    };
    if out.len() != raw_len {
        return Err(integrity(format!(
            "decoded {} bytes, expected {raw_len}",
            out.len()
        )));
    }
    Ok(out)
}

/// Compresses every plane of a full matrix independently.
pub fn compress_superblock(
    matrix: &BitPlaneMatrix,
    algo: CompressionAlgo,
    meta: Option<DeltaMeta>,
) -> Result<CompressedSuperblock> {
    if matrix.present_planes() != matrix.total_planes() {
        return Err(Error::arg(format!(
            "only full matrices are compressed ({} of {} planes present)",
            matrix.present_planes(),
            matrix.total_planes()
        )));
    }
    if matrix.count() == 0 {
        return Err(Error::arg("superblock needs at least one value"));
    }
    let segments: Vec<&[u8]> = matrix.planes().collect();
    compress_segments(
        matrix.format().clone(),
        SegmentKind::Planes,
        matrix.count(),
        &segments,
        algo,
        meta,
    )
}

/// Compresses the byte-level baseline layout of `packed` words.
pub fn compress_bytes(
    format: &FloatFormat,
    value_count: usize,
    packed: &[u8],
    algo: CompressionAlgo,
) -> Result<CompressedSuperblock> {
    if value_count == 0 {
        return Err(Error::arg("superblock needs at least one value"));
    }
    let n = format.total_bits() as usize;
    let chunk = plane_len(value_count);
    let segments: Vec<&[u8]> = (0..n)
        .map(|i| {
            let start = (i * chunk).min(packed.len());
            let end = ((i + 1) * chunk).min(packed.len());
            &packed[start..end]
        })
        .collect();
    compress_segments(
        format.clone(),
        SegmentKind::Bytes,
        value_count,
        &segments,
        algo,
        None,
    )
}

fn compress_segments(
    format: FloatFormat,
    kind: SegmentKind,
    value_count: usize,
    segments: &[&[u8]],
    algo: CompressionAlgo,
    meta: Option<DeltaMeta>,
) -> Result<CompressedSuperblock> {
    let mut engine = Engine::new(algo)?;
    let payloads = segments
        .iter()
        .enumerate()
        .map(|(rank, raw)| {
            if raw.is_empty() {
                Ok(Vec::new())
            } else {
                engine.compress(rank, raw)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompressedSuperblock {
        format,
        kind,
        value_count,
        algo,
        meta,
        payloads,
    })
}

fn resolve_k(sb: &CompressedSuperblock, k: Option<usize>) -> Result<usize> {
    let n = sb.format.total_bits() as usize;
    let k = k.unwrap_or(n);
    if k == 0 || k > n {
        return Err(Error::arg(format!("plane count {k} outside 1..={n}")));
    }
    if k > sb.plane_count() {
        return Err(Error::corrupt(format!(
            "superblock holds {} planes, {k} requested",
            sb.plane_count()
        )));
    }
    Ok(k)
}

/// Decodes segments `0..k`.
pub(crate) fn decompress_segments(sb: &CompressedSuperblock, k: usize) -> Result<Vec<Vec<u8>>> {
    (0..k)
        .map(|rank| {
            let raw_len = sb.kind.raw_len(&sb.format, sb.value_count, rank);
            decode_segment(sb.algo, rank, &sb.payloads[rank], raw_len)
        })
        .collect()
}

/// Decodes the top `k` planes (all planes when `k` is `None`).
pub fn decompress_superblock(sb: &CompressedSuperblock, k: Option<usize>) -> Result<Decompressed> {
    if sb.kind != SegmentKind::Planes {
        return Err(Error::arg("byte-layout superblock has no bit-planes"));
    }
    let k = resolve_k(sb, k)?;
    let planes = decompress_segments(sb, k)?;
    let refs: Vec<&[u8]> = planes.iter().map(Vec::as_slice).collect();
    let matrix = BitPlaneMatrix::from_planes(sb.format.clone(), sb.value_count, &refs)?;
    Ok(Decompressed {
        matrix,
        bytes_touched: sb.bytes_for_planes(k),
    })
}

/// Decodes a byte-layout superblock back to its packed words.
pub fn decompress_bytes(sb: &CompressedSuperblock) -> Result<Vec<u8>> {
    if sb.kind != SegmentKind::Bytes {
        return Err(Error::arg("bit-plane superblock is not byte-level"));
    }
    Ok(decompress_segments(sb, sb.plane_count())?.concat())
}

/// `S_orig / S_comp`.
pub fn compression_ratio(orig_bytes: u64, comp_bytes: u64) -> Result<f64> {
    if comp_bytes == 0 {
        return Err(Error::arg("compressed size must be positive"));
    }
    Ok(orig_bytes as f64 / comp_bytes as f64)
}

/// `1 - 1 / ratio`, the fraction of the original footprint saved.
pub fn footprint_reduction(ratio: f64) -> f64 {
    1.0 - 1.0 / ratio
}
