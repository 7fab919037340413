//! The `BPLC` container: compressed tensors with a directory that allows
//! per-tensor, per-superblock prefix-plane reads.
//!
//! All integers are little-endian.
//!
//! ```text
//! header     magic "BPLC" | version u16 | flags u16 | algo u8 | zstd_level i8
//!            | superblock_m u32 | tensor_count u32
//! directory  per tensor: name_len u16 | name | dtype_id u8
//!            | (dtype 255 only: E u8 | F u8 | bias i16) | layout u8
//!            | element_count u64 | (kv only: tokens_per_group u16 | channels u32)
//!            | superblock_count u32 | first_offset u64
//! data       superblocks of each tensor, back to back from first_offset
//! ```
//!
//! Weights tensors are cut into superblocks of `superblock_m` values. KV
//! tensors store one token group per superblock with the per-channel base
//! exponents as metadata. Raw tensors hold the byte-level layout cut into
//! plane-sized chunks and exist for baseline measurements.

use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitplane::{aggregate, disaggregate, plane_len, top_bits_mask};
use crate::codec::{
    compress_bytes, compress_superblock, decompress_bytes, decompress_superblock, header_len,
    CompressedSuperblock, CompressionAlgo, SegmentKind, SuperblockHeader, SUPERBLOCK_FIXED_HEADER,
};
use crate::error::{Error, Result};
use crate::float_format::{
    packed_len, unpack_words, FloatFormat, FormatRegistry, ValueBlock, BUILTIN_FORMATS,
};
use crate::kv::{
    delta_forward, delta_inverse, group_by_channel, kv_bitplane_concat, split_groups, ungroup,
    ChannelGroupedBlock, TokenGroup, DEFAULT_GROUP_TOKENS, MAX_GROUP_TOKENS,
};

pub const MAGIC: [u8; 4] = *b"BPLC";
pub const VERSION: u16 = 1;
pub const FILE_HEADER_LEN: usize = 18;
pub const CUSTOM_DTYPE_ID: u8 = 255;
pub const DEFAULT_SUPERBLOCK_VALUES: usize = 32768;
pub const SUPERBLOCK_SIZES: [usize; 4] = [8192, 16384, 32768, 65536];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Bit-plane disaggregation of consecutive values.
    Weights,
    /// Channel grouping, exponent delta, concatenated bit-planes.
    Kv,
    /// Byte-level words, no transform.
    Raw,
}

impl Layout {
    pub fn id(self) -> u8 {
        match self {
            Layout::Weights => 0,
            Layout::Kv => 1,
            Layout::Raw => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Layout::Weights),
            1 => Ok(Layout::Kv),
            2 => Ok(Layout::Raw),
            other => Err(Error::corrupt(format!("unknown layout id {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layout::Weights => "bitplane",
            Layout::Kv => "kv",
            Layout::Raw => "raw",
        }
    }

    fn segment_kind(self) -> SegmentKind {
        match self {
            Layout::Raw => SegmentKind::Bytes,
            _ => SegmentKind::Planes,
        }
    }
}

/// `--layout` override applied to every tensor at write time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutOverride {
    /// Plain bit-planes, also for KV tensors (no clustering).
    Bitplane,
    /// Byte-level baseline for every tensor.
    Raw,
    /// Clustered layout for every tensor that has KV geometry.
    Kv,
}

pub fn dtype_id(format: &FloatFormat) -> u8 {
    BUILTIN_FORMATS
        .iter()
        .position(|f| f == format)
        .map_or(CUSTOM_DTYPE_ID, |i| i as u8 + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KvGeometry {
    pub tokens_per_group: usize,
    pub channels: usize,
}

/// One tensor entry of a manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<u64>,
    /// Raw little-endian file, relative to the manifest's directory.
    pub path: PathBuf,
    pub layout: Layout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_per_group: Option<usize>,
    /// heads x head_dim; defaults to the product of all but the first dim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
}

impl ManifestEntry {
    pub fn element_count(&self) -> u64 {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub tensors: Vec<ManifestEntry>,
}

impl TensorManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Reads every raw file named by the manifest, relative to `base_dir`.
    pub fn ingest(&self, base_dir: &Path, registry: &FormatRegistry) -> Result<Vec<TensorInput>> {
        self.tensors
            .iter()
            .map(|entry| {
                let format = registry.get(&entry.dtype)?;
                let count = entry.element_count() as usize;
                let path = base_dir.join(&entry.path);
                let bytes = fs::read(&path)?;
                let expected = packed_len(count, format.total_bits());
                if bytes.len() != expected {
                    return Err(Error::Manifest(format!(
                        "`{}`: {} holds {} bytes, shape {:?} of {} needs {expected}",
                        entry.name,
                        path.display(),
                        bytes.len(),
                        entry.shape,
                        format
                    )));
                }
                let data = ValueBlock::from_packed(format, count, &bytes)?;
                let kv = match entry.layout {
                    Layout::Kv => Some(kv_geometry(entry)?),
                    _ => entry
                        .channels
                        .map(|channels| -> Result<KvGeometry> {
                            let mut g = kv_geometry(entry)?;
                            g.channels = channels;
                            Ok(g)
                        })
                        .transpose()?,
                };
                Ok(TensorInput {
                    name: entry.name.clone(),
                    layout: entry.layout,
                    kv,
                    data,
                })
            })
            .collect()
    }
}

fn kv_geometry(entry: &ManifestEntry) -> Result<KvGeometry> {
    if entry.shape.len() < 2 {
        return Err(Error::Manifest(format!(
            "kv tensor `{}` needs shape [tokens, channels...], got {:?}",
            entry.name, entry.shape
        )));
    }
    let implied: u64 = entry.shape[1..].iter().product();
    let channels = entry.channels.unwrap_or(implied as usize);
    if channels as u64 != implied || channels == 0 {
        return Err(Error::Manifest(format!(
            "kv tensor `{}`: channels {channels} disagrees with shape {:?}",
            entry.name, entry.shape
        )));
    }
    Ok(KvGeometry {
        tokens_per_group: entry.tokens_per_group.unwrap_or(DEFAULT_GROUP_TOKENS),
        channels,
    })
}

/// An in-memory tensor ready to be written.
#[derive(Clone, Debug)]
pub struct TensorInput {
    pub name: String,
    pub layout: Layout,
    pub kv: Option<KvGeometry>,
    pub data: ValueBlock,
}

impl TensorInput {
    pub fn weights(name: impl Into<String>, data: ValueBlock) -> Self {
        TensorInput {
            name: name.into(),
            layout: Layout::Weights,
            kv: None,
            data,
        }
    }

    pub fn kv(
        name: impl Into<String>,
        data: ValueBlock,
        channels: usize,
        tokens_per_group: usize,
    ) -> Self {
        TensorInput {
            name: name.into(),
            layout: Layout::Kv,
            kv: Some(KvGeometry {
                tokens_per_group,
                channels,
            }),
            data,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WriteSettings {
    pub algo: CompressionAlgo,
    pub superblock_values: usize,
    /// Overrides every tensor's tokens-per-group when set.
    pub group_tokens: Option<usize>,
    pub layout: Option<LayoutOverride>,
    pub registry: FormatRegistry,
}

impl Default for WriteSettings {
    fn default() -> Self {
        WriteSettings {
            algo: CompressionAlgo::default(),
            superblock_values: DEFAULT_SUPERBLOCK_VALUES,
            group_tokens: None,
            layout: None,
            registry: FormatRegistry::default(),
        }
    }
}

impl WriteSettings {
    pub fn with_algo(algo: CompressionAlgo) -> Self {
        WriteSettings {
            algo,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !SUPERBLOCK_SIZES.contains(&self.superblock_values) {
            return Err(Error::arg(format!(
                "superblock size {} not in {SUPERBLOCK_SIZES:?}",
                self.superblock_values
            )));
        }
        if let Some(g) = self.group_tokens {
            if !(1..=MAX_GROUP_TOKENS).contains(&g) {
                return Err(Error::arg(format!(
                    "group size {g} outside 1..={MAX_GROUP_TOKENS}"
                )));
            }
        }
        if i8::try_from(self.algo.level()).is_err() {
            return Err(Error::arg(format!(
                "zstd level {} out of range",
                self.algo.level()
            )));
        }
        Ok(())
    }

    fn effective_layout(&self, input: &TensorInput) -> Layout {
        match (self.layout, input.layout) {
            (None, layout) => layout,
            (Some(LayoutOverride::Raw), _) => Layout::Raw,
            (Some(LayoutOverride::Bitplane), _) => Layout::Weights,
            (Some(LayoutOverride::Kv), _) if input.kv.is_some() => Layout::Kv,
            (Some(LayoutOverride::Kv), layout) => layout,
        }
    }
}

struct EncodedTensor {
    name: String,
    format: FloatFormat,
    layout: Layout,
    element_count: u64,
    kv: Option<KvGeometry>,
    superblocks: Vec<CompressedSuperblock>,
}

fn encode_tensor(input: &TensorInput, settings: &WriteSettings) -> Result<EncodedTensor> {
    let layout = settings.effective_layout(input);
    let format = input.data.format().clone();
    let words = input.data.words();
    let algo = settings.algo;
    let m = settings.superblock_values;

    let (superblocks, kv) = match layout {
        Layout::Weights => {
            let sbs = words
                .par_chunks(m)
                .map(|chunk| {
                    let block = ValueBlock::new_unchecked(format.clone(), chunk.to_vec());
                    compress_superblock(&disaggregate(&block), algo, None)
                })
                .collect::<Result<Vec<_>>>()?;
            (sbs, None)
        }
        Layout::Raw => {
            let sbs = words
                .par_chunks(m)
                .map(|chunk| {
                    let block = ValueBlock::new_unchecked(format.clone(), chunk.to_vec());
                    compress_bytes(&format, chunk.len(), &block.to_packed(), algo)
                })
                .collect::<Result<Vec<_>>>()?;
            (sbs, None)
        }
        Layout::Kv => {
            let mut geometry = input.kv.ok_or_else(|| {
                Error::Manifest(format!("tensor `{}` has no kv geometry", input.name))
            })?;
            if let Some(g) = settings.group_tokens {
                geometry.tokens_per_group = g;
            }
            format.require_exponent("kv layout needs an exponent field")?;
            let groups = split_groups(&input.data, geometry.channels, geometry.tokens_per_group)?;
            let sbs = groups
                .par_iter()
                .map(|group| {
                    let (delta, meta) = delta_forward(&group_by_channel(group))?;
                    compress_superblock(&kv_bitplane_concat(&delta), algo, Some(meta))
                })
                .collect::<Result<Vec<_>>>()?;
            (sbs, Some(geometry))
        }
    };
    if let Some(g) = kv {
        if g.tokens_per_group > u16::MAX as usize || g.channels > u32::MAX as usize {
            return Err(Error::arg("kv geometry does not fit the directory fields"));
        }
    }
    Ok(EncodedTensor {
        name: input.name.clone(),
        format,
        layout,
        element_count: words.len() as u64,
        kv,
        superblocks,
    })
}

fn directory_entry_len(t: &EncodedTensor) -> usize {
    2 + t.name.len()
        + 1
        + if dtype_id(&t.format) == CUSTOM_DTYPE_ID {
            4
        } else {
            0
        }
        + 1
        + 8
        + if t.kv.is_some() { 6 } else { 0 }
        + 4
        + 8
}

/// Encodes tensors into container bytes. Output is byte-deterministic.
pub fn build_container(inputs: &[TensorInput], settings: &WriteSettings) -> Result<Vec<u8>> {
    settings.validate()?;
    for (i, t) in inputs.iter().enumerate() {
        if t.name.len() > u16::MAX as usize {
            return Err(Error::arg(format!("tensor name too long: {}", t.name)));
        }
        if inputs[..i].iter().any(|o| o.name == t.name) {
            return Err(Error::arg(format!("duplicate tensor name `{}`", t.name)));
        }
    }
    let encoded = inputs
        .iter()
        .map(|t| encode_tensor(t, settings))
        .collect::<Result<Vec<_>>>()?;

    let dir_len: usize = encoded.iter().map(directory_entry_len).sum();
    let data_len: usize = encoded
        .iter()
        .flat_map(|t| &t.superblocks)
        .map(CompressedSuperblock::serialized_len)
        .sum();
    let mut out = Vec::with_capacity(FILE_HEADER_LEN + dir_len + data_len);

    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.push(settings.algo.id());
    out.push(settings.algo.level() as i8 as u8);
    out.extend_from_slice(&(settings.superblock_values as u32).to_le_bytes());
    out.extend_from_slice(&(encoded.len() as u32).to_le_bytes());

    let mut offset = (FILE_HEADER_LEN + dir_len) as u64;
    for t in &encoded {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        let id = dtype_id(&t.format);
        out.push(id);
        if id == CUSTOM_DTYPE_ID {
            out.push(t.format.exp_bits() as u8);
            out.push(t.format.frac_bits() as u8);
            let bias = i16::try_from(t.format.bias())
                .map_err(|_| Error::arg(format!("bias of `{}` does not fit i16", t.format)))?;
            out.extend_from_slice(&bias.to_le_bytes());
        }
        out.push(t.layout.id());
        out.extend_from_slice(&t.element_count.to_le_bytes());
        if let Some(g) = t.kv {
            out.extend_from_slice(&(g.tokens_per_group as u16).to_le_bytes());
            out.extend_from_slice(&(g.channels as u32).to_le_bytes());
        }
        out.extend_from_slice(&(t.superblocks.len() as u32).to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        offset += t
            .superblocks
            .iter()
            .map(|sb| sb.serialized_len() as u64)
            .sum::<u64>();
    }
    debug_assert_eq!(out.len(), FILE_HEADER_LEN + dir_len);
    for sb in encoded.iter().flat_map(|t| &t.superblocks) {
        sb.write_to(&mut out);
    }
    Ok(out)
}

/// Summary of a container write.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WriteSummary {
    pub tensors: usize,
    pub original_bytes: u64,
    pub container_bytes: u64,
}

/// Ingests a manifest and writes the container to `out`.
pub fn write_container(
    manifest: &TensorManifest,
    base_dir: &Path,
    settings: &WriteSettings,
    out: &Path,
) -> Result<WriteSummary> {
    let inputs = manifest.ingest(base_dir, &settings.registry)?;
    let bytes = build_container(&inputs, settings)?;
    let mut file = File::create(out)?;
    file.write_all(&bytes)?;
    file.flush()?;
    Ok(WriteSummary {
        tensors: inputs.len(),
        original_bytes: inputs.iter().map(|t| t.data.packed_len() as u64).sum(),
        container_bytes: bytes.len() as u64,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileHeader {
    pub version: u16,
    pub flags: u16,
    pub algo: CompressionAlgo,
    pub superblock_values: usize,
}

/// Location and header of one stored superblock.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperblockEntry {
    pub offset: u64,
    pub header: SuperblockHeader,
}

impl SuperblockEntry {
    pub fn bytes_for_planes(&self, k: usize) -> usize {
        self.header.header_len()
            + self.header.meta_len
            + self.header.plane_lens[..k].iter().sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub format: FloatFormat,
    pub layout: Layout,
    pub element_count: u64,
    pub kv: Option<KvGeometry>,
    pub superblocks: Vec<SuperblockEntry>,
}

impl TensorInfo {
    pub fn plane_count(&self) -> usize {
        self.format.total_bits() as usize
    }

    pub fn original_bytes(&self) -> u64 {
        packed_len(self.element_count as usize, self.format.total_bits()) as u64
    }

    pub fn stored_bytes(&self) -> u64 {
        self.superblocks
            .iter()
            .map(|sb| sb.header.serialized_len() as u64)
            .sum()
    }

    /// Bytes a read of the top `k` planes touches. Byte-level tensors are
    /// always read whole.
    pub fn bytes_for_planes(&self, k: usize) -> u64 {
        let k = if self.layout == Layout::Raw {
            self.plane_count()
        } else {
            k
        };
        self.superblocks
            .iter()
            .map(|sb| sb.bytes_for_planes(k) as u64)
            .sum()
    }

    fn check_k(&self, k: Option<usize>) -> Result<usize> {
        let n = self.plane_count();
        match k {
            None => Ok(n),
            Some(k) if (1..=n).contains(&k) => Ok(k),
            Some(k) => Err(Error::arg(format!(
                "plane count {k} outside 1..={n} for `{}`",
                self.name
            ))),
        }
    }
}

/// Decoded tensor content.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TensorData {
    Values(ValueBlock),
    Groups(Vec<TokenGroup>),
}

impl TensorData {
    /// All words in original (token-major) order.
    pub fn into_value_block(self) -> ValueBlock {
        match self {
            TensorData::Values(v) => v,
            TensorData::Groups(groups) => {
                let format = groups
                    .first()
                    .map(|g| g.format().clone())
                    .expect("kv tensors have at least one group");
                let words = groups
                    .into_iter()
                    .flat_map(TokenGroup::into_words)
                    .collect();
                ValueBlock::new_unchecked(format, words)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorRead {
    pub data: TensorData,
    pub planes: usize,
    pub bytes_touched: u64,
}

/// Random-access reader. Only headers and the directory are read on open;
/// payloads are read on demand, one contiguous range per superblock.
pub struct ContainerReader<R> {
    inner: R,
    header: FileHeader,
    tensors: Vec<TensorInfo>,
}

impl ContainerReader<File> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(File::open(path)?)
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::corrupt(format!("unexpected end of container: {e}")))?;
    Ok(buf)
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    Ok(read_array::<1>(r)?[0])
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn custom_format(exp_bits: u8, frac_bits: u8, bias: i16) -> Result<FloatFormat> {
    let default_bias = if exp_bits > 0 {
        (1i32 << (exp_bits - 1)) - 1
    } else {
        0
    };
    let name = if bias as i32 == default_bias {
        format!("e{exp_bits}m{frac_bits}")
    } else {
        format!("e{exp_bits}m{frac_bits}b{bias}")
    };
    FloatFormat::custom(name, exp_bits, frac_bits, bias as i32)
        .map_err(|e| Error::corrupt(format!("bad custom dtype: {e}")))
}

impl<R: Read + Seek> ContainerReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let file_len = inner.seek(SeekFrom::End(0))?;
        inner.seek(SeekFrom::Start(0))?;

        let magic: [u8; 4] = read_array(&mut inner)?;
        if magic != MAGIC {
            return Err(Error::corrupt(format!("bad magic {magic:?}")));
        }
        let version = read_u16(&mut inner)?;
        if version != VERSION {
            return Err(Error::corrupt(format!("unsupported version {version}")));
        }
        let flags = read_u16(&mut inner)?;
        let algo_id = read_u8(&mut inner)?;
        let level = read_u8(&mut inner)? as i8;
        let algo = CompressionAlgo::from_id(algo_id, level as i32)?;
        let superblock_values = read_u32(&mut inner)? as usize;
        let tensor_count = read_u32(&mut inner)?;

        struct Dir {
            info: TensorInfo,
            count: u32,
            first: u64,
        }
        let mut dirs = Vec::new();
        for _ in 0..tensor_count {
            let name_len = read_u16(&mut inner)? as usize;
            let mut name = vec![0u8; name_len];
            inner
                .read_exact(&mut name)
                .map_err(|e| Error::corrupt(format!("tensor name truncated: {e}")))?;
            let name =
                String::from_utf8(name).map_err(|_| Error::corrupt("tensor name not UTF-8"))?;
            let id = read_u8(&mut inner)?;
            let format = match id {
                CUSTOM_DTYPE_ID => {
                    let e = read_u8(&mut inner)?;
                    let f = read_u8(&mut inner)?;
                    let bias = i16::from_le_bytes(read_array(&mut inner)?);
                    custom_format(e, f, bias)?
                }
                1..=6 => BUILTIN_FORMATS[id as usize - 1].clone(),
                other => return Err(Error::corrupt(format!("unknown dtype id {other}"))),
            };
            let layout = Layout::from_id(read_u8(&mut inner)?)?;
            let element_count = read_u64(&mut inner)?;
            let kv = if layout == Layout::Kv {
                Some(KvGeometry {
                    tokens_per_group: read_u16(&mut inner)? as usize,
                    channels: read_u32(&mut inner)? as usize,
                })
            } else {
                None
            };
            let count = read_u32(&mut inner)?;
            let first = read_u64(&mut inner)?;
            dirs.push(Dir {
                info: TensorInfo {
                    name,
                    format,
                    layout,
                    element_count,
                    kv,
                    superblocks: Vec::new(),
                },
                count,
                first,
            });
        }
        let dir_end = inner.stream_position()?;

        let mut tensors = Vec::with_capacity(dirs.len());
        let mut spans = Vec::new();
        for dir in dirs {
            let mut info = dir.info;
            let mut offset = dir.first;
            let mut values = 0u64;
            for _ in 0..dir.count {
                if offset < dir_end || offset + SUPERBLOCK_FIXED_HEADER as u64 > file_len {
                    return Err(Error::corrupt(format!(
                        "`{}`: superblock offset {offset} outside data region",
                        info.name
                    )));
                }
                inner.seek(SeekFrom::Start(offset))?;
                let fixed: [u8; SUPERBLOCK_FIXED_HEADER] = read_array(&mut inner)?;
                let plane_count = fixed[4] as usize;
                let mut buf = vec![0u8; header_len(plane_count)];
                buf[..SUPERBLOCK_FIXED_HEADER].copy_from_slice(&fixed);
                inner
                    .read_exact(&mut buf[SUPERBLOCK_FIXED_HEADER..])
                    .map_err(|e| Error::corrupt(format!("plane table truncated: {e}")))?;
                let header = SuperblockHeader::parse(&buf)?;
                if header.plane_lens.len() != info.plane_count() {
                    return Err(Error::corrupt(format!(
                        "`{}`: superblock with {} planes for {}-bit words",
                        info.name,
                        header.plane_lens.len(),
                        info.plane_count()
                    )));
                }
                let len = header.serialized_len() as u64;
                if offset + len > file_len {
                    return Err(Error::corrupt(format!(
                        "`{}`: superblock runs past end of file",
                        info.name
                    )));
                }
                values += header.value_count as u64;
                info.superblocks.push(SuperblockEntry { offset, header });
                offset += len;
            }
            if values != info.element_count {
                return Err(Error::corrupt(format!(
                    "`{}`: superblocks hold {values} values, directory says {}",
                    info.name, info.element_count
                )));
            }
            if dir.count > 0 {
                spans.push((dir.first, offset));
            }
            tensors.push(info);
        }
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[0].1 > w[1].0) {
            return Err(Error::corrupt("tensor data ranges overlap"));
        }

        Ok(ContainerReader {
            inner,
            header: FileHeader {
                version,
                flags,
                algo,
                superblock_values,
            },
            tensors,
        })
    }

    pub fn header(&self) -> &FileHeader {
        &self.header
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorInfo> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    pub fn into_inner(self) -> R {
        self.inner
    }

    /// Reads a tensor, optionally only its top `planes` bit-planes. Missing
    /// planes read as zero bits. For KV tensors the stored exponent deltas
    /// are truncated too, and the exponent is restored as base + truncated
    /// delta.
    pub fn read_tensor(&mut self, name: &str, planes: Option<usize>) -> Result<TensorRead> {
        let info = self.tensor(name)?.clone();
        let k = info.check_k(planes)?;
        let fetch = if info.layout == Layout::Raw {
            info.plane_count()
        } else {
            k
        };
        let kind = info.layout.segment_kind();

        let mut touched = 0u64;
        let mut words = Vec::with_capacity(info.element_count as usize);
        let mut groups = Vec::new();
        for entry in &info.superblocks {
            let len = entry.bytes_for_planes(fetch);
            let mut buf = vec![0u8; len];
            self.inner.seek(SeekFrom::Start(entry.offset))?;
            self.inner
                .read_exact(&mut buf)
                .map_err(|e| Error::corrupt(format!("superblock truncated: {e}")))?;
            touched += len as u64;
            let (sb, _) = CompressedSuperblock::parse_prefix(
                info.format.clone(),
                kind,
                self.header.algo,
                &buf,
            )?;

            match info.layout {
                Layout::Weights => {
                    let dec = decompress_superblock(&sb, Some(k))?;
                    words.extend(aggregate(&dec.matrix).into_words());
                }
                Layout::Raw => {
                    let packed = decompress_bytes(&sb)?;
                    let mask = top_bits_mask(info.format.total_bits(), k as u32);
                    words.extend(
                        unpack_words(&packed, sb.value_count(), info.format.total_bits())
                            .into_iter()
                            .map(|w| w & mask),
                    );
                }
                Layout::Kv => {
                    let geometry = info.kv.expect("kv tensors carry geometry");
                    let meta = sb
                        .meta()
                        .cloned()
                        .ok_or_else(|| Error::corrupt("kv superblock without base exponents"))?;
                    if sb.value_count() % geometry.channels != 0 {
                        return Err(Error::corrupt("kv superblock not a whole number of tokens"));
                    }
                    let tokens = sb.value_count() / geometry.channels;
                    let dec = decompress_superblock(&sb, Some(k))?;
                    let grouped = ChannelGroupedBlock::from_value_block(
                        aggregate(&dec.matrix),
                        tokens,
                        geometry.channels,
                    )?;
                    groups.push(ungroup(&delta_inverse(&grouped, &meta)?));
                }
            }
        }

        let data = match info.layout {
            Layout::Kv if !groups.is_empty() => TensorData::Groups(groups),
            _ => TensorData::Values(ValueBlock::new_unchecked(info.format.clone(), words)),
        };
        Ok(TensorRead {
            data,
            planes: k,
            bytes_touched: touched,
        })
    }

    pub fn stat_tensor(&self, name: &str) -> Result<TensorStats> {
        Ok(TensorStats::from_info(self.tensor(name)?, self.header.algo))
    }

    pub fn stats(&self) -> ContainerStats {
        ContainerStats {
            algo: self.header.algo,
            superblock_values: self.header.superblock_values,
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorStats::from_info(t, self.header.algo))
                .collect(),
        }
    }
}

/// Per-plane totals across a tensor's superblocks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlaneStats {
    /// Storage rank, 0 = most significant plane.
    pub rank: usize,
    /// Bit position for bit-plane layouts; `None` for byte-level chunks.
    pub bit: Option<usize>,
    pub raw_bytes: u64,
    pub stored_bytes: u64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorStats {
    pub name: String,
    pub dtype: String,
    pub layout: Layout,
    pub algo: String,
    pub value_count: u64,
    /// Packed size of the original words, `S_orig`.
    pub original_bytes: u64,
    /// Everything stored for the tensor, `S_comp`.
    pub stored_bytes: u64,
    pub header_bytes: u64,
    pub meta_bytes: u64,
    pub planes: Vec<PlaneStats>,
    #[serde(skip)]
    pub info: TensorInfo,
}

impl TensorStats {
    fn from_info(info: &TensorInfo, algo: CompressionAlgo) -> Self {
        let n = info.plane_count();
        let kind = info.layout.segment_kind();
        let mut planes: Vec<PlaneStats> = (0..n)
            .map(|rank| PlaneStats {
                rank,
                bit: (kind == SegmentKind::Planes).then_some(n - 1 - rank),
                raw_bytes: 0,
                stored_bytes: 0,
                ratio: 1.0,
            })
            .collect();
        let mut header_bytes = 0;
        let mut meta_bytes = 0;
        for sb in &info.superblocks {
            header_bytes += sb.header.header_len() as u64;
            meta_bytes += sb.header.meta_len as u64;
            for (rank, &len) in sb.header.plane_lens.iter().enumerate() {
                planes[rank].raw_bytes +=
                    kind.raw_len(&info.format, sb.header.value_count, rank) as u64;
                planes[rank].stored_bytes += len as u64;
            }
        }
        for p in &mut planes {
            if p.stored_bytes > 0 {
                p.ratio = p.raw_bytes as f64 / p.stored_bytes as f64;
            }
        }
        TensorStats {
            name: info.name.clone(),
            dtype: info.format.name().to_string(),
            layout: info.layout,
            algo: algo.to_string(),
            value_count: info.element_count,
            original_bytes: info.original_bytes(),
            stored_bytes: info.stored_bytes(),
            header_bytes,
            meta_bytes,
            planes,
            info: info.clone(),
        }
    }

    pub fn ratio(&self) -> f64 {
        if self.stored_bytes == 0 {
            1.0
        } else {
            self.original_bytes as f64 / self.stored_bytes as f64
        }
    }

    /// Bytes of one plane segment in a full superblock.
    pub fn block_bytes(&self, superblock_values: usize) -> usize {
        match self.info.superblocks.first() {
            Some(sb) => plane_len(sb.header.value_count),
            None => plane_len(superblock_values),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContainerStats {
    #[serde(serialize_with = "serialize_algo")]
    pub algo: CompressionAlgo,
    pub superblock_values: usize,
    pub tensors: Vec<TensorStats>,
}

fn serialize_algo<S: serde::Serializer>(
    algo: &CompressionAlgo,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&algo.to_string())
}

impl ContainerStats {
    pub fn tensor(&self, name: &str) -> Result<&TensorStats> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    /// Size-weighted ratio, `sum S_orig / sum S_comp`.
    pub fn overall_ratio(&self) -> f64 {
        let orig: u64 = self.tensors.iter().map(|t| t.original_bytes).sum();
        let comp: u64 = self.tensors.iter().map(|t| t.stored_bytes).sum();
        if comp == 0 {
            1.0
        } else {
            orig as f64 / comp as f64
        }
    }
}

/// Opens container bytes held in memory.
pub fn reader_from_bytes(bytes: Vec<u8>) -> Result<ContainerReader<std::io::Cursor<Vec<u8>>>> {
    ContainerReader::new(std::io::Cursor::new(bytes))
}
