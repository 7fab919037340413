//! Bit-plane disaggregation and aggregation.
//!
//! A block of `m` words of `n` bits becomes `n` planes of `m` bits each.
//! Planes are stored most-significant first (rank 0 is the sign plane, rank
//! `n - 1` the fraction LSB) so that reduced precision is a prefix of the
//! storage. Within a plane, word `j` lands in byte `j / 8` at bit `j % 8`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float_format::{low_mask, FloatFormat, ValueBlock};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitPlaneMatrix {
    format: FloatFormat,
    count: usize,
    present: usize,
    /// `present` planes of `plane_len(count)` bytes each, MSB plane first.
    data: Vec<u8>,
}

/// Bytes in one plane of `count` values.
#[inline]
pub fn plane_len(count: usize) -> usize {
    count.div_ceil(8)
}

impl BitPlaneMatrix {
    /// Assembles a matrix from stored planes (MSB first). `planes.len()` is
    /// the number of present planes.
    pub fn from_planes(format: FloatFormat, count: usize, planes: &[&[u8]]) -> Result<Self> {
        let n = format.total_bits() as usize;
        if planes.is_empty() || planes.len() > n {
            return Err(Error::arg(format!(
                "{} planes given for a {n}-bit format",
                planes.len()
            )));
        }
        let len = plane_len(count);
        let mut data = Vec::with_capacity(len * planes.len());
        for (rank, p) in planes.iter().enumerate() {
            if p.len() != len {
                return Err(Error::Format(format!(
                    "plane {rank} has {} bytes, expected {len}",
                    p.len()
                )));
            }
            data.extend_from_slice(p);
        }
        Ok(BitPlaneMatrix {
            format,
            count,
            present: planes.len(),
            data,
        })
    }

    pub fn format(&self) -> &FloatFormat {
        &self.format
    }

    /// Number of values `m`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn total_planes(&self) -> usize {
        self.format.total_bits() as usize
    }

    pub fn present_planes(&self) -> usize {
        self.present
    }

    pub fn plane_len(&self) -> usize {
        plane_len(self.count)
    }

    /// Plane at storage rank `rank` (0 = most significant).
    pub fn plane(&self, rank: usize) -> &[u8] {
        assert!(rank < self.present, "plane rank {rank} not present");
        let len = self.plane_len();
        &self.data[rank * len..(rank + 1) * len]
    }

    /// Plane holding bit `bit` of every word, if it is present.
    pub fn plane_for_bit(&self, bit: usize) -> Option<&[u8]> {
        let rank = self.total_planes().checked_sub(bit + 1)?;
        (rank < self.present).then(|| self.plane(rank))
    }

    pub fn planes(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks(self.plane_len().max(1)).take(self.present)
    }

    /// Bytes of stored plane data.
    pub fn stored_bytes(&self) -> usize {
        self.data.len()
    }

    /// Bit `j` of the plane at `rank`.
    pub fn bit(&self, rank: usize, j: usize) -> bool {
        (self.plane(rank)[j / 8] >> (j % 8)) & 1 == 1
    }
}

/// Transposes an 8x8 bit matrix held one row per byte: bit `c` of byte `r`
/// moves to bit `r` of byte `c`.
#[inline]
fn transpose8(mut x: u64) -> u64 {
    let t = (x ^ (x >> 7)) & 0x00AA_00AA_00AA_00AA;
    x ^= t ^ (t << 7);
    let t = (x ^ (x >> 14)) & 0x0000_CCCC_0000_CCCC;
    x ^= t ^ (t << 14);
    let t = (x ^ (x >> 28)) & 0x0000_0000_F0F0_F0F0;
    x ^= t ^ (t << 28);
    x
}

/// Splits a block into its `n` bit-planes.
pub fn disaggregate(block: &ValueBlock) -> BitPlaneMatrix {
    let format = block.format().clone();
    let n = format.total_bits() as usize;
    let words = block.words();
    let count = words.len();
    let len = plane_len(count);
    let mut data = vec![0u8; n * len];

    if len > 0 {
        let mut planes: Vec<&mut [u8]> = data.chunks_mut(len).collect();
        let mut emit = |c: usize, chunk: &[u32; 8]| {
            for lane in 0..n.div_ceil(8) {
                let shift = 8 * lane;
                let mut rows = 0u64;
                for (k, &w) in chunk.iter().enumerate() {
                    rows |= (((w >> shift) & 0xFF) as u64) << (8 * k);
                }
                let cols = transpose8(rows);
                for b in 0..(n - shift).min(8) {
                    planes[n - 1 - shift - b][c] = (cols >> (8 * b)) as u8;
                }
            }
        };
        let full = count / 8;
        for (c, chunk) in words[..full * 8].chunks_exact(8).enumerate() {
            emit(c, chunk.try_into().unwrap());
        }
        let tail = &words[full * 8..];
        if !tail.is_empty() {
            let mut padded = [0u32; 8];
            padded[..tail.len()].copy_from_slice(tail);
            emit(full, &padded);
        }
    }

    BitPlaneMatrix {
        format,
        count,
        present: n,
        data,
    }
}

/// Reassembles words from planes. Missing low planes read as zero bits.
pub fn aggregate(matrix: &BitPlaneMatrix) -> ValueBlock {
    let n = matrix.total_planes();
    let count = matrix.count;
    let len = matrix.plane_len();
    let mut words = vec![0u32; count];
    if len == 0 {
        return ValueBlock::new_unchecked(matrix.format.clone(), words);
    }

    let zero = vec![0u8; len];
    // indexed by bit position, LSB first
    let by_bit: Vec<&[u8]> = (0..n)
        .map(|bit| {
            let rank = n - 1 - bit;
            if rank < matrix.present {
                matrix.plane(rank)
            } else {
                &zero[..]
            }
        })
        .collect();
    let lanes: Vec<usize> = (0..n.div_ceil(8))
        .filter(|&lane| (8 * lane..(8 * lane + 8).min(n)).any(|bit| n - 1 - bit < matrix.present))
        .collect();
    let gather = |c: usize, out: &mut [u32; 8]| {
        for &lane in &lanes {
            let shift = 8 * lane;
            let mut rows = 0u64;
            for (b, plane) in by_bit[shift..(shift + 8).min(n)].iter().enumerate() {
                rows |= (plane[c] as u64) << (8 * b);
            }
            let cols = transpose8(rows);
            for (k, w) in out.iter_mut().enumerate() {
                *w |= (((cols >> (8 * k)) & 0xFF) as u32) << shift;
            }
        }
    };
    let full = count / 8;
    for (c, chunk) in words[..full * 8].chunks_exact_mut(8).enumerate() {
        gather(c, chunk.try_into().unwrap());
    }
    if count > full * 8 {
        let mut padded = [0u32; 8];
        gather(full, &mut padded);
        let rest = count - full * 8;
        words[full * 8..].copy_from_slice(&padded[..rest]);
    }

    ValueBlock::new_unchecked(matrix.format.clone(), words)
}

/// Keeps the top `k` planes.
pub fn truncate_planes(matrix: &BitPlaneMatrix, k: usize) -> Result<BitPlaneMatrix> {
    if k == 0 || k > matrix.present {
        return Err(Error::arg(format!(
            "plane count {k} outside 1..={}",
            matrix.present
        )));
    }
    Ok(BitPlaneMatrix {
        format: matrix.format.clone(),
        count: matrix.count,
        present: k,
        data: matrix.data[..k * matrix.plane_len()].to_vec(),
    })
}

/// Mask keeping the top `k` bits of an `n`-bit word.
pub fn top_bits_mask(n: u32, k: u32) -> u32 {
    low_mask(n) & !low_mask(n - k.min(n))
}

/// Named reduced precisions expressed as plane counts, per format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrecisionTable {
    table: BTreeMap<String, BTreeMap<String, usize>>,
}

impl Default for PrecisionTable {
    fn default() -> Self {
        let mut t = PrecisionTable {
            table: BTreeMap::new(),
        };
        for (label, k) in [("fp12", 12), ("fp8", 8), ("fp6", 6), ("fp4", 4)] {
            t.set("bf16", label, k);
        }
        t.set("fp8e4m3", "fp6", 6);
        t.set("fp8e4m3", "fp4", 4);
        t.set("int4", "int2", 2);
        t
    }
}

impl PrecisionTable {
    pub fn empty() -> Self {
        PrecisionTable {
            table: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, format: &str, label: &str, planes: usize) {
        self.table
            .entry(format.to_string())
            .or_default()
            .insert(label.to_ascii_lowercase(), planes);
    }

    /// Overlays `other` on top of this table.
    pub fn merge(&mut self, other: &PrecisionTable) {
        for (format, labels) in &other.table {
            for (label, &k) in labels {
                self.set(format, label, k);
            }
        }
    }

    /// Plane count for `label` on `format`. `full` and the format's own name
    /// resolve to every plane.
    pub fn resolve(&self, label: &str, format: &FloatFormat) -> Result<usize> {
        let n = format.total_bits() as usize;
        let label = label.to_ascii_lowercase();
        if label == "full" || label == format.name() {
            return Ok(n);
        }
        let k = self
            .table
            .get(format.name())
            .and_then(|labels| labels.get(&label))
            .copied()
            .ok_or_else(|| {
                Error::Schedule(format!("no precision `{label}` defined for `{format}`"))
            })?;
        if k == 0 || k > n {
            return Err(Error::Schedule(format!(
                "precision `{label}` maps to {k} planes, outside 1..={n} for `{format}`"
            )));
        }
        Ok(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::float_format::{BF16, BUILTIN_FORMATS, FP16, INT4};

    fn naive_bit(block: &ValueBlock, bit: usize, j: usize) -> bool {
        (block.words()[j] >> bit) & 1 == 1
    }

    #[test]
    fn zero_block() {
        let b = ValueBlock::new(BF16, vec![0, 0]).unwrap();
        let m = disaggregate(&b);
        assert_eq!(m.present_planes(), 16);
        assert!(m.planes().all(|p| p == [0]));
    }

    #[test]
    fn sign_and_lsb_planes() {
        let b = ValueBlock::new(FP16, vec![0x8000, 0x0001]).unwrap();
        let m = disaggregate(&b);
        // plane for bit 15 is rank 0: value 0 has it set
        assert_eq!(m.plane_for_bit(15).unwrap(), [0b01]);
        assert_eq!(m.plane_for_bit(0).unwrap(), [0b10]);
        for bit in 1..15 {
            assert_eq!(m.plane_for_bit(bit).unwrap(), [0], "bit {bit}");
        }
        assert_eq!(aggregate(&m), b);
    }

    #[test]
    fn aggregate_truncated_examples() {
        let b = ValueBlock::new(FP16, vec![0xABCD]).unwrap();
        let m = disaggregate(&b);
        assert_eq!(aggregate(&m).words(), [0xABCD]);
        assert_eq!(
            aggregate(&truncate_planes(&m, 8).unwrap()).words(),
            [0xAB00]
        );

        let b = ValueBlock::new(BF16, vec![0x3DCD]).unwrap();
        let m = truncate_planes(&disaggregate(&b), 12).unwrap();
        assert_eq!(aggregate(&m).words(), [0x3DC0]);

        let ones = ValueBlock::new(BF16, vec![0x3F80; 5]).unwrap();
        let m = truncate_planes(&disaggregate(&ones), 4).unwrap();
        assert!(aggregate(&m).words().iter().all(|&w| w == 0x3000));
    }

    #[test]
    fn truncate_bounds() {
        let m = disaggregate(&ValueBlock::new(INT4, vec![1, 2, 3]).unwrap());
        assert!(truncate_planes(&m, 0).is_err());
        assert!(truncate_planes(&m, 5).is_err());
        assert_eq!(truncate_planes(&m, 4).unwrap(), m);
        let t = truncate_planes(&m, 2).unwrap();
        assert!(truncate_planes(&t, 3).is_err());
        assert_eq!(t.stored_bytes(), 2);
    }

    #[test]
    fn matches_naive_definition_every_width() {
        let mut seed = 0x9E37_79B9_u32;
        let custom = FloatFormat::custom("e8m23", 8, 23, 127).unwrap();
        let odd = FloatFormat::custom("e3m9", 3, 9, 3).unwrap();
        for format in BUILTIN_FORMATS.iter().chain([&custom, &odd]) {
            for m in [1usize, 7, 8, 9, 63, 130] {
                let words = (0..m)
                    .map(|_| {
                        seed ^= seed << 13;
                        seed ^= seed >> 17;
                        seed ^= seed << 5;
                        seed & format.word_mask()
                    })
                    .collect();
                let block = ValueBlock::new(format.clone(), words).unwrap();
                let mat = disaggregate(&block);
                let n = format.total_bits() as usize;
                for bit in 0..n {
                    let plane = mat.plane_for_bit(bit).unwrap();
                    assert_eq!(plane.len(), m.div_ceil(8));
                    for j in 0..m {
                        assert_eq!(
                            (plane[j / 8] >> (j % 8)) & 1 == 1,
                            naive_bit(&block, bit, j)
                        );
                    }
                    // padding bits stay zero
                    if m % 8 != 0 {
                        assert_eq!(plane[m / 8] >> (m % 8), 0);
                    }
                }
                assert_eq!(aggregate(&mat), block);
            }
        }
    }

    #[test]
    fn top_bits_mask_values() {
        assert_eq!(top_bits_mask(16, 8), 0xFF00);
        assert_eq!(top_bits_mask(16, 16), 0xFFFF);
        assert_eq!(top_bits_mask(4, 1), 0x8);
        assert_eq!(top_bits_mask(32, 32), u32::MAX);
    }

    #[test]
    fn precision_table_defaults() {
        let t = PrecisionTable::default();
        assert_eq!(t.resolve("FP12", &BF16).unwrap(), 12);
        assert_eq!(t.resolve("fp8", &BF16).unwrap(), 8);
        assert_eq!(t.resolve("fp4", &BF16).unwrap(), 4);
        assert_eq!(t.resolve("bf16", &BF16).unwrap(), 16);
        assert_eq!(t.resolve("full", &FP16).unwrap(), 16);
        assert_eq!(t.resolve("fp6", &crate::float_format::FP8_E4M3).unwrap(), 6);
        assert_eq!(t.resolve("int2", &INT4).unwrap(), 2);
        assert!(t.resolve("fp8", &FP16).is_err());
        let mut custom = PrecisionTable::empty();
        custom.set("bf16", "fp8", 9);
        let mut merged = PrecisionTable::default();
        merged.merge(&custom);
        assert_eq!(merged.resolve("fp8", &BF16).unwrap(), 9);
    }
}
