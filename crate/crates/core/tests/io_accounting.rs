use std::cell::RefCell;
use std::io::{Cursor, Read, Result as IoResult, Seek, SeekFrom};
use std::rc::Rc;

use bplc::codec::CompressionAlgo;
use bplc::container::{build_container, ContainerReader, TensorInput, WriteSettings};
use bplc::costmodel::{estimate_access, DramConfig, Precision, PrecisionSchedule};
use bplc::float_format::{ValueBlock, BF16, FP8_E4M3};

/// Records the byte range of every read.
struct Recording {
    inner: Cursor<Vec<u8>>,
    reads: Rc<RefCell<Vec<(u64, u64)>>>,
}

impl Read for Recording {
    fn read(&mut self, buf: &mut [u8]) -> IoResult<usize> {
        let start = self.inner.position();
        let n = self.inner.read(buf)?;
        self.reads.borrow_mut().push((start, start + n as u64));
        Ok(n)
    }
}

impl Seek for Recording {
    fn seek(&mut self, pos: SeekFrom) -> IoResult<u64> {
        self.inner.seek(pos)
    }
}

fn words(n: usize, mask: u32, seed: u32) -> Vec<u32> {
    (0..n as u32)
        .map(|i| (i.wrapping_add(seed).wrapping_mul(2654435761) >> 9) & mask & 0xFF8F)
        .collect()
}

fn inputs() -> Vec<TensorInput> {
    vec![
        TensorInput::weights("w", ValueBlock::new(BF16, words(40000, 0xFFFF, 1)).unwrap()),
        TensorInput::kv(
            "kv",
            ValueBlock::new(BF16, words(64 * 300, 0xFFFF, 2)).unwrap(),
            64,
            16,
        ),
        TensorInput::weights(
            "f8",
            ValueBlock::new(FP8_E4M3, words(9000, 0xFF, 3)).unwrap(),
        ),
    ]
}

#[test]
fn prefix_reads_stay_inside_the_prefix() {
    for algo in [
        CompressionAlgo::None,
        CompressionAlgo::Lz4,
        CompressionAlgo::zstd(),
    ] {
        let settings = WriteSettings {
            algo,
            superblock_values: 8192,
            ..Default::default()
        };
        let bytes = build_container(&inputs(), &settings).unwrap();
        let reads = Rc::new(RefCell::new(Vec::new()));
        let mut reader = ContainerReader::new(Recording {
            inner: Cursor::new(bytes),
            reads: reads.clone(),
        })
        .unwrap();
        let infos = reader.tensors().to_vec();
        for info in &infos {
            let n = info.plane_count();
            for k in 1..=n {
                reads.borrow_mut().clear();
                let read = reader.read_tensor(&info.name, Some(k)).unwrap();
                let allowed: Vec<(u64, u64)> = info
                    .superblocks
                    .iter()
                    .map(|sb| (sb.offset, sb.offset + sb.bytes_for_planes(k) as u64))
                    .collect();
                let mut total = 0;
                for &(a, b) in reads.borrow().iter() {
                    total += b - a;
                    assert!(
                        allowed.iter().any(|&(lo, hi)| lo <= a && b <= hi),
                        "{} k={k}: read {a}..{b} outside the prefix",
                        info.name
                    );
                }
                assert_eq!(total, read.bytes_touched, "{} k={k}", info.name);
                assert_eq!(read.bytes_touched, info.bytes_for_planes(k));
            }
        }
    }
}

#[test]
fn bytes_touched_equals_model_bytes_fetched() {
    let settings = WriteSettings {
        superblock_values: 8192,
        ..Default::default()
    };
    let bytes = build_container(&inputs(), &settings).unwrap();
    let mut reader = ContainerReader::new(Cursor::new(bytes)).unwrap();
    let stats = reader.stats();
    for k in [1usize, 2, 4, 6, 8] {
        let schedule = PrecisionSchedule::uniform(Precision::Planes(k));
        let report = estimate_access(&stats, &schedule, &DramConfig::default()).unwrap();
        for t in &report.tensors {
            let read = reader.read_tensor(&t.name, Some(k)).unwrap();
            assert_eq!(read.bytes_touched, t.bytes_fetched, "{} k={k}", t.name);
        }
    }
}
