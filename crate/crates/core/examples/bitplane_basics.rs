//! Field splitting, bit-plane disaggregation and prefix truncation on a
//! handful of bf16 values.

use bplc::bitplane::{aggregate, disaggregate, top_bits_mask, truncate_planes};
use bplc::float_format::{decode_value, encode_nearest, split_fields, ValueBlock, BF16};

fn main() -> bplc::Result<()> {
    let values = [1.0, -0.5, 3.140625, 0.0078125, 100.0, -2.0, 0.3, 6.5];
    let words = values
        .iter()
        .map(|&v| encode_nearest(v, &BF16))
        .collect::<bplc::Result<Vec<_>>>()?;

    println!("value       word    sign exp      fraction");
    for (&v, &w) in values.iter().zip(&words) {
        let f = split_fields(w, &BF16)?;
        println!(
            "{v:<10}  {w:#06x}  {}    {:08b} {:07b}",
            f.sign, f.exponent, f.fraction
        );
    }

    let block = ValueBlock::new(BF16, words)?;
    let planes = disaggregate(&block);
    println!(
        "\n{} planes of {} byte(s); rank 0 is the sign bit",
        planes.total_planes(),
        planes.plane_len()
    );
    for (rank, plane) in planes.planes().enumerate() {
        println!("rank {rank:>2} (bit {:>2}): {:08b}", 15 - rank, plane[0]);
    }
    assert_eq!(aggregate(&planes), block);

    for k in [12, 8, 4] {
        let coarse = aggregate(&truncate_planes(&planes, k)?);
        let mask = top_bits_mask(16, k as u32);
        let shown: Vec<String> = coarse
            .words()
            .iter()
            .map(|&w| {
                assert_eq!(w, w & mask);
                format!("{:e}", decode_value(w, &BF16).unwrap())
            })
            .collect();
        println!("top {k:>2} planes -> [{}]", shown.join(", "));
    }
    Ok(())
}
