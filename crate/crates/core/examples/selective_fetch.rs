//! Reads one tensor back at several precisions from an in-memory container
//! and reports bytes touched and the worst absolute error.

use bplc::codec::CompressionAlgo;
use bplc::container::{build_container, reader_from_bytes, WriteSettings};
use bplc::float_format::decode_value;
use bplc::synth::{generate, SynthKind, SynthSpec};

fn main() -> bplc::Result<()> {
    let spec = SynthSpec {
        name: "mlp.up".into(),
        dtype: "bf16".into(),
        seed: 1,
        kind: SynthKind::GaussianWeights {
            count: 1 << 18,
            sigma: 0.05,
        },
    };
    let tensor = generate(&spec, &Default::default())?;
    let format = tensor.data.format().clone();
    for algo in [CompressionAlgo::None, CompressionAlgo::zstd()] {
        let bytes = build_container(&[tensor.to_input()], &WriteSettings::with_algo(algo))?;
        let mut reader = reader_from_bytes(bytes)?;
        let full = reader.tensor("mlp.up")?.bytes_for_planes(16);
        println!("{algo}: full tensor {full} bytes");
        for k in [16, 12, 10, 8, 6] {
            let read = reader.read_tensor("mlp.up", Some(k))?;
            let approx = read.data.into_value_block();
            let worst = tensor
                .data
                .words()
                .iter()
                .zip(approx.words())
                .map(|(&a, &b)| {
                    (decode_value(a, &format).unwrap() - decode_value(b, &format).unwrap()).abs()
                })
                .fold(0.0f64, f64::max);
            println!(
                "  k={k:>2}: {:>8} bytes touched ({:5.1}%), max abs error {worst:.3e}",
                read.bytes_touched,
                100.0 * read.bytes_touched as f64 / full as f64
            );
        }
    }
    Ok(())
}
