//! Compression ratio of gaussian bf16 weights across a range of standard
//! deviations, bit-plane layout against the byte-level layout.
//!
//! `cargo run --release --example weights_compression -- [values]`

use bplc::codec::CompressionAlgo;
use bplc::container::WriteSettings;
use bplc::report::compare_compression;
use bplc::synth::{generate, SynthKind, SynthSpec};

fn main() -> bplc::Result<()> {
    let count: usize = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(1 << 20);
    let settings = WriteSettings::with_algo(CompressionAlgo::zstd());
    println!("{count} bf16 values per run, {}\n", settings.algo);
    println!("sigma    raw     bit-plane  gain");
    for sigma in [0.005, 0.01, 0.02, 0.05, 0.1, 0.5] {
        let spec = SynthSpec {
            name: "w".into(),
            dtype: "bf16".into(),
            seed: 42,
            kind: SynthKind::GaussianWeights { count, sigma },
        };
        let input = generate(&spec, &settings.registry)?.to_input();
        let report = compare_compression(&[input], &settings)?;
        let raw = report.aggregate("raw").unwrap().ratio;
        let bp = report.aggregate("bitplane").unwrap().ratio;
        println!(
            "{sigma:<7}  {raw:.4}  {bp:.4}     {:+.1}%",
            (bp / raw - 1.0) * 100.0
        );
    }
    Ok(())
}
