//! Full file workflow: synthesize a corpus, write a container, inspect its
//! directory and statistics, and decode it back.

use bplc::codec::CompressionAlgo;
use bplc::container::{write_container, ContainerReader, TensorManifest, WriteSettings};
use bplc::report::ExperimentReport;
use bplc::synth::{write_corpus, SynthPlan};

const PLAN: &str = r#"{"tensors": [
  {"name": "embed", "dtype": "bf16", "seed": 1, "kind": "gaussian_weights", "count": 100000, "sigma": 0.02},
  {"name": "head", "dtype": "fp8e4m3", "seed": 2, "kind": "gaussian_weights", "count": 40000, "sigma": 0.5},
  {"name": "cache.k", "dtype": "bf16", "seed": 3, "kind": "channel_correlated_kv",
   "tokens": 64, "channels": 512, "sigma_b": 1.0, "sigma_eps": 0.01}
]}"#;

fn main() -> bplc::Result<()> {
    let dir = std::env::temp_dir().join("bplc-container-roundtrip");
    let plan: SynthPlan = serde_json::from_str(PLAN)?;
    write_corpus(&plan, &dir, &Default::default())?;
    let manifest = TensorManifest::load(dir.join("manifest.json"))?;

    let out = dir.join("model.bplc");
    let summary = write_container(
        &manifest,
        &dir,
        &WriteSettings::with_algo(CompressionAlgo::zstd()),
        &out,
    )?;
    println!(
        "{} tensors, {} -> {} bytes",
        summary.tensors, summary.original_bytes, summary.container_bytes
    );

    let mut reader = ContainerReader::open(&out)?;
    for t in reader.tensors() {
        println!(
            "  {:<8} {:<8} {:<8} {:>7} values  {:>3} superblocks",
            t.name,
            t.format.name(),
            t.layout.name(),
            t.element_count,
            t.superblocks.len()
        );
    }
    let report = ExperimentReport::from_stats(&reader.stats());
    report.write_csv(std::io::stdout())?;

    for entry in &manifest.tensors {
        let original = std::fs::read(dir.join(&entry.path))?;
        let decoded = reader
            .read_tensor(&entry.name, None)?
            .data
            .into_value_block()
            .to_packed();
        assert_eq!(original, decoded, "{}", entry.name);
    }
    println!(
        "all tensors decoded bit-exactly; files in {}",
        dir.display()
    );
    Ok(())
}
