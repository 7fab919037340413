//! Traffic, energy and latency of a mixed-precision schedule for bit-plane
//! and byte-level storage of the same tensors.

use bplc::codec::CompressionAlgo;
use bplc::container::WriteSettings;
use bplc::costmodel::{compare_layouts_inputs, DramConfig, PrecisionSchedule};
use bplc::synth::{generate, SynthKind, SynthSpec};

fn main() -> bplc::Result<()> {
    let registry = Default::default();
    let specs = [
        (
            "layers.0.attn.q",
            SynthKind::GaussianWeights {
                count: 1 << 20,
                sigma: 0.02,
            },
        ),
        (
            "layers.0.mlp.up",
            SynthKind::GaussianWeights {
                count: 1 << 21,
                sigma: 0.05,
            },
        ),
        (
            "kv.layer0",
            SynthKind::ChannelCorrelatedKv {
                tokens: 512,
                channels: 1024,
                sigma_b: 1.0,
                sigma_eps: 0.01,
                tokens_per_group: None,
            },
        ),
    ];
    let inputs = specs
        .into_iter()
        .enumerate()
        .map(|(i, (name, kind))| {
            let spec = SynthSpec {
                name: name.into(),
                dtype: "bf16".into(),
                seed: i as u64,
                kind,
            };
            Ok(generate(&spec, &registry)?.to_input())
        })
        .collect::<bplc::Result<Vec<_>>>()?;

    let schedule: PrecisionSchedule = serde_json::from_str(
        r#"{"default": "full", "rules": [
            {"pattern": "*.mlp.*", "precision": "fp8"},
            {"pattern": "kv.*", "precision": "fp12"}]}"#,
    )?;
    let config = DramConfig::default();
    let settings = WriteSettings::with_algo(CompressionAlgo::zstd());
    let cmp = compare_layouts_inputs(&inputs, &settings, &schedule, &config)?;

    println!("tensor             k   bit-plane bytes  byte-level bytes");
    for (p, t) in cmp.bitplane.tensors.iter().zip(&cmp.byte_level.tensors) {
        println!(
            "{:<17} {:>2}  {:>15}  {:>16}",
            p.name, p.planes, p.bytes_fetched, t.bytes_fetched
        );
    }
    for (label, r) in [
        ("bit-plane", &cmp.bitplane),
        ("byte-level", &cmp.byte_level),
    ] {
        println!(
            "{label:<10} {:>9} bytes, {:>6} activations, {:.3e} J, {:.3e} s",
            r.bytes_fetched, r.activations, r.energy_joules, r.latency_seconds
        );
    }
    println!(
        "energy -{:.1}%, latency -{:.1}%",
        100.0 * (1.0 - cmp.bitplane.energy_joules / cmp.byte_level.energy_joules),
        100.0 * (1.0 - cmp.bitplane.latency_seconds / cmp.byte_level.latency_seconds)
    );
    Ok(())
}
