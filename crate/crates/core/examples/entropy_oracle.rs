//! Order-0 entropy bounds next to achieved zstd ratios for weights and KV
//! data under each layout.

use bplc::codec::CompressionAlgo;
use bplc::container::{WriteSettings, DEFAULT_SUPERBLOCK_VALUES};
use bplc::report::compare_compression;
use bplc::synth::{entropy_oracle, generate, OracleLayout, SynthKind, SynthSpec};

fn main() -> bplc::Result<()> {
    let registry = Default::default();
    let settings = WriteSettings::with_algo(CompressionAlgo::zstd());
    let m = DEFAULT_SUPERBLOCK_VALUES;
    let cases = [
        SynthSpec {
            name: "weights".into(),
            dtype: "bf16".into(),
            seed: 42,
            kind: SynthKind::GaussianWeights {
                count: 1 << 20,
                sigma: 0.05,
            },
        },
        SynthSpec {
            name: "kv".into(),
            dtype: "bf16".into(),
            seed: 7,
            kind: SynthKind::ChannelCorrelatedKv {
                tokens: 512,
                channels: 2048,
                sigma_b: 1.0,
                sigma_eps: 0.01,
                tokens_per_group: Some(16),
            },
        },
    ];
    println!("tensor   layout    bound   zstd");
    for spec in &cases {
        let tensor = generate(spec, &registry)?;
        let achieved = compare_compression(&[tensor.to_input()], &settings)?;
        let mut layouts = vec![
            ("raw", OracleLayout::ByteRaw),
            ("bitplane", OracleLayout::BitPlane),
        ];
        if let Some(tokens_per_group) = tensor.tokens_per_group {
            let channels = tensor.shape[1] as usize;
            layouts.push((
                "kv",
                OracleLayout::KvClustered {
                    channels,
                    tokens_per_group,
                },
            ));
        }
        for (label, layout) in layouts {
            let bound = entropy_oracle(&tensor.data, layout, m)?.bound_ratio();
            let ratio = achieved.aggregate(label).unwrap().ratio;
            println!("{:<8} {label:<9} {bound:.3}   {ratio:.3}", tensor.name);
        }
    }
    Ok(())
}
