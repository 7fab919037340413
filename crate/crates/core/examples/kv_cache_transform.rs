//! Channel grouping and exponent deltas on a KV token group: shows the
//! per-channel base exponents and how much the exponent planes shrink.

use bplc::bitplane::{aggregate, disaggregate};
use bplc::codec::{compress_superblock, decompress_superblock, CompressionAlgo};
use bplc::kv::{
    delta_forward, delta_inverse, group_by_channel, kv_bitplane_concat, ungroup,
    ChannelGroupedBlock, TokenGroup,
};
use bplc::synth::{generate, SynthKind, SynthSpec};

fn main() -> bplc::Result<()> {
    let (tokens, channels) = (16, 2048);
    let spec = SynthSpec {
        name: "layer0.k".into(),
        dtype: "bf16".into(),
        seed: 7,
        kind: SynthKind::ChannelCorrelatedKv {
            tokens,
            channels,
            sigma_b: 1.0,
            sigma_eps: 0.01,
            tokens_per_group: Some(tokens),
        },
    };
    let tensor = generate(&spec, &Default::default())?;
    let format = tensor.data.format().clone();
    let group = TokenGroup::new(
        format.clone(),
        tokens,
        channels,
        tensor.data.words().to_vec(),
    )?;

    let grouped = group_by_channel(&group);
    let (delta, meta) = delta_forward(&grouped)?;
    println!("first base exponents: {:?}", &meta.base_exponents[..8]);
    let exps: Vec<u32> = grouped
        .channel(0)
        .iter()
        .map(|&w| format.exponent_of(w))
        .collect();
    let deltas: Vec<u32> = delta
        .channel(0)
        .iter()
        .map(|&w| format.exponent_of(w))
        .collect();
    println!("channel 0 exponents {exps:?}\n          deltas    {deltas:?}");

    let algo = CompressionAlgo::zstd();
    let plain = compress_superblock(&disaggregate(&tensor.data), algo, None)?;
    let clustered = compress_superblock(&kv_bitplane_concat(&delta), algo, Some(meta))?;
    println!("\nrank  token-major  clustered");
    for (rank, (a, b)) in plain
        .plane_lens()
        .iter()
        .zip(clustered.plane_lens())
        .enumerate()
    {
        println!("{rank:>4}  {a:>11}  {b:>9}");
    }
    println!(
        "total {:>11}  {:>9} bytes (raw {})",
        plain.serialized_len(),
        clustered.serialized_len(),
        tensor.data.packed_len()
    );

    let planes = aggregate(&decompress_superblock(&clustered, None)?.matrix);
    let restored = ChannelGroupedBlock::new(format, tokens, channels, planes.into_words())?;
    assert_eq!(
        ungroup(&delta_inverse(&restored, clustered.meta().unwrap())?),
        group
    );
    println!("inverse transform restored the group bit-exactly");
    Ok(())
}
