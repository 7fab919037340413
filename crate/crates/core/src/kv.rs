//! KV-cache clustering: channel-wise grouping across tokens, exponent delta
//! de-correlation, and the concatenated bit-plane layout.
//!
//! The write path is `group_by_channel` → `delta_forward` →
//! `kv_bitplane_concat`; the read path runs the inverses in reverse order.
//! The delta rewrites only exponent-field bits, so applying it in the word
//! domain before disaggregation stores the same planes as applying it to the
//! exponent planes afterwards.

use crate::bitplane::{disaggregate, BitPlaneMatrix};
use crate::error::{Error, Result};
use crate::float_format::{FloatFormat, ValueBlock};

/// Default tokens per group; one group of 16 tokens x 2048 channels fills a
/// 32768-value superblock.
pub const DEFAULT_GROUP_TOKENS: usize = 16;
pub const MAX_GROUP_TOKENS: usize = 1024;

/// `tokens` KV vectors of `channels` words each, token-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenGroup {
    format: FloatFormat,
    tokens: usize,
    channels: usize,
    words: Vec<u32>,
}

/// The same words, channel-major: channel `j`'s entries across all tokens
/// are contiguous.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelGroupedBlock {
    format: FloatFormat,
    tokens: usize,
    channels: usize,
    words: Vec<u32>,
}

/// Per-channel base exponents, one byte each.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeltaMeta {
    pub base_exponents: Vec<u8>,
}

impl DeltaMeta {
    pub fn channels(&self) -> usize {
        self.base_exponents.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.base_exponents.clone()
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        DeltaMeta {
            base_exponents: bytes.to_vec(),
        }
    }
}

fn check_geometry(tokens: usize, channels: usize, words: usize) -> Result<()> {
    if tokens == 0 || channels == 0 {
        return Err(Error::arg(format!(
            "token group needs tokens >= 1 and channels >= 1, got {tokens}x{channels}"
        )));
    }
    if tokens * channels != words {
        return Err(Error::arg(format!(
            "{tokens} tokens x {channels} channels needs {} words, got {words}",
            tokens * channels
        )));
    }
    Ok(())
}

impl TokenGroup {
    pub fn new(
        format: FloatFormat,
        tokens: usize,
        channels: usize,
        words: Vec<u32>,
    ) -> Result<Self> {
        check_geometry(tokens, channels, words.len())?;
        // validate word widths
        let block = ValueBlock::new(format, words)?;
        let format = block.format().clone();
        Ok(TokenGroup {
            format,
            tokens,
            channels,
            words: block.into_words(),
        })
    }

    pub fn format(&self) -> &FloatFormat {
        &self.format
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn into_words(self) -> Vec<u32> {
        self.words
    }

    /// Entry at channel `j` of token `t`.
    pub fn get(&self, t: usize, j: usize) -> u32 {
        self.words[t * self.channels + j]
    }
}

impl ChannelGroupedBlock {
    pub fn new(
        format: FloatFormat,
        tokens: usize,
        channels: usize,
        words: Vec<u32>,
    ) -> Result<Self> {
        check_geometry(tokens, channels, words.len())?;
        let block = ValueBlock::new(format, words)?;
        let format = block.format().clone();
        Ok(ChannelGroupedBlock {
            format,
            tokens,
            channels,
            words: block.into_words(),
        })
    }

    pub fn format(&self) -> &FloatFormat {
        &self.format
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    /// Channel `j` across all tokens.
    pub fn channel(&self, j: usize) -> &[u32] {
        &self.words[j * self.tokens..(j + 1) * self.tokens]
    }

    pub fn to_value_block(&self) -> ValueBlock {
        ValueBlock::new_unchecked(self.format.clone(), self.words.clone())
    }

    pub(crate) fn from_value_block(
        block: ValueBlock,
        tokens: usize,
        channels: usize,
    ) -> Result<Self> {
        check_geometry(tokens, channels, block.len())?;
        let format = block.format().clone();
        Ok(ChannelGroupedBlock {
            format,
            tokens,
            channels,
            words: block.into_words(),
        })
    }
}

fn transpose(words: &[u32], rows: usize, cols: usize) -> Vec<u32> {
    let mut out = vec![0u32; words.len()];
    for (r, row) in words.chunks_exact(cols).enumerate() {
        for (c, &w) in row.iter().enumerate() {
            out[c * rows + r] = w;
        }
    }
    out
}

pub fn group_by_channel(group: &TokenGroup) -> ChannelGroupedBlock {
    ChannelGroupedBlock {
        format: group.format.clone(),
        tokens: group.tokens,
        channels: group.channels,
        words: transpose(&group.words, group.tokens, group.channels),
    }
}

pub fn ungroup(block: &ChannelGroupedBlock) -> TokenGroup {
    TokenGroup {
        format: block.format.clone(),
        tokens: block.tokens,
        channels: block.channels,
        words: transpose(&block.words, block.channels, block.tokens),
    }
}

/// Rewrites every exponent field as its offset from the channel minimum.
pub fn delta_forward(block: &ChannelGroupedBlock) -> Result<(ChannelGroupedBlock, DeltaMeta)> {
    let format = &block.format;
    format.require_exponent("exponent delta needs an exponent field")?;
    let mut words = Vec::with_capacity(block.words.len());
    let mut bases = Vec::with_capacity(block.channels);
    for j in 0..block.channels {
        let channel = block.channel(j);
        let base = channel
            .iter()
            .map(|&w| format.exponent_of(w))
            .min()
            .unwrap_or(0);
        bases.push(base as u8);
        words.extend(
            channel
                .iter()
                .map(|&w| format.with_exponent(w, format.exponent_of(w) - base)),
        );
    }
    Ok((
        ChannelGroupedBlock {
            format: format.clone(),
            tokens: block.tokens,
            channels: block.channels,
            words,
        },
        DeltaMeta {
            base_exponents: bases,
        },
    ))
}

/// Restores exponents as `base + delta`.
///
/// Deltas whose low bits were dropped by a prefix read are smaller than the
/// stored ones, so the sum still fits the exponent field.
pub fn delta_inverse(block: &ChannelGroupedBlock, meta: &DeltaMeta) -> Result<ChannelGroupedBlock> {
    let format = &block.format;
    format.require_exponent("exponent delta needs an exponent field")?;
    if meta.channels() != block.channels {
        return Err(Error::arg(format!(
            "delta metadata has {} channels, block has {}",
            meta.channels(),
            block.channels
        )));
    }
    let max = format.max_exponent_field();
    let mut words = Vec::with_capacity(block.words.len());
    for (j, &base) in meta.base_exponents.iter().enumerate() {
        for &w in block.channel(j) {
            let restored = format.exponent_of(w) + base as u32;
            if restored > max {
                return Err(Error::Integrity {
                    plane: 0,
                    message: format!(
                        "channel {j}: base {base} + delta {} exceeds exponent field",
                        format.exponent_of(w)
                    ),
                });
            }
            words.push(format.with_exponent(w, restored));
        }
    }
    Ok(ChannelGroupedBlock {
        format: format.clone(),
        tokens: block.tokens,
        channels: block.channels,
        words,
    })
}

/// Plane `i` is the concatenation of `P_i(G_j)` over channels in order, which
/// is exactly the disaggregation of the channel-major word sequence.
pub fn kv_bitplane_concat(block: &ChannelGroupedBlock) -> BitPlaneMatrix {
    disaggregate(&block.to_value_block())
}

/// Splits a token-major tensor of `tokens` x `channels` into groups of
/// `group_tokens`; the last group may be shorter.
pub fn split_groups(
    block: &ValueBlock,
    channels: usize,
    group_tokens: usize,
) -> Result<Vec<TokenGroup>> {
    if channels == 0 || !block.len().is_multiple_of(channels) {
        return Err(Error::arg(format!(
            "{} words do not divide into {channels} channels",
            block.len()
        )));
    }
    if !(1..=MAX_GROUP_TOKENS).contains(&group_tokens) {
        return Err(Error::arg(format!(
            "group size {group_tokens} outside 1..={MAX_GROUP_TOKENS}"
        )));
    }
    block
        .words()
        .chunks(group_tokens * channels)
        .map(|chunk| {
            TokenGroup::new(
                block.format().clone(),
                chunk.len() / channels,
                channels,
                chunk.to_vec(),
            )
        })
        .collect()
}
