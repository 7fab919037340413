//! Fixed-width word layouts and bit-field access.
//!
//! Every transform in the crate treats words as opaque bit patterns. A
//! [`FloatFormat`] only says where the sign, exponent and fraction fields sit
//! inside a word; numeric decoding ([`decode_value`]) and rounding
//! ([`encode_nearest`]) exist for diagnostics and synthetic data generation.
//!
//! Words are carried in `u32` regardless of width. Packed byte streams place
//! word `j` at bits `[j * n, (j + 1) * n)` of a little-endian bit stream, so
//! 16-bit words are plain little-endian `u16`s and 4-bit words pack two per
//! byte, low nibble first.

use std::borrow::Cow;
use std::fmt;

use crate::error::{Error, Result};

/// Bit-level layout of an `n`-bit word: `sign ‖ exponent ‖ fraction`, MSB to LSB.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FloatFormat {
    name: Cow<'static, str>,
    sign_bits: u8,
    exp_bits: u8,
    frac_bits: u8,
    bias: i32,
}

pub const BF16: FloatFormat = FloatFormat::builtin("bf16", 1, 8, 7, 127);
pub const FP16: FloatFormat = FloatFormat::builtin("fp16", 1, 5, 10, 15);
pub const FP8_E4M3: FloatFormat = FloatFormat::builtin("fp8e4m3", 1, 4, 3, 7);
pub const FP8_E5M2: FloatFormat = FloatFormat::builtin("fp8e5m2", 1, 5, 2, 15);
pub const INT8: FloatFormat = FloatFormat::builtin("int8", 0, 0, 8, 0);
pub const INT4: FloatFormat = FloatFormat::builtin("int4", 0, 0, 4, 0);

/// The built-in formats, in dtype-id order.
pub const BUILTIN_FORMATS: [FloatFormat; 6] = [BF16, FP16, FP8_E4M3, FP8_E5M2, INT8, INT4];

impl FloatFormat {
    const fn builtin(name: &'static str, sign: u8, exp: u8, frac: u8, bias: i32) -> Self {
        FloatFormat {
            name: Cow::Borrowed(name),
            sign_bits: sign,
            exp_bits: exp,
            frac_bits: frac,
            bias,
        }
    }

    /// A runtime float layout with one sign bit, `1 <= exp_bits <= 8` and
    /// `frac_bits <= 23`.
    pub fn custom(name: impl Into<String>, exp_bits: u8, frac_bits: u8, bias: i32) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::arg("custom format needs a name"));
        }
        if !(1..=8).contains(&exp_bits) || frac_bits > 23 {
            return Err(Error::arg(format!(
                "custom format `{name}`: need 1 <= E <= 8 and F <= 23, got E={exp_bits} F={frac_bits}"
            )));
        }
        Ok(FloatFormat {
            name: Cow::Owned(name),
            sign_bits: 1,
            exp_bits,
            frac_bits,
            bias,
        })
    }

    /// Looks up a built-in format, or parses the `e<E>m<F>` shorthand for a
    /// custom float layout with the IEEE default bias `2^(E-1) - 1`.
    pub fn by_name(name: &str) -> Result<Self> {
        if let Some(f) = BUILTIN_FORMATS.iter().find(|f| f.name == name) {
            return Ok(f.clone());
        }
        parse_shorthand(name).ok_or_else(|| Error::UnknownDtype(name.to_string()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sign_bits(&self) -> u32 {
        self.sign_bits as u32
    }

    pub fn exp_bits(&self) -> u32 {
        self.exp_bits as u32
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits as u32
    }

    pub fn bias(&self) -> i32 {
        self.bias
    }

    pub fn total_bits(&self) -> u32 {
        self.sign_bits() + self.exp_bits() + self.frac_bits()
    }

    pub fn is_float(&self) -> bool {
        self.exp_bits > 0
    }

    pub fn is_builtin(&self) -> bool {
        BUILTIN_FORMATS.contains(self)
    }

    pub fn word_mask(&self) -> u32 {
        low_mask(self.total_bits())
    }

    /// Mask of the exponent field in place.
    pub fn exponent_mask(&self) -> u32 {
        low_mask(self.exp_bits()) << self.frac_bits()
    }

    pub fn max_exponent_field(&self) -> u32 {
        low_mask(self.exp_bits())
    }

    /// Extracts the raw exponent field of a word (no width check).
    #[inline]
    pub fn exponent_of(&self, word: u32) -> u32 {
        (word >> self.frac_bits) & low_mask(self.exp_bits())
    }

    /// Replaces the exponent field of a word.
    #[inline]
    pub fn with_exponent(&self, word: u32, exponent: u32) -> u32 {
        let mask = self.exponent_mask();
        (word & !mask) | ((exponent << self.frac_bits) & mask)
    }

    pub(crate) fn require_exponent(&self, reason: &'static str) -> Result<()> {
        if self.is_float() {
            Ok(())
        } else {
            Err(Error::UnsupportedFormat {
                format: self.name().to_string(),
                reason,
            })
        }
    }

    pub(crate) fn check_word(&self, word: u32) -> Result<()> {
        if word & !self.word_mask() != 0 {
            return Err(Error::Format(format!(
                "word {word:#x} wider than {} bits of `{}`",
                self.total_bits(),
                self.name
            )));
        }
        Ok(())
    }
}

impl fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

fn parse_shorthand(name: &str) -> Option<FloatFormat> {
    let rest = name.strip_prefix('e')?;
    let (e, f) = rest.split_once('m')?;
    let e: u8 = e.parse().ok()?;
    let f: u8 = f.parse().ok()?;
    if e == 0 || e > 8 {
        return None;
    }
    let bias = (1i32 << (e - 1)) - 1;
    FloatFormat::custom(name, e, f, bias).ok()
}

#[inline]
pub(crate) const fn low_mask(bits: u32) -> u32 {
    if bits >= 32 {
        u32::MAX
    } else {
        (1u32 << bits) - 1
    }
}

/// Named formats available to manifests: the built-ins plus any registered
/// custom layouts.
#[derive(Clone, Debug)]
pub struct FormatRegistry {
    formats: Vec<FloatFormat>,
}

impl Default for FormatRegistry {
    fn default() -> Self {
        FormatRegistry {
            formats: BUILTIN_FORMATS.to_vec(),
        }
    }
}

impl FormatRegistry {
    pub fn register(&mut self, format: FloatFormat) -> Result<()> {
        if self.formats.iter().any(|f| f.name == format.name) {
            return Err(Error::arg(format!(
                "format `{}` already registered",
                format.name
            )));
        }
        self.formats.push(format);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<FloatFormat> {
        match self.formats.iter().find(|f| f.name == name) {
            Some(f) => Ok(f.clone()),
            None => FloatFormat::by_name(name),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &FloatFormat> {
        self.formats.iter()
    }
}

/// The three fields of a word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fields {
    pub sign: u32,
    pub exponent: u32,
    pub fraction: u32,
}

pub fn split_fields(word: u32, format: &FloatFormat) -> Result<Fields> {
    format.check_word(word)?;
    let f = format.frac_bits();
    let e = format.exp_bits();
    Ok(Fields {
        sign: (word >> (f + e)) & low_mask(format.sign_bits()),
        exponent: (word >> f) & low_mask(e),
        fraction: word & low_mask(f),
    })
}

pub fn join_fields(fields: Fields, format: &FloatFormat) -> Result<u32> {
    let f = format.frac_bits();
    let e = format.exp_bits();
    if fields.sign > low_mask(format.sign_bits())
        || fields.exponent > low_mask(e)
        || fields.fraction > low_mask(f)
    {
        return Err(Error::Format(format!(
            "{fields:?} does not fit `{}`",
            format.name()
        )));
    }
    Ok((fields.sign << (e + f)) | (fields.exponent << f) | fields.fraction)
}

/// Numeric value of a word with IEEE-style semantics: exponent field 0 is
/// subnormal, all-ones is infinity (zero fraction) or NaN.
pub fn decode_value(word: u32, format: &FloatFormat) -> Result<f64> {
    format.require_exponent("numeric decoding needs an exponent field")?;
    let Fields {
        sign,
        exponent,
        fraction,
    } = split_fields(word, format)?;
    let frac_scale = (-(format.frac_bits() as f64)).exp2();
    let magnitude = if exponent == format.max_exponent_field() {
        if fraction == 0 {
            f64::INFINITY
        } else {
            f64::NAN
        }
    } else if exponent == 0 {
        (fraction as f64 * frac_scale) * ((1 - format.bias()) as f64).exp2()
    } else {
        (1.0 + fraction as f64 * frac_scale) * ((exponent as i32 - format.bias()) as f64).exp2()
    };
    Ok(if sign == 1 { -magnitude } else { magnitude })
}

/// Rounds `value` to the nearest representable word, ties to even.
/// Overflow saturates to the infinity pattern; NaN maps to a quiet NaN.
pub fn encode_nearest(value: f64, format: &FloatFormat) -> Result<u32> {
    format.require_exponent("rounding needs an exponent field")?;
    let frac_bits = format.frac_bits();
    let sign_shift = format.exp_bits() + frac_bits;
    let sign = if value.is_sign_negative() {
        1u32 << sign_shift
    } else {
        0
    };
    let inf = format.max_exponent_field() << frac_bits;

    if value.is_nan() {
        let quiet = if frac_bits > 0 {
            1 << (frac_bits - 1)
        } else {
            0
        };
        // F = 0 has no NaN encoding; the infinity pattern is the closest.
        return Ok(inf | quiet);
    }
    let magnitude = value.abs();
    if magnitude == 0.0 {
        return Ok(sign);
    }
    if magnitude.is_infinite() {
        return Ok(sign | inf);
    }

    let min_normal_exp = 1 - format.bias();
    let unbiased = unbiased_exponent(magnitude).max(min_normal_exp);
    // Quantum of the binade holding `magnitude` (or the subnormal range).
    let quantum_exp = unbiased - frac_bits as i32;
    let steps = (magnitude * (-quantum_exp as f64).exp2()).round_ties_even();
    // `steps` lies in [0, 2^(F+1)], so the carry into the next binade falls
    // out of plain addition.
    let biased = (unbiased + format.bias()) as u64;
    let code = if unbiased == min_normal_exp && steps < (1u64 << frac_bits) as f64 {
        steps as u64
    } else {
        (biased << frac_bits) + steps as u64 - (1u64 << frac_bits)
    };
    if code >= inf as u64 {
        return Ok(sign | inf);
    }
    Ok(sign | code as u32)
}

fn unbiased_exponent(magnitude: f64) -> i32 {
    let bits = magnitude.to_bits();
    let field = ((bits >> 52) & 0x7ff) as i32;
    if field == 0 {
        // f64 subnormal; far below any supported format's range.
        -1075
    } else {
        field - 1023
    }
}

/// A block of `m` words of one format.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueBlock {
    format: FloatFormat,
    words: Vec<u32>,
}

impl ValueBlock {
    pub fn new(format: FloatFormat, words: Vec<u32>) -> Result<Self> {
        let mask = format.word_mask();
        if let Some(bad) = words.iter().find(|&&w| w & !mask != 0) {
            return Err(Error::Format(format!(
                "word {bad:#x} wider than {} bits of `{}`",
                format.total_bits(),
                format.name()
            )));
        }
        Ok(ValueBlock { format, words })
    }

    pub(crate) fn new_unchecked(format: FloatFormat, words: Vec<u32>) -> Self {
        debug_assert!(words.iter().all(|&w| w & !format.word_mask() == 0));
        ValueBlock { format, words }
    }

    /// Unpacks `count` words from a little-endian packed byte stream.
    pub fn from_packed(format: FloatFormat, count: usize, bytes: &[u8]) -> Result<Self> {
        let expected = packed_len(count, format.total_bits());
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "{count} `{}` words need {expected} bytes, got {}",
                format.name(),
                bytes.len()
            )));
        }
        let words = unpack_words(bytes, count, format.total_bits());
        Ok(ValueBlock { format, words })
    }

    pub fn to_packed(&self) -> Vec<u8> {
        pack_words(&self.words, self.format.total_bits())
    }

    pub fn format(&self) -> &FloatFormat {
        &self.format
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn into_words(self) -> Vec<u32> {
        self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn packed_len(&self) -> usize {
        packed_len(self.words.len(), self.format.total_bits())
    }
}

/// Bytes needed to pack `count` words of `bits` bits.
pub fn packed_len(count: usize, bits: u32) -> usize {
    (count * bits as usize).div_ceil(8)
}

pub(crate) fn pack_words(words: &[u32], bits: u32) -> Vec<u8> {
    match bits {
        8 => words.iter().map(|&w| w as u8).collect(),
        16 => words
            .iter()
            .flat_map(|&w| (w as u16).to_le_bytes())
            .collect(),
        32 => words.iter().flat_map(|&w| w.to_le_bytes()).collect(),
        _ => {
            let mut out = Vec::with_capacity(packed_len(words.len(), bits));
            let mut acc: u64 = 0;
            let mut filled = 0u32;
            for &w in words {
                acc |= (w as u64) << filled;
                filled += bits;
                while filled >= 8 {
                    out.push(acc as u8);
                    acc >>= 8;
                    filled -= 8;
                }
            }
            if filled > 0 {
                out.push(acc as u8);
            }
            out
        }
    }
}

pub(crate) fn unpack_words(bytes: &[u8], count: usize, bits: u32) -> Vec<u32> {
    match bits {
        8 => bytes.iter().map(|&b| b as u32).collect(),
        16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
            .collect(),
        32 => bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        _ => {
            let mask = low_mask(bits) as u64;
            let mut words = Vec::with_capacity(count);
            let mut acc: u64 = 0;
            let mut filled = 0u32;
            let mut iter = bytes.iter();
            while words.len() < count {
                while filled < bits {
                    acc |= (*iter.next().unwrap_or(&0) as u64) << filled;
                    filled += 8;
                }
                words.push((acc & mask) as u32);
                acc >>= bits;
                filled -= bits;
            }
            words
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_has_exactly_the_builtins() {
        let names: Vec<_> = BUILTIN_FORMATS
            .iter()
            .map(|f| f.name().to_string())
            .collect();
        assert_eq!(
            names,
            ["bf16", "fp16", "fp8e4m3", "fp8e5m2", "int8", "int4"]
        );
        for f in &BUILTIN_FORMATS {
            assert!([4, 8, 12, 16, 32].contains(&f.total_bits()));
            assert_eq!(f.total_bits(), f.sign_bits() + f.exp_bits() + f.frac_bits());
        }
        assert_eq!(
            (BF16.exp_bits(), BF16.frac_bits(), BF16.bias()),
            (8, 7, 127)
        );
        assert_eq!(
            (FP8_E5M2.exp_bits(), FP8_E5M2.frac_bits(), FP8_E5M2.bias()),
            (5, 2, 15)
        );
        assert_eq!((INT4.sign_bits(), INT4.total_bits()), (0, 4));
    }

    #[test]
    fn split_examples() {
        let one = split_fields(0x3F80, &BF16).unwrap();
        assert_eq!((one.sign, one.exponent, one.fraction), (0, 0x7F, 0));
        let zero = split_fields(0x0000, &BF16).unwrap();
        assert_eq!((zero.sign, zero.exponent, zero.fraction), (0, 0, 0));
        let neg = split_fields(0xC500, &FP16).unwrap();
        assert_eq!((neg.sign, neg.exponent, neg.fraction), (1, 0x11, 0x100));
        assert_eq!(decode_value(0xC500, &FP16).unwrap(), -5.0);
    }

    #[test]
    fn split_rejects_wide_word() {
        assert!(matches!(
            split_fields(0x1_0000, &BF16),
            Err(Error::Format(_))
        ));
        assert!(matches!(split_fields(0x100, &INT8), Err(Error::Format(_))));
    }

    #[test]
    fn split_join_exhaustive_up_to_16_bits() {
        let custom = FloatFormat::custom("fp12", 5, 6, 15).unwrap();
        for format in BUILTIN_FORMATS.iter().chain([&custom]) {
            for w in 0..(1u32 << format.total_bits()) {
                let fields = split_fields(w, format).unwrap();
                assert_eq!(join_fields(fields, format).unwrap(), w, "{format} {w:#x}");
            }
        }
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_value(0x3F80, &BF16).unwrap(), 1.0);
        assert_eq!(decode_value(0x7C00, &FP16).unwrap(), f64::INFINITY);
        assert!(decode_value(0x7C01, &FP16).unwrap().is_nan());
        assert_eq!(decode_value(0x38, &FP8_E4M3).unwrap(), 1.0);
        // smallest fp16 subnormal
        assert_eq!(decode_value(0x0001, &FP16).unwrap(), 2f64.powi(-24));
    }

    #[test]
    fn decode_rejects_integer_formats() {
        assert!(matches!(
            decode_value(1, &INT8),
            Err(Error::UnsupportedFormat { .. })
        ));
        assert!(encode_nearest(1.0, &INT4).is_err());
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_nearest(1.0, &BF16).unwrap(), 0x3F80);
        assert_eq!(encode_nearest(0.0, &FP16).unwrap(), 0x0000);
        assert_eq!(encode_nearest(-0.0, &FP16).unwrap(), 0x8000);
        assert_eq!(encode_nearest(0.1, &BF16).unwrap(), 0x3DCD);
        assert_eq!(encode_nearest(1e9, &FP16).unwrap(), 0x7C00);
        assert_eq!(encode_nearest(-1e9, &FP16).unwrap(), 0xFC00);
        assert_eq!(encode_nearest(f64::NEG_INFINITY, &BF16).unwrap(), 0xFF80);
        assert!(
            decode_value(encode_nearest(f64::NAN, &FP16).unwrap(), &FP16)
                .unwrap()
                .is_nan()
        );
    }

    #[test]
    fn encode_subnormal_carry_into_normal() {
        // Largest fp16 subnormal is (1023/1024) * 2^-14; just below 2^-14
        // rounds up into the first normal binade.
        let v = 2f64.powi(-14) * (1.0 - 2f64.powi(-12));
        assert_eq!(encode_nearest(v, &FP16).unwrap(), 0x0400);
        assert_eq!(encode_nearest(2f64.powi(-25), &FP16).unwrap(), 0x0000); // tie to even
        assert_eq!(encode_nearest(3.0 * 2f64.powi(-25), &FP16).unwrap(), 0x0002);
    }

    #[test]
    fn shorthand_and_registry() {
        let f = FloatFormat::by_name("e5m6").unwrap();
        assert_eq!(
            (f.exp_bits(), f.frac_bits(), f.bias(), f.total_bits()),
            (5, 6, 15, 12)
        );
        assert!(FloatFormat::by_name("fp7").is_err());
        assert!(FloatFormat::custom("big", 9, 3, 0).is_err());
        assert!(FloatFormat::custom("wide", 8, 24, 0).is_err());

        let mut reg = FormatRegistry::default();
        reg.register(FloatFormat::custom("fp6", 3, 2, 3).unwrap())
            .unwrap();
        assert_eq!(reg.get("fp6").unwrap().total_bits(), 6);
        assert!(reg.register(BF16).is_err());
        assert_eq!(reg.iter().count(), 7);
    }

    #[test]
    fn packing_matches_conventions() {
        let b = ValueBlock::new(INT4, vec![0x1, 0x2, 0x3]).unwrap();
        assert_eq!(b.to_packed(), vec![0x21, 0x03]);
        let b = ValueBlock::new(FP16, vec![0xABCD]).unwrap();
        assert_eq!(b.to_packed(), vec![0xCD, 0xAB]);
        let fp12 = FloatFormat::by_name("e5m6").unwrap();
        let b = ValueBlock::new(fp12.clone(), vec![0xABC, 0x123]).unwrap();
        assert_eq!(b.to_packed(), vec![0xBC, 0x3A, 0x12]);
        assert_eq!(
            ValueBlock::from_packed(fp12, 2, &[0xBC, 0x3A, 0x12]).unwrap(),
            b
        );
        assert!(ValueBlock::from_packed(INT4, 3, &[0]).is_err());
        assert!(ValueBlock::new(INT4, vec![0x10]).is_err());
    }
}
