//! Bit-packed binary codes, codebooks, distances, sampling, and multi-head
//! partitioning.
//!
//! A code is a vector over `{-1, +1}` stored one bit per position (bit value
//! 1 means +1). Packing is little-endian within 64-bit words: bit `i` lives
//! in word `i / 64` at position `i % 64`, and storage beyond bit `K - 1` is
//! always zero.

use std::cmp::Ordering;
use std::io::{Read, Write};

use rand::Rng;

use crate::{Error, Result};

/// A packed K-bit vector over `{-1, +1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    words: Vec<u64>,
    len: usize,
}

impl BinaryCode {
    /// All-(-1) code of `len` bits.
    pub fn zeros(len: usize) -> Self {
        assert!(len >= 1, "code length must be at least 1");
        Self {
            words: vec![0u64; len.div_ceil(64)],
            len,
        }
    }

    /// Builds a code from `+1`/`-1` entries.
    pub fn from_signs(signs: &[i8]) -> Self {
        let mut code = Self::zeros(signs.len());
        for (i, &s) in signs.iter().enumerate() {
            debug_assert!(s == 1 || s == -1);
            if s > 0 {
                code.set_bit(i, true);
            }
        }
        code
    }

    /// Binarizes a real vector: nonnegative entries map to +1.
    pub fn from_reals(values: &[f64]) -> Self {
        let mut code = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            if v >= 0.0 {
                code.set_bit(i, true);
            }
        }
        code
    }

    /// Interprets the low `len` bits of `value` as a code (bit 0 first).
    pub fn from_value(value: u64, len: usize) -> Self {
        assert!((1..=64).contains(&len));
        let mut code = Self::zeros(len);
        code.words[0] = if len == 64 {
            value
        } else {
            value & ((1u64 << len) - 1)
        };
        code
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    /// Unpacks to `+1`/`-1` entries.
    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.len)
            .map(|i| if self.bit(i) { 1 } else { -1 })
            .collect()
    }

    /// Unpacks to `+1.0`/`-1.0` entries.
    pub fn to_signs_f64(&self) -> Vec<f64> {
        (0..self.len)
            .map(|i| if self.bit(i) { 1.0 } else { -1.0 })
            .collect()
    }

    /// Bit string with bit 0 first; '1' marks +1.
    pub fn to_bit_string(&self) -> String {
        (0..self.len)
            .map(|i| if self.bit(i) { '1' } else { '0' })
            .collect()
    }

    /// Parses the output of [`to_bit_string`](Self::to_bit_string).
    pub fn from_bit_string(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::InvalidParameter("empty bit string".into()));
        }
        let mut code = Self::zeros(s.len());
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '1' => code.set_bit(i, true),
                '0' => {}
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "invalid bit character {other:?}"
                    )))
                }
            }
        }
        Ok(code)
    }

    /// Copy with the bits at `positions` flipped.
    pub fn with_flipped(&self, positions: &[usize]) -> Self {
        let mut out = self.clone();
        for &p in positions {
            out.set_bit(p, !out.bit(p));
        }
        out
    }

    /// Record bytes for file storage: `ceil(len / 8)` bytes, bit `j` of the
    /// record at byte `j / 8`, position `j % 8`, padding bits zero.
    pub fn to_record_bytes(&self) -> Vec<u8> {
        let n = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(n);
        for word in &self.words {
            out.extend_from_slice(&word.to_le_bytes());
        }
        out.truncate(n);
        out
    }

    /// Rebuilds a code from record bytes. Fails if padding bits are set.
    pub fn from_record_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::InvalidParameter(format!(
                "record has {} bytes, expected {}",
                bytes.len(),
                len.div_ceil(8)
            )));
        }
        let mut words = vec![0u64; len.div_ceil(64)];
        for (i, &b) in bytes.iter().enumerate() {
            words[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        let code = Self { words, len };
        if code.padding_is_zero() {
            Ok(code)
        } else {
            Err(Error::InvalidParameter(
                "nonzero padding bits in code record".into(),
            ))
        }
    }

    fn padding_is_zero(&self) -> bool {
        let rem = self.len % 64;
        if rem == 0 {
            return true;
        }
        let last = self.words[self.len / 64];
        last >> rem == 0
    }

    fn lex_cmp(&self, other: &Self) -> Ordering {
        debug_assert_eq!(self.len, other.len);
        for i in 0..self.len {
            match (self.bit(i), other.bit(i)) {
                (false, true) => return Ordering::Less,
                (true, false) => return Ordering::Greater,
                _ => {}
            }
        }
        Ordering::Equal
    }
}

impl PartialOrd for BinaryCode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lexicographic over bit positions from 0, with -1 (bit 0) before +1.
impl Ord for BinaryCode {
    fn cmp(&self, other: &Self) -> Ordering {
        self.lex_cmp(other)
    }
}

/// Number of positions where `a` and `b` differ.
pub fn hamming_distance(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.len != b.len {
        return Err(Error::LengthMismatch {
            left: a.len,
            right: b.len,
        });
    }
    Ok(a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones())
        .sum())
}

/// Squared Euclidean distance between the `{-1, +1}` vectors, which is
/// exactly `4 * hamming_distance`.
pub fn sq_euclidean(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    Ok(4 * hamming_distance(a, b)?)
}

/// An ordered pool of `M` candidate codes, all of length `K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    codes: Vec<BinaryCode>,
    bits: usize,
}

impl Codebook {
    pub fn new(codes: Vec<BinaryCode>) -> Result<Self> {
        let bits = match codes.first() {
            Some(c) => c.len(),
            None => return Err(Error::InvalidParameter("empty codebook".into())),
        };
        if let Some(bad) = codes.iter().find(|c| c.len() != bits) {
            return Err(Error::LengthMismatch {
                left: bits,
                right: bad.len(),
            });
        }
        Ok(Self { codes, bits })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, m: usize) -> &BinaryCode {
        &self.codes[m]
    }

    pub fn codes(&self) -> &[BinaryCode] {
        &self.codes
    }
}

/// Outcome of Bernoulli sampling: the codebook plus any duplicate pairs
/// `(first_index, later_index)` found in it.
#[derive(Debug, Clone)]
pub struct BernoulliSample {
    pub codebook: Codebook,
    pub duplicates: Vec<(usize, usize)>,
}

/// Samples `m` codes of `k` bits with each bit independently fair.
///
/// Duplicates may occur for small `k`; they are reported, not rejected.
pub fn sample_codebook_bernoulli(
    k: usize,
    m: usize,
    rng: &mut impl Rng,
) -> Result<BernoulliSample> {
    if k < 1 || m < 1 {
        return Err(Error::InvalidParameter(format!(
            "codebook needs k >= 1 and m >= 1, got k={k}, m={m}"
        )));
    }
    let mut codes = Vec::with_capacity(m);
    for _ in 0..m {
        let mut code = BinaryCode::zeros(k);
        for w in 0..code.words.len() {
            code.words[w] = rng.random::<u64>();
        }
        let rem = k % 64;
        if rem != 0 {
            let last = code.words.len() - 1;
            code.words[last] &= (1u64 << rem) - 1;
        }
        codes.push(code);
    }
    let mut seen: std::collections::HashMap<&BinaryCode, usize> = std::collections::HashMap::new();
    let mut duplicates = Vec::new();
    for (i, code) in codes.iter().enumerate() {
        match seen.entry(code) {
            std::collections::hash_map::Entry::Occupied(e) => duplicates.push((*e.get(), i)),
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(i);
            }
        }
    }
    Ok(BernoulliSample {
        codebook: Codebook::new(codes)?,
        duplicates,
    })
}

// Above this bound we enumerate the whole space and shuffle a prefix, giving
// exact uniformity for the small-k regime; beyond it rejection sampling is
// used instead.
const ENUMERATION_LIMIT_BITS: usize = 20;

/// Samples `m` pairwise-distinct codes uniformly from the `2^k` possibilities.
pub fn sample_codebook_unique(k: usize, m: usize, rng: &mut impl Rng) -> Result<Codebook> {
    if k < 1 || m < 1 {
        return Err(Error::InvalidParameter(format!(
            "codebook needs k >= 1 and m >= 1, got k={k}, m={m}"
        )));
    }
    if k < usize::BITS as usize && (m as u128) > (1u128 << k) {
        return Err(Error::InvalidParameter(format!(
            "cannot sample {m} distinct codes of {k} bits (space holds {})",
            1u128 << k
        )));
    }
    let codes = if k <= ENUMERATION_LIMIT_BITS {
        // Partial Fisher-Yates over the enumerated space.
        let total = 1usize << k;
        let mut values: Vec<u64> = (0..total as u64).collect();
        for i in 0..m {
            let j = i + rng.random_range(0..total - i);
            values.swap(i, j);
        }
        values[..m]
            .iter()
            .map(|&v| BinaryCode::from_value(v, k))
            .collect()
    } else {
        let mut seen = std::collections::HashSet::with_capacity(m);
        let mut codes = Vec::with_capacity(m);
        while codes.len() < m {
            let sample = sample_codebook_bernoulli(k, 1, rng)?;
            let code = sample.codebook.codes.into_iter().next().unwrap();
            if seen.insert(code.clone()) {
                codes.push(code);
            }
        }
        codes
    };
    Codebook::new(codes)
}

/// Partition of `K`-bit codes into `H` contiguous heads of `d = K / H` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    heads: usize,
    width: usize,
}

impl HeadLayout {
    pub fn new(heads: usize, width: usize) -> Result<Self> {
        if heads < 1 || width < 1 {
            return Err(Error::InvalidParameter(format!(
                "head layout needs heads >= 1 and width >= 1, got {heads} x {width}"
            )));
        }
        Ok(Self { heads, width })
    }

    /// Layout of `heads` equal slices of a `bits`-bit code.
    pub fn for_bits(bits: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !bits.is_multiple_of(heads) {
            return Err(Error::InvalidParameter(format!(
                "{heads} heads do not evenly split {bits} bits"
            )));
        }
        Self::new(heads, bits / heads)
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> usize {
        self.heads * self.width
    }
}

/// Extracts head `h`: bits `[h*d, (h+1)*d)` as a `d`-bit code.
pub fn head_slice(code: &BinaryCode, layout: HeadLayout, h: usize) -> Result<BinaryCode> {
    if layout.bits() != code.len() {
        return Err(Error::LengthMismatch {
            left: layout.bits(),
            right: code.len(),
        });
    }
    if h >= layout.heads() {
        return Err(Error::InvalidParameter(format!(
            "head index {h} out of range for {} heads",
            layout.heads()
        )));
    }
    let d = layout.width();
    let mut out = BinaryCode::zeros(d);
    for j in 0..d {
        if code.bit(h * d + j) {
            out.set_bit(j, true);
        }
    }
    Ok(out)
}

/// Concatenates equal-length head parts back into one code.
pub fn concat_heads(parts: &[BinaryCode]) -> Result<BinaryCode> {
    let d = match parts.first() {
        Some(p) => p.len(),
        None => {
            return Err(Error::InvalidParameter(
                "no head parts to concatenate".into(),
            ))
        }
    };
    if let Some(bad) = parts.iter().find(|p| p.len() != d) {
        return Err(Error::LengthMismatch {
            left: d,
            right: bad.len(),
        });
    }
    let mut out = BinaryCode::zeros(parts.len() * d);
    for (h, part) in parts.iter().enumerate() {
        for j in 0..d {
            if part.bit(j) {
                out.set_bit(h * d + j, true);
            }
        }
    }
    Ok(out)
}

/// Largest `H` such that `d = K / H` bits can still hold `M` distinct
/// sub-codes: `floor(K / ceil(log2 M))`.
pub fn max_heads(k: usize, m: usize) -> Result<usize> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "max_heads needs m >= 2, got {m}"
        )));
    }
    let needed_bits = (u64::BITS - (m as u64 - 1).leading_zeros()) as usize;
    Ok(k / needed_bits)
}

/// Minimum and mean pairwise Hamming distance over a set of codes.
///
/// The mean is kept exact as `(sum, pairs)`; [`DistanceStats::d_avg`] renders
/// it as a float.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistanceStats {
    pub d_min: u32,
    pub sum: u64,
    pub pairs: u64,
}

impl DistanceStats {
    pub fn d_avg(&self) -> f64 {
        self.sum as f64 / self.pairs as f64
    }
}

pub fn codebook_distance_stats(codes: &[BinaryCode]) -> Result<DistanceStats> {
    if codes.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "distance stats need at least 2 codes, got {}",
            codes.len()
        )));
    }
    let mut d_min = u32::MAX;
    let mut sum = 0u64;
    let mut pairs = 0u64;
    for i in 0..codes.len() {
        for j in i + 1..codes.len() {
            let d = hamming_distance(&codes[i], &codes[j])?;
            d_min = d_min.min(d);
            sum += d as u64;
            pairs += 1;
        }
    }
    Ok(DistanceStats { d_min, sum, pairs })
}

const CODEBOOK_MAGIC: [u8; 4] = *b"CRHC";
const CODEBOOK_VERSION: u32 = 1;

/// Writes the codebook file: magic `CRHC`, u32 version, u32 K, u32 M, then
/// `M` records of `ceil(K/8)` bytes. Bit-exact across platforms.
pub fn write_codebook(codebook: &Codebook, writer: &mut impl Write) -> Result<()> {
    writer.write_all(&CODEBOOK_MAGIC)?;
    writer.write_all(&CODEBOOK_VERSION.to_le_bytes())?;
    writer.write_all(&(codebook.bits() as u32).to_le_bytes())?;
    writer.write_all(&(codebook.len() as u32).to_le_bytes())?;
    for code in codebook.codes() {
        writer.write_all(&code.to_record_bytes())?;
    }
    Ok(())
}

pub fn read_codebook(reader: &mut impl Read) -> Result<Codebook> {
    let mut offset = 0u64;
    let magic = read_exact(reader, 4, &mut offset, "codebook magic")?;
    if magic != CODEBOOK_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad codebook magic {magic:02x?}, expected {CODEBOOK_MAGIC:02x?}"),
        });
    }
    let version = read_u32(reader, &mut offset, "codebook version")?;
    if version != CODEBOOK_VERSION {
        return Err(Error::Format {
            offset: offset - 4,
            message: format!("unsupported codebook version {version}"),
        });
    }
    let k = read_u32(reader, &mut offset, "code length")? as usize;
    let m = read_u32(reader, &mut offset, "codebook size")? as usize;
    if k < 1 || m < 1 {
        return Err(Error::Format {
            offset,
            message: format!("invalid codebook dimensions k={k}, m={m}"),
        });
    }
    let record_len = k.div_ceil(8);
    let mut codes = Vec::with_capacity(m);
    for i in 0..m {
        let record_offset = offset;
        let bytes = read_exact(reader, record_len, &mut offset, "code record")?;
        let code = BinaryCode::from_record_bytes(&bytes, k).map_err(|e| Error::Format {
            offset: record_offset,
            message: format!("code record {i}: {e}"),
        })?;
        codes.push(code);
    }
    Codebook::new(codes)
}

pub(crate) fn read_exact(
    reader: &mut impl Read,
    len: usize,
    offset: &mut u64,
    what: &str,
) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    let mut filled = 0;
    while filled < len {
        let n = reader.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(Error::Format {
                offset: *offset + filled as u64,
                message: format!(
                    "truncated input while reading {what}: expected {len} bytes, got {filled}"
                ),
            });
        }
        filled += n;
    }
    *offset += len as u64;
    Ok(buf)
}

pub(crate) fn read_u32(reader: &mut impl Read, offset: &mut u64, what: &str) -> Result<u32> {
    let bytes = read_exact(reader, 4, offset, what)?;
    Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
}

pub(crate) fn read_u64(reader: &mut impl Read, offset: &mut u64, what: &str) -> Result<u64> {
    let bytes = read_exact(reader, 8, offset, what)?;
    Ok(u64::from_le_bytes(bytes.try_into().unwrap()))
}
