//! Bit-addressed views over byte buffers.
//!
//! Bits are numbered MSB-first within each byte: bit 0 of the buffer is the
//! high bit of byte 0, so the byte `0x3C` reads as `00111100`. Spans are
//! 0-based and half-open. Every buffer keeps the unused low bits of its final
//! byte zeroed, which lets equality and hashing work on whole bytes.

use std::fmt;
use std::fs::File;
use std::io;
use std::path::Path;
use std::sync::Arc;

use memmap2::Mmap;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BitError {
    #[error("bit index {index} out of range for buffer of {bit_len} bits")]
    IndexOutOfRange { index: u64, bit_len: u64 },
    #[error("span [{start}, {start}+{len}) exceeds buffer of {bit_len} bits")]
    SpanOutOfRange { start: u64, len: u64, bit_len: u64 },
    #[error("empty spans are not allowed")]
    EmptySpan,
    #[error("bit length {bit_len} does not match {byte_len} bytes")]
    LengthMismatch { bit_len: u64, byte_len: usize },
    #[error("padding bits after bit {bit_len} are not zero")]
    NonZeroPadding { bit_len: u64 },
    #[error("invalid character {0:?} in bit string")]
    BadBitChar(char),
}

/// A non-empty half-open bit interval `[start_bit, start_bit + bit_len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitSpan {
    start_bit: u64,
    bit_len: u64,
}

impl BitSpan {
    pub fn new(start_bit: u64, bit_len: u64) -> Result<Self, BitError> {
        if bit_len == 0 {
            return Err(BitError::EmptySpan);
        }
        if start_bit.checked_add(bit_len).is_none() {
            return Err(BitError::SpanOutOfRange {
                start: start_bit,
                len: bit_len,
                bit_len: u64::MAX,
            });
        }
        Ok(BitSpan { start_bit, bit_len })
    }

    pub fn start_bit(&self) -> u64 {
        self.start_bit
    }

    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    /// One past the last covered bit.
    pub fn end_bit(&self) -> u64 {
        self.start_bit + self.bit_len
    }

    pub fn fits_in(&self, bit_len: u64) -> bool {
        self.end_bit() <= bit_len
    }
}

enum Backing {
    Heap(Vec<u8>),
    Mapped(Mmap),
}

impl Backing {
    fn bytes(&self) -> &[u8] {
        match self {
            Backing::Heap(v) => v,
            Backing::Mapped(m) => m,
        }
    }
}

/// An immutable, cheaply clonable sequence of bits.
#[derive(Clone)]
pub struct BitBuffer {
    data: Arc<Backing>,
    bit_len: u64,
}

impl BitBuffer {
    /// Wraps whole bytes; the bit length is `8 * bytes.len()`.
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let bit_len = bytes.len() as u64 * 8;
        BitBuffer {
            data: Arc::new(Backing::Heap(bytes)),
            bit_len,
        }
    }

    /// Wraps `bytes` holding exactly `bit_len` valid bits. The byte count must
    /// be `ceil(bit_len / 8)` and any padding bits must be zero.
    pub fn from_bytes_with_len(bytes: Vec<u8>, bit_len: u64) -> Result<Self, BitError> {
        if bytes_for_bits(bit_len) != bytes.len() as u64 {
            return Err(BitError::LengthMismatch {
                bit_len,
                byte_len: bytes.len(),
            });
        }
        if let Some(&last) = bytes.last() {
            if last & !last_byte_mask(bit_len) != 0 {
                return Err(BitError::NonZeroPadding { bit_len });
            }
        }
        Ok(BitBuffer {
            data: Arc::new(Backing::Heap(bytes)),
            bit_len,
        })
    }

    /// Parses a string of `0`/`1` characters. Underscores and whitespace are
    /// ignored so long strings can be grouped.
    pub fn from_bit_str(s: &str) -> Result<Self, BitError> {
        let mut bytes = Vec::new();
        let mut n = 0u64;
        for c in s.chars() {
            let bit = match c {
                '0' => 0u8,
                '1' => 1u8,
                '_' => continue,
                c if c.is_whitespace() => continue,
                c => return Err(BitError::BadBitChar(c)),
            };
            if n.is_multiple_of(8) {
                bytes.push(0);
            }
            if bit == 1 {
                *bytes.last_mut().unwrap() |= 0x80 >> (n % 8);
            }
            n += 1;
        }
        Ok(BitBuffer {
            data: Arc::new(Backing::Heap(bytes)),
            bit_len: n,
        })
    }

    /// Reads a whole file into memory.
    pub fn read_file(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(Self::from_bytes(std::fs::read(path)?))
    }

    /// Maps a file read-only. Reads through the mapping behave exactly like a
    /// heap copy; the file must not be modified while mapped.
    pub fn map_file(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        if len == 0 {
            return Ok(Self::from_bytes(Vec::new()));
        }
        // SAFETY: the mapping is read-only and callers treat images as
        // immutable for the lifetime of the buffer.
        let map = unsafe { Mmap::map(&file)? };
        Ok(BitBuffer {
            data: Arc::new(Backing::Mapped(map)),
            bit_len: len * 8,
        })
    }

    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    pub fn is_empty(&self) -> bool {
        self.bit_len == 0
    }

    /// Backing bytes, `ceil(bit_len / 8)` of them, zero padded.
    pub fn as_bytes(&self) -> &[u8] {
        self.data.bytes()
    }

    pub fn is_byte_aligned(&self) -> bool {
        self.bit_len.is_multiple_of(8)
    }

    pub fn bit_at(&self, i: u64) -> Result<u8, BitError> {
        if i >= self.bit_len {
            return Err(BitError::IndexOutOfRange {
                index: i,
                bit_len: self.bit_len,
            });
        }
        Ok(bit_of(self.as_bytes(), i))
    }

    /// Copies the bits covered by `span` into a fresh buffer.
    pub fn extract(&self, span: BitSpan) -> Result<BitBuffer, BitError> {
        if !span.fits_in(self.bit_len) {
            return Err(BitError::SpanOutOfRange {
                start: span.start_bit,
                len: span.bit_len,
                bit_len: self.bit_len,
            });
        }
        let src = self.as_bytes();
        let out_len = bytes_for_bits(span.bit_len) as usize;
        let mut out = Vec::with_capacity(out_len + 8);
        if span.start_bit.is_multiple_of(8) {
            let first = (span.start_bit / 8) as usize;
            out.extend_from_slice(&src[first..first + out_len]);
        } else {
            let mut pos = span.start_bit;
            while out.len() < out_len {
                out.extend_from_slice(&load_word(src, pos).to_be_bytes());
                pos += 64;
            }
            out.truncate(out_len);
        }
        if let Some(last) = out.last_mut() {
            *last &= last_byte_mask(span.bit_len);
        }
        Ok(BitBuffer {
            data: Arc::new(Backing::Heap(out)),
            bit_len: span.bit_len,
        })
    }

    /// True when `self[self_start..self_start+len]` equals
    /// `other[other_start..other_start+len]`. Both ranges must be in bounds.
    pub fn range_eq(&self, self_start: u64, other: &BitBuffer, other_start: u64, len: u64) -> bool {
        debug_assert!(self_start + len <= self.bit_len);
        debug_assert!(other_start + len <= other.bit_len);
        bits_equal(
            self.as_bytes(),
            self_start,
            other.as_bytes(),
            other_start,
            len,
        )
    }

    /// Concatenates buffers bit by bit.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a BitBuffer>) -> BitBuffer {
        let mut w = BitWriter::new();
        for p in parts {
            w.push_buffer(p);
        }
        w.finish()
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.bit_len)
            .map(|i| {
                if bit_of(self.as_bytes(), i) == 1 {
                    '1'
                } else {
                    '0'
                }
            })
            .collect()
    }
}

impl PartialEq for BitBuffer {
    fn eq(&self, other: &Self) -> bool {
        self.bit_len == other.bit_len && self.as_bytes() == other.as_bytes()
    }
}

impl Eq for BitBuffer {}

impl fmt::Debug for BitBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bit_len <= 64 {
            write!(f, "BitBuffer({:?})", self.to_bit_string())
        } else {
            let head = &self.as_bytes()[..8];
            write!(
                f,
                "BitBuffer({} bits, head {})",
                self.bit_len,
                hex::encode(head)
            )
        }
    }
}

/// Appends bits MSB-first into a growing buffer.
#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity_bits(bits: u64) -> Self {
        BitWriter {
            bytes: Vec::with_capacity(bytes_for_bits(bits) as usize),
            bit_len: 0,
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    pub fn push_buffer(&mut self, buf: &BitBuffer) {
        let n = buf.bit_len();
        if n == 0 {
            return;
        }
        let shift = (self.bit_len % 8) as u32;
        let src = &buf.as_bytes()[..bytes_for_bits(n) as usize];
        if shift == 0 {
            self.bytes.extend_from_slice(src);
        } else {
            // Source padding is zero, so OR-ing whole shifted bytes is safe.
            let mut carry = self.bytes.pop().unwrap();
            for &b in src {
                self.bytes.push(carry | (b >> shift));
                carry = b << (8 - shift);
            }
            self.bytes.push(carry);
        }
        self.bit_len += n;
        self.bytes.truncate(bytes_for_bits(self.bit_len) as usize);
    }

    pub fn finish(self) -> BitBuffer {
        BitBuffer {
            data: Arc::new(Backing::Heap(self.bytes)),
            bit_len: self.bit_len,
        }
    }
}

/// Size of a file in bits. Files are whole bytes.
pub fn bit_len_of_file(path: impl AsRef<Path>) -> io::Result<u64> {
    Ok(std::fs::metadata(path)?.len() * 8)
}

pub(crate) fn bytes_for_bits(bits: u64) -> u64 {
    bits.div_ceil(8)
}

/// Mask of the valid bits in the final byte of a `bit_len`-bit buffer.
pub(crate) fn last_byte_mask(bit_len: u64) -> u8 {
    match bit_len % 8 {
        0 => 0xFF,
        r => 0xFFu8 << (8 - r),
    }
}

#[inline]
pub(crate) fn bit_of(bytes: &[u8], i: u64) -> u8 {
    (bytes[(i / 8) as usize] >> (7 - (i % 8))) & 1
}

/// The 64 bits starting at bit `pos`, MSB-first. Bits past the end of
/// `bytes` read as zero.
#[inline]
pub(crate) fn load_word(bytes: &[u8], pos: u64) -> u64 {
    let byte = (pos / 8) as usize;
    let shift = (pos % 8) as u32;
    let (hi, next) = if byte + 9 <= bytes.len() {
        let hi = u64::from_be_bytes(bytes[byte..byte + 8].try_into().unwrap());
        (hi, bytes[byte + 8])
    } else {
        let mut tmp = [0u8; 9];
        if byte < bytes.len() {
            let n = (bytes.len() - byte).min(9);
            tmp[..n].copy_from_slice(&bytes[byte..byte + n]);
        }
        (u64::from_be_bytes(tmp[..8].try_into().unwrap()), tmp[8])
    };
    if shift == 0 {
        hi
    } else {
        (hi << shift) | (u64::from(next) >> (8 - shift))
    }
}

/// Bit-exact comparison of two equally long ranges.
pub(crate) fn bits_equal(a: &[u8], a_start: u64, b: &[u8], b_start: u64, len: u64) -> bool {
    if a_start.is_multiple_of(8) && b_start.is_multiple_of(8) {
        let a0 = (a_start / 8) as usize;
        let b0 = (b_start / 8) as usize;
        let full = (len / 8) as usize;
        if a[a0..a0 + full] != b[b0..b0 + full] {
            return false;
        }
        let rem = len % 8;
        if rem == 0 {
            return true;
        }
        let mask = last_byte_mask(rem);
        return (a[a0 + full] ^ b[b0 + full]) & mask == 0;
    }
    let mut done = 0u64;
    while len - done >= 64 {
        if load_word(a, a_start + done) != load_word(b, b_start + done) {
            return false;
        }
        done += 64;
    }
    let rem = len - done;
    if rem == 0 {
        return true;
    }
    let mask = !0u64 << (64 - rem);
    (load_word(a, a_start + done) ^ load_word(b, b_start + done)) & mask == 0
}

/// Byte `t` of `bits` written starting at bit offset `shift` (0..8) of a byte
/// grid, with the mask of grid bits the pattern occupies in that byte.
#[inline]
pub(crate) fn shifted_byte(bits: &BitBuffer, shift: u32, t: usize) -> (u8, u8) {
    let src = bits.as_bytes();
    let byte_at = |i: usize| -> u8 { src.get(i).copied().unwrap_or(0) };
    let v = if shift == 0 {
        byte_at(t)
    } else if t == 0 {
        byte_at(0) >> shift
    } else {
        (byte_at(t - 1) << (8 - shift)) | (byte_at(t) >> shift)
    };
    let end_bit = u64::from(shift) + bits.bit_len();
    let mut mask = if t == 0 { 0xFFu8 >> shift } else { 0xFF };
    let last = (end_bit.div_ceil(8) as usize).saturating_sub(1);
    if t == last {
        mask &= last_byte_mask(end_bit);
    } else if t > last {
        mask = 0;
    }
    (v & mask, mask)
}

/// The first `max_bytes` bytes of `bits` as placed by [`shifted_byte`].
pub(crate) fn shifted_prefix(bits: &BitBuffer, shift: u32, max_bytes: usize) -> (Vec<u8>, Vec<u8>) {
    debug_assert!(shift < 8);
    let total = bytes_for_bits(u64::from(shift) + bits.bit_len()) as usize;
    (0..total.min(max_bytes))
        .map(|t| shifted_byte(bits, shift, t))
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bits(s: &str) -> BitBuffer {
        BitBuffer::from_bit_str(s).unwrap()
    }

    fn padding_is_zero(b: &BitBuffer) -> bool {
        b.as_bytes().len() as u64 == bytes_for_bits(b.bit_len())
            && b.as_bytes()
                .last()
                .is_none_or(|&l| l & !last_byte_mask(b.bit_len()) == 0)
    }

    #[test]
    fn bit_at_follows_msb_first_order() {
        let b = BitBuffer::from_bytes(vec![0x3C]);
        assert_eq!(b.to_bit_string(), "00111100");
        assert_eq!(b.bit_at(2).unwrap(), 1);
        assert_eq!(b.bit_at(0).unwrap(), 0);
        assert_eq!(BitBuffer::from_bytes(vec![0x80]).bit_at(0).unwrap(), 1);
    }

    #[test]
    fn bit_at_out_of_range() {
        let b = BitBuffer::from_bytes(vec![0x3C]);
        assert_eq!(
            b.bit_at(8),
            Err(BitError::IndexOutOfRange {
                index: 8,
                bit_len: 8
            })
        );
        let short = bits("101");
        assert!(short.bit_at(3).is_err());
    }

    #[test]
    fn extract_example_run_of_ones() {
        let b = BitBuffer::from_bytes(vec![0x3C]);
        let a = b.extract(BitSpan::new(2, 4).unwrap()).unwrap();
        assert_eq!(a.bit_len(), 4);
        assert_eq!(a.as_bytes(), &[0xF0]);
        assert_eq!(a, bits("1111"));
    }

    #[test]
    fn extract_identity_span() {
        let b = BitBuffer::from_bytes(vec![0xDE, 0xAD, 0xBE, 0xEF, 0x01]);
        let all = b.extract(BitSpan::new(0, b.bit_len()).unwrap()).unwrap();
        assert_eq!(all, b);
    }

    #[test]
    fn extract_rejects_out_of_range_and_empty() {
        let b = BitBuffer::from_bytes(vec![0xFF]);
        assert!(matches!(
            b.extract(BitSpan::new(4, 5).unwrap()),
            Err(BitError::SpanOutOfRange { .. })
        ));
        assert_eq!(BitSpan::new(3, 0), Err(BitError::EmptySpan));
    }

    #[test]
    fn extract_agrees_with_bit_at_on_random_spans() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut raw = vec![0u8; 512];
        rng.fill(&mut raw[..]);
        let buf = BitBuffer::from_bytes(raw);
        assert_eq!(buf.bit_len(), 4096);
        for _ in 0..500 {
            let start = rng.random_range(0..buf.bit_len());
            let len = rng.random_range(1..=buf.bit_len() - start);
            let out = buf.extract(BitSpan::new(start, len).unwrap()).unwrap();
            assert_eq!(out.bit_len(), len);
            assert!(padding_is_zero(&out));
            for j in 0..len {
                assert_eq!(out.bit_at(j).unwrap(), buf.bit_at(start + j).unwrap());
            }
        }
    }

    #[test]
    fn from_bytes_with_len_validates() {
        assert!(BitBuffer::from_bytes_with_len(vec![0xF0], 4).is_ok());
        assert_eq!(
            BitBuffer::from_bytes_with_len(vec![0xF8], 4),
            Err(BitError::NonZeroPadding { bit_len: 4 })
        );
        assert!(matches!(
            BitBuffer::from_bytes_with_len(vec![0xF0, 0x00], 4),
            Err(BitError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn file_bit_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let one = dir.path().join("one");
        let empty = dir.path().join("empty");
        std::fs::write(&one, [0u8]).unwrap();
        std::fs::write(&empty, []).unwrap();
        assert_eq!(bit_len_of_file(&one).unwrap(), 8);
        assert_eq!(bit_len_of_file(&empty).unwrap(), 0);
        assert!(bit_len_of_file(dir.path().join("missing")).is_err());

        // Sparse file at the 1 Gb payload scale; no data is written.
        let big = dir.path().join("big");
        let f = File::create(&big).unwrap();
        f.set_len(125_000_000).unwrap();
        assert_eq!(bit_len_of_file(&big).unwrap(), 1_000_000_000);
    }

    #[test]
    fn mapped_and_heap_reads_agree() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img");
        let data: Vec<u8> = (0..=255u8).cycle().take(3000).collect();
        std::fs::write(&p, &data).unwrap();
        let mapped = BitBuffer::map_file(&p).unwrap();
        let heap = BitBuffer::read_file(&p).unwrap();
        assert_eq!(mapped, heap);
        let span = BitSpan::new(13, 9001).unwrap();
        assert_eq!(mapped.extract(span).unwrap(), heap.extract(span).unwrap());
        std::fs::write(&p, []).unwrap();
        assert_eq!(BitBuffer::map_file(&p).unwrap().bit_len(), 0);
    }

    #[test]
    fn writer_concatenates_unaligned_parts() {
        let joined =
            BitBuffer::concat([&bits("101"), &bits("0011"), &bits("111111111"), &bits("0")]);
        assert_eq!(joined.to_bit_string(), "10100111111111110");
        assert!(padding_is_zero(&joined));
        let odd = BitBuffer::concat([&bits("1"), &bits("1")]);
        assert_eq!(odd, bits("11"));
    }

    #[test]
    fn shifted_prefix_places_bits() {
        let p = bits("1111");
        let (v, m) = shifted_prefix(&p, 2, 8);
        assert_eq!(v, vec![0x3C]);
        assert_eq!(m, vec![0x3C]);
        let (v, m) = shifted_prefix(&p, 6, 8);
        assert_eq!(v, vec![0x03, 0xC0]);
        assert_eq!(m, vec![0x03, 0xC0]);
    }

    fn arb_buffer() -> impl Strategy<Value = BitBuffer> {
        (proptest::collection::vec(any::<u8>(), 1..64), 0u64..8).prop_map(|(mut bytes, cut)| {
            let bit_len = bytes.len() as u64 * 8 - cut.min(bytes.len() as u64 * 8 - 1);
            bytes.truncate(bytes_for_bits(bit_len) as usize);
            let m = last_byte_mask(bit_len);
            *bytes.last_mut().unwrap() &= m;
            BitBuffer::from_bytes_with_len(bytes, bit_len).unwrap()
        })
    }

    proptest! {
        #[test]
        fn full_span_round_trips(buf in arb_buffer()) {
            let all = buf.extract(BitSpan::new(0, buf.bit_len()).unwrap()).unwrap();
            prop_assert_eq!(all, buf);
        }

        #[test]
        fn extraction_composes(buf in arb_buffer(), a in any::<u64>(), b in any::<u64>(), c in any::<u64>(), d in any::<u64>()) {
            let n = buf.bit_len();
            let s1_start = a % n;
            let s1_len = 1 + b % (n - s1_start);
            let s2_start = c % s1_len;
            let s2_len = 1 + d % (s1_len - s2_start);
            let outer = buf.extract(BitSpan::new(s1_start, s1_len).unwrap()).unwrap();
            let inner = outer.extract(BitSpan::new(s2_start, s2_len).unwrap()).unwrap();
            let direct = buf.extract(BitSpan::new(s1_start + s2_start, s2_len).unwrap()).unwrap();
            prop_assert!(padding_is_zero(&outer));
            prop_assert!(padding_is_zero(&inner));
            prop_assert_eq!(inner, direct);
        }

        #[test]
        fn range_eq_matches_per_bit(buf in arb_buffer(), a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
            let n = buf.bit_len();
            let len = 1 + a % n;
            let x = b % (n - len + 1);
            let y = c % (n - len + 1);
            let slow = (0..len).all(|j| buf.bit_at(x + j).unwrap() == buf.bit_at(y + j).unwrap());
            prop_assert_eq!(buf.range_eq(x, &buf, y, len), slow);
        }
    }
}
