//! Index file formats.
//!
//! An index records where a payload's bits live. Two encodings exist.
//!
//! The native format carries digests of both the payload and the reference
//! image and any number of records. All integers are big-endian:
//!
//! ```text
//! "BREF" | version u8 = 1 | digest algo u8 = 1 (SHA-256)
//! payload digest [32] | corpus digest [32]
//! payload bit length u64 | record count u64
//! records...
//!   Reference: 0x00 | start bit u64 (0-based) | bit length u64
//!   Literal:   0x01 | bit length u64 | ceil(len / 8) bytes, MSB-first, zero padded
//! ```
//!
//! The `paper32` format is exactly 8 bytes: a 32-bit 1-based start ordinal and
//! a 32-bit exclusive end ordinal. It has no header, so the digests it is
//! checked against must be supplied by the caller.

use crate::bitstream::{bytes_for_bits, last_byte_mask, BitBuffer, BitSpan};
use crate::digest::Digest;

pub const MAGIC: &[u8; 4] = b"BREF";
pub const VERSION: u8 = 1;
pub const DIGEST_SHA256: u8 = 1;

/// Serialized header size in bytes.
pub const HEADER_LEN: usize = 4 + 1 + 1 + 32 + 32 + 8 + 8;
/// Serialized size of a reference record in bytes.
pub const REFERENCE_RECORD_LEN: usize = 17;
/// Fixed bytes of a literal record ahead of its payload.
pub const LITERAL_OVERHEAD_LEN: usize = 9;
/// Size of a `paper32` index in bytes.
pub const PAPER32_LEN: usize = 8;

const TAG_REFERENCE: u8 = 0x00;
const TAG_LITERAL: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("invalid index: {0}")]
    Validation(String),
    #[error("{0}; use the native index format instead")]
    Capacity(String),
}

impl IndexError {
    fn parse(offset: usize, message: impl Into<String>) -> Self {
        IndexError::Parse {
            offset,
            message: message.into(),
        }
    }
}

/// One piece of the payload, either located in the corpus or carried inline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexRecord {
    Reference(BitSpan),
    Literal(BitBuffer),
}

impl IndexRecord {
    /// Payload bits this record decodes to.
    pub fn bit_len(&self) -> u64 {
        match self {
            IndexRecord::Reference(span) => span.bit_len(),
            IndexRecord::Literal(bits) => bits.bit_len(),
        }
    }

    pub fn is_reference(&self) -> bool {
        matches!(self, IndexRecord::Reference(_))
    }

    /// Serialized size in bytes.
    pub fn encoded_len(&self) -> usize {
        match self {
            IndexRecord::Reference(_) => REFERENCE_RECORD_LEN,
            IndexRecord::Literal(bits) => {
                LITERAL_OVERHEAD_LEN + bytes_for_bits(bits.bit_len()) as usize
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexFile {
    pub version: u8,
    pub corpus_digest: Digest,
    pub payload_digest: Digest,
    pub payload_bit_len: u64,
    pub records: Vec<IndexRecord>,
}

impl IndexFile {
    pub fn new(
        corpus_digest: Digest,
        payload_digest: Digest,
        payload_bit_len: u64,
        records: Vec<IndexRecord>,
    ) -> Self {
        IndexFile {
            version: VERSION,
            corpus_digest,
            payload_digest,
            payload_bit_len,
            records,
        }
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        if self.version != VERSION {
            return Err(IndexError::Validation(format!(
                "unsupported version {}",
                self.version
            )));
        }
        if self.payload_bit_len == 0 {
            return Err(IndexError::Validation("payload bit length is zero".into()));
        }
        let mut total = 0u64;
        for (i, r) in self.records.iter().enumerate() {
            if r.bit_len() == 0 {
                return Err(IndexError::Validation(format!("record {i} is empty")));
            }
            total = total
                .checked_add(r.bit_len())
                .ok_or_else(|| IndexError::Validation("record lengths overflow".into()))?;
        }
        if total != self.payload_bit_len {
            return Err(IndexError::Validation(format!(
                "records cover {total} bits but payload has {}",
                self.payload_bit_len
            )));
        }
        Ok(())
    }

    /// Serialized native size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self
                .records
                .iter()
                .map(IndexRecord::encoded_len)
                .sum::<usize>()
    }

    pub fn reference_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_reference()).count()
    }

    pub fn literal_count(&self) -> usize {
        self.records.len() - self.reference_count()
    }

    /// The span of a single-reference index, the only shape `paper32` can hold.
    pub fn single_reference(&self) -> Option<BitSpan> {
        match self.records.as_slice() {
            [IndexRecord::Reference(span)] => Some(*span),
            _ => None,
        }
    }
}

pub fn write_native(idx: &IndexFile) -> Result<Vec<u8>, IndexError> {
    idx.validate()?;
    let mut out = Vec::with_capacity(idx.encoded_len());
    out.extend_from_slice(MAGIC);
    out.push(idx.version);
    out.push(DIGEST_SHA256);
    out.extend_from_slice(idx.payload_digest.as_bytes());
    out.extend_from_slice(idx.corpus_digest.as_bytes());
    out.extend_from_slice(&idx.payload_bit_len.to_be_bytes());
    out.extend_from_slice(&(idx.records.len() as u64).to_be_bytes());
    for r in &idx.records {
        match r {
            IndexRecord::Reference(span) => {
                out.push(TAG_REFERENCE);
                out.extend_from_slice(&span.start_bit().to_be_bytes());
                out.extend_from_slice(&span.bit_len().to_be_bytes());
            }
            IndexRecord::Literal(bits) => {
                out.push(TAG_LITERAL);
                out.extend_from_slice(&bits.bit_len().to_be_bytes());
                out.extend_from_slice(&bits.as_bytes()[..bytes_for_bits(bits.bit_len()) as usize]);
            }
        }
    }
    debug_assert_eq!(out.len(), idx.encoded_len());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IndexError> {
        if self.bytes.len() - self.pos < n {
            return Err(IndexError::parse(self.pos, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, IndexError> {
        Ok(self.take(1, what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<u64, IndexError> {
        Ok(u64::from_be_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn digest(&mut self, what: &str) -> Result<Digest, IndexError> {
        Ok(Digest::from_bytes(self.take(32, what)?.try_into().unwrap()))
    }
}

pub fn read_native(bytes: &[u8]) -> Result<IndexFile, IndexError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(IndexError::parse(0, "bad magic"));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(IndexError::parse(
            4,
            format!("unsupported version {version}"),
        ));
    }
    let algo = r.u8("digest algorithm")?;
    if algo != DIGEST_SHA256 {
        return Err(IndexError::parse(
            5,
            format!("unknown digest algorithm {algo}"),
        ));
    }
    let payload_digest = r.digest("payload digest")?;
    let corpus_digest = r.digest("corpus digest")?;
    let payload_bit_len = r.u64("payload bit length")?;
    let count = r.u64("record count")?;
    // Each record needs at least 9 bytes; reject absurd counts before allocating.
    if count > (bytes.len() / LITERAL_OVERHEAD_LEN) as u64 {
        return Err(IndexError::parse(
            HEADER_LEN - 8,
            format!("record count {count} exceeds input"),
        ));
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = r.pos;
        let record = match r.u8("record tag")? {
            TAG_REFERENCE => {
                let start = r.u64("reference start")?;
                let len = r.u64("reference length")?;
                let span = BitSpan::new(start, len)
                    .map_err(|e| IndexError::Validation(format!("record at byte {at}: {e}")))?;
                IndexRecord::Reference(span)
            }
            TAG_LITERAL => {
                let len = r.u64("literal length")?;
                if len == 0 {
                    return Err(IndexError::Validation(format!(
                        "empty literal at byte {at}"
                    )));
                }
                let n = usize::try_from(bytes_for_bits(len))
                    .map_err(|_| IndexError::parse(at, "literal too large"))?;
                let body = r.take(n, "literal payload")?;
                if body[n - 1] & !last_byte_mask(len) != 0 {
                    return Err(IndexError::parse(r.pos - 1, "nonzero literal padding"));
                }
                IndexRecord::Literal(BitBuffer::from_bytes_with_len(body.to_vec(), len).unwrap())
            }
            tag => {
                return Err(IndexError::parse(
                    at,
                    format!("unknown record tag {tag:#04x}"),
                ))
            }
        };
        records.push(record);
    }
    if r.pos != bytes.len() {
        return Err(IndexError::parse(r.pos, "trailing bytes after last record"));
    }
    let idx = IndexFile {
        version,
        corpus_digest,
        payload_digest,
        payload_bit_len,
        records,
    };
    idx.validate()?;
    Ok(idx)
}

/// Two big-endian 32-bit fields: the 1-based ordinal of the first bit and
/// the exclusive end ordinal (`start + len`), so `end - start` is the length.
pub fn write_paper32(span: BitSpan) -> Result<[u8; PAPER32_LEN], IndexError> {
    let start = span.start_bit() + 1;
    let end = start
        .checked_add(span.bit_len())
        .ok_or_else(|| IndexError::Capacity("span end overflows".into()))?;
    let start32 = u32::try_from(start).map_err(|_| {
        IndexError::Capacity(format!("start ordinal {start} does not fit in 32 bits"))
    })?;
    let end32 = u32::try_from(end)
        .map_err(|_| IndexError::Capacity(format!("end ordinal {end} does not fit in 32 bits")))?;
    let mut out = [0u8; PAPER32_LEN];
    out[..4].copy_from_slice(&start32.to_be_bytes());
    out[4..].copy_from_slice(&end32.to_be_bytes());
    Ok(out)
}

/// The two ordinals stored in a `paper32` file.
pub fn paper32_ordinals(bytes: &[u8]) -> Result<(u32, u32), IndexError> {
    if bytes.len() != PAPER32_LEN {
        return Err(IndexError::parse(
            bytes.len().min(PAPER32_LEN),
            format!("paper32 index must be exactly 8 bytes, got {}", bytes.len()),
        ));
    }
    let start = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    let end = u32::from_be_bytes(bytes[4..].try_into().unwrap());
    Ok((start, end))
}

pub fn read_paper32(
    bytes: &[u8],
    payload_digest: Digest,
    corpus_digest: Digest,
) -> Result<IndexFile, IndexError> {
    let (start, end) = paper32_ordinals(bytes)?;
    if start == 0 {
        return Err(IndexError::Validation(
            "start ordinal 0 (ordinals are 1-based)".into(),
        ));
    }
    if end <= start {
        return Err(IndexError::Validation(format!(
            "end ordinal {end} not after start {start}"
        )));
    }
    let span = BitSpan::new(u64::from(start) - 1, u64::from(end - start)).unwrap();
    Ok(IndexFile::new(
        corpus_digest,
        payload_digest,
        span.bit_len(),
        vec![IndexRecord::Reference(span)],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn span(start: u64, len: u64) -> BitSpan {
        BitSpan::new(start, len).unwrap()
    }

    fn sample_index(records: Vec<IndexRecord>) -> IndexFile {
        let len = records.iter().map(IndexRecord::bit_len).sum();
        IndexFile::new(Digest::of(b"corpus"), Digest::of(b"payload"), len, records)
    }

    #[test]
    fn single_reference_layout() {
        let idx = sample_index(vec![IndexRecord::Reference(span(100, 50))]);
        let bytes = write_native(&idx).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 17);
        let rec = &bytes[HEADER_LEN..];
        assert_eq!(rec[0], 0);
        assert_eq!(u64::from_be_bytes(rec[1..9].try_into().unwrap()), 100);
        assert_eq!(u64::from_be_bytes(rec[9..17].try_into().unwrap()), 50);
        assert_eq!(read_native(&bytes).unwrap(), idx);
    }

    #[test]
    fn zero_records_rejected() {
        let idx = sample_index(vec![]);
        assert!(matches!(write_native(&idx), Err(IndexError::Validation(_))));
    }

    #[test]
    fn truncated_header_is_parse_error() {
        let idx = sample_index(vec![IndexRecord::Reference(span(0, 8))]);
        let bytes = write_native(&idx).unwrap();
        for cut in [0, 3, 4, 40, HEADER_LEN - 1, HEADER_LEN + 5] {
            assert!(
                matches!(read_native(&bytes[..cut]), Err(IndexError::Parse { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn malformed_inputs_rejected() {
        let idx = sample_index(vec![IndexRecord::Literal(
            BitBuffer::from_bit_str("101").unwrap(),
        )]);
        let good = write_native(&idx).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(read_native(&bad), Err(IndexError::parse(0, "bad magic")));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            read_native(&bad),
            Err(IndexError::Parse { offset: 4, .. })
        ));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(read_native(&bad), Err(IndexError::Parse { .. })));

        let mut bad = good.clone();
        *bad.last_mut().unwrap() |= 0x01;
        assert!(matches!(read_native(&bad), Err(IndexError::Parse { .. })));

        let mut bad = good.clone();
        bad[HEADER_LEN] = 7;
        assert!(
            matches!(read_native(&bad), Err(IndexError::Parse { offset, .. }) if offset == HEADER_LEN)
        );
    }

    #[test]
    fn length_mismatch_is_validation_error() {
        let mut idx = sample_index(vec![IndexRecord::Reference(span(0, 8))]);
        idx.payload_bit_len = 9;
        assert!(matches!(write_native(&idx), Err(IndexError::Validation(_))));
        // Patch the stored length of a well-formed file.
        idx.payload_bit_len = 8;
        let mut bytes = write_native(&idx).unwrap();
        bytes[HEADER_LEN - 9] = 9;
        assert!(matches!(
            read_native(&bytes),
            Err(IndexError::Validation(_))
        ));
    }

    #[test]
    fn paper32_examples() {
        let s = span(2_534_988_330, 1_000_000_000);
        let b = write_paper32(s).unwrap();
        assert_eq!(b.len() * 8, 64);
        assert_eq!(
            paper32_ordinals(&b).unwrap(),
            (2_534_988_331, 3_534_988_331)
        );

        assert_eq!(
            paper32_ordinals(&write_paper32(span(0, 1)).unwrap()).unwrap(),
            (1, 2)
        );

        // 1-based start ordinal 2^32.
        let err = write_paper32(span((1 << 32) - 1, 1)).unwrap_err();
        assert!(matches!(err, IndexError::Capacity(_)));
        // End ordinal overflow alone is also a capacity error.
        assert!(matches!(
            write_paper32(span(u32::MAX as u64 - 10, 20)),
            Err(IndexError::Capacity(_))
        ));
    }

    #[test]
    fn paper32_read_examples() {
        let d = Digest::of(b"x");
        let mut bytes = [0u8; 8];
        bytes[..4].copy_from_slice(&2_534_988_331u32.to_be_bytes());
        bytes[4..].copy_from_slice(&3_534_988_331u32.to_be_bytes());
        let idx = read_paper32(&bytes, d, d).unwrap();
        assert_eq!(
            idx.single_reference(),
            Some(span(2_534_988_330, 1_000_000_000))
        );
        assert_eq!(idx.payload_bit_len, 1_000_000_000);

        let idx = read_paper32(&write_paper32(span(0, 1)).unwrap(), d, d).unwrap();
        assert_eq!(idx.single_reference(), Some(span(0, 1)));

        let mut five = [0u8; 8];
        five[3] = 5;
        five[7] = 5;
        assert!(matches!(
            read_paper32(&five, d, d),
            Err(IndexError::Validation(_))
        ));
        assert!(matches!(
            read_paper32(&five[..7], d, d),
            Err(IndexError::Parse { .. })
        ));
    }

    fn arb_record() -> impl Strategy<Value = IndexRecord> {
        prop_oneof![
            (0u64..u64::MAX / 2, 1u64..1 << 40)
                .prop_map(|(s, l)| IndexRecord::Reference(span(s, l))),
            proptest::collection::vec(any::<bool>(), 1..100).prop_map(|v| {
                let s: String = v.iter().map(|&b| if b { '1' } else { '0' }).collect();
                IndexRecord::Literal(BitBuffer::from_bit_str(&s).unwrap())
            }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn native_round_trip(records in proptest::collection::vec(arb_record(), 1..12), a in any::<[u8; 32]>(), b in any::<[u8; 32]>()) {
            let len = records.iter().map(IndexRecord::bit_len).sum();
            let idx = IndexFile::new(Digest::from_bytes(a), Digest::from_bytes(b), len, records);
            let bytes = write_native(&idx).unwrap();
            prop_assert_eq!(bytes.len(), idx.encoded_len());
            prop_assert_eq!(&write_native(&idx).unwrap(), &bytes);
            prop_assert_eq!(read_native(&bytes).unwrap(), idx);
        }

        #[test]
        fn paper32_round_trip(start in 0u64..u32::MAX as u64, len in 1u64..u32::MAX as u64) {
            let s = span(start, len);
            let d = Digest::of(b"");
            match write_paper32(s) {
                Ok(bytes) => {
                    prop_assert!(start + 1 + len <= u32::MAX as u64);
                    prop_assert_eq!(read_paper32(&bytes, d, d).unwrap().single_reference(), Some(s));
                }
                Err(e) => {
                    prop_assert!(start + 1 + len > u32::MAX as u64);
                    prop_assert!(matches!(e, IndexError::Capacity(_)), "unexpected error");
                }
            }
        }
    }
}
