//! Encoding payloads against a reference image, and decoding them back.
//!
//! [`encode_single`] locates the whole payload in the image and yields a
//! one-record index. [`encode_chunked`] splits the payload into fixed-length
//! bit chunks, locates each one independently (leftmost occurrence, always
//! searched from bit 0) and falls back to inline literal records for chunks
//! the image does not contain. [`decode`] reassembles the payload and checks
//! it against the digests stored in the index. [`verify_then_delete`] removes
//! the original file only after a bit-exact reconstruction.

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::bitstream::{BitBuffer, BitError, BitSpan, BitWriter};
use crate::corpus::CorpusImage;
use crate::digest::Digest;
use crate::index::{write_native, IndexError, IndexFile, IndexRecord};
use crate::search::{Finder, SearchError};

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("payload is not contained in the reference image")]
    NotFound,
    #[error("chunk {chunk} (bits {start_bit}..{end_bit}) is not contained in the reference image")]
    ChunkNotFound {
        chunk: usize,
        start_bit: u64,
        end_bit: u64,
    },
    #[error("index expects reference image {expected} but got {}", found.map_or("none".to_string(), |d| d.to_string()))]
    WrongCorpus {
        expected: Digest,
        found: Option<Digest>,
    },
    #[error("reconstructed payload does not match: {0}")]
    Corruption(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl From<SearchError> for CodecError {
    fn from(e: SearchError) -> Self {
        CodecError::Invalid(e.to_string())
    }
}

impl From<BitError> for CodecError {
    fn from(e: BitError) -> Self {
        CodecError::Invalid(e.to_string())
    }
}

/// The file being encoded: its bits and their digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    bits: BitBuffer,
    digest: Digest,
}

impl Payload {
    /// Digest is SHA-256 over the zero-padded bytes, which for whole-byte
    /// payloads is the ordinary file hash.
    pub fn from_bits(bits: BitBuffer) -> Self {
        let digest = Digest::of(bits.as_bytes());
        Payload { bits, digest }
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self::from_bits(BitBuffer::from_bytes(bytes))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        let path = path.as_ref();
        let bits = BitBuffer::read_file(path).map_err(|source| CodecError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_bits(bits))
    }

    pub fn bits(&self) -> &BitBuffer {
        &self.bits
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn bit_len(&self) -> u64 {
        self.bits.bit_len()
    }

    pub fn into_bits(self) -> BitBuffer {
        self.bits
    }
}

/// What to do with a chunk the image does not contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissPolicy {
    #[default]
    Literal,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkPolicy {
    chunk_bits: u64,
    pub on_miss: MissPolicy,
}

impl ChunkPolicy {
    pub fn new(chunk_bits: u64, on_miss: MissPolicy) -> Result<Self, CodecError> {
        if chunk_bits == 0 {
            return Err(CodecError::Invalid("chunk_bits must be at least 1".into()));
        }
        Ok(ChunkPolicy {
            chunk_bits,
            on_miss,
        })
    }

    pub fn chunk_bits(&self) -> u64 {
        self.chunk_bits
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeReport {
    pub index: IndexFile,
    pub reference_records: usize,
    pub literal_records: usize,
    /// Size of the native serialization in bits.
    pub index_size_bits: u64,
    pub payload_size_bits: u64,
    /// `1 - index_size / payload_size`; negative when the index is larger.
    pub savings_ratio: f64,
}

impl EncodeReport {
    fn new(index: IndexFile) -> Result<Self, CodecError> {
        let index_size_bits = write_native(&index)?.len() as u64 * 8;
        let payload_size_bits = index.payload_bit_len;
        Ok(EncodeReport {
            reference_records: index.reference_count(),
            literal_records: index.literal_count(),
            index_size_bits,
            payload_size_bits,
            savings_ratio: 1.0 - index_size_bits as f64 / payload_size_bits as f64,
            index,
        })
    }
}

impl fmt::Display for EncodeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "payload bits       {}", self.payload_size_bits)?;
        writeln!(f, "index bits         {}", self.index_size_bits)?;
        writeln!(f, "reference records  {}", self.reference_records)?;
        writeln!(f, "literal records    {}", self.literal_records)?;
        write!(f, "savings ratio      {:.6}", self.savings_ratio)
    }
}

/// Encoder bound to one reference image.
#[derive(Debug, Clone, Copy)]
pub struct Encoder<'c> {
    corpus: &'c CorpusImage,
    workers: usize,
}

impl<'c> Encoder<'c> {
    pub fn new(corpus: &'c CorpusImage) -> Self {
        Encoder { corpus, workers: 1 }
    }

    /// Threads used for searching. Values below 1 are treated as 1.
    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn encode_single(&self, payload: &Payload) -> Result<EncodeReport, CodecError> {
        let bits = payload.bits();
        if bits.is_empty() {
            return Err(CodecError::Invalid("payload is empty".into()));
        }
        let corpus = self.corpus.bits();
        // Membership needs a strictly shorter payload.
        if bits.bit_len() >= corpus.bit_len() {
            return Err(CodecError::NotFound);
        }
        let hit = Finder::new(bits)?.find_sharded(corpus, 0, self.workers)?;
        let start = hit.start_bit().ok_or(CodecError::NotFound)?;
        let span = BitSpan::new(start, bits.bit_len())?;
        EncodeReport::new(IndexFile::new(
            self.corpus.digest(),
            payload.digest(),
            bits.bit_len(),
            vec![IndexRecord::Reference(span)],
        ))
    }

    pub fn encode_chunked(
        &self,
        payload: &Payload,
        policy: ChunkPolicy,
    ) -> Result<EncodeReport, CodecError> {
        let bits = payload.bits();
        if bits.is_empty() {
            return Err(CodecError::Invalid("payload is empty".into()));
        }
        let spans: Vec<BitSpan> = (0..bits.bit_len())
            .step_by(policy.chunk_bits as usize)
            .map(|start| {
                BitSpan::new(start, policy.chunk_bits.min(bits.bit_len() - start)).unwrap()
            })
            .collect();
        let hits = self.locate_chunks(bits, &spans)?;

        let mut records = Vec::with_capacity(spans.len());
        for (i, (span, hit)) in spans.iter().zip(hits).enumerate() {
            let record = match (hit, policy.on_miss) {
                (Some(start), _) => IndexRecord::Reference(BitSpan::new(start, span.bit_len())?),
                (None, MissPolicy::Literal) => IndexRecord::Literal(bits.extract(*span)?),
                (None, MissPolicy::Fail) => {
                    return Err(CodecError::ChunkNotFound {
                        chunk: i,
                        start_bit: span.start_bit(),
                        end_bit: span.end_bit(),
                    })
                }
            };
            records.push(record);
        }
        EncodeReport::new(IndexFile::new(
            self.corpus.digest(),
            payload.digest(),
            bits.bit_len(),
            records,
        ))
    }

    /// Leftmost start of each chunk in the image, in chunk order. Chunks are
    /// handed out to workers from a shared counter; results are stored by
    /// position so the output order never depends on scheduling.
    fn locate_chunks(
        &self,
        bits: &BitBuffer,
        spans: &[BitSpan],
    ) -> Result<Vec<Option<u64>>, CodecError> {
        let corpus = self.corpus.bits();
        let locate = |span: &BitSpan| -> Result<Option<u64>, CodecError> {
            let chunk = bits.extract(*span)?;
            Ok(Finder::new(&chunk)?.find_from(corpus, 0).start_bit())
        };
        if self.workers == 1 || spans.len() < 2 {
            return spans.iter().map(locate).collect();
        }
        let next = AtomicUsize::new(0);
        type Located = (usize, Result<Option<u64>, CodecError>);
        let per_worker: Vec<Vec<Located>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..self.workers.min(spans.len()))
                .map(|_| {
                    s.spawn(|| {
                        let mut out = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            let Some(span) = spans.get(i) else { break };
                            out.push((i, locate(span)));
                        }
                        out
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("chunk worker panicked"))
                .collect()
        });
        let mut hits = vec![None; spans.len()];
        for (i, r) in per_worker.into_iter().flatten() {
            hits[i] = r?;
        }
        Ok(hits)
    }
}

/// Whole-payload encoding; fails when the payload is not a member of the image.
pub fn encode_single(a: &Payload, b: &CorpusImage) -> Result<EncodeReport, CodecError> {
    Encoder::new(b).encode_single(a)
}

pub fn encode_chunked(
    a: &Payload,
    b: &CorpusImage,
    policy: ChunkPolicy,
) -> Result<EncodeReport, CodecError> {
    Encoder::new(b).encode_chunked(a, policy)
}

/// Rebuilds the payload described by `idx` from the image `b`.
pub fn decode(idx: &IndexFile, b: &CorpusImage) -> Result<Payload, CodecError> {
    idx.validate()?;
    if b.digest() != idx.corpus_digest {
        return Err(CodecError::WrongCorpus {
            expected: idx.corpus_digest,
            found: Some(b.digest()),
        });
    }
    let corpus = b.bits();
    let mut out = BitWriter::with_capacity_bits(idx.payload_bit_len);
    for (i, r) in idx.records.iter().enumerate() {
        match r {
            IndexRecord::Reference(span) => {
                let piece = corpus.extract(*span).map_err(|_| {
                    IndexError::Validation(format!(
                        "record {i} span {}..{} exceeds image of {} bits",
                        span.start_bit(),
                        span.end_bit(),
                        corpus.bit_len()
                    ))
                })?;
                out.push_buffer(&piece);
            }
            IndexRecord::Literal(bits) => out.push_buffer(bits),
        }
    }
    if out.bit_len() != idx.payload_bit_len {
        return Err(CodecError::Corruption(format!(
            "decoded {} bits, expected {}",
            out.bit_len(),
            idx.payload_bit_len
        )));
    }
    let payload = Payload::from_bits(out.finish());
    if payload.digest() != idx.payload_digest {
        return Err(CodecError::Corruption(format!(
            "payload digest {} does not match index {}",
            payload.digest(),
            idx.payload_digest
        )));
    }
    Ok(payload)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeletionReport {
    pub path: PathBuf,
    pub freed_bits: u64,
}

/// Decodes `idx` against `b`, compares the result with the file at `a_path`
/// and deletes the file only when they are bit-identical.
pub fn verify_then_delete(
    a_path: impl AsRef<Path>,
    idx: &IndexFile,
    b: &CorpusImage,
) -> Result<DeletionReport, CodecError> {
    let a_path = a_path.as_ref();
    let on_disk = Payload::read_file(a_path)?;
    let rebuilt = decode(idx, b)?;
    if rebuilt.bits() != on_disk.bits() {
        return Err(CodecError::Corruption(format!(
            "{} differs from the decoded payload",
            a_path.display()
        )));
    }
    std::fs::remove_file(a_path).map_err(|source| CodecError::Io {
        path: a_path.to_path_buf(),
        source,
    })?;
    Ok(DeletionReport {
        path: a_path.to_path_buf(),
        freed_bits: idx.payload_bit_len,
    })
}
