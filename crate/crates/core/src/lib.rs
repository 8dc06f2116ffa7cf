//! Reference-based encoding of files against an immutable reference image.
//!
//! A payload file is treated as a plain string of bits. If that string (or
//! each fixed-length chunk of it) occurs somewhere inside a larger reference
//! image, the payload can be replaced by a tiny index that records where the
//! bits live. Decoding extracts them back out of the image.
//!
//! Module map:
//!
//! * [`bitstream`]: MSB-first bit-addressed buffers and spans.
//! * [`search`]: leftmost bit-granular substring search (naive oracle,
//!   skip-table scan, sharded parallel scan).
//! * [`index`]: the index file formats (native multi-record and the 64-bit
//!   `paper32` compatibility format).
//! * [`codec`]: encode, decode and verify-then-delete.
//! * [`analyzer`]: occurrence-probability math, break-even analysis and
//!   Monte Carlo validation.
//! * [`corpus`]: the persistent catalog of registered reference images.
//! * [`plant`]: seeded synthesis of reference images with a payload planted
//!   at a known bit offset.

pub mod analyzer;
pub mod bitstream;
pub mod codec;
pub mod corpus;
pub mod digest;
pub mod index;
pub mod plant;
pub mod search;

pub use bitstream::{bit_len_of_file, BitBuffer, BitError, BitSpan};
pub use codec::{
    decode, encode_chunked, encode_single, verify_then_delete, ChunkPolicy, CodecError,
    DeletionReport, EncodeReport, Encoder, MissPolicy, Payload,
};
pub use corpus::{CatalogEntry, CatalogError, CorpusCatalog, CorpusImage, VerifyMode};
pub use digest::Digest;
pub use index::{IndexError, IndexFile, IndexRecord};
pub use search::{
    find_first, find_first_naive, find_first_sharded, is_member, Finder, MatchResult, SearchError,
};
