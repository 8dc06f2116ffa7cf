//! Synthetic reference images with a payload planted at a known bit offset.
//!
//! The background is seeded uniform random bits (ChaCha8), so the same seed
//! always yields a byte-identical image. If the random prefix happens to
//! contain an earlier copy of the payload the background is regenerated from
//! the next ChaCha stream, so the planted copy is the leftmost occurrence.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitstream::{shifted_byte, BitBuffer, BitSpan, BitWriter};
use crate::search::Finder;

/// Re-rolls allowed before giving up on a unique leftmost plant.
const MAX_ATTEMPTS: u64 = 16;
const BLOCK_BYTES: usize = 1 << 20;
/// ChaCha stream reserved for choosing the offset.
const OFFSET_STREAM: u64 = u64::MAX;

#[derive(Debug, thiserror::Error)]
pub enum PlantError {
    #[error("invalid plant request: {0}")]
    Invalid(String),
    #[error("payload also occurs at bit {earlier} in every candidate background; it is too short to plant uniquely")]
    Collision { earlier: u64 },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantSpec {
    /// Image size in bits; must be a positive multiple of 8.
    pub corpus_bits: u64,
    /// 0-based bit offset. Chosen uniformly from the valid range when `None`.
    pub offset: Option<u64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantOutcome {
    pub offset: u64,
    /// Background streams tried, 1 when the first one worked.
    pub attempts: u64,
}

impl PlantSpec {
    fn resolve_offset(&self, payload_bits: u64) -> Result<u64, PlantError> {
        if payload_bits == 0 {
            return Err(PlantError::Invalid("payload is empty".into()));
        }
        if self.corpus_bits == 0 || !self.corpus_bits.is_multiple_of(8) {
            return Err(PlantError::Invalid(format!(
                "corpus size {} bits is not a positive multiple of 8",
                self.corpus_bits
            )));
        }
        if payload_bits > self.corpus_bits {
            return Err(PlantError::Invalid(format!(
                "payload of {payload_bits} bits does not fit in {} bits",
                self.corpus_bits
            )));
        }
        let max = self.corpus_bits - payload_bits;
        match self.offset {
            Some(o) if o > max => Err(PlantError::Invalid(format!(
                "offset {o} + {payload_bits} payload bits exceeds {} bits",
                self.corpus_bits
            ))),
            Some(o) => Ok(o),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(OFFSET_STREAM);
                Ok(rng.random_range(0..=max))
            }
        }
    }
}

/// Overwrites `payload.bit_len()` bits of `background` starting at `offset`.
pub fn plant_bits(
    background: &BitBuffer,
    payload: &BitBuffer,
    offset: u64,
) -> Result<BitBuffer, PlantError> {
    let end = offset
        .checked_add(payload.bit_len())
        .filter(|&e| e <= background.bit_len())
        .ok_or_else(|| PlantError::Invalid("payload does not fit at offset".into()))?;
    let mut w = BitWriter::with_capacity_bits(background.bit_len());
    let piece = |start: u64, len: u64| {
        background
            .extract(BitSpan::new(start, len).unwrap())
            .unwrap()
    };
    if offset > 0 {
        w.push_buffer(&piece(0, offset));
    }
    w.push_buffer(payload);
    if end < background.bit_len() {
        w.push_buffer(&piece(end, background.bit_len() - end));
    }
    Ok(w.finish())
}

/// Streams one candidate image into `out`.
fn write_image(
    payload: &BitBuffer,
    spec: &PlantSpec,
    offset: u64,
    stream: u64,
    out: &mut impl Write,
) -> io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let total = (spec.corpus_bits / 8) as usize;
    let shift = (offset % 8) as u32;
    let first = (offset / 8) as usize;
    let last = ((offset + payload.bit_len()).div_ceil(8)) as usize; // exclusive
    let mut block = vec![0u8; BLOCK_BYTES];
    let mut at = 0usize;
    while at < total {
        let n = BLOCK_BYTES.min(total - at);
        let buf = &mut block[..n];
        rng.fill_bytes(buf);
        let lo = first.max(at);
        let hi = last.min(at + n);
        for i in lo..hi {
            let (v, mask) = shifted_byte(payload, shift, i - first);
            buf[i - at] = (buf[i - at] & !mask) | v;
        }
        out.write_all(buf)?;
        at += n;
    }
    Ok(())
}

/// Builds the image in memory.
pub fn plant_in_memory(
    payload: &BitBuffer,
    spec: &PlantSpec,
) -> Result<(BitBuffer, PlantOutcome), PlantError> {
    let offset = spec.resolve_offset(payload.bit_len())?;
    let finder = Finder::new(payload).map_err(|e| PlantError::Invalid(e.to_string()))?;
    let mut earlier = 0;
    for stream in 0..MAX_ATTEMPTS {
        let mut bytes = Vec::with_capacity((spec.corpus_bits / 8) as usize);
        write_image(payload, spec, offset, stream, &mut bytes)
            .expect("writing to a Vec cannot fail");
        let image = BitBuffer::from_bytes(bytes);
        match finder.find_in_range(&image, 0, offset + 1) {
            Some(p) if p == offset => {
                return Ok((
                    image,
                    PlantOutcome {
                        offset,
                        attempts: stream + 1,
                    },
                ))
            }
            Some(p) => earlier = p,
            None => unreachable!("planted payload must be found"),
        }
    }
    Err(PlantError::Collision { earlier })
}

/// Streams the image to `path`, re-reading it through a file mapping to
/// confirm the planted copy is the leftmost occurrence.
pub fn plant_to_file(
    payload: &BitBuffer,
    spec: &PlantSpec,
    path: impl AsRef<Path>,
) -> Result<PlantOutcome, PlantError> {
    let path = path.as_ref();
    let io_err = |source| PlantError::Io {
        path: path.to_path_buf(),
        source,
    };
    let offset = spec.resolve_offset(payload.bit_len())?;
    let finder = Finder::new(payload).map_err(|e| PlantError::Invalid(e.to_string()))?;
    let mut earlier = 0;
    for stream in 0..MAX_ATTEMPTS {
        {
            let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
            write_image(payload, spec, offset, stream, &mut out).map_err(io_err)?;
            out.into_inner()
                .map_err(|e| io_err(e.into_error()))?
                .sync_all()
                .map_err(io_err)?;
        }
        let image = BitBuffer::map_file(path).map_err(io_err)?;
        match finder.find_in_range(&image, 0, offset + 1) {
            Some(p) if p == offset => {
                return Ok(PlantOutcome {
                    offset,
                    attempts: stream + 1,
                })
            }
            Some(p) => earlier = p,
            None => unreachable!("planted payload must be found"),
        }
    }
    Err(PlantError::Collision { earlier })
}
