//! Registered reference images.
//!
//! Images are referenced in place and keyed by the SHA-256 of their content.
//! The catalog lives in a single text file inside a data directory:
//!
//! ```text
//! bitref-catalog<TAB>1
//! <digest><TAB><bit_len><TAB><path><TAB><label><TAB><registered_unix><TAB><sample_digest>
//! alias<TAB><digest><TAB><path>
//! ```
//!
//! Digests are lowercase hex; an empty label field means no label. The sample
//! digest fingerprints the file size plus a fixed set of blocks and backs the
//! fast re-verification mode.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::bitstream::BitBuffer;
use crate::digest::{Digest, DigestBuilder};

pub const CATALOG_FILE: &str = "catalog.tsv";
const LOCK_FILE: &str = "catalog.lock";
const HEADER: &str = "bitref-catalog\t1";

const SAMPLE_EDGE: u64 = 64 * 1024;
const SAMPLE_BLOCK: u64 = 4096;
const SAMPLE_COUNT: u64 = 16;

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid image {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
    #[error("no registered image with digest {0}")]
    NotFound(Digest),
    #[error("image {path} no longer matches digest {digest}")]
    Tampered { digest: Digest, path: PathBuf },
    #[error("corrupt catalog line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CatalogError + '_ {
    move |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A reference image: immutable bits plus their content digest.
#[derive(Debug, Clone)]
pub struct CorpusImage {
    bits: BitBuffer,
    digest: Digest,
    path: Option<PathBuf>,
}

impl CorpusImage {
    pub fn from_bits(bits: BitBuffer) -> Self {
        let digest = Digest::of(bits.as_bytes());
        CorpusImage {
            bits,
            digest,
            path: None,
        }
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self::from_bits(BitBuffer::from_bytes(bytes))
    }

    /// Maps `path` read-only and hashes it in full.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref();
        let bits = BitBuffer::map_file(path)?;
        let mut image = Self::from_bits(bits);
        image.path = Some(path.to_path_buf());
        Ok(image)
    }

    /// Pairs bits with a digest the caller has already established.
    pub(crate) fn with_known_digest(bits: BitBuffer, digest: Digest, path: PathBuf) -> Self {
        CorpusImage {
            bits,
            digest,
            path: Some(path),
        }
    }

    pub fn bits(&self) -> &BitBuffer {
        &self.bits
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn bit_len(&self) -> u64 {
        self.bits.bit_len()
    }
}

/// How thoroughly [`CorpusCatalog::resolve`] re-checks an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VerifyMode {
    /// File size plus a fixed set of sampled blocks.
    #[default]
    Sampled,
    /// Full SHA-256 of the file.
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub digest: Digest,
    pub bit_len: u64,
    pub path: PathBuf,
    pub label: Option<String>,
    pub registered_at: u64,
    pub sample_digest: Digest,
}

/// Result of a registration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Registration {
    /// First time this content was seen.
    New(Digest),
    /// Same content already registered from the same path.
    Existing(Digest),
    /// Same content already registered from another path; the original path
    /// is kept and this one recorded as an alias.
    Alias { digest: Digest, canonical: PathBuf },
}

impl Registration {
    pub fn digest(&self) -> Digest {
        match self {
            Registration::New(d) | Registration::Existing(d) => *d,
            Registration::Alias { digest, .. } => *digest,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct CatalogState {
    entries: BTreeMap<Digest, CatalogEntry>,
    aliases: BTreeMap<Digest, Vec<PathBuf>>,
}

#[derive(Debug)]
pub struct CorpusCatalog {
    dir: PathBuf,
    state: CatalogState,
}

impl CorpusCatalog {
    /// Opens (or starts) the catalog stored in `data_dir`.
    pub fn open(data_dir: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let dir = data_dir.as_ref().to_path_buf();
        let state = load(&dir.join(CATALOG_FILE))?;
        Ok(CorpusCatalog { dir, state })
    }

    pub fn data_dir(&self) -> &Path {
        &self.dir
    }

    /// Hashes the image at `path` and records it. Idempotent for identical
    /// content.
    pub fn register(
        &mut self,
        path: impl AsRef<Path>,
        label: Option<&str>,
    ) -> Result<Registration, CatalogError> {
        let given = path.as_ref();
        let path = fs::canonicalize(given).map_err(io_err(given))?;
        let invalid = |reason: &str| CatalogError::Invalid {
            path: path.clone(),
            reason: reason.to_string(),
        };
        let text = path
            .to_str()
            .ok_or_else(|| invalid("path is not valid UTF-8"))?;
        if text.contains(['\t', '\n', '\r']) {
            return Err(invalid("path contains tab or newline"));
        }
        if let Some(l) = label {
            if l.contains(['\t', '\n', '\r']) {
                return Err(invalid("label contains tab or newline"));
            }
        }
        let (digest, byte_len) = hash_file(&path)?;
        if byte_len == 0 {
            return Err(invalid("image is empty"));
        }
        let sample_digest = sample_digest(&path)?;

        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let _lock = self.lock()?;
        // Pick up registrations made by other processes since we loaded.
        self.state = load(&self.dir.join(CATALOG_FILE))?;

        let outcome = match self.state.entries.get(&digest) {
            Some(e) if e.path == path => Registration::Existing(digest),
            Some(e) => {
                let canonical = e.path.clone();
                let aliases = self.state.aliases.entry(digest).or_default();
                if !aliases.contains(&path) {
                    aliases.push(path.clone());
                }
                Registration::Alias { digest, canonical }
            }
            None => {
                let registered_at = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0);
                self.state.entries.insert(
                    digest,
                    CatalogEntry {
                        digest,
                        bit_len: byte_len * 8,
                        path,
                        label: label.map(str::to_string),
                        registered_at,
                        sample_digest,
                    },
                );
                Registration::New(digest)
            }
        };
        if !matches!(outcome, Registration::Existing(_)) {
            self.save()?;
        }
        Ok(outcome)
    }

    /// Opens a registered image read-only after re-verifying it.
    pub fn resolve(&self, digest: Digest, mode: VerifyMode) -> Result<CorpusImage, CatalogError> {
        let entry = self
            .state
            .entries
            .get(&digest)
            .ok_or(CatalogError::NotFound(digest))?;
        let tampered = || CatalogError::Tampered {
            digest,
            path: entry.path.clone(),
        };
        let bits = BitBuffer::map_file(&entry.path).map_err(io_err(&entry.path))?;
        if bits.bit_len() != entry.bit_len {
            return Err(tampered());
        }
        match mode {
            VerifyMode::Full => {
                if Digest::of(bits.as_bytes()) != digest {
                    return Err(tampered());
                }
            }
            VerifyMode::Sampled => {
                if sample_digest(&entry.path)? != entry.sample_digest {
                    return Err(tampered());
                }
            }
        }
        Ok(CorpusImage::with_known_digest(
            bits,
            digest,
            entry.path.clone(),
        ))
    }

    pub fn get(&self, digest: &Digest) -> Option<&CatalogEntry> {
        self.state.entries.get(digest)
    }

    /// Entries in digest order.
    pub fn list(&self) -> Vec<&CatalogEntry> {
        self.state.entries.values().collect()
    }

    pub fn aliases(&self, digest: &Digest) -> &[PathBuf] {
        self.state.aliases.get(digest).map_or(&[], Vec::as_slice)
    }

    fn lock(&self) -> Result<File, CatalogError> {
        let path = self.dir.join(LOCK_FILE);
        let f = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        f.lock().map_err(io_err(&path))?;
        Ok(f)
    }

    fn save(&self) -> Result<(), CatalogError> {
        let target = self.dir.join(CATALOG_FILE);
        let tmp = self.dir.join(format!("{CATALOG_FILE}.tmp"));
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for e in self.state.entries.values() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.digest,
                e.bit_len,
                e.path.display(),
                e.label.as_deref().unwrap_or(""),
                e.registered_at,
                e.sample_digest
            ));
        }
        for (digest, paths) in &self.state.aliases {
            for p in paths {
                out.push_str(&format!("alias\t{digest}\t{}\n", p.display()));
            }
        }
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(out.as_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &target).map_err(io_err(&target))
    }
}

fn load(path: &Path) -> Result<CatalogState, CatalogError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(CatalogState::default()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, HEADER)) => {}
        _ => {
            return Err(CatalogError::Corrupt {
                line: 1,
                reason: "missing or unsupported header".into(),
            })
        }
    }
    let mut state = CatalogState::default();
    for (i, line) in lines {
        let corrupt = |reason: &str| CatalogError::Corrupt {
            line: i + 1,
            reason: reason.to_string(),
        };
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let digest = |s: &str| s.parse::<Digest>().map_err(|_| corrupt("bad digest"));
        match fields.as_slice() {
            ["alias", d, p] => state
                .aliases
                .entry(digest(d)?)
                .or_default()
                .push(PathBuf::from(p)),
            [d, bits, p, label, at, sample] => {
                let entry = CatalogEntry {
                    digest: digest(d)?,
                    bit_len: bits.parse().map_err(|_| corrupt("bad bit length"))?,
                    path: PathBuf::from(p),
                    label: (!label.is_empty()).then(|| label.to_string()),
                    registered_at: at.parse().map_err(|_| corrupt("bad timestamp"))?,
                    sample_digest: digest(sample)?,
                };
                if state.entries.insert(entry.digest, entry).is_some() {
                    return Err(corrupt("duplicate digest"));
                }
            }
            _ => return Err(corrupt("wrong field count")),
        }
    }
    Ok(state)
}

/// Streams a file through SHA-256, returning the digest and byte length.
fn hash_file(path: &Path) -> Result<(Digest, u64), CatalogError> {
    let mut f = File::open(path).map_err(io_err(path))?;
    let mut h = DigestBuilder::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
        total += n as u64;
    }
    Ok((h.finish(), total))
}

/// Digest of the file length, its first and last 64 KiB, and sixteen evenly
/// spaced 4 KiB blocks.
fn sample_digest(path: &Path) -> Result<Digest, CatalogError> {
    let mut f = File::open(path).map_err(io_err(path))?;
    let len = f.metadata().map_err(io_err(path))?.len();
    let mut h = DigestBuilder::new();
    h.update(&len.to_be_bytes());
    let mut ranges = vec![(0, SAMPLE_EDGE.min(len))];
    if len > SAMPLE_BLOCK {
        let span = len - SAMPLE_BLOCK;
        ranges.extend((0..SAMPLE_COUNT).map(|i| (i * span / (SAMPLE_COUNT - 1), SAMPLE_BLOCK)));
    }
    ranges.push((len.saturating_sub(SAMPLE_EDGE), SAMPLE_EDGE.min(len)));
    let mut buf = Vec::new();
    for (at, n) in ranges {
        buf.resize(n as usize, 0);
        f.seek(SeekFrom::Start(at)).map_err(io_err(path))?;
        f.read_exact(&mut buf).map_err(io_err(path))?;
        h.update(&buf);
    }
    Ok(h.finish())
}
