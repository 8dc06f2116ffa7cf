//! Command-line front end. Every subcommand is a thin wrapper over the
//! `bitref` library; [`run`] is the whole program minus process exit so
//! tests can drive it in-process.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage or invalid argument,
//! 3 not found, 4 verification failure, 5 capacity, 6 I/O.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use bitref::analyzer::{self, NATIVE_RECORD_BITS};
use bitref::index::{self, IndexError, IndexFile};
use bitref::plant::{self, PlantError, PlantSpec};
use bitref::{
    decode, BitBuffer, CatalogError, ChunkPolicy, CodecError, CorpusCatalog, CorpusImage, Digest,
    Encoder, MissPolicy, Payload, VerifyMode,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_FOUND: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;
pub const EXIT_CAPACITY: i32 = 5;
pub const EXIT_IO: i32 = 6;

#[derive(Debug, Parser)]
#[command(
    name = "bitref",
    version,
    about = "Store files as bit-offset references into a reference image"
)]
struct Cli {
    #[command(flatten)]
    config: Config,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Config {
    /// Directory holding the image catalog.
    #[arg(long, global = true, env = "BITREF_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Search threads.
    #[arg(long = "workers", global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    /// How resolved images are re-verified.
    #[arg(long = "verify", global = true, value_enum, default_value_t = VerifyArg::Sampled)]
    verify: VerifyArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VerifyArg {
    Sampled,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnMiss {
    Literal,
    Fail,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Kv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Manage registered reference images.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
    /// Encode a payload as references into a registered image.
    Encode {
        /// Payload file to encode.
        #[arg(long)]
        input: PathBuf,
        /// Digest of a registered image.
        #[arg(long)]
        corpus: Digest,
        /// Split the payload into chunks of this many bits; one reference when omitted.
        #[arg(long)]
        chunk_bits: Option<u64>,
        /// What to do with a chunk that does not occur in the image.
        #[arg(long, value_enum, default_value_t = OnMiss::Literal)]
        on_miss: OnMiss,
        /// Write the 8-byte two-ordinal format instead of the native one.
        #[arg(long)]
        paper32: bool,
        /// Where to write the index.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild a payload from its index.
    Decode {
        /// Index file to read.
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        source: CorpusSource,
        /// Where to write the rebuilt payload.
        #[arg(long)]
        out: PathBuf,
    },
    /// Delete a payload file after confirming its index rebuilds it exactly.
    VerifyThenDelete {
        /// Payload file to delete.
        #[arg(long)]
        input: PathBuf,
        /// Index that must rebuild the payload.
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        source: CorpusSource,
    },
    /// Estimate whether chunked encoding can pay off against a random image.
    Analyze {
        /// Image size in bits.
        #[arg(long)]
        corpus_bits: u64,
        /// Chunk length in bits.
        #[arg(long)]
        chunk_bits: u64,
        /// Defaults to the chunk size.
        #[arg(long)]
        payload_bits: Option<u64>,
        /// Cost of one reference record in bits.
        #[arg(long, default_value_t = NATIVE_RECORD_BITS)]
        record_cost_bits: u64,
        /// Also run this many Monte Carlo trials.
        #[arg(long)]
        trials: Option<u64>,
        /// Monte Carlo seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output layout.
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
    /// Write a seeded random image with a payload planted at a bit offset.
    Plant {
        /// Payload file to plant.
        #[arg(long)]
        payload: PathBuf,
        /// Image size in bits; a multiple of 8.
        #[arg(long)]
        corpus_bits: u64,
        /// 0-based bit offset; random when omitted.
        #[arg(long)]
        offset: Option<u64>,
        /// Background seed.
        #[arg(long)]
        seed: u64,
        /// Where to write the image.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum CorpusAction {
    /// Register an image file.
    Add {
        path: PathBuf,
        /// Free-form label shown by `corpus list`.
        #[arg(long)]
        label: Option<String>,
    },
    /// List registered images.
    List,
}

#[derive(Debug, Args)]
struct CorpusSource {
    /// Use this image file instead of looking the digest up in the catalog.
    #[arg(long)]
    corpus_path: Option<PathBuf>,
    /// Read the index as the 8-byte two-ordinal format.
    #[arg(long)]
    paper32: bool,
    /// Payload digest, required with --paper32.
    #[arg(long, requires = "paper32")]
    payload_digest: Option<Digest>,
    /// Image digest for --paper32 indexes.
    #[arg(long, requires = "paper32")]
    corpus: Option<Digest>,
}

/// An error with its exit status.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        let code = match &e {
            CodecError::NotFound | CodecError::ChunkNotFound { .. } => EXIT_NOT_FOUND,
            CodecError::WrongCorpus { .. } | CodecError::Corruption(_) => EXIT_VERIFY,
            CodecError::Index(ie) => return ie.clone().into(),
            CodecError::Invalid(_) => EXIT_USAGE,
            CodecError::Io { .. } => EXIT_IO,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<IndexError> for Failure {
    fn from(e: IndexError) -> Self {
        let code = match e {
            IndexError::Capacity(_) => EXIT_CAPACITY,
            IndexError::Parse { .. } | IndexError::Validation(_) => EXIT_VERIFY,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<CatalogError> for Failure {
    fn from(e: CatalogError) -> Self {
        let code = match e {
            CatalogError::NotFound(_) => EXIT_NOT_FOUND,
            CatalogError::Tampered { .. } | CatalogError::Corrupt { .. } => EXIT_VERIFY,
            CatalogError::Invalid { .. } => EXIT_USAGE,
            CatalogError::Io { .. } => EXIT_IO,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<PlantError> for Failure {
    fn from(e: PlantError) -> Self {
        let code = match e {
            PlantError::Invalid(_) => EXIT_USAGE,
            PlantError::Collision { .. } => EXIT_FAILURE,
            PlantError::Io { .. } => EXIT_IO,
        };
        Failure::new(code, e.to_string())
    }
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

type Outcome = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Outcome {
    let config = &cli.config;
    let write = |out: &mut dyn Write, text: String| -> Outcome {
        out.write_all(text.as_bytes())
            .map_err(|e| Failure::new(EXIT_IO, format!("stdout: {e}")))
    };
    match cli.command {
        Command::Corpus { action } => {
            let mut catalog = open_catalog(config)?;
            match action {
                CorpusAction::Add { path, label } => {
                    let reg = catalog.register(&path, label.as_deref())?;
                    let note = match &reg {
                        bitref::corpus::Registration::New(_) => String::new(),
                        bitref::corpus::Registration::Existing(_) => " (already registered)".into(),
                        bitref::corpus::Registration::Alias { canonical, .. } => {
                            format!(" (alias of {})", canonical.display())
                        }
                    };
                    write(out, format!("{}{note}\n", reg.digest()))
                }
                CorpusAction::List => {
                    let mut text = String::new();
                    for e in catalog.list() {
                        text.push_str(&format!(
                            "{}\t{}\t{}\t{}\n",
                            e.digest,
                            e.bit_len,
                            e.path.display(),
                            e.label.as_deref().unwrap_or("")
                        ));
                    }
                    write(out, text)
                }
            }
        }
        Command::Encode {
            input,
            corpus,
            chunk_bits,
            on_miss,
            paper32,
            out: out_path,
        } => {
            let payload = Payload::read_file(&input)?;
            let catalog = open_catalog(config)?;
            let image = catalog.resolve(corpus, verify_mode(config))?;
            let encoder = Encoder::new(&image).workers(config.workers as usize);
            let report = match chunk_bits {
                None => encoder.encode_single(&payload)?,
                Some(bits) => {
                    let on_miss = match on_miss {
                        OnMiss::Literal => MissPolicy::Literal,
                        OnMiss::Fail => MissPolicy::Fail,
                    };
                    encoder.encode_chunked(&payload, ChunkPolicy::new(bits, on_miss)?)?
                }
            };
            let mut text = format!("{report}\n");
            let bytes = if paper32 {
                let span = report.index.single_reference().ok_or_else(|| {
                    Failure::new(
                        EXIT_CAPACITY,
                        "paper32 holds exactly one reference record; use the native format",
                    )
                })?;
                let bytes = index::write_paper32(span)?;
                let (start, end) = index::paper32_ordinals(&bytes)?;
                text.push_str(&format!("paper32 ordinals   {start} {end}\n"));
                text.push_str(&format!(
                    "payload digest     {}\n",
                    report.index.payload_digest
                ));
                bytes.to_vec()
            } else {
                index::write_native(&report.index)?
            };
            std::fs::write(&out_path, &bytes).map_err(io_failure(&out_path))?;
            text.push_str(&format!(
                "wrote {} ({} bytes)\n",
                out_path.display(),
                bytes.len()
            ));
            write(out, text)
        }
        Command::Decode {
            index,
            source,
            out: out_path,
        } => {
            let idx = load_index(&index, &source)?;
            let image = load_corpus(config, &source, &idx)?;
            let payload = decode(&idx, &image)?;
            let bits = payload.bits();
            if !bits.is_byte_aligned() {
                return Err(Failure::new(
                    EXIT_FAILURE,
                    format!(
                        "payload is {} bits, not a whole number of bytes",
                        bits.bit_len()
                    ),
                ));
            }
            std::fs::write(&out_path, bits.as_bytes()).map_err(io_failure(&out_path))?;
            write(
                out,
                format!(
                    "decoded {} bits to {}\n",
                    bits.bit_len(),
                    out_path.display()
                ),
            )
        }
        Command::VerifyThenDelete {
            input,
            index,
            source,
        } => {
            let idx = load_index(&index, &source)?;
            let image = load_corpus(config, &source, &idx).map_err(|f| {
                if f.code == EXIT_NOT_FOUND {
                    CodecError::WrongCorpus {
                        expected: idx.corpus_digest,
                        found: None,
                    }
                    .into()
                } else {
                    f
                }
            })?;
            let report = bitref::verify_then_delete(&input, &idx, &image)?;
            write(
                out,
                format!(
                    "verified and deleted {}; freed {} bits\n",
                    report.path.display(),
                    report.freed_bits
                ),
            )
        }
        Command::Analyze {
            corpus_bits,
            chunk_bits,
            payload_bits,
            record_cost_bits,
            trials,
            seed,
            format,
        } => {
            if corpus_bits == 0
                || chunk_bits == 0
                || record_cost_bits == 0
                || payload_bits == Some(0)
            {
                return Err(Failure::new(EXIT_USAGE, "all sizes must be positive"));
            }
            let report = analyzer::feasibility_report(
                payload_bits.unwrap_or(chunk_bits),
                corpus_bits,
                chunk_bits,
                record_cost_bits,
            );
            let mut text = match format {
                ReportFormat::Table => report.to_string(),
                ReportFormat::Kv => report.to_key_value(),
            };
            if let Some(t) = trials {
                if t == 0 {
                    return Err(Failure::new(EXIT_USAGE, "--trials must be positive"));
                }
                let occ = analyzer::simulate_occurrences(corpus_bits, chunk_bits, t, seed);
                let hit = analyzer::simulate_hit_rate(corpus_bits, chunk_bits, t, seed);
                let rows = [
                    ("mc_trials", t.to_string()),
                    ("mc_mean_occurrences", format!("{:e}", occ.mean)),
                    ("mc_occurrences_std_error", format!("{:e}", occ.std_error)),
                    ("mc_hit_rate", format!("{:e}", hit.mean)),
                ];
                for (k, v) in rows {
                    text.push_str(&match format {
                        ReportFormat::Table => format!("{k:<22} {v}\n"),
                        ReportFormat::Kv => format!("{k}={v}\n"),
                    });
                }
            }
            write(out, text)
        }
        Command::Plant {
            payload,
            corpus_bits,
            offset,
            seed,
            out: out_path,
        } => {
            let bits = BitBuffer::read_file(&payload).map_err(io_failure(&payload))?;
            let spec = PlantSpec {
                corpus_bits,
                offset,
                seed,
            };
            let outcome = plant::plant_to_file(&bits, &spec, &out_path)?;
            write(
                out,
                format!(
                    "offset={}\nordinal={}\nattempts={}\n",
                    outcome.offset,
                    outcome.offset + 1,
                    outcome.attempts
                ),
            )
        }
    }
}

fn verify_mode(config: &Config) -> VerifyMode {
    match config.verify {
        VerifyArg::Sampled => VerifyMode::Sampled,
        VerifyArg::Full => VerifyMode::Full,
    }
}

fn open_catalog(config: &Config) -> Result<CorpusCatalog, Failure> {
    let dir = match &config.data_dir {
        Some(d) => d.clone(),
        None => default_data_dir().ok_or_else(|| {
            Failure::new(
                EXIT_USAGE,
                "no data directory: pass --data-dir or set BITREF_DATA_DIR",
            )
        })?,
    };
    Ok(CorpusCatalog::open(dir)?)
}

fn default_data_dir() -> Option<PathBuf> {
    if let Some(xdg) = std::env::var_os("XDG_DATA_HOME") {
        return Some(PathBuf::from(xdg).join("bitref"));
    }
    std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".local/share/bitref"))
}

fn load_index(path: &Path, source: &CorpusSource) -> Result<IndexFile, Failure> {
    let bytes = std::fs::read(path).map_err(io_failure(path))?;
    if source.paper32 {
        let payload_digest = source
            .payload_digest
            .ok_or_else(|| Failure::new(EXIT_USAGE, "--paper32 needs --payload-digest"))?;
        let corpus_digest = match (source.corpus, &source.corpus_path) {
            (Some(d), _) => d,
            (None, Some(p)) => CorpusImage::open(p).map_err(io_failure(p))?.digest(),
            (None, None) => {
                return Err(Failure::new(
                    EXIT_USAGE,
                    "--paper32 needs --corpus or --corpus-path",
                ))
            }
        };
        Ok(index::read_paper32(&bytes, payload_digest, corpus_digest)?)
    } else {
        Ok(index::read_native(&bytes)?)
    }
}

fn load_corpus(
    config: &Config,
    source: &CorpusSource,
    idx: &IndexFile,
) -> Result<CorpusImage, Failure> {
    match &source.corpus_path {
        Some(p) => CorpusImage::open(p).map_err(io_failure(p)),
        None => Ok(open_catalog(config)?.resolve(idx.corpus_digest, verify_mode(config))?),
    }
}
