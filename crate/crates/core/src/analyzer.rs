//! How likely is a chunk to be found, and does finding it pay off?
//!
//! Model: corpus bits are i.i.d. uniform. A fixed `L`-bit pattern then has
//! `n - L + 1` candidate alignments in an `n`-bit corpus, each matching with
//! probability `2^-L`, so the expected number of occurrences is
//! `E = (n - L + 1) * 2^-L`. The probability of at least one occurrence is
//! approximated as `1 - exp(-E)` (Poisson), capped by the union bound `E`.
//! The approximation ignores pattern self-overlap and is only meant for
//! `L` around `log2(n)` and above; the Monte Carlo helpers here exist to check
//! it empirically.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitstream::{last_byte_mask, BitBuffer};
use crate::index::{LITERAL_OVERHEAD_LEN, REFERENCE_RECORD_LEN};
use crate::search::{find_all, Finder};

/// Cost of one native reference record, in bits.
pub const NATIVE_RECORD_BITS: u64 = REFERENCE_RECORD_LEN as u64 * 8;
/// Cost of one `paper32` index, in bits.
pub const PAPER32_RECORD_BITS: u64 = 64;
/// Fixed cost of a native literal record ahead of its payload, in bits.
pub const LITERAL_OVERHEAD_BITS: u64 = LITERAL_OVERHEAD_LEN as u64 * 8;

/// `(n - L + 1) * 2^-L`, or 0 when the pattern is longer than the corpus.
pub fn expected_occurrences(n: u64, l: u64) -> f64 {
    assert!(l >= 1, "chunk length must be at least 1 bit");
    if l > n {
        return 0.0;
    }
    let alignments = (n - l + 1) as f64;
    (alignments.ln() - l as f64 * std::f64::consts::LN_2).exp()
}

/// Poisson estimate of the chance that a given `L`-bit chunk occurs at least
/// once in an `n`-bit random corpus.
pub fn match_probability(n: u64, l: u64) -> f64 {
    let e = expected_occurrences(n, l);
    (-(-e).exp_m1()).min(e).clamp(0.0, 1.0)
}

/// Smallest chunk length for which one record is strictly smaller than the
/// chunk it replaces.
pub fn break_even_length(record_cost_bits: u64) -> u64 {
    assert!(record_cost_bits >= 1, "record cost must be positive");
    record_cost_bits + 1
}

/// Largest `L` whose match probability in an `n`-bit corpus is still at
/// least `target_probability`, or 0 if none is.
pub fn max_feasible_chunk(n: u64, target_probability: f64) -> u64 {
    assert!(
        target_probability > 0.0 && target_probability < 1.0,
        "target probability must lie in (0, 1)"
    );
    if n == 0 || match_probability(n, 1) < target_probability {
        return 0;
    }
    // Invariant: p(lo) >= target, and p(hi) < target or hi is out of range.
    let (mut lo, mut hi) = (1u64, n + 1);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if match_probability(n, mid) >= target_probability {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Saves,
    Loses,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Saves => "saves",
            Verdict::Loses => "loses",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub payload_bits: u64,
    pub corpus_bits: u64,
    pub chunk_bits: u64,
    pub expected_occurrences: f64,
    pub match_probability: f64,
    pub record_cost_bits: u64,
    pub break_even_bits: u64,
    pub chunk_count: u64,
    pub projected_index_bits: f64,
    pub verdict: Verdict,
}

/// Projects the index size for chunking an `a_bits` payload into `l`-bit
/// chunks against an `n`-bit random corpus. Each chunk costs `record_cost`
/// when found and a literal record otherwise.
pub fn feasibility_report(a_bits: u64, n: u64, l: u64, record_cost_bits: u64) -> FeasibilityReport {
    assert!(
        a_bits >= 1 && n >= 1 && l >= 1 && record_cost_bits >= 1,
        "all sizes must be positive"
    );
    let e = expected_occurrences(n, l);
    let p = match_probability(n, l);
    let chunk_count = a_bits.div_ceil(l);
    let per_chunk = p * record_cost_bits as f64 + (1.0 - p) * (LITERAL_OVERHEAD_BITS + l) as f64;
    let projected = chunk_count as f64 * per_chunk;
    // At or below break-even no mix of hits and misses beats storing the bits.
    let verdict = if l > record_cost_bits && projected < a_bits as f64 {
        Verdict::Saves
    } else {
        Verdict::Loses
    };
    FeasibilityReport {
        payload_bits: a_bits,
        corpus_bits: n,
        chunk_bits: l,
        expected_occurrences: e,
        match_probability: p,
        record_cost_bits,
        break_even_bits: break_even_length(record_cost_bits),
        chunk_count,
        projected_index_bits: projected,
        verdict,
    }
}

impl FeasibilityReport {
    fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("payload_bits", self.payload_bits.to_string()),
            ("corpus_bits", self.corpus_bits.to_string()),
            ("chunk_bits", self.chunk_bits.to_string()),
            (
                "expected_occurrences",
                format!("{:e}", self.expected_occurrences),
            ),
            ("match_probability", format!("{:e}", self.match_probability)),
            ("record_cost_bits", self.record_cost_bits.to_string()),
            ("break_even_bits", self.break_even_bits.to_string()),
            ("chunk_count", self.chunk_count.to_string()),
            (
                "projected_index_bits",
                format!("{:.1}", self.projected_index_bits),
            ),
            ("verdict", self.verdict.to_string()),
        ]
    }

    /// One `key=value` pair per line.
    pub fn to_key_value(&self) -> String {
        self.rows()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.rows() {
            writeln!(f, "{k:<22} {v}")?;
        }
        Ok(())
    }
}

/// Summary of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub trials: u64,
    pub mean: f64,
    /// Sample standard error of the mean.
    pub std_error: f64,
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Uniform random buffer of exactly `bits` bits.
pub fn random_bits(rng: &mut impl RngCore, bits: u64) -> BitBuffer {
    let mut bytes = vec![0u8; bits.div_ceil(8) as usize];
    rng.fill_bytes(&mut bytes);
    if let Some(last) = bytes.last_mut() {
        *last &= last_byte_mask(bits);
    }
    BitBuffer::from_bytes_with_len(bytes, bits).unwrap()
}

fn summarize(samples: &[f64]) -> Estimate {
    let t = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / t;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1.0)
    } else {
        0.0
    };
    Estimate {
        trials: samples.len() as u64,
        mean,
        std_error: (var / t).sqrt(),
    }
}

/// Mean number of occurrences of a random `l`-bit pattern in a random
/// `n`-bit corpus, counted by exhaustive search. Trial `i` draws from ChaCha
/// stream `i` of `seed`, so results do not depend on evaluation order.
pub fn simulate_occurrences(n: u64, l: u64, trials: u64, seed: u64) -> Estimate {
    assert!(trials >= 1 && l >= 1);
    let counts: Vec<f64> = (0..trials)
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let pattern = random_bits(&mut rng, l);
            let corpus = random_bits(&mut rng, n);
            find_all(&pattern, &corpus).unwrap().len() as f64
        })
        .collect();
    summarize(&counts)
}

/// Fraction of trials in which a random `l`-bit pattern occurs in a random
/// `n`-bit corpus.
pub fn simulate_hit_rate(n: u64, l: u64, trials: u64, seed: u64) -> Estimate {
    assert!(trials >= 1 && l >= 1);
    let hits: Vec<f64> = (0..trials)
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let pattern = random_bits(&mut rng, l);
            let corpus = random_bits(&mut rng, n);
            let found = Finder::new(&pattern).unwrap().find_from(&corpus, 0).found();
            if found {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    summarize(&hits)
}

/// Draws one value in `0..bound` from the given trial stream; exposed so
/// callers can derive further per-trial randomness consistently.
pub fn trial_value(seed: u64, trial: u64, bound: u64) -> u64 {
    trial_rng(seed, trial).random_range(0..bound)
}
