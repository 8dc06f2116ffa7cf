//! Leftmost bit-granular substring search.
//!
//! A pattern may start at any bit of the corpus, not just byte boundaries.
//! [`Finder`] handles this by preparing the pattern's leading bytes at each of
//! the eight possible bit shifts. For each shift it runs a Horspool skip-table
//! scan over the corpus bytes looking for the fully determined bytes of that
//! shifted image, then verifies every candidate bit-exactly. The scan walks
//! the corpus in windows and checks all eight shifts in each window before
//! moving on, so the first verified hit is also the leftmost one.
//!
//! [`find_first_naive`] compares bit by bit at every position and is kept as
//! the reference oracle.

use crate::bitstream::{bits_equal, shifted_prefix, BitBuffer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SearchError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// Outcome of a search: the leftmost start bit, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatchResult {
    start_bit: Option<u64>,
}

impl MatchResult {
    pub const NOT_FOUND: MatchResult = MatchResult { start_bit: None };

    pub fn at(start_bit: u64) -> Self {
        MatchResult {
            start_bit: Some(start_bit),
        }
    }

    pub fn found(&self) -> bool {
        self.start_bit.is_some()
    }

    pub fn start_bit(&self) -> Option<u64> {
        self.start_bit
    }
}

impl From<Option<u64>> for MatchResult {
    fn from(start_bit: Option<u64>) -> Self {
        MatchResult { start_bit }
    }
}

/// Membership in the strict sense: `a` is shorter than `b` and occurs in `b`
/// as an uninterrupted run of bits.
pub fn is_member(a: &BitBuffer, b: &BitBuffer) -> Result<bool, SearchError> {
    if a.is_empty() || b.is_empty() {
        return Err(SearchError::InvalidArgument(
            "membership of empty bit strings",
        ));
    }
    if a.bit_len() >= b.bit_len() {
        return Ok(false);
    }
    Ok(find_first(a, b, 0)?.found())
}

fn check_args(pattern: &BitBuffer, corpus: &BitBuffer, from: u64) -> Result<(), SearchError> {
    if pattern.is_empty() {
        return Err(SearchError::InvalidArgument("empty pattern"));
    }
    if from > corpus.bit_len() {
        return Err(SearchError::InvalidArgument(
            "search origin past end of corpus",
        ));
    }
    Ok(())
}

/// Reference search: tries every start position and compares bit by bit.
pub fn find_first_naive(
    pattern: &BitBuffer,
    corpus: &BitBuffer,
    from: u64,
) -> Result<MatchResult, SearchError> {
    check_args(pattern, corpus, from)?;
    let m = pattern.bit_len();
    let n = corpus.bit_len();
    if m > n {
        return Ok(MatchResult::NOT_FOUND);
    }
    for start in from..=n - m {
        let hit = (0..m).all(|j| pattern.bit_at(j).unwrap() == corpus.bit_at(start + j).unwrap());
        if hit {
            return Ok(MatchResult::at(start));
        }
    }
    Ok(MatchResult::NOT_FOUND)
}

/// Leftmost occurrence of `pattern` in `corpus` starting at or after `from`.
pub fn find_first(
    pattern: &BitBuffer,
    corpus: &BitBuffer,
    from: u64,
) -> Result<MatchResult, SearchError> {
    check_args(pattern, corpus, from)?;
    Ok(Finder::new(pattern)?.find_from(corpus, from))
}

/// Same result as [`find_first`] from bit 0, computed by `worker_count`
/// threads over contiguous shards of the corpus.
pub fn find_first_sharded(
    pattern: &BitBuffer,
    corpus: &BitBuffer,
    worker_count: usize,
) -> Result<MatchResult, SearchError> {
    Finder::new(pattern)?.find_sharded(corpus, 0, worker_count)
}

/// Every (possibly overlapping) occurrence of `pattern`, in increasing order.
pub fn find_all(pattern: &BitBuffer, corpus: &BitBuffer) -> Result<Vec<u64>, SearchError> {
    let finder = Finder::new(pattern)?;
    let mut hits = Vec::new();
    let mut from = 0;
    while let Some(p) = finder.find_from(corpus, from).start_bit() {
        hits.push(p);
        from = p + 1;
    }
    Ok(hits)
}

/// Longest run of fully determined bytes used as the skip-table needle.
const MAX_ANCHOR: usize = 255;

/// Candidate start bits examined per window before moving right.
const WINDOW_BITS: u64 = 1 << 23;

/// The pattern's leading bytes written at one bit shift.
#[derive(Debug, Clone)]
struct ShiftedPattern {
    shift: u32,
    values: Vec<u8>,
    masks: Vec<u8>,
    /// Byte range of `values` that is fully determined by the pattern.
    anchor: Option<(usize, usize)>,
    skip: Box<[usize; 256]>,
}

impl ShiftedPattern {
    fn new(pattern: &BitBuffer, shift: u32) -> Self {
        let (values, masks) = shifted_prefix(pattern, shift, MAX_ANCHOR + 2);
        let first_full = usize::from(shift != 0);
        let end_full = ((u64::from(shift) + pattern.bit_len()) / 8) as usize;
        let end_full = end_full.min(values.len()).min(first_full + MAX_ANCHOR);
        let anchor = (end_full > first_full).then_some((first_full, end_full));
        let mut skip = Box::new([0usize; 256]);
        if let Some((a, b)) = anchor {
            let needle = &values[a..b];
            let m = needle.len();
            skip.fill(m);
            for (i, &byte) in needle[..m - 1].iter().enumerate() {
                skip[byte as usize] = m - 1 - i;
            }
        }
        ShiftedPattern {
            shift,
            values,
            masks,
            anchor,
            skip,
        }
    }
}

/// A prepared pattern that can be searched for repeatedly.
#[derive(Debug, Clone)]
pub struct Finder<'p> {
    pattern: &'p BitBuffer,
    shifts: Vec<ShiftedPattern>,
}

impl<'p> Finder<'p> {
    pub fn new(pattern: &'p BitBuffer) -> Result<Self, SearchError> {
        if pattern.is_empty() {
            return Err(SearchError::InvalidArgument("empty pattern"));
        }
        let shifts = (0..8).map(|s| ShiftedPattern::new(pattern, s)).collect();
        Ok(Finder { pattern, shifts })
    }

    pub fn pattern(&self) -> &BitBuffer {
        self.pattern
    }

    /// Leftmost match at or after `from`. An origin past the end finds nothing.
    pub fn find_from(&self, corpus: &BitBuffer, from: u64) -> MatchResult {
        self.find_in_range(corpus, from, u64::MAX).into()
    }

    /// Leftmost match with start bit in `[lo, hi)`. The match itself may
    /// extend past `hi`.
    pub fn find_in_range(&self, corpus: &BitBuffer, lo: u64, hi: u64) -> Option<u64> {
        let m = self.pattern.bit_len();
        let n = corpus.bit_len();
        if m > n {
            return None;
        }
        let hi = hi.min(n - m + 1);
        let mut window_lo = lo;
        while window_lo < hi {
            let window_hi = window_lo.saturating_add(WINDOW_BITS).min(hi);
            let mut best: Option<u64> = None;
            for sp in &self.shifts {
                let bound = best.unwrap_or(window_hi);
                if let Some(p) = self.scan_shift(sp, corpus, window_lo, bound) {
                    best = Some(p);
                }
            }
            if best.is_some() {
                return best;
            }
            window_lo = window_hi;
        }
        None
    }

    /// Shards `[from, n - m]` across `worker_count` threads. Each shard owns
    /// a contiguous range of start positions and reads up to `m - 1` bits past
    /// its right edge, so boundary-straddling matches belong to the left shard.
    pub fn find_sharded(
        &self,
        corpus: &BitBuffer,
        from: u64,
        worker_count: usize,
    ) -> Result<MatchResult, SearchError> {
        if worker_count == 0 {
            return Err(SearchError::InvalidArgument(
                "worker_count must be at least 1",
            ));
        }
        if from > corpus.bit_len() {
            return Err(SearchError::InvalidArgument(
                "search origin past end of corpus",
            ));
        }
        let m = self.pattern.bit_len();
        let n = corpus.bit_len();
        if m > n || from > n - m {
            return Ok(MatchResult::NOT_FOUND);
        }
        if worker_count == 1 {
            return Ok(self.find_from(corpus, from));
        }
        let starts = n - m + 1 - from;
        let shard = starts.div_ceil(worker_count as u64);
        let hits: Vec<Option<u64>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..worker_count as u64)
                .map(|w| from + w * shard)
                .take_while(|&lo| lo < from + starts)
                .map(|lo| {
                    let hi = (lo + shard).min(from + starts);
                    scope.spawn(move || self.find_in_range(corpus, lo, hi))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("search worker panicked"))
                .collect()
        });
        Ok(hits.into_iter().flatten().min().into())
    }

    /// Leftmost verified match for one shift with start bit in `[lo, hi)`.
    fn scan_shift(&self, sp: &ShiftedPattern, corpus: &BitBuffer, lo: u64, hi: u64) -> Option<u64> {
        let s = u64::from(sp.shift);
        if hi == 0 || hi - 1 < s {
            return None;
        }
        // Candidate start bits are 8k + s for k in [k_lo, k_hi].
        let k_lo = if lo <= s { 0 } else { (lo - s).div_ceil(8) };
        let k_hi = (hi - 1 - s) / 8;
        if k_lo > k_hi {
            return None;
        }
        let hay = corpus.as_bytes();
        let m = self.pattern.bit_len();
        let verify = |k: u64| {
            let start = 8 * k + s;
            bits_equal(self.pattern.as_bytes(), 0, hay, start, m).then_some(start)
        };
        match sp.anchor {
            Some((a, b)) => {
                let needle = &sp.values[a..b];
                // Anchor occurrences at byte k + a for k in [k_lo, k_hi].
                let from = (k_lo as usize) + a;
                let to = (k_hi as usize) + a + needle.len();
                let window = &hay[from..to];
                let mut pos = 0;
                while let Some(h) = horspool(window, needle, &sp.skip, pos) {
                    let k = (from + h - a) as u64;
                    if self.edges_match(sp, hay, k) {
                        if let Some(start) = verify(k) {
                            return Some(start);
                        }
                    }
                    pos = h + 1;
                }
                None
            }
            None => (k_lo..=k_hi).find_map(|k| {
                let k0 = k as usize;
                let ok = sp
                    .values
                    .iter()
                    .zip(&sp.masks)
                    .enumerate()
                    .all(|(j, (&v, &mask))| hay[k0 + j] & mask == v);
                if ok {
                    verify(k)
                } else {
                    None
                }
            }),
        }
    }

    /// Cheap check of the partially determined first byte before the full
    /// bit-exact verification.
    #[inline]
    fn edges_match(&self, sp: &ShiftedPattern, hay: &[u8], k: u64) -> bool {
        let k = k as usize;
        sp.masks[0] == 0xFF || hay[k] & sp.masks[0] == sp.values[0]
    }
}

/// Horspool scan for `needle` in `hay` starting at `pos`.
fn horspool(hay: &[u8], needle: &[u8], skip: &[usize; 256], mut pos: usize) -> Option<usize> {
    let m = needle.len();
    let last = needle[m - 1];
    while pos + m <= hay.len() {
        let tail = hay[pos + m - 1];
        if tail == last && hay[pos..pos + m - 1] == needle[..m - 1] {
            return Some(pos);
        }
        pos += skip[tail as usize];
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::BitSpan;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bits(s: &str) -> BitBuffer {
        BitBuffer::from_bit_str(s).unwrap()
    }

    fn random_bits(rng: &mut impl Rng, n: u64) -> BitBuffer {
        let s: String = (0..n)
            .map(|_| if rng.random::<bool>() { '1' } else { '0' })
            .collect();
        bits(&s)
    }

    #[test]
    fn membership_examples() {
        assert!(is_member(&bits("1111"), &bits("00111100")).unwrap());
        assert!(!is_member(&bits("1111"), &bits("00110011")).unwrap());
        let b = bits("00111100");
        assert!(!is_member(&b, &b.clone()).unwrap());
    }

    #[test]
    fn membership_rejects_empty() {
        let empty = BitBuffer::from_bytes(vec![]);
        assert!(is_member(&empty, &bits("1")).is_err());
        assert!(is_member(&bits("1"), &empty).is_err());
    }

    #[test]
    fn naive_examples() {
        let corpus = bits("00111100");
        let p = bits("1111");
        assert_eq!(
            find_first_naive(&p, &corpus, 0).unwrap(),
            MatchResult::at(2)
        );
        assert_eq!(
            find_first_naive(&p, &corpus, 3).unwrap(),
            MatchResult::NOT_FOUND
        );
        assert_eq!(
            find_first_naive(&bits("001"), &corpus, 0).unwrap(),
            MatchResult::at(0)
        );
        assert!(find_first_naive(&BitBuffer::from_bytes(vec![]), &corpus, 0).is_err());
        assert!(find_first_naive(&p, &corpus, 9).is_err());
        assert_eq!(
            find_first_naive(&p, &corpus, 8).unwrap(),
            MatchResult::NOT_FOUND
        );
    }

    #[test]
    fn accelerated_examples() {
        let corpus = bits("00111100");
        let p = bits("1111");
        assert_eq!(find_first(&p, &corpus, 0).unwrap(), MatchResult::at(2));
        assert_eq!(find_first(&p, &corpus, 3).unwrap(), MatchResult::NOT_FOUND);
        assert_eq!(find_first(&p, &corpus, 2).unwrap(), MatchResult::at(2));
    }

    #[test]
    fn pattern_longer_than_corpus() {
        let p = bits("111111111");
        let c = bits("11111111");
        assert_eq!(find_first(&p, &c, 0).unwrap(), MatchResult::NOT_FOUND);
        assert_eq!(
            find_first_sharded(&p, &c, 4).unwrap(),
            MatchResult::NOT_FOUND
        );
    }

    #[test]
    fn sharded_rejects_zero_workers() {
        assert!(find_first_sharded(&bits("1"), &bits("01"), 0).is_err());
    }

    #[test]
    fn randomized_equivalence_with_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xB17);
        for _ in 0..1000 {
            let n = rng.random_range(1..=4096u64);
            let m = rng.random_range(1..=64u64);
            let corpus = random_bits(&mut rng, n);
            // Half the patterns are cut from the corpus so hits are common.
            let pattern = if m <= n && rng.random::<bool>() {
                let at = rng.random_range(0..=n - m);
                corpus.extract(BitSpan::new(at, m).unwrap()).unwrap()
            } else {
                random_bits(&mut rng, m)
            };
            let from = rng.random_range(0..=n.min(64));
            assert_eq!(
                find_first(&pattern, &corpus, from).unwrap(),
                find_first_naive(&pattern, &corpus, from).unwrap()
            );
        }
    }

    #[test]
    fn match_straddling_shard_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut raw = vec![0u8; 1024];
        rng.fill(&mut raw[..]);
        let corpus = BitBuffer::from_bytes(raw);
        let m = 100;
        let starts = corpus.bit_len() - m + 1;
        let mid = starts.div_ceil(2);
        // Starts just left of the midpoint and runs into the right shard.
        let at = mid - 37;
        let pattern = corpus.extract(BitSpan::new(at, m).unwrap()).unwrap();
        let expected = find_first_naive(&pattern, &corpus, 0).unwrap();
        assert_eq!(expected, MatchResult::at(at));
        assert_eq!(find_first_sharded(&pattern, &corpus, 2).unwrap(), expected);
    }

    #[test]
    fn find_all_counts_overlaps() {
        assert_eq!(
            find_all(&bits("11"), &bits("0111011")).unwrap(),
            vec![1, 2, 5]
        );
        assert_eq!(
            find_all(&bits("1"), &bits("0000")).unwrap(),
            Vec::<u64>::new()
        );
    }

    #[test]
    fn window_boundaries_do_not_hide_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut raw = vec![0u8; (WINDOW_BITS / 8 * 2 + 100) as usize];
        rng.fill(&mut raw[..]);
        let corpus = BitBuffer::from_bytes(raw);
        for at in [
            WINDOW_BITS - 1,
            WINDOW_BITS,
            WINDOW_BITS + 3,
            2 * WINDOW_BITS - 200,
        ] {
            let pattern = corpus.extract(BitSpan::new(at, 200).unwrap()).unwrap();
            let got = find_first(&pattern, &corpus, at.saturating_sub(5000)).unwrap();
            assert_eq!(got, MatchResult::at(at));
        }
    }

    proptest! {
        #[test]
        fn all_routes_agree(
            corpus in proptest::collection::vec(any::<u8>(), 1..48),
            pat_len in 1u64..40,
            cut in any::<u64>(),
            from in 0u64..32,
            workers in 1usize..9,
        ) {
            let corpus = BitBuffer::from_bytes(corpus);
            let n = corpus.bit_len();
            let pattern = if pat_len <= n {
                corpus.extract(BitSpan::new(cut % (n - pat_len + 1), pat_len).unwrap()).unwrap()
            } else {
                BitBuffer::from_bit_str(&"1".repeat(pat_len as usize)).unwrap()
            };
            let from = from.min(n);
            let naive = find_first_naive(&pattern, &corpus, from).unwrap();
            prop_assert_eq!(find_first(&pattern, &corpus, from).unwrap(), naive);
            let finder = Finder::new(&pattern).unwrap();
            prop_assert_eq!(finder.find_sharded(&corpus, from, workers).unwrap(), naive);
            if let Some(p) = naive.start_bit() {
                prop_assert!(corpus.range_eq(p, &pattern, 0, pattern.bit_len()));
            }
            let member = pattern.bit_len() < n && find_first(&pattern, &corpus, 0).unwrap().found();
            prop_assert_eq!(is_member(&pattern, &corpus).unwrap(), member);
        }
    }
}
