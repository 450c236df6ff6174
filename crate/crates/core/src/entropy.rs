//! Random, temporally uncorrelated and true (sequence) entropy.
//!
//! The true entropy is a Lempel-Ziv estimate of the entropy rate:
//!
//! ```text
//! S = n log2(n) / Σ Λ_i
//! ```
//!
//! where `Λ_i` is the length of the shortest substring starting at position
//! `i` that does not occur anywhere inside the prefix `s[..i]`. When the
//! whole suffix `s[i..]` occurs in the prefix no such substring exists and
//! `Λ_i = n - i + 1` (0-based `i`), i.e. one more than the remaining length.
//! Both cases reduce to `Λ_i = L_i + 1` with `L_i` the longest prefix of
//! `s[i..]` that is a substring of `s[..i]`, which is what the two scanners
//! below compute.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::model::{EntropyReport, EventSequence, SymbolLevel};

/// `log2(N)` over distinct merchants.
pub fn random_entropy(seq: &EventSequence) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok((seq.n_merchants() as f64).log2())
}

/// Shannon entropy of the visit-frequency distribution over merchants.
pub fn uncorrelated_entropy(seq: &EventSequence) -> Result<f64> {
    let dist = seq
        .visit_distribution(SymbolLevel::Merchant)
        .ok_or(Error::EmptySequence)?;
    Ok(shannon_entropy(dist.counts().values().copied()))
}

/// `-Σ p log2 p` of a count vector; zero counts contribute nothing.
pub fn shannon_entropy(counts: impl IntoIterator<Item = u64>) -> f64 {
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    // Rounding can push a uniform distribution an ulp above log2(k), and a
    // single symbol gives -0.0.
    if h <= 0.0 {
        0.0
    } else {
        h.min((counts.len() as f64).log2())
    }
}

/// Which scanner computes the match lengths. Both produce identical values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LzScanner {
    /// Quadratic scan over every earlier start position.
    Naive,
    /// Incremental suffix automaton over the prefix.
    Indexed,
    /// Naive for short sequences, indexed above [`AUTO_INDEXED_FROM`].
    #[default]
    Auto,
}

impl std::str::FromStr for LzScanner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(LzScanner::Naive),
            "indexed" => Ok(LzScanner::Indexed),
            "auto" => Ok(LzScanner::Auto),
            _ => Err(Error::invalid(
                "scanner",
                format!("expected naive, indexed or auto, got {s:?}"),
            )),
        }
    }
}

impl std::fmt::Display for LzScanner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LzScanner::Naive => "naive",
            LzScanner::Indexed => "indexed",
            LzScanner::Auto => "auto",
        })
    }
}

/// Length from which [`LzScanner::Auto`] switches to the indexed scanner.
pub const AUTO_INDEXED_FROM: usize = 4096;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EntropyOptions {
    pub level: SymbolLevel,
    pub scanner: LzScanner,
}

/// `Λ_i` for every position.
pub fn lz_match_lengths(symbols: &[u32], scanner: LzScanner) -> Vec<u32> {
    let longest = match scanner {
        LzScanner::Naive => longest_prior_match_naive(symbols),
        LzScanner::Indexed => longest_prior_match_indexed(symbols),
        LzScanner::Auto if symbols.len() < AUTO_INDEXED_FROM => longest_prior_match_naive(symbols),
        LzScanner::Auto => longest_prior_match_indexed(symbols),
    };
    longest.into_iter().map(|l| l + 1).collect()
}

/// Lempel-Ziv entropy-rate estimate in bits per symbol. Needs `n >= 2`.
pub fn lz_entropy_rate(symbols: &[u32], scanner: LzScanner) -> Result<f64> {
    let n = symbols.len();
    if n < 2 {
        return Err(Error::SequenceTooShort { len: n, min: 2 });
    }
    let sum: u64 = lz_match_lengths(symbols, scanner)
        .iter()
        .map(|&l| l as u64)
        .sum();
    Ok(n as f64 * (n as f64).log2() / sum as f64)
}

pub fn true_entropy(seq: &EventSequence, options: EntropyOptions) -> Result<f64> {
    lz_entropy_rate(&seq.symbols(options.level), options.scanner)
}

const LANES: usize = 16;

/// For each `i`, the longest `l` such that `s[i..i+l] == s[j..j+l]` for some
/// `j` with `j + l <= i`.
///
/// Walks every diagonal `d = i - j` backwards keeping the run of equal
/// symbols; the match at `i` on diagonal `d` is `min(run, d)`. A block of
/// adjacent diagonals is advanced together so the inner loop vectorizes.
fn longest_prior_match_naive(s: &[u32]) -> Vec<u32> {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { longest_prior_match_naive_avx2(s) };
        }
    }
    longest_prior_match_naive_portable(s)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn longest_prior_match_naive_avx2(s: &[u32]) -> Vec<u32> {
    longest_prior_match_naive_portable(s)
}

#[inline(always)]
fn longest_prior_match_naive_portable(s: &[u32]) -> Vec<u32> {
    let n = s.len();
    let mut best = vec![0u32; n];
    let mut d = 1;
    while d + LANES <= n {
        // Lane k follows diagonal d + LANES - 1 - k, so at position i it
        // compares against s[i - d - LANES + 1 + k].
        let far = d + LANES - 1;
        let caps: [u32; LANES] = std::array::from_fn(|k| (far - k) as u32);
        let mut run = [0u32; LANES];
        for i in (far..n).rev() {
            let cur = s[i];
            let past: &[u32; LANES] = s[i - far..=i - d].try_into().expect("block width");
            let mut m = [0u32; LANES];
            for k in 0..LANES {
                let mask = 0u32.wrapping_sub((past[k] == cur) as u32);
                run[k] = run[k].wrapping_add(1) & mask;
                m[k] = run[k].min(caps[k]);
            }
            let m = m.into_iter().fold(0, u32::max);
            if m > best[i] {
                best[i] = m;
            }
        }
        // Short lanes: positions where only the nearer diagonals exist.
        for i in (d..far).rev() {
            for k in 0..LANES {
                let dk = far - k;
                if i < dk {
                    continue;
                }
                run[k] = if s[i - dk] == s[i] { run[k] + 1 } else { 0 };
                best[i] = best[i].max(run[k].min(caps[k]));
            }
        }
        d += LANES;
    }
    while d < n {
        let mut run = 0u32;
        for i in (d..n).rev() {
            run = if s[i - d] == s[i] { run + 1 } else { 0 };
            best[i] = best[i].max(run.min(d as u32));
        }
        d += 1;
    }
    best
}

/// Same quantity via a suffix automaton of `s[..i]`, extended one symbol
/// at a time. Cost is linear in `n` plus the total match length.
fn longest_prior_match_indexed(s: &[u32]) -> Vec<u32> {
    let mut automaton = SuffixAutomaton::with_capacity(s.len());
    let mut best = Vec::with_capacity(s.len());
    for i in 0..s.len() {
        let mut state = 0u32;
        let mut l = 0usize;
        while let Some(next) = s.get(i + l).and_then(|&c| automaton.transition(state, c)) {
            state = next;
            l += 1;
        }
        best.push(l as u32);
        automaton.extend(s[i]);
    }
    best
}

struct SamState {
    len: u32,
    link: u32,
    next: Vec<(u32, u32)>,
}

struct SuffixAutomaton {
    states: Vec<SamState>,
    last: u32,
}

const NO_LINK: u32 = u32::MAX;

impl SuffixAutomaton {
    fn with_capacity(n: usize) -> Self {
        let mut states = Vec::with_capacity(2 * n + 1);
        states.push(SamState {
            len: 0,
            link: NO_LINK,
            next: Vec::new(),
        });
        SuffixAutomaton { states, last: 0 }
    }

    fn transition(&self, state: u32, c: u32) -> Option<u32> {
        let next = &self.states[state as usize].next;
        next.binary_search_by_key(&c, |&(k, _)| k)
            .ok()
            .map(|i| next[i].1)
    }

    fn set(&mut self, state: u32, c: u32, target: u32) {
        let next = &mut self.states[state as usize].next;
        match next.binary_search_by_key(&c, |&(k, _)| k) {
            Ok(i) => next[i].1 = target,
            Err(i) => next.insert(i, (c, target)),
        }
    }

    fn extend(&mut self, c: u32) {
        let cur = self.states.len() as u32;
        self.states.push(SamState {
            len: self.states[self.last as usize].len + 1,
            link: 0,
            next: Vec::new(),
        });
        let mut p = self.last;
        while p != NO_LINK && self.transition(p, c).is_none() {
            self.set(p, c, cur);
            p = self.states[p as usize].link;
        }
        if p != NO_LINK {
            let q = self
                .transition(p, c)
                .expect("loop stopped on an existing edge");
            if self.states[p as usize].len + 1 == self.states[q as usize].len {
                self.states[cur as usize].link = q;
            } else {
                let clone = self.states.len() as u32;
                let cloned = SamState {
                    len: self.states[p as usize].len + 1,
                    link: self.states[q as usize].link,
                    next: self.states[q as usize].next.clone(),
                };
                self.states.push(cloned);
                while p != NO_LINK && self.transition(p, c) == Some(q) {
                    self.set(p, c, clone);
                    p = self.states[p as usize].link;
                }
                self.states[q as usize].link = clone;
                self.states[cur as usize].link = clone;
            }
        }
        self.last = cur;
    }
}

/// All three measures for one sequence (at least two events).
pub fn entropy_report(seq: &EventSequence, options: EntropyOptions) -> Result<EntropyReport> {
    if seq.len() < 2 {
        return Err(Error::SequenceTooShort {
            len: seq.len(),
            min: 2,
        });
    }
    Ok(EntropyReport {
        account_id: seq.account_id().to_owned(),
        s_rand: random_entropy(seq)?,
        s_unc: uncorrelated_entropy(seq)?,
        s_true: true_entropy(seq, options)?,
        n_events: seq.len(),
        n_merchants: seq.n_merchants(),
    })
}

/// Fixed-width histogram; bins are `[lo, hi)` and contiguous, empty bins
/// between the extremes included.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub bins: Vec<Bin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

impl Histogram {
    pub fn build(values: &[f64], bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::invalid(
                "bin_width",
                format!("{bin_width} is not positive"),
            ));
        }
        let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
        for &v in values {
            if !v.is_finite() {
                return Err(Error::invalid(
                    "histogram value",
                    format!("{v} is not finite"),
                ));
            }
            *counts.entry((v / bin_width).floor() as i64).or_default() += 1;
        }
        let bins = match (counts.keys().next(), counts.keys().next_back()) {
            (Some(&lo), Some(&hi)) => (lo..=hi)
                .map(|k| Bin {
                    lo: k as f64 * bin_width,
                    hi: (k + 1) as f64 * bin_width,
                    count: counts.get(&k).copied().unwrap_or(0),
                })
                .collect(),
            _ => Vec::new(),
        };
        Ok(Histogram { bin_width, bins })
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Mean of bin midpoints weighted by count.
    pub fn binned_mean(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| {
            self.bins
                .iter()
                .map(|b| (b.lo + b.hi) / 2.0 * b.count as f64)
                .sum::<f64>()
                / total as f64
        })
    }
}

/// Per-measure histograms over a set of accounts.
#[derive(Debug, Clone, Serialize)]
pub struct EntropyDistribution {
    pub reports: Vec<EntropyReport>,
    /// Accounts with fewer than two events; not included in the histograms.
    pub too_few_events: Vec<String>,
    pub random: Histogram,
    pub uncorrelated: Histogram,
    pub true_entropy: Histogram,
}

impl EntropyDistribution {
    pub fn means(&self) -> Option<(f64, f64, f64)> {
        let n = self.reports.len() as f64;
        (n > 0.0).then(|| {
            let sum = |f: fn(&EntropyReport) -> f64| self.reports.iter().map(f).sum::<f64>() / n;
            (sum(|r| r.s_rand), sum(|r| r.s_unc), sum(|r| r.s_true))
        })
    }

    /// CSV with columns `bin_lo,bin_hi,count,measure`.
    pub fn write_histograms_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_lo,bin_hi,count,measure")?;
        for (name, h) in [
            ("random", &self.random),
            ("uncorrelated", &self.uncorrelated),
            ("true", &self.true_entropy),
        ] {
            for b in &h.bins {
                writeln!(w, "{:.6},{:.6},{},{}", b.lo, b.hi, b.count, name)?;
            }
        }
        Ok(())
    }
}

/// Reports are ordered by account id regardless of thread count.
pub fn entropy_distribution(
    dataset: &Dataset,
    accounts: &BTreeSet<String>,
    options: EntropyOptions,
    bin_width: f64,
) -> Result<EntropyDistribution> {
    if accounts.is_empty() {
        return Err(Error::EmptyAccountSet);
    }
    let seqs: Vec<&EventSequence> = accounts
        .iter()
        .map(|a| dataset.sequence(a))
        .collect::<Result<_>>()?;
    let results: Vec<Option<EntropyReport>> = seqs
        .par_iter()
        .map(|s| {
            if s.len() < 2 {
                Ok(None)
            } else {
                entropy_report(s, options).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let mut reports = Vec::new();
    let mut too_few_events = Vec::new();
    for (seq, r) in seqs.iter().zip(results) {
        match r {
            Some(r) => reports.push(r),
            None => too_few_events.push(seq.account_id().to_owned()),
        }
    }
    let column = |f: fn(&EntropyReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    Ok(EntropyDistribution {
        random: Histogram::build(&column(|r| r.s_rand), bin_width)?,
        uncorrelated: Histogram::build(&column(|r| r.s_unc), bin_width)?,
        true_entropy: Histogram::build(&column(|r| r.s_true), bin_width)?,
        reports,
        too_few_events,
    })
}

fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }
}

/// Fano right-hand side: `H(Π) + (1 - Π) log2(N - 1)`.
pub fn fano_entropy(predictability: f64, n_symbols: usize) -> f64 {
    binary_entropy(predictability) + (1.0 - predictability) * ((n_symbols - 1) as f64).log2()
}

/// Upper bound on prediction accuracy given an entropy rate and alphabet
/// size: the root of `fano_entropy(Π, N) = entropy` on `[1/N, 1]`.
/// This is an optional extension and not part of the default reports.
pub fn max_predictability(entropy: f64, n_symbols: usize) -> Result<f64> {
    let infeasible = || Error::InfeasibleEntropy {
        entropy,
        symbols: n_symbols,
    };
    if n_symbols < 2 {
        return Err(infeasible());
    }
    let cap = (n_symbols as f64).log2();
    if !(entropy >= 0.0 && entropy <= cap + 1e-12) {
        return Err(infeasible());
    }
    if entropy == 0.0 {
        return Ok(1.0);
    }
    // fano_entropy is decreasing on [1/N, 1].
    let (mut lo, mut hi) = (1.0 / n_symbols as f64, 1.0);
    if entropy >= cap {
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fano_entropy(mid, n_symbols) > entropy {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DateWindow, Event, Mcc, Timezone};
    use chrono::{Duration, TimeZone, Utc};
    use proptest::prelude::*;

    /// Literal reading of the definition: grow the candidate substring until
    /// it is absent from the prefix.
    fn match_lengths_oracle(s: &[u32]) -> Vec<u32> {
        let n = s.len();
        (0..n)
            .map(|i| {
                let past = &s[..i];
                for l in 1..=n - i {
                    let cand = &s[i..i + l];
                    if !past.windows(l).any(|w| w == cand) {
                        return l as u32;
                    }
                }
                (n - i + 1) as u32
            })
            .collect()
    }

    pub(crate) fn seq_of(labels: &[&str]) -> EventSequence {
        let t0 = Utc.with_ymd_and_hms(2010, 3, 1, 0, 0, 0).unwrap();
        let events = labels
            .iter()
            .enumerate()
            .map(|(i, l)| Event {
                timestamp: t0 + Duration::minutes(i as i64),
                merchant_id: l.to_string(),
                mcc: Mcc::new("5411").unwrap(),
            })
            .collect();
        EventSequence::new(
            "acct",
            events,
            "2010-03-01:2010-12-31".parse::<DateWindow>().unwrap(),
            Timezone::UTC,
        )
    }

    #[test]
    fn random_entropy_examples() {
        let eight: Vec<String> = (0..8).map(|i| format!("m{i}")).collect();
        let refs: Vec<&str> = eight.iter().map(|s| s.as_str()).collect();
        assert_eq!(random_entropy(&seq_of(&refs)).unwrap(), 3.0);
        assert_eq!(random_entropy(&seq_of(&["a"; 50])).unwrap(), 0.0);
        let eleven: Vec<String> = (0..11).map(|i| format!("m{i}")).collect();
        let refs11: Vec<&str> = eleven.iter().map(String::as_str).collect();
        let uniform = seq_of(&refs11);
        assert!(uncorrelated_entropy(&uniform).unwrap() <= random_entropy(&uniform).unwrap());
        let five = seq_of(&["a", "b", "c", "d", "e", "a"]);
        assert!((random_entropy(&five).unwrap() - 2.321928).abs() < 1e-6);
        assert!(matches!(
            random_entropy(&seq_of(&[])),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn uncorrelated_entropy_examples() {
        assert_eq!(
            uncorrelated_entropy(&seq_of(&["a", "b", "c", "d", "d", "c", "b", "a"])).unwrap(),
            2.0
        );
        assert_eq!(
            uncorrelated_entropy(&seq_of(&["a", "b", "a", "c"])).unwrap(),
            1.5
        );
        let single = uncorrelated_entropy(&seq_of(&["a", "a", "a"])).unwrap();
        assert_eq!(single, 0.0);
        assert!(single.is_sign_positive());
        assert!(uncorrelated_entropy(&seq_of(&[])).is_err());
    }

    #[test]
    fn scanners_agree_with_oracle_on_fixed_cases() {
        let cases: Vec<Vec<u32>> = vec![
            vec![0],
            vec![0, 0],
            vec![0, 1],
            vec![0; 40],
            (0..40).map(|i| i % 2).collect(),
            (0..40).map(|i| i % 3).collect(),
            vec![0, 1, 0, 2, 0, 1, 0, 2, 1, 1, 0, 0, 2, 2, 0, 1],
        ];
        for s in cases {
            let oracle = match_lengths_oracle(&s);
            assert_eq!(lz_match_lengths(&s, LzScanner::Naive), oracle, "{s:?}");
            assert_eq!(lz_match_lengths(&s, LzScanner::Indexed), oracle, "{s:?}");
        }
    }

    #[test]
    fn boundary_convention_on_suffix() {
        // "AAA": Λ = 1, then "A" and "AA" repeat earlier material.
        assert_eq!(
            lz_match_lengths(&[0, 0, 0], LzScanner::Naive),
            vec![1, 2, 2]
        );
        // "ABAB": final "B" repeats position 1, Λ = n - i + 1 = 2.
        assert_eq!(
            lz_match_lengths(&[0, 1, 0, 1], LzScanner::Indexed),
            vec![1, 1, 3, 2]
        );
    }

    #[test]
    fn constant_sequence_estimate_is_small() {
        let s = vec![7u32; 1000];
        let h = lz_entropy_rate(&s, LzScanner::Naive).unwrap();
        assert!(h < 0.15, "{h}");
        assert_eq!(h, lz_entropy_rate(&s, LzScanner::Indexed).unwrap());
    }

    #[test]
    fn alternating_sequence_estimate_is_small() {
        let labels: Vec<&str> = (0..1000)
            .map(|i| if i % 2 == 0 { "A" } else { "B" })
            .collect();
        let seq = seq_of(&labels);
        let h = true_entropy(&seq, EntropyOptions::default()).unwrap();
        assert!(h < 0.2, "{h}");
        assert!(h < uncorrelated_entropy(&seq).unwrap());
        assert_eq!(uncorrelated_entropy(&seq).unwrap(), 1.0);
    }

    #[test]
    fn too_short_for_true_entropy() {
        assert!(matches!(
            lz_entropy_rate(&[1], LzScanner::Naive),
            Err(Error::SequenceTooShort { .. })
        ));
        assert!(entropy_report(&seq_of(&["a"]), EntropyOptions::default()).is_err());
    }

    #[test]
    fn single_merchant_report() {
        let r = entropy_report(&seq_of(&["m"; 10]), EntropyOptions::default()).unwrap();
        assert_eq!((r.s_rand, r.s_unc), (0.0, 0.0));
        // n log n / ΣΛ with ΣΛ = 35 at n = 10: the estimator only decays
        // towards zero as n grows.
        assert!((r.s_true - 10.0 * 10f64.log2() / 35.0).abs() < 1e-12);
        assert!(r.s_true < 1.0);
        assert_eq!((r.n_events, r.n_merchants), (10, 1));
    }

    #[test]
    fn mcc_level_symbols() {
        let mut seq = seq_of(&["a", "b", "a", "b"]);
        let opts = EntropyOptions {
            level: SymbolLevel::Mcc,
            ..Default::default()
        };
        // All events share one MCC.
        let h_mcc = true_entropy(&seq, opts).unwrap();
        assert!(h_mcc < true_entropy(&seq, EntropyOptions::default()).unwrap());
        seq = seq_of(&["a", "a"]);
        assert_eq!(
            true_entropy(&seq, opts).unwrap(),
            true_entropy(&seq, EntropyOptions::default()).unwrap()
        );
    }

    #[test]
    fn histogram_layout() {
        let h = Histogram::build(&[0.05, 0.15, 0.45], 0.1).unwrap();
        assert_eq!(h.bins.len(), 5);
        assert_eq!(
            h.bins.iter().map(|b| b.count).collect::<Vec<_>>(),
            vec![1, 1, 0, 0, 1]
        );
        let single = Histogram::build(&[1.3], 0.25).unwrap();
        assert_eq!(single.bins.len(), 1);
        let zeros = Histogram::build(&[0.0; 4], 0.1).unwrap();
        assert_eq!(
            zeros.bins,
            vec![Bin {
                lo: 0.0,
                hi: 0.1,
                count: 4
            }]
        );
        assert!(Histogram::build(&[1.0], 0.0).is_err());
    }

    #[test]
    fn fano_limits() {
        assert_eq!(max_predictability(0.0, 4).unwrap(), 1.0);
        assert!((max_predictability(2.0, 4).unwrap() - 0.25).abs() < 1e-12);
        assert!((max_predictability(3f64.log2(), 3).unwrap() - 1.0 / 3.0).abs() < 1e-9);
        assert!(max_predictability(2.5, 4).is_err());
        assert!(max_predictability(-0.1, 4).is_err());
        assert!(max_predictability(0.5, 1).is_err());
    }

    #[test]
    fn fano_residual_at_one_bit_four_symbols() {
        let p = max_predictability(1.0, 4).unwrap();
        assert!((fano_entropy(p, 4) - 1.0).abs() < 1e-9);
        assert!(p > 0.25 && p < 1.0);
    }

    proptest! {
        #[test]
        fn scanners_match_oracle(s in proptest::collection::vec(0u32..4, 0..120)) {
            let oracle = match_lengths_oracle(&s);
            prop_assert_eq!(lz_match_lengths(&s, LzScanner::Naive), oracle.clone());
            prop_assert_eq!(lz_match_lengths(&s, LzScanner::Indexed), oracle);
        }

        #[test]
        fn scanners_agree_on_wide_alphabets(s in proptest::collection::vec(0u32..40, 0..400)) {
            prop_assert_eq!(
                lz_match_lengths(&s, LzScanner::Naive),
                lz_match_lengths(&s, LzScanner::Indexed)
            );
        }

        #[test]
        fn random_bounds_uncorrelated(labels in proptest::collection::vec(0u8..12, 1..80)) {
            let names: Vec<String> = labels.iter().map(|l| format!("m{l}")).collect();
            let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            let seq = seq_of(&refs);
            let r = random_entropy(&seq).unwrap();
            let u = uncorrelated_entropy(&seq).unwrap();
            prop_assert!(u >= 0.0);
            prop_assert!(r + 1e-12 >= u);
        }

        #[test]
        fn count_measures_ignore_order(labels in proptest::collection::vec(0u8..6, 1..60), rot in 0usize..60) {
            let names: Vec<String> = labels.iter().map(|l| format!("m{l}")).collect();
            let mut perm = names.clone();
            perm.sort();
            let k = rot % perm.len();
            perm.rotate_left(k);
            let a: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            let b: Vec<&str> = perm.iter().map(|s| s.as_str()).collect();
            let (sa, sb) = (seq_of(&a), seq_of(&b));
            prop_assert_eq!(random_entropy(&sa).unwrap().to_bits(), random_entropy(&sb).unwrap().to_bits());
            prop_assert_eq!(uncorrelated_entropy(&sa).unwrap().to_bits(), uncorrelated_entropy(&sb).unwrap().to_bits());
        }

        #[test]
        fn fano_root_solves_equation(n in 2usize..50, frac in 0.0f64..1.0) {
            let s = frac * (n as f64).log2();
            let p = max_predictability(s, n).unwrap();
            prop_assert!((fano_entropy(p, n) - s).abs() < 1e-9);
        }
    }
}
