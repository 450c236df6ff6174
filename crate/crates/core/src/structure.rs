//! Rank-frequency curves with Zipf fits, and transition networks between
//! merchants or merchant categories.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::uncorrelated_entropy;
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::model::{EventSequence, SymbolLevel};
use crate::stats::{derived_rng, linear_fit, sample_sd};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "account_id")]
pub enum RankSource {
    Individual(String),
    Population,
}

/// What a bootstrap resamples when fitting this curve.
#[derive(Debug, Clone, PartialEq)]
enum ResampleBasis {
    /// Curve given directly as points; nothing to resample.
    Points,
    /// Individual visit counts, sorted descending.
    Visits(Vec<u64>),
    /// Normalized curves of the individuals that were averaged.
    Individuals(Vec<Vec<f64>>, RankAverage),
}

/// How individual curves are combined into a population curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankAverage {
    /// Only individuals that reach a rank contribute to it. Short histories
    /// then inflate the tail, and the curve need not be monotone.
    #[default]
    Reaching,
    /// Every individual contributes to every rank, with probability 0
    /// beyond its last store. The result is a non-increasing curve summing
    /// to 1.
    All,
}

impl FromStr for RankAverage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(RankAverage::All),
            "reaching" => Ok(RankAverage::Reaching),
            _ => Err(Error::invalid(
                "rank_average",
                format!("expected all or reaching, got {s:?}"),
            )),
        }
    }
}

impl std::fmt::Display for RankAverage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RankAverage::All => "all",
            RankAverage::Reaching => "reaching",
        })
    }
}

/// Visit probability by preference rank (1 = most visited).
#[derive(Debug, Clone, PartialEq)]
pub struct RankCurve {
    points: Vec<(u32, f64)>,
    source: RankSource,
    basis: ResampleBasis,
}

impl RankCurve {
    /// Takes explicit points. Ranks must run 1, 2, 3, … and probabilities
    /// must be non-increasing and sum to at most 1.
    pub fn from_points(points: Vec<(u32, f64)>, source: RankSource) -> Result<Self> {
        for (i, &(rank, p)) in points.iter().enumerate() {
            if rank as usize != i + 1 {
                return Err(Error::invalid(
                    "rank curve",
                    format!("rank {rank} at position {}", i + 1),
                ));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(
                    "rank curve",
                    format!("probability {p} at rank {rank}"),
                ));
            }
        }
        if points.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(Error::invalid(
                "rank curve",
                "probabilities must be non-increasing",
            ));
        }
        if points.iter().map(|p| p.1).sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::invalid("rank curve", "probabilities sum above 1"));
        }
        Ok(RankCurve {
            points,
            source,
            basis: ResampleBasis::Points,
        })
    }

    /// Normalized, descending-sorted visit counts of one individual.
    pub fn from_counts(account_id: impl Into<String>, mut counts: Vec<u64>) -> Result<Self> {
        counts.retain(|&c| c > 0);
        if counts.is_empty() {
            return Err(Error::EmptySequence);
        }
        counts.sort_unstable_by(|a, b| b.cmp(a));
        Ok(RankCurve {
            points: normalized(&counts)
                .into_iter()
                .enumerate()
                .map(|(i, p)| (i as u32 + 1, p))
                .collect(),
            source: RankSource::Individual(account_id.into()),
            basis: ResampleBasis::Visits(counts),
        })
    }

    /// Rank-wise mean of individual curves.
    pub fn population(curves: Vec<Vec<f64>>, average: RankAverage) -> Result<Self> {
        if curves.iter().all(|c| c.is_empty()) {
            return Err(Error::EmptyAccountSet);
        }
        Ok(RankCurve {
            points: average_curves(curves.iter().map(|c| c.as_slice()), average),
            source: RankSource::Population,
            basis: ResampleBasis::Individuals(curves, average),
        })
    }

    pub fn points(&self) -> &[(u32, f64)] {
        &self.points
    }

    pub fn source(&self) -> &RankSource {
        &self.source
    }

    pub fn probability(&self, rank: u32) -> Option<f64> {
        self.points
            .get((rank as usize).checked_sub(1)?)
            .map(|p| p.1)
    }

    /// CSV with columns `rank,probability`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rank,probability")?;
        for (r, p) in &self.points {
            writeln!(w, "{r},{p}")?;
        }
        Ok(())
    }
}

fn normalized(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

fn average_curves<'a>(
    curves: impl Iterator<Item = &'a [f64]>,
    average: RankAverage,
) -> Vec<(u32, f64)> {
    let mut sums: Vec<(f64, u32)> = Vec::new();
    let mut individuals = 0;
    for c in curves {
        individuals += 1;
        if sums.len() < c.len() {
            sums.resize(c.len(), (0.0, 0));
        }
        for (slot, &p) in sums.iter_mut().zip(c) {
            slot.0 += p;
            slot.1 += 1;
        }
    }
    sums.into_iter()
        .enumerate()
        .map(|(i, (s, n))| {
            let d = match average {
                RankAverage::All => individuals,
                RankAverage::Reaching => n,
            };
            (i as u32 + 1, s / d as f64)
        })
        .collect()
}

/// Individual rank curve over merchants.
pub fn rank_curve(seq: &EventSequence) -> Result<RankCurve> {
    let dist = seq
        .visit_distribution(SymbolLevel::Merchant)
        .ok_or(Error::EmptySequence)?;
    RankCurve::from_counts(seq.account_id(), dist.counts().values().copied().collect())
}

/// Population curve over `accounts`; accounts without events are ignored.
pub fn population_rank_curve(
    dataset: &Dataset,
    accounts: &BTreeSet<String>,
    average: RankAverage,
) -> Result<RankCurve> {
    if accounts.is_empty() {
        return Err(Error::EmptyAccountSet);
    }
    let mut curves = Vec::with_capacity(accounts.len());
    for a in accounts {
        let seq = dataset.sequence(a)?;
        if !seq.is_empty() {
            curves.push(rank_curve(seq)?.points.iter().map(|p| p.1).collect());
        }
    }
    RankCurve::population(curves, average)
}

/// Inclusive rank interval used by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRange {
    pub min: u32,
    pub max: u32,
}

impl RankRange {
    pub fn new(min: u32, max: u32) -> Result<Self> {
        if min == 0 || max < min {
            return Err(Error::invalid(
                "rank_range",
                format!("{min}:{max} is not a range of ranks >= 1"),
            ));
        }
        Ok(RankRange { min, max })
    }
}

impl FromStr for RankRange {
    type Err = Error;

    /// `MIN:MAX`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("rank_range", format!("expected MIN:MAX, got {s:?}"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        RankRange::new(
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        )
    }
}

impl std::fmt::Display for RankRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZipfOptions {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for ZipfOptions {
    fn default() -> Self {
        ZipfOptions {
            resamples: 1000,
            seed: 0,
        }
    }
}

pub const ZIPF_METHOD: &str = "log-log least squares; bootstrap standard error";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZipfFit {
    pub s: f64,
    pub s_stderr: f64,
    pub r_squared: f64,
    pub rank_range: RankRange,
    pub n_points: usize,
    pub method: &'static str,
    /// Bootstrap replicates that had enough points to fit.
    pub resamples_used: usize,
}

/// Fits `log p = a - s log r` over `range`. The standard error comes from
/// resampling visits (individual curves) or individuals (population curves).
pub fn fit_zipf(curve: &RankCurve, range: RankRange, options: ZipfOptions) -> Result<ZipfFit> {
    let (s, r_squared, n_points) = fit_points(&curve.points, range)?;
    let mut rng = derived_rng(options.seed, 0, 0x21FF);
    let mut replicates = Vec::with_capacity(options.resamples);
    match &curve.basis {
        ResampleBasis::Points => {}
        ResampleBasis::Visits(counts) => {
            let owners: Vec<usize> = counts
                .iter()
                .enumerate()
                .flat_map(|(i, &c)| std::iter::repeat_n(i, c as usize))
                .collect();
            let mut fresh = vec![0u64; counts.len()];
            for _ in 0..options.resamples {
                fresh.iter_mut().for_each(|c| *c = 0);
                for _ in 0..owners.len() {
                    fresh[owners[rng.gen_range(0..owners.len())]] += 1;
                }
                let mut sorted: Vec<u64> = fresh.iter().copied().filter(|&c| c > 0).collect();
                sorted.sort_unstable_by(|a, b| b.cmp(a));
                let pts: Vec<(u32, f64)> = normalized(&sorted)
                    .into_iter()
                    .enumerate()
                    .map(|(i, p)| (i as u32 + 1, p))
                    .collect();
                if let Ok((s, _, _)) = fit_points(&pts, range) {
                    replicates.push(s);
                }
            }
        }
        ResampleBasis::Individuals(curves, average) => {
            let mut picks: Vec<&[f64]> = Vec::with_capacity(curves.len());
            for _ in 0..options.resamples {
                picks.clear();
                picks.extend(
                    (0..curves.len()).map(|_| curves[rng.gen_range(0..curves.len())].as_slice()),
                );
                let pts = average_curves(picks.iter().copied(), *average);
                if let Ok((s, _, _)) = fit_points(&pts, range) {
                    replicates.push(s);
                }
            }
        }
    }
    Ok(ZipfFit {
        s,
        s_stderr: sample_sd(&replicates).unwrap_or(0.0),
        r_squared,
        rank_range: range,
        n_points,
        method: ZIPF_METHOD,
        resamples_used: replicates.len(),
    })
}

fn fit_points(points: &[(u32, f64)], range: RankRange) -> Result<(f64, f64, usize)> {
    let inside: Vec<(u32, f64)> = points
        .iter()
        .copied()
        .filter(|&(r, _)| r >= range.min && r <= range.max)
        .collect();
    if let Some(&(r, _)) = inside.iter().find(|p| p.1 <= 0.0) {
        return Err(Error::ZeroProbabilityInRange(r));
    }
    if inside.len() < 3 {
        return Err(Error::TooFewPoints {
            min: range.min,
            max: range.max,
            got: inside.len(),
        });
    }
    let xs: Vec<f64> = inside.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = inside.iter().map(|p| p.1.ln()).collect();
    let (_, slope, r2) = linear_fit(&xs, &ys).expect("at least three distinct ranks");
    let s = -slope;
    if s.is_nan() || s <= 0.0 {
        return Err(Error::NonPositiveExponent(s));
    }
    Ok((s, r2, inside.len()))
}

/// Consecutive-pair and visit counts; merging is associative and
/// commutative, so shards can be pooled in any order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairCounts {
    pairs: BTreeMap<(String, String), u64>,
    visits: BTreeMap<String, u64>,
}

impl PairCounts {
    pub fn from_sequence(seq: &EventSequence, level: SymbolLevel) -> Self {
        let mut out = PairCounts::default();
        let labels: Vec<&str> = seq.events().iter().map(|e| e.label(level)).collect();
        for l in &labels {
            *out.visits.entry((*l).to_owned()).or_default() += 1;
        }
        for w in labels.windows(2) {
            *out.pairs
                .entry((w[0].to_owned(), w[1].to_owned()))
                .or_default() += 1;
        }
        out
    }

    pub fn merge(mut self, other: PairCounts) -> Self {
        for (k, v) in other.pairs {
            *self.pairs.entry(k).or_default() += v;
        }
        for (k, v) in other.visits {
            *self.visits.entry(k).or_default() += v;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeStats {
    pub count: u64,
    pub weight: f64,
}

/// Directed graph whose edge weights are empirical transition
/// probabilities; outgoing weights of every source sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionGraph {
    level: SymbolLevel,
    nodes: BTreeMap<String, u64>,
    edges: BTreeMap<(String, String), EdgeStats>,
}

#[derive(Serialize)]
struct JsonNode<'a> {
    id: &'a str,
    count: u64,
}

#[derive(Serialize)]
struct JsonEdge<'a> {
    from: &'a str,
    to: &'a str,
    weight: f64,
}

#[derive(Serialize)]
struct JsonGraph<'a> {
    nodes: Vec<JsonNode<'a>>,
    edges: Vec<JsonEdge<'a>>,
}

impl TransitionGraph {
    pub fn from_counts(counts: PairCounts, level: SymbolLevel) -> Self {
        let mut out_totals: BTreeMap<&str, u64> = BTreeMap::new();
        for ((from, _), c) in &counts.pairs {
            *out_totals.entry(from.as_str()).or_default() += c;
        }
        let edges = counts
            .pairs
            .iter()
            .map(|((from, to), &count)| {
                let weight = count as f64 / out_totals[from.as_str()] as f64;
                ((from.clone(), to.clone()), EdgeStats { count, weight })
            })
            .collect();
        TransitionGraph {
            level,
            nodes: counts.visits,
            edges,
        }
    }

    pub fn level(&self) -> SymbolLevel {
        self.level
    }

    pub fn nodes(&self) -> &BTreeMap<String, u64> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeMap<(String, String), EdgeStats> {
        &self.edges
    }

    pub fn weight(&self, from: &str, to: &str) -> Option<f64> {
        self.edges
            .get(&(from.to_owned(), to.to_owned()))
            .map(|e| e.weight)
    }

    /// Number of distinct successors per node (0 for sinks).
    pub fn out_degrees(&self) -> BTreeMap<&str, usize> {
        let mut deg: BTreeMap<&str, usize> = self.nodes.keys().map(|k| (k.as_str(), 0)).collect();
        for (from, _) in self.edges.keys() {
            *deg.entry(from.as_str()).or_default() += 1;
        }
        deg
    }

    /// Nodes and edges in lexicographic order; `weight="%.6f"` on edges.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph transitions {\n");
        for (id, count) in &self.nodes {
            let _ = writeln!(s, "  \"{}\" [count={count}];", escape(id));
        }
        for ((from, to), e) in &self.edges {
            let _ = writeln!(
                s,
                "  \"{}\" -> \"{}\" [weight=\"{:.6}\"];",
                escape(from),
                escape(to),
                e.weight
            );
        }
        s.push_str("}\n");
        s
    }

    /// `{nodes:[{id,count}], edges:[{from,to,weight}]}`
    pub fn to_json(&self) -> String {
        let g = JsonGraph {
            nodes: self
                .nodes
                .iter()
                .map(|(id, &count)| JsonNode { id, count })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|((from, to), e)| JsonEdge {
                    from,
                    to,
                    weight: e.weight,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&g).expect("graph serializes")
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Transition graph of one sequence (at least two events).
pub fn transition_graph(seq: &EventSequence, level: SymbolLevel) -> Result<TransitionGraph> {
    if seq.len() < 2 {
        return Err(Error::SequenceTooShort {
            len: seq.len(),
            min: 2,
        });
    }
    Ok(TransitionGraph::from_counts(
        PairCounts::from_sequence(seq, level),
        level,
    ))
}

/// Pools pair counts over accounts; no pair spans two accounts.
pub fn population_graph(
    dataset: &Dataset,
    accounts: &BTreeSet<String>,
    level: SymbolLevel,
) -> Result<TransitionGraph> {
    if accounts.is_empty() {
        return Err(Error::EmptyAccountSet);
    }
    let seqs: Vec<&EventSequence> = accounts
        .iter()
        .map(|a| dataset.sequence(a))
        .collect::<Result<_>>()?;
    let pooled = seqs
        .par_iter()
        .map(|s| PairCounts::from_sequence(s, level))
        .reduce(PairCounts::default, PairCounts::merge);
    Ok(TransitionGraph::from_counts(pooled, level))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quintile {
    /// Lowest uncorrelated entropy: the most predictable fifth.
    Top,
    /// Highest uncorrelated entropy.
    Bottom,
}

impl FromStr for Quintile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(Quintile::Top),
            "bottom" => Ok(Quintile::Bottom),
            _ => Err(Error::invalid(
                "quintile",
                format!("expected top or bottom, got {s:?}"),
            )),
        }
    }
}

impl std::fmt::Display for Quintile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Quintile::Top => "top",
            Quintile::Bottom => "bottom",
        })
    }
}

pub const MIN_QUINTILE_ACCOUNTS: usize = 25;

/// Selects the requested entropy quintile while holding visit volume
/// fixed: accounts are cut into five strata by total visits and the
/// quintile is taken inside each stratum. Ties break on account id.
pub fn predictable_quintile(
    dataset: &Dataset,
    accounts: &BTreeSet<String>,
    quintile: Quintile,
) -> Result<BTreeSet<String>> {
    if accounts.len() < MIN_QUINTILE_ACCOUNTS {
        return Err(Error::TooFewAccounts {
            needed: MIN_QUINTILE_ACCOUNTS,
            got: accounts.len(),
        });
    }
    let mut scored: Vec<(usize, f64, &str)> = Vec::with_capacity(accounts.len());
    for a in accounts {
        let seq = dataset.sequence(a)?;
        if seq.is_empty() {
            return Err(Error::AccountWithoutEvents(a.clone()));
        }
        scored.push((seq.len(), uncorrelated_entropy(seq)?, a.as_str()));
    }
    scored.sort_by(|x, y| x.0.cmp(&y.0).then_with(|| x.2.cmp(y.2)));
    let n = scored.len();
    let mut selected = BTreeSet::new();
    for k in 0..5 {
        let mut stratum = scored[k * n / 5..(k + 1) * n / 5].to_vec();
        stratum.sort_by(|x, y| x.1.total_cmp(&y.1).then_with(|| x.2.cmp(y.2)));
        let take = (stratum.len() as f64 / 5.0).round() as usize;
        let chosen = match quintile {
            Quintile::Top => &stratum[..take],
            Quintile::Bottom => &stratum[stratum.len() - take..],
        };
        selected.extend(chosen.iter().map(|x| x.2.to_owned()));
    }
    Ok(selected)
}
