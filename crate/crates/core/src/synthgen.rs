//! Synthetic shopper populations and sequences with known entropy rates.
//!
//! The agent model is our own construction. Each agent has `n_stores`
//! stores ranked by preference. The number of trips per day is Poisson and
//! each trip holds a geometric number of visits. A visit goes to the next
//! store of a fixed personal cycle with probability `routine_strength`,
//! otherwise to a store drawn from a Zipf law over the
//! preference ranks. Merchant ids are a per-agent permutation of store
//! labels, so an id carries no information about its rank. Unless
//! `random_day_order` is off, the visits of each day are emitted in random
//! order: the routine decides which stores are visited, not the order of
//! errands within a day. MCCs follow
//! the rank: `mcc_assignment[r]` for the store at rank `r + 1`, cycling
//! when the list is shorter than `n_stores`.

use std::io::Write;

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{parse_csv, write_csv, Dataset, DAYS_PER_YEAR};
use crate::model::{Amount, DateWindow, Direction, Mcc, SequenceOptions, Transaction};
use crate::stats::derived_rng;

/// Merchant and MCC of the inflow rows realizing an agent's income.
pub const INFLOW_MERCHANT: &str = "payroll";
pub const INFLOW_MCC: &str = "6012";
pub const MIN_WINDOW_DAYS: u32 = 7;
/// Days between income deposits.
pub const PAY_PERIOD_DAYS: u32 = 14;

const TRAIT_STREAM: u64 = 1;
const EVENT_STREAM: u64 = 2;

/// Parameters of one agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentParams {
    pub n_stores: u32,
    pub zipf_s: f64,
    pub trips_per_week: f64,
    /// Success probability of the geometric number of visits per trip
    /// (support 1, 2, …; mean `1 / q`).
    pub trip_burst_q: f64,
    pub routine_strength: f64,
    /// Length of the routine cycle, capped at `n_stores`.
    pub cycle_len: u32,
    /// Yearly inflow.
    pub income: f64,
    pub mcc_assignment: Vec<Mcc>,
    pub random_day_order: bool,
}

impl AgentParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, name: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(name, reason))
            }
        };
        check(self.n_stores >= 1, "n_stores", "must be at least 1")?;
        check(
            self.zipf_s > 0.0 && self.zipf_s.is_finite(),
            "zipf_s",
            "must be positive",
        )?;
        check(
            self.trips_per_week >= 0.0 && self.trips_per_week.is_finite(),
            "trips_per_week",
            "must be non-negative",
        )?;
        check(
            self.trip_burst_q > 0.0 && self.trip_burst_q <= 1.0,
            "trip_burst_q",
            "must lie in (0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.routine_strength),
            "routine_strength",
            "must lie in [0, 1]",
        )?;
        check(self.cycle_len >= 1, "cycle_len", "must be at least 1")?;
        check(
            self.income >= 0.0 && self.income.is_finite(),
            "income",
            "must be non-negative",
        )?;
        check(
            !self.mcc_assignment.is_empty(),
            "mcc_assignment",
            "must list at least one MCC",
        )
    }

    fn mcc_at_rank(&self, rank: usize) -> &Mcc {
        &self.mcc_assignment[rank % self.mcc_assignment.len()]
    }
}

/// A fixed value or an inclusive `[lo, hi]` range drawn uniformly per agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param<T> {
    Fixed(T),
    Range([T; 2]),
}

impl Param<f64> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Param::Fixed(v) => v,
            Param::Range([lo, hi]) if lo >= hi => lo,
            Param::Range([lo, hi]) => rng.gen_range(lo..=hi),
        }
    }
}

impl Param<u32> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> u32 {
        match *self {
            Param::Fixed(v) => v,
            Param::Range([lo, hi]) if lo >= hi => lo,
            Param::Range([lo, hi]) => rng.gen_range(lo..=hi),
        }
    }
}

fn default_cycle_len() -> Param<u32> {
    Param::Fixed(3)
}

fn default_mccs() -> Vec<Mcc> {
    ["5411", "5812", "5541", "5814", "5912", "5311"]
        .iter()
        .map(|c| Mcc::new(c).expect("valid"))
        .collect()
}

/// One cohort of a population spec. Numeric fields accept a number or a
/// `[lo, hi]` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortParams {
    pub name: String,
    pub count: usize,
    pub n_stores: Param<u32>,
    pub zipf_s: Param<f64>,
    pub trips_per_week: Param<f64>,
    pub trip_burst_q: Param<f64>,
    #[serde(default = "zero")]
    pub routine_strength: Param<f64>,
    #[serde(default = "default_cycle_len")]
    pub cycle_len: Param<u32>,
    pub income: Param<f64>,
    #[serde(default = "default_mccs", deserialize_with = "de_mccs")]
    pub mcc_assignment: Vec<Mcc>,
    #[serde(default = "yes")]
    pub random_day_order: bool,
}

fn yes() -> bool {
    true
}

fn zero() -> Param<f64> {
    Param::Fixed(0.0)
}

fn de_mccs<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Mcc>, D::Error> {
    let raw: Vec<String> = Vec::deserialize(d)?;
    raw.iter()
        .map(|s| {
            Mcc::new(s)
                .ok_or_else(|| serde::de::Error::custom(format!("mcc {s:?} is not 4 digits")))
        })
        .collect()
}

fn de_window<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DateWindow, D::Error> {
    let raw = String::deserialize(d)?;
    raw.parse().map_err(serde::de::Error::custom)
}

fn ser_window<S: serde::Serializer>(w: &DateWindow, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(w)
}

impl CohortParams {
    fn sample(&self, rng: &mut ChaCha8Rng) -> AgentParams {
        AgentParams {
            n_stores: self.n_stores.draw(rng),
            zipf_s: self.zipf_s.draw(rng),
            trips_per_week: self.trips_per_week.draw(rng),
            trip_burst_q: self.trip_burst_q.draw(rng),
            routine_strength: self.routine_strength.draw(rng),
            cycle_len: self.cycle_len.draw(rng),
            income: self.income.draw(rng),
            mcc_assignment: self.mcc_assignment.clone(),
            random_day_order: self.random_day_order,
        }
    }

    /// Checks both ends of every range.
    fn validate(&self) -> Result<()> {
        let ends = |p: Param<f64>| match p {
            Param::Fixed(v) => [v, v],
            Param::Range(r) => r,
        };
        let ends_u = |p: Param<u32>| match p {
            Param::Fixed(v) => [v, v],
            Param::Range(r) => r,
        };
        let reversed = |name: &str, lo: f64, hi: f64| {
            (lo > hi).then(|| {
                Error::invalid(
                    format!("cohorts.{}.{name}", self.name),
                    format!("range [{lo}, {hi}] is reversed"),
                )
            })
        };
        for (name, [lo, hi]) in [
            ("zipf_s", ends(self.zipf_s)),
            ("trips_per_week", ends(self.trips_per_week)),
            ("trip_burst_q", ends(self.trip_burst_q)),
            ("routine_strength", ends(self.routine_strength)),
            ("income", ends(self.income)),
            ("n_stores", ends_u(self.n_stores).map(f64::from)),
            ("cycle_len", ends_u(self.cycle_len).map(f64::from)),
        ] {
            if let Some(e) = reversed(name, lo, hi) {
                return Err(e);
            }
        }
        for i in 0..2 {
            AgentParams {
                n_stores: ends_u(self.n_stores)[i],
                zipf_s: ends(self.zipf_s)[i],
                trips_per_week: ends(self.trips_per_week)[i],
                trip_burst_q: ends(self.trip_burst_q)[i],
                routine_strength: ends(self.routine_strength)[i],
                cycle_len: ends_u(self.cycle_len)[i],
                income: ends(self.income)[i],
                mcc_assignment: self.mcc_assignment.clone(),
                random_day_order: self.random_day_order,
            }
            .validate()
            .map_err(|e| match e {
                Error::InvalidParameter { name, reason } => {
                    Error::invalid(format!("cohorts.{}.{name}", self.name), reason)
                }
                other => other,
            })?;
        }
        if self.name.is_empty() || self.name.contains([',', '"', '\n']) {
            return Err(Error::invalid(
                "cohorts.name",
                format!("{:?} is not a usable cohort name", self.name),
            ));
        }
        Ok(())
    }
}

/// Population spec. `trait_seed` fixes the per-agent parameter draws and
/// defaults to `seed`; keeping it while changing `seed` regenerates the
/// same agents with fresh behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub cohorts: Vec<CohortParams>,
    #[serde(deserialize_with = "de_window", serialize_with = "ser_window")]
    pub window: DateWindow,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trait_seed: Option<u64>,
}

impl PopulationSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: PopulationSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cohorts.is_empty() {
            return Err(Error::invalid("cohorts", "at least one cohort required"));
        }
        if self.window.days() < MIN_WINDOW_DAYS {
            return Err(Error::BadWindow {
                start: self.window.start.to_string(),
                end: self.window.end.to_string(),
                reason: "generation needs at least seven days",
            });
        }
        for (i, c) in self.cohorts.iter().enumerate() {
            c.validate()?;
            if self.cohorts[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::invalid(
                    "cohorts.name",
                    format!("duplicate cohort {:?}", c.name),
                ));
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.cohorts.iter().map(|c| c.count).sum()
    }

    /// `(account_id, cohort, params)` for every agent, in output order.
    pub fn agents(&self) -> Vec<(String, String, AgentParams)> {
        let trait_seed = self.trait_seed.unwrap_or(self.seed);
        let mut out = Vec::with_capacity(self.n_agents());
        for c in &self.cohorts {
            for k in 0..c.count {
                let g = out.len() as u64;
                let params = c.sample(&mut derived_rng(trait_seed, g, TRAIT_STREAM));
                out.push((format!("{}-{k:05}", c.name), c.name.clone(), params));
            }
        }
        out
    }
}

/// Transactions of one agent: outflow visits plus income inflows, sorted
/// by timestamp.
pub fn generate_agent(
    account_id: &str,
    params: &AgentParams,
    window: DateWindow,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Transaction>> {
    params.validate()?;
    let n = params.n_stores as usize;

    // Store labels are permuted so that ids do not reveal preference rank.
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(rng);
    let width = n.to_string().len();
    let merchant = |rank: usize| format!("{account_id}-m{:0width$}", labels[rank]);

    let zipf_cdf = {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=n)
            .map(|r| {
                acc += (r as f64).powf(-params.zipf_s);
                acc
            })
            .collect();
        cdf.iter_mut().for_each(|c| *c /= acc);
        cdf
    };
    let mut cycle: Vec<usize> = (0..(params.cycle_len as usize).min(n)).collect();
    cycle.shuffle(rng);

    let trips = Poisson::new(params.trips_per_week / 7.0).ok();
    let burst = Geometric::new(params.trip_burst_q)
        .map_err(|e| Error::invalid("trip_burst_q", e.to_string()))?;

    let mut stamps = Vec::new();
    for day in window.dates() {
        let n_trips = trips.as_ref().map_or(0, |p| p.sample(rng) as u64);
        let day_start = Utc.from_utc_datetime(&day.and_hms_opt(0, 0, 0).expect("midnight"));
        let mut day_stamps = Vec::new();
        for _ in 0..n_trips {
            // Trips start between 08:00 and 20:00; visits follow a few minutes apart.
            let mut t = day_start + Duration::seconds(rng.gen_range(8 * 3600..20 * 3600));
            for _ in 0..=burst.sample(rng) {
                if t.date_naive() != day {
                    break;
                }
                day_stamps.push(t);
                t += Duration::seconds(rng.gen_range(120..1800));
            }
        }
        day_stamps.sort();
        stamps.extend(day_stamps);
    }

    let mut position = 0;
    let mut ranks: Vec<usize> = stamps
        .iter()
        .map(|_| {
            if rng.gen::<f64>() < params.routine_strength {
                position += 1;
                cycle[(position - 1) % cycle.len()]
            } else {
                let u: f64 = rng.gen();
                zipf_cdf.partition_point(|&c| c < u).min(n - 1)
            }
        })
        .collect();
    if params.random_day_order {
        let mut begin = 0;
        for i in 1..=stamps.len() {
            if i == stamps.len() || stamps[i].date_naive() != stamps[begin].date_naive() {
                ranks[begin..i].shuffle(rng);
                begin = i;
            }
        }
    }

    let mut out = Vec::with_capacity(stamps.len() + 32);
    for (ts, rank) in stamps.into_iter().zip(ranks) {
        out.push(Transaction {
            account_id: account_id.to_owned(),
            timestamp: ts,
            merchant_id: merchant(rank),
            mcc: params.mcc_at_rank(rank).clone(),
            amount: Amount::from_cents(rng.gen_range(150..12_000)),
            direction: Direction::Outflow,
        });
    }
    out.extend(income_inflows(account_id, params.income, window, rng));
    out.sort_by_key(|t| t.timestamp);
    Ok(out)
}

/// Deposits every 14 days (first one at a random offset) whose total
/// annualizes to `income` over `window`, up to cent rounding.
fn income_inflows(
    account_id: &str,
    income: f64,
    window: DateWindow,
    rng: &mut ChaCha8Rng,
) -> Vec<Transaction> {
    let days = window.days();
    let total = (income * days as f64 / DAYS_PER_YEAR * 100.0).round() as i64;
    let offset = rng.gen_range(0..PAY_PERIOD_DAYS.min(days));
    let paydays: Vec<NaiveDate> = window
        .dates()
        .skip(offset as usize)
        .step_by(PAY_PERIOD_DAYS as usize)
        .collect();
    if total <= 0 {
        return Vec::new();
    }
    let each = total / paydays.len() as i64;
    let remainder = total - each * paydays.len() as i64;
    paydays
        .iter()
        .enumerate()
        .map(|(i, d)| (d, each + if i == 0 { remainder } else { 0 }))
        .filter(|&(_, cents)| cents > 0)
        .map(|(d, cents)| Transaction {
            account_id: account_id.to_owned(),
            timestamp: Utc.from_utc_datetime(&d.and_hms_opt(6, 0, 0).expect("valid")),
            merchant_id: INFLOW_MERCHANT.to_owned(),
            mcc: Mcc::new(INFLOW_MCC).expect("valid"),
            amount: Amount::from_cents(cents),
            direction: Direction::Inflow,
        })
        .collect()
}

/// All transactions of a population, grouped by agent in spec order.
/// Agent `g` (counting across cohorts) draws from
/// [`derived_rng`]`(seed, g, _)`, so the output does not depend on thread
/// count.
pub fn generate_transactions(spec: &PopulationSpec) -> Result<Vec<Transaction>> {
    spec.validate()?;
    let agents = spec.agents();
    let parts: Vec<Vec<Transaction>> = agents
        .par_iter()
        .enumerate()
        .map(|(g, (id, _, params))| {
            generate_agent(
                id,
                params,
                spec.window,
                &mut derived_rng(spec.seed, g as u64, EVENT_STREAM),
            )
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

/// Writes the population in the ingest CSV schema.
pub fn write_population_csv<W: Write>(spec: &PopulationSpec, writer: W) -> Result<usize> {
    let txns = generate_transactions(spec)?;
    write_csv(writer, &txns)?;
    Ok(txns.len())
}

/// Generates a population and loads it back through the CSV parser.
pub fn generate_population(spec: &PopulationSpec, options: &SequenceOptions) -> Result<Dataset> {
    let mut buf = Vec::new();
    write_population_csv(spec, &mut buf)?;
    let parsed = parse_csv(buf.as_slice(), true)?;
    Dataset::from_transactions(&parsed.transactions, spec.window, options)
}

/// Symbol sequence paired with its exact entropy rate in bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub symbols: Vec<u32>,
    pub entropy_rate: f64,
}

/// iid uniform symbols over `k` letters; rate `log2 k`.
pub fn oracle_iid(k: u32, n: usize, seed: u64) -> Result<Oracle> {
    if k == 0 || n == 0 {
        return Err(Error::invalid("oracle_iid", "k and n must be at least 1"));
    }
    let mut rng = derived_rng(seed, 0, 0x11D);
    Ok(Oracle {
        symbols: (0..n).map(|_| rng.gen_range(0..k)).collect(),
        entropy_rate: (k as f64).log2(),
    })
}

const STATIONARY_TOLERANCE: f64 = 1e-12;
const STATIONARY_MAX_STEPS: usize = 1_000_000;

fn check_stochastic(matrix: &[Vec<f64>]) -> Result<()> {
    let k = matrix.len();
    if k == 0 {
        return Err(Error::NonStochastic("matrix is empty".into()));
    }
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != k {
            return Err(Error::NonStochastic(format!(
                "row {i} has {} entries, expected {k}",
                row.len()
            )));
        }
        if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::NonStochastic(format!("row {i} holds {p}")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NonStochastic(format!("row {i} sums to {sum}")));
        }
    }
    Ok(())
}

fn strongly_connected(matrix: &[Vec<f64>]) -> bool {
    let k = matrix.len();
    let reach_all = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let p = if forward { matrix[i][j] } else { matrix[j][i] };
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach_all(true) && reach_all(false)
}

/// Stationary distribution by power iteration on the lazy chain
/// `(I + P) / 2`, stopping once `|πP - π|₁ < 1e-12`.
pub fn stationary_distribution(matrix: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_stochastic(matrix)?;
    if !strongly_connected(matrix) {
        return Err(Error::ReducibleChain);
    }
    let k = matrix.len();
    let step = |pi: &[f64]| -> Vec<f64> {
        let mut next = vec![0.0; k];
        for (i, row) in matrix.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                next[j] += pi[i] * p;
            }
        }
        next
    };
    let mut pi = vec![1.0 / k as f64; k];
    for _ in 0..STATIONARY_MAX_STEPS {
        let moved = step(&pi);
        let residual: f64 = moved.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        if residual < STATIONARY_TOLERANCE {
            return Ok(pi);
        }
        pi = pi.iter().zip(&moved).map(|(a, b)| 0.5 * (a + b)).collect();
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
    }
    Err(Error::ReducibleChain)
}

/// `Σ_i π_i H(P_i)` in bits.
pub fn markov_entropy_rate(matrix: &[Vec<f64>]) -> Result<f64> {
    let pi = stationary_distribution(matrix)?;
    Ok(pi
        .iter()
        .zip(matrix)
        .map(|(p, row)| p * row_entropy(row))
        .sum())
}

fn row_entropy(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>()
}

/// `n` steps of the chain started from its stationary distribution.
pub fn oracle_markov(matrix: &[Vec<f64>], n: usize, seed: u64) -> Result<Oracle> {
    if n == 0 {
        return Err(Error::invalid("oracle_markov", "n must be at least 1"));
    }
    let pi = stationary_distribution(matrix)?;
    let entropy_rate = pi
        .iter()
        .zip(matrix)
        .map(|(p, row)| p * row_entropy(row))
        .sum();
    let cdf = |w: &[f64]| -> Vec<f64> {
        let mut acc = 0.0;
        w.iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    };
    let draw = |c: &[f64], u: f64| {
        c.partition_point(|&x| x <= u * c[c.len() - 1])
            .min(c.len() - 1) as u32
    };
    let rows: Vec<Vec<f64>> = matrix.iter().map(|r| cdf(r)).collect();
    let mut rng = derived_rng(seed, 0, 0x3A4C);
    let mut state = draw(&cdf(&pi), rng.gen());
    let mut symbols = Vec::with_capacity(n);
    for _ in 0..n {
        symbols.push(state);
        state = draw(&rows[state as usize], rng.gen());
    }
    Ok(Oracle {
        symbols,
        entropy_rate,
    })
}

/// Row-stochastic `k × k` matrix with every entry positive, drawn from
/// `seed`. Irreducible by construction.
pub fn random_transition_matrix(k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = derived_rng(seed, 0, 0x7A1E);
    (0..k)
        .map(|_| {
            let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect()
}
