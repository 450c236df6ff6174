//! Shared domain types: transactions, per-account event sequences, visit
//! distributions and cohort definitions.
//!
//! Every type here is immutable once constructed and validated; analysis
//! modules take them by shared reference.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError, ValidationKind};

/// Column names of the external transaction schema, in order.
pub const FIELDS: [&str; 6] = [
    "account_id",
    "timestamp",
    "merchant_id",
    "mcc",
    "amount",
    "direction",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Inflow,
    Outflow,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Inflow => "inflow",
            Direction::Outflow => "outflow",
        }
    }
}

impl FromStr for Direction {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "inflow" => Ok(Direction::Inflow),
            "outflow" => Ok(Direction::Outflow),
            _ => Err(()),
        }
    }
}

/// Decimal currency amount that keeps its written scale, so `23.10` prints
/// back as `23.10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Amount {
    mantissa: i64,
    scale: u8,
}

impl Amount {
    const MAX_SCALE: u8 = 9;

    pub fn from_cents(cents: i64) -> Self {
        Amount {
            mantissa: cents,
            scale: 2,
        }
    }

    pub fn to_f64(self) -> f64 {
        self.mantissa as f64 / 10f64.powi(self.scale as i32)
    }

    pub fn is_positive(self) -> bool {
        self.mantissa > 0
    }
}

impl FromStr for Amount {
    type Err = ();

    /// Accepts `-?D+(.D+)?` without redundant leading zeros.
    fn from_str(s: &str) -> Result<Self, ()> {
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (body, None),
        };
        let digits_only = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
        if !digits_only(int_part) || (int_part.len() > 1 && int_part.starts_with('0')) {
            return Err(());
        }
        let frac = frac_part.unwrap_or("");
        if frac_part.is_some() && !digits_only(frac) {
            return Err(());
        }
        if frac.len() > Self::MAX_SCALE as usize {
            return Err(());
        }
        let mut mantissa: i64 = 0;
        for b in int_part.bytes().chain(frac.bytes()) {
            mantissa = mantissa
                .checked_mul(10)
                .and_then(|m| m.checked_add((b - b'0') as i64))
                .ok_or(())?;
        }
        if negative {
            // "-0" would not print back identically.
            if mantissa == 0 {
                return Err(());
            }
            mantissa = -mantissa;
        }
        Ok(Amount {
            mantissa,
            scale: frac.len() as u8,
        })
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.mantissa < 0 { "-" } else { "" };
        let abs = self.mantissa.unsigned_abs();
        if self.scale == 0 {
            return write!(f, "{sign}{abs}");
        }
        let pow = 10u64.pow(self.scale as u32);
        write!(
            f,
            "{sign}{}.{:0width$}",
            abs / pow,
            abs % pow,
            width = self.scale as usize
        )
    }
}

/// Merchant category code: exactly four decimal digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mcc(String);

impl Mcc {
    pub fn new(code: &str) -> Option<Self> {
        (code.len() == 4 && code.bytes().all(|b| b.is_ascii_digit())).then(|| Mcc(code.to_owned()))
    }

    /// Zero-pads a numeric code, e.g. `742` becomes `0742`.
    pub fn from_number(code: u64) -> Option<Self> {
        (code <= 9999).then(|| Mcc(format!("{code:04}")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Mcc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Parses the canonical `YYYY-MM-DDTHH:MM:SS[.fff]Z` form. Anything that
/// would not print back byte-identically is rejected.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if !s.ends_with('Z') {
        return None;
    }
    let parsed = DateTime::parse_from_rfc3339(s).ok()?.with_timezone(&Utc);
    (format_timestamp(&parsed) == s).then_some(parsed)
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// One validated transaction row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub account_id: String,
    pub timestamp: DateTime<Utc>,
    pub merchant_id: String,
    pub mcc: Mcc,
    pub amount: Amount,
    pub direction: Direction,
}

impl Transaction {
    /// Field values in schema order, as written to CSV.
    pub fn to_record(&self) -> [String; 6] {
        [
            self.account_id.clone(),
            format_timestamp(&self.timestamp),
            self.merchant_id.clone(),
            self.mcc.to_string(),
            self.amount.to_string(),
            self.direction.as_str().to_owned(),
        ]
    }
}

/// Unvalidated string fields of a transaction row.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawTransaction {
    pub account_id: String,
    pub timestamp: String,
    pub merchant_id: String,
    pub mcc: String,
    pub amount: String,
    pub direction: String,
}

impl RawTransaction {
    /// Builds from a field map keyed by the schema column names.
    pub fn from_map(map: &HashMap<String, String>, row: usize) -> Result<Self, ValidationError> {
        let get = |field: &'static str| {
            map.get(field).cloned().ok_or(ValidationError {
                row,
                field,
                kind: ValidationKind::MissingField,
                value: String::new(),
            })
        };
        Ok(RawTransaction {
            account_id: get("account_id")?,
            timestamp: get("timestamp")?,
            merchant_id: get("merchant_id")?,
            mcc: get("mcc")?,
            amount: get("amount")?,
            direction: get("direction")?,
        })
    }
}

/// Validates one raw row. `row` is carried into any error for context.
pub fn validate_transaction(
    raw: &RawTransaction,
    row: usize,
) -> Result<Transaction, ValidationError> {
    let fail = |field: &'static str, kind: ValidationKind, value: &str| ValidationError {
        row,
        field,
        kind,
        value: value.to_owned(),
    };
    if raw.account_id.is_empty() {
        return Err(fail("account_id", ValidationKind::EmptyToken, ""));
    }
    if raw.merchant_id.is_empty() {
        return Err(fail("merchant_id", ValidationKind::EmptyToken, ""));
    }
    let timestamp = parse_timestamp(&raw.timestamp).ok_or_else(|| {
        fail(
            "timestamp",
            ValidationKind::TimestampMalformed,
            &raw.timestamp,
        )
    })?;
    let mcc =
        Mcc::new(&raw.mcc).ok_or_else(|| fail("mcc", ValidationKind::MccMalformed, &raw.mcc))?;
    let amount: Amount = raw
        .amount
        .parse()
        .map_err(|_| fail("amount", ValidationKind::AmountMalformed, &raw.amount))?;
    if !amount.is_positive() {
        return Err(fail(
            "amount",
            ValidationKind::AmountNotPositive,
            &raw.amount,
        ));
    }
    let direction = raw.direction.parse().map_err(|_| {
        fail(
            "direction",
            ValidationKind::DirectionUnknown,
            &raw.direction,
        )
    })?;
    Ok(Transaction {
        account_id: raw.account_id.clone(),
        timestamp,
        merchant_id: raw.merchant_id.clone(),
        mcc,
        amount,
        direction,
    })
}

/// Fixed UTC offset used to assign events to calendar days and weeks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timezone(FixedOffset);

impl Timezone {
    pub const UTC: Timezone = Timezone(match FixedOffset::east_opt(0) {
        Some(o) => o,
        None => unreachable!(),
    });

    pub fn from_offset_seconds(secs: i32) -> Option<Self> {
        FixedOffset::east_opt(secs).map(Timezone)
    }

    pub fn local_date(&self, ts: &DateTime<Utc>) -> NaiveDate {
        ts.with_timezone(&self.0).date_naive()
    }

    /// First instant of a local calendar date, in UTC.
    pub fn day_start(&self, date: NaiveDate) -> DateTime<Utc> {
        let local: NaiveDateTime = date.and_hms_opt(0, 0, 0).expect("midnight exists");
        DateTime::from_naive_utc_and_offset(
            local - Duration::seconds(self.0.local_minus_utc() as i64),
            Utc,
        )
    }
}

impl Default for Timezone {
    fn default() -> Self {
        Timezone::UTC
    }
}

impl FromStr for Timezone {
    type Err = Error;

    /// `UTC`, `Z`, or `±HH:MM`.
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("utc") || s == "Z" {
            return Ok(Timezone::UTC);
        }
        let bad = || Error::invalid("timezone", format!("expected UTC or ±HH:MM, got {s:?}"));
        let (sign, rest) = match s.as_bytes().first() {
            Some(b'+') => (1, &s[1..]),
            Some(b'-') => (-1, &s[1..]),
            _ => return Err(bad()),
        };
        let (h, m) = rest.split_once(':').ok_or_else(bad)?;
        if h.len() != 2 || m.len() != 2 {
            return Err(bad());
        }
        let h: i32 = h.parse().map_err(|_| bad())?;
        let m: i32 = m.parse().map_err(|_| bad())?;
        if m >= 60 {
            return Err(bad());
        }
        Timezone::from_offset_seconds(sign * (h * 3600 + m * 60)).ok_or_else(bad)
    }
}

impl fmt::Display for Timezone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let secs = self.0.local_minus_utc();
        if secs == 0 {
            return f.write_str("UTC");
        }
        let sign = if secs < 0 { '-' } else { '+' };
        let abs = secs.abs();
        write!(f, "{sign}{:02}:{:02}", abs / 3600, (abs % 3600) / 60)
    }
}

/// Inclusive range of calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::BadWindow {
                start: start.to_string(),
                end: end.to_string(),
                reason: "end precedes start",
            });
        }
        Ok(DateWindow { start, end })
    }

    /// Number of calendar days, counting both ends.
    pub fn days(&self) -> u32 {
        ((self.end - self.start).num_days() + 1) as u32
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> {
        self.start.iter_days().take(self.days() as usize)
    }
}

impl FromStr for DateWindow {
    type Err = Error;

    /// `YYYY-MM-DD:YYYY-MM-DD`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("window", format!("expected START:END dates, got {s:?}"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let start = NaiveDate::parse_from_str(a, "%Y-%m-%d").map_err(|_| bad())?;
        let end = NaiveDate::parse_from_str(b, "%Y-%m-%d").map_err(|_| bad())?;
        DateWindow::new(start, end)
    }
}

impl fmt::Display for DateWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

/// A single merchant visit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub timestamp: DateTime<Utc>,
    pub merchant_id: String,
    pub mcc: Mcc,
}

/// Which label of an event is treated as its symbol.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolLevel {
    #[default]
    Merchant,
    Mcc,
}

impl FromStr for SymbolLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "merchant" => Ok(SymbolLevel::Merchant),
            "mcc" => Ok(SymbolLevel::Mcc),
            _ => Err(Error::invalid(
                "level",
                format!("expected merchant or mcc, got {s:?}"),
            )),
        }
    }
}

impl std::fmt::Display for SymbolLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SymbolLevel::Merchant => "merchant",
            SymbolLevel::Mcc => "mcc",
        })
    }
}

impl Event {
    pub fn label(&self, level: SymbolLevel) -> &str {
        match level {
            SymbolLevel::Merchant => &self.merchant_id,
            SymbolLevel::Mcc => self.mcc.as_str(),
        }
    }
}

/// Options controlling how transactions become visits.
#[derive(Debug, Clone, Default)]
pub struct SequenceOptions {
    pub timezone: Timezone,
    /// Outflows with these MCCs are not visits (e.g. cash withdrawals).
    pub exclude_mccs: BTreeSet<Mcc>,
    /// Collapse repeat purchases at one merchant on one local day.
    pub dedup_same_day: bool,
}

/// Time-ordered merchant visits of one account within a window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSequence {
    account_id: String,
    events: Vec<Event>,
    window: DateWindow,
    timezone: Timezone,
}

impl EventSequence {
    /// Stable-sorts by timestamp and drops events whose local date falls
    /// outside `window`.
    pub fn new(
        account_id: impl Into<String>,
        mut events: Vec<Event>,
        window: DateWindow,
        timezone: Timezone,
    ) -> Self {
        events.retain(|e| window.contains(timezone.local_date(&e.timestamp)));
        events.sort_by_key(|e| e.timestamp);
        EventSequence {
            account_id: account_id.into(),
            events,
            window,
            timezone,
        }
    }

    /// Caller guarantees events are sorted and inside the window.
    pub(crate) fn from_sorted(template: &EventSequence, events: Vec<Event>) -> Self {
        debug_assert!(events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        EventSequence {
            account_id: template.account_id.clone(),
            events,
            window: template.window,
            timezone: template.timezone,
        }
    }

    pub fn account_id(&self) -> &str {
        &self.account_id
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn window(&self) -> DateWindow {
        self.window
    }

    pub fn timezone(&self) -> Timezone {
        self.timezone
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Distinct merchants visited.
    pub fn n_merchants(&self) -> usize {
        self.events
            .iter()
            .map(|e| e.merchant_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn local_date(&self, event: &Event) -> NaiveDate {
        self.timezone.local_date(&event.timestamp)
    }

    /// Symbols as dense ids, numbered in order of first appearance.
    pub fn symbols(&self, level: SymbolLevel) -> Vec<u32> {
        let mut ids: HashMap<&str, u32> = HashMap::new();
        self.events
            .iter()
            .map(|e| {
                let next = ids.len() as u32;
                *ids.entry(e.label(level)).or_insert(next)
            })
            .collect()
    }

    pub fn visit_distribution(&self, level: SymbolLevel) -> Option<VisitDistribution> {
        VisitDistribution::from_labels(self.events.iter().map(|e| e.label(level)))
    }
}

/// Keeps outflows of one account as visits, applying `options`.
pub fn build_sequence(
    transactions: &[Transaction],
    window: DateWindow,
    options: &SequenceOptions,
) -> Result<EventSequence> {
    let account_id = transactions
        .first()
        .map(|t| t.account_id.clone())
        .unwrap_or_default();
    if let Some(other) = transactions.iter().find(|t| t.account_id != account_id) {
        return Err(Error::MixedAccounts {
            first: account_id,
            other: other.account_id.clone(),
        });
    }
    let events = transactions
        .iter()
        .filter(|t| t.direction == Direction::Outflow && !options.exclude_mccs.contains(&t.mcc))
        .map(|t| Event {
            timestamp: t.timestamp,
            merchant_id: t.merchant_id.clone(),
            mcc: t.mcc.clone(),
        })
        .collect();
    let mut seq = EventSequence::new(account_id, events, window, options.timezone);
    if options.dedup_same_day {
        let tz = seq.timezone;
        let mut seen = BTreeSet::new();
        seq.events
            .retain(|e| seen.insert((tz.local_date(&e.timestamp), e.merchant_id.clone())));
    }
    Ok(seq)
}

/// Visit counts per label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitDistribution {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl VisitDistribution {
    /// `None` when there are no labels.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Option<Self> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for l in labels {
            *counts.entry(l.to_owned()).or_default() += 1;
        }
        let total = counts.values().sum();
        (total > 0).then_some(VisitDistribution { counts, total })
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn probability(&self, label: &str) -> f64 {
        self.counts
            .get(label)
            .map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    pub fn probabilities(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.counts
            .iter()
            .map(move |(k, &c)| (k.as_str(), c as f64 / self.total as f64))
    }
}

/// Three entropy measures of one account, in bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub account_id: String,
    pub s_rand: f64,
    pub s_unc: f64,
    pub s_true: f64,
    pub n_events: usize,
    pub n_merchants: usize,
}

/// An income band. Bounds are optional and individually open or closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub name: String,
    pub annual_inflow_min: Option<f64>,
    pub min_inclusive: bool,
    pub annual_inflow_max: Option<f64>,
    pub max_inclusive: bool,
}

/// Upper bound (exclusive) of the low-income band, per year.
pub const POOR_MAX_INFLOW: f64 = 16_000.0;
/// Lower bound (exclusive) of the high-income band, per year.
pub const WEALTHY_MIN_INFLOW: f64 = 80_000.0;

impl CohortSpec {
    pub fn new(
        name: impl Into<String>,
        min: Option<(f64, bool)>,
        max: Option<(f64, bool)>,
    ) -> Result<Self> {
        let name = name.into();
        if let (Some((lo, _)), Some((hi, _))) = (min, max) {
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(Error::invalid(
                    format!("cohort {name}"),
                    format!("min {lo} must be below max {hi}"),
                ));
            }
        }
        Ok(CohortSpec {
            name,
            annual_inflow_min: min.map(|m| m.0),
            min_inclusive: min.is_some_and(|m| m.1),
            annual_inflow_max: max.map(|m| m.0),
            max_inclusive: max.is_some_and(|m| m.1),
        })
    }

    /// `[0, max)`
    pub fn poor(max: f64) -> Self {
        CohortSpec::new("poor", Some((0.0, true)), Some((max, false))).expect("valid band")
    }

    /// `(min, ∞)`
    pub fn wealthy(min: f64) -> Self {
        CohortSpec::new("wealthy", Some((min, false)), None).expect("valid band")
    }

    pub fn contains(&self, income: f64) -> bool {
        let above = match self.annual_inflow_min {
            None => true,
            Some(lo) if self.min_inclusive => income >= lo,
            Some(lo) => income > lo,
        };
        let below = match self.annual_inflow_max {
            None => true,
            Some(hi) if self.max_inclusive => income <= hi,
            Some(hi) => income < hi,
        };
        above && below
    }

    /// Whether some income value lies in both bands.
    pub fn overlaps(&self, other: &CohortSpec) -> bool {
        // Lower edge of the intersection is the larger of the two mins.
        let lower = max_lower(
            (self.annual_inflow_min, self.min_inclusive),
            (other.annual_inflow_min, other.min_inclusive),
        );
        let upper = min_upper(
            (self.annual_inflow_max, self.max_inclusive),
            (other.annual_inflow_max, other.max_inclusive),
        );
        match (lower, upper) {
            ((None, _), _) | (_, (None, _)) => true,
            ((Some(lo), lo_inc), (Some(hi), hi_inc)) => lo < hi || (lo == hi && lo_inc && hi_inc),
        }
    }
}

fn max_lower(a: (Option<f64>, bool), b: (Option<f64>, bool)) -> (Option<f64>, bool) {
    match (a.0, b.0) {
        (None, _) => b,
        (_, None) => a,
        (Some(x), Some(y)) if x > y => a,
        (Some(x), Some(y)) if y > x => b,
        (Some(x), _) => (Some(x), a.1 && b.1),
    }
}

fn min_upper(a: (Option<f64>, bool), b: (Option<f64>, bool)) -> (Option<f64>, bool) {
    match (a.0, b.0) {
        (None, _) => b,
        (_, None) => a,
        (Some(x), Some(y)) if x < y => a,
        (Some(x), Some(y)) if y < x => b,
        (Some(x), _) => (Some(x), a.1 && b.1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(mcc: &str, ts: &str) -> RawTransaction {
        RawTransaction {
            account_id: "a1".into(),
            timestamp: ts.into(),
            merchant_id: "m7".into(),
            mcc: mcc.into(),
            amount: "23.10".into(),
            direction: "outflow".into(),
        }
    }

    fn ts(s: &str) -> DateTime<Utc> {
        parse_timestamp(s).unwrap()
    }

    fn txn(account: &str, t: &str, merchant: &str, dir: Direction) -> Transaction {
        Transaction {
            account_id: account.into(),
            timestamp: ts(t),
            merchant_id: merchant.into(),
            mcc: Mcc::new("5411").unwrap(),
            amount: "10.00".parse().unwrap(),
            direction: dir,
        }
    }

    fn march() -> DateWindow {
        "2010-03-01:2010-03-31".parse().unwrap()
    }

    #[test]
    fn well_formed_row_validates() {
        let t = validate_transaction(&raw("5411", "2010-03-01T09:00:00Z"), 2).unwrap();
        assert_eq!(t.mcc.as_str(), "5411");
        assert_eq!(t.amount.to_string(), "23.10");
        assert_eq!(t.direction, Direction::Outflow);
        assert_eq!(t.to_record()[1], "2010-03-01T09:00:00Z");
    }

    #[test]
    fn short_mcc_is_rejected() {
        let e = validate_transaction(&raw("541", "2010-03-01T09:00:00Z"), 3).unwrap_err();
        assert_eq!(e.kind, ValidationKind::MccMalformed);
        assert_eq!(e.field, "mcc");
        assert_eq!(e.row, 3);
    }

    #[test]
    fn impossible_date_is_rejected() {
        let e = validate_transaction(&raw("5411", "2010-13-40"), 1).unwrap_err();
        assert_eq!(e.kind, ValidationKind::TimestampMalformed);
        let e = validate_transaction(&raw("5411", "2010-02-30T00:00:00Z"), 1).unwrap_err();
        assert_eq!(e.kind, ValidationKind::TimestampMalformed);
    }

    #[test]
    fn non_canonical_timestamps_are_rejected() {
        assert!(parse_timestamp("2010-03-01T09:00:00+00:00").is_none());
        assert!(parse_timestamp("2010-03-01 09:00:00Z").is_none());
        assert!(parse_timestamp("2010-03-01T09:00:00.5Z").is_none());
        assert!(parse_timestamp("2010-03-01T09:00:00.500Z").is_some());
    }

    #[test]
    fn amount_parsing() {
        for ok in ["23.10", "0.5", "7", "-3.25", "100000.000"] {
            assert_eq!(ok.parse::<Amount>().unwrap().to_string(), ok);
        }
        for bad in ["", "1e3", "01.0", "1.", ".5", "+1", "-0", "1,5", "abc"] {
            assert!(bad.parse::<Amount>().is_err(), "{bad}");
        }
        let mut r = raw("5411", "2010-03-01T09:00:00Z");
        r.amount = "-1.00".into();
        assert_eq!(
            validate_transaction(&r, 1).unwrap_err().kind,
            ValidationKind::AmountNotPositive
        );
        r.amount = "x".into();
        assert_eq!(
            validate_transaction(&r, 1).unwrap_err().kind,
            ValidationKind::AmountMalformed
        );
    }

    #[test]
    fn unknown_direction() {
        let mut r = raw("5411", "2010-03-01T09:00:00Z");
        r.direction = "sideways".into();
        assert_eq!(
            validate_transaction(&r, 1).unwrap_err().kind,
            ValidationKind::DirectionUnknown
        );
    }

    #[test]
    fn numeric_mcc_is_zero_padded() {
        assert_eq!(Mcc::from_number(742).unwrap().as_str(), "0742");
        assert!(Mcc::from_number(12345).is_none());
    }

    #[test]
    fn missing_field_in_map() {
        let mut m = HashMap::new();
        m.insert("account_id".to_string(), "a".to_string());
        let e = RawTransaction::from_map(&m, 9).unwrap_err();
        assert_eq!(e.kind, ValidationKind::MissingField);
        assert_eq!(e.row, 9);
    }

    #[test]
    fn inflows_are_not_visits() {
        let txns = vec![
            txn("a", "2010-03-01T09:00:00Z", "m1", Direction::Outflow),
            txn("a", "2010-03-02T09:00:00Z", "pay", Direction::Inflow),
            txn("a", "2010-03-03T09:00:00Z", "m2", Direction::Outflow),
            txn("a", "2010-03-04T09:00:00Z", "m1", Direction::Outflow),
        ];
        let seq = build_sequence(&txns, march(), &SequenceOptions::default()).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.n_merchants(), 2);
    }

    #[test]
    fn empty_input_gives_empty_sequence() {
        let seq = build_sequence(&[], march(), &SequenceOptions::default()).unwrap();
        assert!(seq.is_empty());
        assert_eq!(seq.n_merchants(), 0);
        assert!(seq.visit_distribution(SymbolLevel::Merchant).is_none());
    }

    #[test]
    fn timestamp_ties_keep_input_order() {
        let txns = vec![
            txn("a", "2010-03-05T09:00:00Z", "late", Direction::Outflow),
            txn("a", "2010-03-01T09:00:00Z", "z", Direction::Outflow),
            txn("a", "2010-03-01T09:00:00Z", "b", Direction::Outflow),
            txn("a", "2010-03-01T09:00:00Z", "y", Direction::Outflow),
        ];
        let seq = build_sequence(&txns, march(), &SequenceOptions::default()).unwrap();
        let order: Vec<_> = seq
            .events()
            .iter()
            .map(|e| e.merchant_id.as_str())
            .collect();
        assert_eq!(order, ["z", "b", "y", "late"]);
    }

    #[test]
    fn mixed_accounts_fail() {
        let txns = vec![
            txn("a", "2010-03-01T09:00:00Z", "m1", Direction::Outflow),
            txn("b", "2010-03-01T09:00:00Z", "m1", Direction::Outflow),
        ];
        assert!(matches!(
            build_sequence(&txns, march(), &SequenceOptions::default()),
            Err(Error::MixedAccounts { .. })
        ));
    }

    #[test]
    fn out_of_window_and_excluded_events_dropped() {
        let mut atm = txn("a", "2010-03-02T09:00:00Z", "atm", Direction::Outflow);
        atm.mcc = Mcc::new("6011").unwrap();
        let txns = vec![
            txn("a", "2010-02-28T23:59:59Z", "m0", Direction::Outflow),
            txn("a", "2010-03-01T00:00:00Z", "m1", Direction::Outflow),
            atm,
            txn("a", "2010-04-01T00:00:00Z", "m2", Direction::Outflow),
        ];
        let opts = SequenceOptions {
            exclude_mccs: [Mcc::new("6011").unwrap()].into(),
            ..Default::default()
        };
        let seq = build_sequence(&txns, march(), &opts).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.events()[0].merchant_id, "m1");
        let kept = build_sequence(&txns, march(), &SequenceOptions::default()).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn timezone_moves_day_boundary() {
        let txns = vec![txn("a", "2010-03-31T23:30:00Z", "m1", Direction::Outflow)];
        let utc = build_sequence(&txns, march(), &SequenceOptions::default()).unwrap();
        assert_eq!(utc.len(), 1);
        let east = SequenceOptions {
            timezone: "+01:00".parse().unwrap(),
            ..Default::default()
        };
        assert!(build_sequence(&txns, march(), &east).unwrap().is_empty());
    }

    #[test]
    fn same_day_dedup() {
        let txns = vec![
            txn("a", "2010-03-01T09:00:00Z", "m1", Direction::Outflow),
            txn("a", "2010-03-01T10:00:00Z", "m1", Direction::Outflow),
            txn("a", "2010-03-01T11:00:00Z", "m2", Direction::Outflow),
            txn("a", "2010-03-02T09:00:00Z", "m1", Direction::Outflow),
        ];
        let opts = SequenceOptions {
            dedup_same_day: true,
            ..Default::default()
        };
        assert_eq!(build_sequence(&txns, march(), &opts).unwrap().len(), 3);
        assert_eq!(
            build_sequence(&txns, march(), &SequenceOptions::default())
                .unwrap()
                .len(),
            4
        );
    }

    #[test]
    fn timezone_parse_and_display() {
        for s in ["UTC", "+05:30", "-08:00"] {
            assert_eq!(s.parse::<Timezone>().unwrap().to_string(), s);
        }
        assert!("05:00".parse::<Timezone>().is_err());
        assert!("+5:00".parse::<Timezone>().is_err());
        let tz: Timezone = "-05:00".parse().unwrap();
        let d = NaiveDate::from_ymd_opt(2010, 3, 1).unwrap();
        assert_eq!(format_timestamp(&tz.day_start(d)), "2010-03-01T05:00:00Z");
    }

    #[test]
    fn window_days_inclusive() {
        let w = march();
        assert_eq!(w.days(), 31);
        assert_eq!(w.dates().count(), 31);
        assert!("2010-03-02:2010-03-01".parse::<DateWindow>().is_err());
    }

    #[test]
    fn cohort_bands() {
        let poor = CohortSpec::poor(POOR_MAX_INFLOW);
        let rich = CohortSpec::wealthy(WEALTHY_MIN_INFLOW);
        assert!(poor.contains(0.0) && poor.contains(15_999.99) && !poor.contains(16_000.0));
        assert!(!rich.contains(80_000.0) && rich.contains(80_000.01));
        assert!(!poor.overlaps(&rich));
        let a = CohortSpec::new("a", Some((0.0, true)), Some((10.0, true))).unwrap();
        let b = CohortSpec::new("b", Some((10.0, true)), None).unwrap();
        let c = CohortSpec::new("c", Some((10.0, false)), None).unwrap();
        assert!(a.overlaps(&b));
        assert!(!a.overlaps(&c));
        assert!(CohortSpec::new("x", Some((5.0, true)), Some((5.0, true))).is_err());
    }
}
