//! Transaction file parsing, income estimation and cohort segmentation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result, ValidationError, ValidationKind};
use crate::model::{
    build_sequence, CohortSpec, DateWindow, Direction, EventSequence, Mcc, RawTransaction,
    SequenceOptions, Transaction, FIELDS,
};

/// Name of the cohort collecting accounts outside every named band.
pub const RESIDUAL_COHORT: &str = "middle";

/// Days per year used to annualize inflows.
pub const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// Picks a format from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            _ => Err(Error::invalid(
                "format",
                format!("expected csv or jsonl, got {s:?}"),
            )),
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        })
    }
}

/// One skipped row, as written to the error report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    pub row: usize,
    pub field: String,
    pub message: String,
}

impl From<&ValidationError> for RowError {
    fn from(e: &ValidationError) -> Self {
        RowError {
            row: e.row,
            field: e.field.to_owned(),
            message: format!("{} ({:?})", e.kind, e.value),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub transactions: Vec<Transaction>,
    /// Rows skipped in lenient mode. Always empty in strict mode.
    pub errors: Vec<RowError>,
}

pub fn parse_transactions(path: &Path, format: Format, strict: bool) -> Result<ParseOutcome> {
    let file = File::open(path)?;
    match format {
        Format::Csv => parse_csv(file, strict),
        Format::Jsonl => parse_jsonl(BufReader::new(file), strict),
    }
}

/// Rows are numbered by file line; the header is line 1.
pub fn parse_csv<R: Read>(reader: R, strict: bool) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = [0usize; 6];
    for (slot, field) in index.iter_mut().zip(FIELDS) {
        *slot = headers
            .iter()
            .position(|h| h == field)
            .ok_or_else(|| Error::SchemaMismatch(format!("missing column `{field}`")))?;
    }
    let mut out = ParseOutcome::default();
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let get = |i: usize| record.get(index[i]).unwrap_or_default().to_owned();
        let raw = RawTransaction {
            account_id: get(0),
            timestamp: get(1),
            merchant_id: get(2),
            mcc: get(3),
            amount: get(4),
            direction: get(5),
        };
        accept(
            &mut out,
            crate::model::validate_transaction(&raw, row),
            strict,
        )?;
    }
    Ok(out)
}

/// One JSON object per line. `mcc` and `amount` may also be JSON numbers;
/// a numeric `mcc` is zero-padded to four digits.
pub fn parse_jsonl<R: BufRead>(reader: R, strict: bool) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)?;
        let Value::Object(obj) = value else {
            return Err(Error::SchemaMismatch(format!(
                "line {row} is not a JSON object"
            )));
        };
        let result =
            jsonl_fields(&obj, row).and_then(|raw| crate::model::validate_transaction(&raw, row));
        accept(&mut out, result, strict)?;
    }
    Ok(out)
}

fn jsonl_fields(
    obj: &serde_json::Map<String, Value>,
    row: usize,
) -> Result<RawTransaction, ValidationError> {
    let mut map = HashMap::new();
    for field in FIELDS {
        let text = match obj.get(field) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) if field == "mcc" => match n.as_u64().and_then(Mcc::from_number)
            {
                Some(mcc) => mcc.to_string(),
                None => n.to_string(),
            },
            Some(Value::Number(n)) if field == "amount" => n.to_string(),
            Some(other) => {
                return Err(ValidationError {
                    row,
                    field,
                    kind: ValidationKind::MissingField,
                    value: other.to_string(),
                })
            }
            None => continue,
        };
        map.insert(field.to_owned(), text);
    }
    RawTransaction::from_map(&map, row)
}

fn accept(
    out: &mut ParseOutcome,
    result: Result<Transaction, ValidationError>,
    strict: bool,
) -> Result<()> {
    match result {
        Ok(t) => out.transactions.push(t),
        Err(e) if strict => return Err(e.into()),
        Err(e) => out.errors.push(RowError::from(&e)),
    }
    Ok(())
}

/// Writes the CSV schema with a header row and `\n` line endings.
pub fn write_csv<W: Write>(writer: W, transactions: &[Transaction]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(FIELDS)?;
    for t in transactions {
        w.write_record(t.to_record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(mut writer: W, transactions: &[Transaction]) -> Result<()> {
    for t in transactions {
        let obj: serde_json::Map<String, Value> = FIELDS
            .iter()
            .zip(t.to_record())
            .map(|(k, v)| (k.to_string(), Value::String(v)))
            .collect();
        serde_json::to_writer(&mut writer, &obj)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Error report: one `{row, field, message}` object per line.
pub fn write_error_report<W: Write>(mut writer: W, errors: &[RowError]) -> Result<()> {
    for e in errors {
        serde_json::to_writer(&mut writer, e)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Scales an inflow total observed over `window_days` to a yearly figure.
pub fn annualize(total_inflow: f64, window_days: f64) -> Result<f64> {
    if window_days.is_nan() || window_days < 1.0 {
        return Err(Error::invalid(
            "window_days",
            format!("{window_days} is shorter than one day"),
        ));
    }
    Ok(total_inflow * DAYS_PER_YEAR / window_days)
}

/// Annualized inflow within `window`. This only sees money entering the
/// observed account, so it is a lower bound on earnings.
pub fn estimate_income(transactions: &[Transaction], window: &DateWindow) -> Result<f64> {
    let total: f64 = transactions
        .iter()
        .filter(|t| t.direction == Direction::Inflow && window.contains(t.timestamp.date_naive()))
        .map(|t| t.amount.to_f64())
        .sum();
    annualize(total, window.days() as f64)
}

/// Per-account sequences and annualized incomes over one window.
#[derive(Debug, Clone)]
pub struct Dataset {
    sequences: BTreeMap<String, EventSequence>,
    incomes: BTreeMap<String, f64>,
    window: DateWindow,
}

impl Dataset {
    /// Groups transactions by account. Accounts with only inflows get an
    /// empty sequence.
    pub fn from_transactions(
        transactions: &[Transaction],
        window: DateWindow,
        options: &SequenceOptions,
    ) -> Result<Self> {
        let mut by_account: BTreeMap<&str, Vec<Transaction>> = BTreeMap::new();
        for t in transactions {
            by_account.entry(&t.account_id).or_default().push(t.clone());
        }
        let mut sequences = BTreeMap::new();
        let mut incomes = BTreeMap::new();
        for (account, txns) in by_account {
            let income = estimate_income(&txns, &window)?;
            sequences.insert(account.to_owned(), build_sequence(&txns, window, options)?);
            incomes.insert(account.to_owned(), income);
        }
        Ok(Dataset {
            sequences,
            incomes,
            window,
        })
    }

    /// Smallest window covering every transaction's UTC date.
    pub fn covering_window(transactions: &[Transaction]) -> Option<DateWindow> {
        let dates = transactions.iter().map(|t| t.timestamp.date_naive());
        let start = dates.clone().min()?;
        let end = dates.max()?;
        Some(DateWindow { start, end })
    }

    pub fn window(&self) -> DateWindow {
        self.window
    }

    pub fn sequences(&self) -> &BTreeMap<String, EventSequence> {
        &self.sequences
    }

    pub fn incomes(&self) -> &BTreeMap<String, f64> {
        &self.incomes
    }

    pub fn sequence(&self, account: &str) -> Result<&EventSequence> {
        self.sequences
            .get(account)
            .ok_or_else(|| Error::UnknownAccount(account.to_owned()))
    }

    pub fn accounts(&self) -> BTreeSet<String> {
        self.sequences.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Assigns each account to the band containing its income, or to
/// [`RESIDUAL_COHORT`]. The residual entry is always present.
pub fn segment_cohorts(
    dataset: &Dataset,
    specs: &[CohortSpec],
) -> Result<BTreeMap<String, BTreeSet<String>>> {
    for (i, a) in specs.iter().enumerate() {
        if a.name == RESIDUAL_COHORT {
            return Err(Error::invalid(
                "cohort",
                format!("`{RESIDUAL_COHORT}` is reserved"),
            ));
        }
        for b in &specs[i + 1..] {
            if a.name == b.name || a.overlaps(b) {
                return Err(Error::OverlappingCohorts(a.name.clone(), b.name.clone()));
            }
        }
    }
    let mut out: BTreeMap<String, BTreeSet<String>> = specs
        .iter()
        .map(|s| (s.name.clone(), BTreeSet::new()))
        .collect();
    out.insert(RESIDUAL_COHORT.to_owned(), BTreeSet::new());
    for (account, &income) in dataset.incomes() {
        let name = specs
            .iter()
            .find(|s| s.contains(income))
            .map_or(RESIDUAL_COHORT, |s| s.name.as_str());
        out.get_mut(name)
            .expect("cohort present")
            .insert(account.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{POOR_MAX_INFLOW, WEALTHY_MIN_INFLOW};

    const GOOD: &str = "account_id,timestamp,merchant_id,mcc,amount,direction
a1,2010-03-01T09:00:00Z,m7,5411,23.10,outflow
a1,2010-03-01T12:30:00Z,m2,5812,8.45,outflow
a1,2010-03-02T08:00:00Z,payroll,0000,1500.00,inflow
a2,2010-03-02T17:15:00Z,m9,5541,40,outflow
a2,2010-03-03T10:00:00Z,m7,5411,12.99,outflow
";

    #[test]
    fn parses_well_formed_csv() {
        let out = parse_csv(GOOD.as_bytes(), true).unwrap();
        assert_eq!(out.transactions.len(), 5);
        assert!(out.errors.is_empty());
    }

    #[test]
    fn csv_round_trips_byte_identically() {
        let out = parse_csv(GOOD.as_bytes(), true).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &out.transactions).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), GOOD);
    }

    #[test]
    fn lenient_mode_skips_bad_rows() {
        let bad = GOOD.replace("m9,5541", "m9,554");
        let out = parse_csv(bad.as_bytes(), false).unwrap();
        assert_eq!(out.transactions.len(), 4);
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].row, 5);
        assert_eq!(out.errors[0].field, "mcc");
        let err = parse_csv(bad.as_bytes(), true).unwrap_err();
        assert!(matches!(
            err,
            Error::Validation(ValidationError { row: 5, .. })
        ));
    }

    #[test]
    fn missing_column_is_schema_mismatch() {
        let text = "account_id,timestamp,merchant_id,amount,direction\na,2010-03-01T09:00:00Z,m,1.00,outflow\n";
        let err = parse_csv(text.as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch(ref m) if m.contains("mcc")));
    }

    #[test]
    fn error_report_is_jsonl() {
        let bad = GOOD.replace("inflow\na2", "sideways\na2");
        let out = parse_csv(bad.as_bytes(), false).unwrap();
        let mut buf = Vec::new();
        write_error_report(&mut buf, &out.errors).unwrap();
        let line: Value =
            serde_json::from_slice(buf.split(|&b| b == b'\n').next().unwrap()).unwrap();
        assert_eq!(line["row"], 4);
        assert_eq!(line["field"], "direction");
    }

    #[test]
    fn jsonl_parses_and_pads_numeric_mcc() {
        let text = r#"{"account_id":"a","timestamp":"2010-03-01T09:00:00Z","merchant_id":"m","mcc":742,"amount":3.5,"direction":"outflow"}
{"account_id":"a","timestamp":"2010-03-01T09:00:00Z","merchant_id":"m","mcc":"5411","amount":"3.50","direction":"outflow"}

{"account_id":"a","timestamp":"2010-03-01T09:00:00Z","merchant_id":"m","amount":"3.50","direction":"outflow"}
"#;
        let out = parse_jsonl(text.as_bytes(), false).unwrap();
        assert_eq!(out.transactions.len(), 2);
        assert_eq!(out.transactions[0].mcc.as_str(), "0742");
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].row, 4);
        assert_eq!(out.errors[0].field, "mcc");
    }

    #[test]
    fn jsonl_round_trip_through_writer() {
        let out = parse_csv(GOOD.as_bytes(), true).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &out.transactions).unwrap();
        let back = parse_jsonl(buf.as_slice(), true).unwrap();
        assert_eq!(back.transactions, out.transactions);
    }

    #[test]
    fn annualization() {
        assert!((annualize(4_000.0, 91.3125).unwrap() - 16_000.0).abs() < 1e-9);
        assert!((annualize(20_000.0, 91.3125).unwrap() - 80_000.0).abs() < 1e-9);
        assert_eq!(annualize(0.0, 90.0).unwrap(), 0.0);
        assert!(annualize(10.0, 0.0).is_err());
    }

    #[test]
    fn income_from_inflows_only() {
        let out = parse_csv(GOOD.as_bytes(), true).unwrap();
        let window: DateWindow = "2010-03-01:2010-03-31".parse().unwrap();
        let a1: Vec<_> = out
            .transactions
            .iter()
            .filter(|t| t.account_id == "a1")
            .cloned()
            .collect();
        let income = estimate_income(&a1, &window).unwrap();
        assert!((income - 1500.0 * 365.25 / 31.0).abs() < 1e-9);
        let a2: Vec<_> = out
            .transactions
            .iter()
            .filter(|t| t.account_id == "a2")
            .cloned()
            .collect();
        assert_eq!(estimate_income(&a2, &window).unwrap(), 0.0);
    }

    fn dataset_with_incomes(incomes: &[(&str, f64)]) -> Dataset {
        let window: DateWindow = "2010-01-01:2010-12-31".parse().unwrap();
        let days = window.days() as f64;
        let mut txns = Vec::new();
        for (acct, income) in incomes {
            let cents = (income * days / DAYS_PER_YEAR * 100.0).round() as i64;
            let mut t = parse_csv(GOOD.as_bytes(), true).unwrap().transactions[2].clone();
            t.account_id = acct.to_string();
            t.amount = crate::model::Amount::from_cents(cents.max(1));
            txns.push(t);
        }
        Dataset::from_transactions(&txns, window, &SequenceOptions::default()).unwrap()
    }

    #[test]
    fn cohort_assignment_honors_strict_thresholds() {
        let ds = dataset_with_incomes(&[("p", 10_000.0), ("w", 80_000.01), ("m", 50_000.0)]);
        let specs = [
            CohortSpec::poor(POOR_MAX_INFLOW),
            CohortSpec::wealthy(WEALTHY_MIN_INFLOW),
        ];
        let cohorts = segment_cohorts(&ds, &specs).unwrap();
        assert!(cohorts["poor"].contains("p"));
        assert!(cohorts["wealthy"].contains("w"));
        assert!(cohorts[RESIDUAL_COHORT].contains("m"));
        let total: usize = cohorts.values().map(|s| s.len()).sum();
        assert_eq!(total, ds.len());
    }

    #[test]
    fn overlapping_specs_rejected() {
        let ds = dataset_with_incomes(&[("p", 10_000.0)]);
        let a = CohortSpec::new("a", Some((0.0, true)), Some((20_000.0, false))).unwrap();
        let b = CohortSpec::poor(POOR_MAX_INFLOW);
        assert!(matches!(
            segment_cohorts(&ds, &[a, b]),
            Err(Error::OverlappingCohorts(..))
        ));
    }

    #[test]
    fn inflow_only_account_has_empty_sequence() {
        let ds = dataset_with_incomes(&[("p", 10_000.0)]);
        assert!(ds.sequence("p").unwrap().is_empty());
        assert!(ds.incomes()["p"] > 0.0);
    }
}
