//! Python bindings. Results that are records on the Rust side come back as
//! plain dicts and lists.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use shopent::entropy::{
    entropy_report, lz_entropy_rate, shannon_entropy, EntropyOptions, LzScanner,
};
use shopent::experiments::{
    overlap_monte_carlo, overlap_probability, run_entropy_simulation, SimulationConfig,
    SimulationMode,
};
use shopent::ingest::{parse_csv, segment_cohorts, Dataset as CoreDataset};
use shopent::model::{CohortSpec, DateWindow, Mcc, SequenceOptions, SymbolLevel, Timezone};
use shopent::structure::{
    fit_zipf as core_fit_zipf, population_rank_curve, predictable_quintile, Quintile, RankAverage,
    RankRange, ZipfOptions,
};
use shopent::synthgen::{
    oracle_iid as core_oracle_iid, oracle_markov as core_oracle_markov, write_population_csv,
    PopulationSpec,
};

fn err(e: shopent::Error) -> PyErr {
    match e {
        shopent::Error::Io(e) => PyOSError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = shopent::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Visit sequences of every account in a transaction file.
#[pyclass(frozen, module = "pyshopent")]
struct Dataset {
    inner: CoreDataset,
    parse_errors: usize,
}

impl Dataset {
    fn from_bytes(
        bytes: &[u8],
        window: Option<&str>,
        timezone: &str,
        strict: bool,
        exclude_mcc: Vec<String>,
    ) -> PyResult<Self> {
        let outcome = parse_csv(bytes, strict).map_err(err)?;
        let window = match window {
            Some(w) => parse::<DateWindow>(w)?,
            None => CoreDataset::covering_window(&outcome.transactions)
                .ok_or_else(|| PyValueError::new_err("no valid transactions"))?,
        };
        let exclude_mccs = exclude_mcc
            .iter()
            .map(|m| Mcc::new(m).ok_or_else(|| PyValueError::new_err(format!("invalid MCC {m:?}"))))
            .collect::<PyResult<_>>()?;
        let options = SequenceOptions {
            timezone: parse::<Timezone>(timezone)?,
            exclude_mccs,
            dedup_same_day: false,
        };
        Ok(Dataset {
            inner: CoreDataset::from_transactions(&outcome.transactions, window, &options)
                .map_err(err)?,
            parse_errors: outcome.errors.len(),
        })
    }
}

#[pymethods]
impl Dataset {
    /// Reads an ingest-schema CSV file. Malformed rows are skipped unless
    /// `strict` is set.
    #[staticmethod]
    #[pyo3(signature = (path, window=None, timezone="UTC", strict=false, exclude_mcc=Vec::new()))]
    fn from_csv(
        path: PathBuf,
        window: Option<&str>,
        timezone: &str,
        strict: bool,
        exclude_mcc: Vec<String>,
    ) -> PyResult<Self> {
        let bytes = std::fs::read(&path)
            .map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes, window, timezone, strict, exclude_mcc)
    }

    #[staticmethod]
    #[pyo3(signature = (text, window=None, timezone="UTC", strict=false, exclude_mcc=Vec::new()))]
    fn from_csv_text(
        text: &str,
        window: Option<&str>,
        timezone: &str,
        strict: bool,
        exclude_mcc: Vec<String>,
    ) -> PyResult<Self> {
        Self::from_bytes(text.as_bytes(), window, timezone, strict, exclude_mcc)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn window(&self) -> String {
        self.inner.window().to_string()
    }

    #[getter]
    fn parse_errors(&self) -> usize {
        self.parse_errors
    }

    fn accounts(&self) -> Vec<String> {
        self.inner.accounts().into_iter().collect()
    }

    fn incomes(&self) -> HashMap<String, f64> {
        self.inner
            .incomes()
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect()
    }

    /// Merchant ids (or MCCs) in visit order.
    #[pyo3(signature = (account, level="merchant"))]
    fn sequence(&self, account: &str, level: &str) -> PyResult<Vec<String>> {
        let level: SymbolLevel = parse(level)?;
        let seq = self.inner.sequence(account).map_err(err)?;
        Ok(seq
            .events()
            .iter()
            .map(|e| e.label(level).to_owned())
            .collect())
    }

    #[pyo3(signature = (account, level="merchant", scanner="auto"))]
    fn entropy<'py>(
        &self,
        py: Python<'py>,
        account: &str,
        level: &str,
        scanner: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let options = EntropyOptions {
            level: parse(level)?,
            scanner: parse(scanner)?,
        };
        let report =
            entropy_report(self.inner.sequence(account).map_err(err)?, options).map_err(err)?;
        to_py(py, &report)
    }

    /// Accounts with the lowest (`top`) or highest (`bottom`) uncorrelated
    /// entropy, one fifth of the population.
    #[pyo3(signature = (which="top"))]
    fn quintile(&self, which: &str) -> PyResult<Vec<String>> {
        let q: Quintile = parse(which)?;
        Ok(predictable_quintile(&self.inner, &self.inner.accounts(), q)
            .map_err(err)?
            .into_iter()
            .collect())
    }

    #[pyo3(signature = (poor_max=shopent::model::POOR_MAX_INFLOW, wealthy_min=shopent::model::WEALTHY_MIN_INFLOW))]
    fn cohorts(&self, poor_max: f64, wealthy_min: f64) -> PyResult<HashMap<String, Vec<String>>> {
        let cohorts = segment_cohorts(
            &self.inner,
            &[CohortSpec::poor(poor_max), CohortSpec::wealthy(wealthy_min)],
        )
        .map_err(err)?;
        Ok(cohorts
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect())
    }
}

/// `(s_rand, s_unc, s_true)` of a symbol sequence, in bits.
#[pyfunction]
#[pyo3(signature = (symbols, scanner="auto"))]
fn entropy_rates(symbols: Vec<String>, scanner: &str) -> PyResult<(f64, f64, f64)> {
    let scanner: LzScanner = parse(scanner)?;
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let coded: Vec<u32> = symbols
        .iter()
        .map(|s| {
            let next = ids.len() as u32;
            *ids.entry(s.as_str()).or_insert(next)
        })
        .collect();
    let s_true = lz_entropy_rate(&coded, scanner).map_err(err)?;
    let mut counts = vec![0u64; ids.len()];
    for &c in &coded {
        counts[c as usize] += 1;
    }
    Ok(((ids.len() as f64).log2(), shannon_entropy(counts), s_true))
}

/// Synthetic population as ingest-schema CSV text.
#[pyfunction]
#[pyo3(signature = (spec_json, seed=None))]
fn generate_csv(spec_json: &str, seed: Option<u64>) -> PyResult<String> {
    let mut spec = PopulationSpec::from_json(spec_json).map_err(err)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let mut buf = Vec::new();
    write_population_csv(&spec, &mut buf).map_err(err)?;
    String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
#[pyo3(signature = (spec_json, seed=None))]
fn generate(spec_json: &str, seed: Option<u64>) -> PyResult<Dataset> {
    let mut spec = PopulationSpec::from_json(spec_json).map_err(err)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let mut buf = Vec::new();
    write_population_csv(&spec, &mut buf).map_err(err)?;
    Dataset::from_bytes(
        &buf,
        Some(&spec.window.to_string()),
        "UTC",
        true,
        Vec::new(),
    )
}

#[pyfunction]
#[pyo3(signature = (dataset, rank_min=1, rank_max=10, average="reaching", resamples=1000, seed=0))]
fn fit_zipf<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    rank_min: u32,
    rank_max: u32,
    average: &str,
    resamples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let average: RankAverage = parse(average)?;
    let curve =
        population_rank_curve(&dataset.inner, &dataset.inner.accounts(), average).map_err(err)?;
    let range = RankRange::new(rank_min, rank_max).map_err(err)?;
    let fit = core_fit_zipf(&curve, range, ZipfOptions { resamples, seed }).map_err(err)?;
    to_py(py, &fit)
}

#[pyfunction]
#[pyo3(signature = (dataset, mode="shuffle_day", runs=10_000, sample=2_000, seed=0, level="merchant"))]
fn simulate<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    mode: &str,
    runs: usize,
    sample: usize,
    seed: u64,
    level: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let config = SimulationConfig {
        runs,
        sample_size: sample,
        seed,
        mode: parse::<SimulationMode>(mode)?,
        level: parse(level)?,
        ..SimulationConfig::default()
    };
    let result = py
        .detach(|| run_entropy_simulation(&dataset.inner, &config))
        .map_err(err)?;
    to_py(py, &result)
}

/// Closed-form same-MCC probabilities, plus a sampled estimate when
/// `monte_carlo` is given.
#[pyfunction]
#[pyo3(signature = (dataset, group_a, group_b, monte_carlo=None, seed=0))]
fn overlap<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    group_a: Vec<String>,
    group_b: Vec<String>,
    monte_carlo: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let a: BTreeSet<String> = group_a.into_iter().collect();
    let b: BTreeSet<String> = group_b.into_iter().collect();
    let closed = overlap_probability(&dataset.inner, &a, &b).map_err(err)?;
    let out = to_py(py, &closed)?;
    if let Some(n) = monte_carlo {
        let mc = overlap_monte_carlo(&dataset.inner, &a, &b, n, seed).map_err(err)?;
        out.set_item("monte_carlo", to_py(py, &mc)?)?;
    }
    Ok(out)
}

/// Uniform iid sequence over `k` symbols and its entropy rate.
#[pyfunction]
fn oracle_iid(k: u32, n: usize, seed: u64) -> PyResult<(Vec<u32>, f64)> {
    let o = core_oracle_iid(k, n, seed).map_err(err)?;
    Ok((o.symbols, o.entropy_rate))
}

/// Markov chain sample from a row-stochastic matrix and its entropy rate.
#[pyfunction]
fn oracle_markov(matrix: Vec<Vec<f64>>, n: usize, seed: u64) -> PyResult<(Vec<u32>, f64)> {
    let o = core_oracle_markov(&matrix, n, seed).map_err(err)?;
    Ok((o.symbols, o.entropy_rate))
}

#[pymodule]
fn pyshopent(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Dataset>()?;
    m.add_function(wrap_pyfunction!(entropy_rates, m)?)?;
    m.add_function(wrap_pyfunction!(generate_csv, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_zipf, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(overlap, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_iid, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_markov, m)?)?;
    Ok(())
}
