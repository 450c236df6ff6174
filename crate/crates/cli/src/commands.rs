use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use shopent::entropy::{entropy_distribution, max_predictability, EntropyOptions, LzScanner};
use shopent::experiments::{
    bundling_score, cohort_summary, overlap_monte_carlo, overlap_probability,
    run_entropy_simulation, top_merchant_profile, window_stability, write_cohort_statistic_csv,
    CohortStatistic, OverlapResult, SimulationConfig, SimulationMode,
};
use shopent::ingest::{
    parse_csv, parse_jsonl, segment_cohorts, write_error_report, Dataset, Format, ParseOutcome,
    RESIDUAL_COHORT,
};
use shopent::model::{
    CohortSpec, DateWindow, Direction, Mcc, SequenceOptions, SymbolLevel, Timezone,
    POOR_MAX_INFLOW, WEALTHY_MIN_INFLOW,
};
use shopent::stats::{mean, mean_lower_bound, median, median_difference};
use shopent::structure::{
    fit_zipf, population_graph, population_rank_curve, predictable_quintile, Quintile, RankAverage,
    RankRange, ZipfOptions,
};
use shopent::synthgen::{write_population_csv, PopulationSpec};

use crate::error::CliError;
use crate::output::{InputRecord, Manifest, OutDir};
use crate::settings::Settings;
use crate::{Cli, LoadArgs};

pub const MEASURES: &[&str] = &["entropy", "zipf", "graph", "bundle", "cohorts", "profile"];
const CONTRAST_LEVEL: f64 = 0.99;

pub struct Context {
    pub settings: Settings,
    pub argv: Vec<String>,
    seed_flag: Option<String>,
    pub strict: bool,
    pub timezone: Timezone,
}

impl Context {
    pub fn new(cli: &Cli, settings: Settings, argv: Vec<String>) -> Result<Self, CliError> {
        let strict = settings.get("strict", cli.strict.as_deref(), false)?;
        let timezone = settings.get("timezone", cli.timezone.as_deref(), Timezone::UTC)?;
        Ok(Context {
            settings,
            argv,
            seed_flag: cli.seed.clone(),
            strict,
            timezone,
        })
    }

    fn seed(&self, default: u64) -> Result<u64, CliError> {
        self.settings
            .get("seed", self.seed_flag.as_deref(), default)
    }

    fn manifest(&self, command: &str, inputs: Vec<InputRecord>) -> Manifest {
        let mut m = Manifest::new(command, &self.argv);
        m.settings = self.settings.effective();
        m.inputs = inputs;
        m
    }
}

/// A parsed input file with its digest.
struct Loaded {
    dataset: Dataset,
    record: InputRecord,
    outcome: ParseOutcome,
}

fn read_transactions(
    ctx: &Context,
    path: &Path,
    load: &LoadArgs,
) -> Result<(ParseOutcome, InputRecord), CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    let record = InputRecord::of(path, &bytes);
    let format = ctx
        .settings
        .get_opt::<Format>("format", load.format.as_deref())?
        .unwrap_or_else(|| Format::from_path(path));
    let outcome = match format {
        Format::Csv => parse_csv(bytes.as_slice(), ctx.strict),
        Format::Jsonl => parse_jsonl(BufReader::new(bytes.as_slice()), ctx.strict),
    }
    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    if !outcome.errors.is_empty() {
        eprintln!(
            "warning: {}: skipped {} malformed rows",
            path.display(),
            outcome.errors.len()
        );
    }
    Ok((outcome, record))
}

fn sequence_options(ctx: &Context, load: &LoadArgs) -> Result<SequenceOptions, CliError> {
    let exclude_mccs = match ctx.settings.raw("exclude-mcc", load.exclude_mcc.as_deref()) {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                Mcc::new(s).ok_or_else(|| {
                    CliError::usage(format!(
                        "invalid value {s:?} for `exclude-mcc`: not 4 digits"
                    ))
                })
            })
            .collect::<Result<BTreeSet<_>, _>>()?,
        None => BTreeSet::new(),
    };
    Ok(SequenceOptions {
        timezone: ctx.timezone,
        exclude_mccs,
        dedup_same_day: ctx.settings.get(
            "dedup-same-day",
            load.dedup_same_day.as_deref(),
            false,
        )?,
    })
}

fn load_dataset(
    ctx: &Context,
    path: &Path,
    load: &LoadArgs,
    window_override: bool,
) -> Result<Loaded, CliError> {
    let (outcome, record) = read_transactions(ctx, path, load)?;
    let window = match window_override
        .then(|| {
            ctx.settings
                .get_opt::<DateWindow>("window", load.window.as_deref())
        })
        .transpose()?
        .flatten()
    {
        Some(w) => w,
        None => Dataset::covering_window(&outcome.transactions)
            .ok_or_else(|| CliError::usage(format!("{}: no valid transactions", path.display())))?,
    };
    let dataset =
        Dataset::from_transactions(&outcome.transactions, window, &sequence_options(ctx, load)?)?;
    Ok(Loaded {
        dataset,
        record,
        outcome,
    })
}

fn write_errors(out: &mut OutDir, outcome: &ParseOutcome) -> Result<(), CliError> {
    if !outcome.errors.is_empty() {
        let mut w = out.file("parse_errors.jsonl")?;
        write_error_report(&mut w, &outcome.errors)?;
        w.flush()?;
    }
    Ok(())
}

pub fn generate(ctx: &Context, spec_path: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", spec_path.display())))?;
    let mut spec = PopulationSpec::from_json(&text)
        .map_err(|e| CliError::usage(format!("{}: {e}", spec_path.display())))?;
    spec.seed = ctx.seed(spec.seed)?;
    let mut buf = Vec::new();
    let rows = write_population_csv(&spec, &mut buf)?;
    std::fs::write(out, &buf)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", out.display())))?;
    let visits = buf
        .split(|&b| b == b'\n')
        .filter(|l| l.ends_with(b",outflow"))
        .count();

    let mut manifest = ctx.manifest(
        "generate",
        vec![InputRecord::of(spec_path, text.as_bytes())],
    );
    manifest.outputs = vec![out.display().to_string()];
    manifest.note("output_sha256", crate::output::sha256_hex(&buf));
    manifest.note("spec", &spec);
    manifest.note(
        "model",
        "synthetic agent model of this toolkit; parameters are not fitted to data",
    );
    let manifest_path = PathBuf::from(format!("{}.manifest.json", out.display()));
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    println!("agents: {}", spec.n_agents());
    println!("transactions: {rows}");
    println!("visits: {visits}");
    println!("window: {}", spec.window);
    println!("seed: {}", spec.seed);
    println!("model: synthetic agent model (toolkit construction, not fitted to data)");
    Ok(())
}

pub fn ingest_check(
    ctx: &Context,
    input: &Path,
    load: &LoadArgs,
    errors: Option<&Path>,
) -> Result<(), CliError> {
    let loaded = load_dataset(ctx, input, load, true)?;
    let txns = &loaded.outcome.transactions;
    if let Some(path) = errors {
        let mut f = std::fs::File::create(path)?;
        write_error_report(&mut f, &loaded.outcome.errors)?;
    }
    let ds = &loaded.dataset;
    let cohorts = segment_cohorts(ds, &default_cohorts(ctx)?)?;
    let outflows = txns
        .iter()
        .filter(|t| t.direction == Direction::Outflow)
        .count();
    println!("sha256: {}", loaded.record.sha256);
    println!("rows_ok: {}", txns.len());
    println!("rows_skipped: {}", loaded.outcome.errors.len());
    println!("accounts: {}", ds.len());
    println!("window: {} ({} days)", ds.window(), ds.window().days());
    println!("outflows: {outflows}");
    println!(
        "visits_in_window: {}",
        ds.sequences().values().map(|s| s.len()).sum::<usize>()
    );
    for (name, members) in &cohorts {
        println!("cohort_{name}: {}", members.len());
    }
    for e in loaded.outcome.errors.iter().take(5) {
        eprintln!("row {}: {}: {}", e.row, e.field, e.message);
    }
    Ok(())
}

fn default_cohorts(ctx: &Context) -> Result<Vec<CohortSpec>, CliError> {
    let poor = ctx.settings.get("poor-max", None, POOR_MAX_INFLOW)?;
    let wealthy = ctx.settings.get("wealthy-min", None, WEALTHY_MIN_INFLOW)?;
    Ok(vec![CohortSpec::poor(poor), CohortSpec::wealthy(wealthy)])
}

pub struct AnalyzeFlags {
    pub measures: Option<String>,
    pub level: Option<String>,
    pub scanner: Option<String>,
    pub quintile: Option<String>,
    pub bin_width: Option<String>,
    pub rank_range: Option<String>,
    pub rank_average: Option<String>,
    pub resamples: Option<String>,
    pub poor_max: Option<String>,
    pub wealthy_min: Option<String>,
    pub fano: Option<String>,
}

#[derive(Serialize)]
struct EntropySummary {
    accounts: usize,
    too_few_events: Vec<String>,
    mean_random: Option<f64>,
    mean_uncorrelated: Option<f64>,
    mean_true: Option<f64>,
}

#[derive(Serialize)]
struct Contrast {
    statistic: &'static str,
    median_wealthy: f64,
    median_poor: f64,
    difference: f64,
    lower: f64,
    upper: f64,
    level: f64,
    excludes_zero: bool,
}

pub fn analyze(
    ctx: &Context,
    input: &Path,
    load: &LoadArgs,
    out: &Path,
    flags: &AnalyzeFlags,
) -> Result<(), CliError> {
    let s = &ctx.settings;
    let measures: Vec<String> = s
        .get("measures", flags.measures.as_deref(), "entropy".to_string())?
        .split(',')
        .map(|m| m.trim().to_owned())
        .filter(|m| !m.is_empty())
        .collect();
    if let Some(bad) = measures.iter().find(|m| !MEASURES.contains(&m.as_str())) {
        return Err(CliError::usage(format!(
            "unknown measure `{bad}`; valid measures: {}",
            MEASURES.join(", ")
        )));
    }
    let level: SymbolLevel = s.get("level", flags.level.as_deref(), SymbolLevel::default())?;
    let scanner: LzScanner = s.get("scanner", flags.scanner.as_deref(), LzScanner::default())?;
    let quintile: Option<Quintile> = s.get_opt("quintile", flags.quintile.as_deref())?;
    let bin_width: f64 = s.get("bin-width", flags.bin_width.as_deref(), 0.1)?;
    let rank_range: RankRange = s.get(
        "rank-range",
        flags.rank_range.as_deref(),
        RankRange { min: 1, max: 10 },
    )?;
    let rank_average: RankAverage = s.get(
        "rank-average",
        flags.rank_average.as_deref(),
        RankAverage::default(),
    )?;
    let resamples: usize = s.get("resamples", flags.resamples.as_deref(), 1000)?;
    let poor_max: f64 = s.get("poor-max", flags.poor_max.as_deref(), POOR_MAX_INFLOW)?;
    let wealthy_min: f64 = s.get(
        "wealthy-min",
        flags.wealthy_min.as_deref(),
        WEALTHY_MIN_INFLOW,
    )?;
    let fano: bool = s.get("fano", flags.fano.as_deref(), false)?;
    let seed = ctx.seed(0)?;
    if bin_width.is_nan() || bin_width <= 0.0 {
        return Err(CliError::usage("`bin-width` must be positive"));
    }

    let started = Instant::now();
    let loaded = load_dataset(ctx, input, load, true)?;
    let ds = &loaded.dataset;
    let mut dir = OutDir::create(out)?;
    write_errors(&mut dir, &loaded.outcome)?;
    let mut manifest = ctx.manifest("analyze", vec![loaded.record.clone()]);
    manifest.note("window", ds.window().to_string());
    manifest.note("parse_errors", loaded.outcome.errors.len());

    let all = ds.accounts();
    let accounts = match quintile {
        Some(q) => predictable_quintile(ds, &all, q)?,
        None => all.clone(),
    };
    manifest.note("accounts", accounts.len());
    let options = EntropyOptions { level, scanner };

    for measure in &measures {
        match measure.as_str() {
            "entropy" => {
                let dist = entropy_distribution(ds, &accounts, options, bin_width)?;
                dir.json("entropy_reports.json", &dist.reports)?;
                let mut w = dir.file("entropy_histograms.csv")?;
                dist.write_histograms_csv(&mut w)?;
                w.flush()?;
                let means = dist.means();
                dir.json(
                    "entropy_summary.json",
                    &EntropySummary {
                        accounts: dist.reports.len(),
                        too_few_events: dist.too_few_events.clone(),
                        mean_random: means.map(|m| m.0),
                        mean_uncorrelated: means.map(|m| m.1),
                        mean_true: means.map(|m| m.2),
                    },
                )?;
                if fano {
                    let mut w = dir.file("predictability.csv")?;
                    writeln!(w, "account_id,s_true,n_merchants,max_predictability")?;
                    for r in &dist.reports {
                        if let Ok(p) = max_predictability(r.s_true, r.n_merchants) {
                            writeln!(w, "{},{},{},{}", r.account_id, r.s_true, r.n_merchants, p)?;
                        }
                    }
                    w.flush()?;
                }
            }
            "zipf" => {
                let curve = population_rank_curve(ds, &accounts, rank_average)?;
                let mut w = dir.file("rank_curve.csv")?;
                curve.write_csv(&mut w)?;
                w.flush()?;
                let fit = fit_zipf(&curve, rank_range, ZipfOptions { resamples, seed })?;
                dir.json("zipf_fit.json", &fit)?;
            }
            "graph" => {
                let graph = population_graph(ds, &accounts, level)?;
                let mut w = dir.file("graph.dot")?;
                w.write_all(graph.to_dot().as_bytes())?;
                w.flush()?;
                let mut w = dir.file("graph.json")?;
                w.write_all(graph.to_json().as_bytes())?;
                w.flush()?;
                let degrees = graph.out_degrees();
                let mut w = dir.file("graph_degrees.csv")?;
                writeln!(w, "node,out_degree,visits")?;
                for (node, visits) in graph.nodes() {
                    writeln!(
                        w,
                        "{},{},{}",
                        csv_field(node),
                        degrees.get(node.as_str()).copied().unwrap_or(0),
                        visits
                    )?;
                }
                w.flush()?;
            }
            "bundle" => {
                let mut w = dir.file("bundling.csv")?;
                writeln!(w, "account_id,variance,mean_daily,n_days")?;
                for a in &accounts {
                    let seq = ds.sequence(a)?;
                    if seq.is_empty() {
                        continue;
                    }
                    let b = bundling_score(seq)?;
                    writeln!(
                        w,
                        "{},{},{},{}",
                        csv_field(&b.account_id),
                        b.variance,
                        b.mean_daily,
                        b.n_days
                    )?;
                }
                w.flush()?;
            }
            "cohorts" => {
                let specs = [CohortSpec::poor(poor_max), CohortSpec::wealthy(wealthy_min)];
                let mut cohorts = segment_cohorts(ds, &specs)?;
                let sizes: BTreeMap<String, usize> =
                    cohorts.iter().map(|(k, v)| (k.clone(), v.len())).collect();
                manifest.note("cohort_sizes", &sizes);
                cohorts.retain(|name, members| !(members.is_empty() && name == RESIDUAL_COHORT));
                let summaries = cohort_summary(ds, &cohorts, bin_width)?;
                for stat in CohortStatistic::ALL {
                    let mut w = dir.file(&format!("cohort_{}.csv", stat.name()))?;
                    write_cohort_statistic_csv(&mut w, &summaries, stat)?;
                    w.flush()?;
                }
                let mut w = dir.file("cohort_histograms.csv")?;
                writeln!(w, "cohort,measure,bin_lo,bin_hi,count")?;
                for (name, summary) in &summaries {
                    for (measure, h) in [
                        ("stores", &summary.store_counts),
                        ("random", &summary.s_rand),
                        ("uncorrelated", &summary.s_unc),
                    ] {
                        for b in &h.bins {
                            writeln!(w, "{name},{measure},{:.6},{:.6},{}", b.lo, b.hi, b.count)?;
                        }
                    }
                }
                w.flush()?;
                if let (Some(rich), Some(poor)) = (summaries.get("wealthy"), summaries.get("poor"))
                {
                    let mut contrasts = Vec::new();
                    for stat in CohortStatistic::ALL {
                        let (a, b) = (rich.values(stat), poor.values(stat));
                        if a.is_empty() || b.is_empty() {
                            continue;
                        }
                        let ci = median_difference(&a, &b, resamples, CONTRAST_LEVEL, seed)
                            .expect("non-empty");
                        contrasts.push(Contrast {
                            statistic: stat.name(),
                            median_wealthy: median(&a).expect("non-empty"),
                            median_poor: median(&b).expect("non-empty"),
                            difference: ci.estimate,
                            lower: ci.lower,
                            upper: ci.upper,
                            level: ci.level,
                            excludes_zero: ci.excludes_zero(),
                        });
                    }
                    dir.json("cohort_contrasts.json", &contrasts)?;
                }
            }
            "profile" => {
                let mut w = dir.file("profile.csv")?;
                writeln!(w, "quintile,mcc,share,accounts")?;
                for (name, q) in [("top", Quintile::Top), ("bottom", Quintile::Bottom)] {
                    let members = predictable_quintile(ds, &all, q)?;
                    for e in top_merchant_profile(ds, &members)? {
                        writeln!(w, "{name},{},{},{}", e.mcc, e.share, e.accounts)?;
                    }
                }
                w.flush()?;
            }
            _ => unreachable!("validated above"),
        }
    }
    manifest.settings = ctx.settings.effective();
    dir.finish(manifest)?;
    eprintln!(
        "analyzed {} accounts in {:.2?}",
        accounts.len(),
        started.elapsed()
    );
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    ctx: &Context,
    input: &Path,
    load: &LoadArgs,
    out: &Path,
    mode: Option<String>,
    runs: Option<String>,
    sample: Option<String>,
    level: Option<String>,
    bin_width: Option<String>,
) -> Result<(), CliError> {
    let s = &ctx.settings;
    let config = SimulationConfig {
        mode: s.get("mode", mode.as_deref(), SimulationMode::ShuffleDay)?,
        runs: s.get("runs", runs.as_deref(), 10_000)?,
        sample_size: s.get("sample", sample.as_deref(), 2_000)?,
        level: s.get("level", level.as_deref(), SymbolLevel::default())?,
        bin_width: s.get("bin-width", bin_width.as_deref(), 0.1)?,
        seed: ctx.seed(0)?,
    };
    let started = Instant::now();
    let loaded = load_dataset(ctx, input, load, true)?;
    let result = run_entropy_simulation(&loaded.dataset, &config)?;
    let elapsed = started.elapsed();

    let mut dir = OutDir::create(out)?;
    write_errors(&mut dir, &loaded.outcome)?;
    dir.json("simulation.json", &result)?;
    let mut w = dir.file("simulation_histograms.csv")?;
    writeln!(w, "bin_lo,bin_hi,count,measure")?;
    for (name, h) in [
        ("baseline", &result.histograms.baseline),
        ("transformed", &result.histograms.transformed),
    ] {
        for b in &h.bins {
            writeln!(w, "{:.6},{:.6},{},{}", b.lo, b.hi, b.count, name)?;
        }
    }
    w.flush()?;
    let reductions = result.reductions();
    let bound = mean_lower_bound(&reductions, 1000, 0.99, config.seed).expect("non-empty sample");
    let mut manifest = ctx.manifest("simulate", vec![loaded.record]);
    manifest.note("window", loaded.dataset.window().to_string());
    manifest.note("eligible_accounts", result.eligible_accounts);
    dir.finish(manifest)?;

    println!("mode: {}", config.mode);
    println!(
        "accounts: {} of {} eligible",
        result.per_account.len(),
        result.eligible_accounts
    );
    let runs = match config.mode {
        SimulationMode::ShuffleDay => config.runs,
        SimulationMode::SortWeek => 1,
    };
    println!("runs: {runs}");
    println!("mean_baseline: {:.6}", result.mean_baseline());
    println!("mean_transformed: {:.6}", result.mean_transformed());
    println!("mean_reduction: {:.6}", mean(&reductions).unwrap_or(0.0));
    println!("reduction_lower_99: {:.6}", bound.lower);
    eprintln!("simulated in {elapsed:.2?}");
    Ok(())
}

pub enum Groups {
    Files(PathBuf, PathBuf),
    AutoQuintiles,
}

#[derive(Serialize)]
struct GroupInfo {
    name: String,
    size: usize,
}

#[derive(Serialize)]
struct MonteCarlo {
    samples: usize,
    seed: u64,
    result: OverlapResult,
}

#[derive(Serialize)]
struct OverlapReport {
    level: &'static str,
    group_a: GroupInfo,
    group_b: GroupInfo,
    closed_form: OverlapResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo: Option<MonteCarlo>,
}

fn read_group(path: &Path) -> Result<BTreeSet<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

pub fn overlap(
    ctx: &Context,
    input: &Path,
    load: &LoadArgs,
    groups: Groups,
    monte_carlo: Option<String>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let samples: Option<usize> = ctx
        .settings
        .get_opt("monte-carlo", monte_carlo.as_deref())?;
    let seed = ctx.seed(0)?;
    let loaded = load_dataset(ctx, input, load, true)?;
    let ds = &loaded.dataset;
    let mut inputs = vec![loaded.record.clone()];
    let (a, b, names) = match &groups {
        Groups::Files(pa, pb) => {
            let (a, b) = (read_group(pa)?, read_group(pb)?);
            inputs.push(InputRecord::of(pa, std::fs::read(pa)?.as_slice()));
            inputs.push(InputRecord::of(pb, std::fs::read(pb)?.as_slice()));
            (a, b, (pa.display().to_string(), pb.display().to_string()))
        }
        Groups::AutoQuintiles => {
            let all = ds.accounts();
            (
                predictable_quintile(ds, &all, Quintile::Top)?,
                predictable_quintile(ds, &all, Quintile::Bottom)?,
                ("top_quintile".to_owned(), "bottom_quintile".to_owned()),
            )
        }
    };
    if a.is_empty() || b.is_empty() {
        return Err(CliError::usage("overlap groups must not be empty"));
    }
    let report = OverlapReport {
        level: "mcc",
        group_a: GroupInfo {
            name: names.0,
            size: a.len(),
        },
        group_b: GroupInfo {
            name: names.1,
            size: b.len(),
        },
        closed_form: overlap_probability(ds, &a, &b)?,
        monte_carlo: samples
            .map(|n| -> Result<_, CliError> {
                if n == 0 {
                    return Err(CliError::usage("`monte-carlo` must be at least 1"));
                }
                Ok(MonteCarlo {
                    samples: n,
                    seed,
                    result: overlap_monte_carlo(ds, &a, &b, n, seed)?,
                })
            })
            .transpose()?,
    };
    match out {
        Some(dir) => {
            let mut dir = OutDir::create(dir)?;
            write_errors(&mut dir, &loaded.outcome)?;
            dir.json("overlap.json", &report)?;
            let mut manifest = ctx.manifest("overlap", inputs);
            manifest.note("window", ds.window().to_string());
            dir.finish(manifest)?;
            let p = |x: Option<f64>| x.map_or("n/a".to_owned(), |v| format!("{v:.6}"));
            let r = &report.closed_form;
            println!("within_a: {}", p(r.within_a_prob));
            println!("within_b: {}", p(r.within_b_prob));
            println!("within_pooled: {}", p(r.within_group_prob));
            println!("cross: {}", p(r.cross_group_prob));
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

pub fn stability(
    ctx: &Context,
    input_a: &Path,
    input_b: &Path,
    load: &LoadArgs,
    level: Option<String>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let level: SymbolLevel = ctx
        .settings
        .get("level", level.as_deref(), SymbolLevel::default())?;
    // Each input keeps its own covering window.
    let a = load_dataset(ctx, input_a, load, false)?;
    let b = load_dataset(ctx, input_b, load, false)?;
    let report = window_stability(
        &a.dataset,
        &b.dataset,
        EntropyOptions {
            level,
            ..Default::default()
        },
    )?;
    match out {
        Some(dir) => {
            let mut dir = OutDir::create(dir)?;
            dir.json("stability.json", &report)?;
            let mut w = dir.file("stability.csv")?;
            writeln!(
                w,
                "account_id,s_unc_a,s_unc_b,delta_unc,s_true_a,s_true_b,delta_true"
            )?;
            for r in &report.per_account {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    csv_field(&r.account_id),
                    r.s_unc_a,
                    r.s_unc_b,
                    r.delta_unc,
                    r.s_true_a,
                    r.s_true_b,
                    r.delta_true
                )?;
            }
            w.flush()?;
            let mut manifest = ctx.manifest("stability", vec![a.record, b.record]);
            manifest.note("window_a", a.dataset.window().to_string());
            manifest.note("window_b", b.dataset.window().to_string());
            dir.finish(manifest)?;
            let p = |x: Option<f64>| x.map_or("n/a".to_owned(), |v| format!("{v:.6}"));
            println!(
                "shared_accounts: {}",
                report.per_account.len() + report.skipped.len()
            );
            println!("rank_correlation_unc: {}", p(report.rank_correlation_unc));
            println!("rank_correlation_true: {}", p(report.rank_correlation_true));
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}
