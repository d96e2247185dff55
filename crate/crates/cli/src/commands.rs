//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use proxeval_core::eval::{
    score_eval1, score_eval2, sweep, write_curve_csv, write_summary_csv, ScoredSet, SummaryRow,
    SweepResult,
};
use proxeval_core::harness::{FaultSchedule, Harness};
use proxeval_core::report::{
    render_breakdown_table, render_conservation_lines, render_threshold_table, BreakdownRow,
    ThresholdRow,
};
use proxeval_core::similarity::SimilarityMetric;
use proxeval_core::store::{FileFormat, RecordStore};
use proxeval_core::synth::{generate_dataset, SynthScenario};
use proxeval_core::SensorKind;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "PROXEVAL_OUT";

const DEFAULT_OUT: &str = "proxeval-out";

#[derive(Debug)]
pub struct CliError(String);

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn err(e: impl fmt::Display) -> CliError {
    CliError(e.to_string())
}

#[derive(Args)]
pub struct SynthArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Record store directory to write.
    #[arg(long)]
    pub store: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated sensor filter (canonical names or slugs).
    #[arg(long)]
    pub sensors: Option<String>,
    /// Override transactions per sensor.
    #[arg(long)]
    pub transactions: Option<u64>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Scenario JSON file describing the environment.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Record store directory to write.
    #[arg(long)]
    pub store: PathBuf,
    /// Transactions per sensor (defaults to the scenario's n_transactions).
    #[arg(long)]
    pub transactions: Option<u64>,
    /// Comma-separated sensor list; defines the cycling order.
    #[arg(long)]
    pub sensors: Option<String>,
    /// Recording window override, milliseconds.
    #[arg(long = "recording-ms")]
    pub recording_ms: Option<f64>,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fault-injection schedule JSON file.
    #[arg(long)]
    pub faults: Option<PathBuf>,
    /// Run over loopback datagram sockets, with DTI listening on this port.
    #[arg(long = "live-port")]
    pub live_port: Option<u16>,
}

#[derive(Args)]
pub struct IngestArgs {
    /// Input dataset file.
    #[arg(long)]
    pub input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    /// Record store directory to write.
    #[arg(long)]
    pub store: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Record store directory to analyze.
    #[arg(long)]
    pub store: PathBuf,
    /// Comma-separated sensor filter.
    #[arg(long)]
    pub sensors: Option<String>,
    /// Comma-separated metric filter (mae, pearson).
    #[arg(long)]
    pub metrics: Option<String>,
    /// Output directory (defaults to $PROXEVAL_OUT, then ./proxeval-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Evaluation output directory (defaults like --out of evaluate).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn default_out(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn parse_sensor_list(spec: &str) -> Result<Vec<SensorKind>, CliError> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let sensor = SensorKind::parse(part)
            .ok_or_else(|| err(format!("unknown sensor {part:?}")))?;
        if !out.contains(&sensor) {
            out.push(sensor);
        }
    }
    if out.is_empty() {
        return Err(err("empty sensor list"));
    }
    Ok(out)
}

fn parse_metric_list(spec: Option<&str>) -> Result<Vec<SimilarityMetric>, CliError> {
    let Some(spec) = spec else {
        return Ok(SimilarityMetric::ALL.to_vec());
    };
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let metric = SimilarityMetric::parse(part)
            .ok_or_else(|| err(format!("unknown metric {part:?} (mae, pearson)")))?;
        if !out.contains(&metric) {
            out.push(metric);
        }
    }
    if out.is_empty() {
        return Err(err("empty metric list"));
    }
    Ok(out)
}

fn load_scenario_with_overrides(
    path: &Path,
    seed: Option<u64>,
    transactions: Option<u64>,
    sensors: Option<&str>,
    recording_ms: Option<f64>,
) -> Result<SynthScenario, CliError> {
    let mut scenario = SynthScenario::load(path).map_err(err)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if let Some(n) = transactions {
        scenario.n_transactions = n;
    }
    if let Some(ms) = recording_ms {
        scenario.recording_ms = ms;
    }
    if let Some(spec) = sensors {
        let requested = parse_sensor_list(spec)?;
        for s in &requested {
            if !scenario.sensors.contains(s) {
                return Err(err(format!("sensor {s} is not part of the scenario")));
            }
        }
        scenario.sensors = requested.into_iter().collect();
    }
    scenario.validate().map_err(err)?;
    Ok(scenario)
}

pub fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let scenario = load_scenario_with_overrides(
        &args.scenario,
        args.seed,
        args.transactions,
        args.sensors.as_deref(),
        None,
    )?;
    let triples = generate_dataset(&scenario).map_err(err)?;
    let mut store = RecordStore::new();
    let mut counts: BTreeMap<(SensorKind, String), u64> = BTreeMap::new();
    for triple in &triples {
        store.append_triple(triple).map_err(err)?;
        *counts
            .entry((triple.sensor, triple.location.clone()))
            .or_default() += 1;
    }
    store.save(&args.store).map_err(err)?;
    println!("store written to {}", args.store.display());
    for ((sensor, location), n) in &counts {
        println!("sensor={sensor} location={location} transactions={n}");
    }
    println!("total transactions: {}", triples.len());
    Ok(())
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let scenario = load_scenario_with_overrides(
        &args.scenario,
        args.seed,
        args.transactions,
        args.sensors.as_deref(),
        args.recording_ms,
    )?;
    let sensors: Vec<SensorKind> = match args.sensors.as_deref() {
        Some(spec) => parse_sensor_list(spec)?,
        None => scenario.sensors.iter().copied().collect(),
    };
    let faults = match &args.faults {
        Some(path) => FaultSchedule::load(path).map_err(err)?,
        None => FaultSchedule::empty(),
    };
    let n = scenario.n_transactions;
    let mut harness = match args.live_port {
        Some(port) => Harness::new_live(scenario, port).map_err(err)?,
        None => Harness::new_emulated(scenario).map_err(err)?,
    };
    let summary = harness.run_session(&sensors, n, &faults).map_err(err)?;
    harness.store().save(&args.store).map_err(err)?;
    println!("store written to {}", args.store.display());
    println!(
        "attempted={} stored={} discarded_inconsistent={} discarded_incomplete={}",
        summary.attempted,
        summary.stored,
        summary.discarded_inconsistent,
        summary.discarded_incomplete
    );
    Ok(())
}

pub fn cmd_ingest(args: IngestArgs) -> Result<(), CliError> {
    let format = match args.format.as_deref() {
        Some(spec) => {
            FileFormat::parse(spec).ok_or_else(|| err(format!("unknown format {spec:?}")))?
        }
        None => match args.input.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => FileFormat::Jsonl,
            Some("csv") => FileFormat::Csv,
            other => {
                return Err(err(format!(
                    "cannot infer format from extension {other:?}; pass --format"
                )))
            }
        },
    };
    let mut store = RecordStore::new();
    store.ingest(&args.input, format).map_err(err)?;
    store.save(&args.store).map_err(err)?;
    println!(
        "ingested {} traces into {}",
        store.len(),
        args.store.display()
    );
    Ok(())
}

struct EvalOutput {
    rows1: Vec<SummaryRow>,
    rows2: Vec<SummaryRow>,
    diagnostics: Vec<String>,
}

fn curve_path(out: &Path, sensor: SensorKind, metric: SimilarityMetric, eval_no: u8) -> PathBuf {
    out.join("curves")
        .join(format!("{}_{}_eval{eval_no}.csv", sensor.slug(), metric.slug()))
}

fn write_curve(
    out: &Path,
    sensor: SensorKind,
    metric: SimilarityMetric,
    eval_no: u8,
    result: &SweepResult,
) -> Result<(), CliError> {
    let path = curve_path(out, sensor, metric, eval_no);
    let mut buf = Vec::new();
    write_curve_csv(result, &mut buf).map_err(err)?;
    fs::write(&path, buf).map_err(err)?;
    Ok(())
}

fn diag_line(sensor: SensorKind, metric: SimilarityMetric, eval_no: u8, set: &ScoredSet) -> String {
    format!(
        "sensor={} metric={} eval={} attempted={} scored={} excluded={} positives={} negatives={}",
        sensor.slug(),
        metric.slug(),
        eval_no,
        set.attempted(),
        set.pairs.len(),
        set.exclusions.len(),
        set.positives(),
        set.negatives()
    )
}

pub fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let store = RecordStore::load(&args.store).map_err(err)?;
    if store.is_empty() {
        return Err(err(format!(
            "store {} contains no traces",
            args.store.display()
        )));
    }
    let available = store.sensors();
    let sensors: Vec<SensorKind> = match args.sensors.as_deref() {
        Some(spec) => {
            let requested = parse_sensor_list(spec)?;
            for s in &requested {
                if !available.contains(s) {
                    return Err(err(format!("store has no rows for sensor {s}")));
                }
            }
            requested
        }
        None => available,
    };
    let metrics = parse_metric_list(args.metrics.as_deref())?;
    let out = default_out(args.out);
    fs::create_dir_all(out.join("curves")).map_err(err)?;

    let mut output = EvalOutput {
        rows1: Vec::new(),
        rows2: Vec::new(),
        diagnostics: Vec::new(),
    };
    for &sensor in &sensors {
        let triples = store.join_triples(sensor);
        if triples.len() < 2 {
            output.diagnostics.push(format!(
                "sensor={} skipped: insufficient data ({} joinable triples, need 2)",
                sensor.slug(),
                triples.len()
            ));
            continue;
        }
        for &metric in &metrics {
            for (eval_no, set) in [
                (1u8, score_eval1(&triples, metric)),
                (2u8, score_eval2(&triples, metric)),
            ] {
                let set = match set {
                    Ok(set) => set,
                    Err(e) => {
                        output.diagnostics.push(format!(
                            "sensor={} metric={} eval={eval_no} failed: {e}",
                            sensor.slug(),
                            metric.slug()
                        ));
                        continue;
                    }
                };
                output
                    .diagnostics
                    .push(diag_line(sensor, metric, eval_no, &set));
                match sweep(&set.pairs, metric) {
                    Ok(result) => {
                        write_curve(&out, sensor, metric, eval_no, &result)?;
                        let row = SummaryRow {
                            sensor: sensor.canonical_name().to_string(),
                            metric,
                            optimum_threshold: result.optimum_threshold,
                            eer: result.eer,
                            counts: result.counts_at_optimum,
                        };
                        if eval_no == 1 {
                            output.rows1.push(row);
                        } else {
                            output.rows2.push(row);
                        }
                    }
                    Err(e) => output.diagnostics.push(format!(
                        "sensor={} metric={} eval={eval_no} sweep failed: {e}",
                        sensor.slug(),
                        metric.slug()
                    )),
                }
            }
        }
    }

    for (name, rows) in [("summary_eval1.csv", &output.rows1), ("summary_eval2.csv", &output.rows2)] {
        let mut buf = Vec::new();
        write_summary_csv(rows, &mut buf).map_err(err)?;
        fs::write(out.join(name), buf).map_err(err)?;
    }
    fs::write(out.join("diagnostics.txt"), output.diagnostics.join("\n") + "\n").map_err(err)?;

    print!("{}", render_summaries(&output.rows1, &output.rows2));
    println!("outputs written to {}", out.display());
    Ok(())
}

fn threshold_rows(rows: &[SummaryRow]) -> Vec<ThresholdRow> {
    let mut by_sensor: Vec<(String, ThresholdRow)> = Vec::new();
    for r in rows {
        let entry = match by_sensor.iter_mut().find(|(s, _)| *s == r.sensor) {
            Some((_, row)) => row,
            None => {
                by_sensor.push((
                    r.sensor.clone(),
                    ThresholdRow {
                        sensor: r.sensor.clone(),
                        mae_threshold: f64::NAN,
                        mae_eer: f64::NAN,
                        corr_threshold: f64::NAN,
                        corr_eer: f64::NAN,
                    },
                ));
                &mut by_sensor.last_mut().unwrap().1
            }
        };
        match r.metric {
            SimilarityMetric::Mae => {
                entry.mae_threshold = r.optimum_threshold;
                entry.mae_eer = r.eer;
            }
            SimilarityMetric::Pearson => {
                entry.corr_threshold = r.optimum_threshold;
                entry.corr_eer = r.eer;
            }
        }
    }
    by_sensor.into_iter().map(|(_, row)| row).collect()
}

fn breakdown_rows(rows2: &[SummaryRow]) -> Vec<BreakdownRow> {
    let mut out: Vec<BreakdownRow> = Vec::new();
    for r in rows2 {
        let entry = match out.iter_mut().find(|b| b.sensor == r.sensor) {
            Some(b) => b,
            None => {
                out.push(BreakdownRow {
                    sensor: r.sensor.clone(),
                    mae: Default::default(),
                    corr: Default::default(),
                });
                out.last_mut().unwrap()
            }
        };
        match r.metric {
            SimilarityMetric::Mae => entry.mae = r.counts,
            SimilarityMetric::Pearson => entry.corr = r.counts,
        }
    }
    out
}

fn render_summaries(rows1: &[SummaryRow], rows2: &[SummaryRow]) -> String {
    let mut out = String::new();
    if !rows1.is_empty() {
        out.push_str(&render_threshold_table(
            "Optimum Thresholds and EERs for Evaluation 1",
            &threshold_rows(rows1),
        ));
        out.push('\n');
    }
    if !rows2.is_empty() {
        out.push_str(&render_threshold_table(
            "Optimum Thresholds and EERs for Evaluation 2",
            &threshold_rows(rows2),
        ));
        out.push('\n');
        let breakdown = breakdown_rows(rows2);
        out.push_str(&render_breakdown_table(
            "Breakdown of TPs, TNs, FPs and FNs for Evaluation 2",
            &breakdown,
        ));
        out.push('\n');
        out.push_str("Label conservation (tp+fn, tn+fp):\n");
        out.push_str(&render_conservation_lines(&breakdown));
        out.push('\n');
    }
    out
}

pub fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let out = default_out(args.out);
    let read_rows = |name: &str| -> Result<Vec<SummaryRow>, CliError> {
        let path = out.join(name);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&path).map_err(err)?;
        proxeval_core::eval::parse_summary_csv(&text).map_err(err)
    };
    let rows1 = read_rows("summary_eval1.csv")?;
    let rows2 = read_rows("summary_eval2.csv")?;
    if rows1.is_empty() && rows2.is_empty() {
        return Err(err(format!(
            "nothing to report: no evaluation outputs in {}",
            out.display()
        )));
    }
    print!("{}", render_summaries(&rows1, &rows2));
    let diag_path = out.join("diagnostics.txt");
    if diag_path.exists() {
        println!("Exclusion diagnostics (attempted vs scored vs excluded):");
        print!("{}", fs::read_to_string(&diag_path).map_err(err)?);
    }
    Ok(())
}
