//! Experiment driver: runs a scenario against its fault-free reference and
//! writes the CSV outputs.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::metrics::{job_records, summarize, summary_row, write_csv, MetricsRecord, SummaryRow};
use crate::scenario::{sweep_combinations, Scenario, ScenarioError};
use crate::sim::SimError;
use crate::simulation::{run, SimOutcome};
use crate::speculator::PolicyKind;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write csv: {0}")]
    Csv(#[from] csv::Error),
}

pub struct Experiment {
    pub outcome: SimOutcome,
    pub reference: SimOutcome,
    pub records: Vec<MetricsRecord>,
}

/// Runs `policy` on the scenario and the same seed with faults removed and
/// speculation off.
pub fn run_experiment(scenario: &Scenario, policy: PolicyKind, seed: u64, trace: bool) -> Result<Experiment, RunError> {
    let input = scenario.build_input(policy, seed, trace)?;
    let ref_input = scenario.fault_free().build_input(PolicyKind::Off, seed, false)?;
    let (outcome, reference) = rayon::join(|| run(&input), || run(&ref_input));
    let (outcome, reference) = (outcome?, reference?);
    let records = job_records(&outcome, &reference);
    Ok(Experiment {
        outcome,
        reference,
        records,
    })
}

#[derive(Serialize)]
struct PdfRow {
    policy: String,
    bin_start: f64,
    bin_end: f64,
    count: u32,
    density: f64,
}

#[derive(Serialize)]
struct CdfRow {
    policy: String,
    slowdown: f64,
    cumulative: f64,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, RunError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes jobs.csv, summary.csv, pdf.csv, cdf.csv, faults.csv and, when
/// traced, trace.txt into `dir`.
pub fn write_outputs(exp: &Experiment, bin_width: f64, dir: &Path) -> Result<SummaryRow, RunError> {
    fs::create_dir_all(dir)?;
    let policy = exp.outcome.policy.to_string();
    write_csv(create(dir, "jobs.csv")?, &exp.records)?;
    let mut row = summary_row(&exp.records, bin_width);
    row.policy = policy.clone();
    write_csv(create(dir, "summary.csv")?, std::slice::from_ref(&row))?;

    let slowdowns: Vec<f64> = exp.records.iter().filter_map(|r| r.slowdown).collect();
    let dist = summarize(&slowdowns, bin_width);
    let pdf: Vec<PdfRow> = dist
        .iter()
        .flat_map(|d| d.pdf.iter())
        .map(|b| PdfRow {
            policy: policy.clone(),
            bin_start: b.bin_start,
            bin_end: b.bin_end,
            count: b.count,
            density: b.density,
        })
        .collect();
    write_csv(create(dir, "pdf.csv")?, &pdf)?;
    let cdf: Vec<CdfRow> = dist
        .iter()
        .flat_map(|d| d.cdf.iter())
        .map(|p| CdfRow {
            policy: policy.clone(),
            slowdown: p.value,
            cumulative: p.cumulative,
        })
        .collect();
    write_csv(create(dir, "cdf.csv")?, &cdf)?;
    write_csv(create(dir, "faults.csv")?, &exp.outcome.world.faults)?;
    if exp.outcome.trace.enabled() {
        fs::write(dir.join("trace.txt"), exp.outcome.trace.render())?;
    }
    Ok(row)
}

/// One sweep point: its overrides and the aggregate it produced.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub overrides: Vec<(String, String)>,
    pub dir: PathBuf,
    pub summary: SummaryRow,
}

fn point_dir(overrides: &[(String, String)]) -> String {
    let parts: Vec<String> = overrides
        .iter()
        .map(|(k, v)| {
            let v: String = v.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
            format!("{k}={v}")
        })
        .collect();
    parts.join(",")
}

/// Runs the cross product of `axes` in parallel, one output directory per
/// combination, and writes a merged `sweep_summary.csv` in `out`.
pub fn run_sweep(
    text: &str,
    axes: &[(String, Vec<String>)],
    policy: PolicyKind,
    seed: u64,
    trace: bool,
    out: &Path,
) -> Result<Vec<SweepPoint>, RunError> {
    let combos = sweep_combinations(axes);
    // Parse everything up front so a bad value fails before any run starts.
    let scenarios: Vec<Scenario> = combos
        .iter()
        .map(|c| Scenario::parse(text, c))
        .collect::<Result<_, _>>()?;
    let points: Vec<SweepPoint> = combos
        .into_par_iter()
        .zip(scenarios.into_par_iter())
        .map(|(overrides, scenario)| {
            let dir = out.join(point_dir(&overrides));
            let exp = run_experiment(&scenario, policy, seed, trace)?;
            let summary = write_outputs(&exp, scenario.output.pdf_bin_width, &dir)?;
            Ok(SweepPoint { overrides, dir, summary })
        })
        .collect::<Result<_, RunError>>()?;

    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_writer(create(out, "sweep_summary.csv")?);
    let mut header: Vec<String> = axes.iter().map(|(k, _)| k.clone()).collect();
    header.extend(
        [
            "policy",
            "jobs",
            "incomplete",
            "mean_slowdown",
            "std_slowdown",
            "mean_exec_ms",
            "spec_tasks",
            "wasted_work",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in &points {
        let s = &p.summary;
        let mut rec: Vec<String> = p.overrides.iter().map(|(_, v)| v.clone()).collect();
        rec.extend([
            s.policy.clone(),
            s.jobs.to_string(),
            s.incomplete.to_string(),
            opt(s.mean_slowdown),
            opt(s.std_slowdown),
            opt(s.mean_exec_ms),
            s.spec_tasks.to_string(),
            s.wasted_work.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(points)
}
