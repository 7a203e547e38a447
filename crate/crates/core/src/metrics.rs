//! Per-job records, slowdown against a fault-free reference, and
//! distribution summaries.

use std::io::Write;

use serde::Serialize;

use crate::ids::JobId;
use crate::mapreduce::{AttemptState, JobState};
use crate::simulation::SimOutcome;

/// One row of `jobs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub job_id: u32,
    pub input_size: u64,
    pub policy: String,
    /// Absent when the job did not finish.
    pub exec_time_ms: Option<u64>,
    pub baseline_ms: Option<u64>,
    pub slowdown: Option<f64>,
    pub spec_tasks: u32,
    pub wasted_work: f64,
}

impl MetricsRecord {
    pub fn is_complete(&self) -> bool {
        self.slowdown.is_some()
    }
}

pub fn compute_slowdown(exec_ms: u64, reference_ms: u64) -> Option<f64> {
    if reference_ms == 0 {
        None
    } else {
        Some(exec_ms as f64 / reference_ms as f64)
    }
}

/// Execution time of a job that finished successfully.
pub fn exec_time(outcome: &SimOutcome, job: JobId) -> Option<u64> {
    let j = outcome.world.job(job);
    match (j.state, j.completion_time) {
        (JobState::Done, Some(t)) => Some(t.since(j.arrival_time)),
        _ => None,
    }
}

pub fn job_records(outcome: &SimOutcome, reference: &SimOutcome) -> Vec<MetricsRecord> {
    let w = &outcome.world;
    w.jobs
        .iter()
        .map(|j| {
            let exec = exec_time(outcome, j.id);
            let base = reference.world.jobs.get(j.id.0 as usize).and_then(|_| exec_time(reference, j.id));
            let spec_tasks = w
                .launches
                .iter()
                .filter(|l| l.task.job == j.id && l.reason.is_speculative())
                .count() as u32;
            let wasted_work = j
                .tasks()
                .flat_map(|t| t.attempts.iter())
                .map(|a| w.attempt(*a))
                .filter(|a| a.state == AttemptState::Killed)
                .map(|a| a.progress)
                .sum();
            MetricsRecord {
                job_id: j.id.0,
                input_size: j.input_size,
                policy: outcome.policy.to_string(),
                exec_time_ms: exec,
                baseline_ms: base,
                slowdown: exec.zip(base).and_then(|(e, b)| compute_slowdown(e, b)),
                spec_tasks,
                wasted_work,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdfBin {
    pub bin_start: f64,
    pub bin_end: f64,
    pub count: u32,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfPoint {
    pub value: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub pdf: Vec<PdfBin>,
    pub cdf: Vec<CdfPoint>,
}

/// Mean, population deviation, fixed-width histogram and empirical CDF.
/// `None` for an empty sample.
pub fn summarize(values: &[f64], bin_width: f64) -> Option<Distribution> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    let width = if bin_width > 0.0 { bin_width } else { 1.0 };
    let first = (sorted[0] / width).floor() as i64;
    let last = (sorted[sorted.len() - 1] / width).floor() as i64;
    let mut counts = vec![0u32; (last - first + 1) as usize];
    for v in &sorted {
        counts[((v / width).floor() as i64 - first) as usize] += 1;
    }
    let pdf = counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let start = (first + i as i64) as f64 * width;
            PdfBin {
                bin_start: start,
                bin_end: start + width,
                count: c,
                density: f64::from(c) / (n * width),
            }
        })
        .collect();

    let mut cdf: Vec<CdfPoint> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let cumulative = (i + 1) as f64 / n;
        match cdf.last_mut() {
            Some(p) if p.value == *v => p.cumulative = cumulative,
            _ => cdf.push(CdfPoint { value: *v, cumulative }),
        }
    }
    Some(Distribution {
        count: values.len(),
        mean,
        std,
        pdf,
        cdf,
    })
}

/// Aggregate row for `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub policy: String,
    pub jobs: usize,
    pub incomplete: usize,
    pub mean_slowdown: Option<f64>,
    pub std_slowdown: Option<f64>,
    pub mean_exec_ms: Option<f64>,
    pub spec_tasks: u32,
    pub wasted_work: f64,
}

pub fn summary_row(records: &[MetricsRecord], bin_width: f64) -> SummaryRow {
    let slowdowns: Vec<f64> = records.iter().filter_map(|r| r.slowdown).collect();
    let execs: Vec<f64> = records
        .iter()
        .filter(|r| r.is_complete())
        .filter_map(|r| r.exec_time_ms.map(|e| e as f64))
        .collect();
    let dist = summarize(&slowdowns, bin_width);
    SummaryRow {
        policy: records.first().map(|r| r.policy.clone()).unwrap_or_default(),
        jobs: records.len(),
        incomplete: records.len() - slowdowns.len(),
        mean_slowdown: dist.as_ref().map(|d| d.mean),
        std_slowdown: dist.as_ref().map(|d| d.std),
        mean_exec_ms: summarize(&execs, 1.0).map(|d| d.mean),
        spec_tasks: records.iter().map(|r| r.spec_tasks).sum(),
        wasted_work: records.iter().map(|r| r.wasted_work).sum(),
    }
}

pub fn write_csv<T: Serialize, W: Write>(out: W, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slowdown_examples() {
        assert_eq!(compute_slowdown(90_000, 30_000), Some(3.0));
        assert_eq!(compute_slowdown(30_000, 30_000), Some(1.0));
        assert_eq!(compute_slowdown(1, 0), None);
    }

    #[test]
    fn summary_examples() {
        let d = summarize(&[2.0, 2.0, 2.0], 0.5).unwrap();
        assert_eq!((d.mean, d.std), (2.0, 0.0));
        let d = summarize(&[1.0, 3.0], 0.5).unwrap();
        assert_eq!((d.mean, d.std), (2.0, 1.0));
        assert!(summarize(&[], 0.5).is_none());
    }

    #[test]
    fn pdf_integrates_to_one() {
        let v: Vec<f64> = (0..100).map(|i| 1.0 + f64::from(i % 17) * 0.13).collect();
        let d = summarize(&v, 0.25).unwrap();
        let mass: f64 = d.pdf.iter().map(|b| b.density * (b.bin_end - b.bin_start)).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert_eq!(d.pdf.iter().map(|b| b.count).sum::<u32>(), 100);
    }

    proptest::proptest! {
        #[test]
        fn cdf_is_monotone_and_ends_at_one(v in proptest::collection::vec(0.5f64..20.0, 1..200)) {
            let d = summarize(&v, 0.25).unwrap();
            for w in d.cdf.windows(2) {
                proptest::prop_assert!(w[0].value < w[1].value);
                proptest::prop_assert!(w[0].cumulative <= w[1].cumulative);
            }
            proptest::prop_assert_eq!(d.cdf.last().unwrap().cumulative, 1.0);
        }
    }

    #[test]
    fn csv_has_stable_header() {
        let r = MetricsRecord {
            job_id: 0,
            input_size: 1,
            policy: "yarn".into(),
            exec_time_ms: Some(10),
            baseline_ms: Some(5),
            slowdown: Some(2.0),
            spec_tasks: 1,
            wasted_work: 0.5,
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, &[r]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s.lines().next().unwrap(),
            "job_id,input_size,policy,exec_time_ms,baseline_ms,slowdown,spec_tasks,wasted_work"
        );
    }
}
