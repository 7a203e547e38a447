//! Browser bindings for the simulator. Each export takes plain values and
//! returns a JSON string; the page in `www/` draws the results.

use binospec::cluster::ResponsivenessHistory;
use binospec::mapreduce::AttemptState;
use binospec::runner::run_experiment;
use binospec::scenario::Scenario;
use binospec::speculator::bino::wave_size;
use binospec::speculator::PolicyKind;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Runs `scenario` (TOML text) under `policy` and returns per-job results,
/// a per-attempt timeline, the faults that fired and the policy's verdicts.
pub fn simulate(scenario: &str, policy: &str, seed: u64) -> Result<Value, String> {
    let s = Scenario::parse(scenario, &[]).map_err(|e| e.to_string())?;
    let policy: PolicyKind = policy.parse().map_err(|e: String| e)?;
    let exp = run_experiment(&s, policy, seed, false).map_err(|e| e.to_string())?;
    let w = &exp.outcome.world;
    let end = w.now.0;
    let attempts: Vec<Value> = w
        .attempts
        .iter()
        .map(|a| {
            let state = match a.state {
                AttemptState::Running => "running",
                AttemptState::Succeeded => "succeeded",
                AttemptState::Failed => "failed",
                AttemptState::Killed => "killed",
            };
            json!({
                "job": a.task.job.0,
                "task": a.task.to_string(),
                "node": a.node.0,
                "start": a.start_time.0,
                "end": a.finished_at.map(|t| t.0).unwrap_or(end),
                "state": state,
                "speculative": a.speculative,
            })
        })
        .collect();
    Ok(json!({
        "policy": policy.to_string(),
        "nodes": w.cluster.nodes.len(),
        "end": end,
        "jobs": exp.records,
        "attempts": attempts,
        "faults": w.faults,
        "detections": exp.outcome.report.detections,
        "waves": exp.outcome.report.waves,
    }))
}

/// Feeds `losses` (ms a node went silent) one at a time into a node's
/// history and reports the predicted next loss and failure threshold after
/// each, plus whether a silence of `probe_ms` would then count as failure.
pub fn failure_threshold(
    losses: &[u64],
    window_len: usize,
    heartbeat_ms: u64,
    safety_factor: f64,
    probe_ms: u64,
) -> Result<Value, String> {
    if window_len == 0 || heartbeat_ms == 0 || !(safety_factor > 0.0) {
        return Err("window, heartbeat and safety factor must be positive".into());
    }
    let mut h = ResponsivenessHistory::new(window_len, heartbeat_ms, safety_factor);
    let mut steps = vec![json!({
        "loss": null,
        "window": h.window(),
        "estimate": h.estimated_next(),
        "threshold": h.fail_threshold(),
        "probe_failed": probe_ms as f64 > h.fail_threshold(),
    })];
    for &loss in losses {
        h.record(loss);
        steps.push(json!({
            "loss": loss,
            "window": h.window(),
            "estimate": h.estimated_next(),
            "threshold": h.fail_threshold(),
            "probe_failed": probe_ms as f64 > h.fail_threshold(),
        }));
    }
    Ok(json!({ "steps": steps }))
}

/// Sizes of the collective waves needed to cover `stragglers` tasks.
pub fn wave_plan(init: u32, mult: u32, stragglers: u64) -> Result<Value, String> {
    if init == 0 || mult == 0 {
        return Err("initial wave and multiplier must be at least 1".into());
    }
    let mut waves = Vec::new();
    let mut left = stragglers;
    while left > 0 {
        let size = wave_size(init, mult, waves.len() as u32).min(left);
        waves.push(size);
        left -= size;
    }
    Ok(json!({ "waves": waves }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(scenario: &str, policy: &str, seed: u32) -> Result<String, JsError> {
    to_js(simulate(scenario, policy, u64::from(seed)))
}

#[wasm_bindgen(js_name = failureThreshold)]
pub fn failure_threshold_js(
    losses: Vec<u32>,
    window_len: u32,
    heartbeat_ms: u32,
    safety_factor: f64,
    probe_ms: u32,
) -> Result<String, JsError> {
    let losses: Vec<u64> = losses.into_iter().map(u64::from).collect();
    to_js(failure_threshold(
        &losses,
        window_len as usize,
        u64::from(heartbeat_ms),
        safety_factor,
        u64::from(probe_ms),
    ))
}

#[wasm_bindgen(js_name = wavePlan)]
pub fn wave_plan_js(init: u32, mult: u32, stragglers: u32) -> Result<String, JsError> {
    to_js(wave_plan(init, mult, u64::from(stragglers)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PACKED: &str = r#"
[cluster]
nodes = 8
slots_per_node = 8

[[jobs]]
input_size = "1GB"
home_node = 0

[[faults]]
at = "map_progress=0.5"
kind = "node_fail"
target = "node:0"
job = 0
"#;

    #[test]
    fn simulate_reports_timeline_and_faults() {
        let v = simulate(PACKED, "bino", 1).unwrap();
        assert_eq!(v["nodes"], 8);
        assert_eq!(v["jobs"].as_array().unwrap().len(), 1);
        assert_eq!(v["faults"][0]["kind"], "node_fail");
        let attempts = v["attempts"].as_array().unwrap();
        assert!(attempts.iter().any(|a| a["speculative"] == true));
        assert!(attempts.iter().all(|a| a["end"].as_u64() >= a["start"].as_u64()));
        assert_eq!(v["detections"][0]["assessment"], "failure");
    }

    #[test]
    fn simulate_rejects_bad_input() {
        assert!(simulate("[cluster]\nnodes = 0", "bino", 0).is_err());
        assert!(simulate(PACKED, "fastest", 0).is_err());
    }

    #[test]
    fn threshold_follows_the_history() {
        let v = failure_threshold(&[4000, 8000], 4, 1000, 1.5, 6000).unwrap();
        let steps = v["steps"].as_array().unwrap();
        assert_eq!(steps.len(), 3);
        assert_eq!(steps[0]["threshold"], 10000.0);
        assert_eq!(steps[0]["probe_failed"], false);
        // Window [4000, 8000]: (4*8000 + 2*4000) / 6, times 1.5.
        let est = steps[2]["estimate"].as_f64().unwrap();
        assert!((est - 40000.0 / 6.0).abs() < 1e-9);
        assert!((steps[2]["threshold"].as_f64().unwrap() - 10000.0).abs() < 1e-9);
        assert!(failure_threshold(&[], 0, 1000, 1.5, 0).is_err());
    }

    #[test]
    fn waves_cover_the_stragglers() {
        let v = wave_plan(1, 2, 10).unwrap();
        assert_eq!(v["waves"], json!([1, 2, 4, 3]));
        assert_eq!(wave_plan(3, 1, 7).unwrap()["waves"], json!([3, 3, 1]));
        assert_eq!(wave_plan(2, 4, 0).unwrap()["waves"], json!([]));
        assert!(wave_plan(0, 2, 5).is_err());
    }
}
