#![allow(dead_code)]

use binospec::ids::{JobId, TaskId};
use binospec::mapreduce::AttemptState;
use binospec::metrics::exec_time;
use binospec::runner::{run_experiment, Experiment};
use binospec::scenario::Scenario;
use binospec::simulation::{run, SimOutcome};
use binospec::speculator::PolicyKind;

pub fn scenario(text: &str) -> Scenario {
    Scenario::parse(text, &[]).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

pub fn simulate(s: &Scenario, policy: PolicyKind, seed: u64) -> SimOutcome {
    run(&s.build_input(policy, seed, false).unwrap()).unwrap()
}

pub fn experiment(s: &Scenario, policy: PolicyKind, seed: u64) -> Experiment {
    run_experiment(s, policy, seed, false).unwrap()
}

pub fn job_ms(o: &SimOutcome, job: u32) -> u64 {
    exec_time(o, JobId(job)).unwrap_or_else(|| panic!("job {job} did not finish under {}", o.policy))
}

/// Attempts of finished jobs that are still marked running.
pub fn leftover_running(o: &SimOutcome) -> usize {
    o.world
        .attempts
        .iter()
        .filter(|a| a.state == AttemptState::Running && o.world.job(a.task.job).is_finished())
        .count()
}

/// Time the task's winning attempt finished.
pub fn task_finished_at(o: &SimOutcome, task: TaskId) -> Option<u64> {
    let t = o.world.task(task);
    t.succeeded_attempt.and_then(|a| o.world.attempt(a).finished_at).map(|t| t.0)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pop_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// One job packed on a single node that fails halfway through its maps.
pub const PACKED_NODE_FAILURE: &str = r#"
[cluster]
nodes = 8
slots_per_node = 8
size_neighbor = 4

[[jobs]]
input_size = "1GB"

[[faults]]
at = "map_progress=0.5"
kind = "node_fail"
target = "busy"
job = 0
"#;

/// A finished map's output disappears before the reducer fetches it.
pub const MOF_LOSS: &str = r#"
[cluster]
nodes = 8
slots_per_node = 8
size_neighbor = 4

[[jobs]]
input_size = "1GB"

[[faults]]
at = "map_progress=1.0"
kind = "mof_loss"
target = "random_completed_map"
job = 0
"#;

pub fn disk_exception_at_spill(k: u32) -> String {
    format!(
        r#"
[cluster]
nodes = 8
slots_per_node = 8

[[jobs]]
input_size = "1GB"
home_node = 0

[[faults]]
at = "spill={k}"
kind = "disk_exception"
target = "map:0"
job = 0
"#
    )
}
