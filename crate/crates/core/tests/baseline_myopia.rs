//! Properties of the serial YARN-style speculator.

mod common;

use binospec::ids::{JobId, TaskKind};
use binospec::speculator::{LaunchReason, PolicyKind};
use common::*;

const SLOW_NODES: &str = r#"
[cluster]
nodes = 8
slots_per_node = 8

[[jobs]]
input_size = "10GB"

[[jobs]]
input_size = "4GB"
arrival_ms = 2000

[[faults]]
at = 5000
kind = "node_slow"
factor = 4.0
duration_ms = 400000
target = "node:0"

[[faults]]
at = 5000
kind = "node_slow"
factor = 4.0
duration_ms = 400000
target = "node:3"
"#;

#[test]
fn speculative_launches_are_spaced_by_the_fixed_delay() {
    let s = scenario(SLOW_NODES);
    let delay = s.policy.baseline.fixed_delay_between_speculations_ms;
    let mut gaps = 0;
    for seed in 0..3 {
        let o = simulate(&s, PolicyKind::Yarn, seed);
        for job in 0..2 {
            let times: Vec<u64> = o
                .world
                .launches
                .iter()
                .filter(|l| l.task.job == JobId(job) && l.reason == LaunchReason::Speculative)
                .map(|l| l.at)
                .collect();
            for w in times.windows(2) {
                assert!(w[1] - w[0] >= delay, "job {job} seed {seed}: {times:?}");
                gaps += 1;
            }
        }
    }
    assert!(gaps > 0, "no job speculated twice");
}

#[test]
fn lost_output_is_not_rerun_before_the_fetch_failure_limit() {
    let s = scenario(MOF_LOSS);
    let limit = s.job_profile.max_fetch_failures;
    for seed in 0..10 {
        let o = simulate(&s, PolicyKind::Yarn, seed);
        let reruns: Vec<_> = o
            .world
            .launches
            .iter()
            .filter(|l| l.task.kind == TaskKind::Map && l.reason != LaunchReason::Original)
            .collect();
        assert!(!reruns.is_empty(), "seed {seed}: lost output never recomputed");
        for l in reruns {
            let reached = o
                .world
                .fetch_failures
                .iter()
                .filter(|f| f.map == l.task.index && f.at <= l.at)
                .map(|f| f.consecutive)
                .max()
                .unwrap_or(0);
            assert!(
                reached >= limit,
                "seed {seed}: map {} rerun at {} after {reached} fetch failures",
                l.task.index,
                l.at
            );
        }
    }
}

#[test]
fn job_on_a_dead_node_gets_no_copies_before_the_timeout() {
    let s = scenario(PACKED_NODE_FAILURE);
    let timeout = s.policy.baseline.task_timeout_ms;
    for seed in 0..10 {
        let o = simulate(&s, PolicyKind::Yarn, seed);
        let failed_at = o.world.faults.first().expect("the node failure fires").at;
        let early = o
            .world
            .launches
            .iter()
            .filter(|l| l.reason.is_speculative() && l.at < failed_at + timeout)
            .count();
        assert_eq!(early, 0, "seed {seed}");
        // Yet the job does finish once the timeout frees its tasks.
        assert!(job_ms(&o, 0) > timeout);
    }
}
