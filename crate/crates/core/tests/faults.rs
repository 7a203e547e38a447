mod common;

use binospec::ids::NodeId;
use binospec::mapreduce::MofStatus;
use binospec::speculator::PolicyKind;
use common::*;

fn two_jobs(nodes: u32, faults: &str) -> String {
    format!(
        r#"
[cluster]
nodes = {nodes}
slots_per_node = 4
size_neighbor = 2

[[jobs]]
input_size = "1GB"

[[jobs]]
input_size = "512MB"
arrival_ms = 3000

{faults}
"#
    )
}

#[test]
fn failing_a_failed_node_again_changes_nothing() {
    let once = r#"
[[faults]]
at = 20000
kind = "node_fail"
target = "node:1"
"#;
    let twice = format!(
        "{once}
[[faults]]
at = 25000
kind = \"node_fail\"
target = \"node:1\"
"
    );
    for policy in [PolicyKind::Yarn, PolicyKind::Bino] {
        let a = simulate(&scenario(&two_jobs(4, once)), policy, 1);
        let b = simulate(&scenario(&two_jobs(4, &twice)), policy, 1);
        assert_eq!(a.world.launches, b.world.launches, "{policy}");
        assert_eq!(a.world.mofs, b.world.mofs, "{policy}");
        for j in 0..2 {
            assert_eq!(job_ms(&a, j), job_ms(&b, j), "{policy}");
        }
    }
}

#[test]
fn node_failure_loses_every_output_stored_there() {
    let mut lost = 0;
    for nodes in 1..=5u32 {
        for victim in 0..nodes {
            // Fail once job 0's maps are done, so there is output to lose.
            let text = two_jobs(
                nodes,
                &format!(
                    r#"
[[faults]]
at = "map_progress=1.0"
kind = "node_fail"
target = "node:{victim}"
job = 0
"#
                ),
            );
            let mut s = scenario(&text);
            // Keep a single-node cluster from running forever.
            s.sim.until_ms = 2_000_000;
            for policy in [PolicyKind::Off, PolicyKind::Yarn, PolicyKind::Bino] {
                let o = simulate(&s, policy, 0);
                let on_victim: Vec<_> = o.world.mofs.iter().filter(|m| m.node == NodeId(victim)).collect();
                lost += on_victim.len();
                assert!(
                    on_victim.iter().all(|m| m.status == MofStatus::Lost),
                    "{nodes} nodes, victim {victim}, {policy}"
                );
                assert!(
                    o.world.mofs.iter().filter(|m| m.node != NodeId(victim)).all(|m| m.status == MofStatus::Available),
                    "{nodes} nodes, victim {victim}, {policy}"
                );
            }
        }
    }
    assert!(lost > 0);
}

#[test]
fn progress_triggers_fire_once() {
    let text = two_jobs(
        6,
        r#"
[[faults]]
at = "map_progress=0.3"
kind = "mof_loss"
target = "random_completed_map"
job = 0

[[faults]]
at = "map_progress=0.6"
kind = "node_slow"
factor = 3.0
duration_ms = 5000
target = "busy"
job = 1

[[faults]]
at = "spill=2"
kind = "disk_exception"
target = "map:1"
job = 1
"#,
    );
    let s = scenario(&text);
    for policy in [PolicyKind::Off, PolicyKind::Yarn, PolicyKind::Bino] {
        for seed in 0..5 {
            let o = simulate(&s, policy, seed);
            for entry in 0..3 {
                let fired = o.world.faults.iter().filter(|f| f.entry == entry).count();
                assert!(fired <= 1, "entry {entry} fired {fired} times under {policy}");
            }
        }
    }
}
