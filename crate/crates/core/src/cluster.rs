//! Nodes, container slots, heartbeats and per-node responsiveness history.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ids::{AttemptId, NodeId};
use crate::sim::SimTime;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub nodes: u32,
    pub slots_per_node: u32,
    pub size_neighbor: u32,
    pub heartbeat_interval_ms: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            nodes: 20,
            slots_per_node: 8,
            size_neighbor: 4,
            heartbeat_interval_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Health {
    Healthy,
    Slow(f64),
    Failed,
}

impl Health {
    /// Multiplier applied to heartbeat cadence and task work.
    pub fn slow_factor(self) -> f64 {
        match self {
            Health::Slow(f) => f,
            _ => 1.0,
        }
    }

    pub fn is_failed(self) -> bool {
        matches!(self, Health::Failed)
    }
}

/// Sliding window of lost-responsiveness durations with the exponentially
/// weighted estimate of the next loss and the derived failure threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsivenessHistory {
    window: VecDeque<u64>,
    capacity: usize,
    estimated_next: Option<f64>,
    fail_threshold: f64,
    heartbeat_interval_ms: u64,
    safety_factor: f64,
}

impl ResponsivenessHistory {
    pub fn new(capacity: usize, heartbeat_interval_ms: u64, safety_factor: f64) -> Self {
        assert!(capacity >= 1, "window length must be at least 1");
        Self {
            window: VecDeque::with_capacity(capacity),
            capacity,
            estimated_next: None,
            fail_threshold: 10.0 * heartbeat_interval_ms as f64,
            heartbeat_interval_ms,
            safety_factor,
        }
    }

    /// Oldest first.
    pub fn window(&self) -> Vec<u64> {
        self.window.iter().copied().collect()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn estimated_next(&self) -> Option<f64> {
        self.estimated_next
    }

    pub fn fail_threshold(&self) -> f64 {
        self.fail_threshold
    }

    pub fn record(&mut self, lost_ms: u64) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(lost_ms);
        let est = estimate_next_loss(self.window.make_contiguous());
        self.estimated_next = Some(est);
        self.fail_threshold = fail_threshold_from(est, self.heartbeat_interval_ms, self.safety_factor);
    }
}

/// Weighted estimate of the next lost-responsiveness duration from the last
/// `L = window.len()` observations (oldest first). The newest observation gets
/// weight `2^L`, the oldest weight `2`; the denominator is the weight sum.
pub fn estimate_next_loss(window: &[u64]) -> f64 {
    let l = window.len();
    if l == 0 {
        return 0.0;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 1..=l {
        let weight = 2f64.powi((l + 1 - k) as i32);
        num += weight * window[l - k] as f64;
        den += 2f64.powi(k as i32);
    }
    num / den
}

pub fn fail_threshold_from(estimated_next: f64, heartbeat_interval_ms: u64, safety_factor: f64) -> f64 {
    let floor = 3.0 * heartbeat_interval_ms as f64;
    floor.max(safety_factor * estimated_next)
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub container_slots: u32,
    pub health: Health,
    pub last_heartbeat_at: SimTime,
    pub responsiveness: ResponsivenessHistory,
    pub running_attempts: BTreeSet<AttemptId>,
    /// Multiplier on shuffle transfers that touch this node.
    pub net_delay: f64,
}

impl NodeState {
    pub fn free_slots(&self) -> u32 {
        self.container_slots - self.running_attempts.len() as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeartbeatReport {
    pub node: NodeId,
    pub at: SimTime,
    pub next_at: SimTime,
    /// Gap since the previous heartbeat.
    pub gap_ms: u64,
    pub attempts: Vec<AttemptId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub members: Vec<NodeId>,
}

/// Static partition into consecutive id groups of `size`; a trailing group
/// of one node joins the previous group.
pub fn form_neighborhoods(nodes: u32, size: u32) -> Vec<Neighborhood> {
    let size = size.max(1);
    let mut groups: Vec<Vec<NodeId>> = Vec::new();
    let mut start = 0;
    while start < nodes {
        let end = (start + size).min(nodes);
        groups.push((start..end).map(NodeId).collect());
        start = end;
    }
    if groups.len() > 1 && groups.last().map(|g| g.len() < 2).unwrap_or(false) {
        let tail = groups.pop().unwrap();
        groups.last_mut().unwrap().extend(tail);
    }
    groups
        .into_iter()
        .map(|members| Neighborhood { members })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub config: ClusterConfig,
    pub nodes: Vec<NodeState>,
    pub neighborhoods: Vec<Neighborhood>,
    neighborhood_of: Vec<usize>,
}

impl Cluster {
    pub fn new(config: &ClusterConfig, window_len: usize, safety_factor: f64) -> Self {
        let nodes = (0..config.nodes)
            .map(|i| NodeState {
                id: NodeId(i),
                container_slots: config.slots_per_node,
                health: Health::Healthy,
                last_heartbeat_at: SimTime::ZERO,
                responsiveness: ResponsivenessHistory::new(
                    window_len,
                    config.heartbeat_interval_ms,
                    safety_factor,
                ),
                running_attempts: BTreeSet::new(),
                net_delay: 1.0,
            })
            .collect();
        let neighborhoods = form_neighborhoods(config.nodes, config.size_neighbor);
        let mut neighborhood_of = vec![0; config.nodes as usize];
        for (g, nh) in neighborhoods.iter().enumerate() {
            for m in &nh.members {
                neighborhood_of[m.0 as usize] = g;
            }
        }
        Self {
            config: config.clone(),
            nodes,
            neighborhoods,
            neighborhood_of,
        }
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.nodes[id.0 as usize]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut NodeState {
        &mut self.nodes[id.0 as usize]
    }

    pub fn neighborhood(&self, id: NodeId) -> &Neighborhood {
        &self.neighborhoods[self.neighborhood_of[id.0 as usize]]
    }

    pub fn heartbeat_interval(&self) -> u64 {
        self.config.heartbeat_interval_ms
    }

    /// Records a heartbeat from a live node. Failed nodes are silent.
    pub fn emit_heartbeat(&mut self, id: NodeId, now: SimTime) -> Option<HeartbeatReport> {
        let interval = self.config.heartbeat_interval_ms as f64;
        let node = self.node_mut(id);
        if node.health.is_failed() {
            return None;
        }
        let gap_ms = now.since(node.last_heartbeat_at);
        node.last_heartbeat_at = now;
        let cadence = (interval * node.health.slow_factor()).round() as u64;
        Some(HeartbeatReport {
            node: id,
            at: now,
            next_at: now.plus(cadence.max(1)),
            gap_ms,
            attempts: node.running_attempts.iter().copied().collect(),
        })
    }

    pub fn record_resumed_node(&mut self, id: NodeId, lost_ms: u64) -> &ResponsivenessHistory {
        let node = self.node_mut(id);
        node.responsiveness.record(lost_ms);
        &node.responsiveness
    }

    /// Picks a free container: the first preferred node with room, else the
    /// lowest-id node with room. Failed nodes never receive containers since
    /// allocation rides on their (absent) heartbeats.
    pub fn find_container(&self, preferred: &[NodeId], avoid: &[NodeId]) -> Option<NodeId> {
        let usable = |n: &NodeState| {
            !n.health.is_failed() && n.free_slots() > 0 && !avoid.contains(&n.id)
        };
        preferred
            .iter()
            .map(|id| self.node(*id))
            .find(|n| usable(n))
            .or_else(|| self.nodes.iter().find(|n| usable(n)))
            .map(|n| n.id)
    }

    /// Reserves a slot for `attempt`. Returns `(node, slot index)`.
    pub fn allocate_container(
        &mut self,
        attempt: AttemptId,
        preferred: &[NodeId],
        avoid: &[NodeId],
    ) -> Option<(NodeId, u32)> {
        let id = self.find_container(preferred, avoid)?;
        let node = self.node_mut(id);
        let slot = node.running_attempts.len() as u32;
        node.running_attempts.insert(attempt);
        Some((id, slot))
    }

    pub fn release(&mut self, node: NodeId, attempt: AttemptId) {
        self.node_mut(node).running_attempts.remove(&attempt);
    }

    pub fn free_slots(&self) -> u32 {
        self.nodes
            .iter()
            .filter(|n| !n.health.is_failed())
            .map(|n| n.free_slots())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(nodes: u32, slots: u32) -> Cluster {
        Cluster::new(
            &ClusterConfig {
                nodes,
                slots_per_node: slots,
                size_neighbor: 2,
                heartbeat_interval_ms: 1000,
            },
            4,
            1.5,
        )
    }

    #[test]
    fn healthy_heartbeat_cadence_is_one_second() {
        let mut c = cluster(2, 1);
        let r = c.emit_heartbeat(NodeId(0), SimTime(5000)).unwrap();
        assert_eq!(r.next_at, SimTime(6000));
    }

    #[test]
    fn failed_node_is_silent() {
        let mut c = cluster(2, 1);
        c.node_mut(NodeId(1)).health = Health::Failed;
        assert!(c.emit_heartbeat(NodeId(1), SimTime(5000)).is_none());
    }

    #[test]
    fn slow_node_heartbeat_is_stretched() {
        let mut c = cluster(2, 1);
        c.node_mut(NodeId(0)).health = Health::Slow(2.0);
        let r = c.emit_heartbeat(NodeId(0), SimTime(5000)).unwrap();
        assert_eq!(r.next_at, SimTime(7000));
    }

    #[test]
    fn allocation_prefers_then_falls_back() {
        let mut c = cluster(6, 1);
        assert_eq!(c.allocate_container(AttemptId(0), &[NodeId(3)], &[]), Some((NodeId(3), 0)));
        assert_eq!(c.allocate_container(AttemptId(1), &[NodeId(3)], &[]), Some((NodeId(0), 0)));
        let mut c = cluster(6, 1);
        for n in 0..4 {
            c.node_mut(NodeId(n)).running_attempts.insert(AttemptId(100 + n));
        }
        assert_eq!(c.allocate_container(AttemptId(0), &[NodeId(3)], &[]), Some((NodeId(4), 0)));
    }

    #[test]
    fn saturated_cluster_allocates_nothing() {
        let mut c = cluster(2, 1);
        c.allocate_container(AttemptId(0), &[], &[]).unwrap();
        c.allocate_container(AttemptId(1), &[], &[]).unwrap();
        assert_eq!(c.allocate_container(AttemptId(2), &[], &[]), None);
    }

    #[test]
    fn resumed_node_estimates() {
        let mut h = ResponsivenessHistory::new(1, 1000, 1.5);
        h.record(4000);
        assert_eq!(h.estimated_next(), Some(4000.0));

        let mut h = ResponsivenessHistory::new(2, 1000, 1.5);
        h.record(8000);
        h.record(4000);
        let est = h.estimated_next().unwrap();
        assert!((est - 16000.0 * 2.0 / 6.0).abs() < 1e-9, "{est}");
        assert!((est - 5333.333333333333).abs() < 1e-6);

        let mut h = ResponsivenessHistory::new(3, 1000, 1.5);
        for _ in 0..3 {
            h.record(1000);
        }
        assert_eq!(h.estimated_next(), Some(1000.0));
        assert_eq!(h.window().len(), 3);
        h.record(2000);
        assert_eq!(h.window(), vec![1000, 1000, 2000]);
    }

    #[test]
    fn threshold_starts_conservative_and_tracks_estimate() {
        let mut h = ResponsivenessHistory::new(2, 1000, 1.5);
        assert_eq!(h.fail_threshold(), 10_000.0);
        h.record(1000);
        assert_eq!(h.fail_threshold(), 3000.0);
        h.record(20_000);
        let est = (4.0 * 20_000.0 + 2.0 * 1000.0) / 6.0;
        assert!((h.fail_threshold() - 1.5 * est).abs() < 1e-9);
    }

    #[test]
    fn neighborhoods_partition_nodes() {
        let g = form_neighborhoods(10, 4);
        assert_eq!(g.len(), 3);
        assert_eq!(g[2].members, vec![NodeId(8), NodeId(9)]);
        let g = form_neighborhoods(9, 4);
        assert_eq!(g.len(), 2);
        assert_eq!(g[1].members.len(), 5);
    }

    proptest::proptest! {
        #[test]
        fn neighborhood_partition_property(nodes in 2u32..64, size in 2u32..9) {
            let groups = form_neighborhoods(nodes, size);
            let mut seen = BTreeSet::new();
            for g in &groups {
                proptest::prop_assert!(g.members.len() >= 2);
                for m in &g.members {
                    proptest::prop_assert!(seen.insert(*m), "node in two neighborhoods");
                }
            }
            proptest::prop_assert_eq!(seen.len() as u32, nodes);
        }

        #[test]
        fn newest_loss_dominates(window in proptest::collection::vec(1u64..1_000_000, 2..8), delta in 1u64..10_000) {
            let base = estimate_next_loss(&window);
            let mut newest = window.clone();
            *newest.last_mut().unwrap() += delta;
            let mut oldest = window.clone();
            oldest[0] += delta;
            proptest::prop_assert!(estimate_next_loss(&newest) - base > estimate_next_loss(&oldest) - base);
        }
    }
}
