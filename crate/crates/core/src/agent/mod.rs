//! The learning agent: one decision per batch of sensing samples, visiting
//! every managed node in index order.
//!
//! Per node the decision runs, in order: extender relocation, zero-cost
//! probing while no user has traffic, trigger-driven channel selection, and
//! the control gate. Rewards are network throughput in Mbps.

pub mod exploration;
pub mod guidance;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ApplyOutcome, World, SENTINEL_UTILIZATION};
use crate::error::EnvError;
use crate::kb::KnowledgeBase;
use crate::model::{channel_tuples, Action, Channel, NetworkGraph, NodeId, Role};
use crate::perception::{correct_activity, node_trigger, PerceptionSnapshot, TriggerState, TriggerThresholds};
use crate::phy::{self, Rssi};

use exploration::{
    propose_location, recommend_location, select_action_type, zero_cost_explore, ActionType, RepositionReason,
};
use guidance::{
    boltzmann, control_gate, exploration_probability_update, guided_exploit, guided_explore, GateVerdict, NodeContext,
};

const MBPS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Spectrum-guided exploration with the control gate.
    Guided,
    /// Plain softmax exploration, greedy exploitation, no gate.
    Unguided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentParams {
    pub eta: f64,
    pub gamma: f64,
    pub epsilon0: f64,
    pub temperature: f64,
    pub temperature_decay: f64,
    pub temperature_floor: f64,
    pub sigma: f64,
    pub improvement_gate: f64,
    pub exploit_band: f64,
    pub prob_band: f64,
    /// Quiet decisions before a poor location value prompts a move.
    pub location_patience: usize,
    pub max_relocations: usize,
    /// Per-user cap on the throughput estimate used while users are idle.
    pub probe_demand_cap_mbps: f64,
    pub zero_cost: bool,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            eta: 0.7,
            gamma: 0.0,
            epsilon0: 1.0,
            temperature: 50.0,
            temperature_decay: 0.95,
            temperature_floor: 1.0,
            sigma: 100.0,
            improvement_gate: 1.15,
            exploit_band: 0.85,
            prob_band: 0.9,
            location_patience: 10,
            max_relocations: 3,
            probe_demand_cap_mbps: 5.0,
            zero_cost: true,
        }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<(), String> {
        let unit = [self.eta, self.gamma, self.epsilon0, self.exploit_band, self.prob_band];
        if unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err("eta, gamma, epsilon0, exploit_band and prob_band must lie in [0, 1]".into());
        }
        if !(self.temperature > 0.0 && self.temperature_floor > 0.0 && self.sigma > 0.0) {
            return Err("temperature, temperature_floor and sigma must be positive".into());
        }
        if !(self.temperature_decay > 0.0 && self.temperature_decay <= 1.0) {
            return Err("temperature_decay must lie in (0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Location,
    Probe,
    Revert,
    Explore,
    Exploit,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Location => "location",
            Policy::Probe => "probe",
            Policy::Revert => "revert",
            Policy::Explore => "explore",
            Policy::Exploit => "exploit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Applied,
    Kept,
    /// Links failed to come back; the node fell back to its best-known tuple.
    Failed,
    Rejected,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Applied => "applied",
            Verdict::Kept => "kept",
            Verdict::Failed => "failed",
            Verdict::Rejected => "rejected",
        })
    }
}

/// One row of the action log.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionRecord {
    pub epoch: u64,
    pub node: NodeId,
    pub policy: Policy,
    pub action: Action,
    pub verdict: Verdict,
    pub reward_mbps: f64,
    pub q: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecisionReport {
    /// Configuration changes made by relocation or channel selection.
    pub applied: usize,
    pub probes: usize,
    pub reward_mbps: f64,
    pub records: Vec<ActionRecord>,
}

#[derive(Debug, Clone)]
struct NodeLearning {
    epsilon: f64,
    temperature: f64,
    actions: Vec<Vec<Channel>>,
    quiet: usize,
    relocations: usize,
    returned: bool,
    visited_locations: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
struct PendingProbe {
    node: NodeId,
    saved: Vec<Vec<Channel>>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    params: AgentParams,
    thresholds: TriggerThresholds,
    variant: Variant,
    q_target: f64,
    kb: KnowledgeBase,
    nodes: BTreeMap<NodeId, NodeLearning>,
    rng: ChaCha8Rng,
    probe_cursor: usize,
    pending_probe: Option<PendingProbe>,
    log: Vec<ActionRecord>,
}

fn location_index(world: &World, node: NodeId) -> usize {
    world.grid().nearest(world.graph().location(node)).grid_index
}

impl Agent {
    /// `total_demand_mbps` sets the default location-value target.
    pub fn new(
        world: &World,
        params: AgentParams,
        thresholds: TriggerThresholds,
        variant: Variant,
        total_demand_mbps: f64,
        seed: u64,
    ) -> Self {
        let graph = world.graph();
        let n = graph.n_channels();
        let nodes = graph
            .managed()
            .map(|id| {
                let radios = graph.nodes()[id.0].radios;
                let learning = NodeLearning {
                    epsilon: params.epsilon0,
                    temperature: params.temperature,
                    actions: channel_tuples(radios, n),
                    quiet: 0,
                    relocations: 0,
                    returned: false,
                    visited_locations: BTreeSet::from([location_index(world, id)]),
                };
                (id, learning)
            })
            .collect();
        Self {
            q_target: thresholds.q_target.unwrap_or(0.5 * total_demand_mbps),
            kb: KnowledgeBase::new(world.grid().len(), n),
            nodes,
            rng: ChaCha8Rng::seed_from_u64(seed),
            probe_cursor: 0,
            pending_probe: None,
            log: Vec::new(),
            params,
            thresholds,
            variant,
        }
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn log(&self) -> &[ActionRecord] {
        &self.log
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn params(&self) -> &AgentParams {
        &self.params
    }

    pub fn q_target(&self) -> f64 {
        self.q_target
    }

    pub fn epsilon(&self, node: NodeId) -> Option<f64> {
        self.nodes.get(&node).map(|n| n.epsilon)
    }

    pub fn temperature(&self, node: NodeId) -> Option<f64> {
        self.nodes.get(&node).map(|n| n.temperature)
    }

    pub fn probe_pending(&self) -> bool {
        self.pending_probe.is_some()
    }

    /// Writes the sensed utilizations into the channel-location table.
    fn observe(&mut self, snap: &PerceptionSnapshot, world: &World) {
        for &(node, ch, u) in &snap.survey {
            self.kb.channel_location.record(location_index(world, node), ch, u);
        }
        for r in &snap.radios {
            self.kb.channel_location.record(location_index(world, r.node), r.channel, r.utilization);
        }
    }

    /// Capacity the agent expects a link to offer, from its RSSI and the
    /// utilization recorded at the receiving managed end.
    fn estimate_link(&self, world: &World, graph: &NetworkGraph, snap: &PerceptionSnapshot, child: NodeId) -> f64 {
        let Some(link) = graph.link_of(child) else { return 0.0 };
        let rssi = match graph.nodes()[child.0].role {
            Role::Extender => snap.backhaul_rssi.get(&child),
            _ => snap.user_rssi.get(&child),
        }
        .copied()
        .unwrap_or_else(|| phy::rssi_at(graph.location(link.parent), graph.location(child), world.phy()).dbm());
        let at = if graph.nodes()[child.0].is_managed() { child } else { link.parent };
        let u = self.kb.channel_location.get(location_index(world, at), link.channel).unwrap_or(0.0).clamp(0.0, 100.0);
        let rmax = phy::link_rmax(Rssi::new(rssi), world.phy());
        phy::link_throughput(rmax, u).unwrap_or(0.0)
    }

    /// Reward in Mbps: measured goodput while traffic flows, otherwise the
    /// capped path-capacity estimate.
    fn reward(&self, world: &World, graph: &NetworkGraph, snap: &PerceptionSnapshot) -> f64 {
        if snap.users.iter().any(|u| !u.idle) {
            return snap.users.iter().map(|u| u.goodput_bps).sum::<f64>() / MBPS;
        }
        let cap = self.params.probe_demand_cap_mbps;
        let users: Vec<NodeId> = graph.users().collect();
        if users.is_empty() {
            return graph.extenders().map(|e| (self.estimate_link(world, graph, snap, e) / MBPS).min(cap)).sum();
        }
        users
            .iter()
            .map(|&u| {
                let path = graph.path_of(u).map(|p| p.links).unwrap_or_default();
                let min =
                    path.iter().map(|l| self.estimate_link(world, graph, snap, l.child)).fold(f64::INFINITY, f64::min);
                if min.is_finite() {
                    (min / MBPS).min(cap)
                } else {
                    0.0
                }
            })
            .sum()
    }

    fn context<'a>(&'a self, world: &World, node: NodeId) -> NodeContext<'a> {
        let graph = world.graph();
        let mut links = Vec::new();
        if let Some(up) = graph.nodes()[node.0].uplink {
            links.push((up.radio, location_index(world, up.parent)));
        }
        for c in graph.children(node) {
            if graph.nodes()[c.0].is_managed() {
                let up = graph.nodes()[c.0].uplink.expect("child has uplink");
                links.push((up.parent_radio, location_index(world, c)));
            }
        }
        NodeContext { node, location: location_index(world, node), links, table: &self.kb.channel_location }
    }

    /// Highest-Q tuple known at `state`, else the current tuple.
    fn best_known(&self, node: NodeId, state: usize, current: &[Channel]) -> Vec<Channel> {
        let mut best: Option<(&[Channel], f64)> = None;
        for (c, q) in self.kb.q.state_entries(node, state) {
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((c, q));
            }
        }
        best.map_or_else(|| current.to_vec(), |(c, _)| c.to_vec())
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        epoch: u64,
        node: NodeId,
        policy: Policy,
        action: Action,
        verdict: Verdict,
        reward: f64,
        q: f64,
    ) {
        let epsilon = self.nodes[&node].epsilon;
        self.log.push(ActionRecord { epoch, node, policy, action, verdict, reward_mbps: reward, q, epsilon });
    }

    fn decay_temperature(&mut self, node: NodeId) {
        let p = &self.params;
        let n = self.nodes.get_mut(&node).expect("managed node");
        n.temperature = (n.temperature * p.temperature_decay).max(p.temperature_floor);
    }

    /// One decision over all managed nodes.
    pub fn decide(&mut self, world: &mut World, snapshot: &PerceptionSnapshot) -> Result<DecisionReport, EnvError> {
        let epoch = world.epoch();
        let graph = world.graph().clone();
        let snap = correct_activity(snapshot, &graph);
        self.kb.perception.refresh(&snap, &graph);
        self.observe(&snap, world);
        let reward = self.reward(world, &graph, &snap);
        let start = self.log.len();
        let mut report = DecisionReport { reward_mbps: reward, ..Default::default() };

        let managed: Vec<NodeId> = graph.managed().collect();
        for &node in &managed {
            let state = location_index(world, node);
            let p = &self.params;
            let before = self.kb.q.get(node, state, graph.channels_of(node));
            let after = self.kb.q.update(node, state, graph.channels_of(node), reward, p.eta, p.gamma);
            let (sigma, psi) = (p.sigma, 1.0 / self.nodes[&node].actions.len() as f64);
            let n = self.nodes.get_mut(&node).expect("managed node");
            n.epsilon = exploration_probability_update(n.epsilon, after - before, sigma, psi);
        }

        if let Some(probe) = self.pending_probe.take() {
            world.restore_configuration(&probe.saved);
            let channels = probe.saved[probe.node.0].clone();
            let q = self.kb.q.get(probe.node, location_index(world, probe.node), &channels);
            let action = Action::ChannelConfig { node: probe.node, channels };
            self.record(epoch, probe.node, Policy::Revert, action, Verdict::Applied, reward, q);
        }

        let idle = snap.users.iter().all(|u| u.idle);
        let probe_node = if idle && self.params.zero_cost && !managed.is_empty() {
            let n = managed[self.probe_cursor % managed.len()];
            self.probe_cursor += 1;
            Some(n)
        } else {
            None
        };

        // A node whose tuple was rewritten by a neighbour this round has not
        // been observed in its new configuration yet.
        let start_config = world.channel_configuration();
        for &node in &managed {
            if self.relocate(world, &snap, node, idle, reward, epoch, &mut report)? {
                continue;
            }
            if world.graph().channels_of(node) != start_config[node.0].as_slice() {
                continue;
            }
            if probe_node == Some(node) {
                self.probe(world, node, reward, epoch, &mut report)?;
                continue;
            }
            if idle {
                continue;
            }
            let graph = world.graph().clone();
            if node_trigger(&snap, &self.thresholds, &graph, node) == TriggerState::Suboptimal {
                let applied = report.applied;
                self.select_channels(world, node, reward, epoch, &mut report)?;
                let learning = self.nodes.get_mut(&node).expect("managed node");
                if report.applied > applied {
                    learning.quiet = 0;
                } else {
                    learning.quiet += 1;
                }
            } else {
                self.fall_back(world, node, reward, epoch, &mut report)?;
                self.nodes.get_mut(&node).expect("managed node").quiet += 1;
            }
        }
        report.records = self.log[start..].to_vec();
        Ok(report)
    }

    /// Quiet node sitting on a tuple clearly worse than its best-known one
    /// goes back to the best-known tuple.
    fn fall_back(
        &mut self,
        world: &mut World,
        node: NodeId,
        reward: f64,
        epoch: u64,
        report: &mut DecisionReport,
    ) -> Result<(), EnvError> {
        let state = location_index(world, node);
        let current = world.graph().channels_of(node).to_vec();
        let best = self.best_known(node, state, &current);
        if best == current {
            return Ok(());
        }
        let q_best = self.kb.q.get(node, state, &best);
        let q_cur = self.kb.q.get(node, state, &current);
        if q_cur == 0.0 || control_gate(q_best, q_cur, self.params.improvement_gate) != GateVerdict::Apply {
            return Ok(());
        }
        let action = Action::ChannelConfig { node, channels: best };
        match world.apply_action(&action)? {
            ApplyOutcome::Applied => {
                report.applied += 1;
                self.record(epoch, node, Policy::Revert, action, Verdict::Applied, reward, q_best);
            }
            ApplyOutcome::ReestablishFailed { .. } => {
                self.record(epoch, node, Policy::Revert, action, Verdict::Failed, reward, q_best)
            }
        }
        Ok(())
    }

    /// Relocation policy. Returns whether the node moved.
    #[allow(clippy::too_many_arguments)]
    fn relocate(
        &mut self,
        world: &mut World,
        snap: &PerceptionSnapshot,
        node: NodeId,
        idle: bool,
        reward: f64,
        epoch: u64,
        report: &mut DecisionReport,
    ) -> Result<bool, EnvError> {
        let graph = world.graph().clone();
        let n = &graph.nodes()[node.0];
        if n.role != Role::Extender {
            return Ok(false);
        }
        let state = location_index(world, node);
        let max_q = self.kb.q.max_q(node, state);
        let kind = select_action_type(
            true,
            snap.backhaul_rssi.get(&node).copied(),
            max_q,
            self.thresholds.rssi_min,
            self.q_target,
        );
        let learning = &self.nodes[&node];
        let target = match kind {
            ActionType::ChannelPhase => return Ok(false),
            ActionType::Reposition(RepositionReason::LowValue) => {
                if idle || learning.quiet < self.params.location_patience || learning.returned {
                    return Ok(false);
                }
                if learning.relocations >= self.params.max_relocations {
                    let best = self
                        .kb
                        .q
                        .states(node)
                        .into_iter()
                        .fold(None, |acc: Option<(usize, f64)>, (s, q)| match acc {
                            Some((_, b)) if b >= q => acc,
                            _ => Some((s, q)),
                        })
                        .map(|(s, _)| s);
                    self.nodes.get_mut(&node).expect("managed node").returned = true;
                    match best.and_then(|s| world.grid().location(s)) {
                        Some(loc) if loc.grid_index != state => loc,
                        _ => return Ok(false),
                    }
                } else {
                    let parent = graph.location(n.uplink.expect("extender has uplink").parent);
                    let users: Vec<_> = graph.users_through(node).into_iter().map(|u| graph.location(u)).collect();
                    match recommend_location(parent, &users, world.grid(), &learning.visited_locations, &mut self.rng) {
                        Some(loc) => loc,
                        None => propose_location(
                            graph.location(node),
                            parent,
                            world.grid(),
                            &learning.visited_locations,
                            &mut self.rng,
                        ),
                    }
                }
            }
            ActionType::Reposition(RepositionReason::Coverage) => {
                let parent = graph.location(n.uplink.expect("extender has uplink").parent);
                propose_location(graph.location(node), parent, world.grid(), &learning.visited_locations, &mut self.rng)
            }
        };
        if target.grid_index == state {
            return Ok(false);
        }
        let channels = graph.channels_of(node);
        let q_new = self.kb.q.get(node, target.grid_index, channels);
        let q_cur = self.kb.q.get(node, state, channels);
        let action = Action::Reposition { node, target };
        if control_gate(q_new, q_cur, self.params.improvement_gate) == GateVerdict::Keep {
            self.record(epoch, node, Policy::Location, action, Verdict::Kept, reward, q_new);
            return Ok(false);
        }
        world.apply_action(&action)?;
        let learning = self.nodes.get_mut(&node).expect("managed node");
        learning.visited_locations.insert(target.grid_index);
        learning.relocations += 1;
        learning.quiet = 0;
        self.decay_temperature(node);
        report.applied += 1;
        self.record(epoch, node, Policy::Location, action, Verdict::Applied, reward, q_new);
        Ok(true)
    }

    /// Zero-cost probe: try one tuple while nobody is using the network; it
    /// is undone at the next decision.
    fn probe(
        &mut self,
        world: &mut World,
        node: NodeId,
        reward: f64,
        epoch: u64,
        report: &mut DecisionReport,
    ) -> Result<(), EnvError> {
        let state = location_index(world, node);
        let here = state;
        let table = &self.kb.channel_location;
        let blocked = |a: &[Channel]| a.iter().any(|&c| table.get(here, c) == Some(SENTINEL_UTILIZATION));
        let actions = &self.nodes[&node].actions;
        let idx = match zero_cost_explore(node, state, actions, &self.kb.q, 0, blocked, &mut self.rng) {
            Ok(i) => i,
            Err(_) => return Ok(()),
        };
        let tuple = actions[idx].clone();
        if tuple.as_slice() == world.graph().channels_of(node) {
            return Ok(());
        }
        let saved = world.channel_configuration();
        let action = Action::ChannelConfig { node, channels: tuple.clone() };
        let q = self.kb.q.get(node, state, &tuple);
        match world.apply_action(&action) {
            Ok(ApplyOutcome::Applied) => {
                self.pending_probe = Some(PendingProbe { node, saved });
                report.probes += 1;
                self.record(epoch, node, Policy::Probe, action, Verdict::Applied, reward, q);
            }
            Ok(ApplyOutcome::ReestablishFailed { saturated }) => {
                self.mark_saturated(world, &saturated);
                world.restore_configuration(&saved);
                self.record(epoch, node, Policy::Probe, action, Verdict::Failed, reward, q);
            }
            Err(EnvError::Violations(_)) => {
                self.record(epoch, node, Policy::Probe, action, Verdict::Rejected, reward, q);
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn mark_saturated(&mut self, world: &World, saturated: &[(NodeId, Channel)]) {
        for &(n, ch) in saturated {
            self.kb.channel_location.record(location_index(world, n), ch, SENTINEL_UTILIZATION);
        }
    }

    /// Trigger-driven channel selection followed by the gate.
    fn select_channels(
        &mut self,
        world: &mut World,
        node: NodeId,
        reward: f64,
        epoch: u64,
        report: &mut DecisionReport,
    ) -> Result<(), EnvError> {
        let state = location_index(world, node);
        let current = world.graph().channels_of(node).to_vec();
        let xi: f64 = self.rng.random();
        let learning = &self.nodes[&node];
        let actions = learning.actions.clone();
        let (idx, policy) = match self.variant {
            Variant::Guided => {
                if xi < learning.epsilon {
                    let ctx = self.context(world, node);
                    let i = guided_explore(
                        &ctx,
                        &self.kb.q,
                        state,
                        &actions,
                        &current,
                        learning.temperature,
                        self.params.prob_band,
                    );
                    (Some(i), Policy::Explore)
                } else {
                    (
                        guided_exploit(node, &self.kb.q, state, &actions, &current, self.params.exploit_band),
                        Policy::Exploit,
                    )
                }
            }
            Variant::Unguided => {
                let qs: Vec<f64> = actions.iter().map(|a| self.kb.q.get(node, state, a)).collect();
                if xi < learning.epsilon {
                    let probs = boltzmann(&qs, learning.temperature);
                    let draw: f64 = self.rng.random();
                    let mut acc = 0.0;
                    let mut pick = probs.len() - 1;
                    for (i, p) in probs.iter().enumerate() {
                        acc += p;
                        if draw < acc {
                            pick = i;
                            break;
                        }
                    }
                    (Some(pick), Policy::Explore)
                } else {
                    let mut best = 0;
                    for (i, &q) in qs.iter().enumerate() {
                        if q > qs[best] {
                            best = i;
                        }
                    }
                    (Some(best), Policy::Exploit)
                }
            }
        };
        let proposed = idx.map_or_else(|| current.clone(), |i| actions[i].clone());
        let q_p = self.kb.q.get(node, state, &proposed);
        let action = Action::ChannelConfig { node, channels: proposed.clone() };
        let verdict = if proposed == current {
            GateVerdict::Keep
        } else if self.variant == Variant::Unguided {
            GateVerdict::Apply
        } else {
            control_gate(q_p, self.kb.q.get(node, state, &current), self.params.improvement_gate)
        };
        if verdict == GateVerdict::Keep {
            self.record(epoch, node, policy, action, Verdict::Kept, reward, q_p);
            return Ok(());
        }
        let fallback = self.best_known(node, state, &current);
        world.set_fallback(node, fallback);
        match world.apply_action(&action) {
            Ok(ApplyOutcome::Applied) => {
                report.applied += 1;
                self.decay_temperature(node);
                self.record(epoch, node, policy, action, Verdict::Applied, reward, q_p);
            }
            Ok(ApplyOutcome::ReestablishFailed { saturated }) => {
                report.applied += 1;
                self.mark_saturated(world, &saturated);
                self.decay_temperature(node);
                self.record(epoch, node, policy, action, Verdict::Failed, reward, q_p);
            }
            Err(EnvError::Violations(_)) => {
                self.record(epoch, node, policy, action, Verdict::Rejected, reward, q_p);
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }
}
