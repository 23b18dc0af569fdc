//! Indicators derived from successive counter snapshots, the parent-node
//! false-alarm correction, and the optimisation trigger.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::SensingSample;
use crate::error::PerceptionError;
use crate::model::{Channel, NetworkGraph, NodeId};

/// `ρ/u` below this is read as contention the radio did not generate itself.
pub const SELF_TRAFFIC_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioIndicators {
    pub node: NodeId,
    pub radio: usize,
    pub channel: Channel,
    pub utilization: f64,
    pub activity: f64,
}

impl RadioIndicators {
    pub fn external_contention(&self, u_thr: f64) -> bool {
        self.utilization > u_thr && self.activity / self.utilization < SELF_TRAFFIC_RATIO
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserIndicators {
    pub user: NodeId,
    pub retries_rate: f64,
    pub error_rate: f64,
    /// No packets moved during the window; both rates read 0.
    pub idle: bool,
    pub goodput_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerceptionSnapshot {
    pub epoch: u64,
    pub radios: Vec<RadioIndicators>,
    pub users: Vec<UserIndicators>,
    pub backhaul_rssi: BTreeMap<NodeId, f64>,
    pub user_rssi: BTreeMap<NodeId, f64>,
    /// `(node, channel, utilization)` from the neighbour-channel survey.
    pub survey: Vec<(NodeId, Channel, f64)>,
}

impl PerceptionSnapshot {
    pub fn radio(&self, node: NodeId, radio: usize) -> Option<&RadioIndicators> {
        self.radios.iter().find(|r| r.node == node && r.radio == radio)
    }

    pub fn user(&self, user: NodeId) -> Option<&UserIndicators> {
        self.users.iter().find(|u| u.user == user)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerThresholds {
    pub u_thr: f64,
    pub retr_thr: f64,
    pub err_thr: f64,
    pub rssi_min: f64,
    /// Reward (Mbps) below which a location is considered poor. `None`
    /// lets the agent derive it from the offered demand.
    pub q_target: Option<f64>,
}

impl Default for TriggerThresholds {
    fn default() -> Self {
        Self { u_thr: 60.0, retr_thr: 50.0, err_thr: 0.005, rssi_min: -60.0, q_target: None }
    }
}

impl TriggerThresholds {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.u_thr, self.retr_thr, self.err_thr, self.rssi_min, self.q_target.unwrap_or(0.0)];
        if all.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err("trigger thresholds must be finite".into())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerState {
    Quiet,
    Suboptimal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate {
    pub percent: f64,
    /// Set when the packet delta was zero.
    pub undefined: bool,
}

fn check_period(tau_ms: f64) -> Result<(), PerceptionError> {
    if tau_ms > 0.0 {
        Ok(())
    } else {
        Err(PerceptionError::NonPositivePeriod)
    }
}

fn check_monotone(earlier: f64, later: f64) -> Result<(), PerceptionError> {
    if later < earlier {
        Err(PerceptionError::CounterReset { earlier, later })
    } else {
        Ok(())
    }
}

pub fn utilization_from_counters(cb_t: f64, cb_t_tau: f64, tau_ms: f64) -> Result<f64, PerceptionError> {
    check_period(tau_ms)?;
    check_monotone(cb_t, cb_t_tau)?;
    Ok(((cb_t_tau - cb_t) / tau_ms * 100.0).clamp(0.0, 100.0))
}

pub fn activity_from_counters(
    chrx_t: f64,
    chtx_t: f64,
    chrx_t_tau: f64,
    chtx_t_tau: f64,
    tau_ms: f64,
) -> Result<f64, PerceptionError> {
    check_period(tau_ms)?;
    check_monotone(chrx_t, chrx_t_tau)?;
    check_monotone(chtx_t, chtx_t_tau)?;
    let busy = (chrx_t_tau + chtx_t_tau) - (chrx_t + chtx_t);
    Ok((busy / tau_ms * 100.0).clamp(0.0, 100.0))
}

fn ratio(events: u64, packets: u64) -> Rate {
    if packets == 0 {
        Rate { percent: 0.0, undefined: true }
    } else {
        Rate { percent: events as f64 / packets as f64 * 100.0, undefined: false }
    }
}

/// Retries per packet over the window, in percent.
pub fn retries_rate(retr_delta: u64, pack_delta: u64) -> Rate {
    ratio(retr_delta, pack_delta)
}

/// Failed packets per packet over the window, in percent.
pub fn error_rate(err_delta: u64, pack_delta: u64) -> Rate {
    ratio(err_delta, pack_delta)
}

/// Builds the indicator snapshot for the window between two samples.
pub fn perceive(
    prev: &SensingSample,
    next: &SensingSample,
    tau_ms: f64,
) -> Result<PerceptionSnapshot, PerceptionError> {
    check_period(tau_ms)?;
    let mut radios = Vec::new();
    for (&(node, radio), n) in &next.counters.radios {
        let p = prev.counters.radios.get(&(node, radio)).copied().unwrap_or_default();
        let channel = next.channels.get(&node).and_then(|c| c.get(radio)).copied().unwrap_or(0);
        radios.push(RadioIndicators {
            node,
            radio,
            channel,
            utilization: utilization_from_counters(p.cb_time_ms, n.cb_time_ms, tau_ms)?,
            activity: activity_from_counters(p.chrx_time_ms, p.chtx_time_ms, n.chrx_time_ms, n.chtx_time_ms, tau_ms)?,
        });
    }
    let mut users = Vec::new();
    for (&user, n) in &next.counters.users {
        let p = prev.counters.users.get(&user).copied().unwrap_or_default();
        for (e, l) in [(p.n_pack, n.n_pack), (p.n_retr, n.n_retr), (p.n_err, n.n_err), (p.tx_bytes, n.tx_bytes)] {
            check_monotone(e as f64, l as f64)?;
        }
        let packets = n.n_pack - p.n_pack;
        let retr = retries_rate(n.n_retr - p.n_retr, packets);
        let err = error_rate(n.n_err - p.n_err, packets);
        let bytes = (n.tx_bytes - p.tx_bytes) + n.rx_bytes.saturating_sub(p.rx_bytes);
        users.push(UserIndicators {
            user,
            retries_rate: retr.percent,
            error_rate: err.percent,
            idle: retr.undefined,
            goodput_bps: bytes as f64 * 8.0 / (tau_ms / 1000.0),
        });
    }
    Ok(PerceptionSnapshot {
        epoch: next.epoch,
        radios,
        users,
        backhaul_rssi: next.backhaul_rssi.clone(),
        user_rssi: next.user_rssi.clone(),
        survey: next.survey.clone(),
    })
}

/// Replaces a child radio's activity with its parent's when the child looks
/// externally contended but the contention is really the parent talking to
/// it on the shared link channel. Parents are visited before children, so
/// corrected values propagate down the tree; a second pass changes nothing.
pub fn correct_activity(snapshot: &PerceptionSnapshot, graph: &NetworkGraph) -> PerceptionSnapshot {
    let mut out = snapshot.clone();
    let mut order = vec![NodeId::GATEWAY];
    let mut i = 0;
    while i < order.len() {
        let p = order[i];
        order.extend(graph.children(p).filter(|&c| graph.nodes()[c.0].is_managed()));
        i += 1;
    }
    for child in order.into_iter().skip(1) {
        let up = graph.nodes()[child.0].uplink.expect("non-root node has uplink");
        let Some(parent) = out.radio(up.parent, up.parent_radio).copied() else { continue };
        let Some(slot) = out.radios.iter_mut().find(|r| r.node == child && r.radio == up.radio) else { continue };
        if slot.channel != parent.channel || slot.utilization <= 0.0 {
            continue;
        }
        let looks_external = slot.activity / slot.utilization < SELF_TRAFFIC_RATIO;
        let parent_explains = parent.activity / slot.utilization >= SELF_TRAFFIC_RATIO;
        if looks_external && parent_explains && parent.activity > slot.activity {
            slot.activity = parent.activity;
        }
    }
    out
}

fn user_degraded(u: &UserIndicators, thr: &TriggerThresholds) -> bool {
    u.retries_rate > thr.retr_thr || u.error_rate > thr.err_thr
}

pub fn trigger(snapshot: &PerceptionSnapshot, thr: &TriggerThresholds) -> TriggerState {
    let radios = snapshot.radios.iter().any(|r| r.external_contention(thr.u_thr));
    let users = snapshot.users.iter().any(|u| user_degraded(u, thr));
    if radios || users {
        TriggerState::Suboptimal
    } else {
        TriggerState::Quiet
    }
}

/// Trigger restricted to one managed node: its own radios and the users
/// whose paths touch it.
pub fn node_trigger(
    snapshot: &PerceptionSnapshot,
    thr: &TriggerThresholds,
    graph: &NetworkGraph,
    node: NodeId,
) -> TriggerState {
    let radios = snapshot.radios.iter().filter(|r| r.node == node).any(|r| r.external_contention(thr.u_thr));
    let through = graph.users_through(node);
    let users = snapshot.users.iter().filter(|u| through.contains(&u.user)).any(|u| user_degraded(u, thr));
    if radios || users {
        TriggerState::Suboptimal
    } else {
        TriggerState::Quiet
    }
}

/// Gathers the samples that follow a decision. Ready once enough samples
/// arrived or the wait cap elapsed.
#[derive(Debug, Clone)]
pub struct SampleCollector {
    needed: usize,
    max_wait_ms: f64,
    waited_ms: f64,
    samples: Vec<PerceptionSnapshot>,
}

impl SampleCollector {
    pub fn new(needed: usize, max_wait_ms: f64) -> Self {
        Self { needed: needed.max(1), max_wait_ms, waited_ms: 0.0, samples: Vec::new() }
    }

    pub fn push(&mut self, snapshot: PerceptionSnapshot, tau_ms: f64) {
        self.waited_ms += tau_ms;
        self.samples.push(snapshot);
    }

    pub fn ready(&self) -> bool {
        !self.samples.is_empty() && (self.samples.len() >= self.needed || self.waited_ms >= self.max_wait_ms)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Averages the collected windows and starts a new batch.
    pub fn take(&mut self) -> Option<PerceptionSnapshot> {
        if self.samples.is_empty() {
            return None;
        }
        let samples = std::mem::take(&mut self.samples);
        self.waited_ms = 0.0;
        Some(aggregate(&samples))
    }
}

/// Mean of the numeric indicators; identity fields and RSSI come from the
/// latest window.
pub fn aggregate(samples: &[PerceptionSnapshot]) -> PerceptionSnapshot {
    let mut out = samples.last().cloned().unwrap_or_default();
    let n = samples.len() as f64;
    if samples.len() <= 1 {
        return out;
    }
    for r in &mut out.radios {
        let same = samples.iter().filter_map(|s| s.radio(r.node, r.radio));
        let (u, a) = same.fold((0.0, 0.0), |acc, x| (acc.0 + x.utilization, acc.1 + x.activity));
        r.utilization = u / n;
        r.activity = a / n;
    }
    for u in &mut out.users {
        let same: Vec<&UserIndicators> = samples.iter().filter_map(|s| s.user(u.user)).collect();
        u.retries_rate = same.iter().map(|x| x.retries_rate).sum::<f64>() / n;
        u.error_rate = same.iter().map(|x| x.error_rate).sum::<f64>() / n;
        u.goodput_bps = same.iter().map(|x| x.goodput_bps).sum::<f64>() / n;
        u.idle = same.iter().all(|x| x.idle);
    }
    for s in &mut out.survey {
        let vals: Vec<f64> =
            samples.iter().filter_map(|x| x.survey.iter().find(|e| e.0 == s.0 && e.1 == s.1).map(|e| e.2)).collect();
        s.2 = vals.iter().sum::<f64>() / vals.len() as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::fixtures::chain_graph;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn radio(node: usize, r: usize, ch: Channel, u: f64, rho: f64) -> RadioIndicators {
        RadioIndicators { node: NodeId(node), radio: r, channel: ch, utilization: u, activity: rho }
    }

    fn user(id: usize, retr: f64, err: f64) -> UserIndicators {
        UserIndicators { user: NodeId(id), retries_rate: retr, error_rate: err, idle: false, goodput_bps: 0.0 }
    }

    fn snap(radios: Vec<RadioIndicators>, users: Vec<UserIndicators>) -> PerceptionSnapshot {
        PerceptionSnapshot { radios, users, ..Default::default() }
    }

    #[test]
    fn utilization_examples() {
        assert_eq!(utilization_from_counters(0.0, 1000.0, 2000.0).unwrap(), 50.0);
        assert_eq!(utilization_from_counters(500.0, 500.0, 2000.0).unwrap(), 0.0);
        assert_eq!(utilization_from_counters(0.0, 2000.0, 2000.0).unwrap(), 100.0);
        assert!(matches!(utilization_from_counters(10.0, 5.0, 2000.0), Err(PerceptionError::CounterReset { .. })));
        assert!(utilization_from_counters(0.0, 5.0, 0.0).is_err());
    }

    #[test]
    fn activity_examples() {
        assert_eq!(activity_from_counters(0.0, 0.0, 400.0, 600.0, 2000.0).unwrap(), 50.0);
        assert_eq!(activity_from_counters(7.0, 9.0, 7.0, 9.0, 2000.0).unwrap(), 0.0);
        assert_eq!(activity_from_counters(0.0, 0.0, 1500.0, 500.0, 2000.0).unwrap(), 100.0);
        assert!(activity_from_counters(5.0, 0.0, 4.0, 10.0, 2000.0).is_err());
    }

    #[test]
    fn rate_examples() {
        assert_eq!(retries_rate(50, 100), Rate { percent: 50.0, undefined: false });
        assert_eq!(retries_rate(0, 100).percent, 0.0);
        assert_eq!(retries_rate(3, 0), Rate { percent: 0.0, undefined: true });
        assert_relative_eq!(error_rate(1, 20000).percent, 0.005, epsilon = 1e-15);
        assert_eq!(error_rate(0, 10).percent, 0.0);
        assert!(error_rate(0, 0).undefined);
    }

    #[test]
    fn false_alarm_is_corrected() {
        let g = chain_graph(3, [3, 8]);
        let s = snap(vec![radio(0, 0, 3, 68.0, 65.0), radio(1, 0, 3, 70.0, 2.0), radio(1, 1, 8, 10.0, 5.0)], vec![]);
        let c = correct_activity(&s, &g);
        assert_eq!(c.radio(NodeId(1), 0).unwrap().activity, 65.0);
        assert_eq!(c.radio(NodeId(1), 1).unwrap().activity, 5.0);
        assert_eq!(trigger(&s, &TriggerThresholds::default()), TriggerState::Suboptimal);
        assert_eq!(trigger(&c, &TriggerThresholds::default()), TriggerState::Quiet);
    }

    #[test]
    fn correction_leaves_self_traffic_and_roots_alone() {
        let g = chain_graph(3, [3, 8]);
        let s = snap(vec![radio(0, 0, 3, 70.0, 1.0), radio(1, 0, 3, 55.0, 50.0)], vec![]);
        let c = correct_activity(&s, &g);
        assert_eq!(c, s);
    }

    #[test]
    fn quiet_parent_does_not_mask_contention() {
        let g = chain_graph(3, [3, 8]);
        let s = snap(vec![radio(0, 0, 3, 70.0, 1.0), radio(1, 0, 3, 70.0, 2.0)], vec![]);
        assert_eq!(correct_activity(&s, &g), s);
    }

    #[test]
    fn trigger_examples() {
        let thr = TriggerThresholds::default();
        assert_eq!(trigger(&snap(vec![radio(0, 0, 1, 70.0, 3.0)], vec![]), &thr), TriggerState::Suboptimal);
        assert_eq!(trigger(&snap(vec![radio(0, 0, 1, 70.0, 65.0)], vec![]), &thr), TriggerState::Quiet);
        assert_eq!(trigger(&snap(vec![], vec![user(2, 0.0, 0.01)]), &thr), TriggerState::Suboptimal);
        assert_eq!(trigger(&snap(vec![], vec![user(2, 51.0, 0.0)]), &thr), TriggerState::Suboptimal);
        assert_eq!(trigger(&snap(vec![], vec![user(2, 50.0, 0.005)]), &thr), TriggerState::Quiet);
    }

    #[test]
    fn node_trigger_scopes_users_by_path() {
        let g = chain_graph(3, [3, 8]);
        let thr = TriggerThresholds::default();
        let s = snap(vec![radio(0, 0, 3, 5.0, 1.0), radio(1, 0, 3, 5.0, 1.0)], vec![user(2, 0.0, 1.0)]);
        assert_eq!(node_trigger(&s, &thr, &g, NodeId(1)), TriggerState::Suboptimal);
        assert_eq!(node_trigger(&s, &thr, &g, NodeId(0)), TriggerState::Suboptimal);
        let s = snap(vec![radio(1, 1, 8, 90.0, 1.0)], vec![]);
        assert_eq!(node_trigger(&s, &thr, &g, NodeId(0)), TriggerState::Quiet);
        assert_eq!(node_trigger(&s, &thr, &g, NodeId(1)), TriggerState::Suboptimal);
    }

    #[test]
    fn collector_waits_for_batch_or_cap() {
        let mut c = SampleCollector::new(3, 10_000.0);
        c.push(snap(vec![radio(0, 0, 1, 30.0, 0.0)], vec![]), 2000.0);
        c.push(snap(vec![radio(0, 0, 1, 60.0, 0.0)], vec![]), 2000.0);
        assert!(!c.ready());
        c.push(snap(vec![radio(0, 0, 1, 90.0, 6.0)], vec![]), 2000.0);
        assert!(c.ready());
        let s = c.take().unwrap();
        assert_relative_eq!(s.radios[0].utilization, 60.0);
        assert_relative_eq!(s.radios[0].activity, 2.0);
        assert!(c.is_empty());
        let mut capped = SampleCollector::new(10, 3000.0);
        capped.push(PerceptionSnapshot::default(), 2000.0);
        assert!(!capped.ready());
        capped.push(PerceptionSnapshot::default(), 2000.0);
        assert!(capped.ready());
    }

    #[test]
    fn perceive_reads_simulated_counters() {
        use crate::env::fixtures::{external, world_with};
        use crate::model::Point;
        let mut w = world_with(chain_graph(6, [6, 1]), vec![external("ap", Point::new(5.0, 9.0), 6, 0.5 * 65.0)], 0.0);
        let a = w.sense();
        w.step().unwrap();
        let b = w.sense();
        let s = perceive(&a, &b, w.tau_ms()).unwrap();
        let r = s.radio(NodeId(0), 0).unwrap();
        assert_relative_eq!(r.utilization, 50.0, epsilon = 1e-9);
        assert_eq!(r.activity, 0.0);
        assert!(s.user(NodeId(2)).unwrap().idle);
        assert!(perceive(&b, &a, 2000.0).is_err());
    }

    fn radio_strategy() -> impl Strategy<Value = Vec<RadioIndicators>> {
        (0.0f64..100.0, 0.0f64..100.0, 0.0f64..100.0, 0.0f64..100.0, 0.0f64..100.0, 1u8..=3).prop_map(
            |(u0, r0, u1, r1, r2, c)| vec![radio(0, 0, 3, u0, r0), radio(1, 0, 3, u1, r1), radio(1, 1, c, u1, r2)],
        )
    }

    proptest! {
        #[test]
        fn indicators_in_range(a in 0.0f64..1e6, d in 0.0f64..1e6, b in 0.0f64..1e6, e in 0.0f64..1e6, tau in 1.0f64..1e5) {
            let u = utilization_from_counters(a, a + d, tau).unwrap();
            prop_assert!((0.0..=100.0).contains(&u));
            let rho = activity_from_counters(a, b, a + d, b + e, tau).unwrap();
            prop_assert!((0.0..=100.0).contains(&rho));
        }

        #[test]
        fn rates_nonnegative(ev in 0u64..10_000, p in 0u64..10_000) {
            prop_assert!(retries_rate(ev, p).percent >= 0.0);
            prop_assert!(error_rate(ev, p).percent >= 0.0);
        }

        #[test]
        fn correction_idempotent(radios in radio_strategy()) {
            let g = chain_graph(3, [3, 8]);
            let s = snap(radios, vec![]);
            let once = correct_activity(&s, &g);
            prop_assert_eq!(correct_activity(&once, &g), once);
        }

        #[test]
        fn trigger_monotone(u in 0.0f64..100.0, rho in 0.0f64..100.0, du in 0.0f64..50.0, retr in 0.0f64..100.0, dr in 0.0f64..50.0, err in 0.0f64..0.02, de in 0.0f64..0.02) {
            let thr = TriggerThresholds::default();
            let lo = snap(vec![radio(0, 0, 1, u, rho)], vec![user(2, retr, err)]);
            let hi = snap(vec![radio(0, 0, 1, (u + du).min(100.0), rho)], vec![user(2, retr + dr, err + de)]);
            if trigger(&lo, &thr) == TriggerState::Suboptimal {
                prop_assert_eq!(trigger(&hi, &thr), TriggerState::Suboptimal);
            }
        }
    }
}
