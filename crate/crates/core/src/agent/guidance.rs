//! Spectrum-aware guidance for action selection: channel diversity,
//! utilization, hidden-node and contention impacts, the Boltzmann
//! distribution over Q-values, and the distance-weighted ranking factor.

use crate::kb::{ChannelLocationTable, QTable};
use crate::model::{Channel, NodeId};

/// Guard added to the guidance denominator.
pub const RHO_GUARD: f64 = 1e-9;

/// Spectral neighbourhood used for contention.
const CONTENTION_SPAN: i32 = 5;

/// Where a node sits and which links it terminates, for guidance lookups.
#[derive(Debug, Clone)]
pub struct NodeContext<'a> {
    pub node: NodeId,
    /// Grid index of the node.
    pub location: usize,
    /// `(own radio, grid index of the peer)` for every link of the node.
    pub links: Vec<(usize, usize)>,
    pub table: &'a ChannelLocationTable,
}

impl NodeContext<'_> {
    fn u(&self, location: usize, channel: Channel) -> Option<f64> {
        self.table.get(location, channel)
    }

    fn u_here(&self, channel: Channel) -> f64 {
        self.u(self.location, channel).unwrap_or(0.0)
    }
}

/// `1 + Σ_d Σ_{d'≠d} |h_d − h_d'|` over ordered pairs.
pub fn channel_diversity(channels: &[Channel]) -> f64 {
    let mut sum = 0.0;
    for (i, &a) in channels.iter().enumerate() {
        for (j, &b) in channels.iter().enumerate() {
            if i != j {
                sum += (a as f64 - b as f64).abs();
            }
        }
    }
    1.0 + sum
}

/// Summed utilization of the action's channels at the node's location.
pub fn utilization_impact(ctx: &NodeContext<'_>, channels: &[Channel]) -> f64 {
    channels.iter().map(|&h| ctx.u_here(h)).sum()
}

/// Utilization asymmetry across each link of the node, ×100. Links with an
/// unsensed end are skipped.
pub fn hidden_impact(ctx: &NodeContext<'_>, channels: &[Channel]) -> f64 {
    ctx.links
        .iter()
        .filter_map(|&(radio, peer)| {
            let h = *channels.get(radio)?;
            let here = ctx.u(ctx.location, h)?;
            let there = ctx.u(peer, h)?;
            Some((here - there).abs() * 100.0)
        })
        .sum()
}

/// Overlap-weighted utilization of the channels within five of each radio's
/// channel, divided by 50.
pub fn contention_impact(ctx: &NodeContext<'_>, channels: &[Channel]) -> f64 {
    let n = ctx.table.n_channels() as i32;
    let mut sum = 0.0;
    for &hd in channels {
        let hd = hd as i32;
        for h in (hd - CONTENTION_SPAN).max(1)..=(hd + CONTENTION_SPAN).min(n) {
            if h != hd {
                sum += (CONTENTION_SPAN - (h - hd).abs()) as f64 * ctx.u_here(h as Channel);
            }
        }
    }
    sum / 50.0
}

/// Environment probability `CD / (UI + HI + CI)`.
pub fn environment_probability(ctx: &NodeContext<'_>, channels: &[Channel]) -> f64 {
    let denom = utilization_impact(ctx, channels) + hidden_impact(ctx, channels) + contention_impact(ctx, channels);
    channel_diversity(channels) / (denom + RHO_GUARD)
}

/// Softmax of `q / temperature`, computed stably.
pub fn boltzmann(q: &[f64], temperature: f64) -> Vec<f64> {
    if q.is_empty() {
        return Vec::new();
    }
    let t = temperature.max(f64::MIN_POSITIVE);
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = q.iter().map(|&x| ((x - max) / t).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|x| x / sum).collect()
}

pub fn euclidean(a: &[Channel], b: &[Channel]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// Channel diversity of the candidate times its distance from the current tuple.
pub fn kappa(current: &[Channel], candidate: &[Channel]) -> f64 {
    channel_diversity(candidate) * euclidean(current, candidate)
}

/// VDBE value-difference term.
pub fn value_difference(eta_delta: f64, sigma: f64) -> f64 {
    let e = (-(eta_delta.abs()) / sigma).exp();
    (1.0 - e) / (1.0 + e)
}

pub fn exploration_probability_update(epsilon: f64, eta_delta: f64, sigma: f64, psi: f64) -> f64 {
    let psi = psi.clamp(0.0, 1.0);
    (psi * value_difference(eta_delta, sigma) + (1.0 - psi) * epsilon).clamp(0.0, 1.0)
}

/// Index of the largest `kappa` among `candidates`; ties go to the earliest.
fn argmax_kappa(current: &[Channel], actions: &[Vec<Channel>], candidates: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &i in candidates {
        let k = kappa(current, &actions[i]);
        if best.is_none_or(|(_, b)| k > b) {
            best = Some((i, k));
        }
    }
    best.map(|(i, _)| i)
}

/// Combined selection probabilities `min(ρ_o, ρ_u)` over `actions`.
pub fn selection_probabilities(
    ctx: &NodeContext<'_>,
    q: &QTable,
    state: usize,
    actions: &[Vec<Channel>],
    temperature: f64,
) -> Vec<f64> {
    let qs: Vec<f64> = actions.iter().map(|a| q.get(ctx.node, state, a)).collect();
    boltzmann(&qs, temperature)
        .into_iter()
        .zip(actions)
        .map(|(po, a)| po.min(environment_probability(ctx, a)))
        .collect()
}

/// Guided exploration: keep actions whose combined probability is within
/// `prob_band` of the best, then pick the highest `kappa`.
pub fn guided_explore(
    ctx: &NodeContext<'_>,
    q: &QTable,
    state: usize,
    actions: &[Vec<Channel>],
    current: &[Channel],
    temperature: f64,
    prob_band: f64,
) -> usize {
    let rho = selection_probabilities(ctx, q, state, actions, temperature);
    let max = rho.iter().copied().fold(0.0, f64::max);
    let floor = prob_band * max;
    let mut keep: Vec<usize> = (0..actions.len()).filter(|&i| rho[i] > floor).collect();
    if keep.is_empty() {
        keep = (0..actions.len()).collect();
    }
    argmax_kappa(current, actions, &keep).expect("non-empty action set")
}

/// Guided exploitation: among actions with Q above `band · max Q`, pick the
/// highest `kappa`. `None` when nothing is known yet.
pub fn guided_exploit(
    node: NodeId,
    q: &QTable,
    state: usize,
    actions: &[Vec<Channel>],
    current: &[Channel],
    band: f64,
) -> Option<usize> {
    let qs: Vec<f64> = actions.iter().map(|a| q.get(node, state, a)).collect();
    let max = qs.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    let keep: Vec<usize> = (0..actions.len()).filter(|&i| qs[i] > band * max).collect();
    argmax_kappa(current, actions, &keep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateVerdict {
    Apply,
    Keep,
}

impl GateVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            GateVerdict::Apply => "apply",
            GateVerdict::Keep => "keep",
        }
    }
}

/// Apply unknown actions, or known ones that beat the current Q by the margin.
pub fn control_gate(q_proposed: f64, q_current: f64, margin: f64) -> GateVerdict {
    if q_proposed == 0.0 || q_proposed > margin * q_current {
        GateVerdict::Apply
    } else {
        GateVerdict::Keep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::channel_tuples;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Table rows for the gateway (location 1) and extender (location 2).
    fn measured_table() -> ChannelLocationTable {
        let map = [
            None,
            Some(1e3),
            Some(38.0),
            Some(39.0),
            Some(38.0),
            Some(50.0),
            None,
            Some(40.0),
            Some(74.0),
            None,
            Some(1e3),
        ];
        let ext = [62.0, 1e3, 37.0, 37.0, 61.0, 84.0, 71.0, 35.0, 74.0, 44.0, 1e3];
        let mut t = ChannelLocationTable::new(4, 11);
        for (i, v) in map.iter().enumerate() {
            if let Some(v) = v {
                t.record(1, i as Channel + 1, *v);
            }
        }
        for (i, v) in ext.iter().enumerate() {
            t.record(2, i as Channel + 1, *v);
        }
        t
    }

    fn ext_ctx(t: &ChannelLocationTable) -> NodeContext<'_> {
        NodeContext { node: NodeId(1), location: 2, links: vec![(0, 1)], table: t }
    }

    #[test]
    fn diversity() {
        assert_eq!(channel_diversity(&[1, 11]), 21.0);
        assert_eq!(channel_diversity(&[6, 6]), 1.0);
        assert_eq!(channel_diversity(&[4]), 1.0);
        assert_eq!(channel_diversity(&[4, 10]), 13.0);
    }

    #[test]
    fn utilization_from_table() {
        let t = measured_table();
        assert_eq!(utilization_impact(&ext_ctx(&t), &[3, 8]), 72.0);
    }

    #[test]
    fn hidden_from_table() {
        let t = measured_table();
        // backhaul on 3: 37 at the extender, 38 at the gateway
        assert_relative_eq!(hidden_impact(&ext_ctx(&t), &[3, 8]), 100.0, epsilon = 1e-12);
        // gateway cell for channel 7 is empty: the link is skipped
        assert_eq!(hidden_impact(&ext_ctx(&t), &[7, 8]), 0.0);
    }

    #[test]
    fn contention_hand_case() {
        let mut t = ChannelLocationTable::new(1, 11);
        t.record(1, 1, 10.0);
        t.record(1, 2, 20.0);
        t.record(1, 4, 30.0);
        let ctx = NodeContext { node: NodeId(0), location: 1, links: vec![], table: &t };
        assert!((contention_impact(&ctx, &[3]) - 4.6).abs() <= 1e-12);
    }

    #[test]
    fn kappa_hand_case() {
        assert!((kappa(&[3, 8], &[4, 10]) - 29.068).abs() < 1e-3);
        assert_relative_eq!(kappa(&[3, 8], &[4, 10]), 13.0 * 5f64.sqrt(), epsilon = 1e-12);
        assert_eq!(kappa(&[3, 8], &[3, 8]), 0.0);
    }

    #[test]
    fn vdbe_examples() {
        assert_eq!(value_difference(0.0, 100.0), 0.0);
        assert!((value_difference(100.0, 100.0) - 0.462117).abs() < 1e-6);
        assert!(value_difference(1e6, 100.0) > 0.999_999);
        let psi = 1.0 / 121.0;
        assert_relative_eq!(exploration_probability_update(1.0, 0.0, 100.0, psi), 1.0 - psi, epsilon = 1e-15);
    }

    #[test]
    fn boltzmann_limits() {
        let q = [1.0, 5.0, 3.0];
        let cold = boltzmann(&q, 1e-6);
        assert_relative_eq!(cold[1], 1.0, epsilon = 1e-12);
        let hot = boltzmann(&q, 1e9);
        for p in hot {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn gate_examples() {
        assert_eq!(control_gate(0.0, 10.0, 1.15), GateVerdict::Apply);
        assert_eq!(control_gate(11.0, 10.0, 1.15), GateVerdict::Keep);
        assert_eq!(control_gate(12.0, 10.0, 1.15), GateVerdict::Apply);
    }

    #[test]
    fn exploit_band() {
        let actions = vec![vec![1, 1], vec![1, 11], vec![6, 6], vec![3, 8]];
        let mut q = QTable::new();
        q.set(NodeId(1), 1, &[1, 1], 100.0);
        q.set(NodeId(1), 1, &[1, 11], 90.0);
        q.set(NodeId(1), 1, &[6, 6], 50.0);
        // both band members are eligible; (1,11) is more diverse and farther
        assert_eq!(guided_exploit(NodeId(1), &q, 1, &actions, &[3, 8], 0.85), Some(1));
        let mut single = QTable::new();
        single.set(NodeId(1), 1, &[6, 6], 4.0);
        assert_eq!(guided_exploit(NodeId(1), &single, 1, &actions, &[3, 8], 0.85), Some(2));
        assert_eq!(guided_exploit(NodeId(1), &QTable::new(), 1, &actions, &[3, 8], 0.85), None);
    }

    #[test]
    fn explore_avoids_asymmetric_links() {
        let t = measured_table();
        let ctx = ext_ctx(&t);
        let actions = channel_tuples(2, 11);
        let rho = selection_probabilities(&ctx, &QTable::new(), 2, &actions, 50.0);
        let uniform = 1.0 / 121.0;
        let idx = |a: &[Channel]| actions.iter().position(|x| x == a).unwrap();
        assert!(rho[idx(&[5, 8])] < 0.5 * uniform);
        assert_relative_eq!(rho[idx(&[1, 10])], uniform, epsilon = 1e-15);
        let pick = &actions[guided_explore(&ctx, &QTable::new(), 2, &actions, &[3, 8], 50.0, 0.9)];
        assert_eq!(hidden_impact(&ctx, pick), 0.0, "{pick:?}");
    }

    #[test]
    fn explore_on_clean_spectrum_prefers_far_diverse_tuples() {
        let t = ChannelLocationTable::new(2, 11);
        let ctx = NodeContext { node: NodeId(1), location: 2, links: vec![(0, 1)], table: &t };
        let actions = channel_tuples(2, 11);
        let pick = &actions[guided_explore(&ctx, &QTable::new(), 2, &actions, &[3, 8], 50.0, 0.9)];
        assert_eq!(pick, &vec![11, 1]);
    }

    proptest! {
        #[test]
        fn boltzmann_normalised(q in proptest::collection::vec(-1e3f64..1e3, 1..150), t in 0.01f64..1e4) {
            let p = boltzmann(&q, t);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn epsilon_stays_in_unit_interval(e0 in 0.0f64..=1.0, deltas in proptest::collection::vec(-1e6f64..1e6, 0..60), n in 1usize..200) {
            let mut e = e0;
            for d in deltas {
                e = exploration_probability_update(e, d, 100.0, 1.0 / n as f64);
                prop_assert!((0.0..=1.0).contains(&e));
            }
        }

        #[test]
        fn diversity_floor(ch in proptest::collection::vec(1u8..=11, 1..4)) {
            let cd = channel_diversity(&ch);
            prop_assert!(cd >= 1.0);
            prop_assert_eq!(cd == 1.0, ch.iter().all(|&c| c == ch[0]));
        }

        #[test]
        fn exploit_scale_invariant(qs in proptest::collection::vec(0.0f64..100.0, 9), scale in 0.01f64..100.0, cur in 0usize..9) {
            let actions = channel_tuples(2, 3);
            let mut a = QTable::new();
            let mut b = QTable::new();
            for (i, q) in qs.iter().enumerate() {
                a.set(NodeId(1), 1, &actions[i], *q);
                b.set(NodeId(1), 1, &actions[i], *q * scale);
            }
            let cur = actions[cur].clone();
            let x = guided_exploit(NodeId(1), &a, 1, &actions, &cur, 0.85);
            let y = guided_exploit(NodeId(1), &b, 1, &actions, &cur, 0.85);
            prop_assert_eq!(x, y);
        }

        #[test]
        fn gate_respects_margin(qp in 0.0f64..100.0, qc in 0.0f64..100.0) {
            if qp != 0.0 && qp <= 1.15 * qc {
                prop_assert_eq!(control_gate(qp, qc, 1.15), GateVerdict::Keep);
            }
        }
    }
}
