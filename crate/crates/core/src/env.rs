//! The simulated world: the managed mesh, non-managed neighbour APs, a timed
//! event list, and the cumulative counters that sensing reads.
//!
//! Time advances in sensing epochs of `tau_ms`. Every epoch the world
//! evaluates the current configuration analytically and folds the result
//! into the counters, so two successive counter snapshots reproduce the
//! indicators a real device would report.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::EnvError;
use crate::model::{Action, Channel, Link, LocationGrid, NetworkGraph, NodeId, Point, Role};
use crate::phy::{self, end_to_end_throughput, link_rmax, link_throughput, LinkShare, PhyParams, Rssi};

/// Utilization value recorded for channels on which links failed to
/// re-establish.
pub const SENTINEL_UTILIZATION: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalAp {
    pub id: String,
    pub location: Point,
    pub channel: Channel,
    pub client_location: Point,
    pub offered_load_bps: f64,
    pub active: bool,
    /// Overrides the default transmit power when set.
    pub tx_power_dbm: Option<f64>,
}

impl ExternalAp {
    /// Fraction of airtime the AP occupies serving its client.
    pub fn airtime(&self, phy: &PhyParams) -> f64 {
        let power = self.tx_power_dbm.unwrap_or(phy.tx_power_dbm);
        let rate = link_rmax(phy::rssi_from(power, self.location, self.client_location, phy), phy);
        if rate <= 0.0 {
            return 1.0;
        }
        (self.offered_load_bps / rate).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RadioCounters {
    pub cb_time_ms: f64,
    pub chrx_time_ms: f64,
    pub chtx_time_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserCounters {
    pub n_retr: u64,
    pub n_err: u64,
    pub n_pack: u64,
    pub tx_bytes: u64,
    pub rx_bytes: u64,
}

/// Cumulative device counters. Monotone between scenario resets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CounterBank {
    pub radios: BTreeMap<(NodeId, usize), RadioCounters>,
    pub users: BTreeMap<NodeId, UserCounters>,
}

impl CounterBank {
    /// Componentwise `self >= earlier`.
    pub fn dominates(&self, earlier: &CounterBank) -> bool {
        let radios = earlier.radios.iter().all(|(k, e)| {
            self.radios.get(k).is_some_and(|n| {
                n.cb_time_ms >= e.cb_time_ms && n.chrx_time_ms >= e.chrx_time_ms && n.chtx_time_ms >= e.chtx_time_ms
            })
        });
        let users = earlier.users.iter().all(|(k, e)| {
            self.users.get(k).is_some_and(|n| {
                n.n_retr >= e.n_retr
                    && n.n_err >= e.n_err
                    && n.n_pack >= e.n_pack
                    && n.tx_bytes >= e.tx_bytes
                    && n.rx_bytes >= e.rx_bytes
            })
        });
        radios && users
    }

    pub fn delta(&self, earlier: &CounterBank) -> CounterBank {
        let radios = self
            .radios
            .iter()
            .map(|(k, n)| {
                let e = earlier.radios.get(k).copied().unwrap_or_default();
                let d = RadioCounters {
                    cb_time_ms: n.cb_time_ms - e.cb_time_ms,
                    chrx_time_ms: n.chrx_time_ms - e.chrx_time_ms,
                    chtx_time_ms: n.chtx_time_ms - e.chtx_time_ms,
                };
                (*k, d)
            })
            .collect();
        let users = self
            .users
            .iter()
            .map(|(k, n)| {
                let e = earlier.users.get(k).copied().unwrap_or_default();
                let d = UserCounters {
                    n_retr: n.n_retr.saturating_sub(e.n_retr),
                    n_err: n.n_err.saturating_sub(e.n_err),
                    n_pack: n.n_pack.saturating_sub(e.n_pack),
                    tx_bytes: n.tx_bytes.saturating_sub(e.tx_bytes),
                    rx_bytes: n.rx_bytes.saturating_sub(e.rx_bytes),
                };
                (*k, d)
            })
            .collect();
        CounterBank { radios, users }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    ActivateExternal {
        id: String,
    },
    DeactivateExternal {
        id: String,
    },
    MoveUser {
        user: NodeId,
        to: Point,
    },
    SetDemand {
        user: NodeId,
        demand_bps: f64,
    },
    /// Switches an external AP on, tuned to the channel `node` currently uses
    /// towards its parent.
    ActivateOnUplink {
        id: String,
        node: NodeId,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTimeline {
    events: Vec<(u64, Event)>,
}

impl EventTimeline {
    pub fn new(events: Vec<(u64, Event)>) -> Result<Self, EnvError> {
        if events.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(EnvError::UnorderedTimeline);
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[(u64, Event)] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Agent-side handling of failed re-establishment and sample batching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SentinelPolicy {
    pub reestablish_timeout_s: f64,
    pub max_wait_s: f64,
    pub samples_per_decision: usize,
    /// Busy percentage on a link channel treated as failure to re-establish.
    pub busy_threshold: f64,
}

impl SentinelPolicy {
    pub const SENTINEL_VALUE: f64 = SENTINEL_UTILIZATION;

    pub fn sentinel_value(&self) -> f64 {
        Self::SENTINEL_VALUE
    }
}

impl Default for SentinelPolicy {
    fn default() -> Self {
        Self { reestablish_timeout_s: 30.0, max_wait_s: 120.0, samples_per_decision: 4, busy_threshold: 98.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TxKey {
    External(usize),
    Managed { node: NodeId, radio: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmitter {
    pub key: TxKey,
    pub location: Point,
    pub channel: Channel,
    pub airtime: f64,
    /// Offered airtime before capping; above 1 when the radio is overloaded.
    pub offered_airtime: f64,
    pub tx_power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub link: Link,
    pub rssi: Rssi,
    pub rmax_bps: f64,
    /// Busy percentage at the receiver from everything but the link's own transmitter.
    pub foreign_utilization: f64,
    /// Rate after the idle-time discount, before hidden-node losses.
    pub capacity_bps: f64,
    pub packet_error_rate: f64,
    pub sharers: usize,
    pub load_bps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub user: NodeId,
    pub demand_bps: f64,
    pub attempted_bps: f64,
    pub delivered_bps: f64,
    pub packet_error_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioState {
    pub node: NodeId,
    pub radio: usize,
    pub channel: Channel,
    pub utilization: f64,
    pub tx_airtime: f64,
    pub rx_airtime: f64,
}

/// Analytic steady state of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub links: Vec<LinkState>,
    pub users: Vec<UserState>,
    pub radios: Vec<RadioState>,
    pub objective_bps: f64,
}

impl Evaluation {
    pub fn link(&self, child: NodeId) -> Option<&LinkState> {
        self.links.iter().find(|l| l.link.child == child)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApplyOutcome {
    Applied,
    /// Links could not come back up; the node was reset to its fallback
    /// configuration. Each entry is a node location and the busy channel.
    ReestablishFailed {
        saturated: Vec<(NodeId, Channel)>,
    },
}

/// Everything one sensing round reports.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingSample {
    pub epoch: u64,
    pub counters: CounterBank,
    pub channels: BTreeMap<NodeId, Vec<Channel>>,
    /// Extender beacon RSSI measured at its parent's location.
    pub backhaul_rssi: BTreeMap<NodeId, f64>,
    /// User RSSI measured at the serving node.
    pub user_rssi: BTreeMap<NodeId, f64>,
    /// Neighbour-channel survey at each managed node: `(node, channel, utilization)`.
    pub survey: Vec<(NodeId, Channel, f64)>,
}

#[derive(Debug, Clone, Default)]
struct UserAccum {
    retr: f64,
    err: f64,
    pack: f64,
    tx_bytes: f64,
}

#[derive(Debug, Clone)]
pub struct World {
    graph: NetworkGraph,
    grid: LocationGrid,
    phy: PhyParams,
    externals: Vec<ExternalAp>,
    demands: BTreeMap<NodeId, f64>,
    counters: CounterBank,
    accum: BTreeMap<NodeId, UserAccum>,
    tau_ms: f64,
    sentinel: SentinelPolicy,
    timeline: EventTimeline,
    next_event: usize,
    epoch: u64,
    fallback: BTreeMap<NodeId, Vec<Channel>>,
    shadowing_db: f64,
    packet_bytes: f64,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub graph: NetworkGraph,
    pub grid: LocationGrid,
    pub phy: PhyParams,
    pub externals: Vec<ExternalAp>,
    pub demands: BTreeMap<NodeId, f64>,
    pub tau_ms: f64,
    pub sentinel: SentinelPolicy,
    pub timeline: EventTimeline,
    pub shadowing_db: f64,
    pub packet_bytes: f64,
    pub seed: u64,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self, EnvError> {
        let mut world = World {
            counters: CounterBank::default(),
            accum: BTreeMap::new(),
            next_event: 0,
            epoch: 0,
            fallback: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_5ad0),
            graph: cfg.graph,
            grid: cfg.grid,
            phy: cfg.phy,
            externals: cfg.externals,
            demands: cfg.demands,
            tau_ms: cfg.tau_ms,
            sentinel: cfg.sentinel,
            timeline: cfg.timeline,
            shadowing_db: cfg.shadowing_db,
            packet_bytes: cfg.packet_bytes,
        };
        for u in world.graph.users().collect::<Vec<_>>() {
            world.demands.entry(u).or_insert(0.0);
            world.counters.users.insert(u, UserCounters::default());
            world.accum.insert(u, UserAccum::default());
        }
        for n in world.graph.managed().collect::<Vec<_>>() {
            for r in 0..world.graph.nodes()[n.0].radios {
                world.counters.radios.insert((n, r), RadioCounters::default());
            }
        }
        Ok(world)
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn grid(&self) -> &LocationGrid {
        &self.grid
    }

    pub fn phy(&self) -> &PhyParams {
        &self.phy
    }

    pub fn externals(&self) -> &[ExternalAp] {
        &self.externals
    }

    pub fn demands(&self) -> &BTreeMap<NodeId, f64> {
        &self.demands
    }

    pub fn counters(&self) -> &CounterBank {
        &self.counters
    }

    pub fn tau_ms(&self) -> f64 {
        self.tau_ms
    }

    pub fn sentinel(&self) -> &SentinelPolicy {
        &self.sentinel
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn timeline(&self) -> &EventTimeline {
        &self.timeline
    }

    /// Replaces the configuration wholesale (baselines and oracles).
    pub fn set_graph(&mut self, graph: NetworkGraph) {
        self.graph = graph;
    }

    /// Channel lists of every node, users included.
    pub fn channel_configuration(&self) -> Vec<Vec<Channel>> {
        self.graph.nodes().iter().map(|n| n.channels.clone()).collect()
    }

    /// Reinstates a configuration captured by [`World::channel_configuration`].
    pub fn restore_configuration(&mut self, config: &[Vec<Channel>]) {
        for (i, ch) in config.iter().enumerate() {
            self.graph.set_channels_raw(NodeId(i), ch.clone());
        }
    }

    pub fn set_fallback(&mut self, node: NodeId, channels: Vec<Channel>) {
        self.fallback.insert(node, channels);
    }

    pub fn set_demand(&mut self, user: NodeId, demand_bps: f64) {
        self.demands.insert(user, demand_bps.max(0.0));
    }

    pub fn set_external_active(&mut self, id: &str, active: bool) -> Result<(), EnvError> {
        let ap =
            self.externals.iter_mut().find(|a| a.id == id).ok_or_else(|| EnvError::UnknownExternal(id.to_string()))?;
        ap.active = active;
        Ok(())
    }

    pub fn add_external(&mut self, ap: ExternalAp) {
        self.externals.push(ap);
    }

    pub fn active_users(&self) -> usize {
        self.demands.values().filter(|&&d| d > 0.0).count()
    }

    /// Per-link offered load: the summed demand of users routed over it.
    fn link_loads(&self, graph: &NetworkGraph) -> BTreeMap<NodeId, (f64, usize)> {
        let mut loads: BTreeMap<NodeId, (f64, usize)> = BTreeMap::new();
        for u in graph.users() {
            let d = self.demands.get(&u).copied().unwrap_or(0.0);
            if d <= 0.0 {
                continue;
            }
            if let Ok(path) = graph.path_of(u) {
                for l in path.links {
                    let e = loads.entry(l.child).or_insert((0.0, 0));
                    e.0 += d;
                    e.1 += 1;
                }
            }
        }
        loads
    }

    fn link_rate(&self, graph: &NetworkGraph, link: &Link) -> (Rssi, f64) {
        let rssi = phy::rssi_at(graph.location(link.parent), graph.location(link.child), &self.phy);
        (rssi, link_rmax(rssi, &self.phy))
    }

    /// Every active transmitter with its airtime. Managed radios transmit
    /// the offered load of the links they serve.
    pub fn transmitters_for(&self, graph: &NetworkGraph) -> Vec<Transmitter> {
        let mut out: Vec<Transmitter> = self
            .externals
            .iter()
            .enumerate()
            .filter(|(_, a)| a.active)
            .map(|(i, a)| Transmitter {
                key: TxKey::External(i),
                location: a.location,
                channel: a.channel,
                airtime: a.airtime(&self.phy),
                offered_airtime: a.airtime(&self.phy),
                tx_power_dbm: a.tx_power_dbm.unwrap_or(self.phy.tx_power_dbm),
            })
            .collect();
        let loads = self.link_loads(graph);
        for node in graph.managed() {
            let n = &graph.nodes()[node.0];
            for (radio, &channel) in n.channels.iter().enumerate() {
                let mut airtime = 0.0;
                for child in graph.children_on(node, radio) {
                    let load = loads.get(&child).map_or(0.0, |l| l.0);
                    if load <= 0.0 {
                        continue;
                    }
                    let link = graph.link_of(child).expect("child has a link");
                    let (_, rmax) = self.link_rate(graph, &link);
                    airtime += if rmax > 0.0 { load / rmax } else { 1.0 };
                }
                if airtime > 0.0 {
                    out.push(Transmitter {
                        key: TxKey::Managed { node, radio },
                        location: n.location,
                        channel,
                        airtime: airtime.min(1.0),
                        offered_airtime: airtime,
                        tx_power_dbm: self.phy.tx_power_dbm,
                    });
                }
            }
        }
        out
    }

    pub fn transmitters(&self) -> Vec<Transmitter> {
        self.transmitters_for(&self.graph)
    }

    fn audible(&self, t: &Transmitter, at: Point) -> bool {
        phy::rssi_from(t.tx_power_dbm, t.location, at, &self.phy).dbm() >= self.phy.cca_threshold_dbm
    }

    fn utilization_among(&self, txs: &[Transmitter], at: Point, channel: Channel, exclude: Option<TxKey>) -> f64 {
        let busy: f64 = txs
            .iter()
            .filter(|t| Some(t.key) != exclude && self.audible(t, at))
            .map(|t| t.airtime * phy::overlap(t.channel, channel) * 100.0)
            .sum();
        busy.clamp(0.0, 100.0)
    }

    /// Busy percentage a mesh link sees at its receiver. External traffic
    /// counts in full; co-channel mesh radios share what is left in
    /// proportion to their offered airtime, so an overloaded hop slows its
    /// neighbours without silencing them.
    fn link_contention(&self, txs: &[Transmitter], at: Point, channel: Channel, own: TxKey) -> f64 {
        let external: Vec<Transmitter> = txs.iter().filter(|t| matches!(t.key, TxKey::External(_))).cloned().collect();
        let ext = self.utilization_among(&external, at, channel, None);
        let mesh: f64 = txs
            .iter()
            .filter(|t| matches!(t.key, TxKey::Managed { .. }) && t.key != own && self.audible(t, at))
            .map(|t| t.offered_airtime * phy::overlap(t.channel, channel))
            .sum();
        let own_airtime = txs.iter().find(|t| t.key == own).map_or(0.0, |t| t.offered_airtime);
        let available = 1.0 - ext / 100.0;
        let offered = own_airtime + mesh;
        let share = if offered > available && offered > 0.0 { mesh * available / offered } else { mesh };
        (ext + 100.0 * share).clamp(0.0, 100.0)
    }

    /// Busy percentage sensed on `channel` at `at`: every audible active
    /// transmitter contributes its airtime weighted by spectral overlap.
    pub fn ground_truth_utilization(&self, at: Point, channel: Channel) -> f64 {
        self.utilization_among(&self.transmitters(), at, channel, None)
    }

    /// Hidden-node packet error rate on a directed link.
    fn hidden_error_rate(&self, txs: &[Transmitter], from: Point, to: Point, channel: Channel, own: TxKey) -> f64 {
        let p: f64 = txs
            .iter()
            .filter(|t| t.key != own && !self.audible(t, from) && self.audible(t, to))
            .map(|t| t.airtime * phy::overlap(t.channel, channel))
            .sum();
        p.clamp(0.0, 1.0)
    }

    pub fn evaluate(&self) -> Evaluation {
        self.evaluate_graph(&self.graph)
    }

    /// Steady state of `graph` under the world's current spectrum and demands.
    pub fn evaluate_graph(&self, graph: &NetworkGraph) -> Evaluation {
        let txs = self.transmitters_for(graph);
        let loads = self.link_loads(graph);
        let mut radio_sharers: BTreeMap<(NodeId, usize), usize> = BTreeMap::new();
        for (child, (_, users)) in &loads {
            let up = graph.nodes()[child.0].uplink.expect("loaded link has uplink");
            *radio_sharers.entry((up.parent, up.parent_radio)).or_default() += users;
        }

        let mut links = Vec::new();
        for link in graph.links() {
            let up = graph.nodes()[link.child.0].uplink.expect("link has uplink");
            let own = TxKey::Managed { node: link.parent, radio: up.parent_radio };
            let (rssi, rmax) = self.link_rate(graph, &link);
            let (from, to) = (graph.location(link.parent), graph.location(link.child));
            let foreign = self.link_contention(&txs, to, link.channel, own);
            let capacity = link_throughput(rmax, foreign).expect("clamped utilization");
            links.push(LinkState {
                link,
                rssi,
                rmax_bps: rmax,
                foreign_utilization: foreign,
                capacity_bps: capacity,
                packet_error_rate: self.hidden_error_rate(&txs, from, to, link.channel, own),
                sharers: radio_sharers.get(&(link.parent, up.parent_radio)).copied().unwrap_or(0).max(1),
                load_bps: loads.get(&link.child).map_or(0.0, |l| l.0),
            });
        }
        let by_child: BTreeMap<NodeId, &LinkState> = links.iter().map(|l| (l.link.child, l)).collect();

        let mut users = Vec::new();
        for u in graph.users() {
            let demand = self.demands.get(&u).copied().unwrap_or(0.0);
            let Ok(path) = graph.path_of(u) else {
                users.push(UserState {
                    user: u,
                    demand_bps: demand,
                    attempted_bps: 0.0,
                    delivered_bps: 0.0,
                    packet_error_rate: 0.0,
                });
                continue;
            };
            let states: Vec<&LinkState> = path.links.iter().map(|l| by_child[&l.child]).collect();
            let raw: Vec<LinkShare> =
                states.iter().map(|s| LinkShare { rate_bps: s.capacity_bps, sharers: s.sharers }).collect();
            let effective: Vec<LinkShare> = states
                .iter()
                .map(|s| LinkShare { rate_bps: s.capacity_bps * (1.0 - s.packet_error_rate), sharers: s.sharers })
                .collect();
            let per = 1.0 - states.iter().map(|s| 1.0 - s.packet_error_rate).product::<f64>();
            users.push(UserState {
                user: u,
                demand_bps: demand,
                attempted_bps: end_to_end_throughput(&raw, demand).expect("non-empty path"),
                delivered_bps: end_to_end_throughput(&effective, demand).expect("non-empty path"),
                packet_error_rate: per,
            });
        }

        let mut radios = Vec::new();
        for node in graph.managed() {
            let n = &graph.nodes()[node.0];
            for (radio, &channel) in n.channels.iter().enumerate() {
                let tx = txs.iter().find(|t| t.key == TxKey::Managed { node, radio }).map_or(0.0, |t| t.airtime);
                let rx = match n.uplink {
                    Some(up) if up.radio == radio => {
                        let s = by_child[&node];
                        if s.rmax_bps > 0.0 {
                            s.load_bps / s.rmax_bps
                        } else {
                            0.0
                        }
                    }
                    _ => 0.0,
                };
                radios.push(RadioState {
                    node,
                    radio,
                    channel,
                    utilization: self.utilization_among(&txs, n.location, channel, None),
                    tx_airtime: tx,
                    rx_airtime: rx,
                });
            }
        }
        let objective_bps = users.iter().map(|u| u.delivered_bps).sum();
        Evaluation { links, users, radios, objective_bps }
    }

    /// Applies timeline events scheduled up to the current epoch.
    fn process_events(&mut self) -> Result<(), EnvError> {
        while let Some((at, ev)) = self.timeline.events.get(self.next_event).cloned() {
            if at > self.epoch {
                break;
            }
            match ev {
                Event::ActivateExternal { id } => self.set_external_active(&id, true)?,
                Event::DeactivateExternal { id } => self.set_external_active(&id, false)?,
                Event::MoveUser { user, to } => self.graph.move_node(user, to),
                Event::SetDemand { user, demand_bps } => self.set_demand(user, demand_bps),
                Event::ActivateOnUplink { id, node } => {
                    let channel = self.graph.nodes()[node.0]
                        .uplink
                        .map(|u| self.graph.channels_of(node)[u.radio])
                        .ok_or(EnvError::NoUplink(node))?;
                    let ap = self
                        .externals
                        .iter_mut()
                        .find(|a| a.id == id)
                        .ok_or_else(|| EnvError::UnknownExternal(id.clone()))?;
                    ap.channel = channel;
                    ap.active = true;
                }
            }
            self.next_event += 1;
        }
        Ok(())
    }

    /// Advances one sensing epoch and returns the counter deltas it produced.
    pub fn step(&mut self) -> Result<CounterBank, EnvError> {
        self.process_events()?;
        let before = self.counters.clone();
        let eval = self.evaluate();
        let tau = self.tau_ms;
        for r in &eval.radios {
            let c = self.counters.radios.entry((r.node, r.radio)).or_default();
            c.cb_time_ms += r.utilization / 100.0 * tau;
            c.chtx_time_ms += r.tx_airtime.min(1.0) * tau;
            c.chrx_time_ms += r.rx_airtime.min(1.0) * tau;
        }
        let seconds = tau / 1000.0;
        for u in &eval.users {
            let acc = self.accum.entry(u.user).or_default();
            let mut packets = u.attempted_bps * seconds / (8.0 * self.packet_bytes);
            let mut p = u.packet_error_rate;
            // A station with traffic but no usable airtime keeps failing.
            if u.demand_bps > 0.0 && u.delivered_bps <= 0.0 && packets < 1.0 {
                packets = 1.0;
                p = 1.0;
            }
            let retry_ratio = if p >= 1.0 { 1.0 } else { (p / (1.0 - p)).min(1.0) };
            acc.pack += packets;
            acc.err += packets * p;
            acc.retr += packets * retry_ratio;
            acc.tx_bytes += u.delivered_bps * seconds / 8.0;
            let c = self.counters.users.entry(u.user).or_default();
            c.n_pack = acc.pack.floor() as u64;
            c.n_err = acc.err.floor() as u64;
            c.n_retr = acc.retr.floor() as u64;
            c.tx_bytes = acc.tx_bytes.floor() as u64;
        }
        self.epoch += 1;
        Ok(self.counters.delta(&before))
    }

    /// Beacon RSSI of `tx` as seen at `rx`, with optional log-normal shadowing.
    pub fn measure_rssi(&mut self, tx: NodeId, rx: Point) -> Rssi {
        let base = phy::rssi_at(self.graph.location(tx), rx, &self.phy);
        if self.shadowing_db > 0.0 {
            let noise = Normal::new(0.0, self.shadowing_db).expect("positive sigma").sample(&mut self.rng);
            Rssi::new(base.dbm() + noise)
        } else {
            base
        }
    }

    /// Reads every counter and side measurement the agent may use.
    pub fn sense(&mut self) -> SensingSample {
        let graph = self.graph.clone();
        let mut backhaul_rssi = BTreeMap::new();
        let mut user_rssi = BTreeMap::new();
        for (i, n) in graph.nodes().iter().enumerate() {
            let Some(up) = n.uplink else { continue };
            let r = self.measure_rssi(NodeId(i), graph.location(up.parent)).dbm();
            match n.role {
                Role::Extender => backhaul_rssi.insert(NodeId(i), r),
                Role::User => user_rssi.insert(NodeId(i), r),
                Role::Gateway => None,
            };
        }
        let txs = self.transmitters();
        let n_channels = graph.n_channels();
        let mut survey = Vec::new();
        for node in graph.managed() {
            let at = graph.location(node);
            let mut seen: Vec<Channel> = Vec::new();
            for &c in graph.channels_of(node) {
                for s in c.saturating_sub(1).max(1)..=(c + 1).min(n_channels) {
                    if !seen.contains(&s) {
                        seen.push(s);
                    }
                }
            }
            seen.sort_unstable();
            for c in seen {
                survey.push((node, c, self.utilization_among(&txs, at, c, None)));
            }
        }
        SensingSample {
            epoch: self.epoch,
            counters: self.counters.clone(),
            channels: graph.managed().map(|n| (n, graph.channels_of(n).to_vec())).collect(),
            backhaul_rssi,
            user_rssi,
            survey,
        }
    }

    /// Executes an agent action against the live network.
    pub fn apply_action(&mut self, action: &Action) -> Result<ApplyOutcome, EnvError> {
        match action {
            Action::ChannelConfig { node, channels } => {
                let prior = self.graph.clone();
                self.graph.apply_channels(*node, channels)?;
                let violations = self.graph.validate_constraints();
                if !violations.is_empty() {
                    self.graph = prior;
                    return Err(EnvError::Violations(violations));
                }
                let saturated = self.saturated_links(&prior);
                if saturated.is_empty() {
                    return Ok(ApplyOutcome::Applied);
                }
                self.graph = prior.clone();
                if let Some(fb) = self.fallback.get(node).cloned() {
                    if self.graph.apply_channels(*node, &fb).is_err() || !self.graph.validate_constraints().is_empty() {
                        self.graph = prior;
                    }
                }
                Ok(ApplyOutcome::ReestablishFailed { saturated })
            }
            Action::Reposition { node, target } => {
                let n = self.graph.node(*node).ok_or(crate::error::ModelError::UnknownNode(*node))?;
                if n.role != Role::Extender {
                    return Err(EnvError::Static(*node));
                }
                if !self.graph.area().contains(target.point) {
                    return Err(EnvError::OutOfArea { x: target.point.x, y: target.point.y });
                }
                self.graph.move_node(*node, target.point);
                Ok(ApplyOutcome::Applied)
            }
        }
    }

    /// Retuned links whose channel is (nearly) saturated at either end.
    /// Only foreign networks can stop a link from coming back; the mesh's
    /// own traffic yields to association.
    fn saturated_links(&self, prior: &NetworkGraph) -> Vec<(NodeId, Channel)> {
        let txs: Vec<Transmitter> =
            self.transmitters().into_iter().filter(|t| matches!(t.key, TxKey::External(_))).collect();
        let mut out = Vec::new();
        for link in self.graph.links() {
            if prior.link_of(link.child).map(|l| l.channel) == Some(link.channel) {
                continue;
            }
            for end in [link.parent, link.child] {
                if !self.graph.nodes()[end.0].is_managed() {
                    continue;
                }
                let u = self.utilization_among(&txs, self.graph.location(end), link.channel, None);
                if u >= self.sentinel.busy_threshold && !out.contains(&(end, link.channel)) {
                    out.push((end, link.channel));
                }
            }
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::model::{Area, Node, Uplink};

    pub const MBPS: f64 = 1e6;

    /// mAP at (0,5), EXT at (10,5) with (backhaul, fronthaul), one user
    /// behind the EXT at (15,5).
    pub fn chain_graph(map_ch: Channel, ext: [Channel; 2]) -> NetworkGraph {
        let nodes = vec![
            Node {
                role: Role::Gateway,
                radios: 1,
                channels: vec![map_ch],
                location: Point::new(0.0, 5.0),
                uplink: None,
            },
            Node {
                role: Role::Extender,
                radios: 2,
                channels: ext.to_vec(),
                location: Point::new(10.0, 5.0),
                uplink: Some(Uplink { parent: NodeId(0), parent_radio: 0, radio: 0 }),
            },
            Node {
                role: Role::User,
                radios: 1,
                channels: vec![ext[1]],
                location: Point::new(15.0, 5.0),
                uplink: Some(Uplink { parent: NodeId(1), parent_radio: 1, radio: 0 }),
            },
        ];
        NetworkGraph::new(nodes, Area::new(0.0, 0.0, 20.0, 10.0), 11).unwrap()
    }

    pub fn world_with(graph: NetworkGraph, externals: Vec<ExternalAp>, demand_mbps: f64) -> World {
        let grid = LocationGrid::new(*graph.area(), 1.0).unwrap();
        let demands = graph.users().map(|u| (u, demand_mbps * MBPS)).collect();
        World::new(WorldConfig {
            graph,
            grid,
            phy: PhyParams::default(),
            externals,
            demands,
            tau_ms: 2000.0,
            sentinel: SentinelPolicy::default(),
            timeline: EventTimeline::default(),
            shadowing_db: 0.0,
            packet_bytes: 1000.0,
            seed: 7,
        })
        .unwrap()
    }

    pub fn external(id: &str, at: Point, channel: Channel, load_mbps: f64) -> ExternalAp {
        ExternalAp {
            id: id.into(),
            location: at,
            channel,
            client_location: Point::new(at.x + 1.0, at.y),
            offered_load_bps: load_mbps * MBPS,
            active: true,
            tx_power_dbm: None,
        }
    }
}
