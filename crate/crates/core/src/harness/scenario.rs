//! Scenario files: a TOML description of the mesh, its surroundings and the
//! run settings, turned into a fresh [`World`] per seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::AgentParams;
use crate::baselines::{best_single_channel, uniform_configuration};
use crate::env::{Event, EventTimeline, ExternalAp, SentinelPolicy, World, WorldConfig};
use crate::error::HarnessError;
use crate::model::{Area, Channel, LocationGrid, NetworkGraph, Node, NodeId, Point, Role, Uplink};
use crate::perception::TriggerThresholds;
use crate::phy::PhyParams;

pub const MBPS: f64 = 1e6;

fn default_area() -> Area {
    Area::new(0.0, 0.0, 20.0, 10.0)
}
fn default_enclosure() -> Area {
    Area::new(-5.0, -5.0, 25.0, 15.0)
}
fn default_channels() -> Channel {
    11
}
fn default_spacing() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    2000.0
}
fn default_epochs() -> u64 {
    100
}
fn default_packet() -> f64 {
    1000.0
}
fn default_demand() -> f64 {
    5.0
}
fn default_true() -> bool {
    true
}
fn default_window() -> usize {
    10
}
fn default_tolerance() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub radios: Option<usize>,
    #[serde(default)]
    pub channels: Vec<Channel>,
    pub at: Point,
    /// Name of the node this one attaches to.
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub parent_radio: usize,
    #[serde(default)]
    pub radio: usize,
    /// Users only, Mbps.
    #[serde(default)]
    pub demand_mbps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    pub id: String,
    pub at: Point,
    pub channel: Channel,
    /// Defaults to one metre east of the AP.
    #[serde(default)]
    pub client_at: Option<Point>,
    pub load_mbps: f64,
    #[serde(default = "default_true")]
    pub active: bool,
    #[serde(default)]
    pub tx_power_dbm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    ActivateExternal {
        epoch: u64,
        id: String,
    },
    DeactivateExternal {
        epoch: u64,
        id: String,
    },
    MoveUser {
        epoch: u64,
        user: String,
        to: Point,
    },
    SetDemand {
        epoch: u64,
        user: String,
        demand_mbps: f64,
    },
    /// Turns an external AP on, on the channel `node` currently uses towards
    /// its parent.
    ActivateOnUplink {
        epoch: u64,
        id: String,
        node: String,
    },
}

impl EventSpec {
    pub fn epoch(&self) -> u64 {
        match self {
            EventSpec::ActivateExternal { epoch, .. }
            | EventSpec::DeactivateExternal { epoch, .. }
            | EventSpec::MoveUser { epoch, .. }
            | EventSpec::SetDemand { epoch, .. }
            | EventSpec::ActivateOnUplink { epoch, .. } => *epoch,
        }
    }
}

/// Steady-state detection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self { window: default_window(), tolerance: default_tolerance() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartChannels {
    /// The channels listed on each node.
    #[default]
    Listed,
    /// Every radio on the best single channel, as a stock mesh would run.
    SingleChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default = "default_area")]
    pub area: Area,
    #[serde(default = "default_enclosure")]
    pub enclosure: Area,
    #[serde(default = "default_spacing")]
    pub grid_spacing: f64,
    #[serde(default = "default_channels")]
    pub n_channels: Channel,
    #[serde(default = "default_tau")]
    pub tau_ms: f64,
    #[serde(default = "default_epochs")]
    pub epochs: u64,
    /// Half-open seed range used when the command line gives none.
    #[serde(default)]
    pub seeds: Option<(u64, u64)>,
    /// Place every extender on a random grid location per seed.
    #[serde(default)]
    pub randomize_extenders: bool,
    /// Channels the managed network boots with.
    #[serde(default)]
    pub start: StartChannels,
    #[serde(default)]
    pub shadowing_db: f64,
    #[serde(default = "default_packet")]
    pub packet_bytes: f64,
    #[serde(default = "default_demand")]
    pub default_demand_mbps: f64,
    #[serde(default)]
    pub phy: PhyParams,
    #[serde(default)]
    pub agent: AgentParams,
    #[serde(default)]
    pub thresholds: TriggerThresholds,
    #[serde(default)]
    pub sentinel: SentinelPolicy,
    #[serde(default)]
    pub convergence: ConvergenceSpec,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub externals: Vec<ExternalSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: ScenarioSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Scenario(m));
        if !self.enclosure.contains_area(&self.area) {
            return bad("area must lie inside the enclosure".into());
        }
        for n in &self.nodes {
            if !self.enclosure.contains(n.at) {
                return bad(format!("node `{}` lies outside the enclosure", n.name));
            }
            if n.role != Role::User && !self.area.contains(n.at) {
                return bad(format!("managed node `{}` lies outside the area", n.name));
            }
        }
        for e in &self.externals {
            if !self.enclosure.contains(e.at) {
                return bad(format!("external AP `{}` lies outside the enclosure", e.id));
            }
        }
        if self.events.windows(2).any(|w| w[0].epoch() > w[1].epoch()) {
            return bad("events must be listed in epoch order".into());
        }
        if !(self.tau_ms > 0.0) {
            return bad("tau_ms must be positive".into());
        }
        self.agent.validate().map_err(HarnessError::Scenario)?;
        self.thresholds.validate().map_err(HarnessError::Scenario)?;
        self.phy.validate().map_err(|e| HarnessError::Scenario(e.to_string()))?;
        self.graph()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<LocationGrid, HarnessError> {
        Ok(LocationGrid::new(self.area, self.grid_spacing)?)
    }

    /// Node specs in graph order (gateway, extenders, users) with their ids.
    fn ordered(&self) -> Vec<(NodeId, &NodeSpec)> {
        let rank = |r: Role| match r {
            Role::Gateway => 0,
            Role::Extender => 1,
            Role::User => 2,
        };
        let mut v: Vec<&NodeSpec> = self.nodes.iter().collect();
        v.sort_by_key(|n| rank(n.role));
        v.into_iter().enumerate().map(|(i, n)| (NodeId(i), n)).collect()
    }

    pub fn node_id(&self, name: &str) -> Result<NodeId, HarnessError> {
        self.ordered()
            .into_iter()
            .find(|(_, n)| n.name == name)
            .map(|(id, _)| id)
            .ok_or_else(|| HarnessError::Scenario(format!("unknown node `{name}`")))
    }

    /// Node names in graph order.
    pub fn node_names(&self) -> Vec<String> {
        self.ordered().into_iter().map(|(_, n)| n.name.clone()).collect()
    }

    pub fn graph(&self) -> Result<NetworkGraph, HarnessError> {
        let ordered = self.ordered();
        let ids: BTreeMap<&str, NodeId> = ordered.iter().map(|(id, n)| (n.name.as_str(), *id)).collect();
        if ids.len() != ordered.len() {
            return Err(HarnessError::Scenario("node names must be unique".into()));
        }
        let mut nodes = Vec::with_capacity(ordered.len());
        for (_, n) in &ordered {
            let radios = n.radios.unwrap_or(match n.role {
                Role::Extender => 2,
                _ => 1,
            });
            let uplink = match &n.parent {
                Some(p) => Some(Uplink {
                    parent: *ids
                        .get(p.as_str())
                        .ok_or_else(|| HarnessError::Scenario(format!("`{}` attaches to unknown `{p}`", n.name)))?,
                    parent_radio: n.parent_radio,
                    radio: n.radio,
                }),
                None => None,
            };
            let channels = if n.channels.is_empty() { vec![1; radios] } else { n.channels.clone() };
            nodes.push(Node { role: n.role, radios, channels, location: n.at, uplink });
        }
        let mut g = NetworkGraph::new(nodes, self.area, self.n_channels)?;
        g.sync_down();
        Ok(g)
    }

    pub fn total_demand_mbps(&self) -> f64 {
        self.nodes
            .iter()
            .filter(|n| n.role == Role::User)
            .map(|n| n.demand_mbps.unwrap_or(self.default_demand_mbps))
            .sum()
    }

    pub fn timeline(&self) -> Result<EventTimeline, HarnessError> {
        let mut events = Vec::with_capacity(self.events.len());
        for e in &self.events {
            let ev = match e {
                EventSpec::ActivateExternal { id, .. } => Event::ActivateExternal { id: id.clone() },
                EventSpec::DeactivateExternal { id, .. } => Event::DeactivateExternal { id: id.clone() },
                EventSpec::ActivateOnUplink { id, node, .. } => {
                    Event::ActivateOnUplink { id: id.clone(), node: self.node_id(node)? }
                }
                EventSpec::MoveUser { user, to, .. } => Event::MoveUser { user: self.node_id(user)?, to: *to },
                EventSpec::SetDemand { user, demand_mbps, .. } => {
                    Event::SetDemand { user: self.node_id(user)?, demand_bps: demand_mbps * MBPS }
                }
            };
            events.push((e.epoch(), ev));
        }
        Ok(EventTimeline::new(events)?)
    }

    /// Epochs at which the environment changes, used to split phases.
    pub fn event_epochs(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.events.iter().map(EventSpec::epoch).collect();
        v.dedup();
        v
    }

    /// A fresh world for `seed`. Extenders are scattered over the grid when
    /// the scenario asks for it.
    pub fn build_world(&self, seed: u64) -> Result<World, HarnessError> {
        let mut graph = self.graph()?;
        let grid = self.grid()?;
        if self.randomize_extenders {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let locations: Vec<Point> = grid.locations().map(|l| l.point).collect();
            let exts: Vec<NodeId> = graph.extenders().collect();
            for e in exts {
                graph.move_node(e, locations[rng.random_range(0..locations.len())]);
            }
        }
        let demands = self
            .ordered()
            .into_iter()
            .filter(|(_, n)| n.role == Role::User)
            .map(|(id, n)| (id, n.demand_mbps.unwrap_or(self.default_demand_mbps) * MBPS))
            .collect();
        let externals = self
            .externals
            .iter()
            .map(|e| ExternalAp {
                id: e.id.clone(),
                location: e.at,
                channel: e.channel,
                client_location: e.client_at.unwrap_or(Point::new(e.at.x + 1.0, e.at.y)),
                offered_load_bps: e.load_mbps * MBPS,
                active: e.active,
                tx_power_dbm: e.tx_power_dbm,
            })
            .collect();
        let mut world = World::new(WorldConfig {
            graph,
            grid,
            phy: self.phy.clone(),
            externals,
            demands,
            tau_ms: self.tau_ms,
            sentinel: self.sentinel.clone(),
            timeline: self.timeline()?,
            shadowing_db: self.shadowing_db,
            packet_bytes: self.packet_bytes,
            seed,
        })?;
        if self.start == StartChannels::SingleChannel {
            let (c, _) = best_single_channel(&world);
            let g = uniform_configuration(world.graph(), c);
            world.set_graph(g);
        }
        Ok(world)
    }
}
