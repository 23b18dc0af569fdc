//! Network graph, channel/radio vocabulary and the configuration constraints
//! shared by every other module.
//!
//! Node ordering follows the usual mesh convention: index 0 is the master
//! access point (mAP), indices `1..=M` are extenders and the remaining
//! `M+1..=M+U` are user devices.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// A 2.4 GHz channel number, `1..=N`.
pub type Channel = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const GATEWAY: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// A point in the plane, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new((self.x + other.x) / 2.0, (self.y + other.y) / 2.0)
    }
}

/// Axis-aligned rectangle, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Area {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, p: Point) -> bool {
        const SLACK: f64 = 1e-9;
        p.x >= self.x_min - SLACK && p.x <= self.x_max + SLACK && p.y >= self.y_min - SLACK && p.y <= self.y_max + SLACK
    }

    pub fn contains_area(&self, other: &Area) -> bool {
        self.contains(Point::new(other.x_min, other.y_min)) && self.contains(Point::new(other.x_max, other.y_max))
    }
}

/// A candidate deployment location: a 1-based index into the location grid
/// plus its coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub grid_index: usize,
    pub point: Point,
}

/// Uniform grid of candidate locations covering an area. Indices run
/// row-major from the `(x_min, y_min)` corner, starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationGrid {
    area: Area,
    spacing: f64,
    nx: usize,
    ny: usize,
}

impl LocationGrid {
    pub fn new(area: Area, spacing: f64) -> Result<Self, ModelError> {
        if !(spacing > 0.0) || !(area.width() >= 0.0) || !(area.height() >= 0.0) {
            return Err(ModelError::InvalidGrid { spacing });
        }
        let nx = (area.width() / spacing + 1e-9).floor() as usize + 1;
        let ny = (area.height() / spacing + 1e-9).floor() as usize + 1;
        Ok(Self { area, spacing, nx, ny })
    }

    pub fn area(&self) -> &Area {
        &self.area
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn location(&self, grid_index: usize) -> Option<Location> {
        if grid_index == 0 || grid_index > self.len() {
            return None;
        }
        let i = grid_index - 1;
        let (ix, iy) = (i % self.nx, i / self.nx);
        Some(Location {
            grid_index,
            point: Point::new(self.area.x_min + ix as f64 * self.spacing, self.area.y_min + iy as f64 * self.spacing),
        })
    }

    pub fn locations(&self) -> impl Iterator<Item = Location> + '_ {
        (1..=self.len()).filter_map(|i| self.location(i))
    }

    /// Grid point nearest to `p`. Equidistant candidates resolve to the one
    /// closest to `toward`, then to the lowest index.
    pub fn nearest_toward(&self, p: Point, toward: Point) -> Location {
        let fx = ((p.x - self.area.x_min) / self.spacing).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((p.y - self.area.y_min) / self.spacing).clamp(0.0, (self.ny - 1) as f64);
        let xs = [fx.floor() as usize, (fx.ceil() as usize).min(self.nx - 1)];
        let ys = [fy.floor() as usize, (fy.ceil() as usize).min(self.ny - 1)];
        let mut best: Option<(f64, f64, usize)> = None;
        for &iy in &ys {
            for &ix in &xs {
                let idx = 1 + iy * self.nx + ix;
                let q = self.location(idx).expect("in range").point;
                let key = (round9(q.distance(p)), round9(q.distance(toward)), idx);
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
            }
        }
        self.location(best.expect("grid is non-empty").2).expect("in range")
    }

    pub fn nearest(&self, p: Point) -> Location {
        self.nearest_toward(p, p)
    }
}

fn round9(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Gateway,
    Extender,
    User,
}

/// How a node attaches to its parent: which of the parent's radios serves
/// it and which of its own radios faces the parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Uplink {
    pub parent: NodeId,
    pub parent_radio: usize,
    pub radio: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub role: Role,
    /// Number of radio interfaces `|D_i|`.
    pub radios: usize,
    /// Assigned channel per radio. Normally `channels.len() == radios`.
    pub channels: Vec<Channel>,
    pub location: Point,
    pub uplink: Option<Uplink>,
}

impl Node {
    pub fn is_managed(&self) -> bool {
        self.role != Role::User
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Radio {
    pub owner: NodeId,
    pub radio_index: usize,
    pub channel: Channel,
}

/// Directed parent→child link on a shared channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub parent: NodeId,
    pub child: NodeId,
    pub channel: Channel,
}

/// A user's route, ordered from the mAP outward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub user: NodeId,
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    ChannelConfig { node: NodeId, channels: Vec<Channel> },
    Reposition { node: NodeId, target: Location },
}

impl Action {
    pub fn node(&self) -> NodeId {
        match self {
            Action::ChannelConfig { node, .. } | Action::Reposition { node, .. } => *node,
        }
    }

    pub fn channels(&self) -> Option<&[Channel]> {
        match self {
            Action::ChannelConfig { channels, .. } => Some(channels),
            Action::Reposition { .. } => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::ChannelConfig { channels, .. } => write!(f, "ch({})", join_channels(channels)),
            Action::Reposition { target, .. } => {
                write!(f, "loc({}@{:.2}:{:.2})", target.grid_index, target.point.x, target.point.y)
            }
        }
    }
}

pub fn join_channels(channels: &[Channel]) -> String {
    channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

/// One of the four configuration constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Constraint {
    /// Channels drawn from the finite set `1..=N`.
    A,
    /// One channel per radio.
    B,
    /// Distinct channels per node do not exceed its radio count.
    C,
    /// Adjacent nodes share the link channel.
    D,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Constraint::A => 'a',
            Constraint::B => 'b',
            Constraint::C => 'c',
            Constraint::D => 'd',
        };
        write!(f, "({c})")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub node: NodeId,
    /// `(parent, child)` for link-level violations.
    pub link: Option<(NodeId, NodeId)>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.link {
            Some((p, c)) => write!(f, "{} on link ({p},{c}): {}", self.constraint, self.detail),
            None => write!(f, "{} at {}: {}", self.constraint, self.node, self.detail),
        }
    }
}

/// Directed acyclic attachment tree rooted at the mAP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    nodes: Vec<Node>,
    area: Area,
    n_channels: Channel,
}

impl NetworkGraph {
    /// Builds a graph and checks the structural invariants: node ordering
    /// (mAP, extenders, users), radio indices in range, acyclicity, and a
    /// path to the mAP from every user.
    pub fn new(nodes: Vec<Node>, area: Area, n_channels: Channel) -> Result<Self, ModelError> {
        if n_channels == 0 {
            return Err(ModelError::NoChannels);
        }
        if nodes.first().map(|n| n.role) != Some(Role::Gateway) {
            return Err(ModelError::Structure("node 0 must be the gateway".into()));
        }
        let mut seen_user = false;
        for (i, n) in nodes.iter().enumerate().skip(1) {
            match n.role {
                Role::Gateway => return Err(ModelError::Structure(format!("second gateway at index {i}"))),
                Role::Extender if seen_user => {
                    return Err(ModelError::Structure(format!("extender at index {i} follows a user device")))
                }
                Role::User => seen_user = true,
                Role::Extender => {}
            }
        }
        let graph = Self { nodes, area, n_channels };
        for (i, n) in graph.nodes.iter().enumerate() {
            if n.radios == 0 {
                return Err(ModelError::Structure(format!("node {i} has no radio")));
            }
            if n.role == Role::Gateway && n.uplink.is_some() {
                return Err(ModelError::Structure("gateway cannot have a parent".into()));
            }
            if let Some(up) = n.uplink {
                let parent = graph
                    .nodes
                    .get(up.parent.0)
                    .ok_or_else(|| ModelError::Structure(format!("node {i}: unknown parent")))?;
                if parent.role == Role::User {
                    return Err(ModelError::Structure(format!("node {i}: parent is a user")));
                }
                if up.parent_radio >= parent.radios || up.radio >= n.radios {
                    return Err(ModelError::Structure(format!("node {i}: radio out of range")));
                }
            }
        }
        for i in 0..graph.nodes.len() {
            graph.hops_to_root(NodeId(i))?;
        }
        Ok(graph)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.0)
    }

    pub fn area(&self) -> &Area {
        &self.area
    }

    pub fn n_channels(&self) -> Channel {
        self.n_channels
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Managed nodes `v_0..=v_M` in index order.
    pub fn managed(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.is_managed()).map(|(i, _)| NodeId(i))
    }

    pub fn extenders(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.role == Role::Extender).map(|(i, _)| NodeId(i))
    }

    pub fn users(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.role == Role::User).map(|(i, _)| NodeId(i))
    }

    pub fn radios(&self) -> impl Iterator<Item = Radio> + '_ {
        self.nodes.iter().enumerate().flat_map(|(i, n)| {
            n.channels.iter().enumerate().map(move |(r, &c)| Radio { owner: NodeId(i), radio_index: r, channel: c })
        })
    }

    pub fn location(&self, id: NodeId) -> Point {
        self.nodes[id.0].location
    }

    pub fn channels_of(&self, id: NodeId) -> &[Channel] {
        &self.nodes[id.0].channels
    }

    /// Children attached to `radio` of `parent`.
    pub fn children_on(&self, parent: NodeId, radio: usize) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.uplink {
            Some(up) if up.parent == parent && up.parent_radio == radio => Some(NodeId(i)),
            _ => None,
        })
    }

    pub fn children(&self, parent: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.uplink {
            Some(up) if up.parent == parent => Some(NodeId(i)),
            _ => None,
        })
    }

    pub fn link_of(&self, child: NodeId) -> Option<Link> {
        let n = &self.nodes[child.0];
        n.uplink.map(|up| Link { parent: up.parent, child, channel: n.channels.get(up.radio).copied().unwrap_or(0) })
    }

    pub fn links(&self) -> Vec<Link> {
        (0..self.nodes.len()).filter_map(|i| self.link_of(NodeId(i))).collect()
    }

    fn hops_to_root(&self, id: NodeId) -> Result<usize, ModelError> {
        let mut cur = id;
        let mut hops = 0;
        while let Some(up) = self.nodes[cur.0].uplink {
            cur = up.parent;
            hops += 1;
            if hops > self.nodes.len() {
                return Err(ModelError::Structure(format!("cycle through node {}", id.0)));
            }
        }
        if cur != NodeId::GATEWAY {
            return Err(ModelError::NoPath(id));
        }
        Ok(hops)
    }

    /// The unique parent chain from `user` to the mAP, ordered from the mAP outward.
    pub fn path_of(&self, user: NodeId) -> Result<Path, ModelError> {
        let node = self.nodes.get(user.0).ok_or(ModelError::UnknownNode(user))?;
        if node.role != Role::User {
            return Err(ModelError::InvalidNode(user));
        }
        let mut links = Vec::new();
        let mut cur = user;
        while let Some(link) = self.link_of(cur) {
            links.push(link);
            cur = link.parent;
            if links.len() > self.nodes.len() {
                return Err(ModelError::NoPath(user));
            }
        }
        if cur != NodeId::GATEWAY || links.is_empty() {
            return Err(ModelError::NoPath(user));
        }
        links.reverse();
        Ok(Path { user, links })
    }

    /// Checks constraints (a)–(d); an empty list means the configuration is valid.
    pub fn validate_constraints(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let id = NodeId(i);
            for &c in &n.channels {
                if c == 0 || c > self.n_channels {
                    out.push(Violation {
                        constraint: Constraint::A,
                        node: id,
                        link: None,
                        detail: format!("channel {c} outside 1..={}", self.n_channels),
                    });
                }
            }
            let distinct: BTreeSet<_> = n.channels.iter().collect();
            if distinct.len() > n.radios {
                out.push(Violation {
                    constraint: Constraint::C,
                    node: id,
                    link: None,
                    detail: format!("{} distinct channels on {} radios", distinct.len(), n.radios),
                });
            } else if n.channels.len() != n.radios {
                out.push(Violation {
                    constraint: Constraint::B,
                    node: id,
                    link: None,
                    detail: format!("{} channels for {} radios", n.channels.len(), n.radios),
                });
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let Some(up) = n.uplink else { continue };
            let parent = &self.nodes[up.parent.0];
            let ours = n.channels.get(up.radio);
            let theirs = parent.channels.get(up.parent_radio);
            if ours.is_none() || ours != theirs {
                out.push(Violation {
                    constraint: Constraint::D,
                    node: NodeId(i),
                    link: Some((up.parent, NodeId(i))),
                    detail: format!(
                        "link radios tuned to {} and {}",
                        theirs.map_or("-".into(), |c| c.to_string()),
                        ours.map_or("-".into(), |c| c.to_string())
                    ),
                });
            }
        }
        out
    }

    /// Overwrites a node's channel list without touching its neighbours.
    /// Used to build raw configurations; see [`NetworkGraph::apply_channels`]
    /// for the synchronising variant.
    pub fn set_channels_raw(&mut self, node: NodeId, channels: Vec<Channel>) {
        self.nodes[node.0].channels = channels;
    }

    /// Retunes `node` and re-synchronises link endpoints: a change on the
    /// node's uplink radio retunes the parent's serving radio, and every
    /// child then follows its parent's serving radio, top-down.
    pub fn apply_channels(&mut self, node: NodeId, channels: &[Channel]) -> Result<(), ModelError> {
        let n = self.nodes.get(node.0).ok_or(ModelError::UnknownNode(node))?;
        if !n.is_managed() {
            return Err(ModelError::InvalidNode(node));
        }
        if channels.len() != n.radios {
            return Err(ModelError::TupleLength { node, expected: n.radios, got: channels.len() });
        }
        self.nodes[node.0].channels = channels.to_vec();
        if let Some(up) = self.nodes[node.0].uplink {
            let c = channels[up.radio];
            if let Some(slot) = self.nodes[up.parent.0].channels.get_mut(up.parent_radio) {
                *slot = c;
            }
        }
        self.sync_down();
        Ok(())
    }

    /// Top-down pass copying each parent's serving-radio channel onto the
    /// child's uplink radio.
    pub fn sync_down(&mut self) {
        let mut queue = VecDeque::from([NodeId::GATEWAY]);
        while let Some(p) = queue.pop_front() {
            let kids: Vec<NodeId> = self.children(p).collect();
            for k in kids {
                let up = self.nodes[k.0].uplink.expect("child has uplink");
                if let Some(&c) = self.nodes[p.0].channels.get(up.parent_radio) {
                    if let Some(slot) = self.nodes[k.0].channels.get_mut(up.radio) {
                        *slot = c;
                    }
                }
                queue.push_back(k);
            }
        }
    }

    pub fn move_node(&mut self, node: NodeId, to: Point) {
        self.nodes[node.0].location = to;
    }

    /// Users whose path traverses any link incident to `node`.
    pub fn users_through(&self, node: NodeId) -> Vec<NodeId> {
        self.users()
            .filter(|&u| {
                self.path_of(u).map(|p| p.links.iter().any(|l| l.parent == node || l.child == node)).unwrap_or(false)
            })
            .collect()
    }
}

/// All channel tuples of length `radios` over `1..=n_channels`, lexicographic.
pub fn channel_tuples(radios: usize, n_channels: Channel) -> Vec<Vec<Channel>> {
    let mut out = vec![Vec::with_capacity(radios)];
    for _ in 0..radios {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (1..=n_channels).map(move |c| {
                    let mut t = prefix.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}

/// The node's channel-configuration action space, `N^{|D_i|}` actions in
/// lexicographic order.
pub fn enumerate_channel_actions(
    node: NodeId,
    graph: &NetworkGraph,
    n_channels: Channel,
) -> Result<Vec<Action>, ModelError> {
    let n = graph.node(node).ok_or(ModelError::UnknownNode(node))?;
    if !n.is_managed() {
        return Err(ModelError::InvalidNode(node));
    }
    if n_channels == 0 {
        return Err(ModelError::NoChannels);
    }
    Ok(channel_tuples(n.radios, n_channels)
        .into_iter()
        .map(|channels| Action::ChannelConfig { node, channels })
        .collect())
}
