//! Knowledge base: Q-table, channel-location table and perception table,
//! with a plain-text tab-separated dump format.
//!
//! Dump layout, one section per table, closed by `[end]`:
//!
//! ```text
//! meshopt-kb 1
//! [q]
//! <node>\t<state>\t<channels a;b>\t<q>
//! [channel_location] <locations> <channels>
//! <location>\t<u ch1>\t...\t<u chN>      ("-" marks an unsensed cell)
//! [perception_radios]
//! <node>\t<radio>\t<channel>\t<u>\t<rho>\t<next hops a;b or ->
//! [perception_users]
//! <user>\t<retries>\t<errors>\t<idle 0|1>\t<goodput>
//! [end]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::KbError;
use crate::model::{join_channels, Channel, NetworkGraph, NodeId};
use crate::perception::{PerceptionSnapshot, UserIndicators};

const MAGIC: &str = "meshopt-kb 1";

/// One Q-learning step. With `gamma = 0` this is `q + eta * (r - q)`.
pub fn q_update(q: f64, reward: f64, max_next: f64, eta: f64, gamma: f64) -> f64 {
    q + eta * (reward + gamma * max_next - q)
}

/// Q-values per node, keyed by location state and channel tuple. A missing
/// entry reads as 0, which marks the pair as unvisited.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable {
    entries: BTreeMap<(NodeId, usize, Vec<Channel>), f64>,
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, node: NodeId, state: usize, channels: &[Channel]) -> f64 {
        self.entries.get(&(node, state, channels.to_vec())).copied().unwrap_or(0.0)
    }

    pub fn visited(&self, node: NodeId, state: usize, channels: &[Channel]) -> bool {
        self.get(node, state, channels) != 0.0
    }

    /// Largest Q-value recorded for `node` in `state` (0 when none).
    pub fn max_q(&self, node: NodeId, state: usize) -> f64 {
        self.state_entries(node, state).map(|(_, q)| q).fold(0.0, f64::max)
    }

    pub fn state_entries(&self, node: NodeId, state: usize) -> impl Iterator<Item = (&[Channel], f64)> + '_ {
        self.entries
            .range((node, state, Vec::new())..)
            .take_while(move |((n, s, _), _)| *n == node && *s == state)
            .map(|((_, _, c), q)| (c.as_slice(), *q))
    }

    /// States of `node` with at least one entry, with their best Q.
    pub fn states(&self, node: NodeId) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        for ((n, s, _), q) in &self.entries {
            if *n == node {
                let e = out.entry(*s).or_insert(0.0f64);
                *e = e.max(*q);
            }
        }
        out
    }

    /// Applies the learning rule and stores the result. A result of exactly
    /// zero is nudged to the smallest positive value so the entry still
    /// reads as visited.
    pub fn update(
        &mut self,
        node: NodeId,
        state: usize,
        channels: &[Channel],
        reward: f64,
        eta: f64,
        gamma: f64,
    ) -> f64 {
        let max_next = self.max_q(node, state);
        let old = self.get(node, state, channels);
        let mut q = q_update(old, reward, max_next, eta, gamma);
        if q == 0.0 {
            q = f64::MIN_POSITIVE;
        }
        self.entries.insert((node, state, channels.to_vec()), q);
        q
    }

    pub fn set(&mut self, node: NodeId, state: usize, channels: &[Channel], q: f64) {
        self.entries.insert((node, state, channels.to_vec()), q);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, usize, &[Channel], f64)> {
        self.entries.iter().map(|((n, s, c), q)| (*n, *s, c.as_slice(), *q))
    }
}

/// Latest utilization sensed per `(location, channel)`; unsensed cells stay
/// empty and are distinct from a measured 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelLocationTable {
    locations: usize,
    n_channels: Channel,
    cells: BTreeMap<(usize, Channel), f64>,
}

impl ChannelLocationTable {
    pub fn new(locations: usize, n_channels: Channel) -> Self {
        Self { locations, n_channels, cells: BTreeMap::new() }
    }

    pub fn locations(&self) -> usize {
        self.locations
    }

    pub fn n_channels(&self) -> Channel {
        self.n_channels
    }

    /// Latest-wins. Out-of-range coordinates are ignored.
    pub fn record(&mut self, location: usize, channel: Channel, utilization: f64) {
        if (1..=self.locations).contains(&location) && (1..=self.n_channels).contains(&channel) {
            self.cells.insert((location, channel), utilization);
        }
    }

    pub fn get(&self, location: usize, channel: Channel) -> Option<f64> {
        self.cells.get(&(location, channel)).copied()
    }

    pub fn clear(&mut self, location: usize, channel: Channel) {
        self.cells.remove(&(location, channel));
    }

    pub fn row(&self, location: usize) -> Vec<Option<f64>> {
        (1..=self.n_channels).map(|c| self.get(location, c)).collect()
    }

    pub fn sensed_locations(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.cells.keys().map(|k| k.0).collect();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionRadioRow {
    pub node: NodeId,
    pub radio: usize,
    pub channel: Channel,
    pub utilization: f64,
    pub activity: f64,
    pub next_hops: Vec<NodeId>,
}

/// Mirror of the latest corrected snapshot plus link connectivity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerceptionTable {
    pub radios: Vec<PerceptionRadioRow>,
    pub users: Vec<UserIndicators>,
}

impl PerceptionTable {
    pub fn refresh(&mut self, snapshot: &PerceptionSnapshot, graph: &NetworkGraph) {
        self.radios = snapshot
            .radios
            .iter()
            .map(|r| {
                let mut next_hops: Vec<NodeId> = graph.children_on(r.node, r.radio).collect();
                if let Some(up) = graph.nodes()[r.node.0].uplink.filter(|u| u.radio == r.radio) {
                    next_hops.insert(0, up.parent);
                }
                PerceptionRadioRow {
                    node: r.node,
                    radio: r.radio,
                    channel: r.channel,
                    utilization: r.utilization,
                    activity: r.activity,
                    next_hops,
                }
            })
            .collect();
        self.users = snapshot.users.clone();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub q: QTable,
    pub channel_location: ChannelLocationTable,
    pub perception: PerceptionTable,
}

impl KnowledgeBase {
    pub fn new(locations: usize, n_channels: Channel) -> Self {
        Self {
            q: QTable::new(),
            channel_location: ChannelLocationTable::new(locations, n_channels),
            perception: PerceptionTable::default(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "[q]")?;
        for (n, s, c, q) in self.q.iter() {
            writeln!(w, "{}\t{s}\t{}\t{q}", n.0, join_channels(c))?;
        }
        let cl = &self.channel_location;
        writeln!(w, "[channel_location] {} {}", cl.locations, cl.n_channels)?;
        for loc in cl.sensed_locations() {
            let cells: Vec<String> = cl.row(loc).iter().map(|v| v.map_or("-".to_string(), |u| u.to_string())).collect();
            writeln!(w, "{loc}\t{}", cells.join("\t"))?;
        }
        writeln!(w, "[perception_radios]")?;
        for r in &self.perception.radios {
            let hops = if r.next_hops.is_empty() {
                "-".to_string()
            } else {
                r.next_hops.iter().map(|h| h.0.to_string()).collect::<Vec<_>>().join(";")
            };
            writeln!(w, "{}\t{}\t{}\t{}\t{}\t{hops}", r.node.0, r.radio, r.channel, r.utilization, r.activity)?;
        }
        writeln!(w, "[perception_users]")?;
        for u in &self.perception.users {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", u.user.0, u.retries_rate, u.error_rate, u.idle as u8, u.goodput_bps)?;
        }
        writeln!(w, "[end]")
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 dump")
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }

    pub fn from_text(text: &str) -> Result<Self, KbError> {
        Self::read_from(text.as_bytes())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, KbError> {
        #[derive(PartialEq, Clone, Copy)]
        enum Section {
            Header,
            Q,
            ChannelLocation,
            Radios,
            Users,
            Done,
        }
        let mut section = Section::Header;
        let mut kb = KnowledgeBase::new(0, 0);
        let mut last_line = 0;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let ln = i + 1;
            last_line = ln;
            if section == Section::Done {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(parse_err(ln, "section", "content after [end]"));
            }
            if section == Section::Header {
                if line.trim() != MAGIC {
                    return Err(parse_err(ln, "header", &format!("expected `{MAGIC}`")));
                }
                section = Section::Q;
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let (name, args) = rest.split_once(']').ok_or_else(|| parse_err(ln, "section", "unclosed bracket"))?;
                section = match name {
                    "q" => Section::Q,
                    "channel_location" => {
                        let dims: Vec<&str> = args.split_whitespace().collect();
                        if dims.len() != 2 {
                            return Err(parse_err(ln, "channel_location", "expected `<locations> <channels>`"));
                        }
                        let locations = parse_field::<usize>(dims[0], ln, "locations")?;
                        let channels = parse_field::<Channel>(dims[1], ln, "channels")?;
                        kb.channel_location = ChannelLocationTable::new(locations, channels);
                        Section::ChannelLocation
                    }
                    "perception_radios" => Section::Radios,
                    "perception_users" => Section::Users,
                    "end" => Section::Done,
                    other => return Err(parse_err(ln, "section", &format!("unknown section `{other}`"))),
                };
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            match section {
                Section::Q => {
                    expect_fields(&f, 4, ln)?;
                    let node = NodeId(parse_field(f[0], ln, "node")?);
                    let state = parse_field(f[1], ln, "state")?;
                    let channels = parse_list::<Channel>(f[2], ln, "channels")?;
                    let q = parse_field(f[3], ln, "q")?;
                    kb.q.set(node, state, &channels, q);
                }
                Section::ChannelLocation => {
                    let cl = &mut kb.channel_location;
                    expect_fields(&f, 1 + cl.n_channels as usize, ln)?;
                    let loc: usize = parse_field(f[0], ln, "location")?;
                    if !(1..=cl.locations).contains(&loc) {
                        return Err(parse_err(ln, "location", "outside the table"));
                    }
                    for (c, cell) in f[1..].iter().enumerate() {
                        if *cell != "-" {
                            let u = parse_field(cell, ln, &format!("channel {}", c + 1))?;
                            cl.record(loc, (c + 1) as Channel, u);
                        }
                    }
                }
                Section::Radios => {
                    expect_fields(&f, 6, ln)?;
                    let next_hops = if f[5] == "-" {
                        Vec::new()
                    } else {
                        parse_list::<usize>(f[5], ln, "next_hops")?.into_iter().map(NodeId).collect()
                    };
                    kb.perception.radios.push(PerceptionRadioRow {
                        node: NodeId(parse_field(f[0], ln, "node")?),
                        radio: parse_field(f[1], ln, "radio")?,
                        channel: parse_field(f[2], ln, "channel")?,
                        utilization: parse_field(f[3], ln, "utilization")?,
                        activity: parse_field(f[4], ln, "activity")?,
                        next_hops,
                    });
                }
                Section::Users => {
                    expect_fields(&f, 5, ln)?;
                    let idle: u8 = parse_field(f[3], ln, "idle")?;
                    kb.perception.users.push(UserIndicators {
                        user: NodeId(parse_field(f[0], ln, "user")?),
                        retries_rate: parse_field(f[1], ln, "retries")?,
                        error_rate: parse_field(f[2], ln, "errors")?,
                        idle: idle != 0,
                        goodput_bps: parse_field(f[4], ln, "goodput")?,
                    });
                }
                Section::Header | Section::Done => unreachable!(),
            }
        }
        if section != Section::Done {
            return Err(KbError::Truncated(format!("no [end] marker after line {last_line}")));
        }
        Ok(kb)
    }
}

fn parse_err(line: usize, field: &str, message: &str) -> KbError {
    KbError::Parse { line, field: field.to_string(), message: message.to_string() }
}

fn expect_fields(f: &[&str], n: usize, line: usize) -> Result<(), KbError> {
    if f.len() == n {
        Ok(())
    } else {
        Err(parse_err(line, "row", &format!("expected {n} fields, found {}", f.len())))
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, field: &str) -> Result<T, KbError>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e: T::Err| parse_err(line, field, &format!("`{s}`: {e}")))
}

fn parse_list<T: std::str::FromStr>(s: &str, line: usize, field: &str) -> Result<Vec<T>, KbError>
where
    T::Err: std::fmt::Display,
{
    s.split(';').map(|p| parse_field(p, line, field)).collect()
}
