//! Reference schemes: best single channel, common orthogonal pair, greedy
//! conflict-graph colouring, and the exhaustive oracle.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::env::World;
use crate::error::BaselineError;
use crate::model::{Channel, Location, NetworkGraph, NodeId, Violation};
use crate::phy::{self, db_to_linear};

/// Default refusal threshold for the oracle.
pub const BRUTE_FORCE_BUDGET: u128 = 1_000_000;

/// Channels that do not overlap with each other.
pub const ORTHOGONAL: [Channel; 3] = [1, 6, 11];

/// Every managed radio on `channel`, users following their AP.
pub fn uniform_configuration(graph: &NetworkGraph, channel: Channel) -> NetworkGraph {
    let mut g = graph.clone();
    for n in graph.managed() {
        g.set_channels_raw(n, vec![channel; graph.nodes()[n.0].radios]);
    }
    g.sync_down();
    g
}

/// Best objective with the whole mesh on one channel; ties go to the lower channel.
pub fn best_single_channel(world: &World) -> (Channel, f64) {
    let graph = world.graph();
    let mut best = (1, f64::NEG_INFINITY);
    for c in 1..=graph.n_channels() {
        let obj = world.evaluate_graph(&uniform_configuration(graph, c)).objective_bps;
        if obj > best.1 {
            best = (c, obj);
        }
    }
    best
}

/// Applies `(fronthaul, backhaul)` identically: serving radios of the gateway
/// start on the backhaul channel, every other radio uses the fronthaul one,
/// and uplink radios follow their parent.
pub fn pair_configuration(graph: &NetworkGraph, fronthaul: Channel, backhaul: Channel) -> NetworkGraph {
    let mut g = graph.clone();
    for n in graph.managed() {
        let node = &graph.nodes()[n.0];
        let channels = (0..node.radios)
            .map(|r| match node.uplink {
                None if r % 2 == 0 => backhaul,
                _ => fronthaul,
            })
            .collect();
        g.set_channels_raw(n, channels);
    }
    g.sync_down();
    g
}

/// A seeded random ordered pair of distinct orthogonal channels.
pub fn cca_assign<R: Rng + ?Sized>(n_channels: Channel, rng: &mut R) -> Result<(Channel, Channel), BaselineError> {
    let set: Vec<Channel> = ORTHOGONAL.iter().copied().filter(|&c| c <= n_channels).collect();
    if set.len() < 2 {
        return Err(BaselineError::TooFewOrthogonal(set));
    }
    let a = rng.random_range(0..set.len());
    let mut b = rng.random_range(0..set.len() - 1);
    if b >= a {
        b += 1;
    }
    Ok((set[a], set[b]))
}

/// Radios that must share a channel because they terminate the same links.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioGroup {
    pub radios: Vec<(NodeId, usize)>,
    /// `(transmitter, receiver)` of every link served by the group.
    pub links: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConflictGraph {
    pub groups: Vec<RadioGroup>,
    /// Symmetric weights between groups, keyed with the lower index first.
    pub edges: BTreeMap<(usize, usize), f64>,
    /// `(group, external channel, weight)`.
    pub external: Vec<(usize, Channel, f64)>,
}

impl ConflictGraph {
    pub fn weight(&self, a: usize, b: usize) -> f64 {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edges.get(&key).copied().unwrap_or(0.0)
    }

    pub fn weighted_degree(&self, g: usize) -> f64 {
        let mesh: f64 = self.edges.iter().filter(|((a, b), _)| *a == g || *b == g).map(|(_, w)| w).sum();
        let ext: f64 = self.external.iter().filter(|e| e.0 == g).map(|e| e.2).sum();
        mesh + ext
    }

    /// Builds the physical-model conflict graph: the weight of `b` on `a` is
    /// the normalised interference `I / (I + S)` that `b`'s transmitters put
    /// on `a`'s receivers; mesh weights are symmetrised, external ones are
    /// scaled by the AP's airtime.
    pub fn build(world: &World) -> Self {
        let graph = world.graph();
        let phy = world.phy();
        let mut group_of: BTreeMap<(NodeId, usize), usize> = BTreeMap::new();
        let mut groups: Vec<RadioGroup> = Vec::new();
        // Top-down so a child's uplink radio joins its parent's group when it
        // also serves children of its own.
        let mut order = vec![NodeId::GATEWAY];
        let mut i = 0;
        while i < order.len() {
            order.extend(graph.children(order[i]).filter(|c| graph.nodes()[c.0].is_managed()));
            i += 1;
        }
        for &n in &order {
            let node = &graph.nodes()[n.0];
            for r in 0..node.radios {
                let kids: Vec<NodeId> = graph.children_on(n, r).collect();
                if kids.is_empty() {
                    continue;
                }
                let inherited = node
                    .uplink
                    .filter(|u| u.radio == r)
                    .and_then(|u| group_of.get(&(u.parent, u.parent_radio)).copied());
                let g = match inherited {
                    Some(g) => g,
                    None => {
                        groups.push(RadioGroup { radios: Vec::new(), links: Vec::new() });
                        groups.len() - 1
                    }
                };
                group_of.insert((n, r), g);
                groups[g].radios.push((n, r));
                groups[g].links.extend(kids.into_iter().map(|k| (n, k)));
            }
        }

        let normalised = |tx: NodeId, rx: NodeId, signal_mw: f64| {
            let i = db_to_linear(phy::rssi_at(graph.location(tx), graph.location(rx), phy).dbm());
            i / (i + signal_mw)
        };
        let signal =
            |(tx, rx): (NodeId, NodeId)| db_to_linear(phy::rssi_at(graph.location(tx), graph.location(rx), phy).dbm());
        let on = |a: &RadioGroup, b: &RadioGroup| -> f64 {
            a.links
                .iter()
                .flat_map(|&la| b.links.iter().map(move |&lb| (la, lb)))
                .filter(|(la, lb)| la.0 != lb.0 && la.1 != lb.0)
                .map(|(la, lb)| normalised(lb.0, la.1, signal(la)))
                .sum()
        };
        let mut edges = BTreeMap::new();
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let w = 0.5 * (on(&groups[a], &groups[b]) + on(&groups[b], &groups[a]));
                if w > 0.0 {
                    edges.insert((a, b), w);
                }
            }
        }
        let mut external = Vec::new();
        for ap in world.externals().iter().filter(|a| a.active) {
            let power = ap.tx_power_dbm.unwrap_or(phy.tx_power_dbm);
            let airtime = ap.airtime(phy);
            for (g, group) in groups.iter().enumerate() {
                let w: f64 = group
                    .links
                    .iter()
                    .map(|&l| {
                        let i = db_to_linear(phy::rssi_from(power, ap.location, graph.location(l.1), phy).dbm());
                        i / (i + signal(l))
                    })
                    .sum::<f64>()
                    * airtime;
                if w > 0.0 {
                    external.push((g, ap.channel, w));
                }
            }
        }
        ConflictGraph { groups, edges, external }
    }
}

/// Greedy colouring of the conflict graph, heaviest group first; each group
/// takes the channel with the least overlap-weighted conflict.
pub fn clica_assign(world: &World) -> NetworkGraph {
    let cg = ConflictGraph::build(world);
    let n_channels = world.graph().n_channels();
    let mut order: Vec<usize> = (0..cg.groups.len()).collect();
    let degree: Vec<f64> = order.iter().map(|&g| cg.weighted_degree(g)).collect();
    order.sort_by(|&a, &b| degree[b].total_cmp(&degree[a]).then(a.cmp(&b)));
    let mut colour: Vec<Option<Channel>> = vec![None; cg.groups.len()];
    for &g in &order {
        let mut best = (1, f64::INFINITY);
        for c in 1..=n_channels {
            let mesh: f64 =
                (0..cg.groups.len()).filter_map(|o| colour[o].map(|oc| cg.weight(g, o) * phy::overlap(c, oc))).sum();
            let ext: f64 = cg.external.iter().filter(|e| e.0 == g).map(|e| e.2 * phy::overlap(c, e.1)).sum();
            let cost = mesh + ext;
            if cost < best.1 - 1e-15 {
                best = (c, cost);
            }
        }
        colour[g] = Some(best.0);
    }
    let mut out = world.graph().clone();
    for (g, group) in cg.groups.iter().enumerate() {
        for &(n, r) in &group.radios {
            let mut ch = out.channels_of(n).to_vec();
            ch[r] = colour[g].expect("coloured");
            out.set_channels_raw(n, ch);
        }
    }
    out.sync_down();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestConfiguration {
    pub locations: Vec<(NodeId, Location)>,
    /// Channel tuple per managed node, in node order.
    pub channels: Vec<(NodeId, Vec<Channel>)>,
    pub objective_bps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub best: Option<BestConfiguration>,
    /// Configurations enumerated, feasible or not.
    pub evaluations: u128,
    pub feasible: u64,
    /// Violations of the first configuration when none is feasible.
    pub violations: Vec<Violation>,
}

impl BruteForceResult {
    pub fn best_objective(&self) -> f64 {
        self.best.as_ref().map_or(0.0, |b| b.objective_bps)
    }

    /// Rebuilds the optimal configuration on top of `graph`.
    pub fn apply_to(&self, graph: &NetworkGraph) -> Option<NetworkGraph> {
        let best = self.best.as_ref()?;
        let mut g = graph.clone();
        for (n, l) in &best.locations {
            g.move_node(*n, l.point);
        }
        for (n, c) in &best.channels {
            g.set_channels_raw(*n, c.clone());
        }
        g.sync_down();
        Some(g)
    }
}

/// Size of the joint location and channel space.
pub fn search_space(graph: &NetworkGraph, locations: usize) -> u128 {
    let m = graph.extenders().count() as u32;
    let n = graph.n_channels() as u128;
    let channels: u128 = graph.managed().map(|i| n.pow(graph.nodes()[i.0].radios as u32)).product();
    (locations as u128).pow(m) * channels
}

fn decode(mut index: u128, radices: &[u128]) -> Vec<u128> {
    radices
        .iter()
        .map(|&r| {
            let d = index % r;
            index /= r;
            d
        })
        .collect()
}

/// Exhaustive search over extender placements drawn from `locations` and
/// every raw channel tuple of every managed node.
pub fn brute_force_optimum(
    world: &World,
    locations: &[Location],
    budget: u128,
) -> Result<BruteForceResult, BaselineError> {
    let graph = world.graph();
    let required = search_space(graph, locations.len());
    if required > budget {
        return Err(BaselineError::OverBudget { required, budget });
    }
    let extenders: Vec<NodeId> = graph.extenders().collect();
    let managed: Vec<NodeId> = graph.managed().collect();
    let n = graph.n_channels() as u128;
    let channel_radices: Vec<u128> = managed.iter().map(|i| n.pow(graph.nodes()[i.0].radios as u32)).collect();
    let location_radices = vec![locations.len() as u128; extenders.len()];
    let placements: u128 = location_radices.iter().product();
    let per_placement: u128 = channel_radices.iter().product();
    let users: Vec<NodeId> = graph.users().collect();

    let tuple = |node: NodeId, mut code: u128| -> Vec<Channel> {
        let radios = graph.nodes()[node.0].radios;
        let mut t = vec![0; radios];
        for slot in t.iter_mut().rev() {
            *slot = (code % n) as Channel + 1;
            code /= n;
        }
        t
    };

    let results: Vec<(u64, Option<BestConfiguration>, Vec<Violation>)> = (0..placements)
        .into_par_iter()
        .map(|p| {
            let place = decode(p, &location_radices);
            let mut g = graph.clone();
            let locs: Vec<(NodeId, Location)> =
                extenders.iter().zip(&place).map(|(&e, &l)| (e, locations[l as usize])).collect();
            for (e, l) in &locs {
                g.move_node(*e, l.point);
            }
            let mut feasible = 0u64;
            let mut best: Option<BestConfiguration> = None;
            let mut first_violations = Vec::new();
            for c in 0..per_placement {
                let codes = decode(c, &channel_radices);
                let channels: Vec<(NodeId, Vec<Channel>)> =
                    managed.iter().zip(&codes).map(|(&m, &code)| (m, tuple(m, code))).collect();
                for (m, t) in &channels {
                    g.set_channels_raw(*m, t.clone());
                }
                for &u in &users {
                    let up = g.nodes()[u.0].uplink.expect("user has uplink");
                    let ch = g.channels_of(up.parent)[up.parent_radio];
                    g.set_channels_raw(u, vec![ch]);
                }
                let violations = g.validate_constraints();
                if !violations.is_empty() {
                    if p == 0 && c == 0 {
                        first_violations = violations;
                    }
                    continue;
                }
                feasible += 1;
                let obj = world.evaluate_graph(&g).objective_bps;
                if best.as_ref().is_none_or(|b| obj > b.objective_bps) {
                    best = Some(BestConfiguration { locations: locs.clone(), channels, objective_bps: obj });
                }
            }
            (feasible, best, first_violations)
        })
        .collect();

    let mut feasible = 0;
    let mut best: Option<BestConfiguration> = None;
    let mut violations = Vec::new();
    for (f, b, v) in results {
        feasible += f;
        if violations.is_empty() {
            violations = v;
        }
        if let Some(b) = b {
            if best.as_ref().is_none_or(|x| b.objective_bps > x.objective_bps) {
                best = Some(b);
            }
        }
    }
    if best.is_some() {
        violations.clear();
    }
    Ok(BruteForceResult { best, evaluations: required, feasible, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::fixtures::{chain_graph, external, world_with};
    use crate::model::{Area, LocationGrid, Point};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    #[test]
    fn single_channel_avoids_busy_spectrum() {
        let w = world_with(chain_graph(1, [1, 1]), vec![external("ap", Point::new(8.0, 6.0), 2, 60.0)], 40.0);
        let (c, obj) = best_single_channel(&w);
        assert!(c >= 7, "picked {c}");
        assert!(obj > 0.0);
    }

    #[test]
    fn single_channel_tie_goes_low() {
        let w = world_with(chain_graph(1, [1, 1]), vec![], 5.0);
        assert_eq!(best_single_channel(&w).0, 1);
        let mut narrow = chain_graph(1, [1, 1]);
        narrow = NetworkGraph::new(narrow.nodes().to_vec(), *narrow.area(), 1).unwrap();
        assert_eq!(best_single_channel(&world_with(narrow, vec![], 5.0)).0, 1);
    }

    #[test]
    fn cca_pairs() {
        let mut seen = BTreeSet::new();
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = cca_assign(11, &mut rng).unwrap();
            assert_ne!(a, b);
            assert!(ORTHOGONAL.contains(&a) && ORTHOGONAL.contains(&b));
            seen.insert((a, b));
        }
        assert_eq!(seen.len(), 6);
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(cca_assign(11, &mut r1).unwrap(), cca_assign(11, &mut r2).unwrap());
        assert!(matches!(cca_assign(5, &mut r1), Err(BaselineError::TooFewOrthogonal(_))));
    }

    #[test]
    fn pair_configuration_is_valid() {
        let g = pair_configuration(&chain_graph(3, [3, 8]), 6, 1);
        assert!(g.validate_constraints().is_empty());
        assert_eq!(g.channels_of(NodeId(0)), &[1]);
        assert_eq!(g.channels_of(NodeId(1)), &[1, 6]);
        assert_eq!(g.channels_of(NodeId(2)), &[6]);
    }

    #[test]
    fn clica_separates_links_near_interference() {
        let w = world_with(chain_graph(3, [3, 8]), vec![external("ap", Point::new(14.0, 6.0), 1, 40.0)], 5.0);
        let g = clica_assign(&w);
        assert!(g.validate_constraints().is_empty());
        let bh = g.channels_of(NodeId(1))[0];
        let fh = g.channels_of(NodeId(1))[1];
        assert!((bh as i32 - fh as i32).abs() >= 5, "bh {bh} fh {fh}");
        assert!(fh >= 6, "fronthaul should leave channel 1, got {fh}");
    }

    #[test]
    fn clica_without_externals_is_deterministic() {
        let w = world_with(chain_graph(3, [3, 8]), vec![], 5.0);
        let a = clica_assign(&w);
        assert_eq!(a, clica_assign(&w));
        assert_eq!(a.channels_of(NodeId(0)), &[1]);
    }

    fn small_world() -> (World, Vec<Location>) {
        let w = world_with(chain_graph(1, [1, 1]), vec![external("ap", Point::new(12.0, 5.0), 2, 30.0)], 5.0);
        let w = {
            let g = NetworkGraph::new(w.graph().nodes().to_vec(), *w.graph().area(), 3).unwrap();
            world_with(g, w.externals().to_vec(), 5.0)
        };
        let grid = LocationGrid::new(Area::new(0.0, 0.0, 20.0, 10.0), 10.0).unwrap();
        let locs: Vec<Location> = grid.locations().take(4).collect();
        (w, locs)
    }

    #[test]
    fn brute_force_counts_every_configuration() {
        let (w, locs) = small_world();
        let r = brute_force_optimum(&w, &locs, BRUTE_FORCE_BUDGET).unwrap();
        assert_eq!(r.evaluations, 108);
        assert_eq!(r.feasible, 36);
        let best = r.apply_to(w.graph()).unwrap();
        assert!(best.validate_constraints().is_empty());
        assert!((w.evaluate_graph(&best).objective_bps - r.best_objective()).abs() < 1e-6);
    }

    #[test]
    fn brute_force_dominates_baselines() {
        let (w, locs) = small_world();
        let r = brute_force_optimum(&w, &locs, BRUTE_FORCE_BUDGET).unwrap();
        let here = [w.grid().nearest(w.graph().location(NodeId(1)))];
        let at_start = brute_force_optimum(&w, &here, BRUTE_FORCE_BUDGET).unwrap();
        assert!(r.best_objective() + 1e-9 >= at_start.best_objective() || !locs.contains(&here[0]));
        assert!(at_start.best_objective() + 1e-9 >= best_single_channel(&w).1);
        assert!(at_start.best_objective() + 1e-9 >= w.evaluate_graph(&clica_assign(&w)).objective_bps);
    }

    #[test]
    fn brute_force_budget() {
        let w = world_with(chain_graph(3, [3, 8]), vec![], 5.0);
        let grid = LocationGrid::new(*w.graph().area(), 1.0).unwrap();
        let locs: Vec<Location> = grid.locations().collect();
        assert_eq!(search_space(w.graph(), locs.len()), 231 * 11 * 121);
        match brute_force_optimum(&w, &locs, 100_000) {
            Err(BaselineError::OverBudget { required, budget }) => {
                assert_eq!(required, 231 * 11 * 121);
                assert_eq!(budget, 100_000);
            }
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn single_channel_is_diagonal_optimum() {
        let (w, _) = small_world();
        let (_, single) = best_single_channel(&w);
        let mut diag = f64::NEG_INFINITY;
        for c in 1..=3 {
            diag = diag.max(w.evaluate_graph(&uniform_configuration(w.graph(), c)).objective_bps);
        }
        assert_eq!(single, diag);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn clica_is_valid_and_oracle_dominates(
            aps in proptest::collection::vec((0.0f64..20.0, 0.0f64..10.0, 1u8..=3, 5.0f64..60.0), 0..4),
            demand in 1.0f64..40.0,
        ) {
            let externals = aps
                .iter()
                .enumerate()
                .map(|(i, &(x, y, c, l))| external(&format!("ap{i}"), Point::new(x, y), c, l))
                .collect();
            let g = NetworkGraph::new(chain_graph(1, [1, 1]).nodes().to_vec(), Area::new(0.0, 0.0, 20.0, 10.0), 3).unwrap();
            let w = world_with(g, externals, demand);
            let clica = clica_assign(&w);
            proptest::prop_assert!(clica.validate_constraints().is_empty());
            let here = [w.grid().nearest(w.graph().location(NodeId(1)))];
            let mut moved = w.graph().clone();
            moved.move_node(NodeId(1), here[0].point);
            let mut w = w;
            w.set_graph(moved);
            let oracle = brute_force_optimum(&w, &here, BRUTE_FORCE_BUDGET).unwrap().best_objective();
            proptest::prop_assert!(oracle + 1e-6 >= w.evaluate_graph(&clica_assign(&w)).objective_bps);
            proptest::prop_assert!(oracle + 1e-6 >= best_single_channel(&w).1);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let (f, b) = cca_assign(3, &mut rng).unwrap_or((1, 1));
            proptest::prop_assert!(oracle + 1e-6 >= w.evaluate_graph(&pair_configuration(w.graph(), f, b)).objective_bps);
        }
    }
}
