//! Action-type selection, extender relocation proposals and zero-cost
//! exploration while the network is idle.

use std::collections::BTreeSet;

use rand::Rng;

use crate::agent::guidance::euclidean;
use crate::error::AgentError;
use crate::kb::QTable;
use crate::model::{Channel, Location, LocationGrid, NodeId, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepositionReason {
    /// Backhaul signal at or below the minimum.
    Coverage,
    /// Best known value at this location is below target.
    LowValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionType {
    Reposition(RepositionReason),
    ChannelPhase,
}

/// Gateways never move. Extenders move on weak backhaul or a poor best Q.
pub fn select_action_type(
    is_extender: bool,
    backhaul_rssi: Option<f64>,
    max_q: f64,
    rssi_min: f64,
    q_target: f64,
) -> ActionType {
    if !is_extender {
        return ActionType::ChannelPhase;
    }
    if backhaul_rssi.is_some_and(|r| r <= rssi_min) {
        ActionType::Reposition(RepositionReason::Coverage)
    } else if max_q < q_target {
        ActionType::Reposition(RepositionReason::LowValue)
    } else {
        ActionType::ChannelPhase
    }
}

const OFFSET_CELLS: f64 = 2.0;
const OFFSET_TRIES: usize = 64;

/// Midway between `current` and the next hop, snapped to the grid. A visited
/// midpoint is perturbed by a random offset of at most two cells.
pub fn propose_location<R: Rng + ?Sized>(
    current: Point,
    next_hop: Point,
    grid: &LocationGrid,
    visited: &BTreeSet<usize>,
    rng: &mut R,
) -> Location {
    settle(current.midpoint(next_hop), next_hop, grid, visited, rng)
}

/// Midway between the next hop and the centroid of the users the extender
/// serves; the same perturbation applies once that spot has been tried.
pub fn recommend_location<R: Rng + ?Sized>(
    next_hop: Point,
    users: &[Point],
    grid: &LocationGrid,
    visited: &BTreeSet<usize>,
    rng: &mut R,
) -> Option<Location> {
    if users.is_empty() {
        return None;
    }
    let n = users.len() as f64;
    let centroid = Point::new(users.iter().map(|p| p.x).sum::<f64>() / n, users.iter().map(|p| p.y).sum::<f64>() / n);
    Some(settle(next_hop.midpoint(centroid), next_hop, grid, visited, rng))
}

fn settle<R: Rng + ?Sized>(
    target: Point,
    toward: Point,
    grid: &LocationGrid,
    visited: &BTreeSet<usize>,
    rng: &mut R,
) -> Location {
    let snapped = grid.nearest_toward(target, toward);
    if !visited.contains(&snapped.grid_index) {
        return snapped;
    }
    let radius = OFFSET_CELLS * grid.spacing();
    let area = grid.area();
    for _ in 0..OFFSET_TRIES {
        let dx = rng.random_range(-radius..=radius);
        let dy = rng.random_range(-radius..=radius);
        if dx.hypot(dy) > radius {
            continue;
        }
        let p = Point::new(
            (snapped.point.x + dx).clamp(area.x_min, area.x_max),
            (snapped.point.y + dy).clamp(area.y_min, area.y_max),
        );
        let cand = grid.nearest(p);
        if cand.grid_index != snapped.grid_index && !visited.contains(&cand.grid_index) {
            return cand;
        }
    }
    snapped
}

/// Picks the probe for an idle network: the unvisited tuple farthest in
/// total from everything already tried, or a uniform draw once the table is
/// full. Tuples rejected by `blocked` are never proposed while others remain.
pub fn zero_cost_explore<R: Rng + ?Sized>(
    node: NodeId,
    state: usize,
    actions: &[Vec<Channel>],
    q: &QTable,
    active_users: usize,
    blocked: impl Fn(&[Channel]) -> bool,
    rng: &mut R,
) -> Result<usize, AgentError> {
    if active_users > 0 {
        return Err(AgentError::TrafficPresent(active_users));
    }
    let visited: Vec<&Vec<Channel>> = actions.iter().filter(|a| q.visited(node, state, a)).collect();
    let open: Vec<usize> = (0..actions.len()).filter(|&i| !blocked(&actions[i])).collect();
    let pool = if open.is_empty() { (0..actions.len()).collect() } else { open };
    let unvisited: Vec<usize> = pool.iter().copied().filter(|&i| !q.visited(node, state, &actions[i])).collect();
    if unvisited.is_empty() {
        return Ok(pool[rng.random_range(0..pool.len())]);
    }
    let mut best = (unvisited[0], f64::NEG_INFINITY);
    for &i in &unvisited {
        let beta: f64 = visited.iter().map(|v| euclidean(&actions[i], v)).sum();
        if beta > best.1 {
            best = (i, beta);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{channel_tuples, Area};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn action_type_examples() {
        assert_eq!(
            select_action_type(true, Some(-70.0), 10.0, -65.0, 1.0),
            ActionType::Reposition(RepositionReason::Coverage)
        );
        assert_eq!(select_action_type(true, Some(-56.0), 10.0, -65.0, 1.0), ActionType::ChannelPhase);
        assert_eq!(select_action_type(false, Some(-90.0), 0.0, -65.0, 1.0), ActionType::ChannelPhase);
        assert_eq!(
            select_action_type(true, Some(-56.0), 0.5, -65.0, 1.0),
            ActionType::Reposition(RepositionReason::LowValue)
        );
    }

    fn grid() -> LocationGrid {
        LocationGrid::new(Area::new(0.0, 0.0, 20.0, 10.0), 1.0).unwrap()
    }

    #[test]
    fn midpoint_when_unvisited() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = propose_location(Point::new(16.0, 5.0), Point::new(0.0, 5.0), &grid(), &BTreeSet::new(), &mut rng);
        assert_eq!(l.point, Point::new(8.0, 5.0));
    }

    #[test]
    fn adjacent_snaps_toward_next_hop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = grid();
        let l = propose_location(Point::new(1.0, 5.0), Point::new(0.0, 5.0), &g, &BTreeSet::new(), &mut rng);
        assert_eq!(l.point, Point::new(0.0, 5.0));
        assert_ne!(l.grid_index, g.nearest(Point::new(1.0, 5.0)).grid_index);
    }

    #[test]
    fn visited_midpoint_is_perturbed_within_radius() {
        let g = grid();
        let mid = g.nearest(Point::new(8.0, 5.0));
        let visited = BTreeSet::from([mid.grid_index]);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = propose_location(Point::new(16.0, 5.0), Point::new(0.0, 5.0), &g, &visited, &mut rng);
            assert_ne!(l.grid_index, mid.grid_index);
            assert!(l.point.distance(mid.point) <= 2.0 * g.spacing() + 0.5 * 2f64.sqrt() + 1e-9);
            assert!(g.area().contains(l.point));
        }
    }

    #[test]
    fn farthest_unvisited_probe() {
        let actions = channel_tuples(2, 11);
        let mut q = QTable::new();
        q.set(NodeId(1), 3, &[1, 1], 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let i = zero_cost_explore(NodeId(1), 3, &actions, &q, 0, |_| false, &mut rng).unwrap();
        assert_eq!(actions[i], vec![11, 11]);
        assert!((euclidean(&actions[i], &[1, 1]) - 200f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn refuses_with_traffic() {
        let actions = channel_tuples(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            zero_cost_explore(NodeId(0), 1, &actions, &QTable::new(), 2, |_| false, &mut rng),
            Err(AgentError::TrafficPresent(2))
        );
    }

    #[test]
    fn blocked_tuples_are_skipped() {
        let actions = channel_tuples(1, 3);
        let mut q = QTable::new();
        q.set(NodeId(0), 1, &[1], 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let i = zero_cost_explore(NodeId(0), 1, &actions, &q, 0, |a| a[0] == 3, &mut rng).unwrap();
        assert_eq!(actions[i], vec![2]);
    }

    #[test]
    fn full_table_draws_reproducibly() {
        let actions = channel_tuples(2, 11);
        let mut q = QTable::new();
        for a in &actions {
            q.set(NodeId(1), 1, a, 1.0);
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10)
                .map(|_| zero_cost_explore(NodeId(1), 1, &actions, &q, 0, |_| false, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert!(draw(9).iter().collect::<BTreeSet<_>>().len() > 1);
    }
}
