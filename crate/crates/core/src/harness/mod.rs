//! Seeded batch runs of the agent and the reference schemes, steady-state
//! detection and the multi-phase resilience experiment.

pub mod report;
pub mod scenario;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::{ActionRecord, Agent, Variant};
use crate::baselines::{
    best_single_channel, brute_force_optimum, cca_assign, clica_assign, pair_configuration, uniform_configuration,
    BRUTE_FORCE_BUDGET,
};
use crate::env::World;
use crate::error::{BaselineError, HarnessError};
use crate::kb::KnowledgeBase;
use crate::model::{Channel, NodeId, Point};
use crate::perception::{perceive, SampleCollector};

pub use scenario::{ScenarioSpec, StartChannels, MBPS};

/// Agent seeds are decorrelated from the world seed.
const AGENT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    Icalo,
    Ugrl,
    Single,
    Cca,
    Clica,
    Brute,
}

impl Scheme {
    pub const ALL: [Scheme; 6] =
        [Scheme::Icalo, Scheme::Ugrl, Scheme::Single, Scheme::Cca, Scheme::Clica, Scheme::Brute];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Icalo => "icalo",
            Scheme::Ugrl => "ugrl",
            Scheme::Single => "single",
            Scheme::Cca => "cca",
            Scheme::Clica => "clica",
            Scheme::Brute => "brute",
        }
    }

    pub fn is_learning(self) -> bool {
        matches!(self, Scheme::Icalo | Scheme::Ugrl)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HarnessError::UnknownScheme(s.to_string()))
    }
}

/// Parses `a..b` (half-open) or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, HarnessError> {
    let err = || HarnessError::SeedRange(s.to_string());
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| err())?;
            let b: u64 = b.trim().parse().map_err(|_| err())?;
            if b <= a {
                return Err(err());
            }
            Ok((a..b).collect())
        }
        None => Ok(vec![s.trim().parse().map_err(|_| err())?]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: u64,
    pub objective_bps: f64,
    pub user_bps: Vec<f64>,
    pub reward_mbps: f64,
    /// Configuration changes decided at the end of this epoch.
    pub applied: usize,
    pub probes: usize,
    /// Channel tuples of the managed nodes in effect during this epoch.
    pub channels: Vec<Vec<Channel>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub scheme: Scheme,
    pub seed: u64,
    pub user_names: Vec<String>,
    pub rows: Vec<EpochRow>,
    pub convergence: Option<u64>,
    pub steady_state_bps: f64,
    pub applied_total: usize,
    pub applied_to_convergence: usize,
    pub extender_start: Vec<Point>,
    pub extender_end: Vec<Point>,
    pub actions: Vec<ActionRecord>,
    pub kb: Option<KnowledgeBase>,
    /// Set when the scheme could not run, e.g. an oracle over budget.
    pub note: Option<String>,
}

impl RunResult {
    pub fn per_user_bps(&self) -> f64 {
        if self.user_names.is_empty() {
            0.0
        } else {
            self.steady_state_bps / self.user_names.len() as f64
        }
    }

    pub fn objective_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective_bps).collect()
    }

    pub fn applied_series(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.applied).collect()
    }
}

/// First epoch whose value holds within `tolerance` (relative) for `window`
/// epochs with no configuration change. `None` if the series never settles.
pub fn detect_convergence(series: &[f64], applied: &[usize], window: usize, tolerance: f64) -> Option<u64> {
    let window = window.max(1);
    if series.len() < window {
        return None;
    }
    (0..=series.len() - window).find_map(|e| {
        let v = series[e];
        let band = tolerance * v.abs();
        let steady = series[e..e + window].iter().all(|x| (x - v).abs() <= band + 1e-9);
        let quiet = applied.get(e..e + window).is_none_or(|a| a.iter().all(|&n| n == 0));
        (steady && quiet).then_some(e as u64)
    })
}

fn steady_state(series: &[f64], window: usize) -> f64 {
    let tail = &series[series.len().saturating_sub(window.max(1))..];
    if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

fn extender_points(world: &World) -> Vec<Point> {
    world.graph().extenders().map(|e| world.graph().location(e)).collect()
}

fn record(world: &World, epoch: u64, users: &[NodeId]) -> EpochRow {
    let eval = world.evaluate();
    let user_bps =
        users.iter().map(|u| eval.users.iter().find(|s| s.user == *u).map_or(0.0, |s| s.delivered_bps)).collect();
    let graph = world.graph();
    let channels = graph.managed().map(|n| graph.channels_of(n).to_vec()).collect();
    EpochRow { epoch, objective_bps: eval.objective_bps, user_bps, reward_mbps: 0.0, applied: 0, probes: 0, channels }
}

/// One seeded run of `scheme` for `epochs` epochs.
pub fn run_once(spec: &ScenarioSpec, scheme: Scheme, seed: u64, epochs: u64) -> Result<RunResult, HarnessError> {
    let mut world = spec.build_world(seed)?;
    let names = spec.node_names();
    let users: Vec<NodeId> = world.graph().users().collect();
    let user_names = users.iter().map(|u| names[u.0].clone()).collect();
    let extender_start = extender_points(&world);
    let mut result = RunResult {
        scheme,
        seed,
        user_names,
        rows: Vec::new(),
        convergence: None,
        steady_state_bps: 0.0,
        applied_total: 0,
        applied_to_convergence: 0,
        extender_start,
        extender_end: Vec::new(),
        actions: Vec::new(),
        kb: None,
        note: None,
    };

    let mut agent = match scheme {
        Scheme::Icalo | Scheme::Ugrl => {
            let variant = if scheme == Scheme::Icalo { Variant::Guided } else { Variant::Unguided };
            Some(Agent::new(
                &world,
                spec.agent.clone(),
                spec.thresholds,
                variant,
                spec.total_demand_mbps(),
                seed ^ AGENT_SEED_SALT,
            ))
        }
        Scheme::Single => {
            let (c, _) = best_single_channel(&world);
            let g = uniform_configuration(world.graph(), c);
            world.set_graph(g);
            None
        }
        Scheme::Cca => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match cca_assign(world.graph().n_channels(), &mut rng) {
                Ok((f, b)) => {
                    let g = pair_configuration(world.graph(), f, b);
                    world.set_graph(g);
                }
                Err(e) => result.note = Some(e.to_string()),
            }
            None
        }
        Scheme::Clica => {
            let g = clica_assign(&world);
            world.set_graph(g);
            None
        }
        Scheme::Brute => {
            let locations: Vec<_> = world.grid().locations().collect();
            match brute_force_optimum(&world, &locations, BRUTE_FORCE_BUDGET) {
                Ok(r) => match r.apply_to(world.graph()) {
                    Some(g) => world.set_graph(g),
                    None => result.note = Some("no feasible configuration".into()),
                },
                Err(e @ BaselineError::OverBudget { .. }) => result.note = Some(e.to_string()),
                Err(e) => return Err(e.into()),
            }
            None
        }
    };
    if result.note.is_some() {
        result.extender_end = extender_points(&world);
        return Ok(result);
    }

    let tau = world.tau_ms();
    let sentinel = world.sentinel().clone();
    let mut collector = SampleCollector::new(sentinel.samples_per_decision, sentinel.max_wait_s * 1000.0);
    let mut prev = world.sense();
    for epoch in 0..epochs {
        world.step()?;
        let mut row = record(&world, epoch, &users);
        if let Some(agent) = agent.as_mut() {
            let next = world.sense();
            let snapshot = perceive(&prev, &next, tau).map_err(|e| HarnessError::Scenario(e.to_string()))?;
            prev = next;
            collector.push(snapshot, tau);
            if collector.ready() {
                let batch = collector.take().expect("ready collector has samples");
                let report = agent.decide(&mut world, &batch)?;
                row.applied = report.applied;
                row.probes = report.probes;
                row.reward_mbps = report.reward_mbps;
            }
        }
        result.rows.push(row);
    }

    let series = result.objective_series();
    let applied = result.applied_series();
    let conv = spec.convergence;
    result.convergence = detect_convergence(&series, &applied, conv.window, conv.tolerance);
    result.steady_state_bps = steady_state(&series, conv.window);
    result.applied_total = applied.iter().sum();
    let upto = result.convergence.map_or(applied.len(), |c| c as usize);
    result.applied_to_convergence = applied[..upto].iter().sum();
    result.extender_end = extender_points(&world);
    if let Some(agent) = agent {
        result.actions = agent.log().to_vec();
        result.kb = Some(agent.kb().clone());
    }
    Ok(result)
}

/// Independent runs over `seeds`, computed in parallel and returned in seed order.
pub fn run_experiment(
    spec: &ScenarioSpec,
    scheme: Scheme,
    seeds: &[u64],
    epochs: u64,
) -> Result<Vec<RunResult>, HarnessError> {
    seeds.par_iter().map(|&s| run_once(spec, scheme, s, epochs)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseResult {
    pub start: u64,
    pub length: u64,
    /// Epochs from phase start to steady state; the phase length if censored.
    pub convergence_epochs: u64,
    pub censored: bool,
}

/// Splits a run at the scenario's event epochs and measures each phase.
pub fn phases(run: &RunResult, boundaries: &[u64], window: usize, tolerance: f64) -> Vec<PhaseResult> {
    let n = run.rows.len() as u64;
    let mut starts: Vec<u64> = std::iter::once(0).chain(boundaries.iter().copied()).filter(|&b| b < n).collect();
    starts.dedup();
    let series = run.objective_series();
    let applied = run.applied_series();
    starts
        .iter()
        .enumerate()
        .map(|(i, &start)| {
            let end = starts.get(i + 1).copied().unwrap_or(n);
            let (s, e) = (start as usize, end as usize);
            let conv = detect_convergence(&series[s..e], &applied[s..e], window, tolerance);
            PhaseResult {
                start,
                length: end - start,
                convergence_epochs: conv.unwrap_or(end - start),
                censored: conv.is_none(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResilienceResult {
    pub seed: u64,
    pub phases: Vec<PhaseResult>,
    pub run: RunResult,
}

impl ResilienceResult {
    /// Phase convergence counts never increase (equal neighbours allowed).
    pub fn non_increasing(&self) -> bool {
        self.phases.windows(2).all(|w| w[1].convergence_epochs <= w[0].convergence_epochs)
    }
}

/// The agent kept running through every environment change.
pub fn resilience_experiment(
    spec: &ScenarioSpec,
    seeds: &[u64],
    epochs: u64,
) -> Result<Vec<ResilienceResult>, HarnessError> {
    let boundaries = spec.event_epochs();
    let conv = spec.convergence;
    run_experiment(spec, Scheme::Icalo, seeds, epochs).map(|runs| {
        runs.into_iter()
            .map(|run| ResilienceResult {
                seed: run.seed,
                phases: phases(&run, &boundaries, conv.window, conv.tolerance),
                run,
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_examples() {
        assert_eq!(detect_convergence(&[3.0; 20], &[0; 20], 10, 0.05), Some(0));
        let mut settle: Vec<f64> = (0..13).map(|i| 10.0 * i as f64).collect();
        settle.extend([130.0; 15]);
        assert_eq!(detect_convergence(&settle, &[0; 28], 10, 0.05), Some(13));
        let osc: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { 2.0 }).collect();
        assert_eq!(detect_convergence(&osc, &[0; 40], 10, 0.05), None);
        let mut acts = [0; 20];
        acts[4] = 1;
        assert_eq!(detect_convergence(&[3.0; 20], &acts, 10, 0.05), Some(5));
        assert_eq!(detect_convergence(&[3.0; 5], &[0; 5], 10, 0.05), None);
    }

    #[test]
    fn seeds_and_schemes() {
        assert_eq!(parse_seeds("3..6").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_seeds("42").unwrap(), vec![42]);
        assert!(parse_seeds("6..3").is_err());
        assert!(parse_seeds("x").is_err());
        assert_eq!("CLICA".parse::<Scheme>().unwrap(), Scheme::Clica);
        assert!(matches!("ilp".parse::<Scheme>(), Err(HarnessError::UnknownScheme(_))));
    }

    fn run_with(series: Vec<f64>) -> RunResult {
        RunResult {
            scheme: Scheme::Icalo,
            seed: 0,
            user_names: vec!["u".into()],
            rows: series
                .into_iter()
                .enumerate()
                .map(|(i, v)| EpochRow {
                    epoch: i as u64,
                    objective_bps: v,
                    user_bps: vec![v],
                    reward_mbps: 0.0,
                    applied: 0,
                    probes: 0,
                    channels: Vec::new(),
                })
                .collect(),
            convergence: None,
            steady_state_bps: 0.0,
            applied_total: 0,
            applied_to_convergence: 0,
            extender_start: vec![],
            extender_end: vec![],
            actions: vec![],
            kb: None,
            note: None,
        }
    }

    #[test]
    fn phase_split() {
        let mut s = vec![1.0; 30];
        s.extend((0..5).map(|i| i as f64));
        s.extend([9.0; 25]);
        let r = run_with(s);
        let p = phases(&r, &[30], 10, 0.05);
        assert_eq!(p.len(), 2);
        assert_eq!(p[0], PhaseResult { start: 0, length: 30, convergence_epochs: 0, censored: false });
        assert_eq!(p[1].convergence_epochs, 5);
        assert_eq!(phases(&r, &[], 10, 0.05).len(), 1);
        let early = phases(&run_with((0..40).map(|i| i as f64).collect()), &[8], 10, 0.05);
        assert!(early[0].censored);
        assert_eq!(early[0].convergence_epochs, 8);
    }
}
