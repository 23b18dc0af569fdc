use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use meshopt::baselines::{brute_force_optimum, BRUTE_FORCE_BUDGET};
use meshopt::harness::report::{self, summarise};
use meshopt::harness::{parse_seeds, resilience_experiment, run_experiment, ScenarioSpec, Scheme, MBPS};
use meshopt::model::join_channels;

#[derive(Parser)]
#[command(name = "meshopt", version, about = "Channel and extender-location optimisation for Wi-Fi mesh networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Seed range `a..b` (half-open) or a single seed.
    #[arg(long)]
    seeds: Option<String>,
    /// Epochs per run; defaults to the scenario's value.
    #[arg(long)]
    epochs: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also draw throughput and CDF plots.
    #[arg(long)]
    svg: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme over a batch of seeds.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "icalo")]
        scheme: String,
    },
    /// Run several schemes over the same seeds (comma list or repeated flag).
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = ["icalo".to_string(), "clica".into(), "cca".into(), "single".into()])]
        scheme: Vec<String>,
    },
    /// Convergence per phase while external APs come and go.
    Resilience {
        #[command(flatten)]
        common: Common,
    },
    /// Exhaustive optimum of the scenario's initial world.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

struct Loaded {
    spec: ScenarioSpec,
    seeds: Vec<u64>,
    epochs: u64,
}

fn load(c: &Common) -> Result<Loaded> {
    let spec = ScenarioSpec::load(&c.scenario).with_context(|| format!("loading {}", c.scenario.display()))?;
    let seeds = match &c.seeds {
        Some(s) => parse_seeds(s)?,
        None => spec.seeds.map_or_else(|| vec![0], |(a, b)| (a..b).collect()),
    };
    let epochs = c.epochs.unwrap_or(spec.epochs);
    Ok(Loaded { spec, seeds, epochs })
}

fn batch(c: &Common, schemes: &[String]) -> Result<()> {
    let l = load(c)?;
    let schemes: Vec<Scheme> = schemes.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    let start = Instant::now();
    let mut runs = Vec::new();
    for s in &schemes {
        runs.extend(run_experiment(&l.spec, *s, &l.seeds, l.epochs)?);
    }
    report::write_batch(&c.out, &runs, l.spec.tau_ms, c.svg)?;
    println!("scenario {} | {} seeds x {} epochs | epoch = {} ms", l.spec.name, l.seeds.len(), l.epochs, l.spec.tau_ms);
    println!("{:<8} {:>5} {:>14} {:>10} {:>10} {:>10}", "scheme", "runs", "per-user Mbps", "p10", "p50", "conv");
    for s in summarise(&runs) {
        println!(
            "{:<8} {:>5} {:>14.3} {:>10.3} {:>10.3} {:>10}",
            s.scheme.name(),
            s.runs,
            s.mean_per_user_mbps,
            s.deciles_mbps[0],
            s.deciles_mbps[4],
            s.mean_convergence_epoch.map_or_else(|| "-".into(), |v| format!("{v:.1}"))
        );
    }
    for r in runs.iter().filter(|r| r.note.is_some()) {
        println!("{} seed {}: {}", r.scheme, r.seed, r.note.as_deref().unwrap_or_default());
    }
    println!("wrote {} in {:.1?}", c.out.display(), start.elapsed());
    Ok(())
}

fn resilience(c: &Common) -> Result<()> {
    let l = load(c)?;
    let results = resilience_experiment(&l.spec, &l.seeds, l.epochs)?;
    std::fs::create_dir_all(&c.out)?;
    report::write_phases(&results, l.spec.tau_ms, std::fs::File::create(c.out.join("phases.csv"))?)?;
    let runs: Vec<_> = results.iter().map(|r| r.run.clone()).collect();
    report::write_batch(&c.out, &runs, l.spec.tau_ms, c.svg)?;
    let mut trend = 0;
    for r in &results {
        let p: Vec<String> =
            r.phases.iter().map(|p| format!("{}{}", p.convergence_epochs, if p.censored { "+" } else { "" })).collect();
        trend += usize::from(r.non_increasing());
        println!("seed {:>3}: {}", r.seed, p.join(" "));
    }
    println!(
        "non-increasing in {trend}/{} seeds (epoch = {} ms, + marks censored phases)",
        results.len(),
        l.spec.tau_ms
    );
    Ok(())
}

fn oracle(c: &Common) -> Result<()> {
    let l = load(c)?;
    std::fs::create_dir_all(&c.out)?;
    let mut w = csv::Writer::from_path(c.out.join("oracle.csv"))?;
    w.write_record(["seed", "evaluations", "feasible", "optimum_mbps", "locations", "channels"])?;
    for &seed in &l.seeds {
        let world = l.spec.build_world(seed)?;
        let locations: Vec<_> = world.grid().locations().collect();
        let r = brute_force_optimum(&world, &locations, BRUTE_FORCE_BUDGET)?;
        let (locs, chans) = match &r.best {
            Some(b) => (
                b.locations
                    .iter()
                    .map(|(n, l)| format!("{n}@{:.2}:{:.2}", l.point.x, l.point.y))
                    .collect::<Vec<_>>()
                    .join(" "),
                b.channels.iter().map(|(n, c)| format!("{n}={}", join_channels(c))).collect::<Vec<_>>().join(" "),
            ),
            None => ("-".into(), r.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")),
        };
        println!(
            "seed {seed}: {} configurations, {} feasible, optimum {:.3} Mbps [{locs}] [{chans}]",
            r.evaluations,
            r.feasible,
            r.best_objective() / MBPS
        );
        w.write_record([
            seed.to_string(),
            r.evaluations.to_string(),
            r.feasible.to_string(),
            format!("{:.6}", r.best_objective() / MBPS),
            locs,
            chans,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { common, scheme } => batch(&common, &[scheme]),
        Command::Compare { common, scheme } => batch(&common, &scheme),
        Command::Resilience { common } => resilience(&common),
        Command::Oracle { common } => oracle(&common),
    }
}
