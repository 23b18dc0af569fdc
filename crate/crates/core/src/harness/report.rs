//! CSV and SVG output. Numbers are written with fixed precision so repeated
//! runs produce identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{ResilienceResult, RunResult, Scheme, MBPS};
use crate::error::HarnessError;
use crate::model::join_channels;

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn run_stem(r: &RunResult) -> String {
    format!("{}_seed{}", r.scheme, r.seed)
}

/// Value at each decile: the `ceil(q n)`-th smallest sample.
pub fn deciles(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return vec![0.0; 10];
    }
    let n = v.len();
    (1..=10).map(|q| v[((q * n).div_ceil(10)).max(1) - 1]).collect()
}

pub fn write_epochs<W: Write>(r: &RunResult, w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> =
        ["epoch", "objective_mbps", "per_user_mbps", "reward_mbps", "applied", "probes", "channels"]
            .map(String::from)
            .to_vec();
    header.extend(r.user_names.iter().map(|u| format!("{u}_mbps")));
    out.write_record(&header)?;
    let users = r.user_names.len().max(1) as f64;
    for row in &r.rows {
        let mut rec = vec![
            row.epoch.to_string(),
            num(row.objective_bps / MBPS),
            num(row.objective_bps / MBPS / users),
            num(row.reward_mbps),
            row.applied.to_string(),
            row.probes.to_string(),
            row.channels.iter().map(|c| join_channels(c)).collect::<Vec<_>>().join(" "),
        ];
        rec.extend(row.user_bps.iter().map(|b| num(b / MBPS)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_actions<W: Write>(r: &RunResult, w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "node", "policy", "action", "verdict", "reward", "q", "epsilon"])?;
    for a in &r.actions {
        out.write_record([
            a.epoch.to_string(),
            a.node.to_string(),
            a.policy.to_string(),
            a.action.to_string(),
            a.verdict.to_string(),
            num(a.reward_mbps),
            num(a.q),
            num(a.epsilon),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_runs<W: Write>(runs: &[RunResult], w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "scheme",
        "seed",
        "steady_state_mbps",
        "per_user_mbps",
        "convergence_epoch",
        "applied_to_convergence",
        "config_changes",
        "extender_start",
        "extender_end",
        "note",
    ])?;
    let points =
        |v: &[crate::model::Point]| v.iter().map(|p| format!("{:.2}:{:.2}", p.x, p.y)).collect::<Vec<_>>().join(";");
    for r in runs {
        out.write_record([
            r.scheme.to_string(),
            r.seed.to_string(),
            num(r.steady_state_bps / MBPS),
            num(r.per_user_bps() / MBPS),
            r.convergence.map_or_else(|| "none".into(), |c| c.to_string()),
            r.applied_to_convergence.to_string(),
            r.applied_total.to_string(),
            points(&r.extender_start),
            points(&r.extender_end),
            r.note.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub runs: usize,
    pub mean_per_user_mbps: f64,
    pub deciles_mbps: Vec<f64>,
    pub mean_convergence_epoch: Option<f64>,
    pub mean_config_changes: f64,
}

/// Per-scheme statistics over runs that produced data.
pub fn summarise(runs: &[RunResult]) -> Vec<SchemeSummary> {
    let mut by: BTreeMap<Scheme, Vec<&RunResult>> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.note.is_none()) {
        by.entry(r.scheme).or_default().push(r);
    }
    by.into_iter()
        .map(|(scheme, rs)| {
            let per_user: Vec<f64> = rs.iter().map(|r| r.per_user_bps() / MBPS).collect();
            let conv: Vec<f64> = rs.iter().filter_map(|r| r.convergence.map(|c| c as f64)).collect();
            let n = rs.len() as f64;
            SchemeSummary {
                scheme,
                runs: rs.len(),
                mean_per_user_mbps: per_user.iter().sum::<f64>() / n,
                deciles_mbps: deciles(&per_user),
                mean_convergence_epoch: (!conv.is_empty()).then(|| conv.iter().sum::<f64>() / conv.len() as f64),
                mean_config_changes: rs.iter().map(|r| r.applied_total as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(summary: &[SchemeSummary], tau_ms: f64, mut w: W) -> Result<(), HarnessError> {
    writeln!(w, "# epoch = {tau_ms} ms")?;
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> =
        ["scheme", "runs", "mean_per_user_mbps", "mean_convergence_epoch", "mean_config_changes"]
            .map(String::from)
            .to_vec();
    header.extend((1..=10).map(|q| format!("p{}", q * 10)));
    out.write_record(&header)?;
    for s in summary {
        let mut rec = vec![
            s.scheme.to_string(),
            s.runs.to_string(),
            num(s.mean_per_user_mbps),
            s.mean_convergence_epoch.map_or_else(|| "none".into(), num),
            num(s.mean_config_changes),
        ];
        rec.extend(s.deciles_mbps.iter().map(|&d| num(d)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_phases<W: Write>(results: &[ResilienceResult], tau_ms: f64, mut w: W) -> Result<(), HarnessError> {
    writeln!(w, "# epoch = {tau_ms} ms")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["seed", "phase", "start_epoch", "length", "convergence_epochs", "censored"])?;
    for r in results {
        for (i, p) in r.phases.iter().enumerate() {
            out.write_record([
                r.seed.to_string(),
                i.to_string(),
                p.start.to_string(),
                p.length.to_string(),
                p.convergence_epochs.to_string(),
                p.censored.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<fs::File, HarnessError> {
    Ok(fs::File::create(dir.join(name))?)
}

/// Writes every per-run file plus `runs.csv` and `summary.csv`; returns the paths.
pub fn write_batch(dir: &Path, runs: &[RunResult], tau_ms: f64, svg: bool) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for r in runs.iter().filter(|r| r.note.is_none()) {
        let stem = run_stem(r);
        write_epochs(r, create(dir, &format!("{stem}_epochs.csv"))?)?;
        written.push(dir.join(format!("{stem}_epochs.csv")));
        if let Some(kb) = &r.kb {
            write_actions(r, create(dir, &format!("{stem}_actions.csv"))?)?;
            kb.save(&dir.join(format!("{stem}_kb.txt")))?;
            written.push(dir.join(format!("{stem}_actions.csv")));
            written.push(dir.join(format!("{stem}_kb.txt")));
        }
    }
    write_runs(runs, create(dir, "runs.csv")?)?;
    let summary = summarise(runs);
    write_summary(&summary, tau_ms, create(dir, "summary.csv")?)?;
    written.push(dir.join("runs.csv"));
    written.push(dir.join("summary.csv"));
    if svg {
        fs::write(dir.join("throughput.svg"), throughput_svg(runs, tau_ms))?;
        fs::write(dir.join("cdf.svg"), cdf_svg(runs))?;
        written.push(dir.join("throughput.svg"));
        written.push(dir.join("cdf.svg"));
    }
    Ok(written)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#7f7f7f"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

struct Plot {
    body: String,
    x_max: f64,
    y_max: f64,
}

impl Plot {
    fn new(x_max: f64, y_max: f64) -> Self {
        Self { body: String::new(), x_max: x_max.max(1e-9), y_max: y_max.max(1e-9) }
    }

    fn sx(&self, x: f64) -> f64 {
        PAD + x / self.x_max * (W - 2.0 * PAD)
    }

    fn sy(&self, y: f64) -> f64 {
        H - PAD - y / self.y_max * (H - 2.0 * PAD)
    }

    fn line(&mut self, pts: &[(f64, f64)], colour: &str, label: &str, slot: usize) {
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", self.sx(x), self.sy(y))).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            d.join(" ")
        );
        let ly = PAD + 16.0 * slot as f64;
        let _ = writeln!(
            self.body,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{colour}" font-size="12">{label}</text>"#,
            W - PAD - 60.0
        );
    }

    fn finish(self, x_label: &str, y_label: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#, H - PAD, W - PAD);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{x_label}</text>"#,
            W / 2.0,
            H - 12.0
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
            H / 2.0,
            H / 2.0
        );
        let _ = writeln!(s, r#"<text x="{PAD}" y="{}" font-size="10">0</text>"#, H - PAD + 14.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{:.3}</text>"#,
            W - PAD,
            H - PAD + 14.0,
            self.x_max
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{:.3}</text>"#,
            PAD - 4.0,
            PAD + 4.0,
            self.y_max
        );
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}

fn by_scheme(runs: &[RunResult]) -> BTreeMap<Scheme, Vec<&RunResult>> {
    let mut m: BTreeMap<Scheme, Vec<&RunResult>> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.note.is_none() && !r.rows.is_empty()) {
        m.entry(r.scheme).or_default().push(r);
    }
    m
}

/// Mean per-user throughput against time, one line per scheme.
pub fn throughput_svg(runs: &[RunResult], tau_ms: f64) -> String {
    let groups = by_scheme(runs);
    let mut lines = Vec::new();
    for (scheme, rs) in &groups {
        let len = rs.iter().map(|r| r.rows.len()).min().unwrap_or(0);
        let pts: Vec<(f64, f64)> = (0..len)
            .map(|e| {
                let m = rs.iter().map(|r| r.rows[e].objective_bps / r.user_names.len().max(1) as f64).sum::<f64>()
                    / rs.len() as f64;
                (e as f64 * tau_ms / 1000.0, m / MBPS)
            })
            .collect();
        lines.push((*scheme, pts));
    }
    let x_max = lines.iter().flat_map(|l| l.1.iter().map(|p| p.0)).fold(0.0, f64::max);
    let y_max = lines.iter().flat_map(|l| l.1.iter().map(|p| p.1)).fold(0.0, f64::max) * 1.1;
    let mut plot = Plot::new(x_max, y_max);
    for (i, (scheme, pts)) in lines.iter().enumerate() {
        plot.line(pts, PALETTE[i % PALETTE.len()], scheme.name(), i);
    }
    plot.finish("time (s)", "per-user throughput (Mbps)")
}

/// Empirical CDF of steady-state per-user throughput per scheme.
pub fn cdf_svg(runs: &[RunResult]) -> String {
    let groups = by_scheme(runs);
    let mut lines = Vec::new();
    for (scheme, rs) in &groups {
        let mut v: Vec<f64> = rs.iter().map(|r| r.per_user_bps() / MBPS).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mut pts = Vec::with_capacity(2 * v.len());
        for (i, x) in v.iter().enumerate() {
            pts.push((*x, i as f64 / n));
            pts.push((*x, (i + 1) as f64 / n));
        }
        lines.push((*scheme, pts));
    }
    let x_max = lines.iter().flat_map(|l| l.1.iter().map(|p| p.0)).fold(0.0, f64::max) * 1.05;
    let mut plot = Plot::new(x_max, 1.0);
    for (i, (scheme, pts)) in lines.iter().enumerate() {
        plot.line(pts, PALETTE[i % PALETTE.len()], scheme.name(), i);
    }
    plot.finish("per-user throughput (Mbps)", "CDF")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decile_indices() {
        let v: Vec<f64> = (1..=50).map(f64::from).collect();
        assert_eq!(deciles(&v), vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0]);
        assert_eq!(deciles(&[7.0]), vec![7.0; 10]);
        let mut rev = v.clone();
        rev.reverse();
        assert_eq!(deciles(&rev), deciles(&v));
        assert_eq!(deciles(&[1.0, 2.0, 3.0])[0], 1.0);
        assert_eq!(deciles(&[1.0, 2.0, 3.0])[3], 2.0);
    }
}
