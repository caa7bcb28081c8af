//! Seed x horizon grids: runs, comparators, per-round CSVs, a JSON summary
//! and an SVG plot of the regret curves.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::analysis::{fit_slope, mean_se, SlopeFit};
use super::audit::{audit_run, Violation};
use super::comparator::{best_fixed_m_for, ComparatorOptions, SurrogateObjective};
use super::config::ExperimentConfig;
use crate::bco_base::Regime;
use crate::bco_memory::{schedule_stats, ScheduleStats};
use crate::controller::{run_bandit_control, ControlRun, ControlTrace, RunAudit};
use crate::dap::DapModel;
use crate::error::{Error, Result};

/// Environment variable holding the worker count (default: all cores).
pub const WORKERS_ENV: &str = "BANDIT_CONTROL_WORKERS";

const CURVE_POINTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub horizon: usize,
    pub seed: u64,
    pub memory: usize,
    pub total_cost: f64,
    /// `J*` of the best constant policy; absent in audit-only runs.
    pub comparator_cost: Option<f64>,
    pub comparator_converged: Option<bool>,
    pub regret: Option<f64>,
    pub schedule: ScheduleStats,
    pub audit: RunAudit,
    pub violations: Vec<Violation>,
    pub csv: Option<String>,
    /// Cumulative regret sampled at `CURVE_POINTS` rounds, as `(t, R(t))`.
    #[serde(skip)]
    pub curve: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: usize,
    pub seeds: usize,
    pub mean_regret: f64,
    pub regret_se: f64,
    pub mean_regret_per_round: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub regime: Regime,
    pub horizons: Vec<HorizonSummary>,
    pub slope: Option<SlopeFit>,
    pub cells: Vec<CellSummary>,
    pub violations: usize,
}

impl ExperimentSummary {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// `(invariant, horizon, seed, detail)` for every violation.
    pub fn violation_list(&self) -> Vec<(String, usize, u64, String)> {
        self.cells
            .iter()
            .flat_map(|c| {
                c.violations
                    .iter()
                    .map(move |v| (v.invariant.clone(), c.horizon, c.seed, v.detail.clone()))
            })
            .collect()
    }
}

/// Runs `f` on a pool sized by [`WORKERS_ENV`].
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            Error::Config(format!(
                "{WORKERS_ENV} must be a non-negative integer, got {v:?}"
            ))
        })?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// One grid cell: the run, its audit and, when requested, the comparator.
pub fn run_cell(
    cfg: &ExperimentConfig,
    horizon: usize,
    seed: u64,
    comparator: bool,
) -> Result<(CellSummary, ControlTrace)> {
    let run = ControlRun::new(cfg.setup(horizon, seed)?)?;
    let trace = run_bandit_control(&run)?;
    let violations = audit_run(&run, &trace);
    let total = trace.total_cost();
    let mut cell = CellSummary {
        horizon,
        seed,
        memory: run.constants.h,
        total_cost: total,
        comparator_cost: None,
        comparator_converged: None,
        regret: None,
        schedule: schedule_stats(&trace.updates),
        audit: trace.audit,
        violations,
        csv: None,
        curve: Vec::new(),
    };
    if comparator {
        let s = &run.setup;
        let model = DapModel::new(&s.plant, &s.k0, run.constants.h)?;
        let obj = SurrogateObjective::new(&model, &s.cost, &trace.noise)?;
        let opts = ComparatorOptions {
            restarts: cfg.comparator_restarts,
            seed,
            ..ComparatorOptions::default()
        };
        let best = best_fixed_m_for(&obj, &run.comparator_set()?, &opts)?;
        let per_round = obj.per_round(&best.m)?;
        let stride = horizon.div_ceil(CURVE_POINTS).max(1);
        let mut comp = 0.0;
        for (row, c) in trace.rows.iter().zip(&per_round) {
            comp += c;
            if row.t % stride == 0 || row.t == horizon {
                cell.curve.push((row.t, row.cumulative_cost - comp));
            }
        }
        cell.comparator_cost = Some(best.j);
        cell.comparator_converged = Some(best.converged);
        cell.regret = Some(total - best.j);
    }
    Ok((cell, trace))
}

fn csv_name(horizon: usize, seed: u64) -> String {
    format!("T{horizon}_seed{seed}.csv")
}

pub fn write_trace_csv(path: &Path, trace: &ControlTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in &trace.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn summarize(cfg: &ExperimentConfig, cells: Vec<CellSummary>) -> Result<ExperimentSummary> {
    let mut horizons = Vec::new();
    for &t in &cfg.horizons {
        let regrets: Vec<f64> = cells
            .iter()
            .filter(|c| c.horizon == t)
            .filter_map(|c| c.regret)
            .collect();
        if let Some((mean, se)) = mean_se(&regrets) {
            horizons.push(HorizonSummary {
                horizon: t,
                seeds: regrets.len(),
                mean_regret: mean,
                regret_se: se,
                mean_regret_per_round: mean / t as f64,
            });
        }
    }
    let slope = if horizons.len() >= 3 {
        let pts: Vec<(f64, f64)> = horizons
            .iter()
            .map(|h| (h.horizon as f64, h.mean_regret))
            .collect();
        fit_slope(&pts).ok()
    } else {
        None
    };
    let violations = cells.iter().map(|c| c.violations.len()).sum();
    Ok(ExperimentSummary {
        name: cfg.name.clone(),
        regime: cfg.regime,
        horizons,
        slope,
        cells,
        violations,
    })
}

/// Runs every `(T, seed)` cell, writes `T<T>_seed<s>.csv` per cell plus
/// `summary.json` and `regret.svg` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let out = cfg.resolved_output_dir();
    fs::create_dir_all(&out)?;
    let grid: Vec<(usize, u64)> = cfg
        .horizons
        .iter()
        .flat_map(|&t| cfg.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let cells = with_workers(|| {
        grid.par_iter()
            .map(|&(t, s)| {
                let (mut cell, trace) = run_cell(cfg, t, s, true)?;
                let name = csv_name(t, s);
                write_trace_csv(&out.join(&name), &trace)?;
                cell.csv = Some(name);
                Ok(cell)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let summary = summarize(cfg, cells)?;
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    fs::write(out.join("regret.svg"), regret_svg(&summary))?;
    Ok(summary)
}

/// Runs and audits every cell without comparators or files.
pub fn audit_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let grid: Vec<(usize, u64)> = cfg
        .horizons
        .iter()
        .flat_map(|&t| cfg.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let cells = with_workers(|| {
        grid.par_iter()
            .map(|&(t, s)| run_cell(cfg, t, s, false).map(|(c, _)| c))
            .collect::<Result<Vec<_>>>()
    })??;
    summarize(cfg, cells)
}

/// Reads `summary.json` from a report directory.
pub fn load_summary(dir: impl AsRef<Path>) -> Result<ExperimentSummary> {
    let path: PathBuf = dir.as_ref().join("summary.json");
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Mean cumulative regret against the best constant policy, one curve per
/// horizon, as a standalone SVG document.
pub fn regret_svg(summary: &ExperimentSummary) -> String {
    let (w, h, pad) = (640.0, 400.0, 56.0);
    let mut curves: Vec<(usize, Vec<(f64, f64)>)> = Vec::new();
    for hs in &summary.horizons {
        let cells: Vec<&CellSummary> = summary
            .cells
            .iter()
            .filter(|c| c.horizon == hs.horizon && !c.curve.is_empty())
            .collect();
        let Some(first) = cells.first() else { continue };
        let pts = (0..first.curve.len())
            .map(|i| {
                let t = first.curve[i].0 as f64;
                let mean = cells.iter().map(|c| c.curve[i].1).sum::<f64>() / cells.len() as f64;
                (t, mean)
            })
            .collect();
        curves.push((hs.horizon, pts));
    }
    let all = curves.iter().flat_map(|c| c.1.iter());
    let x_max = all.clone().map(|p| p.0).fold(1.0, f64::max);
    let y_min = all.clone().map(|p| p.1).fold(0.0, f64::min);
    let y_max = all.map(|p| p.1).fold(0.0, f64::max).max(y_min + 1e-9);
    let sx = |x: f64| pad + (w - 2.0 * pad) * x / x_max;
    let sy = |y: f64| h - pad - (h - 2.0 * pad) * (y - y_min) / (y_max - y_min);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{} ({})</text>"#,
        w / 2.0,
        escape(&summary.name),
        summary.regime.name()
    );
    let (x0, x1, y0, y1) = (sx(0.0), sx(x_max), sy(y_min), sy(y_max));
    let _ = writeln!(
        svg,
        r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x1:.1}" y2="{y0:.1}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x0:.1}" y2="{y1:.1}" stroke="black"/>"#
    );
    if y_min < 0.0 {
        let z = sy(0.0);
        let _ = writeln!(
            svg,
            r##"<line x1="{x0:.1}" y1="{z:.1}" x2="{x1:.1}" y2="{z:.1}" stroke="#999" stroke-dasharray="4 3"/>"##
        );
    }
    for i in 0..=4 {
        let xv = x_max * i as f64 / 4.0;
        let yv = y_min + (y_max - y_min) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
            sx(xv),
            y0 + 16.0,
            xv
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            x0 - 4.0,
            sy(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">round t</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">mean cumulative regret</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, (t, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = pad + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            x0 + 10.0,
            x0 + 30.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}">T = {t}</text>"#,
            x0 + 36.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
