//! Ablation grids: one full train + test evaluation per setting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use clap::ValueEnum;
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::{load_inputs, resolve_config, train_in, Inputs};
use crate::config::{require, RunConfig};
use crate::{AblateArgs, ValidationError};

/// Worker threads for grid rows; unset means one per core.
pub const WORKERS_ENV: &str = "FCN_NUM_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    /// Window size sets of the encoder.
    Region,
    /// Kernels per window size.
    Kernels,
    /// Number of graph convolution layers.
    Gcn,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Setting {
    Windows(Vec<usize>),
    Count(usize),
}

impl Setting {
    pub fn label(&self) -> String {
        match self {
            Setting::Windows(w) => format!("({})", join(w, ",")),
            Setting::Count(n) => n.to_string(),
        }
    }

    fn slug(&self) -> String {
        match self {
            Setting::Windows(w) => join(w, "-"),
            Setting::Count(n) => n.to_string(),
        }
    }
}

fn join(v: &[usize], sep: &str) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(sep)
}

impl Grid {
    pub fn name(self) -> &'static str {
        match self {
            Grid::Region => "region",
            Grid::Kernels => "kernels",
            Grid::Gcn => "gcn",
        }
    }

    pub fn default_settings(self) -> Vec<Setting> {
        match self {
            Grid::Region => [
                vec![1],
                vec![2],
                vec![4, 4, 4, 4, 4],
                vec![8, 9, 10],
                vec![1, 2, 4, 6, 8],
            ]
            .into_iter()
            .map(Setting::Windows)
            .collect(),
            Grid::Kernels => [2, 12, 24, 48].into_iter().map(Setting::Count).collect(),
            Grid::Gcn => [1, 2, 4, 8].into_iter().map(Setting::Count).collect(),
        }
    }

    /// `;`-separated window lists for `region`, comma-separated counts otherwise.
    pub fn parse_settings(self, text: &str) -> Result<Vec<Setting>, ValidationError> {
        let bad = |what: &str| ValidationError(vec![format!("--values {text:?}: {what}")]);
        let nums = |s: &str| -> Result<Vec<usize>, ValidationError> {
            s.split(',')
                .map(|t| t.trim().trim_matches(|c| c == '(' || c == ')').parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("expected non-negative integers"))
        };
        let settings: Vec<Setting> = match self {
            Grid::Region => text
                .split(';')
                .map(|g| nums(g).map(Setting::Windows))
                .collect::<Result<_, _>>()?,
            _ => nums(text)?.into_iter().map(Setting::Count).collect(),
        };
        if settings.is_empty() {
            return Err(bad("no settings"));
        }
        Ok(settings)
    }

    pub fn apply(self, cfg: &mut RunConfig, setting: &Setting) {
        match (self, setting) {
            (Grid::Region, Setting::Windows(w)) => cfg.encoder.window_sizes = w.clone(),
            (Grid::Kernels, Setting::Count(k)) => cfg.encoder.kernels_per_filter = *k,
            (Grid::Gcn, Setting::Count(l)) => cfg.gcn.num_layers = *l,
            _ => unreachable!("setting kind matches its grid"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub index: usize,
    pub setting: String,
    pub run_dir: String,
    /// Test metrics as fractions; absent when the row failed.
    pub map: Option<f64>,
    pub cf1: Option<f64>,
    pub of1: Option<f64>,
    pub top3_cf1: Option<f64>,
    pub top3_of1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub grid: Grid,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn completed(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_none()).count()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", x * 100.0));
        let mut s = format!("## Ablation: {}\n\n", self.grid.name());
        s.push_str("| # | setting | mAP | CF1 | OF1 | top-3 CF1 | top-3 OF1 | status |\n");
        s.push_str("|---|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                r.index,
                r.setting,
                pct(r.map),
                pct(r.cf1),
                pct(r.of1),
                pct(r.top3_cf1),
                pct(r.top3_of1),
                r.error
                    .as_deref()
                    .map_or("ok".to_string(), |e| format!("failed: {}", e.replace('|', "/")))
            );
        }
        s
    }
}

fn selected_rows(list: Option<&str>, total: usize) -> Result<Vec<usize>, ValidationError> {
    let Some(list) = list else {
        return Ok((0..total).collect());
    };
    let mut rows = Vec::new();
    for t in list.split(',') {
        match t.trim().parse::<usize>() {
            Ok(i) if i < total => rows.push(i),
            _ => {
                return Err(ValidationError(vec![format!(
                    "--rows: {t:?} is not a row index below {total}"
                )]))
            }
        }
    }
    rows.sort_unstable();
    rows.dedup();
    Ok(rows)
}

fn worker_count() -> anyhow::Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(ValidationError(vec![format!("{WORKERS_ENV}={v:?} must be a positive integer")]).into()),
        },
        Err(_) => Ok(0),
    }
}

fn run_row(grid: Grid, base: &RunConfig, inputs: &Inputs, root: &Path, index: usize, setting: &Setting) -> AblationRow {
    let mut cfg = base.clone();
    grid.apply(&mut cfg, setting);
    let dir = root.join(format!("{index}-{}", setting.slug()));
    cfg.paths.run_dir = Some(dir.clone());
    let mut row = AblationRow {
        index,
        setting: setting.label(),
        run_dir: dir.display().to_string(),
        map: None,
        cf1: None,
        of1: None,
        top3_cf1: None,
        top3_of1: None,
        error: None,
    };
    log::info!("{} row {index}: {}", grid.name(), row.setting);
    match train_in(&cfg, inputs, &dir, false) {
        Ok(r) => {
            row.map = Some(r.map);
            row.cf1 = Some(r.all.cf1);
            row.of1 = Some(r.all.of1);
            row.top3_cf1 = Some(r.top3.cf1);
            row.top3_of1 = Some(r.top3.of1);
        }
        Err(e) => {
            log::error!("{} row {index} failed: {e:#}", grid.name());
            row.error = Some(format!("{e:#}"));
        }
    }
    row
}

/// Runs the selected rows and writes `ablation_<grid>.json` and `.md` under
/// the run directory. A failed row is recorded and the rest still run.
pub fn run(args: &AblateArgs) -> anyhow::Result<AblationReport> {
    let base = resolve_config(&args.run)?;
    let run_dir = require(&base.paths.run_dir, "run_dir")?;
    let settings = match &args.values {
        Some(v) => args.grid.parse_settings(v)?,
        None => args.grid.default_settings(),
    };
    let rows = selected_rows(args.rows.as_deref(), settings.len())?;
    let workers = worker_count()?;
    let inputs = load_inputs(&base)?;
    let root = run_dir.join(args.grid.name());
    fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let results: Vec<AblationRow> = pool.install(|| {
        rows.par_iter()
            .map(|&i| run_row(args.grid, &base, &inputs, &root, i, &settings[i]))
            .collect()
    });
    let report = AblationReport {
        grid: args.grid,
        rows: results,
    };
    let name = format!("ablation_{}", args.grid.name());
    fs::write(run_dir.join(format!("{name}.json")), report.to_json())?;
    fs::write(run_dir.join(format!("{name}.md")), report.to_markdown())?;
    Ok(report)
}
