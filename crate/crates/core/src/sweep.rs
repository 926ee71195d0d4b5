//! Parameter sweeps: one run per (value, seed) cell plus a summary table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ExperimentConfig, TopologyFamily};
use crate::error::{Error, Result};
use crate::simulator::{run, MethodKind, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Method,
    Epsilon,
    Topology,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Method => "method",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Topology => "topology",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "method" => Ok(SweepAxis::Method),
            "epsilon" => Ok(SweepAxis::Epsilon),
            "topology" => Ok(SweepAxis::Topology),
            _ => Err(Error::param("axis", format!("unknown sweep axis `{s}` (method, epsilon, topology)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<String>,
    pub seeds: usize,
    pub jobs: usize,
    pub out_dir: PathBuf,
}

/// Outcome of one cell.
#[derive(Debug, Clone)]
pub struct Cell {
    pub value: String,
    pub seed: u64,
    pub path: PathBuf,
    pub result: std::result::Result<RunRecord, String>,
}

impl Cell {
    /// Final row of a run that completed without aborting.
    pub fn final_metrics(&self) -> Option<(f64, f64, u64)> {
        let rec = self.result.as_ref().ok()?;
        if rec.failure.is_some() {
            return None;
        }
        rec.last_row()
            .map(|r| (r.eval.train_metric, r.eval.unseen_metric, r.comm_units))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub value: String,
    pub seeds: usize,
    pub failed: usize,
    pub comm_units: f64,
    pub train_mean: f64,
    pub train_std: f64,
    pub unseen_mean: f64,
    pub unseen_std: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub cells: Vec<Cell>,
    pub summary: Vec<SummaryRow>,
    pub summary_path: PathBuf,
}

/// Applies one axis value to a copy of `base`.
pub fn apply_axis(base: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Method => cfg.method.kind = value.parse::<MethodKind>()?,
        SweepAxis::Epsilon => {
            cfg.privacy.epsilon = value
                .parse::<f64>()
                .map_err(|_| Error::param("values", format!("`{value}` is not a number")))?;
        }
        SweepAxis::Topology => cfg.topology.family = value.parse::<TopologyFamily>()?,
    }
    Ok(cfg)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn summarize(cells: &[Cell], values: &[String]) -> Vec<SummaryRow> {
    values
        .iter()
        .map(|v| {
            let mine: Vec<&Cell> = cells.iter().filter(|c| &c.value == v).collect();
            let finals: Vec<(f64, f64, u64)> = mine.iter().filter_map(|c| c.final_metrics()).collect();
            let train: Vec<f64> = finals.iter().map(|f| f.0).collect();
            let unseen: Vec<f64> = finals.iter().map(|f| f.1).collect();
            let comm: Vec<f64> = finals.iter().map(|f| f.2 as f64).collect();
            let (train_mean, train_std) = mean_std(&train);
            let (unseen_mean, unseen_std) = mean_std(&unseen);
            SummaryRow {
                value: v.clone(),
                seeds: mine.len(),
                failed: mine.len() - finals.len(),
                comm_units: mean_std(&comm).0,
                train_mean,
                train_std,
                unseen_mean,
                unseen_std,
            }
        })
        .collect()
}

pub fn summary_csv(axis: SweepAxis, rows: &[SummaryRow]) -> String {
    let mut s = format!("# axis={}\n", axis.name());
    s.push_str("value,seeds,failed,comm_units,train_mean,train_std,unseen_mean,unseen_std\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:?},{:?},{:?},{:?},{:?}",
            r.value, r.seeds, r.failed, r.comm_units, r.train_mean, r.train_std, r.unseen_mean, r.unseen_std
        );
    }
    s
}

fn cell_path(dir: &Path, axis: SweepAxis, value: &str, seed: u64) -> PathBuf {
    let safe: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '_' })
        .collect();
    dir.join(format!("{}-{safe}-seed{seed}.csv", axis.name()))
}

/// Runs every (value, seed) cell, writing one CSV per cell and `summary.csv`.
/// Seeds are `base.run.seed + index`. Cell failures are recorded, not fatal.
pub fn run_sweep(base: &ExperimentConfig, spec: &SweepSpec) -> Result<SweepOutcome> {
    if spec.values.is_empty() {
        return Err(Error::param("values", "sweep needs at least one value"));
    }
    if spec.seeds == 0 {
        return Err(Error::param("seeds", "sweep needs at least one seed"));
    }
    // Reject unparseable values before any work starts.
    for v in &spec.values {
        apply_axis(base, spec.axis, v)?;
    }
    std::fs::create_dir_all(&spec.out_dir)?;
    let jobs: Vec<(String, u64)> = spec
        .values
        .iter()
        .flat_map(|v| (0..spec.seeds as u64).map(move |i| (v.clone(), base.run.seed + i)))
        .collect();
    let run_cell = |(value, seed): &(String, u64)| -> Cell {
        let path = cell_path(&spec.out_dir, spec.axis, value, *seed);
        let result = (|| {
            let mut cfg = apply_axis(base, spec.axis, value)?;
            cfg.run.seed = *seed;
            cfg.run.output = path.clone();
            let setup = cfg.build()?;
            let record = run(&setup, cfg.method.method())?;
            record.write_csv(&path)?;
            Ok::<_, Error>(record)
        })()
        .map_err(|e| e.to_string());
        if let Err(e) = &result {
            log::warn!("sweep cell {}={value} seed {seed} failed: {e}", spec.axis.name());
        }
        Cell {
            value: value.clone(),
            seed: *seed,
            path,
            result,
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    let cells: Vec<Cell> = pool.install(|| jobs.par_iter().map(run_cell).collect());
    let summary = summarize(&cells, &spec.values);
    let summary_path = spec.out_dir.join("summary.csv");
    std::fs::write(&summary_path, summary_csv(spec.axis, &summary))?;
    Ok(SweepOutcome {
        cells,
        summary,
        summary_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_application() {
        let base = ExperimentConfig::default();
        assert_eq!(
            apply_axis(&base, SweepAxis::Method, "lodmeta_basic").unwrap().method.kind,
            MethodKind::LodmetaBasic
        );
        assert_eq!(apply_axis(&base, SweepAxis::Epsilon, "0.8").unwrap().privacy.epsilon, 0.8);
        assert_eq!(
            apply_axis(&base, SweepAxis::Topology, "ring").unwrap().topology.family,
            TopologyFamily::Ring
        );
        assert!(apply_axis(&base, SweepAxis::Method, "gossip").is_err());
        assert!(apply_axis(&base, SweepAxis::Epsilon, "big").is_err());
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn empty_values_rejected() {
        let spec = SweepSpec {
            axis: SweepAxis::Method,
            values: vec![],
            seeds: 3,
            jobs: 1,
            out_dir: PathBuf::from("unused"),
        };
        assert!(run_sweep(&ExperimentConfig::default(), &spec).is_err());
    }
}
