//! `walkmeta` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::Error;
use crate::report::{report, Metric};
use crate::simulator::run;
use crate::sweep::{run_sweep, SweepAxis, SweepSpec};
use crate::topology::{sigma2, stationary_distribution};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "walkmeta", version, about = "Random-walk decentralized meta-learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its CSV.
    Run {
        config: PathBuf,
        /// Override `run.output`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a grid over one axis and several seeds.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "sweep")]
        out_dir: PathBuf,
    },
    /// Plot a metric against cumulative communication as SVG.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value = "train")]
        metric: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Describe the configured communication graph.
    Topo {
        config: PathBuf,
        /// Also print the edge list.
        #[arg(long)]
        edges: bool,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) | Error::Generation { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn fail(e: Error) -> i32 {
    eprintln!("error: {e}");
    exit_code(&e)
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run { config, output } => cmd_run(&config, output),
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            jobs,
            out_dir,
        } => cmd_sweep(&config, &axis, values, seeds, jobs, out_dir),
        Command::Report { csv, metric, output } => cmd_report(&csv, &metric, &output),
        Command::Topo { config, edges } => cmd_topo(&config, edges),
    }
}

pub fn cmd_run(config: &std::path::Path, output: Option<PathBuf>) -> i32 {
    let cfg = match ExperimentConfig::from_file(config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let out = output.unwrap_or_else(|| cfg.run.output.clone());
    let record = match cfg.build().and_then(|setup| run(&setup, cfg.method.method())) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    if let Err(e) = record.write_csv(&out) {
        return fail(e);
    }
    println!("method: {}", cfg.method.kind.name());
    println!("iterations: {}", record.walk.len());
    println!("comm_units: {}", record.comm_units);
    if let Some(r) = record.last_row() {
        println!("final train_metric: {}", r.eval.train_metric);
        println!("final unseen_metric: {}", r.eval.unseen_metric);
        println!("final grad_norm_sq: {}", r.eval.grad_norm_sq);
    }
    match &record.dp {
        Some(dp) => println!(
            "network DP: epsilon'={:.6} delta_total={:.6} (N_u={:.4}, q={:.4}, T={}, n={})",
            dp.epsilon_prime, dp.delta_total, dp.n_u, dp.q, dp.iterations, dp.clients
        ),
        None => println!("network DP: not applicable (no perturbation)"),
    }
    println!("csv: {}", out.display());
    if let Some(f) = &record.failure {
        eprintln!("error: run aborted at iteration {}: {}", f.iteration, f.message);
        return EXIT_NUMERICAL;
    }
    EXIT_OK
}

pub fn cmd_sweep(
    config: &std::path::Path,
    axis: &str,
    values: Vec<String>,
    seeds: usize,
    jobs: usize,
    out_dir: PathBuf,
) -> i32 {
    let axis: SweepAxis = match axis.parse() {
        Ok(a) => a,
        Err(e) => return fail(e),
    };
    let values: Vec<String> = values.into_iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        eprintln!("error: --values needs at least one value");
        return EXIT_USAGE;
    }
    let cfg = match ExperimentConfig::from_file(config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let spec = SweepSpec {
        axis,
        values,
        seeds,
        jobs,
        out_dir,
    };
    let outcome = match run_sweep(&cfg, &spec) {
        Ok(o) => o,
        Err(e) => return fail(e),
    };
    println!("value\tseeds\tfailed\ttrain_mean\ttrain_std\tunseen_mean\tunseen_std");
    for r in &outcome.summary {
        println!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.value, r.seeds, r.failed, r.train_mean, r.train_std, r.unseen_mean, r.unseen_std
        );
    }
    println!("summary: {}", outcome.summary_path.display());
    EXIT_OK
}

pub fn cmd_report(csv: &[PathBuf], metric: &str, output: &std::path::Path) -> i32 {
    let metric: Metric = match metric.parse() {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let paths: Vec<&std::path::Path> = csv.iter().map(PathBuf::as_path).collect();
    let svg = match report(&paths, metric) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    if let Err(e) = std::fs::write(output, svg) {
        return fail(e.into());
    }
    println!("wrote {}", output.display());
    EXIT_OK
}

pub fn cmd_topo(config: &std::path::Path, edges: bool) -> i32 {
    let cfg = match ExperimentConfig::from_file(config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let (graph, p) = match cfg.build_transition() {
        Ok(x) => x,
        Err(e) => return fail(e),
    };
    let s2 = match sigma2(&p) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    println!("n: {}", graph.n());
    println!("edges: {}", graph.edge_count());
    println!("sigma2: {s2}");
    if s2 >= 1.0 - 1e-9 {
        println!("warning: chain does not mix (periodic); set topology.laziness > 0");
    }
    match stationary_distribution(&p) {
        Ok(pi) => {
            let txt: Vec<String> = pi.iter().map(|x| format!("{x:.6}")).collect();
            println!("stationary: {}", txt.join(" "));
        }
        Err(e) => println!("stationary: unavailable ({e})"),
    }
    if edges {
        print!("{}", graph.to_edge_list());
    }
    EXIT_OK
}
