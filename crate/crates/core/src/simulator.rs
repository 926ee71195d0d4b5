//! Token-passing training protocols over a client network.
//!
//! A walk run moves a single token along the Markov chain of training
//! clients; the active client adapts the received meta-parameters on its
//! support set, forms its meta-gradient on its query set and applies the
//! outer update. The variants differ only in what the token carries and in
//! which optimizer runs:
//!
//! | method            | outer update | aux state        | units / iteration |
//! |-------------------|--------------|------------------|-------------------|
//! | `lodmeta`         | adaptive     | per client       | 1                 |
//! | `lodmeta_basic`   | adaptive     | rides the token  | 3                 |
//! | `lodmeta_sgd`     | sgd          | none             | 1                 |
//! | `centralized_maml`| adaptive     | at the server    | 2 per active client |

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use log::warn;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metalearn::{average_meta_gradient, InnerLoop};
use crate::model::{norm, Objective};
use crate::optimizer::{adam_step, clip, sgd_step, AuxState, HyperParams};
use crate::privacy::{account_network_dp, noise_variance, sample_perturbation, DpReport, PrivacyParams};
use crate::rng::{substream, Domain};
use crate::tasks::ClientAssignment;
use crate::topology::{sample_next, TransitionMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Lodmeta,
    LodmetaBasic,
    LodmetaSgd,
    CentralizedMaml,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [
        MethodKind::Lodmeta,
        MethodKind::LodmetaBasic,
        MethodKind::LodmetaSgd,
        MethodKind::CentralizedMaml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Lodmeta => "lodmeta",
            MethodKind::LodmetaBasic => "lodmeta_basic",
            MethodKind::LodmetaSgd => "lodmeta_sgd",
            MethodKind::CentralizedMaml => "centralized_maml",
        }
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::param("method", format!("unknown method `{s}`")))
    }
}

/// Training protocol. Only the centralized baseline has active-client count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Lodmeta,
    LodmetaBasic,
    LodmetaSgd,
    CentralizedMaml { n_active: usize },
}

impl Method {
    pub fn kind(&self) -> MethodKind {
        match self {
            Method::Lodmeta => MethodKind::Lodmeta,
            Method::LodmetaBasic => MethodKind::LodmetaBasic,
            Method::LodmetaSgd => MethodKind::LodmetaSgd,
            Method::CentralizedMaml { .. } => MethodKind::CentralizedMaml,
        }
    }
}

/// Relative communication units per iteration (one unit = one model payload
/// between two parties).
pub fn comm_cost(method: Method) -> u64 {
    match method {
        Method::Lodmeta | Method::LodmetaSgd => 1,
        Method::LodmetaBasic => 3,
        Method::CentralizedMaml { n_active } => 2 * n_active as u64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Exact,
    FirstOrder,
}

/// Everything a run needs, already built and validated by the caller.
#[derive(Debug, Clone)]
pub struct RunSetup<O> {
    pub objective: O,
    pub transition: TransitionMatrix,
    pub assignment: ClientAssignment,
    pub init: Vec<f64>,
    pub hyper: HyperParams,
    pub privacy: PrivacyParams,
    pub iterations: u64,
    pub eval_every: u64,
    pub seed: u64,
    pub gradient: GradientMode,
    /// First token holder; drawn uniformly from the walk stream when unset.
    pub start_client: Option<usize>,
    /// Keep `w_t` for every iteration in the record.
    pub record_trace: bool,
    /// Skip the (costly) full-average gradient norm at evaluation points.
    pub skip_grad_norm: bool,
    /// `key=value` pairs echoed into the CSV header.
    pub echo: Vec<(String, String)>,
}

impl<O: Objective> RunSetup<O> {
    pub fn inner(&self) -> Result<InnerLoop> {
        InnerLoop::new(self.hyper.alpha, self.hyper.inner_steps)
    }

    pub fn check(&self, method: Method) -> Result<()> {
        self.hyper.validate()?;
        if self.privacy.enabled {
            self.privacy.validate()?;
        }
        if self.init.len() != self.objective.dim() {
            return Err(Error::param(
                "init",
                format!("{} initial parameters for a model of dimension {}", self.init.len(), self.objective.dim()),
            ));
        }
        if self.transition.n() != self.assignment.n_training() {
            return Err(Error::param(
                "transition",
                format!(
                    "walk has {} states but there are {} training clients",
                    self.transition.n(),
                    self.assignment.n_training()
                ),
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::param("eval_every", "must be >= 1"));
        }
        if let Some(s) = self.start_client {
            if s >= self.assignment.n_training() {
                return Err(Error::param("start_client", format!("client {s} is not a training client")));
            }
        }
        if let Method::CentralizedMaml { n_active } = method {
            if n_active == 0 || n_active > self.assignment.n_training() {
                return Err(Error::param(
                    "n_active",
                    format!("must lie in 1..={}, got {n_active}", self.assignment.n_training()),
                ));
            }
        }
        Ok(())
    }

    fn meta_gradient(&self, inner: &InnerLoop, w: &[f64], client: usize) -> Result<Vec<f64>> {
        let task = &self.assignment.training[client];
        match self.gradient {
            GradientMode::Exact => inner.meta_gradient_exact(&self.objective, w, &task.support, &task.query),
            GradientMode::FirstOrder => inner.meta_gradient_first_order(&self.objective, w, &task.support, &task.query),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Mean adapted query metric over training clients.
    pub train_metric: f64,
    /// Mean adapted query metric over unseen clients.
    pub unseen_metric: f64,
    /// `|mean_i G_i(w)|^2` over training clients.
    pub grad_norm_sq: f64,
}

/// Adapts `w` on every client's support set and scores it on the query set.
/// Pure: no RNG and no communication is charged.
pub fn evaluate<O: Objective + ?Sized>(
    objective: &O,
    w: &[f64],
    assignment: &ClientAssignment,
    inner: &InnerLoop,
    with_grad_norm: bool,
) -> Result<Evaluation> {
    let score = |tasks: &[crate::tasks::TaskInstance]| -> Result<f64> {
        let mut total = 0.0;
        for task in tasks {
            let adapted = inner.adapt(objective, w, &task.support)?;
            total += objective.metric(&adapted, &task.query)?;
        }
        Ok(total / tasks.len().max(1) as f64)
    };
    let grad_norm_sq = if with_grad_norm {
        let g = average_meta_gradient(objective, w, inner, assignment.training.iter().map(|t| (&t.support, &t.query)))?;
        let n = norm(&g);
        n * n
    } else {
        f64::NAN
    };
    Ok(Evaluation {
        train_metric: score(&assignment.training)?,
        unseen_metric: score(&assignment.unseen)?,
        grad_norm_sq,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub iteration: u64,
    pub comm_units: u64,
    /// Token holder at this iteration; `None` for the centralized baseline.
    pub active_client: Option<usize>,
    pub eval: Evaluation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub iteration: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub rows: Vec<EvalRow>,
    /// Client that performed each update, in order (first sampled client for
    /// centralized rounds).
    pub walk: Vec<usize>,
    /// `w_0, w_1, ...` when tracing was requested.
    pub trace: Option<Vec<Vec<f64>>>,
    pub final_params: Vec<f64>,
    pub comm_units: u64,
    pub dp: Option<DpReport>,
    pub failure: Option<RunFailure>,
    pub echo: Vec<(String, String)>,
}

impl RunRecord {
    pub fn last_row(&self) -> Option<&EvalRow> {
        self.rows.last()
    }

    /// Header comment lines followed by the metric columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# method={}", self.method.kind().name());
        for (k, v) in &self.echo {
            let _ = writeln!(s, "# {k}={v}");
        }
        match &self.dp {
            Some(dp) => {
                let _ = writeln!(s, "# dp_enabled=true");
                for (k, v) in dp.pairs() {
                    let _ = writeln!(s, "# {k}={v}");
                }
            }
            None => {
                let _ = writeln!(s, "# dp_enabled=false");
            }
        }
        let _ = writeln!(s, "# total_comm_units={}", self.comm_units);
        if let Some(f) = &self.failure {
            let _ = writeln!(s, "# aborted_at={}", f.iteration);
            let _ = writeln!(s, "# error={}", f.message.replace('\n', " "));
        }
        s.push_str(CSV_COLUMNS);
        s.push('\n');
        for r in &self.rows {
            let client = r.active_client.map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{:?},{:?},{:?}",
                r.iteration, r.comm_units, client, r.eval.train_metric, r.eval.unseen_metric, r.eval.grad_norm_sq
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

pub const CSV_COLUMNS: &str = "iteration,comm_units,active_client,train_metric,unseen_metric,grad_norm_sq";

/// Algorithm with per-client auxiliary state and perturbed updates.
pub fn run_lodmeta<O: Objective>(setup: &RunSetup<O>) -> Result<RunRecord> {
    run(setup, Method::Lodmeta)
}

/// Auxiliary state travels with the token; no perturbation.
pub fn run_lodmeta_basic<O: Objective>(setup: &RunSetup<O>) -> Result<RunRecord> {
    run(setup, Method::LodmetaBasic)
}

pub fn run_lodmeta_sgd<O: Objective>(setup: &RunSetup<O>) -> Result<RunRecord> {
    run(setup, Method::LodmetaSgd)
}

pub fn run_centralized_maml<O: Objective>(setup: &RunSetup<O>, n_active: usize) -> Result<RunRecord> {
    run(setup, Method::CentralizedMaml { n_active })
}

/// Runs `setup.iterations` iterations of `method`. Numerical failures during
/// training do not surface as `Err`: the record is returned with the rows
/// gathered so far and `failure` set.
pub fn run<O: Objective>(setup: &RunSetup<O>, method: Method) -> Result<RunRecord> {
    setup.check(method)?;
    let inner = setup.inner()?;
    let perturbed = setup.privacy.enabled && matches!(method, Method::Lodmeta | Method::LodmetaSgd);
    let sigma2 = if perturbed {
        let p = &setup.privacy;
        if setup.hyper.eta > 2.0 / p.m_meta {
            warn!(
                "eta = {} exceeds 2/m_meta = {}; the network-DP guarantee assumes eta <= 2/m_meta",
                setup.hyper.eta,
                2.0 / p.m_meta
            );
        }
        noise_variance(p.epsilon, p.delta, p.m_meta)?
    } else {
        0.0
    };
    let dp = if perturbed && setup.iterations > 0 {
        let p = &setup.privacy;
        Some(account_network_dp(
            p.epsilon,
            p.delta,
            p.delta_hat,
            setup.iterations,
            setup.assignment.n_training(),
        )?)
    } else {
        None
    };

    let mut state = RunState::new(setup, method, dp);
    let mut walk_rng = substream(setup.seed, Domain::Walk, 0);
    let mut noise_rng = substream(setup.seed, Domain::Noise, 0);
    let mut sampling_rng = substream(setup.seed, Domain::ClientSampling, 0);
    let n = setup.assignment.n_training();
    let dim = setup.init.len();

    let mut current = match method {
        Method::CentralizedMaml { .. } => None,
        _ => Some(setup.start_client.unwrap_or_else(|| walk_rng.random_range(0..n))),
    };
    state.evaluate(&inner, 0, current)?;

    let mut local_aux = vec![AuxState::zeros(dim); if method == Method::Lodmeta { n } else { 0 }];
    let mut shared_aux = AuxState::zeros(dim);
    let cost = comm_cost(method);

    for t in 0..setup.iterations {
        let step: Result<(usize, Vec<f64>)> = (|| match method {
            Method::CentralizedMaml { n_active } => {
                let picked = sample_indices(&mut sampling_rng, n, n_active).into_vec();
                let g = average_meta_gradient(
                    &setup.objective,
                    &state.w,
                    &inner,
                    picked.iter().map(|&i| (&setup.assignment.training[i].support, &setup.assignment.training[i].query)),
                )?;
                let (next, delta) = adam_step(&shared_aux, &g, &vec![0.0; dim], &setup.hyper)?;
                shared_aux = next;
                Ok((picked[0], delta))
            }
            _ => {
                let client = current.expect("walk methods always hold a token");
                let mut g = setup.meta_gradient(&inner, &state.w, client)?;
                let mut noise = vec![0.0; dim];
                if perturbed {
                    g = clip(&g, setup.privacy.m_meta)?;
                    noise = sample_perturbation(sigma2, dim, &mut noise_rng)?;
                }
                let delta = match method {
                    Method::Lodmeta => {
                        let (next, delta) = adam_step(&local_aux[client], &g, &noise, &setup.hyper)?;
                        local_aux[client] = next;
                        delta
                    }
                    Method::LodmetaBasic => {
                        let (next, delta) = adam_step(&shared_aux, &g, &noise, &setup.hyper)?;
                        shared_aux = next;
                        delta
                    }
                    Method::LodmetaSgd => {
                        let noisy: Vec<f64> = g.iter().zip(&noise).map(|(g, e)| g + e).collect();
                        sgd_step(&noisy, setup.hyper.eta)
                    }
                    Method::CentralizedMaml { .. } => unreachable!(),
                };
                Ok((client, delta))
            }
        })();

        let (actor, delta) = match step {
            Ok(s) => s,
            Err(e) => return Ok(state.abort(t, e)),
        };
        let next_w: Vec<f64> = state.w.iter().zip(&delta).map(|(w, d)| w + d).collect();
        if next_w.iter().any(|x| !x.is_finite()) {
            return Ok(state.abort(t, Error::Numerical(format!("parameters became non-finite at iteration {t}"))));
        }
        state.w = next_w;
        state.walk.push(actor);
        if let Some(trace) = state.trace.as_mut() {
            trace.push(state.w.clone());
        }
        state.comm += cost;
        if let Some(c) = current {
            current = Some(sample_next(&setup.transition, c, &mut walk_rng));
        }
        let done = t + 1;
        if done % setup.eval_every == 0 || done == setup.iterations {
            if let Err(e) = state.evaluate(&inner, done, current) {
                return Ok(state.abort(t, e));
            }
        }
    }
    Ok(state.finish())
}

struct RunState<'a, O> {
    setup: &'a RunSetup<O>,
    method: Method,
    w: Vec<f64>,
    rows: Vec<EvalRow>,
    walk: Vec<usize>,
    trace: Option<Vec<Vec<f64>>>,
    comm: u64,
    dp: Option<DpReport>,
}

impl<'a, O: Objective> RunState<'a, O> {
    fn new(setup: &'a RunSetup<O>, method: Method, dp: Option<DpReport>) -> Self {
        RunState {
            setup,
            method,
            w: setup.init.clone(),
            rows: Vec::new(),
            walk: Vec::with_capacity(setup.iterations as usize),
            trace: setup.record_trace.then(|| vec![setup.init.clone()]),
            comm: 0,
            dp,
        }
    }

    fn evaluate(&mut self, inner: &InnerLoop, iteration: u64, active: Option<usize>) -> Result<()> {
        let eval = evaluate(
            &self.setup.objective,
            &self.w,
            &self.setup.assignment,
            inner,
            !self.setup.skip_grad_norm,
        )?;
        self.rows.push(EvalRow {
            iteration,
            comm_units: self.comm,
            active_client: active,
            eval,
        });
        Ok(())
    }

    fn abort(self, iteration: u64, err: Error) -> RunRecord {
        let message = err.to_string();
        warn!("run aborted at iteration {iteration}: {message}");
        let mut record = self.finish();
        record.failure = Some(RunFailure { iteration, message });
        record
    }

    fn finish(self) -> RunRecord {
        RunRecord {
            method: self.method,
            rows: self.rows,
            walk: self.walk,
            trace: self.trace,
            final_params: self.w,
            comm_units: self.comm,
            dp: self.dp,
            failure: None,
            echo: self.setup.echo.clone(),
        }
    }
}
