//! Experiment configuration: sectioned `key = value` text (TOML).
//!
//! ```toml
//! [run]
//! seed = 0
//! iterations = 2000
//!
//! [topology]
//! family = "small_world"
//! k = 4
//! p_rewire = 0.3
//!
//! [method]
//! kind = "lodmeta"
//!
//! [privacy]
//! enabled = false
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{init_params, Mlp};
use crate::optimizer::HyperParams;
use crate::privacy::PrivacyParams;
use crate::simulator::{GradientMode, Method, MethodKind, RunSetup};
use crate::tasks::{assign_clients, TaskConfig};
use crate::topology::{
    build_transition_matrix, gen_complete, gen_regular_expander, gen_ring, gen_small_world, gen_star, Graph,
    TransitionMatrix, WalkScheme,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyFamily {
    SmallWorld,
    Expander,
    Ring,
    Star,
    Complete,
}

impl TopologyFamily {
    pub const ALL: [TopologyFamily; 5] = [
        TopologyFamily::SmallWorld,
        TopologyFamily::Expander,
        TopologyFamily::Ring,
        TopologyFamily::Star,
        TopologyFamily::Complete,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopologyFamily::SmallWorld => "small_world",
            TopologyFamily::Expander => "expander",
            TopologyFamily::Ring => "ring",
            TopologyFamily::Star => "star",
            TopologyFamily::Complete => "complete",
        }
    }
}

impl std::str::FromStr for TopologyFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TopologyFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::param("topology.family", format!("unknown topology family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub iterations: u64,
    pub eval_every: u64,
    pub output: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            iterations: 2000,
            eval_every: 50,
            output: PathBuf::from("run.csv"),
        }
    }
}

/// The graph is built over the training clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub family: TopologyFamily,
    /// Lattice neighbours for small-world graphs.
    pub k: usize,
    pub p_rewire: f64,
    /// Degree for expanders.
    pub degree: usize,
    pub scheme: WalkScheme,
    pub laziness: f64,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            family: TopologyFamily::SmallWorld,
            k: 4,
            p_rewire: 0.3,
            degree: 3,
            scheme: WalkScheme::MetropolisHastings,
            laziness: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientsSection {
    pub training: usize,
    pub unseen: usize,
}

impl Default for ClientsSection {
    fn default() -> Self {
        ClientsSection { training: 20, unseen: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSection {
    pub kind: MethodKind,
    /// Clients per round for the centralized baseline.
    pub n_active: usize,
    pub meta_gradient: GradientMode,
}

impl Default for MethodSection {
    fn default() -> Self {
        MethodSection {
            kind: MethodKind::Lodmeta,
            n_active: 4,
            meta_gradient: GradientMode::Exact,
        }
    }
}

impl MethodSection {
    pub fn method(&self) -> Method {
        match self.kind {
            MethodKind::Lodmeta => Method::Lodmeta,
            MethodKind::LodmetaBasic => Method::LodmetaBasic,
            MethodKind::LodmetaSgd => Method::LodmetaSgd,
            MethodKind::CentralizedMaml => Method::CentralizedMaml { n_active: self.n_active },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub topology: TopologySection,
    pub clients: ClientsSection,
    pub tasks: TaskConfig,
    pub method: MethodSection,
    pub optimizer: HyperParams,
    pub privacy: PrivacyParams,
}

impl ExperimentConfig {
    /// Parses and validates. Syntax errors carry the line number.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(describe_toml_error(text, &e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        ExperimentConfig::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Every violated bound, prefixed with its `section.field` name.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |field: &str, msg: String| out.push(format!("{field}: {msg}"));
        let n = self.clients.training;
        if n == 0 {
            push("clients.training", "must be >= 1".into());
        }
        if self.clients.unseen == 0 {
            push("clients.unseen", "must be >= 1".into());
        }
        if self.run.eval_every == 0 {
            push("run.eval_every", "must be >= 1".into());
        }
        let t = &self.topology;
        if !(0.0..1.0).contains(&t.laziness) {
            push("topology.laziness", format!("must satisfy 0 <= laziness < 1, got {}", t.laziness));
        }
        match t.family {
            TopologyFamily::SmallWorld => {
                if t.k < 2 || !t.k.is_multiple_of(2) {
                    push("topology.k", format!("must be even and >= 2, got {}", t.k));
                }
                if n <= t.k {
                    push("clients.training", format!("small-world graph needs more than k={} clients, got {n}", t.k));
                }
                if !(0.0..=1.0).contains(&t.p_rewire) {
                    push("topology.p_rewire", format!("must lie in [0,1], got {}", t.p_rewire));
                }
            }
            TopologyFamily::Expander => {
                if t.degree == 0 || t.degree >= n {
                    push("topology.degree", format!("need 0 < degree < clients.training={n}, got {}", t.degree));
                }
                if !(n * t.degree).is_multiple_of(2) {
                    push("topology.degree", format!("clients.training * degree must be even, got {n} * {}", t.degree));
                }
            }
            TopologyFamily::Ring if n < 3 => push("clients.training", format!("ring needs >= 3 clients, got {n}")),
            TopologyFamily::Star | TopologyFamily::Complete if n < 2 => {
                push("clients.training", format!("{} needs >= 2 clients, got {n}", t.family.name()))
            }
            _ => {}
        }
        match self.tasks {
            TaskConfig::Sine { shots, query } => {
                if shots == 0 {
                    push("tasks.shots", "must be >= 1".into());
                }
                if query == 0 {
                    push("tasks.query", "must be >= 1".into());
                }
            }
            TaskConfig::Blobs {
                ways,
                shots,
                query,
                dim,
                spread,
            } => {
                if ways < 2 {
                    push("tasks.ways", format!("must be >= 2, got {ways}"));
                }
                if shots == 0 {
                    push("tasks.shots", "must be >= 1".into());
                }
                if query == 0 {
                    push("tasks.query", "must be >= 1".into());
                }
                if dim < 2 {
                    push("tasks.dim", format!("must be >= 2, got {dim}"));
                }
                if !(spread >= 0.0 && spread.is_finite()) {
                    push("tasks.spread", format!("must be finite and >= 0, got {spread}"));
                }
            }
        }
        if self.method.kind == MethodKind::CentralizedMaml && (self.method.n_active == 0 || self.method.n_active > n) {
            push("method.n_active", format!("must lie in 1..={n}, got {}", self.method.n_active));
        }
        for v in self.optimizer.violations() {
            push("optimizer", v);
        }
        // Privacy bounds are checked even when disabled so sweeps fail early.
        for v in self.privacy.violations() {
            push("privacy", v);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("\n")))
        }
    }

    pub fn build_graph(&self) -> Result<Graph> {
        let t = &self.topology;
        let n = self.clients.training;
        match t.family {
            TopologyFamily::SmallWorld => gen_small_world(n, t.k, t.p_rewire, self.run.seed),
            TopologyFamily::Expander => gen_regular_expander(n, t.degree, self.run.seed),
            TopologyFamily::Ring => gen_ring(n),
            TopologyFamily::Star => gen_star(n),
            TopologyFamily::Complete => gen_complete(n),
        }
    }

    pub fn build_transition(&self) -> Result<(Graph, TransitionMatrix)> {
        let g = self.build_graph()?;
        let p = build_transition_matrix(&g, self.topology.scheme, self.topology.laziness)?;
        Ok((g, p))
    }

    /// Graph, tasks, network and initial parameters for a run.
    pub fn build(&self) -> Result<RunSetup<Mlp>> {
        self.validate()?;
        let (_, transition) = self.build_transition()?;
        let assignment = assign_clients(self.clients.training, self.clients.unseen, &self.tasks, self.run.seed)?;
        let arch = self.tasks.default_arch();
        let init = init_params(&arch, self.run.seed)?.values;
        Ok(RunSetup {
            objective: Mlp::new(arch)?,
            transition,
            assignment,
            init,
            hyper: self.optimizer,
            privacy: self.privacy,
            iterations: self.run.iterations,
            eval_every: self.run.eval_every,
            seed: self.run.seed,
            gradient: self.method.meta_gradient,
            start_client: None,
            record_trace: false,
            skip_grad_norm: false,
            echo: self.echo(),
        })
    }

    /// Flattened `section.key=value` pairs of the full config.
    pub fn echo(&self) -> Vec<(String, String)> {
        let value = toml::Value::try_from(self).expect("config always serializes");
        let mut out = Vec::new();
        if let toml::Value::Table(sections) = value {
            for (section, body) in sections {
                match body {
                    toml::Value::Table(fields) => {
                        for (k, v) in fields {
                            out.push((format!("{section}.{k}"), scalar_text(&v)));
                        }
                    }
                    other => out.push((section, scalar_text(&other))),
                }
            }
        }
        out
    }
}

fn scalar_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Float(f) => format!("{f:?}"),
        other => other.to_string(),
    }
}

fn describe_toml_error(text: &str, e: &toml::de::Error) -> String {
    let msg = e.message().trim().to_string();
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {msg}")
        }
        None => msg,
    }
}
