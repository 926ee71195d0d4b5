//! Random-walk decentralized meta-learning.
//!
//! A single token carrying the meta-parameters walks a Markov chain over the
//! training clients. Each visited client adapts the parameters on its support
//! set (MAML inner loop), forms the exact meta-gradient on its query set and
//! applies an adaptive update whose momentum and preconditioner stay on that
//! client. Optional Gaussian perturbation of the update is accounted for as
//! network differential privacy, and every protocol is charged relative
//! communication units so methods can be compared per unit transmitted.
//!
//! Modules, bottom-up:
//!
//! - [`topology`]: graphs, transition kernels, spectral gap, walk sampling
//! - [`tasks`]: synthetic few-shot tasks per client
//! - [`model`]: flat-parameter MLP, gradients, Hessian-vector products
//! - [`metalearn`]: inner loop, meta-gradients, adaptation
//! - [`optimizer`]: adaptive step with explicit auxiliary state, SGD, clipping
//! - [`privacy`]: noise calibration and the network-DP accountant
//! - [`simulator`]: the training protocols and evaluation
//! - [`config`], [`sweep`], [`report`], [`cli`]: experiment plumbing

pub mod cli;
pub mod config;
pub mod error;
pub mod metalearn;
pub mod model;
pub mod optimizer;
pub mod privacy;
pub mod report;
pub mod rng;
pub mod simulator;
pub mod sweep;
pub mod tasks;
pub mod topology;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use simulator::{run, Method, MethodKind, RunRecord, RunSetup};
