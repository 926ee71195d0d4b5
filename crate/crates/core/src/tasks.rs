//! Synthetic few-shot tasks, one per client.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Arch, Batch};
use crate::rng::{substream, Domain};

pub const SINE_AMPLITUDE: (f64, f64) = (0.1, 5.0);
pub const SINE_PHASE: (f64, f64) = (0.0, PI);
pub const SINE_INPUT: (f64, f64) = (-5.0, 5.0);
pub const CENTROID_SCALE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    Sine { amplitude: f64, phase: f64 },
    Blobs { centroids: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Sine,
    Blobs,
}

/// One client's task: a support set for adaptation and a disjoint query set
/// drawn from the same latent task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub latent: Latent,
    pub support: Batch,
    pub query: Batch,
}

impl TaskInstance {
    pub fn sine_target(amplitude: f64, phase: f64, x: f64) -> f64 {
        amplitude * (x + phase).sin()
    }
}

fn sine_batch<R: Rng + ?Sized>(rng: &mut R, amplitude: f64, phase: f64, n: usize) -> Batch {
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(SINE_INPUT.0..SINE_INPUT.1)).collect();
    let ys = xs.iter().map(|&x| TaskInstance::sine_target(amplitude, phase, x)).collect();
    Batch {
        input_dim: 1,
        inputs: xs,
        targets: ys,
    }
}

/// `y = A sin(x + phi)` with `A ~ U[0.1, 5]`, `phi ~ U[0, pi]`, `x ~ U[-5, 5]`.
pub fn gen_sine_task<R: Rng + ?Sized>(rng: &mut R, shots: usize, query_size: usize) -> Result<TaskInstance> {
    if shots == 0 || query_size == 0 {
        return Err(Error::param("shots", "sine task needs shots >= 1 and query_size >= 1"));
    }
    let amplitude = rng.random_range(SINE_AMPLITUDE.0..SINE_AMPLITUDE.1);
    let phase = rng.random_range(SINE_PHASE.0..SINE_PHASE.1);
    let support = sine_batch(rng, amplitude, phase, shots);
    let query = sine_batch(rng, amplitude, phase, query_size);
    Ok(TaskInstance {
        kind: TaskKind::Sine,
        latent: Latent::Sine { amplitude, phase },
        support,
        query,
    })
}

/// `ways` Gaussian clusters around centroids drawn from `2 * N(0, I)`.
pub fn gen_blob_task<R: Rng + ?Sized>(
    rng: &mut R,
    ways: usize,
    shots: usize,
    query_per_class: usize,
    dim: usize,
    spread: f64,
) -> Result<TaskInstance> {
    if ways < 2 {
        return Err(Error::param("ways", format!("need at least 2 classes, got {ways}")));
    }
    if dim < 2 {
        return Err(Error::param("dim", format!("need at least 2 input dimensions, got {dim}")));
    }
    if shots == 0 || query_per_class == 0 {
        return Err(Error::param("shots", "blob task needs shots >= 1 and query_per_class >= 1"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::param("spread", format!("must be finite and non-negative, got {spread}")));
    }
    let centroids: Vec<Vec<f64>> = (0..ways)
        .map(|_| (0..dim).map(|_| CENTROID_SCALE * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let draw = |count: usize, rng: &mut R| {
        let mut inputs = Vec::with_capacity(ways * count * dim);
        let mut targets = Vec::with_capacity(ways * count);
        for (class, c) in centroids.iter().enumerate() {
            for _ in 0..count {
                inputs.extend(c.iter().map(|&m| m + spread * rng.sample::<f64, _>(StandardNormal)));
                targets.push(class as f64);
            }
        }
        Batch {
            input_dim: dim,
            inputs,
            targets,
        }
    };
    let support = draw(shots, rng);
    let query = draw(query_per_class, rng);
    Ok(TaskInstance {
        kind: TaskKind::Blobs,
        latent: Latent::Blobs { centroids },
        support,
        query,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Sine {
        #[serde(default = "default_sine_shots")]
        shots: usize,
        #[serde(default = "default_query")]
        query: usize,
    },
    Blobs {
        #[serde(default = "default_ways")]
        ways: usize,
        #[serde(default = "default_blob_shots")]
        shots: usize,
        #[serde(default = "default_query")]
        query: usize,
        #[serde(default = "default_blob_dim")]
        dim: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn default_sine_shots() -> usize {
    10
}
fn default_query() -> usize {
    15
}
fn default_ways() -> usize {
    5
}
fn default_blob_shots() -> usize {
    1
}
fn default_blob_dim() -> usize {
    8
}
fn default_spread() -> f64 {
    1.0
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig::Sine {
            shots: default_sine_shots(),
            query: default_query(),
        }
    }
}

impl TaskConfig {
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TaskInstance> {
        match *self {
            TaskConfig::Sine { shots, query } => gen_sine_task(rng, shots, query),
            TaskConfig::Blobs {
                ways,
                shots,
                query,
                dim,
                spread,
            } => gen_blob_task(rng, ways, shots, query, dim, spread),
        }
    }

    /// Default network for this task family.
    pub fn default_arch(&self) -> Arch {
        match *self {
            TaskConfig::Sine { .. } => Arch::sine_default(),
            TaskConfig::Blobs { ways, dim, .. } => Arch::blob_default(dim, ways),
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            TaskConfig::Sine { .. } => TaskKind::Sine,
            TaskConfig::Blobs { .. } => TaskKind::Blobs,
        }
    }
}

/// Tasks for the training clients (ids `0..n_training`) and the unseen
/// clients (ids following).
#[derive(Debug, Clone, PartialEq)]
pub struct ClientAssignment {
    pub training: Vec<TaskInstance>,
    pub unseen: Vec<TaskInstance>,
}

impl ClientAssignment {
    pub fn n_training(&self) -> usize {
        self.training.len()
    }

    /// Task owned by a global client id.
    pub fn task(&self, client: usize) -> Option<&TaskInstance> {
        if client < self.training.len() {
            self.training.get(client)
        } else {
            self.unseen.get(client - self.training.len())
        }
    }

    /// One record per client with full-precision latents and samples.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let all = self.training.iter().map(|t| ("training", t)).chain(self.unseen.iter().map(|t| ("unseen", t)));
        for (id, (role, task)) in all.enumerate() {
            let _ = write!(s, "client={id} role={role}");
            match &task.latent {
                Latent::Sine { amplitude, phase } => {
                    let _ = writeln!(s, " kind=sine amplitude={amplitude:?} phase={phase:?}");
                }
                Latent::Blobs { centroids } => {
                    let flat: Vec<String> = centroids.iter().flatten().map(|v| format!("{v:?}")).collect();
                    let _ = writeln!(s, " kind=blobs ways={} centroids={}", centroids.len(), flat.join(","));
                }
            }
            for (name, batch) in [("support", &task.support), ("query", &task.query)] {
                let xs: Vec<String> = batch.inputs.iter().map(|v| format!("{v:?}")).collect();
                let ys: Vec<String> = batch.targets.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(s, "  {name}_x={}", xs.join(","));
                let _ = writeln!(s, "  {name}_y={}", ys.join(","));
            }
        }
        s
    }
}

/// Each client's task comes from its own substream keyed by `(seed, id)`.
pub fn assign_clients(n_training: usize, n_unseen: usize, config: &TaskConfig, seed: u64) -> Result<ClientAssignment> {
    if n_training == 0 || n_unseen == 0 {
        return Err(Error::param("clients", "need at least one training and one unseen client"));
    }
    let task_for = |id: usize| config.generate(&mut substream(seed, Domain::Task, id as u32));
    Ok(ClientAssignment {
        training: (0..n_training).map(task_for).collect::<Result<_>>()?,
        unseen: (n_training..n_training + n_unseen).map(task_for).collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sine_target_values() {
        assert_eq!(TaskInstance::sine_target(1.0, 0.0, 0.0), 0.0);
        assert_abs_diff_eq!(TaskInstance::sine_target(2.0, PI / 2.0, 0.0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn sine_targets_bounded_by_amplitude() {
        let mut rng = substream(3, Domain::Task, 0);
        let task = gen_sine_task(&mut rng, 5, 10_000).unwrap();
        let Latent::Sine { amplitude, phase } = task.latent else {
            panic!("not a sine task")
        };
        assert!((0.1..5.0).contains(&amplitude) && (0.0..PI).contains(&phase));
        let mean_abs = task.query.targets.iter().map(|y| y.abs()).sum::<f64>() / 10_000.0;
        assert!(mean_abs <= amplitude);
        assert!(task.query.targets.iter().all(|y| y.abs() <= amplitude + 1e-12));
        assert!(task.query.inputs.iter().all(|x| (-5.0..5.0).contains(x)));
        assert_eq!(task.support.len(), 5);
    }

    #[test]
    fn blob_shapes() {
        let mut rng = substream(4, Domain::Task, 0);
        let t = gen_blob_task(&mut rng, 5, 1, 15, 4, 0.5).unwrap();
        assert_eq!(t.support.len(), 5);
        assert_eq!(t.query.len(), 75);
        let t = gen_blob_task(&mut rng, 5, 5, 15, 4, 0.5).unwrap();
        assert_eq!(t.support.len(), 25);
        assert!(gen_blob_task(&mut rng, 1, 1, 15, 4, 0.5).is_err());
        assert!(gen_blob_task(&mut rng, 3, 1, 15, 1, 0.5).is_err());
    }

    #[test]
    fn noiseless_blobs_sit_on_centroids() {
        let mut rng = substream(5, Domain::Task, 0);
        let t = gen_blob_task(&mut rng, 5, 2, 15, 3, 0.0).unwrap();
        let Latent::Blobs { centroids } = &t.latent else {
            panic!("not blobs")
        };
        // Nearest-centroid classification is perfect.
        for i in 0..t.query.len() {
            let x = t.query.input(i);
            let nearest = centroids
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da: f64 = a.1.iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                    let db: f64 = b.1.iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap()
                .0;
            assert_eq!(nearest as f64, t.query.targets[i]);
        }
    }

    #[test]
    fn assignment_layout_and_determinism() {
        let cfg = TaskConfig::default();
        let a = assign_clients(380, 120, &cfg, 11).unwrap();
        assert_eq!(a.training.len() + a.unseen.len(), 500);
        assert_eq!(a, assign_clients(380, 120, &cfg, 11).unwrap());
        // Growing the population keeps the existing clients' tasks.
        let smaller = assign_clients(10, 1, &cfg, 11).unwrap();
        assert_eq!(smaller.training[..], a.training[..10]);
        assert!(assign_clients(0, 1, &cfg, 0).is_err());
    }

    #[test]
    fn pairs_of_clients_have_distinct_latents() {
        for seed in 0..100 {
            let a = assign_clients(1, 1, &TaskConfig::default(), seed).unwrap();
            assert_ne!(a.training[0].latent, a.unseen[0].latent);
        }
    }

    #[test]
    fn dump_has_one_record_per_client() {
        let a = assign_clients(2, 1, &TaskConfig::default(), 0).unwrap();
        let dump = a.dump();
        assert_eq!(dump.lines().filter(|l| l.starts_with("client=")).count(), 3);
        assert!(dump.contains("client=2 role=unseen kind=sine"));
    }
}
