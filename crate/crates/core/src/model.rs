//! Small fully connected networks over a flat parameter vector.
//!
//! Parameters are laid out layer by layer: the weight matrix in row-major
//! order (`out x in`) followed by the bias vector. Hidden layers use `tanh`,
//! the output layer is linear and feeds the loss head.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Mean squared error against a real target. Requires one output.
    Mse,
    /// Mean softmax cross-entropy against a class index.
    SoftmaxXent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub head: Head,
}

impl Arch {
    /// 1 -> 40 -> 40 -> 1 regression network.
    pub fn sine_default() -> Self {
        Arch {
            input_dim: 1,
            hidden: vec![40, 40],
            output_dim: 1,
            head: Head::Mse,
        }
    }

    /// dim -> 64 -> ways classifier.
    pub fn blob_default(dim: usize, ways: usize) -> Self {
        Arch {
            input_dim: dim,
            hidden: vec![64],
            output_dim: ways,
            head: Head::SoftmaxXent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::param("arch", "layer widths must be positive"));
        }
        if self.head == Head::Mse && self.output_dim != 1 {
            return Err(Error::param("arch", "mse head needs exactly one output"));
        }
        if self.head == Head::SoftmaxXent && self.output_dim < 2 {
            return Err(Error::param("arch", "softmax head needs at least two outputs"));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `1-40-40-1:mse` style descriptor.
    pub fn descriptor(&self) -> String {
        let widths: Vec<String> = self.widths().iter().map(usize::to_string).collect();
        let head = match self.head {
            Head::Mse => "mse",
            Head::SoftmaxXent => "softmax_xent",
        };
        format!("{}:{head}", widths.join("-"))
    }

    pub fn from_descriptor(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad architecture descriptor `{s}`"));
        let (widths, head) = s.trim().split_once(':').ok_or_else(bad)?;
        let head = match head {
            "mse" => Head::Mse,
            "softmax_xent" => Head::SoftmaxXent,
            _ => return Err(bad()),
        };
        let widths = widths
            .split('-')
            .map(|w| w.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        if widths.len() < 2 {
            return Err(bad());
        }
        let arch = Arch {
            input_dim: widths[0],
            hidden: widths[1..widths.len() - 1].to_vec(),
            output_dim: widths[widths.len() - 1],
            head,
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Flat parameter vector tagged with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub arch: Arch,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(arch: Arch, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::param(
                "values",
                format!("expected {} parameters for {}, got {}", arch.param_count(), arch.descriptor(), values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("parameter {i} is not finite")));
        }
        Ok(ParamVector { arch, values })
    }

    /// Descriptor line, then one value per line in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut s = self.arch.descriptor();
        s.push('\n');
        for v in &self.values {
            let _ = writeln!(s, "{v:?}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let arch = Arch::from_descriptor(lines.next().unwrap_or(""))?;
        let values = lines
            .enumerate()
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("param line {}: `{}` is not a number", i + 2, l.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        ParamVector::new(arch, values)
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: &Arch, seed: u64) -> Result<ParamVector> {
    arch.validate()?;
    let mut rng = substream(seed, Domain::Init, 0);
    let mut values = Vec::with_capacity(arch.param_count());
    for w in arch.widths().windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        values.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)));
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector::new(arch.clone(), values)
}

/// A set of labelled examples stored row-major. For classification the
/// target holds the class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input_dim: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn new(input_dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if input_dim == 0 || inputs.len() != input_dim * targets.len() {
            return Err(Error::param(
                "batch",
                format!("{} inputs do not form {} rows of width {input_dim}", inputs.len(), targets.len()),
            ));
        }
        Ok(Batch {
            input_dim,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

/// A differentiable per-batch loss over a flat parameter vector.
pub trait Objective {
    /// Parameter dimension.
    fn dim(&self) -> usize;

    fn loss(&self, p: &[f64], batch: &Batch) -> Result<f64>;

    fn grad(&self, p: &[f64], batch: &Batch) -> Result<Vec<f64>>;

    /// Evaluation metric reported for a batch (MSE, accuracy, ...).
    fn metric(&self, p: &[f64], batch: &Batch) -> Result<f64> {
        self.loss(p, batch)
    }

    /// Whether larger metric values are better.
    fn metric_higher_is_better(&self) -> bool {
        false
    }

    /// Hessian-vector product by central differences of the gradient along
    /// `v / |v|`. `fd_step` defaults to `1e-4 * max(1,|p|) / max(1,|v|)`.
    fn hvp(&self, p: &[f64], batch: &Batch, v: &[f64], fd_step: Option<f64>) -> Result<Vec<f64>> {
        central_difference_hvp(self, p, batch, v, fd_step)
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn central_difference_hvp<O: Objective + ?Sized>(
    obj: &O,
    p: &[f64],
    batch: &Batch,
    v: &[f64],
    fd_step: Option<f64>,
) -> Result<Vec<f64>> {
    if v.len() != p.len() {
        return Err(Error::param("v", format!("length {} does not match parameters {}", v.len(), p.len())));
    }
    let v_norm = norm(v);
    if !v_norm.is_finite() {
        return Err(Error::Numerical("hvp direction is not finite".into()));
    }
    if v_norm == 0.0 {
        return Ok(vec![0.0; p.len()]);
    }
    let h = match fd_step {
        Some(h) if h > 0.0 => h,
        Some(h) => return Err(Error::param("fd_step", format!("must be positive, got {h}"))),
        None => 1e-4 * norm(p).max(1.0) / v_norm.max(1.0),
    };
    let plus: Vec<f64> = p.iter().zip(v).map(|(x, d)| x + h * d / v_norm).collect();
    let minus: Vec<f64> = p.iter().zip(v).map(|(x, d)| x - h * d / v_norm).collect();
    let gp = obj.grad(&plus, batch)?;
    let gm = obj.grad(&minus, batch)?;
    let scale = v_norm / (2.0 * h);
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) * scale).collect())
}

/// Fully connected `tanh` network with the architecture's loss head.
#[derive(Debug, Clone)]
pub struct Mlp {
    arch: Arch,
    /// `(weight offset, bias offset, fan_in, fan_out)` per layer.
    layers: Vec<(usize, usize, usize, usize)>,
}

impl Mlp {
    pub fn new(arch: Arch) -> Result<Self> {
        arch.validate()?;
        let mut layers = Vec::new();
        let mut off = 0;
        for w in arch.widths().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            layers.push((off, off + fan_in * fan_out, fan_in, fan_out));
            off += fan_in * fan_out + fan_out;
        }
        Ok(Mlp { arch, layers })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    fn check(&self, p: &[f64], batch: &Batch) -> Result<()> {
        if p.len() != self.arch.param_count() {
            return Err(Error::param(
                "params",
                format!("expected {} parameters, got {}", self.arch.param_count(), p.len()),
            ));
        }
        if batch.is_empty() {
            return Err(Error::param("batch", "batch is empty"));
        }
        if batch.input_dim != self.arch.input_dim {
            return Err(Error::param(
                "batch",
                format!("input width {} does not match network input {}", batch.input_dim, self.arch.input_dim),
            ));
        }
        if self.arch.head == Head::SoftmaxXent {
            let ways = self.arch.output_dim as f64;
            if let Some(t) = batch.targets.iter().find(|&&t| t < 0.0 || t >= ways || t.fract() != 0.0) {
                return Err(Error::param("batch", format!("class label {t} outside 0..{ways}")));
            }
        }
        Ok(())
    }

    /// Activations of every layer for one input; the last entry is the logits.
    fn forward(&self, p: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, &(w_off, b_off, fan_in, fan_out)) in self.layers.iter().enumerate() {
            let input = &acts[l];
            let mut out = p[b_off..b_off + fan_out].to_vec();
            for (o, out_o) in out.iter_mut().enumerate() {
                let row = &p[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                *out_o += dot(row, input);
            }
            if l != last {
                out.iter_mut().for_each(|z| *z = z.tanh());
            }
            acts.push(out);
        }
        acts
    }

    pub fn predict(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward(p, x).pop().unwrap_or_default()
    }

    /// Per-example loss and the gradient of that loss w.r.t. the logits.
    fn head(&self, logits: &[f64], target: f64) -> (f64, Vec<f64>) {
        match self.arch.head {
            Head::Mse => {
                let r = logits[0] - target;
                (r * r, vec![2.0 * r])
            }
            Head::SoftmaxXent => {
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                let label = target as usize;
                let loss = sum.ln() + max - logits[label];
                let mut d: Vec<f64> = exps.iter().map(|e| e / sum).collect();
                d[label] -= 1.0;
                (loss, d)
            }
        }
    }
}

fn non_finite(what: &str) -> Error {
    Error::Numerical(format!("non-finite {what} in forward pass"))
}

impl Objective for Mlp {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }

    fn loss(&self, p: &[f64], batch: &Batch) -> Result<f64> {
        self.check(p, batch)?;
        let total: f64 = (0..batch.len())
            .map(|i| {
                let acts = self.forward(p, batch.input(i));
                self.head(acts.last().unwrap(), batch.targets[i]).0
            })
            .sum();
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(non_finite("loss"));
        }
        Ok(loss)
    }

    fn grad(&self, p: &[f64], batch: &Batch) -> Result<Vec<f64>> {
        self.check(p, batch)?;
        let mut g = vec![0.0; p.len()];
        let scale = 1.0 / batch.len() as f64;
        for i in 0..batch.len() {
            let acts = self.forward(p, batch.input(i));
            let (_, mut delta) = self.head(acts.last().unwrap(), batch.targets[i]);
            for (l, &(w_off, b_off, fan_in, fan_out)) in self.layers.iter().enumerate().rev() {
                let input = &acts[l];
                for o in 0..fan_out {
                    let d = delta[o] * scale;
                    g[b_off + o] += d;
                    let row = &mut g[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                    row.iter_mut().zip(input).for_each(|(gw, x)| *gw += d * x);
                }
                if l == 0 {
                    break;
                }
                // Back through the weights, then through tanh of the layer below.
                let mut below = vec![0.0; fan_in];
                for (o, d) in delta.iter().enumerate() {
                    let row = &p[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                    below.iter_mut().zip(row).for_each(|(b, w)| *b += d * w);
                }
                below.iter_mut().zip(input).for_each(|(b, a)| *b *= 1.0 - a * a);
                delta = below;
            }
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(non_finite("gradient"));
        }
        Ok(g)
    }

    fn metric(&self, p: &[f64], batch: &Batch) -> Result<f64> {
        match self.arch.head {
            Head::Mse => self.loss(p, batch),
            Head::SoftmaxXent => {
                self.check(p, batch)?;
                let correct = (0..batch.len())
                    .filter(|&i| {
                        let logits = self.predict(p, batch.input(i));
                        argmax(&logits) == batch.targets[i] as usize
                    })
                    .count();
                Ok(correct as f64 / batch.len() as f64)
            }
        }
    }

    fn metric_higher_is_better(&self) -> bool {
        self.arch.head == Head::SoftmaxXent
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// `l(u; B) = 0.5 * |u - c_B|^2` where `c_B` is the mean input row of `B`.
/// Identity Hessian; used to check meta-gradient algebra in closed form.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticBowl {
    pub dim: usize,
}

impl QuadraticBowl {
    pub fn center(&self, batch: &Batch) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for i in 0..batch.len() {
            c.iter_mut().zip(batch.input(i)).for_each(|(c, x)| *c += x);
        }
        c.iter_mut().for_each(|c| *c /= batch.len() as f64);
        c
    }

    fn check(&self, p: &[f64], batch: &Batch) -> Result<()> {
        if p.len() != self.dim || batch.input_dim != self.dim || batch.is_empty() {
            return Err(Error::param("batch", "quadratic bowl needs rows of the parameter width"));
        }
        Ok(())
    }
}

impl Objective for QuadraticBowl {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, p: &[f64], batch: &Batch) -> Result<f64> {
        self.check(p, batch)?;
        let c = self.center(batch);
        Ok(0.5 * p.iter().zip(&c).map(|(u, c)| (u - c) * (u - c)).sum::<f64>())
    }

    fn grad(&self, p: &[f64], batch: &Batch) -> Result<Vec<f64>> {
        self.check(p, batch)?;
        let c = self.center(batch);
        Ok(p.iter().zip(&c).map(|(u, c)| u - c).collect())
    }

    fn hvp(&self, p: &[f64], batch: &Batch, v: &[f64], fd_step: Option<f64>) -> Result<Vec<f64>> {
        self.check(p, batch)?;
        if v.len() != self.dim {
            return Err(Error::param("v", "direction width differs from parameter width"));
        }
        if let Some(h) = fd_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::param("fd_step", format!("must be positive and finite, got {h}")));
            }
        }
        Ok(v.to_vec())
    }
}
