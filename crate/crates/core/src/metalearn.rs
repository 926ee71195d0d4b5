//! MAML inner loop and meta-gradients.
//!
//! The exact meta-gradient of `l(u_K(w); query)` is
//! `prod_{k<K} (I - alpha H(u_k; support)) * grad l(u_K; query)`. It is formed
//! right to left as K Hessian-vector products, so no Hessian is ever built.

use crate::error::{Error, Result};
use crate::model::{Batch, Objective};

/// States `u_0..u_K` of the inner gradient descent on the support set.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerTrajectory {
    pub states: Vec<Vec<f64>>,
    pub alpha: f64,
    pub steps: usize,
}

impl InnerTrajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory always holds u_0")
    }
}

/// Inner-loop settings: step size `alpha` and `steps` full-batch updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLoop {
    pub alpha: f64,
    pub steps: usize,
}

impl InnerLoop {
    pub fn new(alpha: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("inner_steps", "K must be at least 1"));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::param("alpha", format!("must be finite and non-negative, got {alpha}")));
        }
        Ok(InnerLoop { alpha, steps })
    }

    /// `u_{k+1} = u_k - alpha * grad l(u_k; support)`.
    pub fn run<O: Objective + ?Sized>(&self, obj: &O, w: &[f64], support: &Batch) -> Result<InnerTrajectory> {
        let mut states = Vec::with_capacity(self.steps + 1);
        states.push(w.to_vec());
        for k in 0..self.steps {
            let u = &states[k];
            let g = obj.grad(u, support)?;
            let next: Vec<f64> = u.iter().zip(&g).map(|(u, g)| u - self.alpha * g).collect();
            if next.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("inner loop state u_{} is not finite", k + 1)));
            }
            states.push(next);
        }
        Ok(InnerTrajectory {
            states,
            alpha: self.alpha,
            steps: self.steps,
        })
    }

    /// Query loss of the adapted parameters.
    pub fn meta_loss<O: Objective + ?Sized>(&self, obj: &O, w: &[f64], support: &Batch, query: &Batch) -> Result<f64> {
        let traj = self.run(obj, w, support)?;
        obj.loss(traj.last(), query)
    }

    /// Exact meta-gradient by reverse accumulation over the trajectory:
    /// `g <- grad l(u_K; query)`, then `g <- g - alpha * H(u_k) g` for k = K-1..0.
    pub fn meta_gradient_exact<O: Objective + ?Sized>(
        &self,
        obj: &O,
        w: &[f64],
        support: &Batch,
        query: &Batch,
    ) -> Result<Vec<f64>> {
        let traj = self.run(obj, w, support)?;
        let mut g = obj.grad(traj.last(), query)?;
        if self.alpha == 0.0 {
            return Ok(g);
        }
        for u in traj.states[..self.steps].iter().rev() {
            let hg = obj.hvp(u, support, &g, None)?;
            g.iter_mut().zip(&hg).for_each(|(g, h)| *g -= self.alpha * h);
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("meta-gradient is not finite".into()));
        }
        Ok(g)
    }

    /// First-order approximation: every Hessian factor replaced by identity.
    pub fn meta_gradient_first_order<O: Objective + ?Sized>(
        &self,
        obj: &O,
        w: &[f64],
        support: &Batch,
        query: &Batch,
    ) -> Result<Vec<f64>> {
        let traj = self.run(obj, w, support)?;
        obj.grad(traj.last(), query)
    }

    /// Model handed to a client that never took part in meta-training.
    pub fn adapt<O: Objective + ?Sized>(&self, obj: &O, w: &[f64], support: &Batch) -> Result<Vec<f64>> {
        let mut traj = self.run(obj, w, support)?;
        Ok(traj.states.pop().expect("trajectory always holds u_0"))
    }
}

/// `(1/n) sum_i G_i(w)` over the given `(support, query)` pairs.
pub fn average_meta_gradient<'a, O, I>(obj: &O, w: &[f64], inner: &InnerLoop, tasks: I) -> Result<Vec<f64>>
where
    O: Objective + ?Sized,
    I: IntoIterator<Item = (&'a Batch, &'a Batch)>,
{
    let mut sum = vec![0.0; w.len()];
    let mut count = 0usize;
    for (support, query) in tasks {
        let g = inner.meta_gradient_exact(obj, w, support, query)?;
        sum.iter_mut().zip(&g).for_each(|(s, g)| *s += g);
        count += 1;
    }
    if count == 0 {
        return Err(Error::param("tasks", "need at least one task to average"));
    }
    sum.iter_mut().for_each(|s| *s /= count as f64);
    Ok(sum)
}
