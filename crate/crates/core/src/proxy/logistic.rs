//! Weighted, L2-regularized binary logistic regression and its optimizer.

use serde::{Deserialize, Serialize};

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// f(w, b) = (1/N) Σ s_i · ce(y_i, σ(w·x_i + b)) + λ‖w‖²
///
/// Parameters are laid out as `[w_0 .. w_{d-1}, b]`; the bias is not
/// regularized.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    x: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
    dim: usize,
    lambda: f64,
}

impl LogisticObjective {
    /// `rows` are feature vectors, `y` is 0/1, `weights` are per-row loss weights.
    pub fn new(rows: &[&[f64]], y: &[bool], weights: &[f64], lambda: f64) -> LogisticObjective {
        let dim = rows.first().map_or(0, |r| r.len());
        let mut x = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            debug_assert_eq!(r.len(), dim);
            x.extend_from_slice(r);
        }
        LogisticObjective {
            x,
            y: y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            s: weights.to_vec(),
            dim,
            lambda,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn margins<'a>(&'a self, theta: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        let (w, b) = theta.split_at(self.dim);
        let b = b[0];
        self.x
            .chunks_exact(self.dim.max(1))
            .take(self.y.len())
            .map(move |row| row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b)
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        self.lambda * theta[..self.dim].iter().map(|v| v * v).sum::<f64>()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let n = self.y.len() as f64;
        let loss: f64 = self
            .margins(theta)
            .zip(self.y.iter().zip(&self.s))
            .map(|(z, (&y, &s))| s * if y > 0.5 { softplus(-z) } else { softplus(z) })
            .sum();
        loss / n + self.penalty(theta)
    }

    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let n = self.y.len() as f64;
        let d = self.dim;
        let mut grad = vec![0.0; d + 1];
        let mut loss = 0.0;
        let rows = self.x.chunks_exact(d.max(1));
        for ((z, row), (&y, &s)) in self.margins(theta).zip(rows).zip(self.y.iter().zip(&self.s)) {
            loss += s * if y > 0.5 { softplus(-z) } else { softplus(z) };
            let r = s * (sigmoid(z) - y) / n;
            for (g, a) in grad[..d].iter_mut().zip(row) {
                *g += r * a;
            }
            grad[d] += r;
        }
        for (g, w) in grad[..d].iter_mut().zip(&theta[..d]) {
            *g += 2.0 * self.lambda * w;
        }
        (loss / n + self.penalty(theta), grad)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.value_and_gradient(theta).1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    /// L2 strength; `None` means 1/(2N).
    pub reg_lambda: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            reg_lambda: None,
            tol: 1e-4,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryFit {
    pub iterations: usize,
    /// Objective evaluations, line-search trials included.
    pub evaluations: usize,
    pub converged: bool,
    pub grad_inf_norm: f64,
    pub objective_trace: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Full-batch gradient descent from zero.
///
/// Trial steps use the Barzilai-Borwein length and are accepted only under
/// the Armijo condition, halving otherwise, so the objective never rises.
pub fn minimize(obj: &LogisticObjective, tol: f64, max_iter: usize) -> (Vec<f64>, BinaryFit) {
    let mut theta = vec![0.0; obj.dim() + 1];
    let (mut f, mut g) = obj.value_and_gradient(&theta);
    let mut evaluations = 1;
    let mut trace = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = inf_norm(&g) <= tol;
    while !converged && iterations < max_iter {
        let gg: f64 = g.iter().map(|v| v * v).sum();
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, d)| t - step * d).collect();
            let fc = obj.value(&cand);
            evaluations += 1;
            if fc <= f - 1e-4 * step * gg {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((next, _)) = accepted else { break };
        let (fn_, gn) = obj.value_and_gradient(&next);
        evaluations += 1;
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { step * 2.0 };
        theta = next;
        f = fn_;
        g = gn;
        trace.push(f);
        iterations += 1;
        converged = inf_norm(&g) <= tol;
    }
    let grad_inf_norm = inf_norm(&g);
    (
        theta,
        BinaryFit {
            iterations,
            evaluations,
            converged,
            grad_inf_norm,
            objective_trace: trace,
        },
    )
}
