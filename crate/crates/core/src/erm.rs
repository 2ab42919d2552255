//! Weighted empirical risk minimization for the logistic class and Monte
//! Carlo evaluation of excess risk under a target distribution.
//!
//! Training minimizes the normalized weighted cross-entropy
//! `sum_i w_i l(y_i, sigmoid(m_i)) / sum_i w_i + (lambda/2) |w|^2`,
//! written with `softplus` so it stays smooth and convex; the probability
//! clipping of [`LogisticModel::predict`] only applies at prediction time.
//! Normalizing by the total weight makes the argmin (and every iterate)
//! invariant to rescaling all weights.

use serde::{Deserialize, Serialize};

use crate::distributions::{sample_target, target_conditional, MixtureSpec, TargetSpec};
use crate::error::{Error, Result};
use crate::model::LogisticModel;
use crate::stats::{dot, mean_se, sigmoid, softplus};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub x: Vec<f64>,
    pub y: u8,
    pub weight: f64,
}

impl WeightedSample {
    pub fn new(x: Vec<f64>, y: u8, weight: f64) -> Self {
        WeightedSample { x, y, weight }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub ridge_lambda: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            grad_tol: 1e-8,
            max_iters: 10_000,
            ridge_lambda: 0.0,
        }
    }
}

/// Ridge penalty used when an unregularized fit hits separable data.
pub const SEPARATION_RIDGE: f64 = 1e-8;

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_HALVINGS: usize = 80;

/// Value of the training objective at `theta = [w..., b]`.
pub fn objective(data: &[WeightedSample], theta: &[f64], ridge_lambda: f64) -> f64 {
    let (w, b) = theta.split_at(theta.len() - 1);
    let total: f64 = data.iter().map(|s| s.weight).sum();
    let risk: f64 = data
        .iter()
        .filter(|s| s.weight > 0.0)
        .map(|s| {
            let m = dot(w, &s.x) + b[0];
            s.weight * (softplus(m) - f64::from(s.y) * m)
        })
        .sum::<f64>()
        / total;
    risk + 0.5 * ridge_lambda * dot(w, w)
}

/// Objective value and gradient in one pass.
pub fn objective_and_gradient(
    data: &[WeightedSample],
    theta: &[f64],
    ridge_lambda: f64,
) -> (f64, Vec<f64>) {
    let p = theta.len();
    let (w, b) = theta.split_at(p - 1);
    let total: f64 = data.iter().map(|s| s.weight).sum();
    let mut grad = vec![0.0; p];
    let mut value = 0.0;
    for s in data.iter().filter(|s| s.weight > 0.0) {
        let m = dot(w, &s.x) + b[0];
        let y = f64::from(s.y);
        value += s.weight * (softplus(m) - y * m);
        let r = s.weight * (sigmoid(m) - y);
        for (g, xi) in grad.iter_mut().zip(&s.x) {
            *g += r * xi;
        }
        grad[p - 1] += r;
    }
    value /= total;
    grad.iter_mut().for_each(|g| *g /= total);
    value += 0.5 * ridge_lambda * dot(w, w);
    for (g, wi) in grad.iter_mut().zip(w) {
        *g += ridge_lambda * wi;
    }
    (value, grad)
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Intercept-only optimum `w = 0, b = log(n1/n0)` with weighted counts.
pub fn intercept_init(data: &[WeightedSample]) -> Result<LogisticModel> {
    let dim = check_data(data)?;
    let (w0, w1) = class_weights(data);
    Ok(LogisticModel::new(vec![0.0; dim], (w1 / w0).ln()))
}

fn class_weights(data: &[WeightedSample]) -> (f64, f64) {
    data.iter().fold((0.0, 0.0), |(a, b), s| {
        if s.y == 1 {
            (a, b + s.weight)
        } else {
            (a + s.weight, b)
        }
    })
}

fn check_data(data: &[WeightedSample]) -> Result<usize> {
    let first = data
        .first()
        .ok_or_else(|| Error::insufficient("empty training set"))?;
    let dim = first.x.len();
    if data.iter().any(|s| s.x.len() != dim) {
        return Err(Error::config("training samples differ in dimension"));
    }
    if data
        .iter()
        .any(|s| !(s.weight >= 0.0 && s.weight.is_finite()))
    {
        return Err(Error::config("weights must be finite and nonnegative"));
    }
    let (w0, w1) = class_weights(data);
    if w0 + w1 <= 0.0 {
        return Err(Error::config("all weights are zero"));
    }
    if w0 <= 0.0 || w1 <= 0.0 {
        return Err(Error::Separation(format!(
            "positive-weight samples carry a single label (class weights {w0}, {w1})"
        )));
    }
    Ok(dim)
}

/// Gradient descent with Barzilai-Borwein trial steps and Armijo
/// backtracking. Stops once the gradient norm is at most `opts.grad_tol`.
pub fn erm_train(
    data: &[WeightedSample],
    init: &LogisticModel,
    opts: &OptimizerSettings,
) -> Result<LogisticModel> {
    let dim = check_data(data)?;
    if init.dim() != dim {
        return Err(Error::config(format!(
            "initial model has dimension {}, data has {dim}",
            init.dim()
        )));
    }
    let lambda = opts.ridge_lambda;
    let clip = init.clip_eps();
    let mut theta = init.params();
    let (mut f, mut g) = objective_and_gradient(data, &theta, lambda);
    let mut step = 1.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

    for _ in 0..opts.max_iters {
        let gnorm = norm(&g);
        if gnorm <= opts.grad_tol {
            break;
        }
        if let Some((dtheta, dg)) = prev.take() {
            let sy = dot(&dtheta, &dg);
            if sy > 0.0 {
                step = (dot(&dtheta, &dtheta) / sy).clamp(1e-10, 1e10);
            }
        }
        let g2 = gnorm * gnorm;
        let mut accepted = None;
        let mut t = step;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(a, gi)| a - t * gi).collect();
            let (fc, gc) = objective_and_gradient(data, &cand, lambda);
            let armijo = fc <= f - ARMIJO_C * t * g2;
            // Near the optimum the sufficient-decrease test sits below f64
            // resolution; accept a step that does not raise the objective
            // beyond rounding and shrinks the gradient.
            let noise = 8.0 * f64::EPSILON * f.abs().max(1.0);
            let flat = fc <= f + noise && norm(&gc) < gnorm;
            if armijo || flat {
                accepted = Some((cand, fc, gc, t));
                break;
            }
            t *= BACKTRACK;
        }
        let Some((cand, fc, gc, t)) = accepted else {
            break;
        };
        let dtheta: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let dg: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        prev = Some((dtheta, dg));
        step = t;
        theta = cand;
        f = fc;
        g = gc;
    }

    let grad_norm = norm(&g);
    let last = LogisticModel::from_params(&theta, clip);
    // With strictly separated data the gradient only decays like
    // exp(-margin), so a small gradient does not mean a finite optimum.
    if lambda == 0.0 && separates(data, &last) {
        return Err(Error::Separation(format!(
            "data are linearly separable; gradient norm {grad_norm:.3e} with |w| = {:.3e}",
            norm(last.w())
        )));
    }
    if grad_norm <= opts.grad_tol {
        return Ok(last);
    }
    Err(Error::Convergence {
        iters: opts.max_iters,
        grad_norm,
        last: Box::new(last),
    })
}

fn separates(data: &[WeightedSample], model: &LogisticModel) -> bool {
    data.iter()
        .filter(|s| s.weight > 0.0)
        .all(|s| (2.0 * f64::from(s.y) - 1.0) * model.margin(&s.x) > 0.0)
}

/// How a fit with separation fallback terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    /// The unregularized fit hit separable data and was redone with
    /// [`SEPARATION_RIDGE`].
    RidgeFallback,
}

impl FitStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitStatus::Converged => "ok",
            FitStatus::RidgeFallback => "ridge_fallback",
        }
    }
}

/// [`erm_train`] from the intercept-only start, redoing separable fits with
/// a small ridge penalty.
pub fn fit(
    data: &[WeightedSample],
    opts: &OptimizerSettings,
) -> Result<(LogisticModel, FitStatus)> {
    let init = intercept_init(data)?;
    match erm_train(data, &init, opts) {
        Ok(m) => Ok((m, FitStatus::Converged)),
        Err(Error::Separation(_)) if opts.ridge_lambda == 0.0 && data_has_both(data) => {
            let ridge = OptimizerSettings {
                ridge_lambda: SEPARATION_RIDGE,
                ..*opts
            };
            erm_train(data, &init, &ridge).map(|m| (m, FitStatus::RidgeFallback))
        }
        Err(e) => Err(e),
    }
}

fn data_has_both(data: &[WeightedSample]) -> bool {
    let (a, b) = class_weights(data);
    a > 0.0 && b > 0.0
}

/// Monte Carlo summary of a fitted model against the target conditional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub excess_risk: f64,
    pub excess_risk_se: f64,
    pub est_error_q: f64,
    pub type2_error: f64,
    pub n_eval: usize,
}

/// Estimate excess risk, L2 estimation error and type-II error of `model`
/// relative to `fstar` on `n_eval` fresh draws from the target.
///
/// The label is integrated out per draw: the summand is
/// `E[l(Y, f(x)) - l(Y, f*(x)) | X = x]` with `Y ~ Bernoulli(eta(x))`,
/// `eta` the exact target conditional of `spec`. Its mean is the excess
/// risk, with far lower variance than the single-label difference.
pub fn evaluate_risk(
    model: &LogisticModel,
    fstar: &LogisticModel,
    spec: &MixtureSpec,
    target: &TargetSpec,
    n_eval: usize,
    seed: u64,
) -> Result<RiskReport> {
    if n_eval < 1000 {
        return Err(Error::config(format!(
            "n_eval must be >= 1000, got {n_eval}"
        )));
    }
    if model.dim() != spec.dim() || fstar.dim() != spec.dim() {
        return Err(Error::config("model and spec dimensions differ"));
    }
    let eta_model = target_conditional(spec, target);
    let draws = sample_target(spec, target, n_eval, seed)?;

    let mut excess = Vec::with_capacity(n_eval);
    let mut sq_err = 0.0;
    let (mut pos, mut missed) = (0usize, 0usize);
    for s in draws.samples() {
        let f_hat = model.predict(&s.x);
        let f_ref = fstar.predict(&s.x);
        let eta = sigmoid(eta_model.margin(&s.x));
        excess.push(
            eta * (f_ref.ln() - f_hat.ln()) + (1.0 - eta) * ((-f_ref).ln_1p() - (-f_hat).ln_1p()),
        );
        sq_err += (f_hat - f_ref).powi(2);
        if s.y == 1 {
            pos += 1;
            if f_hat < 0.5 {
                missed += 1;
            }
        }
    }
    let (excess_risk, excess_risk_se) = mean_se(&excess);
    Ok(RiskReport {
        excess_risk,
        excess_risk_se,
        est_error_q: (sq_err / n_eval as f64).sqrt(),
        type2_error: if pos == 0 {
            0.0
        } else {
            missed as f64 / pos as f64
        },
        n_eval,
    })
}
