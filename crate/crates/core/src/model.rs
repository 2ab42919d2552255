//! Clipped affine-logistic hypothesis class and the cross-entropy loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{dot, sigmoid};

/// Probability floor applied by [`LogisticModel::predict`].
pub const DEFAULT_CLIP_EPS: f64 = 1e-6;

/// `x -> clip(sigmoid(w.x + b), clip_eps, 1 - clip_eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    w: Vec<f64>,
    b: f64,
    clip_eps: f64,
}

impl LogisticModel {
    pub fn new(w: Vec<f64>, b: f64) -> Self {
        LogisticModel {
            w,
            b,
            clip_eps: DEFAULT_CLIP_EPS,
        }
    }

    pub fn with_clip(w: Vec<f64>, b: f64, clip_eps: f64) -> Result<Self> {
        if !(clip_eps > 0.0 && clip_eps < 0.5) {
            return Err(Error::config(format!(
                "clip_eps must lie in (0, 1/2), got {clip_eps}"
            )));
        }
        Ok(LogisticModel { w, b, clip_eps })
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn clip_eps(&self) -> f64 {
        self.clip_eps
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Raw score `w.x + b`.
    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x)).clamp(self.clip_eps, 1.0 - self.clip_eps)
    }

    /// The same model with `delta` added to the intercept.
    pub fn shifted(&self, delta: f64) -> Self {
        LogisticModel {
            w: self.w.clone(),
            b: self.b + delta,
            clip_eps: self.clip_eps,
        }
    }

    /// Parameters as `[w..., b]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.w.clone();
        p.push(self.b);
        p
    }

    pub(crate) fn from_params(theta: &[f64], clip_eps: f64) -> Self {
        let (w, b) = theta.split_at(theta.len() - 1);
        LogisticModel {
            w: w.to_vec(),
            b: b[0],
            clip_eps,
        }
    }
}

/// `-y ln p - (1 - y) ln(1 - p)`.
pub fn cross_entropy(y: u8, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "cross-entropy needs p in (0, 1), got {p}"
        )));
    }
    Ok(if y == 1 { -p.ln() } else { -(-p).ln_1p() })
}
