//! Fine-tuning objectives with analytic gradients with respect to the
//! model outputs.

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::labels::Distribution4;

pub const DEFAULT_LOG_FLOOR: f64 = 1e-7;
pub const DEFAULT_EPSILON: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    /// ∂loss/∂ŷᵢ.
    pub grad: Vec<f64>,
}

pub fn mse(y_hat: &[f64], y: &[f64]) -> Result<LossValue, MetricsError> {
    if y_hat.len() != y.len() {
        return Err(MetricsError::Length {
            pred: y_hat.len(),
            gold: y.len(),
        });
    }
    if y.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = y.len() as f64;
    let diff: Vec<f64> = y_hat.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(LossValue {
        value: diff.iter().map(|d| d * d).sum::<f64>() / n,
        grad: diff.iter().map(|d| 2.0 * d / n).collect(),
    })
}

/// `−Σ yᵢ log(clamp(ŷᵢ, floor, 1))`; the gradient is zero where clamped.
pub fn soft_cross_entropy(y_hat: &[f64; 4], y: &Distribution4, floor: f64) -> LossValue {
    let mut value = 0.0;
    let mut grad = vec![0.0; 4];
    for ((g, &p), &t) in grad.iter_mut().zip(y_hat).zip(y.probs()) {
        let clamped = p.clamp(floor, 1.0);
        value -= t * clamped.ln();
        if p > floor && p < 1.0 {
            *g = -t / p;
        }
    }
    LossValue { value, grad }
}

/// Cross-entropy plus `ε(1 − Σŷᵢ)²`, penalising outputs that do not sum to one.
pub fn custom_loss(y_hat: &[f64; 4], y: &Distribution4, epsilon: f64, floor: f64) -> LossValue {
    let mut loss = soft_cross_entropy(y_hat, y, floor);
    let gap = 1.0 - y_hat.iter().sum::<f64>();
    loss.value += epsilon * gap * gap;
    let shift = -2.0 * epsilon * gap;
    // adding a signed zero could flip -0.0 entries
    if shift != 0.0 {
        loss.grad.iter_mut().for_each(|g| *g += shift);
    }
    loss
}
