//! Binary logistic loss.

/// First and second derivative of the loss at one instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientPair {
    pub w: f64,
    pub h: f64,
}

impl GradientPair {
    /// Rounds both components to the `2^-frac_bits` grid. Sums of quantized
    /// gradients are exact in `f64`, so any grouping of the same rows yields
    /// bit-identical totals.
    pub fn quantized(self, frac_bits: u32) -> Self {
        let scale = 2f64.powi(frac_bits as i32);
        GradientPair { w: (self.w * scale).round() / scale, h: (self.h * scale).round() / scale }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `p = sigmoid(margin)`, `w = p - y`, `h = p (1 - p)`.
pub fn logistic_gradients(margin: f64, label: f64) -> GradientPair {
    let p = sigmoid(margin);
    GradientPair { w: p - label, h: p * (1.0 - p) }
}

/// Mean negative log-likelihood.
pub fn log_loss(margins: &[f64], labels: &[f64]) -> f64 {
    if margins.is_empty() {
        return 0.0;
    }
    let eps = 1e-15;
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| {
            let p = sigmoid(m).clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / margins.len() as f64
}

/// Log-odds of the positive rate, clamped away from infinity.
pub fn prior_log_odds(positives: f64, count: f64) -> f64 {
    if count <= 0.0 {
        return 0.0;
    }
    let p = (positives / count).clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}
