//! Scalar helpers shared by the models and losses.

/// Guard used inside every cross-entropy logarithm.
pub const LOG_GUARD: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow for large |x|.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(max(x, LOG_GUARD))`.
#[inline]
pub fn guarded_ln(x: f64) -> f64 {
    x.max(LOG_GUARD).ln()
}

/// Derivative of [`guarded_ln`].
#[inline]
pub fn guarded_ln_grad(x: f64) -> f64 {
    if x > LOG_GUARD {
        1.0 / x
    } else {
        0.0
    }
}
