use rand::Rng;

use crate::error::{invalid, Result};

/// Draws from Laplace(0, `scale`) by inverse-CDF sampling.
pub fn laplace_sample<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(invalid(format!("laplace scale must be positive, got {scale}")));
    }
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return Ok(-scale * u.signum() * tail.ln());
        }
    }
}

/// CDF of Laplace(0, `scale`).
pub fn laplace_cdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / scale).exp()
    } else {
        1.0 - 0.5 * (-x / scale).exp()
    }
}
