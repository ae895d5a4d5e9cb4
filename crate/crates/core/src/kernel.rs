//! Gaussian intensity kernel of the data layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Window;

/// Background intensity and per-type kernel bandwidths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataLayerParams {
    pub beta0: f64,
    pub psi_a: f64,
    pub psi_b: f64,
}

impl DataLayerParams {
    pub fn new(beta0: f64, psi_a: f64, psi_b: f64) -> Result<Self> {
        if !(psi_a > 0.0 && psi_b > 0.0) {
            return Err(Error::Domain(format!(
                "bandwidths must be positive, got psi_A={psi_a}, psi_B={psi_b}"
            )));
        }
        Ok(DataLayerParams { beta0, psi_a, psi_b })
    }
}

/// `exp(-|p - s|^2 / (2 psi^2))`.
#[inline]
pub fn kernel_value(p: [f64; 2], s: [f64; 2], psi: f64) -> f64 {
    let dx = p[0] - s[0];
    let dy = p[1] - s[1];
    (-(dx * dx + dy * dy) / (2.0 * psi * psi)).exp()
}

/// Kernel values at every window pixel, in window order.
pub fn kernel_vector(coords: &[[f64; 2]], s: [f64; 2], psi: f64) -> Vec<f64> {
    let mut out = vec![0.0; coords.len()];
    kernel_vector_into(coords, s, psi, &mut out);
    out
}

#[inline]
pub(crate) fn kernel_vector_into(coords: &[[f64; 2]], s: [f64; 2], psi: f64, out: &mut [f64]) {
    let inv = -0.5 / (psi * psi);
    for (o, p) in out.iter_mut().zip(coords) {
        let dx = p[0] - s[0];
        let dy = p[1] - s[1];
        *o = ((dx * dx + dy * dy) * inv).exp();
    }
}

/// Mean intensities of a window holding a single atom at `s`.
pub fn window_mean(w: &Window, s: [f64; 2], beta0: f64, beta: f64, psi: f64) -> Vec<f64> {
    w.coords
        .iter()
        .map(|&p| beta0 + beta * kernel_value(p, s, psi))
        .collect()
}
