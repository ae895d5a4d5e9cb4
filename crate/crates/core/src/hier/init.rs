//! Starting values from detected locations and per-window least squares.

use crate::error::{Error, Result};
use crate::kernel::kernel_vector;
use crate::simulate::{ols_line, regression_pairs};

use super::{HierData, HierState};

/// Per-window least-squares intensity estimates used for starting values and
/// hyperprior grounding.
#[derive(Clone, Debug, PartialEq)]
pub struct OlsSummary {
    pub beta_a: Vec<f64>,
    pub beta_b: Vec<f64>,
    pub mean_beta_a: f64,
    pub var_beta_a: f64,
    pub mean_beta_b: f64,
    pub var_beta_b: f64,
    pub mean_intercept: f64,
    pub residual_var: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var)
}

/// Regresses window intensities on `[1, kernel]`; returns (intercept, slope, rss).
fn window_ols(coords: &[[f64; 2]], y: &[f64], s: [f64; 2], psi: f64) -> Result<(f64, f64, f64)> {
    let x = kernel_vector(coords, s, psi);
    let n = y.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    if !(det.abs() > 1e-12 * n * sxx.max(1.0)) {
        return Err(Error::DegenerateWindow(
            "kernel column is constant over the window; cannot start intensities".into(),
        ));
    }
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / n;
    let rss = x
        .iter()
        .zip(y)
        .map(|(xv, yv)| (yv - intercept - slope * xv).powi(2))
        .sum();
    Ok((intercept, slope, rss))
}

/// Floor on variance starting values so inverse-gamma updates start finite.
const VAR_FLOOR: f64 = 1e-4;

/// Builds a starting state: locations as given, intensities and background by
/// per-window least squares, regression coefficients by pooled least squares,
/// and neutral correlation parameters.
pub fn initialize(data: &HierData, s_a: &[[f64; 2]], s_b: &[[f64; 2]], psi: [f64; 2]) -> Result<(HierState, OlsSummary)> {
    let g = &data.geometry;
    if s_a.len() != g.n_a() || s_b.len() != g.n_b() {
        return Err(Error::Structure("starting locations do not match the geometry".into()));
    }
    let mut intercepts = Vec::new();
    let mut rss = 0.0;
    let mut dof = 0.0;
    let mut fit = |windows: &[crate::imaging::Window], sites: &[[f64; 2]], psi: f64| -> Result<Vec<f64>> {
        let mut betas = Vec::with_capacity(sites.len());
        for (w, s) in windows.iter().zip(sites) {
            let (b0, b, r) = window_ols(&w.coords, &w.intensities, *s, psi)?;
            intercepts.push(b0);
            betas.push(b);
            rss += r;
            dof += w.len() as f64 - 2.0;
        }
        Ok(betas)
    };
    let beta_a = fit(&data.windows_a, s_a, psi[0])?;
    let beta_b = fit(&data.windows_b, s_b, psi[1])?;
    let (mean_intercept, _) = mean_var(&intercepts);
    let residual_var = (rss / dof.max(1.0)).max(VAR_FLOOR);
    let (mean_beta_a, var_beta_a) = mean_var(&beta_a);
    let (mean_beta_b, var_beta_b) = mean_var(&beta_b);

    let sigma2_b = (s_b
        .iter()
        .zip(g.b_grid_means())
        .map(|(s, m)| (s[0] - m[0]).powi(2) + (s[1] - m[1]).powi(2))
        .sum::<f64>()
        / (2.0 * s_b.len() as f64))
        .max(VAR_FLOOR);

    let (delta, psi_cov) = regression_pairs(g, s_a, s_b, &beta_b)?;
    let (alpha0, alpha1) = ols_line(&psi_cov, &delta);
    let n = delta.len() as f64;
    let sigma2_a = (delta
        .iter()
        .zip(&psi_cov)
        .map(|(d, p)| (d - alpha0 - alpha1 * p).powi(2))
        .sum::<f64>()
        / (n - 2.0).max(1.0))
    .max(VAR_FLOOR);

    let state = HierState {
        beta0: mean_intercept,
        beta_a: beta_a.clone(),
        beta_b: beta_b.clone(),
        mu_beta_a: mean_beta_a,
        mu_beta_b: mean_beta_b,
        var_beta_a: var_beta_a.max(1.0),
        var_beta_b: var_beta_b.max(1.0),
        psi_a: psi[0],
        psi_b: psi[1],
        sigma2: residual_var,
        r_pix: 0.5,
        rho_pix: 2.5,
        s_a: s_a.to_vec(),
        s_b: s_b.to_vec(),
        alpha0,
        alpha1,
        gamma: alpha1,
        eta: true,
        sigma2_a,
        sigma2_b,
        r: 0.5,
        rho: 2.0 * g.spacing(),
    };
    state.validate()?;
    Ok((
        state,
        OlsSummary {
            beta_a,
            beta_b,
            mean_beta_a,
            var_beta_a: var_beta_a.max(1.0),
            mean_beta_b,
            var_beta_b: var_beta_b.max(1.0),
            mean_intercept,
            residual_var,
        },
    ))
}
