//! Pixel-level likelihood over disjoint windows.
//!
//! Every window of one site type shares the same pixel layout, so the
//! correlation matrix `(1 - r) I + r exp(-d / rho)` is factored once per type.
//! The common variance scale is kept outside the factor, which lets the
//! variance update run without refactoring. Each window caches its whitened
//! intensities and whitened kernel column, so a location proposal costs a
//! single triangular solve.

use crate::covariance::{dot, exp_cov_matrix, factorize, CovFactor, ExpCovParams};
use crate::error::{Error, Result};
use crate::imaging::Window;
use crate::kernel::kernel_vector_into;
use crate::lattice::SiteType;

use super::{HierData, HierState};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cached factor and whitened vectors for the windows of one site type.
#[derive(Clone, Debug)]
pub(crate) struct TypeCache {
    pub factor: CovFactor,
    pub ones_w: Vec<f64>,
    pub ones_sq: f64,
    pub y_w: Vec<Vec<f64>>,
    pub x_w: Vec<Vec<f64>>,
    /// Squared norm of the whitened residual per window.
    pub quad: Vec<f64>,
    /// Location and bandwidth each `x_w` entry was built from.
    pub x_site: Vec<[f64; 2]>,
    pub x_psi: f64,
    scratch: Vec<f64>,
}

fn relative_coords(w: &Window) -> Vec<[f64; 2]> {
    let o = w.coords[0];
    w.coords.iter().map(|c| [c[0] - o[0], c[1] - o[1]]).collect()
}

/// Correlation factor for a window layout.
pub(crate) fn correlation_factor(w: &Window, r_pix: f64, rho_pix: f64) -> Result<CovFactor> {
    let params = ExpCovParams::new(1.0, r_pix, rho_pix)?;
    factorize(&exp_cov_matrix(&relative_coords(w), &params)?)
}

impl TypeCache {
    fn build(windows: &[Window], factor: CovFactor, sites: &[[f64; 2]], psi: f64, beta0: f64, betas: &[f64]) -> Result<Self> {
        let n = factor.dim();
        let ones_w = factor.whiten(&vec![1.0; n])?;
        let ones_sq = dot(&ones_w, &ones_w);
        let mut y_w = Vec::with_capacity(windows.len());
        let mut x_w = Vec::with_capacity(windows.len());
        let mut scratch = vec![0.0; n];
        for (w, s) in windows.iter().zip(sites) {
            y_w.push(factor.whiten(&w.intensities)?);
            kernel_vector_into(&w.coords, *s, psi, &mut scratch);
            factor.solve_lower_in_place(&mut scratch);
            x_w.push(scratch.clone());
        }
        let mut cache = TypeCache {
            factor,
            ones_w,
            ones_sq,
            y_w,
            x_w,
            quad: vec![0.0; windows.len()],
            x_site: sites.to_vec(),
            x_psi: psi,
            scratch,
        };
        cache.refresh_quads(beta0, betas);
        Ok(cache)
    }

    pub fn residual_quad(&self, j: usize, beta0: f64, beta: f64, x_w: &[f64]) -> f64 {
        let y = &self.y_w[j];
        let mut s = 0.0;
        for k in 0..y.len() {
            let e = y[k] - beta0 * self.ones_w[k] - beta * x_w[k];
            s += e * e;
        }
        s
    }

    pub fn refresh_quads(&mut self, beta0: f64, betas: &[f64]) {
        for j in 0..self.quad.len() {
            self.quad[j] = self.residual_quad(j, beta0, betas[j], &self.x_w[j]);
        }
    }

    /// Whitened kernel column for window `j` at a trial location and bandwidth.
    pub fn trial_x(&mut self, w: &Window, s: [f64; 2], psi: f64) -> Vec<f64> {
        kernel_vector_into(&w.coords, s, psi, &mut self.scratch);
        self.factor.solve_lower_in_place(&mut self.scratch);
        self.scratch.clone()
    }

    pub fn n_pixels(&self) -> usize {
        self.factor.dim()
    }

    pub fn quad_sum(&self) -> f64 {
        self.quad.iter().sum()
    }
}

/// Cached data-layer quantities for both site types.
#[derive(Clone, Debug)]
pub struct DataLayer {
    pub(crate) a: TypeCache,
    pub(crate) b: TypeCache,
    r_pix: f64,
    rho_pix: f64,
}

impl DataLayer {
    pub fn new(data: &HierData, state: &HierState) -> Result<Self> {
        let fa = correlation_factor(&data.windows_a[0], state.r_pix, state.rho_pix)?;
        let fb = correlation_factor(&data.windows_b[0], state.r_pix, state.rho_pix)?;
        Self::with_factors(data, state, fa, fb)
    }

    pub(crate) fn with_factors(data: &HierData, state: &HierState, fa: CovFactor, fb: CovFactor) -> Result<Self> {
        Ok(DataLayer {
            a: TypeCache::build(&data.windows_a, fa, &state.s_a, state.psi_a, state.beta0, &state.beta_a)?,
            b: TypeCache::build(&data.windows_b, fb, &state.s_b, state.psi_b, state.beta0, &state.beta_b)?,
            r_pix: state.r_pix,
            rho_pix: state.rho_pix,
        })
    }

    pub(crate) fn cache(&self, t: SiteType) -> &TypeCache {
        match t {
            SiteType::A => &self.a,
            SiteType::B => &self.b,
        }
    }

    pub(crate) fn cache_mut(&mut self, t: SiteType) -> &mut TypeCache {
        match t {
            SiteType::A => &mut self.a,
            SiteType::B => &mut self.b,
        }
    }

    pub fn n_pixels_total(&self) -> usize {
        self.a.n_pixels() * self.a.quad.len() + self.b.n_pixels() * self.b.quad.len()
    }

    /// Sum of the per-window log-determinants of the correlation matrices.
    pub(crate) fn log_det_total(&self) -> f64 {
        self.a.factor.log_det() * self.a.quad.len() as f64 + self.b.factor.log_det() * self.b.quad.len() as f64
    }

    pub(crate) fn quad_total(&self) -> f64 {
        self.a.quad_sum() + self.b.quad_sum()
    }

    /// Log-likelihood from the cached quadratic forms.
    pub(crate) fn loglik(&self, sigma2: f64) -> f64 {
        let n = self.n_pixels_total() as f64;
        -0.5 * (n * (LN_2PI + sigma2.ln()) + self.log_det_total() + self.quad_total() / sigma2)
    }

    fn check_current(&self, state: &HierState) -> Result<()> {
        if self.r_pix != state.r_pix || self.rho_pix != state.rho_pix {
            return Err(Error::StaleFactor(format!(
                "window factors built for r_pix={}, rho_pix={} but state has r_pix={}, rho_pix={}",
                self.r_pix, self.rho_pix, state.r_pix, state.rho_pix
            )));
        }
        for (t, cache, sites, psi) in [
            (SiteType::A, &self.a, &state.s_a, state.psi_a),
            (SiteType::B, &self.b, &state.s_b, state.psi_b),
        ] {
            if cache.x_psi != psi || cache.x_site.as_slice() != sites.as_slice() {
                return Err(Error::StaleFactor(format!(
                    "{t}-site kernel columns do not match the state's locations or bandwidth"
                )));
            }
        }
        Ok(())
    }
}

/// Block log-likelihood: the sum over windows of the Gaussian log-density of
/// the window intensities. Cross-window covariance is zero by construction.
pub fn block_loglik(state: &HierState, layer: &DataLayer) -> Result<f64> {
    layer.check_current(state)?;
    let mut quad = 0.0;
    for (cache, betas) in [(&layer.a, &state.beta_a), (&layer.b, &state.beta_b)] {
        for j in 0..cache.quad.len() {
            quad += cache.residual_quad(j, state.beta0, betas[j], &cache.x_w[j]);
        }
    }
    let n = layer.n_pixels_total() as f64;
    Ok(-0.5 * (n * (LN_2PI + state.sigma2.ln()) + layer.log_det_total() + quad / state.sigma2))
}

/// Parameters shared by every window in [`windows_loglik`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowNoise {
    pub beta0: f64,
    pub psi: f64,
    pub sigma2: f64,
    pub r_pix: f64,
    pub rho_pix: f64,
}

/// Block log-likelihood of windows sharing one pixel layout, each holding
/// one column at `sites[j]` with intensity `betas[j]`.
pub fn windows_loglik(windows: &[Window], sites: &[[f64; 2]], betas: &[f64], p: &WindowNoise) -> Result<f64> {
    if windows.is_empty() || sites.len() != windows.len() || betas.len() != windows.len() {
        return Err(Error::Structure("windows, sites and intensities must match and be non-empty".into()));
    }
    if !super::same_layout(windows) {
        return Err(Error::Structure("windows must share one pixel layout".into()));
    }
    let factor = correlation_factor(&windows[0], p.r_pix, p.rho_pix)?;
    let cache = TypeCache::build(windows, factor, sites, p.psi, p.beta0, betas)?;
    let n = (cache.n_pixels() * windows.len()) as f64;
    let log_det = cache.factor.log_det() * windows.len() as f64;
    Ok(-0.5 * (n * (LN_2PI + p.sigma2.ln()) + log_det + cache.quad_sum() / p.sigma2))
}
