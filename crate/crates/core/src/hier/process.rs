//! Spatial regression of A-site displacements on the weighted-minus-unweighted
//! neighbor-center difference, with x and y treated as independent fields
//! sharing one exponential correlation over the A-grid.
//!
//! The correlation precision is held explicitly so that moving one site (or
//! one B-site, which touches up to four A-sites) updates the quadratic form
//! in `O(N * k)` instead of a fresh solve.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::{dot, exp_cov_from_distances, factorize, logistic, logit, DenseMatrix, ExpCovParams};
use crate::error::Result;
use crate::mcmc::{accept, InvGammaParams, NormalParams};

use super::{InvGammaPrior, LogNormalPrior, NormalPrior};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// New displacement and covariate for one A-site.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LocalChange {
    pub site: usize,
    pub delta: [f64; 2],
    pub psi: [f64; 2],
}

#[derive(Clone, Debug)]
pub(crate) struct ProcessCore {
    n: usize,
    dist: DenseMatrix,
    pub r: f64,
    pub rho: f64,
    log_det: f64,
    precision: DenseMatrix,
    p_one: Vec<f64>,
    one_p_one: f64,
    pub delta: [Vec<f64>; 2],
    pub psi: [Vec<f64>; 2],
    alpha0: f64,
    alpha1: f64,
    resid: [Vec<f64>; 2],
    p_resid: [Vec<f64>; 2],
    quad: f64,
}

fn corr_precision(dist: &DenseMatrix, r: f64, rho: f64) -> Result<(DenseMatrix, f64)> {
    let f = factorize(&exp_cov_from_distances(dist, &ExpCovParams::new(1.0, r, rho)?)?)?;
    Ok((f.precision(), f.log_det()))
}

impl ProcessCore {
    pub fn new(dist: DenseMatrix, r: f64, rho: f64, delta: [Vec<f64>; 2], psi: [Vec<f64>; 2], alpha0: f64, alpha1: f64) -> Result<Self> {
        let n = dist.dim();
        let (precision, log_det) = corr_precision(&dist, r, rho)?;
        let mut core = ProcessCore {
            n,
            dist,
            r,
            rho,
            log_det,
            precision,
            p_one: Vec::new(),
            one_p_one: 0.0,
            delta,
            psi,
            alpha0,
            alpha1,
            resid: [vec![0.0; n], vec![0.0; n]],
            p_resid: [vec![0.0; n], vec![0.0; n]],
            quad: 0.0,
        };
        core.refresh_precision_terms();
        core.set_alphas(alpha0, alpha1);
        Ok(core)
    }

    fn refresh_precision_terms(&mut self) {
        self.p_one = self.precision.mat_vec(&vec![1.0; self.n]);
        self.one_p_one = self.p_one.iter().sum();
    }

    pub fn quad(&self) -> f64 {
        self.quad
    }

    /// Recomputes residuals for new regression coefficients.
    pub fn set_alphas(&mut self, alpha0: f64, alpha1: f64) {
        self.alpha0 = alpha0;
        self.alpha1 = alpha1;
        let mut quad = 0.0;
        for c in 0..2 {
            for j in 0..self.n {
                self.resid[c][j] = self.delta[c][j] - alpha0 - alpha1 * self.psi[c][j];
            }
            self.p_resid[c] = self.precision.mat_vec(&self.resid[c]);
            quad += dot(&self.resid[c], &self.p_resid[c]);
        }
        self.quad = quad;
    }

    /// Log-density of both coordinate fields.
    pub fn loglik(&self, sigma2_a: f64) -> f64 {
        let n = self.n as f64;
        -0.5 * (2.0 * n * (LN_2PI + sigma2_a.ln()) + 2.0 * self.log_det + self.quad / sigma2_a)
    }

    pub fn alpha0_conditional(&self, prior: &NormalPrior, alpha1: f64, sigma2_a: f64) -> NormalParams {
        let mut m = 0.0;
        for c in 0..2 {
            for j in 0..self.n {
                m += (self.delta[c][j] - alpha1 * self.psi[c][j]) * self.p_one[j];
            }
        }
        NormalParams::from_canonical(
            m / sigma2_a + prior.mean / prior.var,
            2.0 * self.one_p_one / sigma2_a + 1.0 / prior.var,
        )
    }

    /// `(A, B)` of the slope likelihood kernel `exp(-A a^2 / 2 + B a)`.
    pub fn slope_terms(&self, alpha0: f64, sigma2_a: f64) -> (f64, f64) {
        let (mut a, mut b) = (0.0, 0.0);
        for c in 0..2 {
            let p_psi = self.precision.mat_vec(&self.psi[c]);
            a += dot(&self.psi[c], &p_psi);
            for j in 0..self.n {
                b += p_psi[j] * (self.delta[c][j] - alpha0);
            }
        }
        (a / sigma2_a, b / sigma2_a)
    }

    pub fn alpha1_conditional(&self, prior: &NormalPrior, alpha0: f64, sigma2_a: f64) -> NormalParams {
        let (a, b) = self.slope_terms(alpha0, sigma2_a);
        NormalParams::from_canonical(b + prior.mean / prior.var, a + 1.0 / prior.var)
    }

    pub fn sigma2_a_conditional(&self, prior: &InvGammaPrior) -> InvGammaParams {
        InvGammaParams {
            shape: prior.shape + self.n as f64,
            rate: prior.rate + 0.5 * self.quad,
        }
    }

    /// Log-determinant and quadratic form under trial correlation parameters.
    pub fn trial_corr(&self, r: f64, rho: f64) -> Result<(f64, f64)> {
        let f = factorize(&exp_cov_from_distances(&self.dist, &ExpCovParams::new(1.0, r, rho)?)?)?;
        let q = f.quad_form(&self.resid[0])? + f.quad_form(&self.resid[1])?;
        Ok((f.log_det(), q))
    }

    /// Change in log-density when moving from the current correlation to a
    /// trial one with log-determinant `log_det` and quadratic form `quad`.
    pub fn corr_log_ratio(&self, log_det: f64, quad: f64, sigma2_a: f64) -> f64 {
        -(log_det - self.log_det) - 0.5 * (quad - self.quad) / sigma2_a
    }

    pub fn set_corr(&mut self, r: f64, rho: f64) -> Result<()> {
        let (precision, log_det) = corr_precision(&self.dist, r, rho)?;
        self.precision = precision;
        self.log_det = log_det;
        self.r = r;
        self.rho = rho;
        self.refresh_precision_terms();
        self.set_alphas(self.alpha0, self.alpha1);
        Ok(())
    }

    fn residual_change(&self, ch: &LocalChange) -> [f64; 2] {
        let mut d = [0.0; 2];
        for (c, dc) in d.iter_mut().enumerate() {
            let new = ch.delta[c] - self.alpha0 - self.alpha1 * ch.psi[c];
            *dc = new - self.resid[c][ch.site];
        }
        d
    }

    /// Change in the quadratic form if the given sites took new values.
    pub fn local_quad_change(&self, changes: &[LocalChange]) -> f64 {
        let ds: Vec<[f64; 2]> = changes.iter().map(|ch| self.residual_change(ch)).collect();
        let mut dq = 0.0;
        for c in 0..2 {
            for (a, ca) in changes.iter().enumerate() {
                let da = ds[a][c];
                if da == 0.0 {
                    continue;
                }
                dq += 2.0 * da * self.p_resid[c][ca.site];
                for (b, cb) in changes.iter().enumerate() {
                    dq += da * self.precision.get(ca.site, cb.site) * ds[b][c];
                }
            }
        }
        dq
    }

    pub fn apply_local(&mut self, changes: &[LocalChange], dq: f64) {
        for ch in changes {
            let d = self.residual_change(ch);
            let j = ch.site;
            for c in 0..2 {
                self.delta[c][j] = ch.delta[c];
                self.psi[c][j] = ch.psi[c];
                self.resid[c][j] += d[c];
                if d[c] != 0.0 {
                    let col = self.precision.row(j);
                    for (p, &q) in self.p_resid[c].iter_mut().zip(col) {
                        *p += q * d[c];
                    }
                }
            }
        }
        self.quad += dq;
    }
}

/// Random-walk step on `logit r`; returns whether the move was accepted.
pub(crate) fn update_r_rw<R: Rng + ?Sized>(core: &mut ProcessCore, step: f64, sigma2_a: f64, rng: &mut R) -> bool {
    let r = core.r;
    let z: f64 = rng.sample(StandardNormal);
    let prop = logistic(logit(r) + step * z);
    if prop == r {
        return true;
    }
    if !(prop > 0.0 && prop < 1.0) {
        return false;
    }
    let Ok((ld, q)) = core.trial_corr(prop, core.rho) else {
        return false;
    };
    let jac = (prop * (1.0 - prop)).ln() - (r * (1.0 - r)).ln();
    accept(core.corr_log_ratio(ld, q, sigma2_a) + jac, rng) && core.set_corr(prop, core.rho).is_ok()
}

/// Random-walk step on `log rho` under a log-normal prior.
pub(crate) fn update_rho_rw<R: Rng + ?Sized>(
    core: &mut ProcessCore,
    step: f64,
    sigma2_a: f64,
    prior: &LogNormalPrior,
    rng: &mut R,
) -> bool {
    let rho = core.rho;
    let z: f64 = rng.sample(StandardNormal);
    let lp = rho.ln() + step * z;
    let prop = lp.exp();
    if prop == rho {
        return true;
    }
    if !(prop > 0.0 && prop.is_finite()) {
        return false;
    }
    let Ok((ld, q)) = core.trial_corr(core.r, prop) else {
        return false;
    };
    let ratio = core.corr_log_ratio(ld, q, sigma2_a) + prior.ln_density_log_scale(lp) - prior.ln_density_log_scale(rho.ln());
    accept(ratio, rng) && core.set_corr(core.r, prop).is_ok()
}
