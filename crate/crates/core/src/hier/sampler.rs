use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::{distance_matrix, dot, logistic, logit};
use crate::error::{Error, Result};
use crate::lattice::{unweighted_center, weighted_center_unchecked, SiteType};
use crate::mcmc::{accept, Chain, InvGammaParams, NormalParams, RunningMoments, RwStep, Schedule};
use crate::rng::substream;
use crate::simulate::regression_pairs;

use super::data::{correlation_factor, DataLayer};
use super::process::{update_r_rw, update_rho_rw, LocalChange, ProcessCore};
use super::{HierData, HierOptions, HierPriors, HierState};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug)]
struct Steps {
    loc_a: RwStep,
    loc_b: RwStep,
    psi_a: RwStep,
    psi_b: RwStep,
    r_pix: RwStep,
    rho_pix: RwStep,
    r: RwStep,
    rho: RwStep,
}

impl Steps {
    fn all_mut(&mut self) -> [&mut RwStep; 8] {
        [
            &mut self.loc_a,
            &mut self.loc_b,
            &mut self.psi_a,
            &mut self.psi_b,
            &mut self.r_pix,
            &mut self.rho_pix,
            &mut self.r,
            &mut self.rho,
        ]
    }
}

/// Axis-aligned extent of a window's pixel centers.
type Bounds = [f64; 4];

fn window_bounds(coords: &[[f64; 2]]) -> Bounds {
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for c in coords {
        b[0] = b[0].min(c[0]);
        b[1] = b[1].max(c[0]);
        b[2] = b[2].min(c[1]);
        b[3] = b[3].max(c[1]);
    }
    b
}

fn inside(b: &Bounds, s: [f64; 2]) -> bool {
    s[0] >= b[0] && s[0] <= b[1] && s[1] >= b[2] && s[1] <= b[3]
}

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

impl NormalParams {
    /// Log-density up to an additive constant.
    fn ln_kernel(&self, x: f64) -> f64 {
        -0.5 * (x - self.mean).powi(2) / self.var
    }
}

/// Gibbs/Metropolis sampler holding the state with its cached likelihood terms.
#[derive(Clone, Debug)]
pub struct HierSampler<'a> {
    data: &'a HierData,
    priors: HierPriors,
    opts: HierOptions,
    state: HierState,
    pix: DataLayer,
    proc: ProcessCore,
    bounds_a: Vec<Bounds>,
    bounds_b: Vec<Bounds>,
    steps: Steps,
    beta_b_accepted: usize,
    beta_b_proposed: usize,
    frozen: bool,
}

impl<'a> HierSampler<'a> {
    pub fn new(data: &'a HierData, priors: HierPriors, mut state: HierState, opts: HierOptions) -> Result<Self> {
        priors.validate()?;
        state.validate()?;
        if state.s_a.len() != data.windows_a.len() || state.s_b.len() != data.windows_b.len() {
            return Err(Error::Structure("state site counts do not match the windows".into()));
        }
        if state.beta_a.len() != state.s_a.len() || state.beta_b.len() != state.s_b.len() {
            return Err(Error::Structure("state intensity counts do not match the sites".into()));
        }
        if opts.ssvs.is_some() {
            state.alpha1 = if state.eta { state.gamma } else { 0.0 };
        }
        let pix = DataLayer::new(data, &state)?;
        let proc = Self::build_process(data, &state)?;
        let s = opts.steps;
        let steps = Steps {
            loc_a: RwStep::new(s.location_a),
            loc_b: RwStep::new(s.location_b),
            psi_a: RwStep::new(s.log_psi),
            psi_b: RwStep::new(s.log_psi),
            r_pix: RwStep::new(s.logit_r_pix),
            rho_pix: RwStep::new(s.log_rho_pix),
            r: RwStep::new(s.logit_r),
            rho: RwStep::new(s.log_rho),
        };
        let mut sampler = HierSampler {
            data,
            priors,
            state,
            pix,
            proc,
            bounds_a: data.windows_a.iter().map(|w| window_bounds(&w.coords)).collect(),
            bounds_b: data.windows_b.iter().map(|w| window_bounds(&w.coords)).collect(),
            steps,
            beta_b_accepted: 0,
            beta_b_proposed: 0,
            frozen: false,
            opts,
        };
        if !sampler.opts.adapt {
            sampler.freeze();
        }
        Ok(sampler)
    }

    fn build_process(data: &HierData, state: &HierState) -> Result<ProcessCore> {
        let g = &data.geometry;
        let (delta, psi) = regression_pairs(g, &state.s_a, &state.s_b, &state.beta_b)?;
        let n = g.n_a();
        let split = |v: Vec<f64>| [v[..n].to_vec(), v[n..].to_vec()];
        ProcessCore::new(
            distance_matrix(&g.a_grid_means()),
            state.r,
            state.rho,
            split(delta),
            split(psi),
            state.alpha0,
            state.alpha1,
        )
    }

    pub fn state(&self) -> &HierState {
        &self.state
    }

    pub fn priors(&self) -> &HierPriors {
        &self.priors
    }

    /// Replaces the state and rebuilds every cache.
    pub fn set_state(&mut self, mut state: HierState) -> Result<()> {
        state.validate()?;
        if self.opts.ssvs.is_some() {
            state.alpha1 = if state.eta { state.gamma } else { 0.0 };
        }
        self.pix = DataLayer::new(self.data, &state)?;
        self.proc = Self::build_process(self.data, &state)?;
        self.state = state;
        Ok(())
    }

    /// Stops step-size adaptation; acceptance rates count from here on.
    pub fn freeze(&mut self) {
        self.frozen = true;
        for s in self.steps.all_mut() {
            s.freeze();
        }
    }

    pub fn data_layer(&self) -> &DataLayer {
        &self.pix
    }

    /// Data log-likelihood from the caches.
    pub fn data_loglik(&self) -> f64 {
        self.pix.loglik(self.state.sigma2)
    }

    /// Process-layer log-density of both coordinate fields.
    pub fn process_loglik(&self) -> f64 {
        self.proc.loglik(self.state.sigma2_a)
    }

    // ---- conditionals ----

    pub fn beta0_conditional(&self) -> NormalParams {
        let st = &self.state;
        let p = &self.priors.beta0;
        let mut v = 0.0;
        let mut m = 0.0;
        for (cache, betas) in [(&self.pix.a, &st.beta_a), (&self.pix.b, &st.beta_b)] {
            v += cache.ones_sq * betas.len() as f64;
            for (j, &b) in betas.iter().enumerate() {
                let (y, x) = (&cache.y_w[j], &cache.x_w[j]);
                for k in 0..y.len() {
                    m += (y[k] - b * x[k]) * cache.ones_w[k];
                }
            }
        }
        NormalParams::from_canonical(m / st.sigma2 + p.mean / p.var, v / st.sigma2 + 1.0 / p.var)
    }

    /// Data-times-prior conditional of one column intensity. For A-sites this
    /// is the full conditional; for B-sites it is the independence proposal.
    pub fn intensity_conditional(&self, t: SiteType, j: usize) -> NormalParams {
        let st = &self.state;
        let cache = self.pix.cache(t);
        let (mu, var) = match t {
            SiteType::A => (st.mu_beta_a, st.var_beta_a),
            SiteType::B => (st.mu_beta_b, st.var_beta_b),
        };
        let x = &cache.x_w[j];
        let y = &cache.y_w[j];
        let mut m = 0.0;
        for k in 0..y.len() {
            m += x[k] * (y[k] - st.beta0 * cache.ones_w[k]);
        }
        NormalParams::from_canonical(m / st.sigma2 + mu / var, dot(x, x) / st.sigma2 + 1.0 / var)
    }

    pub fn sigma2_conditional(&self) -> InvGammaParams {
        InvGammaParams {
            shape: self.priors.sigma2.shape + 0.5 * self.pix.n_pixels_total() as f64,
            rate: self.priors.sigma2.rate + 0.5 * self.pix.quad_total(),
        }
    }

    pub fn alpha0_conditional(&self) -> NormalParams {
        self.proc
            .alpha0_conditional(&self.priors.alpha0, self.state.alpha1, self.state.sigma2_a)
    }

    pub fn alpha1_conditional(&self) -> NormalParams {
        self.proc
            .alpha1_conditional(&self.priors.alpha1, self.state.alpha0, self.state.sigma2_a)
    }

    pub fn sigma2_a_conditional(&self) -> InvGammaParams {
        self.proc.sigma2_a_conditional(&self.priors.sigma2_a)
    }

    pub fn mu_beta_conditional(&self, t: SiteType) -> NormalParams {
        let st = &self.state;
        let (prior, betas, var) = match t {
            SiteType::A => (&self.priors.mu_beta_a, &st.beta_a, st.var_beta_a),
            SiteType::B => (&self.priors.mu_beta_b, &st.beta_b, st.var_beta_b),
        };
        let sum: f64 = betas.iter().sum();
        NormalParams::from_canonical(
            prior.mean / prior.var + sum / var,
            1.0 / prior.var + betas.len() as f64 / var,
        )
    }

    pub fn var_beta_conditional(&self, t: SiteType) -> InvGammaParams {
        let st = &self.state;
        let (prior, betas, mu) = match t {
            SiteType::A => (&self.priors.var_beta_a, &st.beta_a, st.mu_beta_a),
            SiteType::B => (&self.priors.var_beta_b, &st.beta_b, st.mu_beta_b),
        };
        InvGammaParams {
            shape: prior.shape + 0.5 * betas.len() as f64,
            rate: prior.rate + 0.5 * betas.iter().map(|b| (b - mu).powi(2)).sum::<f64>(),
        }
    }

    pub fn sigma2_b_conditional(&self) -> InvGammaParams {
        let ss: f64 = self
            .state
            .s_b
            .iter()
            .zip(self.data.geometry.b_grid_means())
            .map(|(s, m)| (s[0] - m[0]).powi(2) + (s[1] - m[1]).powi(2))
            .sum();
        InvGammaParams {
            shape: self.priors.sigma2_b.shape + self.state.s_b.len() as f64,
            rate: self.priors.sigma2_b.rate + 0.5 * ss,
        }
    }

    // ---- data-layer scalars ----

    pub fn update_beta0<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.state.beta0 = self.beta0_conditional().sample(rng);
        let st = &self.state;
        self.pix.a.refresh_quads(st.beta0, &st.beta_a);
        self.pix.b.refresh_quads(st.beta0, &st.beta_b);
    }

    pub fn update_sigma2<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.state.sigma2 = self.sigma2_conditional().sample(rng);
    }

    pub fn update_beta_a<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for j in 0..self.state.beta_a.len() {
            let b = self.intensity_conditional(SiteType::A, j).sample(rng);
            self.state.beta_a[j] = b;
            let c = &mut self.pix.a;
            c.quad[j] = c.residual_quad(j, self.state.beta0, b, &c.x_w[j]);
        }
    }

    /// Process-layer changes at the A-sites around B-site `k` if it took
    /// location `s` and intensity `beta`. `None` if the weighted center is
    /// undefined.
    fn b_site_changes(&self, k: usize, s: [f64; 2], beta: f64) -> Option<Vec<LocalChange>> {
        let g = &self.data.geometry;
        let st = &self.state;
        let mut out = Vec::with_capacity(4);
        for &j in g.a_sites_of_b(k) {
            let nb = g.neighbors(j);
            let mut locs = [[0.0; 2]; 4];
            let mut bs = [0.0; 4];
            for (i, &b) in nb.iter().enumerate() {
                if b == k {
                    locs[i] = s;
                    bs[i] = beta;
                } else {
                    locs[i] = st.s_b[b];
                    bs[i] = st.beta_b[b];
                }
            }
            let total: f64 = bs.iter().sum();
            if !(total > 0.0) {
                return None;
            }
            let u = unweighted_center(&locs);
            let w = weighted_center_unchecked(&locs, &bs, total);
            out.push(LocalChange {
                site: j,
                delta: [st.s_a[j][0] - u[0], st.s_a[j][1] - u[1]],
                psi: [w[0] - u[0], w[1] - u[1]],
            });
        }
        Some(out)
    }

    /// Independence Metropolis-Hastings for each B-site intensity, proposing
    /// from the data-times-prior conditional.
    pub fn update_beta_b<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for k in 0..self.state.beta_b.len() {
            let q = self.intensity_conditional(SiteType::B, k);
            let old = self.state.beta_b[k];
            let prop = q.sample(rng);
            let Some(changes) = self.b_site_changes(k, self.state.s_b[k], prop) else {
                self.record_beta_b(false);
                continue;
            };
            let dq = self.proc.local_quad_change(&changes);
            let mut log_ratio = -0.5 * dq / self.state.sigma2_a;
            if !self.opts.hastings_correction {
                log_ratio += q.ln_kernel(prop) - q.ln_kernel(old);
            }
            let ok = accept(log_ratio, rng);
            if ok {
                self.state.beta_b[k] = prop;
                let c = &mut self.pix.b;
                c.quad[k] = c.residual_quad(k, self.state.beta0, prop, &c.x_w[k]);
                self.proc.apply_local(&changes, dq);
            }
            self.record_beta_b(ok);
        }
    }

    fn record_beta_b(&mut self, ok: bool) {
        if self.frozen {
            self.beta_b_proposed += 1;
            self.beta_b_accepted += ok as usize;
        }
    }

    // ---- locations ----

    pub fn update_locations_a<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for j in 0..self.state.s_a.len() {
            let step = self.steps.loc_a.scale;
            let s = self.state.s_a[j];
            let prop = [s[0] + step * std_normal(rng), s[1] + step * std_normal(rng)];
            if !inside(&self.bounds_a[j], prop) {
                self.steps.loc_a.record(false);
                continue;
            }
            let x_new = self.pix.a.trial_x(&self.data.windows_a[j], prop, self.state.psi_a);
            let q_new = self.pix.a.residual_quad(j, self.state.beta0, self.state.beta_a[j], &x_new);
            let d_data = -0.5 * (q_new - self.pix.a.quad[j]) / self.state.sigma2;
            let ch = [LocalChange {
                site: j,
                delta: [
                    self.proc.delta[0][j] + prop[0] - s[0],
                    self.proc.delta[1][j] + prop[1] - s[1],
                ],
                psi: [self.proc.psi[0][j], self.proc.psi[1][j]],
            }];
            let dq = self.proc.local_quad_change(&ch);
            let ok = accept(d_data - 0.5 * dq / self.state.sigma2_a, rng);
            if ok {
                self.state.s_a[j] = prop;
                let c = &mut self.pix.a;
                c.x_w[j] = x_new;
                c.x_site[j] = prop;
                c.quad[j] = q_new;
                self.proc.apply_local(&ch, dq);
            }
            self.steps.loc_a.record(ok);
        }
    }

    pub fn update_locations_b<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let means = self.data.geometry.b_grid_means();
        for k in 0..self.state.s_b.len() {
            let step = self.steps.loc_b.scale;
            let s = self.state.s_b[k];
            let prop = [s[0] + step * std_normal(rng), s[1] + step * std_normal(rng)];
            if !inside(&self.bounds_b[k], prop) {
                self.steps.loc_b.record(false);
                continue;
            }
            let x_new = self.pix.b.trial_x(&self.data.windows_b[k], prop, self.state.psi_b);
            let q_new = self.pix.b.residual_quad(k, self.state.beta0, self.state.beta_b[k], &x_new);
            let d_data = -0.5 * (q_new - self.pix.b.quad[k]) / self.state.sigma2;
            let m = means[k];
            let d2 = |p: [f64; 2]| (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2);
            let d_prior = -0.5 * (d2(prop) - d2(s)) / self.state.sigma2_b;
            let Some(changes) = self.b_site_changes(k, prop, self.state.beta_b[k]) else {
                self.steps.loc_b.record(false);
                continue;
            };
            let dq = self.proc.local_quad_change(&changes);
            let ok = accept(d_data + d_prior - 0.5 * dq / self.state.sigma2_a, rng);
            if ok {
                self.state.s_b[k] = prop;
                let c = &mut self.pix.b;
                c.x_w[k] = x_new;
                c.x_site[k] = prop;
                c.quad[k] = q_new;
                self.proc.apply_local(&changes, dq);
            }
            self.steps.loc_b.record(ok);
        }
    }

    // ---- process layer ----

    pub fn update_alpha0<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.state.alpha0 = self.alpha0_conditional().sample(rng);
        self.proc.set_alphas(self.state.alpha0, self.state.alpha1);
    }

    pub fn update_alpha1<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.state.alpha1 = self.alpha1_conditional().sample(rng);
        self.state.gamma = self.state.alpha1;
        self.state.eta = true;
        self.proc.set_alphas(self.state.alpha0, self.state.alpha1);
    }

    pub fn update_sigma2_a<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.state.sigma2_a = self.sigma2_a_conditional().sample(rng);
    }

    pub fn update_r<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let ok = update_r_rw(&mut self.proc, self.steps.r.scale, self.state.sigma2_a, rng);
        self.state.r = self.proc.r;
        self.steps.r.record(ok);
    }

    pub fn update_rho<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let ok = update_rho_rw(&mut self.proc, self.steps.rho.scale, self.state.sigma2_a, &self.priors.rho, rng);
        self.state.rho = self.proc.rho;
        self.steps.rho.record(ok);
    }

    // ---- hyperparameters ----

    pub fn update_hyper<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.state.mu_beta_a = self.mu_beta_conditional(SiteType::A).sample(rng);
        self.state.mu_beta_b = self.mu_beta_conditional(SiteType::B).sample(rng);
        self.state.var_beta_a = self.var_beta_conditional(SiteType::A).sample(rng);
        self.state.var_beta_b = self.var_beta_conditional(SiteType::B).sample(rng);
        self.state.sigma2_b = self.sigma2_b_conditional().sample(rng);
    }

    // ---- bandwidths and pixel correlation ----

    pub fn update_psi<R: Rng + ?Sized>(&mut self, t: SiteType, rng: &mut R) {
        let (psi, windows, sites, betas) = match t {
            SiteType::A => (self.state.psi_a, &self.data.windows_a, &self.state.s_a, &self.state.beta_a),
            SiteType::B => (self.state.psi_b, &self.data.windows_b, &self.state.s_b, &self.state.beta_b),
        };
        let step = match t {
            SiteType::A => self.steps.psi_a.scale,
            SiteType::B => self.steps.psi_b.scale,
        };
        let lp = psi.ln() + step * std_normal(rng);
        let prop = lp.exp();
        let beta0 = self.state.beta0;
        let cache = self.pix.cache_mut(t);
        let mut xs = Vec::with_capacity(windows.len());
        let mut qs = Vec::with_capacity(windows.len());
        for (j, w) in windows.iter().enumerate() {
            let x = cache.trial_x(w, sites[j], prop);
            qs.push(cache.residual_quad(j, beta0, betas[j], &x));
            xs.push(x);
        }
        let d_data = -0.5 * (qs.iter().sum::<f64>() - cache.quad_sum()) / self.state.sigma2;
        let pr = &self.priors.psi;
        let ratio = d_data + pr.ln_density_log_scale(lp) - pr.ln_density_log_scale(psi.ln());
        let ok = prop.is_finite() && prop > 0.0 && accept(ratio, rng);
        if ok {
            cache.x_w = xs;
            cache.quad = qs;
            cache.x_psi = prop;
            match t {
                SiteType::A => self.state.psi_a = prop,
                SiteType::B => self.state.psi_b = prop,
            }
        }
        match t {
            SiteType::A => self.steps.psi_a.record(ok),
            SiteType::B => self.steps.psi_b.record(ok),
        }
    }

    /// Data log-likelihood under trial pixel-correlation parameters, with the
    /// trial factors so an accepted move can reuse them.
    fn trial_pixel_corr(
        &self,
        r_pix: f64,
        rho_pix: f64,
    ) -> Result<(f64, crate::covariance::CovFactor, crate::covariance::CovFactor)> {
        let st = &self.state;
        let fa = correlation_factor(&self.data.windows_a[0], r_pix, rho_pix)?;
        let fb = correlation_factor(&self.data.windows_b[0], r_pix, rho_pix)?;
        let mut quad = 0.0;
        let mut e = Vec::new();
        for (f, windows, sites, betas, psi) in [
            (&fa, &self.data.windows_a, &st.s_a, &st.beta_a, st.psi_a),
            (&fb, &self.data.windows_b, &st.s_b, &st.beta_b, st.psi_b),
        ] {
            e.resize(f.dim(), 0.0);
            for (j, w) in windows.iter().enumerate() {
                crate::kernel::kernel_vector_into(&w.coords, sites[j], psi, &mut e);
                for (ek, yk) in e.iter_mut().zip(&w.intensities) {
                    *ek = yk - st.beta0 - betas[j] * *ek;
                }
                f.solve_lower_in_place(&mut e);
                quad += dot(&e, &e);
            }
        }
        let n = self.pix.n_pixels_total() as f64;
        let ld = fa.log_det() * st.s_a.len() as f64 + fb.log_det() * st.s_b.len() as f64;
        let ll = -0.5 * (n * (LN_2PI + st.sigma2.ln()) + ld + quad / st.sigma2);
        Ok((ll, fa, fb))
    }

    fn pixel_corr_move<R: Rng + ?Sized>(&mut self, r_pix: f64, rho_pix: f64, log_prior_jac: f64, rng: &mut R) -> bool {
        if r_pix == self.state.r_pix && rho_pix == self.state.rho_pix {
            return true;
        }
        if !(r_pix > 0.0 && r_pix < 1.0 && rho_pix > 0.0 && rho_pix.is_finite()) {
            return false;
        }
        let Ok((ll, fa, fb)) = self.trial_pixel_corr(r_pix, rho_pix) else {
            return false;
        };
        if !accept(ll - self.data_loglik() + log_prior_jac, rng) {
            return false;
        }
        let mut next = self.state.clone();
        next.r_pix = r_pix;
        next.rho_pix = rho_pix;
        match DataLayer::with_factors(self.data, &next, fa, fb) {
            Ok(layer) => {
                self.pix = layer;
                self.state = next;
                true
            }
            Err(_) => false,
        }
    }

    pub fn update_r_pix<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let r = self.state.r_pix;
        let prop = logistic(logit(r) + self.steps.r_pix.scale * std_normal(rng));
        let jac = (prop * (1.0 - prop)).ln() - (r * (1.0 - r)).ln();
        let ok = self.pixel_corr_move(prop, self.state.rho_pix, jac, rng);
        self.steps.r_pix.record(ok);
    }

    pub fn update_rho_pix<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let rho = self.state.rho_pix;
        let lp = rho.ln() + self.steps.rho_pix.scale * std_normal(rng);
        let pr = &self.priors.rho_pix;
        let d_prior = pr.ln_density_log_scale(lp) - pr.ln_density_log_scale(rho.ln());
        let ok = self.pixel_corr_move(self.state.r_pix, lp.exp(), d_prior, rng);
        self.steps.rho_pix.record(ok);
    }

    // ---- spike and slab ----

    /// Posterior log-odds of inclusion with the slab integrated out.
    pub fn inclusion_log_odds(&self) -> f64 {
        let Some(p) = self.opts.ssvs else {
            return f64::INFINITY;
        };
        let (a, b) = self.proc.slope_terms(self.state.alpha0, self.state.sigma2_a);
        let prec = a + 1.0 / p.slab_var;
        (p.inclusion / (1.0 - p.inclusion)).ln() - 0.5 * (1.0 + p.slab_var * a).ln() + 0.5 * b * b / prec
    }

    /// Draws the inclusion indicator from its marginal conditional, then the
    /// slab value given the indicator.
    pub fn update_ssvs<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let Some(p) = self.opts.ssvs else {
            return;
        };
        let lo = self.inclusion_log_odds();
        let u: f64 = rng.random();
        let eta = u < logistic(lo);
        let gamma = if eta {
            let (a, b) = self.proc.slope_terms(self.state.alpha0, self.state.sigma2_a);
            NormalParams::from_canonical(b, a + 1.0 / p.slab_var).sample(rng)
        } else {
            p.slab_var.sqrt() * std_normal(rng)
        };
        self.state.eta = eta;
        self.state.gamma = gamma;
        self.state.alpha1 = if eta { gamma } else { 0.0 };
        self.proc.set_alphas(self.state.alpha0, self.state.alpha1);
    }

    /// One full sweep in the fixed order: background and noise variance,
    /// intensities, locations (A then B), process regression, process
    /// correlation, hyperparameters, bandwidths and pixel correlation, and the
    /// spike-and-slab indicator.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.update_beta0(rng);
        self.update_sigma2(rng);
        self.update_beta_a(rng);
        self.update_beta_b(rng);
        self.update_locations_a(rng);
        self.update_locations_b(rng);
        self.update_alpha0(rng);
        if self.opts.ssvs.is_none() {
            self.update_alpha1(rng);
        }
        self.update_sigma2_a(rng);
        self.update_r(rng);
        self.update_rho(rng);
        self.update_hyper(rng);
        self.update_psi(SiteType::A, rng);
        self.update_psi(SiteType::B, rng);
        self.update_r_pix(rng);
        self.update_rho_pix(rng);
        self.update_ssvs(rng);
        self.check_finite("sweep")
    }

    fn check_finite(&self, stage: &str) -> Result<()> {
        let ll = self.data_loglik() + self.process_loglik();
        if !ll.is_finite() {
            return Err(Error::NonFinite {
                stage: stage.to_string(),
                state: self.state.scalar_dump(),
            });
        }
        Ok(())
    }

    /// Post-burn-in acceptance rate per Metropolis block.
    pub fn acceptance_rates(&self) -> Vec<(String, f64)> {
        let s = &self.steps;
        let mut out = Vec::new();
        if self.beta_b_proposed > 0 {
            out.push((
                "beta_B".to_string(),
                self.beta_b_accepted as f64 / self.beta_b_proposed as f64,
            ));
        }
        for (name, step) in [
            ("location_A", &s.loc_a),
            ("location_B", &s.loc_b),
            ("psi_A", &s.psi_a),
            ("psi_B", &s.psi_b),
            ("r_pix", &s.r_pix),
            ("rho_pix", &s.rho_pix),
            ("r", &s.r),
            ("rho", &s.rho),
        ] {
            if let Some(rate) = step.acceptance_rate() {
                out.push((name.to_string(), rate));
            }
        }
        out
    }

    fn chain_names(&self) -> Vec<String> {
        let mut names: Vec<String> = [
            "beta0",
            "mu_beta_A",
            "mu_beta_B",
            "var_beta_A",
            "var_beta_B",
            "psi_A",
            "psi_B",
            "sigma2",
            "sigma",
            "r_pix",
            "rho_pix",
            "alpha0",
            "alpha1",
            "sigma2_A",
            "sigma_A",
            "sigma2_B",
            "sigma_B",
            "r",
            "rho",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        if self.opts.ssvs.is_some() {
            names.push("gamma".into());
            names.push("eta".into());
        }
        names
    }

    fn chain_row(&self) -> Vec<f64> {
        let s = &self.state;
        let mut row = vec![
            s.beta0,
            s.mu_beta_a,
            s.mu_beta_b,
            s.var_beta_a,
            s.var_beta_b,
            s.psi_a,
            s.psi_b,
            s.sigma2,
            s.sigma2.sqrt(),
            s.r_pix,
            s.rho_pix,
            s.alpha0,
            s.alpha1,
            s.sigma2_a,
            s.sigma2_a.sqrt(),
            s.sigma2_b,
            s.sigma2_b.sqrt(),
            s.r,
            s.rho,
        ];
        if self.opts.ssvs.is_some() {
            row.push(s.gamma);
            row.push(if s.eta { 1.0 } else { 0.0 });
        }
        row
    }
}

/// Posterior moments of one site's location and intensity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SitePosterior {
    pub id: usize,
    pub site_type: SiteType,
    pub mean: [f64; 2],
    pub sd: [f64; 2],
    pub intensity_mean: f64,
    pub intensity_sd: f64,
}

#[derive(Clone, Debug)]
pub struct HierOutput {
    pub chain: Chain,
    pub sites_a: Vec<SitePosterior>,
    pub sites_b: Vec<SitePosterior>,
    pub final_state: HierState,
}

impl HierOutput {
    /// `site_id,type,mean_x,mean_y,sd_x,sd_y,beta_mean,beta_sd`.
    pub fn sites_csv(&self) -> String {
        let mut out = String::from("site_id,type,mean_x,mean_y,sd_x,sd_y,beta_mean,beta_sd\n");
        for s in self.sites_a.iter().chain(&self.sites_b) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.id, s.site_type, s.mean[0], s.mean[1], s.sd[0], s.sd[1], s.intensity_mean, s.intensity_sd
            ));
        }
        out
    }
}

#[derive(Clone, Copy, Default)]
struct SiteMoments {
    x: RunningMoments,
    y: RunningMoments,
    beta: RunningMoments,
}

impl SiteMoments {
    fn push(&mut self, s: [f64; 2], beta: f64) {
        self.x.push(s[0]);
        self.y.push(s[1]);
        self.beta.push(beta);
    }

    fn finish(&self, id: usize, site_type: SiteType) -> SitePosterior {
        SitePosterior {
            id,
            site_type,
            mean: [self.x.mean, self.y.mean],
            sd: [self.x.sd(), self.y.sd()],
            intensity_mean: self.beta.mean,
            intensity_sd: self.beta.sd(),
        }
    }
}

/// Runs the sampler from `init` for `schedule.n_iter` sweeps, adapting step
/// sizes during burn-in and storing every `thin`-th draw afterwards.
pub fn run_hier_mcmc(
    data: &HierData,
    priors: &HierPriors,
    init: HierState,
    opts: &HierOptions,
    schedule: &Schedule,
) -> Result<HierOutput> {
    schedule.validate()?;
    let mut rng = substream(schedule.seed, "hier-chain", 0);
    let mut sampler = HierSampler::new(data, priors.clone(), init, opts.clone())?;
    let mut chain = Chain::new(sampler.chain_names(), schedule);
    let mut ma = vec![SiteMoments::default(); data.windows_a.len()];
    let mut mb = vec![SiteMoments::default(); data.windows_b.len()];
    for it in 0..schedule.n_iter {
        if it == schedule.burn_in {
            sampler.freeze();
        }
        sampler.sweep(&mut rng)?;
        if schedule.keeps(it) {
            chain.push(&sampler.chain_row());
            let s = &sampler.state;
            for (j, m) in ma.iter_mut().enumerate() {
                m.push(s.s_a[j], s.beta_a[j]);
            }
            for (k, m) in mb.iter_mut().enumerate() {
                m.push(s.s_b[k], s.beta_b[k]);
            }
        }
    }
    chain.acceptance = sampler.acceptance_rates();
    Ok(HierOutput {
        chain,
        sites_a: ma.iter().enumerate().map(|(j, m)| m.finish(j, SiteType::A)).collect(),
        sites_b: mb.iter().enumerate().map(|(k, m)| m.finish(k, SiteType::B)).collect(),
        final_state: sampler.state,
    })
}
