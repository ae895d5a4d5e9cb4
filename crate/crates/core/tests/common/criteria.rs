//! Measurements behind each acceptance check. The per-area test files assert
//! on these and the acceptance target reports them side by side.

use std::time::Instant;

use rand::Rng;

use lattice_me::covariance::{
    default_max_dist, empirical_variogram, exp_cov_matrix, factorize, fit_exp_variogram, sample_mvn, ExpCovParams,
    DEFAULT_VARIOGRAM_BINS,
};
use lattice_me::detect::{fit_gaussian_peak, trace_diagnostic};
use lattice_me::hier::{
    initialize, windows_loglik, HierData, HierOptions, HierPriors, HierSampler, HierState, SsvsPrior, WindowNoise,
};
use lattice_me::imaging::{extract_window, round_to_pixel, window_offsets, Window};
use lattice_me::lattice::SiteType;
use lattice_me::mcmc::{InvGammaParams, NormalParams, Schedule};
use lattice_me::pipeline::{run_pipeline, FitSettings, Model};
use lattice_me::rng::{substream, StreamRng};
use lattice_me::simulate::{simulate_dataset, SimConfig};

use super::*;

// ---- Gibbs conditionals ----

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Worst relative error in mean or variance of a normal conditional against
/// Simpson quadrature over fourteen standard deviations.
fn normal_error(claimed: NormalParams, log_f: impl Fn(f64) -> f64) -> f64 {
    let sd = claimed.var.sqrt();
    let (m, v) = quad_moments(claimed.mean - 14.0 * sd, claimed.mean + 14.0 * sd, 4000, log_f);
    rel(claimed.mean, m).max(rel(claimed.var, v))
}

/// Inverse-gamma conditionals are integrated on the log scale, where the
/// tails are light.
fn inv_gamma_error(claimed: InvGammaParams, log_f: impl Fn(f64) -> f64) -> f64 {
    let centre = claimed.mean().ln();
    let (xs, w) = grid_density(centre - 12.0, centre + 25.0, 20_000, |t| log_f(t.exp()) + t);
    let m: f64 = xs.iter().zip(&w).map(|(t, w)| t.exp() * w).sum();
    let v: f64 = xs.iter().zip(&w).map(|(t, w)| (t.exp() - m).powi(2) * w).sum();
    rel(claimed.mean(), m).max(rel(claimed.variance(), v))
}

fn perturbed(mut st: HierState) -> HierState {
    // Away from the least-squares start so prior terms matter.
    st.beta0 += 3.0;
    st.alpha0 = -0.05;
    st.alpha1 = -0.2;
    st.sigma2_a = 0.2;
    st.sigma2_b = 0.08;
    st.var_beta_a = 20000.0;
    st.var_beta_b = 25000.0;
    st.mu_beta_a = 3050.0;
    st.mu_beta_b = 1430.0;
    st.sigma2 *= 1.1;
    st
}

/// Relative error of every Gibbs conditional on an `n x n` instance with
/// 25-pixel windows.
pub fn conjugacy_errors(n: usize) -> Vec<(String, f64)> {
    let inst = instance(n, 2, 7 + n as u64);
    let pr = test_priors();
    let st = perturbed(inst.state.clone());
    let data = &inst.data;
    let s = HierSampler::new(data, pr.clone(), st.clone(), HierOptions::default()).unwrap();
    let joint = |f: &dyn Fn(&mut HierState)| {
        let mut x = st.clone();
        f(&mut x);
        log_joint(data, &pr, &x)
    };
    let mut out = vec![("beta0".to_string(), normal_error(s.beta0_conditional(), |v| joint(&|x| x.beta0 = v)))];
    for j in 0..st.beta_a.len() {
        let e = normal_error(s.intensity_conditional(SiteType::A, j), |v| joint(&|x| x.beta_a[j] = v));
        out.push((format!("beta_A[{j}]"), e));
    }
    out.push(("sigma2".into(), inv_gamma_error(s.sigma2_conditional(), |v| joint(&|x| x.sigma2 = v))));
    out.push(("alpha0".into(), normal_error(s.alpha0_conditional(), |v| joint(&|x| x.alpha0 = v))));
    out.push(("alpha1".into(), normal_error(s.alpha1_conditional(), |v| joint(&|x| x.alpha1 = v))));
    out.push(("sigma2_A".into(), inv_gamma_error(s.sigma2_a_conditional(), |v| joint(&|x| x.sigma2_a = v))));
    out.push((
        "mu_beta_A".into(),
        normal_error(s.mu_beta_conditional(SiteType::A), |v| joint(&|x| x.mu_beta_a = v)),
    ));
    out.push((
        "mu_beta_B".into(),
        normal_error(s.mu_beta_conditional(SiteType::B), |v| joint(&|x| x.mu_beta_b = v)),
    ));
    out.push((
        "var_beta_A".into(),
        inv_gamma_error(s.var_beta_conditional(SiteType::A), |v| joint(&|x| x.var_beta_a = v)),
    ));
    out.push((
        "var_beta_B".into(),
        inv_gamma_error(s.var_beta_conditional(SiteType::B), |v| joint(&|x| x.var_beta_b = v)),
    ));
    out.push(("sigma2_B".into(), inv_gamma_error(s.sigma2_b_conditional(), |v| joint(&|x| x.sigma2_b = v))));
    out
}

// ---- Metropolis stationarity ----

pub const KS_DRAWS: usize = 100_000;

/// Runs `step` for a tuning period, freezes the scales, then records
/// `KS_DRAWS` values of `track` taken every `thin` steps.
fn collect(
    s: &mut HierSampler<'_>,
    thin: usize,
    mut step: impl FnMut(&mut HierSampler<'_>, &mut StreamRng),
    track: impl Fn(&HierState) -> f64,
    seed: u64,
) -> Vec<f64> {
    let mut rng = substream(seed, "metropolis-test", 0);
    for _ in 0..5000 {
        step(s, &mut rng);
    }
    s.freeze();
    let mut out = Vec::with_capacity(KS_DRAWS);
    for _ in 0..KS_DRAWS {
        for _ in 0..thin {
            step(s, &mut rng);
        }
        out.push(track(s.state()));
    }
    out
}

/// Grid range covering the draws with a wide margin, clipped to the domain.
fn span(draws: &[f64], lo_bound: f64, hi_bound: f64) -> (f64, f64) {
    let lo = draws.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w = hi - lo;
    ((lo - 2.0 * w).max(lo_bound), (hi + 2.0 * w).min(hi_bound))
}

fn ks_1d(draws: &[f64], bounds: (f64, f64), log_f: impl Fn(f64) -> f64) -> f64 {
    let (lo, hi) = span(draws, bounds.0, bounds.1);
    let (xs, cdf) = grid_cdf(lo, hi, 20_000, log_f);
    ks_distance(draws, &xs, &cdf)
}

fn sampler<'a>(inst: &'a Instance, st: &HierState, hastings: bool) -> HierSampler<'a> {
    let opts = HierOptions {
        hastings_correction: hastings,
        ..HierOptions::default()
    };
    HierSampler::new(&inst.data, test_priors(), st.clone(), opts).unwrap()
}

pub fn ks_bandwidth() -> f64 {
    let inst = instance(2, 2, 21);
    let pr = test_priors();
    let mut s = sampler(&inst, &inst.state, true);
    let draws = collect(&mut s, 3, |s, r| s.update_psi(SiteType::A, r), |st| st.psi_a, 1);
    ks_1d(&draws, (1e-3, 1e3), |v| {
        let mut x = inst.state.clone();
        x.psi_a = v;
        log_joint(&inst.data, &pr, &x)
    })
}

/// KS distances of the pixel-noise correlation share and range.
pub fn ks_pixel_correlation() -> [f64; 2] {
    let inst = instance(2, 2, 22);
    let pr = test_priors();
    let mut s = sampler(&inst, &inst.state, true);
    let draws = collect(&mut s, 3, |s, r| s.update_r_pix(r), |st| st.r_pix, 2);
    let share = ks_1d(&draws, (1e-9, 1.0 - 1e-9), |v| {
        let mut x = inst.state.clone();
        x.r_pix = v;
        log_joint(&inst.data, &pr, &x)
    });
    let mut s = sampler(&inst, &inst.state, true);
    let draws = collect(&mut s, 3, |s, r| s.update_rho_pix(r), |st| st.rho_pix, 3);
    let range = ks_1d(&draws, (1e-3, 1e4), |v| {
        let mut x = inst.state.clone();
        x.rho_pix = v;
        log_joint(&inst.data, &pr, &x)
    });
    [share, range]
}

/// KS distances of the process correlation share and range.
pub fn ks_process_correlation() -> [f64; 2] {
    let inst = instance(3, 2, 23);
    let pr = test_priors();
    let mut st = inst.state.clone();
    st.rho = 60.0;
    let mut s = sampler(&inst, &st, true);
    let draws = collect(&mut s, 3, |s, r| s.update_r(r), |st| st.r, 4);
    let share = ks_1d(&draws, (1e-9, 1.0 - 1e-9), |v| {
        let mut x = st.clone();
        x.r = v;
        process_logpdf(&inst.data.geometry, &x)
    });
    let mut s = sampler(&inst, &st, true);
    let draws = collect(&mut s, 3, |s, r| s.update_rho(r), |st| st.rho, 5);
    let range = ks_1d(&draws, (1e-3, 1e6), |v| {
        let mut x = st.clone();
        x.rho = v;
        process_logpdf(&inst.data.geometry, &x) + normal_logpdf(v.ln(), pr.rho.mu, pr.rho.var) - v.ln()
    });
    [share, range]
}

/// KS distance of the x-coordinate of a jointly updated A-site location.
pub fn ks_location() -> f64 {
    let inst = instance(2, 2, 24);
    let st = inst.state.clone();
    let mut s = sampler(&inst, &st, true);
    let draws = collect(&mut s, 3, |s, r| s.update_locations_a(r), |st| st.s_a[0][0], 6);
    let (lo, hi) = span(&draws, f64::NEG_INFINITY, f64::INFINITY);
    let y0 = s.state().s_a[0][1];
    let (ylo, yhi) = (y0 - 1.0, y0 + 1.0);
    // Marginal of x by integrating the 2-D conditional over y.
    let ny = 400;
    let hy = (yhi - ylo) / ny as f64;
    let w = &inst.data.windows_a[0];
    let log_f = |x: f64| -> f64 {
        let terms: Vec<f64> = (0..=ny)
            .map(|k| {
                let mut t = st.clone();
                t.s_a[0] = [x, ylo + hy * k as f64];
                window_logpdf(w, t.s_a[0], t.beta0, t.beta_a[0], t.psi_a, t.sigma2, t.r_pix, t.rho_pix)
                    + process_logpdf(&inst.data.geometry, &t)
            })
            .collect();
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    };
    let (xs, cdf) = grid_cdf(lo, hi, 600, log_f);
    ks_distance(&draws, &xs, &cdf)
}

/// Conditional of the four B intensities of a single A-site instance,
/// marginalized to the first by a 4-D grid sum.
fn beta_b_marginal(inst: &Instance, st: &HierState) -> (Vec<f64>, Vec<f64>) {
    let g = &inst.data.geometry;
    assert_eq!(g.n_a(), 1);
    let nb = g.neighbors(0);
    // Data and prior terms are separable across sites.
    let site_term = |k: usize, b: f64| -> f64 {
        let w = &inst.data.windows_b[k];
        window_logpdf(w, st.s_b[k], st.beta0, b, st.psi_b, st.sigma2, st.r_pix, st.rho_pix)
            + normal_logpdf(b, st.mu_beta_b, st.var_beta_b)
    };
    let mut grids = Vec::new();
    for k in 0..4 {
        // Locate the separable term's mode and curvature.
        let (c, h) = (st.beta_b[k], 1.0);
        let (f0, fp, fm) = (site_term(k, c), site_term(k, c + h), site_term(k, c - h));
        let curv = -(fp - 2.0 * f0 + fm) / (h * h);
        let sd = 1.0 / curv.sqrt();
        let mode = c + (fp - fm) / (2.0 * h) / curv;
        let n = if k == 0 { 120 } else { 40 };
        let xs: Vec<f64> = (0..=n).map(|i| mode - 7.0 * sd + 14.0 * sd * i as f64 / n as f64).collect();
        let lt: Vec<f64> = xs.iter().map(|&b| site_term(k, b)).collect();
        grids.push((xs, lt));
    }
    let s_a = st.s_a[0];
    let locs: Vec<[f64; 2]> = nb.iter().map(|&k| st.s_b[k]).collect();
    let u = [
        locs.iter().map(|p| p[0]).sum::<f64>() / 4.0,
        locs.iter().map(|p| p[1]).sum::<f64>() / 4.0,
    ];
    let slot = |k: usize| nb.iter().position(|&j| j == k).unwrap();
    let (x0, l0) = &grids[0];
    let mut logs = Vec::with_capacity(x0.len() * 41 * 41 * 41);
    for (i0, b0) in x0.iter().enumerate() {
        for (i1, b1) in grids[1].0.iter().enumerate() {
            for (i2, b2) in grids[2].0.iter().enumerate() {
                for (i3, b3) in grids[3].0.iter().enumerate() {
                    let b = [*b0, *b1, *b2, *b3];
                    let total: f64 = b.iter().sum();
                    let mut lp = l0[i0] + grids[1].1[i1] + grids[2].1[i2] + grids[3].1[i3];
                    for c in 0..2 {
                        let w: f64 = (0..4).map(|k| b[k] * locs[slot(k)][c]).sum::<f64>() / total;
                        let mean = st.alpha0 + st.alpha1 * (w - u[c]);
                        lp += normal_logpdf(s_a[c] - u[c], mean, st.sigma2_a);
                    }
                    logs.push((i0, lp));
                }
            }
        }
    }
    let m = logs.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let mut mass = vec![0.0; x0.len()];
    for (i0, l) in logs {
        mass[i0] += (l - m).exp();
    }
    // Cumulative mass at grid points via the trapezoid rule.
    let mut cdf = vec![0.0; x0.len()];
    for i in 1..x0.len() {
        cdf[i] = cdf[i - 1] + 0.5 * (mass[i] + mass[i - 1]);
    }
    let t = cdf[cdf.len() - 1];
    (x0.clone(), cdf.into_iter().map(|c| c / t).collect())
}

/// KS distance of the B-intensity independence sampler, with and without
/// its proposal correction.
pub fn ks_intensity() -> (f64, f64) {
    let inst = instance(2, 2, 25);
    let mut st = inst.state.clone();
    // A small process variance makes the process term shape the conditional.
    st.sigma2_a = 0.05;
    st.alpha1 = -0.6;
    let (xs, cdf) = beta_b_marginal(&inst, &st);
    let mut s = sampler(&inst, &st, true);
    let draws = collect(&mut s, 2, |s, r| s.update_beta_b(r), |st| st.beta_b[0], 7);
    let with = ks_distance(&draws, &xs, &cdf);
    let mut s = sampler(&inst, &st, false);
    let draws = collect(&mut s, 2, |s, r| s.update_beta_b(r), |st| st.beta_b[0], 7);
    (with, ks_distance(&draws, &xs, &cdf))
}

// ---- block likelihood ----

/// One joint Gaussian over every pixel of every window, with zero
/// covariance between windows.
pub fn dense_block_logpdf(windows: &[Window], sites: &[[f64; 2]], betas: &[f64], p: &WindowNoise) -> f64 {
    let n: usize = windows.iter().map(|w| w.len()).sum();
    let mut cov = DMatrix::zeros(n, n);
    let mut y = DVector::zeros(n);
    let mut mean = DVector::zeros(n);
    let mut off = 0;
    for ((w, s), b) in windows.iter().zip(sites).zip(betas) {
        let m = w.len();
        cov.view_mut((off, off), (m, m))
            .copy_from(&exp_cov(&w.coords, p.sigma2, p.r_pix, p.rho_pix));
        for (i, (c, v)) in w.coords.iter().zip(&w.intensities).enumerate() {
            let d2 = (c[0] - s[0]).powi(2) + (c[1] - s[1]).powi(2);
            y[off + i] = *v;
            mean[off + i] = p.beta0 + b * (-d2 / (2.0 * p.psi * p.psi)).exp();
        }
        off += m;
    }
    mvn_logpdf(&y, &mean, cov)
}

/// Three 9-pixel windows from a simulated image, with intensities.
pub fn three_windows() -> (Vec<Window>, Vec<[f64; 2]>, Vec<f64>) {
    let inst = instance(3, 1, 31);
    let sites: Vec<[f64; 2]> = inst.ds.locations_a().into_iter().take(3).collect();
    let windows = sites
        .iter()
        .map(|s| extract_window(&inst.ds.image, round_to_pixel(*s), 1).unwrap())
        .collect();
    (windows, sites, vec![2900.0, 3100.0, 3050.0])
}

/// Absolute difference between the block and dense log-densities on three
/// windows of nine pixels.
pub fn block_error() -> f64 {
    let (windows, sites, betas) = three_windows();
    assert!(windows.len() == 3 && windows.iter().all(|w| w.len() == 9));
    let p = WindowNoise {
        beta0: 95.0,
        psi: 3.7,
        sigma2: 140.0f64.powi(2),
        r_pix: 0.57,
        rho_pix: 5.6,
    };
    let got = windows_loglik(&windows, &sites, &betas, &p).unwrap();
    (got - dense_block_logpdf(&windows, &sites, &betas, &p)).abs()
}

// ---- detection ----

struct Peak {
    amplitude: f64,
    center: [f64; 2],
    theta: f64,
    s1: f64,
    s2: f64,
    background: f64,
}

impl Peak {
    fn at(&self, p: [f64; 2]) -> f64 {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        let u = dx * c + dy * s;
        let v = dx * s - dy * c;
        self.amplitude * (-(u * u / (self.s1 * self.s1) + v * v / (self.s2 * self.s2))).exp() + self.background
    }
}

fn noiseless_window(peak: &Peak, center: [i64; 2], h: usize) -> Window {
    let coords: Vec<[f64; 2]> = window_offsets(h)
        .iter()
        .map(|o| [(center[0] + o[0]) as f64, (center[1] + o[1]) as f64])
        .collect();
    let intensities = coords.iter().map(|p| peak.at(*p)).collect();
    Window {
        site_id: None,
        half_width: h,
        center,
        coords,
        intensities,
    }
}

pub struct PeakErrors {
    pub center_px: f64,
    pub amplitude_rel: f64,
    pub all_converged: bool,
}

/// Worst errors of the peak fit over 100 random noiseless peaks.
pub fn peak_errors() -> PeakErrors {
    let mut rng = substream(61, "fixture", 0);
    let mut out = PeakErrors {
        center_px: 0.0,
        amplitude_rel: 0.0,
        all_converged: true,
    };
    for draw in 0..100 {
        let grid = [40i64, 40];
        let peak = Peak {
            amplitude: rng.random_range(300.0..6000.0),
            center: [grid[0] as f64 + rng.random_range(-0.5..0.5), grid[1] as f64 + rng.random_range(-0.5..0.5)],
            theta: rng.random_range(0.0..std::f64::consts::FRAC_PI_2),
            s1: rng.random_range(2.0..4.5),
            s2: rng.random_range(2.0..4.5),
            background: rng.random_range(0.0..400.0),
        };
        let h = if draw % 2 == 0 { 6 } else { 5 };
        let fit = fit_gaussian_peak(&noiseless_window(&peak, grid, h)).unwrap();
        let dc = (fit.center[0] - peak.center[0]).hypot(fit.center[1] - peak.center[1]);
        let da = (fit.amplitude - peak.amplitude).abs() / peak.amplitude;
        out.center_px = out.center_px.max(dc);
        out.amplitude_rel = out.amplitude_rel.max(da);
        out.all_converged &= fit.converged;
    }
    out
}

/// Smallest trace correlation over both site types and both directions, on
/// windows of a simulated 10 x 10 image.
pub fn min_trace_correlation() -> f64 {
    let cfg = SimConfig {
        n_b_per_side: 10,
        ..SimConfig::default()
    };
    let ds = simulate_dataset(&cfg, &mut substream(62, "fixture", 0)).unwrap();
    let mut worst = f64::INFINITY;
    for (locs, h) in [(ds.locations_a(), cfg.h_a), (ds.locations_b(), cfg.h_b)] {
        let windows: Vec<Window> = locs
            .iter()
            .map(|s| extract_window(&ds.image, round_to_pixel(*s), h).unwrap())
            .collect();
        let d = trace_diagnostic(&windows).unwrap();
        for t in [&d.horizontal, &d.vertical] {
            worst = worst.min(t.correlation.unwrap_or(f64::NEG_INFINITY));
        }
    }
    worst
}

// ---- variogram ----

pub const VARIOGRAM_POINTS: usize = 2000;
pub const VARIOGRAM_FIELDS: u64 = 20;
const VARIOGRAM_SIDE: f64 = 300.0;
const VARIOGRAM_MAX_DIST: f64 = 30.0;

fn variogram_field(seed: u64, truth: &ExpCovParams) -> ExpCovParams {
    let mut rng = substream(seed, "fixture", 0);
    let coords: Vec<[f64; 2]> = (0..VARIOGRAM_POINTS)
        .map(|_| [rng.random_range(0.0..VARIOGRAM_SIDE), rng.random_range(0.0..VARIOGRAM_SIDE)])
        .collect();
    let factor = factorize(&exp_cov_matrix(&coords, truth).unwrap()).unwrap();
    let field = sample_mvn(&vec![0.0; VARIOGRAM_POINTS], &factor, &mut rng).unwrap();
    let vg = empirical_variogram(&coords, &field, DEFAULT_VARIOGRAM_BINS, VARIOGRAM_MAX_DIST).unwrap();
    fit_exp_variogram(&vg).unwrap()
}

/// Fitted-over-true ratios of (sill, spatial share, range) on independent
/// 2,000-point fields.
pub fn variogram_ratios() -> Vec<[f64; 3]> {
    let truth = ExpCovParams::new(4.0, 0.8, 5.0).unwrap();
    (0..VARIOGRAM_FIELDS)
        .map(|seed| {
            let f = variogram_field(seed, &truth);
            [f.sigma2 / truth.sigma2, f.r / truth.r, f.rho / truth.rho]
        })
        .collect()
}

/// Rise of the fitted curve across the observed lags for white noise.
pub fn white_noise_variogram() -> (ExpCovParams, f64) {
    let n = 5000;
    let mut rng = substream(79, "fixture", 1);
    let coords: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random_range(0.0..VARIOGRAM_SIDE), rng.random_range(0.0..VARIOGRAM_SIDE)])
        .collect();
    let field: Vec<f64> = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let vg = empirical_variogram(&coords, &field, DEFAULT_VARIOGRAM_BINS, default_max_dist(&coords)).unwrap();
    let fit = fit_exp_variogram(&vg).unwrap();
    let (lo, hi) = (vg.bin_centers[0], vg.bin_centers[vg.bin_centers.len() - 1]);
    let rise = fit.r * ((-lo / fit.rho).exp() - (-hi / fit.rho).exp());
    (fit, rise)
}

// ---- spike and slab ----

/// Posterior share of draws with the slope included, from a desk-scale fit
/// (2,000 burn-in and 4,000 kept sweeps).
pub fn inclusion_probability(cfg: &SimConfig, seed: u64) -> f64 {
    let ds = simulate_dataset(cfg, &mut substream(seed, "fixture", 0)).unwrap();
    let g = &ds.geometry;
    let mut settings = FitSettings::new(Schedule::new(6000, 2000, 1, seed).unwrap());
    settings.hier = HierOptions {
        ssvs: Some(SsvsPrior::default()),
        ..HierOptions::default()
    };
    let out = run_pipeline(&ds.image, cfg.n_b_per_side, &g.a_grid_means(), g.b_grid_means(), &[Model::Hier], &settings)
        .unwrap();
    let eta = out.chain(Model::Hier).unwrap().get("eta").unwrap();
    eta.iter().sum::<f64>() / eta.len() as f64
}

// ---- scaling ----

struct SweepFixture {
    data: HierData,
    start: HierState,
}

fn sweep_fixture(n: usize) -> SweepFixture {
    let cfg = SimConfig {
        n_b_per_side: n,
        ..SimConfig::default()
    };
    let ds = simulate_dataset(&cfg, &mut substream(91, "fixture", n as u64)).unwrap();
    let windows = |locs: &[[f64; 2]], h: usize| -> Vec<Window> {
        locs.iter()
            .enumerate()
            .map(|(i, s)| extract_window(&ds.image, round_to_pixel(*s), h).unwrap().with_site(i))
            .collect()
    };
    let (sa, sb) = (ds.locations_a(), ds.locations_b());
    let data = HierData::new(windows(&sa, cfg.h_a), windows(&sb, cfg.h_b), ds.geometry.clone()).unwrap();
    let (start, _) = initialize(&data, &sa, &sb, [cfg.psi_a, cfg.psi_b]).unwrap();
    SweepFixture { data, start }
}

/// Seconds per sweep over one timed batch after a warm-up.
fn per_sweep(f: &SweepFixture, round: usize) -> f64 {
    const SWEEPS: usize = 60;
    let mut s = HierSampler::new(&f.data, HierPriors::default(), f.start.clone(), HierOptions::default()).unwrap();
    let mut rng = substream(92, "fixture", round as u64);
    for _ in 0..10 {
        s.sweep(&mut rng).unwrap();
    }
    let t = Instant::now();
    for _ in 0..SWEEPS {
        s.sweep(&mut rng).unwrap();
    }
    t.elapsed().as_secs_f64() / SWEEPS as f64
}

pub struct SweepTiming {
    pub small_s: f64,
    pub large_s: f64,
    pub site_ratio: f64,
}

/// Per-sweep times on 10 x 10 and 14 x 14 grids. The sizes alternate and the
/// fastest of five rounds is kept, which discounts interference from other
/// work on the machine.
pub fn sweep_timing() -> SweepTiming {
    let small = sweep_fixture(10);
    let large = sweep_fixture(14);
    let sites = |f: &SweepFixture| (f.data.windows_a.len() + f.data.windows_b.len()) as f64;
    let (mut ts, mut tl) = (f64::INFINITY, f64::INFINITY);
    for round in 0..5 {
        ts = ts.min(per_sweep(&small, round));
        tl = tl.min(per_sweep(&large, round));
    }
    SweepTiming {
        small_s: ts,
        large_s: tl,
        site_ratio: sites(&large) / sites(&small),
    }
}
