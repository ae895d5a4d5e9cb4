//! Shared fixtures: small simulated instances and an independent dense
//! evaluation of the model's joint log-density.

#![allow(dead_code)]

pub mod criteria;

use nalgebra::{DMatrix, DVector};

use lattice_me::hier::{initialize, HierData, HierPriors, HierState};
use lattice_me::imaging::{extract_window, round_to_pixel, Window};
use lattice_me::lattice::LatticeGeometry;
use lattice_me::rng::substream;
use lattice_me::simulate::{simulate_dataset, SimConfig, SyntheticDataset};

pub struct Instance {
    pub ds: SyntheticDataset,
    pub data: HierData,
    pub state: HierState,
}

/// Simulated `n x n` instance with windows of half-width `h` around the true
/// centers and a least-squares starting state.
pub fn instance(n: usize, h: usize, seed: u64) -> Instance {
    let cfg = SimConfig {
        n_b_per_side: n,
        h_a: h,
        h_b: h,
        ..SimConfig::default()
    };
    let ds = simulate_dataset(&cfg, &mut substream(seed, "fixture", 0)).unwrap();
    let windows = |locs: &[[f64; 2]]| -> Vec<Window> {
        locs.iter()
            .enumerate()
            .map(|(i, s)| extract_window(&ds.image, round_to_pixel(*s), h).unwrap().with_site(i))
            .collect()
    };
    let (sa, sb) = (ds.locations_a(), ds.locations_b());
    let data = HierData::new(windows(&sa), windows(&sb), ds.geometry.clone()).unwrap();
    let (mut state, _) = initialize(&data, &sa, &sb, [cfg.psi_a, cfg.psi_b]).unwrap();
    state.r_pix = cfg.r_pix;
    state.rho_pix = cfg.rho_pix;
    state.r = cfg.r;
    state.rho = cfg.rho;
    Instance { ds, data, state }
}

/// Priors informative enough that every conditional has finite variance
/// and the prior terms are visible in the conditionals.
pub fn test_priors() -> HierPriors {
    use lattice_me::hier::{InvGammaPrior, LogNormalPrior, NormalPrior};
    HierPriors {
        beta0: NormalPrior { mean: 80.0, var: 400.0 },
        mu_beta_a: NormalPrior { mean: 3000.0, var: 1e4 },
        mu_beta_b: NormalPrior { mean: 1400.0, var: 1e4 },
        var_beta_a: InvGammaPrior { shape: 4.0, rate: 3.0 * 22500.0 },
        var_beta_b: InvGammaPrior { shape: 4.0, rate: 3.0 * 22500.0 },
        sigma2: InvGammaPrior { shape: 3.0, rate: 2.0 * 19600.0 },
        alpha0: NormalPrior { mean: 0.0, var: 0.25 },
        alpha1: NormalPrior { mean: 0.0, var: 0.25 },
        sigma2_a: InvGammaPrior { shape: 3.0, rate: 0.3 },
        sigma2_b: InvGammaPrior { shape: 3.0, rate: 0.12 },
        psi: LogNormalPrior { mu: 1.4, var: 0.5 },
        rho_pix: LogNormalPrior { mu: 1.7, var: 0.5 },
        rho: LogNormalPrior { mu: 4.0, var: 1.0 },
    }
}

pub fn mvn_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: DMatrix<f64>) -> f64 {
    let n = y.len() as f64;
    let chol = cov.cholesky().expect("covariance is positive definite");
    let diff = y - mean;
    let z = chol.l().solve_lower_triangular(&diff).unwrap();
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + z.dot(&z))
}

/// `sigma2 * ((1 - r) I + r exp(-d / rho))` over a coordinate list.
pub fn exp_cov(coords: &[[f64; 2]], sigma2: f64, r: f64, rho: f64) -> DMatrix<f64> {
    let n = coords.len();
    DMatrix::from_fn(n, n, |i, j| {
        let d = ((coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2)).sqrt();
        let c = if i == j { 1.0 } else { r * (-d / rho).exp() };
        sigma2 * c
    })
}

pub fn window_logpdf(w: &Window, s: [f64; 2], beta0: f64, beta: f64, psi: f64, sigma2: f64, r_pix: f64, rho_pix: f64) -> f64 {
    let y = DVector::from_column_slice(&w.intensities);
    let mean = DVector::from_iterator(
        w.len(),
        w.coords.iter().map(|p| {
            let d2 = (p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2);
            beta0 + beta * (-d2 / (2.0 * psi * psi)).exp()
        }),
    );
    mvn_logpdf(&y, &mean, exp_cov(&w.coords, sigma2, r_pix, rho_pix))
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

/// Inverse-gamma log-density without the normalizing constant.
pub fn inv_gamma_kernel(x: f64, shape: f64, rate: f64) -> f64 {
    -(shape + 1.0) * x.ln() - rate / x
}

/// Per-coordinate displacement from the unweighted neighbor center and the
/// weighted-minus-unweighted covariate, recomputed from scratch.
pub fn displacement_pairs(g: &LatticeGeometry, st: &HierState) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let mut delta = Vec::new();
    let mut cov = Vec::new();
    for a in 0..g.n_a() {
        let nb = g.neighbors(a);
        let mut u = [0.0; 2];
        let mut w = [0.0; 2];
        let total: f64 = nb.iter().map(|&k| st.beta_b[k]).sum();
        for &k in &nb {
            for c in 0..2 {
                u[c] += st.s_b[k][c] / 4.0;
                w[c] += st.beta_b[k] * st.s_b[k][c] / total;
            }
        }
        delta.push([st.s_a[a][0] - u[0], st.s_a[a][1] - u[1]]);
        cov.push([w[0] - u[0], w[1] - u[1]]);
    }
    (delta, cov)
}

/// Process-layer log-density of both coordinate fields.
pub fn process_logpdf(g: &LatticeGeometry, st: &HierState) -> f64 {
    let (delta, cov) = displacement_pairs(g, st);
    let coords = g.a_grid_means();
    let mut ll = 0.0;
    for c in 0..2 {
        let y = DVector::from_iterator(delta.len(), delta.iter().map(|d| d[c]));
        let mean = DVector::from_iterator(cov.len(), cov.iter().map(|p| st.alpha0 + st.alpha1 * p[c]));
        ll += mvn_logpdf(&y, &mean, exp_cov(&coords, st.sigma2_a, st.r, st.rho));
    }
    ll
}

/// Joint log-density of data and parameters up to a constant, assembled
/// directly from the model definition with dense linear algebra.
pub fn log_joint(data: &HierData, pr: &HierPriors, st: &HierState) -> f64 {
    let g = &data.geometry;
    let mut lp = 0.0;
    for (w, (s, b)) in data.windows_a.iter().zip(st.s_a.iter().zip(&st.beta_a)) {
        lp += window_logpdf(w, *s, st.beta0, *b, st.psi_a, st.sigma2, st.r_pix, st.rho_pix);
    }
    for (w, (s, b)) in data.windows_b.iter().zip(st.s_b.iter().zip(&st.beta_b)) {
        lp += window_logpdf(w, *s, st.beta0, *b, st.psi_b, st.sigma2, st.r_pix, st.rho_pix);
    }
    for b in &st.beta_a {
        lp += normal_logpdf(*b, st.mu_beta_a, st.var_beta_a);
    }
    for b in &st.beta_b {
        lp += normal_logpdf(*b, st.mu_beta_b, st.var_beta_b);
    }
    for (s, m) in st.s_b.iter().zip(g.b_grid_means()) {
        lp += normal_logpdf(s[0], m[0], st.sigma2_b) + normal_logpdf(s[1], m[1], st.sigma2_b);
    }
    lp += process_logpdf(g, st);
    lp += normal_logpdf(st.beta0, pr.beta0.mean, pr.beta0.var);
    lp += normal_logpdf(st.mu_beta_a, pr.mu_beta_a.mean, pr.mu_beta_a.var);
    lp += normal_logpdf(st.mu_beta_b, pr.mu_beta_b.mean, pr.mu_beta_b.var);
    lp += inv_gamma_kernel(st.var_beta_a, pr.var_beta_a.shape, pr.var_beta_a.rate);
    lp += inv_gamma_kernel(st.var_beta_b, pr.var_beta_b.shape, pr.var_beta_b.rate);
    lp += inv_gamma_kernel(st.sigma2, pr.sigma2.shape, pr.sigma2.rate);
    lp += normal_logpdf(st.alpha0, pr.alpha0.mean, pr.alpha0.var);
    lp += normal_logpdf(st.alpha1, pr.alpha1.mean, pr.alpha1.var);
    lp += inv_gamma_kernel(st.sigma2_a, pr.sigma2_a.shape, pr.sigma2_a.rate);
    lp += inv_gamma_kernel(st.sigma2_b, pr.sigma2_b.shape, pr.sigma2_b.rate);
    // Log-normal priors on bandwidths and ranges, as densities of the value.
    for (x, p) in [
        (st.psi_a, pr.psi),
        (st.psi_b, pr.psi),
        (st.rho_pix, pr.rho_pix),
        (st.rho, pr.rho),
    ] {
        lp += normal_logpdf(x.ln(), p.mu, p.var) - x.ln();
    }
    lp
}

/// Normalized density of `f` on an even-count grid over `[lo, hi]`, with
/// Simpson weights. Returns `(points, weights * density)`.
pub fn grid_density(lo: f64, hi: f64, n: usize, log_f: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| lo + h * i as f64).collect();
    let lf: Vec<f64> = xs.iter().map(|&x| log_f(x)).collect();
    let max = lf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut m: Vec<f64> = lf
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w * (l - max).exp()
        })
        .collect();
    let total: f64 = m.iter().sum();
    for v in &mut m {
        *v /= total;
    }
    (xs, m)
}

/// Mean and variance by Simpson quadrature of `exp(log_f)` over `[lo, hi]`.
pub fn quad_moments(lo: f64, hi: f64, n: usize, log_f: impl Fn(f64) -> f64) -> (f64, f64) {
    let (xs, m) = grid_density(lo, hi, n, log_f);
    let mean: f64 = xs.iter().zip(&m).map(|(x, w)| x * w).sum();
    let var: f64 = xs.iter().zip(&m).map(|(x, w)| (x - mean).powi(2) * w).sum();
    (mean, var)
}

/// Kolmogorov-Smirnov distance between draws and a CDF tabulated on a grid
/// (linear interpolation between grid points).
pub fn ks_distance(draws: &[f64], xs: &[f64], cdf: &[f64]) -> f64 {
    let mut d: Vec<f64> = draws.to_vec();
    d.sort_by(|a, b| a.total_cmp(b));
    let n = d.len() as f64;
    let eval = |x: f64| -> f64 {
        if x <= xs[0] {
            return 0.0;
        }
        if x >= xs[xs.len() - 1] {
            return 1.0;
        }
        let k = xs.partition_point(|&g| g <= x) - 1;
        let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
        cdf[k] + t * (cdf[k + 1] - cdf[k])
    };
    let mut worst: f64 = 0.0;
    for (i, &x) in d.iter().enumerate() {
        let f = eval(x);
        worst = worst.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    worst
}

/// CDF on a fine trapezoid grid of `exp(log_f)`.
pub fn grid_cdf(lo: f64, hi: f64, n: usize, log_f: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| lo + h * i as f64).collect();
    let lf: Vec<f64> = xs.iter().map(|&x| log_f(x)).collect();
    let max = lf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let f: Vec<f64> = lf.iter().map(|l| (l - max).exp()).collect();
    let mut cdf = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        cdf[i] = cdf[i - 1] + 0.5 * h * (f[i] + f[i - 1]);
    }
    let total = cdf[cdf.len() - 1];
    for c in &mut cdf {
        *c /= total;
    }
    (xs, cdf)
}
