//! Fixed-location comparators: the displacement regression fitted directly to
//! detected locations and intensities, either with iid residuals or with the
//! same spatial correlation as the hierarchical model.

use crate::covariance::{distance_matrix, DenseMatrix};
use crate::detect::GaussianPeakFit;
use crate::error::{Error, Result};
use crate::hier::process::{update_r_rw, update_rho_rw, ProcessCore};
use crate::hier::{InvGammaPrior, LogNormalPrior, NormalPrior};
use crate::lattice::{unweighted_center, weighted_center, LatticeGeometry};
use crate::mcmc::{Chain, RwStep, Schedule};
use crate::rng::substream;
use crate::simulate::ols_line;

/// Pooled regression inputs: x-coordinates of all kept A-sites, then y.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineData {
    pub delta: Vec<f64>,
    pub psi: Vec<f64>,
    /// Detected A-site locations, for the residual distance matrix.
    pub a_coords: Vec<[f64; 2]>,
    /// A-site ids kept, in order.
    pub sites: Vec<usize>,
    /// A-site ids dropped because a fit they depend on did not converge.
    pub excluded: Vec<usize>,
}

impl BaselineData {
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }
}

/// Assembles displacements and covariates from detection fits indexed by
/// site id. The fitted surface at each B-center (peak height plus
/// background) serves as the column intensity. Sites touching
/// an unconverged fit are dropped, or rejected outright under `strict`.
pub fn build_baseline_data(
    fits_a: &[GaussianPeakFit],
    fits_b: &[GaussianPeakFit],
    geometry: &LatticeGeometry,
    strict: bool,
) -> Result<BaselineData> {
    if fits_a.len() != geometry.n_a() || fits_b.len() != geometry.n_b() {
        return Err(Error::Structure(format!(
            "expected {} A and {} B fits, got {} and {}",
            geometry.n_a(),
            geometry.n_b(),
            fits_a.len(),
            fits_b.len()
        )));
    }
    let n = geometry.n_a();
    let mut sites = Vec::new();
    let mut excluded = Vec::new();
    let mut dx = Vec::new();
    let mut dy = Vec::new();
    let mut px = Vec::new();
    let mut py = Vec::new();
    let mut a_coords = Vec::new();
    for j in 0..n {
        let nb = geometry.neighbors(j);
        let ok = fits_a[j].converged && nb.iter().all(|&k| fits_b[k].converged);
        if !ok {
            if strict {
                return Err(Error::PeakFit(format!(
                    "A-site {j} depends on an unconverged peak fit"
                )));
            }
            excluded.push(j);
            continue;
        }
        let locs = nb.map(|k| fits_b[k].center);
        let amps = nb.map(|k| fits_b[k].amplitude + fits_b[k].background);
        let u = unweighted_center(&locs);
        let w = weighted_center(&locs, &amps)?;
        let s = fits_a[j].center;
        dx.push(s[0] - u[0]);
        dy.push(s[1] - u[1]);
        px.push(w[0] - u[0]);
        py.push(w[1] - u[1]);
        a_coords.push(s);
        sites.push(j);
    }
    if sites.len() < 2 {
        return Err(Error::Structure("fewer than two usable A-sites".into()));
    }
    dx.extend(dy);
    px.extend(py);
    Ok(BaselineData {
        delta: dx,
        psi: px,
        a_coords,
        sites,
        excluded,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselinePriors {
    pub alpha0: NormalPrior,
    pub alpha1: NormalPrior,
    pub sigma2_a: InvGammaPrior,
    pub rho: LogNormalPrior,
}

impl Default for BaselinePriors {
    fn default() -> Self {
        let vague = NormalPrior {
            mean: 0.0,
            var: 1000.0 * 1000.0,
        };
        BaselinePriors {
            alpha0: vague,
            alpha1: vague,
            sigma2_a: InvGammaPrior {
                shape: 0.01,
                rate: 0.01,
            },
            rho: LogNormalPrior { mu: 0.0, var: 10.0 },
        }
    }
}

/// Starting values and random-walk scales for the spatial comparator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineOptions {
    pub priors: BaselinePriors,
    pub init_r: f64,
    /// Starting range; `None` uses twice the smallest inter-site distance.
    pub init_rho: Option<f64>,
    pub step_logit_r: f64,
    pub step_log_rho: f64,
    /// Hold `(r, rho)` at their starting values.
    pub fix_correlation: bool,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            priors: BaselinePriors::default(),
            init_r: 0.5,
            init_rho: None,
            step_logit_r: 0.3,
            step_log_rho: 0.3,
            fix_correlation: false,
        }
    }
}

fn min_distance(d: &DenseMatrix) -> f64 {
    let n = d.dim();
    let mut m = f64::INFINITY;
    for i in 0..n {
        for j in 0..i {
            m = m.min(d.get(i, j));
        }
    }
    if m.is_finite() && m > 0.0 {
        m
    } else {
        1.0
    }
}

fn run_regression(data: &BaselineData, opts: &BaselineOptions, schedule: &Schedule, spatial: bool) -> Result<Chain> {
    schedule.validate()?;
    if data.delta.len() != data.psi.len() || data.delta.len() != 2 * data.a_coords.len() {
        return Err(Error::Structure("baseline vectors have inconsistent lengths".into()));
    }
    let n = data.a_coords.len();
    let dist = distance_matrix(&data.a_coords);
    let (r0, rho0) = if spatial {
        (opts.init_r, opts.init_rho.unwrap_or_else(|| 2.0 * min_distance(&dist)))
    } else {
        (0.0, 1.0)
    };
    let (a0, a1) = ols_line(&data.psi, &data.delta);
    let split = |v: &[f64]| [v[..n].to_vec(), v[n..].to_vec()];
    let mut core = ProcessCore::new(dist, r0, rho0, split(&data.delta), split(&data.psi), a0, a1)?;
    let mut sigma2_a = (core.quad() / (2 * n) as f64).max(1e-8);
    let mut alpha1 = a1;
    let update_corr = spatial && !opts.fix_correlation;
    let mut step_r = RwStep::new(opts.step_logit_r);
    let mut step_rho = RwStep::new(opts.step_log_rho);

    let mut names = vec!["alpha0", "alpha1", "sigma2_A", "sigma_A"];
    if spatial {
        names.extend(["r", "rho"]);
    }
    let mut chain = Chain::new(names.into_iter().map(String::from).collect(), schedule);
    let mut rng = substream(schedule.seed, "baseline-chain", 0);
    let p = &opts.priors;
    for it in 0..schedule.n_iter {
        if it == schedule.burn_in {
            step_r.freeze();
            step_rho.freeze();
        }
        let alpha0 = core.alpha0_conditional(&p.alpha0, alpha1, sigma2_a).sample(&mut rng);
        core.set_alphas(alpha0, alpha1);
        alpha1 = core.alpha1_conditional(&p.alpha1, alpha0, sigma2_a).sample(&mut rng);
        core.set_alphas(alpha0, alpha1);
        sigma2_a = core.sigma2_a_conditional(&p.sigma2_a).sample(&mut rng);
        if update_corr {
            let ok = update_r_rw(&mut core, step_r.scale, sigma2_a, &mut rng);
            step_r.record(ok);
            let ok = update_rho_rw(&mut core, step_rho.scale, sigma2_a, &p.rho, &mut rng);
            step_rho.record(ok);
        }
        if schedule.keeps(it) {
            let mut row = vec![alpha0, alpha1, sigma2_a, sigma2_a.sqrt()];
            if spatial {
                row.extend([core.r, core.rho]);
            }
            chain.push(&row);
        }
    }
    if update_corr {
        for (name, s) in [("r", &step_r), ("rho", &step_rho)] {
            if let Some(rate) = s.acceptance_rate() {
                chain.acceptance.push((name.to_string(), rate));
            }
        }
    }
    Ok(chain)
}

/// Bayesian linear regression with iid residuals.
pub fn run_simple_lr(data: &BaselineData, opts: &BaselineOptions, schedule: &Schedule) -> Result<Chain> {
    run_regression(data, opts, schedule, false)
}

/// Regression with exponentially correlated residuals over detected A-sites.
pub fn run_spatial_lr(data: &BaselineData, opts: &BaselineOptions, schedule: &Schedule) -> Result<Chain> {
    run_regression(data, opts, schedule, true)
}
