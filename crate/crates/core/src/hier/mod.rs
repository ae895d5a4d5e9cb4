//! Hierarchical measurement-error model for atom-column locations.
//!
//! Data layer: each window holds one column, with intensities
//! `beta0 + beta * exp(-|p - s|^2 / (2 psi^2))` plus correlated Gaussian
//! noise. Process layer: A-site displacement from the unweighted B-neighbor
//! center regressed on the weighted-minus-unweighted center difference, with
//! spatially correlated residuals. B-sites scatter around a regular grid.

mod data;
mod init;
pub(crate) mod process;
mod sampler;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{check_disjoint, Window};
use crate::lattice::LatticeGeometry;

pub use data::{block_loglik, windows_loglik, DataLayer, WindowNoise};
pub use init::{initialize, OlsSummary};
pub use sampler::{run_hier_mcmc, HierOutput, HierSampler, SitePosterior};

/// Windows and lattice structure the model conditions on. Windows are indexed
/// by site id and stay fixed for the whole run.
#[derive(Clone, Debug)]
pub struct HierData {
    pub windows_a: Vec<Window>,
    pub windows_b: Vec<Window>,
    pub geometry: LatticeGeometry,
}

fn same_layout(ws: &[Window]) -> bool {
    let Some(first) = ws.first() else {
        return true;
    };
    let o = first.coords[0];
    ws.iter().all(|w| {
        w.len() == first.len()
            && w.coords.iter().zip(&first.coords).all(|(c, f)| {
                let p = w.coords[0];
                c[0] - p[0] == f[0] - o[0] && c[1] - p[1] == f[1] - o[1]
            })
    })
}

impl HierData {
    pub fn new(windows_a: Vec<Window>, windows_b: Vec<Window>, geometry: LatticeGeometry) -> Result<Self> {
        if windows_a.len() != geometry.n_a() || windows_b.len() != geometry.n_b() {
            return Err(Error::Structure(format!(
                "expected {} A and {} B windows, got {} and {}",
                geometry.n_a(),
                geometry.n_b(),
                windows_a.len(),
                windows_b.len()
            )));
        }
        if windows_a.iter().chain(&windows_b).any(|w| w.is_empty()) {
            return Err(Error::Structure("empty window".into()));
        }
        if !same_layout(&windows_a) || !same_layout(&windows_b) {
            return Err(Error::Structure(
                "windows of one site type must share the same pixel layout".into(),
            ));
        }
        let all: Vec<Window> = windows_a.iter().chain(&windows_b).cloned().collect();
        if !check_disjoint(&all) {
            return Err(Error::Structure("model windows overlap".into()));
        }
        Ok(HierData {
            windows_a,
            windows_b,
            geometry,
        })
    }
}

/// Normal prior by mean and variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalPrior {
    pub mean: f64,
    pub var: f64,
}

/// Inverse-gamma prior by shape and rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub rate: f64,
}

/// Log-normal prior; `mu` and `var` are the mean and variance of the log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalPrior {
    pub mu: f64,
    pub var: f64,
}

impl LogNormalPrior {
    /// Log-density of `ln x` on the log scale, up to a constant.
    pub fn ln_density_log_scale(&self, log_x: f64) -> f64 {
        -0.5 * (log_x - self.mu).powi(2) / self.var
    }
}

const VAGUE: f64 = 1000.0 * 1000.0;

/// Prior hyperparameters. Proportions (`r`, `r_pix`) are uniform on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierPriors {
    pub beta0: NormalPrior,
    pub mu_beta_a: NormalPrior,
    pub mu_beta_b: NormalPrior,
    pub var_beta_a: InvGammaPrior,
    pub var_beta_b: InvGammaPrior,
    pub sigma2: InvGammaPrior,
    pub alpha0: NormalPrior,
    pub alpha1: NormalPrior,
    pub sigma2_a: InvGammaPrior,
    pub sigma2_b: InvGammaPrior,
    pub psi: LogNormalPrior,
    pub rho_pix: LogNormalPrior,
    pub rho: LogNormalPrior,
}

impl Default for HierPriors {
    fn default() -> Self {
        let vague = NormalPrior { mean: 0.0, var: VAGUE };
        let ig = InvGammaPrior { shape: 0.01, rate: 0.01 };
        let ln = LogNormalPrior { mu: 0.0, var: 100.0 };
        HierPriors {
            beta0: vague,
            mu_beta_a: vague,
            mu_beta_b: vague,
            var_beta_a: InvGammaPrior { shape: 3.0, rate: 1.0 },
            var_beta_b: InvGammaPrior { shape: 3.0, rate: 1.0 },
            sigma2: ig,
            alpha0: vague,
            alpha1: vague,
            sigma2_a: ig,
            sigma2_b: ig,
            psi: ln,
            rho_pix: ln,
            rho: ln,
        }
    }
}

/// Scale in the intensity-variance hyperprior grounding: the prior SD of each
/// intensity variance is this multiple of the estimated intensity SD.
pub const HYPER_SCALE: f64 = 25.0;

/// `(shape, rate)` whose inverse-gamma has mean `v` and SD `HYPER_SCALE * sqrt(v)`.
pub fn grounded_inv_gamma(v: f64) -> InvGammaPrior {
    grounded_inv_gamma_scaled(v, 1.0)
}

/// As [`grounded_inv_gamma`] with the squared scale multiplied by `factor`.
pub fn grounded_inv_gamma_scaled(v: f64, factor: f64) -> InvGammaPrior {
    let k = v / (factor * HYPER_SCALE * HYPER_SCALE);
    InvGammaPrior {
        shape: k + 2.0,
        rate: v * (k + 1.0),
    }
}

impl HierPriors {
    /// Fills in the intensity hyperpriors from per-window least-squares
    /// estimates: the means center on the estimate averages and the variance
    /// priors are grounded on the estimate variances.
    pub fn grounded(self, ols: &OlsSummary) -> Self {
        self.grounded_scaled(ols, 1.0)
    }

    /// Grounding with the hyperprior variance scale multiplied by `factor`.
    pub fn grounded_scaled(mut self, ols: &OlsSummary, factor: f64) -> Self {
        self.mu_beta_a.mean = ols.mean_beta_a;
        self.mu_beta_b.mean = ols.mean_beta_b;
        self.var_beta_a = grounded_inv_gamma_scaled(ols.var_beta_a, factor);
        self.var_beta_b = grounded_inv_gamma_scaled(ols.var_beta_b, factor);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let normals = [
            ("beta0", self.beta0),
            ("mu_beta_a", self.mu_beta_a),
            ("mu_beta_b", self.mu_beta_b),
            ("alpha0", self.alpha0),
            ("alpha1", self.alpha1),
        ];
        for (name, p) in normals {
            if !(p.var > 0.0 && p.mean.is_finite()) {
                return Err(Error::Config(format!("prior {name}: variance must be positive")));
            }
        }
        let igs = [
            ("var_beta_a", self.var_beta_a),
            ("var_beta_b", self.var_beta_b),
            ("sigma2", self.sigma2),
            ("sigma2_a", self.sigma2_a),
            ("sigma2_b", self.sigma2_b),
        ];
        for (name, p) in igs {
            if !(p.shape > 0.0 && p.rate > 0.0) {
                return Err(Error::Config(format!("prior {name}: shape and rate must be positive")));
            }
        }
        for (name, p) in [("psi", self.psi), ("rho_pix", self.rho_pix), ("rho", self.rho)] {
            if !(p.var > 0.0) {
                return Err(Error::Config(format!("prior {name}: log-variance must be positive")));
            }
        }
        Ok(())
    }
}

/// Spike-and-slab prior on the slope: `alpha1 = gamma * eta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsvsPrior {
    /// Variance of the slab `gamma ~ N(0, slab_var)`.
    pub slab_var: f64,
    /// Prior inclusion probability `P(eta = 1)`.
    pub inclusion: f64,
}

impl Default for SsvsPrior {
    fn default() -> Self {
        SsvsPrior {
            slab_var: 100.0,
            inclusion: 0.5,
        }
    }
}

/// Initial random-walk scales. Location steps are in pixels; the others act
/// on the transformed scale (log or logit).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSizes {
    pub location_a: f64,
    pub location_b: f64,
    pub log_psi: f64,
    pub logit_r_pix: f64,
    pub log_rho_pix: f64,
    pub logit_r: f64,
    pub log_rho: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        StepSizes {
            location_a: 0.1,
            location_b: 0.1,
            log_psi: 0.005,
            logit_r_pix: 0.05,
            log_rho_pix: 0.05,
            logit_r: 0.3,
            log_rho: 0.3,
        }
    }
}

/// Sampler switches.
#[derive(Clone, Debug, PartialEq)]
pub struct HierOptions {
    pub ssvs: Option<SsvsPrior>,
    pub steps: StepSizes,
    /// Keep the proposal-density correction in the B-intensity independence
    /// sampler. Turning it off is only useful to demonstrate the bias.
    pub hastings_correction: bool,
    /// Tune random-walk scales during burn-in.
    pub adapt: bool,
}

impl Default for HierOptions {
    fn default() -> Self {
        HierOptions {
            ssvs: None,
            steps: StepSizes::default(),
            hastings_correction: true,
            adapt: true,
        }
    }
}

/// Full parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierState {
    pub beta0: f64,
    pub beta_a: Vec<f64>,
    pub beta_b: Vec<f64>,
    pub mu_beta_a: f64,
    pub mu_beta_b: f64,
    pub var_beta_a: f64,
    pub var_beta_b: f64,
    pub psi_a: f64,
    pub psi_b: f64,
    pub sigma2: f64,
    pub r_pix: f64,
    pub rho_pix: f64,
    pub s_a: Vec<[f64; 2]>,
    pub s_b: Vec<[f64; 2]>,
    pub alpha0: f64,
    /// Slope; equals `gamma * eta` when the spike-and-slab prior is used.
    pub alpha1: f64,
    pub gamma: f64,
    pub eta: bool,
    pub sigma2_a: f64,
    pub sigma2_b: f64,
    pub r: f64,
    pub rho: f64,
}

impl HierState {
    /// Free scalar count: intensity and two coordinates per site plus the
    /// sixteen shared parameters.
    pub fn degrees_of_freedom(&self) -> usize {
        3 * (self.beta_a.len() + self.beta_b.len()) + 16
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("var_beta_a", self.var_beta_a),
            ("var_beta_b", self.var_beta_b),
            ("psi_a", self.psi_a),
            ("psi_b", self.psi_b),
            ("sigma2", self.sigma2),
            ("rho_pix", self.rho_pix),
            ("sigma2_a", self.sigma2_a),
            ("sigma2_b", self.sigma2_b),
            ("rho", self.rho),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("r_pix", self.r_pix), ("r", self.r)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Compact dump of the shared scalars for error reports.
    pub fn scalar_dump(&self) -> String {
        format!(
            "beta0={} mu_beta=({}, {}) var_beta=({}, {}) psi=({}, {}) sigma2={} r_pix={} rho_pix={} \
             alpha0={} alpha1={} sigma2_A={} sigma2_B={} r={} rho={}",
            self.beta0,
            self.mu_beta_a,
            self.mu_beta_b,
            self.var_beta_a,
            self.var_beta_b,
            self.psi_a,
            self.psi_b,
            self.sigma2,
            self.r_pix,
            self.rho_pix,
            self.alpha0,
            self.alpha1,
            self.sigma2_a,
            self.sigma2_b,
            self.r,
            self.rho
        )
    }
}
