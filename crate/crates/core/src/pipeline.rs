//! Image to posterior: peak fits around approximate centers, lattice fit,
//! model windows around the fitted centers, then the selected samplers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::{build_baseline_data, run_simple_lr, run_spatial_lr, BaselineData, BaselineOptions};
use crate::detect::{fit_gaussian_peak, GaussianPeakFit};
use crate::error::{Error, Result};
use crate::hier::{initialize, run_hier_mcmc, HierData, HierOptions, HierOutput, HierPriors, OlsSummary};
use crate::imaging::{extract_window, round_to_pixel, Image, Window};
use crate::lattice::{LatticeGeometry, SiteType};
use crate::mcmc::{Chain, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Hier,
    Simple,
    Spatial,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Hier => "hier",
            Model::Simple => "simple",
            Model::Spatial => "spatial",
        })
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "hier" => Ok(Model::Hier),
            "simple" => Ok(Model::Simple),
            "spatial" => Ok(Model::Spatial),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected hier, simple or spatial)"
            ))),
        }
    }
}

/// Peak fits for every site, indexed by site id.
#[derive(Clone, Debug)]
pub struct Detection {
    pub fits_a: Vec<GaussianPeakFit>,
    pub fits_b: Vec<GaussianPeakFit>,
}

fn fit_all(img: &Image, approx: &[[f64; 2]], h: usize) -> Result<Vec<GaussianPeakFit>> {
    approx
        .iter()
        .map(|p| fit_gaussian_peak(&extract_window(img, round_to_pixel(*p), h)?))
        .collect()
}

/// Fits a peak in a window of half-width `h_a` or `h_b` around each
/// approximate center.
pub fn detect_sites(img: &Image, approx_a: &[[f64; 2]], approx_b: &[[f64; 2]], h_a: usize, h_b: usize) -> Result<Detection> {
    Ok(Detection {
        fits_a: fit_all(img, approx_a, h_a)?,
        fits_b: fit_all(img, approx_b, h_b)?,
    })
}

impl Detection {
    /// `site_id,type,x0,y0,A,Z,theta,sigma1,sigma2,rss,converged`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("site_id,type,x0,y0,A,Z,theta,sigma1,sigma2,rss,converged\n");
        for (t, fits) in [(SiteType::A, &self.fits_a), (SiteType::B, &self.fits_b)] {
            for (i, f) in fits.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{}\n",
                    i, t, f.center[0], f.center[1], f.amplitude, f.background, f.theta, f.sigma1, f.sigma2, f.rss, f.converged
                ));
            }
        }
        out
    }

    /// Lattice fitted to the B-site centers, falling back to the approximate
    /// center where a fit failed.
    pub fn fit_geometry(&self, n_b_per_side: usize, approx_b: &[[f64; 2]], h_b: usize) -> Result<LatticeGeometry> {
        let n = n_b_per_side;
        let pts: Vec<([usize; 2], [f64; 2])> = start_locations(&self.fits_b, approx_b, h_b)
            .into_iter()
            .enumerate()
            .map(|(k, c)| ([k % n, k / n], c))
            .collect();
        LatticeGeometry::fit_to_b_sites(n, &pts)
    }

    /// Mean fitted kernel bandwidth per type. The peak shape has no factor of
    /// two in its exponent, so `sigma = sqrt(2) * psi`.
    pub fn bandwidths(&self) -> Result<[f64; 2]> {
        let bw = |fits: &[GaussianPeakFit]| -> Result<f64> {
            let v: Vec<f64> = fits
                .iter()
                .filter(|f| f.converged && f.sigma1.is_finite() && f.sigma2.is_finite())
                .map(|f| (f.sigma1 * f.sigma2).sqrt() / std::f64::consts::SQRT_2)
                .collect();
            if v.is_empty() {
                return Err(Error::PeakFit("no converged peak fits to start bandwidths".into()));
            }
            Ok(v.iter().sum::<f64>() / v.len() as f64)
        };
        Ok([bw(&self.fits_a)?, bw(&self.fits_b)?])
    }
}

/// Fitted center when the fit converged inside its detection window,
/// otherwise the approximate center.
fn start_locations(fits: &[GaussianPeakFit], approx: &[[f64; 2]], h: usize) -> Vec<[f64; 2]> {
    fits.iter()
        .zip(approx)
        .map(|(f, a)| {
            let c = round_to_pixel(*a);
            let inside = (f.center[0] - c[0] as f64).abs() <= h as f64 && (f.center[1] - c[1] as f64).abs() <= h as f64;
            if f.converged && inside {
                f.center
            } else {
                *a
            }
        })
        .collect()
}

fn model_windows(img: &Image, locs: &[[f64; 2]], h: usize) -> Result<Vec<Window>> {
    locs.iter()
        .enumerate()
        .map(|(i, s)| Ok(extract_window(img, round_to_pixel(*s), h)?.with_site(i)))
        .collect()
}

/// Settings for one end-to-end fit.
#[derive(Clone, Debug)]
pub struct FitSettings {
    pub h_a: usize,
    pub h_b: usize,
    pub schedule: Schedule,
    pub priors: HierPriors,
    /// Replace the intensity hyperpriors with the least-squares grounding.
    pub ground_hyperpriors: bool,
    /// Multiplier on the grounded intensity-variance hyperprior scale.
    pub hyper_variance_factor: f64,
    pub hier: HierOptions,
    pub baseline: BaselineOptions,
    /// Error on any unconverged peak fit instead of dropping affected sites.
    pub strict: bool,
}

impl FitSettings {
    /// Default window sizes, vague priors with grounded intensity
    /// hyperpriors, and default sampler options.
    pub fn new(schedule: Schedule) -> Self {
        FitSettings {
            h_a: 6,
            h_b: 5,
            schedule,
            priors: HierPriors::default(),
            ground_hyperpriors: true,
            hyper_variance_factor: 1.0,
            hier: HierOptions::default(),
            baseline: BaselineOptions::default(),
            strict: false,
        }
    }
}

/// Everything produced by one fit.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub detection: Detection,
    pub geometry: LatticeGeometry,
    pub hier: Option<HierOutput>,
    pub ols: Option<OlsSummary>,
    pub baseline_data: Option<BaselineData>,
    pub chains: Vec<(Model, Chain)>,
}

impl PipelineOutput {
    pub fn chain(&self, model: Model) -> Option<&Chain> {
        self.chains.iter().find(|(m, _)| *m == model).map(|(_, c)| c)
    }
}

/// Detects columns around the approximate centers and fits the requested
/// models.
pub fn run_pipeline(
    img: &Image,
    n_b_per_side: usize,
    approx_a: &[[f64; 2]],
    approx_b: &[[f64; 2]],
    models: &[Model],
    settings: &FitSettings,
) -> Result<PipelineOutput> {
    let detection = detect_sites(img, approx_a, approx_b, settings.h_a, settings.h_b)?;
    let geometry = detection.fit_geometry(n_b_per_side, approx_b, settings.h_b)?;
    if geometry.n_a() != approx_a.len() {
        return Err(Error::Structure(format!(
            "{} approximate A-sites for a grid with {}",
            approx_a.len(),
            geometry.n_a()
        )));
    }
    let mut out = PipelineOutput {
        detection,
        geometry,
        hier: None,
        ols: None,
        baseline_data: None,
        chains: Vec::new(),
    };
    for &model in models {
        match model {
            Model::Hier => {
                let s_a = start_locations(&out.detection.fits_a, approx_a, settings.h_a);
                let s_b = start_locations(&out.detection.fits_b, approx_b, settings.h_b);
                let data = HierData::new(
                    model_windows(img, &s_a, settings.h_a)?,
                    model_windows(img, &s_b, settings.h_b)?,
                    out.geometry.clone(),
                )?;
                let psi = out.detection.bandwidths()?;
                let (init, ols) = initialize(&data, &s_a, &s_b, psi)?;
                let priors = if settings.ground_hyperpriors {
                    settings.priors.clone().grounded_scaled(&ols, settings.hyper_variance_factor)
                } else {
                    settings.priors.clone()
                };
                let res = run_hier_mcmc(&data, &priors, init, &settings.hier, &settings.schedule)?;
                out.chains.push((Model::Hier, res.chain.clone()));
                out.hier = Some(res);
                out.ols = Some(ols);
            }
            Model::Simple | Model::Spatial => {
                if out.baseline_data.is_none() {
                    out.baseline_data = Some(build_baseline_data(
                        &out.detection.fits_a,
                        &out.detection.fits_b,
                        &out.geometry,
                        settings.strict,
                    )?);
                }
                let bd = out.baseline_data.as_ref().expect("set above");
                let chain = if model == Model::Simple {
                    run_simple_lr(bd, &settings.baseline, &settings.schedule)?
                } else {
                    run_spatial_lr(bd, &settings.baseline, &settings.schedule)?
                };
                out.chains.push((model, chain));
            }
        }
    }
    Ok(out)
}
