//! Synthetic images drawn from the full generative model: jittered B-sites,
//! A-sites displaced by the process regression, and pixel intensities with
//! correlated noise in a buffered box around each column.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{distance_matrix, exp_cov_from_distances, exp_cov_matrix, factorize, sample_mvn, ExpCovParams};
use crate::error::{Error, Result};
use crate::imaging::{round_to_pixel, squares_disjoint, window_offsets, Image};
use crate::kernel::kernel_value;
use crate::lattice::{build_geometry, unweighted_center, weighted_center, AtomSite, LatticeGeometry, SiteType};

/// Extra pixels added around each model window when drawing column intensities.
pub const BOX_BUFFER: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_b_per_side: usize,
    /// Distance between neighboring B-sites in pixels.
    pub spacing: f64,
    /// SD of B-site jitter around the grid.
    pub sigma_b: f64,
    pub beta0: f64,
    pub mu_beta_a: f64,
    pub mu_beta_b: f64,
    pub sd_beta_a: f64,
    pub sd_beta_b: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// SD of the A-site process residual.
    pub sigma_a: f64,
    pub r: f64,
    pub rho: f64,
    pub psi_a: f64,
    pub psi_b: f64,
    /// Pixel noise SD.
    pub sigma: f64,
    pub r_pix: f64,
    pub rho_pix: f64,
    pub h_a: usize,
    pub h_b: usize,
    pub background_sd: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_b_per_side: 19,
            spacing: 40.0,
            sigma_b: 0.25,
            beta0: 87.0,
            mu_beta_a: 3060.0,
            mu_beta_b: 1425.0,
            sd_beta_a: 150.0,
            sd_beta_b: 150.0,
            alpha0: -0.08,
            alpha1: -0.15,
            sigma_a: 0.4,
            r: 0.73,
            rho: 100.0,
            psi_a: 4.3,
            psi_b: 3.7,
            sigma: 140.0,
            r_pix: 0.57,
            rho_pix: 5.5,
            h_a: 6,
            h_b: 5,
            background_sd: 25.0,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("spacing", self.spacing),
            ("sigma_b", self.sigma_b),
            ("sd_beta_a", self.sd_beta_a),
            ("sd_beta_b", self.sd_beta_b),
            ("sigma_a", self.sigma_a),
            ("rho", self.rho),
            ("psi_a", self.psi_a),
            ("psi_b", self.psi_b),
            ("sigma", self.sigma),
            ("rho_pix", self.rho_pix),
            ("background_sd", self.background_sd),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("r", self.r), ("r_pix", self.r_pix)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.n_b_per_side < 2 {
            return Err(Error::Config("n_b_per_side must be at least 2".into()));
        }
        let max_h = self.h_a.max(self.h_b) as f64;
        if !(self.spacing > 2.0 * max_h + 3.0) {
            return Err(Error::Config(format!(
                "spacing {} too small for window half-widths {} and {}",
                self.spacing, self.h_a, self.h_b
            )));
        }
        Ok(())
    }

    /// True values of the scalar model parameters, under the names the
    /// samplers use for their chain columns.
    pub fn parameter_truth(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("beta0", self.beta0),
            ("mu_beta_A", self.mu_beta_a),
            ("mu_beta_B", self.mu_beta_b),
            ("var_beta_A", self.sd_beta_a * self.sd_beta_a),
            ("var_beta_B", self.sd_beta_b * self.sd_beta_b),
            ("psi_A", self.psi_a),
            ("psi_B", self.psi_b),
            ("sigma2", self.sigma * self.sigma),
            ("sigma", self.sigma),
            ("r_pix", self.r_pix),
            ("rho_pix", self.rho_pix),
            ("alpha0", self.alpha0),
            ("alpha1", self.alpha1),
            ("sigma2_A", self.sigma_a * self.sigma_a),
            ("sigma_A", self.sigma_a),
            ("sigma2_B", self.sigma_b * self.sigma_b),
            ("sigma_B", self.sigma_b),
            ("r", self.r),
            ("rho", self.rho),
        ]
    }

    /// Image side length in pixels.
    pub fn image_side(&self) -> usize {
        (self.n_b_per_side as f64 * self.spacing).round() as usize
    }

    pub fn geometry(&self) -> Result<LatticeGeometry> {
        let o = self.spacing / 2.0;
        build_geometry(self.n_b_per_side, self.spacing, [o, o])
    }
}

/// A generated image with the locations and intensities that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub image: Image,
    pub sites_a: Vec<AtomSite>,
    pub sites_b: Vec<AtomSite>,
    pub geometry: LatticeGeometry,
    pub config: SimConfig,
}

impl SyntheticDataset {
    pub fn truth(&self) -> impl Iterator<Item = &AtomSite> {
        self.sites_a.iter().chain(&self.sites_b)
    }

    pub fn locations_a(&self) -> Vec<[f64; 2]> {
        self.sites_a.iter().map(|s| s.location).collect()
    }

    pub fn locations_b(&self) -> Vec<[f64; 2]> {
        self.sites_b.iter().map(|s| s.location).collect()
    }

    pub fn intensities_b(&self) -> Vec<f64> {
        self.sites_b.iter().map(|s| s.intensity).collect()
    }

    /// `site_id,type,grid_x,grid_y,x,y,intensity`; readable as a sites file.
    pub fn truth_csv(&self) -> String {
        let mut out = String::from("site_id,type,grid_x,grid_y,x,y,intensity\n");
        for s in self.truth() {
            let g = match s.site_type {
                SiteType::A => self.geometry.a_grid_index(s.id),
                SiteType::B => self.geometry.b_grid_index(s.id),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.id, s.site_type, g[0], g[1], s.location[0], s.location[1], s.intensity
            ));
        }
        out
    }

    /// Pooled per-coordinate displacement `s_A - u` and covariate `w - u`
    /// computed from the true locations and intensities.
    pub fn true_regression_data(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        regression_pairs(&self.geometry, &self.locations_a(), &self.locations_b(), &self.intensities_b())
    }
}

/// Pooled `(delta, psi)` vectors: x-coordinates for all A-sites, then y.
pub fn regression_pairs(
    geometry: &LatticeGeometry,
    s_a: &[[f64; 2]],
    s_b: &[[f64; 2]],
    beta_b: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = geometry.n_a();
    let mut delta = vec![0.0; 2 * n];
    let mut psi = vec![0.0; 2 * n];
    for j in 0..n {
        let locs = geometry.neighbor_locations(j, s_b);
        let u = unweighted_center(&locs);
        let w = weighted_center(&locs, &geometry.neighbor_values(j, beta_b))?;
        for c in 0..2 {
            delta[c * n + j] = s_a[j][c] - u[c];
            psi[c * n + j] = w[c] - u[c];
        }
    }
    Ok((delta, psi))
}

pub fn simulate_dataset<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let geometry = cfg.geometry()?;
    let nb = geometry.n_b();
    let na = geometry.n_a();
    let normal = |rng: &mut R| -> f64 { rng.sample(StandardNormal) };

    let s_b: Vec<[f64; 2]> = geometry
        .b_grid_means()
        .iter()
        .map(|m| [m[0] + cfg.sigma_b * normal(rng), m[1] + cfg.sigma_b * normal(rng)])
        .collect();
    let beta_b: Vec<f64> = (0..nb).map(|_| cfg.mu_beta_b + cfg.sd_beta_b * normal(rng)).collect();
    let beta_a: Vec<f64> = (0..na).map(|_| cfg.mu_beta_a + cfg.sd_beta_a * normal(rng)).collect();

    // Correlated A-site residuals over the unweighted grid means, one
    // independent field per coordinate.
    let proc = ExpCovParams::new(cfg.sigma_a * cfg.sigma_a, cfg.r, cfg.rho)?;
    let proc_factor = factorize(&exp_cov_from_distances(&distance_matrix(&geometry.a_grid_means()), &proc)?)?;
    let zero = vec![0.0; na];
    let resid = [sample_mvn(&zero, &proc_factor, rng)?, sample_mvn(&zero, &proc_factor, rng)?];
    let mut s_a = Vec::with_capacity(na);
    for j in 0..na {
        let locs = geometry.neighbor_locations(j, &s_b);
        let u = unweighted_center(&locs);
        let w = weighted_center(&locs, &geometry.neighbor_values(j, &beta_b))?;
        let mut s = [0.0; 2];
        for c in 0..2 {
            s[c] = u[c] + cfg.alpha0 + cfg.alpha1 * (w[c] - u[c]) + resid[c][j];
        }
        s_a.push(s);
    }

    let side = cfg.image_side();
    let mut image = Image::filled(side, side, 0.0)?;
    for v in image.data_mut() {
        *v = cfg.beta0 + cfg.background_sd * normal(rng);
    }

    let boxes: Vec<([i64; 2], usize)> = s_a
        .iter()
        .map(|s| (round_to_pixel(*s), cfg.h_a + BOX_BUFFER))
        .chain(s_b.iter().map(|s| (round_to_pixel(*s), cfg.h_b + BOX_BUFFER)))
        .collect();
    for &(c, h) in &boxes {
        if !image.contains_square(c, h) {
            return Err(Error::Config(format!(
                "buffered box of half-width {h} at {c:?} leaves the {side}x{side} image"
            )));
        }
    }
    if !squares_disjoint(&boxes) {
        return Err(Error::Config("buffered boxes overlap; increase spacing".into()));
    }

    let noise = ExpCovParams::new(cfg.sigma * cfg.sigma, cfg.r_pix, cfg.rho_pix)?;
    for (h, psi, sites, betas) in [
        (cfg.h_a + BOX_BUFFER, cfg.psi_a, &s_a, &beta_a),
        (cfg.h_b + BOX_BUFFER, cfg.psi_b, &s_b, &beta_b),
    ] {
        let offsets = window_offsets(h);
        let rel: Vec<[f64; 2]> = offsets.iter().map(|o| [o[0] as f64, o[1] as f64]).collect();
        let factor = factorize(&exp_cov_matrix(&rel, &noise)?)?;
        let zero = vec![0.0; rel.len()];
        for (s, &beta) in sites.iter().zip(betas.iter()) {
            let c = round_to_pixel(*s);
            let eps = sample_mvn(&zero, &factor, rng)?;
            for (o, e) in offsets.iter().zip(eps) {
                let p = [c[0] + o[0], c[1] + o[1]];
                let mean = cfg.beta0 + beta * kernel_value([p[0] as f64, p[1] as f64], *s, psi);
                image.set(p[0], p[1], mean + e)?;
            }
        }
    }

    let site = |id: usize, t: SiteType, location: [f64; 2], intensity: f64| AtomSite {
        id,
        site_type: t,
        location,
        intensity,
    };
    Ok(SyntheticDataset {
        image,
        sites_a: (0..na).map(|j| site(j, SiteType::A, s_a[j], beta_a[j])).collect(),
        sites_b: (0..nb).map(|k| site(k, SiteType::B, s_b[k], beta_b[k])).collect(),
        geometry,
        config: cfg.clone(),
    })
}

/// Sample moments of the drawn quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimChecks {
    pub mean_beta_a: f64,
    pub sd_beta_a: f64,
    pub mean_beta_b: f64,
    pub sd_beta_b: f64,
    /// Root mean square of B-site offsets from their grid means, per coordinate.
    pub b_displacement_sd: f64,
    /// Pooled OLS fit of the A-site displacement on the weighted-minus-unweighted
    /// center difference, from true locations.
    pub ols_intercept: f64,
    pub ols_slope: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// Simple least-squares line `y = a + b x`.
pub fn ols_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}

pub fn empirical_checks(ds: &SyntheticDataset) -> Result<SimChecks> {
    let ba: Vec<f64> = ds.sites_a.iter().map(|s| s.intensity).collect();
    let bb = ds.intensities_b();
    let (mean_beta_a, sd_beta_a) = mean_sd(&ba);
    let (mean_beta_b, sd_beta_b) = mean_sd(&bb);
    let ss: f64 = ds
        .sites_b
        .iter()
        .zip(ds.geometry.b_grid_means())
        .map(|(s, m)| (s.location[0] - m[0]).powi(2) + (s.location[1] - m[1]).powi(2))
        .sum();
    let (delta, psi) = ds.true_regression_data()?;
    let (ols_intercept, ols_slope) = ols_line(&psi, &delta);
    Ok(SimChecks {
        mean_beta_a,
        sd_beta_a,
        mean_beta_b,
        sd_beta_b,
        b_displacement_sd: (ss / (2.0 * ds.sites_b.len() as f64)).sqrt(),
        ols_intercept,
        ols_slope,
    })
}
