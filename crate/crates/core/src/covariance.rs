//! Exponential covariance with nugget, dense Cholesky factors, and empirical
//! variograms.
//!
//! The covariance between two points at distance `d` is
//! `sigma2 * ((1 - r) * 1{d == 0} + r * exp(-d / rho))`. The same family is
//! used for pixel noise inside a window and for A-site displacement residuals.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the exponential covariance with nugget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpCovParams {
    /// Total variance.
    pub sigma2: f64,
    /// Proportion of the variance that is spatial.
    pub r: f64,
    /// Spatial range in pixels.
    pub rho: f64,
}

impl ExpCovParams {
    pub fn new(sigma2: f64, r: f64, rho: f64) -> Result<Self> {
        let p = ExpCovParams { sigma2, r, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::Domain(format!("sigma2 must be > 0, got {}", self.sigma2)));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::Domain(format!("r must lie in [0, 1], got {}", self.r)));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::Domain(format!("rho must be > 0, got {}", self.rho)));
        }
        Ok(())
    }

    /// Covariance at distance `d` between two distinct points.
    #[inline]
    pub fn cov_at(&self, d: f64) -> f64 {
        self.sigma2 * self.r * (-d / self.rho).exp()
    }

    /// Semivariance `sigma2 * (1 - r * exp(-d / rho))` for `d > 0`.
    #[inline]
    pub fn semivariance(&self, d: f64) -> f64 {
        self.sigma2 * (1.0 - self.r * (-d / self.rho).exp())
    }
}

/// Square row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Domain(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(DenseMatrix { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| dot(self.row(i), v))
            .collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize the loop.
    let n = a.len().min(b.len());
    let (ca, cb) = (a[..n].chunks_exact(4), b[..n].chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0; 4];
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Euclidean distance matrix of a coordinate list.
pub fn distance_matrix(coords: &[[f64; 2]]) -> DenseMatrix {
    let n = coords.len();
    let mut m = DenseMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let d = (dx * dx + dy * dy).sqrt();
            m.set(i, j, d);
            m.set(j, i, d);
        }
    }
    m
}

/// Exponential covariance matrix from a precomputed distance matrix.
pub fn exp_cov_from_distances(dist: &DenseMatrix, params: &ExpCovParams) -> Result<DenseMatrix> {
    params.validate()?;
    let n = dist.dim();
    let mut m = DenseMatrix::zeros(n);
    for i in 0..n {
        m.set(i, i, params.sigma2);
        for j in (i + 1)..n {
            let c = params.cov_at(dist.get(i, j));
            m.set(i, j, c);
            m.set(j, i, c);
        }
    }
    Ok(m)
}

/// Covariance matrix of the exponential model with nugget at `coords`.
pub fn exp_cov_matrix(coords: &[[f64; 2]], params: &ExpCovParams) -> Result<DenseMatrix> {
    if coords.is_empty() {
        return Err(Error::Domain("coordinate list is empty".into()));
    }
    if coords.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(Error::Domain("coordinates must be finite".into()));
    }
    exp_cov_from_distances(&distance_matrix(coords), params)
}

/// Lower Cholesky factor `L` with `L * L^T = C`.
#[derive(Clone, Debug)]
pub struct CovFactor {
    n: usize,
    lower: Vec<f64>,
    log_det: f64,
}

/// Cholesky factorization of a symmetric matrix.
pub fn factorize(cov: &DenseMatrix) -> Result<CovFactor> {
    let n = cov.dim();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = cov.get(i, j) - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let log_det = 2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>();
    Ok(CovFactor {
        n,
        lower: l,
        log_det,
    })
}

impl CovFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::Domain(format!(
                "vector length {len} does not match factor dimension {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Overwrites `b` with `L^{-1} b`.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            let s = b[i] - dot(row, &b[..i]);
            b[i] = s / self.lower[i * n + i];
        }
    }

    /// Overwrites `b` with `L^{-T} b`.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            b[i] /= self.lower[i * n + i];
            let bi = b[i];
            for k in 0..i {
                b[k] -= self.lower[i * n + k] * bi;
            }
        }
    }

    /// `L^{-1} v`, the whitened vector.
    pub fn whiten(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        let mut z = v.to_vec();
        self.solve_lower_in_place(&mut z);
        Ok(z)
    }

    /// `v^T C^{-1} v` through one triangular solve.
    pub fn quad_form(&self, v: &[f64]) -> Result<f64> {
        let z = self.whiten(v)?;
        Ok(dot(&z, &z))
    }

    /// `u^T C^{-1} v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let zu = self.whiten(u)?;
        let zv = self.whiten(v)?;
        Ok(dot(&zu, &zv))
    }

    /// `C^{-1} v`.
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.whiten(v)?;
        self.solve_upper_in_place(&mut z);
        Ok(z)
    }

    /// `L v`.
    pub fn lower_mul(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| dot(&self.lower[i * n..i * n + i + 1], &v[..=i]))
            .collect()
    }

    /// Dense precision matrix `C^{-1}`, used where many sparse quadratic-form
    /// increments are needed against the same covariance.
    pub fn precision(&self) -> DenseMatrix {
        let n = self.n;
        // Columns of L^{-1}.
        let mut linv = vec![0.0; n * n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            self.solve_lower_in_place(&mut e);
            for i in 0..n {
                linv[i * n + j] = e[i];
            }
        }
        let mut p = DenseMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                // (L^{-T} L^{-1})_{ij} = sum_k Linv[k,i] Linv[k,j]; Linv is lower.
                let mut s = 0.0;
                for k in j..n {
                    s += linv[k * n + i] * linv[k * n + j];
                }
                p.set(i, j, s);
                p.set(j, i, s);
            }
        }
        p
    }
}

/// Draws `mean + L z` with `z` standard normal.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &[f64], factor: &CovFactor, rng: &mut R) -> Result<Vec<f64>> {
    factor.check_len(mean.len())?;
    let z: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
    let lz = factor.lower_mul(&z);
    Ok(mean.iter().zip(lz).map(|(m, d)| m + d).collect())
}

/// Classical (Matheron) empirical semivariogram.
#[derive(Clone, Debug, PartialEq)]
pub struct VariogramEstimate {
    /// Mean pair distance in each bin; the bin midpoint for empty bins.
    pub bin_centers: Vec<f64>,
    /// `None` for bins without pairs.
    pub semivariances: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

/// Half the largest pairwise distance, the default variogram cutoff.
pub fn default_max_dist(coords: &[[f64; 2]]) -> f64 {
    let mut max = 0.0f64;
    for i in 0..coords.len() {
        for j in (i + 1)..coords.len() {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            max = max.max((dx * dx + dy * dy).sqrt());
        }
    }
    max / 2.0
}

pub const DEFAULT_VARIOGRAM_BINS: usize = 15;

pub fn empirical_variogram(
    coords: &[[f64; 2]],
    residuals: &[f64],
    n_bins: usize,
    max_dist: f64,
) -> Result<VariogramEstimate> {
    if coords.len() != residuals.len() {
        return Err(Error::Domain("coords and residuals differ in length".into()));
    }
    if coords.len() < 2 {
        return Err(Error::Domain("variogram needs at least two points".into()));
    }
    if !(max_dist > 0.0) || n_bins == 0 {
        return Err(Error::Domain("variogram needs max_dist > 0 and at least one bin".into()));
    }
    let width = max_dist / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut dists = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for i in 0..coords.len() {
        for j in (i + 1)..coords.len() {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let d = (dx * dx + dy * dy).sqrt();
            if d > max_dist {
                continue;
            }
            let bin = ((d / width) as usize).min(n_bins - 1);
            let diff = residuals[i] - residuals[j];
            sums[bin] += diff * diff;
            dists[bin] += d;
            counts[bin] += 1;
        }
    }
    // Pairs crowd toward the far edge of each bin, so the midpoint would
    // understate the lag at which each semivariance is measured.
    let bin_centers = (0..n_bins)
        .map(|k| match counts[k] {
            0 => (k as f64 + 0.5) * width,
            c => dists[k] / c as f64,
        })
        .collect();
    let semivariances = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / (2.0 * c as f64)))
        .collect();
    Ok(VariogramEstimate {
        bin_centers,
        semivariances,
        counts,
    })
}

const VARIOGRAM_MAX_ITER: usize = 500;

/// Pair-count weighted least-squares fit of the exponential semivariogram
/// `sigma2 * (1 - r * exp(-d / rho))`.
///
/// The range is confined to the largest lag: past it the curve is a straight
/// ramp over the bins and the range is not identified.
pub fn fit_exp_variogram(vg: &VariogramEstimate) -> Result<ExpCovParams> {
    let pts: Vec<(f64, f64, f64)> = vg
        .bin_centers
        .iter()
        .zip(&vg.semivariances)
        .zip(&vg.counts)
        .filter_map(|((&d, g), &c)| g.map(|g| (d, g, c as f64)))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Domain(format!(
            "variogram fit needs at least 3 non-empty bins, got {}",
            pts.len()
        )));
    }
    let g_max = pts.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let d_max = pts.iter().map(|p| p.0).fold(f64::MIN, f64::max);
    if !(g_max > 0.0) {
        return Err(Error::Domain("variogram is identically zero".into()));
    }
    let tail = {
        let k = pts.len().min(3);
        pts[pts.len() - k..].iter().map(|p| p.1).sum::<f64>() / k as f64
    };
    let sill0 = tail.max(1e-12);
    let r0 = (1.0 - pts[0].1 / sill0).clamp(0.05, 0.95);

    let mut best: Option<(f64, [f64; 3], bool, usize)> = None;
    for frac in [0.05, 0.15, 0.4, 0.8] {
        let start = [sill0.ln(), logit(r0), logit(frac)];
        let (theta, obj, converged, iters) = lm_variogram(&pts, d_max, start);
        if obj.is_finite() && best.as_ref().map_or(true, |b| obj < b.0) {
            best = Some((obj, theta, converged, iters));
        }
    }
    let (_, theta, converged, iters) = best.expect("at least one start evaluated");
    let params = ExpCovParams {
        sigma2: theta[0].exp(),
        r: logistic(theta[1]),
        rho: d_max * logistic(theta[2]),
    };
    if !converged {
        return Err(Error::VariogramFit {
            iterations: iters,
            best: params,
        });
    }
    Ok(params)
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn variogram_objective(pts: &[(f64, f64, f64)], rho_max: f64, theta: &[f64; 3]) -> f64 {
    let s = theta[0].exp();
    let r = logistic(theta[1]);
    let rho = rho_max * logistic(theta[2]);
    pts.iter()
        .map(|&(d, g, w)| {
            let res = s * (1.0 - r * (-d / rho).exp()) - g;
            w * res * res
        })
        .sum()
}

/// Levenberg-Marquardt on (log sigma2, logit r, logit rho / rho_max).
fn lm_variogram(pts: &[(f64, f64, f64)], rho_max: f64, start: [f64; 3]) -> ([f64; 3], f64, bool, usize) {
    let mut theta = start;
    let mut obj = variogram_objective(pts, rho_max, &theta);
    let mut lambda = 1e-3;
    for iter in 0..VARIOGRAM_MAX_ITER {
        let s = theta[0].exp();
        let r = logistic(theta[1]);
        let q = logistic(theta[2]);
        let rho = rho_max * q;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(d, g, w) in pts {
            let e = (-d / rho).exp();
            let model = s * (1.0 - r * e);
            let res = model - g;
            let jac = [model, -s * e * r * (1.0 - r), -s * r * e * d / rho * (1.0 - q)];
            for a in 0..3 {
                jtr[a] += w * jac[a] * res;
                for b in 0..3 {
                    jtj[a][b] += w * jac[a] * jac[b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..60 {
            let mut a = jtj;
            for k in 0..3 {
                a[k][k] += lambda * jtj[k][k].max(1e-12);
            }
            let Some(step) = solve3(a, [-jtr[0], -jtr[1], -jtr[2]]) else {
                lambda *= 10.0;
                continue;
            };
            let cand = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]];
            let cand_obj = variogram_objective(pts, rho_max, &cand);
            if cand_obj.is_finite() && cand_obj <= obj {
                let rel = (obj - cand_obj) / obj.max(1e-300);
                let step_norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
                theta = cand;
                obj = cand_obj;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                // A flat objective also ends the search: against the range
                // bound the transformed step never shrinks.
                if (rel < 1e-12 && step_norm < 1e-8) || rel < 1e-15 || obj < 1e-28 {
                    return (theta, obj, true, iter + 1);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No descent direction left: at a (possibly boundary) minimum.
            let grad = jtr.iter().map(|v| v * v).sum::<f64>().sqrt();
            let converged = grad <= 1e-6 * obj.max(1e-300).sqrt().max(1e-12) || lambda > 1e10;
            return (theta, obj, converged, iter + 1);
        }
    }
    (theta, obj, false, VARIOGRAM_MAX_ITER)
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let m = DenseMatrix::from_row_major(3, a.iter().flatten().copied().collect()).ok()?;
    let f = factorize(&m).ok()?;
    let x = f.solve(&b).ok()?;
    Some([x[0], x[1], x[2]])
}
