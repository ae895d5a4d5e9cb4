//! Initial atom-column estimates: an intensity-weighted centroid refined by a
//! least-squares fit of a rotated anisotropic Gaussian plus background,
//!
//! `g(x, y) = A exp(-[u^2 / s1^2 + v^2 / s2^2]) + Z`,
//! `u = (x - x0) cos t + (y - y0) sin t`, `v = (x - x0) sin t - (y - y0) cos t`.
//!
//! Both quadratic terms enter with a plus sign so the surface is a peak.

use std::f64::consts::FRAC_PI_2;

use crate::covariance::{factorize, DenseMatrix};
use crate::error::{Error, Result};
use crate::imaging::Window;

const MAX_ITER: usize = 200;
const REL_RSS_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-8;
const MAX_DAMPING_RETRIES: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPeakFit {
    pub amplitude: f64,
    pub center: [f64; 2],
    /// Rotation in `[0, pi/2)`.
    pub theta: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub background: f64,
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Intensity-weighted centroid after subtracting the window minimum.
pub fn weighted_centroid(w: &Window) -> Result<[f64; 2]> {
    let min = w.intensities.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    let mut c = [0.0; 2];
    for (p, &v) in w.coords.iter().zip(&w.intensities) {
        let wt = v - min;
        total += wt;
        c[0] += wt * p[0];
        c[1] += wt * p[1];
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateWindow(
            "window intensities are constant; centroid undefined".into(),
        ));
    }
    Ok([c[0] / total, c[1] / total])
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / n as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Outcome of a damped Gauss-Newton run.
struct LmOutcome {
    params: Vec<f64>,
    rss: f64,
    converged: bool,
    iterations: usize,
}

/// Levenberg-Marquardt with multiplicative damping. `eval` fills residuals
/// (model minus data) and the row-major Jacobian for the given parameters.
/// `step_scale` selects the parameters whose step norm gates convergence.
fn levenberg_marquardt<F>(p0: Vec<f64>, n_obs: usize, step_gate: &[usize], mut eval: F) -> Result<LmOutcome>
where
    F: FnMut(&[f64], &mut [f64], Option<&mut [f64]>),
{
    let k = p0.len();
    let mut p = p0;
    let mut res = vec![0.0; n_obs];
    let mut jac = vec![0.0; n_obs * k];
    eval(&p, &mut res, Some(&mut jac));
    let mut rss: f64 = res.iter().map(|r| r * r).sum();
    if !rss.is_finite() {
        return Err(Error::PeakFit("non-finite residuals at the initial point".into()));
    }
    let mut lambda = 1e-3;
    let mut cand_res = vec![0.0; n_obs];
    for iter in 1..=MAX_ITER {
        let mut jtj = vec![0.0; k * k];
        let mut jtr = vec![0.0; k];
        for o in 0..n_obs {
            let row = &jac[o * k..(o + 1) * k];
            for a in 0..k {
                jtr[a] += row[a] * res[o];
                for b in a..k {
                    jtj[a * k + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                jtj[a * k + b] = jtj[b * k + a];
            }
        }
        let max_diag = (0..k).map(|a| jtj[a * k + a]).fold(0.0f64, f64::max).max(1e-300);
        let mut accepted = false;
        for _ in 0..MAX_DAMPING_RETRIES {
            let mut a = jtj.clone();
            for d in 0..k {
                a[d * k + d] += lambda * (jtj[d * k + d] + 1e-9 * max_diag);
            }
            let step = DenseMatrix::from_row_major(k, a)
                .and_then(|m| factorize(&m))
                .and_then(|f| f.solve(&jtr.iter().map(|v| -v).collect::<Vec<_>>()));
            let Ok(step) = step else {
                lambda *= 10.0;
                continue;
            };
            let cand: Vec<f64> = p.iter().zip(&step).map(|(a, b)| a + b).collect();
            eval(&cand, &mut cand_res, None);
            let cand_rss: f64 = cand_res.iter().map(|r| r * r).sum();
            if cand_rss.is_finite() && cand_rss <= rss {
                let rel = (rss - cand_rss) / rss.max(1e-300);
                let gate = step_gate.iter().map(|&i| step[i] * step[i]).sum::<f64>().sqrt();
                let full = step.iter().map(|s| s * s).sum::<f64>().sqrt();
                p = cand;
                rss = cand_rss;
                eval(&p, &mut res, Some(&mut jac));
                lambda = (lambda * 0.3).max(1e-15);
                accepted = true;
                if (rel < REL_RSS_TOL && gate < STEP_TOL && full < 1e-6) || rss == 0.0 {
                    return Ok(LmOutcome {
                        params: p,
                        rss,
                        converged: true,
                        iterations: iter,
                    });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No damped step reduces the RSS: a stationary point at working
            // precision.
            let grad = jtr.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Ok(LmOutcome {
                params: p,
                rss,
                converged: grad.is_finite() && lambda > 1e10,
                iterations: iter,
            });
        }
    }
    Ok(LmOutcome {
        params: p,
        rss,
        converged: false,
        iterations: MAX_ITER,
    })
}

/// Evaluates the rotated Gaussian at the window pixels for parameters
/// `[A, x0, y0, theta, ln s1, ln s2, Z]`.
fn peak_eval(coords: &[[f64; 2]], data: &[f64], p: &[f64], res: &mut [f64], jac: Option<&mut [f64]>) {
    let (amp, x0, y0, th) = (p[0], p[1], p[2], p[3]);
    let (s1, s2, z) = (p[4].exp(), p[5].exp(), p[6]);
    let (c, s) = (th.cos(), th.sin());
    let (i1, i2) = (1.0 / (s1 * s1), 1.0 / (s2 * s2));
    match jac {
        None => {
            for ((r, q), &y) in res.iter_mut().zip(coords).zip(data) {
                let (dx, dy) = (q[0] - x0, q[1] - y0);
                let u = dx * c + dy * s;
                let v = dx * s - dy * c;
                *r = amp * (-(u * u * i1 + v * v * i2)).exp() + z - y;
            }
        }
        Some(jac) => {
            for (o, (q, &y)) in coords.iter().zip(data).enumerate() {
                let (dx, dy) = (q[0] - x0, q[1] - y0);
                let u = dx * c + dy * s;
                let v = dx * s - dy * c;
                let e = (-(u * u * i1 + v * v * i2)).exp();
                res[o] = amp * e + z - y;
                let ae = -amp * e;
                let row = &mut jac[o * 7..(o + 1) * 7];
                row[0] = e;
                row[1] = ae * (-2.0 * u * i1 * c - 2.0 * v * i2 * s);
                row[2] = ae * (-2.0 * u * i1 * s + 2.0 * v * i2 * c);
                row[3] = ae * 2.0 * u * v * (i2 - i1);
                row[4] = ae * (-2.0 * u * u * i1);
                row[5] = ae * (-2.0 * v * v * i2);
                row[6] = 1.0;
            }
        }
    }
}

/// Wraps `theta` into `[0, pi/2)`, swapping the axis widths on each
/// quarter-turn so the ellipse is unchanged.
fn canonical_orientation(theta: f64, s1: f64, s2: f64) -> (f64, f64, f64) {
    let k = (theta / FRAC_PI_2).floor();
    let mut t = theta - k * FRAC_PI_2;
    if t >= FRAC_PI_2 {
        t -= FRAC_PI_2;
    }
    if (k as i64).rem_euclid(2) == 1 {
        (t.max(0.0), s2, s1)
    } else {
        (t.max(0.0), s1, s2)
    }
}

/// Nonlinear least-squares fit of the rotated Gaussian to a window.
pub fn fit_gaussian_peak(w: &Window) -> Result<GaussianPeakFit> {
    let data = &w.intensities;
    let z0 = median(data) - sample_sd(data);
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let a0 = max - z0;
    let centroid = weighted_centroid(w);
    let (Ok(c0), true) = (centroid, a0 > 0.0) else {
        return Ok(GaussianPeakFit {
            amplitude: 0.0,
            center: [w.center[0] as f64, w.center[1] as f64],
            theta: 0.0,
            sigma1: f64::NAN,
            sigma2: f64::NAN,
            background: median(data),
            rss: data.iter().map(|v| (v - median(data)).powi(2)).sum(),
            converged: false,
            iterations: 0,
        });
    };
    let sigma0 = (w.half_width as f64 / 2.0).max(1.0);
    let p0 = vec![a0, c0[0], c0[1], 0.0, sigma0.ln(), sigma0.ln(), z0];
    let coords = &w.coords;
    let out = levenberg_marquardt(p0, data.len(), &[1, 2], |p, res, jac| {
        peak_eval(coords, data, p, res, jac)
    })?;
    let p = out.params;
    let (theta, s1, s2) = canonical_orientation(p[3], p[4].exp(), p[5].exp());
    Ok(GaussianPeakFit {
        amplitude: p[0],
        center: [p[1], p[2]],
        theta,
        sigma1: s1,
        sigma2: s2,
        background: p[6],
        rss: out.rss,
        converged: out.converged,
        iterations: out.iterations,
    })
}

/// Evaluates the fitted surface at a point.
pub fn peak_value(fit: &GaussianPeakFit, p: [f64; 2]) -> f64 {
    let (c, s) = (fit.theta.cos(), fit.theta.sin());
    let (dx, dy) = (p[0] - fit.center[0], p[1] - fit.center[1]);
    let u = dx * c + dy * s;
    let v = dx * s - dy * c;
    fit.amplitude * (-(u * u / fit.sigma1.powi(2) + v * v / fit.sigma2.powi(2))).exp() + fit.background
}

/// A mean trace through the window centers with its 1-D Gaussian fit.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceFit {
    pub offsets: Vec<f64>,
    pub mean: Vec<f64>,
    pub fitted: Vec<f64>,
    pub amplitude: f64,
    pub center: f64,
    pub sd: f64,
    pub background: f64,
    /// Pearson correlation of mean and fitted trace; `None` when undefined.
    pub correlation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceDiagnostic {
    pub horizontal: TraceFit,
    pub vertical: TraceFit,
}

/// Mean horizontal and vertical traces through the central row and column of
/// equally sized windows, each with a fitted 1-D Gaussian.
pub fn trace_diagnostic(windows: &[Window]) -> Result<TraceDiagnostic> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Domain("trace diagnostic needs at least one window".into()))?;
    let h = first.half_width;
    if windows.iter().any(|w| w.half_width != h) {
        return Err(Error::Domain("trace diagnostic needs equally sized windows".into()));
    }
    let side = 2 * h + 1;
    let mut horiz = vec![0.0; side];
    let mut vert = vec![0.0; side];
    for w in windows {
        for k in 0..side {
            horiz[k] += w.intensities[h * side + k];
            vert[k] += w.intensities[k * side + h];
        }
    }
    let n = windows.len() as f64;
    horiz.iter_mut().for_each(|v| *v /= n);
    vert.iter_mut().for_each(|v| *v /= n);
    let offsets: Vec<f64> = (0..side).map(|k| k as f64 - h as f64).collect();
    Ok(TraceDiagnostic {
        horizontal: fit_trace(&offsets, horiz)?,
        vertical: fit_trace(&offsets, vert)?,
    })
}

fn fit_trace(offsets: &[f64], mean: Vec<f64>) -> Result<TraceFit> {
    let min = mean.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Ok(TraceFit {
            offsets: offsets.to_vec(),
            fitted: mean.clone(),
            mean,
            amplitude: 0.0,
            center: 0.0,
            sd: f64::NAN,
            background: min,
            correlation: None,
        });
    }
    let peak = mean
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| offsets[i])
        .unwrap_or(0.0);
    let span = offsets.len() as f64;
    let p0 = vec![max - min, peak, (span / 4.0).max(1.0).ln(), min];
    let eval = |p: &[f64], res: &mut [f64], jac: Option<&mut [f64]>| {
        let (a, m, s, c) = (p[0], p[1], p[2].exp(), p[3]);
        let inv = 1.0 / (s * s);
        let mut jac = jac;
        for (o, (&x, &y)) in offsets.iter().zip(&mean).enumerate() {
            let d = x - m;
            let e = (-0.5 * d * d * inv).exp();
            res[o] = a * e + c - y;
            if let Some(j) = jac.as_deref_mut() {
                j[o * 4] = e;
                j[o * 4 + 1] = a * e * d * inv;
                j[o * 4 + 2] = a * e * d * d * inv;
                j[o * 4 + 3] = 1.0;
            }
        }
    };
    let out = levenberg_marquardt(p0, mean.len(), &[1], eval)?;
    let p = out.params;
    let s = p[2].exp();
    let fitted: Vec<f64> = offsets
        .iter()
        .map(|&x| p[0] * (-0.5 * (x - p[1]).powi(2) / (s * s)).exp() + p[3])
        .collect();
    Ok(TraceFit {
        offsets: offsets.to_vec(),
        correlation: pearson(&mean, &fitted),
        mean,
        fitted,
        amplitude: p[0],
        center: p[1],
        sd: s,
        background: p[3],
    })
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}
