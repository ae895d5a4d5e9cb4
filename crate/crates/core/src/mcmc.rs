//! Shared MCMC plumbing: run schedules, conjugate draw helpers, adaptive
//! random-walk step sizes, stored chains and their summaries.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::harness::hpd_interval;

/// Iteration counts for one chain. `n_iter` includes the burn-in.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Schedule {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Schedule {
    pub fn new(n_iter: usize, burn_in: usize, thin: usize, seed: u64) -> Result<Self> {
        let s = Schedule {
            n_iter,
            burn_in,
            thin,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("schedule.thin must be at least 1".into()));
        }
        if self.n_iter <= self.burn_in {
            return Err(Error::Config(format!(
                "schedule.n_iter ({}) must exceed schedule.burn_in ({})",
                self.n_iter, self.burn_in
            )));
        }
        Ok(())
    }

    /// Number of stored draws.
    pub fn n_kept(&self) -> usize {
        (self.n_iter - self.burn_in).div_ceil(self.thin)
    }

    /// Whether iteration `it` (0-based) is stored.
    pub fn keeps(&self, it: usize) -> bool {
        it >= self.burn_in && (it - self.burn_in) % self.thin == 0
    }
}

/// Normal distribution given by mean and variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalParams {
    pub mean: f64,
    pub var: f64,
}

impl NormalParams {
    /// From the precision `v` and the linear term `m` of a Gaussian kernel
    /// `exp(-v x^2 / 2 + m x)`.
    pub fn from_canonical(m: f64, v: f64) -> Self {
        NormalParams { mean: m / v, var: 1.0 / v }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.var.sqrt() * z
    }
}

/// Inverse-gamma distribution with shape and rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvGammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl InvGammaParams {
    pub fn mean(&self) -> f64 {
        self.rate / (self.shape - 1.0)
    }

    pub fn variance(&self) -> f64 {
        self.rate * self.rate / ((self.shape - 1.0).powi(2) * (self.shape - 2.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.shape, 1.0).expect("inverse-gamma shape must be positive");
        let x: f64 = g.sample(rng);
        // Very small shapes can underflow the gamma draw; clamp so the
        // variance stays finite.
        self.rate / x.max(1e-300)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln() - self.rate / x
    }
}

/// Lanczos approximation of `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Random-walk scale tuned in batches during burn-in and frozen afterwards.
#[derive(Clone, Debug)]
pub struct RwStep {
    pub scale: f64,
    batch_accepted: usize,
    batch_proposed: usize,
    frozen: bool,
    accepted: usize,
    proposed: usize,
}

const ADAPT_BATCH: usize = 50;
const TARGET_LOW: f64 = 0.30;
const TARGET_HIGH: f64 = 0.45;

impl RwStep {
    pub fn new(scale: f64) -> Self {
        RwStep {
            scale,
            batch_accepted: 0,
            batch_proposed: 0,
            frozen: false,
            accepted: 0,
            proposed: 0,
        }
    }

    /// Records one proposal outcome. Counts toward the reported rate only
    /// once frozen.
    pub fn record(&mut self, accepted: bool) {
        if self.frozen {
            self.proposed += 1;
            self.accepted += accepted as usize;
            return;
        }
        self.batch_proposed += 1;
        self.batch_accepted += accepted as usize;
        if self.batch_proposed == ADAPT_BATCH {
            let rate = self.batch_accepted as f64 / ADAPT_BATCH as f64;
            if rate < TARGET_LOW {
                self.scale *= (0.5 + rate / TARGET_LOW * 0.5).max(0.5);
            } else if rate > TARGET_HIGH {
                self.scale *= 1.0 + (rate - TARGET_HIGH) / (1.0 - TARGET_HIGH);
            }
            self.batch_proposed = 0;
            self.batch_accepted = 0;
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Post-burn-in acceptance rate; `None` before any frozen proposal.
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

/// Metropolis accept/reject on a log ratio.
pub fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if !log_ratio.is_finite() {
        return false;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// Welford running mean and variance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningMoments {
    pub n: usize,
    pub mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn sd(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        (self.m2 / (self.n - 1) as f64).sqrt()
    }
}

/// Posterior summary of one scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub hpd: Option<(f64, f64)>,
}

/// Stored draws for a set of named scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    pub burn_in: usize,
    pub n_iter: usize,
    pub thin: usize,
    pub seed: u64,
    /// Post-burn-in acceptance rate per Metropolis block.
    pub acceptance: Vec<(String, f64)>,
}

impl Chain {
    pub fn new(names: Vec<String>, schedule: &Schedule) -> Self {
        let cap = schedule.n_kept();
        Chain {
            columns: names.iter().map(|_| Vec::with_capacity(cap)).collect(),
            names,
            burn_in: schedule.burn_in,
            n_iter: schedule.n_iter,
            thin: schedule.thin,
            seed: schedule.seed,
            acceptance: Vec::new(),
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.columns.len());
        for (c, &v) in self.columns.iter_mut().zip(row) {
            c.push(v);
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    /// Mean, SD and HPD interval (when at least 100 draws) per parameter.
    pub fn summaries(&self, level: f64) -> Vec<ParamSummary> {
        self.names
            .iter()
            .zip(&self.columns)
            .map(|(name, xs)| summarize(name, xs, level))
            .collect()
    }

    /// Wide CSV: one row per stored draw.
    pub fn columns_finite(&self) -> bool {
        self.columns.iter().flatten().all(|x| x.is_finite())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("draw");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&i.to_string());
            for c in &self.columns {
                out.push(',');
                out.push_str(&format!("{}", c[i]));
            }
            out.push('\n');
        }
        out
    }
}

pub fn summarize(name: &str, xs: &[f64], level: f64) -> ParamSummary {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    ParamSummary {
        name: name.to_string(),
        mean,
        sd,
        hpd: hpd_interval(xs, level).ok(),
    }
}

/// Summary CSV with one row per parameter.
pub fn summaries_csv(rows: &[ParamSummary]) -> String {
    let mut out = String::from("parameter,mean,sd,hpd95_lo,hpd95_hi\n");
    for r in rows {
        let (lo, hi) = r.hpd.map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
        out.push_str(&format!("{},{},{},{},{}\n", r.name, r.mean, r.sd, lo, hi));
    }
    out
}
