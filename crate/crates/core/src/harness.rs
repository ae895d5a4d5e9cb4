//! Replicated simulation studies and their summaries.

use std::collections::BTreeMap;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hier::SsvsPrior;
use crate::mcmc::{summarize, Schedule};
use crate::pipeline::{run_pipeline, FitSettings, Model};
use crate::rng::substream;
use crate::simulate::{simulate_dataset, SimConfig};

/// Minimum number of draws for an HPD interval.
pub const HPD_MIN_SAMPLES: usize = 100;

/// Shortest interval `[x_(i), x_(i+k)]` over the sorted draws, with
/// `k = round(level * n)` clamped to `[1, n - 1]`. Ties go to the smallest
/// lower end.
pub fn hpd_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("HPD level must lie in (0, 1), got {level}")));
    }
    let n = samples.len();
    if n < HPD_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            got: n,
            need: HPD_MIN_SAMPLES,
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("HPD interval of non-finite samples".into()));
    }
    let mut x = samples.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let gap = ((level * n as f64).round() as usize).clamp(1, n - 1);
    let mut best = 0;
    let mut width = f64::INFINITY;
    for i in 0..n - gap {
        let w = x[i + gap] - x[i];
        if w < width {
            width = w;
            best = i;
        }
    }
    Ok((x[best], x[best + gap]))
}

/// One study setting: overrides applied to the base simulation and fit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub sigma: Option<f64>,
    pub r_pix: Option<f64>,
    pub alpha1: Option<f64>,
    pub h_a: Option<usize>,
    pub h_b: Option<usize>,
    /// Multiplier on the intensity-variance hyperprior scale.
    pub hyper_variance_factor: Option<f64>,
}

impl Scenario {
    pub fn sim_config(&self, base: &SimConfig) -> SimConfig {
        let mut c = base.clone();
        if let Some(v) = self.sigma {
            c.sigma = v;
        }
        if let Some(v) = self.r_pix {
            c.r_pix = v;
        }
        if let Some(v) = self.alpha1 {
            c.alpha1 = v;
        }
        if let Some(v) = self.h_a {
            c.h_a = v;
        }
        if let Some(v) = self.h_b {
            c.h_b = v;
        }
        c
    }
}

/// A replicated simulation study.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub base: SimConfig,
    pub scenarios: Vec<Scenario>,
    pub n_replicates: usize,
    pub burn_in: usize,
    /// Post-burn-in iterations per chain.
    pub samples: usize,
    pub thin: usize,
    pub seed: u64,
    pub models: Vec<Model>,
    pub ssvs: bool,
    /// Worker threads; zero uses every available core.
    pub jobs: usize,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.n_replicates < 2 {
            return Err(Error::Config(format!("n_replicates must be at least 2, got {}", self.n_replicates)));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("scenarios must not be empty".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("models must not be empty".into()));
        }
        let mut names: Vec<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("scenario names must be unique".into()));
        }
        for s in &self.scenarios {
            s.sim_config(&self.base)
                .validate()
                .map_err(|e| Error::Config(format!("scenario `{}`: {e}", s.name)))?;
            if let Some(f) = s.hyper_variance_factor {
                if !(f > 0.0 && f.is_finite()) {
                    return Err(Error::Config(format!(
                        "scenario `{}`: hyper_variance_factor must be positive, got {f}",
                        s.name
                    )));
                }
            }
        }
        self.schedule(0)?;
        Ok(())
    }

    pub fn schedule(&self, seed: u64) -> Result<Schedule> {
        Schedule::new(self.burn_in + self.samples, self.burn_in, self.thin, seed)
    }
}

/// Posterior summary of one parameter in one replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateRecord {
    pub scenario: String,
    pub replicate: usize,
    pub model: Model,
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub hpd: (f64, f64),
}

impl ReplicateRecord {
    pub fn covers(&self) -> bool {
        self.hpd.0 <= self.truth && self.truth <= self.hpd.1
    }
}

/// A replicate (or one model within it) that produced no summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateFailure {
    pub scenario: String,
    pub replicate: usize,
    pub model: Option<Model>,
    pub message: String,
}

/// A statistic with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Aggregate performance of one model for one parameter in one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub model: Model,
    pub parameter: String,
    pub truth: f64,
    pub n_effective: usize,
    pub n_failed: usize,
    pub bias: Estimate,
    pub mean_sd: Estimate,
    /// Percent of HPD intervals containing the truth.
    pub coverage: Estimate,
    /// Mean squared error times 100.
    pub mse100: Estimate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudySummary {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<ReplicateFailure>,
}

impl StudySummary {
    pub fn row(&self, scenario: &str, model: Model, parameter: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.model == model && r.parameter == parameter)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scenario,model,parameter,truth,n_effective,n_failed,bias,bias_se,mean_sd,mean_sd_se,coverage,coverage_se,mse100,mse100_se\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.scenario,
                r.model,
                r.parameter,
                r.truth,
                r.n_effective,
                r.n_failed,
                r.bias.value,
                r.bias.se,
                r.mean_sd.value,
                r.mean_sd.se,
                r.coverage.value,
                r.coverage.se,
                r.mse100.value,
                r.mse100.se
            ));
        }
        out
    }
}

/// Binomial standard error of a percentage estimated from `n` trials.
pub fn coverage_se(percent: f64, n: usize) -> f64 {
    let p = percent / 100.0;
    (p * (1.0 - p) / n as f64).sqrt() * 100.0
}

fn mean_se(v: &[f64]) -> Estimate {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let se = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        f64::NAN
    };
    Estimate { value: m, se }
}

/// Aggregates replicate records per (scenario, model, parameter). The result
/// depends only on the set of records, not their order.
pub fn summarize_records(records: &[ReplicateRecord], failures: &[ReplicateFailure]) -> StudySummary {
    let mut groups: BTreeMap<(String, Model, String), Vec<&ReplicateRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.scenario.clone(), r.model, r.parameter.clone()))
            .or_default()
            .push(r);
    }
    let rows = groups
        .into_iter()
        .map(|((scenario, model, parameter), mut recs)| {
            recs.sort_by_key(|r| r.replicate);
            let n = recs.len();
            let err: Vec<f64> = recs.iter().map(|r| r.mean - r.truth).collect();
            let sds: Vec<f64> = recs.iter().map(|r| r.sd).collect();
            let sq: Vec<f64> = err.iter().map(|e| 100.0 * e * e).collect();
            let cov = 100.0 * recs.iter().filter(|r| r.covers()).count() as f64 / n as f64;
            let n_failed = failures
                .iter()
                .filter(|f| f.scenario == scenario && f.model.is_none_or(|m| m == model))
                .count();
            SummaryRow {
                truth: recs[0].truth,
                n_effective: n,
                n_failed,
                bias: mean_se(&err),
                mean_sd: mean_se(&sds),
                coverage: Estimate {
                    value: cov,
                    se: coverage_se(cov, n),
                },
                mse100: mean_se(&sq),
                scenario,
                model,
                parameter,
            }
        })
        .collect();
    let mut failures = failures.to_vec();
    failures.sort_by(|a, b| (&a.scenario, a.replicate, a.model).cmp(&(&b.scenario, b.replicate, b.model)));
    StudySummary { rows, failures }
}

/// Everything a study produced.
#[derive(Clone, Debug)]
pub struct StudyOutput {
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
    pub summary: StudySummary,
}

impl StudyOutput {
    /// `scenario,replicate,model,parameter,truth,mean,sd,hpd95_lo,hpd95_hi,covered`.
    pub fn records_csv(&self) -> String {
        let mut out = String::from("scenario,replicate,model,parameter,truth,mean,sd,hpd95_lo,hpd95_hi,covered\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.scenario,
                r.replicate,
                r.model,
                r.parameter,
                r.truth,
                r.mean,
                r.sd,
                r.hpd.0,
                r.hpd.1,
                r.covers()
            ));
        }
        out
    }

    /// `scenario,replicate,model,message`.
    pub fn failures_csv(&self) -> String {
        let mut out = String::from("scenario,replicate,model,message\n");
        for f in &self.failures {
            let model = f.model.map(|m| m.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},\"{}\"\n",
                f.scenario,
                f.replicate,
                model,
                f.message.replace('"', "'")
            ));
        }
        out
    }
}

const HPD_LEVEL: f64 = 0.95;

type ReplicateResult = (Vec<ReplicateRecord>, Vec<ReplicateFailure>);

fn run_replicate(cfg: &StudyConfig, scenario: &Scenario, replicate: usize) -> ReplicateResult {
    let fail = |model: Option<Model>, e: &dyn std::fmt::Display| ReplicateFailure {
        scenario: scenario.name.clone(),
        replicate,
        model,
        message: e.to_string(),
    };
    let sim = scenario.sim_config(&cfg.base);
    // The same simulation stream across scenarios gives common random numbers.
    let mut sim_rng = substream(cfg.seed, "study-sim", replicate as u64);
    let ds = match simulate_dataset(&sim, &mut sim_rng) {
        Ok(ds) => ds,
        Err(e) => return (Vec::new(), vec![fail(None, &e)]),
    };
    let chain_seed = substream(cfg.seed, "study-chain", replicate as u64).next_u64();
    let Ok(schedule) = cfg.schedule(chain_seed) else {
        return (Vec::new(), vec![fail(None, &"invalid schedule")]);
    };
    let mut settings = FitSettings::new(schedule);
    settings.h_a = sim.h_a;
    settings.h_b = sim.h_b;
    settings.hyper_variance_factor = scenario.hyper_variance_factor.unwrap_or(1.0);
    if cfg.ssvs {
        settings.hier.ssvs = Some(SsvsPrior::default());
    }
    let g = &ds.geometry;
    let truth = sim.parameter_truth();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    // Models run one at a time so a failure in one keeps the others.
    for &model in &cfg.models {
        let out = match run_pipeline(&ds.image, sim.n_b_per_side, &g.a_grid_means(), g.b_grid_means(), &[model], &settings) {
            Ok(out) => out,
            Err(e) => {
                failures.push(fail(Some(model), &e));
                continue;
            }
        };
        let chain = out.chain(model).expect("requested model has a chain");
        let mut recs = Vec::new();
        for (name, value) in &truth {
            let Some(xs) = chain.get(name) else {
                continue;
            };
            let s = summarize(name, xs, HPD_LEVEL);
            match s.hpd {
                Some(hpd) if s.mean.is_finite() => recs.push(ReplicateRecord {
                    scenario: scenario.name.clone(),
                    replicate,
                    model,
                    parameter: name.to_string(),
                    truth: *value,
                    mean: s.mean,
                    sd: s.sd,
                    hpd,
                }),
                _ => {
                    failures.push(fail(Some(model), &format!("no HPD interval for {name}")));
                    recs.clear();
                    break;
                }
            }
        }
        records.extend(recs);
    }
    (records, failures)
}

/// Runs every scenario and replicate. Results do not depend on `jobs`: each
/// replicate draws from its own named stream and outputs are collected in
/// replicate order.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let tasks: Vec<(usize, usize)> = (0..cfg.scenarios.len())
        .flat_map(|s| (0..cfg.n_replicates).map(move |r| (s, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<ReplicateResult> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(s, r)| run_replicate(cfg, &cfg.scenarios[s], r))
            .collect()
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in results {
        records.extend(r);
        failures.extend(f);
    }
    let summary = summarize_records(&records, &failures);
    Ok(StudyOutput {
        records,
        failures,
        summary,
    })
}
