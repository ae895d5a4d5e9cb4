//! TOML run configuration.
//!
//! One file may carry any of these sections:
//!
//! ```toml
//! [simulation]      # generator parameters, also the study base
//! [fit]             # windows, schedule and model choice for `fit`
//! [study]           # replication settings for `study`
//! [[scenario]]      # study settings (overrides of the base)
//! [priors]          # hierarchical-model priors
//! [baseline_priors] # priors of the two comparators
//! [ssvs]            # spike-and-slab prior
//! [steps]           # initial random-walk scales
//! ```
//!
//! Unknown keys are rejected. Errors carry the line of the offending key.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineOptions, BaselinePriors};
use crate::error::{Error, Result};
use crate::harness::{Scenario, StudyConfig};
use crate::hier::{HierOptions, HierPriors, SsvsPrior, StepSizes};
use crate::mcmc::Schedule;
use crate::pipeline::{FitSettings, Model};
use crate::simulate::SimConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub h_a: usize,
    pub h_b: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub seed: u64,
    pub models: Vec<Model>,
    pub ssvs: bool,
    pub ground_hyperpriors: bool,
    pub hyper_variance_factor: f64,
    pub strict: bool,
    pub adapt: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            h_a: 6,
            h_b: 5,
            burn_in: 2000,
            samples: 4000,
            thin: 1,
            seed: 1,
            models: vec![Model::Hier],
            ssvs: false,
            ground_hyperpriors: true,
            hyper_variance_factor: 1.0,
            strict: false,
            adapt: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub n_replicates: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub seed: u64,
    pub models: Vec<Model>,
    pub ssvs: bool,
    pub jobs: usize,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            n_replicates: 30,
            burn_in: 2000,
            samples: 4000,
            thin: 1,
            seed: 1,
            models: vec![Model::Hier, Model::Simple, Model::Spatial],
            ssvs: false,
            jobs: 0,
        }
    }
}

/// A parsed configuration file; absent sections take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub simulation: SimConfig,
    pub fit: FitSection,
    pub study: StudySection,
    pub scenario: Vec<Scenario>,
    pub priors: HierPriors,
    pub baseline_priors: BaselinePriors,
    pub ssvs: SsvsPrior,
    pub steps: StepSizes,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Line of the first `key = ...` assignment, for validation errors.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Attaches the line of the named field to a validation error. Validation
/// messages lead with the field name.
fn locate(text: &str, err: Error) -> Error {
    let msg = err.to_string();
    let body = msg.strip_prefix("config error: ").unwrap_or(&msg);
    let body = body.strip_prefix("prior ").unwrap_or(body);
    let field = body
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .find(|s| !s.is_empty())
        .unwrap_or("");
    match key_line(text, field) {
        Some(line) => Error::Config(format!("line {line}: {body}")),
        None => Error::Config(body.to_string()),
    }
}

impl RunConfig {
    /// Parses and validates TOML text.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            Error::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate().map_err(|e| locate(text, e))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        self.priors.validate()?;
        let f = &self.fit;
        Schedule::new(f.burn_in + f.samples, f.burn_in, f.thin, f.seed)?;
        if f.models.is_empty() {
            return Err(Error::Config("models must not be empty".into()));
        }
        if !(f.hyper_variance_factor > 0.0 && f.hyper_variance_factor.is_finite()) {
            return Err(Error::Config(format!(
                "hyper_variance_factor must be positive, got {}",
                f.hyper_variance_factor
            )));
        }
        if f.h_a == 0 || f.h_b == 0 {
            return Err(Error::Config("h_a and h_b must be positive".into()));
        }
        if !(self.ssvs.slab_var > 0.0) {
            return Err(Error::Config(format!("slab_var must be positive, got {}", self.ssvs.slab_var)));
        }
        if !(self.ssvs.inclusion > 0.0 && self.ssvs.inclusion < 1.0) {
            return Err(Error::Config(format!(
                "inclusion must lie in (0, 1), got {}",
                self.ssvs.inclusion
            )));
        }
        let st = &self.steps;
        for (name, v) in [
            ("location_a", st.location_a),
            ("location_b", st.location_b),
            ("log_psi", st.log_psi),
            ("logit_r_pix", st.logit_r_pix),
            ("log_rho_pix", st.log_rho_pix),
            ("logit_r", st.logit_r),
            ("log_rho", st.log_rho),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative step, got {v}")));
            }
        }
        if !self.scenario.is_empty() {
            self.study_config()?.validate()?;
        }
        Ok(())
    }

    /// Canonical TOML of the effective configuration, defaults included.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn fit_settings(&self) -> Result<FitSettings> {
        let f = &self.fit;
        let mut s = FitSettings::new(Schedule::new(f.burn_in + f.samples, f.burn_in, f.thin, f.seed)?);
        s.h_a = f.h_a;
        s.h_b = f.h_b;
        s.priors = self.priors.clone();
        s.ground_hyperpriors = f.ground_hyperpriors;
        s.hyper_variance_factor = f.hyper_variance_factor;
        s.strict = f.strict;
        s.hier = HierOptions {
            ssvs: f.ssvs.then_some(self.ssvs),
            steps: self.steps,
            adapt: f.adapt,
            ..HierOptions::default()
        };
        s.baseline = BaselineOptions {
            priors: self.baseline_priors,
            ..BaselineOptions::default()
        };
        Ok(s)
    }

    /// Study over the `[[scenario]]` list, or a single unmodified scenario
    /// named `base` when none is given.
    pub fn study_config(&self) -> Result<StudyConfig> {
        let st = &self.study;
        let scenarios = if self.scenario.is_empty() {
            vec![Scenario {
                name: "base".into(),
                ..Scenario::default()
            }]
        } else {
            self.scenario.clone()
        };
        Ok(StudyConfig {
            base: self.simulation.clone(),
            scenarios,
            n_replicates: st.n_replicates,
            burn_in: st.burn_in,
            samples: st.samples,
            thin: st.thin,
            seed: st.seed,
            models: st.models.clone(),
            ssvs: st.ssvs,
            jobs: st.jobs,
        })
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse(&text)
}
