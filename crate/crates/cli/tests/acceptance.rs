//! Acceptance suite. Each criterion runs in turn and prints one line; the test
//! fails at the end if any criterion failed. The desk-scale attenuation study
//! dominates the runtime (about fifty minutes on one core).
//!
//! The full-scale study is a separate ignored test:
//! `cargo test --release -p lattice-me-cli --test acceptance -- --ignored`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::criteria::*;
use lattice_me::config::parse_config;
use lattice_me::harness::{run_study, StudySummary};
use lattice_me::pipeline::Model;
use lattice_me::simulate::SimConfig;

/// Writes straight to the process stdout so the lines show without `--nocapture`.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

/// Outcome of one criterion: pass flag and a one-line description.
type Outcome = (bool, String);

fn run_criterion(id: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let (ok, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let why = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {why}"))
        }
    };
    let verdict = if ok { "PASS" } else { "FAIL" };
    report(&format!("criterion {id} {verdict} ({:.0} s): {msg}", t.elapsed().as_secs_f64()));
    ok
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_attenuation() -> Outcome {
    let cfg = parse_config(repo_root().join("configs/study_desk.toml")).unwrap();
    let study = cfg.study_config().unwrap();
    let out = run_study(&study).unwrap();
    let scenario = &study.scenarios[0].name;
    let row = |m| out.summary.row(scenario, m, "alpha1").unwrap();
    let hier = row(Model::Hier);
    let mut ok = hier.bias.value.abs() <= 0.015 && hier.coverage.value >= 85.0;
    let mut msg = format!(
        "hier bias {:+.4} cover {:.1}%",
        hier.bias.value, hier.coverage.value
    );
    for m in [Model::Simple, Model::Spatial] {
        let r = row(m);
        ok &= (0.015..=0.07).contains(&r.bias.value) && r.coverage.value <= 60.0;
        msg.push_str(&format!("; {m} bias {:+.4} cover {:.1}%", r.bias.value, r.coverage.value));
    }
    msg.push_str(&format!("; {} failed fits", out.failures.len()));
    (ok && out.failures.is_empty(), msg)
}

fn conjugacy() -> Outcome {
    let t = Instant::now();
    let errs = conjugacy_errors(2);
    let secs = t.elapsed().as_secs_f64();
    let (worst_name, worst) = errs
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    (
        worst < 1e-6 && secs < 60.0,
        format!("{} conditionals, worst {worst_name} {worst:.1e}, {secs:.0} s", errs.len()),
    )
}

fn stationarity() -> Outcome {
    let t = Instant::now();
    let psi = ks_bandwidth();
    let [r_pix, rho_pix] = ks_pixel_correlation();
    let [r, rho] = ks_process_correlation();
    let loc = ks_location();
    let (beta, ablated) = ks_intensity();
    let secs = t.elapsed().as_secs_f64();
    let worst = [psi, r_pix, rho_pix, r, rho, loc, beta].into_iter().fold(0.0, f64::max);
    (
        worst < 0.02 && ablated > 0.02 && secs < 600.0,
        format!(
            "KS psi {psi:.4} r_pix {r_pix:.4} rho_pix {rho_pix:.4} r {r:.4} rho {rho:.4} loc {loc:.4} \
             beta_B {beta:.4}; ablated beta_B {ablated:.4}"
        ),
    )
}

fn block_likelihood() -> Outcome {
    let e = block_error();
    (e < 1e-10, format!("absolute error {e:.1e}"))
}

fn detection() -> Outcome {
    let e = peak_errors();
    let c = min_trace_correlation();
    (
        e.all_converged && e.center_px < 1e-3 && e.amplitude_rel < 1e-3 && c >= 0.999,
        format!(
            "center {:.1e} px, amplitude {:.1e}, trace correlation {c:.5}",
            e.center_px, e.amplitude_rel
        ),
    )
}

fn variogram() -> Outcome {
    let all = variogram_ratios();
    let passed = all.iter().filter(|q| q.iter().all(|v| (v - 1.0).abs() < 0.2)).count();
    let (fit, rise) = white_noise_variogram();
    (
        passed * 5 >= VARIOGRAM_FIELDS as usize * 4 && rise < 0.05,
        format!(
            "{passed}/{VARIOGRAM_FIELDS} fields within 20% on all parameters; white noise rise {rise:.4} sill {:.3}",
            fit.sigma2
        ),
    )
}

/// Datasets for the selection criterion. Inclusion depends on how strongly
/// one dataset's slope is identified, so several are run and the median is
/// judged.
const SSVS_SEEDS: [u64; 6] = [81, 1, 2, 3, 4, 5];

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    0.5 * (v[(n - 1) / 2] + v[n / 2])
}

fn selection() -> Outcome {
    let signal = SimConfig { n_b_per_side: 10, ..SimConfig::default() };
    let null = SimConfig { n_b_per_side: 10, alpha1: 0.0, sigma: 300.0, ..SimConfig::default() };
    let with: Vec<f64> = SSVS_SEEDS.iter().map(|&s| inclusion_probability(&signal, s)).collect();
    let without: Vec<f64> = SSVS_SEEDS.iter().map(|&s| inclusion_probability(&null, s + 1000)).collect();
    let (m1, m0) = (median(with.clone()), median(without.clone()));
    let fmt = |v: &[f64]| v.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(" ");
    (
        m1 >= 0.99 && m0 <= 0.8,
        format!("slope -0.15: median {m1:.3} [{}]; slope 0: median {m0:.3} [{}]", fmt(&with), fmt(&without)),
    )
}

fn scaling() -> Outcome {
    let t = sweep_timing();
    let ratio = t.large_s / t.small_s;
    (
        (1.4..=2.6).contains(&ratio),
        format!(
            "14x14 / 10x10 sweep time {ratio:.2} for {:.2}x the sites ({:.4} s vs {:.4} s)",
            t.site_ratio, t.large_s, t.small_s
        ),
    )
}

fn cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_lattice-me"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let fit_cfg = d.join("fit.toml");
    fs::write(
        &fit_cfg,
        "[simulation]\nn_b_per_side = 5\nseed = 9\n\n[fit]\nburn_in = 200\nsamples = 300\nseed = 4\n\
         models = [\"hier\", \"simple\", \"spatial\"]\n",
    )
    .unwrap();
    cli(&["simulate", "--config", &s(&fit_cfg), "--out", &s(&d.join("sim"))]);
    let image = s(&d.join("sim/image.txt"));
    let sites = s(&d.join("sim/geometry.csv"));
    for run in ["fit1", "fit2"] {
        cli(&["fit", "--image", &image, "--sites", &sites, "--config", &s(&fit_cfg), "--out", &s(&d.join(run))]);
    }
    let mut same = true;
    for m in ["hier", "simple", "spatial"] {
        let name = format!("chain_{m}.csv");
        same &= fs::read(d.join("fit1").join(&name)).unwrap() == fs::read(d.join("fit2").join(&name)).unwrap();
    }

    let study_cfg = d.join("study.toml");
    fs::write(
        &study_cfg,
        "[simulation]\nn_b_per_side = 4\n\n[study]\nn_replicates = 4\nburn_in = 100\nsamples = 150\nseed = 5\n\
         models = [\"hier\", \"simple\", \"spatial\"]\n\n[[scenario]]\nname = \"base\"\n\n\
         [[scenario]]\nname = \"noisy\"\nsigma = 300.0\n",
    )
    .unwrap();
    for jobs in ["1", "2", "3"] {
        cli(&["study", "--config", &s(&study_cfg), "--jobs", jobs, "--out", &s(&d.join(format!("study{jobs}")))]);
    }
    let mut jobs_same = true;
    for f in ["replicates.csv", "summary.csv"] {
        let base = fs::read(d.join("study1").join(f)).unwrap();
        for j in ["2", "3"] {
            jobs_same &= fs::read(d.join(format!("study{j}")).join(f)).unwrap() == base;
        }
    }
    (
        same && jobs_same,
        format!("repeated fit chains identical: {same}; study output identical across 1/2/3 jobs: {jobs_same}"),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("3", conjugacy),
        ("4", stationarity),
        ("5", block_likelihood),
        ("6", detection),
        ("7", variogram),
        ("9", scaling),
        ("10", determinism),
        ("8", selection),
        ("1", desk_attenuation),
    ];
    let mut failed = Vec::new();
    for (id, f) in criteria {
        if !run_criterion(id, f) {
            failed.push(id);
        }
    }
    report("criterion 2 SKIPPED: full-scale study, run the ignored test `full_scale_spot_check`");
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}

/// Reference values for the slope in the baseline scenario:
/// (model, bias, se, mean posterior SD, se, coverage %, se, MSE x 100, se).
const REFERENCE: [(Model, [f64; 8]); 3] = [
    (Model::Simple, [0.037, 0.0013, 0.016, 0.0001, 37.0, 4.8, 0.15, 0.011]),
    (Model::Spatial, [0.037, 0.0013, 0.012, 0.0001, 22.0, 4.1, 0.15, 0.010]),
    (Model::Hier, [-0.002, 0.0016, 0.017, 0.0002, 95.0, 2.2, 0.03, 0.004]),
];

fn compare_reference(summary: &StudySummary, scenario: &str) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (model, p) in REFERENCE {
        let r = summary.row(scenario, model, "alpha1").unwrap();
        let ours = [r.bias, r.mean_sd, r.coverage, r.mse100];
        for (k, (est, name)) in ours.iter().zip(["bias", "sd", "cover", "mse100"]).enumerate() {
            let (value, se) = (p[2 * k], p[2 * k + 1]);
            // Both sides are Monte Carlo estimates, so their errors add.
            let tol = 3.0 * (est.se.powi(2) + se * se).sqrt();
            let hit = (est.value - value).abs() <= tol;
            ok &= hit;
            parts.push(format!("{model} {name} {:.4} vs {value}{}", est.value, if hit { "" } else { " (off)" }));
        }
    }
    (ok, parts.join("; "))
}

#[test]
#[ignore = "full-scale study, many hours on a few cores"]
fn full_scale_spot_check() {
    let cfg = parse_config(repo_root().join("configs/study_full.toml")).unwrap();
    let mut study = cfg.study_config().unwrap();
    study.scenarios.truncate(1);
    let ok = run_criterion("2", || {
        let out = run_study(&study).unwrap();
        compare_reference(&out.summary, &study.scenarios[0].name)
    });
    assert!(ok);
}
