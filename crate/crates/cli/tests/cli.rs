//! End-to-end runs of the binary on tiny problems.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "[simulation]\nn_b_per_side = 4\nseed = 7\n\n[fit]\nburn_in = 100\nsamples = 200\nseed = 3\n";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lattice-me"))
        .args(args)
        .env_remove("RUST_BACKTRACE")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_then_fit_writes_chains_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&sim)]);
    for f in ["image.txt", "truth.csv", "geometry.csv", "manifest.toml"] {
        assert!(sim.join(f).exists(), "missing {f}");
    }

    let fit = dir.path().join("fit");
    ok(&[
        "fit", "--image", p(&sim.join("image.txt")), "--sites", p(&sim.join("geometry.csv")),
        "--config", p(&cfg), "--model", "hier,simple", "--out", p(&fit),
    ]);
    let chain = fs::read_to_string(fit.join("chain_hier.csv")).unwrap();
    // Header plus one row per retained draw.
    assert_eq!(chain.lines().count(), 201);
    assert!(chain.lines().next().unwrap().split(',').any(|c| c == "alpha1"));
    assert!(fit.join("chain_simple.csv").exists());
    assert!(!fit.join("chain_spatial.csv").exists());

    let manifest: toml::Table = fs::read_to_string(fit.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["subcommand"].as_str(), Some("fit"));
    assert_eq!(manifest["seed"].as_str(), Some("3"));
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(outputs.contains(&"chain_hier.csv") && outputs.contains(&"summary_simple.csv"));
}

#[test]
fn detect_reports_every_site() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&sim)]);
    let det = dir.path().join("det");
    ok(&["detect", "--image", p(&sim.join("image.txt")), "--sites", p(&sim.join("truth.csv")), "--out", p(&det)]);
    let text = fs::read_to_string(det.join("detection.csv")).unwrap();
    // 16 B-sites and 9 A-sites.
    assert_eq!(text.lines().count(), 1 + 16 + 9);
}

#[test]
fn seed_override_changes_the_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&sim)]);
    let img = sim.join("image.txt");
    let sites = sim.join("geometry.csv");
    let mut chains = Vec::new();
    for (name, seed) in [("a", "11"), ("b", "11"), ("c", "12")] {
        let out = dir.path().join(name);
        ok(&["fit", "--image", p(&img), "--sites", p(&sites), "--config", p(&cfg), "--seed", seed, "--out", p(&out)]);
        chains.push(fs::read(out.join("chain_hier.csv")).unwrap());
    }
    assert_eq!(chains[0], chains[1]);
    assert_ne!(chains[0], chains[2]);
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("[simulation]\nn_b_per_side = \"x\"\n", "line 2"),
        ("[fit]\nburn_in = 10\nbogus = 1\n", "unknown field `bogus`"),
    ];
    for (text, needle) in cases {
        let cfg = dir.path().join("bad.toml");
        fs::write(&cfg, text).unwrap();
        let out = run(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]);
        assert!(!out.status.success());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "stderr lacks {needle:?}: {err}");
    }
}

#[test]
fn missing_input_is_an_error_not_a_panic() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["fit", "--image", "/nonexistent/image.txt", "--sites", "/nonexistent/s.csv", "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).contains("panicked"));
}

#[test]
fn variogram_subcommand_fits_points() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("x,y,value\n");
    // Deterministic pseudo-noise on a grid is enough to exercise the command.
    for i in 0..30 {
        for j in 0..30 {
            let v = ((i * 7919 + j * 104729) % 1000) as f64 / 1000.0 - 0.5;
            csv.push_str(&format!("{i},{j},{v}\n"));
        }
    }
    let pts = dir.path().join("pts.csv");
    fs::write(&pts, csv).unwrap();
    let out = dir.path().join("vg");
    ok(&["variogram", "--points", p(&pts), "--out", p(&out)]);
    let fit = fs::read_to_string(out.join("variogram_fit.csv")).unwrap();
    let vals: Vec<f64> = fit.lines().nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert!(vals[0] > 0.0 && (0.0..=1.0).contains(&vals[1]) && vals[2] > 0.0, "{vals:?}");
}
