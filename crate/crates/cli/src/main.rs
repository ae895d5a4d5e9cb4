use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use lattice_me::config::{parse_config, RunConfig};
use lattice_me::covariance::{default_max_dist, empirical_variogram, fit_exp_variogram, DEFAULT_VARIOGRAM_BINS};
use lattice_me::harness::run_study;
use lattice_me::imaging::{load_image, save_matrix};
use lattice_me::lattice::{arrange_sites, read_sites_csv};
use lattice_me::mcmc::summaries_csv;
use lattice_me::pipeline::{detect_sites, run_pipeline, Model};
use lattice_me::rng::substream;
use lattice_me::simulate::simulate_dataset;

#[derive(Parser)]
#[command(name = "lattice-me", version, about = "Measurement-error models for atom-column locations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic image with known column locations.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a Gaussian peak around each approximate column center.
    Detect {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect columns, then sample the posterior of the chosen models.
    Fit {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Post-burn-in iterations.
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        burnin: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Spike-and-slab prior on the slope (hierarchical model only).
        #[arg(long)]
        ssvs: bool,
        /// hier, simple or spatial; repeat or comma-separate for several.
        #[arg(long, value_delimiter = ',')]
        model: Vec<Model>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replicated simulation study.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; zero uses every core.
        #[arg(long, env = "LATTICE_ME_JOBS")]
        jobs: Option<usize>,
    },
    /// Empirical semivariogram of point residuals with an exponential fit.
    Variogram {
        /// CSV with columns `x,y,value`.
        #[arg(long)]
        points: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VARIOGRAM_BINS)]
        bins: usize,
        #[arg(long)]
        max_dist: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Input {
    /// Matrix text or PGM image.
    #[arg(long)]
    image: PathBuf,
    /// Approximate column centers: `site_id,type,grid_x,grid_y,x,y`.
    #[arg(long)]
    sites: PathBuf,
}

/// Output directory bookkeeping and the run manifest.
struct Run {
    dir: PathBuf,
    subcommand: &'static str,
    config_hash: String,
    seed: Option<u64>,
    files: Vec<String>,
    start: Instant,
}

impl Run {
    fn new(dir: &Path, subcommand: &'static str, canonical_config: &str, seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let hash = Sha256::digest(canonical_config.as_bytes());
        Ok(Run {
            dir: dir.to_path_buf(),
            subcommand,
            config_hash: hash.iter().map(|b| format!("{b:02x}")).collect(),
            seed,
            files: Vec::new(),
            start: Instant::now(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        let seed = self.seed.map_or("none".to_string(), |s| s.to_string());
        let files: Vec<String> = self.files.iter().map(|f| format!("\"{f}\"")).collect();
        let manifest = format!(
            "subcommand = \"{}\"\nconfig_sha256 = \"{}\"\nseed = \"{}\"\nversion = \"{}\"\nwall_time_s = {:.3}\noutputs = [{}]\n",
            self.subcommand,
            self.config_hash,
            seed,
            env!("CARGO_PKG_VERSION"),
            self.start.elapsed().as_secs_f64(),
            files.join(", ")
        );
        let path = self.dir.join("manifest.toml");
        fs::write(&path, manifest).with_context(|| format!("writing {}", path.display()))?;
        self.files.clear();
        Ok(())
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => parse_config(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

/// Approximate centers ordered by site id of the full grid.
fn load_sites(path: &Path) -> Result<(usize, Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    let records = read_sites_csv(path).with_context(|| format!("reading sites {}", path.display()))?;
    let (n, b, a) = arrange_sites(&records)?;
    Ok((n, a.iter().map(|r| r.location).collect(), b.iter().map(|r| r.location).collect()))
}

fn simulate(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.simulation.seed = s;
    }
    let sim = &cfg.simulation;
    let mut run = Run::new(out, "simulate", &cfg.to_toml()?, Some(sim.seed))?;
    let ds = simulate_dataset(sim, &mut substream(sim.seed, "simulate", 0))?;
    let image = out.join("image.txt");
    save_matrix(&ds.image, &image)?;
    run.files.push("image.txt".into());
    run.write("truth.csv", &ds.truth_csv())?;
    run.write("geometry.csv", &ds.geometry.to_csv())?;
    run.write("neighbors.csv", &ds.geometry.neighbors_csv())?;
    run.finish()
}

fn detect(input: &Input, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let mut run = Run::new(out, "detect", &cfg.to_toml()?, None)?;
    let img = load_image(&input.image)?;
    let (_, approx_a, approx_b) = load_sites(&input.sites)?;
    let det = detect_sites(&img, &approx_a, &approx_b, cfg.fit.h_a, cfg.fit.h_b)?;
    run.write("detection.csv", &det.to_csv())?;
    run.finish()
}

struct FitOverrides {
    iters: Option<usize>,
    burnin: Option<usize>,
    thin: Option<usize>,
    seed: Option<u64>,
    ssvs: bool,
    models: Vec<Model>,
}

fn fit(input: &Input, config: Option<&Path>, o: FitOverrides, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    let f = &mut cfg.fit;
    f.samples = o.iters.unwrap_or(f.samples);
    f.burn_in = o.burnin.unwrap_or(f.burn_in);
    f.thin = o.thin.unwrap_or(f.thin);
    f.seed = o.seed.unwrap_or(f.seed);
    f.ssvs |= o.ssvs;
    if !o.models.is_empty() {
        f.models = o.models;
    }
    cfg.validate()?;
    let settings = cfg.fit_settings()?;
    let mut run = Run::new(out, "fit", &cfg.to_toml()?, Some(cfg.fit.seed))?;
    let img = load_image(&input.image)?;
    let (n, approx_a, approx_b) = load_sites(&input.sites)?;
    let res = run_pipeline(&img, n, &approx_a, &approx_b, &cfg.fit.models, &settings)?;
    run.write("detection.csv", &res.detection.to_csv())?;
    run.write("geometry.csv", &res.geometry.to_csv())?;
    for (model, chain) in &res.chains {
        if chain.columns_finite() {
            run.write(&format!("chain_{model}.csv"), &chain.to_csv())?;
            run.write(&format!("summary_{model}.csv"), &summaries_csv(&chain.summaries(0.95)))?;
            let acc: String = chain
                .acceptance
                .iter()
                .map(|(name, rate)| format!("{name},{rate}\n"))
                .collect();
            run.write(&format!("acceptance_{model}.csv"), &format!("parameter,rate\n{acc}"))?;
        } else {
            bail!("{model} chain contains non-finite draws");
        }
    }
    if let Some(h) = &res.hier {
        run.write("sites_hier.csv", &h.sites_csv())?;
    }
    run.finish()
}

fn study(config: &Path, jobs: Option<usize>, out: &Path) -> Result<()> {
    let cfg = parse_config(config).with_context(|| format!("reading config {}", config.display()))?;
    let mut study = cfg.study_config()?;
    if let Some(j) = jobs {
        study.jobs = j;
    }
    // The worker count is excluded from the hash: it cannot change results.
    let mut run = Run::new(out, "study", &cfg.to_toml()?, Some(study.seed))?;
    let res = run_study(&study)?;
    run.write("replicates.csv", &res.records_csv())?;
    run.write("summary.csv", &res.summary.to_csv())?;
    run.write("failures.csv", &res.failures_csv())?;
    if !res.failures.is_empty() {
        eprintln!("{} replicate fits failed; see failures.csv", res.failures.len());
    }
    run.finish()
}

fn read_points(path: &Path) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        bail!("{}: empty points file", path.display());
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .with_context(|| format!("{}: header lacks column `{name}`", path.display()))
    };
    let (ix, iy, iv) = (find("x")?, find("y")?, find("value")?);
    let (mut coords, mut values) = (Vec::new(), Vec::new());
    for (lineno, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |k: usize| -> Result<f64> {
            f.get(k)
                .and_then(|s| s.parse().ok())
                .with_context(|| format!("{}:{}: invalid number in column {}", path.display(), lineno + 1, k + 1))
        };
        coords.push([num(ix)?, num(iy)?]);
        values.push(num(iv)?);
    }
    Ok((coords, values))
}

fn variogram(points: &Path, bins: usize, max_dist: Option<f64>, out: &Path) -> Result<()> {
    let canonical = format!("bins = {bins}\nmax_dist = {max_dist:?}\n");
    let mut run = Run::new(out, "variogram", &canonical, None)?;
    let (coords, values) = read_points(points)?;
    let max = max_dist.unwrap_or_else(|| default_max_dist(&coords));
    let vg = empirical_variogram(&coords, &values, bins, max)?;
    let fitted = fit_exp_variogram(&vg)?;
    let mut csv = String::from("bin_center,semivariance,count,fitted_gamma\n");
    for ((c, g), n) in vg.bin_centers.iter().zip(&vg.semivariances).zip(&vg.counts) {
        let g = g.map_or(String::new(), |v| v.to_string());
        csv.push_str(&format!("{c},{g},{n},{}\n", fitted.semivariance(*c)));
    }
    run.write("variogram.csv", &csv)?;
    run.write(
        "variogram_fit.csv",
        &format!("sigma2,r,rho\n{},{},{}\n", fitted.sigma2, fitted.r, fitted.rho),
    )?;
    run.finish()
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { config, seed, out } => simulate(config.as_deref(), seed, &out),
        Command::Detect { input, config, out } => detect(&input, config.as_deref(), &out),
        Command::Fit {
            input,
            config,
            iters,
            burnin,
            thin,
            seed,
            ssvs,
            model,
            out,
        } => {
            let o = FitOverrides {
                iters,
                burnin,
                thin,
                seed,
                ssvs,
                models: model,
            };
            fit(&input, config.as_deref(), o, &out)
        }
        Command::Study { config, out, jobs } => study(&config, jobs, &out),
        Command::Variogram {
            points,
            bins,
            max_dist,
            out,
        } => variogram(&points, bins, max_dist, &out),
    }
}
