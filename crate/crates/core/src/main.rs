use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pmtcomm::counting::{
    kl_threshold_bounds, optimize_threshold_error, optimize_threshold_kl, ThresholdSearch,
};
use pmtcomm::detector::{fit_cubic, fit_linear, CubicFitOptions, MapDetector, XWeighting};
use pmtcomm::experiments::{load_config, run_experiment, ExperimentConfig, ExperimentName};
use pmtcomm::rates::rate_bounds;
use pmtcomm::sim::chunk_seed;
use pmtcomm::{channel::SymbolSampler, Error};

#[derive(Parser)]
#[command(
    name = "pmtcomm",
    version,
    about = "PMT receiver rates, detectors and experiments"
)]
struct Cli {
    /// Worker threads for Monte Carlo runs (results do not depend on it).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file, or a manifest written by a previous run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parameter override, `key=value`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one reproducible experiment.
    Experiment {
        /// Experiment name; may be omitted when --config is a manifest.
        name: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// MAP decision on one symbol's interval outputs.
    Detect {
        /// File of interval outputs (whitespace or comma separated).
        #[arg(long, conflicts_with = "simulate")]
        input: Option<PathBuf>,
        /// Draw a symbol with this value instead of reading one.
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
        simulate: Option<u8>,
        #[arg(long, value_enum, default_value_t = DetectorArg::Exact)]
        detector: DetectorArg,
        /// Write the fitted piecewise detector record here.
        #[arg(long)]
        export: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Error-optimal and KL-optimal interval thresholds.
    OptimizeThreshold {
        #[command(flatten)]
        common: Common,
    },
    /// Rate bounds for a single configuration.
    RateBounds {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorArg {
    Exact,
    Linear,
    Cubic,
    Counting,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Invalid(_) | Error::Domain(_) => 2,
        Error::Io(_) => 4,
        Error::Numeric(_)
        | Error::Degenerate(_)
        | Error::NoSolution(_)
        | Error::Singular { .. } => 3,
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, Option<ExperimentName>), Error> {
    let (mut cfg, name) = match &common.config {
        Some(path) => load_config(&fs::read_to_string(path)?)?,
        None => (ExperimentConfig::default(), None),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok((cfg, name))
}

fn read_outputs(path: &Path) -> Result<Vec<f64>, Error> {
    fs::read_to_string(path)?
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Invalid(format!("bad number `{s}` in {}", path.display())))
        })
        .collect()
}

fn experiment(name: Option<String>, common: &Common, workers: Option<usize>) -> Result<(), Error> {
    let (cfg, recorded) = load(common)?;
    let name = match (name, recorded) {
        (Some(n), Some(r)) => {
            let n: ExperimentName = n.parse()?;
            if n != r {
                return Err(Error::Invalid(format!(
                    "manifest is for `{}`, not `{}`",
                    r.as_str(),
                    n.as_str()
                )));
            }
            n
        }
        (Some(n), None) => n.parse()?,
        (None, Some(r)) => r,
        (None, None) => return Err(Error::Invalid("experiment name required".into())),
    };
    let dir = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(name.as_str()));
    let out = run_experiment(name, &cfg, &dir, workers)?;
    println!("experiment = {}", name.as_str());
    println!("config_hash = {}", out.manifest.config_hash);
    println!("seed = {}", out.manifest.seed);
    for f in &out.files {
        println!("wrote {}", out.dir.join(f).display());
    }
    println!(
        "wrote {}",
        out.dir.join(pmtcomm::experiments::MANIFEST_FILE).display()
    );
    Ok(())
}

fn detect(
    input: Option<PathBuf>,
    simulate: Option<u8>,
    detector: DetectorArg,
    export: Option<PathBuf>,
    common: &Common,
) -> Result<(), Error> {
    let (cfg, _) = load(common)?;
    let channel = cfg.detection_channel(cfg.snr_db)?;
    let pmt = cfg.detection_pmt(cfg.sigma0, cfg.spreading_factor)?;
    let z = match (input, simulate) {
        (Some(path), _) => read_outputs(&path)?,
        (None, Some(x)) => {
            let mut rng = ChaCha8Rng::from_seed(chunk_seed(cfg.seed, 0));
            SymbolSampler::new(&channel, &pmt)?
                .sample(x == 1, &mut rng)
                .outputs
        }
        (None, None) => return Err(Error::Invalid("detect needs --input or --simulate".into())),
    };
    if z.len() != channel.intervals {
        return Err(Error::Invalid(format!(
            "expected {} interval outputs, got {}",
            channel.intervals,
            z.len()
        )));
    }
    let weighting = XWeighting::parse(&cfg.weighting)?;
    let (decision, statistic, threshold) = match detector {
        DetectorArg::Counting => {
            let tv = pmt.interval_thermal_var(channel.intervals);
            let opt = optimize_threshold_error(&channel, &pmt, tv, ThresholdSearch::default())?;
            let count = z.iter().filter(|&&v| v > opt.model.z_th).count();
            println!("z_th = {:.16e}", opt.model.z_th);
            (
                opt.detector.decide(count),
                count as f64,
                opt.detector.b_th as f64,
            )
        }
        kind => {
            let det = match kind {
                DetectorArg::Exact => MapDetector::exact(&channel, &pmt)?,
                DetectorArg::Linear => {
                    MapDetector::approx(&channel, &pmt, fit_linear(&channel, &pmt)?)?
                }
                _ => {
                    let opts = CubicFitOptions {
                        nodes: cfg.cubic_nodes,
                        weighting,
                    };
                    MapDetector::approx(&channel, &pmt, fit_cubic(&channel, &pmt, opts)?)?
                }
            };
            if let (Some(path), pmtcomm::detector::LlrRule::Approx(g)) = (&export, &det.rule) {
                fs::write(path, g.to_record())?;
                println!("wrote {}", path.display());
            }
            (det.decide(&z), det.statistic(&z), det.eta)
        }
    };
    println!("statistic = {statistic:.16e}");
    println!("threshold = {threshold:.16e}");
    println!("decision = {}", u8::from(decision));
    Ok(())
}

fn optimize_threshold(common: &Common) -> Result<(), Error> {
    let (cfg, _) = load(common)?;
    let channel = cfg.detection_channel(cfg.snr_db)?;
    let pmt = cfg.detection_pmt(cfg.sigma0, cfg.spreading_factor)?;
    let tv = pmt.interval_thermal_var(channel.intervals);
    let search = ThresholdSearch {
        grid: cfg.grid_size,
        ..ThresholdSearch::default()
    };
    let e = optimize_threshold_error(&channel, &pmt, tv, search)?;
    let k = optimize_threshold_kl(&channel, &pmt, tv, search)?;
    println!("z_error_opt = {:.16e}", e.model.z_th);
    println!("b_th = {}", e.detector.b_th);
    println!("error_at_error_opt = {:.16e}", e.detector.total_error);
    println!("z_kl_opt = {:.16e}", k.z_th());
    println!("min_kl_nats = {:.16e}", k.min_kl);
    println!("error_at_kl_opt = {:.16e}", k.model.detector()?.total_error);
    match kl_threshold_bounds(&channel, &pmt, tv) {
        Ok((lo, hi)) => {
            println!("z_kl_lower = {lo:.16e}");
            println!("z_kl_upper = {hi:.16e}");
        }
        Err(err) => println!("z_kl_bounds = unavailable ({err})"),
    }
    if e.flat || k.flat {
        println!("flat_objective = 1");
    }
    Ok(())
}

fn rate_bounds_cmd(common: &Common) -> Result<(), Error> {
    let (cfg, _) = load(common)?;
    let channel = cfg.rate_channel(cfg.rate_gamma_t, cfg.snr_db, cfg.intervals)?;
    let pmt = pmtcomm::PmtParams::normalized(cfg.spreading_factor, cfg.sigma0)?;
    let r = rate_bounds(&channel, &pmt, cfg.threshold_ratio * pmt.pulse_amplitude())?;
    println!("lower_bits = {:.16e}", r.lower_bits);
    println!("upper_bits = {:.16e}", r.upper_bits);
    if let Some(e) = r.exact_bits {
        println!("exact_bits = {e:.16e}");
    }
    println!("relative_gap = {:.16e}", r.relative_gap());
    println!("gap_bound_bits = {:.16e}", r.gap_bound_bits);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Experiment { name, common } => experiment(name, &common, cli.workers),
        Command::Detect {
            input,
            simulate,
            detector,
            export,
            common,
        } => detect(input, simulate, detector, export, &common),
        Command::OptimizeThreshold { common } => optimize_threshold(&common),
        Command::RateBounds { common } => rate_bounds_cmd(&common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
