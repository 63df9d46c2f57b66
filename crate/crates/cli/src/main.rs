mod config;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use freepc::freqdomain::{freq_data_equations, hankel_data_equations, is_pe_freq, DataEquations, FreqData};
use freepc::frf::{estimate_frf, ClosedLoopExperiment, ExperimentData, FrfEstimate};
use freepc::numcore::DEFAULT_RANK_TOL;
use freepc::ocp::{build_ocp, solve_ocp, OcpDump, OcpSolution};
use freepc::signals::{is_pe_time, TimeSeries};
use freepc::simloop::{monte_carlo, run_mpc_benchmark, run_rhc, warmup_trajectory, LOOP_TOL};

use config::{stream, RunConfig};

#[derive(Parser)]
#[command(name = "freepc", version, about = "Frequency-domain data-driven predictive control")]
struct Cli {
    /// Experiment configuration (TOML). Defaults reproduce the case study.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank test for persistency of excitation; exit status 0 iff exciting.
    CheckPe {
        /// Frequency data CSV (`freq, u0_re, u0_im, …`) or time series CSV.
        data: PathBuf,
        /// Required order L.
        #[arg(long)]
        order: usize,
        #[arg(long, value_enum, default_value_t = Domain::Freq)]
        domain: Domain,
    },
    /// Runs the closed-loop multi-sine experiment and writes d.csv, u.csv, y.csv.
    Collect {
        /// Overrides the configured number of kept periods.
        #[arg(long)]
        periods: Option<usize>,
    },
    /// Estimates the plant FRF from collected data; writes frf.csv and freq_data.csv.
    EstimateFrf {
        /// Directory holding d.csv, u.csv, y.csv (default: the output directory).
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Receding-horizon closed loop; writes trajectory_<scheme>.csv.
    Run {
        #[arg(long, value_enum)]
        scheme: Scheme,
        /// Use d.csv, u.csv, y.csv from this directory instead of running a fresh experiment.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Kept periods of a fresh experiment (DeePC cost grows quickly with this).
        #[arg(long)]
        periods: Option<usize>,
    },
    /// Monte Carlo study over data-set sizes; writes montecarlo.csv.
    Montecarlo {
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Writes the OCP of the first control step and its solution to ocp_<scheme>.toml.
    DumpOcp {
        #[arg(long, value_enum)]
        scheme: DataScheme,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        periods: Option<usize>,
    },
    /// Prints the effective configuration.
    ShowConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum Domain {
    Time,
    Freq,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scheme {
    Deepc,
    Freepc,
    Mpc,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataScheme {
    Deepc,
    Freepc,
}

impl Scheme {
    fn name(self) -> &'static str {
        match self {
            Scheme::Deepc => "deepc",
            Scheme::Freepc => "freepc",
            Scheme::Mpc => "mpc",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let solver = matches!(
                e.downcast_ref::<freepc::Error>(),
                Some(freepc::Error::SolverFailed { .. })
            );
            ExitCode::from(if solver { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = cli.out_dir {
        cfg.out_dir = d;
    }
    match cli.command {
        Command::CheckPe { data, order, domain } => check_pe(&data, order, domain),
        Command::Collect { periods } => {
            set_periods(&mut cfg, periods)?;
            let data = experiment(&cfg)?;
            let dir = out_dir(&cfg)?;
            for (name, ts) in [("d", &data.d), ("u", &data.u), ("y", &data.y)] {
                let path = dir.join(format!("{name}.csv"));
                ts.clone().rename(vec![name.to_string()])?.write_csv(create(&path)?)?;
            }
            println!("wrote {} samples per signal to {}", data.u.len(), dir.display());
            Ok(0)
        }
        Command::EstimateFrf { data_dir } => {
            let data = read_experiment(data_dir.as_deref().unwrap_or(&cfg.out_dir))?;
            let est = estimate(&cfg, &data)?;
            let dir = out_dir(&cfg)?;
            est.write_csv(create(&dir.join("frf.csv"))?)?;
            est.to_freq_data()?.write_csv(create(&dir.join("freq_data.csv"))?)?;
            println!(
                "{} frequencies from {} periods, mean variance {:.6e}",
                est.frequencies.len(),
                est.periods_used,
                est.mean_variance()
            );
            Ok(0)
        }
        Command::Run {
            scheme,
            data_dir,
            periods,
        } => {
            set_periods(&mut cfg, periods)?;
            let plant = cfg.plant()?;
            let res = match scheme {
                Scheme::Mpc => run_mpc_benchmark(&plant, &cfg.loop_config()?)?,
                _ => {
                    let data = load_or_collect(&cfg, data_dir.as_deref())?;
                    let eqs = data_equations(&cfg, &data, scheme == Scheme::Freepc)?;
                    run_rhc(&plant, &cfg.rhc_config(eqs)?)?
                }
            };
            let path = out_dir(&cfg)?.join(format!("trajectory_{}.csv", scheme.name()));
            res.write_csv(create(&path)?, true)?;
            println!("J = {:.10}", res.cost_j);
            Ok(0)
        }
        Command::Montecarlo { workers, runs } => {
            if let Some(r) = runs {
                cfg.monte_carlo.runs = r;
            }
            let plant = cfg.plant()?;
            let mc = cfg.monte_carlo()?;
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(w) = workers {
                if w == 0 {
                    bail!("--workers must be at least 1");
                }
                pool = pool.num_threads(w);
            }
            let table = pool.build()?.install(|| monte_carlo(&plant, &mc))?;
            let path = out_dir(&cfg)?.join("montecarlo.csv");
            table.write_csv(create(&path)?)?;
            println!("{:>4} {:>14} {:>12} {:>8}", "P", "mean J", "var J", "failures");
            for r in &table.rows {
                println!(
                    "{:>4} {:>14.6} {:>12.4e} {:>8}",
                    r.periods, r.mean_j, r.var_j, r.failures
                );
            }
            Ok(0)
        }
        Command::DumpOcp {
            scheme,
            data_dir,
            periods,
        } => {
            set_periods(&mut cfg, periods)?;
            let data = load_or_collect(&cfg, data_dir.as_deref())?;
            let freq = matches!(scheme, DataScheme::Freepc);
            let eqs = data_equations(&cfg, &data, freq)?;
            let (u_past, y_past) = first_past_window(&cfg)?;
            let p = build_ocp(&eqs, &u_past, &y_past, &cfg.ocp()?)?;
            let sol = solve_ocp(&p, LOOP_TOL)?;
            let dump = Dump {
                problem: OcpDump::from(&p),
                solution: sol,
            };
            let name = if freq { "freepc" } else { "deepc" };
            let path = out_dir(&cfg)?.join(format!("ocp_{name}.toml"));
            std::fs::write(&path, toml::to_string(&dump)?).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {} (status {:?})", path.display(), dump.solution.solver_status);
            Ok(0)
        }
        Command::ShowConfig => {
            print!("{}", toml::to_string(&cfg)?);
            Ok(0)
        }
    }
}

#[derive(Serialize)]
struct Dump {
    problem: OcpDump,
    solution: OcpSolution,
}

fn check_pe(path: &Path, order: usize, domain: Domain) -> Result<u8> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let report = match domain {
        Domain::Freq => {
            let data = FreqData::read_csv(file).with_context(|| format!("reading {}", path.display()))?;
            is_pe_freq(&data.input, order, DEFAULT_RANK_TOL)?
        }
        Domain::Time => {
            let x = TimeSeries::read_csv(file).with_context(|| format!("reading {}", path.display()))?;
            is_pe_time(&x, order, DEFAULT_RANK_TOL)?
        }
    };
    let verdict = if report.persistently_exciting {
        "persistently exciting"
    } else {
        "not persistently exciting"
    };
    println!(
        "rank {} of required {}: {verdict} of order {order}",
        report.rank, report.required
    );
    Ok(if report.persistently_exciting { 0 } else { 1 })
}

fn set_periods(cfg: &mut RunConfig, periods: Option<usize>) -> Result<()> {
    if let Some(p) = periods {
        cfg.excitation.periods = p;
    }
    cfg.validate()
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(&cfg.out_dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn experiment(cfg: &RunConfig) -> Result<ExperimentData> {
    let exp = ClosedLoopExperiment {
        plant: cfg.plant()?,
        controller: cfg.controller()?,
        excitation: cfg.excitation()?,
        noise_std: cfg.excitation.noise_std,
        rng_seed: cfg.seed_for(stream::EXPERIMENT),
        discard_periods: cfg.excitation.discard_periods,
    };
    Ok(exp.run()?)
}

fn read_experiment(dir: &Path) -> Result<ExperimentData> {
    let read = |name: &str| -> Result<TimeSeries> {
        let path = dir.join(format!("{name}.csv"));
        let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        TimeSeries::read_csv(f).with_context(|| format!("reading {}", path.display()))
    };
    Ok(ExperimentData {
        d: read("d")?,
        u: read("u")?,
        y: read("y")?,
    })
}

fn load_or_collect(cfg: &RunConfig, dir: Option<&Path>) -> Result<ExperimentData> {
    match dir {
        Some(d) => read_experiment(d),
        None => experiment(cfg),
    }
}

fn estimate(cfg: &RunConfig, data: &ExperimentData) -> Result<FrfEstimate> {
    let spec = cfg.excitation()?;
    Ok(estimate_frf(
        &data.d,
        &data.u,
        &data.y,
        spec.period_length,
        &spec.frequencies,
    )?)
}

fn data_equations(cfg: &RunConfig, data: &ExperimentData, freq: bool) -> Result<DataEquations> {
    let depth = cfg.ocp()?.depth();
    if freq {
        Ok(freq_data_equations(&estimate(cfg, data)?.to_freq_data()?, depth)?)
    } else {
        Ok(hankel_data_equations(&data.u, &data.y, depth)?)
    }
}

/// Past window at the first control step: the tail of the warmup.
fn first_past_window(cfg: &RunConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let (u, y) = warmup_trajectory(&cfg.plant()?, &cfg.loop_config()?)?;
    let tb = cfg.ocp.past;
    let n = u.len();
    Ok((u.stacked(n - tb, tb), y.stacked(n - tb, tb)))
}
