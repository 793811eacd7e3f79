use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use mlmcmc::harness::{commands, selftest, ExperimentConfig};
use mlmcmc::samplers::AcceptanceRule;

#[derive(Parser)]
#[command(name = "mlmcmc", version, about = "Multilevel MCMC for a lognormal Darcy inverse problem")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic observations and the KL basis table.
    Synthesize(Common),
    /// Multilevel estimate of the outflow flux.
    Estimate(Common),
    /// Single-level estimate on the finest level.
    Baseline(Common),
    /// Multilevel vs single-level cost over a list of tolerances.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated tolerances, overriding [compare] epsilons.
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
    /// Fit mean and variance decay rates over levels.
    Rates(Common),
    /// Compare level-0 MCMC against tensor quadrature.
    Oracle(Common),
    /// Write the data behind the performance figures.
    Figures(Common),
    /// Run the acceptance checks.
    Selftest {
        /// Criterion numbers to run (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        /// List criteria and exit.
        #[arg(long)]
        list: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    PriorReversible,
    PosteriorRatio,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults to the full-size configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, env = "MLMCMC_OUT", default_value = "out")]
    out: PathBuf,
    /// Master seed for the chains.
    #[arg(long)]
    seed: Option<u64>,
    /// Target tolerance; clears any fixed sample counts.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum)]
    rule: Option<Rule>,
    /// Also write every kept sample.
    #[arg(long)]
    samples: bool,
}

impl Common {
    fn load(&self) -> anyhow::Result<(ExperimentConfig, Option<PathBuf>)> {
        let (mut cfg, base) = match &self.config {
            Some(p) => (
                ExperimentConfig::load(p)?,
                p.parent().map(Path::to_path_buf),
            ),
            None => (ExperimentConfig::default(), None),
        };
        if let Some(s) = self.seed {
            cfg.sampling.seed = s;
        }
        if let Some(e) = self.epsilon {
            cfg.sampling.epsilon = Some(e);
            cfg.sampling.samples = None;
        }
        if let Some(r) = self.rule {
            cfg.sampling.rule = match r {
                Rule::PriorReversible => AcceptanceRule::PriorReversible,
                Rule::PosteriorRatio => AcceptanceRule::PosteriorRatio,
            };
        }
        cfg.output.samples |= self.samples;
        cfg.validate()?;
        Ok((cfg, base))
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Synthesize(c) => {
            let (cfg, base) = c.load()?;
            let path = commands::synthesize(&cfg, base.as_deref(), &c.out)?;
            println!("observations written to {}", path.display());
        }
        Command::Estimate(c) => {
            let (cfg, base) = c.load()?;
            let run = commands::estimate(&cfg, base.as_deref(), &c.out)?;
            let e = &run.estimate;
            println!("q_hat = {} cost = {} ({})", e.q_hat, e.total_cost, c.out.display());
        }
        Command::Baseline(c) => {
            let (cfg, base) = c.load()?;
            let run = commands::baseline(&cfg, base.as_deref(), &c.out)?;
            let e = &run.estimate;
            println!("q_hat = {} cost = {} ({})", e.q_hat, e.total_cost, c.out.display());
        }
        Command::Compare { common, epsilons } => {
            let (mut cfg, base) = common.load()?;
            if let Some(e) = epsilons {
                cfg.compare.epsilons = e;
                cfg.validate()?;
            }
            for r in commands::compare(&cfg, base.as_deref(), &common.out)? {
                println!(
                    "eps {}: multilevel {} single {} ratio {:.4}",
                    r.epsilon,
                    r.multilevel.total_cost,
                    r.single.total_cost,
                    r.cost_ratio()
                );
            }
        }
        Command::Rates(c) => {
            let (cfg, base) = c.load()?;
            let (_, fit) = commands::rates(&cfg, base.as_deref(), &c.out)?;
            println!("mean slope {:.3} variance slope {:.3}", fit.alpha, fit.beta);
        }
        Command::Oracle(c) => {
            let (cfg, base) = c.load()?;
            for r in commands::oracle(&cfg, base.as_deref(), &c.out)? {
                println!(
                    "{:?}: quadrature {} mcmc {} z {:.2}",
                    r.rule, r.quadrature.fine.mean, r.mcmc_mean, r.z
                );
            }
        }
        Command::Figures(c) => {
            let (cfg, base) = c.load()?;
            for p in commands::figures(&cfg, base.as_deref(), &c.out)? {
                println!("{}", p.display());
            }
        }
        Command::Selftest { only, list } => {
            if list {
                for c in &selftest::CRITERIA {
                    println!("{:>2} {} (budget {}s)", c.id, c.title, c.budget.as_secs());
                }
                return Ok(true);
            }
            if let Some(bad) = only.iter().find(|id| selftest::criterion(**id).is_none()) {
                anyhow::bail!("no criterion {bad}");
            }
            let mut all = true;
            for c in selftest::CRITERIA.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
                let o = selftest::run(c);
                println!("{}", o.line());
                all &= o.passed;
            }
            return Ok(all);
        }
    }
    Ok(true)
}

/// 2 for configuration errors, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let config_error = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<mlmcmc::Error>(), Some(mlmcmc::Error::Config(_))));
    if config_error {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli).context("mlmcmc failed") {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use std::fs;

    use super::*;

    const TINY: &str = r#"
[hierarchy]
max_level = 1
m0 = 5
truncation = [2, 3]
sigma2_f = 0.01

[sampling]
samples = [40, 20]
chains = 2
burn_in = 10
thinning = 1
"#;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("mlmcmc").chain(args.iter().copied())).unwrap()
    }

    fn config(dir: &Path, text: &str) -> String {
        let p = dir.join("run.toml");
        fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    }

    #[test]
    fn estimate_writes_a_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), TINY);
        let out = dir.path().join("bundle");
        assert!(run(cli(&["estimate", "--config", &cfg, "--out", out.to_str().unwrap()])).unwrap());
        for f in ["config.toml", "observations.json", "levels.csv", "summary.json", "seeds.txt"] {
            assert!(out.join(f).is_file(), "missing {f}");
        }
    }

    #[test]
    fn seed_override_is_recorded_and_changes_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), TINY);
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        run(cli(&["estimate", "-c", &cfg, "-o", a.to_str().unwrap()])).unwrap();
        run(cli(&["estimate", "-c", &cfg, "-o", b.to_str().unwrap(), "--seed", "9", "--samples"])).unwrap();
        let seeds = fs::read_to_string(b.join("seeds.txt")).unwrap();
        assert!(seeds.starts_with("master_seed=9\n"), "{seeds}");
        assert!(b.join("samples_level1_chain0.csv").is_file());
        assert_ne!(fs::read(a.join("levels.csv")).unwrap(), fs::read(b.join("levels.csv")).unwrap());
    }

    #[test]
    fn epsilon_override_replaces_fixed_samples() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), TINY);
        let c = cli(&["estimate", "-c", &cfg, "--epsilon", "0.1", "--rule", "posterior-ratio"]);
        let Command::Estimate(common) = c.command else { panic!() };
        let (cfg, _) = common.load().unwrap();
        assert_eq!(cfg.budget(), mlmcmc::estimator::Budget::Tolerance(0.1));
        assert_eq!(cfg.sampling.rule, AcceptanceRule::PosteriorRatio);
    }

    #[test]
    fn config_errors_map_to_exit_code_two() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), "[sampling]\nchains = 0\nthinning = 0\n");
        let err = run(cli(&["estimate", "--config", &cfg])).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        let text = format!("{err:#}");
        assert!(text.contains("sampling.chains") && text.contains("sampling.thinning"), "{text}");

        let cfg = config(dir.path(), "[sampling]\nchainz = 3\n");
        let err = run(cli(&["estimate", "--config", &cfg])).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(format!("{err:#}").contains("chainz"));

        let err = run(cli(&["selftest", "--only", "13"])).unwrap_err();
        assert_eq!(exit_code(&err), 1);
    }

    #[test]
    fn selftest_subset_passes() {
        assert!(run(cli(&["selftest", "--only", "1,5,10"])).unwrap());
        assert!(run(cli(&["selftest", "--list"])).unwrap());
    }

    #[test]
    fn out_dir_defaults_from_the_environment() {
        std::env::set_var("MLMCMC_OUT", "from-env");
        let Command::Rates(c) = cli(&["rates"]).command else { panic!() };
        assert_eq!(c.out, PathBuf::from("from-env"));
    }
}
