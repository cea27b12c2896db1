use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use boirl::eval::{dump_rho, grid_scan, load_config, run_experiment, EnvFile};
use boirl::gp::{GpState, InputMap, Kernel, KernelKind};
use boirl::io::write_atomic;
use boirl::objective::NllObjective;
use boirl::projection::{generate_basis, ProjectionBasis, RhoProjector};
use boirl::{Error, Result};

#[derive(Parser)]
#[command(name = "boirl", version, about = "Bayesian-optimization inverse RL on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write traces plus an aggregate report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// NLL over a 2-D slice of the parameter box, as a CSV matrix.
    Scan {
        /// Config file with `[env]` and `[demos]` sections.
        #[arg(long)]
        env: PathBuf,
        #[arg(long, value_parser = parse_axes)]
        axes: (usize, usize),
        /// Values of all coordinates; the scanned ones are ignored. Defaults
        /// to the ground truth, or the box center without one.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        fix: Option<Vec<f64>>,
        #[arg(long)]
        res: usize,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// GP snapshot whose posterior mean is scanned too.
        #[arg(long)]
        gp: Option<PathBuf>,
        /// ρ basis, required when the GP uses the ρ-RBF kernel.
        #[arg(long)]
        basis: Option<PathBuf>,
        /// Output CSV for the GP mean; defaults to `--out` with extension `.gp.csv`.
        #[arg(long)]
        gp_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// ρ-vectors over a 2-D grid, one CSV row per point.
    DumpRho {
        #[arg(long)]
        env: PathBuf,
        /// `i,j,N`: scanned axes and points per axis.
        #[arg(long, value_parser = parse_grid)]
        grid: (usize, usize, usize),
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        fix: Option<Vec<f64>>,
        /// Existing basis; otherwise one is generated from the demos.
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        m: usize,
        /// Seed for basis generation.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also save the generated basis here.
        #[arg(long)]
        basis_out: Option<PathBuf>,
    },
}

fn parse_usizes(s: &str, n: usize) -> std::result::Result<Vec<usize>, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated integers"));
    }
    Ok(v)
}

fn parse_axes(s: &str) -> std::result::Result<(usize, usize), String> {
    let v = parse_usizes(s, 2)?;
    Ok((v[0], v[1]))
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let v = parse_usizes(s, 3)?;
    Ok((v[0], v[1], v[2]))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_env_file(path: &Path, seed: Option<u64>) -> Result<EnvFile> {
    let mut file = EnvFile::load(path)?;
    if let Some(s) = seed {
        file.demos.seed = s;
    }
    Ok(file)
}

fn default_fix(env: &boirl::envs::EnvironmentSpec, fix: Option<Vec<f64>>) -> Vec<f64> {
    fix.unwrap_or_else(|| match env.ground_truth() {
        Some(gt) => gt.theta().to_vec(),
        None => env.theta_bounds().center(),
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out, seed } => {
            let mut config = load_config(&config)?;
            if let Some(s) = seed {
                config.seeds = vec![s];
            }
            let report = run_experiment(&config, Some(&out))?;
            for s in &report.seeds {
                match &s.error {
                    Some(e) => eprintln!("seed {}: failed: {e}", s.seed),
                    None => eprintln!(
                        "seed {}: best NLL {:.6}, iterations {}",
                        s.seed,
                        s.best_nll.unwrap_or(f64::NAN),
                        s.iterations.map_or("-".into(), |i| i.to_string())
                    ),
                }
            }
            println!(
                "{}: success rate {:.2} over {} completed seeds; report in {}",
                config.algorithm.name(),
                report.success_rate,
                report.completed,
                out.join("report.json").display()
            );
            Ok(())
        }
        Command::Scan {
            env,
            axes,
            fix,
            res,
            out,
            gp,
            basis,
            gp_out,
            seed,
        } => {
            let file = load_env_file(&env, seed)?;
            let (env, demos) = file.build()?;
            let objective = NllObjective::new(&env, &demos, file.soft_vi, true)?;
            let fixed = default_fix(&env, fix);
            let surrogate = match gp {
                Some(path) => {
                    let state = GpState::load(&path)?;
                    let map = match state.kernel().kind {
                        KernelKind::RhoRbf => {
                            let basis = ProjectionBasis::load(basis.ok_or_else(|| {
                                Error::Config("--basis is required for a rho-rbf GP".into())
                            })?)?;
                            InputMap::Rho(std::sync::Arc::new(RhoProjector::new(&basis, &env)))
                        }
                        _ => InputMap::Whiten(env.theta_bounds().clone()),
                    };
                    Some((state.clone(), Kernel::new(*state.kernel(), map)?))
                }
                None => None,
            };
            let mean = |t: &[f64]| -> Result<f64> {
                let (state, kernel) = surrogate.as_ref().expect("only called with a GP");
                Ok(state.posterior(&kernel.features(t)?)?.0)
            };
            let f = |t: &[f64]| objective.evaluate(t);
            let scan = grid_scan(
                &f,
                env.theta_bounds(),
                axes,
                &fixed,
                res,
                surrogate.as_ref().map(|_| &mean as &(dyn Fn(&[f64]) -> Result<f64> + Sync)),
            )?;
            emit(out.as_deref(), &scan.nll_csv())?;
            if let Some(csv) = scan.gp_mean_csv() {
                let path = gp_out.or_else(|| out.as_ref().map(|o| o.with_extension("gp.csv")));
                emit(path.as_deref(), &csv)?;
            }
            Ok(())
        }
        Command::DumpRho {
            env,
            grid,
            fix,
            basis,
            k,
            m,
            seed,
            out,
            basis_out,
        } => {
            let file = EnvFile::load(&env)?;
            let (env, demos) = file.build()?;
            let basis = match basis {
                Some(p) => ProjectionBasis::load(p)?,
                None => generate_basis(&demos, env.mdp(), k, m, seed)?,
            };
            if let Some(p) = basis_out {
                basis.save(p)?;
            }
            let projector = RhoProjector::new(&basis, &env);
            let fixed = default_fix(&env, fix);
            let csv = dump_rho(&projector, env.theta_bounds(), (grid.0, grid.1), &fixed, grid.2)?;
            emit(out.as_deref(), &csv)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
