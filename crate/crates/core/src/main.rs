use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nonholonomic_newmark::harness::{
    convergence_csv, run_convergence, run_ensemble, run_simulation, EnsembleSpec, ExperimentSpec, MethodId, RunError,
    SystemId, EXIT_INVALID_SPEC, EXIT_SOLVER_FAILURE,
};
use nonholonomic_newmark::{Discretization, Error, NewmarkParams, State};

#[derive(Parser)]
#[command(name = "nhnewmark", version, about = "Nonholonomic Newmark integrators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory and write it as CSV.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Final-time errors over a ladder of step sizes.
    Convergence {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05")]
        h_list: Vec<f64>,
        /// The RK4 reference uses `h_min / reference_divisor`.
        #[arg(long, default_value_t = 64)]
        reference_divisor: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Energy drift over randomly sampled initial states of equal energy.
    Ensemble {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1.535)]
        energy: f64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Drift CSV, one column per trajectory.
        #[arg(long)]
        out: PathBuf,
        /// Variance CSV; defaults to `<out stem>_variance.csv`.
        #[arg(long)]
        variance_out: Option<PathBuf>,
    },
    ListSystems,
    ListMethods,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "particle")]
    system: String,
    /// Only used by `cvt`.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    epsilon: f64,
    #[arg(long, default_value = "newmark")]
    method: String,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    beta: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    beta_prime: f64,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    alpha: f64,
    /// `midpoint` or `form-average`.
    #[arg(long, default_value = "midpoint")]
    discretization: String,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    h: f64,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    t_final: f64,
    /// Initial positions, comma separated; needs `--v0` too.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    q0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    v0: Option<Vec<f64>>,
    /// Project the initial velocity onto the constraint distribution.
    #[arg(long)]
    project_ic: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunArgs {
    fn to_spec(&self) -> Result<ExperimentSpec, Error> {
        let system = SystemId::from_name(&self.system, self.epsilon)?;
        let method: MethodId = self.method.parse()?;
        let discretization: Discretization = self.discretization.parse()?;
        // Validation is deferred to the run so that rk4 can ignore these.
        let params = NewmarkParams {
            beta: self.beta,
            beta_prime: self.beta_prime,
            alpha: self.alpha,
            discretization,
        };
        let initial = match (&self.q0, &self.v0) {
            (Some(q), Some(v)) => Some(State::from_slices(q, v)),
            (None, None) => None,
            _ => return Err(Error::InvalidParameter("--q0 and --v0 must be given together".into())),
        };
        Ok(ExperimentSpec {
            initial,
            project_ic: self.project_ic,
            seed: self.seed,
            ..ExperimentSpec::new(system, method, params, self.h, self.t_final)
        })
    }
}

fn write_output(path: Option<&Path>, contents: &str) -> io::Result<()> {
    match path {
        Some(p) => fs::write(p, contents),
        None => io::stdout().lock().write_all(contents.as_bytes()),
    }
}

fn variance_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("ensemble");
    out.with_file_name(format!("{stem}_variance.csv"))
}

fn fail(err: &RunError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn io_fail(err: io::Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(EXIT_SOLVER_FAILURE as u8)
}

fn run(cli: Cli) -> ExitCode {
    match cli.command {
        Command::ListSystems => {
            for name in SystemId::ALL_NAMES {
                let sys = SystemId::from_name(name, 0.0).expect("catalog name").build();
                println!("{name}\tn={}\tconstraints={}\t{}", sys.dim(), sys.n_constraints(), sys.name());
            }
            ExitCode::SUCCESS
        }
        Command::ListMethods => {
            for m in MethodId::ALL {
                println!("{}\t{}", m.name(), m.description());
            }
            ExitCode::SUCCESS
        }
        Command::Simulate { run, out } => {
            let spec = match run.to_spec() {
                Ok(s) => s,
                Err(e) => return fail(&RunError::Invalid(e)),
            };
            match run_simulation(&spec) {
                Ok(record) => match write_output(out.as_deref(), &record.to_csv_string()) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => io_fail(e),
                },
                Err(err) => {
                    if let RunError::Solver { record, .. } = &err {
                        if let Err(e) = write_output(out.as_deref(), &record.to_csv_string()) {
                            eprintln!("error: could not flush partial trajectory: {e}");
                        }
                    }
                    fail(&err)
                }
            }
        }
        Command::Convergence {
            run,
            h_list,
            reference_divisor,
            out,
        } => {
            let spec = match run.to_spec() {
                Ok(s) => s,
                Err(e) => return fail(&RunError::Invalid(e)),
            };
            match run_convergence(&spec, &h_list, reference_divisor) {
                Ok(rows) => match write_output(out.as_deref(), &convergence_csv(&rows)) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => io_fail(e),
                },
                Err(err) => fail(&err),
            }
        }
        Command::Ensemble {
            run,
            energy,
            count,
            out,
            variance_out,
        } => {
            let spec = match run.to_spec() {
                Ok(s) => s,
                Err(e) => return fail(&RunError::Invalid(e)),
            };
            let es = EnsembleSpec { run: spec, energy, count };
            match run_ensemble(&es) {
                Ok(result) => {
                    let var_path = variance_out.unwrap_or_else(|| variance_path(&out));
                    let written = fs::write(&out, result.drift_csv())
                        .and_then(|()| fs::write(&var_path, result.variance_csv()));
                    match written {
                        Ok(()) => ExitCode::SUCCESS,
                        Err(e) => io_fail(e),
                    }
                }
                Err(err) => fail(&err),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID_SPEC } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    run(cli)
}
