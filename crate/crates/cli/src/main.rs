use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use vmip_core::bfgs::CSchedule;
use vmip_core::runner::{self, comparison_table, InstanceSource, RunConfig, StrategyKind};
use vmip_core::{Delta, GeneratorKind, GeneratorSpec, Secant};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Gen {
    Lasso,
    Qq,
    Toy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Zero,
    Psd,
    FixedIndef,
    Bfgs,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Zero => StrategyKind::Zero,
            StrategyArg::Psd => StrategyKind::Psd,
            StrategyArg::FixedIndef => StrategyKind::FixedIndef,
            StrategyArg::Bfgs => StrategyKind::Bfgs,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SecantArg {
    Y,
    X,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DeltaMode {
    /// delta = value * (1 + ||M||)
    Rel,
    /// delta = value
    Abs,
}

/// Run VMIP-ADMM strategies on a generated or loaded instance, certify the
/// convergence conditions and write results.
///
/// Exit status: 0 all runs converged and certified, 1 some run did not
/// converge or certify, 2 I/O or parse error, 3 solver breakdown, 4 invalid
/// configuration.
#[derive(Debug, Parser)]
#[command(name = "vmip", version)]
struct Args {
    /// Generate an instance.
    #[arg(long, value_enum, conflicts_with = "instance", required_unless_present = "instance")]
    gen: Option<Gen>,

    /// Load an instance from a JSON problem file.
    #[arg(long)]
    instance: Option<PathBuf>,

    /// Strategy to run; repeat to compare several.
    #[arg(long = "strategy", value_enum, required = true)]
    strategies: Vec<StrategyArg>,

    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Variables per block (lasso default 200, qq default 50).
    #[arg(long)]
    n: Option<usize>,

    /// Rows of C for lasso, coupling rows for qq (defaults 100 and 30).
    #[arg(long)]
    rows: Option<usize>,

    /// Fraction of nonzero entries of C (lasso).
    #[arg(long, default_value_t = 0.1)]
    density: f64,

    /// l1 weight (lasso); default 0.1 ||C^T d||_inf.
    #[arg(long)]
    mu: Option<f64>,

    /// Noise standard deviation (lasso).
    #[arg(long, default_value_t = 0.01)]
    noise: f64,

    /// Target condition number (qq).
    #[arg(long, default_value_t = 10.0)]
    cond: f64,

    #[arg(long, default_value_t = 1.0)]
    beta: f64,

    #[arg(long, default_value_t = 0.8)]
    tau: f64,

    #[arg(long, default_value_t = 1e-4)]
    delta: f64,

    #[arg(long, value_enum, default_value = "rel")]
    delta_mode: DeltaMode,

    /// First damping weight c_0 of the geometric schedule.
    #[arg(long, default_value_t = 1.0)]
    c0: f64,

    /// Ratio of the geometric damping schedule.
    #[arg(long, default_value_t = 0.5)]
    rho: f64,

    /// r = r_factor * beta ||B^T B|| for the fixed strategies.
    #[arg(long, default_value_t = 1.01)]
    r_factor: f64,

    #[arg(long, default_value_t = 1e-6)]
    tol_primal: f64,

    #[arg(long, default_value_t = 1e-6)]
    tol_dual: f64,

    #[arg(long, default_value_t = 50_000)]
    max_iter: usize,

    /// Audit the contraction inequalities against a reference solution.
    #[arg(long)]
    diagnostics: bool,

    /// Difference used as the BFGS secant step.
    #[arg(long, value_enum, default_value = "y")]
    secant: SecantArg,

    /// Directory for results.json, traces and reports.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn generator(args: &Args, gen: Gen) -> GeneratorSpec {
    let kind = match gen {
        Gen::Lasso => GeneratorKind::Lasso {
            n: args.n.unwrap_or(200),
            m_rows: args.rows.unwrap_or(100),
            density: args.density,
            mu: args.mu,
            noise_sigma: args.noise,
        },
        Gen::Qq => GeneratorKind::RandomQq {
            n: args.n.unwrap_or(50),
            m: args.rows.unwrap_or(30),
            cond_target: args.cond,
        },
        Gen::Toy => GeneratorKind::ScalarToy,
    };
    GeneratorSpec { kind, seed: args.seed }
}

fn config(args: &Args) -> RunConfig {
    let instance = match (&args.instance, args.gen) {
        (Some(path), _) => InstanceSource::File(path.clone()),
        (None, Some(gen)) => InstanceSource::Generator(generator(args, gen)),
        (None, None) => unreachable!("clap requires --gen or --instance"),
    };
    let mut cfg = RunConfig::new(instance, args.strategies.iter().map(|&s| s.into()).collect());
    cfg.beta = args.beta;
    cfg.tau = args.tau;
    cfg.delta = match args.delta_mode {
        DeltaMode::Rel => Delta::Relative(args.delta),
        DeltaMode::Abs => Delta::Absolute(args.delta),
    };
    cfg.schedule = CSchedule::Geometric {
        c0: args.c0,
        rho: args.rho,
    };
    cfg.r_factor = args.r_factor;
    cfg.tol_primal = args.tol_primal;
    cfg.tol_dual = args.tol_dual;
    cfg.max_iter = args.max_iter;
    cfg.diagnostics = args.diagnostics;
    cfg.secant = match args.secant {
        SecantArg::Y => Secant::Y,
        SecantArg::X => Secant::X,
    };
    cfg.out_dir = args.out.clone();
    cfg
}

fn main() -> ExitCode {
    let args = Args::parse();
    match runner::run(&config(&args)) {
        Ok(outcome) => {
            println!("instance {}", outcome.results.instance);
            print!("{}", comparison_table(&outcome.results));
            for run in &outcome.runs {
                if let Some(e) = &run.result.error {
                    eprintln!("{}: {e}", run.kind.name());
                }
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(runner::exit_code_for(&e) as u8)
        }
    }
}
