//! Batch runs: load or generate an instance, solve it with several
//! strategies, certify and audit each run, and write the artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bfgs::CSchedule;
use crate::conditions::{self, Certification};
use crate::diagnostics::{self, ContractionTrace};
use crate::error::{Error, Result};
use crate::model::{KktResidual, PrimalDualPoint, ProblemInstance};
use crate::problems::{self, GeneratorSpec};
use crate::solver::{self, Secant, SolveResult, SolverConfig, Status};
use crate::strategies::{Delta, StrategyConfig};

pub const RESULTS_SCHEMA: &str = "vmip-results/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Zero,
    Psd,
    FixedIndef,
    Bfgs,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Zero => "zero",
            StrategyKind::Psd => "psd",
            StrategyKind::FixedIndef => "fixed-indef",
            StrategyKind::Bfgs => "bfgs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(StrategyKind::Zero),
            "psd" => Ok(StrategyKind::Psd),
            "fixed-indef" => Ok(StrategyKind::FixedIndef),
            "bfgs" => Ok(StrategyKind::Bfgs),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSource {
    File(PathBuf),
    Generator(GeneratorSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub instance: InstanceSource,
    pub strategies: Vec<StrategyKind>,
    pub beta: f64,
    pub tau: f64,
    pub delta: Delta,
    pub schedule: CSchedule,
    /// Multiplier of `beta ||B^T B||` for the fixed strategies.
    pub r_factor: f64,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
    pub diagnostics: bool,
    pub secant: Secant,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(instance: InstanceSource, strategies: Vec<StrategyKind>) -> Self {
        Self {
            instance,
            strategies,
            beta: 1.0,
            tau: 0.8,
            delta: Delta::default(),
            schedule: CSchedule::default(),
            r_factor: 1.01,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            max_iter: 50_000,
            diagnostics: false,
            secant: Secant::Y,
            out_dir: None,
        }
    }

    pub fn load_instance(&self) -> Result<ProblemInstance> {
        match &self.instance {
            InstanceSource::File(path) => ProblemInstance::from_json(&fs::read_to_string(path)?),
            InstanceSource::Generator(spec) => spec.generate(),
        }
    }

    pub fn strategy_config(&self, kind: StrategyKind, p: &ProblemInstance) -> Result<StrategyConfig> {
        match kind {
            StrategyKind::Zero => Ok(StrategyConfig::Zero),
            StrategyKind::Psd => StrategyConfig::linearized_psd(p, self.beta, self.r_factor),
            StrategyKind::FixedIndef => StrategyConfig::fixed_indefinite(p, self.beta, self.tau, self.r_factor),
            StrategyKind::Bfgs => Ok(StrategyConfig::VariableBfgs {
                tau: self.tau,
                delta: self.delta,
                schedule: self.schedule,
            }),
        }
    }

    pub fn solver_config(&self, strategy: StrategyConfig) -> SolverConfig {
        let mut sc = SolverConfig::new(strategy);
        sc.beta = self.beta;
        sc.max_iter = self.max_iter;
        sc.tol_primal = self.tol_primal;
        sc.tol_dual = self.tol_dual;
        sc.record_diagnostics = self.diagnostics;
        sc.secant = self.secant;
        sc
    }
}

/// Per-strategy line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub iters: usize,
    pub status: Status,
    pub kkt: KktResidual,
    pub certified: bool,
    pub worst_clause: String,
    pub worst_margin: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub schema: String,
    pub instance: String,
    pub runs: Vec<RunSummary>,
}

impl Results {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }
}

/// Everything produced for one strategy.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub kind: StrategyKind,
    pub result: SolveResult,
    pub certification: Certification,
    pub audit: Option<ContractionTrace>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub results: Results,
    pub runs: Vec<StrategyRun>,
    pub exit_code: i32,
}

pub const EXIT_OK: i32 = 0;
/// Some run hit the iteration limit or failed certification.
pub const EXIT_UNCERTIFIED: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

/// Exit code for an error that stopped a batch.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Parse(_) => EXIT_IO,
        Error::NotSpd { .. } | Error::Curvature(_) => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}

fn run_one(
    cfg: &RunConfig,
    p: &ProblemInstance,
    kind: StrategyKind,
    w_star: Option<&PrimalDualPoint>,
) -> Result<(StrategyRun, f64)> {
    let strategy = cfg.strategy_config(kind, p)?;
    let c_const = conditions::default_c(&strategy);
    let start = Instant::now();
    let result = solver::solve(p, &cfg.solver_config(strategy))?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let certification = conditions::certify(p, &result.trace, c_const);
    let audit = match w_star {
        Some(ws) => Some(diagnostics::audit(p, &result.trace, ws, c_const)?),
        None => None,
    };
    Ok((
        StrategyRun {
            kind,
            result,
            certification,
            audit,
        },
        wall_ms,
    ))
}

/// Runs every requested strategy. Strategies run on separate threads;
/// results are collected in request order.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    if cfg.strategies.is_empty() {
        return Err(Error::Config("at least one strategy is required".into()));
    }
    let p = cfg.load_instance()?;
    for &kind in &cfg.strategies {
        let sc = cfg.strategy_config(kind, &p)?;
        crate::strategies::Strategy::init(&sc, &p, cfg.beta)?;
    }
    let w_star = if cfg.diagnostics { Some(problems::oracle_solve(&p)?) } else { None };

    let outputs: Vec<Result<(StrategyRun, f64)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .strategies
            .iter()
            .map(|&kind| {
                let (p, ws) = (&p, w_star.as_ref());
                scope.spawn(move || run_one(cfg, p, kind, ws))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("strategy worker panicked"))
            .collect()
    });

    let mut runs = Vec::new();
    let mut summaries = Vec::new();
    for out in outputs {
        let (run, wall_ms) = out?;
        let s = &run.certification.summary;
        summaries.push(RunSummary {
            strategy: run.kind.name().to_string(),
            iters: run.result.iterations,
            status: run.result.status,
            kkt: run.result.kkt,
            certified: s.pass,
            worst_clause: s.worst_clause.clone(),
            worst_margin: s.worst_margin,
            wall_ms,
        });
        runs.push(run);
    }
    let results = Results {
        schema: RESULTS_SCHEMA.to_string(),
        instance: problems::fingerprint(&p),
        runs: summaries,
    };

    let exit_code = if runs
        .iter()
        .any(|r| matches!(r.result.status, Status::NotSpd | Status::Diverged))
    {
        EXIT_SOLVER
    } else if runs
        .iter()
        .all(|r| r.result.status == Status::Converged && r.certification.summary.pass)
    {
        EXIT_OK
    } else {
        EXIT_UNCERTIFIED
    };

    let outcome = RunOutcome {
        results,
        runs,
        exit_code,
    };
    if let Some(dir) = &cfg.out_dir {
        write_artifacts(dir, &p, &outcome)?;
    }
    Ok(outcome)
}

/// Writes `instance.json`, `results.json` and, per strategy,
/// `trace_<s>.csv`, `certification_<s>.json` and (with diagnostics)
/// `diagnostics_<s>.csv`.
pub fn write_artifacts(dir: &Path, p: &ProblemInstance, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("instance.json"), p.to_json())?;
    fs::write(dir.join("results.json"), outcome.results.to_json())?;
    for run in &outcome.runs {
        let name = run.kind.name();
        write_trace_csv(fs::File::create(dir.join(format!("trace_{name}.csv")))?, run)?;
        fs::write(dir.join(format!("certification_{name}.json")), run.certification.to_json())?;
        if let Some(audit) = &run.audit {
            audit.write_csv(fs::File::create(dir.join(format!("diagnostics_{name}.csv")))?)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceRow {
    k: usize,
    primal: f64,
    dual_x: f64,
    dual_y: f64,
    #[serde(rename = "Tk_min_eig")]
    tk_min_eig: f64,
    gamma: f64,
    #[serde(rename = "V")]
    v: Option<f64>,
    term1: Option<f64>,
    gap: Option<f64>,
}

/// `k,primal,dual_x,dual_y,Tk_min_eig,gamma,V,term1,gap`; the last three
/// are empty without diagnostics.
pub fn write_trace_csv<W: Write>(out: W, run: &StrategyRun) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (i, rec) in run.result.records.iter().enumerate() {
        let audit = run.audit.as_ref().and_then(|a| a.rows.get(i));
        w.serialize(TraceRow {
            k: rec.k,
            primal: rec.kkt.primal,
            dual_x: rec.kkt.dual_x,
            dual_y: rec.kkt.dual_y,
            tk_min_eig: rec.tk_min_eig,
            gamma: rec.gamma,
            v: audit.map(|a| a.v),
            term1: audit.map(|a| a.term1),
            gap: audit.map(|a| a.gap),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width comparison of the runs.
pub fn comparison_table(results: &Results) -> String {
    let mut out = format!(
        "{:<12} {:>8} {:>10} {:>11} {:>11} {:>11} {:>9} {:>12} {:>10}\n",
        "strategy", "iters", "status", "primal", "dual_x", "dual_y", "certified", "worst", "ms"
    );
    for r in &results.runs {
        let status = serde_json::to_value(r.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        out.push_str(&format!(
            "{:<12} {:>8} {:>10} {:>11.3e} {:>11.3e} {:>11.3e} {:>9} {:>12} {:>10.1}\n",
            r.strategy,
            r.iters,
            status,
            r.kkt.primal,
            r.kkt.dual_x,
            r.kkt.dual_y,
            r.certified,
            format!("{}:{:.2e}", r.worst_clause, r.worst_margin),
            r.wall_ms
        ));
    }
    out
}
