//! Producers of the y-block proximal matrices `T_k`, each with its split
//! `T_k = T_+^k - T_-` and inflation factor.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bfgs::{BfgsState, CSchedule};
use crate::error::{Error, Result};
use crate::model::{build_m, ProblemInstance};
use crate::spectral::{self, SymMatrix, PSD_TOL};

/// How `delta` in `M^delta = M + delta I` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Delta {
    Absolute(f64),
    /// `delta = factor * (1 + ||M||)`.
    Relative(f64),
}

impl Default for Delta {
    fn default() -> Self {
        Delta::Relative(1e-4)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyConfig {
    /// `T_k = 0`: classical ADMM when `S = 0`.
    Zero,
    /// A constant positive semidefinite `T`.
    FixedPsd { t: SymMatrix },
    /// `T = tau r I - beta B^T B` with `r > beta ||B^T B||`.
    FixedIndefinite { tau: f64, r: f64 },
    /// `T_k = B_k - M` with `B_k` from damped BFGS updates of `M^delta`.
    VariableBfgs { tau: f64, delta: Delta, schedule: CSchedule },
}

impl StrategyConfig {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyConfig::Zero => "zero",
            StrategyConfig::FixedPsd { .. } => "psd",
            StrategyConfig::FixedIndefinite { .. } => "fixed-indef",
            StrategyConfig::VariableBfgs { .. } => "bfgs",
        }
    }

    /// `T = r I - beta B^T B` with `r = r_factor * beta ||B^T B||`; positive
    /// semidefinite for `r_factor >= 1`.
    pub fn linearized_psd(p: &ProblemInstance, beta: f64, r_factor: f64) -> Result<Self> {
        if r_factor < 1.0 {
            return Err(Error::Config(format!(
                "r-factor {r_factor} < 1 would make the proximal term indefinite"
            )));
        }
        let btb = p.btb().scale(beta);
        let r = r_factor * spectral::spectral_norm(&btb)?;
        Ok(StrategyConfig::FixedPsd {
            t: SymMatrix::scaled_identity(p.n(), r).sub(&btb),
        })
    }

    /// Fixed indefinite term with `r = r_factor * beta ||B^T B||`.
    pub fn fixed_indefinite(p: &ProblemInstance, beta: f64, tau: f64, r_factor: f64) -> Result<Self> {
        let norm = spectral::spectral_norm(&p.btb())?;
        Ok(StrategyConfig::FixedIndefinite {
            tau,
            r: r_factor * (beta * norm),
        })
    }

    /// `tau` for the parameterized strategies.
    pub fn tau(&self) -> Option<f64> {
        match self {
            StrategyConfig::FixedIndefinite { tau, .. } | StrategyConfig::VariableBfgs { tau, .. } => Some(*tau),
            _ => None,
        }
    }
}

/// The matrices of one proximal term.
#[derive(Debug, Clone, PartialEq)]
pub struct TermMatrices {
    pub t: SymMatrix,
    pub t_plus: SymMatrix,
    /// Shared by every term a strategy produces.
    pub t_minus: Arc<SymMatrix>,
}

/// A proximal term `T_k = T_+^k - T_-` together with the inflation factor
/// `gamma` that links the previous term to this one (`gamma_{k-1}`; zero for
/// the initial term).
#[derive(Debug, Clone)]
pub struct ProximalTerm {
    pub mats: Arc<TermMatrices>,
    pub gamma: f64,
}

impl ProximalTerm {
    fn new(t: SymMatrix, t_plus: SymMatrix, t_minus: Arc<SymMatrix>, gamma: f64) -> Self {
        Self {
            mats: Arc::new(TermMatrices { t, t_plus, t_minus }),
            gamma,
        }
    }

    pub fn t(&self) -> &SymMatrix {
        &self.mats.t
    }

    pub fn t_plus(&self) -> &SymMatrix {
        &self.mats.t_plus
    }

    pub fn t_minus(&self) -> &SymMatrix {
        &self.mats.t_minus
    }

    /// True when both terms share the same matrices.
    pub fn same_matrices(&self, other: &ProximalTerm) -> bool {
        Arc::ptr_eq(&self.mats, &other.mats)
    }

    /// Largest entry of `|T - (T_+ - T_-)|`.
    pub fn decomposition_error(&self) -> f64 {
        self.t().max_abs_diff(&self.t_plus().sub(self.t_minus()))
    }
}

/// Per-run strategy state.
#[derive(Debug, Clone)]
pub struct Strategy {
    config: StrategyConfig,
    current: ProximalTerm,
    bfgs: Option<BfgsState>,
}

impl Strategy {
    pub fn init(config: &StrategyConfig, p: &ProblemInstance, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        let n = p.n();
        let mut bfgs = None;
        let current = match config {
            StrategyConfig::Zero => {
                let z = SymMatrix::zeros(n);
                ProximalTerm::new(z.clone(), z.clone(), Arc::new(z), 0.0)
            }
            StrategyConfig::FixedPsd { t } => {
                if t.dim() != n {
                    return Err(Error::Dimension(format!("T is {}x{}, expected {n}x{n}", t.dim(), t.dim())));
                }
                let check = spectral::is_psd(t, PSD_TOL)?;
                if !check.psd {
                    return Err(Error::Config(format!(
                        "fixed proximal term is not positive semidefinite (lambda_min = {:e})",
                        check.margin
                    )));
                }
                ProximalTerm::new(t.clone(), t.clone(), Arc::new(SymMatrix::zeros(n)), 0.0)
            }
            StrategyConfig::FixedIndefinite { tau, r } => {
                let (tau, r) = (*tau, *r);
                if !(tau > 0.75 && tau < 1.0) {
                    return Err(Error::Config(format!("tau must lie in (0.75, 1), got {tau}")));
                }
                let btb = p.btb().scale(beta);
                let bound = spectral::spectral_norm(&p.btb())?;
                if !(r > beta * bound) {
                    return Err(Error::Config(format!(
                        "r = {r} must exceed beta ||B^T B|| = {}",
                        beta * bound
                    )));
                }
                let t = SymMatrix::scaled_identity(n, tau * r).sub(&btb);
                let t_plus = SymMatrix::scaled_identity(n, r).sub(&btb).scale(tau);
                let t_minus = btb.scale(1.0 - tau);
                ProximalTerm::new(t, t_plus, Arc::new(t_minus), 0.0)
            }
            StrategyConfig::VariableBfgs { tau, delta, schedule } => {
                let tau = *tau;
                if !(tau > 0.75 && tau <= 1.0) {
                    return Err(Error::Config(format!("tau must lie in (0.75, 1], got {tau}")));
                }
                let m = build_m(p, beta)?;
                let delta = match *delta {
                    Delta::Absolute(d) => d,
                    Delta::Relative(f) => f * (1.0 + spectral::spectral_norm(&m)?),
                };
                let state = BfgsState::new(m, tau, delta, *schedule)?;
                let t_minus = Arc::new(state.m().scale(1.0 - tau));
                let term = bfgs_term(&state, t_minus, 0.0);
                bfgs = Some(state);
                term
            }
        };
        Ok(Self {
            config: config.clone(),
            current,
            bfgs,
        })
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    pub fn current(&self) -> &ProximalTerm {
        &self.current
    }

    pub fn bfgs(&self) -> Option<&BfgsState> {
        self.bfgs.as_ref()
    }

    /// Consumes the step `s_k` of the finished iteration and returns
    /// `T_{k+1}`. Fixed strategies return their constant term.
    pub fn next_term(&mut self, s: &DVector<f64>, reference_norm: f64) -> Result<ProximalTerm> {
        if let Some(state) = self.bfgs.as_mut() {
            let before = state.b().clone();
            state.damped_update(s, reference_norm)?;
            let gamma = state.gamma();
            self.current = if state.b().bitwise_eq(&before) {
                ProximalTerm {
                    mats: Arc::clone(&self.current.mats),
                    gamma,
                }
            } else {
                bfgs_term(state, Arc::clone(&self.current.mats.t_minus), gamma)
            };
        }
        Ok(self.current.clone())
    }
}

fn bfgs_term(state: &BfgsState, t_minus: Arc<SymMatrix>, gamma: f64) -> ProximalTerm {
    let t = state.b().sub(state.m());
    let t_plus = state.b().sub(&state.m().scale(state.tau()));
    ProximalTerm::new(t, t_plus, t_minus, gamma)
}
