//! The smoothed proximal trust-region outer loop.
//!
//! Per iteration: build the quadratic model at u_k, measure stationarity
//! h_k through one majorant prox-gradient step, compute a trial step with
//! the Cauchy point search plus an optional subsolver, form predicted and
//! computed reductions for the configured model, and accept or reject by
//! the ratio rho = cred/pred. The smoothing level eps_k decreases along a
//! configurable schedule, advancing once per accepted step; the run stops
//! when h_k < tau0 * h_0.

use crate::error::{Result, SolverError};
use crate::gcp::{gcp_search, GcpContext, GcpParams, ProxMode};
use crate::grid::{norm, GridFunction, Space};
use crate::model::{QuadraticModel, SmoothObjective};
use crate::regularizer::{
    phi_value, prox_majorant_h1, prox_majorant_l2, prox_smoothed, sparsity_measure, PhiVariant,
    ProxCounter, RegularizerParams, SmoothingState,
};
use crate::report::ReportRow;
use crate::subsolvers::{mm_spg, spg_nonconvex, SpgParams};
use std::sync::Arc;
use std::time::Instant;

/// Smoothing schedule: maps the number of accepted steps to eps_k,
/// clamped below by a positive floor.
#[derive(Clone)]
pub struct EpsSchedule {
    f: Arc<dyn Fn(u64) -> f64 + Send + Sync>,
    floor: f64,
}

impl std::fmt::Debug for EpsSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EpsSchedule").field("floor", &self.floor).finish()
    }
}

impl EpsSchedule {
    pub fn new(floor: f64, f: impl Fn(u64) -> f64 + Send + Sync + 'static) -> Self {
        EpsSchedule { f: Arc::new(f), floor }
    }

    /// Factorial decay `eps0 / (k+1)!`.
    pub fn factorial(eps0: f64, floor: f64) -> Self {
        EpsSchedule::new(floor, move |k| {
            let mut v = eps0;
            for i in 1..=k {
                v /= (i + 1) as f64;
                if v < f64::MIN_POSITIVE {
                    return 0.0;
                }
            }
            v
        })
    }

    /// Super-factorial decay `eps0 * ratio^k / k!`: warm start, then faster
    /// than geometric.
    pub fn scaled_factorial(eps0: f64, ratio: f64, floor: f64) -> Self {
        assert!(0.0 < ratio && ratio < 1.0);
        EpsSchedule::new(floor, move |k| {
            let mut v = eps0;
            for i in 1..=k {
                v *= ratio / i as f64;
                if v < f64::MIN_POSITIVE {
                    return 0.0;
                }
            }
            v
        })
    }

    /// Geometric decay `eps0 * ratio^k`.
    pub fn geometric(eps0: f64, ratio: f64, floor: f64) -> Self {
        assert!(0.0 < ratio && ratio < 1.0);
        EpsSchedule::new(floor, move |k| eps0 * ratio.powf(k as f64))
    }

    pub fn constant(value: f64) -> Self {
        EpsSchedule::new(value, move |_| value)
    }

    /// Constant zero, for solvers that work with the exact regularizer.
    pub fn zero() -> Self {
        EpsSchedule::new(0.0, |_| 0.0)
    }

    /// Default trust-region schedule: eps starts at 0.1 so the first
    /// majorant is only mildly damped (the damping weight scales like
    /// eps^{p-2}, so a cold start suppresses h_0 and with it the relative
    /// stopping threshold), then decays super-factorially. Small p gets a
    /// much faster decay since the smoothing error enters through eps^p.
    pub fn default_for_p(p: f64) -> Self {
        let ratio = if p >= 0.3 { 0.1 } else { 1e-12 };
        EpsSchedule::scaled_factorial(0.1, ratio, 1e-130)
    }

    pub fn value(&self, accepted: u64) -> f64 {
        (self.f)(accepted).max(self.floor)
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }
}

/// Step improvement applied after the Cauchy point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsolver {
    None,
    Spg,
    MmSpg,
}

/// The trust-region solver variants of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrVariant {
    Gcp,
    NcGcp,
    Spg,
    NcSpg,
    MmSpg,
    NcMmSpg,
}

impl TrVariant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tr-gcp" => Some(TrVariant::Gcp),
            "tr-nc-gcp" => Some(TrVariant::NcGcp),
            "tr-spg" => Some(TrVariant::Spg),
            "tr-nc-spg" => Some(TrVariant::NcSpg),
            "tr-mm-spg" => Some(TrVariant::MmSpg),
            "tr-nc-mm-spg" => Some(TrVariant::NcMmSpg),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrVariant::Gcp => "tr-gcp",
            TrVariant::NcGcp => "tr-nc-gcp",
            TrVariant::Spg => "tr-spg",
            TrVariant::NcSpg => "tr-nc-spg",
            TrVariant::MmSpg => "tr-mm-spg",
            TrVariant::NcMmSpg => "tr-nc-mm-spg",
        }
    }

    /// Does the variant evaluate nonconvex proximal points?
    pub fn needs_nonconvex_prox(&self) -> bool {
        matches!(
            self,
            TrVariant::NcGcp | TrVariant::Spg | TrVariant::NcSpg | TrVariant::NcMmSpg
        )
    }
}

/// Configuration of one trust-region run.
#[derive(Debug, Clone)]
pub struct TRConfig {
    pub delta0: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub tau0: f64,
    pub r0: f64,
    pub eps_schedule: EpsSchedule,
    /// Model used in the FCD / rho test.
    pub model_mode: ProxMode,
    /// Path the Cauchy point search walks.
    pub gcp_mode: ProxMode,
    pub subsolver: Subsolver,
    /// Audit constant for the fraction-of-Cauchy-decrease check.
    pub kappa_fcd: f64,
    pub max_outer: usize,
    pub gcp: GcpParams,
    pub spg: SpgParams,
    pub mm: SpgParams,
    pub lin_tol: f64,
}

impl TRConfig {
    pub fn new(p: f64) -> Self {
        TRConfig {
            delta0: 10.0,
            eta1: 1e-4,
            eta2: 0.5,
            gamma1: 0.25,
            gamma2: 0.25,
            gamma3: 10.0,
            tau0: 1e-4,
            r0: 1.0,
            eps_schedule: EpsSchedule::default_for_p(p),
            model_mode: ProxMode::Convex,
            gcp_mode: ProxMode::Convex,
            subsolver: Subsolver::None,
            kappa_fcd: 1e-8,
            max_outer: 300,
            gcp: GcpParams::default(),
            spg: SpgParams::default(),
            mm: SpgParams::mm_defaults(),
            lin_tol: 1e-12,
        }
    }

    pub fn for_variant(variant: TrVariant, p: f64) -> Self {
        let mut cfg = TRConfig::new(p);
        let (gcp_mode, model_mode, subsolver) = match variant {
            TrVariant::Gcp => (ProxMode::Convex, ProxMode::Convex, Subsolver::None),
            TrVariant::NcGcp => (ProxMode::Nonconvex, ProxMode::Nonconvex, Subsolver::None),
            TrVariant::Spg => (ProxMode::Convex, ProxMode::Nonconvex, Subsolver::Spg),
            TrVariant::NcSpg => (ProxMode::Nonconvex, ProxMode::Nonconvex, Subsolver::Spg),
            TrVariant::MmSpg => (ProxMode::Convex, ProxMode::Nonconvex, Subsolver::MmSpg),
            TrVariant::NcMmSpg => (ProxMode::Nonconvex, ProxMode::Nonconvex, Subsolver::MmSpg),
        };
        cfg.gcp_mode = gcp_mode;
        cfg.model_mode = model_mode;
        cfg.subsolver = subsolver;
        cfg
    }

    pub fn validate(&self) {
        assert!(self.delta0 > 0.0);
        assert!(0.0 < self.eta1 && self.eta1 < self.eta2 && self.eta2 < 1.0);
        assert!(0.0 < self.gamma1 && self.gamma1 <= self.gamma2 && self.gamma2 < 1.0);
        assert!(self.gamma3 >= 1.0);
        assert!(self.tau0 > 0.0 && self.r0 > 0.0 && self.kappa_fcd > 0.0);
        assert!(self.eps_schedule.floor() > 0.0, "trust region needs eps > 0");
        self.gcp.validate();
    }
}

/// Stationarity `h(u) = ||prox_{r0 phi_k}(u - r0 grad f(u)) - u|| / r0`
/// with the majorant anchored at `u`.
pub fn stationarity_h(
    objective: &dyn SmoothObjective,
    reg: &RegularizerParams,
    u: &GridFunction,
    eps: f64,
    r0: f64,
    lin_tol: f64,
) -> Result<f64> {
    let g = objective.gradient(u)?;
    stationarity_h_from_grad(reg, u, &g, eps, r0, lin_tol)
}

pub(crate) fn stationarity_h_from_grad(
    reg: &RegularizerParams,
    u: &GridFunction,
    g: &GridFunction,
    eps: f64,
    r0: f64,
    lin_tol: f64,
) -> Result<f64> {
    let state = SmoothingState::new(eps, u.clone(), reg.p);
    let arg = u.axpy(-r0, g);
    let prox = match u.space() {
        Space::L2 => prox_majorant_l2(&arg, r0, &state, reg),
        Space::H01 => prox_majorant_h1(&arg, r0, &state, reg, lin_tol)?,
    };
    Ok(norm(&prox.sub(u)) / r0)
}

/// Nonconvex analog of [`stationarity_h`] using the smoothed prox;
/// L2 only, and counts one nonconvex proximal evaluation.
pub fn stationarity_h_nc(
    objective: &dyn SmoothObjective,
    reg: &RegularizerParams,
    u: &GridFunction,
    eps: f64,
    r0: f64,
    tally: &ProxCounter,
) -> Result<f64> {
    let g = objective.gradient(u)?;
    stationarity_h_nc_from_grad(reg, u, &g, eps, r0, tally)
}

pub(crate) fn stationarity_h_nc_from_grad(
    reg: &RegularizerParams,
    u: &GridFunction,
    g: &GridFunction,
    eps: f64,
    r0: f64,
    tally: &ProxCounter,
) -> Result<f64> {
    if u.space() != Space::L2 {
        return Err(SolverError::Unsupported(
            "nonconvex stationarity needs pointwise proximal points (L2 only)".into(),
        ));
    }
    let arg = u.axpy(-r0, g);
    let prox = prox_smoothed(&arg, r0, eps, reg, tally)?;
    Ok(norm(&prox.sub(u)) / r0)
}

/// Predicted and computed reductions of a trial step.
#[derive(Debug, Clone, Copy)]
pub struct Reductions {
    pub pred: f64,
    pub cred: f64,
}

/// Fresh-evaluation form of the reduction computation.
pub fn reductions(
    model: &QuadraticModel<'_>,
    objective: &dyn SmoothObjective,
    reg: &RegularizerParams,
    state: &SmoothingState,
    model_mode: ProxMode,
    trial: &GridFunction,
) -> Result<Reductions> {
    let f_anchor = objective.value(model.anchor())?;
    let f_trial = objective.value(trial)?;
    let step = trial.sub(model.anchor());
    let bs = model.hess_apply(&step)?;
    Ok(reductions_given(
        model, reg, state, model_mode, trial, &step, &bs, f_anchor, f_trial,
    ))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn reductions_given(
    model: &QuadraticModel<'_>,
    reg: &RegularizerParams,
    state: &SmoothingState,
    model_mode: ProxMode,
    trial: &GridFunction,
    step: &GridFunction,
    hess_step: &GridFunction,
    f_anchor: f64,
    f_trial: f64,
) -> Reductions {
    let variant = match model_mode {
        ProxMode::Convex => PhiVariant::Majorant(state),
        ProxMode::Nonconvex => PhiVariant::Smoothed(state.eps()),
    };
    let phi_anchor = phi_value(model.anchor(), reg, variant);
    let phi_trial = phi_value(trial, reg, variant);
    let model_diff = model.value_with_hess(step, hess_step);
    Reductions {
        pred: phi_anchor - (model_diff + phi_trial),
        cred: (f_anchor + phi_anchor) - (f_trial + phi_trial),
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `h_K < tau0 * h_0`.
    Stationarity,
    /// Iteration budget exhausted.
    MaxOuter,
    /// The Cauchy point search could not find a positive step; the
    /// stationarity measure is at floating-point zero.
    DegenerateStep,
}

/// Per-iteration diagnostics of a trust-region run.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: usize,
    pub accepted: bool,
    pub rho: f64,
    pub pred: f64,
    pub cred: f64,
    pub h: f64,
    pub delta: f64,
    pub eps: f64,
    pub omega: f64,
    pub fcd_ok: bool,
}

/// Solver output: final control, report row, and diagnostics.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub control: GridFunction,
    /// Iterate before the last accepted step, for dF cross-checks.
    pub previous_control: Option<GridFunction>,
    pub row: ReportRow,
    pub converged: bool,
    pub stop: StopReason,
    pub h0: f64,
    /// `f(u_k) + phi_k(u_k)` at the start of each iteration.
    pub merit_history: Vec<f64>,
    /// Trust-region iteration records (empty for the baselines).
    pub records: Vec<IterationRecord>,
}

/// Run the smoothed proximal trust-region algorithm from `u = 0`.
pub fn solve(
    objective: &dyn SmoothObjective,
    reg: &RegularizerParams,
    config: &TRConfig,
    label: &str,
) -> Result<SolveOutcome> {
    config.validate();
    if config.gcp_mode == ProxMode::Nonconvex || config.subsolver == Subsolver::Spg {
        if objective.control_space() != Space::L2 {
            return Err(SolverError::Unsupported(
                "nonconvex proximal steps require L2 controls".into(),
            ));
        }
    }
    let started = Instant::now();
    objective.counters().reset();
    let tally = ProxCounter::new();
    let space = objective.control_space();

    let mut u = GridFunction::zeros(objective.grid(), space);
    let mut f_u = objective.value(&u)?;
    let mut delta = config.delta0;
    let mut t_prev = config.gcp.t0;
    let mut accepted_count: u64 = 0;
    let mut eps = config.eps_schedule.value(0);
    let mut previous: Option<GridFunction> = None;
    let mut last_step_norm = 0.0;

    let mut h0 = 0.0;
    let mut h_k = 0.0;
    let mut stop = StopReason::MaxOuter;
    let mut converged = false;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut merit_history: Vec<f64> = Vec::new();
    let mut model_cache: Option<QuadraticModel<'_>> = None;
    let mut iterations: u64 = 0;

    loop {
        if model_cache.is_none() {
            model_cache = Some(QuadraticModel::new(objective, u.clone())?);
        }
        let model = model_cache.as_ref().unwrap();
        let state = SmoothingState::new(eps, u.clone(), reg.p);
        h_k = stationarity_h_from_grad(reg, &u, model.grad(), eps, config.r0, config.lin_tol)?;
        merit_history.push(f_u + phi_value(&u, reg, PhiVariant::Majorant(&state)));
        if iterations == 0 {
            h0 = h_k;
        }
        if h_k < config.tau0 * h0 || h_k == 0.0 {
            stop = StopReason::Stationarity;
            converged = true;
            break;
        }
        if iterations as usize >= config.max_outer {
            stop = StopReason::MaxOuter;
            break;
        }

        let ctx = GcpContext {
            model,
            smoothing: &state,
            reg,
            prox_tally: &tally,
            lin_tol: config.lin_tol,
        };
        let gcp_res = match gcp_search(&ctx, config.gcp_mode, delta, t_prev, &config.gcp) {
            Ok(r) => r,
            Err(SolverError::DegenerateStep { .. }) => {
                // the proximal path has collapsed to floating-point zero;
                // report success only if the stopping criterion is also met
                stop = StopReason::DegenerateStep;
                converged = h_k < config.tau0 * h0 || h_k == 0.0;
                break;
            }
            Err(e) => return Err(e),
        };
        t_prev = gcp_res.t_a;

        let ball = config.gcp.nu1 * delta;
        let trial = match config.subsolver {
            Subsolver::None => gcp_res.trial.clone(),
            Subsolver::Spg => spg_nonconvex(model, &state, reg, &gcp_res, ball, &config.spg, &tally)?,
            Subsolver::MmSpg => mm_spg(
                model,
                eps,
                reg,
                &gcp_res,
                ball,
                &config.mm,
                config.lin_tol,
                config.mm.max_iter,
            )?,
        };

        let step = trial.sub(&u);
        let step_norm = norm(&step);
        // reuse the Cauchy point's Hessian product when the step is unchanged
        let hess_step = if config.subsolver == Subsolver::None {
            gcp_res.hess_path.clone()
        } else {
            model.hess_apply(&step)?
        };
        let f_trial = objective.value(&trial)?;
        let red = reductions_given(
            model,
            reg,
            &state,
            config.model_mode,
            &trial,
            &step,
            &hess_step,
            f_u,
            f_trial,
        );

        let omega = if step_norm > 0.0 {
            model.curvature_with_hess(&step, &hess_step).abs()
        } else {
            0.0
        };
        let fcd_rhs = config.kappa_fcd * h_k * (h_k / (1.0 + omega)).min(delta);
        let rho = if red.pred > 0.0 {
            red.cred / red.pred
        } else {
            f64::NEG_INFINITY
        };
        let accepted = red.pred > 0.0 && step_norm > 0.0 && rho >= config.eta1;
        records.push(IterationRecord {
            k: iterations as usize,
            accepted,
            rho,
            pred: red.pred,
            cred: red.cred,
            h: h_k,
            delta,
            eps,
            omega,
            fcd_ok: red.pred >= fcd_rhs,
        });
        iterations += 1;

        if accepted {
            previous = Some(u.clone());
            last_step_norm = step_norm;
            u = trial;
            f_u = f_trial;
            accepted_count += 1;
            eps = config.eps_schedule.value(accepted_count);
            model_cache = None;
            if rho >= config.eta2 {
                delta *= config.gamma3;
            }
            // middle branch keeps delta: Delta_{k+1} in [gamma2 Delta, Delta]
        } else {
            delta *= config.gamma1;
        }
    }

    drop(model_cache);
    let grad_final = objective.gradient(&u)?;
    let h_nc = if space == Space::L2 {
        Some(stationarity_h_nc_from_grad(
            reg, &u, &grad_final, eps, config.r0, &tally,
        )?)
    } else {
        None
    };
    let f_exact = f_u + phi_value(&u, reg, PhiVariant::Exact);
    let row = ReportRow {
        alg: label.to_string(),
        objective: f_exact,
        iterations,
        eps_final: eps,
        step_norm: last_step_norm,
        h_final: h_k,
        h_final_nc: h_nc,
        sparsity: sparsity_measure(&u, reg.sparsity_tol()),
        f_evals: objective.counters().value_count(),
        hess_evals: objective.counters().hess_count(),
        prox_lp_evals: tally.count(),
        wallclock_s: started.elapsed().as_secs_f64(),
    };
    Ok(SolveOutcome {
        control: u,
        previous_control: previous,
        row,
        converged,
        stop,
        h0,
        merit_history,
        records,
    })
}
