//! Generalized Cauchy points: trial steps along a proximal gradient path.
//!
//! The path is p(t) = prox_{t phi}(u_k - t g_k) - u_k with phi either the
//! convex majorant (convex mode, both spaces) or the smoothed nonconvex
//! regularizer (nonconvex mode, L2 only). A step length t_A is accepted
//! when the decrease condition m(u_k + p(t)) - m(u_k) <= mu1 Q(t) and the
//! radius condition ||p(t)|| <= nu1 Delta hold; the search expands or
//! backtracks geometrically from the previous accepted step length.

use crate::error::{Result, SolverError};
use crate::grid::{inner, norm, GridFunction, Space};
use crate::model::QuadraticModel;
use crate::regularizer::{
    phi_value, prox_majorant_h1, prox_majorant_l2, prox_smoothed, PhiVariant, ProxCounter,
    RegularizerParams, SmoothingState,
};

/// Line search parameters for the Cauchy point computation.
#[derive(Debug, Clone, Copy)]
pub struct GcpParams {
    pub mu1: f64,
    pub mu2: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    pub nu4: f64,
    pub beta_dec: f64,
    pub beta_inc: f64,
    pub m_inc: u32,
    pub t0: f64,
}

impl Default for GcpParams {
    fn default() -> Self {
        GcpParams {
            mu1: 1e-4,
            mu2: 0.9,
            nu1: 1.0,
            nu2: 0.5,
            nu3: 1e-3,
            nu4: 0.5,
            beta_dec: 0.5,
            beta_inc: 10.0,
            m_inc: 2,
            t0: 1.0,
        }
    }
}

impl GcpParams {
    pub fn validate(&self) {
        assert!(0.0 < self.mu1 && self.mu1 < self.mu2 && self.mu2 < 1.0);
        assert!(0.0 < self.nu4 && self.nu4 < self.nu1);
        assert!(0.0 < self.nu2 && self.nu2 < 1.0);
        assert!(self.nu3 > 0.0);
        assert!(0.0 < self.beta_dec && self.beta_dec < 1.0);
        assert!(self.beta_inc > 1.0);
        assert!(self.t0 > 0.0);
    }
}

/// Which proximal path the search walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxMode {
    Convex,
    Nonconvex,
}

const MAX_BACKTRACKS: usize = 200;

/// Everything the path evaluation needs, bundled per outer iteration.
pub struct GcpContext<'a> {
    pub model: &'a QuadraticModel<'a>,
    pub smoothing: &'a SmoothingState,
    pub reg: &'a RegularizerParams,
    pub prox_tally: &'a ProxCounter,
    /// Tolerance for H01 prox linear solves.
    pub lin_tol: f64,
}

impl GcpContext<'_> {
    fn phi_variant(&self, mode: ProxMode) -> PhiVariant<'_> {
        match mode {
            ProxMode::Convex => PhiVariant::Majorant(self.smoothing),
            ProxMode::Nonconvex => PhiVariant::Smoothed(self.smoothing.eps()),
        }
    }

    /// phi at the current iterate in the chosen variant.
    pub fn phi_at_anchor(&self, mode: ProxMode) -> f64 {
        phi_value(self.model.anchor(), self.reg, self.phi_variant(mode))
    }
}

/// Path displacement `p(t) = prox_{t phi}(u_k - t g_k) - u_k`.
pub fn prox_path(ctx: &GcpContext<'_>, mode: ProxMode, t: f64) -> Result<GridFunction> {
    assert!(t > 0.0);
    let u_k = ctx.model.anchor();
    let arg = u_k.axpy(-t, ctx.model.grad());
    let prox = match (mode, u_k.space()) {
        (ProxMode::Convex, Space::L2) => prox_majorant_l2(&arg, t, ctx.smoothing, ctx.reg),
        (ProxMode::Convex, Space::H01) => {
            prox_majorant_h1(&arg, t, ctx.smoothing, ctx.reg, ctx.lin_tol)?
        }
        (ProxMode::Nonconvex, Space::L2) => {
            prox_smoothed(&arg, t, ctx.smoothing.eps(), ctx.reg, ctx.prox_tally)?
        }
        (ProxMode::Nonconvex, Space::H01) => {
            return Err(SolverError::Unsupported(
                "nonconvex proximal path is pointwise and only available in L2".into(),
            ))
        }
    };
    Ok(prox.sub(u_k))
}

/// Decrease predictor `Q(t) = <g_k, p(t)> + phi(u_k + p(t)) - phi(u_k)`.
pub fn q_value(ctx: &GcpContext<'_>, mode: ProxMode, path: &GridFunction) -> f64 {
    let trial = ctx.model.anchor().axpy(1.0, path);
    let variant = ctx.phi_variant(mode);
    inner(ctx.model.grad(), path) + phi_value(&trial, ctx.reg, variant)
        - phi_value(ctx.model.anchor(), ctx.reg, variant)
}

/// One evaluated step length along the path.
#[derive(Debug, Clone)]
pub struct TrialEval {
    pub t: f64,
    pub path: GridFunction,
    pub trial: GridFunction,
    /// `B_k p(t)`, reusable by the subsolvers.
    pub hess_path: GridFunction,
    pub q: f64,
    /// `m(u_k + p(t)) - m(u_k)` for the chosen model.
    pub model_decrease: f64,
    pub path_norm: f64,
}

/// Evaluate path, predictor and model decrease at step length `t`.
pub fn evaluate_trial(ctx: &GcpContext<'_>, mode: ProxMode, t: f64) -> Result<TrialEval> {
    let path = prox_path(ctx, mode, t)?;
    let trial = ctx.model.anchor().axpy(1.0, &path);
    let hess_path = ctx.model.hess_apply(&path)?;
    let q = q_value(ctx, mode, &path);
    let model_decrease = q + 0.5 * inner(&hess_path, &path);
    let path_norm = norm(&path);
    Ok(TrialEval {
        t,
        path,
        trial,
        hess_path,
        q,
        model_decrease,
        path_norm,
    })
}

/// The two acceptance conditions at a step length.
#[derive(Debug, Clone, Copy)]
pub struct GcpConditions {
    pub desc: bool,
    pub radius: bool,
}

impl GcpConditions {
    pub fn both(&self) -> bool {
        self.desc && self.radius
    }
}

pub fn gcp_conditions(eval: &TrialEval, delta: f64, params: &GcpParams) -> GcpConditions {
    GcpConditions {
        desc: eval.model_decrease <= params.mu1 * eval.q,
        radius: eval.path_norm <= params.nu1 * delta,
    }
}

/// Accepted Cauchy point.
#[derive(Debug, Clone)]
pub struct GcpResult {
    pub t_a: f64,
    /// Adjacent failing step length, when the search saw one.
    pub t_b: Option<f64>,
    pub trial: GridFunction,
    pub path: GridFunction,
    pub hess_path: GridFunction,
    pub q: f64,
    pub model_decrease: f64,
    pub path_norm: f64,
    pub mode: ProxMode,
    pub backtracks: usize,
    pub expansions: usize,
}

/// Bidirectional line search for a (nonconvex) generalized Cauchy point.
///
/// If the conditions hold at the warm-start length, expands by beta_inc up
/// to `max(M_inc, ceil(log_{beta_inc}(t0 / t_prev)))` times and keeps the
/// largest passing length; otherwise backtracks by beta_dec until passing.
pub fn gcp_search(
    ctx: &GcpContext<'_>,
    mode: ProxMode,
    delta: f64,
    t_prev: f64,
    params: &GcpParams,
) -> Result<GcpResult> {
    assert!(t_prev > 0.0 && delta > 0.0);
    params.validate();

    let finish = |eval: TrialEval, t_b: Option<f64>, backtracks: usize, expansions: usize| {
        debug_assert!(gcp_conditions(&eval, delta, params).both());
        GcpResult {
            t_a: eval.t,
            t_b,
            trial: eval.trial,
            path: eval.path,
            hess_path: eval.hess_path,
            q: eval.q,
            model_decrease: eval.model_decrease,
            path_norm: eval.path_norm,
            mode,
            backtracks,
            expansions,
        }
    };

    let first = evaluate_trial(ctx, mode, t_prev)?;
    if gcp_conditions(&first, delta, params).both() {
        // expansion: largest l in {0, ..., M_k_inc} whose step passes
        let m_inc_k = {
            let recover = (params.t0 / t_prev).log(params.beta_inc).ceil();
            if recover.is_finite() && recover > params.m_inc as f64 {
                recover as u32
            } else {
                params.m_inc
            }
        };
        let mut expansions = 0;
        let mut t_b = None;
        for l in (1..=m_inc_k).rev() {
            let t = t_prev * params.beta_inc.powi(l as i32);
            if !t.is_finite() {
                continue;
            }
            let eval = evaluate_trial(ctx, mode, t)?;
            expansions += 1;
            if gcp_conditions(&eval, delta, params).both() {
                return Ok(finish(eval, t_b, 0, expansions));
            }
            t_b = Some(t);
        }
        Ok(finish(first, t_b, 0, expansions))
    } else {
        // backtracking: smallest l >= 1 whose step passes
        let mut t_b = t_prev;
        for l in 1..=MAX_BACKTRACKS {
            let t = t_prev * params.beta_dec.powi(l as i32);
            let eval = evaluate_trial(ctx, mode, t)?;
            if gcp_conditions(&eval, delta, params).both() {
                debug_assert!(
                    t >= params.nu2 * t_b || t >= params.nu3,
                    "lower-bound disjunction violated: t_a={t} t_b={t_b}"
                );
                return Ok(finish(eval, Some(t_b), l, 0));
            }
            t_b = t;
        }
        Err(SolverError::DegenerateStep {
            backtracks: MAX_BACKTRACKS,
        })
    }
}
