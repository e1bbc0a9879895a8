//! Subproblem solvers that improve on the Cauchy point without increasing
//! the chosen model.
//!
//! `spg_nonconvex` is a proximal gradient method on the smoothed model with
//! Barzilai-Borwein initialized step sizes, backtracking on the proximal
//! parameter. `mm_spg` rebuilds the convex majorant at every inner iterate
//! and follows it with an Armijo line search. Both keep their iterates in
//! the trust-region ball: in L2 a step landing outside is pulled back along
//! the proximal path via `largest_negative_t` (the path norm is monotone in
//! the parameter, so bracketing is safe even across jumps); in H01 the
//! majorant prox result is scaled radially toward the center.

use crate::error::{Result, SolverError};
use crate::gcp::GcpResult;
use crate::grid::{inner, norm, GridFunction, Space};
use crate::model::QuadraticModel;
use crate::regularizer::{
    phi_value, prox_majorant_h1, prox_majorant_l2, prox_smoothed, PhiVariant, ProxCounter,
    RegularizerParams, SmoothingState,
};

/// Parameters of both inner solvers.
#[derive(Debug, Clone, Copy)]
pub struct SpgParams {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub max_iter: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub mu1: f64,
    pub beta1: f64,
}

impl Default for SpgParams {
    fn default() -> Self {
        SpgParams {
            lambda_min: 1e-8,
            lambda_max: 1e8,
            max_iter: 10,
            eps1: 1e-6,
            eps2: 1e-6,
            mu1: 1e-4,
            beta1: 0.5,
        }
    }
}

impl SpgParams {
    /// Defaults for the majorize-minimize inner solver (longer loop).
    pub fn mm_defaults() -> Self {
        SpgParams {
            max_iter: 50,
            ..SpgParams::default()
        }
    }

    pub fn validate(&self) {
        assert!(0.0 < self.lambda_min && self.lambda_min < self.lambda_max);
        for v in [self.eps1, self.eps2, self.mu1, self.beta1] {
            assert!(0.0 < v && v < 1.0);
        }
    }
}

const BRACKET_REL_WIDTH: f64 = 1e-3;
const BRACKET_FLOOR: f64 = 1e-12;
const MAX_BRACKET_ITERS: usize = 400;
const LINE_SEARCH_CAP: usize = 60;

/// Largest `t` in (0, 1] with `f(t) <= 0` for a nondecreasing map `f`.
///
/// Returns `t = 1` when feasible there; otherwise the lower end of a
/// bracket of relative width at most 1e-3 whose upper end is infeasible.
pub fn largest_negative_t(mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let f1 = f(1.0)?;
    if f1 <= 0.0 {
        return Ok(1.0);
    }
    let mut hi = 1.0;
    let mut fhi = f1;
    let mut lo = 0.5;
    let mut flo;
    loop {
        let v = f(lo)?;
        if v <= 0.0 {
            flo = v;
            break;
        }
        hi = lo;
        fhi = v;
        lo *= 0.5;
        if lo < BRACKET_FLOOR {
            return Err(SolverError::NoFeasibleStep {
                probed_down_to: BRACKET_FLOOR,
            });
        }
    }
    // refine with secant acceleration, clipped to keep geometric progress
    let mut iters = 0;
    while hi - lo > BRACKET_REL_WIDTH * lo && iters < MAX_BRACKET_ITERS {
        iters += 1;
        let width = hi - lo;
        let mut t = if fhi > flo {
            lo - flo * width / (fhi - flo)
        } else {
            0.5 * (lo + hi)
        };
        t = t.max(lo + 0.1 * width).min(hi - 0.1 * width);
        let v = f(t)?;
        if v <= 0.0 {
            lo = t;
            flo = v;
        } else {
            hi = t;
            fhi = v;
        }
    }
    Ok(lo)
}

/// Nonconvex SPG step improvement on the smoothed model (L2 only).
///
/// Never returns an iterate with a larger smoothed-model value than the
/// start, and keeps all iterates inside the ball of radius `ball_radius`
/// around the model anchor.
pub fn spg_nonconvex(
    model: &QuadraticModel<'_>,
    smoothing: &SmoothingState,
    reg: &RegularizerParams,
    start: &GcpResult,
    ball_radius: f64,
    params: &SpgParams,
    tally: &ProxCounter,
) -> Result<GridFunction> {
    params.validate();
    let u_k = model.anchor();
    assert_eq!(u_k.space(), Space::L2, "nonconvex SPG requires L2 controls");
    let eps = smoothing.eps();
    let phi = |x: &GridFunction| phi_value(x, reg, PhiVariant::Smoothed(eps));

    let mut v = start.trial.clone();
    let mut sv = start.path.clone(); // v - u_k
    let mut bsv = start.hess_path.clone(); // B (v - u_k)
    let mut m_v = model.value_with_hess(&sv, &bsv) + phi(&v);
    let mut best = v.clone();
    let mut m_best = m_v;
    let mut d = model.gradient_with_hess(&bsv);

    let dn = norm(&d);
    if dn == 0.0 {
        return Ok(best);
    }
    let mut r = (1.0 / dn).clamp(params.lambda_min, params.lambda_max);
    let mut disp0: Option<f64> = None;

    'outer: for _ in 0..params.max_iter {
        let mut step = None;
        for _ in 0..LINE_SEARCH_CAP {
            let arg = v.axpy(-r, &d);
            let mut w = prox_smoothed(&arg, r, eps, reg, tally)?;
            if norm(&w.sub(u_k)) > ball_radius * (1.0 + 1e-12) {
                let dir = arg.sub(u_k);
                let t_res = largest_negative_t(|t| {
                    let wt = prox_smoothed(&u_k.axpy(t, &dir), r * t, eps, reg, tally)?;
                    Ok(norm(&wt.sub(u_k)) - ball_radius)
                });
                match t_res {
                    Ok(t_star) => {
                        w = prox_smoothed(&u_k.axpy(t_star, &dir), r * t_star, eps, reg, tally)?;
                    }
                    Err(SolverError::NoFeasibleStep { .. }) => {
                        r *= params.beta1;
                        if r < params.lambda_min {
                            break 'outer;
                        }
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
            let s = w.sub(&v);
            let ns = norm(&s);
            if ns == 0.0 {
                break 'outer; // prox fixed point
            }
            let bs = model.hess_apply(&s)?;
            let sw = sv.axpy(1.0, &s);
            let bw = bsv.axpy(1.0, &bs);
            let m_w = model.value_with_hess(&sw, &bw) + phi(&w);
            if m_w <= m_v - params.mu1 * ns * ns / r {
                step = Some((w, sw, bw, m_w, ns, inner(&s, &s), inner(&s, &bs)));
                break;
            }
            r *= params.beta1;
            if r < params.lambda_min {
                break 'outer;
            }
        }
        let Some((w, sw, bw, m_w, ns, ss, sbs)) = step else {
            break;
        };
        v = w;
        sv = sw;
        bsv = bw;
        m_v = m_w;
        d = model.gradient_with_hess(&bsv);
        if m_v < m_best {
            best = v.clone();
            m_best = m_v;
        }
        let d0 = *disp0.get_or_insert(ns);
        if ns <= params.eps1.min(params.eps2 * d0) {
            break;
        }
        // Barzilai-Borwein initialization for the next proximal parameter
        r = if sbs > 0.0 {
            (ss / sbs).clamp(params.lambda_min, params.lambda_max)
        } else {
            let dn = norm(&d);
            if dn == 0.0 {
                break;
            }
            (1.0 / dn).clamp(params.lambda_min, params.lambda_max)
        };
    }
    Ok(best)
}

/// BB step length with the nonpositive-curvature fallback `1/||d||`.
pub(crate) fn bb_step_length(ss: f64, sbs: f64, d_norm: f64, params: &SpgParams) -> f64 {
    let lambda = if sbs > 0.0 {
        ss / sbs
    } else if d_norm > 0.0 {
        1.0 / d_norm
    } else {
        params.lambda_max
    };
    lambda.clamp(params.lambda_min, params.lambda_max)
}

/// Majorize-minimize SPG: rebuilds the convex majorant at each inner
/// iterate; works in L2 and H01.
///
/// The iterate sequence never increases the majorized model value, hence
/// (by tangency of the majorant at its anchor) never increases the smoothed
/// model either.
#[allow(clippy::too_many_arguments)]
pub fn mm_spg(
    model: &QuadraticModel<'_>,
    eps_k: f64,
    reg: &RegularizerParams,
    start: &GcpResult,
    ball_radius: f64,
    params: &SpgParams,
    lin_tol: f64,
    l_max: usize,
) -> Result<GridFunction> {
    params.validate();
    let u_k = model.anchor();
    let space = u_k.space();

    let mut u = start.trial.clone();
    let mut s = start.path.clone();
    let mut b = start.hess_path.clone();
    let mut d = model.gradient_with_hess(&b);
    let mut f_val = model.value_with_hess(&s, &b);

    let mut h0 = f64::INFINITY;
    let mut h_prev = f64::INFINITY;

    for l in 0..l_max {
        if h_prev <= params.eps1.min(params.eps2 * h0) {
            break;
        }
        let lambda_l = bb_step_length(inner(&s, &s), inner(&b, &s), norm(&d), params);

        // majorant anchored at the current inner iterate
        let state = SmoothingState::new(eps_k, u.clone(), reg.p);
        let arg = u.axpy(-lambda_l, &d);
        let w = match space {
            Space::L2 => prox_majorant_l2(&arg, lambda_l, &state, reg),
            Space::H01 => prox_majorant_h1(&arg, lambda_l, &state, reg, lin_tol)?,
        };

        // honor the trust-region indicator around u_k
        let dist = norm(&w.sub(u_k));
        let w = if dist > ball_radius * (1.0 + 1e-12) {
            match space {
                Space::L2 => {
                    let dir = arg.sub(u_k);
                    match largest_negative_t(|t| {
                        let wt = prox_majorant_l2(&u_k.axpy(t, &dir), lambda_l * t, &state, reg);
                        Ok(norm(&wt.sub(u_k)) - ball_radius)
                    }) {
                        Ok(t_star) => {
                            prox_majorant_l2(&u_k.axpy(t_star, &dir), lambda_l * t_star, &state, reg)
                        }
                        Err(SolverError::NoFeasibleStep { .. }) => return Ok(u),
                        Err(e) => return Err(e),
                    }
                }
                Space::H01 => u_k.axpy(ball_radius / dist, &w.sub(u_k)),
            }
        } else {
            w
        };

        let s_new = w.sub(&u);
        let ns = norm(&s_new);
        let h_l = ns / lambda_l;
        if l == 0 {
            h0 = h_l;
        }
        h_prev = h_l;
        if ns == 0.0 {
            break;
        }
        let b_new = model.hess_apply(&s_new)?;
        let ds = inner(&d, &s_new);
        let sbs = inner(&b_new, &s_new);
        let phi_u = phi_value(&u, reg, PhiVariant::Majorant(&state));

        // Armijo on the majorized model, with a plain non-increase guard so
        // truncated steps can never push the model uphill
        let mut alpha1 = 1.0;
        let mut accepted = None;
        for _ in 0..=LINE_SEARCH_CAP {
            let trial = u.axpy(alpha1, &s_new);
            let f_trial = f_val + alpha1 * ds + 0.5 * alpha1 * alpha1 * sbs;
            let phi_trial = phi_value(&trial, reg, PhiVariant::Majorant(&state));
            let scale = (f_val + phi_u).abs().max(1.0);
            let armijo = f_trial + phi_trial
                <= f_val + phi_u + params.mu1 * (alpha1 * ds + phi_trial - phi_u) + 1e-14 * scale;
            let monotone = f_trial + phi_trial <= f_val + phi_u + 1e-14 * scale;
            if armijo && monotone {
                accepted = Some((trial, f_trial, alpha1));
                break;
            }
            alpha1 *= params.beta1;
        }
        let Some((trial, f_trial, alpha1)) = accepted else {
            return Ok(u); // line search failed; keep the current iterate
        };
        u = trial;
        f_val = f_trial;
        d = d.axpy(alpha1, &b_new);
        s = s_new;
        b = b_new;
    }
    Ok(u)
}
