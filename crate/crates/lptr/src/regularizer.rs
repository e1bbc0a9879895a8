//! The nonsmooth regularizer phi and its smoothed and convex-majorant
//! surrogates.
//!
//! phi(u) = beta * int |u|^p + alpha/2 ||u||^2 + box indicator. The smoothed
//! version replaces t -> t^{p/2} by `psi_eps`, quadratic below eps^2; the
//! per-iterate majorant linearizes psi_eps in u^2 at an anchor, which makes
//! it convex and quadratic with tangency at the anchor. Proximal operators:
//! the majorant prox is a pointwise closed form in L2 and one linear solve
//! in H01; the smoothed prox is a pointwise nonconvex problem solved exactly
//! by comparing the small-branch minimizer against a safeguarded Newton
//! search past the inflection point u0(r).

use crate::error::{Result, SolverError};
use crate::grid::{
    apply_laplacian, solve_shifted_laplacian, BoxBounds, GridFunction, Shift, Space,
};
use std::cell::Cell;

/// Parameters (p, alpha, beta, box) of the regularizer.
///
/// `p = 1` is admitted for convex sanity runs and `beta = 0` for smooth
/// ones; the sparsity results of interest concern `0 < p < 1`, `beta > 0`.
#[derive(Debug, Clone, Copy)]
pub struct RegularizerParams {
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub bounds: BoxBounds,
}

impl RegularizerParams {
    pub fn new(p: f64, alpha: f64, beta: f64, bounds: BoxBounds) -> Self {
        assert!(p > 0.0 && p <= 1.0, "p must lie in (0, 1]");
        assert!(alpha >= 0.0 && beta >= 0.0);
        RegularizerParams { p, alpha, beta, bounds }
    }

    /// Threshold below which an entry counts as an exact zero in reports.
    pub fn sparsity_tol(&self) -> f64 {
        let b = self.bounds.upper();
        1e-8 * if b.is_finite() { b.max(1.0) } else { 1.0 }
    }
}

/// Smoothing level and the anchor the convex majorant is built at.
///
/// Caches psi_eps(anchor^2) and psi_eps'(anchor^2) since every prox and
/// every majorant evaluation needs them.
#[derive(Debug, Clone)]
pub struct SmoothingState {
    eps: f64,
    p: f64,
    anchor: GridFunction,
    anchor_psi: Vec<f64>,
    anchor_dpsi: Vec<f64>,
}

impl SmoothingState {
    pub fn new(eps: f64, anchor: GridFunction, p: f64) -> Self {
        assert!(eps > 0.0, "smoothing level must be positive");
        let anchor_psi = anchor
            .values()
            .iter()
            .map(|&a| psi_eps(a * a, eps, p))
            .collect();
        let anchor_dpsi = anchor
            .values()
            .iter()
            .map(|&a| psi_eps_prime(a * a, eps, p))
            .collect();
        SmoothingState {
            eps,
            p,
            anchor,
            anchor_psi,
            anchor_dpsi,
        }
    }

    #[inline]
    pub fn eps(&self) -> f64 {
        self.eps
    }

    #[inline]
    pub fn p(&self) -> f64 {
        self.p
    }

    #[inline]
    pub fn anchor(&self) -> &GridFunction {
        &self.anchor
    }

    #[inline]
    pub fn anchor_weights(&self) -> &[f64] {
        &self.anchor_dpsi
    }
}

/// Counter for nonconvex L^p proximal evaluations, owned by one solve.
#[derive(Debug, Default)]
pub struct ProxCounter(Cell<u64>);

impl ProxCounter {
    pub fn new() -> Self {
        ProxCounter(Cell::new(0))
    }

    pub fn bump(&self) {
        self.0.set(self.0.get() + 1);
    }

    pub fn count(&self) -> u64 {
        self.0.get()
    }
}

/// Smooth approximation of `t -> t^{p/2}`: quadratic on [0, eps^2).
pub fn psi_eps(t: f64, eps: f64, p: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if t < eps * eps {
        0.5 * p * t / eps.powf(2.0 - p) + (1.0 - 0.5 * p) * eps.powf(p)
    } else {
        t.powf(0.5 * p)
    }
}

/// Derivative `psi_eps'(t) = (p/2) min(eps^{p-2}, t^{(p-2)/2})`.
pub fn psi_eps_prime(t: f64, eps: f64, p: f64) -> f64 {
    debug_assert!(t >= 0.0);
    0.5 * p * eps.powf(p - 2.0).min(t.powf(0.5 * (p - 2.0)))
}

/// Quadrature of `psi_eps(u^2)`, approximating `int |u|^p`.
pub fn j_eps(u: &GridFunction, eps: f64, p: f64) -> f64 {
    let h2 = u.grid().h() * u.grid().h();
    h2 * u
        .values()
        .iter()
        .map(|&v| psi_eps(v * v, eps, p))
        .sum::<f64>()
}

/// Quadrature of the linearization of `psi_eps` in u^2 at the anchor.
///
/// Majorizes `j_eps` with equality at the anchor.
pub fn j_majorant(u: &GridFunction, state: &SmoothingState) -> f64 {
    assert_eq!(u.grid(), state.anchor.grid(), "grid mismatch");
    let h2 = u.grid().h() * u.grid().h();
    let mut acc = 0.0;
    for ((&v, &a), (&psi, &dpsi)) in u
        .values()
        .iter()
        .zip(state.anchor.values())
        .zip(state.anchor_psi.iter().zip(&state.anchor_dpsi))
    {
        acc += psi + dpsi * (v * v - a * a);
    }
    h2 * acc
}

/// Which version of the nonsmooth term to evaluate.
#[derive(Debug, Clone, Copy)]
pub enum PhiVariant<'a> {
    /// beta * int |u|^p, the exact pseudonorm.
    Exact,
    /// beta * j_eps at the given smoothing level.
    Smoothed(f64),
    /// beta * j_k, the convex majorant anchored in the state.
    Majorant(&'a SmoothingState),
}

/// Value of phi in the requested variant; `+inf` outside the box.
pub fn phi_value(u: &GridFunction, params: &RegularizerParams, variant: PhiVariant<'_>) -> f64 {
    if u.space() == Space::L2 && !params.bounds.is_unbounded() {
        let feasible = u.values().iter().all(|&v| params.bounds.contains(v));
        if !feasible {
            return f64::INFINITY;
        }
    }
    let j = match variant {
        PhiVariant::Exact => {
            let h2 = u.grid().h() * u.grid().h();
            h2 * u
                .values()
                .iter()
                .map(|&v| v.abs().powf(params.p))
                .sum::<f64>()
        }
        PhiVariant::Smoothed(eps) => j_eps(u, eps, params.p),
        PhiVariant::Majorant(state) => j_majorant(u, state),
    };
    let norm_sq = crate::grid::inner(u, u);
    params.beta * j + 0.5 * params.alpha * norm_sq
}

/// Scalar form of the L2 majorant prox (no box): `v / (1 + ar + 2rb w)`.
#[inline]
pub fn prox_majorant_scalar_unclamped(v: f64, r: f64, anchor_dpsi: f64, params: &RegularizerParams) -> f64 {
    v / (1.0 + params.alpha * r + 2.0 * r * params.beta * anchor_dpsi)
}

/// Closed-form prox of the majorant in L2: pointwise damping plus clamp.
pub fn prox_majorant_l2(
    v: &GridFunction,
    r: f64,
    state: &SmoothingState,
    params: &RegularizerParams,
) -> GridFunction {
    assert!(r > 0.0);
    assert_eq!(v.space(), Space::L2);
    assert_eq!(v.grid(), state.anchor.grid(), "grid mismatch");
    debug_assert_eq!(state.p, params.p, "smoothing state built for a different p");
    let mut out = v.clone();
    for (o, &w) in out.values_mut().iter_mut().zip(&state.anchor_dpsi) {
        *o = params
            .bounds
            .clamp(*o / (1.0 + params.alpha * r + 2.0 * r * params.beta * w));
    }
    out
}

/// Prox of the majorant in H01: one shifted-Laplacian solve.
///
/// Minimizes `1/(2r)||w-v||^2_{H01} + alpha/2 ||w||^2_{H01}
/// + beta h^2 sum psi'(a_i^2) w_i^2`, i.e. solves
/// `(K + 2 beta r/(1+alpha r) diag(psi')) w = K v / (1 + alpha r)`.
pub fn prox_majorant_h1(
    v: &GridFunction,
    r: f64,
    state: &SmoothingState,
    params: &RegularizerParams,
    tol: f64,
) -> Result<GridFunction> {
    assert!(r > 0.0);
    assert_eq!(v.space(), Space::H01);
    assert!(
        params.bounds.is_unbounded(),
        "H01 regularizer supports only the unconstrained case"
    );
    let scale = 1.0 / (1.0 + params.alpha * r);
    let kv = apply_laplacian(v).scaled(scale);
    let c: Vec<f64> = state
        .anchor_dpsi
        .iter()
        .map(|&w| 2.0 * params.beta * r * scale * w)
        .collect();
    solve_shifted_laplacian(Shift::Field(&c), &kv, tol)
}

/// Inflection threshold `u0(r)`: nonzero outputs of the smoothed prox have
/// magnitude at least this.
pub fn inflection_threshold(r: f64, params: &RegularizerParams) -> f64 {
    assert!(r > 0.0);
    let p = params.p;
    (r * params.beta * p * (1.0 - p) / (1.0 + params.alpha * r)).powf(1.0 / (2.0 - p))
}

const PROX_NEWTON_CAP: usize = 100;
const PROX_TIE_REL: f64 = 1e-12;

/// Global minimizer of `w -> (1/2r)(w-v)^2 + (alpha/2) w^2 + beta psi_eps(w^2)`
/// clamped to the box. `eps = 0` uses the exact |.|^p regularizer.
pub fn prox_smoothed_scalar(v: f64, r: f64, eps: f64, params: &RegularizerParams) -> Result<f64> {
    assert!(r > 0.0 && eps >= 0.0);
    assert!(
        params.bounds.lower() <= 0.0 && params.bounds.upper() >= 0.0,
        "scalar prox assumes the box contains 0"
    );
    if v == 0.0 {
        return Ok(0.0);
    }
    let sign = v.signum();
    let vm = v.abs();
    let cap = if sign > 0.0 {
        params.bounds.upper()
    } else {
        -params.bounds.lower()
    };
    Ok(sign * prox_nonneg(vm, r, eps, params, cap)?)
}

/// Objective restricted to w >= 0 with nonnegative prox argument.
fn prox_objective(w: f64, vm: f64, r: f64, eps: f64, params: &RegularizerParams) -> f64 {
    let d = w - vm;
    0.5 / r * d * d + 0.5 * params.alpha * w * w + params.beta * psi_eps(w * w, eps, params.p)
}

fn prox_nonneg(vm: f64, r: f64, eps: f64, params: &RegularizerParams, cap: f64) -> Result<f64> {
    let p = params.p;
    let alpha = params.alpha;
    let beta = params.beta;

    if beta == 0.0 {
        // purely quadratic objective
        return Ok((vm / (1.0 + alpha * r)).min(cap));
    }

    // Minimizer on the quadratic branch [0, eps]; the paper's M_eps.
    let cand_small = if eps > 0.0 {
        (vm / (1.0 + alpha * r + beta * r * p / eps.powf(2.0 - p))).min(eps)
    } else {
        0.0
    }
    .min(cap);

    // Minimizer on the power branch, beyond the inflection point.
    let lo = inflection_threshold(r, params).max(eps);
    let hi = vm.max(lo);
    let deriv = |w: f64| (w - vm) / r + alpha * w + beta * p * w.powf(p - 1.0);
    let cand_branch = if hi > lo && deriv(lo) < 0.0 {
        let root = branch_root(vm, r, params, lo, hi, cand_small)?;
        Some(root.min(cap))
    } else {
        None
    };

    let obj_small = prox_objective(cand_small, vm, r, eps, params);
    match cand_branch {
        None => Ok(cand_small),
        Some(wb) => {
            let obj_branch = prox_objective(wb, vm, r, eps, params);
            let scale = obj_small.abs().max(obj_branch.abs()).max(1.0);
            if (obj_small - obj_branch).abs() <= PROX_TIE_REL * scale {
                // tie: prefer the smaller-magnitude candidate
                Ok(cand_small.min(wb))
            } else if obj_small < obj_branch {
                Ok(cand_small)
            } else {
                Ok(wb)
            }
        }
    }
}

/// Safeguarded Newton for the root of the branch derivative on [lo, hi],
/// where it is strictly increasing.
fn branch_root(
    vm: f64,
    r: f64,
    params: &RegularizerParams,
    lo: f64,
    hi: f64,
    cand_small: f64,
) -> Result<f64> {
    let p = params.p;
    let alpha = params.alpha;
    let beta = params.beta;
    let deriv = |w: f64| (w - vm) / r + alpha * w + beta * p * w.powf(p - 1.0);
    let deriv2 = |w: f64| 1.0 / r + alpha + beta * p * (p - 1.0) * w.powf(p - 2.0);

    let (mut lo_b, mut hi_b) = (lo, hi);
    let mut w = 0.5 * (lo + hi);
    for _ in 0..PROX_NEWTON_CAP {
        let g = deriv(w);
        if g > 0.0 {
            hi_b = w;
        } else {
            lo_b = w;
        }
        let d2 = deriv2(w);
        let mut w_new = if d2 > 0.0 { w - g / d2 } else { f64::NAN };
        if !(w_new > lo_b && w_new < hi_b) {
            w_new = 0.5 * (lo_b + hi_b);
        }
        if (w_new - w).abs() <= 1e-12 * (1.0 + w.abs()) {
            return Ok(w_new);
        }
        w = w_new;
    }
    Err(SolverError::ScalarProxCap {
        candidate_small: cand_small,
        candidate_branch: w,
    })
}

/// Pointwise smoothed prox over a grid function (L2 only).
///
/// Counts as one nonconvex L^p proximal evaluation.
pub fn prox_smoothed(
    v: &GridFunction,
    r: f64,
    eps: f64,
    params: &RegularizerParams,
    tally: &ProxCounter,
) -> Result<GridFunction> {
    assert_eq!(v.space(), Space::L2, "smoothed prox is pointwise, L2 only");
    tally.bump();
    let mut out = v.clone();
    for o in out.values_mut() {
        *o = prox_smoothed_scalar(*o, r, eps, params)?;
    }
    Ok(out)
}

/// Quadrature measure of the set where `|u| <= tol`.
pub fn sparsity_measure(u: &GridFunction, tol: f64) -> f64 {
    assert!(tol >= 0.0);
    let h2 = u.grid().h() * u.grid().h();
    h2 * u.values().iter().filter(|&&v| v.abs() <= tol).count() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{norm, Grid};
    use proptest::prelude::{proptest, prop_assert, prop_assert_eq, ProptestConfig};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn params(p: f64, alpha: f64, beta: f64, bounds: BoxBounds) -> RegularizerParams {
        RegularizerParams::new(p, alpha, beta, bounds)
    }

    fn random_gf(grid: Grid, rng: &mut impl Rng, scale: f64) -> GridFunction {
        GridFunction::new(
            grid,
            Space::L2,
            (0..grid.len()).map(|_| rng.gen_range(-scale..scale)).collect(),
        )
    }

    /// Brute-force scalar prox oracle: fine grid search on [-|v|, |v|].
    fn grid_search_prox(v: f64, r: f64, eps: f64, prm: &RegularizerParams, points: usize) -> f64 {
        let span = v.abs().max(1e-30);
        let mut best = f64::INFINITY;
        let mut best_w = 0.0;
        for i in 0..=points {
            let w = -span + 2.0 * span * i as f64 / points as f64;
            let w = prm.bounds.clamp(w);
            let val = 0.5 / r * (w - v) * (w - v)
                + 0.5 * prm.alpha * w * w
                + prm.beta * psi_eps(w * w, eps, prm.p);
            if val < best {
                best = val;
                best_w = w;
            }
        }
        let _ = best_w;
        best
    }

    fn scalar_objective(w: f64, v: f64, r: f64, eps: f64, prm: &RegularizerParams) -> f64 {
        0.5 / r * (w - v) * (w - v) + 0.5 * prm.alpha * w * w + prm.beta * psi_eps(w * w, eps, prm.p)
    }

    #[test]
    fn psi_branches_agree_at_eps_squared() {
        for (p, eps) in [(0.3f64, 0.2f64), (0.9, 1e-3), (1.0, 0.5)] {
            let t = eps * eps;
            let quad = 0.5 * p * t / eps.powf(2.0 - p) + (1.0 - 0.5 * p) * eps.powf(p);
            let pow = t.powf(0.5 * p);
            assert!((quad - pow).abs() <= 1e-14 * pow.abs());
            assert!((psi_eps(t, eps, p) - pow).abs() <= 1e-14 * pow.abs());
        }
    }

    #[test]
    fn psi_at_zero() {
        let (p, eps): (f64, f64) = (0.7, 0.05);
        assert!((psi_eps(0.0, eps, p) - (1.0 - 0.5 * p) * eps.powf(p)).abs() < 1e-15);
    }

    #[test]
    fn psi_closed_branch_value() {
        // p = 0.5, eps = 0.1, t = 0.04 -> t^{p/2} = 0.04^{0.25}
        let got = psi_eps(0.04, 0.1, 0.5);
        assert!((got - 0.447_213_595_499_957_94).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn psi_prime_at_zero_and_kink() {
        let (p, eps): (f64, f64) = (0.4, 0.2);
        let want = 0.5 * p * eps.powf(p - 2.0);
        assert!((psi_eps_prime(0.0, eps, p) - want).abs() < 1e-15);
        assert!((psi_eps_prime(eps * eps, eps, p) - want).abs() <= 1e-15 * want);
    }

    #[test]
    fn psi_prime_matches_finite_difference() {
        let (p, eps): (f64, f64) = (0.6, 0.3);
        let t = 2.0 * eps * eps;
        let d = 1e-7 * t;
        let fd = (psi_eps(t + d, eps, p) - psi_eps(t - d, eps, p)) / (2.0 * d);
        let an = psi_eps_prime(t, eps, p);
        assert!((fd - an).abs() <= 1e-6 * an.abs(), "fd {fd} analytic {an}");
    }

    #[test]
    fn j_eps_constant_integrand_at_zero() {
        let grid = Grid::new(6);
        let u = GridFunction::zeros(grid, Space::L2);
        let (p, eps): (f64, f64) = (0.5, 0.2);
        let want = (1.0 - 0.5 * p) * eps.powf(p) * grid.quadrature_area();
        assert!((j_eps(&u, eps, p) - want).abs() < 1e-14);
    }

    #[test]
    fn j_eps_small_eps_limit() {
        let grid = Grid::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = 0.5;
        let u = GridFunction::new(
            grid,
            Space::L2,
            (0..grid.len())
                .map(|_| {
                    let s: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    s * rng.gen_range(0.5..2.0)
                })
                .collect(),
        );
        let h2 = grid.h() * grid.h();
        let exact: f64 = h2 * u.values().iter().map(|&v| v.abs().powf(p)).sum::<f64>();
        assert!((j_eps(&u, 1e-12, p) - exact).abs() <= 1e-12 * exact);
    }

    #[test]
    fn majorant_at_zero_anchor_is_quadratic() {
        let grid = Grid::new(4);
        let (p, eps) = (0.7, 0.1);
        let state = SmoothingState::new(eps, GridFunction::zeros(grid, Space::L2), p);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = random_gf(grid, &mut rng, 2.0);
        let h2 = grid.h() * grid.h();
        let want = j_eps(&GridFunction::zeros(grid, Space::L2), eps, p)
            + 0.5 * p * eps.powf(p - 2.0) * h2 * u.values().iter().map(|&v| v * v).sum::<f64>();
        assert!((j_majorant(&u, &state) - want).abs() <= 1e-12 * want.abs());
    }

    #[test]
    fn phi_trivial_values() {
        let grid = Grid::new(4);
        let prm = params(0.5, 0.1, 1.0, BoxBounds::symmetric(4.0));
        let zero = GridFunction::zeros(grid, Space::L2);
        assert_eq!(phi_value(&zero, &prm, PhiVariant::Exact), 0.0);
        let outside = GridFunction::constant(grid, Space::L2, 10.0);
        assert_eq!(phi_value(&outside, &prm, PhiVariant::Exact), f64::INFINITY);
    }

    #[test]
    fn prox_majorant_l2_trivial() {
        let grid = Grid::new(4);
        let prm = params(0.5, 0.0, 0.0, BoxBounds::unbounded());
        let state = SmoothingState::new(0.1, GridFunction::zeros(grid, Space::L2), prm.p);
        let zero = GridFunction::zeros(grid, Space::L2);
        assert_eq!(prox_majorant_l2(&zero, 1.0, &state, &prm), zero);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_gf(grid, &mut rng, 3.0);
        // alpha = beta = 0, unbounded box: prox of the zero function
        let out = prox_majorant_l2(&v, 2.0, &state, &prm);
        assert_eq!(out, v);
    }

    #[test]
    fn prox_majorant_l2_matches_scalar_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let p = rng.gen_range(0.1..1.0);
            let alpha = rng.gen_range(0.0..0.5);
            let beta = rng.gen_range(0.0..0.5f64);
            let prm = params(p, alpha, beta, BoxBounds::unbounded());
            let r = rng.gen_range(0.05..5.0);
            let eps = rng.gen_range(1e-3..0.5);
            let anchor = rng.gen_range(-2.0..2.0f64);
            let v = rng.gen_range(-3.0..3.0f64);
            let w_anchor = psi_eps_prime(anchor * anchor, eps, p);
            let got = prox_majorant_scalar_unclamped(v, r, w_anchor, &prm);
            // brute-force 1D minimization of the majorant objective
            let span = v.abs() + 1.0;
            let mut best = f64::INFINITY;
            let mut best_w = 0.0;
            for i in 0..=2_000_000 {
                let w = -span + 2.0 * span * i as f64 / 2_000_000.0;
                let val = 0.5 / r * (w - v) * (w - v)
                    + 0.5 * alpha * w * w
                    + beta * w_anchor * w * w;
                if val < best {
                    best = val;
                    best_w = w;
                }
            }
            assert!((got - best_w).abs() <= 1e-5, "closed form {got}, oracle {best_w}");
            let got_obj =
                0.5 / r * (got - v) * (got - v) + 0.5 * alpha * got * got + beta * w_anchor * got * got;
            assert!(got_obj <= best + 1e-8);
        }
    }

    #[test]
    fn prox_majorant_h1_trivial_and_scalar_multiple() {
        let grid = Grid::new(6);
        let prm = params(0.5, 0.3, 0.0, BoxBounds::unbounded());
        let anchor = GridFunction::zeros(grid, Space::H01);
        let state = SmoothingState::new(0.1, anchor, prm.p);
        let zero = GridFunction::zeros(grid, Space::H01);
        let out = prox_majorant_h1(&zero, 1.5, &state, &prm, 1e-12).unwrap();
        assert!(norm(&out) < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = GridFunction::new(
            grid,
            Space::H01,
            (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let r = 2.0;
        let out = prox_majorant_h1(&v, r, &state, &prm, 1e-12).unwrap();
        let want = v.scaled(1.0 / (1.0 + prm.alpha * r));
        assert!(norm(&out.sub(&want)) <= 1e-9);
    }

    #[test]
    fn prox_majorant_h1_matches_dense_solve() {
        let grid = Grid::new(8);
        let n = grid.n();
        let m = grid.len();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let prm = params(0.5, 0.05, 0.2, BoxBounds::unbounded());
        let anchor = GridFunction::new(
            grid,
            Space::H01,
            (0..m).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        );
        let eps = 0.05;
        let state = SmoothingState::new(eps, anchor, prm.p);
        let v = GridFunction::new(
            grid,
            Space::H01,
            (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        );
        let r = 0.7;

        let got = prox_majorant_h1(&v, r, &state, &prm, 1e-13).unwrap();

        // dense first-order system: ((1+ar)/r) K + 2 beta diag(psi') vs (1/r) K v
        let inv_h2 = 1.0 / (grid.h() * grid.h());
        let mut a = nalgebra::DMatrix::<f64>::zeros(m, m);
        for iy in 0..n {
            for ix in 0..n {
                let idx = iy * n + ix;
                a[(idx, idx)] = 4.0 * inv_h2 * (1.0 + prm.alpha * r) / r
                    + 2.0 * prm.beta * state.anchor_dpsi[idx];
                let mut neigh = |jdx: usize| {
                    a[(idx, jdx)] = -inv_h2 * (1.0 + prm.alpha * r) / r;
                };
                if ix > 0 {
                    neigh(idx - 1);
                }
                if ix + 1 < n {
                    neigh(idx + 1);
                }
                if iy > 0 {
                    neigh(idx - n);
                }
                if iy + 1 < n {
                    neigh(idx + n);
                }
            }
        }
        let kv = apply_laplacian(&v);
        let rhs = nalgebra::DVector::from_iterator(m, kv.values().iter().map(|&x| x / r));
        let sol = a.lu().solve(&rhs).unwrap();
        let max_err = got
            .values()
            .iter()
            .zip(sol.iter())
            .map(|(&x, &y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 1e-9, "deviation from dense solve {max_err}");
    }

    #[test]
    fn inflection_threshold_values() {
        let prm = params(0.5, 0.0, 1.0, BoxBounds::unbounded());
        let got = inflection_threshold(1.0, &prm);
        assert!((got - 0.396_850_262_992_049_9).abs() < 1e-12, "got {got}");

        // monotone increasing in beta
        let mut last = 0.0;
        for beta in [0.1, 0.5, 1.0, 5.0] {
            let prm = params(0.5, 0.2, beta, BoxBounds::unbounded());
            let v = inflection_threshold(2.0, &prm);
            assert!(v > last);
            last = v;
        }

        // alpha -> infinity drives the threshold to 0
        let prm = params(0.5, 1e12, 1.0, BoxBounds::unbounded());
        assert!(inflection_threshold(1.0, &prm) < 1e-3);
    }

    #[test]
    fn scalar_prox_zero_input() {
        let prm = params(0.5, 0.1, 1.0, BoxBounds::symmetric(2.0));
        assert_eq!(prox_smoothed_scalar(0.0, 1.0, 0.1, &prm).unwrap(), 0.0);
        assert_eq!(prox_smoothed_scalar(0.0, 1.0, 0.0, &prm).unwrap(), 0.0);
    }

    #[test]
    fn scalar_prox_respects_sparsity_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for k in 0..2000 {
            let p = rng.gen_range(0.05..0.999);
            let prm = params(p, rng.gen_range(0.0..1.0), rng.gen_range(0.01..2.0), BoxBounds::unbounded());
            let r = rng.gen_range(0.01..10.0);
            let eps = if k % 4 == 0 { 0.0 } else { rng.gen_range(1e-6..0.5) };
            let v = rng.gen_range(-5.0..5.0);
            let w = prox_smoothed_scalar(v, r, eps, &prm).unwrap();
            let u0 = inflection_threshold(r, &prm);
            assert!(
                w.abs() <= eps || w.abs() >= u0 - 1e-10,
                "p={p} r={r} eps={eps} v={v}: w={w} u0={u0}"
            );
        }
    }

    #[test]
    fn scalar_prox_matches_grid_search_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for k in 0..200 {
            let p = rng.gen_range(0.05..0.999);
            let alpha = rng.gen_range(0.0..1.0);
            let beta = rng.gen_range(0.01..2.0);
            let bounds = if k % 3 == 0 {
                BoxBounds::symmetric(rng.gen_range(0.5..4.0))
            } else {
                BoxBounds::unbounded()
            };
            let prm = params(p, alpha, beta, bounds);
            let r = rng.gen_range(0.01..10.0);
            let eps = if k % 5 == 0 { 0.0 } else { rng.gen_range(1e-6..0.5) };
            let v = rng.gen_range(-5.0..5.0f64);
            let w = prox_smoothed_scalar(v, r, eps, &prm).unwrap();
            let got = scalar_objective(w, v, r, eps, &prm);
            let oracle = grid_search_prox(v, r, eps, &prm, 1_000_000);
            assert!(
                got <= oracle + 1e-10,
                "p={p} a={alpha} b={beta} r={r} eps={eps} v={v}: {got} vs {oracle}"
            );
        }
    }

    #[test]
    fn prox_smoothed_agrees_with_majorant_in_quadratic_regime() {
        // huge eps: psi is quadratic over the whole value range, so the
        // smoothed prox and the majorant prox coincide
        let grid = Grid::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let prm = params(0.6, 0.2, 0.4, BoxBounds::unbounded());
        let eps = 50.0;
        let anchor = random_gf(grid, &mut rng, 0.5);
        let state = SmoothingState::new(eps, anchor, prm.p);
        let v = random_gf(grid, &mut rng, 0.5);
        let tally = ProxCounter::new();
        let smoothed = prox_smoothed(&v, 1.3, eps, &prm, &tally).unwrap();
        let majorant = prox_majorant_l2(&v, 1.3, &state, &prm);
        assert!(norm(&smoothed.sub(&majorant)) <= 1e-10);
        assert_eq!(tally.count(), 1);
    }

    #[test]
    fn sparsity_measure_cases() {
        let grid = Grid::new(4);
        let area = grid.quadrature_area();
        let zero = GridFunction::zeros(grid, Space::L2);
        assert!((sparsity_measure(&zero, 0.0) - area).abs() < 1e-15);
        let ones = GridFunction::constant(grid, Space::L2, 1.0);
        assert_eq!(sparsity_measure(&ones, 0.5), 0.0);
        // half-zero pattern
        let mut vals = vec![0.0; grid.len()];
        for (i, v) in vals.iter_mut().enumerate() {
            if i % 2 == 1 {
                *v = 2.0;
            }
        }
        let half = GridFunction::new(grid, Space::L2, vals);
        assert!((sparsity_measure(&half, 1e-12) - 0.5 * area).abs() < 1e-15);
    }

    #[test]
    fn prox_distance_inequality_scalar() {
        // majorant prox displacement <= (4 + 2/p) * smoothed prox displacement
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..2000 {
            let p = rng.gen_range(0.1..0.99);
            let prm = params(p, rng.gen_range(0.0..0.5), rng.gen_range(0.05..1.0), BoxBounds::unbounded());
            let r = rng.gen_range(0.05..5.0);
            let eps = rng.gen_range(1e-4..0.3);
            let u_k = rng.gen_range(-3.0..3.0);
            let g = rng.gen_range(-3.0..3.0);
            let arg = u_k - r * g;
            let w_anchor = psi_eps_prime(u_k * u_k, eps, p);
            let p_convex = prox_majorant_scalar_unclamped(arg, r, w_anchor, &prm);
            let p_nonconvex = prox_smoothed_scalar(arg, r, eps, &prm).unwrap();
            let c = 4.0 + 2.0 / p;
            assert!(
                (p_convex - u_k).abs() <= c * (p_nonconvex - u_k).abs() + 1e-12,
                "p={p} r={r} eps={eps} u_k={u_k} g={g}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn j_eps_monotone_in_eps(seed in 0u64..10_000) {
            let grid = Grid::new(4);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rng.gen_range(0.05..1.0);
            let u = random_gf(grid, &mut rng, 3.0);
            let e1 = rng.gen_range(1e-6..1.0f64);
            let e2 = rng.gen_range(1e-6..1.0f64);
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(j_eps(&u, lo, p) <= j_eps(&u, hi, p) + 1e-14);
        }

        #[test]
        fn majorant_dominates_with_exact_tangency(seed in 0u64..10_000) {
            let grid = Grid::new(4);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rng.gen_range(0.05..1.0);
            let eps = rng.gen_range(1e-5..0.8);
            let anchor = random_gf(grid, &mut rng, 2.0);
            let state = SmoothingState::new(eps, anchor.clone(), p);
            let u = random_gf(grid, &mut rng, 2.0);
            prop_assert!(j_majorant(&u, &state) >= j_eps(&u, eps, p) - 1e-12);
            let tangency = (j_majorant(&anchor, &state) - j_eps(&anchor, eps, p)).abs();
            prop_assert!(tangency <= 1e-12);
        }

        #[test]
        fn phi_majorization_chain(seed in 0u64..10_000) {
            let grid = Grid::new(4);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prm = params(rng.gen_range(0.05..1.0), rng.gen_range(0.0..0.5),
                             rng.gen_range(0.05..1.0), BoxBounds::symmetric(5.0));
            let eps_k = rng.gen_range(1e-4..0.8f64);
            let eps_small = eps_k * rng.gen_range(0.01..1.0f64);
            let anchor = random_gf(grid, &mut rng, 2.0);
            let state = SmoothingState::new(eps_k, anchor, prm.p);
            let u = random_gf(grid, &mut rng, 2.0);
            let maj = phi_value(&u, &prm, PhiVariant::Majorant(&state));
            let smo = phi_value(&u, &prm, PhiVariant::Smoothed(eps_k));
            let smaller = phi_value(&u, &prm, PhiVariant::Smoothed(eps_small));
            let exact = phi_value(&u, &prm, PhiVariant::Exact);
            prop_assert!(maj >= smo - 1e-12);
            prop_assert!(smo >= smaller - 1e-12);
            prop_assert!(smaller >= exact - 1e-12);
        }

        #[test]
        fn generalized_prox_inequality(seed in 0u64..10_000) {
            // (w - u, v - w) + 1/2 ||w - v||^2 >= r phi(w) - r phi(v)
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rng.gen_range(0.1..0.99);
            let prm = params(p, rng.gen_range(0.0..0.5), rng.gen_range(0.05..1.0),
                             BoxBounds::unbounded());
            let r = rng.gen_range(0.05..5.0);
            let eps = rng.gen_range(1e-4..0.5);
            let u = rng.gen_range(-3.0..3.0);
            // smoothed variant
            let w = prox_smoothed_scalar(u, r, eps, &prm).unwrap();
            for _ in 0..8 {
                let v = rng.gen_range(-4.0..4.0);
                let lhs = (w - u) * (v - w) + 0.5 * (w - v) * (w - v);
                let phiw = 0.5 * prm.alpha * w * w + prm.beta * psi_eps(w * w, eps, p);
                let phiv = 0.5 * prm.alpha * v * v + prm.beta * psi_eps(v * v, eps, p);
                prop_assert!(lhs >= r * (phiw - phiv) - 1e-10,
                    "smoothed: u={u} v={v} w={w} lhs={lhs} rhs={}", r * (phiw - phiv));
            }
            // majorant variant (anchor at some point)
            let anchor = rng.gen_range(-3.0..3.0f64);
            let dpsi = psi_eps_prime(anchor * anchor, eps, p);
            let wm = prox_majorant_scalar_unclamped(u, r, dpsi, &prm);
            let maj = |t: f64| 0.5 * prm.alpha * t * t
                + prm.beta * (psi_eps(anchor * anchor, eps, p) + dpsi * (t * t - anchor * anchor));
            for _ in 0..8 {
                let v = rng.gen_range(-4.0..4.0);
                let lhs = (wm - u) * (v - wm) + 0.5 * (wm - v) * (wm - v);
                prop_assert!(lhs >= r * (maj(wm) - maj(v)) - 1e-10);
            }
        }

        #[test]
        fn displacement_monotone_in_r(seed in 0u64..10_000) {
            // Phi(r) = |prox_{r phi_eps}(u + r d) - u| is nondecreasing
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rng.gen_range(0.1..0.99);
            let prm = params(p, rng.gen_range(0.0..0.5), rng.gen_range(0.05..1.0),
                             BoxBounds::unbounded());
            let eps = rng.gen_range(1e-4..0.5);
            let u = rng.gen_range(-2.0..2.0);
            let d = rng.gen_range(-2.0..2.0);
            let mut last = -1.0;
            let r0 = rng.gen_range(0.01..0.2);
            for i in 0..12 {
                let r = r0 * 1.8f64.powi(i);
                let w = prox_smoothed_scalar(u + r * d, r, eps, &prm).unwrap();
                let phi_r = (w - u).abs();
                prop_assert!(phi_r >= last - 1e-10, "r={r}: {phi_r} < {last}");
                last = phi_r;
            }
        }
    }
}
