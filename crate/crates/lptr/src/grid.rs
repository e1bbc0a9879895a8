//! Uniform-grid function spaces on the unit square.
//!
//! Controls and states are collocated at the interior nodes of a uniform
//! grid over (0,1)^2 with homogeneous Dirichlet boundary. The module
//! provides the L2 and H01 inner products, box projection, and solves of
//! shifted Laplacian systems (K + diag(c)) y = rhs with K the 5-point
//! negative Laplacian scaled by 1/h^2.
//!
//! Integrals use the midpoint rule h^2 * sum over nodes throughout.

use crate::error::{Result, SolverError};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Inner-product space a grid function belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    L2,
    H01,
}

/// Uniform grid of `n x n` interior nodes on (0,1)^2, spacing `h = 1/(n+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "grid needs at least 2 interior nodes per axis");
        Grid { n }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / (self.n as f64 + 1.0)
    }

    /// Number of interior nodes, `n^2`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Area covered by the midpoint quadrature, `n^2 h^2`.
    pub fn quadrature_area(&self) -> f64 {
        let h = self.h();
        (self.n * self.n) as f64 * h * h
    }

    /// Coordinates of node `(ix, iy)` with `0 <= ix, iy < n`.
    #[inline]
    pub fn coords(&self, ix: usize, iy: usize) -> (f64, f64) {
        let h = self.h();
        ((ix as f64 + 1.0) * h, (iy as f64 + 1.0) * h)
    }

    /// Smallest eigenvalue of the discrete negative Laplacian `K`.
    pub fn laplacian_min_eigenvalue(&self) -> f64 {
        let h = self.h();
        2.0 / (h * h) * (2.0 - 2.0 * (std::f64::consts::PI * h).cos())
    }
}

/// Values of a discretized control or state, tagged with its space.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    space: Space,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, space: Space, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len(), "value length must equal n^2");
        debug_assert!(values.iter().all(|v| v.is_finite()), "values must be finite");
        GridFunction { grid, space, values }
    }

    pub fn zeros(grid: Grid, space: Space) -> Self {
        GridFunction {
            grid,
            space,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, space: Space, c: f64) -> Self {
        GridFunction {
            grid,
            space,
            values: vec![c; grid.len()],
        }
    }

    /// Sample `f(x, y)` at every interior node.
    pub fn from_fn(grid: Grid, space: Space, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.len());
        for iy in 0..n {
            for ix in 0..n {
                let (x, y) = grid.coords(ix, iy);
                values.push(f(x, y));
            }
        }
        GridFunction::new(grid, space, values)
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn space(&self) -> Space {
        self.space
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same values, different space tag.
    pub fn retagged(mut self, space: Space) -> Self {
        self.space = space;
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction {
            grid: self.grid,
            space: self.space,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self + a * other`, checking grid and space agreement.
    pub fn axpy(&self, a: f64, other: &GridFunction) -> Self {
        self.check_compatible(other);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&s, &o)| s + a * o)
            .collect();
        GridFunction {
            grid: self.grid,
            space: self.space,
            values,
        }
    }

    pub fn add_scaled_in_place(&mut self, a: f64, other: &GridFunction) {
        self.check_compatible(other);
        for (s, &o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn sub(&self, other: &GridFunction) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    fn check_compatible(&self, other: &GridFunction) {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        assert_eq!(self.space, other.space, "space tag mismatch");
    }
}

/// Constant box bounds `a <= u <= b`; either side may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxBounds {
    lower: f64,
    upper: f64,
}

impl BoxBounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        assert!(lower < upper, "box requires a < b");
        assert!(!lower.is_nan() && !upper.is_nan());
        BoxBounds { lower, upper }
    }

    pub fn unbounded() -> Self {
        BoxBounds {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    /// Symmetric box `[-b, b]`, the shape used by all the experiments.
    pub fn symmetric(b: f64) -> Self {
        assert!(b > 0.0);
        BoxBounds {
            lower: -b,
            upper: b,
        }
    }

    #[inline]
    pub fn lower(&self) -> f64 {
        self.lower
    }

    #[inline]
    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower == f64::NEG_INFINITY && self.upper == f64::INFINITY
    }

    #[inline]
    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lower).min(self.upper)
    }

    /// Feasibility with a tiny absolute slack for roundoff in convex combinations.
    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        let slack = 1e-12 * self.upper.abs().min(1e300).max(1.0);
        v >= self.lower - slack && v <= self.upper + slack
    }
}

/// Inner product of the tagged space.
///
/// L2: `h^2 sum u_i v_i`. H01: the discrete Dirichlet form `h^2 sum u_i (K v)_i`.
pub fn inner(u: &GridFunction, v: &GridFunction) -> f64 {
    u.check_compatible(v);
    let h2 = u.grid.h() * u.grid.h();
    match u.space {
        Space::L2 => h2 * dot(&u.values, &v.values),
        Space::H01 => {
            // h^2 u^T K v with K = A/h^2 collapses to u^T A v.
            dirichlet_form(u.grid, &u.values, &v.values)
        }
    }
}

pub fn norm(u: &GridFunction) -> f64 {
    inner(u, u).max(0.0).sqrt()
}

/// L2 norm regardless of the function's space tag.
pub fn norm_l2(u: &GridFunction) -> f64 {
    let h2 = u.grid.h() * u.grid.h();
    (h2 * dot(&u.values, &u.values)).sqrt()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// `u^T A v` with `A` the unscaled 5-point stencil (Dirichlet boundary).
fn dirichlet_form(grid: Grid, u: &[f64], v: &[f64]) -> f64 {
    let n = grid.n();
    let mut acc = 0.0;
    for iy in 0..n {
        for ix in 0..n {
            let idx = iy * n + ix;
            let mut av = 4.0 * v[idx];
            if ix > 0 {
                av -= v[idx - 1];
            }
            if ix + 1 < n {
                av -= v[idx + 1];
            }
            if iy > 0 {
                av -= v[idx - n];
            }
            if iy + 1 < n {
                av -= v[idx + n];
            }
            acc += u[idx] * av;
        }
    }
    acc
}

/// Pointwise clamp of `u` to the box.
pub fn project_box(u: &GridFunction, bounds: &BoxBounds) -> GridFunction {
    u.map(|v| bounds.clamp(v))
}

/// `K u` with `K` the 5-point negative Laplacian scaled by `1/h^2`.
pub fn apply_laplacian(u: &GridFunction) -> GridFunction {
    let n = u.grid.n();
    let inv_h2 = 1.0 / (u.grid.h() * u.grid.h());
    let vals = &u.values;
    let mut out = vec![0.0; vals.len()];
    for iy in 0..n {
        for ix in 0..n {
            let idx = iy * n + ix;
            let mut av = 4.0 * vals[idx];
            if ix > 0 {
                av -= vals[idx - 1];
            }
            if ix + 1 < n {
                av -= vals[idx + 1];
            }
            if iy > 0 {
                av -= vals[idx - n];
            }
            if iy + 1 < n {
                av -= vals[idx + n];
            }
            out[idx] = av * inv_h2;
        }
    }
    GridFunction {
        grid: u.grid,
        space: u.space,
        values: out,
    }
}

/// Zero-order coefficient of a shifted Laplacian system.
#[derive(Debug, Clone, Copy)]
pub enum Shift<'a> {
    Constant(f64),
    Field(&'a [f64]),
}

impl Shift<'_> {
    fn validate(&self, len: usize) {
        match self {
            Shift::Constant(c) => assert!(*c >= 0.0, "shift must be nonnegative"),
            Shift::Field(c) => {
                assert_eq!(c.len(), len);
                assert!(c.iter().all(|&v| v >= 0.0), "shift must be nonnegative");
            }
        }
    }

    #[inline]
    fn at(&self, i: usize) -> f64 {
        match self {
            Shift::Constant(c) => *c,
            Shift::Field(c) => c[i],
        }
    }

    fn mean(&self, len: usize) -> f64 {
        match self {
            Shift::Constant(c) => *c,
            Shift::Field(c) => c.iter().sum::<f64>() / len as f64,
        }
    }
}

const CG_MAX_ITER: usize = 20_000;

/// Solve `(K + diag(c)) y = rhs` to `||residual||_L2 <= tol * max(1, ||rhs||_L2)`.
///
/// Constant shifts are solved directly in the discrete sine basis; variable
/// shifts use conjugate gradients preconditioned by the constant-shift solve
/// at the mean coefficient.
pub fn solve_shifted_laplacian(c: Shift<'_>, rhs: &GridFunction, tol: f64) -> Result<GridFunction> {
    c.validate(rhs.values.len());
    let grid = rhs.grid;
    let plan = sine_plan(grid.n());
    let h = grid.h();
    let rhs_l2 = h * dot(&rhs.values, &rhs.values).sqrt();
    let target = tol * rhs_l2.max(1.0) / h; // Euclidean residual target

    let mut y = match c {
        Shift::Constant(shift) => plan.solve_constant(&rhs.values, shift),
        Shift::Field(_) => {
            let mean = c.mean(rhs.values.len());
            pcg(grid, &c, &rhs.values, &plan, mean, target)?
        }
    };

    // The sine solve is exact up to roundoff; verify and polish if needed.
    let res = residual_norm(grid, &c, &y, &rhs.values);
    if res > target {
        let mean = c.mean(rhs.values.len());
        y = pcg(grid, &c, &rhs.values, &plan, mean, target)?;
    }

    Ok(GridFunction {
        grid,
        space: rhs.space,
        values: y,
    })
}

fn residual_norm(grid: Grid, c: &Shift<'_>, y: &[f64], rhs: &[f64]) -> f64 {
    let mut r = vec![0.0; y.len()];
    apply_shifted(grid, c, y, &mut r);
    r.iter()
        .zip(rhs)
        .map(|(&a, &b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt()
}

fn apply_shifted(grid: Grid, c: &Shift<'_>, x: &[f64], out: &mut [f64]) {
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    for iy in 0..n {
        for ix in 0..n {
            let idx = iy * n + ix;
            let mut av = 4.0 * x[idx];
            if ix > 0 {
                av -= x[idx - 1];
            }
            if ix + 1 < n {
                av -= x[idx + 1];
            }
            if iy > 0 {
                av -= x[idx - n];
            }
            if iy + 1 < n {
                av -= x[idx + n];
            }
            out[idx] = av * inv_h2 + c.at(idx) * x[idx];
        }
    }
}

fn pcg(
    grid: Grid,
    c: &Shift<'_>,
    rhs: &[f64],
    plan: &SinePlan,
    precond_shift: f64,
    target: f64,
) -> Result<Vec<f64>> {
    let m = rhs.len();
    let mut x = vec![0.0; m];
    let mut r = rhs.to_vec();
    let mut rnorm = dot(&r, &r).sqrt();
    if rnorm <= target {
        return Ok(x);
    }
    let mut z = plan.solve_constant(&r, precond_shift);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; m];
    for _ in 0..CG_MAX_ITER {
        apply_shifted(grid, c, &p, &mut ap);
        let pap = dot(&p, &ap);
        let alpha = rz / pap;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rnorm = dot(&r, &r).sqrt();
        if rnorm <= target {
            return Ok(x);
        }
        z = plan.solve_constant(&r, precond_shift);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolverError::LinearSolve {
        max_iter: CG_MAX_ITER,
        achieved: rnorm * grid.h(),
        target: target * grid.h(),
    })
}

/// Discrete sine basis of the 1D Dirichlet Laplacian, used as a direct
/// solver for constant shifts.
struct SinePlan {
    n: usize,
    /// Row-major `S[k][i] = sin(pi (k+1)(i+1) h)`; symmetric, `S S = ((n+1)/2) I`.
    s: Vec<f64>,
    /// 1D eigenvalues `(2 - 2 cos(pi (k+1) h)) / h^2`.
    eig: Vec<f64>,
}

impl SinePlan {
    fn new(n: usize) -> Self {
        let h = 1.0 / (n as f64 + 1.0);
        let mut s = vec![0.0; n * n];
        for k in 0..n {
            for i in 0..n {
                s[k * n + i] = (std::f64::consts::PI * (k as f64 + 1.0) * (i as f64 + 1.0) * h).sin();
            }
        }
        let eig = (0..n)
            .map(|k| (2.0 - 2.0 * (std::f64::consts::PI * (k as f64 + 1.0) * h).cos()) / (h * h))
            .collect();
        SinePlan { n, s, eig }
    }

    /// `out = S * m` for an `n x n` field `m` (transform along columns).
    fn mul_left(&self, m: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.fill(0.0);
        for k in 0..n {
            for i in 0..n {
                let ski = self.s[k * n + i];
                let row_in = &m[i * n..(i + 1) * n];
                let row_out = &mut out[k * n..(k + 1) * n];
                for j in 0..n {
                    row_out[j] += ski * row_in[j];
                }
            }
        }
    }

    /// `out = m * S^T = m * S` (S symmetric; transform along rows).
    fn mul_right(&self, m: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.fill(0.0);
        for i in 0..n {
            let row_in = &m[i * n..(i + 1) * n];
            let row_out = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                let mij = row_in[j];
                let srow = &self.s[j * n..(j + 1) * n];
                for l in 0..n {
                    row_out[l] += mij * srow[l];
                }
            }
        }
    }

    /// Direct solve of `(K + shift I) y = rhs` by diagonalization.
    fn solve_constant(&self, rhs: &[f64], shift: f64) -> Vec<f64> {
        let n = self.n;
        let mut tmp = vec![0.0; n * n];
        let mut hat = vec![0.0; n * n];
        self.mul_left(rhs, &mut tmp);
        self.mul_right(&tmp, &mut hat);
        for ky in 0..n {
            for kx in 0..n {
                hat[ky * n + kx] /= self.eig[ky] + self.eig[kx] + shift;
            }
        }
        let scale = 2.0 / (n as f64 + 1.0);
        let scale2 = scale * scale;
        self.mul_left(&hat, &mut tmp);
        self.mul_right(&tmp, &mut hat);
        for v in hat.iter_mut() {
            *v *= scale2;
        }
        hat
    }
}

fn sine_plan(n: usize) -> Arc<SinePlan> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<SinePlan>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(n)
        .or_insert_with(|| Arc::new(SinePlan::new(n)))
        .clone()
}
