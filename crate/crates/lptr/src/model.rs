//! Smooth objective interface and the per-iteration quadratic model.

use crate::error::Result;
use crate::grid::{inner, norm, Grid, GridFunction, Space};
use std::cell::Cell;

/// Evaluation counters carried by each objective instance.
///
/// Not thread-safe; one solver per objective instance.
#[derive(Debug, Default)]
pub struct EvalCounters {
    value: Cell<u64>,
    hess: Cell<u64>,
}

impl EvalCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bump_value(&self) {
        self.value.set(self.value.get() + 1);
    }

    pub fn bump_hess(&self) {
        self.hess.set(self.hess.get() + 1);
    }

    pub fn value_count(&self) -> u64 {
        self.value.get()
    }

    pub fn hess_count(&self) -> u64 {
        self.hess.get()
    }

    pub fn reset(&self) {
        self.value.set(0);
        self.hess.set(0);
    }
}

/// The smooth part f of the composite objective.
pub trait SmoothObjective {
    fn grid(&self) -> Grid;

    /// Space of the control; values, gradients and Hessian products share it.
    fn control_space(&self) -> Space;

    fn value(&self, u: &GridFunction) -> Result<f64>;

    /// Gradient as an element of the control space (Riesz representative).
    fn gradient(&self, u: &GridFunction) -> Result<GridFunction>;

    /// Hessian-vector product at `u` applied to `s`.
    fn hess_vec(&self, u: &GridFunction, s: &GridFunction) -> Result<GridFunction>;

    fn counters(&self) -> &EvalCounters;
}

/// Quadratic model `f_k(u) = <g_k, u - u_k> + 1/2 <B_k (u - u_k), u - u_k>`
/// with `f_k(u_k) = 0` by convention.
pub struct QuadraticModel<'a> {
    objective: &'a dyn SmoothObjective,
    anchor: GridFunction,
    grad: GridFunction,
}

impl<'a> QuadraticModel<'a> {
    pub fn new(objective: &'a dyn SmoothObjective, anchor: GridFunction) -> Result<Self> {
        let grad = objective.gradient(&anchor)?;
        Ok(QuadraticModel {
            objective,
            anchor,
            grad,
        })
    }

    #[inline]
    pub fn anchor(&self) -> &GridFunction {
        &self.anchor
    }

    #[inline]
    pub fn grad(&self) -> &GridFunction {
        &self.grad
    }

    /// `B_k s`; one Hessian evaluation per call.
    pub fn hess_apply(&self, s: &GridFunction) -> Result<GridFunction> {
        self.objective.hess_vec(&self.anchor, s)
    }

    /// Model value at `u`, i.e. at the step `s = u - u_k`.
    pub fn value(&self, u: &GridFunction) -> Result<f64> {
        self.value_at_step(&u.sub(&self.anchor))
    }

    pub fn value_at_step(&self, s: &GridFunction) -> Result<f64> {
        let bs = self.hess_apply(s)?;
        Ok(inner(&self.grad, s) + 0.5 * inner(&bs, s))
    }

    /// Model value given a precomputed `B_k s`, avoiding a Hessian call.
    pub fn value_with_hess(&self, s: &GridFunction, bs: &GridFunction) -> f64 {
        inner(&self.grad, s) + 0.5 * inner(bs, s)
    }

    /// Model gradient at `u_k + s`, given `B_k s`.
    pub fn gradient_with_hess(&self, bs: &GridFunction) -> GridFunction {
        self.grad.axpy(1.0, bs)
    }

    /// Rayleigh quotient `<s, B_k s> / ||s||^2`.
    pub fn curvature(&self, s: &GridFunction) -> Result<f64> {
        let ns = norm(s);
        assert!(ns > 0.0, "curvature of a zero step is undefined");
        let bs = self.hess_apply(s)?;
        Ok(inner(s, &bs) / (ns * ns))
    }

    pub fn curvature_with_hess(&self, s: &GridFunction, bs: &GridFunction) -> f64 {
        let ns = norm(s);
        assert!(ns > 0.0, "curvature of a zero step is undefined");
        inner(s, bs) / (ns * ns)
    }

    /// Curvature bound omega_k, approximated along the trial step.
    pub fn omega_estimate(&self, s_trial: &GridFunction) -> Result<f64> {
        Ok(self.curvature(s_trial)?.abs())
    }
}

/// Dense quadratic test objective, shared by the solver unit tests.
#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::Rng;

    /// f(u) = 1/2 <u, A u>_{L2} + <c, u>_{L2} with dense symmetric A acting
    /// on values; gradient and Hessian products are exact.
    pub(crate) struct DenseQuadratic {
        pub grid: Grid,
        pub a: Vec<Vec<f64>>,
        pub c: Vec<f64>,
        pub counters: EvalCounters,
    }

    impl DenseQuadratic {
        pub fn random(grid: Grid, rng: &mut impl Rng, scale: f64) -> Self {
            let m = grid.len();
            let mut a = vec![vec![0.0; m]; m];
            for i in 0..m {
                for j in 0..=i {
                    let v = rng.gen_range(-scale..scale);
                    a[i][j] = v;
                    a[j][i] = v;
                }
                a[i][i] += scale * m as f64; // diagonally dominant, SPD
            }
            let c = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            DenseQuadratic {
                grid,
                a,
                c,
                counters: EvalCounters::new(),
            }
        }

        pub fn identity(grid: Grid) -> Self {
            let m = grid.len();
            let mut a = vec![vec![0.0; m]; m];
            for (i, row) in a.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            DenseQuadratic {
                grid,
                a,
                c: vec![0.0; m],
                counters: EvalCounters::new(),
            }
        }

        pub fn scaled_identity(grid: Grid, scale: f64, c: Vec<f64>) -> Self {
            let m = grid.len();
            let mut a = vec![vec![0.0; m]; m];
            for (i, row) in a.iter_mut().enumerate() {
                row[i] = scale;
            }
            DenseQuadratic {
                grid,
                a,
                c,
                counters: EvalCounters::new(),
            }
        }

        pub fn zero_hessian(grid: Grid, c: Vec<f64>) -> Self {
            let m = grid.len();
            DenseQuadratic {
                grid,
                a: vec![vec![0.0; m]; m],
                c,
                counters: EvalCounters::new(),
            }
        }

        pub(crate) fn apply(&self, v: &[f64]) -> Vec<f64> {
            self.a
                .iter()
                .map(|row| row.iter().zip(v).map(|(&aij, &vj)| aij * vj).sum())
                .collect()
        }
    }

    impl SmoothObjective for DenseQuadratic {
        fn grid(&self) -> Grid {
            self.grid
        }

        fn control_space(&self) -> Space {
            Space::L2
        }

        fn value(&self, u: &GridFunction) -> Result<f64> {
            self.counters.bump_value();
            let au = self.apply(u.values());
            let h2 = self.grid.h() * self.grid.h();
            let quad: f64 = u.values().iter().zip(&au).map(|(&x, &y)| x * y).sum();
            let lin: f64 = u.values().iter().zip(&self.c).map(|(&x, &y)| x * y).sum();
            Ok(h2 * (0.5 * quad + lin))
        }

        fn gradient(&self, u: &GridFunction) -> Result<GridFunction> {
            let mut g = self.apply(u.values());
            for (gi, ci) in g.iter_mut().zip(&self.c) {
                *gi += ci;
            }
            Ok(GridFunction::new(self.grid, Space::L2, g))
        }

        fn hess_vec(&self, _u: &GridFunction, s: &GridFunction) -> Result<GridFunction> {
            self.counters.bump_hess();
            Ok(GridFunction::new(self.grid, Space::L2, self.apply(s.values())))
        }

        fn counters(&self) -> &EvalCounters {
            &self.counters
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::DenseQuadratic;
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_gf(grid: Grid, rng: &mut impl Rng, scale: f64) -> GridFunction {
        GridFunction::new(
            grid,
            Space::L2,
            (0..grid.len()).map(|_| rng.gen_range(-scale..scale)).collect(),
        )
    }

    #[test]
    fn model_value_zero_at_anchor() {
        let grid = Grid::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let obj = DenseQuadratic::random(grid, &mut rng, 0.5);
        let anchor = random_gf(grid, &mut rng, 1.0);
        let model = QuadraticModel::new(&obj, anchor.clone()).unwrap();
        assert_eq!(model.value(&anchor).unwrap(), 0.0);
    }

    #[test]
    fn model_linear_when_hessian_zero() {
        let grid = Grid::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let obj = DenseQuadratic::zero_hessian(grid, c);
        let anchor = GridFunction::zeros(grid, Space::L2);
        let model = QuadraticModel::new(&obj, anchor).unwrap();
        let u = random_gf(grid, &mut rng, 2.0);
        let want = inner(model.grad(), &u);
        assert!((model.value(&u).unwrap() - want).abs() < 1e-14);
        let s = random_gf(grid, &mut rng, 1.0);
        assert_eq!(model.curvature(&s).unwrap(), 0.0);
        assert_eq!(model.omega_estimate(&s).unwrap(), 0.0);
    }

    #[test]
    fn model_matches_quadratic_objective_exactly() {
        let grid = Grid::new(2); // n = 4 unknowns
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let obj = DenseQuadratic::random(grid, &mut rng, 0.4);
        let anchor = random_gf(grid, &mut rng, 1.0);
        let model = QuadraticModel::new(&obj, anchor.clone()).unwrap();
        for _ in 0..10 {
            let u = random_gf(grid, &mut rng, 2.0);
            let model_diff = model.value(&u).unwrap();
            let true_diff = obj.value(&u).unwrap() - obj.value(&anchor).unwrap();
            assert!(
                (model_diff - true_diff).abs() <= 1e-12 * (1.0 + true_diff.abs()),
                "model {model_diff} vs true {true_diff}"
            );
        }
    }

    #[test]
    fn curvature_identity_and_two_point_formula() {
        let grid = Grid::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let eye = DenseQuadratic::identity(grid);
        let anchor = GridFunction::zeros(grid, Space::L2);
        let model = QuadraticModel::new(&eye, anchor.clone()).unwrap();
        let s = random_gf(grid, &mut rng, 1.0);
        assert!((model.curvature(&s).unwrap() - 1.0).abs() < 1e-12);

        let obj = DenseQuadratic::random(grid, &mut rng, 0.3);
        let model = QuadraticModel::new(&obj, anchor.clone()).unwrap();
        let s = random_gf(grid, &mut rng, 1.5);
        let ns2 = inner(&s, &s);
        let two_point = 2.0 / ns2
            * (model.value(&anchor.axpy(1.0, &s)).unwrap() - inner(model.grad(), &s));
        let direct = model.curvature(&s).unwrap();
        assert!((two_point - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn omega_bounded_by_spectral_radius() {
        let grid = Grid::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let obj = DenseQuadratic::random(grid, &mut rng, 0.7);
        let m = grid.len();
        let dense = nalgebra::DMatrix::from_fn(m, m, |i, j| obj.a[i][j]);
        let eigs = dense.symmetric_eigen().eigenvalues;
        let rho = eigs.iter().fold(0.0f64, |acc, &e| acc.max(e.abs()));
        let model = QuadraticModel::new(&obj, GridFunction::zeros(grid, Space::L2)).unwrap();
        for _ in 0..20 {
            let s = random_gf(grid, &mut rng, 2.0);
            assert!(model.omega_estimate(&s).unwrap() <= rho + 1e-10);
        }
    }

    #[test]
    fn hess_vec_symmetry() {
        let grid = Grid::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let obj = DenseQuadratic::random(grid, &mut rng, 0.5);
        let u = random_gf(grid, &mut rng, 1.0);
        for _ in 0..10 {
            let s = random_gf(grid, &mut rng, 1.0);
            let t = random_gf(grid, &mut rng, 1.0);
            let bs = obj.hess_vec(&u, &s).unwrap();
            let bt = obj.hess_vec(&u, &t).unwrap();
            let lhs = inner(&bs, &t);
            let rhs = inner(&s, &bt);
            assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn gradient_consistent_with_value() {
        let grid = Grid::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let obj = DenseQuadratic::random(grid, &mut rng, 0.5);
        let u = random_gf(grid, &mut rng, 1.0);
        let g = obj.gradient(&u).unwrap();
        let h_fd = 1e-5 * (1.0 + norm(&u));
        for _ in 0..5 {
            let d = random_gf(grid, &mut rng, 1.0);
            let up = obj.value(&u.axpy(h_fd, &d)).unwrap();
            let dn = obj.value(&u.axpy(-h_fd, &d)).unwrap();
            let fd = (up - dn) / (2.0 * h_fd);
            let an = inner(&g, &d);
            assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "fd {fd} vs {an}");
        }
    }
}
