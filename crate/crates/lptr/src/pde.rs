//! Optimal control test problems: tracking objectives through a Poisson or
//! semilinear elliptic PDE.
//!
//! f(u) = 1/2 ||S(chi u) - y_d||^2_{L2} where S solves -Delta y = v or
//! -Delta y + y^3 = v with homogeneous Dirichlet boundary, and chi is an
//! optional 0/1 control mask. Gradients come from one adjoint solve,
//! Hessian products from a linearized-state plus second-adjoint solve; for
//! H01 controls both are mapped through the Riesz isomorphism (one extra
//! Laplacian solve).

use crate::error::{Result, SolverError};
use crate::grid::{
    norm_l2, solve_shifted_laplacian, BoxBounds, Grid, GridFunction, Shift, Space,
};
use crate::model::{EvalCounters, SmoothObjective};
use crate::regularizer::RegularizerParams;
use std::cell::RefCell;

const NEWTON_CAP: usize = 50;

/// Which PDE the control drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Poisson,
    Semilinear,
}

/// Named experiment configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemId {
    Poisson,
    S1,
    S2,
    S2Localized,
}

impl ProblemId {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "poisson" => Some(ProblemId::Poisson),
            "s1" => Some(ProblemId::S1),
            "s2" => Some(ProblemId::S2),
            "s2-localized" => Some(ProblemId::S2Localized),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemId::Poisson => "poisson",
            ProblemId::S1 => "s1",
            ProblemId::S2 => "s2",
            ProblemId::S2Localized => "s2-localized",
        }
    }
}

/// A fully specified test problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub grid: Grid,
    pub desired_state: GridFunction,
    /// Control mask with 0/1 values; `None` means control acts everywhere.
    pub mask: Option<GridFunction>,
    pub control_space: Space,
    pub regularizer: RegularizerParams,
    pub pde_tol: f64,
    pub label: String,
}

/// Result of a state solve.
#[derive(Debug, Clone)]
pub struct StateSolve {
    pub state: GridFunction,
    pub newton_iters: usize,
    pub residual: f64,
}

impl ProblemSpec {
    fn masked(&self, u: &GridFunction) -> GridFunction {
        match &self.mask {
            None => u.clone().retagged(Space::L2),
            Some(chi) => {
                let mut out = u.clone().retagged(Space::L2);
                for (o, &m) in out.values_mut().iter_mut().zip(chi.values()) {
                    *o *= m;
                }
                out
            }
        }
    }

    /// Solve the state equation for control `u` to absolute L2 residual `tol`.
    pub fn solve_state(&self, u: &GridFunction, tol: f64) -> Result<StateSolve> {
        let rhs = self.masked(u);
        match self.kind {
            ProblemKind::Poisson => {
                let rel = tol / norm_l2(&rhs).max(1.0);
                let y = solve_shifted_laplacian(Shift::Constant(0.0), &rhs, rel)?;
                let residual = {
                    let ky = crate::grid::apply_laplacian(&y);
                    norm_l2(&ky.sub(&rhs))
                };
                Ok(StateSolve {
                    state: y,
                    newton_iters: 0,
                    residual,
                })
            }
            ProblemKind::Semilinear => {
                let mut y = GridFunction::zeros(self.grid, Space::L2);
                let mut residual = newton_residual(&y, &rhs);
                let mut res_norm = norm_l2(&residual);
                let mut iters = 0;
                while res_norm > tol {
                    if iters >= NEWTON_CAP {
                        return Err(SolverError::NewtonCap {
                            cap: NEWTON_CAP,
                            residual: res_norm,
                        });
                    }
                    let c: Vec<f64> = y.values().iter().map(|&v| 3.0 * v * v).collect();
                    let rel = 0.01 * tol / res_norm.max(1.0);
                    let delta =
                        solve_shifted_laplacian(Shift::Field(&c), &residual.scaled(-1.0), rel)?;
                    y.add_scaled_in_place(1.0, &delta);
                    residual = newton_residual(&y, &rhs);
                    res_norm = norm_l2(&residual);
                    iters += 1;
                }
                Ok(StateSolve {
                    state: y,
                    newton_iters: iters,
                    residual: res_norm,
                })
            }
        }
    }
}

/// `r(y) = K y + y^3 - rhs` for the semilinear equation.
fn newton_residual(y: &GridFunction, rhs: &GridFunction) -> GridFunction {
    let mut r = crate::grid::apply_laplacian(y);
    for ((ri, &yi), &bi) in r.values_mut().iter_mut().zip(y.values()).zip(rhs.values()) {
        *ri += yi * yi * yi - bi;
    }
    r
}

/// State and adjoint at a control, cached between gradient and Hessian calls.
struct Linearization {
    u_values: Vec<f64>,
    state: GridFunction,
    adjoint: GridFunction,
}

/// Tracking objective `f(u) = 1/2 ||S(chi u) - y_d||^2` as a [`SmoothObjective`].
pub struct TrackingObjective {
    spec: ProblemSpec,
    counters: EvalCounters,
    cache: RefCell<Option<Linearization>>,
}

impl TrackingObjective {
    pub fn new(spec: ProblemSpec) -> Self {
        TrackingObjective {
            spec,
            counters: EvalCounters::new(),
            cache: RefCell::new(None),
        }
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    /// Second-order coefficient of the linearized state operator.
    fn jac_shift(&self, y: &GridFunction) -> Vec<f64> {
        match self.spec.kind {
            ProblemKind::Poisson => vec![0.0; y.values().len()],
            ProblemKind::Semilinear => y.values().iter().map(|&v| 3.0 * v * v).collect(),
        }
    }

    fn linearize(&self, u: &GridFunction) -> Result<()> {
        {
            let cache = self.cache.borrow();
            if let Some(lin) = cache.as_ref() {
                if lin.u_values == u.values() {
                    return Ok(());
                }
            }
        }
        let solve = self.spec.solve_state(u, self.spec.pde_tol)?;
        let c = self.jac_shift(&solve.state);
        let rhs = solve.state.sub(&self.spec.desired_state);
        let adjoint = solve_shifted_laplacian(Shift::Field(&c), &rhs, 1e-12)?;
        *self.cache.borrow_mut() = Some(Linearization {
            u_values: u.values().to_vec(),
            state: solve.state,
            adjoint,
        });
        Ok(())
    }

    /// Riesz map into H01: solve `K g = v`.
    fn riesz(&self, v: GridFunction) -> Result<GridFunction> {
        let g = solve_shifted_laplacian(Shift::Constant(0.0), &v, 1e-12)?;
        Ok(g.retagged(Space::H01))
    }
}

impl SmoothObjective for TrackingObjective {
    fn grid(&self) -> Grid {
        self.spec.grid
    }

    fn control_space(&self) -> Space {
        self.spec.control_space
    }

    fn value(&self, u: &GridFunction) -> Result<f64> {
        self.counters.bump_value();
        let solve = self.spec.solve_state(u, self.spec.pde_tol)?;
        let diff = solve.state.sub(&self.spec.desired_state);
        Ok(0.5 * crate::grid::inner(&diff, &diff))
    }

    fn gradient(&self, u: &GridFunction) -> Result<GridFunction> {
        self.linearize(u)?;
        let cache = self.cache.borrow();
        let lin = cache.as_ref().unwrap();
        let g = self.spec.masked(&lin.adjoint);
        match self.spec.control_space {
            Space::L2 => Ok(g),
            Space::H01 => self.riesz(g),
        }
    }

    fn hess_vec(&self, u: &GridFunction, s: &GridFunction) -> Result<GridFunction> {
        self.counters.bump_hess();
        self.linearize(u)?;
        let cache = self.cache.borrow();
        let lin = cache.as_ref().unwrap();
        let c = self.jac_shift(&lin.state);
        let chi_s = self.spec.masked(s);
        let delta_y = solve_shifted_laplacian(Shift::Field(&c), &chi_s, 1e-12)?;
        let rhs = match self.spec.kind {
            ProblemKind::Poisson => delta_y,
            ProblemKind::Semilinear => {
                // delta_y - 6 y q delta_y from differentiating the adjoint equation
                let mut r = delta_y;
                for ((ri, &yi), &qi) in r
                    .values_mut()
                    .iter_mut()
                    .zip(lin.state.values())
                    .zip(lin.adjoint.values())
                {
                    *ri -= 6.0 * yi * qi * *ri;
                }
                r
            }
        };
        let w = solve_shifted_laplacian(Shift::Field(&c), &rhs, 1e-12)?;
        let out = self.spec.masked(&w);
        match self.spec.control_space {
            Space::L2 => Ok(out),
            Space::H01 => self.riesz(out),
        }
    }

    fn counters(&self) -> &EvalCounters {
        &self.counters
    }
}

/// Construct a named configuration at the given grid size.
pub fn spec_for(id: ProblemId, space: Space, constrained: bool, p: f64, n: usize) -> ProblemSpec {
    let grid = Grid::new(n);
    let (kind, y_d, alpha, beta, b, mask): (
        ProblemKind,
        GridFunction,
        f64,
        f64,
        f64,
        Option<GridFunction>,
    ) = match id {
        ProblemId::Poisson => (
            ProblemKind::Poisson,
            GridFunction::from_fn(grid, Space::L2, |x, y| {
                10.0 * x * (5.0 * x).sin() * (7.0 * y).cos()
            }),
            0.01,
            0.01,
            4.0,
            None,
        ),
        ProblemId::S1 => (
            ProblemKind::Semilinear,
            GridFunction::from_fn(grid, Space::L2, |x, y| {
                4.0 * (2.0 * std::f64::consts::PI * x).sin()
                    * (std::f64::consts::PI * y).sin()
                    * x.exp()
            }),
            0.002,
            0.03,
            12.0,
            None,
        ),
        ProblemId::S2 => (
            ProblemKind::Semilinear,
            GridFunction::constant(grid, Space::L2, -1.0),
            1e-4,
            1e-2,
            25.0,
            None,
        ),
        ProblemId::S2Localized => (
            ProblemKind::Semilinear,
            GridFunction::constant(grid, Space::L2, -1.0),
            1e-4,
            1e-2,
            25.0,
            Some(GridFunction::from_fn(grid, Space::L2, |x, y| {
                let dx = x - 0.6;
                let dy = y - 0.4;
                if dx * dx + dy * dy <= 0.16 {
                    1.0
                } else {
                    0.0
                }
            })),
        ),
    };
    let bounds = if space == Space::H01 || !constrained {
        BoxBounds::unbounded()
    } else {
        BoxBounds::symmetric(b)
    };
    let label = format!(
        "{}-{}{}",
        id.name(),
        if space == Space::H01 { "h01" } else { "l2" },
        if constrained { "-box" } else { "" }
    );
    ProblemSpec {
        kind,
        grid,
        desired_state: y_d,
        mask,
        control_space: space,
        regularizer: RegularizerParams::new(p, alpha, beta, bounds),
        pde_tol: 1e-10,
        label,
    }
}

/// The named configurations: each L2 problem in constrained and
/// unconstrained flavor, plus S2 in H01.
pub fn builtin_specs(p: f64, n: usize) -> Vec<ProblemSpec> {
    let mut specs = Vec::new();
    for id in [
        ProblemId::Poisson,
        ProblemId::S1,
        ProblemId::S2,
        ProblemId::S2Localized,
    ] {
        specs.push(spec_for(id, Space::L2, true, p, n));
        specs.push(spec_for(id, Space::L2, false, p, n));
    }
    specs.push(spec_for(ProblemId::S2, Space::H01, false, p, n));
    specs
}
