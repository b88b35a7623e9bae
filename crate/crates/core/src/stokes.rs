//! Dirichlet problems `L_ε u + ∇p = F + div(f)`, `div u = g`, `u = h` on `∂Ω`
//! for the box `Ω = (0, L)^d`, with oscillating or homogenized coefficients.

use serde::{Deserialize, Serialize};

use crate::cell::SolveOptions;
use crate::effective::EffectiveTensor;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridPressure, GridVelocity};
use crate::ops::{divergence, CellSampler, Discretization};
use crate::saddle::{SaddleOperator, SaddleRhs, SaddleSolver, SparseLu};
use crate::sparse::{norm2, stable_sum, TripletBuilder};
use crate::tensor::{CoefficientField, ScaledField, Tensor4};

/// Coefficients of a Dirichlet problem.
#[derive(Clone, Debug)]
pub enum Coefficients {
    /// `A(x/ε)`.
    Oscillating(ScaledField),
    /// Constant homogenized tensor `Â`.
    Effective(EffectiveTensor),
    Constant(Tensor4),
}

impl Coefficients {
    pub fn oscillating(field: &CoefficientField, eps: f64) -> Result<Self> {
        Ok(Coefficients::Oscillating(ScaledField::new(field.clone(), eps)?))
    }

    /// `ε` for oscillating coefficients, `0` otherwise.
    pub fn eps(&self) -> f64 {
        match self {
            Coefficients::Oscillating(s) => s.eps(),
            _ => 0.0,
        }
    }

    fn sampler(&self) -> &dyn CellSampler {
        match self {
            Coefficients::Oscillating(s) => s,
            Coefficients::Effective(e) => e,
            Coefficients::Constant(t) => t,
        }
    }
}

/// Data of one Dirichlet problem on a box grid.
#[derive(Clone, Debug)]
pub struct StokesProblem {
    pub grid: Grid,
    pub coefficients: Coefficients,
    /// Body force `F` on faces.
    pub force: GridVelocity,
    /// Optional flux source `f` sampled at slots (for `div(f)`).
    pub flux: Option<Vec<f64>>,
    /// Divergence data `g` at cell centres.
    pub div_data: GridPressure,
    /// Dirichlet data `h`: wall-normal faces and wall values are used,
    /// interior faces are ignored.
    pub boundary: GridVelocity,
}

impl StokesProblem {
    /// Zero data.
    pub fn new(grid: Grid, coefficients: Coefficients) -> Result<Self> {
        if grid.is_periodic() {
            return Err(Error::GridMismatch("Dirichlet problems need a box grid".into()));
        }
        Ok(Self {
            grid,
            coefficients,
            force: GridVelocity::zeros(grid),
            flux: None,
            div_data: GridPressure::zeros(grid),
            boundary: GridVelocity::zeros(grid),
        })
    }

    pub fn eps(&self) -> f64 {
        self.coefficients.eps()
    }

    pub fn with_force(mut self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        self.force = GridVelocity::sample(self.grid, f);
        self
    }

    pub fn with_div_data(mut self, g: impl Fn(&[f64]) -> f64) -> Self {
        self.div_data = GridPressure::sample(self.grid, g);
        self
    }

    pub fn with_boundary(mut self, h: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        self.boundary = GridVelocity::sample(self.grid, h);
        self
    }

    /// `f(x)` returns `f_i^α` at index `i·d + α`.
    pub fn with_flux(mut self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        self.flux = Some(crate::ops::SlotLayout::new(self.grid).sample(f));
        self
    }

    pub fn with_coefficients(mut self, coefficients: Coefficients) -> Self {
        self.coefficients = coefficients;
        self
    }

    /// Boundary data in the extended layout (interior faces zeroed).
    pub fn known_ext(&self) -> Vec<f64> {
        let g = &self.grid;
        let mut known = self.boundary.ext();
        for (idx, v) in known.iter_mut().enumerate().take(g.n_vel()) {
            let (beta, m) = g.face_of(idx);
            if !g.face_on_boundary(beta, &m) {
                *v = 0.0;
            }
        }
        known
    }

    /// `∫_∂Ω h·n` from the wall-normal faces.
    pub fn boundary_flux(&self) -> f64 {
        let g = &self.grid;
        let area = g.h().powi(g.dim as i32 - 1);
        let mut terms = Vec::new();
        for (idx, v) in self.boundary.values.iter().enumerate() {
            let (beta, m) = g.face_of(idx);
            if m[beta] == 0 {
                terms.push(-v * area);
            } else if m[beta] == g.n {
                terms.push(v * area);
            }
        }
        stable_sum(terms)
    }
}

/// Signed discrete defect `∫_Ω g − ∫_∂Ω h·n`.
pub fn check_compatibility(problem: &StokesProblem) -> f64 {
    problem.div_data.integral() - problem.boundary_flux()
}

fn compatibility_scale(problem: &StokesProblem) -> f64 {
    let g = &problem.grid;
    let vol = g.cell_volume();
    let gi = stable_sum(problem.div_data.values.iter().map(|v| v.abs())) * vol;
    let area = g.h().powi(g.dim as i32 - 1);
    let hi: f64 = problem.boundary.values.iter().map(|v| v.abs()).sum::<f64>() * area;
    1.0 + gi + hi
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StokesSolution {
    pub velocity: GridVelocity,
    /// Mean-zero pressure.
    pub pressure: GridPressure,
    /// Relative residual of the coupled system.
    pub relative_residual: f64,
    /// `‖div u − g‖_{L∞}`.
    pub div_residual: f64,
    pub iterations: usize,
}

/// Factorised Dirichlet operator for one grid and coefficient choice;
/// reused for every right-hand side with the same coefficients.
pub struct DirichletSolver {
    disc: Discretization,
    op: SaddleOperator,
    solver: SaddleSolver,
    opts: SolveOptions,
}

impl DirichletSolver {
    pub fn new(grid: Grid, coefficients: &Coefficients, opts: &SolveOptions) -> Result<Self> {
        if grid.is_periodic() {
            return Err(Error::GridMismatch("Dirichlet problems need a box grid".into()));
        }
        let disc = Discretization::new(grid, coefficients.sampler())?;
        let op = disc.saddle_operator();
        let solver = SaddleSolver::new(&op, opts.method)?;
        Ok(Self {
            disc,
            op,
            solver,
            opts: *opts,
        })
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    /// Face right-hand side `F + div(f)`.
    pub fn momentum_source(&self, problem: &StokesProblem) -> Vec<f64> {
        let mut f = problem.force.values.clone();
        if let Some(flux) = &problem.flux {
            for (a, b) in f.iter_mut().zip(self.disc.load_from_flux(flux)) {
                *a += b;
            }
        }
        f
    }

    /// Solves several problems that share this solver's coefficients.
    pub fn solve_many(&self, problems: &[&StokesProblem]) -> Result<Vec<StokesSolution>> {
        let mut rhs = Vec::with_capacity(problems.len());
        for p in problems {
            p.grid.check_same(self.disc.grid())?;
            let defect = check_compatibility(p);
            if defect.abs() > self.opts.tol * compatibility_scale(p) {
                return Err(Error::Incompatible { defect });
            }
            rhs.push(SaddleRhs {
                force: self.momentum_source(p),
                div_data: p.div_data.values.clone(),
                known: p.known_ext(),
            });
        }
        let sols = self.solver.solve_many(&self.op, &rhs);
        let mut out = Vec::with_capacity(sols.len());
        for (sol, p) in sols.into_iter().zip(problems) {
            if !(sol.relative_residual <= self.opts.tol) {
                return Err(Error::NotConverged {
                    residual: sol.relative_residual,
                    tol: self.opts.tol,
                });
            }
            let velocity = GridVelocity::from_ext(p.grid, &sol.velocity);
            let mut pressure = GridPressure::from_values(p.grid, sol.pressure)?;
            pressure.remove_mean();
            let div = divergence(&velocity);
            let div_residual = div
                .values
                .iter()
                .zip(&p.div_data.values)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            out.push(StokesSolution {
                velocity,
                pressure,
                relative_residual: sol.relative_residual,
                div_residual,
                iterations: sol.iterations,
            });
        }
        Ok(out)
    }

    pub fn solve(&self, problem: &StokesProblem) -> Result<StokesSolution> {
        Ok(self.solve_many(&[problem])?.remove(0))
    }

    /// Relative residual of `(u, p)` against this operator and the data of `problem`.
    pub fn residual(&self, problem: &StokesProblem, u: &GridVelocity, p: &GridPressure) -> f64 {
        system_residual(&self.disc, &self.op, &self.momentum_source(problem), &problem.div_data.values, &problem.known_ext(), u, p)
    }
}

/// `‖(F − Ku − grad p, g − div u)‖ / ‖(F − K h, g − div h)‖` over unknown
/// faces and all cells (absolute when the data vanish).
fn system_residual(
    disc: &Discretization,
    op: &SaddleOperator,
    force: &[f64],
    div_data: &[f64],
    known: &[f64],
    u: &GridVelocity,
    p: &GridPressure,
) -> f64 {
    let (mom, cont) = op.residual(&u.ext(), &p.values, force, div_data);
    let kh = disc.stiffness().mul_vec(known);
    let dh = disc.divergence().mul_vec(&known[..disc.grid().n_vel()]);
    let mut b = Vec::with_capacity(force.len() + div_data.len());
    for i in 0..force.len() {
        if op.unknown[i] {
            b.push(force[i] - kh[i]);
        }
    }
    b.extend(div_data.iter().zip(&dh).map(|(g, d)| g - d));
    let r = (norm2(&mom).powi(2) + norm2(&cont).powi(2)).sqrt();
    let bn = norm2(&b);
    if bn > 0.0 {
        r / bn
    } else {
        r
    }
}

/// Solves the problem with its own coefficients.
pub fn solve_dirichlet(problem: &StokesProblem, opts: &SolveOptions) -> Result<StokesSolution> {
    DirichletSolver::new(problem.grid, &problem.coefficients, opts)?.solve(problem)
}

/// Solves the homogenized problem: same data, coefficients `Â`.
pub fn solve_homogenized(effective: &EffectiveTensor, problem: &StokesProblem, opts: &SolveOptions) -> Result<StokesSolution> {
    let p = problem.clone().with_coefficients(Coefficients::Effective(effective.clone()));
    solve_dirichlet(&p, opts)
}

/// Norms entering the energy estimate `‖u‖_{H¹} + ‖p‖_{L²} ≤ C(‖F‖_{H⁻¹} + ‖h‖ + ‖g‖)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub u_h1: f64,
    pub p_l2: f64,
    /// Dual norm of the total momentum source via a discrete Laplace solve.
    pub force_h_minus1: f64,
    /// `H¹` norm of the discrete harmonic extension of `h`.
    pub boundary_norm: f64,
    pub g_l2: f64,
    /// LHS / RHS (0 when both vanish).
    pub ratio: f64,
}

/// Measures the energy-estimate ratio of a solution.
pub fn energy_report(problem: &StokesProblem, solution: &StokesSolution) -> Result<EnergyReport> {
    let grid = problem.grid;
    let id = Discretization::new(grid, &Tensor4::identity(grid.dim))?;
    let op = id.saddle_operator();
    let unknown: Vec<usize> = (0..grid.n_vel()).filter(|&i| op.unknown[i]).collect();
    let mut index = vec![usize::MAX; grid.n_vel()];
    for (r, &i) in unknown.iter().enumerate() {
        index[i] = r;
    }
    let k = id.stiffness();
    let mut b = TripletBuilder::new(unknown.len(), unknown.len());
    for (r, &i) in unknown.iter().enumerate() {
        for (j, v) in k.row(i) {
            if j < grid.n_vel() && index[j] != usize::MAX {
                b.push(r, index[j], v);
            }
        }
    }
    let lu = SparseLu::new(&b.build())?;

    let mut source = problem.force.values.clone();
    if let Some(flux) = &problem.flux {
        for (a, b) in source.iter_mut().zip(id.load_from_flux(flux)) {
            *a += b;
        }
    }
    let known = problem.known_ext();
    let kh = k.mul_vec(&known);
    let rhs_f: Vec<f64> = unknown.iter().map(|&i| source[i]).collect();
    let rhs_h: Vec<f64> = unknown.iter().map(|&i| -kh[i]).collect();
    let sols = lu.solve(&[rhs_f.clone(), rhs_h]);
    let vol = grid.cell_volume();
    let force_h_minus1 = (stable_sum(rhs_f.iter().zip(&sols[0]).map(|(a, b)| a * b)) * vol).max(0.0).sqrt();
    let mut ext = known.clone();
    for (r, &i) in unknown.iter().enumerate() {
        ext[i] = sols[1][r];
    }
    let harmonic = GridVelocity::from_ext(grid, &ext);
    let hg = id.gradient_norm(&harmonic)?;
    let hl = harmonic.l2_norm();
    let boundary_norm = (hg * hg + hl * hl).sqrt();

    let ug = id.gradient_norm(&solution.velocity)?;
    let ul = solution.velocity.l2_norm();
    let u_h1 = (ug * ug + ul * ul).sqrt();
    let p_l2 = solution.pressure.l2_norm();
    let g_l2 = problem.div_data.l2_norm();
    let rhs = force_h_minus1 + boundary_norm + g_l2;
    let lhs = u_h1 + p_l2;
    Ok(EnergyReport {
        u_h1,
        p_l2,
        force_h_minus1,
        boundary_norm,
        g_l2,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
    })
}

/// The dilated tuple `(v, π, h, G)` on `Ω/r`.
#[derive(Clone, Debug)]
pub struct Rescaled {
    pub r: f64,
    pub grid: Grid,
    /// `v(x) = u(rx)`.
    pub velocity: GridVelocity,
    /// `π(x) = r p(rx)`.
    pub pressure: GridPressure,
    /// `h(x) = r g(rx)` (divergence data).
    pub div_data: GridPressure,
    /// `G(x) = r² F(rx)`.
    pub force: GridVelocity,
    /// `r f(rx)` for the flux source.
    pub flux: Option<Vec<f64>>,
    /// Dirichlet data `v|_∂`.
    pub boundary: GridVelocity,
    /// `ε / r`.
    pub eps: f64,
}

fn power_of_two(r: f64) -> bool {
    if !(r >= 1.0) || !r.is_finite() {
        return false;
    }
    let k = r.log2().round();
    (2f64.powf(k) - r).abs() <= 1e-12 * r
}

/// Dilation `x ↦ rx` of a solved problem. With the same resolution on
/// `(0, L/r)^d` the grids nest exactly, so arrays are reused and scaled.
pub fn rescale_solution(problem: &StokesProblem, solution: &StokesSolution, r: f64) -> Result<Rescaled> {
    if !power_of_two(r) {
        return Err(Error::GridMismatch(format!("rescaling factor {r} is not a power of two ≥ 1")));
    }
    let g = problem.grid;
    let grid = Grid::boxed(g.dim, g.n, g.length / r)?;
    let relabel = |u: &GridVelocity, s: f64| GridVelocity {
        grid,
        values: u.values.iter().map(|v| s * v).collect(),
        wall: u.wall.iter().map(|v| s * v).collect(),
    };
    Ok(Rescaled {
        r,
        grid,
        velocity: relabel(&solution.velocity, 1.0),
        pressure: GridPressure {
            grid,
            values: solution.pressure.values.iter().map(|v| r * v).collect(),
        },
        div_data: GridPressure {
            grid,
            values: problem.div_data.values.iter().map(|v| r * v).collect(),
        },
        force: relabel(&problem.force, r * r),
        flux: problem.flux.as_ref().map(|f| f.iter().map(|v| r * v).collect()),
        boundary: relabel(&problem.boundary, 1.0),
        eps: problem.eps() / r,
    })
}

impl Rescaled {
    /// The problem on `Ω/r` solved by the tuple, with coefficients `A(x/(ε/r))`
    /// (constant coefficients are unchanged).
    pub fn problem(&self, original: &Coefficients) -> Result<StokesProblem> {
        let coefficients = match original {
            Coefficients::Oscillating(s) => Coefficients::Oscillating(ScaledField::new(s.base().clone(), self.eps)?),
            other => other.clone(),
        };
        Ok(StokesProblem {
            grid: self.grid,
            coefficients,
            force: self.force.clone(),
            flux: self.flux.clone(),
            div_data: self.div_data.clone(),
            boundary: self.boundary.clone(),
        })
    }

    /// Relative residual of the tuple in the independently assembled `ε/r` system.
    pub fn residual(&self, original: &Coefficients) -> Result<f64> {
        let problem = self.problem(original)?;
        let disc = Discretization::new(self.grid, problem.coefficients.sampler())?;
        let op = disc.saddle_operator();
        let mut source = problem.force.values.clone();
        if let Some(flux) = &problem.flux {
            for (a, b) in source.iter_mut().zip(disc.load_from_flux(flux)) {
                *a += b;
            }
        }
        Ok(system_residual(
            &disc,
            &op,
            &source,
            &problem.div_data.values,
            &problem.known_ext(),
            &self.velocity,
            &self.pressure,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_problem(n: usize) -> StokesProblem {
        let grid = Grid::boxed(2, n, 1.0).unwrap();
        StokesProblem::new(grid, Coefficients::Constant(Tensor4::identity(2))).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let p = identity_problem(8);
        assert_eq!(check_compatibility(&p), 0.0);
        let s = solve_dirichlet(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.velocity.max_abs(), 0.0);
        assert!(s.pressure.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_divergence_is_incompatible() {
        let p = identity_problem(8).with_div_data(|_| 1.0);
        assert!((check_compatibility(&p) - 1.0).abs() < 1e-14);
        assert!(matches!(
            solve_dirichlet(&p, &SolveOptions::default()),
            Err(Error::Incompatible { .. })
        ));
    }

    #[test]
    fn power_of_two_factors() {
        assert!(power_of_two(1.0) && power_of_two(2.0) && power_of_two(8.0));
        assert!(!power_of_two(3.0) && !power_of_two(0.5));
    }
}
