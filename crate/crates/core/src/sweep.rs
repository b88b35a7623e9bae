//! The `ε`-sweep: one oscillating Dirichlet problem per `ε` on a fixed box
//! grid, the homogenized reference solution, and every estimate measured on
//! fixed windows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{corrector_field_at_scale, solve_cell_problems, SolveOptions};
use crate::effective::{compute_effective, EffectiveTensor};
use crate::error::{Error, Result};
use crate::estimates::{
    boundary_holder_decay, caccioppoli_ratio, full_lipschitz_ratio, interior_lipschitz_ratio, pressure_oscillation_ratio,
    sweep_radii, two_scale_error, w1p_norm_sweep, CellSamples, EstimateConfig, EstimateReport, TwoScaleError, Window,
    BOUNDARY_HOLDER, CACCIOPPOLI_BOUNDARY, CACCIOPPOLI_INTERIOR, FULL_LIPSCHITZ, INTERIOR_LIPSCHITZ, PRESSURE_OSCILLATION,
    W1P_NORM,
};
use crate::grid::Grid;
use crate::stokes::{energy_report, rescale_solution, Coefficients, DirichletSolver, EnergyReport, StokesProblem, StokesSolution};
use crate::tensor::{CoefficientField, FamilySpec};

/// Smooth compactly supported body force: a bump `(1 − s²)³`, `s = |x − c|/radius`,
/// times the affine field `(a₀ − k(x₂ − c₂), a₁ + k(x₁ − c₁))` in the first two
/// components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpForce {
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default = "default_swirl")]
    pub swirl: f64,
    #[serde(default = "default_drift")]
    pub drift: Vec<f64>,
}

fn default_swirl() -> f64 {
    3.0
}

fn default_drift() -> Vec<f64> {
    vec![0.6, 0.4]
}

impl BumpForce {
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let s2: f64 = (0..d).map(|k| (x[k] - self.center[k]).powi(2)).sum::<f64>() / (self.radius * self.radius);
        let mut f = vec![0.0; d];
        if s2 >= 1.0 {
            return f;
        }
        let bump = (1.0 - s2).powi(3);
        let drift = |k: usize| self.drift.get(k).copied().unwrap_or(0.0);
        f[0] = bump * (drift(0) - self.swirl * (x[1] - self.center[1]));
        f[1] = bump * (drift(1) + self.swirl * (x[0] - self.center[0]));
        f
    }
}

/// Smooth flux source `f_i^α(x) = cos(π(i + 1)x₁/L + α) sin(π(α + 1) x₂/L)`
/// for the global `W^{1,q}` sweep.
pub fn smooth_flux(d: usize, length: f64, x: &[f64]) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let mut f = vec![0.0; d * d];
    for i in 0..d {
        for a in 0..d {
            f[i * d + a] = (pi * (i + 1) as f64 * x[0] / length + a as f64).cos() * (pi * (a + 1) as f64 * x[1] / length).sin();
        }
    }
    f
}

/// Window placement; radii are generated per `ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub center: Vec<f64>,
    /// Outer radius `R`.
    pub radius: f64,
    /// Face normal axis and side for boundary windows.
    #[serde(default)]
    pub face: Option<(usize, bool)>,
}

impl WindowSpec {
    /// Radii `ε·2^{k/2}` up to `R·max_fraction`, then `R`.
    pub fn window(&self, eps: f64, max_fraction: f64) -> Window {
        let radii = sweep_radii(eps, self.radius * max_fraction, self.radius);
        match self.face {
            None => Window::interior(self.center.clone(), radii),
            Some((axis, upper)) => Window::boundary(self.center.clone(), radii, axis, upper),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub family: FamilySpec,
    pub dim: usize,
    /// Box resolution per side.
    pub n: usize,
    #[serde(default = "default_length")]
    pub length: f64,
    pub eps: Vec<f64>,
    /// Cell resolution for the reference `Â`.
    pub effective_resolution: usize,
    pub force: BumpForce,
    pub interior: WindowSpec,
    pub boundary: WindowSpec,
    pub estimates: EstimateConfig,
    #[serde(default)]
    pub solver: SolveOptions,
}

fn default_length() -> f64 {
    1.0
}

impl SweepSpec {
    /// The reference sweep on the unit square: the laminate `(1 + ½ sin 2πy₁)·Id`,
    /// `N = 256`, `ε ∈ {1/4, 1/8, 1/16, 1/32}`.
    pub fn reference() -> Self {
        Self {
            family: FamilySpec::laminate_sine(2),
            dim: 2,
            n: 256,
            length: 1.0,
            eps: vec![0.25, 0.125, 0.0625, 0.03125],
            effective_resolution: 128,
            force: BumpForce {
                center: vec![0.5, 0.75],
                radius: 0.2,
                swirl: default_swirl(),
                drift: default_drift(),
            },
            interior: WindowSpec {
                center: vec![0.5, 0.5],
                radius: 0.4,
                face: None,
            },
            boundary: WindowSpec {
                center: vec![0.5, 0.0],
                radius: 0.4,
                face: Some((1, false)),
            },
            estimates: EstimateConfig::for_dimension(2),
            solver: SolveOptions::default(),
        }
    }
}

/// Everything measured at one `ε`.
#[derive(Clone, Debug)]
pub struct EpsPoint {
    pub eps: f64,
    pub problem: StokesProblem,
    pub solution: StokesSolution,
    pub flux_problem: StokesProblem,
    pub flux_solution: StokesSolution,
    /// `Â` of the nested cell grid (`ε·N` cells per period).
    pub nested_effective: EffectiveTensor,
    pub homogenized: StokesSolution,
    pub two_scale: TwoScaleError,
    pub energy: EnergyReport,
    pub rescale_residual: f64,
    pub reports: Vec<EstimateReport>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    /// `Â` from the reference cell resolution.
    pub effective: EffectiveTensor,
    pub points: Vec<EpsPoint>,
    /// Reports merged across `ε`, one per estimate, in a fixed order.
    pub reports: Vec<EstimateReport>,
}

impl SweepResult {
    pub fn report(&self, estimate: &str) -> Option<&EstimateReport> {
        self.reports.iter().find(|r| r.estimate == estimate)
    }
}

/// Order of merged reports.
pub const SWEEP_ESTIMATES: [&str; 7] = [
    INTERIOR_LIPSCHITZ,
    PRESSURE_OSCILLATION,
    FULL_LIPSCHITZ,
    BOUNDARY_HOLDER,
    W1P_NORM,
    CACCIOPPOLI_INTERIOR,
    CACCIOPPOLI_BOUNDARY,
];

/// Runs the sweep; `ε` points are evaluated in parallel on the current
/// rayon pool and merged in the order of `spec.eps`.
pub fn run_sweep(spec: &SweepSpec, spec_hash: &str) -> Result<SweepResult> {
    run_points(spec, spec_hash, true)
}

/// The solves and two-scale comparison of [`run_sweep`] without the
/// estimate measurements; `reports` is empty.
pub fn run_two_scale(spec: &SweepSpec, spec_hash: &str) -> Result<SweepResult> {
    run_points(spec, spec_hash, false)
}

fn run_points(spec: &SweepSpec, spec_hash: &str, measure: bool) -> Result<SweepResult> {
    let field = CoefficientField::new(spec.dim, spec.family.clone())?;
    let grid = Grid::boxed(spec.dim, spec.n, spec.length)?;
    for &eps in &spec.eps {
        let k = grid.cells_per_period(eps)?;
        if k < 4 {
            return Err(Error::ScaleNotResolved { eps, h: grid.h() });
        }
    }
    let cell_grid = Grid::periodic(spec.dim, spec.effective_resolution)?;
    let reference_set = solve_cell_problems(&field, cell_grid, &spec.solver)?;
    let effective = compute_effective(&field, &reference_set)?;

    let points: Vec<Result<EpsPoint>> = spec
        .eps
        .par_iter()
        .map(|&eps| eps_point(spec, &field, grid, eps, spec_hash, measure))
        .collect();
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    let ids: &[&str] = if measure { &SWEEP_ESTIMATES } else { &[] };
    let reports = ids
        .iter()
        .map(|id| {
            let parts = points
                .iter()
                .flat_map(|p| p.reports.iter().filter(|r| r.estimate == *id).cloned())
                .collect();
            EstimateReport::merge(id, parts).with_spec_hash(spec_hash.to_string())
        })
        .collect();
    Ok(SweepResult {
        effective,
        points,
        reports,
    })
}

fn eps_point(spec: &SweepSpec, field: &CoefficientField, grid: Grid, eps: f64, spec_hash: &str, measure: bool) -> Result<EpsPoint> {
    let coefficients = Coefficients::oscillating(field, eps)?;
    let problem = StokesProblem::new(grid, coefficients.clone())?.with_force(|x| spec.force.evaluate(x));
    let flux_problem = StokesProblem::new(grid, coefficients.clone())?.with_flux(|x| smooth_flux(spec.dim, spec.length, x));
    let solver = DirichletSolver::new(grid, &coefficients, &spec.solver)?;
    let mut sols = solver.solve_many(&[&problem, &flux_problem])?;
    let flux_solution = sols.pop().expect("two solutions");
    let solution = sols.pop().expect("two solutions");

    let k = grid.cells_per_period(eps)?;
    let set = solve_cell_problems(field, Grid::periodic(spec.dim, k)?, &spec.solver)?;
    let scaled = corrector_field_at_scale(&set, eps, &grid)?;
    // the homogenized reference uses Â of the nested cell grid: the exact
    // limit of this discretization as the number of periods grows
    let nested_effective = compute_effective(field, &set)?;
    let hom_problem = problem.clone().with_coefficients(Coefficients::Effective(nested_effective.clone()));
    let hom_solver = DirichletSolver::new(grid, &hom_problem.coefficients, &spec.solver)?;
    let hom_solution = hom_solver.solve(&hom_problem)?;
    let two_scale = two_scale_error(solver.discretization(), &solution, hom_solver.discretization(), &hom_solution, &scaled)?;
    let energy = energy_report(&problem, &solution)?;
    let rescale_residual = rescale_solution(&problem, &solution, 2.0)?.residual(&problem.coefficients)?;

    let mut point = EpsPoint {
        eps,
        problem,
        solution,
        flux_problem,
        flux_solution,
        nested_effective,
        homogenized: hom_solution,
        two_scale,
        energy,
        rescale_residual,
        reports: Vec::new(),
    };
    if measure {
        point.reports = measure_estimates(spec, field, grid, &point, spec_hash)?;
    }
    Ok(point)
}

fn measure_estimates(spec: &SweepSpec, field: &CoefficientField, grid: Grid, point: &EpsPoint, spec_hash: &str) -> Result<Vec<EstimateReport>> {
    let (eps, problem, flux_problem) = (point.eps, &point.problem, &point.flux_problem);
    let cfg = &spec.estimates;
    let samples = CellSamples::new(problem, &point.solution)?;
    let flux_samples = CellSamples::new(flux_problem, &point.flux_solution)?;
    let interior = spec.interior.window(eps, 0.5);
    let boundary = spec.boundary.window(eps, 1.0);
    let mut reports = Vec::new();
    if !interior.inner().is_empty() {
        reports.push(interior_lipschitz_ratio(&samples, &interior, cfg)?);
        reports.push(pressure_oscillation_ratio(&samples, &interior, cfg)?);
        reports.push(caccioppoli_ratio(problem, &samples, &interior, cfg.seed)?);
    }
    if field.holder().is_some() {
        let full = spec.interior.window(2.0 * grid.h(), 0.5);
        reports.push(full_lipschitz_ratio(&samples, field, &full, cfg)?);
    }
    if !boundary.inner().is_empty() {
        reports.push(boundary_holder_decay(problem, &samples, &boundary, cfg.holder_rho)?);
    }
    reports.push(caccioppoli_ratio(problem, &samples, &boundary, cfg.seed)?);
    reports.push(w1p_norm_sweep(flux_problem, &flux_samples, &cfg.w1p_exponents, cfg.seed)?);
    Ok(reports.into_iter().map(|r| r.with_spec_hash(spec_hash.to_string())).collect())
}
