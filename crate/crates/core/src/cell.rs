//! Periodic corrector problems on the unit cell.
//!
//! For every pair `(j, β)` find `(χ_j^β, π_j^β)`, mean zero, with
//! `div χ_j^β = 0` and `a_per(χ_j^β + P_j^β, φ) − ⟨π_j^β, div φ⟩ = 0`
//! for all periodic `φ`, where `P_j^β(y) = y_j e^β`. The discrete gradient
//! of `P_j^β` is the constant slot field with a one in slot `(j, β)`, so the
//! right-hand side is `−a_h(P_j^β, ·)` and only the `d²` loads differ; all
//! share one factorisation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{multi, Grid, GridPressure, GridVelocity, Multi};
use crate::ops::{divergence, Discretization};
use crate::saddle::{SaddleMethod, SaddleRhs, SaddleSolver};
use crate::sparse::{norm2, stable_sum};
use crate::tensor::{CoefficientField, FamilySpec};

/// Solver controls shared by cell and Dirichlet solves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Relative residual the coupled system must reach.
    pub tol: f64,
    #[serde(default)]
    pub method: SaddleMethod,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            method: SaddleMethod::Direct,
        }
    }
}

/// Discrete size of one corrector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectorNorms {
    /// `(‖χ‖²_{L²} + ‖∇χ‖²_{L²})^{1/2}`.
    pub chi_h1: f64,
    pub pi_l2: f64,
    /// Relative residual of the coupled system.
    pub residual: f64,
    /// `max_β |mean χ^β|` after normalisation.
    pub mean_defect: f64,
    /// `max |π mean|` after normalisation.
    pub pressure_mean_defect: f64,
    /// `‖div χ‖_{L∞}`.
    pub div_defect: f64,
}

/// Correctors `χ_j^β`, `π_j^β`, flattened with index `j·d + β`.
#[derive(Clone, Debug)]
pub struct CorrectorSet {
    pub grid: Grid,
    /// Coefficient family the correctors were solved for.
    pub family: FamilySpec,
    /// `true` for correctors of the adjoint tensor.
    pub adjoint: bool,
    pub chi: Vec<GridVelocity>,
    pub pi: Vec<GridPressure>,
    /// Face samples of `P_j^β(y) = y_j e^β` on `[0,1)^d`.
    pub linear: Vec<GridVelocity>,
    pub norms: Vec<CorrectorNorms>,
    /// Factorisation/iteration count reported by the saddle solver.
    pub iterations: Vec<usize>,
}

impl CorrectorSet {
    pub fn dimension(&self) -> usize {
        self.grid.dim
    }

    pub fn chi(&self, j: usize, beta: usize) -> &GridVelocity {
        &self.chi[j * self.grid.dim + beta]
    }

    pub fn pi(&self, j: usize, beta: usize) -> &GridPressure {
        &self.pi[j * self.grid.dim + beta]
    }

    pub fn max_residual(&self) -> f64 {
        self.norms.iter().map(|n| n.residual).fold(0.0, f64::max)
    }
}

fn linear_field(grid: Grid, j: usize, beta: usize) -> GridVelocity {
    GridVelocity::sample(grid, |x| {
        let mut v = vec![0.0; grid.dim];
        v[beta] = x[j];
        v
    })
}

/// Solves the `d²` corrector problems for `field` on a periodic unit grid.
pub fn solve_cell_problems(field: &CoefficientField, grid: Grid, opts: &SolveOptions) -> Result<CorrectorSet> {
    solve_for(field, grid, opts, false)
}

/// Correctors of the adjoint tensor `a*_ij^{αβ} = a_ji^{βα}`.
pub fn solve_adjoint_cell_problems(field: &CoefficientField, grid: Grid, opts: &SolveOptions) -> Result<CorrectorSet> {
    solve_for(&field.adjoint(), grid, opts, true)
}

fn solve_for(field: &CoefficientField, grid: Grid, opts: &SolveOptions, adjoint: bool) -> Result<CorrectorSet> {
    if !grid.is_periodic() || grid.length != 1.0 {
        return Err(Error::GridMismatch("cell problems need the periodic unit grid".into()));
    }
    let disc = Discretization::new(grid, field)?;
    let d = grid.dim;
    let op = disc.saddle_operator();
    let solver = SaddleSolver::new(&op, opts.method)?;
    let mut rhs = Vec::with_capacity(d * d);
    for q in 0..d * d {
        let mut e = vec![0.0; d * d];
        e[q] = 1.0;
        let xi = disc.layout().constant_field(&e);
        rhs.push(SaddleRhs {
            force: disc.load_from_gradient_flushed(&xi),
            div_data: vec![0.0; grid.n_cells()],
            known: vec![0.0; grid.n_ext()],
        });
    }
    let sols = solver.solve_many(&op, &rhs);

    let mut set = CorrectorSet {
        grid,
        family: field.spec().clone(),
        adjoint,
        chi: Vec::new(),
        pi: Vec::new(),
        linear: Vec::new(),
        norms: Vec::new(),
        iterations: Vec::new(),
    };
    for (q, (sol, r)) in sols.into_iter().zip(&rhs).enumerate() {
        let mut chi = GridVelocity::from_ext(grid, &sol.velocity);
        let means = chi.component_means();
        for (beta, m) in means.iter().enumerate() {
            let off = grid.face_offset(beta);
            for v in &mut chi.values[off..off + grid.n_faces(beta)] {
                *v -= m;
            }
        }
        let mut pi = GridPressure::from_values(grid, sol.pressure)?;
        pi.remove_mean();

        let (mom, cont) = op.residual(&chi.ext(), &pi.values, &r.force, &r.div_data);
        let bnorm = norm2(&r.force);
        let rnorm = (norm2(&mom).powi(2) + norm2(&cont).powi(2)).sqrt();
        let residual = if bnorm > 0.0 { rnorm / bnorm } else { rnorm };
        if !(residual <= opts.tol) {
            return Err(Error::NotConverged {
                residual,
                tol: opts.tol,
            });
        }
        let grad = disc.gradient_norm(&chi)?;
        let l2 = chi.l2_norm();
        let div = divergence(&chi);
        set.norms.push(CorrectorNorms {
            chi_h1: (l2 * l2 + grad * grad).sqrt(),
            pi_l2: pi.l2_norm(),
            residual,
            mean_defect: chi.component_means().iter().fold(0.0, |m, v| m.max(v.abs())),
            pressure_mean_defect: pi.mean().abs(),
            div_defect: div.values.iter().fold(0.0, |m, v| m.max(v.abs())),
        });
        set.iterations.push(sol.iterations);
        set.chi.push(chi);
        set.pi.push(pi);
        set.linear.push(linear_field(grid, q / d, q % d));
    }
    Ok(set)
}

/// `εχ_j^β(x/ε)` (and `π_j^β(x/ε)`) sampled on a target grid.
#[derive(Clone, Debug)]
pub struct ScaledCorrectors {
    pub eps: f64,
    /// Index `j·d + β`.
    pub chi: Vec<GridVelocity>,
    pub pi: Vec<GridPressure>,
    /// `false` when the target grid nests with the cell grid and face
    /// values are copied exactly; `true` when multilinear interpolation was
    /// used.
    pub interpolated: bool,
}

/// Samples `x ↦ εχ_j^β(x/ε)` on `target`.
///
/// When every period of the target grid holds exactly `set.grid.n` cells the
/// face values are copied without interpolation; wall traces on boxes are
/// the average of the two faces adjacent to the wall. Otherwise values are
/// interpolated multilinearly from the periodic cell data.
pub fn corrector_field_at_scale(set: &CorrectorSet, eps: f64, target: &Grid) -> Result<ScaledCorrectors> {
    if target.dim != set.grid.dim {
        return Err(Error::GridMismatch("corrector and target dimensions differ".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidFamily(format!("ε must be positive, got {eps}")));
    }
    let nested = matches!(target.cells_per_period(eps), Ok(k) if k == set.grid.n);
    let cell = set.grid;
    let d = cell.dim;
    let mut chi = Vec::new();
    let mut pi = Vec::new();
    for q in 0..d * d {
        let src = &set.chi[q];
        let u = if nested {
            let k = cell.n;
            let mut values = vec![0.0; target.n_vel()];
            for (idx, v) in values.iter_mut().enumerate() {
                let (beta, m) = target.face_of(idx);
                let mut cm: Multi = [0; 3];
                for a in 0..d {
                    cm[a] = m[a] % k;
                }
                *v = eps * src.values[cell.face_index(beta, &cm)];
            }
            let mut wall = vec![0.0; target.n_wall()];
            if !target.is_periodic() {
                for (j, beta) in target.ordered_pairs() {
                    let dims = target.wall_dims(j, beta);
                    for w in 0..dims[..d].iter().product() {
                        let m = multi(&dims, d, w);
                        let mut lo: Multi = [0; 3];
                        for a in 0..d {
                            lo[a] = m[a] % k;
                        }
                        lo[j] = 0;
                        let mut hi = lo;
                        hi[j] = k - 1;
                        wall[target.wall_index(j, beta, &m)] =
                            eps * 0.5 * (src.values[cell.face_index(beta, &lo)] + src.values[cell.face_index(beta, &hi)]);
                    }
                }
            }
            GridVelocity {
                grid: *target,
                values,
                wall,
            }
        } else {
            GridVelocity::sample(*target, |x| {
                let y: Vec<f64> = x.iter().map(|t| t / eps).collect();
                (0..d).map(|beta| eps * interpolate_face(src, beta, &y)).collect()
            })
        };
        chi.push(u);
        let p_src = &set.pi[q];
        let p = if nested {
            let k = cell.n;
            let values = (0..target.n_cells())
                .map(|c| {
                    let m = target.cell_multi(c);
                    let mut cm: Multi = [0; 3];
                    for a in 0..d {
                        cm[a] = m[a] % k;
                    }
                    p_src.values[cell.cell_index(&cm)]
                })
                .collect();
            GridPressure { grid: *target, values }
        } else {
            GridPressure::sample(*target, |x| {
                let y: Vec<f64> = x.iter().map(|t| t / eps).collect();
                interpolate_cell(p_src, &y)
            })
        };
        pi.push(p);
    }
    Ok(ScaledCorrectors {
        eps,
        chi,
        pi,
        interpolated: !nested,
    })
}

/// Multilinear periodic interpolation of component `beta` at cell coordinates `y`.
fn interpolate_face(u: &GridVelocity, beta: usize, y: &[f64]) -> f64 {
    let g = &u.grid;
    let shift: Vec<f64> = (0..g.dim).map(|a| if a == beta { 0.0 } else { 0.5 }).collect();
    interpolate(g, y, &shift, |m| u.values[g.face_index(beta, m)])
}

fn interpolate_cell(p: &GridPressure, y: &[f64]) -> f64 {
    let g = &p.grid;
    let shift = vec![0.5; g.dim];
    interpolate(g, y, &shift, |m| p.values[g.cell_index(m)])
}

fn interpolate(g: &Grid, y: &[f64], shift: &[f64], at: impl Fn(&Multi) -> f64) -> f64 {
    let d = g.dim;
    let n = g.n as f64;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..d {
        let t = (y[a] - y[a].floor()) * n - shift[a];
        let f = t.floor();
        frac[a] = t - f;
        base[a] = (f as i64).rem_euclid(g.n as i64) as usize;
    }
    let mut total = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut m = [0usize; 3];
        for a in 0..d {
            let bit = (corner >> a) & 1;
            m[a] = (base[a] + bit) % g.n;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if w != 0.0 {
            total += w * at(&m);
        }
    }
    total
}

/// JSON manifest of a serialized corrector set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectorManifest {
    pub schema: String,
    pub grid: Grid,
    pub family: FamilySpec,
    pub adjoint: bool,
    /// Field file stems in `(j, β)` order, `j·d + β`.
    pub chi_files: Vec<String>,
    pub pi_files: Vec<String>,
    pub norms: Vec<CorrectorNorms>,
}

pub const CORRECTOR_SCHEMA: &str = "stokes-homog/correctors/1";

impl CorrectorSet {
    /// Writes one CSV+JSON field per `(j, β)` and `manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let d = self.grid.dim;
        let mut chi_files = Vec::new();
        let mut pi_files = Vec::new();
        for q in 0..d * d {
            let (j, b) = (q / d + 1, q % d + 1);
            let cn = format!("chi_{j}_{b}");
            let pn = format!("pi_{j}_{b}");
            self.chi[q].write(dir, &cn)?;
            self.pi[q].write(dir, &pn)?;
            chi_files.push(cn);
            pi_files.push(pn);
        }
        let manifest = CorrectorManifest {
            schema: CORRECTOR_SCHEMA.into(),
            grid: self.grid,
            family: self.family.clone(),
            adjoint: self.adjoint,
            chi_files,
            pi_files,
            norms: self.norms.clone(),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: CorrectorManifest = serde_json::from_str(&text)?;
        let d = m.grid.dim;
        let mut chi = Vec::new();
        let mut pi = Vec::new();
        let mut linear = Vec::new();
        for q in 0..d * d {
            chi.push(GridVelocity::read(dir, &m.chi_files[q])?);
            pi.push(GridPressure::read(dir, &m.pi_files[q])?);
            linear.push(linear_field(m.grid, q / d, q % d));
        }
        Ok(Self {
            grid: m.grid,
            family: m.family,
            adjoint: m.adjoint,
            chi,
            pi,
            linear,
            iterations: vec![0; d * d],
            norms: m.norms,
        })
    }
}

/// `∫_Y ∇χ_j^β` per corrector (should vanish): slot-gradient cell averages.
pub fn corrector_mean_gradients(set: &CorrectorSet, disc: &Discretization) -> Result<Vec<Vec<f64>>> {
    let d = set.grid.dim;
    let nc = set.grid.n_cells();
    set.chi
        .iter()
        .map(|chi| {
            let s = disc.gradient_slots(chi)?;
            Ok((0..d * d)
                .map(|q| stable_sum((0..nc).map(|c| s[c * d * d + q])) / nc as f64)
                .collect())
        })
        .collect()
}
