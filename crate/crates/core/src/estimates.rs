//! Measurement of the uniform estimates across `ε`-sweeps, plus the
//! constructive Liouville checks on the torus.
//!
//! Every quantity is a cell quadrature: window means are means over cells
//! whose centres lie in the ball, `|∇u|²` is the identity energy density of
//! the slot gradient, and velocities/forces are averaged to cell centres.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell::{CorrectorSet, ScaledCorrectors};
use crate::error::{Error, Result};
use crate::grid::{multi, Grid, GridPressure, GridVelocity};
use crate::ops::{cell_velocity, divergence, slot_gradient_matrix, window_cells, Discretization, SlotLayout};
use crate::sparse::{norm2, stable_sum, CsrMatrix};
use crate::stokes::{StokesProblem, StokesSolution};
use crate::tensor::CoefficientField;

/// Exponents accepted by [`w1p_norm_sweep`].
pub const W1P_EXPONENTS: [f64; 4] = [4.0 / 3.0, 2.0, 3.0, 4.0];

/// Pair budget for Hölder seminorms and boundary double sums on fine grids.
pub const RANDOM_PAIRS: usize = 100_000;

/// Grids up to this resolution enumerate all pairs.
pub const ALL_PAIRS_MAX_N: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WindowKind {
    /// Ball `B(x₀, R)` compactly inside the domain.
    Interior,
    /// Half-ball `B(x₀, R) ∩ Ω` with `x₀` on the face `x_axis = 0` (or `= L` when `upper`).
    Boundary { axis: usize, upper: bool },
}

/// Concentric balls `B(x₀, r₁) ⊂ … ⊂ B(x₀, R)`; `R` is the last radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub kind: WindowKind,
}

impl Window {
    pub fn interior(center: Vec<f64>, radii: Vec<f64>) -> Self {
        Self {
            center,
            radii,
            kind: WindowKind::Interior,
        }
    }

    pub fn boundary(center: Vec<f64>, radii: Vec<f64>, axis: usize, upper: bool) -> Self {
        Self {
            center,
            radii,
            kind: WindowKind::Boundary { axis, upper },
        }
    }

    pub fn outer(&self) -> f64 {
        *self.radii.last().unwrap_or(&0.0)
    }

    /// Radii strictly below `R`.
    pub fn inner(&self) -> &[f64] {
        &self.radii[..self.radii.len().saturating_sub(1)]
    }

    /// Checks the geometry against a box grid.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let d = grid.dim;
        if self.center.len() != d {
            return Err(Error::InvalidWindow(format!("centre has {} coordinates, grid has {d}", self.center.len())));
        }
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0)) || self.radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidWindow("radii must be positive and strictly increasing".into()));
        }
        if grid.is_periodic() {
            return Ok(());
        }
        let big = self.outer();
        let len = grid.length;
        let inside = |k: usize| self.center[k] - big > 0.0 && self.center[k] + big < len;
        match self.kind {
            WindowKind::Interior => {
                if !(0..d).all(inside) {
                    return Err(Error::InvalidWindow(format!(
                        "B({:?}, {big}) leaves the domain (0, {len})^{d}",
                        self.center
                    )));
                }
            }
            WindowKind::Boundary { axis, upper } => {
                let face = if upper { len } else { 0.0 };
                if axis >= d || (self.center[axis] - face).abs() > 1e-12 * len.max(1.0) {
                    return Err(Error::InvalidWindow(format!("centre {:?} is not on the face x_{axis} = {face}", self.center)));
                }
                if !(0..d).filter(|&k| k != axis).all(inside) {
                    return Err(Error::InvalidWindow(format!("radius {big} exceeds the face half-width at {:?}", self.center)));
                }
            }
        }
        Ok(())
    }

    fn cells(&self, grid: &Grid, r: f64) -> Result<Vec<usize>> {
        let cells = window_cells(grid, &self.center, r);
        if cells.is_empty() {
            return Err(Error::EmptyWindow(format!("no cell centre within {r} of {:?}", self.center)));
        }
        Ok(cells)
    }
}

/// Geometric radii `r_k = r_min · 2^{k/2}` up to `r_max`, followed by `big`.
pub fn sweep_radii(r_min: f64, r_max: f64, big: f64) -> Vec<f64> {
    let mut radii = Vec::new();
    let mut r = r_min;
    while r <= r_max * (1.0 + 1e-12) && r < big {
        radii.push(r);
        r *= std::f64::consts::SQRT_2;
    }
    radii.push(big);
    radii
}

/// Exponents and sweep controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    /// Integrability exponent of the force, `q > d`; `ρ = 1 − d/q`.
    pub q: f64,
    /// Exponent of the boundary Hölder decay.
    #[serde(default = "default_holder_rho")]
    pub holder_rho: f64,
    #[serde(default = "default_w1p")]
    pub w1p_exponents: Vec<f64>,
    /// Relative band for uniformity in `ε`.
    #[serde(default = "default_band")]
    pub band: f64,
    #[serde(default)]
    pub eps: Vec<f64>,
    /// Seed for pair subsampling.
    #[serde(default)]
    pub seed: u64,
}

fn default_holder_rho() -> f64 {
    0.5
}

fn default_w1p() -> Vec<f64> {
    W1P_EXPONENTS.to_vec()
}

fn default_band() -> f64 {
    0.25
}

impl EstimateConfig {
    /// `q = 2d`, so `ρ = 1/2`.
    pub fn for_dimension(d: usize) -> Self {
        Self {
            q: 2.0 * d as f64,
            holder_rho: default_holder_rho(),
            w1p_exponents: default_w1p(),
            band: default_band(),
            eps: Vec::new(),
            seed: 0,
        }
    }

    pub fn rho(&self, d: usize) -> f64 {
        1.0 - d as f64 / self.q
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let rho = self.rho(d);
        if !(rho > 0.0 && rho < 1.0) || !self.q.is_finite() {
            return Err(Error::Estimate(format!("ρ out of (0,1): q = {} gives ρ = 1 − d/q = {rho}", self.q)));
        }
        if !(self.holder_rho > 0.0 && self.holder_rho < 1.0) {
            return Err(Error::Estimate(format!("ρ out of (0,1): holder_rho = {}", self.holder_rho)));
        }
        for &q in &self.w1p_exponents {
            check_w1p_exponent(q)?;
        }
        if !(self.band > 0.0) {
            return Err(Error::Estimate(format!("band must be positive, got {}", self.band)));
        }
        Ok(())
    }
}

pub(crate) fn check_w1p_exponent(q: f64) -> Result<()> {
    if W1P_EXPONENTS.iter().any(|s| (s - q).abs() <= 1e-12) {
        Ok(())
    } else {
        Err(Error::Estimate(format!("exponent {q} is outside the sampled set {{4/3, 2, 3, 4}}")))
    }
}

/// One measured point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimate: String,
    pub eps: f64,
    pub r: f64,
    pub q: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsMax {
    pub eps: f64,
    pub max_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub estimate: String,
    pub max_ratio: f64,
    /// Max ratio per `ε`, in row order.
    pub per_eps: Vec<EpsMax>,
    /// `max_ε |M(ε) − M(ε_max)| / M(ε_max)`, `M` the per-`ε` max ratio.
    pub band: f64,
    /// Least-squares slope of `log M(ε)` against `log ε` (0 with fewer than two points).
    pub trend_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: String,
    pub rows: Vec<EstimateRow>,
    /// SHA-256 of the canonical problem description the rows were measured from.
    pub spec_hash: String,
}

pub const REPORT_SCHEMA: &str = "stokes-homog/estimate/1";

/// Hex SHA-256 of `bytes`.
pub fn spec_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

impl EstimateReport {
    pub fn new(estimate: &str, rows: Vec<EstimateRow>) -> Self {
        Self {
            estimate: estimate.into(),
            rows,
            spec_hash: String::new(),
        }
    }

    pub fn with_spec_hash(mut self, hash: String) -> Self {
        self.spec_hash = hash;
        self
    }

    /// Concatenates reports of one estimate in the given order.
    pub fn merge(estimate: &str, parts: Vec<EstimateReport>) -> Self {
        let mut rows = Vec::new();
        let mut hash = String::new();
        for p in parts {
            if hash.is_empty() {
                hash = p.spec_hash;
            }
            rows.extend(p.rows);
        }
        Self {
            estimate: estimate.into(),
            rows,
            spec_hash: hash,
        }
    }

    pub fn summary(&self) -> EstimateSummary {
        let mut per_eps: Vec<EpsMax> = Vec::new();
        for row in &self.rows {
            match per_eps.iter_mut().find(|e| e.eps == row.eps) {
                Some(e) => e.max_ratio = e.max_ratio.max(row.ratio),
                None => per_eps.push(EpsMax {
                    eps: row.eps,
                    max_ratio: row.ratio,
                }),
            }
        }
        let max_ratio = per_eps.iter().map(|e| e.max_ratio).fold(0.0, f64::max);
        let reference = per_eps
            .iter()
            .fold(None::<&EpsMax>, |best, e| match best {
                Some(b) if b.eps >= e.eps => Some(b),
                _ => Some(e),
            })
            .map(|e| e.max_ratio)
            .unwrap_or(0.0);
        let band = if reference > 0.0 {
            per_eps.iter().map(|e| (e.max_ratio - reference).abs() / reference).fold(0.0, f64::max)
        } else if max_ratio == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let pts: Vec<(f64, f64)> = per_eps
            .iter()
            .filter(|e| e.eps > 0.0 && e.max_ratio > 0.0)
            .map(|e| (e.eps.ln(), e.max_ratio.ln()))
            .collect();
        let trend_slope = if pts.len() >= 2 {
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            if sxx > 0.0 {
                sxy / sxx
            } else {
                0.0
            }
        } else {
            0.0
        };
        EstimateSummary {
            estimate: self.estimate.clone(),
            max_ratio,
            per_eps,
            band,
            trend_slope,
        }
    }

    /// `max_ε |lhs(ε) − lhs(ε_max)| / lhs(ε_max)` over the rows with exponent
    /// `q` (one row per `ε`, as in [`w1p_norm_sweep`]).
    pub fn lhs_variation(&self, q: f64) -> Option<f64> {
        let rows: Vec<&EstimateRow> = self.rows.iter().filter(|r| (r.q - q).abs() <= 1e-12).collect();
        let reference = rows.iter().max_by(|a, b| a.eps.total_cmp(&b.eps))?.lhs;
        if !(reference > 0.0) {
            return None;
        }
        Some(rows.iter().map(|r| (r.lhs - reference).abs() / reference).fold(0.0, f64::max))
    }

    /// Writes `<stem>.csv` (columns `estimate,eps,r,q,lhs,rhs,ratio`) and a
    /// `<stem>.json` summary.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_rows(&dir.join(format!("{stem}.csv")), &self.rows)?;
        let doc = ReportJson {
            schema: REPORT_SCHEMA.into(),
            columns: CSV_COLUMNS.iter().map(|s| s.to_string()).collect(),
            spec_hash: self.spec_hash.clone(),
            summary: self.summary(),
        };
        let path = dir.join(format!("{stem}.json"));
        fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let path = dir.join(format!("{stem}.json"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let doc: ReportJson = serde_json::from_str(&text)?;
        let rows = read_rows(&dir.join(format!("{stem}.csv")))?;
        Ok(Self {
            estimate: doc.summary.estimate,
            rows,
            spec_hash: doc.spec_hash,
        })
    }
}

pub const CSV_COLUMNS: [&str; 7] = ["estimate", "eps", "r", "q", "lhs", "rhs", "ratio"];

#[derive(Serialize, Deserialize)]
struct ReportJson {
    schema: String,
    columns: Vec<String>,
    spec_hash: String,
    summary: EstimateSummary,
}

/// Writes rows with shortest round-trip float formatting.
pub fn write_rows(path: &Path, rows: &[EstimateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.estimate.clone(),
            format!("{:e}", r.eps),
            format!("{:e}", r.r),
            format!("{:e}", r.q),
            format!("{:e}", r.lhs),
            format!("{:e}", r.rhs),
            format!("{:e}", r.ratio),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows(path: &Path) -> Result<Vec<EstimateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Estimate(format!("{}: bad number {:?}", path.display(), &rec[i])))
        };
        rows.push(EstimateRow {
            estimate: rec[0].to_string(),
            eps: num(1)?,
            r: num(2)?,
            q: num(3)?,
            lhs: num(4)?,
            rhs: num(5)?,
            ratio: num(6)?,
        });
    }
    Ok(rows)
}

/// Cell-centre samples of a solved problem that every estimate is built from.
#[derive(Clone, Debug)]
pub struct CellSamples {
    pub grid: Grid,
    pub eps: f64,
    /// `|∇u|²` per cell.
    pub grad_sq: Vec<f64>,
    pub pressure: Vec<f64>,
    /// `|u|²` per cell.
    pub velocity_sq: Vec<f64>,
    /// `|F|²` per cell.
    pub force_sq: Vec<f64>,
    /// `|f|²` per cell (flux source).
    pub flux_sq: Vec<f64>,
    pub div_data: Vec<f64>,
}

fn squared_norms(values: &[f64], width: usize) -> Vec<f64> {
    values.chunks(width).map(|c| c.iter().map(|v| v * v).sum()).collect()
}

impl CellSamples {
    pub fn new(problem: &StokesProblem, solution: &StokesSolution) -> Result<Self> {
        Self::from_fields(problem, &solution.velocity, &solution.pressure)
    }

    pub fn from_fields(problem: &StokesProblem, u: &GridVelocity, p: &GridPressure) -> Result<Self> {
        let grid = problem.grid;
        grid.check_same(&u.grid)?;
        grid.check_same(&p.grid)?;
        let layout = SlotLayout::new(grid);
        let g = slot_gradient_matrix(&layout);
        let d = grid.dim;
        Ok(Self {
            grid,
            eps: problem.eps(),
            grad_sq: layout.energy_density(&g.mul_vec(&u.ext())),
            pressure: p.values.clone(),
            velocity_sq: squared_norms(&cell_velocity(u), d),
            force_sq: squared_norms(&cell_velocity(&problem.force), d),
            flux_sq: match &problem.flux {
                Some(f) => layout.energy_density(f),
                None => vec![0.0; grid.n_cells()],
            },
            div_data: problem.div_data.values.clone(),
        })
    }

    fn mean(values: &[f64], cells: &[usize]) -> f64 {
        stable_sum(cells.iter().map(|&c| values[c])) / cells.len() as f64
    }

    fn sum(&self, values: &[f64], cells: &[usize]) -> f64 {
        stable_sum(cells.iter().map(|&c| values[c])) * self.grid.cell_volume()
    }

    fn mean_pow(values_sq: &[f64], cells: &[usize], q: f64) -> f64 {
        (stable_sum(cells.iter().map(|&c| values_sq[c].powf(q / 2.0))) / cells.len() as f64).powf(1.0 / q)
    }

    /// `(−∫_B |∇u|²)^{1/2}`.
    fn grad_rms(&self, cells: &[usize]) -> f64 {
        Self::mean(&self.grad_sq, cells).sqrt()
    }

    fn pressure_osc(&self, cells: &[usize], reference: f64) -> f64 {
        (stable_sum(cells.iter().map(|&c| (self.pressure[c] - reference).powi(2))) / cells.len() as f64).sqrt()
    }

    /// Right-hand side shared by the interior estimates on `B(x₀, R)`.
    fn interior_rhs(&self, cells: &[usize], big: f64, q: f64, rho: f64, seed: u64) -> f64 {
        let g_sup = cells.iter().fold(0.0f64, |m, &c| m.max(self.div_data[c].abs()));
        let g_semi = holder_seminorm(&self.grid, &self.div_data, cells, rho, seed);
        self.grad_rms(cells) + g_sup + big.powf(rho) * g_semi + big * Self::mean_pow(&self.force_sq, cells, q)
    }
}

/// Discrete `[g]_{C^{0,ρ}}` over pairs of cell centres in `cells`: all pairs
/// on grids with `n ≤ 64`, otherwise [`RANDOM_PAIRS`] seeded random pairs.
pub fn holder_seminorm(grid: &Grid, values: &[f64], cells: &[usize], rho: f64, seed: u64) -> f64 {
    if cells.len() < 2 {
        return 0.0;
    }
    let d = grid.dim;
    let centers: Vec<[f64; 3]> = cells.iter().map(|&c| grid.cell_center(c)).collect();
    let quotient = |a: usize, b: usize| {
        let dist: f64 = (0..d).map(|k| (centers[a][k] - centers[b][k]).powi(2)).sum::<f64>().sqrt();
        (values[cells[a]] - values[cells[b]]).abs() / dist.powf(rho)
    };
    let mut best = 0.0f64;
    if grid.n <= ALL_PAIRS_MAX_N {
        for a in 0..cells.len() {
            for b in a + 1..cells.len() {
                best = best.max(quotient(a, b));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..RANDOM_PAIRS {
            let a = rng.random_range(0..cells.len());
            let b = rng.random_range(0..cells.len());
            if a != b {
                best = best.max(quotient(a, b));
            }
        }
    }
    best
}

fn require_scale(eps: f64, r: f64, id: &str) -> Result<()> {
    if eps > 0.0 && r < eps * (1.0 - 1e-12) {
        return Err(Error::Estimate(format!("{id}: radius {r} is below the scale ε = {eps}")));
    }
    Ok(())
}

pub const INTERIOR_LIPSCHITZ: &str = "interior_lipschitz";
pub const PRESSURE_OSCILLATION: &str = "pressure_oscillation";
pub const FULL_LIPSCHITZ: &str = "full_lipschitz";
pub const BOUNDARY_HOLDER: &str = "boundary_holder";
pub const W1P_NORM: &str = "w1p_norm";
pub const CACCIOPPOLI_INTERIOR: &str = "caccioppoli_interior";
pub const CACCIOPPOLI_BOUNDARY: &str = "caccioppoli_boundary";

fn interior_window(window: &Window, grid: &Grid, id: &str) -> Result<()> {
    window.validate(grid)?;
    if window.kind != WindowKind::Interior {
        return Err(Error::InvalidWindow(format!("{id} needs an interior window")));
    }
    Ok(())
}

/// Mesoscopic Lipschitz estimate: velocity gradient plus pressure
/// oscillation on `B(x₀, r)` against the data on `B(x₀, R)`, for every
/// inner radius `ε ≤ r < R`.
pub fn interior_lipschitz_ratio(samples: &CellSamples, window: &Window, config: &EstimateConfig) -> Result<EstimateReport> {
    interior_ratio(samples, window, config, INTERIOR_LIPSCHITZ, true)
}

/// Pressure oscillation `(−∫_{B_r} |p − avg_{B_R} p|²)^{1/2}` against the
/// same right-hand side.
pub fn pressure_oscillation_ratio(samples: &CellSamples, window: &Window, config: &EstimateConfig) -> Result<EstimateReport> {
    interior_ratio(samples, window, config, PRESSURE_OSCILLATION, false)
}

fn interior_ratio(samples: &CellSamples, window: &Window, config: &EstimateConfig, id: &str, with_gradient: bool) -> Result<EstimateReport> {
    let grid = &samples.grid;
    config.validate(grid.dim)?;
    interior_window(window, grid, id)?;
    let big = window.outer();
    let outer = window.cells(grid, big)?;
    let rho = config.rho(grid.dim);
    let rhs = samples.interior_rhs(&outer, big, config.q, rho, config.seed);
    let p_ref = CellSamples::mean(&samples.pressure, &outer);
    let mut rows = Vec::new();
    for &r in window.inner() {
        require_scale(samples.eps, r, id)?;
        let cells = window.cells(grid, r)?;
        let mut lhs = samples.pressure_osc(&cells, p_ref);
        if with_gradient {
            lhs += samples.grad_rms(&cells);
        }
        rows.push(EstimateRow {
            estimate: id.into(),
            eps: samples.eps,
            r,
            q: config.q,
            lhs,
            rhs,
            ratio: ratio(lhs, rhs),
        });
    }
    Ok(EstimateReport::new(id, rows))
}

/// Full Lipschitz estimate for Hölder coefficients: discrete sup norms of
/// `|∇u|` and `|p − avg_{B_R'} p|` on `B(x₀, R'/2)` against the data on
/// `B(x₀, R')`, for every radius `R'` of the window down to two cells.
pub fn full_lipschitz_ratio(samples: &CellSamples, field: &CoefficientField, window: &Window, config: &EstimateConfig) -> Result<EstimateReport> {
    if field.holder().is_none() {
        return Err(Error::Estimate(format!("{FULL_LIPSCHITZ}: coefficient family carries no Hölder metadata")));
    }
    let grid = &samples.grid;
    config.validate(grid.dim)?;
    interior_window(window, grid, FULL_LIPSCHITZ)?;
    let rho = config.rho(grid.dim);
    let mut rows = Vec::new();
    for &big in &window.radii {
        if big < 2.0 * grid.h() {
            continue;
        }
        let outer = window.cells(grid, big)?;
        let half = window.cells(grid, big / 2.0)?;
        let p_ref = CellSamples::mean(&samples.pressure, &outer);
        let grad_sup = half.iter().fold(0.0f64, |m, &c| m.max(samples.grad_sq[c].sqrt()));
        let p_sup = half.iter().fold(0.0f64, |m, &c| m.max((samples.pressure[c] - p_ref).abs()));
        let lhs = grad_sup + p_sup;
        let rhs = samples.interior_rhs(&outer, big, config.q, rho, config.seed);
        rows.push(EstimateRow {
            estimate: FULL_LIPSCHITZ.into(),
            eps: samples.eps,
            r: big,
            q: config.q,
            lhs,
            rhs,
            ratio: ratio(lhs, rhs),
        });
    }
    Ok(EstimateReport::new(FULL_LIPSCHITZ, rows))
}

/// Boundary samples `(component, position, value)` of the Dirichlet data.
fn boundary_samples(problem: &StokesProblem) -> Vec<(usize, [f64; 3], f64)> {
    let g = &problem.grid;
    let d = g.dim;
    let mut out = Vec::new();
    for (idx, v) in problem.boundary.values.iter().enumerate() {
        let (beta, m) = g.face_of(idx);
        if g.face_on_boundary(beta, &m) {
            out.push((beta, g.face_position(beta, &m), *v));
        }
    }
    for (j, beta) in g.ordered_pairs() {
        let dims = g.wall_dims(j, beta);
        for w in 0..dims[..d].iter().product() {
            let m = multi(&dims, d, w);
            // wall nodes at box corners belong to two faces; keep them once
            if m[beta] == 0 || m[beta] == g.n {
                continue;
            }
            out.push((beta, g.wall_position(j, beta, &m), problem.boundary.wall[g.wall_index(j, beta, &m)]));
        }
    }
    out
}

/// Discrete `B^{1−1/q, q}(∂Ω)` norm `‖h‖_{L^q(∂Ω)} + [h]`, with the
/// Gagliardo double sum taken per component over boundary samples, all pairs
/// when there are at most 2000 samples per component, otherwise
/// [`RANDOM_PAIRS`] seeded pairs (rescaled to the full pair count).
/// `region` restricts to samples within `r` of a centre.
pub fn boundary_data_norm(problem: &StokesProblem, q: f64, region: Option<(&[f64], f64)>, seed: u64) -> f64 {
    let g = &problem.grid;
    let d = g.dim;
    let area = g.h().powi(d as i32 - 1);
    let s = 1.0 - 1.0 / q;
    let power = (d - 1) as f64 + s * q;
    let samples: Vec<_> = boundary_samples(problem)
        .into_iter()
        .filter(|(_, x, _)| match region {
            Some((c, r)) => (0..d).map(|k| (x[k] - c[k]).powi(2)).sum::<f64>() <= r * r * (1.0 + 1e-12),
            None => true,
        })
        .collect();
    let lq = (stable_sum(samples.iter().map(|(_, _, v)| v.abs().powf(q))) * area).powf(1.0 / q);
    let mut semi = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for beta in 0..d {
        let comp: Vec<_> = samples.iter().filter(|s| s.0 == beta).collect();
        let n = comp.len();
        if n < 2 {
            continue;
        }
        let term = |a: usize, b: usize| {
            let dist: f64 = (0..d).map(|k| (comp[a].1[k] - comp[b].1[k]).powi(2)).sum::<f64>().sqrt();
            (comp[a].2 - comp[b].2).abs().powf(q) / dist.powf(power)
        };
        if n <= 2000 {
            for a in 0..n {
                for b in 0..n {
                    if a != b {
                        semi.push(term(a, b) * area * area);
                    }
                }
            }
        } else {
            let scale = (n * (n - 1)) as f64 / RANDOM_PAIRS as f64;
            for _ in 0..RANDOM_PAIRS {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if a != b {
                    semi.push(term(a, b) * area * area * scale);
                }
            }
        }
    }
    lq + stable_sum(semi).powf(1.0 / q)
}

/// Boundary decay `(−∫_{D_r} |∇u|²)^{1/2} ≤ C (r/R)^{ρ−1} (−∫_{D_R} |∇u|²)^{1/2}`
/// for solutions with vanishing data near the face.
pub fn boundary_holder_decay(problem: &StokesProblem, samples: &CellSamples, window: &Window, rho: f64) -> Result<EstimateReport> {
    let grid = &samples.grid;
    window.validate(grid)?;
    if !matches!(window.kind, WindowKind::Boundary { .. }) {
        return Err(Error::InvalidWindow(format!("{BOUNDARY_HOLDER}: window is not centred on a face")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Estimate(format!("ρ out of (0,1): {rho}")));
    }
    let big = window.outer();
    let outer = window.cells(grid, big)?;
    if outer.iter().any(|&c| samples.force_sq[c] != 0.0 || samples.flux_sq[c] != 0.0 || samples.div_data[c] != 0.0) {
        return Err(Error::Estimate(format!("{BOUNDARY_HOLDER}: nonzero source inside the window")));
    }
    let near: Vec<_> = boundary_samples(problem)
        .into_iter()
        .filter(|(_, x, _)| (0..grid.dim).map(|k| (x[k] - window.center[k]).powi(2)).sum::<f64>() <= big * big)
        .collect();
    if near.iter().any(|s| s.2 != 0.0) {
        return Err(Error::Estimate(format!("{BOUNDARY_HOLDER}: nonzero boundary data inside the window")));
    }
    let reference = samples.grad_rms(&outer);
    let mut rows = Vec::new();
    for &r in window.inner() {
        require_scale(samples.eps, r, BOUNDARY_HOLDER)?;
        let cells = window.cells(grid, r)?;
        let lhs = samples.grad_rms(&cells);
        let rhs = (r / big).powf(rho - 1.0) * reference;
        rows.push(EstimateRow {
            estimate: BOUNDARY_HOLDER.into(),
            eps: samples.eps,
            r,
            q: rho,
            lhs,
            rhs,
            ratio: ratio(lhs, rhs),
        });
    }
    Ok(EstimateReport::new(BOUNDARY_HOLDER, rows))
}

/// Global `W^{1,q}` norms `‖∇u‖_{L^q} + ‖p − avg p‖_{L^q}` against
/// `‖f‖_{L^q} + ‖F‖_{L^q} + ‖g‖_{L^q} + ‖h‖_{B^{1−1/q,q}}`, one row per `q`
/// (the `r` column holds the domain diameter).
pub fn w1p_norm_sweep(problem: &StokesProblem, samples: &CellSamples, exponents: &[f64], seed: u64) -> Result<EstimateReport> {
    let grid = &samples.grid;
    let all: Vec<usize> = (0..grid.n_cells()).collect();
    let vol = grid.cell_volume();
    let p_mean = CellSamples::mean(&samples.pressure, &all);
    let lq = |sq: &[f64], q: f64| (stable_sum(sq.iter().map(|v| v.powf(q / 2.0))) * vol).powf(1.0 / q);
    let p_sq: Vec<f64> = samples.pressure.iter().map(|p| (p - p_mean).powi(2)).collect();
    let g_sq: Vec<f64> = samples.div_data.iter().map(|g| g * g).collect();
    let diameter = grid.length * (grid.dim as f64).sqrt();
    let mut rows = Vec::new();
    for &q in exponents {
        check_w1p_exponent(q)?;
        let lhs = lq(&samples.grad_sq, q) + lq(&p_sq, q);
        let rhs = lq(&samples.flux_sq, q) + lq(&samples.force_sq, q) + lq(&g_sq, q) + boundary_data_norm(problem, q, None, seed);
        rows.push(EstimateRow {
            estimate: W1P_NORM.into(),
            eps: samples.eps,
            r: diameter,
            q,
            lhs,
            rhs,
            ratio: ratio(lhs, rhs),
        });
    }
    Ok(EstimateReport::new(W1P_NORM, rows))
}

/// Caccioppoli ratios. Interior: `∫_B |∇u|² + ∫_B |p − avg_B p|²` against
/// `r^{-2}∫_{2B}|u|² + ∫_{2B}|f|² + ∫_{2B}|g|² + r²∫_{2B}|F|²` for each
/// inner radius `r` (so `2r ≤ R`). Boundary: `∫_{D_{r/2}} |∇u|²` against
/// the same aggregate over `D_r` plus `‖h‖²_{H^{1/2}(Δ_r)}`, for every radius.
pub fn caccioppoli_ratio(problem: &StokesProblem, samples: &CellSamples, window: &Window, seed: u64) -> Result<EstimateReport> {
    let grid = &samples.grid;
    window.validate(grid)?;
    let aggregate = |cells: &[usize], r: f64| {
        samples.sum(&samples.velocity_sq, cells) / (r * r)
            + samples.sum(&samples.flux_sq, cells)
            + samples.sum(&samples.div_data.iter().map(|g| g * g).collect::<Vec<_>>(), cells)
            + r * r * samples.sum(&samples.force_sq, cells)
    };
    let mut rows = Vec::new();
    let id = match window.kind {
        WindowKind::Interior => {
            for &r in window.inner() {
                if 2.0 * r > window.outer() * (1.0 + 1e-12) {
                    return Err(Error::InvalidWindow(format!(
                        "{CACCIOPPOLI_INTERIOR}: 2B(x₀, {r}) exits the window of radius {}",
                        window.outer()
                    )));
                }
                let inner = window.cells(grid, r)?;
                let double = window.cells(grid, 2.0 * r)?;
                let p_ref = CellSamples::mean(&samples.pressure, &inner);
                let lhs = samples.sum(&samples.grad_sq, &inner)
                    + stable_sum(inner.iter().map(|&c| (samples.pressure[c] - p_ref).powi(2))) * grid.cell_volume();
                let rhs = aggregate(&double, r);
                rows.push(row(CACCIOPPOLI_INTERIOR, samples.eps, r, 2.0, lhs, rhs));
            }
            CACCIOPPOLI_INTERIOR
        }
        WindowKind::Boundary { .. } => {
            for &r in &window.radii {
                let half = window.cells(grid, r / 2.0)?;
                let full = window.cells(grid, r)?;
                let lhs = samples.sum(&samples.grad_sq, &half);
                let h_norm = boundary_data_norm(problem, 2.0, Some((&window.center, r)), seed);
                let rhs = aggregate(&full, r) + h_norm * h_norm;
                rows.push(row(CACCIOPPOLI_BOUNDARY, samples.eps, r, 2.0, lhs, rhs));
            }
            CACCIOPPOLI_BOUNDARY
        }
    };
    Ok(EstimateReport::new(id, rows))
}

fn row(id: &str, eps: f64, r: f64, q: f64, lhs: f64, rhs: f64) -> EstimateRow {
    EstimateRow {
        estimate: id.into(),
        eps,
        r,
        q,
        lhs,
        rhs,
        ratio: ratio(lhs, rhs),
    }
}

/// Number of smooth test fields in the flux-pairing panel.
pub const FLUX_PANEL: usize = 10;

/// Weight `Π sin⁴(π x_a)` vanishing to fourth order on the walls of the
/// unit box, so pairings do not see boundary layers.
pub fn interior_weight(x: &[f64]) -> f64 {
    x.iter().map(|t| (std::f64::consts::PI * t).sin().powi(4)).product()
}

/// The `k`-th test tensor field `Φ_k(x)`, `k < 10`, on the unit box: entry
/// `(i, α) = (3k + ⌊k/d²⌋) mod d²` carries `w(x)·cos(π m_k·x + 0.3k + 0.2)`
/// with [`interior_weight`] `w`.
pub fn flux_test_field(k: usize, d: usize, x: &[f64]) -> Vec<f64> {
    const WAVES: [[f64; 3]; 10] = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0],
        [1.0, -1.0, 1.0],
        [2.0, 1.0, 0.0],
        [1.0, 2.0, 1.0],
        [0.5, 1.5, 0.0],
        [1.5, 0.5, 1.0],
        [2.0, 0.0, 1.0],
        [0.0, 2.0, 0.5],
    ];
    let n = d * d;
    let k = k % FLUX_PANEL;
    let mut v = vec![0.0; n];
    let w = WAVES[k];
    let phase: f64 = (0..d).map(|a| w[a] * x[a]).sum::<f64>() * std::f64::consts::PI + 0.3 * k as f64 + 0.2;
    v[(k * 3 + k / n) % n] = interior_weight(x) * phase.cos();
    v
}

/// Errors of the two-scale approximation at one `ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoScaleError {
    pub eps: f64,
    /// `‖u_ε − u₀‖_{L²}`.
    pub l2: f64,
    /// `‖u_ε − u₀‖_{H¹}`.
    pub h1: f64,
    /// `‖u_ε − u₀ − εχ(x/ε)∇u₀‖_{H¹}`.
    pub corrected_h1: f64,
    /// `|⟨A(x/ε)∇u_ε − Â∇u₀, Φ_k⟩|` for the panel of [`flux_test_field`]s,
    /// each pairing taken in the discrete coefficient form.
    pub flux_defects: Vec<f64>,
    /// `|⟨p_ε − p₀, φ⟩|` (mean-free pressures) for the fixed
    /// `φ(x) = cos(2π x₁/L)·w(x/L)`, `w` the [`interior_weight`].
    pub pressure_pairing: f64,
}

fn h1_norm(layout: &SlotLayout, g: &CsrMatrix, u: &GridVelocity) -> f64 {
    let grad = stable_sum(layout.energy_density(&g.mul_vec(&u.ext()))) * layout.grid.cell_volume();
    (u.l2_norm().powi(2) + grad).sqrt()
}

/// Cell-centre gradient `∂_j u^β` (index `j·d + β`) from the slot gradient:
/// diagonal entries are cell slots, off-diagonal ones average the four edges.
fn cell_gradient(layout: &SlotLayout, slots: &[f64]) -> Vec<f64> {
    let g = &layout.grid;
    let d = g.dim;
    let mut out = vec![0.0; g.n_cells() * d * d];
    for c in 0..g.n_cells() {
        for b in 0..d {
            out[c * d * d + b * d + b] = slots[c * d * d + b * d + b];
        }
        for (p, _) in g.planes().iter().enumerate() {
            for s in 0..2 {
                let (a, b) = layout.slot_pair(p, s);
                let v: f64 = layout.cell_edges(c, p).iter().map(|&e| slots[layout.edge_slot(p, e, s)]).sum();
                out[c * d * d + a * d + b] = 0.25 * v;
            }
        }
    }
    out
}

/// Compares an oscillating solution with the homogenized one on the same box grid.
pub fn two_scale_error(
    eps_disc: &Discretization,
    eps_solution: &StokesSolution,
    hom_disc: &Discretization,
    hom_solution: &StokesSolution,
    correctors: &ScaledCorrectors,
) -> Result<TwoScaleError> {
    let grid = *eps_disc.grid();
    grid.check_same(hom_disc.grid())?;
    grid.check_same(&eps_solution.velocity.grid)?;
    grid.check_same(&hom_solution.velocity.grid)?;
    if correctors.interpolated {
        return Err(Error::GridMismatch("corrector grid does not nest with the solution grid".into()));
    }
    let d = grid.dim;
    let layout = eps_disc.layout();
    let gmat = eps_disc.slot_gradient();
    let u0 = &hom_solution.velocity;
    let mut diff = eps_solution.velocity.clone();
    diff.axpy(-1.0, u0);
    let l2 = diff.l2_norm();
    let h1 = h1_norm(layout, gmat, &diff);

    let du0 = cell_gradient(layout, &gmat.mul_vec(&u0.ext()));
    let nn = d * d;
    let at_cell = |m: &crate::grid::Multi, q: usize| -> f64 {
        let mut c = *m;
        for k in 0..d {
            c[k] = c[k].min(grid.n - 1);
        }
        du0[grid.cell_index(&c) * nn + q]
    };
    let mut corrected = diff.clone();
    for idx in 0..grid.n_vel() {
        let (beta, m) = grid.face_of(idx);
        let mut lo = m;
        let hi = m;
        let has_lo = m[beta] > 0;
        if has_lo {
            lo[beta] -= 1;
        }
        let has_hi = m[beta] < grid.n;
        let mut s = 0.0;
        for q in 0..nn {
            let grad = match (has_lo, has_hi) {
                (true, true) => 0.5 * (at_cell(&lo, q) + at_cell(&hi, q)),
                (true, false) => at_cell(&lo, q),
                _ => at_cell(&hi, q),
            };
            s += correctors.chi[q].values[idx] * grad;
        }
        corrected.values[idx] -= s;
    }
    for (j, beta) in grid.ordered_pairs() {
        let dims = grid.wall_dims(j, beta);
        for w in 0..dims[..d].iter().product() {
            let m = multi(&dims, d, w);
            let mut c = m;
            c[j] = if m[j] == 0 { 0 } else { grid.n - 1 };
            let wi = grid.wall_index(j, beta, &m);
            let s: f64 = (0..nn).map(|q| correctors.chi[q].wall[wi] * at_cell(&c, q)).sum();
            corrected.wall[wi] -= s;
        }
    }
    let corrected_h1 = h1_norm(layout, gmat, &corrected);

    // fluxes are paired through the same discrete form that defines Â:
    // ⟨A∇u, Φ⟩_h = h^d Φᵀ Q ξ(u)
    let xi_eps = eps_disc.gradient_slots(&eps_solution.velocity)?;
    let xi_0 = gmat.mul_vec(&u0.ext());
    let vol = grid.cell_volume();
    let len = grid.length;
    let flux_defects = (0..FLUX_PANEL)
        .map(|k| {
            let phi = layout.sample(|x| {
                let y: Vec<f64> = x.iter().map(|t| t / len).collect();
                flux_test_field(k, d, &y)
            });
            (eps_disc.pair_slots(&xi_eps, &phi) - hom_disc.pair_slots(&xi_0, &phi)).abs()
        })
        .collect();
    let phi = GridPressure::sample(grid, |x| {
        let y: Vec<f64> = x.iter().map(|t| t / len).collect();
        (2.0 * std::f64::consts::PI * y[0]).cos() * interior_weight(&y)
    });
    let pe_mean = eps_solution.pressure.mean();
    let p0_mean = hom_solution.pressure.mean();
    let pressure_pairing = (stable_sum(
        (0..grid.n_cells()).map(|c| phi.values[c] * ((eps_solution.pressure.values[c] - pe_mean) - (hom_solution.pressure.values[c] - p0_mean))),
    ) * vol)
        .abs();
    Ok(TwoScaleError {
        eps: correctors.eps,
        l2,
        h1,
        corrected_h1,
        flux_defects,
        pressure_pairing,
    })
}

/// A member `u = H + (P_j^β + χ_j^β) E_j^β`, `p = H̃ + π_j^β E_j^β` of the
/// Liouville family, sampled on one period of the torus. Face values hold
/// the full (non-periodic) field, with `P` evaluated at face positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleSolution {
    /// `E[j·d + β] = E_j^β`.
    pub e: Vec<f64>,
    pub h: Vec<f64>,
    pub h_tilde: f64,
    /// `H + χ_j^β E_j^β` (the periodic part).
    pub periodic: GridVelocity,
    /// Full velocity samples including `P_j^β E_j^β`.
    pub velocity: GridVelocity,
    pub pressure: GridPressure,
}

/// Assembles a family member from solved correctors.
pub fn assemble_liouville(set: &CorrectorSet, e: &[f64], h: &[f64], h_tilde: f64) -> Result<LiouvilleSolution> {
    let grid = set.grid;
    let d = grid.dim;
    if e.len() != d * d || h.len() != d {
        return Err(Error::Estimate(format!("Liouville member needs {} entries of E and {d} of H", d * d)));
    }
    if set.chi.len() != d * d || set.norms.iter().any(|n| !n.residual.is_finite()) {
        return Err(Error::Estimate("correctors are not solved".into()));
    }
    let mut periodic = GridVelocity::zeros(grid);
    for idx in 0..grid.n_vel() {
        let (beta, _) = grid.face_of(idx);
        periodic.values[idx] = h[beta];
    }
    let mut pressure = GridPressure::zeros(grid);
    pressure.values.iter_mut().for_each(|v| *v = h_tilde);
    for q in 0..d * d {
        if e[q] != 0.0 {
            periodic.axpy(e[q], &set.chi[q]);
            for (p, v) in pressure.values.iter_mut().zip(&set.pi[q].values) {
                *p += e[q] * v;
            }
        }
    }
    let mut velocity = periodic.clone();
    for idx in 0..grid.n_vel() {
        let (beta, m) = grid.face_of(idx);
        let x = grid.face_position(beta, &m);
        velocity.values[idx] += (0..d).map(|j| x[j] * e[j * d + beta]).sum::<f64>();
    }
    Ok(LiouvilleSolution {
        e: e.to_vec(),
        h: h.to_vec(),
        h_tilde,
        periodic,
        velocity,
        pressure,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleMember {
    pub label: String,
    /// Relative momentum residual of `L₁(u) + ∇p = 0` (absolute when the
    /// linear part produces no load).
    pub momentum_residual: f64,
    /// `max |div u − trace(E)|`.
    pub div_defect: f64,
    /// Cell average of the slot gradient.
    pub mean_gradient: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleReport {
    pub dimension: usize,
    pub corrector_residual: f64,
    pub members: Vec<LiouvilleMember>,
    pub singular_values: Vec<f64>,
    /// Numerical rank with relative cut-off `rank_tol`.
    pub rank: usize,
    pub rank_tol: f64,
    pub expected_rank: usize,
}

impl LiouvilleReport {
    pub fn max_momentum_residual(&self) -> f64 {
        self.members.iter().map(|m| m.momentum_residual).fold(0.0, f64::max)
    }

    pub fn max_div_defect(&self) -> f64 {
        self.members.iter().map(|m| m.div_defect).fold(0.0, f64::max)
    }
}

/// Residuals of one member, computed from the assembled fields:
/// the slot gradient is `E` (from `P`) plus the slot gradient of the
/// periodic part, and the momentum residual is `Gᵀ Q ξ − divᵀ p` on faces.
pub fn liouville_verify(disc: &Discretization, member: &LiouvilleSolution) -> Result<LiouvilleMember> {
    let grid = *disc.grid();
    if !grid.is_periodic() {
        return Err(Error::GridMismatch("Liouville members live on the torus".into()));
    }
    grid.check_same(&member.periodic.grid)?;
    let d = grid.dim;
    let layout = disc.layout();
    let linear = layout.constant_field(&member.e);
    let mut xi = disc.gradient_slots(&member.periodic)?;
    for (a, b) in xi.iter_mut().zip(&linear) {
        *a += b;
    }
    let qx = disc.slot_flux().mul_vec(&xi);
    let mut mom = disc.slot_gradient().mul_transpose_vec(&qx);
    mom.truncate(grid.n_vel());
    let grad_p = disc.divergence().mul_transpose_vec(&member.pressure.values);
    for (m, gp) in mom.iter_mut().zip(&grad_p) {
        *m -= gp;
    }
    let load = disc.load_from_gradient_flushed(&linear);
    let scale = norm2(&load);
    let momentum_residual = if scale > 0.0 { norm2(&mom) / scale } else { norm2(&mom) };

    // div of the full field: the periodic part through the discrete divergence,
    // the linear part by differencing P at the two faces of each cell
    let div_per = divergence(&member.periodic);
    let h = grid.h();
    let trace: f64 = (0..d).map(|b| member.e[b * d + b]).sum();
    let div_defect = (0..grid.n_cells())
        .map(|c| {
            let m = grid.cell_multi(c);
            let mut lin = 0.0;
            for beta in 0..d {
                let mut up = m;
                up[beta] += 1;
                let xl = grid.face_position(beta, &m);
                let xu = grid.face_position(beta, &up);
                let pl: f64 = (0..d).map(|j| xl[j] * member.e[j * d + beta]).sum();
                let pu: f64 = (0..d).map(|j| xu[j] * member.e[j * d + beta]).sum();
                lin += (pu - pl) / h;
            }
            (div_per.values[c] + lin - trace).abs()
        })
        .fold(0.0, f64::max);

    let nc = grid.n_cells();
    let mean_gradient = (0..d * d).map(|q| stable_sum((0..nc).map(|c| xi[c * d * d + q])) / nc as f64).collect();
    Ok(LiouvilleMember {
        label: String::new(),
        momentum_residual,
        div_defect,
        mean_gradient,
    })
}

/// The `d² + d + 1` unit members: `E = e_j ⊗ e^β`, `H = e_β`, `H̃ = 1`.
pub fn liouville_basis(set: &CorrectorSet) -> Result<Vec<(String, LiouvilleSolution)>> {
    let d = set.grid.dim;
    let mut out = Vec::new();
    for j in 0..d {
        for beta in 0..d {
            let mut e = vec![0.0; d * d];
            e[j * d + beta] = 1.0;
            out.push((format!("E_{j}{beta}"), assemble_liouville(set, &e, &vec![0.0; d], 0.0)?));
        }
    }
    for beta in 0..d {
        let mut h = vec![0.0; d];
        h[beta] = 1.0;
        out.push((format!("H_{beta}"), assemble_liouville(set, &vec![0.0; d * d], &h, 0.0)?));
    }
    out.push(("H_tilde".into(), assemble_liouville(set, &vec![0.0; d * d], &vec![0.0; d], 1.0)?));
    Ok(out)
}

/// Singular values of the rows `(u faces, p cells)` of the given members.
fn family_singular_values(members: &[&LiouvilleSolution]) -> Vec<f64> {
    if members.is_empty() {
        return Vec::new();
    }
    let cols = members[0].velocity.values.len() + members[0].pressure.values.len();
    let m = faer::Mat::<f64>::from_fn(members.len(), cols, |i, c| {
        let s = members[i];
        let nv = s.velocity.values.len();
        if c < nv {
            s.velocity.values[c]
        } else {
            s.pressure.values[c - nv]
        }
    });
    let mut sv = m.singular_values().unwrap_or_default();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

fn numerical_rank(sv: &[f64], tol: f64) -> usize {
    let top = sv.first().copied().unwrap_or(0.0);
    sv.iter().filter(|&&s| s > tol * top).count()
}

/// Relative singular-value cut-off for the family rank.
pub const RANK_TOL: f64 = 1e-8;

/// Verifies every unit member and the rank `d² + d + 1` of the family.
pub fn liouville_family_report(field: &CoefficientField, set: &CorrectorSet) -> Result<LiouvilleReport> {
    let disc = Discretization::new(set.grid, field)?;
    let basis = liouville_basis(set)?;
    let mut members = Vec::new();
    for (label, sol) in &basis {
        let mut m = liouville_verify(&disc, sol)?;
        m.label = label.clone();
        members.push(m);
    }
    let sols: Vec<&LiouvilleSolution> = basis.iter().map(|(_, s)| s).collect();
    let singular_values = family_singular_values(&sols);
    let d = set.grid.dim;
    Ok(LiouvilleReport {
        dimension: d,
        corrector_residual: set.max_residual(),
        members,
        rank: numerical_rank(&singular_values, RANK_TOL),
        singular_values,
        rank_tol: RANK_TOL,
        expected_rank: d * d + d + 1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SublinearReport {
    /// Members whose mean gradient vanishes.
    pub zero_gradient_members: Vec<String>,
    /// Rank of the zero-mean-gradient subfamily.
    pub subfamily_rank: usize,
    /// `max |mean ∇u − E|` over the family.
    pub max_mean_gradient_defect: f64,
    /// The zero-mean-gradient members are exactly the constants and span `d + 1` dimensions.
    pub pass: bool,
}

/// Growth proxy: only the constant members have zero mean gradient over the period.
pub fn sublinear_liouville_check(field: &CoefficientField, set: &CorrectorSet) -> Result<SublinearReport> {
    let disc = Discretization::new(set.grid, field)?;
    let d = set.grid.dim;
    let basis = liouville_basis(set)?;
    let tol = 1e-9;
    let mut zero = Vec::new();
    let mut zero_sols = Vec::new();
    let mut defect = 0.0f64;
    for (label, sol) in &basis {
        let m = liouville_verify(&disc, sol)?;
        for (g, e) in m.mean_gradient.iter().zip(&sol.e) {
            defect = defect.max((g - e).abs());
        }
        if m.mean_gradient.iter().all(|g| g.abs() <= tol) {
            zero.push(label.clone());
            zero_sols.push(sol);
        }
    }
    let subfamily_rank = numerical_rank(&family_singular_values(&zero_sols), RANK_TOL);
    let constants_only = basis
        .iter()
        .all(|(label, sol)| zero.contains(label) == sol.e.iter().all(|v| *v == 0.0));
    Ok(SublinearReport {
        pass: constants_only && subfamily_rank == d + 1 && defect <= tol,
        zero_gradient_members: zero,
        subfamily_rank,
        max_mean_gradient_defect: defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{solve_cell_problems, SolveOptions};
    use crate::stokes::{solve_dirichlet, Coefficients};
    use crate::tensor::{FamilySpec, Tensor4};

    fn zero_problem() -> (StokesProblem, StokesSolution) {
        let grid = Grid::boxed(2, 16, 1.0).unwrap();
        let p = StokesProblem::new(grid, Coefficients::Constant(Tensor4::identity(2))).unwrap();
        let s = solve_dirichlet(&p, &SolveOptions::default()).unwrap();
        (p, s)
    }

    #[test]
    fn exponent_validation() {
        let mut c = EstimateConfig::for_dimension(2);
        assert_eq!(c.q, 4.0);
        assert!((c.rho(2) - 0.5).abs() < 1e-15);
        c.validate(2).unwrap();
        c.q = 2.0;
        let msg = c.validate(2).unwrap_err().to_string();
        assert!(msg.contains("ρ out of (0,1)"), "{msg}");
        c.q = 4.0;
        c.w1p_exponents = vec![5.0];
        assert!(c.validate(2).is_err());
    }

    #[test]
    fn zero_data_gives_zero_ratios() {
        let (p, s) = zero_problem();
        let samples = CellSamples::new(&p, &s).unwrap();
        let cfg = EstimateConfig::for_dimension(2);
        let w = Window::interior(vec![0.5, 0.5], vec![0.1, 0.2, 0.4]);
        for rep in [
            interior_lipschitz_ratio(&samples, &w, &cfg).unwrap(),
            pressure_oscillation_ratio(&samples, &w, &cfg).unwrap(),
            caccioppoli_ratio(&p, &samples, &w, 0).unwrap(),
            w1p_norm_sweep(&p, &samples, &W1P_EXPONENTS, 0).unwrap(),
        ] {
            assert!(!rep.rows.is_empty());
            assert!(rep.rows.iter().all(|r| r.ratio == 0.0 && r.lhs == 0.0), "{}", rep.estimate);
        }
        let b = Window::boundary(vec![0.5, 0.0], vec![0.1, 0.2], 1, false);
        let rep = boundary_holder_decay(&p, &samples, &b, 0.5).unwrap();
        assert!(rep.rows.iter().all(|r| r.ratio == 0.0));
    }

    #[test]
    fn window_geometry_is_checked() {
        let grid = Grid::boxed(2, 16, 1.0).unwrap();
        assert!(Window::interior(vec![0.5, 0.5], vec![0.1, 0.6]).validate(&grid).is_err());
        assert!(Window::interior(vec![0.5, 0.5], vec![0.2, 0.1]).validate(&grid).is_err());
        assert!(Window::boundary(vec![0.5, 0.1], vec![0.2], 1, false).validate(&grid).is_err());
        assert!(Window::boundary(vec![0.5, 1.0], vec![0.2], 1, true).validate(&grid).is_ok());
    }

    #[test]
    fn radius_below_scale_is_rejected() {
        let grid = Grid::boxed(2, 32, 1.0).unwrap();
        let field = CoefficientField::new(2, FamilySpec::laminate_sine(2)).unwrap();
        let p = StokesProblem::new(grid, Coefficients::oscillating(&field, 0.25).unwrap()).unwrap();
        let s = solve_dirichlet(&p, &SolveOptions::default()).unwrap();
        let samples = CellSamples::new(&p, &s).unwrap();
        let w = Window::interior(vec![0.5, 0.5], vec![0.1, 0.4]);
        assert!(interior_lipschitz_ratio(&samples, &w, &EstimateConfig::for_dimension(2)).is_err());
    }

    #[test]
    fn summary_band_and_slope() {
        let mk = |eps: f64, ratio: f64| EstimateRow {
            estimate: "x".into(),
            eps,
            r: 0.1,
            q: 4.0,
            lhs: ratio,
            rhs: 1.0,
            ratio,
        };
        let rep = EstimateReport::new("x", vec![mk(0.25, 1.0), mk(0.125, 1.1), mk(0.125, 0.9), mk(0.0625, 0.8)]);
        let s = rep.summary();
        assert_eq!(s.per_eps.len(), 3);
        assert!((s.band - 0.2).abs() < 1e-12);
        assert!((s.max_ratio - 1.1).abs() < 1e-15);
    }

    #[test]
    fn holder_seminorm_of_linear_data() {
        let grid = Grid::boxed(2, 16, 1.0).unwrap();
        let g: Vec<f64> = (0..grid.n_cells()).map(|c| grid.cell_center(c)[0]).collect();
        let cells: Vec<usize> = (0..grid.n_cells()).collect();
        // |x − y| / |x − y|^{1/2} is largest for the farthest pair along x
        let s = holder_seminorm(&grid, &g, &cells, 0.5, 0);
        let far: f64 = 15.0 / 16.0;
        assert!((s - far.sqrt()).abs() < 1e-12, "{s}");
    }

    #[test]
    fn constant_members_have_zero_residuals() {
        let field = CoefficientField::new(2, FamilySpec::laminate_sine(2)).unwrap();
        let set = solve_cell_problems(&field, Grid::periodic(2, 8).unwrap(), &SolveOptions::default()).unwrap();
        let disc = Discretization::new(set.grid, &field).unwrap();
        let m = assemble_liouville(&set, &[0.0; 4], &[0.3, -1.0], 0.7).unwrap();
        let r = liouville_verify(&disc, &m).unwrap();
        assert_eq!(r.momentum_residual, 0.0);
        assert_eq!(r.div_defect, 0.0);
        assert!(r.mean_gradient.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn family_rank_and_sublinear_check() {
        let field = CoefficientField::new(2, FamilySpec::laminate_sine(2)).unwrap();
        let set = solve_cell_problems(&field, Grid::periodic(2, 16).unwrap(), &SolveOptions::default()).unwrap();
        let rep = liouville_family_report(&field, &set).unwrap();
        assert_eq!(rep.rank, 7);
        assert!(rep.max_momentum_residual() <= 10.0 * rep.corrector_residual.max(1e-14));
        assert!(rep.max_div_defect() < 1e-9);
        let sub = sublinear_liouville_check(&field, &set).unwrap();
        assert!(sub.pass, "{sub:?}");
        assert_eq!(sub.zero_gradient_members.len(), 3);
    }

    #[test]
    fn report_files_round_trip() {
        let rows = vec![EstimateRow {
            estimate: "interior_lipschitz".into(),
            eps: 0.125,
            r: 0.1 + 0.2,
            q: 4.0,
            lhs: 1.0 / 3.0,
            rhs: 2.0,
            ratio: 1.0 / 6.0,
        }];
        let rep = EstimateReport::new("interior_lipschitz", rows).with_spec_hash(spec_hash(b"abc"));
        let dir = tempfile::tempdir().unwrap();
        rep.write(dir.path(), "lip").unwrap();
        assert_eq!(EstimateReport::read(dir.path(), "lip").unwrap(), rep);
    }
}
