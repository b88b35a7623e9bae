//! The homogenized tensor `â_ij^{αβ} = a_per(χ_j^β + P_j^β, χ_i^α + P_i^α)`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell::{solve_adjoint_cell_problems, solve_cell_problems, CorrectorSet, SolveOptions};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ops::{CellSampler, Discretization};
use crate::tensor::{CoefficientField, Tensor4};

/// Where an effective tensor came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveProvenance {
    pub cell_resolution: usize,
    pub max_corrector_residual: f64,
    pub adjoint: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTensor {
    pub tensor: Tensor4,
    /// Smallest / largest eigenvalue of the symmetric part.
    pub mu_lower: f64,
    pub mu_upper: f64,
    pub provenance: EffectiveProvenance,
}

impl EffectiveTensor {
    pub fn dimension(&self) -> usize {
        self.tensor.dimension()
    }

    pub fn from_tensor(tensor: Tensor4, provenance: EffectiveProvenance) -> Self {
        let (mu_lower, mu_upper) = tensor.ellipticity_bounds();
        Self {
            tensor,
            mu_lower,
            mu_upper,
            provenance,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let doc = EffectiveJson {
            schema: EFFECTIVE_SCHEMA.into(),
            dimension: self.dimension(),
            index_order: "entries[((i*d + j)*d + alpha)*d + beta] = a_ij^{alpha beta}, zero-based".into(),
            entries: self.tensor.to_ijab(),
            mu_lower: self.mu_lower,
            mu_upper: self.mu_upper,
            provenance: self.provenance.clone(),
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: EffectiveJson = serde_json::from_str(&text)?;
        Ok(Self {
            tensor: Tensor4::from_ijab(doc.dimension, &doc.entries)?,
            mu_lower: doc.mu_lower,
            mu_upper: doc.mu_upper,
            provenance: doc.provenance,
        })
    }
}

impl CellSampler for EffectiveTensor {
    fn dimension(&self) -> usize {
        self.tensor.dimension()
    }

    fn sample_cells(&self, grid: &Grid) -> Result<Vec<f64>> {
        self.tensor.sample_cells(grid)
    }
}

pub const EFFECTIVE_SCHEMA: &str = "stokes-homog/effective/1";

#[derive(Serialize, Deserialize)]
struct EffectiveJson {
    schema: String,
    dimension: usize,
    index_order: String,
    entries: Vec<f64>,
    mu_lower: f64,
    mu_upper: f64,
    provenance: EffectiveProvenance,
}

/// Evaluates the effective tensor with the same discrete form as the solver.
pub fn compute_effective(field: &CoefficientField, set: &CorrectorSet) -> Result<EffectiveTensor> {
    if field.dimension() != set.grid.dim {
        return Err(Error::GridMismatch("field and correctors have different dimensions".into()));
    }
    let disc = Discretization::new(set.grid, field)?;
    compute_with(&disc, set)
}

pub(crate) fn compute_with(disc: &Discretization, set: &CorrectorSet) -> Result<EffectiveTensor> {
    let d = set.grid.dim;
    let n = d * d;
    let layout = disc.layout();
    let mut corrected = Vec::with_capacity(n);
    for q in 0..n {
        let mut e = vec![0.0; n];
        e[q] = 1.0;
        let mut xi = layout.constant_field(&e);
        let g = disc.gradient_slots(&set.chi[q])?;
        for (a, b) in xi.iter_mut().zip(&g) {
            *a += b;
        }
        corrected.push(xi);
    }
    let vol = set.grid.domain_volume();
    let mut pairs = vec![0.0; n * n];
    // row: test pair (i, α); column: trial pair (j, β)
    for row in 0..n {
        for col in 0..n {
            pairs[row * n + col] = disc.pair_slots(&corrected[col], &corrected[row]) / vol;
        }
    }
    Ok(EffectiveTensor::from_tensor(
        Tensor4::from_pair_matrix(d, pairs),
        EffectiveProvenance {
            cell_resolution: set.grid.n,
            max_corrector_residual: set.max_residual(),
            adjoint: set.adjoint,
        },
    ))
}

/// Solves the cell problems and evaluates `Â` in one go.
pub fn effective_tensor(field: &CoefficientField, grid: Grid, opts: &SolveOptions) -> Result<(CorrectorSet, EffectiveTensor)> {
    let set = solve_cell_problems(field, grid, opts)?;
    let eff = compute_effective(field, &set)?;
    Ok((set, eff))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    /// `max |(Â)* − (A*)^|` entrywise.
    pub discrepancy: f64,
    pub primal: EffectiveTensor,
    pub adjoint: EffectiveTensor,
}

/// Compares the adjoint of `Â` with the effective tensor of `A*`.
pub fn check_duality(field: &CoefficientField, grid: Grid, opts: &SolveOptions) -> Result<DualityReport> {
    let (_, primal) = effective_tensor(field, grid, opts)?;
    let adj_set = solve_adjoint_cell_problems(field, grid, opts)?;
    let adjoint = compute_effective(&field.adjoint(), &adj_set)?;
    Ok(DualityReport {
        discrepancy: primal.tensor.adjoint().max_abs_diff(&adjoint.tensor),
        primal,
        adjoint,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveEllipticity {
    pub pass: bool,
    pub mu_eff_lower: f64,
    pub mu_eff_upper: f64,
}

/// `pass` iff the smallest eigenvalue of the symmetric part of `Â` is at
/// least `mu_input − tol` and the largest is finite.
pub fn check_effective_ellipticity(eff: &EffectiveTensor, mu_input: f64, tol: f64) -> EffectiveEllipticity {
    let (lo, hi) = eff.tensor.ellipticity_bounds();
    EffectiveEllipticity {
        pass: lo >= mu_input - tol && hi.is_finite(),
        mu_eff_lower: lo,
        mu_eff_upper: hi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FamilySpec;

    #[test]
    fn identity_is_its_own_effective_tensor() {
        let field = CoefficientField::identity(2);
        let (_, eff) = effective_tensor(&field, Grid::periodic(2, 8).unwrap(), &SolveOptions::default()).unwrap();
        assert!(eff.tensor.max_abs_diff(&Tensor4::identity(2)) < 1e-12);
        let chk = check_effective_ellipticity(&eff, 1.0, 1e-8);
        assert!(chk.pass);
        assert!((chk.mu_eff_lower - 1.0).abs() < 1e-12 && (chk.mu_eff_upper - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let field = CoefficientField::new(2, FamilySpec::laminate_sine(2)).unwrap();
        let (_, eff) = effective_tensor(&field, Grid::periodic(2, 8).unwrap(), &SolveOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eff.json");
        eff.write_json(&p).unwrap();
        assert_eq!(EffectiveTensor::read_json(&p).unwrap(), eff);
    }
}
