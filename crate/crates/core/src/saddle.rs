//! Velocity–pressure saddle-point systems
//!
//! ```text
//!   K u + grad p = F        (momentum, one row per unknown velocity face)
//!       div u    = g        (continuity, one row per cell)
//! ```
//!
//! with `grad = −divᵀ`. Known velocity values (Dirichlet faces, wall data)
//! are eliminated into the right-hand side. The pressure constant, and for
//! periodic grids the velocity constants, are removed by pinning one unknown
//! each; the dropped equations are implied by compatibility of the data, and
//! callers renormalise the means afterwards.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseRowMatRef, SymbolicSparseRowMatRef};
use faer::Mat;

use crate::error::{Error, Result};
use crate::sparse::{dot, norm2, CsrMatrix, TripletBuilder};

/// Strategy used for the coupled system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaddleMethod {
    /// Sparse LU of the full coupled system with iterative refinement.
    #[default]
    Direct,
    /// Conjugate gradients on the pressure Schur complement with a
    /// factorised velocity block and a weighted mass preconditioner.
    /// Falls back to `Direct` when the velocity block is not symmetric.
    SchurCg,
}

/// The discrete operator pieces of a saddle system.
pub struct SaddleOperator {
    /// Momentum operator, `n_vel × n_ext` (extended columns carry wall data).
    pub k: CsrMatrix,
    /// Divergence, `n_cells × n_vel`.
    pub div: CsrMatrix,
    /// `true` for velocity faces that are unknowns.
    pub unknown: Vec<bool>,
    /// Unknown velocity faces fixed to zero to remove a nullspace.
    pub pinned_velocity: Vec<usize>,
    /// Cell whose pressure is fixed to zero.
    pub pinned_pressure: usize,
    /// Positive per-cell weights approximating the inverse Schur complement.
    pub pressure_weights: Vec<f64>,
}

impl SaddleOperator {
    pub fn n_vel(&self) -> usize {
        self.k.nrows()
    }

    pub fn n_ext(&self) -> usize {
        self.k.ncols()
    }

    pub fn n_cells(&self) -> usize {
        self.div.nrows()
    }

    /// Momentum and continuity residuals `(F − K u − grad p, g − div u)`
    /// restricted to unknown faces and all cells.
    pub fn residual(&self, u_ext: &[f64], p: &[f64], force: &[f64], div_data: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ku = self.k.mul_vec(u_ext);
        let grad_p = self.div.mul_transpose_vec(p);
        let mom = (0..self.n_vel())
            .map(|i| if self.unknown[i] { force[i] - ku[i] + grad_p[i] } else { 0.0 })
            .collect();
        let du = self.div.mul_vec(&u_ext[..self.n_vel()]);
        let cont = du.iter().zip(div_data).map(|(a, g)| g - a).collect();
        (mom, cont)
    }
}

/// Right-hand side of one saddle solve.
#[derive(Clone, Debug)]
pub struct SaddleRhs {
    /// Momentum source per velocity face (`n_vel`).
    pub force: Vec<f64>,
    /// Divergence data per cell (`n_cells`).
    pub div_data: Vec<f64>,
    /// Known values in the extended layout (`n_ext`); entries of unknown
    /// faces are ignored.
    pub known: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SaddleSolution {
    /// Velocity in the extended layout with known values inserted.
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    /// Relative residual of the coupled system.
    pub relative_residual: f64,
    /// Refinement steps (direct) or outer CG iterations (Schur).
    pub iterations: usize,
}

struct Reduction {
    vel_index: Vec<Option<usize>>,
    p_index: Vec<Option<usize>>,
    vel_dofs: Vec<usize>,
    p_dofs: Vec<usize>,
}

impl Reduction {
    fn new(op: &SaddleOperator) -> Self {
        let mut vel_index = vec![None; op.n_vel()];
        let mut vel_dofs = Vec::new();
        let pinned: std::collections::HashSet<usize> = op.pinned_velocity.iter().copied().collect();
        for i in 0..op.n_vel() {
            if op.unknown[i] && !pinned.contains(&i) {
                vel_index[i] = Some(vel_dofs.len());
                vel_dofs.push(i);
            }
        }
        let mut p_index = vec![None; op.n_cells()];
        let mut p_dofs = Vec::new();
        for c in 0..op.n_cells() {
            if c != op.pinned_pressure {
                p_index[c] = Some(vel_dofs.len() + p_dofs.len());
                p_dofs.push(c);
            }
        }
        Self {
            vel_index,
            p_index,
            vel_dofs,
            p_dofs,
        }
    }

    fn size(&self) -> usize {
        self.vel_dofs.len() + self.p_dofs.len()
    }

    fn rhs(&self, op: &SaddleOperator, rhs: &SaddleRhs) -> Vec<f64> {
        let mut known = rhs.known.clone();
        for i in 0..op.n_vel() {
            if op.unknown[i] {
                known[i] = 0.0;
            }
        }
        let k_known = op.k.mul_vec(&known);
        let div_known = op.div.mul_vec(&known[..op.n_vel()]);
        let mut b = vec![0.0; self.size()];
        for (r, &i) in self.vel_dofs.iter().enumerate() {
            b[r] = rhs.force[i] - k_known[i];
        }
        for (r, &c) in self.p_dofs.iter().enumerate() {
            b[self.vel_dofs.len() + r] = -(rhs.div_data[c] - div_known[c]);
        }
        b
    }

    fn expand(&self, op: &SaddleOperator, x: &[f64], rhs: &SaddleRhs) -> (Vec<f64>, Vec<f64>) {
        let mut u = rhs.known.clone();
        for i in 0..op.n_vel() {
            if op.unknown[i] {
                u[i] = 0.0;
            }
        }
        for (r, &i) in self.vel_dofs.iter().enumerate() {
            u[i] = x[r];
        }
        let mut p = vec![0.0; op.n_cells()];
        for (r, &c) in self.p_dofs.iter().enumerate() {
            p[c] = x[self.vel_dofs.len() + r];
        }
        (u, p)
    }
}

fn factor(m: &CsrMatrix) -> Result<Lu<usize, f64>> {
    let sym = SymbolicSparseRowMatRef::new_checked(m.nrows(), m.ncols(), m.row_ptr(), None, m.col_idx());
    SparseRowMatRef::new(sym, m.values())
        .sp_lu()
        .map_err(|e| Error::Solver(format!("sparse LU failed: {e:?}")))
}

fn lu_solve(lu: &Lu<usize, f64>, columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if columns.is_empty() {
        return Vec::new();
    }
    let n = columns[0].len();
    let mut rhs = Mat::<f64>::from_fn(n, columns.len(), |i, j| columns[j][i]);
    lu.solve_in_place(rhs.as_mut());
    (0..columns.len())
        .map(|j| (0..n).map(|i| rhs[(i, j)]).collect())
        .collect()
}

/// A factorised square sparse matrix.
pub struct SparseLu {
    lu: Lu<usize, f64>,
    n: usize,
}

impl SparseLu {
    pub fn new(m: &CsrMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Solver("LU of a non-square matrix".into()));
        }
        Ok(Self {
            lu: factor(m)?,
            n: m.nrows(),
        })
    }

    pub fn solve(&self, columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
        debug_assert!(columns.iter().all(|c| c.len() == self.n));
        lu_solve(&self.lu, columns)
    }
}

/// Factorised coupled system, reusable across right-hand sides.
pub struct SaddleSolver {
    reduction: Reduction,
    matrix: CsrMatrix,
    lu: Option<Lu<usize, f64>>,
    schur: Option<SchurParts>,
}

struct SchurParts {
    k_lu: Lu<usize, f64>,
    /// Divergence restricted to reduced velocity columns, all cells.
    div_red: CsrMatrix,
}

const MAX_REFINEMENT: usize = 4;
const MAX_SCHUR_ITERATIONS: usize = 2000;

impl SaddleSolver {
    pub fn new(op: &SaddleOperator, method: SaddleMethod) -> Result<Self> {
        let reduction = Reduction::new(op);
        let nv = reduction.vel_dofs.len();
        let n = reduction.size();
        let mut b = TripletBuilder::new(n, n);
        for (r, &i) in reduction.vel_dofs.iter().enumerate() {
            for (j, v) in op.k.row(i) {
                if let Some(Some(c)) = reduction.vel_index.get(j) {
                    b.push(r, *c, v);
                }
            }
        }
        let div_t = op.div.transpose();
        for (r, &i) in reduction.vel_dofs.iter().enumerate() {
            for (c, v) in div_t.row(i) {
                if let Some(pc) = reduction.p_index[c] {
                    b.push(r, pc, -v);
                }
            }
        }
        for (r, &c) in reduction.p_dofs.iter().enumerate() {
            for (j, v) in op.div.row(c) {
                if let Some(vc) = reduction.vel_index[j] {
                    b.push(nv + r, vc, -v);
                }
            }
        }
        let matrix = b.build();

        let symmetric_velocity = {
            let scale = matrix.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            matrix.asymmetry() <= 1e-12 * scale
        };
        let schur = if method == SaddleMethod::SchurCg && symmetric_velocity {
            let mut kb = TripletBuilder::new(nv, nv);
            for r in 0..nv {
                for (c, v) in matrix.row(r) {
                    if c < nv {
                        kb.push(r, c, v);
                    }
                }
            }
            let k_lu = factor(&kb.build())?;
            let mut db = TripletBuilder::new(op.n_cells(), nv);
            for c in 0..op.n_cells() {
                for (j, v) in op.div.row(c) {
                    if let Some(vc) = reduction.vel_index[j] {
                        db.push(c, vc, v);
                    }
                }
            }
            Some(SchurParts {
                k_lu,
                div_red: db.build(),
            })
        } else {
            None
        };
        let lu = if schur.is_none() { Some(factor(&matrix)?) } else { None };
        Ok(Self {
            reduction,
            matrix,
            lu,
            schur,
        })
    }

    pub fn uses_schur(&self) -> bool {
        self.schur.is_some()
    }

    /// Solves several right-hand sides against the shared factorisation.
    pub fn solve_many(&self, op: &SaddleOperator, rhs: &[SaddleRhs]) -> Vec<SaddleSolution> {
        if let Some(parts) = &self.schur {
            return rhs.iter().map(|r| self.solve_schur(op, parts, r)).collect();
        }
        let lu = self.lu.as_ref().expect("direct factorisation present without Schur parts");
        let bs: Vec<Vec<f64>> = rhs.iter().map(|r| self.reduction.rhs(op, r)).collect();
        let mut xs = lu_solve(lu, &bs);
        let mut steps = vec![0usize; bs.len()];
        let mut rel: Vec<f64> = bs
            .iter()
            .zip(&xs)
            .map(|(b, x)| self.relative_residual(b, x))
            .collect();
        for _ in 0..MAX_REFINEMENT {
            let active: Vec<usize> = (0..bs.len()).filter(|&k| rel[k] > 1e-14).collect();
            if active.is_empty() {
                break;
            }
            let residuals: Vec<Vec<f64>> = active
                .iter()
                .map(|&k| {
                    let ax = self.matrix.mul_vec(&xs[k]);
                    bs[k].iter().zip(&ax).map(|(b, a)| b - a).collect()
                })
                .collect();
            let corrections = lu_solve(lu, &residuals);
            for (&k, dx) in active.iter().zip(corrections) {
                let trial: Vec<f64> = xs[k].iter().zip(&dx).map(|(x, d)| x + d).collect();
                let trial_rel = self.relative_residual(&bs[k], &trial);
                if trial_rel < rel[k] {
                    xs[k] = trial;
                    rel[k] = trial_rel;
                    steps[k] += 1;
                } else {
                    rel[k] = rel[k].min(1e-14);
                }
            }
        }
        rhs.iter()
            .zip(xs)
            .zip(bs.iter())
            .zip(steps)
            .map(|(((r, x), b), it)| {
                let relative_residual = self.relative_residual(b, &x);
                let (velocity, pressure) = self.reduction.expand(op, &x, r);
                SaddleSolution {
                    velocity,
                    pressure,
                    relative_residual,
                    iterations: it,
                }
            })
            .collect()
    }

    pub fn solve(&self, op: &SaddleOperator, rhs: &SaddleRhs) -> SaddleSolution {
        self.solve_many(op, std::slice::from_ref(rhs)).remove(0)
    }

    fn relative_residual(&self, b: &[f64], x: &[f64]) -> f64 {
        let ax = self.matrix.mul_vec(x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let scale = norm2(b).max(f64::MIN_POSITIVE);
        if norm2(b) == 0.0 {
            norm2(&r)
        } else {
            norm2(&r) / scale
        }
    }

    fn solve_schur(&self, op: &SaddleOperator, parts: &SchurParts, rhs: &SaddleRhs) -> SaddleSolution {
        let red = &self.reduction;
        let nv = red.vel_dofs.len();
        let full_b = red.rhs(op, rhs);
        let f_b = &full_b[..nv];
        // g_b for every cell (the pinned cell included)
        let mut known = rhs.known.clone();
        for i in 0..op.n_vel() {
            if op.unknown[i] {
                known[i] = 0.0;
            }
        }
        let div_known = op.div.mul_vec(&known[..op.n_vel()]);
        let g_b: Vec<f64> = rhs.div_data.iter().zip(&div_known).map(|(g, d)| g - d).collect();

        let solve_k = |v: &[f64]| lu_solve(&parts.k_lu, &[v.to_vec()]).remove(0);
        let apply_s = |p: &[f64]| {
            let w = solve_k(&parts.div_red.mul_transpose_vec(p));
            parts.div_red.mul_vec(&w)
        };
        let project = |v: &mut Vec<f64>| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= m);
        };

        let kf = solve_k(f_b);
        let dkf = parts.div_red.mul_vec(&kf);
        let mut r: Vec<f64> = g_b.iter().zip(&dkf).map(|(g, d)| g - d).collect();
        project(&mut r);
        let r0 = norm2(&r).max(f64::MIN_POSITIVE);
        let mut p = vec![0.0; op.n_cells()];
        let precond = |r: &[f64]| -> Vec<f64> {
            let mut z: Vec<f64> = r.iter().zip(&op.pressure_weights).map(|(a, w)| a * w).collect();
            project(&mut z);
            z
        };
        let mut z = precond(&r);
        let mut dir = z.clone();
        let mut rz = dot(&r, &z);
        let mut iterations = 0;
        while iterations < MAX_SCHUR_ITERATIONS && norm2(&r) > 1e-13 * r0 {
            let sd = apply_s(&dir);
            let alpha = rz / dot(&dir, &sd);
            for k in 0..p.len() {
                p[k] += alpha * dir[k];
                r[k] -= alpha * sd[k];
            }
            project(&mut r);
            z = precond(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..dir.len() {
                dir[k] = z[k] + beta * dir[k];
            }
            iterations += 1;
        }
        // u = K⁻¹(F_b + divᵀ p)
        let dtp = parts.div_red.mul_transpose_vec(&p);
        let rhs_u: Vec<f64> = f_b.iter().zip(&dtp).map(|(f, d)| f + d).collect();
        let u_red = solve_k(&rhs_u);

        let mut x = vec![0.0; red.size()];
        x[..nv].copy_from_slice(&u_red);
        let pin = p[op.pinned_pressure];
        for (r_i, &c) in red.p_dofs.iter().enumerate() {
            x[nv + r_i] = p[c] - pin;
        }
        let relative_residual = self.relative_residual(&full_b, &x);
        let (velocity, pressure) = red.expand(op, &x, rhs);
        SaddleSolution {
            velocity,
            pressure,
            relative_residual,
            iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1D periodic toy: K = tridiag Laplacian on faces, div = forward difference.
    fn toy(n: usize) -> SaddleOperator {
        let mut kb = TripletBuilder::new(n, n);
        let mut db = TripletBuilder::new(n, n);
        for i in 0..n {
            kb.push(i, i, 2.1 + 0.05 * (i as f64).sin());
            kb.push(i, (i + 1) % n, -1.0);
            kb.push(i, (i + n - 1) % n, -1.0);
            db.push(i, (i + 1) % n, 1.0);
            db.push(i, i, -1.0);
        }
        SaddleOperator {
            k: kb.build(),
            div: db.build(),
            unknown: vec![true; n],
            pinned_velocity: vec![],
            pinned_pressure: 0,
            pressure_weights: vec![1.0; n],
        }
    }

    #[test]
    fn direct_and_schur_agree_on_toy_system() {
        let op = toy(16);
        let force: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let div_data: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).cos()).collect();
        let m = div_data.iter().sum::<f64>() / 16.0;
        let div_data: Vec<f64> = div_data.iter().map(|g| g - m).collect();
        let rhs = SaddleRhs {
            force,
            div_data,
            known: vec![0.0; 16],
        };
        let direct = SaddleSolver::new(&op, SaddleMethod::Direct).unwrap().solve(&op, &rhs);
        let schur_solver = SaddleSolver::new(&op, SaddleMethod::SchurCg).unwrap();
        assert!(schur_solver.uses_schur());
        let schur = schur_solver.solve(&op, &rhs);
        assert!(direct.relative_residual < 1e-12);
        assert!(schur.relative_residual < 1e-10, "{}", schur.relative_residual);
        for (a, b) in direct.velocity.iter().zip(&schur.velocity) {
            assert!((a - b).abs() < 1e-9);
        }
        let (mom, cont) = op.residual(&direct.velocity, &direct.pressure, &rhs.force, &rhs.div_data);
        assert!(norm2(&mom) < 1e-10);
        assert!(norm2(&cont) < 1e-10);
    }
}
