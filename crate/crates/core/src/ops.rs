//! Discrete differential operators on MAC grids.
//!
//! Velocity gradients are evaluated at *slots*:
//!
//! * cell slots: the full `d × d` gradient `ξ̄_c` at every cell centre, with
//!   exact diagonal entries `∂_β u^β` and off-diagonal entries averaged from
//!   the four surrounding edges;
//! * edge slots: `∂_j u^β` and `∂_β u^j` at edges (integer `x_j`, `x_β`),
//!   exact two-point differences. Box walls use the tangential wall data at
//!   distance `h/2`.
//!
//! With `A_c` the coefficient pair matrix at cell centres, the form is
//!
//! ```text
//! a_h(u, v) / h^d = Σ_c ξ̄_c(v)ᵀ A'_c ξ̄_c(u) + Σ_edges o_e(v)ᵀ Ā_e o_e(u)
//! ```
//!
//! where `A'_c` is `A_c` with every same-plane off-diagonal 2×2 block removed
//! and `Ā_e` is a quarter of the sum of those blocks over the cells touching
//! edge `e`. By a variance identity `a_h(u,u) ≥ λ_min ‖∇_h u‖²`; replacing
//! `A` by its adjoint transposes the form exactly; constant gradients see
//! exactly `A`; and `A = Id` reduces to the 5-point vector Laplacian.

use crate::error::{Error, Result};
use crate::grid::{linear, multi, Grid, GridPressure, GridVelocity, Multi};
use crate::saddle::SaddleOperator;
use crate::sparse::{stable_sum, CsrMatrix, TripletBuilder};
use crate::tensor::{CoefficientField, ScaledField, Tensor4};

/// Anything that can be sampled at the cell centres of a grid.
pub trait CellSampler {
    fn dimension(&self) -> usize;
    /// Pair matrices (`d⁴` each) for every cell, in cell order.
    fn sample_cells(&self, grid: &Grid) -> Result<Vec<f64>>;
}

impl CellSampler for Tensor4 {
    fn dimension(&self) -> usize {
        Tensor4::dimension(self)
    }

    fn sample_cells(&self, grid: &Grid) -> Result<Vec<f64>> {
        check_dim(self.dimension(), grid)?;
        let m = self.pair_matrix();
        let mut out = Vec::with_capacity(grid.n_cells() * m.len());
        for _ in 0..grid.n_cells() {
            out.extend_from_slice(m);
        }
        Ok(out)
    }
}

impl CellSampler for ScaledField {
    fn dimension(&self) -> usize {
        self.base().dimension()
    }

    /// Exact sampling: with `k` cells per period the centre of cell `m` maps
    /// to `y = ((m mod k) + ½)/k`, computed in integer arithmetic.
    fn sample_cells(&self, grid: &Grid) -> Result<Vec<f64>> {
        check_dim(self.dimension(), grid)?;
        let d = grid.dim;
        let k = grid.cells_per_period(self.eps())?;
        let m4 = d.pow(4);
        let mut pdims = [1usize; 3];
        pdims[..d].fill(k);
        let nper = k.pow(d as u32);
        let mut pattern = vec![0.0; nper * m4];
        for idx in 0..nper {
            let pm = multi(&pdims, d, idx);
            let y: Vec<f64> = (0..d).map(|a| (pm[a] as f64 + 0.5) / k as f64).collect();
            self.base().evaluate_into(&y, &mut pattern[idx * m4..(idx + 1) * m4]);
        }
        let mut out = vec![0.0; grid.n_cells() * m4];
        for c in 0..grid.n_cells() {
            let cm = grid.cell_multi(c);
            let mut pm = [0usize; 3];
            for a in 0..d {
                pm[a] = cm[a] % k;
            }
            let src = linear(&pdims, d, &pm);
            out[c * m4..(c + 1) * m4].copy_from_slice(&pattern[src * m4..(src + 1) * m4]);
        }
        Ok(out)
    }
}

impl CellSampler for CoefficientField {
    fn dimension(&self) -> usize {
        CoefficientField::dimension(self)
    }

    fn sample_cells(&self, grid: &Grid) -> Result<Vec<f64>> {
        ScaledField::new(self.clone(), 1.0)?.sample_cells(grid)
    }
}

fn check_dim(d: usize, grid: &Grid) -> Result<()> {
    if d != grid.dim {
        return Err(Error::GridMismatch(format!(
            "coefficient dimension {d} on a {}-dimensional grid",
            grid.dim
        )));
    }
    Ok(())
}

/// Discrete divergence, `n_cells × n_vel`.
pub fn divergence_matrix(grid: &Grid) -> CsrMatrix {
    let d = grid.dim;
    let inv_h = 1.0 / grid.h();
    let mut b = TripletBuilder::new(grid.n_cells(), grid.n_vel());
    for c in 0..grid.n_cells() {
        let m = grid.cell_multi(c);
        for beta in 0..d {
            let mut up = m;
            up[beta] = if grid.is_periodic() { (m[beta] + 1) % grid.n } else { m[beta] + 1 };
            b.push(c, grid.face_index(beta, &up), inv_h);
            b.push(c, grid.face_index(beta, &m), -inv_h);
        }
    }
    b.build()
}

/// `div u` at cell centres.
pub fn divergence(u: &GridVelocity) -> GridPressure {
    let values = divergence_matrix(&u.grid).mul_vec(&u.values);
    GridPressure { grid: u.grid, values }
}

/// `∇p` on faces: `(p_c − p_{c−e_β})/h`, the negative adjoint of
/// [`divergence`]. Wall-normal faces of a box carry zero.
pub fn gradient(p: &GridPressure) -> GridVelocity {
    let g = p.grid;
    let mut values = divergence_matrix(&g).mul_transpose_vec(&p.values);
    for (idx, v) in values.iter_mut().enumerate() {
        let (beta, m) = g.face_of(idx);
        *v = if g.face_on_boundary(beta, &m) { 0.0 } else { -*v };
    }
    GridVelocity {
        grid: g,
        values,
        wall: vec![0.0; g.n_wall()],
    }
}

/// Offsets of the slot vector.
#[derive(Clone, Debug)]
pub struct SlotLayout {
    pub grid: Grid,
    /// `n_cells · d²` cell slots come first.
    pub n_cell_slots: usize,
    /// Start of each plane's edge slots (two per edge).
    pub plane_offsets: Vec<usize>,
    pub n_slots: usize,
}

impl SlotLayout {
    pub fn new(grid: Grid) -> Self {
        let d = grid.dim;
        let n_cell_slots = grid.n_cells() * d * d;
        let mut plane_offsets = Vec::new();
        let mut off = n_cell_slots;
        for (j, beta) in grid.planes() {
            plane_offsets.push(off);
            off += 2 * grid.n_edges(j, beta);
        }
        Self {
            grid,
            n_cell_slots,
            plane_offsets,
            n_slots: off,
        }
    }

    pub fn edge_slot(&self, plane: usize, edge: usize, s: usize) -> usize {
        self.plane_offsets[plane] + 2 * edge + s
    }

    /// Linear indices of the four edges bounding cell `c` in `plane`.
    pub fn cell_edges(&self, c: usize, plane: usize) -> [usize; 4] {
        let g = &self.grid;
        let (j, beta) = g.planes()[plane];
        let dims = g.edge_dims(j, beta);
        let m = g.cell_multi(c);
        let mut out = [0; 4];
        let mut k = 0;
        for dj in 0..2 {
            for db in 0..2 {
                let mut e = m;
                e[j] = wrap(g, m[j] + dj);
                e[beta] = wrap(g, m[beta] + db);
                out[k] = linear(&dims, g.dim, &e);
                k += 1;
            }
        }
        out
    }

    /// Existing cells adjacent to an edge.
    pub fn edge_cells(&self, plane: usize, edge: usize) -> Vec<usize> {
        let g = &self.grid;
        let (j, beta) = g.planes()[plane];
        let e = multi(&g.edge_dims(j, beta), g.dim, edge);
        let mut cells = Vec::with_capacity(4);
        for dj in [1usize, 0] {
            for db in [1usize, 0] {
                let cj = e[j] as isize - dj as isize;
                let cb = e[beta] as isize - db as isize;
                let n = g.n as isize;
                let (cj, cb) = if g.is_periodic() {
                    (cj.rem_euclid(n), cb.rem_euclid(n))
                } else if cj < 0 || cb < 0 || cj >= n || cb >= n {
                    continue;
                } else {
                    (cj, cb)
                };
                let mut m = e;
                m[j] = cj as usize;
                m[beta] = cb as usize;
                cells.push(g.cell_index(&m));
            }
        }
        cells
    }

    pub fn edge_position(&self, plane: usize, edge: usize) -> [f64; 3] {
        let g = &self.grid;
        let (j, beta) = g.planes()[plane];
        let e = multi(&g.edge_dims(j, beta), g.dim, edge);
        let h = g.h();
        let mut x = [0.0; 3];
        for k in 0..g.dim {
            x[k] = if k == j || k == beta {
                e[k] as f64 * h
            } else {
                (e[k] as f64 + 0.5) * h
            };
        }
        x
    }

    /// Pair index `(axis, comp)` of edge slot `s` in `plane`.
    pub fn slot_pair(&self, plane: usize, s: usize) -> (usize, usize) {
        let (j, beta) = self.grid.planes()[plane];
        if s == 0 {
            (j, beta)
        } else {
            (beta, j)
        }
    }

    /// Slot field of a constant gradient `E` (`E[j·d + β] = ∂_j u^β`).
    pub fn constant_field(&self, e: &[f64]) -> Vec<f64> {
        let d = self.grid.dim;
        let mut out = vec![0.0; self.n_slots];
        for c in 0..self.grid.n_cells() {
            out[c * d * d..(c + 1) * d * d].copy_from_slice(e);
        }
        for (p, _) in self.grid.planes().iter().enumerate() {
            for edge in 0..self.n_plane_edges(p) {
                for s in 0..2 {
                    let (a, b) = self.slot_pair(p, s);
                    out[self.edge_slot(p, edge, s)] = e[a * d + b];
                }
            }
        }
        out
    }

    pub fn n_plane_edges(&self, plane: usize) -> usize {
        let (j, beta) = self.grid.planes()[plane];
        self.grid.n_edges(j, beta)
    }

    /// Samples a tensor field `f(x)` (`f[i·d + α]`) at slot locations.
    pub fn sample(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let g = &self.grid;
        let d = g.dim;
        let mut out = vec![0.0; self.n_slots];
        for c in 0..g.n_cells() {
            let v = f(&g.cell_center(c)[..d]);
            out[c * d * d..(c + 1) * d * d].copy_from_slice(&v[..d * d]);
        }
        for (p, _) in g.planes().iter().enumerate() {
            for edge in 0..self.n_plane_edges(p) {
                let v = f(&self.edge_position(p, edge)[..d]);
                for s in 0..2 {
                    let (a, b) = self.slot_pair(p, s);
                    out[self.edge_slot(p, edge, s)] = v[a * d + b];
                }
            }
        }
        out
    }

    /// Identity-coefficient slot weights: `⟨f, ∇v⟩_h = h^d Σ w_s f_s (Gv)_s`.
    pub fn identity_weights(&self) -> Vec<f64> {
        let g = &self.grid;
        let d = g.dim;
        let mut w = vec![0.0; self.n_slots];
        for c in 0..g.n_cells() {
            for b in 0..d {
                w[c * d * d + b * d + b] = 1.0;
            }
        }
        for (p, _) in g.planes().iter().enumerate() {
            for edge in 0..self.n_plane_edges(p) {
                let wt = self.edge_cells(p, edge).len() as f64 / 4.0;
                w[self.edge_slot(p, edge, 0)] = wt;
                w[self.edge_slot(p, edge, 1)] = wt;
            }
        }
        w
    }

    /// Per-cell `|∇u|²` from a slot gradient: diagonal squares plus the
    /// average over the cell's edges of the squared edge slots. Its
    /// `h^d`-weighted sum equals the identity energy `a_h^{Id}(u,u)`.
    pub fn energy_density(&self, slots: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let d = g.dim;
        let planes = g.planes();
        (0..g.n_cells())
            .map(|c| {
                let mut e = 0.0;
                for b in 0..d {
                    let v = slots[c * d * d + b * d + b];
                    e += v * v;
                }
                for p in 0..planes.len() {
                    let mut s = 0.0;
                    for edge in self.cell_edges(c, p) {
                        let a = slots[self.edge_slot(p, edge, 0)];
                        let b = slots[self.edge_slot(p, edge, 1)];
                        s += a * a + b * b;
                    }
                    e += 0.25 * s;
                }
                e
            })
            .collect()
    }
}

#[inline]
fn wrap(g: &Grid, i: usize) -> usize {
    if g.is_periodic() {
        i % g.n
    } else {
        i
    }
}

/// Column entries of `∂_axis u^comp` at an edge with multi-index `e`.
fn edge_derivative(g: &Grid, axis: usize, comp: usize, e: &Multi, out: &mut Vec<(usize, f64)>) {
    let h = g.h();
    let mut above = *e;
    let mut below = *e;
    if g.is_periodic() {
        above[axis] = e[axis] % g.n;
        below[axis] = (e[axis] + g.n - 1) % g.n;
        out.push((g.face_index(comp, &above), 1.0 / h));
        out.push((g.face_index(comp, &below), -1.0 / h));
        return;
    }
    let nv = g.n_vel();
    if e[axis] == 0 {
        let mut w = *e;
        w[axis] = 0;
        out.push((g.face_index(comp, &above), 2.0 / h));
        out.push((nv + g.wall_index(axis, comp, &w), -2.0 / h));
    } else if e[axis] == g.n {
        let mut w = *e;
        w[axis] = 1;
        below[axis] = g.n - 1;
        out.push((nv + g.wall_index(axis, comp, &w), 2.0 / h));
        out.push((g.face_index(comp, &below), -2.0 / h));
    } else {
        below[axis] = e[axis] - 1;
        out.push((g.face_index(comp, &above), 1.0 / h));
        out.push((g.face_index(comp, &below), -1.0 / h));
    }
}

/// Slot-gradient matrix `G`: slots × extended DOFs.
pub fn slot_gradient_matrix(layout: &SlotLayout) -> CsrMatrix {
    let g = &layout.grid;
    let d = g.dim;
    let planes = g.planes();
    let mut b = TripletBuilder::new(layout.n_slots, g.n_ext());
    let inv_h = 1.0 / g.h();
    let mut scratch = Vec::new();
    for c in 0..g.n_cells() {
        let m = g.cell_multi(c);
        for beta in 0..d {
            let mut up = m;
            up[beta] = wrap(g, m[beta] + 1);
            let row = c * d * d + beta * d + beta;
            b.push(row, g.face_index(beta, &up), inv_h);
            b.push(row, g.face_index(beta, &m), -inv_h);
        }
        for (p, &(j, beta)) in planes.iter().enumerate() {
            let dims = g.edge_dims(j, beta);
            for edge in layout.cell_edges(c, p) {
                let e = multi(&dims, d, edge);
                for s in 0..2 {
                    let (axis, comp) = layout.slot_pair(p, s);
                    scratch.clear();
                    edge_derivative(g, axis, comp, &e, &mut scratch);
                    for &(col, v) in &scratch {
                        b.push(c * d * d + axis * d + comp, col, 0.25 * v);
                    }
                }
            }
        }
    }
    for (p, &(j, beta)) in planes.iter().enumerate() {
        let dims = g.edge_dims(j, beta);
        for edge in 0..g.n_edges(j, beta) {
            let e = multi(&dims, d, edge);
            for s in 0..2 {
                let (axis, comp) = layout.slot_pair(p, s);
                scratch.clear();
                edge_derivative(g, axis, comp, &e, &mut scratch);
                for &(col, v) in &scratch {
                    b.push(layout.edge_slot(p, edge, s), col, v);
                }
            }
        }
    }
    b.build()
}

/// Coefficient weights `Q` on slots (block diagonal: `A'_c`, `Ā_e`).
pub fn slot_flux_matrix(layout: &SlotLayout, coeffs: &[f64]) -> CsrMatrix {
    let g = &layout.grid;
    let d = g.dim;
    let n = d * d;
    let planes = g.planes();
    let mut in_plane = vec![false; n * n];
    for &(j, beta) in &planes {
        let q1 = j * d + beta;
        let q2 = beta * d + j;
        for &r in &[q1, q2] {
            for &c in &[q1, q2] {
                in_plane[r * n + c] = true;
            }
        }
    }
    let mut b = TripletBuilder::new(layout.n_slots, layout.n_slots);
    for c in 0..g.n_cells() {
        let m = &coeffs[c * n * n..(c + 1) * n * n];
        for r in 0..n {
            for col in 0..n {
                if !in_plane[r * n + col] {
                    b.push(c * n + r, c * n + col, m[r * n + col]);
                }
            }
        }
    }
    for (p, &(j, beta)) in planes.iter().enumerate() {
        let q = [j * d + beta, beta * d + j];
        for edge in 0..g.n_edges(j, beta) {
            let mut blk = [0.0; 4];
            for c in layout.edge_cells(p, edge) {
                let m = &coeffs[c * n * n..(c + 1) * n * n];
                for s in 0..2 {
                    for t in 0..2 {
                        blk[s * 2 + t] += 0.25 * m[q[s] * n + q[t]];
                    }
                }
            }
            for s in 0..2 {
                for t in 0..2 {
                    b.push(layout.edge_slot(p, edge, s), layout.edge_slot(p, edge, t), blk[s * 2 + t]);
                }
            }
        }
    }
    b.build()
}

/// Assembled operators for one grid and one coefficient sampling.
pub struct Discretization {
    grid: Grid,
    layout: SlotLayout,
    coeffs: Vec<f64>,
    g: CsrMatrix,
    q: CsrMatrix,
    k: CsrMatrix,
    div: CsrMatrix,
}

impl Discretization {
    pub fn new(grid: Grid, coefficients: &dyn CellSampler) -> Result<Self> {
        let coeffs = coefficients.sample_cells(&grid)?;
        Self::from_cell_coefficients(grid, coeffs)
    }

    pub fn from_cell_coefficients(grid: Grid, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.n_cells() * grid.dim.pow(4) {
            return Err(Error::GridMismatch("coefficient samples do not match the grid".into()));
        }
        let layout = SlotLayout::new(grid);
        let g = slot_gradient_matrix(&layout);
        let q = slot_flux_matrix(&layout, &coeffs);
        let k = g.transpose().matmul(&q.matmul(&g)).top_rows(grid.n_vel());
        Ok(Self {
            grid,
            div: divergence_matrix(&grid),
            layout,
            coeffs,
            g,
            q,
            k,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn layout(&self) -> &SlotLayout {
        &self.layout
    }

    /// Cell-centre pair matrices.
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Momentum operator rows, `n_vel × n_ext` (strong scaling, ~`1/h²`).
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.k
    }

    pub fn divergence(&self) -> &CsrMatrix {
        &self.div
    }

    pub fn slot_gradient(&self) -> &CsrMatrix {
        &self.g
    }

    pub fn slot_flux(&self) -> &CsrMatrix {
        &self.q
    }

    fn check(&self, u: &GridVelocity) -> Result<()> {
        self.grid.check_same(&u.grid)
    }

    /// Slot gradient of `u`.
    pub fn gradient_slots(&self, u: &GridVelocity) -> Result<Vec<f64>> {
        self.check(u)?;
        Ok(self.g.mul_vec(&u.ext()))
    }

    /// Flux `A∇u` at slots (`Q G u`).
    pub fn flux_slots(&self, u: &GridVelocity) -> Result<Vec<f64>> {
        Ok(self.q.mul_vec(&self.gradient_slots(u)?))
    }

    /// `−div(A∇u)` at every face (wall data enters through `u.wall`).
    pub fn apply(&self, u: &GridVelocity) -> Result<GridVelocity> {
        self.check(u)?;
        Ok(GridVelocity {
            grid: self.grid,
            values: self.k.mul_vec(&u.ext()),
            wall: vec![0.0; self.grid.n_wall()],
        })
    }

    /// `a_h(u, v) = ⟨A∇u, ∇v⟩`.
    pub fn bilinear(&self, u: &GridVelocity, v: &GridVelocity) -> Result<f64> {
        let flux = self.flux_slots(u)?;
        let gv = self.gradient_slots(v)?;
        Ok(stable_sum(flux.iter().zip(&gv).map(|(a, b)| a * b)) * self.grid.cell_volume())
    }

    /// Pairing of slot fields through the coefficients: `h^d ψᵀ Q ξ`.
    pub fn pair_slots(&self, xi: &[f64], psi: &[f64]) -> f64 {
        let qx = self.q.mul_vec(xi);
        stable_sum(qx.iter().zip(psi).map(|(a, b)| a * b)) * self.grid.cell_volume()
    }

    /// Face load of `v ↦ −h^{-d}·(slot field paired with ∇v through Q)`,
    /// i.e. the right-hand side produced by a prescribed gradient `ξ`.
    pub fn load_from_gradient(&self, xi: &[f64]) -> Vec<f64> {
        let qx = self.q.mul_vec(xi);
        let mut f = self.g.mul_transpose_vec(&qx);
        f.truncate(self.grid.n_vel());
        f.iter_mut().for_each(|v| *v = -*v);
        f
    }

    /// Load of a prescribed gradient with cancellation below roundoff
    /// flushed to zero: when `‖F‖` is within a few ulps of the unsigned sum
    /// `‖|G|ᵀ|Qξ|‖` the load is a constant-gradient identity (e.g. constant
    /// coefficients) and is returned as exactly zero.
    pub fn load_from_gradient_flushed(&self, xi: &[f64]) -> Vec<f64> {
        let f = self.load_from_gradient(xi);
        let qx = self.q.mul_vec(xi);
        let mut unsigned = vec![0.0; self.g.ncols()];
        for (r, &v) in qx.iter().enumerate() {
            if v != 0.0 {
                for (c, gv) in self.g.row(r) {
                    unsigned[c] += (gv * v).abs();
                }
            }
        }
        unsigned.truncate(self.grid.n_vel());
        let scale = crate::sparse::norm2(&unsigned);
        if crate::sparse::norm2(&f) <= 64.0 * f64::EPSILON * scale {
            vec![0.0; f.len()]
        } else {
            f
        }
    }

    /// Face load of `div(f)` applied weakly: `v ↦ −⟨f, ∇v⟩_h / h^d`.
    pub fn load_from_flux(&self, f_slots: &[f64]) -> Vec<f64> {
        let w = self.layout.identity_weights();
        let wf: Vec<f64> = w.iter().zip(f_slots).map(|(a, b)| a * b).collect();
        let mut f = self.g.mul_transpose_vec(&wf);
        f.truncate(self.grid.n_vel());
        f.iter_mut().for_each(|v| *v = -*v);
        f
    }

    /// Per-cell `|∇u|²`.
    pub fn energy_density(&self, u: &GridVelocity) -> Result<Vec<f64>> {
        Ok(self.layout.energy_density(&self.gradient_slots(u)?))
    }

    /// `‖∇_h u‖_{L²}`.
    pub fn gradient_norm(&self, u: &GridVelocity) -> Result<f64> {
        let e = self.energy_density(u)?;
        Ok((stable_sum(e) * self.grid.cell_volume()).sqrt())
    }

    /// Saddle operator with the nullspace pins appropriate for the grid.
    pub fn saddle_operator(&self) -> SaddleOperator {
        let g = &self.grid;
        let mut unknown = vec![true; g.n_vel()];
        let mut pinned_velocity = Vec::new();
        if g.is_periodic() {
            for beta in 0..g.dim {
                pinned_velocity.push(g.face_offset(beta));
            }
        } else {
            for (idx, u) in unknown.iter_mut().enumerate() {
                let (beta, m) = g.face_of(idx);
                if g.face_on_boundary(beta, &m) {
                    *u = false;
                }
            }
        }
        let n = g.dim * g.dim;
        let pressure_weights = (0..g.n_cells())
            .map(|c| {
                let m = &self.coeffs[c * n * n..(c + 1) * n * n];
                let tr: f64 = (0..n).map(|p| m[p * n + p]).sum::<f64>() / n as f64;
                1.0 / tr.max(f64::MIN_POSITIVE)
            })
            .collect();
        SaddleOperator {
            k: self.k.clone(),
            div: self.div.clone(),
            unknown,
            pinned_velocity,
            pinned_pressure: g.n_cells() / 2,
            pressure_weights,
        }
    }
}

/// `−div(A∇u)` for a coefficient sampler on `u`'s grid.
pub fn apply_operator(coefficients: &dyn CellSampler, u: &GridVelocity) -> Result<GridVelocity> {
    Discretization::new(u.grid, coefficients)?.apply(u)
}

/// Cells whose centres lie in the closed ball `B(x₀, r)` (minimal image on tori).
pub fn window_cells(grid: &Grid, center: &[f64], r: f64) -> Vec<usize> {
    let d = grid.dim;
    (0..grid.n_cells())
        .filter(|&c| {
            let x = grid.cell_center(c);
            let mut d2 = 0.0;
            for k in 0..d {
                let mut dx = x[k] - center[k];
                if grid.is_periodic() {
                    dx -= grid.length * (dx / grid.length).round();
                }
                d2 += dx * dx;
            }
            d2 <= r * r * (1.0 + 1e-12)
        })
        .collect()
}

/// Mean of a cell field (`width` values per cell) over `B(x₀, r)`.
pub fn window_average(grid: &Grid, values: &[f64], width: usize, center: &[f64], r: f64) -> Result<Vec<f64>> {
    if values.len() != grid.n_cells() * width {
        return Err(Error::GridMismatch("cell field length does not match grid".into()));
    }
    let cells = window_cells(grid, center, r);
    if cells.is_empty() {
        return Err(Error::EmptyWindow(format!("no cell centre within {r} of {center:?}")));
    }
    Ok((0..width)
        .map(|k| stable_sum(cells.iter().map(|&c| values[c * width + k])) / cells.len() as f64)
        .collect())
}

/// Velocity averaged to cell centres (`d` values per cell).
pub fn cell_velocity(u: &GridVelocity) -> Vec<f64> {
    let g = &u.grid;
    let d = g.dim;
    let mut out = vec![0.0; g.n_cells() * d];
    for c in 0..g.n_cells() {
        let m = g.cell_multi(c);
        for beta in 0..d {
            let mut up = m;
            up[beta] = wrap(g, m[beta] + 1);
            out[c * d + beta] = 0.5 * (u.values[g.face_index(beta, &m)] + u.values[g.face_index(beta, &up)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FamilySpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_velocity(grid: Grid, seed: u64) -> GridVelocity {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridVelocity {
            grid,
            values: (0..grid.n_vel()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            wall: (0..grid.n_wall()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn identity_operator_is_five_point_laplacian() {
        let grid = Grid::periodic(2, 8).unwrap();
        let u = random_velocity(grid, 1);
        let ku = apply_operator(&Tensor4::identity(2), &u).unwrap();
        let h = grid.h();
        for idx in 0..grid.n_vel() {
            let (beta, m) = grid.face_of(idx);
            let mut lap = 4.0 * u.values[idx];
            for a in 0..2 {
                for s in [1, grid.n - 1] {
                    let mut nb = m;
                    nb[a] = (m[a] + s) % grid.n;
                    lap -= u.values[grid.face_index(beta, &nb)];
                }
            }
            assert!((ku.values[idx] - lap / (h * h)).abs() < 1e-10, "face {idx}");
        }
    }

    #[test]
    fn constant_gradient_energy_is_exact() {
        let grid = Grid::periodic(2, 6).unwrap();
        let field = CoefficientField::new(
            2,
            FamilySpec::Skewed {
                base: Box::new(FamilySpec::laminate_sine(2)),
                skew: 0.2,
            },
        )
        .unwrap();
        let disc = Discretization::new(grid, &field).unwrap();
        let e = [0.3, -1.0, 0.7, 0.2];
        let xi = disc.layout().constant_field(&e);
        let got = disc.pair_slots(&xi, &xi);
        let n = 4;
        let mut want = 0.0;
        for c in 0..grid.n_cells() {
            let m = &disc.coefficients()[c * 16..(c + 1) * 16];
            for r in 0..n {
                for col in 0..n {
                    want += m[r * n + col] * e[r] * e[col];
                }
            }
        }
        want *= grid.cell_volume();
        assert!((got - want).abs() < 1e-13, "{got} vs {want}");
    }
}
