//! Staggered (MAC) grids on the periodic cell and on boxes.
//!
//! * pressure lives at cell centres;
//! * velocity component `β` lives on faces normal to `e_β`: the face with
//!   multi-index `m` sits at `x_β = m_β h`, `x_k = (m_k + ½) h` for `k ≠ β`;
//! * on a box, tangential wall values ("wall data") are stored separately:
//!   for every ordered pair `j ≠ β` the value of `u^β` on the walls
//!   `x_j ∈ {0, L}` at the points `x_β = m_β h`, other coordinates at
//!   half-integers. Together with the normal faces on the walls they form
//!   the Dirichlet trace.
//!
//! Multi-indices are `[usize; 3]` with axis 0 fastest in flat arrays.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Dirichlet,
}

/// Grid descriptor. Periodic grids model the torus `[0, L)^d` (the unit cell
/// `Y` when `L = 1`); Dirichlet grids model the box `(0, L)^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub boundary: Boundary,
    pub dim: usize,
    pub n: usize,
    pub length: f64,
}

pub type Multi = [usize; 3];

#[inline]
pub(crate) fn linear(dims: &Multi, d: usize, m: &Multi) -> usize {
    let mut idx = 0;
    let mut stride = 1;
    for k in 0..d {
        debug_assert!(m[k] < dims[k]);
        idx += m[k] * stride;
        stride *= dims[k];
    }
    idx
}

#[inline]
pub(crate) fn multi(dims: &Multi, d: usize, mut idx: usize) -> Multi {
    let mut m = [0; 3];
    for k in 0..d {
        m[k] = idx % dims[k];
        idx /= dims[k];
    }
    m
}

fn volume(dims: &Multi, d: usize) -> usize {
    dims[..d].iter().product()
}

impl Grid {
    fn build(boundary: Boundary, dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::GridMismatch(format!("dimension {dim} not supported (2 or 3)")));
        }
        if n < 4 {
            return Err(Error::GridMismatch(format!("resolution {n} < 4")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::GridMismatch(format!("domain length {length} must be positive")));
        }
        Ok(Self {
            boundary,
            dim,
            n,
            length,
        })
    }

    /// The unit cell `Y = [0,1)^d` with `n` cells per axis.
    pub fn periodic(dim: usize, n: usize) -> Result<Self> {
        Self::build(Boundary::Periodic, dim, n, 1.0)
    }

    /// A torus `[0, L)^d`, e.g. several periods of the cell.
    pub fn torus(dim: usize, n: usize, length: f64) -> Result<Self> {
        Self::build(Boundary::Periodic, dim, n, length)
    }

    /// The box `(0, L)^d` with no-slip-type Dirichlet data.
    pub fn boxed(dim: usize, n: usize, length: f64) -> Result<Self> {
        Self::build(Boundary::Dirichlet, dim, n, length)
    }

    pub fn is_periodic(&self) -> bool {
        self.boundary == Boundary::Periodic
    }

    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn cell_dims(&self) -> Multi {
        let mut dims = [1; 3];
        dims[..self.dim].fill(self.n);
        dims
    }

    pub fn n_cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn cell_multi(&self, idx: usize) -> Multi {
        multi(&self.cell_dims(), self.dim, idx)
    }

    pub fn cell_index(&self, m: &Multi) -> usize {
        linear(&self.cell_dims(), self.dim, m)
    }

    pub fn cell_center(&self, idx: usize) -> [f64; 3] {
        let m = self.cell_multi(idx);
        let h = self.h();
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = (m[k] as f64 + 0.5) * h;
        }
        x
    }

    /// Shape of the face array of component `beta`.
    pub fn face_dims(&self, beta: usize) -> Multi {
        let mut dims = self.cell_dims();
        if !self.is_periodic() {
            dims[beta] = self.n + 1;
        }
        dims
    }

    pub fn n_faces(&self, beta: usize) -> usize {
        volume(&self.face_dims(beta), self.dim)
    }

    pub fn face_offset(&self, beta: usize) -> usize {
        (0..beta).map(|b| self.n_faces(b)).sum()
    }

    /// Total velocity faces (all components).
    pub fn n_vel(&self) -> usize {
        (0..self.dim).map(|b| self.n_faces(b)).sum()
    }

    pub fn face_index(&self, beta: usize, m: &Multi) -> usize {
        self.face_offset(beta) + linear(&self.face_dims(beta), self.dim, m)
    }

    /// `(component, multi-index)` of a flat face index.
    pub fn face_of(&self, idx: usize) -> (usize, Multi) {
        let mut rest = idx;
        for beta in 0..self.dim {
            let nf = self.n_faces(beta);
            if rest < nf {
                return (beta, multi(&self.face_dims(beta), self.dim, rest));
            }
            rest -= nf;
        }
        panic!("face index {idx} out of range");
    }

    pub fn face_position(&self, beta: usize, m: &Multi) -> [f64; 3] {
        let h = self.h();
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = if k == beta {
                m[k] as f64 * h
            } else {
                (m[k] as f64 + 0.5) * h
            };
        }
        x
    }

    /// Normal faces lying on the box walls (always `false` when periodic).
    pub fn face_on_boundary(&self, beta: usize, m: &Multi) -> bool {
        !self.is_periodic() && (m[beta] == 0 || m[beta] == self.n)
    }

    /// Ordered pairs `(j, β)`, `j ≠ β`, in storage order.
    pub fn ordered_pairs(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for j in 0..self.dim {
            for beta in 0..self.dim {
                if j != beta {
                    v.push((j, beta));
                }
            }
        }
        v
    }

    /// Shape of the wall-data array for `(j, β)`: `dims[j] = 2` indexes the side.
    pub fn wall_dims(&self, j: usize, beta: usize) -> Multi {
        let mut dims = self.cell_dims();
        dims[j] = 2;
        dims[beta] = self.n + 1;
        dims
    }

    pub fn n_wall(&self) -> usize {
        if self.is_periodic() {
            return 0;
        }
        self.ordered_pairs()
            .iter()
            .map(|&(j, b)| volume(&self.wall_dims(j, b), self.dim))
            .sum()
    }

    fn wall_offset(&self, j: usize, beta: usize) -> usize {
        let mut off = 0;
        for (jj, bb) in self.ordered_pairs() {
            if (jj, bb) == (j, beta) {
                return off;
            }
            off += volume(&self.wall_dims(jj, bb), self.dim);
        }
        unreachable!()
    }

    /// Index of a wall value within the wall array (not the extended layout).
    pub fn wall_index(&self, j: usize, beta: usize, m: &Multi) -> usize {
        self.wall_offset(j, beta) + linear(&self.wall_dims(j, beta), self.dim, m)
    }

    pub fn wall_position(&self, j: usize, beta: usize, m: &Multi) -> [f64; 3] {
        let h = self.h();
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = if k == j {
                m[k] as f64 * self.length
            } else if k == beta {
                m[k] as f64 * h
            } else {
                (m[k] as f64 + 0.5) * h
            };
        }
        x
    }

    /// Unknowns + wall data.
    pub fn n_ext(&self) -> usize {
        self.n_vel() + self.n_wall()
    }

    /// Coordinate planes `{j < β}`.
    pub fn planes(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for j in 0..self.dim {
            for beta in j + 1..self.dim {
                v.push((j, beta));
            }
        }
        v
    }

    /// Edge array shape for a plane: edges sit at integer `x_j`, `x_β`.
    pub fn edge_dims(&self, j: usize, beta: usize) -> Multi {
        let mut dims = self.cell_dims();
        if !self.is_periodic() {
            dims[j] = self.n + 1;
            dims[beta] = self.n + 1;
        }
        dims
    }

    pub fn n_edges(&self, j: usize, beta: usize) -> usize {
        volume(&self.edge_dims(j, beta), self.dim)
    }

    /// Volume `L^d`.
    pub fn domain_volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }

    /// Cells per coefficient period for scale `eps`, if integral.
    pub fn cells_per_period(&self, eps: f64) -> Result<usize> {
        let k = eps / self.h();
        let kr = k.round();
        if kr < 1.0 || (k - kr).abs() > 1e-9 * k.max(1.0) {
            return Err(Error::ScaleNotResolved { eps, h: self.h() });
        }
        if self.is_periodic() {
            let periods = self.length / eps;
            if (periods - periods.round()).abs() > 1e-9 * periods.max(1.0) {
                return Err(Error::ScaleNotResolved { eps, h: self.h() });
            }
        }
        Ok(kr as usize)
    }
}

/// Velocity on the faces of a grid, plus wall data on boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridVelocity {
    pub grid: Grid,
    /// `grid.n_vel()` face values, components concatenated.
    pub values: Vec<f64>,
    /// `grid.n_wall()` tangential wall values (empty when periodic).
    pub wall: Vec<f64>,
}

impl GridVelocity {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            values: vec![0.0; grid.n_vel()],
            wall: vec![0.0; grid.n_wall()],
            grid,
        }
    }

    pub fn from_parts(grid: Grid, values: Vec<f64>, wall: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_vel() || wall.len() != grid.n_wall() {
            return Err(Error::GridMismatch(format!(
                "velocity arrays ({}, {}) do not match grid ({}, {})",
                values.len(),
                wall.len(),
                grid.n_vel(),
                grid.n_wall()
            )));
        }
        Ok(Self { grid, values, wall })
    }

    /// Samples `f(x)` (a `d`-vector) at faces and wall points.
    pub fn sample(grid: Grid, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let d = grid.dim;
        let mut values = vec![0.0; grid.n_vel()];
        for (idx, v) in values.iter_mut().enumerate() {
            let (beta, m) = grid.face_of(idx);
            *v = f(&grid.face_position(beta, &m)[..d])[beta];
        }
        let mut wall = vec![0.0; grid.n_wall()];
        if !grid.is_periodic() {
            for (j, beta) in grid.ordered_pairs() {
                let dims = grid.wall_dims(j, beta);
                for k in 0..volume(&dims, d) {
                    let m = multi(&dims, d, k);
                    wall[grid.wall_index(j, beta, &m)] = f(&grid.wall_position(j, beta, &m)[..d])[beta];
                }
            }
        }
        Self { grid, values, wall }
    }

    /// Face values followed by wall data.
    pub fn ext(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.grid.n_ext());
        v.extend_from_slice(&self.values);
        v.extend_from_slice(&self.wall);
        v
    }

    pub fn from_ext(grid: Grid, ext: &[f64]) -> Self {
        let nv = grid.n_vel();
        Self {
            grid,
            values: ext[..nv].to_vec(),
            wall: ext[nv..].to_vec(),
        }
    }

    pub fn component(&self, beta: usize) -> &[f64] {
        let off = self.grid.face_offset(beta);
        &self.values[off..off + self.grid.n_faces(beta)]
    }

    /// Face-average of each component.
    pub fn component_means(&self) -> Vec<f64> {
        (0..self.grid.dim)
            .map(|b| {
                let c = self.component(b);
                crate::sparse::stable_sum(c.iter().copied()) / c.len() as f64
            })
            .collect()
    }

    /// `‖u‖_{L²}` with half weights on wall-normal faces.
    pub fn l2_norm(&self) -> f64 {
        let g = &self.grid;
        let mut s = Vec::with_capacity(self.values.len());
        for (idx, v) in self.values.iter().enumerate() {
            let (beta, m) = g.face_of(idx);
            let w = if g.face_on_boundary(beta, &m) { 0.5 } else { 1.0 };
            s.push(w * v * v);
        }
        (crate::sparse::stable_sum(s) * g.cell_volume()).sqrt()
    }

    pub fn axpy(&mut self, a: f64, other: &GridVelocity) {
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
        for (x, y) in self.wall.iter_mut().zip(&other.wall) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| a * v).collect(),
            wall: self.wall.iter().map(|v| a * v).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().chain(&self.wall).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Cell-centred scalar (pressure, divergence data).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPressure {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridPressure {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            values: vec![0.0; grid.n_cells()],
            grid,
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::GridMismatch(format!(
                "{} pressure values for {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn sample(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.n_cells())
            .map(|c| f(&grid.cell_center(c)[..grid.dim]))
            .collect();
        Self { grid, values }
    }

    pub fn mean(&self) -> f64 {
        crate::sparse::stable_sum(self.values.iter().copied()) / self.values.len() as f64
    }

    pub fn remove_mean(&mut self) {
        let m = self.mean();
        self.values.iter_mut().for_each(|v| *v -= m);
    }

    pub fn l2_norm(&self) -> f64 {
        (crate::sparse::stable_sum(self.values.iter().map(|v| v * v)) * self.grid.cell_volume()).sqrt()
    }

    /// `∫ p` by the midpoint rule.
    pub fn integral(&self) -> f64 {
        crate::sparse::stable_sum(self.values.iter().copied()) * self.grid.cell_volume()
    }
}

/// JSON header stored next to a field CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub schema: String,
    pub kind: String,
    pub grid: Grid,
    pub layout: String,
    pub rows: usize,
}

pub const FIELD_SCHEMA: &str = "stokes-homog/field/1";

const VELOCITY_LAYOUT: &str = "rows: kind(face|wall), component, flat index within kind/component block, x1..xd, value; faces: component β at x_β = m_β h, other axes at (m+1/2)h, axis 0 fastest; wall rows ordered by (j, β) pairs then side-major multi-index";
const PRESSURE_LAYOUT: &str = "rows: cell index, x1..xd (cell centre), value; axis 0 fastest";

fn fmt_value(v: f64) -> String {
    // `{:e}` is the shortest representation that round-trips exactly.
    format!("{v:e}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn coords_header(d: usize) -> String {
    (1..=d).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",")
}

impl GridVelocity {
    /// Writes `<dir>/<name>.csv` and `<dir>/<name>.json`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        let g = &self.grid;
        let d = g.dim;
        let mut out = format!("kind,component,index,{},value\n", coords_header(d));
        for (idx, v) in self.values.iter().enumerate() {
            let (beta, m) = g.face_of(idx);
            let x = g.face_position(beta, &m);
            let local = idx - g.face_offset(beta);
            out.push_str(&format!("face,{beta},{local}"));
            for xk in &x[..d] {
                out.push_str(&format!(",{}", fmt_value(*xk)));
            }
            out.push_str(&format!(",{}\n", fmt_value(*v)));
        }
        if !g.is_periodic() {
            for (j, beta) in g.ordered_pairs() {
                let dims = g.wall_dims(j, beta);
                for k in 0..volume(&dims, d) {
                    let m = multi(&dims, d, k);
                    let x = g.wall_position(j, beta, &m);
                    out.push_str(&format!("wall{j},{beta},{k}"));
                    for xk in &x[..d] {
                        out.push_str(&format!(",{}", fmt_value(*xk)));
                    }
                    out.push_str(&format!(",{}\n", fmt_value(self.wall[g.wall_index(j, beta, &m)])));
                }
            }
        }
        write_text(&dir.join(format!("{name}.csv")), &out)?;
        let header = FieldHeader {
            schema: FIELD_SCHEMA.into(),
            kind: "velocity".into(),
            grid: *g,
            layout: VELOCITY_LAYOUT.into(),
            rows: self.values.len() + self.wall.len(),
        };
        write_text(
            &dir.join(format!("{name}.json")),
            &(serde_json::to_string_pretty(&header)? + "\n"),
        )
    }

    pub fn read(dir: &Path, name: &str) -> Result<Self> {
        let header = read_header(dir, name, "velocity")?;
        let values = read_last_column(&dir.join(format!("{name}.csv")))?;
        let nv = header.grid.n_vel();
        if values.len() != header.grid.n_ext() {
            return Err(Error::GridMismatch(format!("{name}.csv has {} rows", values.len())));
        }
        Self::from_parts(header.grid, values[..nv].to_vec(), values[nv..].to_vec())
    }
}

impl GridPressure {
    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        let g = &self.grid;
        let d = g.dim;
        let mut out = format!("index,{},value\n", coords_header(d));
        for (c, v) in self.values.iter().enumerate() {
            out.push_str(&c.to_string());
            for xk in &g.cell_center(c)[..d] {
                out.push_str(&format!(",{}", fmt_value(*xk)));
            }
            out.push_str(&format!(",{}\n", fmt_value(*v)));
        }
        write_text(&dir.join(format!("{name}.csv")), &out)?;
        let header = FieldHeader {
            schema: FIELD_SCHEMA.into(),
            kind: "pressure".into(),
            grid: *g,
            layout: PRESSURE_LAYOUT.into(),
            rows: self.values.len(),
        };
        write_text(
            &dir.join(format!("{name}.json")),
            &(serde_json::to_string_pretty(&header)? + "\n"),
        )
    }

    pub fn read(dir: &Path, name: &str) -> Result<Self> {
        let header = read_header(dir, name, "pressure")?;
        let values = read_last_column(&dir.join(format!("{name}.csv")))?;
        Self::from_values(header.grid, values)
    }
}

fn read_header(dir: &Path, name: &str, kind: &str) -> Result<FieldHeader> {
    let path = dir.join(format!("{name}.json"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let header: FieldHeader = serde_json::from_str(&text)?;
    if header.kind != kind {
        return Err(Error::GridMismatch(format!("{name} holds a {} field, not {kind}", header.kind)));
    }
    Ok(header)
}

fn read_last_column(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let last = rec.get(rec.len() - 1).unwrap_or("");
        out.push(
            last.parse::<f64>()
                .map_err(|_| Error::GridMismatch(format!("bad value '{last}' in {}", path.display())))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dof_counts() {
        let p = Grid::periodic(2, 8).unwrap();
        assert_eq!(p.n_vel(), 2 * 64);
        assert_eq!(p.n_cells(), 64);
        assert_eq!(p.n_wall(), 0);
        let b = Grid::boxed(2, 8, 1.0).unwrap();
        assert_eq!(b.n_vel(), 2 * 9 * 8);
        assert_eq!(b.n_wall(), 2 * 2 * 9);
        let b3 = Grid::boxed(3, 4, 1.0).unwrap();
        assert_eq!(b3.n_vel(), 3 * 5 * 16);
        assert_eq!(b3.n_wall(), 6 * 2 * 5 * 4);
        assert!(Grid::periodic(2, 3).is_err());
    }

    #[test]
    fn face_index_round_trip() {
        let g = Grid::boxed(3, 5, 2.0).unwrap();
        for idx in 0..g.n_vel() {
            let (b, m) = g.face_of(idx);
            assert_eq!(g.face_index(b, &m), idx);
        }
    }

    #[test]
    fn boundary_partition_is_disjoint_and_exact() {
        let g = Grid::boxed(2, 6, 1.0).unwrap();
        let mut boundary = 0;
        for idx in 0..g.n_vel() {
            let (b, m) = g.face_of(idx);
            if g.face_on_boundary(b, &m) {
                boundary += 1;
            }
        }
        assert_eq!(boundary, 2 * 2 * 6);
    }

    #[test]
    fn cells_per_period_requires_divisibility() {
        let g = Grid::boxed(2, 256, 1.0).unwrap();
        assert_eq!(g.cells_per_period(1.0 / 8.0).unwrap(), 32);
        assert!(g.cells_per_period(1.0 / 3.0).is_err());
        let t = Grid::torus(2, 24, 3.0).unwrap();
        assert_eq!(t.cells_per_period(1.0).unwrap(), 8);
    }

    #[test]
    fn field_io_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::boxed(2, 4, 1.0).unwrap();
        let u = GridVelocity::sample(g, |x| vec![x[0].sin() + 0.1, x[1] * x[0] - 1.0 / 3.0]);
        u.write(dir.path(), "u").unwrap();
        assert_eq!(GridVelocity::read(dir.path(), "u").unwrap(), u);
        let p = GridPressure::sample(g, |x| x[0] - x[1] / 7.0);
        p.write(dir.path(), "p").unwrap();
        assert_eq!(GridPressure::read(dir.path(), "p").unwrap(), p);
        assert!(GridPressure::read(dir.path(), "u").is_err());
    }
}
