//! Masked lattices with a staggered layout.
//!
//! Unknowns live on nodes, gradients and coefficients on cells. The cell
//! gradient is the forward difference from the cell's lower corner node, and
//! the divergence is defined as the negative transpose of that map, so
//! summation by parts holds exactly.
//!
//! Cells and nodes are indexed with the first axis fastest.

pub mod snapshot;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::ComplexMat;
use crate::sum::pairwise_sum_by;

pub const MIN_CELLS_PER_AXIS: usize = 8;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid input: {0}")]
    InvalidInput(String),
    #[error("grid has no interior nodes")]
    EmptyInterior,
    #[error("integration region is empty")]
    EmptyRegion,
    #[error("field size {got} does not match the grid ({expected})")]
    SizeMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, GridError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mask {
    Rectangle,
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// Cells of `parent` whose centers also lie in the given open ball.
    Restricted {
        parent: Box<Mask>,
        center: Vec<f64>,
        radius: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeClass {
    /// Every adjacent cell is active; the node carries an unknown.
    Interior,
    /// Touches an active cell but is not interior; carries Dirichlet data.
    Boundary,
    Exterior,
}

#[derive(Clone, Debug)]
pub struct GridDomain {
    n: usize,
    shape: [usize; 3],
    h: f64,
    mask: Mask,
    cell_stride: [usize; 3],
    node_stride: [usize; 3],
    cell_count: usize,
    node_count: usize,
    active: Vec<bool>,
    active_cells: Vec<usize>,
    node_class: Vec<NodeClass>,
    free_nodes: Vec<usize>,
    boundary_nodes: Vec<usize>,
}

fn strides(dims: [usize; 3]) -> [usize; 3] {
    [1, dims[0], dims[0] * dims[1]]
}

pub fn make_grid(n: usize, shape: &[usize], h: f64, mask: Mask) -> Result<GridDomain> {
    if n != 2 && n != 3 {
        return Err(GridError::InvalidInput(format!(
            "dimension {n} not in {{2, 3}}"
        )));
    }
    if shape.len() != n {
        return Err(GridError::InvalidInput(format!(
            "shape has {} axes, expected {n}",
            shape.len()
        )));
    }
    if shape.iter().any(|&s| s < MIN_CELLS_PER_AXIS) {
        return Err(GridError::InvalidInput(format!(
            "need at least {MIN_CELLS_PER_AXIS} cells per axis, got {shape:?}"
        )));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(GridError::InvalidInput(format!(
            "spacing {h} must be positive"
        )));
    }
    check_mask(&mask, n)?;
    let mut s = [1usize; 3];
    s[..n].copy_from_slice(shape);
    let cell_count = s[0] * s[1] * s[2];
    let mut g = GridDomain {
        n,
        shape: s,
        h,
        mask,
        cell_stride: strides(s),
        node_stride: [0; 3],
        cell_count,
        node_count: 0,
        active: Vec::new(),
        active_cells: Vec::new(),
        node_class: Vec::new(),
        free_nodes: Vec::new(),
        boundary_nodes: Vec::new(),
    };
    let mut nd = [1usize; 3];
    for a in 0..n {
        nd[a] = s[a] + 1;
    }
    g.node_stride = strides(nd);
    g.node_count = nd[0] * nd[1] * nd[2];
    let active: Vec<bool> = (0..cell_count)
        .map(|c| mask_contains(&g.mask, &g.cell_center(c)[..n]))
        .collect();
    g.set_active(active)?;
    Ok(g)
}

fn check_mask(mask: &Mask, n: usize) -> Result<()> {
    match mask {
        Mask::Rectangle => Ok(()),
        Mask::Ball { center, radius } => check_ball(center, *radius, n),
        Mask::Restricted {
            parent,
            center,
            radius,
        } => {
            check_ball(center, *radius, n)?;
            check_mask(parent, n)
        }
    }
}

fn check_ball(center: &[f64], radius: f64, n: usize) -> Result<()> {
    if center.len() != n || center.iter().any(|c| !c.is_finite()) {
        return Err(GridError::InvalidInput(format!(
            "ball center {center:?} is not a point of R^{n}"
        )));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(GridError::InvalidInput(format!(
            "ball radius {radius} must be positive"
        )));
    }
    Ok(())
}

fn in_ball(x: &[f64], center: &[f64], radius: f64) -> bool {
    let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
    d2 < radius * radius
}

fn mask_contains(mask: &Mask, x: &[f64]) -> bool {
    match mask {
        Mask::Rectangle => true,
        Mask::Ball { center, radius } => in_ball(x, center, *radius),
        Mask::Restricted {
            parent,
            center,
            radius,
        } => in_ball(x, center, *radius) && mask_contains(parent, x),
    }
}

impl GridDomain {
    fn set_active(&mut self, active: Vec<bool>) -> Result<()> {
        self.active_cells = (0..self.cell_count).filter(|&c| active[c]).collect();
        self.active = active;
        let classes: Vec<NodeClass> = (0..self.node_count).map(|j| self.classify(j)).collect();
        self.free_nodes = (0..self.node_count)
            .filter(|&j| classes[j] == NodeClass::Interior)
            .collect();
        self.boundary_nodes = (0..self.node_count)
            .filter(|&j| classes[j] == NodeClass::Boundary)
            .collect();
        self.node_class = classes;
        if self.free_nodes.is_empty() {
            return Err(GridError::EmptyInterior);
        }
        Ok(())
    }

    fn classify(&self, j: usize) -> NodeClass {
        let jm = self.node_multi(j);
        let mut total = 0;
        let mut on = 0;
        for corner in 0..(1usize << self.n) {
            let mut idx = [0usize; 3];
            let mut valid = true;
            for a in 0..self.n {
                let off = (corner >> a) & 1;
                if jm[a] < off || jm[a] - off >= self.shape[a] {
                    valid = false;
                    break;
                }
                idx[a] = jm[a] - off;
            }
            total += 1;
            if valid && self.active[self.cell_index(idx)] {
                on += 1;
            }
        }
        match on {
            0 => NodeClass::Exterior,
            k if k == total => NodeClass::Interior,
            _ => NodeClass::Boundary,
        }
    }

    /// Sub-domain on the same lattice: active cells whose centers lie in the
    /// open ball.
    pub fn restrict_to_ball(&self, center: &[f64], radius: f64) -> Result<GridDomain> {
        check_ball(center, radius, self.n)?;
        let mut g = self.clone();
        g.mask = Mask::Restricted {
            parent: Box::new(self.mask.clone()),
            center: center.to_vec(),
            radius,
        };
        let active = (0..self.cell_count)
            .map(|c| self.active[c] && in_ball(&self.cell_center(c)[..self.n], center, radius))
            .collect();
        g.set_active(active)?;
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape[..self.n]
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn cell_count(&self) -> usize {
        self.cell_count
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn is_active(&self, c: usize) -> bool {
        self.active[c]
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn active_cells(&self) -> &[usize] {
        &self.active_cells
    }

    pub fn node_class(&self, j: usize) -> NodeClass {
        self.node_class[j]
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.n as i32)
    }

    /// `|Ω|` as active cell count times `hⁿ`.
    pub fn measure(&self) -> f64 {
        self.active_cells.len() as f64 * self.cell_volume()
    }

    pub fn cell_stride(&self) -> [usize; 3] {
        self.cell_stride
    }

    pub fn node_stride(&self) -> [usize; 3] {
        self.node_stride
    }

    pub fn cell_multi(&self, c: usize) -> [usize; 3] {
        [
            c % self.shape[0],
            (c / self.shape[0]) % self.shape[1],
            c / (self.shape[0] * self.shape[1]),
        ]
    }

    pub fn cell_index(&self, m: [usize; 3]) -> usize {
        m[0] + self.cell_stride[1] * m[1] + self.cell_stride[2] * m[2]
    }

    pub fn node_multi(&self, j: usize) -> [usize; 3] {
        let nx = self.shape[0] + 1;
        let ny = if self.n >= 2 { self.shape[1] + 1 } else { 1 };
        [j % nx, (j / nx) % ny, j / (nx * ny)]
    }

    pub fn node_index(&self, m: [usize; 3]) -> usize {
        m[0] + self.node_stride[1] * m[1] + self.node_stride[2] * m[2]
    }

    /// Lower-corner node of a cell.
    pub fn cell_base_node(&self, c: usize) -> usize {
        self.node_index(self.cell_multi(c))
    }

    pub fn cell_center(&self, c: usize) -> [f64; 3] {
        let m = self.cell_multi(c);
        let mut x = [0.0; 3];
        for a in 0..self.n {
            x[a] = (m[a] as f64 + 0.5) * self.h;
        }
        x
    }

    pub fn node_coord(&self, j: usize) -> [f64; 3] {
        let m = self.node_multi(j);
        let mut x = [0.0; 3];
        for a in 0..self.n {
            x[a] = m[a] as f64 * self.h;
        }
        x
    }

    /// Extent of the bounding box along each axis.
    pub fn extent(&self) -> [f64; 3] {
        let mut e = [0.0; 3];
        for (e, &s) in e.iter_mut().zip(&self.shape).take(self.n) {
            *e = s as f64 * self.h;
        }
        e
    }

    /// Diameter of the union of active cells.
    pub fn diam(&self) -> f64 {
        // The farthest pair is attained at corners of the first or last
        // active cell of some lattice line along the first axis.
        let nx = self.shape[0];
        let lines = self.cell_count / nx;
        let mut pts: Vec<[f64; 3]> = Vec::new();
        for l in 0..lines {
            let row = &self.active[l * nx..(l + 1) * nx];
            let (Some(first), Some(last)) =
                (row.iter().position(|&a| a), row.iter().rposition(|&a| a))
            else {
                continue;
            };
            for c in [l * nx + first, l * nx + last] {
                let m = self.cell_multi(c);
                for corner in 0..(1usize << self.n) {
                    let mut x = [0.0; 3];
                    for a in 0..self.n {
                        x[a] = (m[a] + ((corner >> a) & 1)) as f64 * self.h;
                    }
                    pts.push(x);
                }
            }
        }
        let mut best = 0.0f64;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
                best = best.max(d2);
            }
        }
        best.sqrt()
    }

    fn check_len(&self, expected: usize, got: usize) -> Result<()> {
        if expected != got {
            return Err(GridError::SizeMismatch { expected, got });
        }
        Ok(())
    }

    /// Forward-difference cell gradient of a node field with `ncomp`
    /// components. Inactive cells get a zero gradient.
    ///
    /// `out` holds one row-major `ncomp × n` block per cell.
    pub fn gradient_into(&self, u: &[Complex64], ncomp: usize, out: &mut [Complex64]) {
        let n = self.n;
        let block = ncomp * n;
        let inv_h = 1.0 / self.h;
        assert_eq!(u.len(), self.node_count * ncomp);
        assert_eq!(out.len(), self.cell_count * block);
        out.par_chunks_mut(block).enumerate().for_each(|(c, g)| {
            if !self.active[c] {
                g.fill(Complex64::new(0.0, 0.0));
                return;
            }
            let b = self.cell_base_node(c);
            for k in 0..ncomp {
                let u0 = u[b * ncomp + k];
                for a in 0..n {
                    g[k * n + a] = (u[(b + self.node_stride[a]) * ncomp + k] - u0) * inv_h;
                }
            }
        });
    }

    /// Transpose of [`GridDomain::gradient_into`]: `out = Dᵀ g` on all nodes.
    pub fn gradient_transpose_into(&self, g: &[Complex64], ncomp: usize, out: &mut [Complex64]) {
        let n = self.n;
        let block = ncomp * n;
        let inv_h = 1.0 / self.h;
        assert_eq!(g.len(), self.cell_count * block);
        assert_eq!(out.len(), self.node_count * ncomp);
        out.par_chunks_mut(ncomp).enumerate().for_each(|(j, o)| {
            o.fill(Complex64::new(0.0, 0.0));
            let m = self.node_multi(j);
            let own = (0..n).all(|a| m[a] < self.shape[a]);
            if own {
                let c = self.cell_index(m);
                if self.active[c] {
                    for k in 0..ncomp {
                        for a in 0..n {
                            o[k] -= g[c * block + k * n + a] * inv_h;
                        }
                    }
                }
            }
            for a in 0..n {
                if m[a] == 0 || (0..n).any(|b| b != a && m[b] >= self.shape[b]) {
                    continue;
                }
                let mut cm = m;
                cm[a] -= 1;
                let c = self.cell_index(cm);
                if self.active[c] {
                    for k in 0..ncomp {
                        o[k] += g[c * block + k * n + a] * inv_h;
                    }
                }
            }
        });
    }

    pub fn discrete_gradient(&self, u: &NodeField) -> Result<CellField> {
        self.check_len(self.node_count * u.ncomp, u.values.len())?;
        let mut out = CellField::zeros(self, u.ncomp);
        self.gradient_into(&u.values, u.ncomp, &mut out.values);
        Ok(out)
    }

    /// `div G = −Dᵀ G` on every node.
    pub fn discrete_divergence(&self, g: &CellField) -> Result<NodeField> {
        if g.cols != self.n {
            return Err(GridError::InvalidInput(format!(
                "cell field has {} columns, grid dimension {}",
                g.cols, self.n
            )));
        }
        self.check_len(self.cell_count * g.rows * g.cols, g.values.len())?;
        let mut out = NodeField::zeros(self, g.rows);
        self.gradient_transpose_into(&g.values, g.rows, &mut out.values);
        out.values.par_iter_mut().for_each(|v| *v = -*v);
        Ok(out)
    }

    /// `∫_Ω f` for a real cell field, as `hⁿ` times a pairwise sum over active cells.
    pub fn integrate_cells(&self, f: &[f64]) -> Result<f64> {
        self.check_len(self.cell_count, f.len())?;
        let ac = &self.active_cells;
        Ok(self.cell_volume() * pairwise_sum_by(ac.len(), |i| f[ac[i]]))
    }

    /// `∫_{region ∩ Ω} f`.
    pub fn integrate_cells_in(&self, f: &[f64], region: &[bool]) -> Result<f64> {
        self.check_len(self.cell_count, f.len())?;
        self.check_len(self.cell_count, region.len())?;
        let cells: Vec<usize> = self
            .active_cells
            .iter()
            .copied()
            .filter(|&c| region[c])
            .collect();
        if cells.is_empty() {
            return Err(GridError::EmptyRegion);
        }
        Ok(self.cell_volume() * pairwise_sum_by(cells.len(), |i| f[cells[i]]))
    }

    /// Component-wise integral of a complex cell field.
    pub fn integrate_cells_complex(&self, f: &[Complex64]) -> Result<Complex64> {
        self.check_len(self.cell_count, f.len())?;
        let ac = &self.active_cells;
        let re = pairwise_sum_by(ac.len(), |i| f[ac[i]].re);
        let im = pairwise_sum_by(ac.len(), |i| f[ac[i]].im);
        Ok(Complex64::new(re, im) * self.cell_volume())
    }

    /// Integral of a real node field, each active cell taking the mean of
    /// its corner values.
    pub fn integrate_nodes(&self, f: &[f64]) -> Result<f64> {
        self.check_len(self.node_count, f.len())?;
        let corners = 1usize << self.n;
        let ac = &self.active_cells;
        let s = pairwise_sum_by(ac.len(), |i| {
            let b = self.cell_base_node(ac[i]);
            let mut acc = 0.0;
            for corner in 0..corners {
                let mut j = b;
                for a in 0..self.n {
                    if (corner >> a) & 1 == 1 {
                        j += self.node_stride[a];
                    }
                }
                acc += f[j];
            }
            acc / corners as f64
        });
        Ok(self.cell_volume() * s)
    }

    pub fn mean_cells(&self, f: &[f64]) -> Result<f64> {
        Ok(self.integrate_cells(f)? / self.measure())
    }
}

/// Where a ball is centered relative to the cell lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Centering {
    Node,
    Cell,
}

/// Run of cells `x_lo..x_hi` (relative) on the lattice line offset by `(dy, dz)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub dy: isize,
    pub dz: isize,
    pub x_lo: isize,
    pub x_hi: isize,
}

/// Cells whose centers lie strictly inside a lattice ball, as row segments
/// relative to a reference cell.
///
/// For [`Centering::Cell`] the reference cell is the center cell. For
/// [`Centering::Node`] it is the cell whose lower corner is the center node.
#[derive(Clone, Debug)]
pub struct BallStencil {
    pub radius: f64,
    pub segments: Vec<Segment>,
    pub count: usize,
}

impl BallStencil {
    pub fn new(n: usize, radius: f64, h: f64, centering: Centering) -> Self {
        let off = match centering {
            Centering::Node => 0.5,
            Centering::Cell => 0.0,
        };
        let rr = (radius / h).powi(2);
        let k = (radius / h).ceil() as isize + 1;
        let zs = if n == 3 { -k..=k } else { 0..=0 };
        let mut segments = Vec::new();
        let mut count = 0;
        for dz in zs {
            let z2 = if n == 3 {
                (dz as f64 + off).powi(2)
            } else {
                0.0
            };
            for dy in -k..=k {
                let yz = (dy as f64 + off).powi(2) + z2;
                let inside: Vec<isize> = (-k..=k)
                    .filter(|&dx| (dx as f64 + off).powi(2) + yz < rr)
                    .collect();
                if let (Some(&lo), Some(&hi)) = (inside.first(), inside.last()) {
                    segments.push(Segment {
                        dy,
                        dz,
                        x_lo: lo,
                        x_hi: hi + 1,
                    });
                    count += (hi + 1 - lo) as usize;
                }
            }
        }
        BallStencil {
            radius,
            segments,
            count,
        }
    }

    /// Calls `f(line_start, x_lo, x_hi)` for each in-box piece of the ball,
    /// where cells `line_start + x` for `x in x_lo..x_hi` are covered.
    pub fn for_each_run<F: FnMut(usize, usize, usize)>(
        &self,
        grid: &GridDomain,
        reference: [usize; 3],
        mut f: F,
    ) {
        let s = grid.shape;
        for seg in &self.segments {
            let y = reference[1] as isize + seg.dy;
            let z = reference[2] as isize + seg.dz;
            if y < 0 || y >= s[1] as isize || z < 0 || z >= s[2] as isize {
                continue;
            }
            let lo = (reference[0] as isize + seg.x_lo).max(0);
            let hi = (reference[0] as isize + seg.x_hi).min(s[0] as isize);
            if lo >= hi {
                continue;
            }
            let line = grid.cell_stride[1] * y as usize + grid.cell_stride[2] * z as usize;
            f(line, lo as usize, hi as usize);
        }
    }
}

/// Complex node field with `ncomp` components per node, node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeField {
    pub ncomp: usize,
    pub values: Vec<Complex64>,
}

impl NodeField {
    pub fn zeros(grid: &GridDomain, ncomp: usize) -> Self {
        NodeField {
            ncomp,
            values: vec![Complex64::new(0.0, 0.0); grid.node_count() * ncomp],
        }
    }

    /// Samples `f(x)` at every node.
    pub fn from_fn<F: Fn(&[f64]) -> Vec<Complex64> + Sync>(
        grid: &GridDomain,
        ncomp: usize,
        f: F,
    ) -> Self {
        let mut out = Self::zeros(grid, ncomp);
        out.values
            .par_chunks_mut(ncomp)
            .enumerate()
            .for_each(|(j, o)| {
                let x = grid.node_coord(j);
                let v = f(&x[..grid.n()]);
                o.copy_from_slice(&v[..ncomp]);
            });
        out
    }

    pub fn at(&self, j: usize) -> &[Complex64] {
        &self.values[j * self.ncomp..(j + 1) * self.ncomp]
    }

    /// Zeroes every node that is not interior.
    pub fn clear_non_free(&mut self, grid: &GridDomain) {
        let ncomp = self.ncomp;
        self.values
            .par_chunks_mut(ncomp)
            .enumerate()
            .for_each(|(j, o)| {
                if grid.node_class(j) != NodeClass::Interior {
                    o.fill(Complex64::new(0.0, 0.0));
                }
            });
    }

    pub fn vanishes_off_interior(&self, grid: &GridDomain) -> bool {
        (0..grid.node_count()).all(|j| {
            grid.node_class(j) == NodeClass::Interior
                || self.at(j).iter().all(|z| z.norm_sqr() == 0.0)
        })
    }
}

/// Complex `rows × cols` matrix per cell, cell-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Complex64>,
}

impl CellField {
    pub fn zeros(grid: &GridDomain, rows: usize) -> Self {
        CellField {
            rows,
            cols: grid.n(),
            values: vec![Complex64::new(0.0, 0.0); grid.cell_count() * rows * grid.n()],
        }
    }

    /// Samples `f(x)` at every cell center; `f` returns a row-major block.
    pub fn from_fn<F: Fn(&[f64]) -> Vec<Complex64> + Sync>(
        grid: &GridDomain,
        rows: usize,
        f: F,
    ) -> Self {
        let mut out = Self::zeros(grid, rows);
        let block = rows * grid.n();
        out.values
            .par_chunks_mut(block)
            .enumerate()
            .for_each(|(c, o)| {
                let x = grid.cell_center(c);
                let v = f(&x[..grid.n()]);
                o.copy_from_slice(&v[..block]);
            });
        out
    }

    pub fn block(&self) -> usize {
        self.rows * self.cols
    }

    pub fn at(&self, c: usize) -> &[Complex64] {
        let b = self.block();
        &self.values[c * b..(c + 1) * b]
    }

    pub fn at_mut(&mut self, c: usize) -> &mut [Complex64] {
        let b = self.block();
        &mut self.values[c * b..(c + 1) * b]
    }

    pub fn mat(&self, c: usize) -> ComplexMat {
        ComplexMat::from_vec(self.rows, self.cols, self.at(c).to_vec())
            .expect("block has matching size")
    }

    /// `|G(x)|` per cell.
    pub fn norms(&self) -> Vec<f64> {
        self.values
            .par_chunks(self.block())
            .map(|b| crate::algebra::norm_sqr(b).sqrt())
            .collect()
    }

    pub fn sub(&self, other: &CellField) -> CellField {
        assert_eq!(
            (self.rows, self.cols, self.values.len()),
            (other.rows, other.cols, other.values.len())
        );
        CellField {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// Node-valued unknown with its cell gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteState {
    pub u: NodeField,
    pub du: CellField,
}

impl DiscreteState {
    /// State with homogeneous Dirichlet data; fails if `u` is nonzero off the
    /// interior nodes.
    pub fn new(grid: &GridDomain, u: NodeField) -> Result<Self> {
        if !u.vanishes_off_interior(grid) {
            return Err(GridError::InvalidInput(
                "node field does not vanish on the boundary layer".into(),
            ));
        }
        Self::with_boundary_data(grid, u)
    }

    /// State whose boundary nodes may carry Dirichlet data.
    pub fn with_boundary_data(grid: &GridDomain, u: NodeField) -> Result<Self> {
        let du = grid.discrete_gradient(&u)?;
        Ok(DiscreteState { u, du })
    }

    pub fn zeros(grid: &GridDomain, ncomp: usize) -> Self {
        Self::with_boundary_data(grid, NodeField::zeros(grid, ncomp)).expect("sizes match")
    }

    /// Whether `du` is (bitwise) the gradient of `u`.
    pub fn is_consistent(&self, grid: &GridDomain) -> bool {
        grid.discrete_gradient(&self.u)
            .map(|g| g == self.du)
            .unwrap_or(false)
    }
}

/// `Σ_cells hⁿ ⟨G, H⟩` with the complex pairing summed pairwise over all cells.
pub fn cell_inner(grid: &GridDomain, g: &CellField, h: &CellField) -> Complex64 {
    let re = pairwise_sum_by(grid.cell_count(), |c| {
        crate::algebra::cinner_slices(g.at(c), h.at(c)).re
    });
    let im = pairwise_sum_by(grid.cell_count(), |c| {
        crate::algebra::cinner_slices(g.at(c), h.at(c)).im
    });
    Complex64::new(re, im) * grid.cell_volume()
}

/// `Σ_nodes hⁿ ⟨f, g⟩`.
pub fn node_inner(grid: &GridDomain, f: &NodeField, g: &NodeField) -> Complex64 {
    let re = pairwise_sum_by(grid.node_count(), |j| {
        crate::algebra::cinner_slices(f.at(j), g.at(j)).re
    });
    let im = pairwise_sum_by(grid.node_count(), |j| {
        crate::algebra::cinner_slices(f.at(j), g.at(j)).im
    });
    Complex64::new(re, im) * grid.cell_volume()
}
