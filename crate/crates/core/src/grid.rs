//! Uniform structured grids over boxes (optionally masked by a ball) in the
//! upper half-space `{x_n ≥ 0}`, with the thin boundary on `{x_n = 0}`.
//!
//! Nodes are indexed lexicographically with the first axis fastest and the
//! normal axis `x_n` slowest, so the thin layer occupies the first block of
//! indices.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Vertical extent of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vertical {
    /// `x_n ∈ [0, a_n]`. With `symmetric = true`, stencils that cross
    /// `{x_n = 0}` read the even reflection of the stored values.
    Half { symmetric: bool },
    /// `x_n ∈ [−a_n, a_n]`, no reflection.
    Full,
}

/// Role of a node in a boundary-value problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    /// Outer boundary: box faces other than `{x_n = 0}`, and nodes on or
    /// outside the masking sphere.
    Dirichlet,
    /// Inside the domain on `{x_n = 0}`.
    Thin,
    Interior,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    h: f64,
    extent: Vec<f64>,
    counts: [usize; 3],
    vertical: Vertical,
    ball: Option<f64>,
    roles: Vec<NodeRole>,
}

fn steps(a: f64, h: f64) -> Result<usize> {
    let m = a / h;
    let r = m.round();
    if r < 1.0 || (m - r).abs() > 1e-9 * m.max(1.0) {
        return invalid(format!("spacing h={h} does not divide half-width {a}"));
    }
    Ok(r as usize)
}

impl Grid {
    /// Box grid with the given half-widths (one per axis).
    pub fn new(dim: usize, h: f64, extent: &[f64], vertical: Vertical) -> Result<Self> {
        Self::build(dim, h, extent, vertical, None)
    }

    /// Box `[-R,R]^{n-1} × [0,R]` masked by the ball of radius `R` centred at
    /// the origin: nodes with `|x| ≥ R` are Dirichlet nodes.
    pub fn half_ball(dim: usize, h: f64, radius: f64, symmetric: bool) -> Result<Self> {
        Self::build(
            dim,
            h,
            &vec![radius; dim],
            Vertical::Half { symmetric },
            Some(radius),
        )
    }

    /// Box `[-R,R]^{n-1} × [0,R]` without a mask.
    pub fn half_box(dim: usize, h: f64, radius: f64, symmetric: bool) -> Result<Self> {
        Self::new(dim, h, &vec![radius; dim], Vertical::Half { symmetric })
    }

    fn build(
        dim: usize,
        h: f64,
        extent: &[f64],
        vertical: Vertical,
        ball: Option<f64>,
    ) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return invalid(format!("dimension must be 2 or 3, got {dim}"));
        }
        if !(h > 0.0 && h.is_finite()) {
            return invalid(format!("spacing must be positive, got {h}"));
        }
        if extent.len() != dim || extent.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return invalid("extent must list one positive half-width per axis");
        }
        if let Some(r) = ball {
            if !(r > 0.0) || extent.iter().any(|&a| a < r - 1e-12) {
                return invalid("masking ball must fit inside the box");
            }
        }
        let mut counts = [1usize; 3];
        for k in 0..dim {
            let m = steps(extent[k], h)?;
            counts[k] = if k + 1 == dim && matches!(vertical, Vertical::Half { .. }) {
                m + 1
            } else {
                2 * m + 1
            };
        }
        let mut grid = Grid {
            dim,
            h,
            extent: extent.to_vec(),
            counts,
            vertical,
            ball,
            roles: Vec::new(),
        };
        grid.roles = (0..grid.len()).map(|i| grid.classify(i)).collect();
        Ok(grid)
    }

    fn classify(&self, idx: usize) -> NodeRole {
        let m = self.multi_index(idx);
        let n = self.dim - 1;
        let x = self.coords(idx);
        let on_side = (0..n).any(|k| m[k] == 0 || m[k] + 1 == self.counts[k]);
        let on_top = m[n] + 1 == self.counts[n];
        let on_bottom = m[n] == 0 && matches!(self.vertical, Vertical::Full);
        let outside = self
            .ball
            .map(|r| norm(&x) >= r * (1.0 - 1e-12))
            .unwrap_or(false);
        if on_side || on_top || on_bottom || outside {
            NodeRole::Dirichlet
        } else if self.is_thin_index(&m) {
            NodeRole::Thin
        } else {
            NodeRole::Interior
        }
    }

    fn is_thin_index(&self, m: &[usize; 3]) -> bool {
        let n = self.dim - 1;
        match self.vertical {
            Vertical::Half { .. } => m[n] == 0,
            Vertical::Full => m[n] + 1 == self.counts[n].div_ceil(2),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    pub fn vertical(&self) -> Vertical {
        self.vertical
    }

    pub fn ball_radius(&self) -> Option<f64> {
        self.ball
    }

    pub fn symmetric_in_xn(&self) -> bool {
        matches!(self.vertical, Vertical::Half { symmetric: true })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.counts[..self.dim].iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn role(&self, idx: usize) -> NodeRole {
        self.roles[idx]
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }

    pub fn multi_index(&self, mut idx: usize) -> [usize; 3] {
        let mut m = [0usize; 3];
        for k in 0..self.dim {
            m[k] = idx % self.counts[k];
            idx /= self.counts[k];
        }
        m
    }

    pub fn index_of(&self, m: &[usize]) -> usize {
        let mut idx = 0;
        for k in (0..self.dim).rev() {
            idx = idx * self.counts[k] + m[k];
        }
        idx
    }

    fn lower(&self, k: usize) -> f64 {
        if k + 1 == self.dim && matches!(self.vertical, Vertical::Half { .. }) {
            0.0
        } else {
            -self.extent[k]
        }
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let m = self.multi_index(idx);
        (0..self.dim)
            .map(|k| self.lower(k) + m[k] as f64 * self.h)
            .collect()
    }

    /// Node nearest to `x` (clamped to the box).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut m = [0usize; 3];
        for k in 0..self.dim {
            let t = ((x[k] - self.lower(k)) / self.h).round();
            m[k] = t.clamp(0.0, (self.counts[k] - 1) as f64) as usize;
        }
        self.index_of(&m)
    }

    /// Node at exactly `x`, if `x` is a grid point.
    pub fn node_at(&self, x: &[f64]) -> Option<usize> {
        let idx = self.nearest(x);
        let y = self.coords(idx);
        let close = x.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 1e-9 * self.h);
        close.then_some(idx)
    }

    /// Neighbour reached by an integer offset; in symmetric grids a negative
    /// normal index is reflected.
    pub fn offset(&self, idx: usize, off: &[i32]) -> Option<usize> {
        let m = self.multi_index(idx);
        let mut out = [0usize; 3];
        for k in 0..self.dim {
            let mut t = m[k] as i64 + off[k] as i64;
            if t < 0 && k + 1 == self.dim && self.symmetric_in_xn() {
                t = -t;
            }
            if t < 0 || t >= self.counts[k] as i64 {
                return None;
            }
            out[k] = t as usize;
        }
        Some(self.index_of(&out))
    }

    /// Whether the node lies on `{x_n = 0}` (regardless of role).
    pub fn on_thin_plane(&self, idx: usize) -> bool {
        self.is_thin_index(&self.multi_index(idx))
    }

    /// All nodes on `{x_n = 0}`, in index order.
    pub fn thin_plane_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.on_thin_plane(i)).collect()
    }

    /// Node directly above `idx` in the normal direction.
    pub fn up(&self, idx: usize) -> Option<usize> {
        let mut off = [0i32; 3];
        off[self.dim - 1] = 1;
        self.offset(idx, &off[..self.dim])
    }

    /// Projection onto the thin plane (same tangential index).
    pub fn thin_projection(&self, idx: usize) -> usize {
        let mut m = self.multi_index(idx);
        let n = self.dim - 1;
        m[n] = match self.vertical {
            Vertical::Half { .. } => 0,
            Vertical::Full => self.counts[n] / 2,
        };
        self.index_of(&m)
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One real value per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!(
                "grid function has {} values for {} nodes",
                values.len(),
                grid.len()
            ));
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node });
        }
        Ok(GridFunction { values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        GridFunction {
            values: vec![0.0; grid.len()],
        }
    }

    /// Samples `f` at every node.
    pub fn sample(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        Self::new(grid, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multilinear interpolation at `x`; `None` outside the box. Symmetric
    /// half grids reflect a negative normal coordinate.
    pub fn interpolate(&self, grid: &Grid, x: &[f64]) -> Option<f64> {
        let dim = grid.dim();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for k in 0..dim {
            let mut xk = x[k];
            if k + 1 == dim && grid.symmetric_in_xn() {
                xk = xk.abs();
            }
            let t = (xk - grid.lower(k)) / grid.h();
            let last = (grid.counts[k] - 1) as f64;
            if !(t >= -1e-9 && t <= last + 1e-9) {
                return None;
            }
            let t = t.clamp(0.0, last);
            let b = t.floor().min(last - 1.0).max(0.0);
            base[k] = b as usize;
            frac[k] = if last == 0.0 { 0.0 } else { t - b };
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut m = base;
            let mut w = 1.0;
            for k in 0..dim {
                let bit = (corner >> k) & 1;
                if bit == 1 {
                    m[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                acc += w * self.values[grid.index_of(&m[..dim])];
            }
        }
        Some(acc)
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for GridFunction {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

const AXIS_NAMES: [&str; 3] = ["x1", "x2", "x3"];

/// Writes the field dump: a header, then one row per node in index order with
/// the coordinates followed by the value.
pub fn write_csv<W: Write>(grid: &Grid, f: &GridFunction, mut out: W) -> Result<()> {
    let header: Vec<&str> = AXIS_NAMES[..grid.dim()].to_vec();
    writeln!(out, "{},value", header.join(","))?;
    for i in 0..grid.len() {
        let x = grid.coords(i);
        let mut line = String::new();
        for c in &x {
            line.push_str(&format!("{c:.17e},"));
        }
        line.push_str(&format!("{:.17e}", f[i]));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Parses a field dump. Rows are matched to nodes by coordinates; every node
/// must be present exactly once.
pub fn read_csv<R: BufRead>(grid: &Grid, input: R) -> Result<GridFunction> {
    let table = read_table(input, grid.dim())?;
    let mut values = vec![f64::NAN; grid.len()];
    for (x, v) in table {
        let idx = grid
            .node_at(&x)
            .ok_or_else(|| Error::InvalidInput(format!("row at {x:?} is not a grid node")))?;
        values[idx] = v;
    }
    if let Some(missing) = values.iter().position(|v| v.is_nan()) {
        return invalid(format!("field dump has no row for node {missing}"));
    }
    GridFunction::new(grid, values)
}

/// Raw `(coordinates, value)` rows of a CSV table with a header line.
pub fn read_table<R: BufRead>(input: R, dim: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut rows = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let fields = fields
            .map_err(|e| Error::InvalidInput(format!("line {}: {e}", lineno + 1)))?;
        if fields.len() != dim + 1 {
            return invalid(format!(
                "line {}: expected {} columns, found {}",
                lineno + 1,
                dim + 1,
                fields.len()
            ));
        }
        rows.push((fields[..dim].to_vec(), fields[dim]));
    }
    Ok(rows)
}
