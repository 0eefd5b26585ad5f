//! Uniform Cartesian grids on boxes `Π [0, L_i]` and nodal vector fields.
//!
//! Nodes are stored row-major: the first axis varies slowest. Boundary nodes
//! are materialized, so homogeneous Dirichlet data is imposed by zeroing them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MAX_DIMS: usize = 3;

/// A uniform node-centered grid on an axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "GridSpec", try_from = "GridSpec")]
pub struct Grid {
    n_dims: usize,
    resolution: [usize; MAX_DIMS],
    extents: [f64; MAX_DIMS],
    spacing: [f64; MAX_DIMS],
    strides: [usize; MAX_DIMS],
}

/// Serialized description of a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_dims: usize,
    pub resolution: Vec<usize>,
    pub extents: Vec<f64>,
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec {
            n_dims: g.n_dims,
            resolution: g.resolution().to_vec(),
            extents: g.extents().to_vec(),
        }
    }
}

impl TryFrom<GridSpec> for Grid {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Grid> {
        make_grid(s.n_dims, &s.resolution, &s.extents)
    }
}

/// Builds a grid with `resolution[i]` nodes spanning `[0, extents[i]]` on each axis.
pub fn make_grid(n_dims: usize, resolution: &[usize], extents: &[f64]) -> Result<Grid> {
    if !(2..=3).contains(&n_dims) {
        return Err(Error::InvalidGrid(format!(
            "dimension must be 2 or 3, got {n_dims}"
        )));
    }
    if resolution.len() != n_dims || extents.len() != n_dims {
        return Err(Error::InvalidGrid(format!(
            "expected {n_dims} resolutions and extents, got {} and {}",
            resolution.len(),
            extents.len()
        )));
    }
    let mut res = [1usize; MAX_DIMS];
    let mut ext = [0.0; MAX_DIMS];
    let mut h = [0.0; MAX_DIMS];
    for a in 0..n_dims {
        if resolution[a] < 3 {
            return Err(Error::InvalidGrid(format!(
                "axis {a} has {} nodes; at least 3 are needed for an interior",
                resolution[a]
            )));
        }
        if !(extents[a] > 0.0 && extents[a].is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "axis {a} extent must be positive and finite, got {}",
                extents[a]
            )));
        }
        res[a] = resolution[a];
        ext[a] = extents[a];
        h[a] = extents[a] / (resolution[a] - 1) as f64;
    }
    let mut strides = [0usize; MAX_DIMS];
    let mut s = 1;
    for a in (0..n_dims).rev() {
        strides[a] = s;
        s *= res[a];
    }
    Ok(Grid {
        n_dims,
        resolution: res,
        extents: ext,
        spacing: h,
        strides,
    })
}

/// Unit box `[0,1]^n` with `m` nodes per axis.
pub fn unit_grid(n_dims: usize, m: usize) -> Result<Grid> {
    make_grid(n_dims, &vec![m; n_dims], &vec![1.0; n_dims])
}

impl Grid {
    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution[..self.n_dims]
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.n_dims]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.n_dims]
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn node_count(&self) -> usize {
        self.resolution().iter().product()
    }

    pub fn interior_count(&self) -> usize {
        self.resolution().iter().map(|m| m - 2).product()
    }

    pub fn boundary_count(&self) -> usize {
        self.node_count() - self.interior_count()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn multi_index(&self, node: usize) -> [usize; MAX_DIMS] {
        let mut idx = [0usize; MAX_DIMS];
        for a in 0..self.n_dims {
            idx[a] = (node / self.strides[a]) % self.resolution[a];
        }
        idx
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        (0..self.n_dims).map(|a| idx[a] * self.strides[a]).sum()
    }

    pub fn position(&self, node: usize) -> [f64; MAX_DIMS] {
        let idx = self.multi_index(node);
        let mut x = [0.0; MAX_DIMS];
        for a in 0..self.n_dims {
            x[a] = idx[a] as f64 * self.spacing[a];
        }
        x
    }

    /// A node is on the boundary iff some index is 0 or `m_i - 1`.
    pub fn is_boundary(&self, node: usize) -> bool {
        let idx = self.multi_index(node);
        (0..self.n_dims).any(|a| idx[a] == 0 || idx[a] + 1 == self.resolution[a])
    }

    /// Number of axes on which the node sits at an extremal index.
    pub fn extremal_axes(&self, node: usize) -> usize {
        let idx = self.multi_index(node);
        (0..self.n_dims)
            .filter(|&a| idx[a] == 0 || idx[a] + 1 == self.resolution[a])
            .count()
    }

    /// Trapezoidal quadrature weight: the cell volume halved once per extremal axis.
    pub fn trapezoid_weight(&self, node: usize) -> f64 {
        self.cell_volume() * 0.5f64.powi(self.extremal_axes(node) as i32)
    }

    /// Linear indices of interior nodes in ascending order.
    pub fn interior_nodes(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.interior_count());
        let r = &self.resolution;
        match self.n_dims {
            2 => {
                for i in 1..r[0] - 1 {
                    for j in 1..r[1] - 1 {
                        out.push(i * self.strides[0] + j);
                    }
                }
            }
            _ => {
                for i in 1..r[0] - 1 {
                    for j in 1..r[1] - 1 {
                        for k in 1..r[2] - 1 {
                            out.push(i * self.strides[0] + j * self.strides[1] + k);
                        }
                    }
                }
            }
        }
        out
    }

    /// Linear indices of boundary nodes in ascending order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&n| self.is_boundary(n)).collect()
    }

    /// Lower-left nodes of the `Π (m_i - 1)` cells, ascending.
    pub fn cell_origins(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&n| {
                let idx = self.multi_index(n);
                (0..self.n_dims).all(|a| idx[a] + 1 < self.resolution[a])
            })
            .collect()
    }

    pub fn cell_count(&self) -> usize {
        self.resolution().iter().map(|m| m - 1).product()
    }

    pub fn spec(&self) -> GridSpec {
        (*self).into()
    }
}

/// `N`-component real values at every node, stored component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: usize,
    values: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: &Grid, components: usize) -> Self {
        assert!(components >= 1, "a field needs at least one component");
        VectorField {
            grid: *grid,
            components,
            values: vec![0.0; components * grid.node_count()],
        }
    }

    pub fn from_values(grid: &Grid, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() != components * grid.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} components on {} nodes",
                values.len(),
                components,
                grid.node_count()
            )));
        }
        Ok(VectorField {
            grid: *grid,
            components,
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
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

    pub fn component(&self, c: usize) -> &[f64] {
        let nn = self.grid.node_count();
        &self.values[c * nn..(c + 1) * nn]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let nn = self.grid.node_count();
        &mut self.values[c * nn..(c + 1) * nn]
    }

    pub fn get(&self, c: usize, node: usize) -> f64 {
        self.values[c * self.grid.node_count() + node]
    }

    pub fn set(&mut self, c: usize, node: usize, v: f64) {
        let nn = self.grid.node_count();
        self.values[c * nn + node] = v;
    }

    /// Squared Euclidean magnitude of the `N`-vector at a node.
    pub fn magnitude_sq(&self, node: usize) -> f64 {
        (0..self.components).map(|c| self.get(c, node).powi(2)).sum()
    }

    pub fn is_dirichlet_conforming(&self) -> bool {
        self.grid
            .boundary_nodes()
            .iter()
            .all(|&n| (0..self.components).all(|c| self.get(c, n) == 0.0))
    }

    pub fn same_shape(&self, other: &VectorField) -> Result<()> {
        if self.grid != other.grid || self.components != other.components {
            return Err(Error::ShapeMismatch(format!(
                "{}-component field on {:?} vs {}-component field on {:?}",
                self.components,
                self.grid.resolution(),
                other.components,
                other.grid.resolution()
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> VectorField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &VectorField, b: f64) -> Result<VectorField> {
        self.same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(VectorField {
            grid: self.grid,
            components: self.components,
            values,
        })
    }

    pub fn sub(&self, other: &VectorField) -> Result<VectorField> {
        self.combine(1.0, other, -1.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Samples `f` at every node in storage order. Boundary values are left as sampled.
pub fn field_from_fn<F>(grid: &Grid, components: usize, mut f: F) -> VectorField
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut field = VectorField::zeros(grid, components);
    let nn = grid.node_count();
    let mut buf = vec![0.0; components];
    for node in 0..nn {
        let x = grid.position(node);
        buf.iter_mut().for_each(|b| *b = 0.0);
        f(&x[..grid.n_dims()], &mut buf);
        for (c, v) in buf.iter().enumerate() {
            field.values[c * nn + node] = *v;
        }
    }
    field
}

/// Scalar convenience wrapper around [`field_from_fn`].
pub fn scalar_field<F>(grid: &Grid, f: F) -> VectorField
where
    F: Fn(&[f64]) -> f64,
{
    field_from_fn(grid, 1, |x, out| out[0] = f(x))
}

/// Copy of `field` with every boundary value set to zero.
pub fn enforce_dirichlet(field: &VectorField) -> VectorField {
    let mut out = field.clone();
    let nn = field.grid.node_count();
    for node in field.grid.boundary_nodes() {
        for c in 0..field.components {
            out.values[c * nn + node] = 0.0;
        }
    }
    out
}

/// Sidecar metadata for a binary field dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpMetadata {
    pub n_dims: usize,
    pub resolution: Vec<usize>,
    pub extents: Vec<f64>,
    pub components: usize,
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes little-endian `f64` values (component-major, row-major nodes) to
/// `path` and the JSON metadata next to it with a `.json` extension.
pub fn write_field_dump(field: &VectorField, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * field.values.len());
    for v in &field.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)?;
    let meta = DumpMetadata {
        n_dims: field.grid.n_dims(),
        resolution: field.grid.resolution().to_vec(),
        extents: field.grid.extents().to_vec(),
        components: field.components,
    };
    let json = serde_json::to_vec_pretty(&meta)?;
    write_atomic(&sidecar_path(path), &json)
}

pub fn read_field_dump(path: &Path) -> Result<VectorField> {
    let meta: DumpMetadata = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let grid = make_grid(meta.n_dims, &meta.resolution, &meta.extents)?;
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "dump length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    VectorField::from_values(&grid, meta.components, values)
}

pub(crate) fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {v}")))
    }
}
