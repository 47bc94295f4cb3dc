//! Tensor-product grids `[0, L] x omega`: a 1D node line times a triangle
//! mesh, with wedge cells (triangle times interval). Shared by the
//! finite-thickness relaxation solves and the 3D probes.

use std::sync::Arc;

use crate::cross_section::TriMesh2D;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct RodGrid {
    mesh: Arc<TriMesh2D>,
    n1: usize,
    length: f64,
}

impl RodGrid {
    pub fn new(mesh: Arc<TriMesh2D>, n1: usize, length: f64) -> Result<Self> {
        if n1 < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 axial intervals, got {n1}"
            )));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "rod length must be positive, got {length}"
            )));
        }
        Ok(RodGrid { mesh, n1, length })
    }

    pub fn mesh(&self) -> &TriMesh2D {
        &self.mesh
    }

    pub fn n_intervals(&self) -> usize {
        self.n1
    }

    pub fn n_slices(&self) -> usize {
        self.n1 + 1
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx1(&self) -> f64 {
        self.length / self.n1 as f64
    }

    pub fn x1(&self, slice: usize) -> f64 {
        self.length * slice as f64 / self.n1 as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.n_slices() * self.mesh.n_vertices()
    }

    /// Flat node index of `(slice, vertex)`.
    pub fn node(&self, slice: usize, vertex: usize) -> usize {
        slice * self.mesh.n_vertices() + vertex
    }

    /// Lumped vertex weights `int lambda_v` over the section (exact).
    pub fn vertex_weights(&self) -> Vec<f64> {
        let mesh = self.mesh();
        let mut w = vec![0.0; mesh.n_vertices()];
        for t in 0..mesh.n_triangles() {
            let (_, area) = mesh.tri_gradients(t);
            for &v in &mesh.triangles()[t] {
                w[v] += area / 3.0;
            }
        }
        w
    }

    /// First-moment weights `int coord * lambda_v` with `coord` the in-plane
    /// coordinate (0 for x2, 1 for x3); exact for the linear integrand.
    pub fn moment_weights(&self, coord: usize) -> Vec<f64> {
        let mesh = self.mesh();
        let mut w = vec![0.0; mesh.n_vertices()];
        for t in 0..mesh.n_triangles() {
            let (_, area) = mesh.tri_gradients(t);
            let tri = mesh.triangles()[t];
            let f = tri.map(|v| mesh.vertices()[v][coord]);
            for a in 0..3 {
                w[tri[a]] += area / 12.0 * (2.0 * f[a] + f[(a + 1) % 3] + f[(a + 2) % 3]);
            }
        }
        w
    }
}
