//! P1 finite elements on a cross-section: a deflated conjugate-gradient
//! solver for singular-consistent SPD systems, scalar Neumann solves, the
//! L2 projection onto the orthogonal complement of the gradient space, and
//! the torsion constant of the section.

use crate::cross_section::TriMesh2D;
use crate::{Error, Result};

pub type ScalarField = Vec<f64>;
pub type VectorField2D = Vec<[f64; 2]>;

/// Relative residual used for all internal solves.
pub const DEFAULT_CG_TOL: f64 = 1e-10;
const KERNEL_CHECK_TOL: f64 = 1e-10;
const CONSISTENCY_TOL: f64 = 1e-8;

/// Symmetric positive semidefinite sparse matrix in CSR form, together
/// with an orthonormal basis of its known null space. Solves deflate the
/// kernel directions; side constraints too numerous to store densely go
/// through [`solve_with_projector`] instead.
#[derive(Debug, Clone)]
pub struct SparseSpd {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    kernel: Vec<Vec<f64>>,
}

impl SparseSpd {
    /// Builds from (row, col, value) triplets; duplicate entries are summed.
    /// Both halves of the symmetric matrix must be present.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets.to_vec();
        entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for &(i, j, v) in &entries {
            assert!(i < n && j < n, "triplet index out of range");
            if col_idx.len() > row_ptr[i] && *col_idx.last().unwrap() == j && row_ptr[i + 1] > 0 {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                vals.push(v);
                row_ptr[i + 1] = col_idx.len();
            }
        }
        // carry forward rows without entries
        for i in 0..n {
            if row_ptr[i + 1] < row_ptr[i] {
                row_ptr[i + 1] = row_ptr[i];
            }
        }
        SparseSpd {
            n,
            row_ptr,
            col_idx,
            vals,
            kernel: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    /// Attaches known null-space vectors. The vectors are orthonormalized
    /// and each is verified to satisfy `|M v| <= 1e-10 |M| |v|`.
    pub fn with_kernel(mut self, kernel: Vec<Vec<f64>>) -> Result<Self> {
        let basis = orthonormalize(kernel, self.n)?;
        let mnorm = self.inf_norm();
        let mut out = vec![0.0; self.n];
        for v in &basis {
            self.matvec(v, &mut out);
            let defect = inf(&out);
            if defect > KERNEL_CHECK_TOL * mnorm.max(1e-300) {
                return Err(Error::InvalidParameter(format!(
                    "claimed kernel vector has |M v| = {defect:.3e} > 1e-10 |M| = {:.3e}",
                    KERNEL_CHECK_TOL * mnorm
                )));
            }
        }
        self.kernel = basis;
        Ok(self)
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            out[i] = acc;
        }
    }

    fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.vals[self.row_ptr[i]..self.row_ptr[i + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![1.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] == i && self.vals[k] != 0.0 {
                    d[i] = self.vals[k];
                }
            }
        }
        d
    }

    fn project(&self, x: &mut [f64]) {
        for v in self.kernel.iter() {
            let c = dot(v, x);
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi -= c * vi;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn orthonormalize(vectors: Vec<Vec<f64>>, n: usize) -> Result<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for mut v in vectors {
        if v.len() != n {
            return Err(Error::InvalidParameter(format!(
                "kernel vector length {} does not match dimension {n}",
                v.len()
            )));
        }
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &v);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= c * bi;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm <= 1e-12 {
            return Err(Error::InvalidParameter(
                "kernel vectors are linearly dependent".into(),
            ));
        }
        for vi in &mut v {
            *vi /= norm;
        }
        basis.push(v);
    }
    Ok(basis)
}

/// Deflated Jacobi-preconditioned conjugate gradients.
///
/// Returns x with `|M x - rhs| <= tol |rhs|` and x orthogonal to the
/// kernel and constraint directions. The right-hand side must be
/// orthogonal to the kernel within 1e-8 relative, otherwise the system is
/// inconsistent. Deterministic for fixed inputs.
pub fn solve_spd(m: &SparseSpd, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(Error::InvalidParameter(format!(
            "relative tolerance must lie in (0, 1e-2], got {tol}"
        )));
    }
    let n = m.n;
    assert_eq!(rhs.len(), n, "rhs length mismatch");
    let rhs_norm = dot(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut kernel_part = 0.0;
    for v in &m.kernel {
        kernel_part += dot(v, rhs).powi(2);
    }
    if kernel_part.sqrt() > CONSISTENCY_TOL * rhs_norm {
        return Err(Error::Inconsistent(format!(
            "rhs has kernel component {:.3e} relative to |rhs| = {rhs_norm:.3e}",
            kernel_part.sqrt() / rhs_norm
        )));
    }
    solve_with_projector(m, |x| m.project(x), rhs, tol)
}

/// Conjugate gradients restricted to the range of an arbitrary orthogonal
/// projector. Used directly by solves whose side constraints are too
/// numerous to store as dense vectors. No consistency check is applied:
/// the projected right-hand side defines the subproblem.
pub fn solve_with_projector(
    m: &SparseSpd,
    project: impl Fn(&mut [f64]),
    rhs: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(Error::InvalidParameter(format!(
            "relative tolerance must lie in (0, 1e-2], got {tol}"
        )));
    }
    let n = m.n;
    let rhs_norm = dot(rhs, rhs).sqrt();
    let mut b = rhs.to_vec();
    project(&mut b);
    let target = tol * dot(&b, &b).sqrt();
    if target == 0.0 {
        return Ok(vec![0.0; n]);
    }

    let diag = m.diagonal();
    let mut x = vec![0.0; n];
    let mut r = b;
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let cap = 20 * n.max(5);
    for _ in 0..cap {
        m.matvec(&p, &mut q);
        project(&mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            // numerically singular direction: accept if already converged
            let res = dot(&r, &r).sqrt();
            if res <= target {
                return Ok(x);
            }
            return Err(Error::NoConvergence {
                iterations: 0,
                residual: res / rhs_norm,
            });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        if dot(&r, &r).sqrt() <= target {
            project(&mut x);
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        iterations: cap,
        residual: dot(&r, &r).sqrt() / rhs_norm,
    })
}

/// Assembles the P1 stiffness matrix of the Neumann Laplacian on the mesh,
/// with the constant vector as its kernel.
pub fn laplace_neumann(mesh: &TriMesh2D) -> SparseSpd {
    let n = mesh.n_vertices();
    let mut triplets = Vec::with_capacity(9 * mesh.n_triangles());
    for t in 0..mesh.n_triangles() {
        let (g, area) = mesh.tri_gradients(t);
        let tri = mesh.triangles()[t];
        for a in 0..3 {
            for b in 0..3 {
                let v = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                triplets.push((tri[a], tri[b], v));
            }
        }
    }
    let ones = vec![1.0; n];
    SparseSpd::from_triplets(n, &triplets)
        .with_kernel(vec![ones])
        .expect("constants are an exact kernel of the Neumann stiffness")
}

/// Result of projecting a vector field off the gradient space.
#[derive(Debug, Clone)]
pub struct Projection {
    /// Potential whose gradient is the removed part (algebraic mean zero).
    pub potential: ScalarField,
    /// Piecewise-constant gradient of the potential, per triangle.
    pub grad_potential: Vec<[f64; 2]>,
    /// Projection complement evaluated at vertices by area-weighted
    /// averaging of the per-element values.
    pub complement: VectorField2D,
    /// Exact L2 norms: input, removed gradient, and complement (the
    /// complement norm is integrated independently, not obtained by
    /// subtraction).
    pub input_norm_sq: f64,
    pub gradient_norm_sq: f64,
    pub complement_norm_sq: f64,
}

/// Solves a system whose right-hand side may vanish up to assembly and
/// solver round-off: below `1e-9` of the absolute-value accumulation the
/// solution is taken to be zero instead of feeding noise to the solver.
/// The threshold sits just above the default solver tolerance, so fields
/// that are already projections resolve to themselves.
pub(crate) fn solve_or_zero(
    system: &SparseSpd,
    rhs: &[f64],
    abs_scale: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let norm = dot(rhs, rhs).sqrt();
    if norm <= 1e-9 * abs_scale {
        return Ok(vec![0.0; system.dimension()]);
    }
    solve_spd(system, rhs, tol)
}

/// Solves `int (grad phi - u) . grad psi = 0` over P1 test functions and
/// returns `P u = u - grad phi` with exact quadrature of all norms.
pub fn project_field(mesh: &TriMesh2D, u: &VectorField2D) -> Result<Projection> {
    let n = mesh.n_vertices();
    if u.len() != n {
        return Err(Error::InvalidParameter(format!(
            "field has {} entries for a mesh with {n} vertices",
            u.len()
        )));
    }
    let mut rhs = vec![0.0; n];
    let mut abs = 0.0f64;
    for t in 0..mesh.n_triangles() {
        let (g, area) = mesh.tri_gradients(t);
        let tri = mesh.triangles()[t];
        let mean = [
            (u[tri[0]][0] + u[tri[1]][0] + u[tri[2]][0]) / 3.0,
            (u[tri[0]][1] + u[tri[1]][1] + u[tri[2]][1]) / 3.0,
        ];
        for a in 0..3 {
            let v = area * (mean[0] * g[a][0] + mean[1] * g[a][1]);
            rhs[tri[a]] += v;
            abs += v * v;
        }
    }
    let system = laplace_neumann(mesh);
    let potential = solve_or_zero(&system, &rhs, abs.sqrt(), DEFAULT_CG_TOL)?;
    // linear interpolation at the interior quadrature points
    let sample = |t: usize, p: usize| {
        let tri = mesh.triangles()[t];
        let (a, b, c) = (u[tri[p]], u[tri[(p + 1) % 3]], u[tri[(p + 2) % 3]]);
        [
            (4.0 * a[0] + b[0] + c[0]) / 6.0,
            (4.0 * a[1] + b[1] + c[1]) / 6.0,
        ]
    };
    finish_projection(mesh, potential, sample, Some(u))
}

/// Projection of a piecewise-constant field; the complement stays
/// piecewise constant, so repeated projection is exact.
pub fn project_element_field(mesh: &TriMesh2D, u: &[[f64; 2]]) -> Result<Projection> {
    let n = mesh.n_vertices();
    if u.len() != mesh.n_triangles() {
        return Err(Error::InvalidParameter(format!(
            "element field has {} entries for {} triangles",
            u.len(),
            mesh.n_triangles()
        )));
    }
    let mut rhs = vec![0.0; n];
    let mut abs = 0.0f64;
    for t in 0..mesh.n_triangles() {
        let (g, area) = mesh.tri_gradients(t);
        let tri = mesh.triangles()[t];
        for a in 0..3 {
            let v = area * (u[t][0] * g[a][0] + u[t][1] * g[a][1]);
            rhs[tri[a]] += v;
            abs += v * v;
        }
    }
    let system = laplace_neumann(mesh);
    let potential = solve_or_zero(&system, &rhs, abs.sqrt(), DEFAULT_CG_TOL)?;
    finish_projection(mesh, potential, |t, _| u[t], None)
}

/// Shared tail: per-element gradients, vertex averaging and exact norms.
/// `sample(t, p)` returns the input field at quadrature point `p` of
/// triangle `t` (edge midpoints in `tri_quadrature` order); `nodal` is the
/// input at vertices when the input is a nodal field.
fn finish_projection(
    mesh: &TriMesh2D,
    potential: ScalarField,
    sample: impl Fn(usize, usize) -> [f64; 2],
    nodal: Option<&VectorField2D>,
) -> Result<Projection> {
    let n = mesh.n_vertices();
    let nt = mesh.n_triangles();
    let mut grad = vec![[0.0; 2]; nt];
    let mut input_norm_sq = 0.0;
    let mut gradient_norm_sq = 0.0;
    let mut complement_norm_sq = 0.0;
    let mut vertex_num = vec![[0.0; 2]; n];
    let mut vertex_den = vec![0.0; n];
    for t in 0..nt {
        let (g, area) = mesh.tri_gradients(t);
        let tri = mesh.triangles()[t];
        let mut gp = [0.0; 2];
        for a in 0..3 {
            gp[0] += potential[tri[a]] * g[a][0];
            gp[1] += potential[tri[a]] * g[a][1];
        }
        grad[t] = gp;
        gradient_norm_sq += area * (gp[0] * gp[0] + gp[1] * gp[1]);
        let w = area / 3.0;
        for p in 0..3 {
            let uv = sample(t, p);
            input_norm_sq += w * (uv[0] * uv[0] + uv[1] * uv[1]);
            let cv = [uv[0] - gp[0], uv[1] - gp[1]];
            complement_norm_sq += w * (cv[0] * cv[0] + cv[1] * cv[1]);
        }
        // area-weighted average of the removed gradient at vertices; for
        // element input the complement itself is averaged instead
        let cell = match nodal {
            Some(_) => gp,
            None => {
                let uv = sample(t, 0);
                [uv[0] - gp[0], uv[1] - gp[1]]
            }
        };
        for a in 0..3 {
            vertex_den[tri[a]] += area;
            vertex_num[tri[a]][0] += area * cell[0];
            vertex_num[tri[a]][1] += area * cell[1];
        }
    }
    let mut complement = vec![[0.0; 2]; n];
    for v in 0..n {
        let avg = if vertex_den[v] > 0.0 {
            [vertex_num[v][0] / vertex_den[v], vertex_num[v][1] / vertex_den[v]]
        } else {
            [0.0, 0.0]
        };
        complement[v] = match nodal {
            Some(u) => [u[v][0] - avg[0], u[v][1] - avg[1]],
            None => avg,
        };
    }
    Ok(Projection {
        potential,
        grad_potential: grad,
        complement,
        input_norm_sq,
        gradient_norm_sq,
        complement_norm_sq,
    })
}

/// Torsion constant of a normalized section: the squared L2 norm of the
/// projection of `(x3, -x2)` off the gradient space.
pub fn torsion_constant(mesh: &TriMesh2D) -> Result<f64> {
    let u: VectorField2D = mesh.vertices().iter().map(|v| [v[1], -v[0]]).collect();
    let proj = project_field(mesh, &u)?;
    Ok(proj.complement_norm_sq)
}
