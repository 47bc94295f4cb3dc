//! Numerical probes of the thin-body limit on tensor-product grids:
//! decomposition of displacements into rigid, bending, torsion and
//! remainder parts with norm estimates, approximate strains against a
//! rotation field, explicit recovery deformations driven by a frame
//! curve, and the scaled 3D energy `(1/h^2) int W(x, grad_h y)`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::grid3d::RodGrid;
use crate::material::NonlinearLaw;
use crate::rod_model::{strain_of, FrameCurve};
use crate::{Error, Result};

/// Displacement or deformation samples on the nodes of a rod grid, for a
/// body of physical thickness `h`.
#[derive(Debug, Clone)]
pub struct Displacement3D {
    grid: RodGrid,
    h: f64,
    values: Vec<Vector3<f64>>,
}

impl Displacement3D {
    pub fn new(grid: RodGrid, h: f64, values: Vec<Vector3<f64>>) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "thickness must lie in (0, 1], got {h}"
            )));
        }
        if values.len() != grid.n_nodes() {
            return Err(Error::InvalidParameter(format!(
                "field has {} values for a grid with {} nodes",
                values.len(),
                grid.n_nodes()
            )));
        }
        Ok(Displacement3D { grid, h, values })
    }

    pub fn from_fn(
        grid: RodGrid,
        h: f64,
        f: impl Fn(f64, f64, f64) -> Vector3<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.n_nodes());
        for s in 0..grid.n_slices() {
            let x1 = grid.x1(s);
            for v in grid.mesh().vertices() {
                values.push(f(x1, v[0], v[1]));
            }
        }
        Displacement3D::new(grid, h, values)
    }

    pub fn grid(&self) -> &RodGrid {
        &self.grid
    }

    pub fn thickness(&self) -> f64 {
        self.h
    }

    pub fn value(&self, slice: usize, vertex: usize) -> Vector3<f64> {
        self.values[self.grid.node(slice, vertex)]
    }

    pub fn values(&self) -> &[Vector3<f64>] {
        &self.values
    }

    /// Largest node-wise difference against another field on the same grid.
    pub fn max_difference(&self, other: &Displacement3D) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Parts of the displacement decomposition: a rigid motion, two bending
/// profiles, a torsion profile and a remainder, reconstructing the input
/// exactly node by node.
#[derive(Debug, Clone)]
pub struct GrisoParts {
    pub a: Vector3<f64>,
    pub b: Matrix3<f64>,
    pub phi1: Vec<f64>,
    pub phi1_prime: Vec<f64>,
    pub phi2: Vec<f64>,
    pub phi2_prime: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<Vector3<f64>>,
}

/// Discrete norms entering the decomposition estimates.
#[derive(Debug, Clone, Serialize)]
pub struct GrisoNorms {
    pub phi1_w22: f64,
    pub phi2_w22: f64,
    pub w_w12: f64,
    pub z_l2: f64,
    pub grad_z_l2: f64,
    pub sym_grad_l2: f64,
}

impl GrisoNorms {
    /// Left-hand side of the profile estimate.
    pub fn profiles(&self) -> f64 {
        self.phi1_w22 + self.phi2_w22 + self.w_w12
    }
}

const MOMENT_TOL: f64 = 1e-8;

/// Splits a displacement into slice averages, first-moment rotations and
/// the induced rigid/bending/torsion/remainder parts. The grid section
/// must be normalized (vanishing first and cross moments).
pub fn griso_decompose(u: &Displacement3D) -> Result<GrisoParts> {
    let grid = u.grid();
    let mesh = grid.mesh();
    let h = u.thickness();
    let moments = mesh.raw_moments();
    let scale = moments.area * mesh.diameter().powi(2);
    if moments.x2x3.abs() > MOMENT_TOL * scale
        || moments.x2.abs() > MOMENT_TOL * scale
        || moments.x3.abs() > MOMENT_TOL * scale
    {
        return Err(Error::MeshInvalid(
            "displacement decomposition needs a normalized section".into(),
        ));
    }
    let (mu2, mu3) = (moments.x2x2, moments.x3x3);
    let wv = grid.vertex_weights();
    let w2 = grid.moment_weights(0);
    let w3 = grid.moment_weights(1);
    let slices = grid.n_slices();
    let nv = mesh.n_vertices();

    // slice averages and best-fit moment rotations
    let mut mean = vec![Vector3::zeros(); slices];
    let mut rot = vec![Vector3::zeros(); slices];
    for s in 0..slices {
        let mut avg = Vector3::zeros();
        let mut r: Vector3<f64> = Vector3::zeros();
        for v in 0..nv {
            let val = u.value(s, v);
            avg += wv[v] * val;
            r.x += w2[v] * val.z - w3[v] * val.y;
            r.y += w3[v] * val.x;
            r.z -= w2[v] * val.x;
        }
        mean[s] = avg / moments.area;
        rot[s] = Vector3::new(r.x / (h * (mu2 + mu3)), r.y / (h * mu3), r.z / (h * mu2));
    }

    let dx = grid.dx1();
    let cum = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut out = vec![0.0; slices];
        for s in 1..slices {
            out[s] = out[s - 1] + 0.5 * dx * (f(s - 1) + f(s));
        }
        out
    };
    let cum_r3 = cum(&|s| rot[s].z);
    let cum_r2 = cum(&|s| rot[s].y);

    let mut phi1 = vec![0.0; slices];
    let mut phi1_prime = vec![0.0; slices];
    let mut phi2 = vec![0.0; slices];
    let mut phi2_prime = vec![0.0; slices];
    let mut w_prof = vec![0.0; slices];
    for s in 0..slices {
        let x1 = grid.x1(s);
        phi1[s] = h * (cum_r3[s] - x1 * rot[0].z);
        phi1_prime[s] = h * (rot[s].z - rot[0].z);
        phi2[s] = h * (-cum_r2[s] + x1 * rot[0].y);
        phi2_prime[s] = h * (-rot[s].y + rot[0].y);
        w_prof[s] = -h * (rot[s].x - rot[0].x);
    }

    let mut z = vec![Vector3::zeros(); grid.n_nodes()];
    for s in 0..slices {
        for v in 0..nv {
            let p = mesh.vertices()[v];
            let radial = Vector3::new(0.0, h * p[0], h * p[1]);
            let bar = u.value(s, v) - mean[s] - rot[s].cross(&radial);
            z[grid.node(s, v)] = Vector3::new(
                mean[s].x - mean[0].x + bar.x,
                mean[s].y - mean[0].y - cum_r3[s] + bar.y,
                mean[s].z - mean[0].z + cum_r2[s] + bar.z,
            );
        }
    }

    let b = Matrix3::new(
        0.0, -rot[0].z, rot[0].y, rot[0].z, 0.0, -rot[0].x, -rot[0].y, rot[0].x, 0.0,
    );
    Ok(GrisoParts {
        a: mean[0],
        b,
        phi1,
        phi1_prime,
        phi2,
        phi2_prime,
        w: w_prof,
        z,
    })
}

/// Evaluates the decomposition identity; with parts straight out of
/// `griso_decompose` this rebuilds the input to round-off.
pub fn griso_reconstruct(grid: &RodGrid, h: f64, parts: &GrisoParts) -> Result<Displacement3D> {
    let mesh = grid.mesh();
    let mut values = Vec::with_capacity(grid.n_nodes());
    for s in 0..grid.n_slices() {
        let x1 = grid.x1(s);
        for (v, p) in mesh.vertices().iter().enumerate() {
            let pos = Vector3::new(x1, h * p[0], h * p[1]);
            let bend = Vector3::new(
                -parts.phi1_prime[s] * p[0] - parts.phi2_prime[s] * p[1],
                parts.phi1[s] / h + parts.w[s] * p[1],
                parts.phi2[s] / h - parts.w[s] * p[0],
            );
            values.push(parts.a + parts.b * pos + bend + parts.z[grid.node(s, v)]);
        }
    }
    Displacement3D::new(grid.clone(), h, values)
}

/// One-point deformation gradients `grad_h` per wedge cell, slab-major.
pub fn cell_gradients(u: &Displacement3D) -> Vec<Matrix3<f64>> {
    let grid = u.grid();
    let mesh = grid.mesh();
    let h = u.thickness();
    let dx = grid.dx1();
    let nt = mesh.n_triangles();
    let mut out = Vec::with_capacity(grid.n_intervals() * nt);
    for slab in 0..grid.n_intervals() {
        for t in 0..nt {
            let (grads, _) = mesh.tri_gradients(t);
            let tri = mesh.triangles()[t];
            let mut axial = Vector3::zeros();
            let mut inplane = [Vector3::zeros(); 2];
            for a in 0..3 {
                let lo = u.value(slab, tri[a]);
                let hi = u.value(slab + 1, tri[a]);
                axial += (hi - lo) / (3.0 * dx);
                let mid = 0.5 * (lo + hi);
                inplane[0] += grads[a][0] * mid;
                inplane[1] += grads[a][1] * mid;
            }
            let mut f = Matrix3::zeros();
            f.set_column(0, &axial);
            f.set_column(1, &(inplane[0] / h));
            f.set_column(2, &(inplane[1] / h));
            out.push(f);
        }
    }
    out
}

/// Volumes of the wedge cells, slab-major, matching `cell_gradients`.
pub fn cell_volumes(grid: &RodGrid) -> Vec<f64> {
    let mesh = grid.mesh();
    let dx = grid.dx1();
    let mut out = Vec::with_capacity(grid.n_intervals() * mesh.n_triangles());
    for _ in 0..grid.n_intervals() {
        for t in 0..mesh.n_triangles() {
            let (_, area) = mesh.tri_gradients(t);
            out.push(area * dx);
        }
    }
    out
}

/// L2 norm of `sym grad_h u` by one-point cell quadrature.
pub fn sym_grad_l2(u: &Displacement3D) -> f64 {
    let vols = cell_volumes(u.grid());
    cell_gradients(u)
        .iter()
        .zip(&vols)
        .map(|(f, vol)| {
            let s = 0.5 * (f + f.transpose());
            vol * s.norm_squared()
        })
        .sum::<f64>()
        .sqrt()
}

fn grad_l2(u: &Displacement3D) -> f64 {
    let vols = cell_volumes(u.grid());
    cell_gradients(u)
        .iter()
        .zip(&vols)
        .map(|(f, vol)| vol * f.norm_squared())
        .sum::<f64>()
        .sqrt()
}

fn field_l2(grid: &RodGrid, values: &[Vector3<f64>]) -> f64 {
    let mesh = grid.mesh();
    let dx = grid.dx1();
    let mut acc = 0.0;
    for slab in 0..grid.n_intervals() {
        for t in 0..mesh.n_triangles() {
            let tri = mesh.triangles()[t];
            let (_, area) = mesh.tri_gradients(t);
            // 2-point Gauss in the axial direction, edge midpoints in plane
            for &xi in &[0.5 - 0.5 / 3.0f64.sqrt(), 0.5 + 0.5 / 3.0f64.sqrt()] {
                for e in 0..3 {
                    let (i, j) = (tri[e], tri[(e + 1) % 3]);
                    let lo = 0.5 * (values[grid.node(slab, i)] + values[grid.node(slab, j)]);
                    let hi =
                        0.5 * (values[grid.node(slab + 1, i)] + values[grid.node(slab + 1, j)]);
                    let val = (1.0 - xi) * lo + xi * hi;
                    acc += (area / 3.0) * (dx / 2.0) * val.norm_squared();
                }
            }
        }
    }
    acc.sqrt()
}

fn profile_l2(grid: &RodGrid, values: &[f64]) -> f64 {
    let dx = grid.dx1();
    let mut acc = 0.0;
    for s in 0..grid.n_intervals() {
        acc += 0.5 * dx * (values[s] * values[s] + values[s + 1] * values[s + 1]);
    }
    acc.sqrt()
}

fn profile_derivative(grid: &RodGrid, values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let dx = grid.dx1();
    let mut out = vec![0.0; n];
    for s in 0..n {
        out[s] = if s == 0 {
            (values[1] - values[0]) / dx
        } else if s == n - 1 {
            (values[n - 1] - values[n - 2]) / dx
        } else {
            (values[s + 1] - values[s - 1]) / (2.0 * dx)
        };
    }
    out
}

/// Discrete norms for the decomposition estimates.
pub fn griso_norms(u: &Displacement3D, parts: &GrisoParts) -> Result<GrisoNorms> {
    let grid = u.grid();
    let h = u.thickness();
    let sobolev2 = |f: &[f64], fp: &[f64]| -> f64 {
        let fpp = profile_derivative(grid, fp);
        (profile_l2(grid, f).powi(2)
            + profile_l2(grid, fp).powi(2)
            + profile_l2(grid, &fpp).powi(2))
        .sqrt()
    };
    let w_prime = profile_derivative(grid, &parts.w);
    let z_field = Displacement3D::new(grid.clone(), h, parts.z.clone())?;
    Ok(GrisoNorms {
        phi1_w22: sobolev2(&parts.phi1, &parts.phi1_prime),
        phi2_w22: sobolev2(&parts.phi2, &parts.phi2_prime),
        w_w12: (profile_l2(grid, &parts.w).powi(2) + profile_l2(grid, &w_prime).powi(2)).sqrt(),
        z_l2: field_l2(grid, &parts.z),
        grad_z_l2: grad_l2(&z_field),
        sym_grad_l2: sym_grad_l2(u),
    })
}

/// Approximate strain `G = (R^T grad_h y - I) / h` at every node, with
/// finite differences along the axis (one-sided at the ends) and
/// vertex-averaged P1 gradients in the plane.
pub fn approximate_strain(
    y: &Displacement3D,
    frames: &[Matrix3<f64>],
) -> Result<Vec<Matrix3<f64>>> {
    let grid = y.grid();
    let mesh = grid.mesh();
    if frames.len() != grid.n_slices() {
        return Err(Error::InvalidParameter(format!(
            "{} frames for {} slices",
            frames.len(),
            grid.n_slices()
        )));
    }
    let h = y.thickness();
    let dx = grid.dx1();
    let nv = mesh.n_vertices();
    let slices = grid.n_slices();
    let mut out = vec![Matrix3::zeros(); grid.n_nodes()];
    // in-plane gradients per slice, averaged at vertices
    let mut den = vec![0.0; nv];
    for t in 0..mesh.n_triangles() {
        let (_, area) = mesh.tri_gradients(t);
        for &v in &mesh.triangles()[t] {
            den[v] += area;
        }
    }
    for s in 0..slices {
        let mut g2 = vec![Vector3::zeros(); nv];
        let mut g3 = vec![Vector3::zeros(); nv];
        for t in 0..mesh.n_triangles() {
            let (grads, area) = mesh.tri_gradients(t);
            let tri = mesh.triangles()[t];
            let mut d2 = Vector3::zeros();
            let mut d3 = Vector3::zeros();
            for a in 0..3 {
                let val = y.value(s, tri[a]);
                d2 += grads[a][0] * val;
                d3 += grads[a][1] * val;
            }
            for &v in &tri {
                g2[v] += area * d2;
                g3[v] += area * d3;
            }
        }
        for v in 0..nv {
            let axial = if s == 0 {
                (y.value(1, v) - y.value(0, v)) / dx
            } else if s == slices - 1 {
                (y.value(s, v) - y.value(s - 1, v)) / dx
            } else {
                (y.value(s + 1, v) - y.value(s - 1, v)) / (2.0 * dx)
            };
            let mut f = Matrix3::zeros();
            f.set_column(0, &axial);
            f.set_column(1, &(g2[v] / (den[v] * h)));
            f.set_column(2, &(g3[v] / (den[v] * h)));
            out[grid.node(s, v)] =
                (frames[s].transpose() * f - Matrix3::identity()) / h;
        }
    }
    Ok(out)
}

/// Explicit recovery deformation driven by a frame curve: the centerline
/// integral of `R e1`, the rotated section, the scaled corrector, its
/// second-order in-plane correction, and the stretch integral.
pub fn build_recovery(
    grid: &RodGrid,
    frame: &FrameCurve,
    stretch: &[f64],
    corrector: Option<&[[f64; 3]]>,
    h: f64,
) -> Result<Displacement3D> {
    let mesh = grid.mesh();
    let nv = mesh.n_vertices();
    if frame.n_intervals() != grid.n_intervals() {
        return Err(Error::InvalidParameter(format!(
            "frame has {} intervals, grid has {}",
            frame.n_intervals(),
            grid.n_intervals()
        )));
    }
    if (frame.length() - grid.length()).abs() > 1e-12 * grid.length() {
        return Err(Error::InvalidParameter(
            "frame and grid lengths differ".into(),
        ));
    }
    if stretch.len() != grid.n_slices() {
        return Err(Error::InvalidParameter(format!(
            "{} stretch values for {} slices",
            stretch.len(),
            grid.n_slices()
        )));
    }
    if let Some(field) = corrector {
        if field.len() != nv {
            return Err(Error::InvalidParameter(format!(
                "corrector has {} entries for {nv} vertices",
                field.len()
            )));
        }
    }
    let slices = grid.n_slices();
    let dx = grid.dx1();
    let rotations: Vec<Matrix3<f64>> = (0..slices).map(|s| frame.rotation(s)).collect();
    // nodal strain: average the adjacent interval strains
    let strain = strain_of(frame)?;
    let nodal_strain: Vec<Matrix3<f64>> = (0..slices)
        .map(|s| {
            if s == 0 {
                strain.skew(0)
            } else if s == slices - 1 {
                strain.skew(s - 1)
            } else {
                0.5 * (strain.skew(s - 1) + strain.skew(s))
            }
        })
        .collect();
    // centerline: cumulative trapezoid of R e1
    let mut center = vec![Vector3::zeros(); slices];
    for s in 1..slices {
        center[s] = center[s - 1]
            + 0.5
                * dx
                * (rotations[s - 1].column(0).into_owned() + rotations[s].column(0).into_owned());
    }
    let scaled: Vec<Vector3<f64>> = match corrector {
        Some(field) => field.iter().map(|f| h * Vector3::from(*f)).collect(),
        None => vec![Vector3::zeros(); nv],
    };
    let mut values = vec![Vector3::zeros(); grid.n_nodes()];
    for v in 0..nv {
        let p = mesh.vertices()[v];
        let vb = scaled[v];
        // trapezoid cumulative of (a - (A vbar)_1) R e1 along the axis
        let mut axial_integral = Vector3::zeros();
        let mut prev_integrand = Vector3::zeros();
        for s in 0..slices {
            let r = &rotations[s];
            let e1 = r.column(0).into_owned();
            let av = nodal_strain[s] * vb;
            let integrand = (stretch[s] - av.x) * e1;
            if s > 0 {
                axial_integral += 0.5 * dx * (prev_integrand + integrand);
            }
            prev_integrand = integrand;
            let section = h * (p[0] * r.column(1).into_owned() + p[1] * r.column(2).into_owned());
            let corr = h * (r * vb);
            let second = -h * h * (p[0] * av.y - p[1] * av.z) * e1;
            values[grid.node(s, v)] = center[s] + section + corr + second + h * axial_integral;
        }
    }
    Displacement3D::new(grid.clone(), h, values)
}

/// Scaled 3D energy of a deformation with per-cell one-point quadrature;
/// inverted cells are counted, not fatal.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProbeEnergy {
    pub value: f64,
    pub inverted_cells: usize,
}

pub fn probe_energy(y: &Displacement3D, law: &NonlinearLaw) -> ProbeEnergy {
    let grid = y.grid();
    let mesh = grid.mesh();
    let h = y.thickness();
    let dx = grid.dx1();
    let nt = mesh.n_triangles();
    let n_cells = grid.n_intervals() * nt;
    // midpoint rule along the axis; degree-2 interior points in the plane.
    // In-plane gradients are per-cell constants, the axial column is
    // re-interpolated at every in-plane point so linearly varying bending
    // strains integrate exactly.
    let cells: Vec<(f64, bool)> = (0..n_cells)
        .into_par_iter()
        .map(|cell| {
            let slab = cell / nt;
            let t = cell % nt;
            let (grads, area) = mesh.tri_gradients(t);
            let tri = mesh.triangles()[t];
            let mut inplane = [Vector3::zeros(); 2];
            for a in 0..3 {
                let mid = 0.5 * (y.value(slab, tri[a]) + y.value(slab + 1, tri[a]));
                inplane[0] += grads[a][0] * mid;
                inplane[1] += grads[a][1] * mid;
            }
            let x1 = grid.x1(slab) + 0.5 * dx;
            let mut energy = 0.0;
            let mut inverted = false;
            for p in 0..3 {
                let (i, j, k) = (tri[p], tri[(p + 1) % 3], tri[(p + 2) % 3]);
                let interp = |s: usize| {
                    (4.0 * y.value(s, i) + y.value(s, j) + y.value(s, k)) / 6.0
                };
                let axial = (interp(slab + 1) - interp(slab)) / dx;
                let mut f = Matrix3::zeros();
                f.set_column(0, &axial);
                f.set_column(1, &(inplane[0] / h));
                f.set_column(2, &(inplane[1] / h));
                let vi = mesh.vertices()[i];
                let vj = mesh.vertices()[j];
                let vk = mesh.vertices()[k];
                let qp = [
                    (4.0 * vi[0] + vj[0] + vk[0]) / 6.0,
                    (4.0 * vi[1] + vj[1] + vk[1]) / 6.0,
                ];
                energy += area / 3.0 * dx * law.energy(&[x1, qp[0], qp[1]], &f);
                inverted |= f.determinant() <= 0.0;
            }
            (energy, inverted)
        })
        .collect();
    // ordered reduction keeps the value bit-stable across thread counts
    let mut value = 0.0;
    let mut inverted = 0;
    for (e, bad) in cells {
        value += e;
        if bad {
            inverted += 1;
        }
    }
    ProbeEnergy {
        value: value / (h * h),
        inverted_cells: inverted,
    }
}

/// Per-slab best-fit rotations: polar factor of the volume-averaged
/// deformation gradient.
pub fn slice_rotations(y: &Displacement3D) -> Vec<Matrix3<f64>> {
    let grid = y.grid();
    let nt = grid.mesh().n_triangles();
    let grads = cell_gradients(y);
    let vols = cell_volumes(grid);
    (0..grid.n_intervals())
        .map(|slab| {
            let mut avg = Matrix3::zeros();
            let mut vol = 0.0;
            for t in 0..nt {
                let cell = slab * nt + t;
                avg += vols[cell] * grads[cell];
                vol += vols[cell];
            }
            polar_rotation(&(avg / vol))
        })
        .collect()
}

/// Closest rotation in the polar sense, with the reflection corrected on
/// the smallest singular direction.
pub fn polar_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let mut u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    if (u * v_t).determinant() < 0.0 {
        let mut k = 0;
        for i in 1..3 {
            if svd.singular_values[i] < svd.singular_values[k] {
                k = i;
            }
        }
        let mut col = u.column_mut(k);
        col *= -1.0;
    }
    u * v_t
}

/// L2 distance of the deformation gradient from a per-slab rotation field.
pub fn rigidity_gap(y: &Displacement3D, rotations: &[Matrix3<f64>]) -> f64 {
    let grid = y.grid();
    let nt = grid.mesh().n_triangles();
    let grads = cell_gradients(y);
    let vols = cell_volumes(grid);
    let mut acc = 0.0;
    for slab in 0..grid.n_intervals() {
        for t in 0..nt {
            let cell = slab * nt + t;
            acc += vols[cell] * (grads[cell] - rotations[slab]).norm_squared();
        }
    }
    acc.sqrt()
}

/// Scaled squared distance of the gradient field from the rotation group,
/// `(1/h^2) int dist^2(grad_h y, SO(3))`.
pub fn rigidity_energy(y: &Displacement3D) -> f64 {
    let grid = y.grid();
    let grads = cell_gradients(y);
    let vols = cell_volumes(grid);
    let h = y.thickness();
    grads
        .iter()
        .zip(&vols)
        .map(|(f, vol)| vol * crate::material::distance_to_rotations(f).powi(2))
        .sum::<f64>()
        / (h * h)
}

/// One rung of the recovery ladder in the probe report.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeLadderEntry {
    pub h: f64,
    pub energy: f64,
    pub relative_gap: f64,
    pub inverted_cells: usize,
    /// `|grad_h y - R|_{L2} / h` for the slab best-fit rotations.
    pub rigidity_ratio: f64,
    /// Largest cell-wise `|grad_h y - R(x1)|` against the driving frame.
    pub frame_distance_sup: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    /// Limit target `L * Q0(A)`.
    pub target: f64,
    pub ladder: Vec<ProbeLadderEntry>,
    pub griso_residual: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cross_section::{build_primitive, normalize_axes, Primitive};
    use crate::effective_stiffness::{corrector_solve, effective_matrix, StrainLoad};
    use crate::fem2d::DEFAULT_CG_TOL;
    use crate::material::{NonlinearLaw, QuadraticLaw};
    use crate::rod_model::{frame_reconstruct, StrainCurve};
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn disc_grid(resolution: usize, n1: usize, length: f64) -> RodGrid {
        let mesh = build_primitive(&Primitive::Disc { radius: 1.0 }, resolution).unwrap();
        let (mesh, _) = normalize_axes(&mesh).unwrap();
        RodGrid::new(Arc::new(mesh), n1, length).unwrap()
    }

    fn rest_configuration(grid: &RodGrid, h: f64) -> Displacement3D {
        Displacement3D::from_fn(grid.clone(), h, |x1, x2, x3| {
            Vector3::new(x1, h * x2, h * x3)
        })
        .unwrap()
    }

    #[test]
    fn rigid_displacement_decomposes_cleanly() {
        let grid = disc_grid(150, 8, 1.0);
        let h = 0.1;
        let c = Vector3::new(0.3, -0.2, 0.5);
        let s = crate::rod_model::hat(&Vector3::new(0.4, -0.7, 0.2));
        let u = Displacement3D::from_fn(grid.clone(), h, |x1, x2, x3| {
            c + s * Vector3::new(x1, h * x2, h * x3)
        })
        .unwrap();
        let parts = griso_decompose(&u).unwrap();
        let norms = griso_norms(&u, &parts).unwrap();
        assert!(norms.sym_grad_l2 <= 1e-12);
        assert!(norms.profiles() <= 1e-12);
        assert!(norms.z_l2 <= 1e-12, "z norm {}", norms.z_l2);
        let back = griso_reconstruct(&grid, h, &parts).unwrap();
        assert!(u.max_difference(&back) <= 1e-12);
    }

    #[test]
    fn torsion_profile_is_recovered_in_w() {
        let grid = disc_grid(150, 10, 1.0);
        let h = 0.2;
        let s_prof = |x1: f64| 0.3 * (2.0 * x1).sin();
        let u = Displacement3D::from_fn(grid.clone(), h, |x1, x2, x3| {
            Vector3::new(0.0, -x3 * s_prof(x1), x2 * s_prof(x1))
        })
        .unwrap();
        let parts = griso_decompose(&u).unwrap();
        for s in 0..grid.n_slices() {
            let expected = -(s_prof(grid.x1(s)) - s_prof(0.0));
            assert_relative_eq!(parts.w[s], expected, epsilon = 1e-10);
        }
        let back = griso_reconstruct(&grid, h, &parts).unwrap();
        assert!(u.max_difference(&back) <= 1e-12);
    }

    #[test]
    fn random_fields_reconstruct_to_round_off() {
        let grid = disc_grid(100, 6, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let coef: Vec<f64> = (0..12).map(|_| rng.random::<f64>() - 0.5).collect();
            let u = Displacement3D::from_fn(grid.clone(), 0.15, |x1, x2, x3| {
                Vector3::new(
                    coef[0] + coef[1] * x1 + coef[2] * x2 * x3 + coef[3] * (x1 * 3.0).cos(),
                    coef[4] + coef[5] * x2 + coef[6] * x1 * x1 + coef[7] * x3,
                    coef[8] + coef[9] * x3 + coef[10] * x1 * x2 + coef[11] * x2,
                )
            })
            .unwrap();
            let parts = griso_decompose(&u).unwrap();
            let back = griso_reconstruct(&grid, 0.15, &parts).unwrap();
            let scale: f64 = u
                .values()
                .iter()
                .map(|v| v.norm())
                .fold(0.0, f64::max)
                .max(1e-300);
            assert!(u.max_difference(&back) <= 1e-10 * scale);
        }
    }

    #[test]
    fn rest_configuration_has_zero_strain_and_energy() {
        let grid = disc_grid(150, 8, 1.0);
        let h = 0.1;
        let y = rest_configuration(&grid, h);
        let frames = vec![Matrix3::identity(); grid.n_slices()];
        let g = approximate_strain(&y, &frames).unwrap();
        let worst = g.iter().map(|m| m.norm()).fold(0.0, f64::max);
        assert!(worst <= 1e-12, "strain {worst:.3e}");
        let law = NonlinearLaw::isotropic(1.0, 1.0).unwrap();
        let pe = probe_energy(&y, &law);
        assert!(pe.value.abs() <= 1e-20);
        assert_eq!(pe.inverted_cells, 0);
    }

    #[test]
    fn rigidly_rotated_rest_state_has_zero_energy() {
        let grid = disc_grid(150, 8, 1.0);
        let h = 0.1;
        let q = UnitQuaternion::from_scaled_axis(Vector3::new(0.3, 0.8, -0.4));
        let r = q.to_rotation_matrix().into_inner();
        let y = Displacement3D::from_fn(grid.clone(), h, |x1, x2, x3| {
            r * Vector3::new(x1, h * x2, h * x3)
        })
        .unwrap();
        let law = NonlinearLaw::isotropic(0.5, 1.0).unwrap();
        assert!(probe_energy(&y, &law).value.abs() <= 1e-20);
        // the constructed frame is recovered by the slab best fit
        let rots = slice_rotations(&y);
        for rs in &rots {
            assert!((rs - r).norm() <= 1e-10);
        }
        assert!(rigidity_gap(&y, &rots) <= 1e-10);
    }

    #[test]
    fn exact_frame_gradient_gives_zero_strain() {
        let grid = disc_grid(120, 6, 1.0);
        let h = 0.2;
        let q = UnitQuaternion::from_scaled_axis(Vector3::new(-0.2, 0.5, 0.1));
        let r = q.to_rotation_matrix().into_inner();
        let y = Displacement3D::from_fn(grid.clone(), h, |x1, x2, x3| {
            r * Vector3::new(x1, h * x2, h * x3)
        })
        .unwrap();
        let frames = vec![r; grid.n_slices()];
        let g = approximate_strain(&y, &frames).unwrap();
        let worst = g.iter().map(|m| m.norm()).fold(0.0, f64::max);
        assert!(worst <= 1e-12);
    }

    #[test]
    fn trivial_recovery_is_the_rest_configuration() {
        let grid = disc_grid(150, 8, 1.0);
        let h = 0.1;
        let frame = FrameCurve::constant(1.0, 8, UnitQuaternion::identity()).unwrap();
        let stretch = vec![0.0; grid.n_slices()];
        let y = build_recovery(&grid, &frame, &stretch, None, h).unwrap();
        let rest = rest_configuration(&grid, h);
        assert!(y.max_difference(&rest) <= 1e-13);
    }

    #[test]
    fn recovery_gradient_approaches_the_frame() {
        let grid = disc_grid(200, 32, 1.0);
        let kappa = 0.5;
        let strain = StrainCurve::constant(1.0, 32, Vector3::z() * kappa).unwrap();
        let frame = frame_reconstruct(&strain, UnitQuaternion::identity());
        let stretch = vec![0.0; grid.n_slices()];
        let mut sups = Vec::new();
        for h in [0.2, 0.1, 0.05] {
            let y = build_recovery(&grid, &frame, &stretch, None, h).unwrap();
            let grads = cell_gradients(&y);
            let nt = grid.mesh().n_triangles();
            let mut sup = 0.0f64;
            for slab in 0..grid.n_intervals() {
                let rmid = 0.5 * (frame.rotation(slab) + frame.rotation(slab + 1));
                for t in 0..nt {
                    sup = sup.max((grads[slab * nt + t] - rmid).norm());
                }
            }
            sups.push(sup);
        }
        assert!(
            sups[0] > sups[1] && sups[1] > sups[2],
            "sup distances {sups:?}"
        );
    }

    #[test]
    fn recovery_energy_ladder_approaches_the_limit() {
        let mesh = build_primitive(&Primitive::Disc { radius: 1.0 }, 500).unwrap();
        let (mesh, _) = normalize_axes(&mesh).unwrap();
        let mesh = Arc::new(mesh);
        let law = NonlinearLaw::isotropic(0.0, 1.0).unwrap();
        let quad = law.quadratic.clone();
        let stiff = effective_matrix(&mesh, &quad, DEFAULT_CG_TOL).unwrap();
        let kappa = 0.4;
        // bending about e3: strain coordinate A12 = -kappa
        let load = StrainLoad::new(0.0, -kappa, 0.0, 0.0);
        let target = stiff.q0_eval_coords(&Vector3::new(-kappa, 0.0, 0.0));
        let corrector = corrector_solve(&mesh, &quad, &load, DEFAULT_CG_TOL).unwrap();
        let mut gaps = Vec::new();
        for (h, n1) in [(0.2, 16), (0.1, 32), (0.05, 64)] {
            let grid = RodGrid::new(mesh.clone(), n1, 1.0).unwrap();
            let strain = StrainCurve::constant(1.0, n1, Vector3::z() * kappa).unwrap();
            let frame = frame_reconstruct(&strain, UnitQuaternion::identity());
            let stretch = vec![0.0; grid.n_slices()];
            let y = build_recovery(&grid, &frame, &stretch, Some(&corrector.field), h).unwrap();
            let pe = probe_energy(&y, &law);
            gaps.push((pe.value - target).abs() / target);
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "gaps {gaps:?}");
        assert!(gaps[2] <= 0.1, "final gap {:.3}", gaps[2]);
    }

    #[test]
    fn recovery_strain_matches_the_limit_strain() {
        // sym G of a recovery deformation approaches
        // a e1 x e1 + sym iota(A d_omega) + corrector strain
        let mesh = build_primitive(&Primitive::Disc { radius: 1.0 }, 800).unwrap();
        let (mesh, _) = normalize_axes(&mesh).unwrap();
        let mesh = Arc::new(mesh);
        let quad = QuadraticLaw::isotropic(1.0, 1.0).unwrap();
        let stiff = effective_matrix(&mesh, &quad, DEFAULT_CG_TOL).unwrap();
        let kappa = 0.4;
        let axial = Vector3::z() * kappa;
        let coords = crate::rod_model::strain_coords(&axial);
        let a_min = stiff.a_min_coords(&coords);
        let load = StrainLoad::new(a_min, coords[0], coords[1], coords[2]);
        let corrector = corrector_solve(&mesh, &quad, &load, DEFAULT_CG_TOL).unwrap();
        let h = 0.1;
        let n1 = 32;
        let grid = RodGrid::new(mesh.clone(), n1, 1.0).unwrap();
        let strain = StrainCurve::constant(1.0, n1, axial).unwrap();
        let frame = frame_reconstruct(&strain, UnitQuaternion::identity());
        let stretch = vec![a_min; grid.n_slices()];
        let y = build_recovery(&grid, &frame, &stretch, Some(&corrector.field), h).unwrap();
        let frames: Vec<Matrix3<f64>> = (0..grid.n_slices()).map(|s| frame.rotation(s)).collect();
        let g = approximate_strain(&y, &frames).unwrap();

        // vertex-averaged corrector strain (0 | d2 beta | d3 beta)
        let nv = mesh.n_vertices();
        let mut corr_strain = vec![Matrix3::zeros(); nv];
        let mut den = vec![0.0f64; nv];
        for t in 0..mesh.n_triangles() {
            let (grads, area) = mesh.tri_gradients(t);
            let tri = mesh.triangles()[t];
            let mut m = Matrix3::zeros();
            for a in 0..3 {
                for c in 0..3 {
                    m[(c, 1)] += corrector.field[tri[a]][c] * grads[a][0];
                    m[(c, 2)] += corrector.field[tri[a]][c] * grads[a][1];
                }
            }
            for &v in &tri {
                corr_strain[v] += area * m;
                den[v] += area;
            }
        }
        let weights = grid.vertex_weights();
        let mut dist_sq = 0.0;
        let mut target_sq = 0.0;
        for s in 0..grid.n_slices() {
            let wslice = if s == 0 || s == grid.n_slices() - 1 { 0.5 } else { 1.0 };
            for v in 0..nv {
                let p = mesh.vertices()[v];
                let m_vec = load.m_at(p);
                let mut target = Matrix3::zeros();
                for c in 0..3 {
                    target[(c, 0)] = m_vec[c];
                }
                target += corr_strain[v] / den[v];
                let target_sym = 0.5 * (target + target.transpose());
                let got_sym = 0.5 * (g[grid.node(s, v)] + g[grid.node(s, v)].transpose());
                let w = wslice * weights[v] * grid.dx1();
                dist_sq += w * (got_sym - target_sym).norm_squared();
                target_sq += w * target_sym.norm_squared();
            }
        }
        let rel = (dist_sq / target_sq).sqrt();
        assert!(rel <= 0.1, "strain distance {rel:.3}");
    }

    #[test]
    fn decomposition_of_recovery_tracks_imposed_profiles() {
        let corr = |xs: &[f64], ys: &[f64]| -> f64 {
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let mut num = 0.0;
            let mut dx = 0.0;
            let mut dy = 0.0;
            for (x, y) in xs.iter().zip(ys) {
                num += (x - mx) * (y - my);
                dx += (x - mx) * (x - mx);
                dy += (y - my) * (y - my);
            }
            (num / (dx * dy).sqrt()).abs()
        };
        let mesh = build_primitive(&Primitive::Disc { radius: 1.0 }, 400).unwrap();
        let (mesh, _) = normalize_axes(&mesh).unwrap();
        let mesh = Arc::new(mesh);
        let h = 0.05;
        let n1 = 40;
        let grid = RodGrid::new(mesh.clone(), n1, 1.0).unwrap();
        let x1s: Vec<f64> = (0..grid.n_slices()).map(|s| grid.x1(s)).collect();
        let displacement = |axial: Vector3<f64>| {
            let strain = StrainCurve::constant(1.0, n1, axial).unwrap();
            let frame = frame_reconstruct(&strain, UnitQuaternion::identity());
            let stretch = vec![0.0; grid.n_slices()];
            let y = build_recovery(&grid, &frame, &stretch, None, h).unwrap();
            let values: Vec<Vector3<f64>> = y
                .values()
                .iter()
                .enumerate()
                .map(|(idx, val)| {
                    let (s, v) = (idx / mesh.n_vertices(), idx % mesh.n_vertices());
                    let p = mesh.vertices()[v];
                    val - Vector3::new(grid.x1(s), h * p[0], h * p[1])
                })
                .collect();
            Displacement3D::new(grid.clone(), h, values).unwrap()
        };
        // torsion: the twist profile lands in w at leading order
        let parts = griso_decompose(&displacement(Vector3::x() * 0.5)).unwrap();
        let c_w = corr(&parts.w, &x1s);
        assert!(c_w >= 0.99, "torsion correlation {c_w:.4}");
        // bending about e3: the deflection profile lands in phi1
        let parts = griso_decompose(&displacement(Vector3::z() * 0.5)).unwrap();
        let quad_profile: Vec<f64> = x1s.iter().map(|x| x * x).collect();
        let c_phi = corr(&parts.phi1, &quad_profile);
        assert!(c_phi >= 0.99, "bending correlation {c_phi:.4}");
    }

    #[test]
    fn polar_rotation_fixes_reflections() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = Matrix3::from_fn(|_, _| rng.random::<f64>() - 0.5) + Matrix3::identity();
            let r = polar_rotation(&m);
            assert_relative_eq!(r.determinant(), 1.0, max_relative = 1e-10);
            assert!((r.transpose() * r - Matrix3::identity()).norm() <= 1e-10);
        }
    }

    #[test]
    fn cell_volumes_fill_the_body() {
        let grid = disc_grid(300, 5, 2.0);
        let total: f64 = cell_volumes(&grid).iter().sum();
        assert_relative_eq!(total, grid.mesh().area() * 2.0, max_relative = 1e-12);
    }
}
