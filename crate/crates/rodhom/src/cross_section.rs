//! Triangulated cross-sections: primitive generators, an ASCII mesh format,
//! axis normalization and exact geometric moments.
//!
//! All moment integrals are evaluated with the three-point edge-midpoint
//! rule, which is exact for quadratic integrands, so areas and second
//! moments of a mesh carry no quadrature error at all.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::{Error, Result};

const DUPLICATE_TOL: f64 = 1e-12;
const NORMALIZE_TOL: f64 = 1e-10;

/// Immutable triangle mesh of a planar section in `(x2, x3)` coordinates.
///
/// Every triangle is stored counterclockwise; construction reorients
/// clockwise input and rejects degenerate or disconnected meshes.
#[derive(Debug, Clone)]
pub struct TriMesh2D {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
}

impl TriMesh2D {
    pub fn new(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::MeshInvalid(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if triangles.is_empty() {
            return Err(Error::MeshInvalid("mesh has no triangles".into()));
        }
        for v in &vertices {
            if !v[0].is_finite() || !v[1].is_finite() {
                return Err(Error::MeshInvalid("non-finite vertex coordinate".into()));
            }
        }
        let mut mesh = TriMesh2D {
            vertices,
            triangles,
        };
        mesh.check_indices()?;
        mesh.orient_and_check_areas()?;
        mesh.check_duplicates()?;
        mesh.check_edges_and_connectivity()?;
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn tri_coords(&self, t: usize) -> [[f64; 2]; 3] {
        let [i, j, k] = self.triangles[t];
        [self.vertices[i], self.vertices[j], self.vertices[k]]
    }

    fn check_indices(&self) -> Result<()> {
        let nv = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            for &i in tri {
                if i >= nv {
                    return Err(Error::MeshInvalid(format!(
                        "triangle {t} references vertex {i} but mesh has only {nv} vertices"
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::MeshInvalid(format!(
                    "triangle {t} repeats a vertex index"
                )));
            }
        }
        Ok(())
    }

    fn orient_and_check_areas(&mut self) -> Result<()> {
        let scale = self.diameter().max(1e-30);
        let floor = 1e-14 * scale * scale;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.tri_coords(t);
            let twice = signed_area2(a, b, c);
            if twice.abs() <= floor {
                return Err(Error::MeshInvalid(format!(
                    "triangle {t} is degenerate (area {:.3e})",
                    0.5 * twice
                )));
            }
            if twice < 0.0 {
                self.triangles[t].swap(1, 2);
            }
        }
        Ok(())
    }

    fn check_duplicates(&self) -> Result<()> {
        let mut order: Vec<usize> = (0..self.vertices.len()).collect();
        order.sort_by(|&a, &b| {
            self.vertices[a]
                .partial_cmp(&self.vertices[b])
                .expect("finite coordinates")
        });
        for w in 0..order.len() {
            let a = self.vertices[order[w]];
            for &jb in order[w + 1..].iter() {
                let b = self.vertices[jb];
                if b[0] - a[0] > DUPLICATE_TOL {
                    break;
                }
                if (b[1] - a[1]).abs() <= DUPLICATE_TOL {
                    return Err(Error::MeshInvalid(format!(
                        "vertices {} and {} coincide within {DUPLICATE_TOL}",
                        order[w], jb
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_edges_and_connectivity(&self) -> Result<()> {
        let mut edges: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let (i, j) = (tri[e], tri[(e + 1) % 3]);
                let key = (i.min(j), i.max(j));
                edges.entry(key).or_default().push(t);
            }
        }
        for (key, ts) in &edges {
            if ts.len() > 2 {
                return Err(Error::MeshInvalid(format!(
                    "edge {:?} is shared by {} triangles",
                    key,
                    ts.len()
                )));
            }
        }
        // flood fill over edge-adjacent triangles
        let mut seen = vec![false; self.triangles.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1usize;
        while let Some(t) = stack.pop() {
            let tri = self.triangles[t];
            for e in 0..3 {
                let (i, j) = (tri[e], tri[(e + 1) % 3]);
                let key = (i.min(j), i.max(j));
                for &s in &edges[&key] {
                    if !seen[s] {
                        seen[s] = true;
                        count += 1;
                        stack.push(s);
                    }
                }
            }
        }
        if count != self.triangles.len() {
            return Err(Error::MeshInvalid(format!(
                "mesh is not edge-connected ({} of {} triangles reachable)",
                count,
                self.triangles.len()
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (0..self.n_triangles())
            .map(|t| {
                let [a, b, c] = self.tri_coords(t);
                0.5 * signed_area2(a, b, c)
            })
            .sum()
    }

    /// Bounding-box diagonal, used as the length scale in tolerances.
    pub fn diameter(&self) -> f64 {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
    }

    /// Raw monomial moments about the origin, exact per triangle.
    pub fn raw_moments(&self) -> RawMoments {
        let mut m = RawMoments::default();
        for t in 0..self.n_triangles() {
            for (p, w) in self.tri_quadrature(t) {
                m.area += w;
                m.x2 += w * p[0];
                m.x3 += w * p[1];
                m.x2x2 += w * p[0] * p[0];
                m.x3x3 += w * p[1] * p[1];
                m.x2x3 += w * p[0] * p[1];
            }
        }
        m
    }

    /// Degree-2 exact quadrature for triangle `t`, using the interior
    /// points at barycentric coordinates `(2/3, 1/6, 1/6)`. Interior
    /// points keep material sampling off mesh lines, where piecewise
    /// laws switch phase.
    pub fn tri_quadrature(&self, t: usize) -> [([f64; 2], f64); 3] {
        let [a, b, c] = self.tri_coords(t);
        let w = 0.5 * signed_area2(a, b, c) / 3.0;
        let pt = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
            [
                (4.0 * p[0] + q[0] + r[0]) / 6.0,
                (4.0 * p[1] + q[1] + r[1]) / 6.0,
            ]
        };
        [(pt(a, b, c), w), (pt(b, c, a), w), (pt(c, a, b), w)]
    }

    /// Gradients of the three hat functions on triangle `t`, and its area.
    pub fn tri_gradients(&self, t: usize) -> ([[f64; 2]; 3], f64) {
        let [a, b, c] = self.tri_coords(t);
        let twice = signed_area2(a, b, c);
        let g = [
            [(b[1] - c[1]) / twice, (c[0] - b[0]) / twice],
            [(c[1] - a[1]) / twice, (a[0] - c[0]) / twice],
            [(a[1] - b[1]) / twice, (b[0] - a[0]) / twice],
        ];
        (g, 0.5 * twice)
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.tri_coords(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Smallest interior angle over all triangles, in degrees.
    pub fn min_angle_deg(&self) -> f64 {
        let mut min = f64::INFINITY;
        for t in 0..self.n_triangles() {
            let [a, b, c] = self.tri_coords(t);
            for (p, q, r) in [(a, b, c), (b, c, a), (c, a, b)] {
                let u = [q[0] - p[0], q[1] - p[1]];
                let v = [r[0] - p[0], r[1] - p[1]];
                let dot = u[0] * v[0] + u[1] * v[1];
                let cross = (u[0] * v[1] - u[1] * v[0]).abs();
                min = min.min(cross.atan2(dot));
            }
        }
        min.to_degrees()
    }

    /// Uniform refinement: each triangle splits into four via edge midpoints.
    pub fn refine(&self) -> TriMesh2D {
        let mut vertices = self.vertices.clone();
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut mid = |i: usize, j: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
            let key = (i.min(j), i.max(j));
            *midpoint.entry(key).or_insert_with(|| {
                let a = vertices[i];
                let b = vertices[j];
                vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for tri in &self.triangles {
            let [i, j, k] = *tri;
            let ij = mid(i, j, &mut vertices);
            let jk = mid(j, k, &mut vertices);
            let ki = mid(k, i, &mut vertices);
            triangles.push([i, ij, ki]);
            triangles.push([ij, j, jk]);
            triangles.push([ki, jk, k]);
            triangles.push([ij, jk, ki]);
        }
        TriMesh2D {
            vertices,
            triangles,
        }
    }

    /// Applies `x -> rot(-angle) * (x - shift)` to every vertex.
    fn rigid_transform(&self, shift: [f64; 2], angle: f64) -> TriMesh2D {
        let (s, c) = angle.sin_cos();
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                let x = v[0] - shift[0];
                let y = v[1] - shift[1];
                [c * x + s * y, -s * x + c * y]
            })
            .collect();
        TriMesh2D {
            vertices,
            triangles: self.triangles.clone(),
        }
    }
}

fn signed_area2(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Monomial moments of a mesh about the origin.
#[derive(Debug, Default, Clone, Copy)]
pub struct RawMoments {
    pub area: f64,
    pub x2: f64,
    pub x3: f64,
    pub x2x2: f64,
    pub x3x3: f64,
    pub x2x3: f64,
}

/// Rigid transform and moments produced by [`normalize_axes`].
///
/// `translation` is the centroid of the input mesh and `rotation_angle` the
/// principal-axis angle; the normalized mesh coordinates are
/// `rot(-rotation_angle) * (x - translation)`. The torsion constant is
/// filled in by `fem2d::torsion_constant`.
#[derive(Debug, Clone, Serialize)]
pub struct SectionGeometry {
    pub translation: [f64; 2],
    pub rotation_angle: f64,
    pub area: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub torsion_constant: Option<f64>,
}

/// Moves the centroid to the origin and rotates to principal axes so that
/// the first moments and the cross moment vanish.
///
/// Among the two principal orderings the one with `mu2 >= mu3` is chosen,
/// with the angle in `(-pi/2, pi/2]`; sections with equal principal moments
/// keep angle zero.
pub fn normalize_axes(mesh: &TriMesh2D) -> Result<(TriMesh2D, SectionGeometry)> {
    let m = mesh.raw_moments();
    if m.area <= 0.0 {
        return Err(Error::MeshInvalid(format!(
            "non-positive mesh area {:.3e}",
            m.area
        )));
    }
    let c = [m.x2 / m.area, m.x3 / m.area];
    let j11 = m.x2x2 - m.area * c[0] * c[0];
    let j22 = m.x3x3 - m.area * c[1] * c[1];
    let j12 = m.x2x3 - m.area * c[0] * c[1];
    let spread = ((j11 - j22).powi(2) + 4.0 * j12 * j12).sqrt();
    let angle = if spread <= 1e-12 * (j11 + j22) {
        0.0
    } else {
        // rot(-angle) maps the larger-moment eigenvector onto the x2 axis
        let mut a = 0.5 * (2.0 * j12).atan2(j11 - j22);
        if a <= -0.5 * std::f64::consts::PI {
            a += std::f64::consts::PI;
        }
        a
    };
    let out = mesh.rigid_transform(c, angle);
    let mn = out.raw_moments();
    let tol = NORMALIZE_TOL * mn.area * out.diameter().powi(2);
    for (name, val) in [("x2", mn.x2), ("x3", mn.x3), ("x2x3", mn.x2x3)] {
        if val.abs() > tol {
            return Err(Error::MeshInvalid(format!(
                "normalization failed: integral of {name} is {val:.3e} (tol {tol:.3e})"
            )));
        }
    }
    let geometry = SectionGeometry {
        translation: c,
        rotation_angle: angle,
        area: mn.area,
        mu2: mn.x2x2,
        mu3: mn.x3x3,
        torsion_constant: None,
    };
    Ok((out, geometry))
}

/// In-plane position vector `(0, x2, x3)` entering the macroscopic strain.
pub fn d_omega(p: [f64; 2]) -> [f64; 3] {
    [0.0, p[0], p[1]]
}

/// Cross-section primitives understood by [`build_primitive`].
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Disc { radius: f64 },
    Rectangle { width: f64, height: f64 },
    Ellipse { semi_x: f64, semi_y: f64 },
    Annulus { inner: f64, outer: f64 },
    LShape { width: f64, height: f64, thickness: f64 },
}

/// Builds a triangle mesh of a primitive with roughly `resolution` elements.
pub fn build_primitive(primitive: &Primitive, resolution: usize) -> Result<TriMesh2D> {
    if resolution < 8 {
        return Err(Error::InvalidParameter(format!(
            "resolution must be at least 8, got {resolution}"
        )));
    }
    match *primitive {
        Primitive::Disc { radius } => {
            require_positive("radius", radius)?;
            disc_mesh(radius, resolution)
        }
        Primitive::Rectangle { width, height } => {
            require_positive("width", width)?;
            require_positive("height", height)?;
            rectangle_mesh(width, height, resolution)
        }
        Primitive::Ellipse { semi_x, semi_y } => {
            require_positive("semi_x", semi_x)?;
            require_positive("semi_y", semi_y)?;
            let disc = disc_mesh(1.0, resolution)?;
            let vertices = disc
                .vertices
                .iter()
                .map(|v| [semi_x * v[0], semi_y * v[1]])
                .collect();
            TriMesh2D::new(vertices, disc.triangles)
        }
        Primitive::Annulus { inner, outer } => {
            require_positive("inner", inner)?;
            require_positive("outer", outer)?;
            if inner >= outer {
                return Err(Error::InvalidParameter(format!(
                    "annulus needs inner < outer, got {inner} >= {outer}"
                )));
            }
            annulus_mesh(inner, outer, resolution)
        }
        Primitive::LShape {
            width,
            height,
            thickness,
        } => {
            require_positive("width", width)?;
            require_positive("height", height)?;
            require_positive("thickness", thickness)?;
            if thickness >= width || thickness >= height {
                return Err(Error::InvalidParameter(
                    "L-shape thickness must be smaller than both legs".into(),
                ));
            }
            lshape_mesh(width, height, thickness, resolution)
        }
    }
}

fn require_positive(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {value}"
        )));
    }
    Ok(())
}

/// Spider-web disc mesh: ring `k` of `m` carries `6k` vertices, giving
/// `6 m^2` near-equilateral triangles over the inscribed `6m`-gon.
fn disc_mesh(radius: f64, resolution: usize) -> Result<TriMesh2D> {
    let m = ((resolution as f64 / 6.0).sqrt().round() as usize).max(1);
    let mut vertices = vec![[0.0, 0.0]];
    let mut ring_start = vec![0usize; m + 1];
    for k in 1..=m {
        ring_start[k] = vertices.len();
        let n = 6 * k;
        let r = radius * k as f64 / m as f64;
        for j in 0..n {
            let th = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            vertices.push([r * th.cos(), r * th.sin()]);
        }
    }
    let mut triangles = Vec::with_capacity(6 * m * m);
    for j in 0..6 {
        triangles.push([0, 1 + j, 1 + (j + 1) % 6]);
    }
    for k in 1..m {
        let inner: Vec<usize> = (0..6 * k).map(|j| ring_start[k] + j).collect();
        let outer: Vec<usize> = (0..6 * (k + 1)).map(|j| ring_start[k + 1] + j).collect();
        bridge_rings(&inner, &outer, &mut triangles);
    }
    TriMesh2D::new(vertices, triangles)
}

/// Triangulates the annulus between two concentric vertex rings whose
/// members sit at angles `2 pi j / len`. Angle comparisons are done with
/// integer cross-multiplication, so the walk is exact.
fn bridge_rings(inner: &[usize], outer: &[usize], triangles: &mut Vec<[usize; 3]>) {
    let ni = inner.len();
    let no = outer.len();
    let (mut i, mut j) = (0usize, 0usize);
    while i < ni || j < no {
        let advance_outer = if j == no {
            false
        } else if i == ni {
            true
        } else {
            // next outer angle (j+1)/no vs next inner angle (i+1)/ni
            (j + 1) * ni <= (i + 1) * no
        };
        if advance_outer {
            triangles.push([inner[i % ni], outer[j % no], outer[(j + 1) % no]]);
            j += 1;
        } else {
            triangles.push([inner[i % ni], outer[j % no], inner[(i + 1) % ni]]);
            i += 1;
        }
    }
}

fn rectangle_mesh(width: f64, height: f64, resolution: usize) -> Result<TriMesh2D> {
    let cell = (width * height * 2.0 / resolution as f64).sqrt();
    let nx = (width / cell).round().max(1.0) as usize;
    let ny = (height / cell).round().max(1.0) as usize;
    let xs: Vec<f64> = (0..=nx)
        .map(|i| width * (i as f64 / nx as f64 - 0.5))
        .collect();
    let ys: Vec<f64> = (0..=ny)
        .map(|j| height * (j as f64 / ny as f64 - 0.5))
        .collect();
    structured_mesh(&xs, &ys, |_, _| true)
}

fn annulus_mesh(inner: f64, outer: f64, resolution: usize) -> Result<TriMesh2D> {
    let rbar = 0.5 * (inner + outer);
    let dr = (4.0 * std::f64::consts::PI * rbar * (outer - inner) / resolution as f64).sqrt();
    let mr = ((outer - inner) / dr).round().max(1.0) as usize;
    let nt = ((2.0 * std::f64::consts::PI * rbar * mr as f64 / (outer - inner))
        .round()
        .max(8.0)) as usize;
    let mut vertices = Vec::with_capacity((mr + 1) * nt);
    for k in 0..=mr {
        let r = inner + (outer - inner) * k as f64 / mr as f64;
        for j in 0..nt {
            let th = 2.0 * std::f64::consts::PI * j as f64 / nt as f64;
            vertices.push([r * th.cos(), r * th.sin()]);
        }
    }
    let idx = |k: usize, j: usize| k * nt + j % nt;
    let mut triangles = Vec::with_capacity(2 * mr * nt);
    for k in 0..mr {
        for j in 0..nt {
            triangles.push([idx(k, j), idx(k, j + 1), idx(k + 1, j)]);
            triangles.push([idx(k, j + 1), idx(k + 1, j + 1), idx(k + 1, j)]);
        }
    }
    TriMesh2D::new(vertices, triangles)
}

fn lshape_mesh(width: f64, height: f64, thickness: f64, resolution: usize) -> Result<TriMesh2D> {
    let area = width * thickness + thickness * height - thickness * thickness;
    let cell = (2.0 * area / resolution as f64).sqrt();
    let seg = |a: f64, b: f64| -> Vec<f64> {
        let n = (((b - a) / cell).round() as usize).max(1);
        (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
    };
    let mut xs = seg(0.0, thickness);
    xs.extend(seg(thickness, width).into_iter().skip(1));
    let mut ys = seg(0.0, thickness);
    ys.extend(seg(thickness, height).into_iter().skip(1));
    structured_mesh(&xs, &ys, |cx, cy| cx < thickness || cy < thickness)
}

/// Builds a grid mesh over the given coordinate lines, keeping only cells
/// whose center satisfies `keep`, and compacts unused vertices.
fn structured_mesh(xs: &[f64], ys: &[f64], keep: impl Fn(f64, f64) -> bool) -> Result<TriMesh2D> {
    let nx = xs.len();
    let mut map = vec![usize::MAX; nx * ys.len()];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let vid = |i: usize, j: usize, vertices: &mut Vec<[f64; 2]>, map: &mut Vec<usize>| {
        let key = j * nx + i;
        if map[key] == usize::MAX {
            vertices.push([xs[i], ys[j]]);
            map[key] = vertices.len() - 1;
        }
        map[key]
    };
    for j in 0..ys.len() - 1 {
        for i in 0..nx - 1 {
            let cx = 0.5 * (xs[i] + xs[i + 1]);
            let cy = 0.5 * (ys[j] + ys[j + 1]);
            if !keep(cx, cy) {
                continue;
            }
            let v00 = vid(i, j, &mut vertices, &mut map);
            let v10 = vid(i + 1, j, &mut vertices, &mut map);
            let v01 = vid(i, j + 1, &mut vertices, &mut map);
            let v11 = vid(i + 1, j + 1, &mut vertices, &mut map);
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    TriMesh2D::new(vertices, triangles)
}

/// Parses the ASCII mesh format: first line `nv nt`, then `nv` vertex lines
/// `x2 x3`, then `nt` index lines `i j k` (0-based).
pub fn parse_mesh(text: &str) -> Result<TriMesh2D> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (line0, header) = lines
        .next()
        .ok_or(Error::MeshFormat {
            line: 1,
            message: "empty file".into(),
        })?;
    let counts: Vec<&str> = header.split_whitespace().collect();
    if counts.len() != 2 {
        return Err(Error::MeshFormat {
            line: line0 + 1,
            message: format!("expected header 'nv nt', got '{header}'"),
        });
    }
    let parse_count = |s: &str, line: usize| -> Result<usize> {
        s.parse().map_err(|_| Error::MeshFormat {
            line,
            message: format!("invalid count '{s}'"),
        })
    };
    let nv = parse_count(counts[0], line0 + 1)?;
    let nt = parse_count(counts[1], line0 + 1)?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (lno, line) = lines.next().ok_or(Error::MeshFormat {
            line: line0 + 1,
            message: format!("expected {nv} vertex lines"),
        })?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(Error::MeshFormat {
                line: lno + 1,
                message: format!("expected 'x2 x3', got '{line}'"),
            });
        }
        let mut v = [0.0; 2];
        for (d, p) in parts.iter().enumerate() {
            v[d] = p.parse().map_err(|_| Error::MeshFormat {
                line: lno + 1,
                message: format!("invalid coordinate '{p}'"),
            })?;
        }
        vertices.push(v);
    }
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (lno, line) = lines.next().ok_or(Error::MeshFormat {
            line: line0 + 1,
            message: format!("expected {nt} triangle lines"),
        })?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::MeshFormat {
                line: lno + 1,
                message: format!("expected 'i j k', got '{line}'"),
            });
        }
        let mut tri = [0usize; 3];
        for (d, p) in parts.iter().enumerate() {
            tri[d] = p.parse().map_err(|_| Error::MeshFormat {
                line: lno + 1,
                message: format!("invalid vertex index '{p}'"),
            })?;
        }
        triangles.push(tri);
    }
    if let Some((lno, line)) = lines.next() {
        return Err(Error::MeshFormat {
            line: lno + 1,
            message: format!("unexpected trailing content '{line}'"),
        });
    }
    TriMesh2D::new(vertices, triangles)
}

pub fn load_mesh<P: AsRef<Path>>(path: P) -> Result<TriMesh2D> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}

/// Serializes a mesh in the same ASCII format `parse_mesh` reads.
pub fn format_mesh(mesh: &TriMesh2D) -> String {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", mesh.n_vertices(), mesh.n_triangles()));
    for v in mesh.vertices() {
        out.push_str(&format!("{} {}\n", v[0], v[1]));
    }
    for t in mesh.triangles() {
        out.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn rectangle_area_is_exact() {
        let mesh = build_primitive(
            &Primitive::Rectangle {
                width: 1.0,
                height: 1.0,
            },
            2048,
        )
        .unwrap();
        assert_eq!(mesh.n_triangles(), 2048);
        assert_relative_eq!(mesh.area(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn disc_area_matches_inscribed_polygon() {
        let mesh = build_primitive(&Primitive::Disc { radius: 1.0 }, 10_000).unwrap();
        let m = ((10_000f64 / 6.0).sqrt().round()) as usize;
        let n = 6 * m;
        let oracle = 0.5 * n as f64 * (2.0 * PI / n as f64).sin();
        assert_relative_eq!(mesh.area(), oracle, max_relative = 1e-12);
        assert_relative_eq!(mesh.area(), PI, max_relative = 1e-3);
    }

    #[test]
    fn ellipse_area_is_affine_disc() {
        let mesh = build_primitive(
            &Primitive::Ellipse {
                semi_x: 2.0,
                semi_y: 1.0,
            },
            10_000,
        )
        .unwrap();
        assert_relative_eq!(mesh.area(), 2.0 * PI, max_relative = 1e-3);
    }

    #[test]
    fn annulus_and_lshape_areas() {
        let mesh = build_primitive(
            &Primitive::Annulus {
                inner: 0.5,
                outer: 1.0,
            },
            4000,
        )
        .unwrap();
        // inscribed polygons underestimate both circles
        assert_relative_eq!(mesh.area(), PI * 0.75, max_relative = 5e-3);
        let mesh = build_primitive(
            &Primitive::LShape {
                width: 2.0,
                height: 1.5,
                thickness: 0.5,
            },
            1000,
        )
        .unwrap();
        assert_relative_eq!(mesh.area(), 2.0 * 0.5 + 0.5 * 1.5 - 0.25, max_relative = 1e-12);
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(build_primitive(&Primitive::Disc { radius: -1.0 }, 100).is_err());
        assert!(build_primitive(&Primitive::Disc { radius: 1.0 }, 4).is_err());
        assert!(build_primitive(
            &Primitive::Annulus {
                inner: 1.0,
                outer: 0.5
            },
            100
        )
        .is_err());
    }

    #[test]
    fn parse_single_triangle() {
        let mesh = parse_mesh("3 1\n0 0\n1 0\n0 1\n0 1 2\n").unwrap();
        assert_relative_eq!(mesh.area(), 0.5);
    }

    #[test]
    fn clockwise_triangle_is_reoriented() {
        let mesh = parse_mesh("3 1\n0 0\n1 0\n0 1\n0 2 1\n").unwrap();
        assert_relative_eq!(mesh.area(), 0.5);
        let [a, b, c] = mesh.tri_coords(0);
        assert!(signed_area2(a, b, c) > 0.0);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let err = parse_mesh("3 1\n0 0\n1 0\n0 1\n0 1 7\n").unwrap_err();
        assert!(matches!(err, Error::MeshInvalid(_)), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_mesh("3 1\n0 0\nbad line\n0 1\n0 1 2\n").unwrap_err();
        match err {
            Error::MeshFormat { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn duplicate_vertices_are_rejected() {
        let err = parse_mesh("4 2\n0 0\n1 0\n0 1\n0 0\n0 1 2\n3 1 2\n").unwrap_err();
        assert!(matches!(err, Error::MeshInvalid(_)));
    }

    #[test]
    fn disconnected_mesh_is_rejected() {
        let text = "6 2\n0 0\n1 0\n0 1\n5 5\n6 5\n5 6\n0 1 2\n3 4 5\n";
        let err = parse_mesh(text).unwrap_err();
        assert!(matches!(err, Error::MeshInvalid(_)));
    }

    #[test]
    fn format_round_trips() {
        let mesh = build_primitive(&Primitive::Disc { radius: 0.7 }, 64).unwrap();
        let back = parse_mesh(&format_mesh(&mesh)).unwrap();
        assert_eq!(back.n_vertices(), mesh.n_vertices());
        assert_relative_eq!(back.area(), mesh.area(), max_relative = 1e-15);
    }

    #[test]
    fn centered_square_needs_no_transform() {
        let mesh = build_primitive(
            &Primitive::Rectangle {
                width: 1.0,
                height: 1.0,
            },
            512,
        )
        .unwrap();
        let (_, geo) = normalize_axes(&mesh).unwrap();
        assert!(geo.translation[0].abs() < 1e-14 && geo.translation[1].abs() < 1e-14);
        assert_eq!(geo.rotation_angle, 0.0);
        assert_relative_eq!(geo.mu2, 1.0 / 12.0, max_relative = 1e-12);
        assert_relative_eq!(geo.mu3, 1.0 / 12.0, max_relative = 1e-12);
    }

    #[test]
    fn shifted_square_is_translated_back() {
        let base = build_primitive(
            &Primitive::Rectangle {
                width: 1.0,
                height: 1.0,
            },
            512,
        )
        .unwrap();
        let shifted = TriMesh2D::new(
            base.vertices().iter().map(|v| [v[0] + 0.5, v[1] + 0.5]).collect(),
            base.triangles().to_vec(),
        )
        .unwrap();
        let (_, geo) = normalize_axes(&shifted).unwrap();
        assert_relative_eq!(geo.translation[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(geo.translation[1], 0.5, max_relative = 1e-12);
        assert_relative_eq!(geo.mu2, 1.0 / 12.0, max_relative = 1e-12);
    }

    #[test]
    fn disc_moments_approach_quarter_pi() {
        let mesh = build_primitive(&Primitive::Disc { radius: 1.0 }, 10_000).unwrap();
        let (_, geo) = normalize_axes(&mesh).unwrap();
        assert_relative_eq!(geo.mu2, PI / 4.0, max_relative = 1e-3);
        assert_relative_eq!(geo.mu3, PI / 4.0, max_relative = 1e-3);
    }

    #[test]
    fn ellipse_orders_principal_moments() {
        // semi-axes swapped on input: normalization must rotate so mu2 >= mu3
        let mesh = build_primitive(
            &Primitive::Ellipse {
                semi_x: 1.0,
                semi_y: 2.0,
            },
            4000,
        )
        .unwrap();
        let (_, geo) = normalize_axes(&mesh).unwrap();
        assert!(geo.mu2 >= geo.mu3);
        assert_relative_eq!(geo.mu2, PI * 8.0 / 4.0, max_relative = 2e-3);
        assert_relative_eq!(geo.mu3, PI / 2.0, max_relative = 2e-3);
    }

    #[test]
    fn normalization_is_idempotent() {
        let mesh = build_primitive(
            &Primitive::LShape {
                width: 2.0,
                height: 1.0,
                thickness: 0.25,
            },
            800,
        )
        .unwrap();
        let (first, geo1) = normalize_axes(&mesh).unwrap();
        let (_, geo2) = normalize_axes(&first).unwrap();
        assert!(geo2.translation[0].abs() < 1e-12);
        assert!(geo2.translation[1].abs() < 1e-12);
        assert!(geo2.rotation_angle.abs() < 1e-10 || (geo2.rotation_angle - PI / 2.0).abs() < 1e-10);
        assert_relative_eq!(geo1.mu2, geo2.mu2, max_relative = 1e-12);
        assert_relative_eq!(geo1.mu3, geo2.mu3, max_relative = 1e-12);
    }

    #[test]
    fn d_omega_matches_definition() {
        assert_eq!(d_omega([0.0, 0.0]), [0.0, 0.0, 0.0]);
        assert_eq!(d_omega([1.0, 0.0]), [0.0, 1.0, 0.0]);
        assert_eq!(d_omega([0.3, -0.7]), [0.0, 0.3, -0.7]);
    }

    #[test]
    fn refinement_preserves_area_and_moments() {
        let mesh = build_primitive(&Primitive::Disc { radius: 1.0 }, 96).unwrap();
        let fine = mesh.refine();
        assert_eq!(fine.n_triangles(), 4 * mesh.n_triangles());
        let (m0, m1) = (mesh.raw_moments(), fine.raw_moments());
        assert_relative_eq!(m0.area, m1.area, max_relative = 1e-13);
        assert_relative_eq!(m0.x2x2, m1.x2x2, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn central_moments_are_translation_invariant(tx in -5.0f64..5.0, ty in -5.0f64..5.0) {
            let base = build_primitive(&Primitive::LShape {
                width: 1.5, height: 1.0, thickness: 0.5,
            }, 200).unwrap();
            let (_, geo0) = normalize_axes(&base).unwrap();
            let shifted = TriMesh2D::new(
                base.vertices().iter().map(|v| [v[0] + tx, v[1] + ty]).collect(),
                base.triangles().to_vec(),
            ).unwrap();
            let (_, geo) = normalize_axes(&shifted).unwrap();
            prop_assert!((geo.mu2 - geo0.mu2).abs() <= 1e-12 * (1.0 + geo0.mu2));
            prop_assert!((geo.mu3 - geo0.mu3).abs() <= 1e-12 * (1.0 + geo0.mu3));
        }

        #[test]
        fn polar_moment_is_additive(seed in 0u64..32) {
            // mu2 + mu3 equals the polar moment computed independently
            let res = 100 + (seed as usize) * 17;
            let mesh = build_primitive(&Primitive::Ellipse { semi_x: 1.3, semi_y: 0.8 }, res).unwrap();
            let (normalized, geo) = normalize_axes(&mesh).unwrap();
            let mut polar = 0.0;
            for t in 0..normalized.n_triangles() {
                for (p, w) in normalized.tri_quadrature(t) {
                    polar += w * (p[0] * p[0] + p[1] * p[1]);
                }
            }
            prop_assert!((geo.mu2 + geo.mu3 - polar).abs() <= 1e-12 * polar);
        }
    }
}
