//! Two-dimensional as-rigid-as-possible deformation.
//!
//! Energy over a triangle mesh with uniform edge weights:
//!
//! `E(p') = Σ_t min_{R_t ∈ SO(2)} Σ_{(i,j) ∈ t} ‖(p'_i − p'_j) − R_t (p_i − p_j)‖²`
//!
//! minimized by local-global alternation. Control vertices are hard
//! constraints eliminated from the global system, which is factored once
//! with an envelope Cholesky decomposition.

use crate::error::{DgpError, Result};

pub type Point2 = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control {
    pub vertex: usize,
    pub target: Point2,
    /// Immovable controls keep their rest position as target.
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArapMesh {
    vertices: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    controls: Vec<Control>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArapSolution {
    pub positions: Vec<Point2>,
    /// Energy after each global step.
    pub energies: Vec<f64>,
    pub iterations: usize,
}

fn signed_area(a: Point2, b: Point2, c: Point2) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

impl ArapMesh {
    pub fn new(vertices: Vec<Point2>, triangles: Vec<[usize; 3]>, controls: Vec<Control>) -> Result<Self> {
        let nv = vertices.len();
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DgpError::DegenerateGeometry("non-finite vertex".into()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= nv) {
                return Err(DgpError::DegenerateGeometry(format!("triangle {t} index out of range")));
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area.abs() <= 1e-12 {
                return Err(DgpError::DegenerateGeometry(format!("triangle {t} is degenerate")));
            }
        }
        let mut seen = vec![false; nv];
        for c in &controls {
            if c.vertex >= nv {
                return Err(DgpError::DegenerateGeometry(format!(
                    "control vertex {} out of range",
                    c.vertex
                )));
            }
            if std::mem::replace(&mut seen[c.vertex], true) {
                return Err(DgpError::DegenerateGeometry(format!(
                    "duplicate control vertex {}",
                    c.vertex
                )));
            }
            if c.target.iter().any(|v| !v.is_finite()) {
                return Err(DgpError::DegenerateGeometry("non-finite control target".into()));
            }
        }
        Ok(Self {
            vertices,
            triangles,
            controls,
        })
    }

    /// Regular grid over `[x0, x1] × [y0, y1]` with the given pitch; each
    /// cell is split into two triangles. Vertices are row-major.
    pub fn grid(x0: f64, y0: f64, x1: f64, y1: f64, pitch: f64) -> Result<Self> {
        if !(pitch > 0.0) || !(x1 >= x0 && y1 >= y0) {
            return Err(DgpError::Config(format!(
                "invalid grid [{x0}, {x1}]x[{y0}, {y1}] pitch {pitch}"
            )));
        }
        let nx = (((x1 - x0) / pitch).ceil() as usize).max(1) + 1;
        let ny = (((y1 - y0) / pitch).ceil() as usize).max(1) + 1;
        let mut vertices = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                vertices.push([x0 + i as f64 * pitch, y0 + j as f64 * pitch]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let a = j * nx + i;
                let (b, c, d) = (a + 1, a + nx, a + nx + 1);
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            }
        }
        Self::new(vertices, triangles, Vec::new())
    }

    pub fn with_controls(mut self, controls: Vec<Control>) -> Result<Self> {
        self.controls = controls;
        Self::new(self.vertices, self.triangles, self.controls)
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn controls(&self) -> &[Control] {
        &self.controls
    }

    /// Index of the vertex closest to `p`, skipping `taken` vertices.
    pub fn nearest_vertex(&self, p: Point2, taken: &[usize]) -> Option<usize> {
        self.vertices
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken.contains(i))
            .min_by(|(_, a), (_, b)| {
                let da = (a[0] - p[0]).powi(2) + (a[1] - p[1]).powi(2);
                let db = (b[0] - p[0]).powi(2) + (b[1] - p[1]).powi(2);
                da.total_cmp(&db)
            })
            .map(|(i, _)| i)
    }

    fn control_target(&self, c: &Control) -> Point2 {
        if c.fixed {
            self.vertices[c.vertex]
        } else {
            c.target
        }
    }
}

const EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

/// Covariance `Σ e' eᵀ` of a triangle's deformed and rest edges.
fn edge_covariance(rest: &[Point2], cur: &[Point2], tri: &[usize; 3]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for (a, b) in EDGES {
        let (i, j) = (tri[a], tri[b]);
        let e = [rest[i][0] - rest[j][0], rest[i][1] - rest[j][1]];
        let d = [cur[i][0] - cur[j][0], cur[i][1] - cur[j][1]];
        for r in 0..2 {
            for s in 0..2 {
                c[r][s] += d[r] * e[s];
            }
        }
    }
    c
}

/// Rotation angle maximizing `tr(Rᵀ C)`: the rotation factor of the polar
/// decomposition of `C`.
fn best_rotation(c: &[[f64; 2]; 2]) -> (f64, f64) {
    let a = c[0][0] + c[1][1];
    let b = c[1][0] - c[0][1];
    let n = a.hypot(b);
    if n == 0.0 {
        (1.0, 0.0)
    } else {
        (a / n, b / n)
    }
}

/// ARAP energy of `positions` with optimal per-triangle rotations.
pub fn arap_energy(mesh: &ArapMesh, positions: &[Point2]) -> f64 {
    let rest = &mesh.vertices;
    mesh.triangles
        .iter()
        .map(|tri| {
            let mut sq = 0.0;
            for (a, b) in EDGES {
                let (i, j) = (tri[a], tri[b]);
                let e = [rest[i][0] - rest[j][0], rest[i][1] - rest[j][1]];
                let d = [positions[i][0] - positions[j][0], positions[i][1] - positions[j][1]];
                sq += e[0] * e[0] + e[1] * e[1] + d[0] * d[0] + d[1] * d[1];
            }
            let c = edge_covariance(rest, positions, tri);
            let a = c[0][0] + c[1][1];
            let b = c[1][0] - c[0][1];
            (sq - 2.0 * a.hypot(b)).max(0.0)
        })
        .sum()
}

/// Envelope (skyline) Cholesky factor of a symmetric positive-definite matrix.
struct EnvelopeCholesky {
    /// First stored column of each row.
    first: Vec<usize>,
    /// Row `i` holds columns `first[i]..=i`.
    rows: Vec<Vec<f64>>,
}

impl EnvelopeCholesky {
    fn factor(first: Vec<usize>, mut rows: Vec<Vec<f64>>) -> Option<Self> {
        let n = rows.len();
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let start = fi.max(fj);
                let mut sum = rows[i][j - fi];
                for k in start..j {
                    sum -= rows[i][k - fi] * rows[j][k - fj];
                }
                if j == i {
                    if !(sum > 1e-14) {
                        return None;
                    }
                    rows[i][i - fi] = sum.sqrt();
                } else {
                    rows[i][j - fi] = sum / rows[j][j - fj];
                }
            }
        }
        Some(Self { first, rows })
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.rows[i];
            let s = b[i] - row[..i - fi].iter().zip(&b[fi..i]).map(|(l, x)| l * x).sum::<f64>();
            b[i] = s / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            b[i] /= self.rows[i][i - fi];
            let bi = b[i];
            for (x, l) in b[fi..i].iter_mut().zip(&self.rows[i]) {
                *x -= l * bi;
            }
        }
    }
}

struct GlobalSystem {
    /// Free-vertex slot of each vertex, `None` for controls.
    slot: Vec<Option<usize>>,
    free: Vec<usize>,
    chol: EnvelopeCholesky,
}

impl GlobalSystem {
    fn build(mesh: &ArapMesh) -> Result<Self> {
        let nv = mesh.vertices.len();
        let mut slot = vec![None; nv];
        let is_control: Vec<bool> = {
            let mut v = vec![false; nv];
            for c in &mesh.controls {
                v[c.vertex] = true;
            }
            v
        };
        let mut free = Vec::new();
        for i in 0..nv {
            if !is_control[i] {
                slot[i] = Some(free.len());
                free.push(i);
            }
        }
        let nf = free.len();
        let mut first: Vec<usize> = (0..nf).collect();
        for tri in &mesh.triangles {
            for (a, b) in EDGES {
                if let (Some(p), Some(q)) = (slot[tri[a]], slot[tri[b]]) {
                    let (lo, hi) = if p < q { (p, q) } else { (q, p) };
                    first[hi] = first[hi].min(lo);
                }
            }
        }
        let mut rows: Vec<Vec<f64>> = (0..nf).map(|i| vec![0.0; i - first[i] + 1]).collect();
        for tri in &mesh.triangles {
            for (a, b) in EDGES {
                for (u, v) in [(tri[a], tri[b]), (tri[b], tri[a])] {
                    if let Some(p) = slot[u] {
                        rows[p][p - first[p]] += 1.0;
                        if let Some(q) = slot[v] {
                            if q < p {
                                rows[p][q - first[p]] -= 1.0;
                            }
                        }
                    }
                }
            }
        }
        let chol = EnvelopeCholesky::factor(first, rows).ok_or_else(|| {
            DgpError::Solver("global system is singular; some vertices are not anchored by a control".into())
        })?;
        Ok(Self { slot, free, chol })
    }

    /// Minimizes the energy over free vertices for the given rotations.
    fn solve(&self, mesh: &ArapMesh, rotations: &[(f64, f64)], pos: &mut [Point2]) {
        let nf = self.free.len();
        let mut bx = vec![0.0; nf];
        let mut by = vec![0.0; nf];
        let rest = &mesh.vertices;
        for (tri, &(cs, sn)) in mesh.triangles.iter().zip(rotations) {
            for (a, b) in EDGES {
                for (u, v) in [(tri[a], tri[b]), (tri[b], tri[a])] {
                    let Some(p) = self.slot[u] else { continue };
                    let e = [rest[u][0] - rest[v][0], rest[u][1] - rest[v][1]];
                    bx[p] += cs * e[0] - sn * e[1];
                    by[p] += sn * e[0] + cs * e[1];
                    if self.slot[v].is_none() {
                        bx[p] += pos[v][0];
                        by[p] += pos[v][1];
                    }
                }
            }
        }
        self.chol.solve(&mut bx);
        self.chol.solve(&mut by);
        for (k, &i) in self.free.iter().enumerate() {
            pos[i] = [bx[k], by[k]];
        }
    }
}

/// Deforms the mesh so every control reaches its target, alternating
/// per-triangle rotation fits with a global least-squares solve until the
/// largest vertex move drops below `tol` or `max_iters` is reached.
pub fn arap_deform(mesh: &ArapMesh, max_iters: usize, tol: f64) -> Result<ArapSolution> {
    if mesh.controls.is_empty() {
        return Err(DgpError::Solver("at least one control point is required".into()));
    }
    if max_iters == 0 || !(tol > 0.0) {
        return Err(DgpError::Config("ARAP needs max_iters >= 1 and tol > 0".into()));
    }
    let system = GlobalSystem::build(mesh)?;
    let mut pos = mesh.vertices.clone();
    for c in &mesh.controls {
        pos[c.vertex] = mesh.control_target(c);
    }
    let mut rotations = vec![(1.0, 0.0); mesh.triangles.len()];
    system.solve(mesh, &rotations, &mut pos);
    let mut energies = vec![arap_energy(mesh, &pos)];
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        for (tri, r) in mesh.triangles.iter().zip(rotations.iter_mut()) {
            *r = best_rotation(&edge_covariance(&mesh.vertices, &pos, tri));
        }
        let prev = pos.clone();
        system.solve(mesh, &rotations, &mut pos);
        energies.push(arap_energy(mesh, &pos));
        let moved = prev
            .iter()
            .zip(&pos)
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .fold(0.0, f64::max);
        if moved < tol {
            break;
        }
    }
    if pos.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DgpError::Numerical {
            iter: iterations,
            what: "ARAP vertex position".into(),
        });
    }
    Ok(ArapSolution {
        positions: pos,
        energies,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rigid(p: Point2, angle: f64, t: Point2) -> Point2 {
        let (s, c) = angle.sin_cos();
        [c * p[0] - s * p[1] + t[0], s * p[0] + c * p[1] + t[1]]
    }

    #[test]
    fn rest_targets_are_a_fixed_point() {
        let mesh = ArapMesh::grid(0.0, 0.0, 4.0, 4.0, 1.0).unwrap();
        let controls = vec![
            Control {
                vertex: 0,
                target: [0.0, 0.0],
                fixed: true,
            },
            Control {
                vertex: 24,
                target: [4.0, 4.0],
                fixed: false,
            },
        ];
        let mesh = mesh.with_controls(controls).unwrap();
        let sol = arap_deform(&mesh, 50, 1e-12).unwrap();
        for (a, b) in sol.positions.iter().zip(mesh.vertices()) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_targets_give_rigid_motion() {
        let mesh = ArapMesh::grid(0.0, 0.0, 4.0, 4.0, 1.0).unwrap();
        let angle = 30f64.to_radians();
        let t = [3.0, -1.0];
        let controls = [0usize, 4, 20, 12]
            .iter()
            .map(|&v| Control {
                vertex: v,
                target: rigid(mesh.vertices()[v], angle, t),
                fixed: false,
            })
            .collect();
        let mesh = mesh.with_controls(controls).unwrap();
        let sol = arap_deform(&mesh, 500, 1e-13).unwrap();
        for (p, r) in sol.positions.iter().zip(mesh.vertices()) {
            let q = rigid(*r, angle, t);
            assert!((p[0] - q[0]).abs() < 1e-6 && (p[1] - q[1]).abs() < 1e-6);
        }
        assert!(*sol.energies.last().unwrap() < 1e-10);
    }

    #[test]
    fn energy_never_increases() {
        let mesh = ArapMesh::grid(0.0, 0.0, 4.0, 4.0, 1.0).unwrap();
        let controls = vec![
            Control {
                vertex: 0,
                target: [0.0, 0.0],
                fixed: true,
            },
            Control {
                vertex: 4,
                target: [4.0, 0.0],
                fixed: true,
            },
            Control {
                vertex: 22,
                target: [1.0, 6.5],
                fixed: false,
            },
        ];
        let mesh = mesh.with_controls(controls).unwrap();
        let sol = arap_deform(&mesh, 200, 1e-12).unwrap();
        for w in sol.energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].max(1.0), "{} > {}", w[1], w[0]);
        }
        assert_eq!(sol.positions[22], [1.0, 6.5]);
        assert_eq!(sol.positions[4], [4.0, 0.0]);
    }

    #[test]
    fn validation_errors() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        assert!(ArapMesh::new(v.clone(), vec![[0, 1, 2]], vec![]).is_err());
        assert!(ArapMesh::new(v.clone(), vec![[0, 1, 5]], vec![]).is_err());
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let c = Control {
            vertex: 0,
            target: [0.0, 0.0],
            fixed: true,
        };
        assert!(ArapMesh::new(v.clone(), vec![[0, 1, 2]], vec![c, c]).is_err());
        let free = ArapMesh::new(v, vec![[0, 1, 2]], vec![]).unwrap();
        assert!(matches!(arap_deform(&free, 10, 1e-9), Err(DgpError::Solver(_))));
    }

    #[test]
    fn disconnected_component_is_singular() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0], [6.0, 5.0], [5.0, 6.0]];
        let c = Control {
            vertex: 0,
            target: [0.0, 0.0],
            fixed: true,
        };
        let mesh = ArapMesh::new(v, vec![[0, 1, 2], [3, 4, 5]], vec![c]).unwrap();
        assert!(matches!(arap_deform(&mesh, 10, 1e-9), Err(DgpError::Solver(_))));
    }

    #[test]
    fn envelope_cholesky_matches_dense_solve() {
        // tridiagonal SPD
        let n = 6;
        let first: Vec<usize> = (0..n).map(|i: usize| i.saturating_sub(1)).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| if i == 0 { vec![4.0] } else { vec![-1.0, 4.0] })
            .collect();
        let chol = EnvelopeCholesky::factor(first, rows).unwrap();
        let mut b: Vec<f64> = (0..n).map(|i| i as f64 + 1.0).collect();
        let rhs = b.clone();
        chol.solve(&mut b);
        for i in 0..n {
            let mut ax = 4.0 * b[i];
            if i > 0 {
                ax -= b[i - 1];
            }
            if i + 1 < n {
                ax -= b[i + 1];
            }
            assert!((ax - rhs[i]).abs() < 1e-12);
        }
    }
}
