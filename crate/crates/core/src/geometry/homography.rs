use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{DgpError, Result};
use crate::io::ImageGrid;
use crate::par::{map_indexed, Execution};

/// Projective map of the plane, stored with `H[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

/// Sample coordinates this close to an integer are snapped onto it, so
/// maps that are the identity up to round-off reproduce pixels exactly.
const SNAP: f64 = 1e-9;

impl Homography {
    pub fn identity() -> Self {
        Self { m: Matrix3::identity() }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0),
        }
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(DgpError::DegenerateGeometry("non-finite homography".into()));
        }
        let h22 = m[(2, 2)];
        if h22.abs() < 1e-12 {
            return Err(DgpError::DegenerateGeometry(
                "H[2][2] vanishes; cannot normalize".into(),
            ));
        }
        let m = m / h22;
        if m.determinant().abs() <= 1e-12 {
            return Err(DgpError::DegenerateGeometry("homography is singular".into()));
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let p = self.m * Vector3::new(x, y, 1.0);
        (p.x / p.z, p.y / p.z)
    }

    pub fn inverse(&self) -> Self {
        let inv = self.m.try_inverse().expect("validated homography is invertible");
        Self { m: inv / inv[(2, 2)] }
    }
}

fn twice_area(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn check_general_position(pts: &[(f64, f64); 4], which: &str) -> Result<()> {
    if pts.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(DgpError::DegenerateGeometry(format!("{which} points must be finite")));
    }
    let extent = pts
        .iter()
        .flat_map(|a| pts.iter().map(move |b| (a.0 - b.0).hypot(a.1 - b.1)))
        .fold(0.0, f64::max);
    let eps = 1e-10 * extent * extent;
    for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        if extent == 0.0 || twice_area(pts[i], pts[j], pts[k]).abs() <= eps {
            return Err(DgpError::DegenerateGeometry(format!(
                "{which} points {i}, {j}, {k} are collinear"
            )));
        }
    }
    Ok(())
}

/// Similarity moving the centroid to the origin with mean distance `√2`.
fn normalizer(pts: &[(f64, f64); 4]) -> Matrix3<f64> {
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let mean_dist = pts.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / 4.0;
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn apply_affine(t: &Matrix3<f64>, p: (f64, f64)) -> (f64, f64) {
    (t[(0, 0)] * p.0 + t[(0, 2)], t[(1, 1)] * p.1 + t[(1, 2)])
}

/// Solves the eight-unknown linear system mapping each `src[i]` onto `dst[i]`.
pub fn homography_from_pairs(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Result<Homography> {
    check_general_position(src, "source")?;
    check_general_position(dst, "destination")?;
    let ts = normalizer(src);
    let td = normalizer(dst);
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = apply_affine(&ts, src[i]);
        let (u, v) = apply_affine(&td, dst[i]);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or_else(|| DgpError::DegenerateGeometry("correspondence system is singular".into()))?;
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| DgpError::DegenerateGeometry("destination normalizer".into()))?;
    Homography::from_matrix(td_inv * hn * ts)
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= SNAP {
        r
    } else {
        v
    }
}

/// Inverse-mapped bilinear warp; samples falling outside the source are 0.
pub fn warp_image(img: &ImageGrid, h: &Homography, out_shape: (usize, usize)) -> ImageGrid {
    let (rows, cols) = out_shape;
    let inv = h.inverse();
    let data = map_indexed(rows, Execution::default(), |r| {
        (0..cols)
            .map(|c| {
                let p = inv.m * Vector3::new(c as f64, r as f64, 1.0);
                if p.z.abs() < 1e-300 {
                    return 0.0;
                }
                img.sample_bilinear(snap(p.x / p.z), snap(p.y / p.z))
            })
            .collect::<Vec<_>>()
    });
    ImageGrid::new(rows, cols, data.concat()).expect("warp output is finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];

    #[test]
    fn identity_from_equal_quads() {
        let h = homography_from_pairs(&SQUARE, &SQUARE).unwrap();
        assert!((h.matrix() - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn translation_from_shifted_square() {
        let dst = SQUARE.map(|(x, y)| (x + 2.0, y + 3.0));
        let h = homography_from_pairs(&SQUARE, &dst).unwrap();
        assert!((h.matrix() - Homography::translation(2.0, 3.0).matrix()).amax() < 1e-12);
    }

    #[test]
    fn trapezoid_anchors_reproduced() {
        let dst = [(0.0, 0.0), (1.0, 0.0), (1.5, 1.0), (-0.5, 1.0)];
        let h = homography_from_pairs(&SQUARE, &dst).unwrap();
        for (s, d) in SQUARE.iter().zip(&dst) {
            let p = h.apply(*s);
            assert!((p.0 - d.0).abs() < 1e-9 && (p.1 - d.1).abs() < 1e-9);
        }
        assert_eq!(h.matrix()[(2, 2)], 1.0);
    }

    #[test]
    fn collinear_rejected() {
        let bad = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (0.0, 1.0)];
        assert!(matches!(
            homography_from_pairs(&bad, &SQUARE),
            Err(DgpError::DegenerateGeometry(_))
        ));
        assert!(homography_from_pairs(&SQUARE, &bad).is_err());
    }

    fn impulse() -> ImageGrid {
        let mut g = ImageGrid::zeros(5, 5);
        g.set(2, 2, 1.0);
        g
    }

    #[test]
    fn identity_warp_is_exact() {
        let g = ImageGrid::from_fn(4, 6, |r, c| (r * 6 + c) as f64 * 0.1);
        assert_eq!(warp_image(&g, &Homography::identity(), (4, 6)), g);
        let small = warp_image(&g, &Homography::identity(), (2, 3));
        assert_eq!(small.get(1, 2), g.get(1, 2));
    }

    #[test]
    fn integer_translation_moves_impulse() {
        let out = warp_image(&impulse(), &Homography::translation(1.0, 0.0), (5, 5));
        assert_eq!(out.get(2, 3), 1.0);
        assert_eq!(out.get(2, 2), 0.0);
    }

    #[test]
    fn half_pixel_translation_splits_impulse() {
        let out = warp_image(&impulse(), &Homography::translation(0.5, 0.0), (5, 5));
        assert!((out.get(2, 2) - 0.5).abs() < 1e-15);
        assert!((out.get(2, 3) - 0.5).abs() < 1e-15);
        let total: f64 = out.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }
}
