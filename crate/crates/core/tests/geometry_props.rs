use dgp_core::geometry::{
    arap_deform, arap_energy, homography_from_pairs, warp_image, ArapMesh, Control, Homography, Point2,
};
use dgp_core::par::stream_rng;
use dgp_core::ImageGrid;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn tri_area(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    0.5 * ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs()
}

fn random_quad(rng: &mut ChaCha8Rng) -> [(f64, f64); 4] {
    loop {
        let q: [(f64, f64); 4] =
            std::array::from_fn(|_| (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)));
        let ok = (0..4).all(|skip| {
            let t: Vec<_> = (0..4).filter(|&i| i != skip).map(|i| q[i]).collect();
            tri_area(t[0], t[1], t[2]) > 50.0
        });
        if ok {
            return q;
        }
    }
}

#[test]
fn homography_anchor_fidelity() {
    let mut rng = stream_rng(3, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let src = random_quad(&mut rng);
        let dst = random_quad(&mut rng);
        let h = homography_from_pairs(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let p = h.apply(*s);
            worst = worst.max((p.0 - d.0).hypot(p.1 - d.1));
        }
    }
    assert!(worst < 1e-9, "worst anchor residual {worst:e}");
}

#[test]
fn trapezoid_anchors() {
    let src = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
    let dst = [(0.0, 0.0), (1.0, 0.0), (1.5, 1.0), (-0.5, 1.0)];
    let h = homography_from_pairs(&src, &dst).unwrap();
    for (s, d) in src.iter().zip(&dst) {
        let p = h.apply(*s);
        assert!((p.0 - d.0).abs() < 1e-12 && (p.1 - d.1).abs() < 1e-12);
    }
    let m = h.matrix();
    assert!((m[(2, 2)] - 1.0).abs() < 1e-15);
}

#[test]
fn half_pixel_shift_splits_impulse() {
    let mut img = ImageGrid::zeros(5, 5);
    img.set(2, 2, 1.0);
    let out = warp_image(&img, &Homography::translation(0.5, 0.0), (5, 5));
    assert!((out.get(2, 2) - 0.5).abs() < 1e-12);
    assert!((out.get(2, 3) - 0.5).abs() < 1e-12);
    assert!((out.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

fn pull_mesh(angle: f64) -> ArapMesh {
    let (s, c) = angle.sin_cos();
    let rot = |p: Point2| [c * p[0] - s * p[1], s * p[0] + c * p[1]];
    let grid = ArapMesh::grid(0.0, 0.0, 4.0, 4.0, 1.0).unwrap();
    let vertices: Vec<Point2> = grid.vertices().iter().map(|&p| rot(p)).collect();
    let controls = vec![
        Control {
            vertex: 0,
            target: rot([0.0, 0.0]),
            fixed: true,
        },
        Control {
            vertex: 4,
            target: rot([4.0, 0.0]),
            fixed: true,
        },
        Control {
            vertex: 12,
            target: rot([2.6, 2.9]),
            fixed: false,
        },
    ];
    ArapMesh::new(vertices, grid.triangles().to_vec(), controls).unwrap()
}

#[test]
fn one_point_pull_reaches_stationarity() {
    let mesh = pull_mesh(0.0);
    let sol = arap_deform(&mesh, 20_000, 1e-14).unwrap();
    let controlled: Vec<usize> = mesh.controls().iter().map(|c| c.vertex).collect();
    let h = 1e-5;
    let mut sq = 0.0;
    let mut probe = sol.positions.clone();
    for v in (0..probe.len()).filter(|v| !controlled.contains(v)) {
        for k in 0..2 {
            let orig = probe[v][k];
            probe[v][k] = orig + h;
            let up = arap_energy(&mesh, &probe);
            probe[v][k] = orig - h;
            let down = arap_energy(&mesh, &probe);
            probe[v][k] = orig;
            sq += ((up - down) / (2.0 * h)).powi(2);
        }
    }
    assert!(sq.sqrt() < 1e-6, "gradient norm {:e}", sq.sqrt());
}

#[test]
fn rotating_the_problem_rotates_the_solution() {
    let angle = 0.7f64;
    let (s, c) = angle.sin_cos();
    let a = arap_deform(&pull_mesh(0.0), 20_000, 1e-14).unwrap();
    let b = arap_deform(&pull_mesh(angle), 20_000, 1e-14).unwrap();
    for (p, q) in a.positions.iter().zip(&b.positions) {
        let r = [c * p[0] - s * p[1], s * p[0] + c * p[1]];
        assert!((r[0] - q[0]).abs() < 1e-6 && (r[1] - q[1]).abs() < 1e-6);
    }
}
