use crate::error::{DgpError, Result};
use crate::io::{ImageGrid, Mask};
use crate::keypoints::{ClothingCategory, KeyPointKind, KeyPointSet};

use super::arap::{arap_deform, ArapMesh, Control, Point2};
use super::homography::{homography_from_pairs, warp_image, Homography};

/// Which garment landmark lands on which model landmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MappingRule {
    pub category: ClothingCategory,
    /// `(clothing index, model index)`, both 1-based.
    pub pairs: [(usize, usize); 4],
    pub uses_arap: bool,
}

/// Sleeve landmark `i` (elbow/wrist, left then right) goes to these model points.
const SLEEVE_TARGETS: [usize; 4] = [4, 5, 13, 12];

pub fn mapping_rule(category: ClothingCategory) -> MappingRule {
    use ClothingCategory::*;
    let (pairs, uses_arap) = match category {
        Sling | Undershirt => ([(1, 2), (2, 6), (3, 11), (4, 15)], false),
        ShortSleeveTop => ([(1, 3), (2, 6), (3, 11), (4, 14)], false),
        LongSleeveTop | LongSleeveOutwear | Windbreaker => ([(1, 1), (2, 6), (3, 11), (4, 16)], true),
    };
    MappingRule {
        category,
        pairs,
        uses_arap,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    /// Spacing of the deformation grid, in pixels.
    pub grid_pitch: f64,
    pub arap_max_iters: usize,
    pub arap_tol: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            grid_pitch: 16.0,
            arap_max_iters: 200,
            arap_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoughAlignment {
    pub composite: ImageGrid,
    /// Garment alone in model coordinates.
    pub warped_clothing: ImageGrid,
    pub clothing_mask: Mask,
    pub homography: Homography,
}

pub fn rough_align(
    model_img: &ImageGrid,
    model_kp: &KeyPointSet,
    cloth_img: &ImageGrid,
    cloth_kp: &KeyPointSet,
    rule: &MappingRule,
) -> Result<ImageGrid> {
    rough_align_detailed(model_img, model_kp, cloth_img, cloth_kp, rule, &AlignConfig::default()).map(|r| r.composite)
}

/// Perspective warp of the garment, an optional sleeve deformation, then
/// compositing of nonzero garment pixels over the model.
pub fn rough_align_detailed(
    model_img: &ImageGrid,
    model_kp: &KeyPointSet,
    cloth_img: &ImageGrid,
    cloth_kp: &KeyPointSet,
    rule: &MappingRule,
    cfg: &AlignConfig,
) -> Result<RoughAlignment> {
    if model_kp.kind() != KeyPointKind::Model || cloth_kp.kind() != KeyPointKind::Clothing {
        return Err(DgpError::Schema("expected model and clothing keypoint sets".into()));
    }
    if cloth_kp.category() != Some(rule.category) {
        return Err(DgpError::Schema(format!(
            "mapping rule is for {:?} but garment is {:?}",
            rule.category.name(),
            cloth_kp.category().map(|c| c.name())
        )));
    }
    let mut src = [(0.0, 0.0); 4];
    let mut dst = [(0.0, 0.0); 4];
    for (k, &(ci, mi)) in rule.pairs.iter().enumerate() {
        src[k] = cloth_kp.position(ci)?;
        dst[k] = model_kp.position(mi)?;
    }
    let sleeve = if rule.uses_arap {
        let mut pts = [((0.0, 0.0), (0.0, 0.0)); 4];
        for (k, &mi) in SLEEVE_TARGETS.iter().enumerate() {
            pts[k] = (cloth_kp.sleeve_position(k + 1)?, model_kp.position(mi)?);
        }
        Some(pts)
    } else {
        None
    };

    let h = homography_from_pairs(&src, &dst)?;
    let shape = model_img.shape();
    let mut warped = warp_image(cloth_img, &h, shape);

    if let Some(sleeve) = sleeve {
        let moves: Vec<(Point2, Point2, bool)> = sleeve
            .iter()
            .map(|&(s, t)| {
                let p = h.apply(s);
                ([p.0, p.1], [t.0, t.1], false)
            })
            .chain(dst.iter().map(|&d| ([d.0, d.1], [d.0, d.1], true)))
            .collect();
        warped = deform_image(&warped, &moves, cfg)?;
    }

    let clothing_mask = Mask::nonzero(&warped);
    let composite = ImageGrid::from_fn(shape.0, shape.1, |r, c| {
        let v = warped.get(r, c);
        if v != 0.0 {
            v
        } else {
            model_img.get(r, c)
        }
    });
    Ok(RoughAlignment {
        composite,
        warped_clothing: warped,
        clothing_mask,
        homography: h,
    })
}

/// Deforms `img` with a grid mesh whose controls move each `from` to `to`.
fn deform_image(img: &ImageGrid, moves: &[(Point2, Point2, bool)], cfg: &AlignConfig) -> Result<ImageGrid> {
    let (rows, cols) = img.shape();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut extend = |x: f64, y: f64| {
        lo = [lo[0].min(x), lo[1].min(y)];
        hi = [hi[0].max(x), hi[1].max(y)];
    };
    for r in 0..rows {
        for c in 0..cols {
            if img.get(r, c) != 0.0 {
                extend(c as f64, r as f64);
            }
        }
    }
    for (from, _, _) in moves {
        extend(from[0].floor(), from[1].floor());
        extend(from[0].ceil(), from[1].ceil());
    }
    let mesh = ArapMesh::grid(lo[0], lo[1], hi[0], hi[1], cfg.grid_pitch)?;
    let mut taken = Vec::new();
    let mut controls = Vec::new();
    for &(from, to, fixed) in moves {
        let v = mesh
            .nearest_vertex(from, &taken)
            .ok_or_else(|| DgpError::DegenerateGeometry("deformation grid has too few vertices".into()))?;
        taken.push(v);
        let base = mesh.vertices()[v];
        controls.push(Control {
            vertex: v,
            target: [base[0] + to[0] - from[0], base[1] + to[1] - from[1]],
            fixed,
        });
    }
    let mesh = mesh.with_controls(controls)?;
    let sol = arap_deform(&mesh, cfg.arap_max_iters, cfg.arap_tol)?;
    Ok(rasterize(img, &mesh, &sol.positions))
}

/// Maps each output pixel inside a deformed triangle back to its rest
/// position by the triangle's affine map and samples `img` there. The
/// first triangle covering a pixel wins.
fn rasterize(img: &ImageGrid, mesh: &ArapMesh, deformed: &[Point2]) -> ImageGrid {
    let (rows, cols) = img.shape();
    let mut out = ImageGrid::zeros(rows, cols);
    let mut written = vec![false; rows * cols];
    let rest = mesh.vertices();
    for tri in mesh.triangles() {
        let [a, b, c] = tri.map(|i| deformed[i]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if det.abs() < 1e-12 {
            continue;
        }
        let xmin = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let ymin = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let xmax = a[0].max(b[0]).max(c[0]).ceil().min(cols as f64 - 1.0);
        let ymax = a[1].max(b[1]).max(c[1]).ceil().min(rows as f64 - 1.0);
        if xmax < 0.0 || ymax < 0.0 {
            continue;
        }
        for y in ymin..=ymax as usize {
            for x in xmin..=xmax as usize {
                if written[y * cols + x] {
                    continue;
                }
                let (px, py) = (x as f64, y as f64);
                let l1 = ((px - a[0]) * (c[1] - a[1]) - (py - a[1]) * (c[0] - a[0])) / det;
                let l2 = ((b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])) / det;
                let l0 = 1.0 - l1 - l2;
                const EPS: f64 = -1e-9;
                if l0 < EPS || l1 < EPS || l2 < EPS {
                    continue;
                }
                let [ra, rb, rc] = tri.map(|i| rest[i]);
                let sx = l0 * ra[0] + l1 * rb[0] + l2 * rc[0];
                let sy = l0 * ra[1] + l1 * rb[1] + l2 * rc[1];
                let snap = |v: f64| if (v - v.round()).abs() <= 1e-9 { v.round() } else { v };
                out.set(y, x, img.sample_bilinear(snap(sx), snap(sy)));
                written[y * cols + x] = true;
            }
        }
    }
    out
}
