//! Dynamic spatial weights from repeated 3×3 erosion.
//!
//! A mask pixel is on the boundary when any of its 3×3 neighbours (pixels
//! beyond the raster edge included) is outside the mask; those pixels are
//! removed by the first erosion and get depth 0. A pixel removed by erosion
//! step `k ≥ 2` gets depth `k − 1`.

use crate::error::{DgpError, Result};
use crate::io::{ImageGrid, Mask};

/// Per-pixel weights `1 − exp(−d²)` on the mask, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl WeightMap {
    pub fn uniform(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(DgpError::DimensionMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn to_grid(&self) -> ImageGrid {
        ImageGrid::new(self.rows, self.cols, self.values.clone()).expect("weights are finite")
    }
}

fn erode(cur: &[bool], rows: usize, cols: usize) -> Vec<bool> {
    let at = |r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols && cur[r as usize * cols + c as usize]
    };
    let mut out = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            if !cur[r * cols + c] {
                continue;
            }
            let (ri, ci) = (r as isize, c as isize);
            out[r * cols + c] = (-1..=1).all(|dr| (-1..=1).all(|dc| at(ri + dr, ci + dc)));
        }
    }
    out
}

/// Erosion depth of every pixel, row-major.
pub fn erosion_distance(mask: &Mask) -> Vec<u32> {
    let (rows, cols) = mask.shape();
    let mut depth = vec![0u32; rows * cols];
    let mut cur = mask.values().to_vec();
    let mut step = 0u32;
    while cur.iter().any(|&b| b) {
        step += 1;
        let next = erode(&cur, rows, cols);
        for i in 0..cur.len() {
            if cur[i] && !next[i] {
                depth[i] = step - 1;
            }
        }
        cur = next;
    }
    depth
}

pub fn weight_map(mask: &Mask) -> WeightMap {
    let (rows, cols) = mask.shape();
    let depth = erosion_distance(mask);
    let values = depth
        .iter()
        .zip(mask.values())
        .map(|(&d, &m)| {
            if m {
                let d = d as f64;
                1.0 - (-d * d).exp()
            } else {
                0.0
            }
        })
        .collect();
    WeightMap { rows, cols, values }
}

/// `Σ (w·a − w·b)²`.
pub fn masked_l2(a: &ImageGrid, b: &ImageGrid, w: &WeightMap) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(DgpError::ShapeMismatch(a.shape(), b.shape()));
    }
    if a.shape() != w.shape() {
        return Err(DgpError::ShapeMismatch(a.shape(), w.shape()));
    }
    Ok(a.values()
        .iter()
        .zip(b.values())
        .zip(&w.values)
        .map(|((x, y), wi)| {
            let d = wi * x - wi * y;
            d * d
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(n: usize, size: usize) -> Mask {
        let off = (n - size) / 2;
        Mask::from_fn(n, n, |r, c| {
            (off..off + size).contains(&r) && (off..off + size).contains(&c)
        })
    }

    #[test]
    fn empty_mask_has_zero_depth() {
        let d = erosion_distance(&Mask::filled(4, 5, false));
        assert!(d.iter().all(|&v| v == 0));
    }

    #[test]
    fn three_block() {
        let d = erosion_distance(&block(7, 3));
        let expected = [
            0, 0, 0, 0, 0, 0, 0, //
            0, 0, 0, 0, 0, 0, 0, //
            0, 0, 0, 0, 0, 0, 0, //
            0, 0, 0, 1, 0, 0, 0, //
            0, 0, 0, 0, 0, 0, 0, //
            0, 0, 0, 0, 0, 0, 0, //
            0, 0, 0, 0, 0, 0, 0,
        ];
        assert_eq!(d, expected);
    }

    #[test]
    fn five_block() {
        let d = erosion_distance(&block(9, 5));
        let at = |r: usize, c: usize| d[r * 9 + c];
        assert_eq!(at(2, 2), 0);
        assert_eq!(at(2, 6), 0);
        assert_eq!(at(3, 3), 1);
        assert_eq!(at(3, 5), 1);
        assert_eq!(at(5, 3), 1);
        assert_eq!(at(4, 4), 2);
        assert_eq!(d.iter().filter(|&&v| v == 1).count(), 8);
    }

    #[test]
    fn image_edge_counts_as_outside() {
        let d = erosion_distance(&Mask::filled(3, 3, true));
        assert_eq!(d[4], 1);
        assert_eq!(d.iter().sum::<u32>(), 1);
    }

    #[test]
    fn weights_follow_depth() {
        let w = weight_map(&block(7, 3));
        assert!((w.get(3, 3) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((w.get(3, 3) - 0.632121).abs() < 1e-6);
        assert_eq!(w.get(2, 2), 0.0);
        assert_eq!(w.get(0, 0), 0.0);
    }

    #[test]
    fn masked_l2_examples() {
        let a = ImageGrid::from_fn(2, 2, |r, c| (r + c) as f64);
        assert_eq!(masked_l2(&a, &a, &WeightMap::uniform(2, 2, 0.7)).unwrap(), 0.0);
        let mut imp = ImageGrid::zeros(2, 2);
        imp.set(1, 0, 1.0);
        let z = ImageGrid::zeros(2, 2);
        assert_eq!(masked_l2(&imp, &z, &WeightMap::uniform(2, 2, 1.0)).unwrap(), 1.0);
        let two = ImageGrid::from_fn(2, 2, |_, _| 2.0);
        assert_eq!(masked_l2(&two, &z, &WeightMap::uniform(2, 2, 0.5)).unwrap(), 4.0);
        assert!(masked_l2(&two, &ImageGrid::zeros(3, 2), &WeightMap::uniform(2, 2, 1.0)).is_err());
    }
}
