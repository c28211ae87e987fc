//! Rasters, masks and the plain-text matrix format.
//!
//! A matrix block is a header line `rows cols` followed by `rows*cols`
//! whitespace-separated decimals in row-major order. Values are written with
//! nine significant digits. Multi-part files are a sequence of `[NAME]`
//! lines each followed by one block.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{DgpError, Result};

/// Row-major grayscale raster. Pixel `(row, col)` has its center at `x = col, y = row`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(DgpError::Config(format!("image shape {rows}x{cols} must be positive")));
        }
        if values.len() != rows * cols {
            return Err(DgpError::DimensionMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DgpError::Config(format!("non-finite pixel at index {i}")));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "image shape must be positive");
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut img = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                img.values[r * cols + c] = f(r, c);
            }
        }
        img
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.cols + col] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Bilinear sample at `(x, y)` with zero padding outside the raster.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        if !x.is_finite() || !y.is_finite() {
            return 0.0;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let px = |r: i64, c: i64| -> f64 {
            if r < 0 || c < 0 || r >= self.rows as i64 || c >= self.cols as i64 {
                0.0
            } else {
                self.values[r as usize * self.cols + c as usize]
            }
        };
        let top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
        let bottom = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    values: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, values: Vec<bool>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(DgpError::Config(format!("mask shape {rows}x{cols} must be positive")));
        }
        if values.len() != rows * cols {
            return Err(DgpError::DimensionMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(rows > 0 && cols > 0, "mask shape must be positive");
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
    }

    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        Self::from_fn(rows, cols, |_, _| value)
    }

    /// Pixels where `img` is nonzero.
    pub fn nonzero(img: &ImageGrid) -> Self {
        Self {
            rows: img.rows,
            cols: img.cols,
            values: img.values.iter().map(|&v| v != 0.0).collect(),
        }
    }

    /// Interprets a grid as a mask; every value must be exactly 0 or 1.
    pub fn from_grid(img: &ImageGrid) -> Result<Self> {
        let mut values = Vec::with_capacity(img.len());
        for (i, &v) in img.values.iter().enumerate() {
            if v == 0.0 {
                values.push(false);
            } else if v == 1.0 {
                values.push(true);
            } else {
                return Err(DgpError::Config(format!(
                    "mask value {v} at row {}, col {} is not 0 or 1",
                    i / img.cols,
                    i % img.cols
                )));
            }
        }
        Ok(Self {
            rows: img.rows,
            cols: img.cols,
            values,
        })
    }

    pub fn to_grid(&self) -> ImageGrid {
        ImageGrid {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.shape() != other.shape() {
            return Err(DgpError::ShapeMismatch(self.shape(), other.shape()));
        }
        Ok(Mask {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().zip(&other.values).map(|(a, b)| *a && *b).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.cols + col]
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }
}

/// Formats `v` with nine significant digits, switching to exponent notation
/// for very small or large magnitudes.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Appends one matrix block to `out`.
pub fn write_block(out: &mut String, rows: usize, cols: usize, values: &[f64]) {
    debug_assert_eq!(values.len(), rows * cols);
    let _ = writeln!(out, "{rows} {cols}");
    for r in 0..rows {
        let line: Vec<String> = values[r * cols..(r + 1) * cols]
            .iter()
            .map(|&v| format_value(v))
            .collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

pub fn grid_to_string(img: &ImageGrid) -> String {
    let mut out = String::new();
    write_block(&mut out, img.rows, img.cols, &img.values);
    out
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| DgpError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| DgpError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A parsed matrix block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Parses one matrix block from `lines`, given as `(line_number, text)` pairs.
fn parse_block(source: &str, lines: &[(usize, &str)]) -> Result<Block> {
    let err = |line: usize, msg: String| DgpError::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut iter = lines.iter().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = iter
        .next()
        .ok_or_else(|| err(lines.last().map_or(1, |l| l.0), "missing header".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(err(
            *hline,
            format!("malformed header {header:?}, expected \"rows cols\""),
        ));
    }
    let parse_dim = |s: &str| -> Result<usize> {
        match s.parse::<usize>() {
            Ok(d) if d > 0 => Ok(d),
            _ => Err(err(*hline, format!("malformed header dimension {s:?}"))),
        }
    };
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;
    let expected = rows * cols;
    let mut values = Vec::with_capacity(expected);
    let mut last_line = *hline;
    for (ln, text) in iter {
        last_line = *ln;
        for tok in text.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| err(*ln, format!("non-numeric token {tok:?}")))?;
            if !v.is_finite() {
                return Err(err(*ln, format!("non-finite value {tok:?}")));
            }
            if values.len() == expected {
                return Err(err(*ln, format!("expected {expected} values, got more")));
            }
            values.push(v);
        }
    }
    if values.len() != expected {
        return Err(err(
            last_line,
            format!("expected {expected} values, got {}", values.len()),
        ));
    }
    Ok(Block { rows, cols, values })
}

fn numbered(text: &str) -> Vec<(usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l)).collect()
}

pub fn parse_grid(source: &str, text: &str) -> Result<ImageGrid> {
    let b = parse_block(source, &numbered(text))?;
    ImageGrid::new(b.rows, b.cols, b.values)
}

pub fn read_image_grid(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    parse_grid(&path.display().to_string(), &read_text(path)?)
}

pub fn write_image_grid(path: impl AsRef<Path>, img: &ImageGrid) -> Result<()> {
    write_text(path.as_ref(), &grid_to_string(img))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Mask::from_grid(&read_image_grid(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    write_image_grid(path, &mask.to_grid())
}

/// Named sections of a multi-part file, in file order.
#[derive(Debug, Clone, Default)]
pub struct Sections {
    entries: Vec<(String, Block)>,
    meta: Vec<(String, String)>,
}

impl Sections {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, rows: usize, cols: usize, values: &[f64]) {
        self.entries.push((
            name.to_string(),
            Block {
                rows,
                cols,
                values: values.to_vec(),
            },
        ));
    }

    /// Scalar metadata, written as `@key value` lines before the blocks.
    pub fn push_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    pub fn require(&self, source: &str, name: &str) -> Result<&Block> {
        self.block(name).ok_or_else(|| DgpError::Parse {
            path: source.to_string(),
            line: 0,
            msg: format!("missing section [{name}]"),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "@{k} {v}");
        }
        for (name, b) in &self.entries {
            let _ = writeln!(out, "[{name}]");
            write_block(&mut out, b.rows, b.cols, &b.values);
        }
        out
    }

    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let lines = numbered(text);
        let mut sections = Sections::new();
        let mut current: Option<(String, usize)> = None;
        let mut body: Vec<(usize, &str)> = Vec::new();
        let flush =
            |sections: &mut Sections, current: &Option<(String, usize)>, body: &[(usize, &str)]| -> Result<()> {
                if let Some((name, _)) = current {
                    let block = parse_block(source, body)?;
                    sections.entries.push((name.clone(), block));
                }
                Ok(())
            };
        for &(ln, raw) in &lines {
            let line = raw.trim();
            if let Some(rest) = line.strip_prefix('@') {
                if current.is_some() {
                    return Err(DgpError::Parse {
                        path: source.to_string(),
                        line: ln,
                        msg: "metadata must precede sections".into(),
                    });
                }
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                sections.meta.push((k.to_string(), v.trim().to_string()));
            } else if line.starts_with('[') && line.ends_with(']') {
                flush(&mut sections, &current, &body)?;
                current = Some((line[1..line.len() - 1].to_string(), ln));
                body.clear();
            } else if current.is_some() {
                body.push((ln, raw));
            } else if !line.is_empty() {
                return Err(DgpError::Parse {
                    path: source.to_string(),
                    line: ln,
                    msg: format!("content outside any section: {line:?}"),
                });
            }
        }
        flush(&mut sections, &current, &body)?;
        Ok(sections)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&path.display().to_string(), &read_text(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_two_by_two() {
        let g = parse_grid("t", "2 2\n0 1\n1 0\n").unwrap();
        assert_eq!(g.shape(), (2, 2));
        assert_eq!(g.values(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn parses_scalar() {
        let g = parse_grid("t", "1 1\n0.5\n").unwrap();
        assert_eq!(g.values(), &[0.5]);
    }

    #[test]
    fn count_mismatch_names_line() {
        let e = parse_grid("t", "2 2\n0 1\n1\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("expected 4 values, got 3"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn rejects_bad_tokens_and_headers() {
        let e = parse_grid("t", "1 2\n0 x\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("non-numeric"), "{e}");
        assert!(parse_grid("t", "2\n0 1\n").is_err());
        assert!(parse_grid("t", "0 2\n").is_err());
        assert!(parse_grid("t", "1 1\n1 2\n").is_err());
        assert!(parse_grid("t", "1 1\nNaN\n").is_err());
    }

    #[test]
    fn formats_nine_significant_digits() {
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(1.0), "1");
        assert_eq!(format_value(-0.5), "-0.5");
        assert_eq!(format_value(1.0 / 3.0), "0.333333333");
        assert_eq!(format_value(123456.789012), "123456.789");
        assert_eq!(format_value(1.5e-7), "1.5e-7");
        assert_eq!(format_value(2.0e12), "2e12");
    }

    #[test]
    fn mask_requires_binary_values() {
        let g = parse_grid("t", "1 3\n0 1 0.5\n").unwrap();
        assert!(Mask::from_grid(&g).is_err());
        let g = parse_grid("t", "1 3\n0 1 1\n").unwrap();
        assert_eq!(Mask::from_grid(&g).unwrap().count(), 2);
    }

    #[test]
    fn sections_round_trip() {
        let mut s = Sections::new();
        s.push_meta("seed", 42);
        s.push("MEAN", 1, 2, &[1.0, -2.5]);
        s.push("M", 2, 1, &[0.25, 3.0]);
        let text = s.to_text();
        let back = Sections::parse("t", &text).unwrap();
        assert_eq!(back.meta("seed"), Some("42"));
        assert_eq!(back.block("MEAN").unwrap().values, vec![1.0, -2.5]);
        assert_eq!(back.block("M").unwrap().rows, 2);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn bilinear_is_exact_at_pixel_centers() {
        let g = ImageGrid::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        assert_eq!(g.sample_bilinear(2.0, 1.0), 6.0);
        assert_eq!(g.sample_bilinear(2.5, 1.0), 6.5);
        assert_eq!(g.sample_bilinear(-1.0, 0.0), 0.0);
    }

    proptest! {
        // Nine significant digits bound the relative error by half a unit
        // in the ninth digit; rewriting a parsed file is byte-stable.
        #[test]
        fn grid_text_round_trip(rows in 1usize..6, cols in 1usize..6,
                                seed in proptest::collection::vec(-1e3f64..1e3, 36)) {
            let img = ImageGrid::new(rows, cols, seed[..rows * cols].to_vec()).unwrap();
            let text = grid_to_string(&img);
            let back = parse_grid("t", &text).unwrap();
            prop_assert_eq!(back.shape(), img.shape());
            for (a, b) in img.values().iter().zip(back.values()) {
                prop_assert!((a - b).abs() <= 5e-9 * a.abs().max(1e-300) + 1e-300 || a == b);
            }
            prop_assert_eq!(grid_to_string(&back), text);
        }
    }
}
