//! PCA statistics of the style space, truncation, and the projector map
//! `w = Q Λ^{1/2} Tr(s) + μ` together with its ellipse membership test.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{DgpError, Result};
use crate::io::Sections;

/// Relative slack on the `ψ²` threshold of [`in_ellipse`] that absorbs
/// floating-point round-off of the projection itself.
pub const ELLIPSE_RTOL: f64 = 1e-9;

/// Tolerance on `QᵀQ = I` accepted when loading a basis.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// A point in the style space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(pub DVector<f64>);

/// Coordinates along the principal components, in units of each component's
/// standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct StrengthCode(pub DVector<f64>);

impl LatentCode {
    pub fn from_slice(v: &[f64]) -> Self {
        Self(DVector::from_column_slice(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

impl StrengthCode {
    pub fn from_slice(v: &[f64]) -> Self {
        Self(DVector::from_column_slice(v))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationConfig {
    psi: f64,
}

impl TruncationConfig {
    pub const DEFAULT_PSI: f64 = 6.0;

    pub fn new(psi: f64) -> Result<Self> {
        if !(psi > 0.0 && psi.is_finite()) {
            return Err(DgpError::Config(format!("psi must be positive, got {psi}")));
        }
        Ok(Self { psi })
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self { psi: Self::DEFAULT_PSI }
    }
}

/// Mean, orthonormal components (columns) and non-increasing strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    mean: DVector<f64>,
    components: DMatrix<f64>,
    strengths: DVector<f64>,
}

fn next_down(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    f64::from_bits(x.to_bits() - 1)
}

/// Radial clip of `s` to norm `ψ`.
///
/// The rescaled branch is nudged down by ulps until its computed norm is at
/// most `ψ`, which makes the operator exactly idempotent.
pub fn truncate(s: &StrengthCode, cfg: &TruncationConfig) -> StrengthCode {
    let psi = cfg.psi;
    let norm = s.0.norm();
    if norm < psi {
        return s.clone();
    }
    let mut scale = psi / norm;
    let mut out = &s.0 * scale;
    while out.norm() > psi {
        scale = next_down(scale);
        out = &s.0 * scale;
    }
    StrengthCode(out)
}

/// Fits the basis to `samples` with the unbiased `1/(N-1)` covariance.
pub fn fit_pca(samples: &[LatentCode]) -> Result<PcaBasis> {
    let n = samples.first().map(LatentCode::dim).unwrap_or(0);
    if n == 0 {
        return Err(DgpError::InsufficientData { needed: 2, got: 0 });
    }
    if samples.len() < n + 1 {
        return Err(DgpError::InsufficientData {
            needed: n + 1,
            got: samples.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|s| s.dim() != n) {
        return Err(DgpError::DimensionMismatch {
            expected: n,
            got: bad.dim(),
        });
    }
    let count = samples.len() as f64;
    let mut mean = DVector::<f64>::zeros(n);
    for s in samples {
        mean += &s.0;
    }
    mean /= count;

    let mut cov = DMatrix::<f64>::zeros(n, n);
    let mut centered = DVector::<f64>::zeros(n);
    for s in samples {
        centered.copy_from(&s.0);
        centered -= &mean;
        for j in 0..n {
            let cj = centered[j];
            for i in j..n {
                cov[(i, j)] += centered[i] * cj;
            }
        }
    }
    for j in 0..n {
        for i in j..n {
            let v = cov[(i, j)] / (count - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    if cov.iter().all(|&v| v == 0.0) {
        return Err(DgpError::DegenerateBasis);
    }
    PcaBasis::from_covariance(mean, &cov)
}

impl PcaBasis {
    /// Diagonalizes a symmetric covariance. Components are ordered by
    /// decreasing strength (ties keep solver order) and signed so that the
    /// first nonzero entry of each is positive.
    pub fn from_covariance(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.shape() != (n, n) {
            return Err(DgpError::DimensionMismatch {
                expected: n,
                got: cov.nrows(),
            });
        }
        let eig = SymmetricEigen::new(cov.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut components = DMatrix::<f64>::zeros(n, n);
        let mut strengths = DVector::<f64>::zeros(n);
        for (dst, &src) in order.iter().enumerate() {
            let mut col = eig.eigenvectors.column(src).into_owned();
            col /= col.norm();
            if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
                if *first < 0.0 {
                    col = -col;
                }
            }
            components.set_column(dst, &col);
            strengths[dst] = eig.eigenvalues[src].max(0.0);
        }
        if strengths[0] == 0.0 {
            return Err(DgpError::DegenerateBasis);
        }
        Ok(Self {
            mean,
            components,
            strengths,
        })
    }

    /// Validating constructor for externally supplied parts.
    pub fn new(mean: DVector<f64>, components: DMatrix<f64>, strengths: DVector<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(DgpError::Config("basis dimension must be positive".into()));
        }
        if components.shape() != (n, n) {
            return Err(DgpError::DimensionMismatch {
                expected: n,
                got: components.nrows(),
            });
        }
        if strengths.len() != n {
            return Err(DgpError::DimensionMismatch {
                expected: n,
                got: strengths.len(),
            });
        }
        if strengths.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(DgpError::Config("strengths must be finite and nonnegative".into()));
        }
        if strengths.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(DgpError::Config("strengths must be non-increasing".into()));
        }
        let basis = Self {
            mean,
            components,
            strengths,
        };
        let err = basis.orthonormality_error();
        if !(err <= ORTHONORMAL_TOL) {
            return Err(DgpError::Config(format!(
                "components are not orthonormal (max |QᵀQ - I| = {err:e})"
            )));
        }
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn strengths(&self) -> &DVector<f64> {
        &self.strengths
    }

    /// `max |QᵀQ - I|` over all entries.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.components.transpose() * &self.components;
        let n = self.dim();
        (g - DMatrix::<f64>::identity(n, n)).amax()
    }

    /// `Q Λ Qᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.components * DMatrix::from_diagonal(&self.strengths) * self.components.transpose()
    }

    /// `Q Λ^{1/2}`, mapping strength coordinates to style-space offsets.
    pub fn scaled_components(&self) -> DMatrix<f64> {
        let mut m = self.components.clone();
        for (j, s) in self.strengths.iter().enumerate() {
            m.column_mut(j).scale_mut(s.sqrt());
        }
        m
    }

    /// Inverse of the projector's linear part: `Λ^{-1/2} Qᵀ (w − μ)`.
    pub fn strength_code(&self, w: &LatentCode) -> Result<StrengthCode> {
        self.check_dim(w.dim())?;
        self.check_invertible()?;
        let mut s = self.components.transpose() * (&w.0 - &self.mean);
        for (i, v) in s.iter_mut().enumerate() {
            *v /= self.strengths[i].sqrt();
        }
        Ok(StrengthCode(s))
    }

    /// `(w − μ)ᵀ Σ⁻¹ (w − μ)` with `Σ⁻¹ = Q Λ⁻¹ Qᵀ`.
    pub fn mahalanobis_sq(&self, w: &LatentCode) -> Result<f64> {
        self.check_dim(w.dim())?;
        self.check_invertible()?;
        let y = self.components.transpose() * (&w.0 - &self.mean);
        Ok(y.iter().zip(self.strengths.iter()).map(|(v, s)| v * v / s).sum())
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(DgpError::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    fn check_invertible(&self) -> Result<()> {
        match self.strengths.iter().position(|&s| s <= 0.0) {
            Some(index) => Err(DgpError::SingularCovariance { index }),
            None => Ok(()),
        }
    }

    pub fn to_sections(&self) -> Sections {
        let n = self.dim();
        let mut s = Sections::new();
        s.push("MEAN", 1, n, self.mean.as_slice());
        // row-major on disk
        s.push("COMPONENTS", n, n, self.components.transpose().as_slice());
        s.push("STRENGTHS", 1, n, self.strengths.as_slice());
        s
    }

    pub fn from_sections(source: &str, s: &Sections) -> Result<Self> {
        let mean = s.require(source, "MEAN")?;
        let comps = s.require(source, "COMPONENTS")?;
        let strengths = s.require(source, "STRENGTHS")?;
        let n = mean.values.len();
        if comps.rows != n || comps.cols != n {
            return Err(DgpError::DimensionMismatch {
                expected: n,
                got: comps.rows,
            });
        }
        Self::new(
            DVector::from_column_slice(&mean.values),
            DMatrix::from_row_slice(n, n, &comps.values),
            DVector::from_column_slice(&strengths.values),
        )
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_sections().write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_sections(&path.display().to_string(), &Sections::read(path)?)
    }
}

/// The projector's reconstruction `Q Λ^{1/2} Tr(s) + μ`.
pub fn project_code(s: &StrengthCode, basis: &PcaBasis, cfg: &TruncationConfig) -> Result<LatentCode> {
    basis.check_dim(s.dim())?;
    let t = truncate(s, cfg);
    Ok(LatentCode(basis.scaled_components() * t.0 + &basis.mean))
}

/// Whether `w` lies in the `ψ`-ellipse of the basis.
pub fn in_ellipse(w: &LatentCode, basis: &PcaBasis, cfg: &TruncationConfig) -> Result<bool> {
    let psi_sq = cfg.psi * cfg.psi;
    Ok(basis.mahalanobis_sq(w)? <= psi_sq * (1.0 + ELLIPSE_RTOL))
}
