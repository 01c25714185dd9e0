//! Symmetric positive semi-definite operators under the Bures–Wasserstein
//! geometry.
//!
//! A covariance operator discretized on a grid of `q` points is a `q × q`
//! symmetric PSD matrix. Every root, inverse root and transport map here is
//! computed from a full symmetric eigendecomposition, which each
//! [`SpdOperator`] carries from construction onward.
//!
//! For centered Gaussian laws `N(0, A)` and `N(0, B)` the squared
//! Wasserstein–Procrustes distance is
//!
//! ```text
//! Π²(A, B) = tr A + tr B − 2 tr (A^{1/2} B A^{1/2})^{1/2}
//! ```
//!
//! and the optimal map pushing `N(0, A)` onto `N(0, B)` is the linear map
//!
//! ```text
//! t = A^{-1/2} (A^{1/2} B A^{1/2})^{1/2} A^{-1/2}.
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Negative eigenvalues down to `-NEG_EIG_BAND * λ_max` are roundoff and get clamped.
pub const NEG_EIG_BAND: f64 = 1e-10;

/// Relative threshold of the spectral pseudo-inverse used when the floor is zero.
pub const PINV_REL_THRESHOLD: f64 = 1e-12;

/// A symmetric positive semi-definite matrix together with its spectrum.
#[derive(Debug, Clone)]
pub struct SpdOperator {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    eig_floor: f64,
}

impl PartialEq for SpdOperator {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix && self.eig_floor == other.eig_floor
    }
}

/// Checks that `m` is a finite square matrix and returns its order.
fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidOperator(format!(
            "matrix is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::InvalidOperator("matrix has order zero".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidOperator("non-finite entry".into()));
    }
    Ok(m.nrows())
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `V diag(f(λ)) Vᵀ`.
fn spectral_apply(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (mut col, &v) in scaled.column_iter_mut().zip(values.iter()) {
        col *= v;
    }
    symmetrize(&(scaled * vectors.transpose()))
}

impl SpdOperator {
    /// Validates and symmetrizes `m`.
    ///
    /// Eigenvalues within the roundoff band below zero are clamped to zero;
    /// anything more negative is rejected with [`Error::NotPsd`].
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::build(m, false)
    }

    /// Like [`SpdOperator::new`] but clamps every negative eigenvalue, i.e. the
    /// nearest PSD matrix in Frobenius norm.
    pub fn project(m: DMatrix<f64>) -> Result<Self> {
        Self::build(m, true)
    }

    fn build(m: DMatrix<f64>, clamp_all: bool) -> Result<Self> {
        check_square(&m)?;
        let sym = symmetrize(&m);
        let eig = SymmetricEigen::new(sym.clone());
        let largest = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        let mut clamped = false;
        let mut values = eig.eigenvalues;
        for v in values.iter_mut() {
            if *v < 0.0 {
                if !clamp_all && *v < -NEG_EIG_BAND * largest {
                    return Err(Error::NotPsd {
                        eigenvalue: *v,
                        largest,
                    });
                }
                *v = 0.0;
                clamped = true;
            }
        }
        let matrix = if clamped {
            spectral_apply(&eig.eigenvectors, &values)
        } else {
            sym
        };
        Ok(Self {
            matrix,
            eigenvalues: values,
            eigenvectors: eig.eigenvectors,
            eig_floor: 0.0,
        })
    }

    fn from_spectrum(vectors: DMatrix<f64>, values: DVector<f64>, eig_floor: f64) -> Self {
        Self {
            matrix: spectral_apply(&vectors, &values),
            eigenvalues: values,
            eigenvectors: vectors,
            eig_floor,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_spectrum(DMatrix::identity(dim, dim), DVector::from_element(dim, 1.0), 0.0)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Sets the floor used whenever this operator has to be inverted.
    pub fn with_eig_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor >= 0.0 && floor.is_finite()) {
            return Err(Error::InvalidInput(format!("eigenvalue floor {floor} must be >= 0")));
        }
        self.eig_floor = floor;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Eigenvalues in the order of [`SpdOperator::eigenvectors`], clamped at zero.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn eig_floor(&self) -> f64 {
        self.eig_floor
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v))
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn sqrt(&self) -> SpdOperator {
        let values = self.eigenvalues.map(f64::sqrt);
        Self::from_spectrum(self.eigenvectors.clone(), values, self.eig_floor)
    }

    /// Eigenvalues that count as invertible, as a mask, plus the effective values.
    fn inversion_spectrum(&self, floor: f64) -> Result<(Vec<bool>, DVector<f64>)> {
        if !(floor >= 0.0 && floor.is_finite()) {
            return Err(Error::InvalidInput(format!("eigenvalue floor {floor} must be >= 0")));
        }
        let lmax = self.max_eigenvalue();
        if floor > 0.0 {
            if lmax < floor {
                return Err(Error::RankZeroOperator);
            }
            let values = self.eigenvalues.map(|v| v.max(floor));
            return Ok((vec![true; self.dim()], values));
        }
        if lmax <= 0.0 {
            return Err(Error::RankZeroOperator);
        }
        let threshold = PINV_REL_THRESHOLD * lmax;
        let mask: Vec<bool> = self.eigenvalues.iter().map(|&v| v > threshold).collect();
        Ok((mask, self.eigenvalues.clone()))
    }

    /// Inverse square root; see [`invsqrt_psd`].
    pub fn invsqrt(&self, floor: f64) -> Result<SpdOperator> {
        let (mask, values) = self.inversion_spectrum(floor)?;
        let inv = DVector::from_iterator(
            values.len(),
            values
                .iter()
                .zip(&mask)
                .map(|(&v, &keep)| if keep { 1.0 / v.sqrt() } else { 0.0 }),
        );
        Ok(Self::from_spectrum(self.eigenvectors.clone(), inv, self.eig_floor))
    }

    /// Orthogonal projector onto the part of the spectrum that [`SpdOperator::invsqrt`]
    /// inverts. Equals the identity for nonsingular operators or a positive floor.
    pub fn range_projector(&self, floor: f64) -> Result<DMatrix<f64>> {
        let (mask, _) = self.inversion_spectrum(floor)?;
        if mask.iter().all(|&k| k) {
            return Ok(DMatrix::identity(self.dim(), self.dim()));
        }
        let values = DVector::from_iterator(mask.len(), mask.iter().map(|&k| f64::from(u8::from(k))));
        Ok(spectral_apply(&self.eigenvectors, &values))
    }
}

/// A symmetric PSD matrix `t` with `t·src·t = dst`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap {
    entries: DMatrix<f64>,
}

impl TransportMap {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// `t·Σ·t`, the covariance of the pushforward of `N(0, Σ)`.
    pub fn push_forward(&self, cov: &SpdOperator) -> DMatrix<f64> {
        symmetrize(&(&self.entries * cov.matrix() * &self.entries))
    }
}

pub fn sqrt_psd(a: &SpdOperator) -> Result<SpdOperator> {
    Ok(a.sqrt())
}

/// Inverse square root with eigenvalue regularization.
///
/// With `floor > 0` eigenvalues below `floor` are raised to `floor`. With
/// `floor == 0` eigenvalues at or below `1e-12·λ_max` are dropped, giving the
/// pseudo-inverse root on the numerical range.
pub fn invsqrt_psd(a: &SpdOperator, floor: f64) -> Result<SpdOperator> {
    a.invsqrt(floor)
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch { expected: a, found: b });
    }
    Ok(())
}

/// `tr (A^{1/2} B A^{1/2})^{1/2}` given `A^{1/2}`.
fn fidelity_trace(a_sqrt: &SpdOperator, b: &SpdOperator) -> f64 {
    let s = a_sqrt.matrix();
    let middle = symmetrize(&(s * b.matrix() * s));
    SymmetricEigen::new(middle)
        .eigenvalues
        .iter()
        .map(|&v| v.max(0.0).sqrt())
        .sum()
}

/// Squared Wasserstein–Procrustes distance, clamped at zero.
pub fn bw_distance_sq(a: &SpdOperator, b: &SpdOperator) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let cross = fidelity_trace(&a.sqrt(), b);
    Ok((a.trace() + b.trace() - 2.0 * cross).max(0.0))
}

/// Optimal transport map from `N(0, src)` to `N(0, dst)`.
pub fn transport_map(src: &SpdOperator, dst: &SpdOperator, floor: f64) -> Result<TransportMap> {
    check_dims(src.dim(), dst.dim())?;
    let inv = src.invsqrt(floor)?;
    Ok(transport_map_with_roots(&src.sqrt(), &inv, dst))
}

/// Transport map when the roots of the source are already available.
pub(crate) fn transport_map_with_roots(
    src_sqrt: &SpdOperator,
    src_invsqrt: &SpdOperator,
    dst: &SpdOperator,
) -> TransportMap {
    let s = src_sqrt.matrix();
    let middle = symmetrize(&(s * dst.matrix() * s));
    let eig = SymmetricEigen::new(middle);
    let cutoff = rank_tolerance(&eig.eigenvalues);
    let root = spectral_apply(
        &eig.eigenvectors,
        &eig.eigenvalues.map(|v| if v > cutoff { v.sqrt() } else { 0.0 }),
    );
    let si = src_invsqrt.matrix();
    TransportMap {
        entries: symmetrize(&(si * root * si)),
    }
}

/// Eigenvalues at or below `q·ε·λ_max` are indistinguishable from zero; keeping
/// them would turn round-off into `O(√ε)` noise under a square root.
fn rank_tolerance(values: &DVector<f64>) -> f64 {
    let lmax = values.iter().fold(0.0_f64, |a, &v| a.max(v));
    values.len() as f64 * f64::EPSILON * lmax
}

/// Squared Hilbert–Schmidt (Frobenius) norm.
pub fn hs_norm_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Hilbert–Schmidt inner product `tr(AᵀB)`.
pub fn hs_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
