use std::ops::Range;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use super::design::{build_design, Design};
use super::{Ar1, GroupLevel, LambdaSelect, LambdaSharing, MeanModelSpec};
use crate::curves::{Curve, FunctionalSample};
use crate::error::{Error, Result};

const GCV_GRID_POINTS: usize = 30;
const GCV_LOG10_RANGE: (f64, f64) = (-4.0, 6.0);
const GCV_SWEEPS: usize = 2;
const MAX_CONDITION: f64 = 1e14;
const MAX_ABS_RHO: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct ParametricTerm {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Approximate Wald test of a penalized block.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothTerm {
    pub term: String,
    pub edf: f64,
    pub lambda: f64,
    pub ref_df: usize,
    pub chi_sq: f64,
    pub p_value: f64,
}

/// Fitted mean model.
#[derive(Debug, Clone)]
pub struct MeanModelFit {
    /// Parametric intercepts, speaker intercepts, then one centered block per smooth.
    pub coefficients: DVector<f64>,
    /// Smoothing parameter of each group smooth, in level order.
    pub lambdas: Vec<f64>,
    pub speaker_lambda: f64,
    pub rho: f64,
    pub fitted: Vec<Vec<f64>>,
    pub residuals: Vec<Vec<f64>>,
    /// Effective degrees of freedom of each group smooth.
    pub edf: Vec<f64>,
    pub speaker_edf: f64,
    pub total_edf: f64,
    pub sigma2: f64,
    pub gcv: f64,
    /// `σ̂² (WᵀΩW + Σ λ_s P_s)⁻¹`.
    pub covariance: DMatrix<f64>,
    pub parametric: Vec<ParametricTerm>,
    pub smooth_terms: Vec<SmoothTerm>,
    pub groups: Vec<GroupLevel>,
    pub speakers: Vec<String>,
    layout: Layout,
    constraints: Vec<DMatrix<f64>>,
    grid_basis: DMatrix<f64>,
}

#[derive(Debug, Clone)]
struct Layout {
    parametric: Range<usize>,
    speaker: Range<usize>,
    smooths: Vec<Range<usize>>,
}

impl MeanModelFit {
    /// Approximate p-values of the parametric terms.
    pub fn pvalues(&self) -> Vec<f64> {
        self.parametric.iter().map(|t| t.p_value).collect()
    }

    /// Fitted contribution of the smooth of level `level` on the grid.
    pub fn smooth_component(&self, level: usize) -> Vec<f64> {
        let beta = self.coefficients.rows_range(self.layout.smooths[level].clone());
        let values = &self.grid_basis * (&self.constraints[level] * beta);
        values.iter().copied().collect()
    }

    /// Population-level mean curve of a group level (speaker effects at zero).
    pub fn group_mean_curve(&self, level: usize) -> Vec<f64> {
        let p0 = self.layout.parametric.start;
        let mut offset = self.coefficients[p0];
        if level > 0 {
            offset += self.coefficients[p0 + level];
        }
        self.smooth_component(level).into_iter().map(|v| v + offset).collect()
    }

    pub fn speaker_effects(&self) -> Vec<(String, f64)> {
        self.speakers
            .iter()
            .cloned()
            .zip(
                self.coefficients
                    .rows_range(self.layout.speaker.clone())
                    .iter()
                    .copied(),
            )
            .collect()
    }
}

/// Orthonormal basis of the complement of `c` via a Householder reflection.
fn centering_constraint(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv = v.dot(&v);
    let h = DMatrix::identity(k, k) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, k - 1).into_owned()
}

/// Applies the AR(1) whitening transform within each curve of `q` rows.
fn whiten(m: &mut DMatrix<f64>, q: usize, rho: f64) {
    if rho == 0.0 {
        return;
    }
    let scale = (1.0 - rho * rho).sqrt();
    let n_curves = m.nrows() / q;
    for i in 0..n_curves {
        let base = i * q;
        for t in (1..q).rev() {
            let prev = m.row(base + t - 1).into_owned();
            let mut row = m.row_mut(base + t);
            row -= prev * rho;
        }
        m.row_mut(base).scale_mut(scale);
    }
}

fn lag1_autocorrelation(residuals: &DVector<f64>, q: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for curve in residuals.as_slice().chunks(q) {
        den += curve.iter().map(|r| r * r).sum::<f64>();
        num += curve.windows(2).map(|w| w[0] * w[1]).sum::<f64>();
    }
    if den > 0.0 {
        (num / den).clamp(-MAX_ABS_RHO, MAX_ABS_RHO)
    } else {
        0.0
    }
}

/// A smoothing parameter and the dense penalty it multiplies.
struct PenaltySlot {
    penalty: DMatrix<f64>,
}

/// Cross-products of the whitened regression.
struct Normal {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: f64,
}

struct Solved {
    chol: Cholesky<f64, Dyn>,
    beta: DVector<f64>,
    rss: f64,
    edf_diag: DVector<f64>,
}

impl Normal {
    fn new(w: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        Self {
            gram: w.tr_mul(w),
            xty: w.tr_mul(y),
            yty: y.dot(y),
            n: y.len() as f64,
        }
    }

    fn system(&self, slots: &[PenaltySlot], lambdas: &[f64]) -> DMatrix<f64> {
        let mut a = self.gram.clone();
        for (slot, &l) in slots.iter().zip(lambdas) {
            a += &slot.penalty * l;
        }
        a
    }

    fn solve(&self, slots: &[PenaltySlot], lambdas: &[f64]) -> Option<Solved> {
        let chol = Cholesky::new(self.system(slots, lambdas))?;
        let beta = chol.solve(&self.xty);
        let rss = (self.yty - 2.0 * beta.dot(&self.xty) + beta.dot(&(&self.gram * &beta))).max(0.0);
        let influence = chol.solve(&self.gram);
        let edf_diag = influence.diagonal();
        Some(Solved {
            chol,
            beta,
            rss,
            edf_diag,
        })
    }

    fn gcv(&self, slots: &[PenaltySlot], lambdas: &[f64]) -> f64 {
        match self.solve(slots, lambdas) {
            Some(s) => {
                let edf = s.edf_diag.sum();
                let denom = self.n - edf;
                if denom <= 0.0 {
                    f64::INFINITY
                } else {
                    self.n * s.rss / (denom * denom)
                }
            }
            None => f64::INFINITY,
        }
    }
}

fn gcv_grid() -> Vec<f64> {
    let (lo, hi) = GCV_LOG10_RANGE;
    (0..GCV_GRID_POINTS)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (GCV_GRID_POINTS - 1) as f64))
        .collect()
}

/// Coordinate-wise grid search of the GCV score.
fn select_lambdas(normal: &Normal, slots: &[PenaltySlot]) -> Vec<f64> {
    let grid = gcv_grid();
    let mut lambdas = vec![1.0; slots.len()];
    let mut best = normal.gcv(slots, &lambdas);
    for _ in 0..GCV_SWEEPS {
        for j in 0..slots.len() {
            for &candidate in &grid {
                let mut trial = lambdas.clone();
                trial[j] = candidate;
                let score = normal.gcv(slots, &trial);
                if score < best {
                    best = score;
                    lambdas = trial;
                }
            }
        }
    }
    lambdas
}

struct Assembled {
    w: DMatrix<f64>,
    layout: Layout,
    constraints: Vec<DMatrix<f64>>,
    /// Penalties of the speaker block and of each smooth, embedded at full size.
    speaker_penalty: Option<DMatrix<f64>>,
    smooth_penalties: Vec<DMatrix<f64>>,
}

fn assemble(design: &Design) -> Assembled {
    let rows = design.n_rows();
    let n_par = design.parametric.ncols();
    let n_spk = design.speaker.ncols();
    let constraints: Vec<DMatrix<f64>> = design
        .smooths
        .iter()
        .map(|s| {
            let sums = DVector::from_iterator(s.basis.ncols(), s.basis.column_iter().map(|c| c.sum()));
            centering_constraint(&sums)
        })
        .collect();
    let smooth_cols: Vec<usize> = constraints.iter().map(|c| c.ncols()).collect();
    let p = n_par + n_spk + smooth_cols.iter().sum::<usize>();

    let mut w = DMatrix::zeros(rows, p);
    w.columns_mut(0, n_par).copy_from(&design.parametric);
    w.columns_mut(n_par, n_spk).copy_from(&design.speaker);
    let mut smooths = Vec::with_capacity(design.smooths.len());
    let mut smooth_penalties = Vec::with_capacity(design.smooths.len());
    let mut offset = n_par + n_spk;
    for (block, c) in design.smooths.iter().zip(&constraints) {
        let cols = c.ncols();
        w.columns_mut(offset, cols).copy_from(&(&block.basis * c));
        let mut full = DMatrix::zeros(p, p);
        full.view_mut((offset, offset), (cols, cols))
            .copy_from(&(c.transpose() * &block.penalty * c));
        smooth_penalties.push(full);
        smooths.push(offset..offset + cols);
        offset += cols;
    }
    let speaker_penalty = (n_spk > 0).then(|| {
        let mut full = DMatrix::zeros(p, p);
        full.view_mut((n_par, n_par), (n_spk, n_spk))
            .copy_from(&design.speaker_penalty);
        full
    });
    Assembled {
        w,
        layout: Layout {
            parametric: 0..n_par,
            speaker: n_par..n_par + n_spk,
            smooths,
        },
        constraints,
        speaker_penalty,
        smooth_penalties,
    }
}

/// Smoothing-parameter slots: the speaker ridge first (if any), then the smooths.
fn penalty_slots(asm: &Assembled, sharing: LambdaSharing) -> (Vec<PenaltySlot>, Vec<usize>) {
    let mut slots = Vec::new();
    if let Some(p) = &asm.speaker_penalty {
        slots.push(PenaltySlot { penalty: p.clone() });
    }
    let first_smooth = slots.len();
    let mut smooth_slot = Vec::with_capacity(asm.smooth_penalties.len());
    match sharing {
        LambdaSharing::Shared => {
            if let Some(first) = asm.smooth_penalties.first() {
                let mut total = DMatrix::zeros(first.nrows(), first.ncols());
                for p in &asm.smooth_penalties {
                    total += p;
                }
                slots.push(PenaltySlot { penalty: total });
            }
            smooth_slot.resize(asm.smooth_penalties.len(), first_smooth);
        }
        LambdaSharing::PerSmooth => {
            for (i, p) in asm.smooth_penalties.iter().enumerate() {
                slots.push(PenaltySlot { penalty: p.clone() });
                smooth_slot.push(first_smooth + i);
            }
        }
    }
    (slots, smooth_slot)
}

fn normal_two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Wald chi-square of a coefficient block, truncating its covariance to `rank`.
fn block_wald(beta: &DVector<f64>, cov: &DMatrix<f64>, rank: usize) -> (f64, f64) {
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lmax = eig.eigenvalues[order[0]].max(0.0);
    let mut stat = 0.0;
    let mut used = 0;
    for &i in order.iter().take(rank) {
        let l = eig.eigenvalues[i];
        if l <= 1e-12 * lmax || l <= 0.0 {
            break;
        }
        let proj = eig.eigenvectors.column(i).dot(beta);
        stat += proj * proj / l;
        used += 1;
    }
    if used == 0 {
        return (0.0, 1.0);
    }
    let p = ChiSquared::new(used as f64).map(|d| d.sf(stat)).unwrap_or(f64::NAN);
    (stat, p)
}

/// Penalized least-squares fit with GCV smoothing selection and optional AR(1) errors.
pub fn fit_mean_model(sample: &FunctionalSample, spec: &MeanModelSpec) -> Result<MeanModelFit> {
    let design = build_design(sample, spec)?;
    let q = design.curve_len;
    let asm = assemble(&design);
    let (slots, smooth_slot) = penalty_slots(&asm, spec.lambda_sharing);
    let speaker_slot = asm.speaker_penalty.as_ref().map(|_| 0);

    let choose = |normal: &Normal| match spec.lambda_select {
        LambdaSelect::Gcv => select_lambdas(normal, &slots),
        LambdaSelect::Fixed(l) => vec![l; slots.len()],
    };

    let whitened = |rho: f64| {
        let mut w = asm.w.clone();
        let mut y = DMatrix::from_column_slice(design.n_rows(), 1, design.response.as_slice());
        whiten(&mut w, q, rho);
        whiten(&mut y, q, rho);
        Normal::new(&w, &y.column(0).into_owned())
    };

    let rho = match spec.ar1 {
        Ar1::Fixed(r) => r,
        Ar1::Auto => {
            let normal = whitened(0.0);
            let lambdas = choose(&normal);
            let solved = normal
                .solve(&slots, &lambdas)
                .ok_or(Error::IllConditioned(f64::INFINITY))?;
            let working = &design.response - &asm.w * &solved.beta;
            lag1_autocorrelation(&working, q)
        }
    };

    let normal = whitened(rho);
    let lambdas = choose(&normal);
    let system = normal.system(&slots, &lambdas);
    let spectrum = SymmetricEigen::new(system.clone()).eigenvalues;
    let (lo, hi) = spectrum
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::IllConditioned(condition));
    }
    let solved = normal.solve(&slots, &lambdas).ok_or(Error::IllConditioned(condition))?;

    let total_edf = solved.edf_diag.sum();
    let sigma2 = solved.rss / (normal.n - total_edf).max(1.0);
    let gcv = normal.n * solved.rss / (normal.n - total_edf).powi(2);
    let p = system.nrows();
    let covariance = solved.chol.solve(&DMatrix::identity(p, p)) * sigma2;
    let beta = solved.beta;

    let fitted_all = &asm.w * &beta;
    let n_curves = design.n_curves();
    let mut fitted = Vec::with_capacity(n_curves);
    let mut residuals = Vec::with_capacity(n_curves);
    for i in 0..n_curves {
        let f: Vec<f64> = fitted_all.rows(i * q, q).iter().copied().collect();
        let r = design
            .response
            .rows(i * q, q)
            .iter()
            .zip(&f)
            .map(|(y, f)| y - f)
            .collect();
        fitted.push(f);
        residuals.push(r);
    }

    let block_edf = |r: &Range<usize>| solved.edf_diag.rows_range(r.clone()).sum();
    let edf: Vec<f64> = asm.layout.smooths.iter().map(block_edf).collect();
    let speaker_edf = block_edf(&asm.layout.speaker);

    let parametric = design
        .parametric_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let idx = asm.layout.parametric.start + j;
            let estimate = beta[idx];
            let std_error = covariance[(idx, idx)].max(0.0).sqrt();
            let z = estimate / std_error;
            ParametricTerm {
                term: name.clone(),
                estimate,
                std_error,
                z,
                p_value: normal_two_sided_p(z),
            }
        })
        .collect();

    let smooth_lambdas: Vec<f64> = smooth_slot.iter().map(|&s| lambdas[s]).collect();
    let wald = |name: String, range: &Range<usize>, edf: f64, lambda: f64| {
        let b = beta.rows_range(range.clone()).into_owned();
        let v = covariance
            .view((range.start, range.start), (range.len(), range.len()))
            .into_owned();
        let rank = (edf.round() as usize).clamp(1, range.len());
        let (chi_sq, p_value) = block_wald(&b, &v, rank);
        SmoothTerm {
            term: name,
            edf,
            lambda,
            ref_df: rank,
            chi_sq,
            p_value,
        }
    };
    let mut smooth_terms: Vec<SmoothTerm> = design
        .smooths
        .iter()
        .zip(&asm.layout.smooths)
        .zip(edf.iter().zip(&smooth_lambdas))
        .map(|((block, range), (&e, &l))| wald(block.name(), range, e, l))
        .collect();
    let speaker_lambda = speaker_slot.map_or(0.0, |s| lambdas[s]);
    if !asm.layout.speaker.is_empty() {
        smooth_terms.push(wald(
            "re(speaker)".into(),
            &asm.layout.speaker,
            speaker_edf,
            speaker_lambda,
        ));
    }

    Ok(MeanModelFit {
        coefficients: beta,
        lambdas: smooth_lambdas,
        speaker_lambda,
        rho,
        fitted,
        residuals,
        edf,
        speaker_edf,
        total_edf,
        sigma2,
        gcv,
        covariance,
        parametric,
        smooth_terms,
        groups: spec.groups.clone(),
        speakers: design.speaker_names,
        layout: asm.layout,
        constraints: asm.constraints,
        grid_basis: design.grid_basis,
    })
}

/// Observed minus fitted curves, with the original metadata.
pub fn extract_residuals(fit: &MeanModelFit, sample: &FunctionalSample) -> Result<FunctionalSample> {
    if fit.residuals.len() != sample.len() {
        return Err(Error::DimMismatch {
            expected: fit.residuals.len(),
            found: sample.len(),
        });
    }
    let curves = sample
        .curves()
        .iter()
        .zip(&fit.residuals)
        .map(|(c, r)| Curve {
            values: r.clone(),
            meta: c.meta.clone(),
        })
        .collect();
    FunctionalSample::new(Arc::clone(sample.grid()), curves)
}

/// Parametric terms with approximate Wald p-values.
pub fn parametric_wald_table(fit: &MeanModelFit) -> &[ParametricTerm] {
    &fit.parametric
}
