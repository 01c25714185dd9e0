//! Tangent-space PCA of covariance operators.
//!
//! Each operator `Σ_j` is lifted to the tangent space at a base point `Σ̄` by
//! `V_j = (t_j − I) Σ̄^{1/2}`, `t_j` the optimal map `Σ̄ → Σ_j`. PCA is the
//! spectral decomposition of `(1/K) Σ_j V_j ⊗ V_j` under the Hilbert–Schmidt
//! inner product, computed through the `K × K` Gram matrix of the `V_j`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::otinfer::{frechet_mean, FrechetOptions};
use crate::spd::{hs_inner, symmetrize, transport_map, SpdOperator, NEG_EIG_BAND};

/// Default cap on the number of retained components.
pub const DEFAULT_COMPONENTS: usize = 10;

/// A tangent vector `(t − I) Σ̄^{1/2}` at some base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    entries: DMatrix<f64>,
}

impl TangentVector {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::InvalidInput("tangent vector must be square".into()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite tangent vector entry".into()));
        }
        Ok(Self { entries })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn norm_sq(&self) -> f64 {
        hs_inner(&self.entries, &self.entries)
    }
}

pub fn log_map(base: &SpdOperator, target: &SpdOperator) -> Result<TangentVector> {
    let t = transport_map(base, target, base.eig_floor())?;
    let root = base.sqrt();
    // (t − I)Σ̄^{1/2} = tΣ̄^{1/2} − Σ̄^{1/2}
    let v = t.matrix() * root.matrix() - root.matrix();
    TangentVector::new(v)
}

/// Inverse of [`log_map`]: `(I + A) Σ̄ (I + A)` with `A = sym(v Σ̄^{-1/2})`.
pub fn exp_map(base: &SpdOperator, v: &TangentVector) -> Result<SpdOperator> {
    if v.dim() != base.dim() {
        return Err(Error::DimMismatch {
            expected: base.dim(),
            found: v.dim(),
        });
    }
    let inv = base.invsqrt(base.eig_floor())?;
    let a = symmetrize(&(v.matrix() * inv.matrix()));
    let shift = DMatrix::identity(base.dim(), base.dim()) + a;
    SpdOperator::project(&shift * base.matrix() * &shift)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentPcaOptions {
    pub components: usize,
    /// Subtract the mean tangent vector before the decomposition.
    pub centered: bool,
    pub frechet: FrechetOptions,
}

impl Default for TangentPcaOptions {
    fn default() -> Self {
        Self {
            components: DEFAULT_COMPONENTS,
            centered: false,
            frechet: FrechetOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TangentPcaResult {
    pub base: SpdOperator,
    /// All `K` eigenvalues, nonincreasing and nonnegative.
    pub eigenvalues: Vec<f64>,
    /// HS-orthonormal eigen-elements for the retained nonzero eigenvalues.
    pub components: Vec<DMatrix<f64>>,
    /// `K × m`: `scores[(j, l)] = ⟨V_j, component_l⟩_HS` (centered `V_j` when requested).
    pub scores: DMatrix<f64>,
    pub tangent_vectors: Vec<TangentVector>,
}

impl TangentPcaResult {
    /// Share of each eigenvalue in the total; zeros when the total vanishes.
    pub fn eigenvalue_shares(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues
            .iter()
            .map(|&l| if total > 0.0 { l / total } else { 0.0 })
            .collect()
    }
}

/// Tangent PCA around `base`, or around the Fréchet mean of `ops` when `base` is `None`.
pub fn tangent_pca(
    ops: &[SpdOperator],
    base: Option<&SpdOperator>,
    opts: &TangentPcaOptions,
) -> Result<TangentPcaResult> {
    let k = ops.len();
    if k < 2 {
        return Err(Error::TooFewSamples { required: 2, found: k });
    }
    let base = match base {
        Some(b) => b.clone(),
        None => frechet_mean(ops, None, &opts.frechet)?.mean,
    };
    let tangent_vectors = ops
        .iter()
        .map(|op| {
            if op.dim() != base.dim() {
                return Err(Error::DimMismatch {
                    expected: base.dim(),
                    found: op.dim(),
                });
            }
            log_map(&base, op)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut vectors: Vec<DMatrix<f64>> = tangent_vectors.iter().map(|v| v.matrix().clone()).collect();
    if opts.centered {
        let mean = vectors
            .iter()
            .fold(DMatrix::zeros(base.dim(), base.dim()), |a, v| a + v)
            / k as f64;
        for v in &mut vectors {
            *v -= &mean;
        }
    }

    let gram = DMatrix::from_fn(k, k, |i, j| hs_inner(&vectors[i], &vectors[j]) / k as f64);
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lmax = eig.eigenvalues[order[0]].max(0.0);
    // Tangent norms carry the units of the base, so round-off is judged against its trace too.
    let cutoff = (NEG_EIG_BAND * lmax).max(f64::EPSILON * base.trace());
    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&i| {
            let l = eig.eigenvalues[i];
            if l <= cutoff {
                0.0
            } else {
                l
            }
        })
        .collect();

    let retained: Vec<usize> = order
        .iter()
        .zip(&eigenvalues)
        .take(opts.components)
        .take_while(|(_, &l)| l > 0.0)
        .map(|(&i, _)| i)
        .collect();

    let mut components = Vec::with_capacity(retained.len());
    let mut scores = DMatrix::zeros(k, retained.len());
    for (l, &i) in retained.iter().enumerate() {
        let lambda = eig.eigenvalues[i];
        let u = eig.eigenvectors.column(i);
        let scale = (k as f64 * lambda).sqrt();
        let comp = vectors
            .iter()
            .zip(u.iter())
            .fold(DMatrix::zeros(base.dim(), base.dim()), |a, (v, &c)| a + v * c)
            / scale;
        for j in 0..k {
            scores[(j, l)] = hs_inner(&vectors[j], &comp);
        }
        components.push(comp);
    }

    Ok(TangentPcaResult {
        base,
        eigenvalues,
        components,
        scores,
        tangent_vectors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub label: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeRow {
    pub component: usize,
    pub eigenvalue: f64,
    pub share: f64,
    pub cumulative: f64,
}

/// Labeled scores and screeplot data of a tangent PCA.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoresTable {
    pub rows: Vec<ScoreRow>,
    pub scree: Vec<ScreeRow>,
}

pub fn scores_table(res: &TangentPcaResult, labels: &[String]) -> Result<ScoresTable> {
    if labels.len() != res.scores.nrows() {
        return Err(Error::DimMismatch {
            expected: res.scores.nrows(),
            found: labels.len(),
        });
    }
    let rows = labels
        .iter()
        .enumerate()
        .map(|(j, label)| ScoreRow {
            label: label.clone(),
            scores: res.scores.row(j).iter().copied().collect(),
        })
        .collect();
    let mut cumulative = 0.0;
    let scree = res
        .eigenvalues
        .iter()
        .zip(res.eigenvalue_shares())
        .enumerate()
        .map(|(i, (&eigenvalue, share))| {
            cumulative += share;
            ScreeRow {
                component: i + 1,
                eigenvalue,
                share,
                cumulative,
            }
        })
        .collect();
    Ok(ScoresTable { rows, scree })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::bw_distance_sq;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(q: usize, rng: &mut impl Rng) -> SpdOperator {
        let g = DMatrix::from_fn(q, q, |_, _| rng.random_range(-1.0..1.0));
        SpdOperator::new(&g * g.transpose() / q as f64 + DMatrix::identity(q, q) * 0.3).unwrap()
    }

    fn scalar(v: f64) -> SpdOperator {
        SpdOperator::from_diagonal(&[v]).unwrap()
    }

    #[test]
    fn log_map_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_pd(5, &mut rng);
        assert!(log_map(&s, &s).unwrap().matrix().amax() < 1e-10);
        assert_abs_diff_eq!(
            log_map(&scalar(4.0), &scalar(9.0)).unwrap().matrix()[(0, 0)],
            1.0,
            epsilon = 1e-14
        );
        let t = random_pd(5, &mut rng);
        let v = log_map(&s, &t).unwrap();
        assert_abs_diff_eq!(v.norm_sq(), bw_distance_sq(&s, &t).unwrap(), epsilon = 1e-8);
    }

    #[test]
    fn exp_map_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_pd(4, &mut rng);
        let back = exp_map(&s, &TangentVector::zeros(4)).unwrap();
        assert!((back.matrix() - s.matrix()).amax() < 1e-12);

        let t = random_pd(4, &mut rng);
        let round = exp_map(&s, &log_map(&s, &t).unwrap()).unwrap();
        assert!((round.matrix() - t.matrix()).norm() <= 1e-8 * t.matrix().norm());

        // base 4, v = 1: A = 1/2, (1 + 1/2)·4·(1 + 1/2) = 9
        let one = TangentVector::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_abs_diff_eq!(
            exp_map(&scalar(4.0), &one).unwrap().matrix()[(0, 0)],
            9.0,
            epsilon = 1e-14
        );

        assert!(matches!(
            exp_map(&s, &TangentVector::zeros(3)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn identical_operators_have_zero_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_pd(4, &mut rng);
        let res = tangent_pca(&[s.clone(), s.clone(), s], None, &Default::default()).unwrap();
        assert!(res.eigenvalues.iter().all(|&l| l == 0.0));
        assert!(res.components.is_empty());
        let table = scores_table(&res, &["a".into(), "b".into(), "c".into()]).unwrap();
        assert!(table.scree.iter().all(|r| r.share == 0.0));
    }

    #[test]
    fn two_operators_are_rank_one_and_antipodal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ops = [random_pd(5, &mut rng), random_pd(5, &mut rng)];
        let res = tangent_pca(&ops, None, &Default::default()).unwrap();
        assert!(res.eigenvalues[0] > 0.0);
        assert_eq!(res.eigenvalues[1], 0.0);
        assert_eq!(res.components.len(), 1);
        assert_abs_diff_eq!(
            res.scores[(0, 0)],
            -res.scores[(1, 0)],
            epsilon = 1e-8 * res.scores[(0, 0)].abs()
        );
    }

    #[test]
    fn eigenvalue_sum_and_score_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ops: Vec<_> = (0..6).map(|_| random_pd(4, &mut rng)).collect();
        let res = tangent_pca(&ops, None, &Default::default()).unwrap();
        let total: f64 = res.eigenvalues.iter().sum();
        let dispersion: f64 = ops.iter().map(|o| bw_distance_sq(&res.base, o).unwrap()).sum::<f64>() / 6.0;
        assert_abs_diff_eq!(total, dispersion, epsilon = 1e-8);
        assert!(res.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for (j, v) in res.tangent_vectors.iter().enumerate() {
            let s: f64 = res.scores.row(j).iter().map(|x| x * x).sum();
            assert_abs_diff_eq!(s, v.norm_sq(), epsilon = 1e-8);
        }
        for a in 0..res.components.len() {
            for b in 0..res.components.len() {
                let ip = hs_inner(&res.components[a], &res.components[b]);
                assert_abs_diff_eq!(ip, if a == b { 1.0 } else { 0.0 }, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn base_among_ops_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ops: Vec<_> = (0..4).map(|_| random_pd(3, &mut rng)).collect();
        let res = tangent_pca(&ops, Some(&ops[2]), &Default::default()).unwrap();
        assert!(res.scores.row(2).iter().all(|s| s.abs() < 1e-10));
        let labels: Vec<String> = (0..4).map(|i| format!("op{i}")).collect();
        let table = scores_table(&res, &labels).unwrap();
        assert_eq!(table.rows.iter().map(|r| r.label.clone()).collect::<Vec<_>>(), labels);
        assert_abs_diff_eq!(table.scree.iter().map(|r| r.share).sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(scores_table(&res, &labels[..3]).is_err());
    }

    #[test]
    fn centering_removes_mean_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ops: Vec<_> = (0..5).map(|_| random_pd(3, &mut rng)).collect();
        let opts = TangentPcaOptions {
            centered: true,
            ..Default::default()
        };
        let res = tangent_pca(&ops, Some(&ops[0]), &opts).unwrap();
        for l in 0..res.scores.ncols() {
            assert!(res.scores.column(l).sum().abs() < 1e-10);
        }
        // Centering removes one dimension of the K-point span.
        assert!(res.eigenvalues.iter().filter(|&&l| l > 0.0).count() <= 4);
    }
}
