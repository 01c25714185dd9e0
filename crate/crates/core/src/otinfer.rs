//! Fréchet means of covariance operators and the transport-map ANOVA test.
//!
//! The Fréchet mean under the Wasserstein–Procrustes distance is the fixed
//! point of `Σ ↦ T̄ Σ T̄`, where `T̄ = Σ_j w_j t_j` averages the optimal maps
//! from `Σ` to each operator. At the mean `T̄` is the identity, which is also
//! the stopping rule. The test statistic for groups with covariances `Σ_i`
//! and Fréchet mean `Σ̄` is `T = Σ_i ‖t_i − I‖²_HS`, `t_i` the map `Σ̄ → Σ_i`,
//! calibrated by permuting curves between groups.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::curves::{covariance_of_rows, FunctionalSample};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::spd::{hs_norm_sq, transport_map_with_roots, SpdOperator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrechetOptions {
    /// Bound on `‖T̄ − I‖_HS` at termination.
    pub tol: f64,
    pub max_iter: usize,
    /// Eigenvalue floor for inverse roots; zero selects the pseudo-inverse.
    pub floor: f64,
}

impl Default for FrechetOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            floor: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrechetResult {
    pub mean: SpdOperator,
    pub iterations: usize,
    /// `‖T̄ − I‖_HS` at the returned mean.
    pub final_step_norm: f64,
    pub converged: bool,
}

/// Roots of a base point and the projector onto the range it inverts.
struct BasePoint {
    sqrt: SpdOperator,
    invsqrt: SpdOperator,
    projector: DMatrix<f64>,
}

impl BasePoint {
    fn new(base: &SpdOperator, floor: f64) -> Result<Self> {
        Ok(Self {
            sqrt: base.sqrt(),
            invsqrt: base.invsqrt(floor)?,
            projector: base.range_projector(floor)?,
        })
    }

    fn map_to(&self, target: &SpdOperator) -> DMatrix<f64> {
        transport_map_with_roots(&self.sqrt, &self.invsqrt, target).into_matrix()
    }
}

fn check_same_dim(ops: &[SpdOperator]) -> Result<usize> {
    let first = ops.first().ok_or(Error::EmptySample)?.dim();
    for op in ops {
        if op.dim() != first {
            return Err(Error::DimMismatch {
                expected: first,
                found: op.dim(),
            });
        }
    }
    Ok(first)
}

fn normalized_weights(n: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let Some(w) = weights else {
        return Ok(vec![1.0 / n as f64; n]);
    };
    if w.len() != n {
        return Err(Error::DimMismatch {
            expected: n,
            found: w.len(),
        });
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("weights sum to zero".into()));
    }
    Ok(w.iter().map(|v| v / total).collect())
}

/// Weighted Fréchet mean by fixed-point iteration from the Euclidean average.
///
/// Weights default to uniform and are renormalized to sum to one.
/// Non-convergence is reported through [`FrechetResult::converged`].
pub fn frechet_mean(ops: &[SpdOperator], weights: Option<&[f64]>, opts: &FrechetOptions) -> Result<FrechetResult> {
    let q = check_same_dim(ops)?;
    let w = normalized_weights(ops.len(), weights)?;

    let mut euclid = DMatrix::zeros(q, q);
    for (op, &wj) in ops.iter().zip(&w) {
        euclid += op.matrix() * wj;
    }
    let mut current = SpdOperator::project(euclid)?.with_eig_floor(opts.floor)?;
    let mut step = f64::INFINITY;

    for iteration in 1..=opts.max_iter {
        let base = BasePoint::new(&current, opts.floor)?;
        let mut average = DMatrix::zeros(q, q);
        for (op, &wj) in ops.iter().zip(&w) {
            if wj > 0.0 {
                average += base.map_to(op) * wj;
            }
        }
        step = hs_norm_sq(&(&average - &base.projector)).sqrt();
        if step <= opts.tol {
            return Ok(FrechetResult {
                mean: current,
                iterations: iteration,
                final_step_norm: step,
                converged: true,
            });
        }
        let next = &average * current.matrix() * &average;
        current = SpdOperator::project(next)?.with_eig_floor(opts.floor)?;
    }

    log::debug!(
        "Fréchet iteration stopped after {} steps at step norm {step:e}",
        opts.max_iter
    );
    Ok(FrechetResult {
        mean: current,
        iterations: opts.max_iter,
        final_step_norm: step,
        converged: false,
    })
}

/// `T = Σ_i ‖t_i − I‖²_HS` with `t_i` the map from `mean` to `ops[i]`.
///
/// When `mean` is singular the identity is taken on its inverted range.
pub fn anova_statistic(ops: &[SpdOperator], mean: &SpdOperator) -> Result<f64> {
    let q = check_same_dim(ops)?;
    if mean.dim() != q {
        return Err(Error::DimMismatch {
            expected: q,
            found: mean.dim(),
        });
    }
    let base = BasePoint::new(mean, mean.eig_floor())?;
    Ok(ops
        .iter()
        .map(|op| hs_norm_sq(&(base.map_to(op) - &base.projector)))
        .sum())
}

/// How curve labels are exchanged under the null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strata {
    /// Labels permuted over the pooled curves.
    #[default]
    None,
    /// Labels permuted only among curves of the same speaker.
    Speaker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaResult {
    pub statistic: f64,
    pub permutation_stats: Vec<f64>,
    /// `(1 + #{T_b ≥ T}) / (1 + B)`.
    pub p_value: f64,
    pub group_sizes: Vec<usize>,
    pub seed: u64,
}

impl AnovaResult {
    pub fn permutations(&self) -> usize {
        self.permutation_stats.len()
    }
}

/// Configuration of the permutation test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationTest {
    pub permutations: usize,
    pub seed: u64,
    pub strata: Strata,
    pub frechet: FrechetOptions,
}

impl PermutationTest {
    pub fn new(permutations: usize, seed: u64) -> Self {
        Self {
            permutations,
            seed,
            strata: Strata::None,
            frechet: FrechetOptions::default(),
        }
    }

    pub fn with_strata(mut self, strata: Strata) -> Self {
        self.strata = strata;
        self
    }

    /// The statistic and whether the Fréchet iteration converged.
    fn statistic(&self, pooled: &DMatrix<f64>, labels: &[usize], n_groups: usize) -> Result<(f64, bool)> {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
        for (i, &g) in labels.iter().enumerate() {
            members[g].push(i);
        }
        let covs = members
            .iter()
            .map(|rows| covariance_of_rows(&pooled.select_rows(rows))?.with_eig_floor(self.frechet.floor))
            .collect::<Result<Vec<_>>>()?;
        let mean = frechet_mean(&covs, None, &self.frechet)?;
        Ok((anova_statistic(&covs, &mean.mean)?, mean.converged))
    }

    /// Runs the test. Permutation `b` draws from its own counter-addressed
    /// stream of `seed`, so results do not depend on the thread count.
    pub fn run(&self, groups: &[FunctionalSample]) -> Result<AnovaResult> {
        if groups.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "permutation test needs at least 2 groups, found {}",
                groups.len()
            )));
        }
        let grid = groups[0].grid();
        for g in groups {
            if g.grid().len() != grid.len() {
                return Err(Error::DimMismatch {
                    expected: grid.len(),
                    found: g.grid().len(),
                });
            }
            if g.grid() != grid {
                return Err(Error::InvalidInput("groups are observed on different grids".into()));
            }
            if g.len() < 2 {
                return Err(Error::TooFewCurves {
                    required: 2,
                    found: g.len(),
                });
            }
        }

        let group_sizes: Vec<usize> = groups.iter().map(FunctionalSample::len).collect();
        let total: usize = group_sizes.iter().sum();
        let q = grid.len();
        let mut pooled = DMatrix::zeros(total, q);
        let mut labels = Vec::with_capacity(total);
        let mut speakers = Vec::with_capacity(total);
        for (g, sample) in groups.iter().enumerate() {
            for c in sample.curves() {
                pooled.row_mut(labels.len()).copy_from_slice(&c.values);
                labels.push(g);
                speakers.push(c.meta.speaker.as_str());
            }
        }

        let strata: Vec<Vec<usize>> = match self.strata {
            Strata::None => vec![(0..total).collect()],
            Strata::Speaker => {
                let mut by_speaker: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
                for (i, s) in speakers.iter().enumerate() {
                    by_speaker.entry(s).or_default().push(i);
                }
                by_speaker.into_values().collect()
            }
        };

        let (observed, converged) = self.statistic(&pooled, &labels, groups.len())?;
        if !converged {
            log::warn!(
                "Fréchet mean of the observed groups did not reach tolerance {:e}",
                self.frechet.tol
            );
        }
        let permutation_stats = (0..self.permutations)
            .into_par_iter()
            .map(|b| {
                let mut rng = substream(self.seed, b as u64 + 1);
                let mut permuted = labels.clone();
                for stratum in &strata {
                    let mut drawn: Vec<usize> = stratum.iter().map(|&i| labels[i]).collect();
                    drawn.shuffle(&mut rng);
                    for (&i, g) in stratum.iter().zip(drawn) {
                        permuted[i] = g;
                    }
                }
                self.statistic(&pooled, &permuted, groups.len())
            })
            .collect::<Result<Vec<(f64, bool)>>>()?;
        let stalled = permutation_stats.iter().filter(|(_, c)| !c).count();
        if stalled > 0 {
            log::debug!(
                "{stalled} of {} permuted Fréchet means did not converge",
                self.permutations
            );
        }
        let permutation_stats: Vec<f64> = permutation_stats.into_iter().map(|(t, _)| t).collect();

        let exceed = permutation_stats.iter().filter(|&&t| t >= observed).count();
        Ok(AnovaResult {
            statistic: observed,
            p_value: (1 + exceed) as f64 / (1 + self.permutations) as f64,
            permutation_stats,
            group_sizes,
            seed: self.seed,
        })
    }
}

/// Permutation test with `permutations` label shuffles and default options.
pub fn permutation_test(groups: &[FunctionalSample], permutations: usize, seed: u64) -> Result<AnovaResult> {
    PermutationTest::new(permutations, seed).run(groups)
}
