//! Synthetic functional data: Gaussian process samples, covariance
//! alternatives, the p-value replication harness and a synthetic f0 corpus.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::curves::{CognitiveLoad, Curve, CurveMeta, FunctionalSample, Grid, Tone};
use crate::error::{Error, Result};
use crate::meanmodel::bspline::cubic_bspline_basis;
use crate::otinfer::{PermutationTest, Strata};
use crate::rng::{derive_seed, substream};
use crate::spd::{symmetrize, SpdOperator};

/// Relative diagonal jitter added before factorizing a kernel matrix.
pub const KERNEL_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    SquaredExp,
    Matern32,
    Brownian,
    /// A fixed covariance on the sampling grid; `variance` and `length_scale` are ignored.
    Custom(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeanFn {
    Zero,
    /// `sin(2πt)`.
    Sine,
    /// Cubic B-spline with these coefficients on `[0, 1]`.
    SplineCoeffs(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpSpec {
    pub kernel: Kernel,
    pub length_scale: f64,
    pub variance: f64,
    pub mean_fn: MeanFn,
    pub noise_sd: f64,
}

impl GpSpec {
    pub fn new(kernel: Kernel, length_scale: f64, variance: f64) -> Self {
        Self {
            kernel,
            length_scale,
            variance,
            mean_fn: MeanFn::Zero,
            noise_sd: 0.0,
        }
    }

    pub fn with_noise(mut self, noise_sd: f64) -> Self {
        self.noise_sd = noise_sd;
        self
    }

    pub fn with_mean(mut self, mean_fn: MeanFn) -> Self {
        self.mean_fn = mean_fn;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidSpec(format!("noise sd {} must be >= 0", self.noise_sd)));
        }
        if matches!(self.kernel, Kernel::Custom(_)) {
            return Ok(());
        }
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return Err(Error::InvalidSpec(format!("variance {} must be >= 0", self.variance)));
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) && self.kernel != Kernel::Brownian {
            return Err(Error::InvalidSpec(format!(
                "length scale {} must be positive",
                self.length_scale
            )));
        }
        Ok(())
    }

    /// Kernel matrix at `points` (without observation noise).
    pub fn kernel_matrix(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        self.validate()?;
        let q = points.len();
        let v = self.variance;
        let l = self.length_scale;
        let k = match &self.kernel {
            Kernel::SquaredExp => DMatrix::from_fn(q, q, |i, j| {
                let d = points[i] - points[j];
                v * (-d * d / (2.0 * l * l)).exp()
            }),
            Kernel::Matern32 => DMatrix::from_fn(q, q, |i, j| {
                let r = 3f64.sqrt() * (points[i] - points[j]).abs() / l;
                v * (1.0 + r) * (-r).exp()
            }),
            Kernel::Brownian => DMatrix::from_fn(q, q, |i, j| v * points[i].min(points[j])),
            Kernel::Custom(m) => {
                if m.nrows() != q || m.ncols() != q {
                    return Err(Error::DimMismatch {
                        expected: q,
                        found: m.nrows(),
                    });
                }
                SpdOperator::new(m.clone())
                    .map_err(|e| Error::InvalidKernel(e.to_string()))?
                    .into_matrix()
            }
        };
        Ok(k)
    }

    pub fn mean_values(&self, points: &[f64]) -> Result<Vec<f64>> {
        Ok(match &self.mean_fn {
            MeanFn::Zero => vec![0.0; points.len()],
            MeanFn::Sine => points.iter().map(|t| (2.0 * PI * t).sin()).collect(),
            MeanFn::SplineCoeffs(c) => {
                let b = cubic_bspline_basis(points, c.len())?;
                (b * DVector::from_column_slice(c)).iter().copied().collect()
            }
        })
    }
}

/// Draws `N(mean, cov) + N(0, noise² I)` vectors through a symmetric square root of `cov`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
    mean: Vec<f64>,
    noise_sd: f64,
}

impl GaussianSampler {
    pub fn new(cov: &DMatrix<f64>, mean: Vec<f64>, noise_sd: f64) -> Result<Self> {
        let q = cov.nrows();
        if cov.ncols() != q || mean.len() != q {
            return Err(Error::DimMismatch {
                expected: q,
                found: mean.len(),
            });
        }
        let scale = (0..q).fold(0.0_f64, |a, i| a.max(cov[(i, i)].abs()));
        let jittered = symmetrize(cov) + DMatrix::identity(q, q) * (KERNEL_JITTER * scale);
        let eig = SymmetricEigen::new(jittered);
        let lmax = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        if let Some(&bad) = eig.eigenvalues.iter().find(|&&v| v < -1e-10 * lmax) {
            return Err(Error::InvalidKernel(format!("eigenvalue {bad:e}")));
        }
        let mut factor = eig.eigenvectors.clone();
        for (mut col, &l) in factor.column_iter_mut().zip(eig.eigenvalues.iter()) {
            col *= l.max(0.0).sqrt();
        }
        Ok(Self { factor, mean, noise_sd })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let q = self.dim();
        let z = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &self.factor * z;
        x.iter()
            .zip(&self.mean)
            .map(|(v, m)| {
                let e = if self.noise_sd > 0.0 {
                    self.noise_sd * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                m + v + e
            })
            .collect()
    }
}

/// Placeholder design labels for synthetic curve `j`.
fn synthetic_meta(j: usize) -> CurveMeta {
    CurveMeta {
        speaker: format!("S{}", j % 12 + 1),
        tone_first: Tone::T1,
        tone_second: Tone::T1,
        repetition: (j / 12 % 4) as u32 + 1,
        cognitive_load: CognitiveLoad::Cl0,
    }
}

/// `n` draws from the process on `grid`, deterministic in `seed`.
pub fn sample_gp(spec: &GpSpec, grid: &Arc<Grid>, n: usize, seed: u64) -> Result<FunctionalSample> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let cov = spec.kernel_matrix(grid.points())?;
    let sampler = GaussianSampler::new(&cov, spec.mean_values(grid.points())?, spec.noise_sd)?;
    let mut rng = substream(seed, 0);
    let curves = (0..n)
        .map(|j| Curve {
            values: sampler.sample(&mut rng),
            meta: synthetic_meta(j),
        })
        .collect();
    FunctionalSample::new(Arc::clone(grid), curves)
}

/// `base + magnitude · d dᵀ`, projected back onto the PSD cone.
pub fn spiked_alternative(base: &SpdOperator, direction: &[f64], magnitude: f64) -> Result<SpdOperator> {
    if direction.len() != base.dim() {
        return Err(Error::DimMismatch {
            expected: base.dim(),
            found: direction.len(),
        });
    }
    let d = DVector::from_column_slice(direction);
    if (d.norm() - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "direction has norm {}, expected 1",
            d.norm()
        )));
    }
    SpdOperator::project(base.matrix() + (&d * d.transpose()) * magnitude)
}

/// Unit vector proportional to `sin(frequency · π · t)` on the grid.
pub fn sine_direction(grid: &Grid, frequency: f64) -> Result<Vec<f64>> {
    let raw: Vec<f64> = grid.points().iter().map(|t| (frequency * PI * t).sin()).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidInput("sine direction vanishes on the grid".into()));
    }
    Ok(raw.into_iter().map(|v| v / norm).collect())
}

/// A rank-one spike along `sin(frequency · π · t)` of size `relative_magnitude · λ_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spike {
    pub frequency: f64,
    pub relative_magnitude: f64,
}

/// Law of one group in a replication scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLaw {
    pub gp: GpSpec,
    pub n: usize,
    /// Multiplier of the kernel matrix.
    pub scale: f64,
    pub spike: Option<Spike>,
}

impl GroupLaw {
    pub fn new(gp: GpSpec, n: usize) -> Self {
        Self {
            gp,
            n,
            scale: 1.0,
            spike: None,
        }
    }

    /// The group's process with scale and spike folded into a custom kernel.
    pub fn resolved(&self, grid: &Grid) -> Result<GpSpec> {
        let mut cov = self.gp.kernel_matrix(grid.points())? * self.scale;
        if let Some(spike) = self.spike {
            let base = SpdOperator::project(cov)?;
            let dir = sine_direction(grid, spike.frequency)?;
            let magnitude = spike.relative_magnitude * base.max_eigenvalue();
            cov = spiked_alternative(&base, &dir, magnitude)?.into_matrix();
        }
        Ok(GpSpec {
            kernel: Kernel::Custom(cov),
            ..self.gp.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid_size: usize,
    pub groups: Vec<GroupLaw>,
    pub permutations: usize,
    pub seed: u64,
    pub strata: Strata,
}

/// Min, quartiles (R type 7), mean and max of a set of p-values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PValueSummary {
    pub min: f64,
    pub first_quartile: f64,
    pub median: f64,
    pub mean: f64,
    pub third_quartile: f64,
    pub max: f64,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl PValueSummary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            min: sorted[0],
            first_quartile: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            third_quartile: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessResult {
    pub p_values: Vec<f64>,
    pub statistics: Vec<f64>,
    pub summary: PValueSummary,
}

impl HarnessResult {
    pub fn rejection_rate(&self, alpha: f64) -> f64 {
        self.p_values.iter().filter(|&&p| p < alpha).count() as f64 / self.p_values.len() as f64
    }
}

/// Repeats draw-then-test `reps` times. Replication `r` uses substream `r`
/// of the scenario seed for both the draws and the permutations.
pub fn replication_harness(scenario: &Scenario, reps: usize) -> Result<HarnessResult> {
    if reps == 0 {
        return Err(Error::InvalidInput("at least one replication is required".into()));
    }
    let grid = Arc::new(Grid::uniform(scenario.grid_size)?);
    let laws = scenario
        .groups
        .iter()
        .map(|g| g.resolved(&grid))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(scenario.seed, r as u64);
            let samples = laws
                .iter()
                .zip(&scenario.groups)
                .enumerate()
                .map(|(g, (law, group))| sample_gp(law, &grid, group.n, derive_seed(rep_seed, g as u64 + 1)))
                .collect::<Result<Vec<_>>>()?;
            let test =
                PermutationTest::new(scenario.permutations, derive_seed(rep_seed, 0)).with_strata(scenario.strata);
            test.run(&samples).map(|a| (a.p_value, a.statistic))
        })
        .collect::<Result<Vec<_>>>()?;
    let (p_values, statistics): (Vec<f64>, Vec<f64>) = outcomes.into_iter().unzip();
    Ok(HarnessResult {
        summary: PValueSummary::from_values(&p_values)?,
        p_values,
        statistics,
    })
}

/// f0 offset in Hz of a tone over its syllable, `u ∈ [0, 1]`.
fn tone_contour(tone: Tone, u: f64) -> f64 {
    match tone {
        Tone::T1 => 30.0,
        Tone::T2 => -10.0 + 35.0 * u * u,
        Tone::T3 => -5.0 - 30.0 * (PI * u).sin(),
        Tone::T4 => 35.0 - 60.0 * u,
    }
}

/// Mean disyllabic contour at normalized time `s`, blending the two syllables.
pub fn disyllable_contour(first: Tone, second: Tone, s: f64) -> f64 {
    let w = 1.0 / (1.0 + (-(s - 0.5) / 0.04).exp());
    let u1 = (s / 0.5).min(1.0);
    let u2 = ((s - 0.5) / 0.5).max(0.0);
    (1.0 - w) * tone_contour(first, u1) + w * tone_contour(second, u2)
}

/// One token in long format: its labels and raw `(time, f0)` track.
#[derive(Debug, Clone, PartialEq)]
pub struct RawToken {
    pub meta: CurveMeta,
    pub times: Vec<f64>,
    pub f0: Vec<f64>,
}

/// Synthetic corpus of disyllables under two cognitive-load conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub speakers: usize,
    pub repetitions: u32,
    pub base_f0: f64,
    pub speaker_sd: f64,
    /// Mean f0 shift under load, Hz.
    pub load_shift: f64,
    /// Residual process over normalized token time, Hz.
    pub residual: GpSpec,
    /// Tone combinations whose CL6 residual covariance is scaled by `load_scale`.
    pub affected: Vec<(Tone, Tone)>,
    pub load_scale: f64,
    /// Frame period of the f0 track, seconds.
    pub frame: f64,
    /// Token durations are uniform on this interval, seconds.
    pub duration: (f64, f64),
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            speakers: 12,
            repetitions: 4,
            base_f0: 200.0,
            speaker_sd: 15.0,
            load_shift: 3.0,
            residual: GpSpec::new(Kernel::Matern32, 0.2, 25.0).with_noise(1.0),
            affected: Vec::new(),
            load_scale: 3.0,
            frame: 0.01,
            duration: (0.3, 0.5),
            seed: 0,
        }
    }
}

/// Every speaker × tone pair × repetition × load token, in that nesting order.
pub fn synthetic_corpus(spec: &CorpusSpec) -> Result<Vec<RawToken>> {
    if spec.speakers == 0 || spec.repetitions == 0 {
        return Err(Error::InvalidSpec("corpus needs speakers and repetitions".into()));
    }
    if !(spec.frame > 0.0 && spec.duration.0 > 3.0 * spec.frame && spec.duration.1 >= spec.duration.0) {
        return Err(Error::InvalidSpec("durations must span at least four frames".into()));
    }
    let mut rng = substream(spec.seed, 0);
    let speaker_offsets: Vec<f64> = (0..spec.speakers)
        .map(|_| spec.speaker_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut tokens = Vec::new();
    let mut stream = 1u64;
    for (s, offset) in speaker_offsets.iter().enumerate() {
        for first in Tone::ALL {
            for second in Tone::ALL {
                for rep in 1..=spec.repetitions {
                    for load in CognitiveLoad::ALL {
                        let mut rng = substream(spec.seed, stream);
                        stream += 1;
                        let duration = rng.random_range(spec.duration.0..=spec.duration.1);
                        let frames = (duration / spec.frame).floor() as usize + 1;
                        let start = rng.random_range(0.0..2.0);
                        let times: Vec<f64> = (0..frames).map(|i| start + i as f64 * spec.frame).collect();
                        let norm: Vec<f64> = (0..frames).map(|i| i as f64 / (frames - 1) as f64).collect();
                        let mut cov = spec.residual.kernel_matrix(&norm)?;
                        if load == CognitiveLoad::Cl6 && spec.affected.contains(&(first, second)) {
                            cov *= spec.load_scale;
                        }
                        let shift = if load == CognitiveLoad::Cl6 {
                            spec.load_shift
                        } else {
                            0.0
                        };
                        let mean = norm
                            .iter()
                            .map(|&u| spec.base_f0 + offset + shift + disyllable_contour(first, second, u))
                            .collect();
                        let f0 = GaussianSampler::new(&cov, mean, spec.residual.noise_sd)?.sample(&mut rng);
                        tokens.push(RawToken {
                            meta: CurveMeta {
                                speaker: format!("S{}", s + 1),
                                tone_first: first,
                                tone_second: second,
                                repetition: rep,
                                cognitive_load: load,
                            },
                            times,
                            f0,
                        });
                    }
                }
            }
        }
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::sample_covariance;
    use crate::spd::bw_distance_sq;

    #[test]
    fn degenerate_process_gives_zero_curves() {
        let grid = Arc::new(Grid::uniform(8).unwrap());
        let spec = GpSpec::new(Kernel::SquaredExp, 0.3, 0.0);
        let s = sample_gp(&spec, &grid, 4, 1).unwrap();
        assert!(s.curves().iter().all(|c| c.values.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn sample_covariance_matches_kernel() {
        let grid = Arc::new(Grid::uniform(10).unwrap());
        let spec = GpSpec::new(Kernel::SquaredExp, 0.3, 2.0);
        let s = sample_gp(&spec, &grid, 5000, 3).unwrap();
        let k = spec.kernel_matrix(grid.points()).unwrap();
        let c = sample_covariance(&s).unwrap();
        // Wishart entry variance: (k_ii k_jj + k_ij²) / n.
        for i in 0..10 {
            for j in 0..10 {
                let se = ((k[(i, i)] * k[(j, j)] + k[(i, j)].powi(2)) / 5000.0).sqrt();
                let err = (c.matrix()[(i, j)] - k[(i, j)]).abs();
                assert!(err <= 5.0 * se, "entry ({i}, {j}): error {err}, se {se}");
            }
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let grid = Arc::new(Grid::uniform(6).unwrap());
        let spec = GpSpec::new(Kernel::Matern32, 0.2, 1.0)
            .with_noise(0.1)
            .with_mean(MeanFn::Sine);
        assert_eq!(
            sample_gp(&spec, &grid, 5, 9).unwrap(),
            sample_gp(&spec, &grid, 5, 9).unwrap()
        );
        assert_ne!(
            sample_gp(&spec, &grid, 5, 9).unwrap(),
            sample_gp(&spec, &grid, 5, 10).unwrap()
        );
    }

    #[test]
    fn kernels_and_means() {
        let pts = [0.0, 0.5, 1.0];
        let b = GpSpec::new(Kernel::Brownian, 1.0, 2.0).kernel_matrix(&pts).unwrap();
        assert_eq!(b[(1, 2)], 1.0);
        assert_eq!(b[(0, 0)], 0.0);
        let m = GpSpec::new(Kernel::Matern32, 0.5, 1.0).kernel_matrix(&pts).unwrap();
        assert_eq!(m[(1, 1)], 1.0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let custom = GpSpec::new(Kernel::Custom(bad), 1.0, 1.0);
        assert!(matches!(
            custom.kernel_matrix(&[0.0, 1.0]),
            Err(Error::InvalidKernel(_))
        ));
        let spline = GpSpec::new(Kernel::Brownian, 1.0, 0.0).with_mean(MeanFn::SplineCoeffs(vec![2.0; 6]));
        assert!(spline
            .mean_values(&pts)
            .unwrap()
            .iter()
            .all(|v| (v - 2.0).abs() < 1e-12));
        assert!(GpSpec::new(Kernel::SquaredExp, 0.0, 1.0).kernel_matrix(&pts).is_err());
    }

    #[test]
    fn spike_examples() {
        let base = SpdOperator::identity(3);
        let e1 = [1.0, 0.0, 0.0];
        assert_eq!(spiked_alternative(&base, &e1, 0.0).unwrap().matrix(), base.matrix());
        let spiked = spiked_alternative(&base, &e1, 3.0).unwrap();
        assert!((spiked.matrix() - DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 1.0]))).amax() < 1e-14);
        assert!(spiked_alternative(&base, &[1.0, 1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn spike_distance_grows_with_magnitude() {
        let grid = Grid::uniform(12).unwrap();
        let k = GpSpec::new(Kernel::Matern32, 0.2, 1.0)
            .kernel_matrix(grid.points())
            .unwrap();
        let base = SpdOperator::project(k).unwrap();
        let dir = sine_direction(&grid, 3.0).unwrap();
        let mut prev = 0.0;
        for m in [0.1, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let d = bw_distance_sq(&base, &spiked_alternative(&base, &dir, m).unwrap()).unwrap();
            assert!(d > prev);
            prev = d;
        }
    }

    #[test]
    fn summary_quartiles() {
        let s = PValueSummary::from_values(&[0.3]).unwrap();
        assert_eq!(
            (s.min, s.first_quartile, s.median, s.mean, s.third_quartile, s.max),
            (0.3, 0.3, 0.3, 0.3, 0.3, 0.3)
        );
        // R: summary(c(1, 2, 3, 4)) -> 1, 1.75, 2.5, 2.5, 3.25, 4
        let s = PValueSummary::from_values(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.first_quartile, s.median, s.third_quartile), (1.75, 2.5, 3.25));
    }

    #[test]
    fn harness_single_rep_and_determinism() {
        let gp = GpSpec::new(Kernel::Matern32, 0.2, 1.0).with_noise(0.1);
        let scenario = Scenario {
            grid_size: 8,
            groups: vec![GroupLaw::new(gp.clone(), 10), GroupLaw::new(gp, 10)],
            permutations: 99,
            seed: 5,
            strata: Strata::None,
        };
        let one = replication_harness(&scenario, 1).unwrap();
        let p = one.p_values[0];
        assert_eq!(one.summary.min, p);
        assert_eq!(one.summary.median, p);
        assert_eq!(one.summary.max, p);
        let a = replication_harness(&scenario, 3).unwrap();
        let b = replication_harness(&scenario, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corpus_layout() {
        let spec = CorpusSpec {
            speakers: 2,
            repetitions: 1,
            ..Default::default()
        };
        let tokens = synthetic_corpus(&spec).unwrap();
        assert_eq!(tokens.len(), 2 * 16 * 2);
        for t in &tokens {
            assert_eq!(t.times.len(), t.f0.len());
            assert!(t.times.len() >= 31);
            assert!(t.times.windows(2).all(|w| w[1] > w[0]));
        }
        assert_eq!(synthetic_corpus(&spec).unwrap(), tokens);
    }
}
