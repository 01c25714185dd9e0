//! Functional observations on a shared grid of normalized times.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::spd::SpdOperator;

/// Default number of grid points per curve.
pub const DEFAULT_GRID_SIZE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tone {
    T1,
    T2,
    T3,
    T4,
}

impl Tone {
    pub const ALL: [Tone; 4] = [Tone::T1, Tone::T2, Tone::T3, Tone::T4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<Tone> {
        Tone::ALL.get(usize::from(n).wrapping_sub(1)).copied()
    }
}

impl fmt::Display for Tone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.number())
    }
}

impl FromStr for Tone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let digits = t.strip_prefix('T').or_else(|| t.strip_prefix('t')).unwrap_or(t);
        digits
            .parse::<u8>()
            .ok()
            .and_then(Tone::from_number)
            .ok_or_else(|| Error::InvalidInput(format!("unknown tone '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CognitiveLoad {
    Cl0,
    Cl6,
}

impl CognitiveLoad {
    pub const ALL: [CognitiveLoad; 2] = [CognitiveLoad::Cl0, CognitiveLoad::Cl6];
}

impl fmt::Display for CognitiveLoad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CognitiveLoad::Cl0 => "CL0",
            CognitiveLoad::Cl6 => "CL6",
        })
    }
}

impl FromStr for CognitiveLoad {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CL0" | "0" => Ok(CognitiveLoad::Cl0),
            "CL6" | "6" => Ok(CognitiveLoad::Cl6),
            _ => Err(Error::InvalidInput(format!("unknown cognitive load '{s}'"))),
        }
    }
}

/// Design labels of one token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CurveMeta {
    pub speaker: String,
    pub tone_first: Tone,
    pub tone_second: Tone,
    pub repetition: u32,
    pub cognitive_load: CognitiveLoad,
}

impl CurveMeta {
    pub fn new(
        speaker: impl Into<String>,
        tone_first: Tone,
        tone_second: Tone,
        repetition: u32,
        cognitive_load: CognitiveLoad,
    ) -> Result<Self> {
        let speaker = speaker.into();
        if speaker.trim().is_empty() {
            return Err(Error::InvalidInput("empty speaker identifier".into()));
        }
        if repetition == 0 {
            return Err(Error::InvalidInput("repetition index starts at 1".into()));
        }
        Ok(Self {
            speaker,
            tone_first,
            tone_second,
            repetition,
            cognitive_load,
        })
    }

    /// `TiTj` label of the disyllable.
    pub fn combination(&self) -> String {
        format!("{}{}", self.tone_first, self.tone_second)
    }
}

/// Strictly increasing normalized times in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(Vec<f64>);

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("grid is empty".into()));
        }
        if points.iter().any(|t| !t.is_finite() || !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidInput("grid points must lie in [0, 1]".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("grid must be strictly increasing".into()));
        }
        Ok(Self(points))
    }

    /// `q` equally spaced points including both endpoints.
    pub fn uniform(q: usize) -> Result<Self> {
        match q {
            0 => Err(Error::InvalidInput("grid size must be positive".into())),
            1 => Ok(Self(vec![0.0])),
            _ => Ok(Self((0..q).map(|i| i as f64 / (q - 1) as f64).collect())),
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub values: Vec<f64>,
    pub meta: CurveMeta,
}

/// Curves sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    grid: Arc<Grid>,
    curves: Vec<Curve>,
}

impl FunctionalSample {
    pub fn new(grid: Arc<Grid>, curves: Vec<Curve>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::EmptySample);
        }
        for c in &curves {
            if c.values.len() != grid.len() {
                return Err(Error::DimMismatch {
                    expected: grid.len(),
                    found: c.values.len(),
                });
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite value in curve of speaker {}",
                    c.meta.speaker
                )));
            }
        }
        Ok(Self { grid, curves })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn into_curves(self) -> Vec<Curve> {
        self.curves
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    /// Curves whose metadata satisfies `keep`; `None` when nothing matches.
    pub fn filter(&self, mut keep: impl FnMut(&CurveMeta) -> bool) -> Option<Self> {
        let curves: Vec<Curve> = self.curves.iter().filter(|c| keep(&c.meta)).cloned().collect();
        (!curves.is_empty()).then(|| Self {
            grid: Arc::clone(&self.grid),
            curves,
        })
    }

    /// Values as an `n × q` matrix, one curve per row.
    pub fn values_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.grid.len(), |i, j| self.curves[i].values[j])
    }
}

/// Natural cubic spline through `(x, y)`, `x` strictly increasing.
struct NaturalSpline<'a> {
    x: &'a [f64],
    y: &'a [f64],
    second: Vec<f64>,
}

impl<'a> NaturalSpline<'a> {
    fn fit(x: &'a [f64], y: &'a [f64]) -> Self {
        let n = x.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second derivatives.
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for i in 0..m {
                let h0 = x[i + 1] - x[i];
                let h1 = x[i + 2] - x[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..m {
                let lower = x[i + 1] - x[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            let mut sol = vec![0.0; m];
            sol[m - 1] = rhs[m - 1] / diag[m - 1];
            for i in (0..m - 1).rev() {
                sol[i] = (rhs[i] - upper[i] * sol[i + 1]) / diag[i];
            }
            second[1..n - 1].copy_from_slice(&sol);
        }
        Self { x, y, second }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let k = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.x[k + 1] - self.x[k];
        let a = (self.x[k + 1] - t) / h;
        let b = (t - self.x[k]) / h;
        a * self.y[k]
            + b * self.y[k + 1]
            + ((a * a * a - a) * self.second[k] + (b * b * b - b) * self.second[k + 1]) * h * h / 6.0
    }
}

/// Rescales `times` linearly onto `[0, 1]`.
pub fn normalize_times(times: &[f64]) -> Result<Vec<f64>> {
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "sample times must be finite and strictly increasing".into(),
        ));
    }
    let (lo, hi) = match (times.first(), times.last()) {
        (Some(&lo), Some(&hi)) if hi > lo => (lo, hi),
        _ => return Err(Error::InvalidInput("sample times span an empty interval".into())),
    };
    Ok(times.iter().map(|t| (t - lo) / (hi - lo)).collect())
}

/// Interpolates raw samples with a natural cubic spline and evaluates it on
/// `target`. Raw times are first rescaled to `[0, 1]`.
pub fn resample_to_grid(raw_times: &[f64], raw_values: &[f64], target: &Grid) -> Result<Vec<f64>> {
    if raw_times.len() != raw_values.len() {
        return Err(Error::DimMismatch {
            expected: raw_times.len(),
            found: raw_values.len(),
        });
    }
    if raw_times.len() < 4 {
        return Err(Error::TooFewSamples {
            required: 4,
            found: raw_times.len(),
        });
    }
    if raw_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample value".into()));
    }
    let times = normalize_times(raw_times)?;
    let spline = NaturalSpline::fit(&times, raw_values);
    Ok(target.points().iter().map(|&t| spline.eval(t)).collect())
}

/// Pointwise mean curve.
pub fn sample_mean(s: &FunctionalSample) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = s.len() as f64;
    let mut mean = vec![0.0; s.grid().len()];
    for c in s.curves() {
        for (m, v) in mean.iter_mut().zip(&c.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Covariance with divisor `n − 1` of the rows of an `n × q` matrix.
pub fn covariance_of_rows(values: &DMatrix<f64>) -> Result<SpdOperator> {
    let n = values.nrows();
    if n < 2 {
        return Err(Error::TooFewCurves { required: 2, found: n });
    }
    let mean = values.row_mean();
    let mut centered = values.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    SpdOperator::new(cov)
}

/// Empirical covariance operator on the sample grid.
pub fn sample_covariance(s: &FunctionalSample) -> Result<SpdOperator> {
    covariance_of_rows(&s.values_matrix())
}
