use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::bspline::{cubic_bspline_basis, difference_penalty};
use super::{GroupLevel, MeanModelSpec};
use crate::curves::FunctionalSample;
use crate::error::{Error, Result};

/// A factor-by smooth of time: the spline basis on rows of one group level,
/// zero elsewhere.
#[derive(Debug, Clone)]
pub struct SmoothBlock {
    pub level: GroupLevel,
    pub basis: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
}

impl SmoothBlock {
    pub fn name(&self) -> String {
        format!("s(time):{}", self.level)
    }
}

/// Column blocks of the stacked regression, one row per (curve, grid point),
/// curve-major.
#[derive(Debug, Clone)]
pub struct Design {
    /// Global intercept followed by indicators of levels 2..G.
    pub parametric: DMatrix<f64>,
    pub parametric_names: Vec<String>,
    /// One indicator column per speaker, ridge-penalized.
    pub speaker: DMatrix<f64>,
    pub speaker_names: Vec<String>,
    pub speaker_penalty: DMatrix<f64>,
    pub smooths: Vec<SmoothBlock>,
    pub response: DVector<f64>,
    /// Basis of every smooth evaluated once on the grid (`q × k`).
    pub grid_basis: DMatrix<f64>,
    pub curve_len: usize,
    /// Group level index of each curve.
    pub curve_levels: Vec<usize>,
}

impl Design {
    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_curves(&self) -> usize {
        self.curve_levels.len()
    }
}

/// Builds the parametric, speaker and smooth blocks plus their penalties.
pub fn build_design(sample: &FunctionalSample, spec: &MeanModelSpec) -> Result<Design> {
    spec.validate()?;
    let q = sample.grid().len();
    let n = sample.len();
    let rows = n * q;

    let curve_levels = sample
        .curves()
        .iter()
        .map(|c| {
            let level = spec.level_of(&c.meta);
            spec.groups
                .iter()
                .position(|g| *g == level)
                .ok_or_else(|| Error::UnknownLevel(level.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    let n_levels = spec.groups.len();
    let mut parametric = DMatrix::zeros(rows, n_levels);
    let mut parametric_names = vec!["(Intercept)".to_string()];
    parametric_names.extend(spec.groups.iter().skip(1).map(|g| g.to_string()));

    let mut speakers: BTreeMap<&str, usize> = BTreeMap::new();
    for c in sample.curves() {
        let next = speakers.len();
        speakers.entry(c.meta.speaker.as_str()).or_insert(next);
    }
    // Column order follows sorted speaker ids, independent of curve order.
    let speaker_names: Vec<String> = speakers.keys().map(|s| s.to_string()).collect();
    let speaker_col: BTreeMap<&str, usize> = speakers.keys().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut speaker = DMatrix::zeros(rows, speaker_names.len());

    let grid_basis = cubic_bspline_basis(sample.grid().points(), spec.basis_size)?;
    let k = spec.basis_size;
    let mut smooth_bases = vec![DMatrix::zeros(rows, k); n_levels];
    let mut response = DVector::zeros(rows);

    for (i, (curve, &level)) in sample.curves().iter().zip(&curve_levels).enumerate() {
        let s = speaker_col[curve.meta.speaker.as_str()];
        for t in 0..q {
            let r = i * q + t;
            parametric[(r, 0)] = 1.0;
            if level > 0 {
                parametric[(r, level)] = 1.0;
            }
            speaker[(r, s)] = 1.0;
            smooth_bases[level].row_mut(r).copy_from(&grid_basis.row(t));
            response[r] = curve.values[t];
        }
    }

    let penalty = difference_penalty(k, spec.penalty_order);
    let smooths = spec
        .groups
        .iter()
        .zip(smooth_bases)
        .map(|(&level, basis)| SmoothBlock {
            level,
            basis,
            penalty: penalty.clone(),
        })
        .collect();

    Ok(Design {
        parametric,
        parametric_names,
        speaker_penalty: DMatrix::identity(speaker_names.len(), speaker_names.len()),
        speaker,
        speaker_names,
        smooths,
        response,
        grid_basis,
        curve_len: q,
        curve_levels,
    })
}
