//! First-order analysis: an additive mean model for grouped curves.
//!
//! Each observation `y_{i}(t)` of curve `i` in group level `g` and speaker `s`
//! is modelled as
//!
//! ```text
//! y_i(t) = α + α_g + b_s + f_g(t) + ε_i(t)
//! ```
//!
//! with parametric group intercepts `α_g` (the first level absorbed into
//! `α`), ridge-penalized speaker intercepts `b_s`, one centered cubic P-spline
//! smooth `f_g` per level, and AR(1) errors within each curve. Smoothing
//! parameters are picked by GCV on a log-spaced grid.

pub mod bspline;
mod design;
mod fit;

use std::fmt;

pub use design::{build_design, Design, SmoothBlock};
pub use fit::{extract_residuals, fit_mean_model, parametric_wald_table, MeanModelFit, ParametricTerm, SmoothTerm};

use crate::curves::{CognitiveLoad, CurveMeta, Tone};
use crate::error::{Error, Result};

/// A cell of the cognitive load × tone factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupLevel {
    pub load: CognitiveLoad,
    pub tone: Tone,
}

impl fmt::Display for GroupLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.load, self.tone)
    }
}

/// Which syllable's tone defines the group factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TonePosition {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSelect {
    Gcv,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ar1 {
    Fixed(f64),
    /// Lag-1 autocorrelation of working residuals from an independent-error fit.
    Auto,
}

/// Whether all group smooths share one smoothing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaSharing {
    Shared,
    PerSmooth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanModelSpec {
    pub basis_size: usize,
    pub penalty_order: usize,
    pub groups: Vec<GroupLevel>,
    pub group_tone: TonePosition,
    pub lambda_select: LambdaSelect,
    pub lambda_sharing: LambdaSharing,
    pub ar1: Ar1,
}

impl MeanModelSpec {
    /// All eight load × tone levels, `k = 10`, second-order penalty, GCV, automatic AR(1).
    pub fn for_family(group_tone: TonePosition) -> Self {
        let groups = CognitiveLoad::ALL
            .iter()
            .flat_map(|&load| Tone::ALL.iter().map(move |&tone| GroupLevel { load, tone }))
            .collect();
        Self {
            basis_size: 10,
            penalty_order: 2,
            groups,
            group_tone,
            lambda_select: LambdaSelect::Gcv,
            lambda_sharing: LambdaSharing::Shared,
            ar1: Ar1::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.basis_size < 4 {
            return Err(Error::InvalidSpec(format!(
                "basis size {} must be at least 4",
                self.basis_size
            )));
        }
        if !(1..=2).contains(&self.penalty_order) {
            return Err(Error::InvalidSpec(format!(
                "penalty order {} must be 1 or 2",
                self.penalty_order
            )));
        }
        if self.groups.is_empty() {
            return Err(Error::InvalidSpec("no group levels declared".into()));
        }
        if let LambdaSelect::Fixed(l) = self.lambda_select {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidSpec(format!("fixed lambda {l} must be positive")));
            }
        }
        if let Ar1::Fixed(rho) = self.ar1 {
            if !(rho > -1.0 && rho < 1.0) {
                return Err(Error::InvalidSpec(format!("AR(1) coefficient {rho} outside (-1, 1)")));
            }
        }
        Ok(())
    }

    pub fn level_of(&self, meta: &CurveMeta) -> GroupLevel {
        let tone = match self.group_tone {
            TonePosition::First => meta.tone_first,
            TonePosition::Second => meta.tone_second,
        };
        GroupLevel {
            load: meta.cognitive_load,
            tone,
        }
    }
}
