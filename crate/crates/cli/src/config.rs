//! Pipeline configuration.
//!
//! Every setting has an INI address `section.key`. Command-line flags and
//! config files go through the same [`PipelineConfig::set`], with the file
//! applied last so that it overrides flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use covtransport::curves::DEFAULT_GRID_SIZE;
use covtransport::meanmodel::{Ar1, LambdaSelect, LambdaSharing, MeanModelSpec, TonePosition};
use covtransport::otinfer::Strata;
use ini::Ini;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::family::{format_families, parse_families, TonalFamily};

pub const MIN_GRID_SIZE: usize = 8;
pub const MIN_PERMUTATIONS: usize = 99;

/// Section written into run manifests and skipped when they are read back as config.
pub const RUN_SECTION: &str = "run";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueScale {
    Hz,
    LogHz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMode {
    /// One test per combination on all curves.
    Single,
    /// Also repeat the test on random subsamples and summarize the p-values.
    Harness,
}

/// Which covariance operators enter the tangent PCA of a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    /// One operator per tone combination and load.
    Cell,
    /// One operator per speaker, tone combination and load.
    SpeakerCell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub families: Vec<TonalFamily>,
    pub grid_size: usize,
    pub value_scale: ValueScale,
    /// Width, in normalized time, of a moving average applied before resampling.
    pub smoothing_span: Option<f64>,
    pub basis_size: usize,
    pub penalty_order: usize,
    pub lambda: LambdaSelect,
    pub lambda_sharing: LambdaSharing,
    pub ar1: Ar1,
    pub permutations: usize,
    pub seed: u64,
    pub strata: Strata,
    pub mode: TestMode,
    pub harness_reps: usize,
    pub harness_n: usize,
    pub grouping: Grouping,
    pub components: usize,
    pub centered: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output_dir: PathBuf::from("out"),
            families: TonalFamily::all(),
            grid_size: DEFAULT_GRID_SIZE,
            value_scale: ValueScale::Hz,
            smoothing_span: None,
            basis_size: 10,
            penalty_order: 2,
            lambda: LambdaSelect::Gcv,
            lambda_sharing: LambdaSharing::Shared,
            ar1: Ar1::Auto,
            permutations: 500,
            seed: 0,
            strata: Strata::None,
            mode: TestMode::Single,
            harness_reps: 100,
            harness_n: 30,
            grouping: Grouping::Cell,
            components: 10,
            centered: false,
        }
    }
}

pub(crate) fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse '{value}'")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(CliError::Config(format!("{key}: expected a boolean, found '{value}'"))),
    }
}

pub(crate) fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T> {
    let v = value.trim().to_ascii_lowercase().replace('-', "_");
    options
        .iter()
        .find(|(name, _)| *name == v)
        .map(|&(_, t)| t)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            CliError::Config(format!("{key}: expected one of {}, found '{value}'", names.join("|")))
        })
}

const VALUE_SCALES: [(&str, ValueScale); 2] = [("hz", ValueScale::Hz), ("log_hz", ValueScale::LogHz)];
const SHARING: [(&str, LambdaSharing); 2] = [
    ("shared", LambdaSharing::Shared),
    ("per_smooth", LambdaSharing::PerSmooth),
];
pub(crate) const STRATA: [(&str, Strata); 2] = [("none", Strata::None), ("speaker", Strata::Speaker)];
const MODES: [(&str, TestMode); 2] = [("single", TestMode::Single), ("harness", TestMode::Harness)];
const GROUPINGS: [(&str, Grouping); 2] = [("cell", Grouping::Cell), ("speaker_cell", Grouping::SpeakerCell)];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], value: &T) -> &'static str {
    options.iter().find(|(_, t)| t == value).map(|(n, _)| *n).unwrap_or("?")
}

/// Shortest text that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

impl PipelineConfig {
    /// Applies one `section.key = value` setting.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let addr = format!("{section}.{key}");
        let a = addr.as_str();
        match a {
            "input.path" => self.input = PathBuf::from(value.trim()),
            "input.grid_size" => self.grid_size = parse_num(a, value)?,
            "input.value_scale" => self.value_scale = choice(a, value, &VALUE_SCALES)?,
            "input.smoothing_span" => {
                self.smoothing_span = if value.trim().eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(parse_num(a, value)?)
                }
            }
            "output.dir" => self.output_dir = PathBuf::from(value.trim()),
            "pipeline.families" => self.families = parse_families(value)?,
            "model.basis_size" => self.basis_size = parse_num(a, value)?,
            "model.penalty_order" => self.penalty_order = parse_num(a, value)?,
            "model.lambda" => {
                self.lambda = if value.trim().eq_ignore_ascii_case("gcv") {
                    LambdaSelect::Gcv
                } else {
                    LambdaSelect::Fixed(parse_num(a, value)?)
                }
            }
            "model.lambda_sharing" => self.lambda_sharing = choice(a, value, &SHARING)?,
            "model.ar1" => {
                self.ar1 = if value.trim().eq_ignore_ascii_case("auto") {
                    Ar1::Auto
                } else {
                    Ar1::Fixed(parse_num(a, value)?)
                }
            }
            "test.permutations" => self.permutations = parse_num(a, value)?,
            "test.seed" => self.seed = parse_num(a, value)?,
            "test.strata" => self.strata = choice(a, value, &STRATA)?,
            "test.mode" => self.mode = choice(a, value, &MODES)?,
            "test.harness_reps" => self.harness_reps = parse_num(a, value)?,
            "test.harness_n" => self.harness_n = parse_num(a, value)?,
            "pca.grouping" => self.grouping = choice(a, value, &GROUPINGS)?,
            "pca.components" => self.components = parse_num(a, value)?,
            "pca.centered" => self.centered = parse_bool(a, value)?,
            _ => return Err(CliError::Config(format!("unknown setting '{addr}'"))),
        }
        Ok(())
    }

    /// Applies every setting of an INI document, ignoring the manifest's run section.
    pub fn apply_ini(&mut self, ini: &Ini) -> Result<()> {
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(CliError::Config(format!("setting '{k}' is outside any section")));
                }
                continue;
            };
            if section == RUN_SECTION {
                continue;
            }
            for (k, v) in props.iter() {
                self.set(section, k, v)?;
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        let ini = Ini::load_from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        self.apply_ini(&ini)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.grid_size < MIN_GRID_SIZE {
            return bad(format!("grid size {} is below {MIN_GRID_SIZE}", self.grid_size));
        }
        if self.permutations < MIN_PERMUTATIONS {
            return bad(format!(
                "{} permutations is below {MIN_PERMUTATIONS}",
                self.permutations
            ));
        }
        if let Some(span) = self.smoothing_span {
            if !(span > 0.0 && span < 1.0) {
                return bad(format!("smoothing span {span} must lie in (0, 1)"));
            }
        }
        if self.mode == TestMode::Harness && (self.harness_reps == 0 || self.harness_n < 2) {
            return bad("harness mode needs at least 1 replication of at least 2 curves per group".into());
        }
        if self.components == 0 {
            return bad("at least one principal component must be retained".into());
        }
        if self.families.is_empty() {
            return bad("no tonal family selected".into());
        }
        self.mean_model_spec(TonePosition::Second)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    /// Mean model for a family whose free tone sits at `free`.
    pub fn mean_model_spec(&self, free: TonePosition) -> MeanModelSpec {
        MeanModelSpec {
            basis_size: self.basis_size,
            penalty_order: self.penalty_order,
            lambda_select: self.lambda,
            lambda_sharing: self.lambda_sharing,
            ar1: self.ar1,
            ..MeanModelSpec::for_family(free)
        }
    }

    /// All settings in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let lambda = match self.lambda {
            LambdaSelect::Gcv => "gcv".to_string(),
            LambdaSelect::Fixed(l) => num(l),
        };
        let ar1 = match self.ar1 {
            Ar1::Auto => "auto".to_string(),
            Ar1::Fixed(r) => num(r),
        };
        vec![
            ("input", "path", self.input.display().to_string()),
            ("input", "grid_size", self.grid_size.to_string()),
            ("input", "value_scale", name_of(&VALUE_SCALES, &self.value_scale).into()),
            (
                "input",
                "smoothing_span",
                self.smoothing_span.map_or("none".into(), num),
            ),
            ("output", "dir", self.output_dir.display().to_string()),
            ("pipeline", "families", format_families(&self.families)),
            ("model", "basis_size", self.basis_size.to_string()),
            ("model", "penalty_order", self.penalty_order.to_string()),
            ("model", "lambda", lambda),
            (
                "model",
                "lambda_sharing",
                name_of(&SHARING, &self.lambda_sharing).into(),
            ),
            ("model", "ar1", ar1),
            ("test", "permutations", self.permutations.to_string()),
            ("test", "seed", self.seed.to_string()),
            ("test", "strata", name_of(&STRATA, &self.strata).into()),
            ("test", "mode", name_of(&MODES, &self.mode).into()),
            ("test", "harness_reps", self.harness_reps.to_string()),
            ("test", "harness_n", self.harness_n.to_string()),
            ("pca", "grouping", name_of(&GROUPINGS, &self.grouping).into()),
            ("pca", "components", self.components.to_string()),
            ("pca", "centered", self.centered.to_string()),
        ]
    }

    /// Hex SHA-256 of the canonical INI text.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_string().as_bytes())
    }
}

/// Canonical INI text with LF line endings.
impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut current = "";
        for (section, key, value) in self.entries() {
            if section != current {
                if !current.is_empty() {
                    writeln!(f)?;
                }
                writeln!(f, "[{section}]")?;
                current = section;
            }
            writeln!(f, "{key} = {value}")?;
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
