//! Per-family analysis: mean model, residual covariance tests and tangent PCA.
//!
//! Each tonal family is fitted and tested on its own curves only, with seeds
//! derived from the root seed and the family's index, so a family's results
//! do not depend on which other families are run or on their data.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use covtransport::curves::{sample_covariance, CognitiveLoad, Curve, FunctionalSample, Tone};
use covtransport::derive_seed;
use covtransport::meanmodel::{extract_residuals, fit_mean_model, MeanModelFit};
use covtransport::otinfer::{AnovaResult, PermutationTest};
use covtransport::simulate::PValueSummary;
use covtransport::tpca::{scores_table, tangent_pca, ScoresTable, TangentPcaOptions, TangentPcaResult};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{sha256_hex, Grouping, PipelineConfig, TestMode, RUN_SECTION};
use crate::error::{CliError, Result};
use crate::family::TonalFamily;
use crate::ingest::{load_curves, IngestOptions};
use crate::output;

/// Which stages run after loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    /// Fit the mean model and pass its residuals on; otherwise later stages see the input curves.
    pub fit: bool,
    pub test: bool,
    pub pca: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        fit: true,
        test: true,
        pca: true,
    };
}

#[derive(Debug, Clone)]
pub struct HarnessOutcome {
    pub n: usize,
    pub p_values: Vec<f64>,
    pub summary: PValueSummary,
}

/// CL0 versus CL6 test for one tone combination.
#[derive(Debug, Clone)]
pub struct CombinationTest {
    pub first: Tone,
    pub second: Tone,
    pub anova: AnovaResult,
    pub harness: Option<HarnessOutcome>,
}

impl CombinationTest {
    pub fn label(&self) -> String {
        format!("{}{}", self.first, self.second)
    }
}

#[derive(Debug, Clone)]
pub struct FamilyPca {
    pub result: TangentPcaResult,
    pub table: ScoresTable,
}

#[derive(Debug, Clone)]
pub struct FamilyReport {
    pub family: TonalFamily,
    pub curves: usize,
    pub fit: Option<MeanModelFit>,
    pub residuals: Option<FunctionalSample>,
    pub tests: Vec<CombinationTest>,
    pub pca: Option<FamilyPca>,
}

#[derive(Debug)]
pub struct FamilyOutcome {
    pub family: TonalFamily,
    pub result: Result<FamilyReport>,
}

#[derive(Debug)]
pub struct PipelineReport {
    pub config_hash: String,
    pub input_hash: String,
    pub tokens: usize,
    pub dropped: usize,
    pub families: Vec<FamilyOutcome>,
}

impl PipelineReport {
    pub fn failures(&self) -> usize {
        self.families.iter().filter(|f| f.result.is_err()).count()
    }

    pub fn family(&self, family: TonalFamily) -> Option<&FamilyReport> {
        self.families
            .iter()
            .find(|f| f.family == family)
            .and_then(|f| f.result.as_ref().ok())
    }
}

pub fn family_seed(seed: u64, family: TonalFamily) -> u64 {
    derive_seed(seed, family.id())
}

/// Fits the family's mean model over the load × free-tone levels present and returns its residuals.
pub fn fit_family(
    curves: &FunctionalSample,
    family: TonalFamily,
    cfg: &PipelineConfig,
) -> Result<(MeanModelFit, FunctionalSample)> {
    let mut spec = cfg.mean_model_spec(family.free_position());
    let present: Vec<_> = curves.curves().iter().map(|c| spec.level_of(&c.meta)).collect();
    spec.groups.retain(|level| present.contains(level));
    let fit = fit_mean_model(curves, &spec)?;
    let residuals = extract_residuals(&fit, curves)?;
    Ok((fit, residuals))
}

fn load_groups(sample: &FunctionalSample, first: Tone, second: Tone) -> Result<Option<[FunctionalSample; 2]>> {
    let pick = |load: CognitiveLoad| {
        sample.filter(|m| m.tone_first == first && m.tone_second == second && m.cognitive_load == load)
    };
    match (pick(CognitiveLoad::Cl0), pick(CognitiveLoad::Cl6)) {
        (Some(a), Some(b)) => Ok(Some([a, b])),
        (None, None) => Ok(None),
        _ => Err(CliError::MissingData(format!(
            "{first}{second} is observed under only one cognitive load"
        ))),
    }
}

/// Repeats the test on `n` curves drawn without replacement from each load group.
fn harness(groups: &[FunctionalSample; 2], cfg: &PipelineConfig, seed: u64) -> Result<HarnessOutcome> {
    let n = cfg.harness_n;
    if groups.iter().any(|g| g.len() < n) {
        return Err(CliError::MissingData(format!(
            "harness draws {n} curves per load but the groups hold {} and {}",
            groups[0].len(),
            groups[1].len()
        )));
    }
    let p_values = (0..cfg.harness_reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(seed, r as u64 + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, 1));
            let draws = groups
                .iter()
                .map(|g| {
                    let picked = rand::seq::index::sample(&mut rng, g.len(), n)
                        .iter()
                        .map(|i| g.curves()[i].clone())
                        .collect();
                    FunctionalSample::new(g.grid().clone(), picked)
                })
                .collect::<covtransport::Result<Vec<_>>>()?;
            PermutationTest::new(cfg.permutations, derive_seed(rep_seed, 0))
                .with_strata(cfg.strata)
                .run(&draws)
                .map(|a| a.p_value)
        })
        .collect::<covtransport::Result<Vec<f64>>>()?;
    Ok(HarnessOutcome {
        n,
        summary: PValueSummary::from_values(&p_values)?,
        p_values,
    })
}

/// CL0 versus CL6 covariance test for each combination of the family present in `curves`.
pub fn test_family(
    curves: &FunctionalSample,
    family: TonalFamily,
    cfg: &PipelineConfig,
) -> Result<Vec<CombinationTest>> {
    let root = family_seed(cfg.seed, family);
    let mut out = Vec::new();
    for (k, (first, second)) in family.combinations().into_iter().enumerate() {
        let Some(groups) = load_groups(curves, first, second)? else {
            log::warn!("{family}: no curves for {first}{second}");
            continue;
        };
        let seed = derive_seed(root, k as u64 + 1);
        let anova = PermutationTest::new(cfg.permutations, seed)
            .with_strata(cfg.strata)
            .run(&groups)?;
        let harness = match cfg.mode {
            TestMode::Single => None,
            TestMode::Harness => Some(harness(&groups, cfg, seed)?),
        };
        out.push(CombinationTest {
            first,
            second,
            anova,
            harness,
        });
    }
    if out.is_empty() {
        return Err(CliError::MissingData(format!("{family}: no combination has curves")));
    }
    Ok(out)
}

/// Tangent PCA of the family's cell covariance operators.
pub fn pca_family(curves: &FunctionalSample, family: TonalFamily, cfg: &PipelineConfig) -> Result<FamilyPca> {
    let mut cells: BTreeMap<String, Vec<Curve>> = BTreeMap::new();
    for c in curves.curves() {
        let cell = format!("{}.{}", c.meta.combination(), c.meta.cognitive_load);
        let label = match cfg.grouping {
            Grouping::Cell => cell,
            Grouping::SpeakerCell => format!("{}.{cell}", c.meta.speaker),
        };
        cells.entry(label).or_default().push(c.clone());
    }
    let mut labels = Vec::new();
    let mut ops = Vec::new();
    for (label, members) in cells {
        if members.len() < 2 {
            log::warn!("{family}: cell {label} has a single curve and is left out of the PCA");
            continue;
        }
        ops.push(sample_covariance(&FunctionalSample::new(
            curves.grid().clone(),
            members,
        )?)?);
        labels.push(label);
    }
    if ops.len() < 2 {
        return Err(CliError::MissingData(format!(
            "{family}: tangent PCA needs two cells with at least two curves"
        )));
    }
    let opts = TangentPcaOptions {
        components: cfg.components.min(ops.len()),
        centered: cfg.centered,
        ..Default::default()
    };
    let result = tangent_pca(&ops, None, &opts)?;
    let table = scores_table(&result, &labels)?;
    Ok(FamilyPca { result, table })
}

/// Runs the selected stages for one family on its slice of `sample`.
pub fn analyze_family(
    sample: &FunctionalSample,
    family: TonalFamily,
    cfg: &PipelineConfig,
    stages: Stages,
) -> Result<FamilyReport> {
    let curves = sample
        .filter(|m| family.contains(m))
        .ok_or_else(|| CliError::MissingData(format!("{family}: no curves in the input")))?;
    let (fit, residuals) = if stages.fit {
        let (fit, residuals) = fit_family(&curves, family, cfg)?;
        (Some(fit), Some(residuals))
    } else {
        (None, None)
    };
    let analyzed = residuals.as_ref().unwrap_or(&curves);
    let tests = if stages.test {
        test_family(analyzed, family, cfg)?
    } else {
        Vec::new()
    };
    let pca = if stages.pca {
        Some(pca_family(analyzed, family, cfg)?)
    } else {
        None
    };
    Ok(FamilyReport {
        family,
        curves: curves.len(),
        fit,
        residuals,
        tests,
        pca,
    })
}

/// Analyzes every configured family in parallel; failures are kept per family.
pub fn analyze(sample: &FunctionalSample, cfg: &PipelineConfig, stages: Stages) -> Vec<FamilyOutcome> {
    cfg.families
        .par_iter()
        .map(|&family| FamilyOutcome {
            family,
            result: analyze_family(sample, family, cfg, stages),
        })
        .collect()
}

fn write_family(dir: &Path, report: &FamilyReport, cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let name = report.family.to_string();
    if let (Some(fit), Some(residuals)) = (&report.fit, &report.residuals) {
        output::write_mean_model(&dir.join("mean_model.csv"), &name, fit)?;
        output::write_curves(&dir.join("residuals.csv"), residuals)?;
    }
    if !report.tests.is_empty() {
        output::write_anova(&dir.join("anova.csv"), &name, &report.tests)?;
        if cfg.mode == TestMode::Harness {
            output::write_harness(&dir.join("anova_harness.csv"), &name, &report.tests, cfg.permutations)?;
        }
    }
    if let Some(pca) = &report.pca {
        output::write_scores(&dir.join("pca_scores.csv"), &name, &pca.table)?;
        output::write_scree(&dir.join("pca_screeplot.csv"), &name, &pca.table)?;
    }
    Ok(())
}

/// Loads the input, runs `stages` for every family and writes the results
/// under the output directory, one subdirectory per family, plus
/// `summary.csv` and a `manifest.ini` that reproduces the run when passed
/// back as `--config`.
pub fn run(cfg: &PipelineConfig, stages: Stages) -> Result<PipelineReport> {
    cfg.validate()?;
    let bytes = fs::read(&cfg.input).map_err(CliError::io(&cfg.input))?;
    let input_hash = sha256_hex(&bytes);
    drop(bytes);
    let ingested = load_curves(&cfg.input, &IngestOptions::from_config(cfg))?;
    log::info!(
        "{} curves from {} tokens ({} dropped)",
        ingested.sample.len(),
        ingested.tokens,
        ingested.dropped
    );

    let mut families = analyze(&ingested.sample, cfg, stages);
    fs::create_dir_all(&cfg.output_dir).map_err(CliError::io(&cfg.output_dir))?;
    for outcome in &mut families {
        if let Ok(report) = &outcome.result {
            let dir = cfg.output_dir.join(outcome.family.to_string());
            if let Err(e) = write_family(&dir, report, cfg) {
                outcome.result = Err(e);
            }
        }
        if let Err(e) = &outcome.result {
            log::error!("{}: {e}", outcome.family);
        }
    }

    let report = PipelineReport {
        config_hash: cfg.hash(),
        input_hash,
        tokens: ingested.tokens,
        dropped: ingested.dropped,
        families,
    };
    output::write_summary(&cfg.output_dir.join("summary.csv"), &report)?;
    write_manifest(&cfg.output_dir.join("manifest.ini"), cfg, &report)?;
    Ok(report)
}

/// The full pipeline: mean model, residual tests and tangent PCA.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    run(cfg, Stages::ALL)
}

fn write_manifest(path: &Path, cfg: &PipelineConfig, report: &PipelineReport) -> Result<()> {
    let text = format!(
        "{cfg}\n[{RUN_SECTION}]\nconfig_hash = {}\ninput_sha256 = {}\ntokens = {}\ndropped = {}\nversion = {}\n",
        report.config_hash,
        report.input_hash,
        report.tokens,
        report.dropped,
        env!("CARGO_PKG_VERSION"),
    );
    fs::write(path, text).map_err(CliError::io(path))
}
