//! CSV writers. Numbers use the shortest text that parses back to the same
//! `f64`, so reruns are byte-identical and nothing is lost to rounding.

use std::fs::File;
use std::path::Path;

use covtransport::curves::FunctionalSample;
use covtransport::meanmodel::MeanModelFit;
use covtransport::simulate::{PValueSummary, RawToken};
use covtransport::tpca::ScoresTable;

use crate::error::{CliError, Result};
use crate::ingest::{LABEL_COLUMNS, LONG_COLUMNS};
use crate::pipeline::{CombinationTest, PipelineReport};

pub const SUMMARY_COLUMNS: [&str; 6] = ["Min.", "1st Qu.", "Median", "Mean", "3rd Qu.", "Max."];

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(CliError::io(path))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

/// Writes a header and rows, then flushes.
pub fn write_table<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(CliError::csv(path))?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())
            .map_err(CliError::csv(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn summary_cells(s: &PValueSummary) -> Vec<String> {
    [s.min, s.first_quartile, s.median, s.mean, s.third_quartile, s.max]
        .into_iter()
        .map(num)
        .collect()
}

/// Curves in wide format: labels, then one column per grid point.
pub fn write_curves(path: &Path, sample: &FunctionalSample) -> Result<()> {
    let mut header = strings(&LABEL_COLUMNS);
    header.extend(sample.grid().points().iter().map(|&t| num(t)));
    let rows = sample.curves().iter().map(|c| {
        let m = &c.meta;
        let mut row = vec![
            m.speaker.clone(),
            m.tone_first.to_string(),
            m.tone_second.to_string(),
            m.repetition.to_string(),
            m.cognitive_load.to_string(),
        ];
        row.extend(c.values.iter().map(|&v| num(v)));
        row
    });
    write_table(path, &header, rows)
}

/// Raw tokens in the long ingestion format.
pub fn write_long(path: &Path, tokens: &[RawToken]) -> Result<()> {
    let rows = tokens.iter().flat_map(|tok| {
        let m = &tok.meta;
        tok.times.iter().zip(&tok.f0).map(move |(&t, &f)| {
            vec![
                m.speaker.clone(),
                m.tone_first.number().to_string(),
                m.tone_second.number().to_string(),
                m.repetition.to_string(),
                m.cognitive_load.to_string(),
                num(t),
                num(f),
            ]
        })
    });
    write_table(path, &strings(&LONG_COLUMNS), rows)
}

/// Parametric coefficients, smooth terms and fit diagnostics of a mean model.
pub fn write_mean_model(path: &Path, family: &str, fit: &MeanModelFit) -> Result<()> {
    let header = strings(&[
        "family",
        "section",
        "term",
        "estimate",
        "std_error",
        "statistic",
        "edf",
        "ref_df",
        "lambda",
        "p_value",
    ]);
    let mut rows = Vec::new();
    for p in &fit.parametric {
        rows.push(vec![
            family.into(),
            "parametric".into(),
            p.term.clone(),
            num(p.estimate),
            num(p.std_error),
            num(p.z),
            String::new(),
            String::new(),
            String::new(),
            num(p.p_value),
        ]);
    }
    for s in &fit.smooth_terms {
        rows.push(vec![
            family.into(),
            "smooth".into(),
            s.term.clone(),
            String::new(),
            String::new(),
            num(s.chi_sq),
            num(s.edf),
            s.ref_df.to_string(),
            num(s.lambda),
            num(s.p_value),
        ]);
    }
    for (term, value) in [
        ("rho", fit.rho),
        ("sigma2", fit.sigma2),
        ("gcv", fit.gcv),
        ("total_edf", fit.total_edf),
        ("speaker_lambda", fit.speaker_lambda),
    ] {
        let mut row = vec![String::new(); header.len()];
        row[0] = family.into();
        row[1] = "model".into();
        row[2] = term.into();
        row[3] = num(value);
        rows.push(row);
    }
    write_table(path, &header, rows)
}

pub fn write_anova(path: &Path, family: &str, tests: &[CombinationTest]) -> Result<()> {
    let header = strings(&[
        "family",
        "combination",
        "T_obs",
        "p_value",
        "B",
        "n_CL0",
        "n_CL6",
        "seed",
    ]);
    let rows = tests.iter().map(|t| {
        vec![
            family.to_string(),
            t.label(),
            num(t.anova.statistic),
            num(t.anova.p_value),
            t.anova.permutations().to_string(),
            t.anova.group_sizes[0].to_string(),
            t.anova.group_sizes[1].to_string(),
            t.anova.seed.to_string(),
        ]
    });
    write_table(path, &header, rows)
}

/// p-value summaries over subsampling replications, one row per combination.
pub fn write_harness(path: &Path, family: &str, tests: &[CombinationTest], permutations: usize) -> Result<()> {
    let mut header = strings(&["family", "combination", "reps", "n", "B"]);
    header.extend(strings(&SUMMARY_COLUMNS));
    let rows = tests.iter().filter_map(|t| {
        let h = t.harness.as_ref()?;
        let mut row = vec![
            family.to_string(),
            t.label(),
            h.p_values.len().to_string(),
            h.n.to_string(),
            permutations.to_string(),
        ];
        row.extend(summary_cells(&h.summary));
        Some(row)
    });
    write_table(path, &header, rows)
}

pub fn write_scores(path: &Path, family: &str, table: &ScoresTable) -> Result<()> {
    let m = table.rows.first().map_or(0, |r| r.scores.len());
    let mut header = strings(&["family", "label"]);
    header.extend((1..=m).map(|l| format!("PC{l}")));
    let rows = table.rows.iter().map(|r| {
        let mut row = vec![family.to_string(), r.label.clone()];
        row.extend(r.scores.iter().map(|&s| num(s)));
        row
    });
    write_table(path, &header, rows)
}

pub fn write_scree(path: &Path, family: &str, table: &ScoresTable) -> Result<()> {
    let header = strings(&["family", "component", "eigenvalue", "share", "cumulative"]);
    let rows = table.scree.iter().map(|r| {
        vec![
            family.to_string(),
            r.component.to_string(),
            num(r.eigenvalue),
            num(r.share),
            num(r.cumulative),
        ]
    });
    write_table(path, &header, rows)
}

/// One row per family: status, curve count, AR(1) coefficient and smallest p-value.
pub fn write_summary(path: &Path, report: &PipelineReport) -> Result<()> {
    let header = strings(&["family", "status", "curves", "rho", "tests", "min_p_value", "message"]);
    let rows = report.families.iter().map(|f| match &f.result {
        Ok(r) => vec![
            f.family.to_string(),
            "ok".into(),
            r.curves.to_string(),
            r.fit.as_ref().map_or(String::new(), |fit| num(fit.rho)),
            r.tests.len().to_string(),
            r.tests
                .iter()
                .map(|t| t.anova.p_value)
                .reduce(f64::min)
                .map_or(String::new(), num),
            String::new(),
        ],
        Err(e) => vec![
            f.family.to_string(),
            "failed".into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            e.to_string(),
        ],
    });
    write_table(path, &header, rows)
}
