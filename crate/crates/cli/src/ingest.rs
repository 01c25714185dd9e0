//! Reading curves from CSV.
//!
//! Long format has one row per f0 sample and the header
//! `speaker,tone1,tone2,repetition,cognitive_load,time,f0`. Wide format has
//! one row per curve: the five label columns followed by one column per grid
//! point, headed by its normalized time. [`load_curves`] accepts either.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use covtransport::curves::{
    normalize_times, resample_to_grid, CognitiveLoad, Curve, CurveMeta, FunctionalSample, Grid, Tone,
};

use crate::config::{PipelineConfig, ValueScale};
use crate::error::{CliError, Result};

pub const LABEL_COLUMNS: [&str; 5] = ["speaker", "tone1", "tone2", "repetition", "cognitive_load"];
pub const LONG_COLUMNS: [&str; 7] = [
    "speaker",
    "tone1",
    "tone2",
    "repetition",
    "cognitive_load",
    "time",
    "f0",
];

/// Tokens with fewer raw samples than this are dropped.
pub const MIN_TOKEN_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub grid_size: usize,
    pub value_scale: ValueScale,
    pub smoothing_span: Option<f64>,
}

impl IngestOptions {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            grid_size: cfg.grid_size,
            value_scale: cfg.value_scale,
            smoothing_span: cfg.smoothing_span,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub sample: FunctionalSample,
    /// Distinct tokens seen in the input, dropped ones included.
    pub tokens: usize,
    pub dropped: usize,
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(CliError::io(path))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn headers<R: Read>(rdr: &mut csv::Reader<R>, path: &Path) -> Result<Vec<String>> {
    let h = rdr.headers().map_err(CliError::csv(path))?;
    if h.is_empty() || h.iter().all(str::is_empty) {
        return Err(CliError::EmptyInput {
            path: path.to_path_buf(),
            reason: "file is empty".into(),
        });
    }
    Ok(h.iter().map(|s| s.to_ascii_lowercase()).collect())
}

fn is_long(h: &[String]) -> bool {
    h.len() == LONG_COLUMNS.len() && h.iter().zip(LONG_COLUMNS).all(|(a, b)| a == b)
}

fn is_wide(h: &[String]) -> bool {
    h.len() > LABEL_COLUMNS.len() && h.iter().zip(LABEL_COLUMNS).all(|(a, b)| a == b)
}

/// Reads long or wide CSV, chosen by the header.
pub fn load_curves(path: &Path, opts: &IngestOptions) -> Result<Ingested> {
    let mut rdr = open(path)?;
    let h = headers(&mut rdr, path)?;
    if is_long(&h) {
        read_long(rdr, path, opts)
    } else if is_wide(&h) {
        read_wide(rdr, &h, path)
    } else {
        Err(parse_err(
            path,
            1,
            format!(
                "unrecognized header; expected '{}' or labels followed by grid points",
                LONG_COLUMNS.join(",")
            ),
        ))
    }
}

/// Reads long-format samples and resamples each token onto a uniform grid.
pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<Ingested> {
    let mut rdr = open(path)?;
    let h = headers(&mut rdr, path)?;
    if !is_long(&h) {
        return Err(parse_err(
            path,
            1,
            format!("expected header '{}'", LONG_COLUMNS.join(",")),
        ));
    }
    read_long(rdr, path, opts)
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, path: &Path, line: u64) -> Result<&'a str> {
    rec.get(i)
        .ok_or_else(|| parse_err(path, line, format!("missing column '{}'", LONG_COLUMNS[i])))
}

fn parse_labels(rec: &csv::StringRecord, path: &Path, line: u64) -> Result<CurveMeta> {
    let speaker = field(rec, 0, path, line)?;
    let tone = |i| -> Result<Tone> {
        field(rec, i, path, line)?
            .parse()
            .map_err(|e: covtransport::Error| parse_err(path, line, e.to_string()))
    };
    let (first, second) = (tone(1)?, tone(2)?);
    let rep_text = field(rec, 3, path, line)?;
    let repetition: u32 = rep_text
        .parse()
        .map_err(|_| parse_err(path, line, format!("repetition '{rep_text}' is not a positive integer")))?;
    let load: CognitiveLoad = field(rec, 4, path, line)?
        .parse()
        .map_err(|e: covtransport::Error| parse_err(path, line, e.to_string()))?;
    CurveMeta::new(speaker, first, second, repetition, load).map_err(|e| parse_err(path, line, e.to_string()))
}

fn parse_value(text: &str, what: &str, path: &Path, line: u64) -> Result<f64> {
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(path, line, format!("{what} '{text}' is not a finite number"))),
    }
}

struct Sample {
    time: f64,
    value: f64,
    line: u64,
}

fn read_long<R: Read>(mut rdr: csv::Reader<R>, path: &Path, opts: &IngestOptions) -> Result<Ingested> {
    let mut tokens: BTreeMap<CurveMeta, Vec<Sample>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(CliError::csv(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != LONG_COLUMNS.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", LONG_COLUMNS.len(), rec.len()),
            ));
        }
        let meta = parse_labels(&rec, path, line)?;
        let time = parse_value(&rec[5], "time", path, line)?;
        let mut value = parse_value(&rec[6], "f0", path, line)?;
        if opts.value_scale == ValueScale::LogHz {
            if value <= 0.0 {
                return Err(parse_err(path, line, format!("f0 {value} has no logarithm")));
            }
            value = value.ln();
        }
        tokens.entry(meta).or_default().push(Sample { time, value, line });
    }
    if tokens.is_empty() {
        return Err(CliError::EmptyInput {
            path: path.to_path_buf(),
            reason: "no data rows".into(),
        });
    }

    let grid = Arc::new(Grid::uniform(opts.grid_size)?);
    let total = tokens.len();
    let mut dropped = 0;
    let mut curves = Vec::with_capacity(total);
    for (meta, mut samples) in tokens {
        if samples.len() < MIN_TOKEN_POINTS {
            log::warn!(
                "dropping {} {} rep {} {}: {} sample(s), need {MIN_TOKEN_POINTS}",
                meta.speaker,
                meta.combination(),
                meta.repetition,
                meta.cognitive_load,
                samples.len()
            );
            dropped += 1;
            continue;
        }
        samples.sort_by(|a, b| a.time.total_cmp(&b.time));
        if let Some(w) = samples.windows(2).find(|w| w[1].time == w[0].time) {
            return Err(parse_err(
                path,
                w[1].line,
                format!("repeated time {} within one token", w[1].time),
            ));
        }
        let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
        let mut values: Vec<f64> = samples.iter().map(|s| s.value).collect();
        if let Some(span) = opts.smoothing_span {
            values = moving_average(&normalize_times(&times)?, &values, span);
        }
        curves.push(Curve {
            values: resample_to_grid(&times, &values, &grid)?,
            meta,
        });
    }
    if dropped > 0 {
        log::warn!("{dropped} of {total} tokens dropped for having fewer than {MIN_TOKEN_POINTS} samples");
    }
    if curves.is_empty() {
        return Err(CliError::EmptyInput {
            path: path.to_path_buf(),
            reason: "no token has enough samples".into(),
        });
    }
    Ok(Ingested {
        sample: FunctionalSample::new(grid, curves)?,
        tokens: total,
        dropped,
    })
}

/// Mean over samples within `span / 2` of each time.
fn moving_average(times: &[f64], values: &[f64], span: f64) -> Vec<f64> {
    let half = span / 2.0;
    times
        .iter()
        .map(|&t| {
            let (sum, count) = times
                .iter()
                .zip(values)
                .filter(|(u, _)| (*u - t).abs() <= half)
                .fold((0.0, 0usize), |(s, c), (_, v)| (s + v, c + 1));
            sum / count as f64
        })
        .collect()
}

fn read_wide<R: Read>(mut rdr: csv::Reader<R>, header: &[String], path: &Path) -> Result<Ingested> {
    let points = header[LABEL_COLUMNS.len()..]
        .iter()
        .map(|h| parse_value(h, "grid point", path, 1))
        .collect::<Result<Vec<_>>>()?;
    let grid = Arc::new(Grid::new(points).map_err(|e| parse_err(path, 1, e.to_string()))?);
    let width = header.len();
    let mut seen = BTreeMap::new();
    let mut curves = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(CliError::csv(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(parse_err(
                path,
                line,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        let meta = parse_labels(&rec, path, line)?;
        if let Some(first) = seen.insert(meta.clone(), line) {
            return Err(parse_err(
                path,
                line,
                format!("curve labels repeat those on line {first}"),
            ));
        }
        let values = rec
            .iter()
            .skip(LABEL_COLUMNS.len())
            .map(|v| parse_value(v, "value", path, line))
            .collect::<Result<Vec<_>>>()?;
        curves.push(Curve { values, meta });
    }
    if curves.is_empty() {
        return Err(CliError::EmptyInput {
            path: path.to_path_buf(),
            reason: "no data rows".into(),
        });
    }
    let tokens = curves.len();
    Ok(Ingested {
        sample: FunctionalSample::new(grid, curves)?,
        tokens,
        dropped: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn opts(q: usize) -> IngestOptions {
        IngestOptions {
            grid_size: q,
            value_scale: ValueScale::Hz,
            smoothing_span: None,
        }
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "speaker,tone1,tone2,repetition,cognitive_load,time,f0\n";

    #[test]
    fn moving_average_of_line_is_exact_inside() {
        let t: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let v: Vec<f64> = t.iter().map(|x| 2.0 * x + 1.0).collect();
        let s = moving_average(&t, &v, 0.25);
        for i in 2..9 {
            assert!((s[i] - v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let f = write(&format!("{HEADER}S1,1,2,1,CL0,0.0,200\nS1,1,2,1,CL0,abc,201\n"));
        match ingest(f.path(), &opts(8)).unwrap_err() {
            CliError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        let f = write(&format!("{HEADER}S1,7,2,1,CL0,0.0,200\n"));
        assert!(matches!(
            ingest(f.path(), &opts(8)),
            Err(CliError::Parse { line: 2, .. })
        ));
        let f = write(&format!("{HEADER}S1,1,2,1,CL3,0.0,200\n"));
        assert!(matches!(
            ingest(f.path(), &opts(8)),
            Err(CliError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn empty_inputs() {
        let f = write("");
        assert!(matches!(ingest(f.path(), &opts(8)), Err(CliError::EmptyInput { .. })));
        let f = write(HEADER);
        assert!(matches!(ingest(f.path(), &opts(8)), Err(CliError::EmptyInput { .. })));
    }

    #[test]
    fn log_scale_rejects_nonpositive_f0() {
        let f = write(&format!("{HEADER}S1,1,2,1,CL0,0.0,0\n"));
        let o = IngestOptions {
            value_scale: ValueScale::LogHz,
            ..opts(8)
        };
        assert!(matches!(ingest(f.path(), &o), Err(CliError::Parse { line: 2, .. })));
    }

    #[test]
    fn repeated_times_are_rejected() {
        let rows: String = [0.0, 0.1, 0.1, 0.2, 0.3]
            .iter()
            .map(|t| format!("S1,1,2,1,CL0,{t},200\n"))
            .collect();
        let f = write(&format!("{HEADER}{rows}"));
        assert!(matches!(
            ingest(f.path(), &opts(8)),
            Err(CliError::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn wide_format_round_trip_labels() {
        let f = write(
            "speaker,tone1,tone2,repetition,cognitive_load,0,0.5,1\nS1,T1,T2,1,CL0,1,2,3\nS2,T1,T2,1,CL6,4,5,6\n",
        );
        let got = load_curves(f.path(), &opts(8)).unwrap();
        assert_eq!(got.sample.len(), 2);
        assert_eq!(got.sample.grid().points(), &[0.0, 0.5, 1.0]);
        assert_eq!(got.sample.curves()[1].values, vec![4.0, 5.0, 6.0]);
        let dup = write("speaker,tone1,tone2,repetition,cognitive_load,0,1\nS1,1,2,1,0,1,2\nS1,1,2,1,0,1,2\n");
        assert!(matches!(
            load_curves(dup.path(), &opts(8)),
            Err(CliError::Parse { line: 3, .. })
        ));
        let bad = write("who,tone1\nS1,1\n");
        assert!(matches!(
            load_curves(bad.path(), &opts(8)),
            Err(CliError::Parse { line: 1, .. })
        ));
    }
}
