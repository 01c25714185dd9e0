use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use covtransport_cli::config::PipelineConfig;
use covtransport_cli::ingest::{ingest, IngestOptions};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_covtransport"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn covtransport")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn token(speaker: &str, t1: u8, t2: u8, rep: u32, load: &str, points: usize) -> String {
    (0..points)
        .map(|i| {
            let t = 0.1 + 0.01 * i as f64;
            format!(
                "{speaker},{t1},{t2},{rep},{load},{t},{}\n",
                200.0 + 10.0 * (i as f64).sin()
            )
        })
        .collect()
}

const HEADER: &str = "speaker,tone1,tone2,repetition,cognitive_load,time,f0\n";

fn small_corpus(dir: &Path) -> PathBuf {
    let path = dir.join("corpus.csv");
    let out = run(&[
        "simulate",
        "corpus",
        "--output",
        p(&path),
        "--seed",
        "5",
        "--speakers",
        "4",
        "--repetitions",
        "3",
        "--affected",
        "T1T1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn pipeline_args<'a>(input: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "pipeline",
        "--input",
        input,
        "--output-dir",
        out,
        "--grid-size",
        "10",
        "--permutations",
        "99",
        "--seed",
        "3",
    ]
}

/// Every file under `dir`, relative path to contents.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn ingest_writes_one_row_per_token() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("toy.csv");
    let body = token("S1", 1, 2, 1, "CL0", 12) + &token("S1", 1, 2, 1, "CL6", 15);
    fs::write(&input, format!("{HEADER}{body}")).unwrap();
    let wide = dir.path().join("wide.csv");
    let out = run(&["ingest", "--input", p(&input), "--output", p(&wide), "--grid-size", "8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&wide).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0].split(',').count(), 5 + 8);
    assert!(lines[1].starts_with("S1,T1,T2,1,CL0,"));
    assert!(lines[2].starts_with("S1,T1,T2,1,CL6,"));
}

#[test]
fn short_tokens_are_dropped_and_counted() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("short.csv");
    let body = token("S1", 2, 3, 1, "CL0", 10) + &token("S2", 2, 3, 1, "CL0", 3);
    fs::write(&input, format!("{HEADER}{body}")).unwrap();
    let cfg = PipelineConfig {
        grid_size: 8,
        ..PipelineConfig::default()
    };
    let ingested = ingest(&input, &IngestOptions::from_config(&cfg)).unwrap();
    assert_eq!(ingested.sample.len(), 1);
    assert_eq!(ingested.dropped, 1);
    assert_eq!(ingested.tokens, 2);
}

#[test]
fn full_corpus_ingests_every_token() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("full.csv");
    let out = run(&["simulate", "corpus", "--output", p(&path), "--seed", "11"]);
    assert!(out.status.success());
    let ingested = ingest(&path, &IngestOptions::from_config(&PipelineConfig::default())).unwrap();
    assert_eq!(ingested.sample.len(), 1536);
    assert_eq!(ingested.dropped, 0);
    assert_eq!(ingested.sample.grid().len(), 50);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let input = small_corpus(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = run(&pipeline_args(p(&input), p(out_dir)));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let first = snapshot(&a);
    assert!(first.iter().any(|(f, _)| f.ends_with("T1x/anova.csv")));
    assert!(first.iter().any(|(f, _)| f.ends_with("Tx4/pca_scores.csv")));
    let names = |s: &[(PathBuf, Vec<u8>)]| s.iter().map(|(f, _)| f.clone()).collect::<Vec<_>>();
    assert_eq!(names(&first), names(&snapshot(&b)));
    for ((f, x), (_, y)) in first.iter().zip(snapshot(&b)) {
        if !f.ends_with("manifest.ini") {
            assert!(x == &y, "{} differs", f.display());
        }
    }

    // The manifest alone reproduces the run, into the directory it names.
    fs::rename(&a, dir.path().join("saved")).unwrap();
    let manifest = dir.path().join("saved/manifest.ini");
    let out = run(&["pipeline", "--config", p(&manifest)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(snapshot(&dir.path().join("saved")), snapshot(&a));
}

#[test]
fn families_do_not_depend_on_each_other() {
    let dir = TempDir::new().unwrap();
    let input = small_corpus(dir.path());
    let (all, one) = (dir.path().join("all"), dir.path().join("one"));
    assert!(run(&pipeline_args(p(&input), p(&all))).status.success());
    let mut args = pipeline_args(p(&input), p(&one));
    args.extend(["--families", "Tx2"]);
    assert!(run(&args).status.success());
    assert_eq!(snapshot(&all.join("Tx2")), snapshot(&one.join("Tx2")));
    assert!(!one.join("T1x").exists());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let input = small_corpus(dir.path());
    let out_dir = dir.path().join("out");

    let mut args = pipeline_args(p(&input), p(&out_dir));
    args[8] = "10";
    let out = run(&args);
    assert_eq!(
        out.status.code(),
        Some(2),
        "too few permutations is a configuration error"
    );

    let out = run(&pipeline_args(p(&dir.path().join("missing.csv")), p(&out_dir)));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    let bad = dir.path().join("bad.ini");
    fs::write(&bad, "[model]\nbasis_size = many\n").unwrap();
    let mut args = pipeline_args(p(&input), p(&out_dir));
    args.extend(["--config", p(&bad)]);
    assert_eq!(run(&args).status.code(), Some(2));

    assert_eq!(run(&["pipeline", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn harness_scenario_writes_summaries() {
    let dir = TempDir::new().unwrap();
    let scenario = dir.path().join("s.ini");
    fs::write(
        &scenario,
        "[scenario]\ngrid_size = 8\npermutations = 99\nseed = 2\nreps = 5\n[group.a]\nn = 10\n[group.b]\nn = 10\nscale = 4\n",
    )
    .unwrap();
    let out_dir = dir.path().join("h");
    let out = run(&[
        "simulate",
        "harness",
        "--scenario",
        p(&scenario),
        "--output-dir",
        p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pvals = fs::read_to_string(out_dir.join("harness_pvalues.csv")).unwrap();
    assert_eq!(pvals.lines().count(), 6);
    let summary = fs::read_to_string(out_dir.join("harness_summary.csv")).unwrap();
    assert!(summary.starts_with("reps,B,seed,reject_0.05,Min.,1st Qu.,Median,Mean,3rd Qu.,Max.\n5,99,2,"));
}
