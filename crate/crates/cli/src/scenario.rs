//! Replication scenarios read from INI files.
//!
//! ```ini
//! [scenario]
//! grid_size = 20
//! permutations = 500
//! seed = 7
//! reps = 200
//!
//! [group.cl0]
//! n = 30
//! kernel = matern32
//! length_scale = 0.2
//! variance = 1
//! noise_sd = 0.1
//!
//! [group.cl6]
//! n = 30
//! kernel = matern32
//! scale = 4
//! ```
//!
//! Groups keep their file order. Unset group keys take the values shown in
//! the first group above, with `mean = zero`, `scale = 1` and no spike.

use std::fs;
use std::path::Path;

use covtransport::simulate::replication_harness;
use covtransport::simulate::{GpSpec, GroupLaw, HarnessResult, Kernel, MeanFn, Scenario, Spike};
use ini::Ini;

use crate::config::{choice, parse_num, MIN_GRID_SIZE, MIN_PERMUTATIONS, STRATA};
use crate::error::{CliError, Result};
use crate::output::{num, summary_cells, write_table, SUMMARY_COLUMNS};

const KERNELS: [(&str, KernelName); 3] = [
    ("squared_exp", KernelName::SquaredExp),
    ("matern32", KernelName::Matern32),
    ("brownian", KernelName::Brownian),
];

const MEANS: [(&str, MeanName); 2] = [("zero", MeanName::Zero), ("sine", MeanName::Sine)];

#[derive(Debug, Clone, Copy)]
enum KernelName {
    SquaredExp,
    Matern32,
    Brownian,
}

#[derive(Debug, Clone, Copy)]
enum MeanName {
    Zero,
    Sine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub reps: usize,
    pub group_names: Vec<String>,
}

fn group_law(name: &str, props: &ini::Properties) -> Result<GroupLaw> {
    let mut kernel = KernelName::Matern32;
    let mut mean = MeanName::Zero;
    let (mut n, mut length_scale, mut variance, mut noise_sd, mut scale) = (30, 0.2, 1.0, 0.1, 1.0_f64);
    let (mut freq, mut magnitude) = (None, None);
    for (k, v) in props.iter() {
        let addr = format!("group.{name}.{k}");
        let a = addr.as_str();
        match k {
            "n" => n = parse_num(a, v)?,
            "kernel" => kernel = choice(a, v, &KERNELS)?,
            "length_scale" => length_scale = parse_num(a, v)?,
            "variance" => variance = parse_num(a, v)?,
            "noise_sd" => noise_sd = parse_num(a, v)?,
            "mean" => mean = choice(a, v, &MEANS)?,
            "scale" => scale = parse_num(a, v)?,
            "spike_frequency" => freq = Some(parse_num(a, v)?),
            "spike_magnitude" => magnitude = Some(parse_num(a, v)?),
            _ => return Err(CliError::Config(format!("unknown setting '{addr}'"))),
        }
    }
    let kernel = match kernel {
        KernelName::SquaredExp => Kernel::SquaredExp,
        KernelName::Matern32 => Kernel::Matern32,
        KernelName::Brownian => Kernel::Brownian,
    };
    let mean = match mean {
        MeanName::Zero => MeanFn::Zero,
        MeanName::Sine => MeanFn::Sine,
    };
    let spike = match (freq, magnitude) {
        (None, None) => None,
        (Some(frequency), Some(relative_magnitude)) => Some(Spike {
            frequency,
            relative_magnitude,
        }),
        _ => {
            return Err(CliError::Config(format!(
                "group.{name}: spike_frequency and spike_magnitude go together"
            )))
        }
    };
    if n < 2 || scale.is_nan() || scale <= 0.0 {
        return Err(CliError::Config(format!(
            "group.{name}: needs n >= 2 and a positive scale"
        )));
    }
    let gp = GpSpec::new(kernel, length_scale, variance)
        .with_noise(noise_sd)
        .with_mean(mean);
    Ok(GroupLaw {
        scale,
        spike,
        ..GroupLaw::new(gp, n)
    })
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut scenario = Scenario {
            grid_size: 50,
            groups: Vec::new(),
            permutations: 500,
            seed: 0,
            strata: Default::default(),
        };
        let mut reps = 100;
        let mut group_names = Vec::new();
        for (section, props) in ini.iter() {
            match section {
                None => {
                    if let Some((k, _)) = props.iter().next() {
                        return Err(CliError::Config(format!("setting '{k}' is outside any section")));
                    }
                }
                Some("scenario") => {
                    for (k, v) in props.iter() {
                        let addr = format!("scenario.{k}");
                        let a = addr.as_str();
                        match k {
                            "grid_size" => scenario.grid_size = parse_num(a, v)?,
                            "permutations" => scenario.permutations = parse_num(a, v)?,
                            "seed" => scenario.seed = parse_num(a, v)?,
                            "strata" => scenario.strata = choice(a, v, &STRATA)?,
                            "reps" => reps = parse_num(a, v)?,
                            _ => return Err(CliError::Config(format!("unknown setting '{addr}'"))),
                        }
                    }
                }
                Some(s) => {
                    let name = s
                        .strip_prefix("group.")
                        .ok_or_else(|| CliError::Config(format!("unknown section [{s}]")))?;
                    scenario.groups.push(group_law(name, props)?);
                    group_names.push(name.to_string());
                }
            }
        }
        if scenario.groups.len() < 2 {
            return Err(CliError::Config(
                "a scenario needs at least two [group.*] sections".into(),
            ));
        }
        if scenario.grid_size < MIN_GRID_SIZE || scenario.permutations < MIN_PERMUTATIONS || reps == 0 {
            return Err(CliError::Config(format!(
                "scenario needs grid_size >= {MIN_GRID_SIZE}, permutations >= {MIN_PERMUTATIONS} and reps >= 1"
            )));
        }
        Ok(Self {
            scenario,
            reps,
            group_names,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn run(&self) -> Result<HarnessResult> {
        Ok(replication_harness(&self.scenario, self.reps)?)
    }
}

/// Writes `harness_pvalues.csv` (one row per replication) and
/// `harness_summary.csv` into `dir`.
pub fn write_harness_result(dir: &Path, file: &ScenarioFile, result: &HarnessResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let header: Vec<String> = ["rep", "statistic", "p_value"].map(String::from).to_vec();
    let rows = result
        .statistics
        .iter()
        .zip(&result.p_values)
        .enumerate()
        .map(|(r, (&t, &p))| vec![(r + 1).to_string(), num(t), num(p)]);
    write_table(&dir.join("harness_pvalues.csv"), &header, rows)?;

    let mut header: Vec<String> = ["reps", "B", "seed", "reject_0.05"].map(String::from).to_vec();
    header.extend(SUMMARY_COLUMNS.map(String::from));
    let mut row = vec![
        file.reps.to_string(),
        file.scenario.permutations.to_string(),
        file.scenario.seed.to_string(),
        num(result.rejection_rate(0.05)),
    ];
    row.extend(summary_cells(&result.summary));
    write_table(&dir.join("harness_summary.csv"), &header, [row])
}
