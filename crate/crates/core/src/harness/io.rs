//! Output files: per-level CSV, comparison CSV, summaries and run bundles.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimator::{LevelStatistics, MultilevelEstimate, MultilevelRun};
use crate::harness::config::ExperimentConfig;
use crate::posterior::ObservationSet;
use crate::samplers;

pub const LEVEL_HEADER: &str =
    "level,h,m,R,sigma2_F,beta,N_kept,mean_Y,var_GR,accept_coarse,accept_fine,iact,cost_units";

pub const COMPARE_HEADER: &str =
    "epsilon,ml_q_hat,sl_q_hat,ml_cost,sl_cost,ml_cost_eps2,sl_cost_eps2,cost_ratio,ml_burn_in_cost,sl_burn_in_cost";

/// Shortest round-trip representation; bit-stable across runs.
fn num(x: f64) -> String {
    format!("{x}")
}

pub fn level_csv(levels: &[LevelStatistics]) -> String {
    let mut s = String::new();
    writeln!(s, "{LEVEL_HEADER}").unwrap();
    for l in levels {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            l.level,
            num(l.h),
            l.m,
            l.r,
            num(l.sigma2_f),
            num(l.beta),
            l.n_kept,
            num(l.mean),
            num(l.variance),
            l.accept_coarse.map(num).unwrap_or_default(),
            num(l.accept_fine),
            num(l.iact),
            num(l.cost_units),
        )
        .unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub epsilon: f64,
    pub multilevel: MultilevelEstimate,
    pub single: MultilevelEstimate,
}

impl CompareRow {
    pub fn cost_ratio(&self) -> f64 {
        self.multilevel.total_cost / self.single.total_cost
    }
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = String::new();
    writeln!(s, "{COMPARE_HEADER}").unwrap();
    for r in rows {
        let e2 = r.epsilon * r.epsilon;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            num(r.epsilon),
            num(r.multilevel.q_hat),
            num(r.single.q_hat),
            num(r.multilevel.total_cost),
            num(r.single.total_cost),
            num(r.multilevel.total_cost * e2),
            num(r.single.total_cost * e2),
            num(r.cost_ratio()),
            num(r.multilevel.burn_in_cost),
            num(r.single.burn_in_cost),
        )
        .unwrap();
    }
    s
}

/// Structured summary of one estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub q_hat: f64,
    pub epsilon: Option<f64>,
    pub total_cost: f64,
    pub burn_in_cost: f64,
    pub variance_sum: f64,
    pub converged: bool,
    pub master_seed: u64,
    pub data_seed: u64,
    pub levels: Vec<LevelStatistics>,
    pub warnings: Vec<String>,
}

impl Summary {
    pub fn new(e: &MultilevelEstimate, data_seed: u64) -> Self {
        Self {
            q_hat: e.q_hat,
            epsilon: e.epsilon,
            total_cost: e.total_cost,
            burn_in_cost: e.burn_in_cost,
            variance_sum: e.variance_sum,
            converged: e.converged,
            master_seed: e.seed,
            data_seed,
            levels: e.levels.clone(),
            warnings: e.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}

pub fn seed_manifest(e: &MultilevelEstimate, data_seed: u64) -> String {
    let mut s = format!("master_seed={}\ndata_seed={}\n", e.seed, data_seed);
    for id in &e.streams {
        writeln!(s, "{id}").unwrap();
    }
    s
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Files written for one run, relative to the bundle directory.
pub mod names {
    pub const CONFIG: &str = "config.toml";
    pub const OBSERVATIONS: &str = "observations.json";
    pub const LEVELS: &str = "levels.csv";
    pub const SUMMARY: &str = "summary.json";
    pub const SEEDS: &str = "seeds.txt";
    pub const COMPARE: &str = "compare.csv";
}

/// Config snapshot, observations, CSVs, summary and seed manifest.
///
/// The config snapshot points at the bundled observations, so
/// `estimate --config <dir>/config.toml` reproduces the run.
pub fn export_run_bundle(
    dir: &Path,
    run: &MultilevelRun,
    config: &ExperimentConfig,
    data: &ObservationSet,
    samples: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut snapshot = config.clone();
    snapshot.data.file = Some(PathBuf::from(names::OBSERVATIONS));
    snapshot.output.dir = None;
    let e = &run.estimate;
    let mut files = vec![
        (names::CONFIG.to_string(), snapshot.to_toml()),
        (names::OBSERVATIONS.to_string(), data.to_json()? + "\n"),
        (names::LEVELS.to_string(), level_csv(&e.levels)),
        (names::SUMMARY.to_string(), Summary::new(e, data.seed).to_json()),
        (names::SEEDS.to_string(), seed_manifest(e, data.seed)),
    ];
    if samples {
        for (l, group) in run.chains.iter().enumerate() {
            for c in group {
                let mut buf = Vec::new();
                samplers::write_records(l, c.records(), &mut buf, true)?;
                files.push((
                    format!("samples_level{}_chain{}.csv", l, c.chain),
                    String::from_utf8(buf).expect("ascii"),
                ));
            }
        }
    }
    let mut out = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        write(&p, &text)?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(level: usize, coarse: Option<f64>) -> LevelStatistics {
        LevelStatistics {
            level,
            h: 1.0 / 15.0,
            m: 16,
            r: 4,
            sigma2_f: 1e-4,
            beta: 0.15,
            n_kept: 100,
            mean: 1.25,
            variance: 0.5,
            chain_means: vec![],
            chain_variances: vec![],
            accept_coarse: coarse,
            accept_fine: 0.5,
            iact: 2.0,
            cost_per_sample: 256.0,
            cost_units: 256000.0,
            burn_in_cost: 0.0,
        }
    }

    #[test]
    fn level_csv_golden() {
        let text = level_csv(&[stats(0, None), stats(1, Some(0.25))]);
        let expected = "\
level,h,m,R,sigma2_F,beta,N_kept,mean_Y,var_GR,accept_coarse,accept_fine,iact,cost_units
0,0.06666666666666667,16,4,0.0001,0.15,100,1.25,0.5,,0.5,2,256000
1,0.06666666666666667,16,4,0.0001,0.15,100,1.25,0.5,0.25,0.5,2,256000
";
        assert_eq!(text, expected);
    }
}
