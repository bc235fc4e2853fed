//! Monte Carlo experiments: declarative configuration, seeded parallel
//! replications, and CSV reports of the distance and segmentation metrics.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MicaError, Result};
use crate::gmica::{algorithm1, estimate_gmica_known, DEFAULT_C0, DEFAULT_EPS_FROB, DEFAULT_MAX_OUTER};
use crate::mica::{estimate_mica, estimate_mica_sequential, MicaConfig};
use crate::ortho::{d_distance_scaled, dtilde_distance_scaled};
use crate::simgen::{generate, whiten, Design, DgpSpec, InnovationDist, DEFAULT_BURN_IN};

/// Runs fail outright when more than this share of replications error.
pub const MAX_FAILURE_SHARE: f64 = 0.2;
/// Recorded in every report: distances are measured against the
/// whitening-adjusted truth.
pub const TRUTH_CONVENTION: &str = "adjusted";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mica,
    MicaSequential,
    GmicaKnown,
    GmicaAlg1,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mica => "mica",
            Self::MicaSequential => "mica-sequential",
            Self::GmicaKnown => "gmica-known",
            Self::GmicaAlg1 => "gmica-alg1",
        }
    }

    fn is_group(&self) -> bool {
        matches!(self, Self::GmicaKnown | Self::GmicaAlg1)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = MicaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mica" => Ok(Self::Mica),
            "mica-sequential" => Ok(Self::MicaSequential),
            "gmica-known" => Ok(Self::GmicaKnown),
            "gmica-alg1" => Ok(Self::GmicaAlg1),
            other => Err(MicaError::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub design: Design,
    pub p: usize,
    pub n: usize,
    pub dist: InnovationDist,
    pub burn_in: usize,
    pub method: Method,
    pub h0: usize,
    pub replications: usize,
    pub base_seed: u64,
    pub c0: f64,
    pub n_starts: usize,
    pub max_iter: usize,
    pub tol_obj: f64,
    pub eps_frob: f64,
    pub max_outer: usize,
    pub workers: usize,
    pub output_path: Option<String>,
}

// On-disk layout: [design], [method] and [run] sections.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    design: DesignSection,
    method: MethodSection,
    #[serde(default)]
    run: RunSection,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignSection {
    name: Design,
    p: usize,
    n: usize,
    dist: InnovationDist,
    burn_in: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MethodSection {
    name: Method,
    h0: usize,
    c0: Option<f64>,
    n_starts: Option<usize>,
    max_iter: Option<usize>,
    tol_obj: Option<f64>,
    eps_frob: Option<f64>,
    max_outer: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RunSection {
    replications: Option<usize>,
    base_seed: Option<u64>,
    workers: Option<usize>,
    output: Option<String>,
}

impl ExperimentConfig {
    /// Defaults for everything except the design and method.
    pub fn new(design: Design, p: usize, n: usize, dist: InnovationDist, method: Method, h0: usize) -> Self {
        let mica = MicaConfig::default();
        Self {
            design,
            p,
            n,
            dist,
            burn_in: DEFAULT_BURN_IN,
            method,
            h0,
            replications: 100,
            base_seed: 1,
            c0: DEFAULT_C0,
            n_starts: mica.n_starts,
            max_iter: mica.max_iter,
            tol_obj: mica.tol_obj,
            eps_frob: DEFAULT_EPS_FROB,
            max_outer: DEFAULT_MAX_OUTER,
            workers: 1,
            output_path: None,
        }
    }

    /// Parse the sectioned `key = value` format. Errors carry the line.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .map_or(String::new(), |l| format!("line {l}: "));
            MicaError::Config(format!("{line}{}", e.message()))
        })?;
        let mut cfg = Self::new(
            file.design.name,
            file.design.p,
            file.design.n,
            file.design.dist,
            file.method.name,
            file.method.h0,
        );
        let m = file.method;
        let r = file.run;
        cfg.burn_in = file.design.burn_in.unwrap_or(cfg.burn_in);
        cfg.c0 = m.c0.unwrap_or(cfg.c0);
        cfg.n_starts = m.n_starts.unwrap_or(cfg.n_starts);
        cfg.max_iter = m.max_iter.unwrap_or(cfg.max_iter);
        cfg.tol_obj = m.tol_obj.unwrap_or(cfg.tol_obj);
        cfg.eps_frob = m.eps_frob.unwrap_or(cfg.eps_frob);
        cfg.max_outer = m.max_outer.unwrap_or(cfg.max_outer);
        cfg.replications = r.replications.unwrap_or(cfg.replications);
        cfg.base_seed = r.base_seed.unwrap_or(cfg.base_seed);
        cfg.workers = r.workers.unwrap_or(cfg.workers);
        cfg.output_path = r.output;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(MicaError::Config("replications must be at least 1".into()));
        }
        if self.h0 == 0 {
            return Err(MicaError::Config("h0 must be at least 1".into()));
        }
        if !(self.c0 > 0.0 && self.c0 <= 1.0) {
            return Err(MicaError::Config(format!("c0 must lie in (0, 1], got {}", self.c0)));
        }
        if self.workers == 0 {
            return Err(MicaError::Config("workers must be at least 1".into()));
        }
        if self.max_outer == 0 {
            return Err(MicaError::Config("max_outer must be at least 1".into()));
        }
        if self.method.is_group() && !self.design.is_group() {
            return Err(MicaError::Config(format!(
                "method {} needs a group design, got {}",
                self.method, self.design
            )));
        }
        self.dgp(self.base_seed).validate()?;
        self.mica(self.base_seed).validate()
    }

    pub fn dgp(&self, seed: u64) -> DgpSpec {
        DgpSpec {
            burn_in: self.burn_in,
            ..DgpSpec::new(self.design, self.p, self.n, self.dist, seed)
        }
    }

    pub fn mica(&self, seed: u64) -> MicaConfig {
        MicaConfig {
            h0: self.h0,
            n_starts: self.n_starts,
            max_iter: self.max_iter,
            tol_obj: self.tol_obj,
            seed,
            ..MicaConfig::default()
        }
    }

    /// Short label identifying the setting in reports.
    pub fn setting(&self) -> String {
        format!(
            "{}/{}/p={}/n={}/h0={}/{}",
            self.design, self.dist, self.p, self.n, self.h0, self.method
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub index: usize,
    pub seed: u64,
    /// Scaled D^2 (MICA) or D~^2 (group methods); `None` when the grouping
    /// was wrong or the replication failed.
    pub distance: Option<f64>,
    pub groups_found: Vec<usize>,
    pub correct_segmentation: bool,
    /// Outer passes of the grouping loop (`gmica-alg1` only).
    pub outer_iterations: Option<usize>,
    pub converged: bool,
    pub runtime: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub mean_distance: f64,
    pub sd_distance: f64,
    pub pi: f64,
    pub failed: usize,
    pub total_runtime: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub setting: String,
    pub config: ExperimentConfig,
    pub per_replication: Vec<ReplicationRecord>,
    pub summary: ExperimentSummary,
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn run_one(cfg: &ExperimentConfig, index: usize) -> ReplicationRecord {
    let seed = cfg.base_seed + index as u64;
    let start = Instant::now();
    let outcome = replicate(cfg, seed);
    let runtime = start.elapsed().as_secs_f64();
    match outcome {
        Ok((distance, groups_found, correct, outer, converged)) => ReplicationRecord {
            index,
            seed,
            distance,
            groups_found,
            correct_segmentation: correct,
            outer_iterations: outer,
            converged,
            runtime,
            error: None,
        },
        Err(e) => {
            warn!("replication {index} (seed {seed}) failed: {e}");
            ReplicationRecord {
                index,
                seed,
                distance: None,
                groups_found: Vec::new(),
                correct_segmentation: false,
                outer_iterations: None,
                converged: false,
                runtime,
                error: Some(e.to_string()),
            }
        }
    }
}

type Outcome = (Option<f64>, Vec<usize>, bool, Option<usize>, bool);

fn replicate(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome> {
    let data = generate(&cfg.dgp(seed))?;
    let (w, _) = whiten(&data.y)?;
    let mcfg = cfg.mica(seed);
    let truth = &data.b_true;
    let true_sizes = data.groups_true.sizes();
    match cfg.method {
        Method::Mica | Method::MicaSequential => {
            let est = if cfg.method == Method::Mica {
                estimate_mica(&w, &mcfg)?
            } else {
                estimate_mica_sequential(&w, &mcfg)?
            };
            let d = d_distance_scaled(truth, &est.a_hat)?;
            Ok((Some(d), vec![1; cfg.p], true, None, est.converged))
        }
        Method::GmicaKnown => {
            let est = estimate_gmica_known(&w, &data.groups_true, &mcfg)?;
            let d = dtilde_distance_scaled(&truth.blocks(true_sizes)?, &est.a_hat.blocks(true_sizes)?)?;
            Ok((Some(d), true_sizes.to_vec(), true, None, est.converged))
        }
        Method::GmicaAlg1 => {
            let est = algorithm1(&w, &mcfg, cfg.c0, cfg.eps_frob, cfg.max_outer)?;
            let found = est.groups.sizes().to_vec();
            let correct = sorted(found.clone()) == sorted(true_sizes.to_vec());
            let d = if correct {
                Some(dtilde_distance_scaled(
                    &truth.blocks(true_sizes)?,
                    &est.a_hat.blocks(&found)?,
                )?)
            } else {
                None
            };
            Ok((d, found, correct, Some(est.iterations), est.converged))
        }
    }
}

/// Run every replication (seed `base_seed + r`) on a pool of `workers`
/// threads and aggregate in replication order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| MicaError::Config(format!("cannot start worker pool: {e}")))?;
    let records: Vec<ReplicationRecord> =
        pool.install(|| (0..cfg.replications).into_par_iter().map(|r| run_one(cfg, r)).collect());
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed as f64 > MAX_FAILURE_SHARE * cfg.replications as f64 {
        return Err(MicaError::TooManyFailures {
            failed,
            total: cfg.replications,
        });
    }
    let distances: Vec<f64> = records.iter().filter_map(|r| r.distance).collect();
    let (mean_distance, sd_distance) = mean_sd(&distances);
    let correct = records.iter().filter(|r| r.correct_segmentation).count();
    let summary = ExperimentSummary {
        mean_distance,
        sd_distance,
        pi: correct as f64 / cfg.replications as f64,
        failed,
        total_runtime: start.elapsed().as_secs_f64(),
    };
    Ok(ExperimentReport {
        setting: cfg.setting(),
        config: cfg.clone(),
        per_replication: records,
        summary,
    })
}

/// Mean and sample standard deviation (`n - 1` divisor; 0 for fewer than
/// two values, NaN mean for none).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fixed-width scientific formatting with 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

impl ExperimentReport {
    /// Summary row. With `timing` off the runtime column holds `NA`, which
    /// makes the file a pure function of the configuration.
    pub fn write_summary_csv<W: Write>(&self, out: &mut W, timing: bool) -> io::Result<()> {
        writeln!(out, "setting,mean_d2,sd_d2,runtime,pi,replications,failed,truth_convention")?;
        let runtime = if timing {
            fmt_float(self.summary.total_runtime)
        } else {
            "NA".into()
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            self.setting,
            fmt_float(self.summary.mean_distance),
            fmt_float(self.summary.sd_distance),
            runtime,
            fmt_float(self.summary.pi),
            self.config.replications,
            self.summary.failed,
            TRUTH_CONVENTION
        )
    }

    pub fn write_replications_csv<W: Write>(&self, out: &mut W, timing: bool) -> io::Result<()> {
        writeln!(
            out,
            "index,seed,distance,groups_found,correct_segmentation,outer_iterations,converged,runtime,error"
        )?;
        for r in &self.per_replication {
            let groups: Vec<String> = r.groups_found.iter().map(usize::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.index,
                r.seed,
                r.distance.map_or("NA".into(), fmt_float),
                groups.join(";"),
                r.correct_segmentation,
                r.outer_iterations.map_or("NA".into(), |k| k.to_string()),
                r.converged,
                if timing { fmt_float(r.runtime) } else { "NA".into() },
                r.error.as_deref().unwrap_or("").replace([',', '\n'], " ")
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[design]
name = "mica-ex1"
p = 3
n = 150
dist = "t"

[method]
name = "mica"
h0 = 1
n_starts = 20

[run]
replications = 3
base_seed = 7
workers = 2
"#;

    #[test]
    fn parses_config_and_reports_line_of_error() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.design, Design::MicaEx1);
        assert_eq!(cfg.dist, InnovationDist::StudentT3);
        assert_eq!(cfg.n_starts, 20);
        assert_eq!(cfg.replications, 3);
        assert_eq!(cfg.c0, DEFAULT_C0);
        assert_eq!(cfg.setting(), "mica-ex1/t/p=3/n=150/h0=1/mica");

        let bad = SAMPLE.replace("p = 3", "p = \"three\"");
        match ExperimentConfig::from_toml(&bad) {
            Err(MicaError::Config(msg)) => assert!(msg.starts_with("line 4"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let zero = SAMPLE.replace("replications = 3", "replications = 0");
        assert!(ExperimentConfig::from_toml(&zero).is_err());
        let mismatch = SAMPLE.replace("name = \"mica\"", "name = \"gmica-alg1\"");
        assert!(ExperimentConfig::from_toml(&mismatch).is_err());
    }

    #[test]
    fn single_replication_summary_equals_row() {
        let mut cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        cfg.replications = 1;
        let rep = run_experiment(&cfg).unwrap();
        assert_eq!(rep.per_replication.len(), 1);
        let d = rep.per_replication[0].distance.unwrap();
        assert_eq!(rep.summary.mean_distance, d);
        assert_eq!(rep.summary.sd_distance, 0.0);
        assert_eq!(rep.summary.pi, 1.0);
    }

    #[test]
    fn parallel_matches_serial_and_is_byte_stable() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let serial = ExperimentConfig { workers: 1, ..cfg.clone() };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&serial).unwrap();
        let render = |r: &ExperimentReport| {
            let mut buf = Vec::new();
            r.write_summary_csv(&mut buf, false).unwrap();
            r.write_replications_csv(&mut buf, false).unwrap();
            buf
        };
        assert_eq!(render(&a), render(&b));
        let seeds: Vec<u64> = a.per_replication.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![7, 8, 9]);
    }

    #[test]
    fn mean_sd_oracle() {
        let (m, s) = mean_sd(&[1.0, 2.0, 4.0]);
        assert!((m - 7.0 / 3.0).abs() < 1e-15);
        // sum of squared deviations 14/3, divided by 2
        assert!((s - (7.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(mean_sd(&[]).0.is_nan());
        assert_eq!(fmt_float(0.5), "5.0000000000000000e-1");
    }
}
