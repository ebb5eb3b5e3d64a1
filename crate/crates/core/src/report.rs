//! Run configuration and the JSON report of a full diagnostic run.
//!
//! Configuration files are flat `key = value` lines with dotted sections:
//!
//! ```text
//! # comment
//! model.name = cev
//! model.alpha = -0.5
//! sim.T = 1
//! sim.dt = 1e-3
//! sim.paths = 100000
//! sim.seed = 7
//! sim.workers = 4
//! diag.levels = 1e2, 1e3, 1e4
//! diag.checkpoints = 10
//! girsanov.enabled = true
//! out.report = report.json
//! out.csv_paths = paths/
//! out.csv_count = 10
//! out.timestamp = false
//! ```

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::catalog::{catalog_get, ExpectedEz, Params};
use crate::conditions::{benes_verdict, kazamaki_estimate, novikov_estimate, ConditionReport, GrowthDomain, MomentEstimate, Verdict};
use crate::diagnostics::{
    check_levels, martingale_verdict, run_pass, supermartingale_scan, CheckpointEstimate, ExplosionReport, EzReport, LadderReport,
    MartingaleVerdict, PassPlan, UiReport, DEFAULT_LEVELS,
};
use crate::error::{Error, Result};
use crate::measure_change::{girsanov_consistency, Functional, GirsanovReport, TiltConfig};
use crate::model::ModelSpec;
use crate::simulate::{simulate_ensemble, write_path_csv, EnsembleConfig, Simulator, TimeGrid};

/// Environment variable consulted when no seed is configured.
pub const SEED_ENV: &str = "STOCHEXP_SEED";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: String,
    /// Catalog parameter overrides.
    pub params: Params,
    /// Horizon override; the catalog default otherwise.
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: Option<u64>,
    pub levels: Vec<f64>,
    pub checkpoints: usize,
    /// Number of worker threads; 0 uses every available core.
    #[serde(skip)]
    pub workers: usize,
    pub girsanov: bool,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub csv_paths: Option<PathBuf>,
    #[serde(skip)]
    pub csv_count: usize,
    #[serde(skip)]
    pub timestamp: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: String::new(),
            params: Params::new(),
            horizon: None,
            dt: 1e-3,
            n_paths: 10_000,
            seed: None,
            levels: DEFAULT_LEVELS.to_vec(),
            checkpoints: 10,
            workers: 0,
            girsanov: true,
            out: None,
            csv_paths: None,
            csv_count: 10,
            timestamp: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::InvalidConfig(format!("invalid value `{value}` for `{key}`")))
}

/// Parses `1e2, 1e3` or `1e2 1e3`.
pub fn parse_levels(value: &str) -> Result<Vec<f64>> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse::<f64>("levels", s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("invalid value `{value}` for `{key}`"))),
    }
}

impl RunConfig {
    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.name" => self.model = value.trim().to_string(),
            "sim.T" => self.horizon = Some(parse(key, value)?),
            "sim.dt" => self.dt = parse(key, value)?,
            "sim.paths" => self.n_paths = parse(key, value)?,
            "sim.seed" => self.seed = Some(parse(key, value)?),
            "sim.workers" => self.workers = parse(key, value)?,
            "diag.levels" => self.levels = parse_levels(value)?,
            "diag.checkpoints" => self.checkpoints = parse(key, value)?,
            "girsanov.enabled" => self.girsanov = parse_bool(key, value)?,
            "out.report" => self.out = Some(PathBuf::from(value.trim())),
            "out.csv_paths" => self.csv_paths = Some(PathBuf::from(value.trim())),
            "out.csv_count" => self.csv_count = parse(key, value)?,
            "out.timestamp" => self.timestamp = parse_bool(key, value)?,
            _ => match key.strip_prefix("model.") {
                Some(p) if !p.is_empty() => {
                    self.params.insert(p.to_string(), parse(key, value)?);
                }
                _ => return Err(Error::InvalidConfig(format!("unknown configuration key `{key}`"))),
            },
        }
        Ok(())
    }

    /// Applies every `key = value` line of a configuration file.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Fills a missing seed from [`SEED_ENV`].
    pub fn seed_from_env(&mut self) -> Result<()> {
        if self.seed.is_none() {
            if let Ok(v) = std::env::var(SEED_ENV) {
                self.seed = Some(parse(SEED_ENV, &v)?);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.model.is_empty() {
            return bad("no model given".into());
        }
        if self.seed.is_none() {
            return bad(format!("a seed is required (configure sim.seed or set {SEED_ENV})"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if let Some(t) = self.horizon {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("T must be positive, got {t}"));
            }
        }
        if self.n_paths < 100 {
            return bad(format!("at least 100 paths are needed, got {}", self.n_paths));
        }
        if self.checkpoints == 0 {
            return bad("checkpoints must be positive".into());
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return bad("levels must be strictly increasing".into());
        }
        Ok(())
    }

    /// The configured model with overrides and horizon applied.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let entry = catalog_get(&self.model)?;
        let mut params = self.params.clone();
        if let Some(t) = self.horizon {
            params.insert("T".into(), t);
        }
        entry.model_with(&params)
    }
}

/// Echo of the settings that determine the report numbers.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub model: String,
    pub params: Params,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub levels: Vec<f64>,
    pub checkpoints: usize,
    pub girsanov: bool,
    pub version: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct EzSection {
    pub terminal: EzReport,
    pub checkpoints: Vec<CheckpointEstimate>,
    pub novikov: MomentEstimate,
    pub kazamaki: MomentEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderSection {
    #[serde(flatten)]
    pub report: LadderReport,
    pub explosion: ExplosionReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictSection {
    #[serde(flatten)]
    pub verdict: MartingaleVerdict,
    /// Catalog expectations for the analytic verdict and for `E z_T`.
    pub expected_conditions: Verdict,
    pub expected_ez: ExpectedEz,
}

/// Execution details; all omitted when timestamps are disabled, so that the
/// report bytes depend only on the configuration echo.
#[derive(Debug, Clone, Serialize)]
pub struct Runtime {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unix_time: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config: ConfigEcho,
    pub conditions: ConditionReport,
    pub ez: EzSection,
    pub ladder: LadderSection,
    pub ui_diagnostic: UiReport,
    /// `None` when disabled in the configuration.
    pub girsanov: Option<Vec<GirsanovReport>>,
    pub verdict: VerdictSection,
    pub runtime: Runtime,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report values serialize");
        s.push('\n');
        s
    }
}

/// Runs conditions, the Monte Carlo diagnostics and, optionally, the Girsanov comparison.
///
/// Without the sufficient conditions, the Girsanov comparison is localized at the
/// highest ladder level.
pub fn run(config: &RunConfig) -> Result<Report> {
    let started = Instant::now();
    config.validate()?;
    let entry = catalog_get(&config.model)?;
    let spec = config.model_spec()?;
    let seed = config.seed.expect("validated");
    let grid = TimeGrid::new(spec.horizon, config.dt)?;
    check_levels(&spec, &config.levels)?;

    let conditions = benes_verdict(&spec, &GrowthDomain::default())?;
    let sim = Simulator::new(&spec, grid, seed)?;
    let plan = PassPlan::full(&spec, config.checkpoints, &config.levels);
    let records = run_pass(&sim, &plan, config.n_paths, config.workers)?;

    let terminal = EzReport::from_records(&records, None);
    let half_qv: Vec<f64> = records.iter().map(|r| r.half_qv).collect();
    let half_mc: Vec<Vec<f64>> = (0..config.checkpoints).map(|j| records.iter().map(|r| r.half_mc[j]).collect()).collect();
    let ez = EzSection {
        checkpoints: supermartingale_scan(&records, &grid, config.checkpoints)?,
        novikov: novikov_estimate(&half_qv),
        kazamaki: kazamaki_estimate(&half_mc),
        terminal,
    };
    let ladder = LadderSection {
        report: LadderReport::from_records(&records, &config.levels, plan.variant),
        explosion: ExplosionReport::from_records(&records, &config.levels),
    };
    let ui_diagnostic = UiReport::from_records(&records, &config.levels);
    drop(records);

    let girsanov = if config.girsanov {
        let level = if conditions.overall == Verdict::Pass { None } else { config.levels.last().copied() };
        let ens = EnsembleConfig { n_paths: config.n_paths, seed, workers: config.workers };
        Some(girsanov_consistency(&spec, &Functional::standard(&spec), &grid, &ens, level, &TiltConfig::default())?)
    } else {
        None
    };

    if let Some(dir) = &config.csv_paths {
        write_csv_paths(dir, &spec, &grid, seed, config.csv_count.min(config.n_paths), config.workers)?;
    }

    let verdict = VerdictSection {
        verdict: martingale_verdict(&conditions, &ez.terminal, Some(&ladder.report)),
        expected_conditions: entry.expected_verdict,
        expected_ez: entry.expected_ez,
    };
    let runtime = Runtime {
        workers: config.timestamp.then_some(config.workers),
        unix_time: config.timestamp.then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)),
        elapsed_seconds: config.timestamp.then(|| started.elapsed().as_secs_f64()),
    };
    Ok(Report {
        config: ConfigEcho {
            model: spec.name.clone(),
            params: config.params.clone(),
            horizon: spec.horizon,
            dt: grid.dt,
            n_paths: config.n_paths,
            seed,
            levels: config.levels.clone(),
            checkpoints: config.checkpoints,
            girsanov: config.girsanov,
            version: env!("CARGO_PKG_VERSION"),
        },
        conditions,
        ez,
        ladder,
        ui_diagnostic,
        girsanov,
        verdict,
        runtime,
    })
}

/// Writes the first `count` paths of the run as `path_<index>.csv` in `dir`.
pub fn write_csv_paths(dir: &Path, spec: &ModelSpec, grid: &TimeGrid, seed: u64, count: usize, workers: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let paths = simulate_ensemble(spec, grid, None, &EnsembleConfig { n_paths: count, seed, workers })?;
    for p in &paths {
        write_path_csv(&dir.join(format!("path_{}.csv", p.path_index)), p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_and_overrides() {
        let mut c = RunConfig::default();
        c.apply_text("# demo\nmodel.name = cev\nsim.dt = 0.01 # coarse\nsim.seed=9\ndiag.levels = 1e2, 1e3\nmodel.lambda = 2\n").unwrap();
        assert_eq!(c.model, "cev");
        assert_eq!(c.dt, 0.01);
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.levels, vec![100.0, 1000.0]);
        assert_eq!(c.params["lambda"], 2.0);
        c.set("sim.seed", "11").unwrap();
        assert_eq!(c.seed, Some(11));
        assert!(c.set("sim.bogus", "1").is_err());
        assert!(c.apply_text("model.name cev").is_err());
        assert!(c.set("sim.paths", "-3").is_err());
    }

    #[test]
    fn validation_requires_seed_and_model() {
        let mut c = RunConfig { model: "cev".into(), ..Default::default() };
        assert!(c.validate().is_err());
        c.seed = Some(1);
        c.validate().unwrap();
        c.levels = vec![1e3, 1e2];
        assert!(c.validate().is_err());
    }
}
