//! Monte Carlo diagnostics: `E z_T`, the localization ladder, uniform
//! integrability, explosion probes and the combined martingale verdict.

use serde::Serialize;

use crate::conditions::{ConditionReport, Verdict};
use crate::error::{Error, Result};
use crate::model::{norm_sq, CoefficientSet, HistoryView, MarkQuadrature, ModelSpec};
use crate::simulate::{
    map_indices, AcceptedJump, EnsembleConfig, Exit, ExitKind, PathBundle, Simulator, StepObserver, StoppingVariant, TimeGrid,
};
use crate::stats::McEstimate;

/// Default localization levels.
pub const DEFAULT_LEVELS: [f64; 4] = [1e2, 1e3, 1e4, 1e5];
/// Half-width, in standard errors, of the acceptance band for `E z = 1`.
pub const CONFIDENCE_SE: f64 = 3.0;
/// A theorem pass with an empirical defect beyond this many standard errors is a contradiction.
pub const CONTRADICTION_SE: f64 = 5.0;

/// What to extract from every path of a pass.
#[derive(Debug, Clone)]
pub struct PassPlan {
    /// Number of equally spaced checkpoints (0 for none).
    pub checkpoints: usize,
    pub levels: Vec<f64>,
    pub variant: StoppingVariant,
}

impl PassPlan {
    pub fn terminal_only(spec: &ModelSpec) -> Self {
        PassPlan { checkpoints: 0, levels: Vec::new(), variant: StoppingVariant::for_model(spec) }
    }

    pub fn full(spec: &ModelSpec, checkpoints: usize, levels: &[f64]) -> Self {
        PassPlan { checkpoints, levels: levels.to_vec(), variant: StoppingVariant::for_model(spec) }
    }
}

/// Per-path summary retained by a diagnostic pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    /// `log z_T`, or `-inf` when the path left the state space before `T`.
    pub terminal_log_z: f64,
    pub exit: Option<Exit>,
    pub checkpoint_log_z: Vec<f64>,
    /// `log z_{T ^ tau_n ^ zeta}` for every level.
    pub level_log_z: Vec<f64>,
    /// Whether `tau_n ^ zeta <= T` for every level.
    pub level_hit: Vec<bool>,
    /// Whether the state-only time `zeta_n` (ignoring `z`) is `<= T` for every level.
    pub state_hit: Vec<bool>,
    /// `<M^c>_T / 2`.
    pub half_qv: f64,
    /// `M^c_t / 2` at the checkpoints.
    pub half_mc: Vec<f64>,
    pub jump_count: usize,
}

/// Accumulates `log z` in closed form while the path is integrated and
/// extracts the quantities requested by a [`PassPlan`].
struct Recorder<'a> {
    coef: &'a CoefficientSet,
    quadrature: &'a MarkQuadrature,
    levy_on: bool,
    dt: f64,
    plan: &'a PassPlan,
    checkpoints: &'a [usize],
    sig: Vec<f64>,
    log_z: f64,
    mc: f64,
    qv: f64,
    sup: f64,
    jumps: usize,
    cursor: usize,
    checkpoint_log_z: Vec<f64>,
    half_mc: Vec<f64>,
    level_log_z: Vec<Option<f64>>,
    state_hit: Vec<bool>,
}

impl<'a> Recorder<'a> {
    fn new(sim: &'a Simulator<'_>, plan: &'a PassPlan, checkpoints: &'a [usize]) -> Self {
        let spec = sim.spec();
        Recorder {
            coef: &spec.coefficients,
            quadrature: sim.quadrature(),
            levy_on: spec.active_levy().is_some(),
            dt: sim.grid().dt,
            plan,
            checkpoints,
            sig: vec![0.0; spec.d_brownian()],
            log_z: 0.0,
            mc: 0.0,
            qv: 0.0,
            sup: 0.0,
            jumps: 0,
            cursor: 0,
            checkpoint_log_z: Vec::with_capacity(checkpoints.len()),
            half_mc: Vec::with_capacity(checkpoints.len()),
            level_log_z: vec![None; plan.levels.len()],
            state_hit: vec![false; plan.levels.len()],
        }
    }

    fn finish(mut self, bundle: &PathBundle) -> PathRecord {
        let removed_at = bundle.exit.filter(|e| e.removed()).map(|e| e.index);
        while self.checkpoint_log_z.len() < self.checkpoints.len() {
            self.checkpoint_log_z.push(self.log_z);
            self.half_mc.push(0.5 * self.mc);
        }
        if let Some(e) = removed_at {
            for (v, &c) in self.checkpoint_log_z.iter_mut().zip(self.checkpoints) {
                if e <= c {
                    *v = f64::NEG_INFINITY;
                }
            }
        }
        let exploded = bundle.exit.is_some_and(|e| e.kind == ExitKind::Exploded);
        PathRecord {
            terminal_log_z: if removed_at.is_some() { f64::NEG_INFINITY } else { self.log_z },
            exit: bundle.exit,
            checkpoint_log_z: self.checkpoint_log_z,
            level_hit: self.level_log_z.iter().map(|l| l.is_some() || removed_at.is_some()).collect(),
            level_log_z: self.level_log_z.iter().map(|l| l.unwrap_or(self.log_z)).collect(),
            state_hit: self.state_hit.iter().map(|&h| h || exploded).collect(),
            half_qv: 0.5 * self.qv,
            half_mc: self.half_mc,
            jump_count: self.jumps,
        }
    }
}

impl StepObserver for Recorder<'_> {
    fn step(&mut self, _: usize, t: f64, view: &HistoryView<'_>, db: &[f64]) -> Result<()> {
        self.coef.sigma(t, view, &mut self.sig);
        let mut c = 0.0;
        let mut q = 0.0;
        for (s, b) in self.sig.iter().zip(db) {
            c += s * b;
            q += s * s;
        }
        let q = q * self.dt;
        let comp = if self.levy_on { self.quadrature.integrate(|z| self.coef.jump_m(t, view, z)) * self.dt } else { 0.0 };
        self.mc += c;
        self.qv += q;
        self.log_z += c - 0.5 * q - comp;
        Ok(())
    }

    fn jump(&mut self, t: f64, view: &HistoryView<'_>, jump: &AcceptedJump) -> Result<()> {
        let size = self.coef.jump_m(t, view, jump.mark);
        if size <= -1.0 {
            return Err(Error::JumpBelowFloor { time: jump.time, jump: size });
        }
        self.log_z += size.ln_1p();
        self.jumps += 1;
        Ok(())
    }

    fn state(&mut self, i: usize, x: &[f64]) {
        while self.cursor < self.checkpoints.len() && self.checkpoints[self.cursor] == i {
            self.checkpoint_log_z.push(self.log_z);
            self.half_mc.push(0.5 * self.mc);
            self.cursor += 1;
        }
        if self.plan.levels.is_empty() {
            return;
        }
        let s = norm_sq(x);
        let s = if s.is_nan() { f64::INFINITY } else { s };
        self.sup = self.sup.max(s);
        let stat = match self.plan.variant {
            StoppingVariant::Markov => s,
            StoppingVariant::PathDependent => self.sup,
        };
        for (k, &lv) in self.plan.levels.iter().enumerate() {
            if stat >= lv {
                self.state_hit[k] = true;
            }
            if self.level_log_z[k].is_none() && (stat >= lv || self.log_z >= lv.ln()) {
                self.level_log_z[k] = Some(self.log_z);
            }
        }
    }
}

/// Runs one ensemble and keeps the per-path summaries requested by `plan`.
///
/// `log z` is accumulated during integration with the same arithmetic as
/// [`exponential_closed_form`](crate::exponential::exponential_closed_form).
pub fn run_pass(sim: &Simulator<'_>, plan: &PassPlan, n_paths: usize, workers: usize) -> Result<Vec<PathRecord>> {
    let checkpoints = sim.grid().checkpoints(plan.checkpoints);
    map_indices(n_paths, workers, |i| {
        let mut rec = Recorder::new(sim, plan, &checkpoints);
        let bundle = sim.path_observed(i, &mut rec)?;
        Ok(rec.finish(&bundle))
    })
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 paths, got {n_paths}")));
    }
    Ok(())
}

/// `E z_T`, or `E z_{T ^ tau_n}` when a level is given.
#[derive(Debug, Clone, Serialize)]
pub struct EzReport {
    pub level: Option<f64>,
    pub estimate: McEstimate,
    pub absorbed: usize,
    pub killed: usize,
    pub exploded: usize,
}

impl EzReport {
    pub fn from_records(records: &[PathRecord], level: Option<(usize, f64)>) -> Self {
        let logs: Vec<f64> = match level {
            None => records.iter().map(|r| r.terminal_log_z).collect(),
            Some((k, _)) => records.iter().map(|r| r.level_log_z[k]).collect(),
        };
        let count = |kind| records.iter().filter(|r| r.exit.is_some_and(|e| e.kind == kind)).count();
        EzReport {
            level: level.map(|l| l.1),
            estimate: McEstimate::from_logs(&logs),
            absorbed: count(ExitKind::Absorbed),
            killed: count(ExitKind::Killed),
            exploded: count(ExitKind::Exploded),
        }
    }
}

/// Monte Carlo estimate of `E z_T` (or of the stopped mean at `level`).
pub fn estimate_ez(spec: &ModelSpec, grid: &TimeGrid, config: &EnsembleConfig, level: Option<f64>) -> Result<EzReport> {
    check_paths(config.n_paths)?;
    let sim = Simulator::new(spec, *grid, config.seed)?;
    let mut plan = PassPlan::terminal_only(spec);
    if let Some(l) = level {
        plan.levels = vec![l];
    }
    let records = run_pass(&sim, &plan, config.n_paths, config.workers)?;
    Ok(EzReport::from_records(&records, level.map(|l| (0, l))))
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckpointEstimate {
    pub time: f64,
    pub estimate: McEstimate,
    /// `mean <= 1 + 3 se`.
    pub supermartingale_ok: bool,
}

/// `E z_t` at the plan checkpoints; requires at least 100 paths.
pub fn supermartingale_scan(records: &[PathRecord], grid: &TimeGrid, checkpoints: usize) -> Result<Vec<CheckpointEstimate>> {
    if records.len() < 100 {
        return Err(Error::InvalidConfig(format!("supermartingale scan needs at least 100 paths, got {}", records.len())));
    }
    let cps = grid.checkpoints(checkpoints);
    Ok(cps
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let logs: Vec<f64> = records.iter().map(|r| r.checkpoint_log_z[j]).collect();
            let estimate = McEstimate::from_logs(&logs);
            CheckpointEstimate { time: grid.time(c), estimate, supermartingale_ok: estimate.mean <= 1.0 + CONFIDENCE_SE * estimate.se }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderLevel {
    pub level: f64,
    /// `E z_{T ^ tau_n}`; equals one for any local martingale.
    pub stopped: McEstimate,
    /// `E z_T 1{tau_n > T}`; increases to `E z_T`.
    pub survived: McEstimate,
    pub hit_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LadderVerdict {
    /// The surviving mass reaches one.
    NoDefect,
    /// The surviving mass plateaus below one on a sample not dominated by its largest weights.
    MassDefect { defect: f64 },
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderReport {
    pub variant: StoppingVariant,
    pub levels: Vec<LadderLevel>,
    /// Every stopped mean lies within 3 se of one.
    pub localization_consistent: bool,
    pub verdict: LadderVerdict,
}

impl LadderReport {
    pub fn from_records(records: &[PathRecord], levels: &[f64], variant: StoppingVariant) -> Self {
        let n = records.len().max(1) as f64;
        let levels: Vec<LadderLevel> = levels
            .iter()
            .enumerate()
            .map(|(k, &level)| {
                let stopped: Vec<f64> = records.iter().map(|r| r.level_log_z[k]).collect();
                let survived: Vec<f64> =
                    records.iter().map(|r| if r.level_hit[k] { f64::NEG_INFINITY } else { r.level_log_z[k] }).collect();
                LadderLevel {
                    level,
                    stopped: McEstimate::from_logs(&stopped),
                    survived: McEstimate::from_logs(&survived),
                    hit_fraction: records.iter().filter(|r| r.level_hit[k]).count() as f64 / n,
                }
            })
            .collect();
        let localization_consistent = levels.iter().all(|l| l.stopped.within(1.0, CONFIDENCE_SE));
        let verdict = match levels.as_slice() {
            [] => LadderVerdict::Inconclusive,
            [.., last] if last.survived.within(1.0, CONFIDENCE_SE) => LadderVerdict::NoDefect,
            [.., prev, last] => {
                let s = &last.survived;
                let below = 1.0 - s.mean > CONFIDENCE_SE * s.se;
                let plateau = (s.mean - prev.survived.mean).abs() <= CONFIDENCE_SE * (s.se * s.se + prev.survived.se * prev.survived.se).sqrt();
                if below && plateau && !s.dominated {
                    LadderVerdict::MassDefect { defect: 1.0 - s.mean }
                } else {
                    LadderVerdict::Inconclusive
                }
            }
            [_] => LadderVerdict::Inconclusive,
        };
        LadderReport { variant, levels, localization_consistent, verdict }
    }
}

/// Runs the ladder `tau_n` for each level on one shared ensemble.
pub fn localization_ladder(spec: &ModelSpec, grid: &TimeGrid, config: &EnsembleConfig, levels: &[f64]) -> Result<LadderReport> {
    check_paths(config.n_paths)?;
    check_levels(spec, levels)?;
    let sim = Simulator::new(spec, *grid, config.seed)?;
    let plan = PassPlan::full(spec, 0, levels);
    let records = run_pass(&sim, &plan, config.n_paths, config.workers)?;
    Ok(LadderReport::from_records(&records, levels, plan.variant))
}

pub(crate) fn check_levels(spec: &ModelSpec, levels: &[f64]) -> Result<()> {
    let floor = norm_sq(&spec.x0).max(1.0);
    if let Some(bad) = levels.iter().find(|&&l| !(l > floor)) {
        return Err(Error::InvalidConfig(format!("localization level {bad} must exceed max(1, |x0|^2) = {floor}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct UiLevel {
    pub level: f64,
    /// `E[z log z]` at `T ^ tau_n`.
    pub estimate: McEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct UiReport {
    pub levels: Vec<UiLevel>,
    /// The statistic keeps increasing across levels (suspect strict local martingale).
    pub growing: bool,
}

impl UiReport {
    pub fn from_records(records: &[PathRecord], levels: &[f64]) -> Self {
        let levels: Vec<UiLevel> = levels
            .iter()
            .enumerate()
            .map(|(k, &level)| {
                let v: Vec<f64> = records
                    .iter()
                    .map(|r| {
                        let l = r.level_log_z[k];
                        if l.is_finite() {
                            l * l.exp()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                UiLevel { level, estimate: McEstimate::from_values(&v) }
            })
            .collect();
        let growing = levels.len() >= 3
            && levels.windows(2).all(|w| {
                let (a, b) = (&w[0].estimate, &w[1].estimate);
                b.mean - a.mean > CONFIDENCE_SE * (a.se * a.se + b.se * b.se).sqrt()
            });
        UiReport { levels, growing }
    }
}

/// `E[z log z]` at `T ^ tau_n` for each level.
pub fn ui_diagnostic(spec: &ModelSpec, grid: &TimeGrid, config: &EnsembleConfig, levels: &[f64]) -> Result<UiReport> {
    check_paths(config.n_paths)?;
    check_levels(spec, levels)?;
    let sim = Simulator::new(spec, *grid, config.seed)?;
    let records = run_pass(&sim, &PassPlan::full(spec, 0, levels), config.n_paths, config.workers)?;
    Ok(UiReport::from_records(&records, levels))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplosionLevel {
    pub level: f64,
    /// `P(zeta_n <= T)` for the state-only localization.
    pub probability: McEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplosionReport {
    pub levels: Vec<ExplosionLevel>,
    pub exploded_paths: usize,
    /// The hitting probability does not vanish as the level grows.
    pub suspect: bool,
}

impl ExplosionReport {
    pub fn from_records(records: &[PathRecord], levels: &[f64]) -> Self {
        let levels: Vec<ExplosionLevel> = levels
            .iter()
            .enumerate()
            .map(|(k, &level)| {
                let v: Vec<f64> = records.iter().map(|r| r.state_hit[k] as u8 as f64).collect();
                ExplosionLevel { level, probability: McEstimate::from_values(&v) }
            })
            .collect();
        let exploded_paths = records.iter().filter(|r| r.exit.is_some_and(|e| e.kind == ExitKind::Exploded)).count();
        let suspect = exploded_paths > 0
            || match (levels.first(), levels.last()) {
                (Some(a), Some(b)) if levels.len() >= 2 => {
                    b.probability.mean > CONFIDENCE_SE * b.probability.se && b.probability.mean >= 0.5 * a.probability.mean
                }
                _ => false,
            };
        ExplosionReport { levels, exploded_paths, suspect }
    }
}

/// Probability that `|X|^2` (or its running sup) reaches each level before `T`.
pub fn explosion_probe(spec: &ModelSpec, grid: &TimeGrid, config: &EnsembleConfig, levels: &[f64]) -> Result<ExplosionReport> {
    check_paths(config.n_paths)?;
    check_levels(spec, levels)?;
    let sim = Simulator::new(spec, *grid, config.seed)?;
    let records = run_pass(&sim, &PassPlan::full(spec, 0, levels), config.n_paths, config.workers)?;
    Ok(ExplosionReport::from_records(&records, levels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmpiricalVerdict {
    /// `E z_T` is within 3 se of one.
    Martingale,
    /// `E z_T` is below one by more than 5 se with a well-behaved sample.
    Defect,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    /// Sufficient conditions hold and the simulation agrees.
    Both,
    /// Sufficient conditions hold; the simulation is inconclusive.
    TheoremPass,
    /// Conditions fail or are inconclusive; the simulation is consistent with a martingale.
    EmpiricalPass,
    /// Sufficient conditions hold but the simulation shows a mass defect.
    Contradiction,
    /// Conditions fail and the simulation shows a mass defect.
    StrictLocalMartingale,
    Undetermined,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleVerdict {
    pub classification: Classification,
    pub analytic: Verdict,
    pub empirical: EmpiricalVerdict,
    pub defect: f64,
    pub defect_se: f64,
    pub notes: Vec<String>,
}

/// Combines the analytic conditions with the Monte Carlo evidence.
///
/// A heavy-tailed sample (top 0.1% of weights carrying over 20% of the mass)
/// cannot establish a defect, so it never produces a contradiction.
pub fn martingale_verdict(conditions: &ConditionReport, ez: &EzReport, ladder: Option<&LadderReport>) -> MartingaleVerdict {
    let est = &ez.estimate;
    let defect = 1.0 - est.mean;
    let mut notes = Vec::new();
    let empirical = if est.within(1.0, CONFIDENCE_SE) {
        EmpiricalVerdict::Martingale
    } else if defect > CONTRADICTION_SE * est.se && !est.dominated {
        EmpiricalVerdict::Defect
    } else {
        if est.dominated {
            notes.push(format!(
                "top 0.1% of weights carry {:.0}% of the mass; the mean is unreliable",
                100.0 * est.top_mass_fraction
            ));
        }
        EmpiricalVerdict::Inconclusive
    };
    if ez.exploded > 0 {
        notes.push(format!("{} paths exploded before the horizon", ez.exploded));
    }
    if ez.killed > 0 {
        notes.push(format!("{} paths left the state space before the horizon", ez.killed));
    }
    if let Some(l) = ladder {
        if !l.localization_consistent {
            notes.push("a stopped mean differs from one by more than 3 se".into());
        }
        if let LadderVerdict::MassDefect { defect } = l.verdict {
            notes.push(format!("surviving mass plateaus at a defect of {defect:.4}"));
        }
    }
    let classification = match (conditions.overall, empirical) {
        (Verdict::Pass, EmpiricalVerdict::Martingale) => Classification::Both,
        (Verdict::Pass, EmpiricalVerdict::Defect) => Classification::Contradiction,
        (Verdict::Pass, EmpiricalVerdict::Inconclusive) => Classification::TheoremPass,
        (_, EmpiricalVerdict::Martingale) => Classification::EmpiricalPass,
        (Verdict::Fail, EmpiricalVerdict::Defect) => Classification::StrictLocalMartingale,
        _ => Classification::Undetermined,
    };
    MartingaleVerdict { classification, analytic: conditions.overall, empirical, defect, defect_se: est.se, notes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog;
    use crate::exponential::exponential_path;

    #[test]
    fn fused_pass_matches_closed_form() {
        for entry in catalog() {
            let spec = entry.model();
            let grid = TimeGrid::new(spec.horizon, 0.01).unwrap();
            let sim = Simulator::new(&spec, grid, 5).unwrap();
            let plan = PassPlan::full(&spec, 4, &[1e2, 1e4]);
            let recs = run_pass(&sim, &plan, 40, 1).unwrap();
            for (i, r) in recs.iter().enumerate() {
                let b = sim.path(i as u64).unwrap();
                let e = exponential_path(&sim, &b).unwrap();
                let removed = b.exit.is_some_and(|x| x.removed());
                let want = if removed { f64::NEG_INFINITY } else { e.log_z[grid.steps] };
                assert_eq!(r.terminal_log_z, want, "{} path {i}", entry.name);
                assert_eq!(r.half_qv, 0.5 * e.quadratic_variation[grid.steps]);
                for (j, &c) in grid.checkpoints(4).iter().enumerate() {
                    assert_eq!(r.half_mc[j], 0.5 * e.continuous_part[c]);
                }
                assert_eq!(r.jump_count, b.jumps.len());
            }
        }
    }

    #[test]
    fn unit_exponential_has_no_defect() {
        let spec = ModelSpec::new(
            "flat",
            vec![0.0],
            crate::model::CoefficientSet::scalar(|_, _| 0.0, |_, _| 1.0, |_, _| 0.0),
        );
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let cfg = EnsembleConfig { n_paths: 200, seed: 1, workers: 1 };
        let ez = estimate_ez(&spec, &grid, &cfg, None).unwrap();
        assert_eq!(ez.estimate.mean, 1.0);
        assert_eq!(ez.estimate.se, 0.0);
        let ui = ui_diagnostic(&spec, &grid, &cfg, &[10.0, 100.0, 1000.0]).unwrap();
        assert!(ui.levels.iter().all(|l| l.estimate.mean == 0.0));
    }
}
