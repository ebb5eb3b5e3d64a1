//! Time grid, driver noise, the left-point Euler integrator and ensembles.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{norm_sq, Boundary, Dependence, HistoryView, LevyMeasure, MarkQuadrature, ModelSpec};
use crate::rng;

/// Number of quadrature nodes used for compensators of non-atomic mark laws.
pub const QUADRATURE_NODES: usize = 64;

/// Uniform grid `t_i = i * dt` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
    pub dt: f64,
}

impl TimeGrid {
    /// `dt` must divide the horizon up to a relative error of 1e-9.
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite() && dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("need positive horizon and step, got T={horizon}, dt={dt}")));
        }
        let steps = (horizon / dt).round();
        if steps < 1.0 || (steps * dt - horizon).abs() > 1e-9 * horizon {
            return Err(Error::InvalidConfig(format!("step {dt} does not divide horizon {horizon}")));
        }
        let steps = steps as usize;
        Ok(TimeGrid { horizon, steps, dt: horizon / steps as f64 })
    }

    pub fn time(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.horizon
        } else {
            i as f64 * self.dt
        }
    }

    /// Grid index of the interval `(t_i, t_{i+1}]` containing `t > 0`.
    pub fn step_of(&self, t: f64) -> usize {
        let k = (t / self.dt).ceil() as usize;
        k.saturating_sub(1).min(self.steps - 1)
    }

    /// Grid indices closest to `k` equally spaced checkpoints `T/k, 2T/k, ..., T`.
    pub fn checkpoints(&self, k: usize) -> Vec<usize> {
        (1..=k).map(|j| ((j as f64 / k as f64) * self.steps as f64).round() as usize).collect()
    }
}

/// A proposed jump of the Poisson random measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    pub step: usize,
    pub mark: f64,
    /// Uniform variate used when the jump is thinned.
    pub accept_u: f64,
}

/// Brownian increments (row-major `steps x d_brownian`) and jump proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverPath {
    pub d_brownian: usize,
    pub increments: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
}

/// Draws Brownian increments and a Poisson(lambda T) number of jumps with
/// uniform times and marks from the mark law.
pub fn simulate_driver(grid: &TimeGrid, levy: Option<&LevyMeasure>, d_brownian: usize, rng: &mut ChaCha8Rng) -> DriverPath {
    simulate_driver_scaled(grid, levy, d_brownian, 1.0, rng)
}

/// Same as [`simulate_driver`] with the jump intensity multiplied by `intensity_factor`.
pub fn simulate_driver_scaled(
    grid: &TimeGrid,
    levy: Option<&LevyMeasure>,
    d_brownian: usize,
    intensity_factor: f64,
    rng: &mut ChaCha8Rng,
) -> DriverPath {
    let sq = grid.dt.sqrt();
    let increments: Vec<f64> = (0..grid.steps * d_brownian)
        .map(|_| {
            let n: f64 = rng.sample(StandardNormal);
            n * sq
        })
        .collect();
    let mut jumps = Vec::new();
    if let Some(levy) = levy {
        let rate = levy.total_mass() * intensity_factor * grid.horizon;
        if rate > 0.0 {
            let count = Poisson::new(rate).map(|p| p.sample(rng) as usize).unwrap_or(0);
            let mut times: Vec<f64> = (0..count).map(|_| grid.horizon * (1.0 - rng.random::<f64>())).collect();
            times.sort_by(f64::total_cmp);
            for t in times {
                let mark = levy.sample_mark(rng);
                let accept_u = rng.random::<f64>();
                jumps.push(JumpEvent { time: t, step: grid.step_of(t), mark, accept_u });
            }
        }
    }
    DriverPath { d_brownian, increments, jumps }
}

/// Measure under which paths are generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    Reference,
    /// Girsanov-tilted measure; jump proposals run at `envelope * K` and are
    /// accepted with probability `(1 + phi) / envelope`.
    Tilted { envelope: f64 },
}

/// Reason a path stopped evolving before the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitKind {
    /// Clamped at an absorbing boundary; the stochastic exponential is frozen too.
    Absorbed,
    /// Left the state space through a killing boundary.
    Killed,
    /// Exceeded the explosion radius or overflowed.
    Exploded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Exit {
    pub index: usize,
    pub kind: ExitKind,
}

impl Exit {
    /// Whether the path has left the state space (as opposed to being absorbed).
    pub fn removed(&self) -> bool {
        !matches!(self.kind, ExitKind::Absorbed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AcceptedJump {
    pub step: usize,
    pub time: f64,
    pub mark: f64,
}

/// One simulated path with everything needed to rebuild the martingale.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub path_index: u64,
    pub grid: TimeGrid,
    pub dim: usize,
    pub d_brownian: usize,
    /// `(steps + 1) x dim` states; frozen after an exit or a stop.
    pub x: Vec<f64>,
    /// Brownian increments under the reference measure; zero after an exit.
    pub brownian: Vec<f64>,
    /// Driver increments under the simulating measure when it differs from the reference one.
    pub noise: Option<Vec<f64>>,
    pub jumps: Vec<AcceptedJump>,
    /// Volterra integral at every grid point, for Volterra models.
    pub volterra: Option<Vec<f64>>,
    pub exit: Option<Exit>,
    /// Stochastic exponential at every grid point, once computed.
    pub z: Option<Vec<f64>>,
    /// Index from which the path is frozen by a stopping rule.
    pub stop: Option<usize>,
}

impl PathBundle {
    pub fn state(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.state(self.grid.steps)
    }

    pub fn increments(&self, i: usize) -> &[f64] {
        &self.brownian[i * self.d_brownian..(i + 1) * self.d_brownian]
    }

    /// Last grid index at which the dynamics are active (exclusive upper bound on steps).
    pub fn active_steps(&self) -> usize {
        let mut n = self.grid.steps;
        if let Some(e) = self.exit {
            n = n.min(e.index);
        }
        if let Some(s) = self.stop {
            n = n.min(s);
        }
        n
    }

    /// `sup_{j <= i} |X_j|^2` for every grid index.
    pub fn running_sup_sq(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.grid.steps + 1);
        let mut s = 0.0f64;
        for i in 0..=self.grid.steps {
            s = s.max(norm_sq(self.state(i)));
            out.push(s);
        }
        out
    }

    /// Calls `f(i, view)` for the history view at each grid point `i < upto`.
    pub fn for_each_view(&self, upto: usize, mut f: impl FnMut(usize, &HistoryView<'_>) -> Result<()>) -> Result<()> {
        let d = self.dim;
        let x0 = &self.x[..d];
        let mut sup = norm_sq(x0);
        for i in 0..upto {
            let cur = self.state(i);
            sup = sup.max(norm_sq(cur));
            let v = self.volterra.as_ref().map(|v| v[i]).unwrap_or(0.0);
            let view = HistoryView::new(x0, &self.x[..i * d], cur, self.grid.dt, self.grid.time(i), sup, v);
            f(i, &view)?;
        }
        Ok(())
    }
}

/// Receives the quantities produced while a path is integrated.
///
/// Coefficients evaluated from `view` see the same pre-step history as the
/// integrator, so observers can build path functionals without a second pass.
pub trait StepObserver {
    /// Step `i` from `t`; `db` is the Brownian increment under the reference measure.
    fn step(&mut self, i: usize, t: f64, view: &HistoryView<'_>, db: &[f64]) -> Result<()>;
    /// A jump accepted during the step whose pre-step history is `view`.
    fn jump(&mut self, t: f64, view: &HistoryView<'_>, jump: &AcceptedJump) -> Result<()>;
    /// Final state at grid index `i`; not called past an exit.
    fn state(&mut self, i: usize, x: &[f64]);
}

impl StepObserver for () {
    fn step(&mut self, _: usize, _: f64, _: &HistoryView<'_>, _: &[f64]) -> Result<()> {
        Ok(())
    }

    fn jump(&mut self, _: f64, _: &HistoryView<'_>, _: &AcceptedJump) -> Result<()> {
        Ok(())
    }

    fn state(&mut self, _: usize, _: &[f64]) {}
}

/// Generates and integrates paths of one model on one grid.
pub struct Simulator<'a> {
    spec: &'a ModelSpec,
    grid: TimeGrid,
    quadrature: MarkQuadrature,
    measure: Measure,
    seed: u64,
}

impl<'a> Simulator<'a> {
    pub fn new(spec: &'a ModelSpec, grid: TimeGrid, seed: u64) -> Result<Self> {
        spec.check_shape()?;
        let quadrature = spec.active_levy().map(|l| l.quadrature(QUADRATURE_NODES, seed)).unwrap_or_else(MarkQuadrature::empty);
        Ok(Simulator { spec, grid, quadrature, measure: Measure::Reference, seed })
    }

    pub fn with_measure(mut self, measure: Measure) -> Self {
        self.measure = measure;
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn quadrature(&self) -> &MarkQuadrature {
        &self.quadrature
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Driver of path `index`; drawn from its own stream so it does not depend on scheduling.
    pub fn driver(&self, index: u64) -> DriverPath {
        let (ns, factor) = match self.measure {
            Measure::Reference => (rng::NS_PATHS, 1.0),
            Measure::Tilted { envelope } => (rng::NS_TILTED, envelope),
        };
        let mut r = rng::stream(self.seed, ns, index);
        simulate_driver_scaled(&self.grid, self.spec.active_levy(), self.spec.d_brownian(), factor, &mut r)
    }

    pub fn path(&self, index: u64) -> Result<PathBundle> {
        self.path_observed(index, &mut ())
    }

    /// [`Simulator::path`] reporting every step to `observer`.
    pub fn path_observed(&self, index: u64, observer: &mut impl StepObserver) -> Result<PathBundle> {
        let driver = self.driver(index);
        let mut bundle = self.integrate_observed(&driver, observer).map_err(|e| match e {
            Error::NonFiniteState { step, time, .. } => Error::NonFiniteState { path: index, step, time },
            other => other,
        })?;
        bundle.path_index = index;
        Ok(bundle)
    }

    /// Left-point Euler integration of the state along `driver`.
    pub fn integrate(&self, driver: &DriverPath) -> Result<PathBundle> {
        self.integrate_observed(driver, &mut ())
    }

    pub fn integrate_observed(&self, driver: &DriverPath, observer: &mut impl StepObserver) -> Result<PathBundle> {
        let spec = self.spec;
        let grid = self.grid;
        let d = spec.d_state();
        let m = spec.d_brownian();
        if driver.d_brownian != m || driver.increments.len() != grid.steps * m {
            return Err(Error::InvalidConfig("driver does not match the model and grid".into()));
        }
        let coef = &spec.coefficients;
        let levy_on = spec.active_levy().is_some();
        let tilted = matches!(self.measure, Measure::Tilted { .. });
        let exact = if !levy_on && !tilted { spec.exact.as_ref() } else { None };
        let kernel = match &spec.dependence {
            Dependence::Volterra { kernel } => Some(kernel),
            _ => None,
        };

        let n = grid.steps;
        let dt = grid.dt;
        let mut x = vec![0.0; (n + 1) * d];
        x[..d].copy_from_slice(&spec.x0);
        let mut brownian = vec![0.0; n * m];
        let mut noise = if tilted { Some(vec![0.0; n * m]) } else { None };
        let mut volterra = kernel.map(|_| vec![0.0; n + 1]);
        let mut jumps_out = Vec::new();
        let mut exit = None;

        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d * m];
        let mut sig = vec![0.0; m];
        let mut h = vec![0.0; d];
        let mut xi = vec![0.0; m];
        let x0 = spec.x0.clone();
        let mut sup = norm_sq(&x0);
        let mut v = 0.0;
        let mut jump_cursor = 0;
        let sq = dt.sqrt();
        observer.state(0, &x0);

        for i in 0..n {
            let t = grid.time(i);
            let (head, tail) = x.split_at_mut((i + 1) * d);
            let cur = &head[i * d..];
            let next = &mut tail[..d];
            let view = HistoryView::new(&x0, &head[..i * d], cur, dt, t, sup, v);
            let dw = &driver.increments[i * m..(i + 1) * m];
            let db = &mut brownian[i * m..(i + 1) * m];

            if let Some(ex) = exact {
                for k in 0..m {
                    xi[k] = dw[k] / sq;
                }
                ex.advance(t, dt, cur, &xi, next, db);
            } else {
                coef.drift(t, &view, &mut a);
                coef.diffusion(t, &view, &mut b);
                if tilted {
                    coef.sigma(t, &view, &mut sig);
                    for r in 0..d {
                        a[r] += (0..m).map(|c| b[r * m + c] * sig[c]).sum::<f64>();
                    }
                }
                if levy_on {
                    for (&z, &w) in self.quadrature.nodes.iter().zip(&self.quadrature.weights) {
                        coef.jump_x(t, &view, z, &mut h);
                        for r in 0..d {
                            a[r] -= w * h[r];
                        }
                    }
                }
                for r in 0..d {
                    next[r] = cur[r] + a[r] * dt + (0..m).map(|c| b[r * m + c] * dw[c]).sum::<f64>();
                }
                for k in 0..m {
                    db[k] = if tilted { dw[k] + sig[k] * dt } else { dw[k] };
                }
                if let Some(nz) = noise.as_mut() {
                    nz[i * m..(i + 1) * m].copy_from_slice(dw);
                }
            }

            observer.step(i, t, &view, db)?;

            while jump_cursor < driver.jumps.len() && driver.jumps[jump_cursor].step == i {
                let ev = driver.jumps[jump_cursor];
                jump_cursor += 1;
                if let Measure::Tilted { envelope } = self.measure {
                    let tilt = 1.0 + coef.jump_m(t, &view, ev.mark);
                    if tilt > envelope * (1.0 + 1e-12) || !tilt.is_finite() {
                        return Err(Error::TiltUnbounded { time: ev.time, value: tilt, envelope });
                    }
                    if ev.accept_u * envelope >= tilt {
                        continue;
                    }
                }
                coef.jump_x(t, &view, ev.mark, &mut h);
                for r in 0..d {
                    next[r] += h[r];
                }
                let accepted = AcceptedJump { step: i, time: ev.time, mark: ev.mark };
                observer.jump(t, &view, &accepted)?;
                jumps_out.push(accepted);
            }

            if let (Some(k), Some(vs)) = (kernel, volterra.as_mut()) {
                v = match k.exponential_params() {
                    Some((c, rate)) => (-rate * dt).exp() * (v + c * db[0]),
                    None => {
                        let s = grid.time(i + 1);
                        (0..=i).map(|j| k.eval(s, grid.time(j)) * brownian[j * m]).sum()
                    }
                };
                vs[i + 1] = v;
            }

            let next = &mut x[(i + 1) * d..(i + 2) * d];
            let finite = next.iter().all(|v| v.is_finite());
            let kind = if !finite {
                if spec.explosion_radius.is_some() {
                    Some(ExitKind::Exploded)
                } else {
                    return Err(Error::NonFiniteState { path: 0, step: i + 1, time: grid.time(i + 1) });
                }
            } else if spec.explosion_radius.is_some_and(|r| norm_sq(next) > r * r) {
                Some(ExitKind::Exploded)
            } else {
                match spec.boundary {
                    Boundary::Killing(l) if next[0] <= l => Some(ExitKind::Killed),
                    Boundary::Absorbing(l) if next[0] <= l => {
                        next[0] = l;
                        Some(ExitKind::Absorbed)
                    }
                    _ => None,
                }
            };
            observer.state(i + 1, next);
            if let Some(kind) = kind {
                exit = Some(Exit { index: i + 1, kind });
                let frozen: Vec<f64> = next.to_vec();
                for j in (i + 2)..=n {
                    x[j * d..(j + 1) * d].copy_from_slice(&frozen);
                }
                if let Some(vs) = volterra.as_mut() {
                    for j in (i + 2)..=n {
                        vs[j] = v;
                    }
                }
                break;
            }
            sup = sup.max(norm_sq(next));
        }

        Ok(PathBundle {
            path_index: 0,
            grid,
            dim: d,
            d_brownian: m,
            x,
            brownian,
            noise,
            jumps: jumps_out,
            volterra,
            exit,
            z: None,
            stop: None,
        })
    }
}

/// Integrates `spec` along `driver` under the reference measure.
pub fn integrate_path(spec: &ModelSpec, driver: &DriverPath, grid: &TimeGrid, seed: u64) -> Result<PathBundle> {
    Simulator::new(spec, *grid, seed)?.integrate(driver)
}

/// Which running statistic the localization watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingVariant {
    /// `z_t` or `|X_t|^2` reaches the level.
    Markov,
    /// `z_t` or `sup_{s <= t} |X_s|^2` reaches the level.
    PathDependent,
}

impl StoppingVariant {
    pub fn for_model(spec: &ModelSpec) -> Self {
        if spec.dependence.uses_sup_norm() {
            StoppingVariant::PathDependent
        } else {
            StoppingVariant::Markov
        }
    }
}

/// `tau_n = inf { t : z_t >= n or |X_t|^2 >= n }` (or the running sup of `|X|^2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoppingRule {
    pub level: f64,
    pub variant: StoppingVariant,
    /// Whether the rule inspects the stochastic exponential.
    pub watch_z: bool,
}

impl StoppingRule {
    pub fn new(level: f64, variant: StoppingVariant) -> Self {
        StoppingRule { level, variant, watch_z: true }
    }

    /// Rule that ignores `z` and watches the state only.
    pub fn state_only(level: f64, variant: StoppingVariant) -> Self {
        StoppingRule { level, variant, watch_z: false }
    }

    /// First grid index where the rule fires, if any.
    pub fn first_hit(&self, bundle: &PathBundle) -> Option<usize> {
        let last = bundle.exit.map(|e| e.index).unwrap_or(bundle.grid.steps);
        let z = if self.watch_z { bundle.z.as_deref() } else { None };
        let mut sup = 0.0f64;
        for i in 0..=last {
            let s = norm_sq(bundle.state(i));
            sup = sup.max(s);
            let stat = match self.variant {
                StoppingVariant::Markov => s,
                StoppingVariant::PathDependent => sup,
            };
            let zi = z.map(|z| z[i]).unwrap_or(0.0);
            if stat >= self.level || zi >= self.level || stat.is_nan() {
                return Some(i);
            }
        }
        None
    }
}

/// Records the stopping index and freezes `X` (and `z`) from it onwards.
pub fn apply_stopping(bundle: &mut PathBundle, rule: &StoppingRule) {
    let Some(k) = rule.first_hit(bundle) else { return };
    let d = bundle.dim;
    let frozen: Vec<f64> = bundle.state(k).to_vec();
    for j in (k + 1)..=bundle.grid.steps {
        bundle.x[j * d..(j + 1) * d].copy_from_slice(&frozen);
    }
    if let Some(z) = bundle.z.as_mut() {
        let zk = z[k];
        z[k..].iter_mut().for_each(|v| *v = zk);
    }
    bundle.stop = Some(bundle.stop.map_or(k, |s| s.min(k)));
}

/// Size, seed and parallelism of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub workers: usize,
}

/// Maps every path of the ensemble through `f`, in path order.
///
/// The result does not depend on `workers`: each path has its own stream and
/// results are returned in index order. The first error by path index wins.
pub fn map_paths<R, F>(sim: &Simulator<'_>, n_paths: usize, workers: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(PathBundle) -> Result<R> + Sync + Send,
{
    map_indices(n_paths, workers, |i| f(sim.path(i)?))
}

/// Evaluates `f(0), ..., f(n - 1)` on `workers` threads (0: the global pool), in index order.
pub fn map_indices<R, F>(n: usize, workers: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64) -> Result<R> + Sync + Send,
{
    let run = || -> Vec<Result<R>> { (0..n as u64).into_par_iter().map(&f).collect() };
    let results = if workers == 0 {
        run()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
        pool.install(run)
    };
    results.into_iter().collect()
}

/// Simulates `n_paths` paths with their stochastic exponentials, stopped by `rule` if given.
pub fn simulate_ensemble(
    spec: &ModelSpec,
    grid: &TimeGrid,
    rule: Option<&StoppingRule>,
    config: &EnsembleConfig,
) -> Result<Vec<PathBundle>> {
    let sim = Simulator::new(spec, *grid, config.seed)?;
    map_paths(&sim, config.n_paths, config.workers, |mut b| {
        crate::exponential::attach_exponential(&sim, &mut b)?;
        if let Some(r) = rule {
            apply_stopping(&mut b, r);
        }
        Ok(b)
    })
}

/// Writes one path as CSV with columns `t`, the state components, `z`, `stopped`.
pub fn write_path_csv(path: &Path, bundle: &PathBundle) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "t")?;
    if bundle.dim == 1 {
        write!(out, ",x")?;
    } else {
        for k in 0..bundle.dim {
            write!(out, ",x{k}")?;
        }
    }
    writeln!(out, ",z,stopped")?;
    let frozen_from = match (bundle.stop, bundle.exit.map(|e| e.index)) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    for i in 0..=bundle.grid.steps {
        write!(out, "{}", bundle.grid.time(i))?;
        for v in bundle.state(i) {
            write!(out, ",{v}")?;
        }
        let z = bundle.z.as_ref().map(|z| z[i]).unwrap_or(f64::NAN);
        let stopped = frozen_from.is_some_and(|k| i >= k) as u8;
        writeln!(out, ",{z},{stopped}")?;
    }
    out.flush()?;
    Ok(())
}
