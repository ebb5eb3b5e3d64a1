//! The measure `dQ = z_T dP` and checks of its semimartingale characteristics.
//!
//! Under `Q` the Brownian motion acquires drift `sigma*`, so the state drift
//! becomes `a + b sigma* + int h phi K` and the jump compensator becomes
//! `(1 + phi) K`. Paths under `Q` are simulated with drift `a + b sigma*`,
//! the original compensator `- int h K dt`, and jumps thinned from a Poisson
//! stream of intensity `envelope * K` with acceptance `(1 + phi) / envelope`.

use rand::Rng;
use serde::Serialize;

use crate::conditions::{benes_verdict, GrowthDomain, Verdict};
use crate::error::{Error, Result};
use crate::exponential::exponential_path;
use crate::model::{norm_sq, HistoryView, MarkQuadrature, ModelSpec, OwnedHistory};
use crate::rng;
use crate::simulate::{map_paths, EnsembleConfig, Measure, PathBundle, Simulator, StoppingVariant, TimeGrid, QUADRATURE_NODES};
use crate::stats::McEstimate;

/// How the thinning envelope is chosen.
#[derive(Debug, Clone)]
pub struct TiltConfig {
    /// Fixed envelope; when absent it is twice the largest `1 + phi` seen on the sampling box.
    pub envelope: Option<f64>,
    pub box_radius: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for TiltConfig {
    fn default() -> Self {
        TiltConfig { envelope: None, box_radius: 8.0, samples: 4096, seed: 0 }
    }
}

/// A model together with its Girsanov tilt.
#[derive(Debug, Clone)]
pub struct TiltedModel {
    pub base: ModelSpec,
    pub envelope: f64,
    quadrature: MarkQuadrature,
}

/// Builds the tilted model, fixing the thinning envelope for the `(1 + phi) K` compensator.
pub fn tilt_model(spec: &ModelSpec, config: &TiltConfig) -> Result<TiltedModel> {
    spec.check_shape()?;
    let quadrature = spec.active_levy().map(|l| l.quadrature(QUADRATURE_NODES, config.seed)).unwrap_or_else(MarkQuadrature::empty);
    let envelope = match (config.envelope, spec.active_levy()) {
        (_, None) => 1.0,
        (Some(e), Some(_)) => e,
        (None, Some(levy)) => {
            let mut r = rng::stream(config.seed, rng::NS_VALIDATION, 1);
            let d = spec.d_state();
            let mut worst = 1.0f64;
            for _ in 0..config.samples {
                let s = r.random::<f64>() * spec.horizon;
                let mut x: Vec<f64> = (0..d).map(|_| (2.0 * r.random::<f64>() - 1.0) * config.box_radius).collect();
                if let Some(l) = spec.boundary.level() {
                    x[0] = l + (x[0] - l).abs().max(1e-9);
                }
                let h = OwnedHistory::point(&x, s);
                let z = levy.sample_mark(&mut r);
                let v = 1.0 + spec.coefficients.jump_m(s, &h.view(), z);
                if !v.is_finite() {
                    return Err(Error::TiltUnbounded { time: s, value: v, envelope: f64::INFINITY });
                }
                worst = worst.max(v);
            }
            2.0 * worst
        }
    };
    if !(envelope >= 1.0 && envelope.is_finite()) {
        return Err(Error::InvalidConfig(format!("thinning envelope must be finite and >= 1, got {envelope}")));
    }
    Ok(TiltedModel { base: spec.clone(), envelope, quadrature })
}

impl TiltedModel {
    /// Drift of `X` under `Q`: `a + b sigma* + int h phi K`.
    pub fn q_drift(&self, s: f64, view: &HistoryView<'_>, out: &mut [f64]) {
        let spec = &self.base;
        let d = spec.d_state();
        let m = spec.d_brownian();
        let c = &spec.coefficients;
        let mut b = vec![0.0; d * m];
        let mut sig = vec![0.0; m];
        let mut h = vec![0.0; d];
        c.drift(s, view, out);
        c.diffusion(s, view, &mut b);
        c.sigma(s, view, &mut sig);
        for r in 0..d {
            out[r] += (0..m).map(|k| b[r * m + k] * sig[k]).sum::<f64>();
        }
        for (&z, &w) in self.quadrature.nodes.iter().zip(&self.quadrature.weights) {
            c.jump_x(s, view, z, &mut h);
            let phi = c.jump_m(s, view, z);
            for r in 0..d {
                out[r] += w * h[r] * phi;
            }
        }
    }

    /// Density of the `Q` compensator with respect to `K`: `1 + phi`.
    pub fn q_compensator_density(&self, s: f64, view: &HistoryView<'_>, z: f64) -> f64 {
        1.0 + self.base.coefficients.jump_m(s, view, z)
    }

    /// Path simulator under `Q`.
    pub fn simulator(&self, grid: TimeGrid, seed: u64) -> Result<Simulator<'_>> {
        Ok(Simulator::new(&self.base, grid, seed)?.with_measure(Measure::Tilted { envelope: self.envelope }))
    }
}

/// Path functional compared under both measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// First component of `X_T`.
    TerminalIdentity,
    /// `|X_T|^2`.
    TerminalSquare,
    /// `1{X_T > threshold}` on the first component.
    Indicator { threshold: f64 },
    /// `sup_t X_t` on the first component.
    RunningSup,
}

impl Functional {
    /// The four standard functionals, the indicator thresholded at the initial state.
    pub fn standard(spec: &ModelSpec) -> [Functional; 4] {
        [
            Functional::TerminalIdentity,
            Functional::TerminalSquare,
            Functional::Indicator { threshold: spec.x0[0] },
            Functional::RunningSup,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Functional::TerminalIdentity => "terminal_identity",
            Functional::TerminalSquare => "terminal_square",
            Functional::Indicator { .. } => "indicator",
            Functional::RunningSup => "running_sup",
        }
    }

    /// Evaluates on the path frozen from grid index `k`.
    pub fn eval(&self, bundle: &PathBundle, k: usize) -> f64 {
        let xk = bundle.state(k);
        match *self {
            Functional::TerminalIdentity => xk[0],
            Functional::TerminalSquare => norm_sq(xk),
            Functional::Indicator { threshold } => (xk[0] > threshold) as u8 as f64,
            Functional::RunningSup => (0..=k).map(|i| bundle.state(i)[0]).fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Freezing index, log-weight and whether the path counts, for one path.
fn resolve(bundle: &PathBundle, log_z: &[f64], level: Option<f64>, variant: StoppingVariant) -> (usize, f64, bool) {
    let last = bundle.exit.map(|e| e.index).unwrap_or(bundle.grid.steps);
    match level {
        Some(n) => {
            let ln_n = n.ln();
            let mut sup = 0.0f64;
            let mut k = last;
            for i in 0..=last {
                let s = norm_sq(bundle.state(i));
                let s = if s.is_nan() { f64::INFINITY } else { s };
                sup = sup.max(s);
                let stat = if variant == StoppingVariant::Markov { s } else { sup };
                if stat >= n || log_z[i] >= ln_n {
                    k = i;
                    break;
                }
            }
            (k, log_z[k], true)
        }
        None => {
            let removed = bundle.exit.is_some_and(|e| e.removed());
            (last, if removed { f64::NEG_INFINITY } else { log_z[last] }, !removed)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GirsanovReport {
    pub functional: Functional,
    pub level: Option<f64>,
    /// `E_P[z f]`.
    pub p_side: McEstimate,
    /// `E_Q[f]`.
    pub q_side: McEstimate,
    /// Whether the two 3-se intervals intersect.
    pub overlap: bool,
    pub envelope: f64,
}

/// Compares `E_P[z_T f(X)]` with `E_Q[f(X)]` on independent ensembles.
///
/// Without a localization level the model must pass the sufficient conditions;
/// with one, both sides are stopped at `tau_n`.
pub fn girsanov_consistency(
    spec: &ModelSpec,
    functionals: &[Functional],
    grid: &TimeGrid,
    config: &EnsembleConfig,
    level: Option<f64>,
    tilt: &TiltConfig,
) -> Result<Vec<GirsanovReport>> {
    if level.is_none() {
        let conditions = benes_verdict(spec, &GrowthDomain::default())?;
        if conditions.overall != Verdict::Pass {
            return Err(Error::InvalidConfig(format!(
                "model `{}` does not pass the sufficient conditions; supply a localization level",
                spec.name
            )));
        }
    } else {
        crate::diagnostics::check_levels(spec, &level.into_iter().collect::<Vec<_>>())?;
    }
    let variant = StoppingVariant::for_model(spec);
    let tilted = tilt_model(spec, tilt)?;
    let p_sim = Simulator::new(spec, *grid, config.seed)?;
    let q_sim = tilted.simulator(*grid, config.seed)?;
    let nf = functionals.len();

    let p_vals = map_paths(&p_sim, config.n_paths, config.workers, |b| {
        let e = exponential_path(&p_sim, &b)?;
        let (k, lw, _) = resolve(&b, &e.log_z, level, variant);
        let w = lw.exp();
        Ok(functionals.iter().map(|f| if w > 0.0 { w * f.eval(&b, k) } else { 0.0 }).collect::<Vec<f64>>())
    })?;
    let q_vals = map_paths(&q_sim, config.n_paths, config.workers, |b| {
        let e = exponential_path(&q_sim, &b)?;
        let (k, _, include) = resolve(&b, &e.log_z, level, variant);
        Ok(functionals.iter().map(|f| if include { f.eval(&b, k) } else { 0.0 }).collect::<Vec<f64>>())
    })?;

    Ok((0..nf)
        .map(|j| {
            let p: Vec<f64> = p_vals.iter().map(|v| v[j]).collect();
            let q: Vec<f64> = q_vals.iter().map(|v| v[j]).collect();
            let p_side = McEstimate::from_values(&p);
            let q_side = McEstimate::from_values(&q);
            GirsanovReport {
                functional: functionals[j],
                level,
                p_side,
                q_side,
                overlap: p_side.overlaps(&q_side, 3.0),
                envelope: tilted.envelope,
            }
        })
        .collect())
}

/// Realized against predicted characteristics of `X` under `Q`.
#[derive(Debug, Clone, Serialize)]
pub struct QvReport {
    /// Per-path `sum |b dB~|^2 - sum tr(b b*) dt`.
    pub continuous_gap: McEstimate,
    pub continuous_predicted: McEstimate,
    /// Per-path `sum |h(z_j)|^2 - sum int |h|^2 (1 + phi) K dt`.
    pub jump_gap: McEstimate,
    pub jump_predicted: McEstimate,
    /// Accepted jumps per unit time.
    pub jump_rate: McEstimate,
    /// `int (1 + phi) K` averaged along the path.
    pub predicted_jump_rate: McEstimate,
    pub consistent: bool,
}

/// Checks that the quadratic variation of the tilted paths matches `tr(b b*)` and
/// `int |h|^2 (1 + phi) K`, and that the jump rate matches `int (1 + phi) K`.
pub fn quadratic_variation_check(tilted: &TiltedModel, grid: &TimeGrid, config: &EnsembleConfig) -> Result<QvReport> {
    let sim = tilted.simulator(*grid, config.seed)?;
    let spec = &tilted.base;
    let d = spec.d_state();
    let m = spec.d_brownian();
    let quad = sim.quadrature().clone();
    let rows = map_paths(&sim, config.n_paths, config.workers, |bundle| {
        let noise = bundle.noise.as_ref().expect("tilted paths record their driver");
        let c = &spec.coefficients;
        let mut b = vec![0.0; d * m];
        let mut h = vec![0.0; d];
        let (mut cr, mut cp, mut jr, mut jp, mut rate) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let active = bundle.active_steps();
        let dt = grid.dt;
        let mut cursor = 0;
        bundle.for_each_view(active, |i, view| {
            let t = grid.time(i);
            c.diffusion(t, view, &mut b);
            let dw = &noise[i * m..(i + 1) * m];
            for r in 0..d {
                let inc: f64 = (0..m).map(|k| b[r * m + k] * dw[k]).sum();
                cr += inc * inc;
            }
            cp += b.iter().map(|v| v * v).sum::<f64>() * dt;
            for (&z, &w) in quad.nodes.iter().zip(&quad.weights) {
                c.jump_x(t, view, z, &mut h);
                let dens = 1.0 + c.jump_m(t, view, z);
                jp += w * norm_sq(&h) * dens * dt;
                rate += w * dens * dt;
            }
            while cursor < bundle.jumps.len() && bundle.jumps[cursor].step == i {
                c.jump_x(t, view, bundle.jumps[cursor].mark, &mut h);
                jr += norm_sq(&h);
                cursor += 1;
            }
            Ok(())
        })?;
        let horizon = grid.time(active).max(dt);
        Ok([cr - cp, cp, jr - jp, jp, bundle.jumps.len() as f64 / horizon, rate / horizon])
    })?;
    let col = |j: usize| McEstimate::from_values(&rows.iter().map(|r| r[j]).collect::<Vec<_>>());
    let continuous_gap = col(0);
    let jump_gap = col(2);
    let jump_rate = col(4);
    let predicted_jump_rate = col(5);
    let consistent = continuous_gap.within(0.0, 3.0) && jump_gap.within(0.0, 3.0);
    Ok(QvReport {
        continuous_gap,
        continuous_predicted: col(1),
        jump_gap,
        jump_predicted: col(3),
        jump_rate,
        predicted_jump_rate,
        consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientSet, LevyMeasure};

    fn gaussian(theta: f64) -> ModelSpec {
        ModelSpec::new("gauss", vec![0.0], CoefficientSet::scalar(|_, _| 0.0, |_, _| 1.0, move |_, _| theta))
    }

    #[test]
    fn constant_sigma_shifts_drift() {
        let t = tilt_model(&gaussian(0.7), &TiltConfig::default()).unwrap();
        let h = OwnedHistory::point(&[3.0], 0.5);
        let mut out = [0.0];
        t.q_drift(0.5, &h.view(), &mut out);
        assert!((out[0] - 0.7).abs() < 1e-15);
        assert_eq!(t.envelope, 1.0);
    }

    #[test]
    fn jump_tilt_adds_h_phi_integral() {
        let spec = ModelSpec::new(
            "pj",
            vec![0.0],
            CoefficientSet::scalar(|_, _| 0.0, |_, _| 0.0, |_, _| 0.0).with_scalar_jumps(|_, _, z| z, |_, _, _| 0.5),
        )
        .with_levy(LevyMeasure::two_point(2.0, 0.5).unwrap());
        let t = tilt_model(&spec, &TiltConfig::default()).unwrap();
        let h = OwnedHistory::point(&[0.0], 0.0);
        let mut out = [0.0];
        t.q_drift(0.0, &h.view(), &mut out);
        // int z * 0.5 K(dz) = 0.5 * 2 * (0.5 - 0.25)
        assert!((out[0] - 0.25).abs() < 1e-15);
        assert!((t.envelope - 3.0).abs() < 1e-15);
    }

    #[test]
    fn envelope_violation_is_reported() {
        let spec = ModelSpec::new(
            "pj",
            vec![0.0],
            CoefficientSet::scalar(|_, _| 0.0, |_, _| 0.0, |_, _| 0.0).with_scalar_jumps(|_, _, z| z, |_, _, _| 3.0),
        )
        .with_levy(LevyMeasure::two_point(50.0, 0.5).unwrap());
        let t = tilt_model(&spec, &TiltConfig { envelope: Some(2.0), ..Default::default() }).unwrap();
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let err = t.simulator(grid, 1).unwrap().path(0).unwrap_err();
        assert!(matches!(err, Error::TiltUnbounded { .. }));
    }
}
