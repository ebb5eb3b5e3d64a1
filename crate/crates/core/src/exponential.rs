//! The Doléans-Dade exponential `z = E(M)` of a simulated path.
//!
//! Two constructions are provided: the closed form
//! `log z = M^c - <M^c>/2 - int phi K dt + sum log(1 + phi)`, and the SDE
//! recursion `z_{i+1} = z_i (1 + dM_i)`. The closed form is the default; with
//! left-point `sigma` and Gaussian increments it is an exact discrete martingale.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{MarkQuadrature, ModelSpec};
use crate::simulate::{PathBundle, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleJump {
    pub step: usize,
    pub time: f64,
    /// `Delta M = phi(tau-, X, z)`.
    pub size: f64,
}

/// Per-step increments of `M` along one path, up to the first frozen index.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleIncrements {
    /// `sigma . Delta B`.
    pub continuous: Vec<f64>,
    /// `|sigma|^2 dt`.
    pub quadratic: Vec<f64>,
    /// `int phi K(dz) dt`.
    pub compensator: Vec<f64>,
    pub jumps: Vec<MartingaleJump>,
    /// Number of steps carrying non-zero increments.
    pub active: usize,
}

/// Recomputes `sigma` and `phi` along the stored path.
pub fn martingale_increments(spec: &ModelSpec, bundle: &PathBundle, quadrature: &MarkQuadrature) -> Result<MartingaleIncrements> {
    let n = bundle.grid.steps;
    let dt = bundle.grid.dt;
    let m = bundle.d_brownian;
    let active = bundle.active_steps();
    let coef = &spec.coefficients;
    let levy_on = spec.active_levy().is_some();
    let mut continuous = vec![0.0; n];
    let mut quadratic = vec![0.0; n];
    let mut compensator = vec![0.0; n];
    let mut jumps = Vec::with_capacity(bundle.jumps.len());
    let mut sig = vec![0.0; m];
    let mut cursor = 0;
    bundle.for_each_view(active, |i, view| {
        let t = bundle.grid.time(i);
        coef.sigma(t, view, &mut sig);
        let db = bundle.increments(i);
        let mut c = 0.0;
        let mut q = 0.0;
        for k in 0..m {
            c += sig[k] * db[k];
            q += sig[k] * sig[k];
        }
        continuous[i] = c;
        quadratic[i] = q * dt;
        if levy_on {
            compensator[i] = quadrature.integrate(|z| coef.jump_m(t, view, z)) * dt;
        }
        while cursor < bundle.jumps.len() && bundle.jumps[cursor].step == i {
            let j = bundle.jumps[cursor];
            cursor += 1;
            let size = coef.jump_m(t, view, j.mark);
            if size <= -1.0 {
                return Err(Error::JumpBelowFloor { time: j.time, jump: size });
            }
            jumps.push(MartingaleJump { step: i, time: j.time, size });
        }
        Ok(())
    })?;
    Ok(MartingaleIncrements { continuous, quadratic, compensator, jumps, active })
}

/// `log z`, `M^c` and `<M^c>` at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialPath {
    pub log_z: Vec<f64>,
    pub continuous_part: Vec<f64>,
    pub quadratic_variation: Vec<f64>,
}

impl ExponentialPath {
    pub fn z(&self, i: usize) -> f64 {
        self.log_z[i].exp()
    }

    pub fn z_path(&self) -> Vec<f64> {
        self.log_z.iter().map(|l| l.exp()).collect()
    }
}

/// Closed-form exponential. Values after the last active step are frozen.
pub fn exponential_closed_form(inc: &MartingaleIncrements) -> ExponentialPath {
    let n = inc.continuous.len();
    let mut log_z = Vec::with_capacity(n + 1);
    let mut mc = Vec::with_capacity(n + 1);
    let mut qv = Vec::with_capacity(n + 1);
    let (mut l, mut c, mut q) = (0.0f64, 0.0f64, 0.0f64);
    log_z.push(0.0);
    mc.push(0.0);
    qv.push(0.0);
    let mut cursor = 0;
    for i in 0..n {
        c += inc.continuous[i];
        q += inc.quadratic[i];
        l += inc.continuous[i] - 0.5 * inc.quadratic[i] - inc.compensator[i];
        while cursor < inc.jumps.len() && inc.jumps[cursor].step == i {
            l += inc.jumps[cursor].size.ln_1p();
            cursor += 1;
        }
        log_z.push(l);
        mc.push(c);
        qv.push(q);
    }
    ExponentialPath { log_z, continuous_part: mc, quadratic_variation: qv }
}

/// SDE-form exponential.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeExponential {
    pub z: Vec<f64>,
    /// Steps where `1 + sigma dB` went negative and `z` was clipped to zero.
    pub negative_clips: usize,
}

/// `z_{i+1} = z_i (1 + sigma dB_i) exp(-int phi K dt) prod (1 + phi_j)`.
///
/// The Brownian factor is the Euler step; the compensator drift is integrated
/// exactly and jumps multiply exactly, so pure-jump paths reproduce the closed form.
pub fn exponential_from_sde(inc: &MartingaleIncrements) -> SdeExponential {
    let n = inc.continuous.len();
    let mut z = Vec::with_capacity(n + 1);
    let mut cur = 1.0f64;
    z.push(cur);
    let mut clips = 0;
    let mut cursor = 0;
    for i in 0..n {
        let f = 1.0 + inc.continuous[i];
        if f < 0.0 && cur > 0.0 {
            clips += 1;
            cur = 0.0;
        }
        cur *= f.max(0.0) * (-inc.compensator[i]).exp();
        while cursor < inc.jumps.len() && inc.jumps[cursor].step == i {
            cur *= 1.0 + inc.jumps[cursor].size;
            cursor += 1;
        }
        z.push(cur);
    }
    SdeExponential { z, negative_clips: clips }
}

/// Closed-form exponential of a path produced by `sim`.
pub fn exponential_path(sim: &Simulator<'_>, bundle: &PathBundle) -> Result<ExponentialPath> {
    let inc = martingale_increments(sim.spec(), bundle, sim.quadrature())?;
    Ok(exponential_closed_form(&inc))
}

/// Fills `bundle.z` with the closed-form exponential.
pub fn attach_exponential(sim: &Simulator<'_>, bundle: &mut PathBundle) -> Result<ExponentialPath> {
    let e = exponential_path(sim, bundle)?;
    bundle.z = Some(e.z_path());
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inc(cont: Vec<f64>, qv: Vec<f64>, comp: Vec<f64>, jumps: Vec<(usize, f64)>) -> MartingaleIncrements {
        let n = cont.len();
        MartingaleIncrements {
            continuous: cont,
            quadratic: qv,
            compensator: comp,
            jumps: jumps.into_iter().map(|(step, size)| MartingaleJump { step, time: step as f64, size }).collect(),
            active: n,
        }
    }

    #[test]
    fn closed_form_sums_log_terms() {
        let i = inc(vec![0.1, -0.2], vec![0.01, 0.04], vec![0.0, 0.05], vec![(1, 0.5)]);
        let e = exponential_closed_form(&i);
        let want = 0.1 - 0.005 + (-0.2 - 0.02 - 0.05) + 1.5f64.ln();
        assert!((e.log_z[2] - want).abs() < 1e-15);
        assert!((e.quadratic_variation[2] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn sde_form_clips_negative_factors() {
        let i = inc(vec![0.5, -1.5, 0.2], vec![0.0; 3], vec![0.0; 3], vec![]);
        let s = exponential_from_sde(&i);
        assert_eq!(s.negative_clips, 1);
        assert_eq!(s.z, vec![1.0, 1.5, 0.0, 0.0]);
    }

    #[test]
    fn pure_jump_forms_agree() {
        let i = inc(vec![0.0; 4], vec![0.0; 4], vec![0.1, 0.2, 0.0, 0.3], vec![(0, 1.0), (2, -0.5), (2, 0.25)]);
        let c = exponential_closed_form(&i).z_path();
        let s = exponential_from_sde(&i).z;
        for (a, b) in c.iter().zip(&s) {
            assert!((a - b).abs() <= 1e-14 * a.abs());
        }
    }
}
