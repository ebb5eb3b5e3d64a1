//! Reference models with known answers.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::conditions::Verdict;
use crate::error::{Error, Result};
use crate::model::{
    Boundary, CoefficientSet, Dependence, ExactSampler, HistoryView, LevyMeasure, ModelSpec, Singularity, VolterraKernel,
};

/// Numeric model parameters by name.
pub type Params = BTreeMap<String, f64>;

/// Known value of `E z_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpectedEz {
    One,
    /// Strict local martingale with the given expectation.
    LessThanOne { value: f64 },
    /// Only the stopped exponential is a martingale (absorption or explosion).
    StoppedOne,
}

pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub dependence: &'static str,
    pub expected_verdict: Verdict,
    pub expected_ez: ExpectedEz,
    /// Default parameters; `NaN` marks an optional parameter that is unset by default.
    pub defaults: &'static [(&'static str, f64)],
    build: fn(&Params) -> Result<ModelSpec>,
}

impl std::fmt::Debug for CatalogEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CatalogEntry").field("name", &self.name).finish()
    }
}

impl CatalogEntry {
    /// The model with default parameters.
    pub fn model(&self) -> ModelSpec {
        self.model_with(&Params::new()).expect("default catalog parameters are valid")
    }

    /// The model with some parameters overridden; `T` sets the horizon.
    pub fn model_with(&self, overrides: &Params) -> Result<ModelSpec> {
        let mut p: Params = self.defaults.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        for (k, v) in overrides {
            if k == "T" {
                continue;
            }
            if !p.contains_key(k) {
                return Err(Error::InvalidConfig(format!("model `{}` has no parameter `{k}`", self.name)));
            }
            p.insert(k.clone(), *v);
        }
        let mut spec = (self.build)(&p)?;
        if let Some(&t) = overrides.get("T") {
            spec.horizon = t;
        }
        if self.name == "brownian_bridge" && spec.horizon > 1.0 {
            return Err(Error::InvalidConfig("the bridge is pinned at time 1; horizon must be <= 1".into()));
        }
        Ok(spec)
    }
}

fn get(p: &Params, k: &str) -> f64 {
    p[k]
}

fn jumps(p: &Params) -> Result<LevyMeasure> {
    LevyMeasure::two_point(get(p, "lambda"), get(p, "p"))
}

fn bm_quadratic(_: &Params) -> Result<ModelSpec> {
    Ok(ModelSpec::new("bm_quadratic", vec![0.0], CoefficientSet::scalar(|_, _| 0.0, |_, _| 1.0, |_, h| 2.0 * h.x())))
}

fn pure_jump_iid(p: &Params) -> Result<ModelSpec> {
    let c = get(p, "c");
    let coef = CoefficientSet::scalar(|_, _| 0.0, |_, _| 0.0, |_, _| 0.0);
    let coef = if c.is_nan() {
        coef.with_scalar_jumps(|_, _, z| z, |_, h, z| (h.x() * z).abs())
    } else {
        if c <= -1.0 {
            return Err(Error::InvalidConfig(format!("constant jump tilt must exceed -1, got {c}")));
        }
        coef.with_scalar_jumps(|_, _, z| z, move |_, _, _| c)
    };
    Ok(ModelSpec::new("pure_jump_iid", vec![0.0], coef).with_levy(jumps(p)?))
}

fn cev(_: &Params) -> Result<ModelSpec> {
    let coef = CoefficientSet::scalar(|_, h| h.x(), |_, h| h.x().max(0.0).sqrt(), |_, h| h.x().max(0.0).sqrt());
    Ok(ModelSpec::new("cev", vec![1.0], coef).with_boundary(Boundary::Absorbing(0.0)))
}

fn cubic_drift(_: &Params) -> Result<ModelSpec> {
    let coef = CoefficientSet::scalar(|_, h| -h.x().powi(3), |_, h| h.x(), |_, h| h.x().max(0.0));
    Ok(ModelSpec::new("cubic_drift", vec![1.0], coef))
}

/// Exact Gaussian transition of `dX = -X/(1-s) ds + dB` pinned at zero at time one.
struct BridgeSampler;

impl ExactSampler for BridgeSampler {
    fn advance(&self, t: f64, dt: f64, x: &[f64], xi: &[f64], next: &mut [f64], db: &mut [f64]) {
        let rem = 1.0 - t;
        let rem_next = (rem - dt).max(0.0);
        let ratio = rem_next / rem;
        next[0] = x[0] * ratio + (dt * ratio).sqrt() * xi[0];
        // Brownian increment implied by the Euler form of the bridge equation
        db[0] = next[0] - x[0] + x[0] * dt / rem;
    }
}

fn brownian_bridge(_: &Params) -> Result<ModelSpec> {
    let coef = CoefficientSet::scalar(|s, h| if s < 1.0 { -h.x() / (1.0 - s) } else { 0.0 }, |_, _| 1.0, |_, h| h.x());
    Ok(ModelSpec::new("brownian_bridge", vec![0.0], coef)
        .with_singularity(Singularity::Time(1.0))
        .with_exact_sampler(Arc::new(BridgeSampler)))
}

fn mijatovic_urusov(p: &Params) -> Result<ModelSpec> {
    let alpha = get(p, "alpha");
    if !(-1.0..=0.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha must lie in [-1, 0], got {alpha}")));
    }
    let spec = if alpha == -1.0 {
        let coef = CoefficientSet::scalar(|_, h| 1.0 / h.x(), |_, _| 1.0, |_, h| h.x());
        ModelSpec::new("mijatovic_urusov", vec![1.0], coef).with_boundary(Boundary::Killing(0.0))
    } else {
        let coef = CoefficientSet::scalar(move |_, h| h.x().abs().powf(alpha), |_, _| 1.0, |_, h| h.x());
        ModelSpec::new("mijatovic_urusov", vec![1.0], coef)
    };
    Ok(spec.with_singularity(Singularity::State(vec![0.0])))
}

fn explosive_markov(p: &Params) -> Result<ModelSpec> {
    let alpha = get(p, "alpha");
    let coef = CoefficientSet::scalar(move |_, h| h.x().abs().powf(alpha), |_, _| 1.0, |_, h| {
        let x = h.x();
        0.5 * x / (1.0 + x * x).sqrt()
    })
    .with_scalar_jumps(|_, _, z| z, |_, _, z| z.abs());
    Ok(ModelSpec::new("explosive_markov", vec![1.0], coef).with_levy(jumps(p)?).with_explosion_radius(1e8))
}

fn bessel_counterexample(_: &Params) -> Result<ModelSpec> {
    let coef = CoefficientSet::scalar(|_, h| 1.0 / h.x(), |_, _| 1.0, |_, h| -1.0 / h.x());
    Ok(ModelSpec::new("bessel_counterexample", vec![1.0], coef)
        .with_boundary(Boundary::Killing(0.0))
        .with_singularity(Singularity::State(vec![0.0])))
}

fn two_driver(_: &Params) -> Result<ModelSpec> {
    let coef = CoefficientSet::new(
        1,
        2,
        Arc::new(|_, h, o| o[0] = -h.x()),
        Arc::new(|_, _, o| {
            o[0] = 1.0;
            o[1] = 0.0;
        }),
        Arc::new(|_, h, o| {
            o[0] = 0.5 * h.x();
            o[1] = h.x().cos();
        }),
    );
    Ok(ModelSpec::new("two_driver", vec![0.5], coef))
}

fn hitsuda_volterra(_: &Params) -> Result<ModelSpec> {
    let coef = CoefficientSet::scalar(|_, h| h.volterra(), |_, _| 1.0, |_, h| (1.0 + h.x() * h.x()).sqrt() * h.x().tanh());
    Ok(ModelSpec::new("hitsuda_volterra", vec![0.0], coef)
        .with_dependence(Dependence::Volterra { kernel: VolterraKernel::exponential(1.0, 1.0) }))
}

fn delay_sde(p: &Params) -> Result<ModelSpec> {
    let lag = get(p, "lag");
    if !(lag > 0.0) {
        return Err(Error::InvalidConfig(format!("delay must be positive, got {lag}")));
    }
    let lagged = move |s: f64, h: &HistoryView<'_>| h.state_at(s - lag)[0];
    let coef = CoefficientSet::scalar(
        move |s, h| -lagged(s, h).tanh(),
        move |s, h| 0.5 + 1.0 / (1.0 + lagged(s, h).powi(2)),
        move |s, h| lagged(s, h).cos(),
    );
    Ok(ModelSpec::new("delay_sde", vec![1.0], coef).with_dependence(Dependence::Delay { lag }))
}

fn weak_existence(_: &Params) -> Result<ModelSpec> {
    let coef = CoefficientSet::scalar(
        |_, _| 0.0,
        |_, _| 1.0,
        |_, h| {
            let x = h.x();
            let sign = if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
            -0.5 * sign * h.running_sup_sq().sqrt()
        },
    );
    Ok(ModelSpec::new("weak_existence_unit_diffusion", vec![0.0], coef).with_dependence(Dependence::PathDependent))
}

fn singular_diffusion(_: &Params) -> Result<ModelSpec> {
    let coef = CoefficientSet::scalar(|_, _| 0.0, |_, h| h.x(), |_, h| h.running_sup_sq().sqrt().tanh());
    Ok(ModelSpec::new("singular_diffusion", vec![1.0], coef).with_dependence(Dependence::PathDependent))
}

static CATALOG: [CatalogEntry; 13] = [
    CatalogEntry {
        name: "bm_quadratic",
        description: "Brownian motion with M = int 2B dB; E exp(M_T) is finite only for T < 1/2",
        dependence: "markov",
        expected_verdict: Verdict::Pass,
        expected_ez: ExpectedEz::One,
        defaults: &[],
        build: bm_quadratic,
    },
    CatalogEntry {
        name: "pure_jump_iid",
        description: "compound Poisson state with two-point marks; phi = |x z|, or the constant c when set",
        dependence: "markov",
        expected_verdict: Verdict::Pass,
        expected_ez: ExpectedEz::One,
        defaults: &[("lambda", 1.0), ("p", 0.5), ("c", f64::NAN)],
        build: pure_jump_iid,
    },
    CatalogEntry {
        name: "cev",
        description: "constant elasticity of variance diffusion dX = X ds + sqrt(X) dB with sigma = sqrt(X), absorbed at zero",
        dependence: "markov",
        expected_verdict: Verdict::Pass,
        expected_ez: ExpectedEz::StoppedOne,
        defaults: &[],
        build: cev,
    },
    CatalogEntry {
        name: "cubic_drift",
        description: "dX = -X^3 ds + X dB with sigma = x+",
        dependence: "markov",
        expected_verdict: Verdict::Pass,
        expected_ez: ExpectedEz::One,
        defaults: &[],
        build: cubic_drift,
    },
    CatalogEntry {
        name: "brownian_bridge",
        description: "Brownian bridge from 0 to 0 on [0, 1] with sigma = x; drift singular at time 1",
        dependence: "markov",
        expected_verdict: Verdict::Pass,
        expected_ez: ExpectedEz::One,
        defaults: &[],
        build: brownian_bridge,
    },
    CatalogEntry {
        name: "mijatovic_urusov",
        description: "dX = |X|^alpha ds + dB with sigma = x; alpha = -1 is the three-dimensional Bessel process",
        dependence: "markov",
        expected_verdict: Verdict::Pass,
        expected_ez: ExpectedEz::One,
        defaults: &[("alpha", -1.0)],
        build: mijatovic_urusov,
    },
    CatalogEntry {
        name: "explosive_markov",
        description: "dX = |X|^alpha ds + dB + int z (mu - K ds) with alpha > 3 explodes; sigma = x / (2 sqrt(1+x^2)), phi = |z|",
        dependence: "markov",
        expected_verdict: Verdict::Fail,
        expected_ez: ExpectedEz::StoppedOne,
        defaults: &[("alpha", 3.5), ("lambda", 1.0), ("p", 0.5)],
        build: explosive_markov,
    },
    CatalogEntry {
        name: "bessel_counterexample",
        description: "three-dimensional Bessel process with sigma = -1/x, so z = 1/X is a strict local martingale",
        dependence: "markov",
        expected_verdict: Verdict::Fail,
        expected_ez: ExpectedEz::LessThanOne { value: 0.6827 },
        defaults: &[],
        build: bessel_counterexample,
    },
    CatalogEntry {
        name: "two_driver",
        description: "dX = -X ds + dB with M = int X/2 dB + int cos(X) dW for independent B, W",
        dependence: "markov",
        expected_verdict: Verdict::Pass,
        expected_ez: ExpectedEz::One,
        defaults: &[],
        build: two_driver,
    },
    CatalogEntry {
        name: "hitsuda_volterra",
        description: "X = int_0^t int_0^s exp(-(s-u)) dB_u ds + B_t with sigma = sqrt(1+x^2) tanh(x)",
        dependence: "volterra",
        expected_verdict: Verdict::Pass,
        expected_ez: ExpectedEz::One,
        defaults: &[],
        build: hitsuda_volterra,
    },
    CatalogEntry {
        name: "delay_sde",
        description: "delay equation with bounded coefficients of X(s - lag) and pre-history 1",
        dependence: "delay",
        expected_verdict: Verdict::Pass,
        expected_ez: ExpectedEz::One,
        defaults: &[("lag", 0.25)],
        build: delay_sde,
    },
    CatalogEntry {
        name: "weak_existence_unit_diffusion",
        description: "unit diffusion with path-dependent sigma = -sign(x) sup|X| / 2",
        dependence: "path-dependent",
        expected_verdict: Verdict::Pass,
        expected_ez: ExpectedEz::One,
        defaults: &[],
        build: weak_existence,
    },
    CatalogEntry {
        name: "singular_diffusion",
        description: "dX = X dB, diffusion vanishing at zero, with sigma = tanh(sup|X|)",
        dependence: "path-dependent",
        expected_verdict: Verdict::Pass,
        expected_ez: ExpectedEz::One,
        defaults: &[],
        build: singular_diffusion,
    },
];

pub fn catalog() -> &'static [CatalogEntry] {
    &CATALOG
}

pub fn catalog_get(name: &str) -> Result<&'static CatalogEntry> {
    CATALOG.iter().find(|e| e.name == name).ok_or_else(|| Error::UnknownModel(name.to_string()))
}

/// `E z_T` of a catalog model, if known.
pub fn expected_ez(name: &str) -> Result<ExpectedEz> {
    Ok(catalog_get(name)?.expected_ez)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_model, ValidationConfig};

    #[test]
    fn every_entry_validates() {
        for e in catalog() {
            let rep = validate_model(&e.model(), &ValidationConfig::default()).unwrap();
            assert!(rep.passed, "{} failed validation: {:?}", e.name, rep.violations.first());
        }
    }

    #[test]
    fn unknown_model_and_parameter() {
        assert!(matches!(catalog_get("nope"), Err(Error::UnknownModel(_))));
        let mut p = Params::new();
        p.insert("zeta".into(), 1.0);
        assert!(catalog_get("cev").unwrap().model_with(&p).is_err());
    }

    #[test]
    fn bridge_horizon_is_capped() {
        let mut p = Params::new();
        p.insert("T".into(), 2.0);
        assert!(catalog_get("brownian_bridge").unwrap().model_with(&p).is_err());
    }

    #[test]
    fn expected_values() {
        assert_eq!(expected_ez("cev").unwrap(), ExpectedEz::StoppedOne);
        assert_eq!(expected_ez("bessel_counterexample").unwrap(), ExpectedEz::LessThanOne { value: 0.6827 });
        assert_eq!(expected_ez("brownian_bridge").unwrap(), ExpectedEz::One);
        assert_eq!(catalog_get("brownian_bridge").unwrap().model().horizon, 1.0);
    }
}
