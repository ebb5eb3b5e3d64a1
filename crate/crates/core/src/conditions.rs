//! Analytic sufficient conditions checked numerically.
//!
//! A condition `f(s, x) <= r (1 + |x|^2)` (or with the running supremum of the
//! path for path-dependent models) is probed on a fixed lattice in a box, on
//! escape shells of radius `R, 2R, 4R, ...` and on sequences approaching the
//! declared singularities. The supremum of `f / (1 + |x|^2)` along each escape
//! sequence decides the verdict: two consecutive increases of more than 10%
//! fail, a sequence whose outermost value stays within 2% of the earlier
//! maximum passes, anything else is inconclusive.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::model::{norm_sq, Dependence, HistoryView, MarkQuadrature, ModelSpec, OwnedHistory, Singularity};
use crate::rng;
use crate::simulate::QUADRATURE_NODES;
use crate::stats::McEstimate;

/// Relative increase per doubling regarded as growth.
pub const GROWTH_STEP: f64 = 0.10;
/// Relative increase per doubling still regarded as flat.
pub const FLAT_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Bounded,
    Unbounded,
    Inconclusive,
}

impl Trend {
    fn verdict(self) -> Verdict {
        match self {
            Trend::Bounded => Verdict::Pass,
            Trend::Unbounded => Verdict::Fail,
            Trend::Inconclusive => Verdict::Inconclusive,
        }
    }

    fn combine(trends: impl IntoIterator<Item = Trend>) -> Trend {
        let mut out = Trend::Bounded;
        for t in trends {
            match t {
                Trend::Unbounded => return Trend::Unbounded,
                Trend::Inconclusive => out = Trend::Inconclusive,
                Trend::Bounded => {}
            }
        }
        out
    }
}

/// Classifies a sequence of ratio suprema taken along an escape sequence.
pub fn classify_trend(g: &[f64]) -> Trend {
    if g.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Trend::Unbounded;
    }
    let mut streak = 0;
    for w in g.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b > a + GROWTH_STEP * a.abs() && b > 0.0 {
            streak += 1;
            if streak >= 2 {
                return Trend::Unbounded;
            }
        } else {
            streak = 0;
        }
    }
    // bounded when the outermost level does not exceed the earlier maximum
    match g.split_last() {
        Some((&last, rest)) if !rest.is_empty() => {
            let prev = rest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if last <= prev + FLAT_TOLERANCE * prev.abs().max(1e-12) {
                Trend::Bounded
            } else {
                Trend::Inconclusive
            }
        }
        _ => Trend::Inconclusive,
    }
}

/// Where conditions are probed.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthDomain {
    /// Half-width of the lattice box.
    pub box_radius: f64,
    /// Lattice spacing; the lattice is anchored at the origin so larger boxes contain smaller ones.
    pub lattice_step: f64,
    pub escape_radii: Vec<f64>,
    /// Distances from singular points and times.
    pub singular_radii: Vec<f64>,
    pub time_samples: usize,
    /// Number of recorded past states in synthetic path-dependent histories.
    pub history_len: usize,
    /// Extra random unit directions on the shells (multi-dimensional states).
    pub random_directions: usize,
    pub seed: u64,
}

impl Default for GrowthDomain {
    fn default() -> Self {
        GrowthDomain {
            box_radius: 4.0,
            lattice_step: 0.25,
            escape_radii: vec![8.0, 16.0, 32.0, 64.0],
            singular_radii: vec![1e-1, 1e-2, 1e-3, 1e-4],
            time_samples: 5,
            history_len: 16,
            random_directions: 8,
            seed: 0,
        }
    }
}

/// One evaluation point: a time and a (possibly synthetic) history.
#[derive(Debug, Clone)]
pub struct Probe {
    pub time: f64,
    pub history: OwnedHistory,
    /// `|x|^2`, or the running supremum of `|X|^2` for path-dependent models.
    pub norm_sq: f64,
}

#[derive(Debug, Default)]
struct ProbeSet {
    body: Vec<Probe>,
    /// Escape families; each is a list of levels, each level a list of probes.
    families: Vec<Vec<Vec<Probe>>>,
}

const MAX_LATTICE_POINTS: usize = 20_000;

fn lattice(d: usize, radius: f64, step: f64) -> Vec<Vec<f64>> {
    // coarsen by integer multiples so the lattice stays anchored at the origin
    let mut spacing = step;
    let mut k = (radius / spacing).floor() as i64;
    let mut mult = 1.0;
    while k > 0 && ((2 * k + 1) as f64).powi(d as i32) > MAX_LATTICE_POINTS as f64 {
        mult += 1.0;
        spacing = step * mult;
        k = (radius / spacing).floor() as i64;
    }
    let coords: Vec<f64> = (-k..=k).map(|i| i as f64 * spacing).collect();
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        let mut next = Vec::with_capacity(out.len() * coords.len());
        for p in &out {
            for &c in &coords {
                let mut q = p.clone();
                q.push(c);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

fn directions(d: usize, extra: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for k in 0..d {
        for sign in [1.0, -1.0] {
            let mut v = vec![0.0; d];
            v[k] = sign;
            dirs.push(v);
        }
    }
    if d > 1 {
        let mut r = rng::stream(seed, rng::NS_PROBES, d as u64);
        let s = (d as f64).sqrt();
        dirs.push(vec![1.0 / s; d]);
        dirs.push(vec![-1.0 / s; d]);
        for _ in 0..extra {
            let v: Vec<f64> = (0..d).map(|_| 2.0 * r.random::<f64>() - 1.0).collect();
            let n = norm_sq(&v).sqrt();
            if n > 1e-6 {
                dirs.push(v.iter().map(|c| c / n).collect());
            }
        }
    }
    dirs
}

impl ProbeSet {
    fn build(spec: &ModelSpec, domain: &GrowthDomain) -> Self {
        let d = spec.d_state();
        let t_end = spec.horizon;
        let times: Vec<f64> = (0..domain.time_samples.max(1)).map(|k| t_end * k as f64 / domain.time_samples.max(1) as f64).collect();
        let sup_norm = spec.dependence.uses_sup_norm();
        let admits = |x: &[f64]| spec.boundary.admits(x[0]);
        let histories = |x: &[f64], s: f64| -> Vec<Probe> {
            if sup_norm {
                path_histories(&spec.x0, x, s, domain.history_len)
            } else {
                vec![Probe { time: s, history: OwnedHistory::point(x, s), norm_sq: norm_sq(x) }]
            }
        };

        let mut set = ProbeSet::default();
        for x in lattice(d, domain.box_radius, domain.lattice_step) {
            if !admits(&x) {
                continue;
            }
            for &s in &times {
                set.body.extend(histories(&x, s));
            }
        }

        let dirs = directions(d, domain.random_directions, domain.seed);
        let shells: Vec<Vec<Probe>> = domain
            .escape_radii
            .iter()
            .map(|&r| {
                let mut level = Vec::new();
                for u in &dirs {
                    let x: Vec<f64> = u.iter().map(|c| c * r).collect();
                    if admits(&x) {
                        for &s in &times {
                            level.extend(histories(&x, s));
                        }
                    }
                }
                level
            })
            .collect();
        set.families.push(shells);

        let mut points: Vec<Vec<f64>> = spec
            .singularities
            .iter()
            .filter_map(|s| match s {
                Singularity::State(p) => Some(p.clone()),
                Singularity::Time(_) => None,
            })
            .collect();
        if let Some(l) = spec.boundary.level() {
            let mut p = spec.x0.clone();
            p[0] = l;
            if !points.iter().any(|q| q == &p) {
                points.push(p);
            }
        }
        for p in points {
            let family: Vec<Vec<Probe>> = domain
                .singular_radii
                .iter()
                .map(|&eps| {
                    let mut level = Vec::new();
                    for u in &dirs {
                        let x: Vec<f64> = p.iter().zip(u).map(|(a, c)| a + c * eps).collect();
                        if admits(&x) {
                            for &s in &times {
                                level.extend(histories(&x, s));
                            }
                        }
                    }
                    level
                })
                .collect();
            set.families.push(family);
        }

        let coarse = lattice(d, domain.box_radius, 1.0);
        for sing in &spec.singularities {
            if let Singularity::Time(t0) = sing {
                let family: Vec<Vec<Probe>> = domain
                    .singular_radii
                    .iter()
                    .map(|&eps| {
                        let s = t0 - eps * t0.abs().max(1.0);
                        let mut level = Vec::new();
                        for x in &coarse {
                            if admits(x) {
                                level.extend(histories(x, s));
                            }
                        }
                        level
                    })
                    .collect();
                set.families.push(family);
            }
        }
        set
    }

    fn probes(&self) -> impl Iterator<Item = &Probe> {
        self.body.iter().chain(self.families.iter().flatten().flatten())
    }
}

/// Synthetic histories reaching `x`: a constant path, and spikes of size `x`
/// at the start, middle and end of an otherwise initial-state path.
fn path_histories(x0: &[f64], x: &[f64], s: f64, len: usize) -> Vec<Probe> {
    let d = x.len();
    let mut out = Vec::with_capacity(4);
    let constant: Vec<f64> = (0..len).flat_map(|_| x.iter().copied()).collect();
    let h = OwnedHistory::new(x0.to_vec(), constant, x.to_vec(), s);
    out.push(Probe { time: s, norm_sq: h.view().running_sup_sq(), history: h });
    for spike in [0usize, len / 2] {
        let mut past: Vec<f64> = (0..len).flat_map(|_| x0.iter().copied()).collect();
        past[spike * d..(spike + 1) * d].copy_from_slice(x);
        let h = OwnedHistory::new(x0.to_vec(), past, x0.to_vec(), s);
        out.push(Probe { time: s, norm_sq: h.view().running_sup_sq(), history: h });
    }
    let past: Vec<f64> = (0..len).flat_map(|_| x0.iter().copied()).collect();
    let h = OwnedHistory::new(x0.to_vec(), past, x.to_vec(), s);
    out.push(Probe { time: s, norm_sq: h.view().running_sup_sq(), history: h });
    out
}

/// Result of a growth check.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthResult {
    /// Largest observed `f / (1 + |x|^2)`.
    pub estimated_r: f64,
    pub witness_time: f64,
    pub witness_state: Vec<f64>,
    /// Suprema per escape shell.
    pub shell_sups: Vec<f64>,
    /// Suprema per distance, one sequence per singular point or time.
    pub singular_sups: Vec<Vec<f64>>,
    pub trend: Trend,
    pub verdict: Verdict,
}

fn growth_over(set: &ProbeSet, mut f: impl FnMut(&Probe) -> f64) -> GrowthResult {
    let mut best = f64::NEG_INFINITY;
    let mut witness: Option<&Probe> = None;
    for p in set.probes() {
        let v = f(p) / (1.0 + p.norm_sq);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v > best || witness.is_none() {
            best = v;
            witness = Some(p);
        }
    }
    let sups: Vec<Vec<f64>> = set
        .families
        .iter()
        .map(|fam| {
            fam.iter()
                .map(|level| {
                    level
                        .iter()
                        .map(|p| {
                            let v = f(p) / (1.0 + p.norm_sq);
                            if v.is_nan() {
                                f64::INFINITY
                            } else {
                                v
                            }
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .filter(|v| *v > f64::NEG_INFINITY)
                .collect()
        })
        .collect();
    let trend = Trend::combine(sups.iter().map(|g| classify_trend(g)));
    let (witness_time, witness_state) =
        witness.map(|p| (p.time, p.history.current.clone())).unwrap_or((0.0, Vec::new()));
    let mut it = sups.into_iter();
    GrowthResult {
        estimated_r: best,
        witness_time,
        witness_state,
        shell_sups: it.next().unwrap_or_default(),
        singular_sups: it.collect(),
        trend,
        verdict: trend.verdict(),
    }
}

/// Growth of a plain state function `f(x) <= r (1 + |x|^2)` on `d`-dimensional states,
/// probing `singular_points` in addition to the box and the shells.
pub fn growth_ratio(f: impl Fn(&[f64]) -> f64, d: usize, singular_points: &[Vec<f64>], domain: &GrowthDomain) -> GrowthResult {
    let coef = crate::model::CoefficientSet::new(
        d,
        1,
        std::sync::Arc::new(|_, _, o: &mut [f64]| o.fill(0.0)),
        std::sync::Arc::new(|_, _, o: &mut [f64]| o.fill(0.0)),
        std::sync::Arc::new(|_, _, o: &mut [f64]| o.fill(0.0)),
    );
    let mut spec = ModelSpec::new("growth", vec![0.0; d], coef);
    for p in singular_points {
        spec.singularities.push(Singularity::State(p.clone()));
    }
    let domain = GrowthDomain { time_samples: 1, ..domain.clone() };
    let set = ProbeSet::build(&spec, &domain);
    growth_over(&set, |p| f(&p.history.current))
}

/// Coefficients and jump integrals at one point.
struct Local {
    a: Vec<f64>,
    b: Vec<f64>,
    sig: Vec<f64>,
    /// `int |h|^2 K`.
    h2: f64,
    /// `int h phi K`.
    h_phi: Vec<f64>,
    /// `int |h|^2 phi K`.
    h2_phi: f64,
    /// `int phi^2 K`.
    phi2: f64,
}

fn local(spec: &ModelSpec, quad: &MarkQuadrature, s: f64, v: &HistoryView<'_>) -> Local {
    let d = spec.d_state();
    let m = spec.d_brownian();
    let c = &spec.coefficients;
    let mut l = Local {
        a: vec![0.0; d],
        b: vec![0.0; d * m],
        sig: vec![0.0; m],
        h2: 0.0,
        h_phi: vec![0.0; d],
        h2_phi: 0.0,
        phi2: 0.0,
    };
    c.drift(s, v, &mut l.a);
    c.diffusion(s, v, &mut l.b);
    c.sigma(s, v, &mut l.sig);
    if spec.active_levy().is_some() {
        let mut h = vec![0.0; d];
        for (&z, &w) in quad.nodes.iter().zip(&quad.weights) {
            c.jump_x(s, v, z, &mut h);
            let phi = c.jump_m(s, v, z);
            let hh = norm_sq(&h);
            l.h2 += w * hh;
            l.h2_phi += w * hh * phi;
            l.phi2 += w * phi * phi;
            for k in 0..d {
                l.h_phi[k] += w * h[k] * phi;
            }
        }
    }
    l
}

impl Local {
    fn trace_bb(&self) -> f64 {
        self.b.iter().map(|v| v * v).sum()
    }

    /// `b sigma*`.
    fn b_sigma(&self) -> Vec<f64> {
        let m = self.sig.len();
        self.a.iter().enumerate().map(|(r, _)| (0..m).map(|c| self.b[r * m + c] * self.sig[c]).sum()).collect()
    }
}

/// `|sigma|^2 + int phi^2 K`.
pub fn sigma_phi_growth(spec: &ModelSpec, quad: &MarkQuadrature, s: f64, v: &HistoryView<'_>) -> f64 {
    let l = local(spec, quad, s, v);
    norm_sq(&l.sig) + l.phi2
}

/// `L = 2 <x, a> + tr(b b*) + int |h|^2 K`.
pub fn operator_l_markov(spec: &ModelSpec, quad: &MarkQuadrature, s: f64, v: &HistoryView<'_>) -> f64 {
    let l = local(spec, quad, s, v);
    let x = v.left_limit();
    2.0 * dot(x, &l.a) + l.trace_bb() + l.h2
}

/// `L` after the measure change:
/// `2 <x, a + b sigma* + int h phi K> + tr(b b*) + int |h|^2 K + int |h|^2 phi K`.
pub fn operator_frak_l_markov(spec: &ModelSpec, quad: &MarkQuadrature, s: f64, v: &HistoryView<'_>) -> f64 {
    let l = local(spec, quad, s, v);
    let x = v.left_limit();
    let bs = l.b_sigma();
    let drift: Vec<f64> = (0..x.len()).map(|k| l.a[k] + bs[k] + l.h_phi[k]).collect();
    2.0 * dot(x, &drift) + l.trace_bb() + l.h2 + l.h2_phi
}

/// `L = |a|^2 + tr(b b*) + int |h|^2 K` for path-dependent coefficients.
pub fn operator_l_pathdep(spec: &ModelSpec, quad: &MarkQuadrature, s: f64, v: &HistoryView<'_>) -> f64 {
    let l = local(spec, quad, s, v);
    norm_sq(&l.a) + l.trace_bb() + l.h2
}

/// Path-dependent `L` after the measure change:
/// `L + |b sigma*|^2 + (int |h|^2 K)(int phi^2 K) + int |h|^2 phi K`.
pub fn operator_frak_l_pathdep(spec: &ModelSpec, quad: &MarkQuadrature, s: f64, v: &HistoryView<'_>) -> f64 {
    let l = local(spec, quad, s, v);
    norm_sq(&l.a) + l.trace_bb() + l.h2 + norm_sq(&l.b_sigma()) + l.h2 * l.phi2 + l.h2_phi
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionEntry {
    pub name: String,
    pub description: String,
    pub result: GrowthResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelCheck {
    pub square_integral: f64,
    pub verdict: Verdict,
}

/// Sufficient conditions for `E z_T = 1` evaluated on a model.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub model: String,
    pub dependence: String,
    pub criterion: String,
    pub domain: GrowthDomain,
    pub entries: Vec<ConditionEntry>,
    pub kernel: Option<KernelCheck>,
    pub overall: Verdict,
}

impl ConditionReport {
    pub fn entry(&self, name: &str) -> Option<&ConditionEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Checks the linear-growth conditions on `sigma` and `phi` and on the
/// operators `L` (before) and `frak L` (after the measure change).
///
/// Markov models use `2 <x, a> + ...` against `1 + |x|^2`; path-dependent and
/// delay models use `|a|^2 + ...` against `1 + sup |X|^2`; Volterra models
/// check the growth of `sigma` and square integrability of the kernel.
pub fn benes_verdict(spec: &ModelSpec, domain: &GrowthDomain) -> Result<ConditionReport> {
    spec.check_shape()?;
    let quad = spec.active_levy().map(|l| l.quadrature(QUADRATURE_NODES, domain.seed)).unwrap_or_else(MarkQuadrature::empty);
    let set = ProbeSet::build(spec, domain);
    let eval = |f: fn(&ModelSpec, &MarkQuadrature, f64, &HistoryView<'_>) -> f64| {
        growth_over(&set, |p| f(spec, &quad, p.time, &p.history.view()))
    };
    let mut entries = vec![ConditionEntry {
        name: "sigma_phi_growth".into(),
        description: "|sigma|^2 + int phi^2 K <= r (1 + |x|^2)".into(),
        result: eval(sigma_phi_growth),
    }];
    let mut kernel = None;
    let criterion = match &spec.dependence {
        Dependence::Markov => {
            entries.push(ConditionEntry {
                name: "operator_L".into(),
                description: "2<x,a> + tr(bb*) + int |h|^2 K <= r (1 + |x|^2)".into(),
                result: eval(operator_l_markov),
            });
            entries.push(ConditionEntry {
                name: "operator_frakL".into(),
                description: "2<x, a + b sigma* + int h phi K> + tr(bb*) + int |h|^2 (1 + phi) K <= r (1 + |x|^2)".into(),
                result: eval(operator_frak_l_markov),
            });
            "markov linear growth"
        }
        Dependence::PathDependent | Dependence::Delay { .. } => {
            entries.push(ConditionEntry {
                name: "operator_L".into(),
                description: "|a|^2 + tr(bb*) + int |h|^2 K <= r (1 + sup |X|^2)".into(),
                result: eval(operator_l_pathdep),
            });
            entries.push(ConditionEntry {
                name: "operator_frakL".into(),
                description: "|a|^2 + tr(bb*) + int|h|^2 K + |b sigma*|^2 + int|h|^2 K int phi^2 K + int |h|^2 phi K <= r (1 + sup |X|^2)".into(),
                result: eval(operator_frak_l_pathdep),
            });
            "path-dependent linear growth"
        }
        Dependence::Volterra { kernel: k } => {
            let l2 = k.square_integral(spec.horizon, 400);
            kernel = Some(KernelCheck { square_integral: l2, verdict: if l2.is_finite() { Verdict::Pass } else { Verdict::Fail } });
            "volterra growth with square-integrable kernel"
        }
    };
    let mut verdicts: Vec<Verdict> = entries.iter().map(|e| e.result.verdict).collect();
    if let Some(k) = &kernel {
        verdicts.push(k.verdict);
    }
    let overall = if verdicts.contains(&Verdict::Fail) {
        Verdict::Fail
    } else if verdicts.iter().all(|v| *v == Verdict::Pass) {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };
    Ok(ConditionReport {
        model: spec.name.clone(),
        dependence: spec.dependence.label().into(),
        criterion: criterion.into(),
        domain: domain.clone(),
        entries,
        kernel,
        overall,
    })
}

/// Monte Carlo estimate of an exponential moment `E exp(v)` from samples of `v`.
#[derive(Debug, Clone, Serialize)]
pub struct MomentEstimate {
    pub estimate: McEstimate,
    /// Means truncated at the sample quantiles `1 - 10^-k`, then the full mean.
    pub shell_means: Vec<f64>,
    /// Hill estimate of the tail index of `exp(v)` from the top `sqrt(n)` samples.
    pub tail_index: Option<f64>,
    pub tail_index_se: Option<f64>,
    /// The shell means keep growing, or a tail index above one cannot be
    /// established at 3 se (the mean would be infinite at index one or below).
    pub diverging: bool,
}

/// Hill estimator on `exp(v)`: `k / sum_{i<k} (v_(i) - v_(k))` over the `k` largest values.
fn hill_tail_index(sorted_desc: &[f64], k: usize) -> Option<(f64, f64)> {
    if k < 10 || sorted_desc.len() <= k {
        return None;
    }
    let base = sorted_desc[k];
    let spread: f64 = sorted_desc[..k].iter().map(|v| v - base).sum();
    if !(spread > 0.0) || !spread.is_finite() {
        return None;
    }
    let alpha = k as f64 / spread;
    Some((alpha, alpha / (k as f64).sqrt()))
}

/// Decides divergence from truncated means of `exp(v)` at the quantile shells
/// `1 - 10^-k` (for a tail index near one each decade adds a similar amount of
/// mass, while finite moments make the increments shrink geometrically) and
/// from a Hill estimate of the tail index of `exp(v)`.
pub fn exponential_moment(v: &[f64]) -> MomentEstimate {
    let estimate = McEstimate::from_logs(v);
    let n = v.len();
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let shift = sorted.last().copied().unwrap_or(0.0);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let mut shells = Vec::new();
    let mut k = 1;
    while n > 0 && (n as f64) * 10f64.powi(-k) >= 10.0 {
        let idx = ((1.0 - 10f64.powi(-k)) * n as f64).floor() as usize;
        let cap = sorted[idx.min(n - 1)];
        let s: Vec<f64> = v.iter().map(|&x| (x.min(cap) - shift).exp()).collect();
        shells.push(crate::stats::pairwise_sum(&s) / n as f64 * shift.exp());
        k += 1;
    }
    shells.push(estimate.mean);
    let inc: Vec<f64> = shells.windows(2).map(|w| w[1] - w[0]).collect();
    let growing = inc.len() >= 3 && {
        let q = inc.len();
        let (i1, i2, i3) = (inc[q - 3], inc[q - 2], inc[q - 1]);
        i1 > 0.0 && i2 >= 0.75 * i1 && i3 >= 0.75 * i2 && i3 > 0.01 * estimate.mean
    };
    let finite: Vec<f64> = sorted.iter().rev().copied().filter(|x| x.is_finite()).collect();
    let hill = hill_tail_index(&finite, (finite.len() as f64).sqrt().ceil() as usize);
    let heavy = hill.is_some_and(|(a, se)| a - 3.0 * se <= 1.0);
    MomentEstimate {
        estimate,
        shell_means: shells,
        tail_index: hill.map(|h| h.0),
        tail_index_se: hill.map(|h| h.1),
        diverging: growing || heavy,
    }
}

/// Novikov statistic `E exp(<M^c>_T / 2)` from per-path samples of `<M^c>_T / 2`.
pub fn novikov_estimate(half_qv: &[f64]) -> MomentEstimate {
    exponential_moment(half_qv)
}

/// Kazamaki statistic `max_t E exp(M^c_t / 2)` over checkpoints; `half_mc[j]`
/// holds the per-path samples at checkpoint `j`. Divergence at any checkpoint is reported.
pub fn kazamaki_estimate(half_mc: &[Vec<f64>]) -> MomentEstimate {
    let per: Vec<MomentEstimate> = half_mc.iter().map(|v| exponential_moment(v)).collect();
    let diverging = per.iter().any(|m| m.diverging);
    let mut best = per
        .into_iter()
        .max_by(|a, b| a.estimate.mean.total_cmp(&b.estimate.mean))
        .unwrap_or_else(|| exponential_moment(&[]));
    best.diverging = diverging;
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_ratio_tends_to_four() {
        let r = growth_ratio(|x| 4.0 * x[0] * x[0], 1, &[], &GrowthDomain::default());
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.estimated_r > 3.99 && r.estimated_r < 4.0);
    }

    #[test]
    fn inverse_square_fails_near_zero() {
        let r = growth_ratio(|x| 1.0 / (x[0] * x[0]), 1, &[vec![0.0]], &GrowthDomain::default());
        assert_eq!(r.trend, Trend::Unbounded);
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn cubic_growth_fails_on_shells() {
        let r = growth_ratio(|x| x[0].abs().powi(3), 1, &[], &GrowthDomain::default());
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn trend_rules() {
        assert_eq!(classify_trend(&[1.0, 1.2, 1.5]), Trend::Unbounded);
        assert_eq!(classify_trend(&[1.0, 1.05, 1.08, 1.12]), Trend::Inconclusive);
        assert_eq!(classify_trend(&[0.246, 0.2526, 0.2504, 0.24998]), Trend::Bounded);
        assert_eq!(classify_trend(&[3.0, 2.0, 2.0, 1.0]), Trend::Bounded);
        assert_eq!(classify_trend(&[0.0, 0.0, 0.0]), Trend::Bounded);
        assert_eq!(classify_trend(&[-5.0, -20.0, -80.0]), Trend::Bounded);
    }

    #[test]
    fn constant_exponential_moment_is_stable() {
        let v = vec![0.5; 100_000];
        let m = exponential_moment(&v);
        assert!(!m.diverging);
        assert!((m.estimate.mean - 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_square_moment_diverges_at_the_boundary() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = crate::rng::stream(3, 0, 0);
        let b: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        // E exp(B_t^2 / 2) is infinite exactly from t = 1 on
        let at = |t: f64| exponential_moment(&b.iter().map(|x| 0.5 * t * x * x - 0.5 * t).collect::<Vec<_>>());
        let boundary = at(1.0);
        assert!(boundary.diverging);
        assert!(boundary.tail_index.unwrap() < 1.2);
        let half = at(0.5);
        assert!(!half.diverging);
        assert!((half.tail_index.unwrap() - 2.0).abs() < 0.3);
    }

    #[test]
    fn pareto_tail_index_one_diverges_and_two_does_not() {
        let n = 200_000;
        let u: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        // log of Pareto(alpha) quantiles
        let heavy: Vec<f64> = u.iter().map(|p| -(1.0 - p).ln() / 1.0).collect();
        let light: Vec<f64> = u.iter().map(|p| -(1.0 - p).ln() / 3.0).collect();
        assert!(exponential_moment(&heavy).diverging);
        assert!(!exponential_moment(&light).diverging);
    }
}
