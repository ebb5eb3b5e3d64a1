//! Model description: coefficients, jump measure, dependence class and the
//! read-only history view that coefficients are evaluated against.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;

/// Read-only view of a path up to (and including the left limit at) time `s`.
///
/// At grid point `i` the view holds the `i` strictly earlier grid states
/// `X_{t_0}, ..., X_{t_{i-1}}` plus the left limit `X_{t_i-}`, which is the
/// state at `t_i` before any jump in `(t_i, t_{i+1}]` is applied.
#[derive(Clone, Copy)]
pub struct HistoryView<'a> {
    x0: &'a [f64],
    past: &'a [f64],
    current: &'a [f64],
    dim: usize,
    dt: f64,
    time: f64,
    sup_sq: f64,
    volterra: f64,
}

impl<'a> HistoryView<'a> {
    /// Builds a view. `past` holds `len * dim` values on the uniform grid
    /// `0, dt, 2 dt, ...`; `sup_sq` must be the running supremum of `|X|^2`
    /// over the past states and the left limit.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x0: &'a [f64],
        past: &'a [f64],
        current: &'a [f64],
        dt: f64,
        time: f64,
        sup_sq: f64,
        volterra: f64,
    ) -> Self {
        let dim = current.len();
        debug_assert_eq!(x0.len(), dim);
        debug_assert_eq!(past.len() % dim.max(1), 0);
        HistoryView { x0, past, current, dim, dt, time, sup_sq, volterra }
    }

    /// View at time 0 of a path started at `x0`.
    pub fn initial(x0: &'a [f64]) -> Self {
        let sup_sq = norm_sq(x0);
        HistoryView { x0, past: &[], current: x0, dim: x0.len(), dt: 0.0, time: 0.0, sup_sq, volterra: 0.0 }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of strictly earlier grid states.
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.past.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.past.is_empty()
    }

    /// `X_{s-}`.
    pub fn left_limit(&self) -> &'a [f64] {
        self.current
    }

    /// First component of the left limit; convenience for scalar models.
    pub fn x(&self) -> f64 {
        self.current[0]
    }

    pub fn initial_state(&self) -> &'a [f64] {
        self.x0
    }

    /// Grid state `j < len()`.
    pub fn state(&self, j: usize) -> &'a [f64] {
        &self.past[j * self.dim..(j + 1) * self.dim]
    }

    /// `sup_{u < s} |X_u|^2` including the left limit.
    pub fn running_sup_sq(&self) -> f64 {
        self.sup_sq
    }

    /// Accumulated Volterra integral `int_0^s l(s, u) dB_u` (zero for other models).
    pub fn volterra(&self) -> f64 {
        self.volterra
    }

    /// Piecewise-constant lookup of `X_u` for `u <= s`; negative times read the
    /// constant pre-history `x0`.
    pub fn try_state_at(&self, u: f64) -> Result<&'a [f64]> {
        if u > self.time + 1e-12 * self.time.abs().max(1.0) {
            return Err(Error::OutOfRange { requested: u, last: self.time });
        }
        Ok(self.state_at(u))
    }

    /// Like [`try_state_at`](Self::try_state_at) but clamps times past `s` to the left limit.
    pub fn state_at(&self, u: f64) -> &'a [f64] {
        if u < 0.0 {
            return self.x0;
        }
        let n = self.len();
        if n == 0 || self.dt <= 0.0 {
            return self.current;
        }
        let j = (u / self.dt + 1e-9).floor() as usize;
        if j >= n {
            self.current
        } else {
            self.state(j)
        }
    }
}

/// Owned history used to build synthetic views (validation, condition probes).
#[derive(Debug, Clone)]
pub struct OwnedHistory {
    pub x0: Vec<f64>,
    pub past: Vec<f64>,
    pub current: Vec<f64>,
    pub dt: f64,
    pub time: f64,
    pub volterra: f64,
    sup_sq: f64,
}

impl OwnedHistory {
    /// History whose grid states are `past` (flattened) followed by the left limit `current`,
    /// spread uniformly over `[0, time]`.
    pub fn new(x0: Vec<f64>, past: Vec<f64>, current: Vec<f64>, time: f64) -> Self {
        let dim = current.len();
        let n = if dim == 0 { 0 } else { past.len() / dim };
        let dt = if n == 0 { 0.0 } else { time / n as f64 };
        let mut sup_sq = norm_sq(&current);
        for chunk in past.chunks(dim.max(1)) {
            sup_sq = sup_sq.max(norm_sq(chunk));
        }
        OwnedHistory { x0, past, current, dt, time, volterra: 0.0, sup_sq }
    }

    /// Single-state history: the path sits at `x` at time `s` with no recorded past.
    pub fn point(x: &[f64], s: f64) -> Self {
        OwnedHistory::new(x.to_vec(), Vec::new(), x.to_vec(), s)
    }

    pub fn with_volterra(mut self, v: f64) -> Self {
        self.volterra = v;
        self
    }

    pub fn view(&self) -> HistoryView<'_> {
        HistoryView::new(&self.x0, &self.past, &self.current, self.dt, self.time, self.sup_sq, self.volterra)
    }
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub type VecFn = Arc<dyn Fn(f64, &HistoryView<'_>, &mut [f64]) + Send + Sync>;
pub type MarkVecFn = Arc<dyn Fn(f64, &HistoryView<'_>, f64, &mut [f64]) + Send + Sync>;
pub type MarkFn = Arc<dyn Fn(f64, &HistoryView<'_>, f64) -> f64 + Send + Sync>;

/// Coefficients of `dX = a dt + b dB + int h (mu - K dt)` and of the driving
/// martingale `M = int sigma dB + int phi (mu - K dt)`.
///
/// Diffusion output is row-major `d_state x d_brownian`.
#[derive(Clone)]
pub struct CoefficientSet {
    d_state: usize,
    d_brownian: usize,
    drift: VecFn,
    diffusion: VecFn,
    sigma: VecFn,
    jump_x: Option<MarkVecFn>,
    jump_m: Option<MarkFn>,
}

impl CoefficientSet {
    pub fn new(d_state: usize, d_brownian: usize, drift: VecFn, diffusion: VecFn, sigma: VecFn) -> Self {
        CoefficientSet { d_state, d_brownian, drift, diffusion, sigma, jump_x: None, jump_m: None }
    }

    /// One state component driven by one Brownian motion.
    pub fn scalar<A, B, S>(a: A, b: B, sigma: S) -> Self
    where
        A: Fn(f64, &HistoryView<'_>) -> f64 + Send + Sync + 'static,
        B: Fn(f64, &HistoryView<'_>) -> f64 + Send + Sync + 'static,
        S: Fn(f64, &HistoryView<'_>) -> f64 + Send + Sync + 'static,
    {
        CoefficientSet::new(
            1,
            1,
            Arc::new(move |s, h, out| out[0] = a(s, h)),
            Arc::new(move |s, h, out| out[0] = b(s, h)),
            Arc::new(move |s, h, out| out[0] = sigma(s, h)),
        )
    }

    pub fn with_jumps(mut self, h: MarkVecFn, phi: MarkFn) -> Self {
        self.jump_x = Some(h);
        self.jump_m = Some(phi);
        self
    }

    /// Scalar jump coefficients `h(s, x, z)` and `phi(s, x, z)`.
    pub fn with_scalar_jumps<H, P>(self, h: H, phi: P) -> Self
    where
        H: Fn(f64, &HistoryView<'_>, f64) -> f64 + Send + Sync + 'static,
        P: Fn(f64, &HistoryView<'_>, f64) -> f64 + Send + Sync + 'static,
    {
        self.with_jumps(Arc::new(move |s, hist, z, out| out[0] = h(s, hist, z)), Arc::new(phi))
    }

    pub fn d_state(&self) -> usize {
        self.d_state
    }

    pub fn d_brownian(&self) -> usize {
        self.d_brownian
    }

    pub fn has_jumps(&self) -> bool {
        self.jump_x.is_some() || self.jump_m.is_some()
    }

    pub fn drift(&self, s: f64, h: &HistoryView<'_>, out: &mut [f64]) {
        (self.drift)(s, h, out)
    }

    pub fn diffusion(&self, s: f64, h: &HistoryView<'_>, out: &mut [f64]) {
        (self.diffusion)(s, h, out)
    }

    pub fn sigma(&self, s: f64, h: &HistoryView<'_>, out: &mut [f64]) {
        (self.sigma)(s, h, out)
    }

    /// `h(s, x, z)`; zero when the model has no state jumps.
    pub fn jump_x(&self, s: f64, h: &HistoryView<'_>, z: f64, out: &mut [f64]) {
        match &self.jump_x {
            Some(f) => f(s, h, z, out),
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    /// `phi(s, x, z)`; zero when the martingale has no jump part.
    pub fn jump_m(&self, s: f64, h: &HistoryView<'_>, z: f64) -> f64 {
        match &self.jump_m {
            Some(f) => f(s, h, z),
            None => 0.0,
        }
    }
}

pub type MarkSampler = Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>;

#[derive(Clone)]
enum MarkLaw {
    Atoms(Vec<(f64, f64)>),
    Sampler { sample: MarkSampler, second: f64, third_abs: Option<f64> },
}

/// Finite-activity Levy measure `K(dz) = lambda * P(dz)`.
#[derive(Clone)]
pub struct LevyMeasure {
    total_mass: f64,
    law: MarkLaw,
}

/// Nodes and weights integrating against `K`; the weights sum to `K(R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MarkQuadrature {
    pub fn empty() -> Self {
        MarkQuadrature { nodes: Vec::new(), weights: Vec::new() }
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

impl LevyMeasure {
    /// Discrete mark law `P(z = z_k) = p_k` with total intensity `total_mass`.
    pub fn atoms(total_mass: f64, atoms: Vec<(f64, f64)>) -> Result<Self> {
        let mass: f64 = atoms.iter().map(|a| a.1).sum();
        if !(total_mass >= 0.0 && total_mass.is_finite()) {
            return Err(Error::InvalidConfig(format!("jump intensity must be finite and >= 0, got {total_mass}")));
        }
        if atoms.is_empty() || atoms.iter().any(|a| a.1 < 0.0) || (mass - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig("mark probabilities must be non-negative and sum to one".into()));
        }
        Ok(LevyMeasure { total_mass, law: MarkLaw::Atoms(atoms) })
    }

    /// Two-point marks `+1` with probability `p` and `-1/2` otherwise.
    pub fn two_point(lambda: f64, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("mark probability must lie in [0, 1], got {p}")));
        }
        LevyMeasure::atoms(lambda, vec![(1.0, p), (-0.5, 1.0 - p)])
    }

    /// Continuous mark law given by a sampler. `second_moment` and
    /// `third_abs_moment` are integrals against `K`, not against the mark law.
    pub fn from_sampler(total_mass: f64, sample: MarkSampler, second_moment: f64, third_abs_moment: Option<f64>) -> Self {
        LevyMeasure { total_mass, law: MarkLaw::Sampler { sample, second: second_moment, third_abs: third_abs_moment } }
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// `int z^2 K(dz)`.
    pub fn second_moment(&self) -> f64 {
        match &self.law {
            MarkLaw::Atoms(a) => self.total_mass * a.iter().map(|(z, p)| p * z * z).sum::<f64>(),
            MarkLaw::Sampler { second, .. } => *second,
        }
    }

    /// `int |z|^3 K(dz)` when known.
    pub fn third_abs_moment(&self) -> Option<f64> {
        match &self.law {
            MarkLaw::Atoms(a) => Some(self.total_mass * a.iter().map(|(z, p)| p * z.abs().powi(3)).sum::<f64>()),
            MarkLaw::Sampler { third_abs, .. } => *third_abs,
        }
    }

    pub fn atoms_list(&self) -> Option<&[(f64, f64)]> {
        match &self.law {
            MarkLaw::Atoms(a) => Some(a),
            MarkLaw::Sampler { .. } => None,
        }
    }

    pub fn sample_mark(&self, rng: &mut dyn RngCore) -> f64 {
        match &self.law {
            MarkLaw::Atoms(a) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(z, p) in a {
                    acc += p;
                    if u < acc {
                        return z;
                    }
                }
                a.last().map(|x| x.0).unwrap_or(0.0)
            }
            MarkLaw::Sampler { sample, .. } => sample(rng),
        }
    }

    /// Quadrature for `int f(z) K(dz)`: exact for atomic laws, otherwise `q`
    /// equally weighted nodes drawn from a stream derived from `seed`.
    pub fn quadrature(&self, q: usize, seed: u64) -> MarkQuadrature {
        match &self.law {
            MarkLaw::Atoms(a) => MarkQuadrature {
                nodes: a.iter().map(|x| x.0).collect(),
                weights: a.iter().map(|x| x.1 * self.total_mass).collect(),
            },
            MarkLaw::Sampler { sample, .. } => {
                let mut r = rng::stream(seed, rng::NS_QUADRATURE, 0);
                let nodes: Vec<f64> = (0..q).map(|_| sample(&mut r)).collect();
                let weights = vec![self.total_mass / q as f64; q];
                MarkQuadrature { nodes, weights }
            }
        }
    }
}

impl fmt::Debug for LevyMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("LevyMeasure");
        d.field("total_mass", &self.total_mass);
        match &self.law {
            MarkLaw::Atoms(a) => d.field("atoms", a),
            MarkLaw::Sampler { .. } => d.field("atoms", &"<sampler>"),
        };
        d.finish()
    }
}

/// Kernel `l(s, u)` of a Volterra drift `int_0^s l(s, u) dB_u`.
#[derive(Clone)]
pub struct VolterraKernel {
    eval: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    exponential: Option<(f64, f64)>,
}

impl VolterraKernel {
    pub fn new(eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        VolterraKernel { eval: Arc::new(eval), exponential: None }
    }

    /// `l(s, u) = c exp(-k (s - u))`, accumulated recursively during integration.
    pub fn exponential(c: f64, k: f64) -> Self {
        VolterraKernel { eval: Arc::new(move |s, u| c * (-k * (s - u)).exp()), exponential: Some((c, k)) }
    }

    pub fn eval(&self, s: f64, u: f64) -> f64 {
        (self.eval)(s, u)
    }

    pub(crate) fn exponential_params(&self) -> Option<(f64, f64)> {
        self.exponential
    }

    /// Midpoint estimate of `int_0^T int_0^s l(s, u)^2 du ds`.
    pub fn square_integral(&self, horizon: f64, n: usize) -> f64 {
        let h = horizon / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            let s = (i as f64 + 0.5) * h;
            for j in 0..=i {
                let u = (j as f64 + 0.5) * h;
                // diagonal cells are half inside the triangle u < s
                let w = if j < i { 1.0 } else if j == i { 0.5 } else { 0.0 };
                if w > 0.0 {
                    let v = self.eval(s, u);
                    total += w * v * v * h * h;
                }
            }
        }
        total
    }
}

#[derive(Clone)]
pub enum Dependence {
    Markov,
    PathDependent,
    /// Coefficients read `X_{s - lag}` through [`HistoryView::state_at`].
    Delay { lag: f64 },
    /// Drift reads the accumulated kernel integral through [`HistoryView::volterra`].
    Volterra { kernel: VolterraKernel },
}

impl Dependence {
    pub fn label(&self) -> &'static str {
        match self {
            Dependence::Markov => "markov",
            Dependence::PathDependent => "path-dependent",
            Dependence::Delay { .. } => "delay",
            Dependence::Volterra { .. } => "volterra",
        }
    }

    /// Whether growth is measured by the running supremum of the path.
    pub fn uses_sup_norm(&self) -> bool {
        matches!(self, Dependence::PathDependent | Dependence::Delay { .. })
    }
}

impl fmt::Debug for Dependence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dependence::Delay { lag } => write!(f, "Delay {{ lag: {lag} }}"),
            other => f.write_str(other.label()),
        }
    }
}

/// Behaviour of the first state component at a lower boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "level", rename_all = "snake_case")]
pub enum Boundary {
    Free,
    /// Clamped at the level and frozen from then on.
    Absorbing(f64),
    /// The state space is `x > level`; a path leaving it is removed.
    Killing(f64),
}

impl Boundary {
    /// Whether `x` (first component) lies in the state space.
    pub fn admits(&self, x: f64) -> bool {
        match *self {
            Boundary::Free => true,
            Boundary::Absorbing(l) => x >= l,
            Boundary::Killing(l) => x > l,
        }
    }

    pub fn level(&self) -> Option<f64> {
        match *self {
            Boundary::Free => None,
            Boundary::Absorbing(l) | Boundary::Killing(l) => Some(l),
        }
    }
}

/// Points where coefficients are allowed to blow up; condition probes approach them.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Singularity {
    State(Vec<f64>),
    Time(f64),
}

/// Exact transition sampler used instead of the Euler step (continuous models only).
pub trait ExactSampler: Send + Sync {
    /// Advances `(t, x)` over `dt` using the standard normals `xi`, writing the next
    /// state and Brownian increments consistent with it.
    fn advance(&self, t: f64, dt: f64, x: &[f64], xi: &[f64], next: &mut [f64], db: &mut [f64]);
}

/// Complete description of a model.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub x0: Vec<f64>,
    pub coefficients: CoefficientSet,
    pub levy: Option<LevyMeasure>,
    pub dependence: Dependence,
    pub horizon: f64,
    pub boundary: Boundary,
    /// Paths whose state exceeds this norm are treated as exploded.
    pub explosion_radius: Option<f64>,
    pub singularities: Vec<Singularity>,
    pub exact: Option<Arc<dyn ExactSampler>>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, x0: Vec<f64>, coefficients: CoefficientSet) -> Self {
        ModelSpec {
            name: name.into(),
            x0,
            coefficients,
            levy: None,
            dependence: Dependence::Markov,
            horizon: 1.0,
            boundary: Boundary::Free,
            explosion_radius: None,
            singularities: Vec::new(),
            exact: None,
        }
    }

    pub fn with_levy(mut self, levy: LevyMeasure) -> Self {
        self.levy = Some(levy);
        self
    }

    pub fn with_dependence(mut self, dependence: Dependence) -> Self {
        self.dependence = dependence;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_explosion_radius(mut self, r: f64) -> Self {
        self.explosion_radius = Some(r);
        self
    }

    pub fn with_singularity(mut self, s: Singularity) -> Self {
        self.singularities.push(s);
        self
    }

    pub fn with_exact_sampler(mut self, sampler: Arc<dyn ExactSampler>) -> Self {
        self.exact = Some(sampler);
        self
    }

    pub fn d_state(&self) -> usize {
        self.coefficients.d_state()
    }

    pub fn d_brownian(&self) -> usize {
        self.coefficients.d_brownian()
    }

    /// Jump measure, present only when the model actually has jump coefficients.
    pub fn active_levy(&self) -> Option<&LevyMeasure> {
        self.levy.as_ref().filter(|l| l.total_mass() > 0.0 && self.coefficients.has_jumps())
    }

    pub(crate) fn check_shape(&self) -> Result<()> {
        if self.x0.len() != self.d_state() {
            return Err(Error::InvalidConfig(format!(
                "initial state has {} components, coefficients expect {}",
                self.x0.len(),
                self.d_state()
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !self.boundary.admits(self.x0[0]) {
            return Err(Error::InvalidConfig(format!("initial state {:?} lies outside the state space", self.x0)));
        }
        Ok(())
    }
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("x0", &self.x0)
            .field("d_state", &self.d_state())
            .field("d_brownian", &self.d_brownian())
            .field("levy", &self.levy)
            .field("dependence", &self.dependence)
            .field("horizon", &self.horizon)
            .field("boundary", &self.boundary)
            .finish()
    }
}

/// Settings of [`validate_model`].
#[derive(Debug, Clone)]
pub struct ValidationConfig {
    pub samples: usize,
    pub box_radius: f64,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { samples: 10_000, box_radius: 4.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub kind: String,
    pub time: f64,
    pub state: Vec<f64>,
    pub mark: Option<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub samples: usize,
    pub box_radius: f64,
    pub violation_count: usize,
    /// First few violations, in sampling order.
    pub violations: Vec<Violation>,
}

const MAX_RECORDED_VIOLATIONS: usize = 16;

/// Samples `(s, x, z)` over `[0, T) x box x marks` and checks `phi > -1`,
/// finiteness of every coefficient and finiteness of the jump moments.
///
/// A non-finite coefficient value is reported as [`Error::CallbackFailure`]
/// with the offending point.
pub fn validate_model(spec: &ModelSpec, config: &ValidationConfig) -> Result<ValidationReport> {
    spec.check_shape()?;
    let d = spec.d_state();
    let m = spec.d_brownian();
    let mut rng = rng::stream(config.seed, rng::NS_VALIDATION, 0);
    let mut violations = Vec::new();
    let mut count = 0usize;
    let mut record = |v: Violation, violations: &mut Vec<Violation>| {
        count += 1;
        if violations.len() < MAX_RECORDED_VIOLATIONS {
            violations.push(v);
        }
    };

    if let Some(levy) = spec.active_levy() {
        let m2 = levy.second_moment();
        if !m2.is_finite() {
            record(Violation { kind: "second_moment".into(), time: 0.0, state: vec![], mark: None, value: m2 }, &mut violations);
        }
        if let Some(m3) = levy.third_abs_moment() {
            if !m3.is_finite() {
                record(Violation { kind: "third_abs_moment".into(), time: 0.0, state: vec![], mark: None, value: m3 }, &mut violations);
            }
        }
    }
    if let Dependence::Volterra { kernel } = &spec.dependence {
        let l2 = kernel.square_integral(spec.horizon, 200);
        if !l2.is_finite() {
            record(Violation { kind: "kernel_square_integral".into(), time: 0.0, state: vec![], mark: None, value: l2 }, &mut violations);
        }
    }

    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d * m];
    let mut sig = vec![0.0; m];
    let mut h = vec![0.0; d];
    let r = config.box_radius;
    for _ in 0..config.samples {
        let s = rng.random::<f64>() * spec.horizon;
        let x = sample_state(&mut rng, d, r, spec.boundary);
        let hist = if spec.dependence.uses_sup_norm() {
            let n_past = rng.random_range(0..8usize);
            let mut past = Vec::with_capacity(n_past * d);
            for _ in 0..n_past {
                past.extend(sample_state(&mut rng, d, r, spec.boundary));
            }
            OwnedHistory::new(spec.x0.clone(), past, x.clone(), s)
        } else {
            let v = if matches!(spec.dependence, Dependence::Volterra { .. }) { (2.0 * rng.random::<f64>() - 1.0) * r } else { 0.0 };
            OwnedHistory::point(&x, s).with_volterra(v)
        };
        let view = hist.view();
        let fail = |coefficient: &'static str, mark: Option<f64>| Error::CallbackFailure { coefficient, time: s, state: x.clone(), mark };
        spec.coefficients.drift(s, &view, &mut a);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(fail("drift", None));
        }
        spec.coefficients.diffusion(s, &view, &mut b);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(fail("diffusion", None));
        }
        spec.coefficients.sigma(s, &view, &mut sig);
        if sig.iter().any(|v| !v.is_finite()) {
            return Err(fail("sigma", None));
        }
        if let Some(levy) = spec.active_levy() {
            let z = levy.sample_mark(&mut rng);
            spec.coefficients.jump_x(s, &view, z, &mut h);
            if h.iter().any(|v| !v.is_finite()) {
                return Err(fail("jump_x", Some(z)));
            }
            let phi = spec.coefficients.jump_m(s, &view, z);
            if !phi.is_finite() {
                return Err(fail("jump_m", Some(z)));
            }
            if phi <= -1.0 {
                record(Violation { kind: "phi_le_minus_one".into(), time: s, state: x.clone(), mark: Some(z), value: phi }, &mut violations);
            }
        }
    }
    Ok(ValidationReport {
        passed: count == 0,
        samples: config.samples,
        box_radius: r,
        violation_count: count,
        violations,
    })
}

fn sample_state(rng: &mut impl Rng, d: usize, r: f64, boundary: Boundary) -> Vec<f64> {
    let mut x: Vec<f64> = (0..d).map(|_| (2.0 * rng.random::<f64>() - 1.0) * r).collect();
    if let Some(l) = boundary.level() {
        // fold the first component into the state space
        let v = l + (x[0] - l).abs();
        x[0] = if boundary.admits(v) { v } else { l + r * f64::EPSILON.max(1e-6) };
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm() -> ModelSpec {
        ModelSpec::new("bm", vec![0.0], CoefficientSet::scalar(|_, _| 0.0, |_, _| 1.0, |_, h| h.x()))
    }

    #[test]
    fn view_indexing_and_left_limit() {
        let hist = OwnedHistory::new(vec![1.0], vec![1.0, 2.0, 3.0], vec![-5.0], 0.3);
        let v = hist.view();
        assert_eq!(v.len(), 3);
        assert_eq!(v.left_limit(), &[-5.0]);
        assert_eq!(v.state_at(-0.1), &[1.0]);
        assert_eq!(v.state_at(0.0), &[1.0]);
        assert_eq!(v.state_at(0.15), &[2.0]);
        assert_eq!(v.state_at(0.2), &[3.0]);
        assert_eq!(v.state_at(0.3), &[-5.0]);
        assert_eq!(v.running_sup_sq(), 25.0);
        assert!(matches!(v.try_state_at(0.5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn two_point_moments() {
        let k = LevyMeasure::two_point(2.0, 0.5).unwrap();
        assert!((k.second_moment() - 2.0 * (0.5 + 0.125)).abs() < 1e-15);
        assert!((k.third_abs_moment().unwrap() - 2.0 * (0.5 + 0.0625)).abs() < 1e-15);
        let q = k.quadrature(64, 1);
        assert_eq!(q.nodes, vec![1.0, -0.5]);
        assert!((q.weights.iter().sum::<f64>() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn validation_passes_for_brownian_model() {
        let rep = validate_model(&bm(), &ValidationConfig::default()).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.samples, 10_000);
    }

    #[test]
    fn phi_at_minus_one_fails_at_first_sample() {
        let spec = ModelSpec::new(
            "bad",
            vec![0.0],
            CoefficientSet::scalar(|_, _| 0.0, |_, _| 0.0, |_, _| 0.0).with_scalar_jumps(|_, _, z| z, |_, _, _| -1.0),
        )
        .with_levy(LevyMeasure::two_point(1.0, 0.5).unwrap());
        let rep = validate_model(&spec, &ValidationConfig { samples: 50, ..Default::default() }).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.violation_count, 50);
        assert_eq!(rep.violations[0].kind, "phi_le_minus_one");
    }

    #[test]
    fn non_finite_coefficient_is_a_callback_failure() {
        let spec = ModelSpec::new("nan", vec![0.0], CoefficientSet::scalar(|_, h| 1.0 / (h.x() - h.x()), |_, _| 1.0, |_, _| 0.0));
        let err = validate_model(&spec, &ValidationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::CallbackFailure { coefficient: "drift", .. }));
    }

    #[test]
    fn exponential_kernel_square_integral() {
        let k = VolterraKernel::exponential(1.0, 1.0);
        // int_0^1 int_0^s e^{-2(s-u)} du ds = 1/2 - (1 - e^{-2})/4
        let exact = 0.5 - (1.0 - (-2.0f64).exp()) / 4.0;
        assert!((k.square_integral(1.0, 400) - exact).abs() < 1e-4);
    }
}
