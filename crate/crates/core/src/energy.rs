//! The per-step delayed energy, its gradient, the discrete delay operator,
//! dissipation, and external load models.
//!
//! With `q` the unknown configuration at step `n` and `Z^{n-l}` the stored
//! history, the quadratic part of the step energy is
//!
//! `(da/2eps) sum_i sum_{l>=1} |q_i - Z_i^{n-l}|^2 R_{l,i}`
//!
//! whose gradient collapses to `(theta_i q_i - T_i)/eps` with the delay mass
//! `theta_i = da sum_l R_{l,i}` and target `T_i = da sum_l Z_i^{n-l} R_{l,i}`.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::linkage::{DensityGrid, RateModel};

// 4-point Gauss-Legendre rule on [-1, 1]; exact through cubic integrands.
const GL4_NODES: [f64; 4] = [
    -0.8611363115940526,
    -0.3399810435848563,
    0.3399810435848563,
    0.8611363115940526,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.3478548451374538,
    0.6521451548625461,
    0.6521451548625461,
    0.3478548451374538,
];

/// Prescribed trajectory for t <= 0.
#[derive(Clone, Debug)]
pub enum PastProvider {
    /// Particles at rest before the start.
    Constant(Vec<Vec2>),
    /// `z_p(t) = start + t * velocity`.
    Linear {
        start: Vec<Vec2>,
        velocity: Vec<Vec2>,
    },
}

impl PastProvider {
    pub fn n_particles(&self) -> usize {
        match self {
            PastProvider::Constant(c) => c.len(),
            PastProvider::Linear { start, .. } => start.len(),
        }
    }

    /// Position of every particle at time `t` (meaningful for t <= 0).
    pub fn eval(&self, t: f64) -> Vec<Vec2> {
        match self {
            PastProvider::Constant(c) => c.clone(),
            PastProvider::Linear { start, velocity } => start
                .iter()
                .zip(velocity)
                .map(|(s, v)| *s + *v * t)
                .collect(),
        }
    }

    /// Per-particle Lipschitz constant of the past trajectory.
    pub fn lipschitz(&self, i: usize) -> f64 {
        match self {
            PastProvider::Constant(_) => 0.0,
            PastProvider::Linear { velocity, .. } => velocity[i].norm(),
        }
    }

    /// Interval average `(1/dt) int_{m dt}^{(m+1) dt} z_p(s) ds` for m <= -1,
    /// by 4-point Gauss-Legendre. Exact for the affine providers shipped
    /// here; the rule leaves headroom for smooth custom pasts.
    pub fn average(&self, m: i64, dt: f64) -> Vec<Vec2> {
        assert!(m <= -1, "averages are defined for negative steps only");
        assert!(dt > 0.0);
        if let PastProvider::Constant(c) = self {
            return c.clone();
        }
        let a = m as f64 * dt;
        let mid = a + 0.5 * dt;
        let half = 0.5 * dt;
        let mut acc = vec![Vec2::ZERO; self.n_particles()];
        for (node, weight) in GL4_NODES.iter().zip(&GL4_WEIGHTS) {
            let sample = self.eval(mid + half * node);
            for (s, out) in sample.iter().zip(acc.iter_mut()) {
                // The 1/dt normalization cancels the interval length, leaving
                // weight/2.
                *out += *s * (0.5 * weight);
            }
        }
        acc
    }
}

/// Ring buffer of the last `width` configurations, newest first.
///
/// Entry `lag(0)` is `Z^{n-1}` while solving for step `n`; `lag(k)` is
/// `Z^{n-1-k}`. The width is the paired grid's `l_max + 1` so both the delay
/// sums (lags `0..l_max-1`) and the dissipation (lags `1..l_max`) are covered.
#[derive(Clone, Debug)]
pub struct History {
    dt: f64,
    entries: VecDeque<Vec<Vec2>>,
}

impl History {
    /// Fills the buffer from a past provider: top entry `z_p(0)`, deeper
    /// entries the interval averages for m = -1, -2, ...
    pub fn from_past(past: &PastProvider, width: usize, dt: f64) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidInput("history width must be positive".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "history step must be positive, got {dt}"
            )));
        }
        if past.n_particles() == 0 {
            return Err(Error::InvalidInput("past provider holds no particles".into()));
        }
        let mut entries = VecDeque::with_capacity(width);
        entries.push_back(past.eval(0.0));
        for m in 1..width {
            entries.push_back(past.average(-(m as i64), dt));
        }
        Ok(History { dt, entries })
    }

    /// Builds a history directly from samples, newest first. Test
    /// constructor.
    #[cfg(test)]
    pub(crate) fn from_samples(samples: Vec<Vec<Vec2>>, dt: f64) -> Self {
        assert!(!samples.is_empty());
        let n = samples[0].len();
        assert!(samples.iter().all(|s| s.len() == n));
        History {
            dt,
            entries: samples.into(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn width(&self) -> usize {
        self.entries.len()
    }

    pub fn n_particles(&self) -> usize {
        self.entries[0].len()
    }

    /// Newest stored configuration.
    pub fn current(&self) -> &[Vec2] {
        &self.entries[0]
    }

    /// `k` steps behind the newest stored configuration.
    pub fn lag(&self, k: usize) -> &[Vec2] {
        &self.entries[k]
    }

    /// Pushes a new configuration, dropping the oldest.
    pub fn advance(&mut self, z: Vec<Vec2>) {
        assert_eq!(z.len(), self.n_particles(), "configuration size mismatch");
        self.entries.pop_back();
        self.entries.push_front(z);
    }
}

type LoadFn = Arc<dyn Fn(&[Vec2]) -> f64 + Send + Sync>;
type LoadGradFn = Arc<dyn Fn(&[Vec2]) -> Vec<Vec2> + Send + Sync>;

/// External load `F` with its gradient and convexity metadata.
#[derive(Clone)]
pub struct ExternalLoad {
    value_fn: LoadFn,
    grad_fn: LoadGradFn,
    modulus: f64,
    strictly_convex: bool,
    needs_check: bool,
}

impl fmt::Debug for ExternalLoad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalLoad")
            .field("modulus", &self.modulus)
            .field("strictly_convex", &self.strictly_convex)
            .finish()
    }
}

impl ExternalLoad {
    /// `F(q) = (nu/2) |q|^2`, the centered quadratic well.
    pub fn quadratic(nu: f64) -> Self {
        assert!(nu > 0.0 && nu.is_finite(), "quadratic load needs nu > 0");
        ExternalLoad {
            value_fn: Arc::new(move |q| 0.5 * nu * crate::geometry::field_norm_sq(q)),
            grad_fn: Arc::new(move |q| q.iter().map(|p| *p * nu).collect()),
            modulus: nu,
            strictly_convex: true,
            needs_check: false,
        }
    }

    /// The vanishing load.
    pub fn zero() -> Self {
        ExternalLoad {
            value_fn: Arc::new(|_| 0.0),
            grad_fn: Arc::new(|q| vec![Vec2::ZERO; q.len()]),
            modulus: 0.0,
            strictly_convex: false,
            needs_check: false,
        }
    }

    /// User-supplied load. `modulus` is a known lower bound on the convexity
    /// modulus (0 when unknown). Callers wiring this into a simulation get a
    /// startup finite-difference check of the declared gradient.
    pub fn custom(
        value: impl Fn(&[Vec2]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[Vec2]) -> Vec<Vec2> + Send + Sync + 'static,
        modulus: f64,
        strictly_convex: bool,
    ) -> Self {
        assert!(modulus >= 0.0);
        ExternalLoad {
            value_fn: Arc::new(value),
            grad_fn: Arc::new(gradient),
            modulus,
            strictly_convex,
            needs_check: true,
        }
    }

    pub fn value(&self, q: &[Vec2]) -> f64 {
        (self.value_fn)(q)
    }

    pub fn gradient(&self, q: &[Vec2]) -> Vec<Vec2> {
        (self.grad_fn)(q)
    }

    pub fn modulus(&self) -> f64 {
        self.modulus
    }

    pub fn is_strictly_convex(&self) -> bool {
        self.strictly_convex
    }

    pub(crate) fn needs_gradient_check(&self) -> bool {
        self.needs_check
    }

    /// Central finite-difference check of the declared gradient at `probe`.
    pub fn check_gradient(&self, probe: &[Vec2], tol: f64) -> Result<()> {
        let grad = self.gradient(probe);
        if grad.len() != probe.len() {
            return Err(Error::InvalidInput(format!(
                "load gradient length {} does not match {} particles",
                grad.len(),
                probe.len()
            )));
        }
        let h = 1e-5;
        let scale = 1.0 + crate::geometry::field_norm(&grad);
        for p in 0..probe.len() {
            for axis in 0..2 {
                let mut plus = probe.to_vec();
                let mut minus = probe.to_vec();
                if axis == 0 {
                    plus[p].x += h;
                    minus[p].x -= h;
                } else {
                    plus[p].y += h;
                    minus[p].y -= h;
                }
                let fd = (self.value(&plus) - self.value(&minus)) / (2.0 * h);
                let g = if axis == 0 { grad[p].x } else { grad[p].y };
                if (g - fd).abs() > tol * scale {
                    return Err(Error::InvalidInput(format!(
                        "load gradient disagrees with finite differences at \
                         particle {p}: declared {g}, estimated {fd}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// First-order model of the load at `at`: `F(at) + F'(at).(q - at)`.
    /// The per-step solvers use this to keep the inner problems quadratic.
    pub fn linearized_at(&self, at: &[Vec2]) -> ExternalLoad {
        let base = self.value(at);
        let grad = self.gradient(at);
        let at_owned = at.to_vec();
        let grad_for_value = grad.clone();
        let grad_for_grad = grad;
        ExternalLoad {
            value_fn: Arc::new(move |q| {
                let mut v = base;
                for ((qi, ai), gi) in q.iter().zip(&at_owned).zip(&grad_for_value) {
                    v += gi.dot(*qi - *ai);
                }
                v
            }),
            grad_fn: Arc::new(move |_| grad_for_grad.clone()),
            modulus: 0.0,
            strictly_convex: false,
            needs_check: false,
        }
    }

    /// The load shifted by a linear term: `F(q) - sum_i drift_i . q_i`.
    /// Carries the stochastic forcing into the per-step problem.
    pub fn with_drift(&self, drift: Vec<Vec2>) -> ExternalLoad {
        let base = self.clone();
        let drift_for_value = drift.clone();
        let drift_for_grad = drift;
        ExternalLoad {
            value_fn: Arc::new(move |q| {
                let mut v = base.value(q);
                for (qi, di) in q.iter().zip(&drift_for_value) {
                    v -= di.dot(*qi);
                }
                v
            }),
            grad_fn: {
                let base = self.clone();
                Arc::new(move |q| {
                    let mut g = base.gradient(q);
                    for (gi, di) in g.iter_mut().zip(&drift_for_grad) {
                        *gi -= *di;
                    }
                    g
                })
            },
            modulus: self.modulus,
            strictly_convex: self.strictly_convex,
            needs_check: false,
        }
    }
}

/// Grid, rates, history and derived per-step delay data, bundled for the
/// solvers. Mutated only through `advance`; evaluation methods are read-only.
#[derive(Clone, Debug)]
pub struct EnergyContext {
    grid: DensityGrid,
    rates: RateModel,
    history: History,
    eps: f64,
    targets: Vec<Vec2>,
}

impl EnergyContext {
    pub fn new(grid: DensityGrid, rates: RateModel, history: History, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bond lifetime scale must be positive, got {eps}"
            )));
        }
        if grid.n_particles() != history.n_particles() {
            return Err(Error::InvalidInput(format!(
                "grid holds {} particles, history {}",
                grid.n_particles(),
                history.n_particles()
            )));
        }
        if rates.len() != grid.n_particles() {
            return Err(Error::InvalidInput(format!(
                "rate model holds {} particles, grid {}",
                rates.len(),
                grid.n_particles()
            )));
        }
        if history.width() != grid.l_max() + 1 {
            return Err(Error::InvalidInput(format!(
                "history width {} does not cover the grid depth {} + 1",
                history.width(),
                grid.l_max()
            )));
        }
        // CFL coupling dt = eps * da.
        let dt = eps * grid.age_step();
        if (history.dt() - dt).abs() > 1e-12 * dt.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "history step {} breaks the CFL coupling eps*da = {dt}",
                history.dt()
            )));
        }
        let mut ctx = EnergyContext {
            grid,
            rates,
            history,
            eps,
            targets: Vec::new(),
        };
        ctx.refresh_targets();
        Ok(ctx)
    }

    fn refresh_targets(&mut self) {
        let n = self.grid.n_particles();
        let da = self.grid.age_step();
        let mut targets = vec![Vec2::ZERO; n];
        for l in 1..=self.grid.l_max() {
            let past = self.history.lag(l - 1);
            for (i, t) in targets.iter_mut().enumerate() {
                *t += past[i] * self.grid.value(i, l);
            }
        }
        for t in &mut targets {
            *t = *t * da;
        }
        self.targets = targets;
    }

    /// Stores `z` as the newest configuration and refreshes the targets.
    pub fn advance(&mut self, z: Vec<Vec2>) {
        self.history.advance(z);
        self.refresh_targets();
    }

    pub fn grid(&self) -> &DensityGrid {
        &self.grid
    }

    pub fn rates(&self) -> &RateModel {
        &self.rates
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Time step `dt = eps * da`.
    pub fn dt(&self) -> f64 {
        self.eps * self.grid.age_step()
    }

    pub fn n_particles(&self) -> usize {
        self.grid.n_particles()
    }

    /// Delay mass `theta_i` (the effective per-particle stiffness is
    /// `theta_i / eps`).
    pub fn delay_mass(&self, i: usize) -> f64 {
        self.grid.delay_mass(i)
    }

    /// Age-weighted history targets `T_i`.
    pub fn targets(&self) -> &[Vec2] {
        &self.targets
    }
}

/// Quadratic delay part of the step energy at `q`.
pub fn delay_energy(ctx: &EnergyContext, q: &[Vec2]) -> f64 {
    assert_eq!(q.len(), ctx.n_particles(), "configuration size mismatch");
    let grid = ctx.grid();
    let half = 0.5 * grid.age_step() / ctx.eps();
    let mut acc = 0.0;
    for l in 1..=grid.l_max() {
        let past = ctx.history().lag(l - 1);
        for (i, qi) in q.iter().enumerate() {
            acc += (*qi - past[i]).norm_sq() * grid.value(i, l);
        }
    }
    half * acc
}

/// Full step energy: delay part plus the external load.
pub fn energy_value(ctx: &EnergyContext, load: &ExternalLoad, q: &[Vec2]) -> f64 {
    delay_energy(ctx, q) + load.value(q)
}

/// Discrete delay operator `(theta_i q_i - T_i)/eps` per particle.
pub fn delay_operator(ctx: &EnergyContext, q: &[Vec2]) -> Vec<Vec2> {
    assert_eq!(q.len(), ctx.n_particles(), "configuration size mismatch");
    let inv_eps = 1.0 / ctx.eps();
    q.iter()
        .enumerate()
        .map(|(i, qi)| (*qi * ctx.delay_mass(i) - ctx.targets()[i]) * inv_eps)
        .collect()
}

/// Gradient of the step energy: delay operator plus the load gradient.
pub fn energy_gradient(ctx: &EnergyContext, load: &ExternalLoad, q: &[Vec2]) -> Vec<Vec2> {
    let mut grad = delay_operator(ctx, q);
    for (g, lg) in grad.iter_mut().zip(load.gradient(q)) {
        *g += lg;
    }
    grad
}

/// Step dissipation
/// `(da/2) sum_i sum_{l>=1} |U_l,i|^2 R_{l+1,i} zeta_i((l+1) da)` with
/// elongation rates `U_l,i = (Z^{n-1}_i - Z^{n-1-l}_i)/eps` taken at the
/// newest stored configuration. The weight beyond the stored depth follows
/// the recursion one extra cell.
pub fn dissipation(ctx: &EnergyContext) -> f64 {
    let grid = ctx.grid();
    let da = grid.age_step();
    let l_max = grid.l_max();
    let inv_eps_sq = 1.0 / (ctx.eps() * ctx.eps());
    let current = ctx.history().current();
    let mut acc = 0.0;
    for l in 1..=l_max {
        let past = ctx.history().lag(l);
        let age = (l + 1) as f64 * da;
        for i in 0..ctx.n_particles() {
            let stretch_sq = (current[i] - past[i]).norm_sq() * inv_eps_sq;
            let weight = if l + 1 <= l_max {
                grid.value(i, l + 1)
            } else {
                grid.value(i, l_max) / (1.0 + da * ctx.rates().zeta(i, age))
            };
            acc += stretch_sq * weight * ctx.rates().zeta(i, age);
        }
    }
    0.5 * da * acc
}

/// Upper bound `K_0 = (eps/2) sum_i C_i^2 mu_{2,i}` on the initial delay
/// energy carried by the past trajectory, with `C_i` the per-particle
/// Lipschitz constants.
pub fn past_kinetic_bound(ctx: &EnergyContext, past: &PastProvider) -> f64 {
    assert_eq!(past.n_particles(), ctx.n_particles());
    let mut acc = 0.0;
    for i in 0..ctx.n_particles() {
        let c = past.lipschitz(i);
        acc += c * c * ctx.grid().moment(2, i);
    }
    0.5 * ctx.eps() * acc
}
