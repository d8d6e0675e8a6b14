//! Time loop: repeated per-step solves with history advancement, plus the
//! diagnostics the energy estimate and the validation studies consume.
//!
//! Each step linearizes the non-overlap constraints at the previous
//! configuration, freezes the load gradient there, solves the resulting
//! separable problem, and pushes the minimizer into the history ring. The
//! per-step records track the discrete energy ledger
//!
//! `I_n + dt sum_{m<=n} D_m + F(Z^n) <= K_0 + F(Z^0)`
//!
//! with `I_n` the delay energy, `D_m` the dissipation of step `m`, and
//! `K_0` the kinetic bound carried by the prescribed past.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::constraints::{self, linearize_with, ConstraintEval, InfeasiblePolicy};
use crate::energy::{
    delay_energy, energy_gradient, dissipation, past_kinetic_bound, EnergyContext, ExternalLoad,
    History, PastProvider,
};
use crate::error::{Error, Result};
use crate::geometry::{field_norm, min_signed_distance, Configuration, DomainSpec, Vec2};
use crate::linkage::{build_density, OffRate, RateModel};
use crate::solvers::{
    kkt_residual, penalty_solve, uzawa_solve, KktResiduals, KktTolerances, PenaltySettings,
    SolverResult, StepPolicy, UzawaSettings,
};

/// Past trajectory on t <= 0, anchored at the initial positions.
#[derive(Clone, Debug)]
pub enum PastSpec {
    /// At rest at the initial positions.
    Constant,
    /// Arrives at the initial positions with the given per-particle velocity.
    Linear { velocity: Vec<Vec2> },
}

#[derive(Clone, Debug)]
pub enum SolverChoice {
    Uzawa { step: StepPolicy },
    Penalty,
}

impl Default for SolverChoice {
    fn default() -> Self {
        SolverChoice::Uzawa {
            step: StepPolicy::default(),
        }
    }
}

/// What to do when a per-step solve reports `converged = false`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NonConvergencePolicy {
    Abort,
    /// Log, keep the best iterate, and move on.
    Continue,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub positions: Vec<Vec2>,
    pub radii: Vec<f64>,
    pub domain: DomainSpec,
    /// Bond lifetime scale; the time step is `epsilon * age_step`.
    pub epsilon: f64,
    pub age_step: f64,
    /// Final time; zero runs no steps.
    pub horizon: f64,
    /// Strength of the centered quadratic load; zero disables the load.
    pub load_nu: f64,
    pub rates: RateModel,
    pub past: PastSpec,
    /// Additive forcing intensity; zero keeps the dynamics deterministic.
    pub noise_sigma: f64,
    pub seed: u64,
    pub solver: SolverChoice,
    pub nonconvergence: NonConvergencePolicy,
    /// Store every `stride`-th state (diagnostics are kept for every step).
    pub stride: usize,
    /// Drop constraint pairs farther apart than this at linearization time.
    pub prune_cutoff: Option<f64>,
    pub tail_tol: f64,
    pub kkt: KktTolerances,
    /// Multipliers above this count as active contacts.
    pub lambda_tol: f64,
}

impl SimConfig {
    pub fn new(positions: Vec<Vec2>, radii: Vec<f64>) -> Self {
        let n = positions.len().max(1);
        SimConfig {
            positions,
            radii,
            domain: DomainSpec::Plane,
            epsilon: 0.1,
            age_step: 0.1,
            horizon: 1.0,
            load_nu: 1.0,
            rates: RateModel::uniform(n, 1.0, OffRate::constant(1.0).expect("unit rate"))
                .expect("uniform unit rates"),
            past: PastSpec::Constant,
            noise_sigma: 0.0,
            seed: 0,
            solver: SolverChoice::default(),
            nonconvergence: NonConvergencePolicy::Abort,
            stride: 1,
            prune_cutoff: None,
            tail_tol: 1e-12,
            kkt: KktTolerances::default(),
            lambda_tol: 1e-12,
        }
    }

    /// Time step `epsilon * age_step`.
    pub fn dt(&self) -> f64 {
        self.epsilon * self.age_step
    }

    /// Full validation; returns the checked initial configuration.
    pub fn validate(&self) -> Result<Configuration> {
        let config = Configuration::new(self.positions.clone(), self.radii.clone())?;
        self.domain.validate_for(&config)?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.age_step > 0.0 && self.age_step.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "age_step must be positive, got {}",
                self.age_step
            )));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "horizon must be nonnegative, got {}",
                self.horizon
            )));
        }
        if !(self.load_nu >= 0.0 && self.load_nu.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "load_nu must be nonnegative, got {}",
                self.load_nu
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise_sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidInput("stride must be at least 1".into()));
        }
        if !(self.tail_tol > 0.0) {
            return Err(Error::InvalidInput("tail_tol must be positive".into()));
        }
        if !(self.lambda_tol >= 0.0) {
            return Err(Error::InvalidInput("lambda_tol must be nonnegative".into()));
        }
        self.kkt.validate()?;
        if self.rates.len() != config.len() {
            return Err(Error::InvalidInput(format!(
                "rate model holds {} particles, configuration {}",
                self.rates.len(),
                config.len()
            )));
        }
        if let PastSpec::Linear { velocity } = &self.past {
            if velocity.len() != config.len() {
                return Err(Error::InvalidInput(format!(
                    "past velocity holds {} particles, configuration {}",
                    velocity.len(),
                    config.len()
                )));
            }
            if velocity.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("past velocity must be finite".into()));
            }
        }
        if let Some(cutoff) = self.prune_cutoff {
            if !(cutoff > 0.0 && cutoff.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "prune cutoff must be positive, got {cutoff}"
                )));
            }
        }
        // The start must be admissible: report the worst pair on failure.
        for i in 0..config.len() {
            for j in (i + 1)..config.len() {
                let d = crate::geometry::domain_signed_distance(&config, i, j, &self.domain)?;
                if d < -constraints::DEFAULT_FEASIBILITY_TOL {
                    return Err(Error::InvalidConfiguration(format!(
                        "initial disks {i} and {j} overlap by {:.3e}",
                        -d
                    )));
                }
            }
        }
        Ok(config)
    }
}

/// Per-step scalar diagnostics. Records exist for every step (and for the
/// initial state), independent of the state storage stride.
#[derive(Clone, Copy, Debug)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// Delay energy `I_n` of the accepted configuration.
    pub delay_energy: f64,
    /// `sum_{m<=n} D_m`, the running dissipation total.
    pub cumulative_dissipation: f64,
    /// External load `F(Z^n)` (the bare load, without noise shifts).
    pub load_value: f64,
    /// `K_0 + F(Z^0) - I_n - dt sum D - F(Z^n)`; negative means the energy
    /// estimate is violated at this step.
    pub ledger_slack: f64,
    /// Running `sum |Z^m - Z^{m-1}|^2`, the raw square-step total.
    pub step_sq_sum: f64,
    /// Mean squared distance from the origin.
    pub msd: f64,
    /// Fraction of all pairs whose multiplier exceeds the activity cut.
    pub activation: f64,
    pub kkt: KktResiduals,
    pub min_distance: f64,
}

/// Stored output of a run. States follow the configured stride; diagnostics
/// cover every step.
#[derive(Clone, Debug)]
pub struct Trajectory {
    dt: f64,
    stride: usize,
    radii: Vec<f64>,
    domain: DomainSpec,
    times: Vec<f64>,
    states: Vec<Vec<Vec2>>,
    multipliers: Vec<Vec<((usize, usize), f64)>>,
    diagnostics: Vec<DiagnosticsRecord>,
    k0: f64,
    initial_load: f64,
}

impl Trajectory {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        dt: f64,
        stride: usize,
        radii: Vec<f64>,
        domain: DomainSpec,
        times: Vec<f64>,
        states: Vec<Vec<Vec2>>,
        multipliers: Vec<Vec<((usize, usize), f64)>>,
        diagnostics: Vec<DiagnosticsRecord>,
        k0: f64,
        initial_load: f64,
    ) -> Self {
        Trajectory {
            dt,
            stride,
            radii,
            domain,
            times,
            states,
            multipliers,
            diagnostics,
            k0,
            initial_load,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    /// Times of the stored states.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<Vec2>] {
        &self.states
    }

    pub fn final_state(&self) -> &[Vec2] {
        self.states.last().expect("a trajectory stores at least the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("a trajectory stores at least the initial state")
    }

    /// Active multipliers per stored state, as `((i, j), lambda)`.
    pub fn multipliers(&self) -> &[Vec<((usize, usize), f64)>] {
        &self.multipliers
    }

    pub fn diagnostics(&self) -> &[DiagnosticsRecord] {
        &self.diagnostics
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    /// `F(Z^0)`, the load at the initial configuration.
    pub fn initial_load(&self) -> f64 {
        self.initial_load
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Time interpolation flavor for [`interpolate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolant {
    /// The scheme's natural step function: `Z^n` on `(t^{n-1}, t^n]`.
    PiecewiseConstant,
    PiecewiseLinear,
}

/// State at an off-grid time. Requires a stride-1 trajectory; the stored
/// subsampled states of larger strides do not determine the path between
/// records.
pub fn interpolate(traj: &Trajectory, t: f64, kind: Interpolant) -> Result<Vec<Vec2>> {
    if traj.stride() != 1 {
        return Err(Error::InvalidInput(format!(
            "interpolation needs a stride-1 trajectory, got stride {}",
            traj.stride()
        )));
    }
    let t_max = traj.final_time();
    if !(t >= 0.0 && t <= t_max + 1e-12 * t_max.max(1.0)) {
        return Err(Error::TimeOutOfRange { t, t_max });
    }
    let dt = traj.dt();
    let states = traj.states();
    match kind {
        Interpolant::PiecewiseConstant => {
            // Z^0 at t = 0, otherwise the step value on (t^{n-1}, t^n].
            let n = (t / dt - 1e-12).ceil().max(0.0) as usize;
            Ok(states[n.min(states.len() - 1)].clone())
        }
        Interpolant::PiecewiseLinear => {
            let lower = ((t / dt).floor() as usize).min(states.len() - 1);
            if lower + 1 >= states.len() {
                return Ok(states[states.len() - 1].clone());
            }
            let w = (t - lower as f64 * dt) / dt;
            Ok(states[lower]
                .iter()
                .zip(&states[lower + 1])
                .map(|(a, b)| *a * (1.0 - w) + *b * w)
                .collect())
        }
    }
}

/// Mean squared displacement of each stored state from `z_ref`.
pub fn msd(traj: &Trajectory, z_ref: &[Vec2]) -> Vec<(f64, f64)> {
    traj.times()
        .iter()
        .zip(traj.states())
        .map(|(t, state)| (*t, mean_sq_distance(state, z_ref)))
        .collect()
}

fn mean_sq_distance(state: &[Vec2], z_ref: &[Vec2]) -> f64 {
    assert_eq!(state.len(), z_ref.len(), "reference size mismatch");
    let n = state.len().max(1) as f64;
    state
        .iter()
        .zip(z_ref)
        .map(|(q, z)| (*q - *z).norm_sq())
        .sum::<f64>()
        / n
}

/// Fraction of all `n (n-1) / 2` pairs whose multiplier exceeds `tol`, per
/// entry of `series`.
pub fn activation(
    series: &[Vec<((usize, usize), f64)>],
    n_particles: usize,
    tol: f64,
) -> Vec<f64> {
    let total = (n_particles * n_particles.saturating_sub(1) / 2).max(1) as f64;
    series
        .iter()
        .map(|step| step.iter().filter(|(_, l)| *l > tol).count() as f64 / total)
        .collect()
}

/// Largest ledger violation over the run: `max_n (-slack_n)`. Negative
/// values mean the energy estimate held with that margin everywhere.
pub fn ledger_check(traj: &Trajectory) -> f64 {
    traj.diagnostics()
        .iter()
        .map(|r| -r.ledger_slack)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Discrete H1 seminorm `sum_n |Z^n - Z^{n-1}|^2 / dt` of a state sequence.
pub fn h1_seminorm(states: &[Vec<Vec2>], dt: f64) -> f64 {
    assert!(dt > 0.0);
    states
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| (*b - *a).norm_sq())
                .sum::<f64>()
        })
        .sum::<f64>()
        / dt
}

/// Compactness proxy of a run: the squared-step total scaled to the discrete
/// H1 seminorm, which is stable under time refinement.
pub fn compactness_proxy(traj: &Trajectory) -> f64 {
    let last = traj
        .diagnostics()
        .last()
        .expect("a trajectory records at least the initial step");
    last.step_sq_sum / traj.dt()
}

pub struct Simulation {
    config: SimConfig,
    configuration: Configuration,
    ctx: EnergyContext,
    load: ExternalLoad,
    rng: ChaCha8Rng,
    step_index: usize,
    n_steps: usize,
    cumulative_dissipation: f64,
    step_sq_sum: f64,
    warm: HashMap<(usize, usize), f64>,
    k0: f64,
    initial_load: f64,
    times: Vec<f64>,
    states: Vec<Vec<Vec2>>,
    multipliers: Vec<Vec<((usize, usize), f64)>>,
    diagnostics: Vec<DiagnosticsRecord>,
}

impl Simulation {
    /// Builds the driver with the centered quadratic load of strength
    /// `config.load_nu` (or no load when that is zero).
    pub fn new(config: SimConfig) -> Result<Self> {
        let load = if config.load_nu == 0.0 {
            ExternalLoad::zero()
        } else if config.load_nu > 0.0 && config.load_nu.is_finite() {
            ExternalLoad::quadratic(config.load_nu)
        } else {
            return Err(Error::InvalidInput(format!(
                "load_nu must be nonnegative, got {}",
                config.load_nu
            )));
        };
        Self::assemble(config, load)
    }

    /// Builds the driver with a caller-supplied load. Loads carrying a
    /// hand-written gradient are finite-difference checked at the initial
    /// configuration before any step runs; `config.load_nu` is ignored.
    pub fn with_load(config: SimConfig, load: ExternalLoad) -> Result<Self> {
        if load.needs_gradient_check() {
            load.check_gradient(&config.positions, 1e-4)?;
        }
        Self::assemble(config, load)
    }

    fn assemble(config: SimConfig, load: ExternalLoad) -> Result<Self> {
        let configuration = config.validate()?;
        let grid = build_density(&config.rates, config.age_step, config.tail_tol)?;
        let past = match &config.past {
            PastSpec::Constant => PastProvider::Constant(config.positions.clone()),
            PastSpec::Linear { velocity } => PastProvider::Linear {
                start: config.positions.clone(),
                velocity: velocity.clone(),
            },
        };
        let dt = config.dt();
        let width = grid.l_max() + 1;
        let history = History::from_past(&past, width, dt)?;
        let ctx = EnergyContext::new(grid, config.rates.clone(), history, config.epsilon)?;
        let k0 = past_kinetic_bound(&ctx, &past);
        let initial_load = load.value(&config.positions);
        let n_steps = (config.horizon / dt + 1e-9).floor() as usize;
        let rng = crate::rng::stream(config.seed, 0);

        let mut sim = Simulation {
            configuration,
            ctx,
            load,
            rng,
            step_index: 0,
            n_steps,
            cumulative_dissipation: 0.0,
            step_sq_sum: 0.0,
            warm: HashMap::new(),
            k0,
            initial_load,
            times: Vec::new(),
            states: Vec::new(),
            multipliers: Vec::new(),
            diagnostics: Vec::new(),
            config,
        };

        // The initial record: I_0 must compare Z^0 against the past interval
        // averages, which sit one slot deeper than the stored top entry.
        let i0 = sim.initial_delay_energy(&past);
        let min_distance = min_signed_distance(&sim.configuration, &sim.config.domain)?;
        let msd0 = mean_sq_distance(sim.configuration.positions(), &vec![Vec2::ZERO; sim.n()]);
        sim.times.push(0.0);
        sim.states.push(sim.config.positions.clone());
        sim.multipliers.push(Vec::new());
        sim.diagnostics.push(DiagnosticsRecord {
            t: 0.0,
            delay_energy: i0,
            cumulative_dissipation: 0.0,
            load_value: sim.initial_load,
            ledger_slack: sim.k0 - i0,
            step_sq_sum: 0.0,
            msd: msd0,
            activation: 0.0,
            kkt: KktResiduals::ZERO,
            min_distance,
        });
        Ok(sim)
    }

    fn n(&self) -> usize {
        self.configuration.len()
    }

    /// `I_0`: the delay energy of `Z^0` against the prescribed past.
    fn initial_delay_energy(&self, past: &PastProvider) -> f64 {
        let grid = self.ctx.grid();
        let dt = self.ctx.dt();
        let z0 = self.ctx.history().current();
        let mut acc = 0.0;
        for l in 1..=grid.l_max() {
            let z_past = past.average(-(l as i64), dt);
            for i in 0..self.n() {
                acc += (z0[i] - z_past[i]).norm_sq() * grid.value(i, l);
            }
        }
        0.5 * grid.age_step() / self.ctx.eps() * acc
    }

    /// Recomputed from the step index so long runs carry no drift.
    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.config.dt()
    }

    pub fn positions(&self) -> &[Vec2] {
        self.configuration.positions()
    }

    /// Runs every step and hands back the stored trajectory.
    pub fn run(mut self) -> Result<Trajectory> {
        while self.step_index < self.n_steps {
            self.step()?;
        }
        Ok(Trajectory {
            dt: self.config.dt(),
            stride: self.config.stride,
            radii: self.config.radii.clone(),
            domain: self.config.domain.clone(),
            times: self.times,
            states: self.states,
            multipliers: self.multipliers,
            diagnostics: self.diagnostics,
            k0: self.k0,
            initial_load: self.initial_load,
        })
    }

    fn step(&mut self) -> Result<()> {
        let n = self.step_index + 1;
        let t = n as f64 * self.config.dt();
        let dt = self.config.dt();

        // Dissipation of this step, from the history about to be extended.
        self.cumulative_dissipation += dissipation(&self.ctx);

        // Converged steps leave at most the feasibility slack of overlap and
        // the signed linearization pushes it back out, so a band one order
        // above the slack (matching the hard gate below) never trips on a
        // healthy run.
        let ce = linearize_with(
            &self.configuration,
            &self.config.domain,
            InfeasiblePolicy::Tolerate {
                tol: 10.0 * self.config.kkt.feasibility,
            },
            self.config.prune_cutoff,
        )?;

        // Additive forcing enters as a linear tilt of the load for this step.
        // The tilt leaves the curvature alone, so both solver routes still
        // solve the exact step problem.
        let step_load = if self.config.noise_sigma > 0.0 {
            let scale = self.config.noise_sigma / dt.sqrt();
            let drift: Vec<Vec2> = (0..self.n())
                .map(|_| {
                    Vec2::new(
                        scale * self.rng.sample::<f64, _>(rand_distr::StandardNormal),
                        scale * self.rng.sample::<f64, _>(rand_distr::StandardNormal),
                    )
                })
                .collect();
            self.load.with_drift(drift)
        } else {
            self.load.clone()
        };

        let warm: Vec<f64> = ce
            .pairs()
            .iter()
            .map(|c| self.warm.get(&c.pair()).copied().unwrap_or(0.0))
            .collect();
        let result = match &self.config.solver {
            SolverChoice::Uzawa { step } => {
                let settings = UzawaSettings {
                    step: *step,
                    tolerances: self.config.kkt,
                    warm_start: Some(warm),
                    ..UzawaSettings::default()
                };
                uzawa_solve(&self.ctx, &step_load, &ce, &settings)?
            }
            SolverChoice::Penalty => {
                let settings = PenaltySettings {
                    tolerances: self.config.kkt,
                    ..PenaltySettings::default()
                };
                penalty_solve(&self.ctx, &step_load, &ce, &settings)?
            }
        };
        if !result.converged {
            match self.config.nonconvergence {
                NonConvergencePolicy::Abort => {
                    return Err(Error::SolverFailure {
                        iterations: result.iterations,
                        context: format!("step {n} at t = {t:.6}"),
                    });
                }
                NonConvergencePolicy::Continue => {
                    log::warn!(
                        "step {n} at t = {t:.6} not converged (residuals {:?}); continuing",
                        result.residuals
                    );
                }
            }
        }

        let new_configuration = self.configuration.with_positions(result.positions.clone())?;
        let min_distance = min_signed_distance(&new_configuration, &self.config.domain)?;
        // The linearized set is contained in the true admissible set, so a
        // converged step can only violate by its feasibility residual.
        if min_distance < -10.0 * self.config.kkt.feasibility {
            if result.converged {
                return Err(Error::InvalidConfiguration(format!(
                    "step {n} left the admissible set: min distance {min_distance:.3e}"
                )));
            }
            log::warn!(
                "step {n}: non-converged iterate overlaps by {:.3e}",
                -min_distance
            );
        }
        self.multiplier_bound_diagnostic(&ce, &result);

        // Accounting happens against the pre-advance history.
        let i_n = delay_energy(&self.ctx, &result.positions);
        let load_value = self.load.value(&result.positions);
        let ledger_slack = self.k0 + self.initial_load
            - (i_n + dt * self.cumulative_dissipation + load_value);
        let step_sq: f64 = result
            .positions
            .iter()
            .zip(self.configuration.positions())
            .map(|(a, b)| (*a - *b).norm_sq())
            .sum();
        self.step_sq_sum += step_sq;
        let msd_n = mean_sq_distance(&result.positions, &vec![Vec2::ZERO; self.n()]);
        let active: Vec<((usize, usize), f64)> = ce
            .pairs()
            .iter()
            .zip(&result.multipliers)
            .filter(|(_, l)| **l > self.config.lambda_tol)
            .map(|(c, l)| (c.pair(), *l))
            .collect();
        let total_pairs = (self.n() * self.n().saturating_sub(1) / 2).max(1) as f64;
        let record = DiagnosticsRecord {
            t,
            delay_energy: i_n,
            cumulative_dissipation: self.cumulative_dissipation,
            load_value,
            ledger_slack,
            step_sq_sum: self.step_sq_sum,
            msd: msd_n,
            activation: active.len() as f64 / total_pairs,
            kkt: kkt_residual(&self.ctx, &step_load, &ce, &result),
            min_distance,
        };

        // Warm-start bookkeeping for the next linearization.
        self.warm.clear();
        for ((i, j), l) in &active {
            self.warm.insert((*i, *j), *l);
        }

        self.ctx.advance(result.positions.clone());
        self.configuration = new_configuration;
        self.step_index = n;

        self.diagnostics.push(record);
        if n % self.config.stride == 0 || n == self.n_steps {
            self.times.push(t);
            self.states.push(result.positions);
            self.multipliers.push(active);
        }
        Ok(())
    }

    /// Compares the largest multiplier with the a-priori chained bound and
    /// logs when it is exceeded; the bound's chain parameters are heuristic
    /// (worst active valence, chain length capped by the particle count), so
    /// this is advisory rather than an invariant.
    fn multiplier_bound_diagnostic(&self, ce: &ConstraintEval, result: &SolverResult) {
        let max_lambda = result.multipliers.iter().fold(0.0f64, |m, l| m.max(*l));
        if max_lambda <= self.config.lambda_tol {
            return;
        }
        let mut valence = vec![0usize; self.n()];
        for (c, l) in ce.pairs().iter().zip(&result.multipliers) {
            if *l > self.config.lambda_tol {
                let (i, j) = c.pair();
                valence[i] += 1;
                valence[j] += 1;
            }
        }
        let n_v = valence.iter().copied().max().unwrap_or(0).max(1);
        let n_chain = self.n().max(3);
        let u_norm = field_norm(&energy_gradient(
            &self.ctx,
            &self.load,
            self.configuration.positions(),
        ));
        let bound = constraints::multiplier_bound(u_norm, n_v, n_chain, self.n());
        if max_lambda > bound {
            log::warn!(
                "step {}: multiplier {max_lambda:.3e} exceeds the chained bound {bound:.3e}",
                self.step_index + 1
            );
        }
    }
}
