//! Closed-form and limit-model oracles the validation studies compare
//! against: the Ornstein-Uhlenbeck mean squared displacement, the no-contact
//! exponential decay, and the weighted friction-limit integrator that the
//! delayed model approaches as its bond lifetime shrinks.

use rand::Rng;

use crate::constraints::{linearize_with, InfeasiblePolicy};
use crate::energy::ExternalLoad;
use crate::error::{Error, Result};
use crate::geometry::{field_norm, min_signed_distance, Vec2};
use crate::linkage::DensityGrid;
use crate::simulation::{DiagnosticsRecord, NonConvergencePolicy, SimConfig, Trajectory};
use crate::solvers::QuadKernel;

/// Per-particle friction coefficients `mu_i`, the first age moments of the
/// bond densities. They weigh the kinetic term of the limit model.
#[derive(Clone, Debug)]
pub struct FrictionWeights {
    mu: Vec<f64>,
}

impl FrictionWeights {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::InvalidInput("friction weights cannot be empty".into()));
        }
        if let Some(bad) = mu.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "friction weights must be positive and finite, got {bad}"
            )));
        }
        Ok(FrictionWeights { mu })
    }

    /// First age moments of a discrete density grid.
    pub fn from_grid(grid: &DensityGrid) -> Result<Self> {
        Self::new((0..grid.n_particles()).map(|i| grid.moment(1, i)).collect())
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.mu[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mu
    }
}

/// Mean squared displacement of the normalized Ornstein-Uhlenbeck process
/// (unit rate and unit total noise intensity in two dimensions):
/// `z0_sq e^{-2t} + (1 - e^{-2t}) / 2`. Callers with other parameters rescale
/// time and length onto this normalization.
pub fn ou_msd_exact(t: f64, z0_sq: f64) -> f64 {
    assert!(t >= 0.0, "time must be nonnegative");
    assert!(z0_sq >= 0.0, "a squared length cannot be negative");
    let decay = (-2.0 * t).exp();
    z0_sq * decay + 0.5 * (1.0 - decay)
}

/// The no-contact comparison model `dz/dt = -nu z`, evaluated exactly.
pub fn no_contact_decay(t: f64, z0: &[Vec2], nu: f64) -> Vec<Vec2> {
    assert!(t >= 0.0, "time must be nonnegative");
    assert!(nu >= 0.0 && nu.is_finite());
    let factor = (-nu * t).exp();
    z0.iter().map(|z| *z * factor).collect()
}

/// One sampled path of the two-dimensional Ornstein-Uhlenbeck process
/// `dz = -nu z dt + sigma dW` with total intensity `sigma` split evenly
/// across coordinates. Uses the exact Gaussian transition over each step,
/// so the only error in ensemble statistics is the Monte Carlo one.
pub fn ou_path<R: Rng>(
    z0: Vec2,
    nu: f64,
    sigma: f64,
    dt: f64,
    steps: usize,
    rng: &mut R,
) -> Vec<Vec2> {
    assert!(nu > 0.0 && nu.is_finite());
    assert!(sigma >= 0.0 && sigma.is_finite());
    assert!(dt > 0.0 && dt.is_finite());
    let decay = (-nu * dt).exp();
    // Per-coordinate stationary variance is sigma^2 / (4 nu).
    let step_sd = (sigma * sigma / (4.0 * nu) * (1.0 - decay * decay)).sqrt();
    let mut path = Vec::with_capacity(steps + 1);
    let mut z = z0;
    path.push(z);
    for _ in 0..steps {
        z = Vec2::new(
            z.x * decay + step_sd * rng.sample::<f64, _>(rand_distr::StandardNormal),
            z.y * decay + step_sd * rng.sample::<f64, _>(rand_distr::StandardNormal),
        );
        path.push(z);
    }
    path
}

/// Ensemble mean squared displacement of [`ou_path`]: `(t, mean, stderr)`
/// for every step including `t = 0`. Replicas draw independent streams from
/// the master seed, so results are reproducible and replica-order free.
pub fn ou_msd_empirical(
    z0: Vec2,
    nu: f64,
    sigma: f64,
    dt: f64,
    steps: usize,
    replicas: usize,
    seed: u64,
) -> Vec<(f64, f64, f64)> {
    assert!(replicas >= 2, "standard errors need at least two replicas");
    // Welford accumulators per time point.
    let mut mean = vec![0.0f64; steps + 1];
    let mut m2 = vec![0.0f64; steps + 1];
    for r in 0..replicas {
        let mut rng = crate::rng::stream(seed, r as u64);
        let path = ou_path(z0, nu, sigma, dt, steps, &mut rng);
        let count = (r + 1) as f64;
        for (k, z) in path.iter().enumerate() {
            let sq = z.norm_sq();
            let delta = sq - mean[k];
            mean[k] += delta / count;
            m2[k] += delta * (sq - mean[k]);
        }
    }
    let n = replicas as f64;
    (0..=steps)
        .map(|k| {
            let stderr = (m2[k] / (n - 1.0) / n).sqrt();
            (k as f64 * dt, mean[k], stderr)
        })
        .collect()
}

/// Implicit minimizing-movement integrator for the friction limit: each step
/// solves `argmin over K(Z^{n-1})` of
/// `sum_i mu_i / (2 dt) |q_i - Z_i^{n-1}|^2 + F(q)`
/// with the same dual ascent as the delayed scheme.
///
/// `cfg` supplies the configuration, domain, load strength, horizon, stride,
/// tolerances, and non-convergence policy; its delay-specific fields
/// (epsilon, age step, rates, past, noise) play no role here. The returned
/// trajectory carries no per-step diagnostics records: the energy ledger is
/// a delayed-model quantity.
pub fn friction_limit_run(
    cfg: &SimConfig,
    weights: &FrictionWeights,
    dt: f64,
) -> Result<Trajectory> {
    let mut configuration = cfg.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if weights.len() != configuration.len() {
        return Err(Error::InvalidInput(format!(
            "{} friction weights for {} particles",
            weights.len(),
            configuration.len()
        )));
    }
    let load = if cfg.load_nu == 0.0 {
        ExternalLoad::zero()
    } else {
        ExternalLoad::quadratic(cfg.load_nu)
    };
    let n_steps = (cfg.horizon / dt + 1e-9).floor() as usize;

    let mut times = vec![0.0];
    let mut states = vec![cfg.positions.clone()];
    let mut multipliers: Vec<Vec<((usize, usize), f64)>> = vec![Vec::new()];
    let mut warm: std::collections::HashMap<(usize, usize), f64> = std::collections::HashMap::new();

    for step in 1..=n_steps {
        let t = step as f64 * dt;
        let z_prev = configuration.positions().to_vec();
        let ce = linearize_with(
            &configuration,
            &cfg.domain,
            InfeasiblePolicy::Tolerate {
                tol: 10.0 * cfg.kkt.feasibility,
            },
            cfg.prune_cutoff,
        )?;
        // The load's diagonal quadratic model at z_prev is exact for the
        // centered quadratic, so the step below is the true argmin.
        let g = load.gradient(&z_prev);
        let m = load.modulus();
        let alpha: Vec<f64> = weights.as_slice().iter().map(|mu| mu / dt + m).collect();
        let b: Vec<Vec2> = z_prev
            .iter()
            .zip(weights.as_slice())
            .zip(&g)
            .map(|((z, mu), gi)| *z * (mu / dt + m) - *gi)
            .collect();
        let kernel = QuadKernel { alpha, b };
        let eta = if ce.is_empty() {
            1.0
        } else {
            let alpha_min = kernel.alpha.iter().fold(f64::INFINITY, |a, x| a.min(*x));
            0.9 * alpha_min / ce.len() as f64
        };
        let warm_vec: Vec<f64> = ce
            .pairs()
            .iter()
            .map(|c| warm.get(&c.pair()).copied().unwrap_or(0.0))
            .collect();
        let stat_scale = 1.0 + field_norm(&g);
        let result = crate::solvers::dual_ascent(
            &kernel,
            &ce,
            eta,
            &cfg.kkt,
            stat_scale,
            10_000,
            Some(&warm_vec),
        );
        if !result.converged {
            match cfg.nonconvergence {
                NonConvergencePolicy::Abort => {
                    return Err(Error::SolverFailure {
                        iterations: result.iterations,
                        context: format!("friction step {step} at t = {t:.6}"),
                    });
                }
                NonConvergencePolicy::Continue => {
                    log::warn!("friction step {step} at t = {t:.6} not converged; continuing");
                }
            }
        }
        configuration = configuration.with_positions(result.positions.clone())?;
        let min_distance = min_signed_distance(&configuration, &cfg.domain)?;
        if min_distance < -10.0 * cfg.kkt.feasibility {
            if result.converged {
                return Err(Error::InvalidConfiguration(format!(
                    "friction step {step} left the admissible set: min distance {min_distance:.3e}"
                )));
            }
            log::warn!(
                "friction step {step}: non-converged iterate overlaps by {:.3e}",
                -min_distance
            );
        }
        let active: Vec<((usize, usize), f64)> = ce
            .pairs()
            .iter()
            .zip(&result.multipliers)
            .filter(|(_, l)| **l > cfg.lambda_tol)
            .map(|(c, l)| (c.pair(), *l))
            .collect();
        warm.clear();
        for ((i, j), l) in &active {
            warm.insert((*i, *j), *l);
        }
        if step % cfg.stride == 0 || step == n_steps {
            times.push(t);
            states.push(result.positions);
            multipliers.push(active);
        }
    }

    let initial_load = load.value(&cfg.positions);
    Ok(Trajectory::from_parts(
        dt,
        cfg.stride,
        cfg.radii.clone(),
        cfg.domain.clone(),
        times,
        states,
        multipliers,
        Vec::<DiagnosticsRecord>::new(),
        0.0,
        initial_load,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::energy_value;
    use crate::geometry::{domain_signed_distance, Configuration, DomainSpec};
    use crate::linkage::{build_density, OffRate, RateModel};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn ou_msd_exact_matches_the_closed_form() {
        assert_abs_diff_eq!(ou_msd_exact(0.0, 16.0), 16.0, epsilon = 1e-15);
        // Frozen reference value at (t, z0_sq) = (1, 16).
        assert_abs_diff_eq!(ou_msd_exact(1.0, 16.0), 2.5976968901674967, epsilon = 1e-15);
        assert_abs_diff_eq!(ou_msd_exact(60.0, 16.0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(ou_msd_exact(3.0, 0.5), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn no_contact_decay_trivial_cases() {
        let z0 = vec![Vec2::new(4.0, 0.0), Vec2::new(0.0, -2.0)];
        let at0 = no_contact_decay(0.0, &z0, 1.0);
        assert_eq!(at0, z0);
        let frozen = no_contact_decay(3.0, &z0, 0.0);
        assert_eq!(frozen, z0);
        // MSD from |z0|^2 = 16 is 16 e^{-2 nu t}.
        let moved = no_contact_decay(0.7, &[Vec2::new(4.0, 0.0)], 1.3);
        assert_relative_eq!(
            moved[0].norm_sq(),
            16.0 * (-2.0 * 1.3 * 0.7f64).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn friction_weights_from_unit_rate_grids_are_one_half() {
        for da in [0.1, 0.05] {
            let rates = RateModel::uniform(3, 1.0, OffRate::constant(1.0).unwrap()).unwrap();
            let grid = build_density(&rates, da, 1e-12).unwrap();
            let w = FrictionWeights::from_grid(&grid).unwrap();
            assert_eq!(w.len(), 3);
            for i in 0..3 {
                assert_abs_diff_eq!(w.get(i), 0.5, epsilon = 1e-9);
            }
        }
        assert!(FrictionWeights::new(vec![0.5, 0.0]).is_err());
        assert!(FrictionWeights::new(vec![]).is_err());
    }

    fn single_particle_cfg(horizon: f64) -> SimConfig {
        let mut cfg = SimConfig::new(vec![Vec2::new(4.0, 0.0)], vec![1.0]);
        cfg.horizon = horizon;
        cfg
    }

    #[test]
    fn friction_run_without_contacts_is_the_exact_implicit_euler_recursion() {
        let cfg = single_particle_cfg(1.0);
        let weights = FrictionWeights::new(vec![0.5]).unwrap();
        let dt = 0.01;
        let traj = friction_limit_run(&cfg, &weights, dt).unwrap();
        let ratio = 1.0 / (1.0 + cfg.load_nu * dt / 0.5);
        let mut expected = 4.0;
        for state in traj.states().iter().skip(1) {
            expected *= ratio;
            assert_relative_eq!(state[0].x, expected, max_relative = 1e-12);
            assert_abs_diff_eq!(state[0].y, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn friction_run_tracks_the_exponential_limit_at_first_order_in_dt() {
        let cfg = single_particle_cfg(1.5);
        let weights = FrictionWeights::new(vec![0.5]).unwrap();
        let sup_error = |dt: f64| -> f64 {
            let traj = friction_limit_run(&cfg, &weights, dt).unwrap();
            traj.times()
                .iter()
                .zip(traj.states())
                .map(|(t, s)| {
                    let exact = no_contact_decay(*t, &[Vec2::new(4.0, 0.0)], 2.0);
                    (s[0] - exact[0]).norm()
                })
                .fold(0.0, f64::max)
        };
        let coarse = sup_error(0.01);
        let fine = sup_error(0.005);
        assert!(coarse < 0.03, "sup error {coarse} too large at dt = 0.01");
        // First order: halving dt roughly halves the error.
        let ratio = fine / coarse;
        assert!((0.3..0.7).contains(&ratio), "refinement ratio {ratio}");
    }

    #[test]
    fn friction_two_disk_head_on_jams_at_tangency_and_dissipates() {
        let mut cfg = SimConfig::new(
            vec![Vec2::new(-1.5, 0.0), Vec2::new(1.5, 0.0)],
            vec![1.0, 1.0],
        );
        cfg.horizon = 2.0;
        let weights = FrictionWeights::new(vec![0.5, 0.5]).unwrap();
        let dt = 0.01;
        let traj = friction_limit_run(&cfg, &weights, dt).unwrap();
        let load = ExternalLoad::quadratic(1.0);
        // Minimizing movement: F(Z^n) + sum mu/(2 dt) |dZ|^2 <= F(Z^{n-1}).
        // The slack covers the multiplier-weighted feasibility tolerance of
        // the dual solver (lambda is O(1) at the jam, feasibility 1e-9).
        for pair in traj.states().windows(2) {
            let movement: f64 = pair[0]
                .iter()
                .zip(&pair[1])
                .map(|(a, b)| 0.5 / (2.0 * dt) * (*b - *a).norm_sq())
                .sum();
            assert!(
                load.value(&pair[1]) + movement <= load.value(&pair[0]) + 1e-8,
                "movement step gained energy"
            );
        }
        // Feasible at every stored state and jammed at tangency.
        for state in traj.states() {
            let config = Configuration::new(state.clone(), vec![1.0, 1.0]).unwrap();
            let d = domain_signed_distance(&config, 0, 1, &DomainSpec::Plane).unwrap();
            assert!(d >= -1e-9);
        }
        let q = traj.final_state();
        assert_abs_diff_eq!(q[0].x, -1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(q[1].x, 1.0, epsilon = 1e-6);
        let last = traj.multipliers().last().unwrap();
        assert_eq!(last.len(), 1);
        assert!(last[0].1 > 0.0);
        // No diagnostics records: the ledger is a delayed-model quantity.
        assert!(traj.diagnostics().is_empty());
    }

    #[test]
    fn ou_ensemble_matches_the_exact_msd_within_sampling_error() {
        let series = ou_msd_empirical(Vec2::new(4.0, 0.0), 1.0, 1.0, 0.25, 20, 1500, 4242);
        assert_eq!(series.len(), 21);
        assert_abs_diff_eq!(series[0].1, 16.0, epsilon = 1e-12);
        assert_eq!(series[0].2, 0.0);
        for idx in [2usize, 4, 8, 20] {
            let (t, mean, stderr) = series[idx];
            let exact = ou_msd_exact(t, 16.0);
            assert!(stderr > 0.0);
            assert!(
                (mean - exact).abs() <= 4.0 * stderr,
                "t = {t}: empirical {mean} vs exact {exact} (stderr {stderr})"
            );
        }
        let (_, plateau, _) = series[20];
        assert!((0.45..=0.55).contains(&plateau), "plateau {plateau}");
    }

    #[test]
    fn ou_paths_are_reproducible_and_seed_dependent() {
        let mut rng_a = crate::rng::stream(7, 0);
        let mut rng_b = crate::rng::stream(7, 0);
        let mut rng_c = crate::rng::stream(8, 0);
        let a = ou_path(Vec2::new(1.0, -1.0), 1.0, 1.0, 0.1, 50, &mut rng_a);
        let b = ou_path(Vec2::new(1.0, -1.0), 1.0, 1.0, 0.1, 50, &mut rng_b);
        let c = ou_path(Vec2::new(1.0, -1.0), 1.0, 1.0, 0.1, 50, &mut rng_c);
        assert_eq!(a, b);
        assert!(a[50] != c[50]);
        // Zero noise is the pure decay.
        let mut rng_d = crate::rng::stream(7, 0);
        let quiet = ou_path(Vec2::new(1.0, -1.0), 2.0, 0.0, 0.1, 10, &mut rng_d);
        assert_relative_eq!(quiet[10].x, (-2.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn friction_run_rejects_bad_inputs() {
        let cfg = single_particle_cfg(1.0);
        let weights = FrictionWeights::new(vec![0.5, 0.5]).unwrap();
        assert!(friction_limit_run(&cfg, &weights, 0.01).is_err());
        let weights = FrictionWeights::new(vec![0.5]).unwrap();
        assert!(friction_limit_run(&cfg, &weights, 0.0).is_err());
        assert!(friction_limit_run(&cfg, &weights, f64::NAN).is_err());
    }

    #[test]
    fn friction_and_delayed_terminal_states_agree_on_the_two_disk_jam() {
        // Both models park the pair at tangency; the terminal states agree
        // even though the transients differ.
        let mut cfg = SimConfig::new(
            vec![Vec2::new(-1.5, 0.0), Vec2::new(1.5, 0.0)],
            vec![1.0, 1.0],
        );
        cfg.horizon = 2.0;
        cfg.epsilon = 0.05;
        let delayed = crate::simulation::Simulation::new(cfg.clone())
            .unwrap()
            .run()
            .unwrap();
        let weights = FrictionWeights::new(vec![0.5, 0.5]).unwrap();
        let friction = friction_limit_run(&cfg, &weights, cfg.dt()).unwrap();
        let a = delayed.final_state();
        let b = friction.final_state();
        for (qa, qb) in a.iter().zip(b) {
            assert!((*qa - *qb).norm() < 1e-6, "terminal mismatch {qa:?} vs {qb:?}");
        }
    }

    #[test]
    fn energy_value_is_finite_on_reference_outputs() {
        // Guard: reference trajectories can be fed back into delayed-model
        // inspection tooling without panics.
        let cfg = single_particle_cfg(0.2);
        let weights = FrictionWeights::new(vec![0.5]).unwrap();
        let traj = friction_limit_run(&cfg, &weights, 0.01).unwrap();
        let load = ExternalLoad::quadratic(1.0);
        let grid = build_density(&cfg.rates, cfg.age_step, cfg.tail_tol).unwrap();
        let history = crate::energy::History::from_past(
            &crate::energy::PastProvider::Constant(cfg.positions.clone()),
            grid.l_max() + 1,
            cfg.dt(),
        )
        .unwrap();
        let ctx =
            crate::energy::EnergyContext::new(grid, cfg.rates.clone(), history, cfg.epsilon)
                .unwrap();
        assert!(energy_value(&ctx, &load, traj.final_state()).is_finite());
    }
}
