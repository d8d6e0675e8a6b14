//! Acceptance gate. One test per criterion; each prints a single
//! `criterion NN (slug): PASS|FAIL [detail]` line and then asserts, so
//! `cargo test --test acceptance -- --nocapture` doubles as a report.
//!
//! Tolerances are pinned here, next to the checks they gate. Runtime limits
//! are asserted with wall-clock measurements on the criterion's own work.

use std::time::Instant;

use rand::Rng;

use adhesim_core::constraints::linearize;
use adhesim_core::geometry::{domain_signed_distance, min_signed_distance};
use adhesim_core::linkage::{build_density, consistency_order, l1_consistency_error};
use adhesim_core::simulation::{compactness_proxy, ledger_check, msd};
use adhesim_core::solvers::{kkt_residual, penalty_solve, uzawa_solve, uzawa_step_bound};
use adhesim_core::{
    friction_limit_run, no_contact_decay, ou_msd_empirical, ou_msd_exact, rng, Configuration,
    DomainSpec, EnergyContext, ExternalLoad, FrictionWeights, History, KktTolerances, OffRate,
    PastProvider, PastSpec, PenaltySettings, RateModel, SimConfig, Simulation, StepPolicy,
    Trajectory, UzawaSettings, Vec2,
};

fn verdict(n: u32, slug: &str, pass: bool, detail: String) {
    let word = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n:>2} ({slug}): {word} [{detail}]");
    assert!(pass, "criterion {n} ({slug}): {detail}");
}

// ---------------------------------------------------------------------------
// Shipped scenarios. The TOML files under configs/ mirror these definitions;
// criterion 5 sweeps them all.

fn single_relax() -> SimConfig {
    let mut cfg = SimConfig::new(vec![Vec2::new(4.0, 0.0)], vec![0.5]);
    cfg.horizon = 2.0;
    cfg
}

fn two_disk_jam() -> SimConfig {
    let mut cfg = SimConfig::new(
        vec![Vec2::new(-1.5, 0.0), Vec2::new(1.5, 0.0)],
        vec![1.0, 1.0],
    );
    cfg.horizon = 2.0;
    cfg
}

fn ten_disk_ring() -> SimConfig {
    let n = 10;
    let positions = (0..n)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            Vec2::new(4.0 * angle.cos(), 4.0 * angle.sin())
        })
        .collect();
    let mut cfg = SimConfig::new(positions, vec![1.0; n]);
    cfg.horizon = 3.0;
    cfg
}

fn torus_wrap() -> SimConfig {
    let mut cfg = SimConfig::new(
        vec![Vec2::new(4.0, 0.0), Vec2::new(-4.0, 0.0)],
        vec![1.0, 1.0],
    );
    cfg.domain = DomainSpec::torus(10.0, 10.0).unwrap();
    cfg.horizon = 2.0;
    cfg
}

fn noisy_single() -> SimConfig {
    let mut cfg = single_relax();
    cfg.noise_sigma = 1.0;
    cfg.seed = 7;
    cfg
}

/// Well-prepared past: the particles arrive with the friction-limit velocity
/// `v = -grad F / mu_1`, so the initial data satisfies the time-zero
/// variational inclusion and the run starts on the slow manifold. With a
/// constant past the first step instead drops by O(eps nu |z0| / theta),
/// an initial layer that the limit model does not have.
fn well_prepared(mut cfg: SimConfig) -> SimConfig {
    let mu1 = 0.5;
    let velocity = cfg
        .positions
        .iter()
        .map(|z| *z * (-cfg.load_nu / mu1))
        .collect();
    cfg.past = PastSpec::Linear { velocity };
    cfg
}

/// Unit-displacement single disk, the scale on which the friction limit is
/// exactly `e^{-2t}`.
fn single_unit() -> SimConfig {
    let mut cfg = SimConfig::new(vec![Vec2::new(1.0, 0.0)], vec![0.5]);
    cfg.horizon = 2.0;
    cfg
}

fn shipped_scenarios() -> Vec<(&'static str, SimConfig)> {
    vec![
        ("single_relax", single_relax()),
        ("two_disk_jam", two_disk_jam()),
        ("ten_disk_ring", ten_disk_ring()),
        ("torus_wrap", torus_wrap()),
        ("noisy_single", noisy_single()),
    ]
}

// ---------------------------------------------------------------------------
// Step-solver fixtures.

fn context_for(config: &Configuration, eps: f64, da: f64, beta: f64, zeta: f64) -> EnergyContext {
    let rates = RateModel::uniform(config.len(), beta, OffRate::constant(zeta).unwrap()).unwrap();
    let grid = build_density(&rates, da, 1e-12).unwrap();
    let history = History::from_past(
        &PastProvider::Constant(config.positions().to_vec()),
        grid.l_max() + 1,
        eps * da,
    )
    .unwrap();
    EnergyContext::new(grid, rates, history, eps).unwrap()
}

/// Two tangent unit disks under the unit centering load: the contact is
/// active with a strictly positive multiplier.
fn canonical_contact() -> (EnergyContext, ExternalLoad) {
    let config = Configuration::new(
        vec![Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0)],
        vec![1.0, 1.0],
    )
    .unwrap();
    let ctx = context_for(&config, 0.1, 0.1, 1.0, 1.0);
    (ctx, ExternalLoad::quadratic(1.0))
}

fn canonical_configuration() -> Configuration {
    Configuration::new(
        vec![Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0)],
        vec![1.0, 1.0],
    )
    .unwrap()
}

const TIGHT: KktTolerances = KktTolerances {
    stationarity: 1e-10,
    feasibility: 1e-10,
    complementarity: 1e-10,
};

// ---------------------------------------------------------------------------

#[test]
fn acceptance_01_density_first_order() {
    let start = Instant::now();
    let rates = RateModel::uniform(1, 1.0, OffRate::constant(1.0).unwrap()).unwrap();
    let mut points = Vec::new();
    for da in [0.1, 0.05, 0.025] {
        let grid = build_density(&rates, da, 1e-12).unwrap();
        let err = l1_consistency_error(&grid, &rates).unwrap()[0];
        points.push((da, err));
    }
    let order = consistency_order(&points).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let pass = (0.9..=1.3).contains(&order) && elapsed < 1.0;
    verdict(
        1,
        "density-first-order",
        pass,
        format!("fitted order {order:.4}, {elapsed:.2} s"),
    );
}

#[test]
fn acceptance_02_positivity_and_saturation() {
    let mut gen = rng::stream(211, 0);
    let mut violations = 0usize;
    let mut max_mu0 = 0.0f64;
    for trial in 0..200 {
        let n = gen.gen_range(1..=3);
        let da = [0.2, 0.1, 0.05][gen.gen_range(0..3)];
        let beta: Vec<f64> = (0..n)
            .map(|_| {
                if gen.gen_bool(0.1) {
                    0.0
                } else {
                    gen.gen_range(0.05..4.0)
                }
            })
            .collect();
        let zeta: Vec<OffRate> = (0..n)
            .map(|_| {
                if gen.gen_bool(0.5) {
                    OffRate::constant(gen.gen_range(0.2..4.0)).unwrap()
                } else {
                    let mut ages = vec![0.0];
                    for _ in 0..3 {
                        ages.push(ages.last().unwrap() + gen.gen_range(0.2..1.5));
                    }
                    let values = (0..4).map(|_| gen.gen_range(0.2..4.0)).collect();
                    OffRate::table(ages, values).unwrap()
                }
            })
            .collect();
        let rates = RateModel::per_particle(beta, zeta).unwrap();
        let grid = build_density(&rates, da, 1e-12)
            .unwrap_or_else(|e| panic!("trial {trial}: density build failed: {e}"));
        for i in 0..grid.n_particles() {
            if grid.row(i).iter().any(|r| *r < 0.0) {
                violations += 1;
            }
            let mu0 = grid.moment(0, i);
            max_mu0 = max_mu0.max(mu0);
            // Saturation is exact in the scheme; the margin only absorbs
            // the rounding of the moment's summation.
            if mu0 > 1.0 + 1e-12 {
                violations += 1;
            }
        }
    }
    verdict(
        2,
        "positivity-saturation",
        violations == 0,
        format!("200 models, {violations} violations, max mu0 {max_mu0:.6}"),
    );
}

#[test]
fn acceptance_03_solver_cross_validation() {
    let start = Instant::now();
    let mut gen = rng::stream(307, 0);
    let mut instances: Vec<(EnergyContext, ExternalLoad, Configuration)> = Vec::new();
    while instances.len() < 50 {
        let n = gen.gen_range(1..=5);
        let radii: Vec<f64> = (0..n).map(|_| gen.gen_range(0.3..0.8)).collect();
        let positions: Vec<Vec2> = (0..n)
            .map(|_| Vec2::new(gen.gen_range(-3.0..3.0), gen.gen_range(-3.0..3.0)))
            .collect();
        let config = Configuration::new(positions, radii).unwrap();
        if min_signed_distance(&config, &DomainSpec::Plane).unwrap() < 0.05 {
            continue;
        }
        let eps = gen.gen_range(0.05..0.3);
        let da = gen.gen_range(0.05..0.2);
        let beta = gen.gen_range(0.2..3.0);
        let zeta = gen.gen_range(0.3..3.0);
        let nu = gen.gen_range(0.5..4.0);
        let ctx = context_for(&config, eps, da, beta, zeta);
        instances.push((ctx, ExternalLoad::quadratic(nu), config));
    }
    let (ctx, load) = canonical_contact();
    instances.push((ctx, load, canonical_configuration()));

    let mut worst_gap = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for (k, (ctx, load, config)) in instances.iter().enumerate() {
        let ce = linearize(config, &DomainSpec::Plane).unwrap();
        let uz = uzawa_solve(
            ctx,
            load,
            &ce,
            &UzawaSettings {
                max_iterations: 2_000_000,
                tolerances: TIGHT,
                ..Default::default()
            },
        )
        .unwrap();
        let pen = penalty_solve(
            ctx,
            load,
            &ce,
            &PenaltySettings {
                tolerances: TIGHT,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(uz.converged, "instance {k}: ascent did not converge");
        assert!(pen.converged, "instance {k}: penalty did not converge");
        let gap = uz
            .positions
            .iter()
            .zip(&pen.positions)
            .map(|(a, b)| (*a - *b).norm())
            .fold(0.0, f64::max);
        worst_gap = worst_gap.max(gap);
        for result in [&uz, &pen] {
            let res = kkt_residual(ctx, load, &ce, result);
            worst_kkt = worst_kkt
                .max(res.stationarity)
                .max(res.feasibility)
                .max(res.complementarity);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst_gap < 1e-5 && worst_kkt < 1e-8 && elapsed < 10.0;
    verdict(
        3,
        "solver-cross-validation",
        pass,
        format!("51 instances, primal gap {worst_gap:.2e}, kkt {worst_kkt:.2e}, {elapsed:.2} s"),
    );
}

#[test]
fn acceptance_04_uzawa_step_bound() {
    let (ctx, load) = canonical_contact();
    let config = canonical_configuration();
    let ce = linearize(&config, &DomainSpec::Plane).unwrap();
    let bound = uzawa_step_bound(ctx.grid(), ctx.eps(), ce.len());
    let safe = uzawa_solve(
        &ctx,
        &load,
        &ce,
        &UzawaSettings {
            step: StepPolicy::Fixed(0.9 * bound),
            max_iterations: 10_000,
            ..Default::default()
        },
    )
    .unwrap();
    let reckless = uzawa_solve(
        &ctx,
        &load,
        &ce,
        &UzawaSettings {
            step: StepPolicy::Fixed(10.0 * bound),
            max_iterations: 10_000,
            ..Default::default()
        },
    )
    .unwrap();
    let pass = safe.converged && safe.iterations <= 10_000 && !reckless.converged;
    verdict(
        4,
        "uzawa-step-bound",
        pass,
        format!(
            "0.9x converged in {} iterations, 10x divergent = {}",
            safe.iterations, !reckless.converged
        ),
    );
}

#[test]
fn acceptance_05_feasibility_invariant() {
    let mut worst = f64::INFINITY;
    let mut worst_name = "";
    for (name, cfg) in shipped_scenarios() {
        let traj = Simulation::new(cfg).unwrap().run().unwrap();
        for rec in traj.diagnostics() {
            if rec.min_distance < worst {
                worst = rec.min_distance;
                worst_name = name;
            }
        }
    }
    verdict(
        5,
        "feasibility-invariant",
        worst >= -1e-9,
        format!("worst signed distance {worst:.3e} ({worst_name})"),
    );
}

#[test]
fn acceptance_06_energy_ledger() {
    let traj = Simulation::new(ten_disk_ring()).unwrap().run().unwrap();
    let violation = ledger_check(&traj);
    let allowance = 1e-10 * (1.0 + traj.initial_load().abs());
    verdict(
        6,
        "energy-ledger",
        violation <= allowance,
        format!("max violation {violation:.3e}, allowance {allowance:.3e}"),
    );
}

/// Delayed run and friction-limit run on the same time grid `dt = eps da`;
/// sup over stored states and particles of the position distance.
fn delayed_friction_gap(base: &SimConfig, eps: f64) -> f64 {
    let mut cfg = base.clone();
    cfg.epsilon = eps;
    let delayed = Simulation::new(cfg.clone()).unwrap().run().unwrap();
    let grid = build_density(&cfg.rates, cfg.age_step, cfg.tail_tol).unwrap();
    let weights = FrictionWeights::from_grid(&grid).unwrap();
    let friction = friction_limit_run(&cfg, &weights, cfg.dt()).unwrap();
    assert_eq!(delayed.len(), friction.len(), "time grids must match");
    delayed
        .states()
        .iter()
        .zip(friction.states())
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (*x - *y).norm())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[test]
fn acceptance_07_friction_limit_convergence() {
    let start = Instant::now();
    let eps_list = [0.2, 0.1, 0.05];
    // The absolute bound applies to the unit-scale, well-prepared run; with
    // ill-prepared (constant-past) data the distance includes the delayed
    // model's own O(eps) initial layer, which the two-disk sweep shows is
    // still monotone in eps.
    let single: Vec<f64> = eps_list
        .iter()
        .map(|eps| delayed_friction_gap(&well_prepared(single_unit()), *eps))
        .collect();
    let double: Vec<f64> = eps_list
        .iter()
        .map(|eps| delayed_friction_gap(&two_disk_jam(), *eps))
        .collect();
    let monotone = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = monotone(&single) && monotone(&double) && single[2] < 0.05 && elapsed < 60.0;
    verdict(
        7,
        "friction-limit-convergence",
        pass,
        format!(
            "single {:.4} > {:.4} > {:.4}, two-disk {:.4} > {:.4} > {:.4}, {elapsed:.2} s",
            single[0], single[1], single[2], double[0], double[1], double[2]
        ),
    );
}

#[test]
fn acceptance_08_ou_mean_squared_displacement() {
    // Exact Gaussian transitions, so the coarse grid carries no bias and the
    // only uncertainty is the Monte Carlo one.
    let series = ou_msd_empirical(Vec2::new(4.0, 0.0), 1.0, 1.0, 0.25, 20, 10_000, 20260819);
    let mut worst_sigmas = 0.0f64;
    for idx in [2usize, 4, 8, 20] {
        let (t, mean, stderr) = series[idx];
        let sigmas = (mean - ou_msd_exact(t, 16.0)).abs() / stderr;
        worst_sigmas = worst_sigmas.max(sigmas);
    }
    let terminal = series[20].1;
    let pass = worst_sigmas <= 3.0 && (0.45..=0.55).contains(&terminal);
    verdict(
        8,
        "ou-msd",
        pass,
        format!("worst deviation {worst_sigmas:.2} se, msd(5) = {terminal:.4}"),
    );
}

#[test]
fn acceptance_09_contact_shape_properties() {
    let cfg = ten_disk_ring();
    let z0 = cfg.positions.clone();
    let horizon = cfg.horizon;
    let traj = Simulation::new(cfg).unwrap().run().unwrap();
    let series = msd(&traj, &vec![Vec2::ZERO; z0.len()]);

    let starts_at_16 = (series[0].1 - 16.0).abs() < 1e-12;
    // Converged steps leave ~1e-8 stationarity slack, which jitters the
    // jammed plateau by ~1e-7 in MSD units; the margin sits above that.
    let nonincreasing = series.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-6);

    let acts: Vec<f64> = traj.diagnostics().iter().map(|r| r.activation).collect();
    let first_active = acts.iter().position(|a| *a > 0.0);
    let activation_split = match first_active {
        Some(k) => {
            k > 0
                && acts[..k].iter().all(|a| *a == 0.0)
                && acts[k..].iter().all(|a| *a > 0.0)
                && traj.diagnostics()[..k].iter().all(|r| r.min_distance > 0.0)
        }
        None => false,
    };
    let jammed_tangent = traj.diagnostics().last().unwrap().min_distance.abs() <= 1e-6;

    // No-contact comparison flow at the same load: it decays to the origin,
    // so its plateau is far below the jammed one.
    let free = no_contact_decay(horizon, &z0, 1.0);
    let free_msd = free.iter().map(|z| z.norm_sq()).sum::<f64>() / free.len() as f64;
    let contact_msd = series.last().unwrap().1;
    let ordered = contact_msd > free_msd + 1.0;

    let pass = starts_at_16 && nonincreasing && activation_split && jammed_tangent && ordered;
    verdict(
        9,
        "contact-shape",
        pass,
        format!(
            "msd0 {:.2e} off 16, monotone {nonincreasing}, activation split {activation_split}, \
             plateau {contact_msd:.3} vs free {free_msd:.3}",
            (series[0].1 - 16.0).abs()
        ),
    );
}

#[test]
fn acceptance_10_compactness_proxy() {
    // The H1 bound needs well-prepared data: a constant past puts an O(eps)
    // first-step jump into the path, whose squared-step contribution scales
    // like 1/dt and doubles under age-step halving at fixed eps.
    let coarse = Simulation::new(well_prepared(ten_disk_ring()))
        .unwrap()
        .run()
        .unwrap();
    let mut fine_cfg = well_prepared(ten_disk_ring());
    fine_cfg.age_step = 0.05;
    let fine = Simulation::new(fine_cfg).unwrap().run().unwrap();
    let c = compactness_proxy(&coarse);
    let f = compactness_proxy(&fine);
    let change = (f - c).abs() / c;
    verdict(
        10,
        "compactness-proxy",
        change < 0.5,
        format!("H1 seminorm {c:.4} -> {f:.4}, relative change {change:.3}"),
    );
}

#[test]
fn acceptance_11_periodic_geometry_oracle() {
    let mut gen = rng::stream(1111, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let length: f64 = gen.gen_range(1.0..6.0);
        let height: f64 = gen.gen_range(1.0..6.0);
        let r_cap = 0.2 * length.min(height);
        let radii = vec![gen.gen_range(0.05..r_cap), gen.gen_range(0.05..r_cap)];
        let positions = vec![
            Vec2::new(gen.gen_range(0.0..length), gen.gen_range(0.0..height)),
            Vec2::new(gen.gen_range(0.0..length), gen.gen_range(0.0..height)),
        ];
        let config = Configuration::new(positions.clone(), radii.clone()).unwrap();
        let domain = DomainSpec::torus(length, height).unwrap();
        let reduced = domain_signed_distance(&config, 0, 1, &domain).unwrap();
        let mut brute = f64::INFINITY;
        for kx in -3..=3 {
            for ky in -3..=3 {
                let shift = Vec2::new(kx as f64 * length, ky as f64 * height);
                brute = brute.min((positions[1] + shift - positions[0]).norm());
            }
        }
        brute -= radii[0] + radii[1];
        worst = worst.max((reduced - brute).abs());
    }

    // Wrap-around contact run re-checked against the feasibility and ledger
    // criteria. The disks start tangent across the seam (direct distance 6),
    // so the contact this run exercises is the periodic one.
    let traj: Trajectory = Simulation::new(torus_wrap()).unwrap().run().unwrap();
    let seam_tangent = traj.diagnostics()[0].min_distance.abs() <= 1e-12;
    let min_dist = traj
        .diagnostics()
        .iter()
        .map(|r| r.min_distance)
        .fold(f64::INFINITY, f64::min);
    let violation = ledger_check(&traj);
    let allowance = 1e-10 * (1.0 + traj.initial_load().abs());

    let pass = worst <= 1e-12 && seam_tangent && min_dist >= -1e-9 && violation <= allowance;
    verdict(
        11,
        "periodic-oracle",
        pass,
        format!(
            "1000 distances, worst gap {worst:.2e}; wrap run min distance {min_dist:.2e}, \
             ledger violation {violation:.2e}"
        ),
    );
}
