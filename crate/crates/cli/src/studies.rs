//! Multi-run experiment modes: refinement studies, limit sweeps, Monte
//! Carlo validation. Each parameter point writes only into its own
//! subdirectory, so points are free to run on separate workers.

use std::fs;
use std::path::Path;
use std::thread;
use std::time::Instant;

use adhesim_core::linkage::{build_density, consistency_order, l1_consistency_error};
use adhesim_core::{
    friction_limit_run, ou_msd_empirical, ou_msd_exact, FrictionWeights, SimConfig, Simulation,
    Trajectory,
};
use serde_json::json;

use crate::config::Experiment;
use crate::error::{io_at, CliError};
use crate::output;

pub fn density_study(exp: &Experiment, da_list: &[f64]) -> Result<(), CliError> {
    check_list("da-list", da_list)?;
    fs::create_dir_all(&exp.out_dir).map_err(|e| io_at(&exp.out_dir, e))?;
    let rates = &exp.sim.rates;
    let mut table = Vec::with_capacity(da_list.len());
    for &da in da_list {
        let at = |e: adhesim_core::Error| CliError::from(e).annotate(&format!("at delta_a = {da}"));
        let grid = build_density(rates, da, exp.sim.tail_tol).map_err(at)?;
        let errors = l1_consistency_error(&grid, rates).map_err(at)?;
        let worst = errors.iter().cloned().fold(0.0, f64::max);

        let dir = exp.out_dir.join(format!("da_{da}"));
        fs::create_dir_all(&dir).map_err(|e| io_at(&dir, e))?;
        write_density_csv(&dir.join("density.csv"), &grid)?;
        table.push((da, worst));
    }
    let order = consistency_order(&table).map_err(CliError::from)?;
    output::write_table(
        &exp.out_dir.join("density_study.csv"),
        "delta_a,l1_error",
        &table,
    )?;
    output::write_json(
        &exp.out_dir.join("summary.json"),
        &json!({
            "mode": "density-study",
            "points": table.len(),
            "fitted_order": order,
        }),
    )?;
    println!(
        "density study: fitted order {order:.4} over {} age steps, wrote {}",
        table.len(),
        exp.out_dir.display()
    );
    Ok(())
}

fn write_density_csv(path: &Path, grid: &adhesim_core::DensityGrid) -> Result<(), CliError> {
    let da = grid.age_step();
    let mut rows = String::from("a,particle,rho\n");
    for i in 0..grid.n_particles() {
        for (l, rho) in grid.row(i).iter().enumerate() {
            rows.push_str(&format!(
                "{},{i},{}\n",
                output::sig17(l as f64 * da),
                output::sig17(*rho)
            ));
        }
    }
    fs::write(path, rows).map_err(|e| io_at(path, e))
}

pub fn limit_compare(exp: &Experiment, eps_list: &[f64]) -> Result<(), CliError> {
    check_list("eps-list", eps_list)?;
    if exp.sim.noise_sigma != 0.0 {
        return Err(CliError::Validation(
            "noise.sigma: limit-compare needs a deterministic run (sigma = 0)".into(),
        ));
    }
    fs::create_dir_all(&exp.out_dir).map_err(|e| io_at(&exp.out_dir, e))?;
    let grid = build_density(&exp.sim.rates, exp.sim.age_step, exp.sim.tail_tol)
        .map_err(CliError::from)?;
    let weights = FrictionWeights::from_grid(&grid).map_err(CliError::from)?;

    let results: Vec<Result<f64, CliError>> = thread::scope(|scope| {
        let handles: Vec<_> = eps_list
            .iter()
            .map(|&eps| {
                let weights = &weights;
                let sim = &exp.sim;
                let out = &exp.out_dir;
                scope.spawn(move || limit_point(sim, weights, eps, out))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("limit-compare worker panicked"))
            .collect()
    });

    let mut table = Vec::with_capacity(eps_list.len());
    for (&eps, result) in eps_list.iter().zip(results) {
        let sup = result.map_err(|e| e.annotate(&format!("at epsilon = {eps}")))?;
        table.push((eps, sup));
    }
    output::write_table(
        &exp.out_dir.join("limit_compare.csv"),
        "epsilon,sup_distance",
        &table,
    )?;
    for (eps, sup) in &table {
        println!("epsilon {eps}: sup distance to the friction limit {sup:.6e}");
    }
    Ok(())
}

/// One epsilon: the delayed run, the friction-limit run on the same time
/// grid, and the sup over stored states and particles of their distance.
fn limit_point(
    base: &SimConfig,
    weights: &FrictionWeights,
    eps: f64,
    out_root: &Path,
) -> Result<f64, CliError> {
    let started = Instant::now();
    let mut cfg = base.clone();
    cfg.epsilon = eps;
    let delayed = Simulation::new(cfg.clone())?.run()?;
    let friction = friction_limit_run(&cfg, weights, cfg.dt())?;
    let sup = sup_state_distance(&delayed, &friction);

    let dir = out_root.join(format!("eps_{eps}"));
    output::write_run(&dir, &delayed, started.elapsed())?;
    output::write_trajectory(&dir.join("friction_trajectory.csv"), &friction)?;
    Ok(sup)
}

fn sup_state_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let mut worst = 0.0f64;
    for (sa, sb) in a.states().iter().zip(b.states()) {
        for (za, zb) in sa.iter().zip(sb) {
            worst = worst.max((*za - *zb).norm_sq().sqrt());
        }
    }
    worst
}

pub fn msd_validate(exp: &Experiment, replicas: usize) -> Result<(), CliError> {
    if replicas < 2 {
        return Err(CliError::Validation(
            "replicas: standard errors need at least 2".into(),
        ));
    }
    let sim = &exp.sim;
    if sim.positions.len() != 1 {
        return Err(CliError::Validation(
            "particles.positions: msd-validate uses the single-particle reference model".into(),
        ));
    }
    if sim.noise_sigma <= 0.0 {
        return Err(CliError::Validation(
            "noise.sigma: must be positive for msd-validate".into(),
        ));
    }
    if sim.load_nu <= 0.0 {
        return Err(CliError::Validation(
            "load.nu: must be positive for msd-validate".into(),
        ));
    }
    let z0 = sim.positions[0];
    let dt = sim.dt();
    // Same step count the simulation loop would take.
    let steps = (sim.horizon / dt + 1e-9).floor() as usize;
    let series = ou_msd_empirical(z0, sim.load_nu, sim.noise_sigma, dt, steps, replicas, sim.seed);

    // The exact curve is tabulated at nu = sigma = 1; scale onto it.
    let scale = sim.noise_sigma * sim.noise_sigma / sim.load_nu;
    let z0_sq = z0.norm_sq() / scale;
    let exact = |t: f64| scale * ou_msd_exact(sim.load_nu * t, z0_sq);

    fs::create_dir_all(&exp.out_dir).map_err(|e| io_at(&exp.out_dir, e))?;
    let path = exp.out_dir.join("msd_validate.csv");
    let mut text = String::from("t,empirical_msd,stderr,exact_msd\n");
    let mut worst_se = 0.0f64;
    for (t, empirical, stderr) in &series {
        text.push_str(&format!(
            "{},{},{},{}\n",
            output::sig17(*t),
            output::sig17(*empirical),
            output::sig17(*stderr),
            output::sig17(exact(*t))
        ));
        if *stderr > 0.0 {
            worst_se = worst_se.max((empirical - exact(*t)).abs() / stderr);
        }
    }
    fs::write(&path, text).map_err(|e| io_at(&path, e))?;

    let (t_end, final_empirical, _) = *series.last().expect("series includes t = 0");
    output::write_json(
        &exp.out_dir.join("summary.json"),
        &json!({
            "mode": "msd-validate",
            "replicas": replicas,
            "steps": steps,
            "worst_deviation_se": worst_se,
            "final_empirical_msd": final_empirical,
            "final_exact_msd": exact(t_end),
        }),
    )?;
    println!(
        "msd-validate: {replicas} replicas over {steps} steps, worst deviation \
         {worst_se:.2} standard errors, wrote {}",
        exp.out_dir.display()
    );
    Ok(())
}

fn check_list(name: &str, list: &[f64]) -> Result<(), CliError> {
    if list.is_empty() {
        return Err(CliError::Validation(format!(
            "{name}: at least one value required"
        )));
    }
    for &x in list {
        if !(x > 0.0 && x.is_finite()) {
            return Err(CliError::Validation(format!(
                "{name}: entries must be positive and finite, got {x}"
            )));
        }
    }
    Ok(())
}
