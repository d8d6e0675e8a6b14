//! CSV and JSON emission.
//!
//! Every float goes through [`sig17`]: 17 significant digits round-trip any
//! f64 bit pattern, and the fixed format keeps reruns byte-identical.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use adhesim_core::simulation::{compactness_proxy, ledger_check, Trajectory};
use serde::Serialize;

use crate::error::{io_at, CliError};

pub fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_at(path, e))
}

/// trajectory.csv: `t,particle,x,y`, one row per stored state and particle.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "t,particle,x,y")?;
        for (t, state) in traj.times().iter().zip(traj.states()) {
            for (i, z) in state.iter().enumerate() {
                writeln!(w, "{},{i},{},{}", sig17(*t), sig17(z.x), sig17(z.y))?;
            }
        }
        w.flush()
    };
    emit().map_err(|e| io_at(path, e))
}

/// diagnostics.csv: ten columns, one row per step including t = 0.
pub fn write_diagnostics(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut emit = || -> std::io::Result<()> {
        writeln!(
            w,
            "t,I_n,cumulative_dissipation,F,ledger_slack,msd,activation,\
             kkt_stationarity,kkt_feasibility,min_distance"
        )?;
        for r in traj.diagnostics() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                sig17(r.t),
                sig17(r.delay_energy),
                sig17(r.cumulative_dissipation),
                sig17(r.load_value),
                sig17(r.ledger_slack),
                sig17(r.msd),
                sig17(r.activation),
                sig17(r.kkt.stationarity),
                sig17(r.kkt.feasibility),
                sig17(r.min_distance)
            )?;
        }
        w.flush()
    };
    emit().map_err(|e| io_at(path, e))
}

/// multipliers.csv: `t,i,j,lambda` for every stored contact. The initial
/// state has no solve behind it, so t = 0 contributes no rows.
pub fn write_multipliers(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "t,i,j,lambda")?;
        for (t, step) in traj.times().iter().zip(traj.multipliers()) {
            for ((i, j), lambda) in step {
                writeln!(w, "{},{i},{j},{}", sig17(*t), sig17(*lambda))?;
            }
        }
        w.flush()
    };
    emit().map_err(|e| io_at(path, e))
}

#[derive(Serialize)]
pub struct Summary {
    pub final_time: f64,
    pub steps: usize,
    pub final_msd: f64,
    pub max_ledger_violation: f64,
    pub compactness_proxy: f64,
    pub runtime_seconds: f64,
}

pub fn summarize(traj: &Trajectory, runtime: Duration) -> Summary {
    let last = traj
        .diagnostics()
        .last()
        .expect("runs record at least the initial step");
    Summary {
        final_time: traj.final_time(),
        steps: traj.diagnostics().len() - 1,
        final_msd: last.msd,
        max_ledger_violation: ledger_check(traj),
        compactness_proxy: compactness_proxy(traj),
        runtime_seconds: runtime.as_secs_f64(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n").map_err(|e| io_at(path, e))
}

/// The standard per-run bundle: trajectory, diagnostics, multipliers,
/// summary. The runtime lands in summary.json only, keeping the CSVs
/// byte-identical across reruns of the same spec and seed.
pub fn write_run(dir: &Path, traj: &Trajectory, runtime: Duration) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_at(dir, e))?;
    write_trajectory(&dir.join("trajectory.csv"), traj)?;
    write_diagnostics(&dir.join("diagnostics.csv"), traj)?;
    write_multipliers(&dir.join("multipliers.csv"), traj)?;
    write_json(&dir.join("summary.json"), &summarize(traj, runtime))
}

/// Two-column study table, e.g. `delta_a,l1_error` or `epsilon,sup_distance`.
pub fn write_table(path: &Path, header: &str, rows: &[(f64, f64)]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        for (a, b) in rows {
            writeln!(w, "{},{}", sig17(*a), sig17(*b))?;
        }
        w.flush()
    };
    emit().map_err(|e| io_at(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig17_round_trips_awkward_floats() {
        for &x in &[
            0.1,
            1.0 / 3.0,
            std::f64::consts::PI,
            6.02e23,
            -1.2345678901234567e-300,
            0.0,
        ] {
            let back: f64 = sig17(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} -> {}", sig17(x));
        }
    }
}
