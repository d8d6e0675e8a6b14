//! Age-structured adhesive-bond densities on a uniform age grid.
//!
//! Each particle carries a density of bonds over age. Bonds form at rate
//! `beta_i (1 - total mass)` and detach at an age-dependent rate
//! `zeta_i(a) >= lower_i > 0`. The stationary profile of the implicit
//! upwind discretization with age step `da` satisfies
//!
//! ```text
//! R_{l} = R_{l-1} / (1 + da zeta(l da)),   l >= 1
//! R_0   = R_b / (1 + da zeta(0)),          R_b = beta (1 - mu_0)
//! ```
//!
//! where `mu_0 = da * sum_l R_l`. Eliminating `R_b` gives the closed form
//!
//! ```text
//! R_0 = beta / (1 + da (beta + zeta(0) + beta * S)),
//! S   = sum_{l>=1} prod_{r=1..l} 1 / (1 + da zeta(r da))
//! ```
//!
//! The grid is truncated once the certified geometric tail bound
//! `R_L / lower <= tail_tol * mu_0` holds, so every stored quantity carries
//! a known truncation error. The continuous stationary profile
//! `rho(a) = beta exp(-int_0^a zeta) / (1 + beta int_0^inf exp(-int_0^s zeta) ds)`
//! is available for consistency studies; the discrete profile converges to
//! it at first order in `da`.

use crate::error::{Error, Result};

/// Default relative tail tolerance for grid truncation.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// Hard cap on stored age cells; reaching it means the off-rate lower bound
/// is too small to certify a tail at the requested tolerance.
const CELL_CAP: usize = 5_000_000;

/// Age-dependent detachment rate: constant, or a table with linear
/// interpolation inside and constant extension beyond the last sample.
#[derive(Debug, Clone, PartialEq)]
pub enum OffRate {
    Constant(f64),
    Table {
        ages: Vec<f64>,
        values: Vec<f64>,
        /// Exact cumulative integral at the sample ages (trapezoid rule,
        /// exact for a piecewise-linear rate).
        cumulative: Vec<f64>,
    },
}

impl OffRate {
    pub fn constant(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidRates(format!(
                "off-rate must be positive and finite, got {value}"
            )));
        }
        Ok(OffRate::Constant(value))
    }

    /// Tabulated rate. Ages must start at 0 and increase strictly; values
    /// must be positive.
    pub fn table(ages: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if ages.is_empty() || ages.len() != values.len() {
            return Err(Error::InvalidRates(
                "off-rate table needs matching, non-empty ages and values".into(),
            ));
        }
        if ages[0] != 0.0 {
            return Err(Error::InvalidRates(format!(
                "off-rate table must start at age 0, got {}",
                ages[0]
            )));
        }
        if ages.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidRates(
                "off-rate table ages must increase strictly".into(),
            ));
        }
        if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidRates(
                "off-rate table values must be positive and finite".into(),
            ));
        }
        let mut cumulative = vec![0.0; ages.len()];
        for k in 1..ages.len() {
            cumulative[k] = cumulative[k - 1]
                + 0.5 * (values[k] + values[k - 1]) * (ages[k] - ages[k - 1]);
        }
        Ok(OffRate::Table {
            ages,
            values,
            cumulative,
        })
    }

    /// Rate at age `a` (clamped to the table range).
    pub fn eval(&self, a: f64) -> f64 {
        match self {
            OffRate::Constant(v) => *v,
            OffRate::Table { ages, values, .. } => {
                if a <= ages[0] {
                    return values[0];
                }
                let last = ages.len() - 1;
                if a >= ages[last] {
                    return values[last];
                }
                let k = match ages.binary_search_by(|x| x.partial_cmp(&a).unwrap()) {
                    Ok(k) => return values[k],
                    Err(k) => k,
                };
                let t = (a - ages[k - 1]) / (ages[k] - ages[k - 1]);
                values[k - 1] * (1.0 - t) + values[k] * t
            }
        }
    }

    /// Exact integral of the rate over `[0, a]`.
    pub fn integral(&self, a: f64) -> f64 {
        match self {
            OffRate::Constant(v) => v * a,
            OffRate::Table {
                ages,
                values,
                cumulative,
            } => {
                if a <= 0.0 {
                    return 0.0;
                }
                let last = ages.len() - 1;
                if a >= ages[last] {
                    return cumulative[last] + values[last] * (a - ages[last]);
                }
                let k = match ages.binary_search_by(|x| x.partial_cmp(&a).unwrap()) {
                    Ok(k) => return cumulative[k],
                    Err(k) => k,
                };
                // Trapezoid over the partial segment [ages[k-1], a].
                cumulative[k - 1] + 0.5 * (values[k - 1] + self.eval(a)) * (a - ages[k - 1])
            }
        }
    }

    /// Greatest lower bound of the rate over all ages.
    pub fn lower_bound(&self) -> f64 {
        match self {
            OffRate::Constant(v) => *v,
            OffRate::Table { values, .. } => values.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Per-particle on-rates `beta_i >= 0` and off-rates `zeta_i`.
#[derive(Debug, Clone)]
pub struct RateModel {
    beta: Vec<f64>,
    zeta: Vec<OffRate>,
}

impl RateModel {
    pub fn per_particle(beta: Vec<f64>, zeta: Vec<OffRate>) -> Result<Self> {
        if beta.is_empty() || beta.len() != zeta.len() {
            return Err(Error::InvalidRates(
                "rate model needs matching, non-empty beta and zeta lists".into(),
            ));
        }
        if beta.iter().any(|&b| !(b >= 0.0 && b.is_finite())) {
            return Err(Error::InvalidRates(
                "on-rates must be finite and nonnegative".into(),
            ));
        }
        Ok(RateModel { beta, zeta })
    }

    /// Same rates for every particle.
    pub fn uniform(n: usize, beta: f64, zeta: OffRate) -> Result<Self> {
        RateModel::per_particle(vec![beta; n], vec![zeta; n])
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.beta[i]
    }

    pub fn zeta(&self, i: usize, a: f64) -> f64 {
        self.zeta[i].eval(a)
    }

    pub fn zeta_rate(&self, i: usize) -> &OffRate {
        &self.zeta[i]
    }
}

/// Stationary discrete bond densities for all particles on a shared age
/// grid, together with their boundary values, first three moments and the
/// delay mass `mu_0 - da R_0` that sets the stiffness of the delay term.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    age_step: f64,
    /// `rows[i][l]` is the density of particle `i` in age cell `l`; all
    /// rows share the same truncation index.
    rows: Vec<Vec<f64>>,
    boundary: Vec<f64>,
    moments: [Vec<f64>; 3],
    delay_mass: Vec<f64>,
}

impl DensityGrid {
    pub fn age_step(&self) -> f64 {
        self.age_step
    }

    /// Last stored age index; cells run over `l = 0..=l_max`.
    pub fn l_max(&self) -> usize {
        self.rows[0].len() - 1
    }

    pub fn n_particles(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn value(&self, i: usize, l: usize) -> f64 {
        self.rows[i][l]
    }

    pub fn boundary(&self, i: usize) -> f64 {
        self.boundary[i]
    }

    /// `k`-th age moment `da * sum_l (l da)^k R_l`, `k <= 2`.
    pub fn moment(&self, k: usize, i: usize) -> f64 {
        self.moments[k][i]
    }

    /// Bond mass at positive ages, `da * sum_{l>=1} R_l`; dividing by the
    /// bond turnover timescale gives the quadratic stiffness of the delay
    /// term. Equals `moment(0, i) - da * value(i, 0)`.
    pub fn delay_mass(&self, i: usize) -> f64 {
        self.delay_mass[i]
    }

    /// Grid from raw rows (synthetic kernels, tests, benches). Moments and
    /// delay mass are recomputed; the boundary value is taken from the
    /// newborn cell since no rates are attached.
    pub fn from_rows(age_step: f64, rows: Vec<Vec<f64>>) -> Result<Self> {
        if !(age_step > 0.0 && age_step.is_finite()) {
            return Err(Error::InvalidRates(format!(
                "age step must be positive and finite, got {age_step}"
            )));
        }
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidRates("grid rows must be non-empty".into()));
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidRates("grid rows must share a length".into()));
        }
        if rows.iter().flatten().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidRates(
                "grid densities must be finite and nonnegative".into(),
            ));
        }
        let boundary = rows.iter().map(|r| r[0]).collect();
        let (moments, delay_mass) = grid_moments(age_step, &rows);
        Ok(DensityGrid {
            age_step,
            rows,
            boundary,
            moments,
            delay_mass,
        })
    }
}

fn grid_moments(age_step: f64, rows: &[Vec<f64>]) -> ([Vec<f64>; 3], Vec<f64>) {
    let n = rows.len();
    let mut moments = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut delay_mass = vec![0.0; n];
    for (i, row) in rows.iter().enumerate() {
        // Sum tail-first: the rows decay geometrically.
        let (mut m0, mut m1, mut m2, mut dm) = (0.0, 0.0, 0.0, 0.0);
        for (l, &r) in row.iter().enumerate().rev() {
            let a = l as f64 * age_step;
            m0 += r;
            m1 += a * r;
            m2 += a * a * r;
            if l >= 1 {
                dm += r;
            }
        }
        moments[0][i] = age_step * m0;
        moments[1][i] = age_step * m1;
        moments[2][i] = age_step * m2;
        delay_mass[i] = age_step * dm;
    }
    (moments, delay_mass)
}

/// Builds the stationary density grid for `rates` with age step `da`,
/// truncated once the certified tail bound drops below `tail_tol` relative
/// to the exact zeroth moment. All rows are padded to a common length by
/// continuing the recursion.
pub fn build_density(rates: &RateModel, da: f64, tail_tol: f64) -> Result<DensityGrid> {
    if !(da > 0.0 && da.is_finite()) {
        return Err(Error::InvalidRates(format!(
            "age step must be positive and finite, got {da}"
        )));
    }
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(Error::InvalidRates(format!(
            "tail tolerance must lie in (0, 1), got {tail_tol}"
        )));
    }
    let n = rates.len();
    let mut rows = Vec::with_capacity(n);
    let mut boundary = Vec::with_capacity(n);
    for i in 0..n {
        let (row, rb) = particle_row(rates, i, da, tail_tol)?;
        rows.push(row);
        boundary.push(rb);
    }
    // Pad to a rectangular grid; the continued entries are below tolerance.
    let width = rows.iter().map(Vec::len).max().unwrap();
    for (i, row) in rows.iter_mut().enumerate() {
        while row.len() < width {
            let l = row.len();
            let next = row[l - 1] / (1.0 + da * rates.zeta(i, l as f64 * da));
            row.push(next);
        }
    }
    let (moments, delay_mass) = grid_moments(da, &rows);
    Ok(DensityGrid {
        age_step: da,
        rows,
        boundary,
        moments,
        delay_mass,
    })
}

/// Stationary row for one particle plus its boundary value.
fn particle_row(rates: &RateModel, i: usize, da: f64, tail_tol: f64) -> Result<(Vec<f64>, f64)> {
    let beta = rates.beta(i);
    if beta == 0.0 {
        return Ok((vec![0.0, 0.0], 0.0));
    }
    let lower = rates.zeta_rate(i).lower_bound();
    if !(lower > 0.0) {
        return Err(Error::InvalidRates(format!(
            "off-rate lower bound must be positive for particle {i}"
        )));
    }
    let zeta0 = rates.zeta(i, 0.0);

    // S = sum over l >= 1 of the survival products; its tail beyond l is
    // bounded by the last product over da * lower.
    let mut product = 1.0;
    let mut series = 0.0;
    let mut l = 1usize;
    loop {
        product /= 1.0 + da * rates.zeta(i, l as f64 * da);
        series += product;
        if product / (da * lower) <= 1e-16 * series {
            break;
        }
        l += 1;
        if l > CELL_CAP {
            return Err(Error::TailNotCertified {
                cap: CELL_CAP,
                lower,
            });
        }
    }

    let denom = 1.0 + da * (beta + zeta0 + beta * series);
    let r0 = beta / denom;
    let rb = beta * (1.0 + da * zeta0) / denom;
    let mu0_exact = 1.0 - rb / beta;

    let mut row = vec![r0];
    let mut r = r0;
    let mut l = 1usize;
    loop {
        r /= 1.0 + da * rates.zeta(i, l as f64 * da);
        row.push(r);
        // Tail mass beyond cell l is bounded by r / lower.
        if r / lower <= tail_tol * mu0_exact {
            break;
        }
        l += 1;
        if l > CELL_CAP {
            return Err(Error::TailNotCertified {
                cap: CELL_CAP,
                lower,
            });
        }
    }
    Ok((row, rb))
}

/// Continuous stationary density of particle `i` at age `a`:
/// `rho(a) = beta exp(-int_0^a zeta) / (1 + beta int_0^inf exp(-int_0^s zeta) ds)`.
/// The off-rate integrals are exact (constant or piecewise-linear rate);
/// the survival integral uses adaptive Simpson plus an exact exponential
/// tail beyond the table range.
pub fn closed_form_density(rates: &RateModel, i: usize, a: f64) -> Result<f64> {
    if i >= rates.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            count: rates.len(),
        });
    }
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "age must be nonnegative and finite, got {a}"
        )));
    }
    let beta = rates.beta(i);
    if beta == 0.0 {
        return Ok(0.0);
    }
    let rate = rates.zeta_rate(i);
    let survival_integral = match rate {
        OffRate::Constant(z) => 1.0 / z,
        OffRate::Table { ages, values, .. } => {
            let a_end = *ages.last().unwrap();
            let z_end = *values.last().unwrap();
            let head = if a_end > 0.0 {
                adaptive_simpson(&|s| (-rate.integral(s)).exp(), 0.0, a_end, 1e-13, 40)?
            } else {
                0.0
            };
            // Beyond the table the rate is constant, so the tail integrates
            // exactly.
            head + (-rate.integral(a_end)).exp() / z_end
        }
    };
    Ok(beta * (-rate.integral(a)).exp() / (1.0 + beta * survival_integral))
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
) -> Result<f64> {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let err = left + right - whole;
        if err.abs() <= 15.0 * tol {
            return Ok(left + right + err / 15.0);
        }
        if depth == 0 {
            return Err(Error::QuadratureFailure {
                tol,
                estimate: err.abs(),
            });
        }
        Ok(recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }
    let fa = f(a);
    let fm = f(0.5 * (a + b));
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

/// L1 distance between the piecewise-constant grid profile and the
/// continuous stationary density, integrated over the stored age range, per
/// particle. Each cell is subsampled with composite Simpson.
pub fn l1_consistency_error(grid: &DensityGrid, rates: &RateModel) -> Result<Vec<f64>> {
    if rates.len() != grid.n_particles() {
        return Err(Error::InvalidRates(format!(
            "rate model covers {} particles, grid {}",
            rates.len(),
            grid.n_particles()
        )));
    }
    const SUBDIVISIONS: usize = 64;
    let da = grid.age_step();
    let h = da / SUBDIVISIONS as f64;
    let mut out = Vec::with_capacity(grid.n_particles());
    for i in 0..grid.n_particles() {
        let mut total = 0.0;
        for l in 0..=grid.l_max() {
            let r = grid.value(i, l);
            let a0 = l as f64 * da;
            // Composite Simpson on |R_l - rho| over the cell; the integrand
            // has at most one kink, which the fine grid resolves.
            let mut acc = 0.0;
            for s in 0..SUBDIVISIONS {
                let x0 = a0 + s as f64 * h;
                let f0 = (r - closed_form_density(rates, i, x0)?).abs();
                let fm = (r - closed_form_density(rates, i, x0 + 0.5 * h)?).abs();
                let f1 = (r - closed_form_density(rates, i, x0 + h)?).abs();
                acc += h / 6.0 * (f0 + 4.0 * fm + f1);
            }
            total += acc;
        }
        out.push(total);
    }
    Ok(out)
}

/// Least-squares slope of `log(err)` against `log(da)`: the empirical
/// consistency order of a refinement study.
pub fn consistency_order(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(
            "order fit needs at least two refinement points".into(),
        ));
    }
    if points.iter().any(|&(da, err)| !(da > 0.0 && err > 0.0)) {
        return Err(Error::InvalidInput(
            "order fit needs positive steps and errors".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(da, err)| (da.ln(), err.ln()))
        .collect();
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    Ok((n * sxy - sx * sy) / (n * sxx - sx * sx))
}
