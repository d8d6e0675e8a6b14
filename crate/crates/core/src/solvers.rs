//! Per-step solvers for the constrained minimization
//!
//! `min_q E_n(q)  subject to  phi_k(q) <= 0 for all pairs k`
//!
//! where `E_n` is the delay energy plus external load and the `phi_k` are the
//! affine non-overlap constraints from [`crate::constraints`]. Two routes:
//!
//! * [`uzawa_solve`]: projected dual ascent. The inner minimization has a
//!   closed form because the delay part is diagonal, so each dual iteration
//!   costs one sweep over particles and constraints. The dual step size is
//!   bounded by the convexity modulus over the squared constraint norm; the
//!   automatic policy stays a safety factor below that bound.
//! * [`penalty_solve`]: exterior quadratic penalty with a geometric
//!   continuation in the penalty parameter, Newton inner iterations, and a
//!   terminal active-set polish that removes the floating-point floor the
//!   raw continuation hits once the penalty parameter is tiny.
//!
//! Both report KKT residuals (stationarity, feasibility, complementarity)
//! and a converged flag instead of erroring on slow progress, so a driver
//! can decide whether to abort or continue.

use crate::constraints::ConstraintEval;
use crate::energy::{energy_gradient, energy_value, EnergyContext, ExternalLoad};
use crate::error::{Error, Result};
use crate::geometry::{field_norm, Vec2};
use crate::linkage::DensityGrid;

/// A dual iterate whose sup norm exceeds this multiple of its starting sup
/// norm is flagged divergent.
const DIVERGENCE_FACTOR: f64 = 1e6;

/// Pairs this close to the linearized boundary are candidates for the
/// terminal polish in the penalty route.
const POLISH_ACTIVE_TOL: f64 = 1e-6;

/// Lagrangian residuals at a primal-dual pair.
#[derive(Clone, Copy, Debug)]
pub struct KktResiduals {
    /// `|grad E + sum_k lambda_k grad phi_k|` over all coordinates.
    pub stationarity: f64,
    /// `max_k max(phi_k, 0)`.
    pub feasibility: f64,
    /// `sum_k |lambda_k phi_k|`.
    pub complementarity: f64,
}

impl KktResiduals {
    pub const ZERO: KktResiduals = KktResiduals {
        stationarity: 0.0,
        feasibility: 0.0,
        complementarity: 0.0,
    };

    /// Worst residual relative to its tolerance; `<= 1` means converged.
    /// The stationarity tolerance is scaled by `stat_scale` (one plus the
    /// load gradient norm at the reference) so it is invariant under
    /// rescaling the load.
    pub fn worst_ratio(&self, tols: &KktTolerances, stat_scale: f64) -> f64 {
        let s = self.stationarity / (tols.stationarity * stat_scale);
        let f = self.feasibility / tols.feasibility;
        let c = self.complementarity / tols.complementarity;
        s.max(f).max(c)
    }
}

/// Convergence tolerances for the per-step solvers.
#[derive(Clone, Copy, Debug)]
pub struct KktTolerances {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl Default for KktTolerances {
    fn default() -> Self {
        KktTolerances {
            stationarity: 1e-8,
            feasibility: 1e-9,
            complementarity: 1e-8,
        }
    }
}

impl KktTolerances {
    pub(crate) fn validate(&self) -> Result<()> {
        let ok = self.stationarity > 0.0 && self.feasibility > 0.0 && self.complementarity > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "solver tolerances must be positive".into(),
            ))
        }
    }
}

/// Dual step size policy for the ascent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepPolicy {
    /// `safety * uzawa_step_bound(...)`, recomputed per solve.
    Auto { safety: f64 },
    Fixed(f64),
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Auto { safety: 0.9 }
    }
}

#[derive(Clone, Debug)]
pub struct UzawaSettings {
    pub step: StepPolicy,
    pub max_iterations: usize,
    pub tolerances: KktTolerances,
    /// Initial multipliers, e.g. carried over from the previous time step.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for UzawaSettings {
    fn default() -> Self {
        UzawaSettings {
            step: StepPolicy::default(),
            max_iterations: 10_000,
            tolerances: KktTolerances::default(),
            warm_start: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PenaltySettings {
    /// First penalty parameter `delta_0`.
    pub initial: f64,
    /// Geometric factor applied per continuation rung, in (0, 1).
    pub factor: f64,
    /// Smallest penalty parameter attempted.
    pub floor: f64,
    /// Newton iteration cap per rung.
    pub max_inner: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Terminal active-set refinement. Keeps the reported residuals at the
    /// level of the underlying linear algebra instead of the `ulp/delta`
    /// granularity of the raw continuation. Disable to observe the plain
    /// penalty path.
    pub polish: bool,
    pub tolerances: KktTolerances,
}

impl Default for PenaltySettings {
    fn default() -> Self {
        PenaltySettings {
            initial: 1e-2,
            factor: 0.25,
            floor: 1e-2 * 0.25f64.powi(12),
            max_inner: 200,
            armijo: 1e-4,
            polish: true,
            tolerances: KktTolerances::default(),
        }
    }
}

impl PenaltySettings {
    fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(Error::InvalidInput("penalty initial must be positive".into()));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::InvalidInput(
                "penalty factor must lie strictly between 0 and 1".into(),
            ));
        }
        if !(self.floor > 0.0 && self.floor <= self.initial) {
            return Err(Error::InvalidInput(
                "penalty floor must be positive and at most the initial value".into(),
            ));
        }
        if self.max_inner == 0 {
            return Err(Error::InvalidInput("penalty needs at least one inner iteration".into()));
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return Err(Error::InvalidInput(
                "Armijo constant must lie in (0, 1/2)".into(),
            ));
        }
        self.tolerances.validate()
    }
}

/// Primal-dual output of a per-step solve.
#[derive(Clone, Debug)]
pub struct SolverResult {
    pub positions: Vec<Vec2>,
    /// One multiplier per constraint, in the pair order of the
    /// [`ConstraintEval`] that was solved.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub residuals: KktResiduals,
    pub converged: bool,
}

/// Separable quadratic `sum_i alpha_i/2 |q_i|^2 - b_i . q_i`, the shape of
/// every inner problem: the delay term contributes `alpha_i = theta_i/eps`
/// and `b_i = T_i/eps`, and the load enters either through a frozen gradient
/// or through its diagonal quadratic model at a reference point.
#[derive(Clone, Debug)]
pub(crate) struct QuadKernel {
    pub(crate) alpha: Vec<f64>,
    pub(crate) b: Vec<Vec2>,
}

fn delay_stiffness(ctx: &EnergyContext) -> Result<Vec<f64>> {
    (0..ctx.n_particles())
        .map(|i| {
            let theta = ctx.delay_mass(i);
            if theta > 0.0 {
                Ok(theta / ctx.eps())
            } else {
                Err(Error::InvalidRates(format!(
                    "particle {i} carries no delay mass; the step problem is not coercive"
                )))
            }
        })
        .collect()
}

impl QuadKernel {
    pub(crate) fn from_context(ctx: &EnergyContext, load_grad: &[Vec2]) -> Result<Self> {
        if load_grad.len() != ctx.n_particles() {
            return Err(Error::InvalidInput(format!(
                "load gradient covers {} particles, context {}",
                load_grad.len(),
                ctx.n_particles()
            )));
        }
        let alpha = delay_stiffness(ctx)?;
        let inv_eps = 1.0 / ctx.eps();
        let b = ctx
            .targets()
            .iter()
            .zip(load_grad)
            .map(|(t, g)| *t * inv_eps - *g)
            .collect();
        Ok(QuadKernel { alpha, b })
    }

    /// Kernel for the delay energy plus the load's diagonal quadratic model
    /// at `at`: curvature `modulus` on the diagonal and the exact gradient
    /// there. For loads whose gradient is affine with slope `modulus` (the
    /// centered quadratic, anything already linearized, and their noise
    /// shifts) the model is the load itself and the kernel minimizer is the
    /// true step minimizer; for other loads it is a majorizing model step.
    pub(crate) fn from_load(
        ctx: &EnergyContext,
        load: &ExternalLoad,
        at: &[Vec2],
    ) -> Result<Self> {
        if at.len() != ctx.n_particles() {
            return Err(Error::InvalidInput(format!(
                "reference covers {} particles, context {}",
                at.len(),
                ctx.n_particles()
            )));
        }
        let m = load.modulus();
        let g = load.gradient(at);
        let mut kernel = Self::from_context(ctx, &g)?;
        if m != 0.0 {
            for a in kernel.alpha.iter_mut() {
                *a += m;
            }
            for (b, q) in kernel.b.iter_mut().zip(at) {
                *b += *q * m;
            }
        }
        Ok(kernel)
    }

    /// Exact minimizer of the kernel plus `sum_k lambda_k phi_k`:
    /// `q_i = (b_i - sum_k lambda_k grad_i phi_k) / alpha_i`.
    pub(crate) fn minimize(&self, ce: &ConstraintEval, lambda: &[f64]) -> Vec<Vec2> {
        debug_assert_eq!(lambda.len(), ce.len());
        let mut acc = self.b.clone();
        for (k, c) in ce.pairs().iter().enumerate() {
            if lambda[k] != 0.0 {
                // scatter applies -coeff * grad phi.
                c.gradient.scatter(lambda[k], &mut acc);
            }
        }
        for (a, alpha) in acc.iter_mut().zip(&self.alpha) {
            *a = *a * (1.0 / alpha);
        }
        acc
    }

    /// Norm of the Lagrangian gradient `alpha q - b + sum lambda grad phi`.
    /// Zero up to roundoff when `q` came from [`QuadKernel::minimize`]; the
    /// solvers report the measured value rather than assuming it.
    fn stationarity(&self, q: &[Vec2], ce: &ConstraintEval, lambda: &[f64]) -> f64 {
        let mut g: Vec<Vec2> = q
            .iter()
            .zip(&self.alpha)
            .zip(&self.b)
            .map(|((qi, a), bi)| *qi * *a - *bi)
            .collect();
        for (k, c) in ce.pairs().iter().enumerate() {
            if lambda[k] != 0.0 {
                c.gradient.scatter(-lambda[k], &mut g);
            }
        }
        field_norm(&g)
    }
}

/// One projected gradient step on the dual: `lambda <- max(lambda + eta phi, 0)`.
fn dual_update(lambda: &mut [f64], phi: &[f64], eta: f64) {
    for (l, p) in lambda.iter_mut().zip(phi) {
        *l = (*l + eta * p).max(0.0);
    }
}

/// Largest provably safe dual step for the ascent on a kernel built from
/// `grid` and `eps`, with `n_constraints` active rows.
///
/// The dual gradient is Lipschitz with constant `|G|^2 / alpha_min`; each
/// constraint gradient has squared norm 2 (two unit embeddings), so
/// `|G|^2 <= 2 n_c`, while `alpha_min = theta_min / eps`. Ascent converges
/// for any step below `2 alpha_min / |G|^2 = theta_min / (eps n_c)`.
pub fn uzawa_step_bound(grid: &DensityGrid, eps: f64, n_constraints: usize) -> f64 {
    assert!(n_constraints >= 1, "the step bound needs at least one constraint");
    assert!(eps > 0.0 && eps.is_finite());
    let theta_min = (0..grid.n_particles())
        .map(|i| grid.delay_mass(i))
        .fold(f64::INFINITY, f64::min);
    theta_min / (eps * n_constraints as f64)
}

/// Projected dual ascent on a separable quadratic kernel. Convergence is
/// checked before each dual update so a warm start that is already optimal
/// finishes in one iteration.
pub(crate) fn dual_ascent(
    kernel: &QuadKernel,
    ce: &ConstraintEval,
    eta: f64,
    tols: &KktTolerances,
    stat_scale: f64,
    max_iterations: usize,
    warm: Option<&[f64]>,
) -> SolverResult {
    assert!(eta > 0.0 && eta.is_finite(), "dual step must be positive");
    assert!(max_iterations >= 1);
    let n_c = ce.len();
    if n_c == 0 {
        let q = kernel.minimize(ce, &[]);
        let residuals = KktResiduals {
            stationarity: kernel.stationarity(&q, ce, &[]),
            feasibility: 0.0,
            complementarity: 0.0,
        };
        return SolverResult {
            positions: q,
            multipliers: Vec::new(),
            iterations: 1,
            residuals,
            converged: true,
        };
    }

    let mut lambda: Vec<f64> = match warm {
        Some(w) => {
            debug_assert_eq!(w.len(), n_c);
            w.iter().map(|l| l.max(0.0)).collect()
        }
        None => vec![0.0; n_c],
    };
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let divergence_cap = DIVERGENCE_FACTOR * sup(&lambda).max(1.0);

    let mut phi = Vec::with_capacity(n_c);
    let mut last = None;
    for it in 1..=max_iterations {
        let q = kernel.minimize(ce, &lambda);
        ce.evaluate_into(&q, &mut phi);
        let mut feasibility = 0.0f64;
        let mut complementarity = 0.0;
        for (p, l) in phi.iter().zip(&lambda) {
            feasibility = feasibility.max(p.max(0.0));
            complementarity += (l * p).abs();
        }
        let residuals = KktResiduals {
            stationarity: kernel.stationarity(&q, ce, &lambda),
            feasibility,
            complementarity,
        };
        if residuals.worst_ratio(tols, stat_scale) <= 1.0 {
            return SolverResult {
                positions: q,
                multipliers: lambda,
                iterations: it,
                residuals,
                converged: true,
            };
        }
        dual_update(&mut lambda, &phi, eta);
        last = Some((q, residuals, it));
        if sup(&lambda) > divergence_cap {
            let (q, residuals, it) = last.unwrap();
            return SolverResult {
                positions: q,
                multipliers: lambda,
                iterations: it,
                residuals,
                converged: false,
            };
        }
    }
    let (q, residuals, it) = last.unwrap();
    SolverResult {
        positions: q,
        multipliers: lambda,
        iterations: it,
        residuals,
        converged: false,
    }
}

/// Closed-form minimizer of the delay energy plus a frozen load gradient
/// plus `sum_k lambda_k phi_k`. Exposed for diagnostics and tests; the
/// ascent calls the kernel directly.
pub fn uzawa_inner_minimize(
    ctx: &EnergyContext,
    load_grad: &[Vec2],
    ce: &ConstraintEval,
    lambda: &[f64],
) -> Result<Vec<Vec2>> {
    if lambda.len() != ce.len() {
        return Err(Error::InvalidInput(format!(
            "{} multipliers for {} constraints",
            lambda.len(),
            ce.len()
        )));
    }
    let kernel = QuadKernel::from_context(ctx, load_grad)?;
    Ok(kernel.minimize(ce, lambda))
}

/// Uzawa step solver. The load enters through its diagonal quadratic model
/// at the linearization reference, which keeps every inner problem separable
/// and closed-form. The model is exact for every load with an affine
/// gradient, so the built-in quadratic, pre-linearized loads, and their
/// noise shifts are solved without approximation.
pub fn uzawa_solve(
    ctx: &EnergyContext,
    load: &ExternalLoad,
    ce: &ConstraintEval,
    settings: &UzawaSettings,
) -> Result<SolverResult> {
    settings.tolerances.validate()?;
    if ce.n_particles() != ctx.n_particles() {
        return Err(Error::InvalidInput(format!(
            "constraints cover {} particles, context {}",
            ce.n_particles(),
            ctx.n_particles()
        )));
    }
    if settings.max_iterations == 0 {
        return Err(Error::InvalidInput("uzawa needs at least one iteration".into()));
    }
    if let Some(w) = &settings.warm_start {
        if w.len() != ce.len() {
            return Err(Error::InvalidInput(format!(
                "warm start holds {} multipliers for {} constraints",
                w.len(),
                ce.len()
            )));
        }
    }
    let g = load.gradient(ce.reference());
    let stat_scale = 1.0 + field_norm(&g);
    let kernel = QuadKernel::from_load(ctx, load, ce.reference())?;
    let eta = match settings.step {
        StepPolicy::Fixed(e) => {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidInput(format!("dual step must be positive, got {e}")));
            }
            e
        }
        StepPolicy::Auto { safety } => {
            if !(safety > 0.0 && safety.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "step safety factor must be positive, got {safety}"
                )));
            }
            if ce.is_empty() {
                1.0
            } else {
                safety * uzawa_step_bound(ctx.grid(), ctx.eps(), ce.len())
            }
        }
    };
    Ok(dual_ascent(
        &kernel,
        ce,
        eta,
        &settings.tolerances,
        stat_scale,
        settings.max_iterations,
        settings.warm_start.as_deref(),
    ))
}

fn add_fields(a: &[Vec2], b: &[Vec2]) -> Vec<Vec2> {
    a.iter().zip(b).map(|(x, y)| *x + *y).collect()
}

/// Residual triple at `(qref + w, lambda)`. Feasibility and complementarity
/// use the displacement-frame constraint values; stationarity is measured on
/// the same Lagrangian gradient formula the Newton iteration descends.
fn measure_residuals(
    ctx: &EnergyContext,
    load: &ExternalLoad,
    ce: &ConstraintEval,
    qref: &[Vec2],
    w: &[Vec2],
    lambda: &[f64],
) -> (KktResiduals, Vec<Vec2>) {
    let q = add_fields(qref, w);
    let mut grad = energy_gradient(ctx, load, &q);
    let mut phi = Vec::with_capacity(ce.len());
    ce.evaluate_displacement_into(w, &mut phi);
    let mut feasibility = 0.0f64;
    let mut complementarity = 0.0;
    for (k, c) in ce.pairs().iter().enumerate() {
        if lambda[k] != 0.0 {
            c.gradient.scatter(-lambda[k], &mut grad);
        }
        feasibility = feasibility.max(phi[k].max(0.0));
        complementarity += (lambda[k] * phi[k]).abs();
    }
    (
        KktResiduals {
            stationarity: field_norm(&grad),
            feasibility,
            complementarity,
        },
        q,
    )
}

/// In-place lower Cholesky factor of a dense symmetric matrix in row-major
/// storage. Fails when the matrix is not numerically positive definite.
fn cholesky_in_place(a: &mut [f64], dim: usize) -> Result<()> {
    for c in 0..dim {
        for r in c..dim {
            let mut sum = a[r * dim + c];
            for k in 0..c {
                sum -= a[r * dim + k] * a[c * dim + k];
            }
            if r == c {
                if !(sum > 0.0) {
                    return Err(Error::SolverFailure {
                        iterations: 0,
                        context: "Newton matrix lost positive definiteness".into(),
                    });
                }
                a[c * dim + c] = sum.sqrt();
            } else {
                a[r * dim + c] = sum / a[c * dim + c];
            }
        }
    }
    Ok(())
}

fn cholesky_solve(l: &[f64], dim: usize, x: &mut [f64]) {
    for r in 0..dim {
        let mut s = x[r];
        for k in 0..r {
            s -= l[r * dim + k] * x[k];
        }
        x[r] = s / l[r * dim + r];
    }
    for r in (0..dim).rev() {
        let mut s = x[r];
        for k in r + 1..dim {
            s -= l[k * dim + r] * x[k];
        }
        x[r] = s / l[r * dim + r];
    }
}

fn sym_matvec(a: &[f64], dim: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..dim {
        let mut s = 0.0;
        for c in 0..dim {
            s += a[r * dim + c] * x[c];
        }
        out[r] = s;
    }
}

/// Equality-constrained KKT solve on the guessed active set. Exact for
/// affine and centered quadratic loads (the only curvature the model uses);
/// the caller accepts the candidate only when it measurably improves the
/// residuals, so an inexact Hessian model cannot make things worse.
fn active_set_polish(
    ctx: &EnergyContext,
    load: &ExternalLoad,
    ce: &ConstraintEval,
    qref: &[Vec2],
    phi: &[f64],
    alpha: &[f64],
) -> Option<(Vec<Vec2>, Vec<f64>)> {
    let n = ctx.n_particles();
    let d_part: Vec<f64> = alpha.iter().map(|a| a + load.modulus()).collect();
    let grad0 = energy_gradient(ctx, load, qref);
    let mut active: Vec<usize> = (0..ce.len()).filter(|&k| phi[k] >= -POLISH_ACTIVE_TOL).collect();

    let mut passes = active.len() + 1;
    loop {
        if active.is_empty() {
            let w: Vec<Vec2> = grad0
                .iter()
                .zip(&d_part)
                .map(|(g, d)| *g * (-1.0 / d))
                .collect();
            return Some((w, vec![0.0; ce.len()]));
        }
        // Embedded gradients of the active rows.
        let rows: Vec<Vec<Vec2>> = active
            .iter()
            .map(|&k| {
                let mut row = vec![Vec2::ZERO; n];
                // grad phi embeds +e at i and -e at j; scatter applies -coeff
                // times that embedding.
                ce.pairs()[k].gradient.scatter(-1.0, &mut row);
                row
            })
            .collect();
        let m = active.len();
        // Schur complement S = G D^-1 G^T and right-hand side
        // G D^-1 (-grad0) - d_ref.
        let mut s = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for a in 0..m {
            for b in a..m {
                let mut acc = 0.0;
                for p in 0..n {
                    acc += rows[a][p].dot(rows[b][p]) / d_part[p];
                }
                s[a * m + b] = acc;
                s[b * m + a] = acc;
            }
            let mut acc = 0.0;
            for p in 0..n {
                acc += rows[a][p].dot(grad0[p] * (-1.0 / d_part[p]));
            }
            rhs[a] = acc - ce.pairs()[active[a]].ref_distance;
        }
        if cholesky_in_place(&mut s, m).is_err() {
            // Redundant active rows; leave the continuation iterate alone.
            return None;
        }
        cholesky_solve(&s, m, &mut rhs);
        if let Some(pos) = rhs.iter().position(|l| *l < 0.0) {
            // A nonnegative multiplier does not exist on this guess; drop
            // the offending row and retry.
            active.remove(pos);
            passes -= 1;
            if passes == 0 {
                return None;
            }
            continue;
        }
        let mut w: Vec<Vec2> = grad0.iter().map(|g| -*g).collect();
        for (a, row) in rows.iter().enumerate() {
            for (wp, rp) in w.iter_mut().zip(row) {
                *wp -= *rp * rhs[a];
            }
        }
        for (wp, d) in w.iter_mut().zip(&d_part) {
            *wp = *wp * (1.0 / d);
        }
        let mut lambda = vec![0.0; ce.len()];
        for (a, &k) in active.iter().enumerate() {
            lambda[k] = rhs[a];
        }
        return Some((w, lambda));
    }
}

/// Exterior penalty continuation for the step problem.
///
/// Minimizes `E_n(qref + w) + (1/2 delta) sum_k max(phi_k(w), 0)^2` in the
/// displacement frame for a geometric schedule of `delta`, with Newton
/// directions on the generalized Hessian and an Armijo backtracking line
/// search. Multiplier estimates are `max(phi_k, 0)/delta`. Each rung ends
/// with an optional active-set polish; the best iterate seen wins, and the
/// continuation stops early once the tolerances are met.
///
/// Exhausting the schedule is reported as `converged = false` rather than an
/// error, mirroring the ascent route, so drivers can apply one
/// non-convergence policy to both.
pub fn penalty_solve(
    ctx: &EnergyContext,
    load: &ExternalLoad,
    ce: &ConstraintEval,
    settings: &PenaltySettings,
) -> Result<SolverResult> {
    settings.validate()?;
    if ce.n_particles() != ctx.n_particles() {
        return Err(Error::InvalidInput(format!(
            "constraints cover {} particles, context {}",
            ce.n_particles(),
            ctx.n_particles()
        )));
    }
    let n = ctx.n_particles();
    let dim = 2 * n;
    let qref = ce.reference().to_vec();
    let alpha = delay_stiffness(ctx)?;
    let stat_scale = 1.0 + field_norm(&load.gradient(&qref));
    let inner_tol = 0.5 * settings.tolerances.stationarity * stat_scale;

    let mut w = vec![Vec2::ZERO; n];
    let mut phi: Vec<f64> = Vec::with_capacity(ce.len());
    let mut total_inner = 0usize;

    // (ratio, w, lambda, residuals, q)
    let mut best: Option<(f64, Vec<Vec2>, Vec<f64>, KktResiduals, Vec<Vec2>)> = None;
    let consider = |cand_w: &[Vec2],
                        lambda: Vec<f64>,
                        best: &mut Option<(f64, Vec<Vec2>, Vec<f64>, KktResiduals, Vec<Vec2>)>|
     -> bool {
        let (residuals, q) = measure_residuals(ctx, load, ce, &qref, cand_w, &lambda);
        let ratio = residuals.worst_ratio(&settings.tolerances, stat_scale);
        if !ratio.is_finite() {
            return false;
        }
        let improved = best.as_ref().map_or(true, |(r, ..)| ratio < *r);
        if improved {
            *best = Some((ratio, cand_w.to_vec(), lambda, residuals, q));
        }
        ratio <= 1.0
    };

    let objective = |w: &[Vec2], phi_buf: &mut Vec<f64>, delta: f64| -> f64 {
        let q = add_fields(&qref, w);
        ce.evaluate_displacement_into(w, phi_buf);
        let mut pen = 0.0;
        for p in phi_buf.iter() {
            let v = p.max(0.0);
            pen += v * v;
        }
        energy_value(ctx, load, &q) + 0.5 * pen / delta
    };

    let mut delta = settings.initial;
    let mut phi_trial: Vec<f64> = Vec::new();
    while delta >= settings.floor * (1.0 - 1e-12) {
        // Inner Newton loop at fixed delta, tracking the best gradient norm
        // so a stall keeps the best iterate instead of the last one.
        let mut best_inner: (f64, Vec<Vec2>) = (f64::INFINITY, w.clone());
        let mut since_improvement = 0usize;
        for _ in 0..settings.max_inner {
            let q = add_fields(&qref, &w);
            ce.evaluate_displacement_into(&w, &mut phi);
            let mut grad = energy_gradient(ctx, load, &q);
            for (k, c) in ce.pairs().iter().enumerate() {
                if phi[k] > 0.0 {
                    c.gradient.scatter(-(phi[k] / delta), &mut grad);
                }
            }
            let gnorm = field_norm(&grad);
            if gnorm < best_inner.0 {
                best_inner = (gnorm, w.clone());
                since_improvement = 0;
            } else {
                since_improvement += 1;
            }
            if gnorm <= inner_tol {
                break;
            }
            if since_improvement >= 8 {
                // Rounding granularity floor for this delta.
                w = best_inner.1.clone();
                break;
            }
            total_inner += 1;

            // Generalized Hessian: diagonal delay + load curvature plus the
            // rank-one blocks of the violated constraints.
            let mut h = vec![0.0; dim * dim];
            for i in 0..n {
                let v = alpha[i] + load.modulus();
                h[(2 * i) * dim + 2 * i] = v;
                h[(2 * i + 1) * dim + 2 * i + 1] = v;
            }
            for (k, c) in ce.pairs().iter().enumerate() {
                if phi[k] <= 0.0 {
                    continue;
                }
                let g = &c.gradient;
                let e = g.direction;
                let entries = [
                    (2 * g.i, e.x),
                    (2 * g.i + 1, e.y),
                    (2 * g.j, -e.x),
                    (2 * g.j + 1, -e.y),
                ];
                for (r, vr) in entries {
                    for (cc, vc) in entries {
                        h[r * dim + cc] += vr * vc / delta;
                    }
                }
            }
            let h_full = h.clone();
            cholesky_in_place(&mut h, dim)?;
            let mut p = vec![0.0; dim];
            for i in 0..n {
                p[2 * i] = -grad[i].x;
                p[2 * i + 1] = -grad[i].y;
            }
            let rhs = p.clone();
            cholesky_solve(&h, dim, &mut p);
            // One pass of iterative refinement.
            let mut residual = vec![0.0; dim];
            sym_matvec(&h_full, dim, &p, &mut residual);
            for (r, b) in residual.iter_mut().zip(&rhs) {
                *r = *b - *r;
            }
            cholesky_solve(&h, dim, &mut residual);
            for (pi, ri) in p.iter_mut().zip(&residual) {
                *pi += *ri;
            }

            let direction: Vec<Vec2> = (0..n).map(|i| Vec2::new(p[2 * i], p[2 * i + 1])).collect();
            let slope: f64 = grad
                .iter()
                .zip(&direction)
                .map(|(g, d)| g.dot(*d))
                .sum();
            let obj0 = objective(&w, &mut phi_trial, delta);
            let mut t = 1.0;
            let mut halvings = 0usize;
            let w_next = loop {
                let trial: Vec<Vec2> = w
                    .iter()
                    .zip(&direction)
                    .map(|(wi, di)| *wi + *di * t)
                    .collect();
                if objective(&trial, &mut phi_trial, delta)
                    <= obj0 + settings.armijo * t * slope
                {
                    break trial;
                }
                halvings += 1;
                if halvings > 60 {
                    return Err(Error::LineSearchFailure {
                        halvings,
                        grad_norm: gnorm,
                    });
                }
                t *= 0.5;
            };
            w = w_next;
        }

        // Rung summary: multiplier estimates from the final iterate.
        ce.evaluate_displacement_into(&w, &mut phi);
        let lambda: Vec<f64> = phi.iter().map(|p| p.max(0.0) / delta).collect();
        let done = consider(&w, lambda, &mut best);
        let polished_done = if settings.polish {
            match active_set_polish(ctx, load, ce, &qref, &phi, &alpha) {
                Some((w_pol, lambda_pol)) => consider(&w_pol, lambda_pol, &mut best),
                None => false,
            }
        } else {
            false
        };
        if done || polished_done {
            let (_, _, lambda, residuals, q) = best.unwrap();
            return Ok(SolverResult {
                positions: q,
                multipliers: lambda,
                iterations: total_inner.max(1),
                residuals,
                converged: true,
            });
        }
        delta *= settings.factor;
    }

    let (_, _, lambda, residuals, q) = best.expect("at least one rung ran");
    Ok(SolverResult {
        positions: q,
        multipliers: lambda,
        iterations: total_inner.max(1),
        residuals,
        converged: false,
    })
}

/// Recomputed KKT residuals at a solver output, from scratch, with the same
/// load the step was solved with.
pub fn kkt_residual(
    ctx: &EnergyContext,
    load: &ExternalLoad,
    ce: &ConstraintEval,
    result: &SolverResult,
) -> KktResiduals {
    assert_eq!(result.multipliers.len(), ce.len(), "multiplier count mismatch");
    let q = &result.positions;
    let mut grad = energy_gradient(ctx, load, q);
    let mut feasibility = 0.0f64;
    let mut complementarity = 0.0;
    for (k, c) in ce.pairs().iter().enumerate() {
        let lambda = result.multipliers[k];
        let phi = ce.value_at(k, q);
        if lambda != 0.0 {
            c.gradient.scatter(-lambda, &mut grad);
        }
        feasibility = feasibility.max(phi.max(0.0));
        complementarity += (lambda * phi).abs();
    }
    KktResiduals {
        stationarity: field_norm(&grad),
        feasibility,
        complementarity,
    }
}

/// Variational certificate: a converged step `z` must satisfy
/// `z = P_K(z - dt (L z + F'(z)))` with `P_K` the Euclidean projection onto
/// the linearized feasible set, `L` the delay operator and `dt = eps da`.
/// Returns the distance between `z` and the projected point, computed by an
/// independent tightly-toleranced dual ascent on the projection problem.
pub fn projection_identity_check(
    ctx: &EnergyContext,
    load: &ExternalLoad,
    ce: &ConstraintEval,
    result: &SolverResult,
) -> Result<f64> {
    if !result.converged {
        return Err(Error::InvalidInput(
            "projection identity requires a converged step".into(),
        ));
    }
    let z = &result.positions;
    if z.len() != ctx.n_particles() {
        return Err(Error::InvalidInput("result size mismatch".into()));
    }
    let dt = ctx.dt();
    let grad = energy_gradient(ctx, load, z);
    let v: Vec<Vec2> = z.iter().zip(&grad).map(|(zi, gi)| *zi - *gi * dt).collect();
    let kernel = QuadKernel {
        alpha: vec![1.0; z.len()],
        b: v,
    };
    let tols = KktTolerances {
        stationarity: 1e-12,
        feasibility: 1e-12,
        complementarity: 1e-12,
    };
    let eta = if ce.is_empty() { 1.0 } else { 0.9 / ce.len() as f64 };
    let projection = dual_ascent(&kernel, ce, eta, &tols, 1.0, 200_000, None);
    if !projection.converged {
        return Err(Error::SolverFailure {
            iterations: projection.iterations,
            context: "projection subproblem did not converge".into(),
        });
    }
    let diff: Vec<Vec2> = z
        .iter()
        .zip(&projection.positions)
        .map(|(a, b)| *a - *b)
        .collect();
    Ok(field_norm(&diff))
}
