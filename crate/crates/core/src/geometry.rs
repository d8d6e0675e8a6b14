//! Planar and periodic disk geometry: signed pair distances, contact
//! directions, feasibility checks, and the prox-regularity constant of the
//! non-overlap set.
//!
//! Conventions used throughout the crate:
//!
//! * pairs are ordered, `i < j`;
//! * the signed distance of a pair is `|q_j - q_i| - (r_i + r_j)`, negative
//!   on overlap;
//! * the distance gradient is stored sparsely as a unit direction `e` from
//!   particle `i` to particle `j`; embedded in the full configuration space
//!   it reads `-e` at slot `i` and `+e` at slot `j`, with norm `sqrt(2)`;
//! * on the torus, positions are wrapped into `[0, L) x [0, H)` by `wrap`
//!   and the pair distance is the minimum over periodic images, which
//!   reduces to four candidate offsets `(h, k)` in `{0, 1}^2` applied to the
//!   wrapped difference vector.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

/// Planar vector. Also used for per-particle gradients and velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, rhs: Vec2) {
        self.x -= rhs.x;
        self.y -= rhs.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Squared-norm of a per-particle field, i.e. the squared Euclidean norm of
/// the flattened vector in R^(2 n).
pub fn field_norm_sq(field: &[Vec2]) -> f64 {
    field.iter().map(|v| v.norm_sq()).sum()
}

pub fn field_norm(field: &[Vec2]) -> f64 {
    field_norm_sq(field).sqrt()
}

/// Rigid-disk configuration: positions and radii, same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    positions: Vec<Vec2>,
    radii: Vec<f64>,
}

impl Configuration {
    /// Validates finiteness, positive radii and matching lengths. Overlap is
    /// not checked here; use [`is_feasible`].
    pub fn new(positions: Vec<Vec2>, radii: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidConfiguration(
                "at least one particle required".into(),
            ));
        }
        if positions.len() != radii.len() {
            return Err(Error::InvalidConfiguration(format!(
                "{} positions but {} radii",
                positions.len(),
                radii.len()
            )));
        }
        for (idx, p) in positions.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidConfiguration(format!(
                    "position {idx} not finite"
                )));
            }
        }
        for (idx, &r) in radii.iter().enumerate() {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidConfiguration(format!(
                    "radius {idx} must be positive and finite, got {r}"
                )));
            }
        }
        Ok(Configuration { positions, radii })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn position(&self, i: usize) -> Vec2 {
        self.positions[i]
    }

    pub fn radius(&self, i: usize) -> f64 {
        self.radii[i]
    }

    /// Same radii, new positions.
    pub fn with_positions(&self, positions: Vec<Vec2>) -> Result<Self> {
        Configuration::new(positions, self.radii.clone())
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().cloned().fold(f64::MIN, f64::max)
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        let n = self.len();
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, count: n });
        }
        if j >= n {
            return Err(Error::IndexOutOfRange { index: j, count: n });
        }
        if i >= j {
            return Err(Error::InvalidPair { i, j });
        }
        Ok(())
    }
}

/// Spatial domain. Torus periods are the rectangle `[0, L) x [0, H)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainSpec {
    Plane,
    Torus { length: f64, height: f64 },
}

impl DomainSpec {
    pub fn torus(length: f64, height: f64) -> Result<Self> {
        if !(length > 0.0 && length.is_finite() && height > 0.0 && height.is_finite()) {
            return Err(Error::InvalidDomain(format!(
                "torus periods must be positive and finite, got L = {length}, H = {height}"
            )));
        }
        Ok(DomainSpec::Torus { length, height })
    }

    /// Periodic contact handling assumes each period exceeds four times the
    /// largest radius, so a disk never meets its own image and one periodic
    /// offset per axis covers the contact range.
    pub fn validate_for(&self, q: &Configuration) -> Result<()> {
        if let DomainSpec::Torus { length, height } = *self {
            let bound = 4.0 * q.max_radius();
            if length <= bound || height <= bound {
                return Err(Error::InvalidDomain(format!(
                    "torus periods ({length}, {height}) must exceed 4 * max radius = {bound}"
                )));
            }
        }
        Ok(())
    }
}

/// Sparse gradient of a pair distance with respect to the full
/// configuration: `-direction` at slot `i`, `+direction` at slot `j`.
/// `direction` is the unit vector from particle `i` to (the relevant image
/// of) particle `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGradient {
    pub i: usize,
    pub j: usize,
    pub direction: Vec2,
}

impl PairGradient {
    /// Inner product with a per-particle field: `direction . (w_j - w_i)`.
    pub fn apply(&self, w: &[Vec2]) -> f64 {
        self.direction.dot(w[self.j] - w[self.i])
    }

    /// Adds `coeff` times the embedded gradient to `out`.
    pub fn scatter(&self, coeff: f64, out: &mut [Vec2]) {
        out[self.i] -= self.direction * coeff;
        out[self.j] += self.direction * coeff;
    }

    /// Euclidean norm of the embedded gradient, `sqrt(2)` for a unit
    /// direction.
    pub fn embedded_norm(&self) -> f64 {
        (2.0 * self.direction.norm_sq()).sqrt()
    }
}

/// Signed pair distance in the plane: `|q_j - q_i| - (r_i + r_j)`.
pub fn signed_distance(q: &Configuration, i: usize, j: usize) -> Result<f64> {
    q.check_pair(i, j)?;
    Ok((q.position(j) - q.position(i)).norm() - (q.radius(i) + q.radius(j)))
}

/// Gradient of the plane pair distance. Errors on coincident centers, where
/// the direction is undefined.
pub fn distance_gradient(q: &Configuration, i: usize, j: usize) -> Result<PairGradient> {
    q.check_pair(i, j)?;
    let d = q.position(j) - q.position(i);
    let n = d.norm();
    if n == 0.0 {
        return Err(Error::CoincidentCenters { i, j });
    }
    Ok(PairGradient {
        i,
        j,
        direction: d * (1.0 / n),
    })
}

/// Wraps a point into the fundamental cell `[0, L) x [0, H)` and returns the
/// integer cell indices that were removed: `p = wrapped + (n_x L, n_y H)`.
pub fn wrap(p: Vec2, length: f64, height: f64) -> (Vec2, (i64, i64)) {
    let nx = (p.x / length).floor();
    let ny = (p.y / height).floor();
    (
        Vec2::new(p.x - nx * length, p.y - ny * height),
        (nx as i64, ny as i64),
    )
}

/// Result of a periodic pair-distance query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicDistance {
    /// Signed distance, `min` over periodic images.
    pub value: f64,
    /// Minimizing offsets `(h, k)` in `{0, 1}^2` applied to the wrapped
    /// difference vector; ties resolve to the lexicographically smallest.
    pub offsets: (u8, u8),
    /// True when another offset attains the minimum within tolerance; the
    /// distance is still valid, the gradient is one subgradient choice.
    pub degenerate: bool,
}

// Relative tolerance for declaring two candidate images equidistant.
const IMAGE_TIE_REL_TOL: f64 = 1e-12;

/// Signed pair distance on the torus: minimum over periodic images of `j`
/// relative to `i`. Equals the full minimum over all integer shifts.
pub fn periodic_signed_distance(
    q: &Configuration,
    i: usize,
    j: usize,
    domain: &DomainSpec,
) -> Result<PeriodicDistance> {
    let (length, height) = match *domain {
        DomainSpec::Torus { length, height } => (length, height),
        DomainSpec::Plane => {
            return Err(Error::InvalidDomain(
                "periodic distance requires a torus domain".into(),
            ))
        }
    };
    q.check_pair(i, j)?;
    // Wrapping the difference reduces the minimum over all integer shifts to
    // the four offsets (h, k) in {0, 1}^2: both wrapped components lie in
    // [0, L) x [0, H), so the nearest image is at shift 0 or -1 per axis.
    let (diff, _) = wrap(q.position(j) - q.position(i), length, height);
    let mut best = f64::INFINITY;
    let mut best_offsets = (0u8, 0u8);
    let mut second = f64::INFINITY;
    for h in 0..2u8 {
        for k in 0..2u8 {
            let cand = Vec2::new(diff.x - f64::from(h) * length, diff.y - f64::from(k) * height);
            let n = cand.norm();
            if n < best {
                second = best;
                best = n;
                best_offsets = (h, k);
            } else if n < second {
                second = n;
            }
        }
    }
    let scale = best.max(length.max(height) * 1e-3);
    let degenerate = (second - best) <= IMAGE_TIE_REL_TOL * scale;
    Ok(PeriodicDistance {
        value: best - (q.radius(i) + q.radius(j)),
        offsets: best_offsets,
        degenerate,
    })
}

/// Gradient of the periodic pair distance, built from the minimizing image.
/// When the minimizing image is degenerate this returns the subgradient for
/// the lexicographically smallest offset. Errors if the minimizing image has
/// zero length (coincident centers on the torus).
pub fn periodic_gradient(
    q: &Configuration,
    i: usize,
    j: usize,
    domain: &DomainSpec,
) -> Result<PairGradient> {
    let (length, height) = match *domain {
        DomainSpec::Torus { length, height } => (length, height),
        DomainSpec::Plane => {
            return Err(Error::InvalidDomain(
                "periodic gradient requires a torus domain".into(),
            ))
        }
    };
    let pd = periodic_signed_distance(q, i, j, domain)?;
    let (diff, _) = wrap(q.position(j) - q.position(i), length, height);
    let (h, k) = pd.offsets;
    let img = Vec2::new(
        diff.x - f64::from(h) * length,
        diff.y - f64::from(k) * height,
    );
    let n = img.norm();
    if n == 0.0 {
        return Err(Error::CoincidentCenters { i, j });
    }
    Ok(PairGradient {
        i,
        j,
        direction: img * (1.0 / n),
    })
}

/// Signed distance for the given domain.
pub fn domain_signed_distance(
    q: &Configuration,
    i: usize,
    j: usize,
    domain: &DomainSpec,
) -> Result<f64> {
    match domain {
        DomainSpec::Plane => signed_distance(q, i, j),
        DomainSpec::Torus { .. } => Ok(periodic_signed_distance(q, i, j, domain)?.value),
    }
}

/// Distance gradient for the given domain.
pub fn domain_distance_gradient(
    q: &Configuration,
    i: usize,
    j: usize,
    domain: &DomainSpec,
) -> Result<PairGradient> {
    match domain {
        DomainSpec::Plane => distance_gradient(q, i, j),
        DomainSpec::Torus { .. } => periodic_gradient(q, i, j, domain),
    }
}

/// Minimum signed distance over all pairs; `+inf` for a single particle.
pub fn min_signed_distance(q: &Configuration, domain: &DomainSpec) -> Result<f64> {
    let mut min = f64::INFINITY;
    for i in 0..q.len() {
        for j in (i + 1)..q.len() {
            min = min.min(domain_signed_distance(q, i, j, domain)?);
        }
    }
    Ok(min)
}

/// True when every pair has signed distance at least `-tol`.
pub fn is_feasible(q: &Configuration, domain: &DomainSpec, tol: f64) -> Result<bool> {
    Ok(min_signed_distance(q, domain)? >= -tol)
}

/// Prox-regularity constant of the non-overlap set for `n_p` disks whose
/// contact graphs never exceed `n_n` neighbors per disk:
///
/// `eta = 1/(n_p n_n) * (min(sin(pi/(n_n+1)), sin(2 pi/n_p)) / (2 sqrt(n_n)))^{n_p} * min_{i != j}(r_i + r_j)`.
///
/// Uniform prox-regularity holds whenever the constant is positive; it
/// degenerates to zero for `n_p = 2, n_n = 1` because `sin(pi) = 0`.
pub fn prox_regularity_eta(n_p: usize, n_n: usize, radii: &[f64]) -> Result<f64> {
    if n_p < 2 {
        return Err(Error::InvalidInput(format!(
            "prox-regularity constant needs at least two disks, got {n_p}"
        )));
    }
    if n_n == 0 || n_n >= n_p {
        return Err(Error::InvalidInput(format!(
            "neighbor count must satisfy 1 <= n_n < n_p, got n_n = {n_n}, n_p = {n_p}"
        )));
    }
    if radii.len() != n_p {
        return Err(Error::InvalidInput(format!(
            "expected {n_p} radii, got {}",
            radii.len()
        )));
    }
    if radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidInput("radii must be positive".into()));
    }
    let mut sorted = radii.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min_pair_radius = sorted[0] + sorted[1];

    let np = n_p as f64;
    let nn = n_n as f64;
    let s = (std::f64::consts::PI / (nn + 1.0))
        .sin()
        .min((2.0 * std::f64::consts::PI / np).sin());
    let ratio = s / (2.0 * nn.sqrt());
    Ok(ratio.powi(n_p as i32) / (np * nn) * min_pair_radius)
}

/// Broad-phase candidate pairs: a superset of all pairs whose signed
/// distance is below `cutoff`, sorted lexicographically. Uses a uniform cell
/// grid keyed on wrapped (torus) or raw (plane) coordinates; falls back to
/// all pairs when the grid would be too coarse to prune anything.
pub fn pairs_within(
    q: &Configuration,
    domain: &DomainSpec,
    cutoff: f64,
) -> Result<Vec<(usize, usize)>> {
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "cutoff must be positive and finite, got {cutoff}"
        )));
    }
    let n = q.len();
    let all_pairs = || {
        let mut v = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                v.push((i, j));
            }
        }
        v
    };
    if n < 2 {
        return Ok(Vec::new());
    }
    // Centers within reach of each other can have signed distance < cutoff.
    let reach = cutoff + 2.0 * q.max_radius();

    match *domain {
        DomainSpec::Plane => {
            if n < 16 {
                return Ok(all_pairs());
            }
            let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
            for (idx, p) in q.positions().iter().enumerate() {
                let key = ((p.x / reach).floor() as i64, (p.y / reach).floor() as i64);
                cells.entry(key).or_default().push(idx);
            }
            let mut pairs = Vec::new();
            for (&(cx, cy), members) in &cells {
                for dx in -1..=1i64 {
                    for dy in -1..=1i64 {
                        if let Some(other) = cells.get(&(cx + dx, cy + dy)) {
                            gather_pairs(q, members, other, reach, &mut pairs, |a, b| a - b);
                        }
                    }
                }
            }
            pairs.sort_unstable();
            pairs.dedup();
            Ok(pairs)
        }
        DomainSpec::Torus { length, height } => {
            domain.validate_for(q)?;
            let nx = (length / reach).floor() as i64;
            let ny = (height / reach).floor() as i64;
            if nx < 3 || ny < 3 || n < 16 {
                return Ok(all_pairs());
            }
            let (csx, csy) = (length / nx as f64, height / ny as f64);
            let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
            for (idx, p) in q.positions().iter().enumerate() {
                let (w, _) = wrap(*p, length, height);
                let key = (
                    ((w.x / csx).floor() as i64).min(nx - 1),
                    ((w.y / csy).floor() as i64).min(ny - 1),
                );
                cells.entry(key).or_default().push(idx);
            }
            let mut pairs = Vec::new();
            let min_image = move |a: Vec2, b: Vec2| {
                let (d, _) = wrap(a - b, length, height);
                let dx = d.x.min(length - d.x);
                let dy = d.y.min(height - d.y);
                Vec2::new(dx, dy)
            };
            for (&(cx, cy), members) in &cells {
                for dx in -1..=1i64 {
                    for dy in -1..=1i64 {
                        let key = ((cx + dx).rem_euclid(nx), (cy + dy).rem_euclid(ny));
                        if let Some(other) = cells.get(&key) {
                            gather_pairs(q, members, other, reach, &mut pairs, min_image);
                        }
                    }
                }
            }
            pairs.sort_unstable();
            pairs.dedup();
            Ok(pairs)
        }
    }
}

fn gather_pairs<F>(
    q: &Configuration,
    a: &[usize],
    b: &[usize],
    reach: f64,
    out: &mut Vec<(usize, usize)>,
    diff: F,
) where
    F: Fn(Vec2, Vec2) -> Vec2,
{
    for &i in a {
        for &j in b {
            if i < j && diff(q.position(i), q.position(j)).norm() < reach {
                out.push((i, j));
            }
        }
    }
}
