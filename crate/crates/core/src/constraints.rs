//! Interior convex approximation of the non-overlap set at a reference
//! configuration: affine constraints, active sets, the exterior penalty
//! functional, and the chained multiplier bound.
//!
//! Each retained pair `(i, j)` contributes
//!
//! `phi_ij(q) = -D_ij(qref) - e_ij . ((q_j - q_i) - (qref_j - qref_i))`
//!
//! and `K(qref) = {q : phi(q) <= 0}` is a convex polytope containing `qref`
//! and contained in the true feasible set: the plane through the contact
//! point supports the complement of each disk, so `D_ij(q) >= -phi_ij(q)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{
    self, Configuration, DomainSpec, PairGradient, Vec2,
};

/// Default band for treating reference distances and constraint values as
/// zero. Matches the solvers' feasibility tolerance: the scheme keeps
/// iterates feasible only up to arithmetic.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-9;

/// Default active-set tolerance.
pub const DEFAULT_ACTIVE_TOL: f64 = 1e-9;

/// How `linearize_with` treats negative reference distances.
///
/// Strict mode rejects any overlap. Tolerate mode keeps distances in
/// `[-tol, 0)` with their signed value — solver iterates and restarts from
/// stored states carry residual overlap at the feasibility tolerance — and
/// still rejects anything beyond the band. Keeping the sign matters: the
/// linearized constraint then reads `e . w >= overlap`, so the next step
/// pushes the pair back out and overlap never accumulates across steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InfeasiblePolicy {
    Strict,
    Tolerate { tol: f64 },
}

impl Default for InfeasiblePolicy {
    fn default() -> Self {
        InfeasiblePolicy::Tolerate {
            tol: DEFAULT_FEASIBILITY_TOL,
        }
    }
}

/// One linearized pair constraint.
#[derive(Clone, Debug)]
pub struct PairConstraint {
    /// Unit contact direction at the reference configuration, with the pair
    /// indices embedded.
    pub gradient: PairGradient,
    /// Signed distance at the reference configuration; negative (within the
    /// policy band) when the reference itself carries residual overlap.
    pub ref_distance: f64,
}

impl PairConstraint {
    pub fn pair(&self) -> (usize, usize) {
        (self.gradient.i, self.gradient.j)
    }
}

/// The affine constraint system describing `K(qref)`.
///
/// Immutable after construction; evaluation methods take the query
/// configuration by slice and are safe to call concurrently.
#[derive(Clone, Debug)]
pub struct ConstraintEval {
    reference: Vec<Vec2>,
    pairs: Vec<PairConstraint>,
    n_particles: usize,
}

/// Indices (into `ConstraintEval::pairs`) of constraints active at a query
/// point, in lexicographic pair order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActiveSet {
    indices: Vec<usize>,
}

impl ActiveSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }
}

/// Linearizes all pair constraints at `qref` with the default policy
/// (overlap tolerated up to 1e-9) and no pruning.
pub fn linearize(qref: &Configuration, domain: &DomainSpec) -> Result<ConstraintEval> {
    linearize_with(qref, domain, InfeasiblePolicy::default(), None)
}

/// Linearizes the pair constraints at `qref`.
///
/// `prune_cutoff` drops pairs whose reference distance exceeds the cutoff;
/// their constraints cannot activate within a step of that size. `None`
/// keeps every pair.
pub fn linearize_with(
    qref: &Configuration,
    domain: &DomainSpec,
    policy: InfeasiblePolicy,
    prune_cutoff: Option<f64>,
) -> Result<ConstraintEval> {
    domain.validate_for(qref)?;
    let candidates = match prune_cutoff {
        Some(cutoff) => geometry::pairs_within(qref, domain, cutoff)?,
        None => {
            let n = qref.len();
            let mut v = Vec::with_capacity(n.saturating_sub(1) * n / 2);
            for i in 0..n {
                for j in (i + 1)..n {
                    v.push((i, j));
                }
            }
            v
        }
    };

    let mut pairs = Vec::with_capacity(candidates.len());
    for (i, j) in candidates {
        let d = geometry::domain_signed_distance(qref, i, j, domain)?;
        if let Some(cutoff) = prune_cutoff {
            // The broad phase returns a superset; enforce the cutoff exactly.
            if d > cutoff {
                continue;
            }
        }
        let ref_distance = if d >= 0.0 {
            d
        } else {
            match policy {
                InfeasiblePolicy::Strict => {
                    return Err(Error::InfeasibleReference { i, j, distance: d })
                }
                InfeasiblePolicy::Tolerate { tol } => {
                    if d < -tol {
                        return Err(Error::InfeasibleReference { i, j, distance: d });
                    }
                    d
                }
            }
        };
        let gradient = geometry::domain_distance_gradient(qref, i, j, domain)?;
        pairs.push(PairConstraint {
            gradient,
            ref_distance,
        });
    }
    // pairs_within returns sorted pairs and the dense loop generates them in
    // order, so lexicographic ordering holds by construction.
    Ok(ConstraintEval {
        reference: qref.positions().to_vec(),
        pairs,
        n_particles: qref.len(),
    })
}

impl ConstraintEval {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn pairs(&self) -> &[PairConstraint] {
        &self.pairs
    }

    /// Reference positions the constraints were linearized at.
    pub fn reference(&self) -> &[Vec2] {
        &self.reference
    }

    /// `phi_k(q)` for one constraint.
    pub fn value_at(&self, k: usize, q: &[Vec2]) -> f64 {
        debug_assert_eq!(q.len(), self.n_particles);
        let c = &self.pairs[k];
        let g = &c.gradient;
        let rel = (q[g.j] - q[g.i]) - (self.reference[g.j] - self.reference[g.i]);
        -c.ref_distance - g.direction.dot(rel)
    }

    /// All constraint values at `q`, in lexicographic pair order.
    pub fn evaluate(&self, q: &[Vec2]) -> Vec<f64> {
        let mut out = Vec::new();
        self.evaluate_into(q, &mut out);
        out
    }

    pub fn evaluate_into(&self, q: &[Vec2], out: &mut Vec<f64>) {
        assert_eq!(q.len(), self.n_particles, "configuration size mismatch");
        out.clear();
        out.extend(self.pairs.iter().enumerate().map(|(k, _)| self.value_at(k, q)));
    }

    /// Constraint values in the displacement frame `w = q - qref`:
    /// `phi_k = -d_k - e_k . (w_j - w_i)`. Avoids the reference subtraction
    /// and its rounding when the caller already works in displacements.
    pub fn evaluate_displacement_into(&self, w: &[Vec2], out: &mut Vec<f64>) {
        assert_eq!(w.len(), self.n_particles, "displacement size mismatch");
        out.clear();
        out.extend(
            self.pairs
                .iter()
                .map(|c| -c.ref_distance - c.gradient.apply(w)),
        );
    }

    /// Pairs with `phi >= -tol` at `q`: touching or violating the
    /// linearized boundary.
    pub fn active_set(&self, q: &[Vec2], tol: f64) -> ActiveSet {
        assert!(tol >= 0.0, "active-set tolerance must be nonnegative");
        let indices = (0..self.pairs.len())
            .filter(|&k| self.value_at(k, q) >= -tol)
            .collect();
        ActiveSet { indices }
    }

    /// Exterior penalty `1/2 sum max(phi_k, 0)^2`.
    pub fn penalty_value(&self, q: &[Vec2]) -> f64 {
        (0..self.pairs.len())
            .map(|k| {
                let v = self.value_at(k, q).max(0.0);
                0.5 * v * v
            })
            .sum()
    }

    /// Gradient of the penalty: `sum max(phi_k, 0) * grad phi_k` where
    /// `grad phi_k` embeds `+e` at slot `i` and `-e` at slot `j`.
    pub fn penalty_gradient(&self, q: &[Vec2]) -> Vec<Vec2> {
        let mut out = vec![Vec2::ZERO; self.n_particles];
        self.penalty_gradient_accumulate(q, &mut out);
        out
    }

    /// Adds the penalty gradient to `out`.
    pub fn penalty_gradient_accumulate(&self, q: &[Vec2], out: &mut [Vec2]) {
        assert_eq!(out.len(), self.n_particles, "gradient size mismatch");
        for (k, c) in self.pairs.iter().enumerate() {
            let v = self.value_at(k, q);
            if v > 0.0 {
                // grad phi = -G, and scatter applies the G embedding.
                c.gradient.scatter(-v, out);
            }
        }
    }
}

/// Chained a-priori multiplier bound `|U| * b^{N_p}` with
/// `b = 2 sqrt(n_v) / min(sin(pi/(n_v+1)), sin(pi/N))`, where `n_v` is the
/// maximal number of simultaneous contacts per particle and `N >= 3` a
/// contact-chain length parameter. Diagnostic only; the returned value is a
/// ceiling certified multipliers are checked against, never enforced.
pub fn multiplier_bound(u_norm: f64, n_v: usize, n_chain: usize, n_p: usize) -> f64 {
    assert!(n_v >= 1, "need at least one contact per particle");
    assert!(n_chain >= 3, "chain parameter must be at least 3");
    assert!(u_norm >= 0.0, "force magnitude must be nonnegative");
    let nv = n_v as f64;
    let s = (PI / (nv + 1.0)).sin().min((PI / n_chain as f64).sin());
    let b = 2.0 * nv.sqrt() / s;
    u_norm * b.powi(n_p as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::Rng;

    fn two_disks(x1: f64, x2: f64) -> Configuration {
        Configuration::new(
            vec![Vec2::new(x1, 0.0), Vec2::new(x2, 0.0)],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn values_at_reference_are_negated_distances() {
        // D_01 = 1 at the reference.
        let q = two_disks(0.0, 3.0);
        let ce = linearize(&q, &DomainSpec::Plane).unwrap();
        assert_eq!(ce.len(), 1);
        let vals = ce.evaluate(q.positions());
        assert_abs_diff_eq!(vals[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ce.pairs()[0].ref_distance, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn tangent_pair_is_active_at_reference() {
        let q = two_disks(0.0, 2.0);
        let ce = linearize(&q, &DomainSpec::Plane).unwrap();
        let vals = ce.evaluate(q.positions());
        assert_abs_diff_eq!(vals[0], 0.0, epsilon = 1e-15);
        let active = ce.active_set(q.positions(), DEFAULT_ACTIVE_TOL);
        assert_eq!(active.indices(), &[0]);
        assert!(active.contains(0));
    }

    #[test]
    fn affine_evaluation_moves_with_the_gap() {
        // Moving disk 1 half a unit toward disk 0 raises phi by 0.5.
        let q = two_disks(0.0, 3.0);
        let ce = linearize(&q, &DomainSpec::Plane).unwrap();
        let moved = vec![Vec2::new(0.0, 0.0), Vec2::new(2.5, 0.0)];
        assert_abs_diff_eq!(ce.evaluate(&moved)[0], -0.5, epsilon = 1e-15);
        // And the overlapping point is positive.
        let overlapping = vec![Vec2::new(0.0, 0.0), Vec2::new(1.7, 0.0)];
        assert_abs_diff_eq!(ce.evaluate(&overlapping)[0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn single_particle_has_no_constraints() {
        let q = Configuration::new(vec![Vec2::new(0.0, 0.0)], vec![1.0]).unwrap();
        let ce = linearize(&q, &DomainSpec::Plane).unwrap();
        assert!(ce.is_empty());
        assert!(ce.evaluate(q.positions()).is_empty());
    }

    #[test]
    fn evaluation_matches_direct_formula_recomputation() {
        let mut rng = crate::rng::stream(11, 0);
        for _ in 0..50 {
            let n = rng.gen_range(2..6);
            let positions: Vec<Vec2> = (0..n)
                .map(|_| Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                .collect();
            let radii: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.3)).collect();
            let qref = match Configuration::new(positions, radii) {
                Ok(c) if geometry::min_signed_distance(&c, &DomainSpec::Plane).unwrap() > 0.0 => c,
                _ => continue,
            };
            let ce = linearize(&qref, &DomainSpec::Plane).unwrap();
            let q: Vec<Vec2> = (0..n)
                .map(|_| Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                .collect();
            let vals = ce.evaluate(&q);
            for (k, c) in ce.pairs().iter().enumerate() {
                let (i, j) = c.pair();
                let e = c.gradient.direction;
                let expected = -c.ref_distance
                    - (e.dot(q[j] - q[i]) - e.dot(qref.position(j) - qref.position(i)));
                assert_relative_eq!(vals[k], expected, max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn strict_mode_rejects_any_overlap_and_tolerate_keeps_the_band_signed() {
        let q = two_disks(0.0, 2.0 - 1e-10);
        match linearize_with(&q, &DomainSpec::Plane, InfeasiblePolicy::Strict, None) {
            Err(Error::InfeasibleReference { i: 0, j: 1, .. }) => {}
            other => panic!("expected strict rejection, got {other:?}"),
        }
        // The sign survives, so the zero displacement is flagged infeasible
        // and a feasible step must open the gap back up.
        let ce = linearize(&q, &DomainSpec::Plane).unwrap();
        assert!(ce.pairs()[0].ref_distance < 0.0);
        assert_abs_diff_eq!(ce.pairs()[0].ref_distance, -1e-10, epsilon = 1e-12);
        let w = vec![Vec2::ZERO; 2];
        let mut phi = vec![0.0];
        ce.evaluate_displacement_into(&w, &mut phi);
        assert!(phi[0] > 0.0);
        // Beyond the band both modes reject.
        let bad = two_disks(0.0, 1.9);
        assert!(linearize(&bad, &DomainSpec::Plane).is_err());
        assert!(linearize_with(
            &bad,
            &DomainSpec::Plane,
            InfeasiblePolicy::Tolerate { tol: 0.2 },
            None
        )
        .is_ok());
    }

    #[test]
    fn pruning_drops_far_pairs_only() {
        let positions = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.1, 0.0),
            Vec2::new(40.0, 0.0),
        ];
        let q = Configuration::new(positions, vec![1.0; 3]).unwrap();
        let ce = linearize_with(
            &q,
            &DomainSpec::Plane,
            InfeasiblePolicy::default(),
            Some(1.0),
        )
        .unwrap();
        let kept: Vec<_> = ce.pairs().iter().map(|c| c.pair()).collect();
        assert_eq!(kept, vec![(0, 1)]);
        // Without a cutoff all three pairs appear, lexicographically.
        let full = linearize(&q, &DomainSpec::Plane).unwrap();
        let all: Vec<_> = full.pairs().iter().map(|c| c.pair()).collect();
        assert_eq!(all, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn torus_linearization_uses_the_wrapped_image() {
        // Tangency across the x boundary: (1,0) and (9,0) with unit radii on
        // a 10x10 torus touch through the seam.
        let q = Configuration::new(
            vec![Vec2::new(1.0, 0.0), Vec2::new(9.0, 0.0)],
            vec![1.0, 1.0],
        )
        .unwrap();
        let domain = DomainSpec::torus(10.0, 10.0).unwrap();
        let ce = linearize(&q, &domain).unwrap();
        assert_abs_diff_eq!(ce.pairs()[0].ref_distance, 0.0, epsilon = 1e-12);
        // Wrapped contact direction points from disk 0 across the seam.
        let e = ce.pairs()[0].gradient.direction;
        assert_abs_diff_eq!(e.x, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.y, 0.0, epsilon = 1e-12);
        // Moving disk 1 toward the seam (increasing x) pushes it into disk
        // 0's periodic image and violates the linearized constraint.
        let toward = vec![Vec2::new(1.0, 0.0), Vec2::new(9.3, 0.0)];
        assert_abs_diff_eq!(ce.evaluate(&toward)[0], 0.3, epsilon = 1e-12);
        // The opposite motion opens the wrapped gap.
        let away = vec![Vec2::new(1.0, 0.0), Vec2::new(8.7, 0.0)];
        assert_abs_diff_eq!(ce.evaluate(&away)[0], -0.3, epsilon = 1e-12);
    }

    #[test]
    fn penalty_matches_hand_values() {
        // Reference gap 1; q places the pair 0.3 into the linearized overlap,
        // so phi = 0.3 and the penalty is 0.045. A second well-separated pair
        // contributes phi = -1 and nothing to the penalty.
        let positions = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(3.0, 0.0),
            Vec2::new(0.0, 50.0),
        ];
        let q = Configuration::new(positions.clone(), vec![1.0, 1.0, 1.0]).unwrap();
        let ce = linearize(&q, &DomainSpec::Plane).unwrap();
        let probe = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.7, 0.0),
            Vec2::new(0.0, 51.0),
        ];
        let vals = ce.evaluate(&probe);
        assert_abs_diff_eq!(vals[0], 0.3, epsilon = 1e-12);
        assert!(vals[1] < 0.0 && vals[2] < 0.0);
        assert_abs_diff_eq!(ce.penalty_value(&probe), 0.045, epsilon = 1e-12);
        // Feasible point: zero value, zero gradient.
        assert_eq!(ce.penalty_value(q.positions()), 0.0);
        assert!(ce
            .penalty_gradient(q.positions())
            .iter()
            .all(|g| g.norm() == 0.0));
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = crate::rng::stream(12, 0);
        let q = Configuration::new(
            vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(2.5, 0.1),
                Vec2::new(1.0, 2.2),
            ],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        let ce = linearize(&q, &DomainSpec::Plane).unwrap();
        for _ in 0..20 {
            let probe: Vec<Vec2> = q
                .positions()
                .iter()
                .map(|p| Vec2::new(p.x + rng.gen_range(-1.0..1.0), p.y + rng.gen_range(-1.0..1.0)))
                .collect();
            // Skip probes sitting on the max kink where the FD stencil is
            // one-sided.
            if ce.evaluate(&probe).iter().any(|v| v.abs() < 1e-4) {
                continue;
            }
            let grad = ce.penalty_gradient(&probe);
            let h = 1e-6;
            for p in 0..probe.len() {
                for axis in 0..2 {
                    let mut plus = probe.clone();
                    let mut minus = probe.clone();
                    if axis == 0 {
                        plus[p].x += h;
                        minus[p].x -= h;
                    } else {
                        plus[p].y += h;
                        minus[p].y -= h;
                    }
                    let fd = (ce.penalty_value(&plus) - ce.penalty_value(&minus)) / (2.0 * h);
                    let g = if axis == 0 { grad[p].x } else { grad[p].y };
                    assert_abs_diff_eq!(g, fd, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn penalty_zero_iff_all_constraints_hold() {
        let q = two_disks(0.0, 3.0);
        let ce = linearize(&q, &DomainSpec::Plane).unwrap();
        let mut rng = crate::rng::stream(13, 0);
        for _ in 0..200 {
            let probe = vec![
                Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
            ];
            let feasible = ce.evaluate(&probe).iter().all(|&v| v <= 0.0);
            assert_eq!(ce.penalty_value(&probe) == 0.0, feasible);
        }
    }

    #[test]
    fn multiplier_bound_examples() {
        assert_eq!(multiplier_bound(0.0, 1, 4, 2), 0.0);
        // n_v = 1, N = 4: b = 2/sin(pi/4) = 2 sqrt(2), so b^2 = 8.
        assert_relative_eq!(multiplier_bound(1.0, 1, 4, 2), 8.0, max_relative = 1e-12);
        assert_relative_eq!(multiplier_bound(2.5, 1, 4, 2), 20.0, max_relative = 1e-12);
        // b >= 2 always: numerator >= 2, denominator <= 1.
        for n_v in 1..6 {
            for n_chain in 3..8 {
                let b = multiplier_bound(1.0, n_v, n_chain, 1);
                assert!(b >= 2.0 - 1e-12, "b = {b} for n_v={n_v}, N={n_chain}");
            }
        }
    }

    proptest! {
        // phi(q + s w) - phi(q) = -s G.w independently of q: affinity.
        #[test]
        fn prop_affinity(
            s in -3.0f64..3.0,
            qx in -2.0f64..2.0,
            qy in -2.0f64..2.0,
            wx in -1.0f64..1.0,
            wy in -1.0f64..1.0,
        ) {
            let base = two_disks(0.0, 3.0);
            let ce = linearize(&base, &DomainSpec::Plane).unwrap();
            let q = vec![Vec2::new(qx, qy), Vec2::new(qx + 2.0, qy - 1.0)];
            let w = vec![Vec2::new(wx, wy), Vec2::new(-wy, wx)];
            let shifted: Vec<Vec2> = q.iter().zip(&w).map(|(a, b)| *a + *b * s).collect();
            let g = &ce.pairs()[0].gradient;
            let expected = ce.evaluate(&q)[0] - s * g.apply(&w);
            prop_assert!((ce.evaluate(&shifted)[0] - expected).abs() < 1e-10);
        }

        // Midpoint convexity of the penalty.
        #[test]
        fn prop_penalty_convex(
            ax in -3.0f64..3.0, ay in -3.0f64..3.0,
            bx in -3.0f64..3.0, by in -3.0f64..3.0,
        ) {
            let base = two_disks(0.0, 2.5);
            let ce = linearize(&base, &DomainSpec::Plane).unwrap();
            let qa = vec![Vec2::new(ax, ay), Vec2::new(bx, by)];
            let qb = vec![Vec2::new(by, ax), Vec2::new(ay, bx)];
            let mid: Vec<Vec2> = qa.iter().zip(&qb).map(|(a, b)| (*a + *b) * 0.5).collect();
            let lhs = ce.penalty_value(&mid);
            let rhs = 0.5 * (ce.penalty_value(&qa) + ce.penalty_value(&qb));
            prop_assert!(lhs <= rhs + 1e-12);
        }

        // The reference point always belongs to K(qref).
        #[test]
        fn prop_reference_in_k(gap in 0.0f64..4.0) {
            let q = two_disks(0.0, 2.0 + gap);
            let ce = linearize(&q, &DomainSpec::Plane).unwrap();
            prop_assert!(ce.evaluate(q.positions()).iter().all(|&v| v <= 1e-15));
            prop_assert_eq!(ce.penalty_value(q.positions()), 0.0);
        }
    }
}
