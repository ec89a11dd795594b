//! Analytic propagation of Gaussian state statistics through LTV dynamics
//! and closed-form expected costs.

mod chi2;

pub use chi2::{chi2_cdf, chi2_sf, gamma_pq, ln_gamma, noncentral_chi2_mean};

use nalgebra::{DMatrix, DVector};

use crate::costs::{closest_vertex, point_in_obstacle, CostSpec};
use crate::dynamics::{Dynamics, LtvModel};
use crate::error::{Error, Result};
use crate::linalg::{clamp_small_eigenvalues, is_symmetric, lambda_min, sym_eigen, sym_sqrt};

/// Mean and covariance of a Gaussian state distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.shape() != (n, n) {
            return Err(Error::dim(format!("covariance {:?} for mean of length {n}", cov.shape())));
        }
        if !is_symmetric(&cov, 1e-9) {
            return Err(Error::invalid("covariance must be symmetric"));
        }
        if n > 0 && lambda_min(&cov) < -1e-9 {
            return Err(Error::invalid("covariance must be positive semi-definite"));
        }
        Ok(Self { mean, cov })
    }

    pub fn point(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self { mean, cov: DMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal over the listed coordinates.
    pub fn marginal(&self, coords: &[usize]) -> Result<Self> {
        if let Some(&bad) = coords.iter().find(|&&i| i >= self.dim()) {
            return Err(Error::dim(format!("coordinate {bad} outside state dimension {}", self.dim())));
        }
        let k = coords.len();
        Ok(Self {
            mean: DVector::from_iterator(k, coords.iter().map(|&i| self.mean[i])),
            cov: DMatrix::from_fn(k, k, |r, c| self.cov[(coords[r], coords[c])]),
        })
    }
}

/// Beliefs `t = 0 … T`, starting from a point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTrajectory {
    pub beliefs: Vec<GaussianBelief>,
}

impl BeliefTrajectory {
    pub fn horizon(&self) -> usize {
        self.beliefs.len() - 1
    }
}

/// `x̂ₜ₊₁ = Aₜx̂ₜ + Bₜuₜ`, `Pₜ₊₁ = AₜPₜAₜᵀ + BₜBₜᵀ`, `P₀ = 0`.
pub fn propagate_moments(model: &LtvModel, nominal: &[DVector<f64>], x0: &DVector<f64>) -> Result<BeliefTrajectory> {
    propagate_moments_with_gain(model, nominal, x0, 1.0)
}

/// As [`propagate_moments`] with the control-channel noise scaled by
/// `noise_gain` (so `BBᵀ` becomes `g² BBᵀ`).
pub fn propagate_moments_with_gain(
    model: &LtvModel,
    nominal: &[DVector<f64>],
    x0: &DVector<f64>,
    noise_gain: f64,
) -> Result<BeliefTrajectory> {
    let (n, m, horizon) = (model.state_dim(), model.control_dim(), model.horizon());
    if nominal.len() != horizon {
        return Err(Error::dim(format!("nominal has {} steps, model horizon is {horizon}", nominal.len())));
    }
    if x0.len() != n {
        return Err(Error::dim(format!("x0 has {} entries, state dimension is {n}", x0.len())));
    }
    if let Some(t) = nominal.iter().position(|u| u.len() != m) {
        return Err(Error::dim(format!("nominal[{t}] has wrong length, control dimension is {m}")));
    }
    let g2 = noise_gain * noise_gain;
    let mut beliefs = Vec::with_capacity(horizon + 1);
    let mut mean = x0.clone();
    let mut cov = DMatrix::zeros(n, n);
    beliefs.push(GaussianBelief { mean: mean.clone(), cov: cov.clone() });
    for (t, u) in nominal.iter().enumerate() {
        let (a, b) = (model.a(t), model.b(t));
        mean = a * &mean + b * u;
        let next = a * &cov * a.transpose() + b * b.transpose() * g2;
        cov = (&next + next.transpose()) * 0.5;
        beliefs.push(GaussianBelief { mean: mean.clone(), cov: cov.clone() });
    }
    Ok(BeliefTrajectory { beliefs })
}

fn check_quadratic_inputs(belief: &GaussianBelief, q: &DMatrix<f64>, target: &DVector<f64>) -> Result<()> {
    let n = belief.dim();
    if q.shape() != (n, n) || target.len() != n {
        return Err(Error::dim(format!(
            "belief dimension {n}, Q {:?}, target length {}",
            q.shape(),
            target.len()
        )));
    }
    if !is_symmetric(q, 1e-9) || lambda_min(q) <= 0.0 {
        return Err(Error::invalid("Q must be symmetric positive definite"));
    }
    Ok(())
}

/// `trace(QP) + (x̂ − x_tgt)ᵀ Q (x̂ − x_tgt)`.
pub fn quadratic_cost_trace_identity(belief: &GaussianBelief, q: &DMatrix<f64>, target: &DVector<f64>) -> f64 {
    let d = &belief.mean - target;
    (q * &belief.cov).trace() + (d.transpose() * q * &d)[(0, 0)]
}

/// `E[(X − x_tgt)ᵀ Q (X − x_tgt)]` for `X ~ N(x̂, P)`.
///
/// Evaluated as `Σᵢ λᵢ (1 + μᵢ²)` where `λᵢ` are the eigenvalues of `VPV`
/// (`V = Q^{1/2}`) and `μ` is the whitened offset `Λ^{-1/2} Uᵀ V (x̂ − x_tgt)`
/// in that eigenbasis. When `VPV` is singular the whitening is undefined and
/// the trace identity is used instead.
pub fn expected_quadratic_cost(belief: &GaussianBelief, q: &DMatrix<f64>, target: &DVector<f64>) -> Result<f64> {
    check_quadratic_inputs(belief, q, target)?;
    let v = sym_sqrt(q);
    let shaped = &v * &belief.cov * &v;
    let (mut values, vectors) = sym_eigen(&shaped);
    if clamp_small_eigenvalues(&mut values) {
        return Ok(quadratic_cost_trace_identity(belief, q, target));
    }
    let offset = vectors.transpose() * (&v * (&belief.mean - target));
    let total = values
        .iter()
        .zip(offset.iter())
        .map(|(&lam, &o)| {
            let mu = o / lam.sqrt();
            noncentral_chi2_mean(1, mu * mu).map(|m| lam * m)
        })
        .sum::<Result<f64>>()?;
    Ok(total)
}

/// Probability of the conservative set
/// `{X : (X − x̂)ᵀ P⁻¹ (X − x̂) ≥ (c* − x̂)ᵀ P⁻¹ (c* − x̂)}` on the marginal
/// over `projection`, i.e. `1 − F_{χ²_d}` of the Mahalanobis radius of `c*`.
///
/// A singular marginal covariance is treated as a point mass at `x̂`: the
/// result is 1 when `c* = x̂` and 0 otherwise.
pub fn collision_probability(belief: &GaussianBelief, c_star: &[f64], projection: &[usize]) -> Result<f64> {
    if projection.is_empty() {
        return Err(Error::invalid("projection must select at least one coordinate"));
    }
    if c_star.len() != projection.len() {
        return Err(Error::dim(format!("c* has {} entries for {} projected coordinates", c_star.len(), projection.len())));
    }
    let marginal = belief.marginal(projection)?;
    let offset = DVector::from_column_slice(c_star) - &marginal.mean;
    let (values, vectors) = sym_eigen(&marginal.cov);
    let lmax = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let lmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    if lmin <= 1e-12 || lmin < crate::linalg::EIGEN_CLAMP_REL * lmax {
        return Ok(if offset.iter().all(|&o| o == 0.0) { 1.0 } else { 0.0 });
    }
    let rotated = vectors.transpose() * offset;
    let radius: f64 = rotated.iter().zip(values.iter()).map(|(r, l)| r * r / l).sum();
    chi2_sf(projection.len() as u32, radius)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedCostOptions {
    /// Add `ω_C · P{Cₜ}` per obstacle to the running cost.
    pub include_indicator: bool,
    /// Control-channel noise gain used for the covariance recursion.
    pub noise_gain: f64,
}

impl Default for ExpectedCostOptions {
    fn default() -> Self {
        Self { include_indicator: true, noise_gain: 1.0 }
    }
}

/// Components of `E[S]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedCost {
    pub running_quadratic: f64,
    pub running_indicator: f64,
    pub terminal: f64,
}

impl ExpectedCost {
    pub fn total(&self) -> f64 {
        self.running_quadratic + self.running_indicator + self.terminal
    }
}

/// `E[S] = Σ_{t<T} (E[quad_t] + ω_C P{Cₜ}) Δt + E[terminal]`, with `P{Cₜ} = 1`
/// while the mean itself is inside an obstacle.
pub fn expected_total_cost(
    model: &LtvModel,
    cost: &CostSpec,
    nominal: &[DVector<f64>],
    x0: &DVector<f64>,
) -> Result<f64> {
    Ok(expected_cost_breakdown(model, cost, nominal, x0, &ExpectedCostOptions::default())?.total())
}

pub fn expected_cost_breakdown(
    model: &LtvModel,
    cost: &CostSpec,
    nominal: &[DVector<f64>],
    x0: &DVector<f64>,
    opts: &ExpectedCostOptions,
) -> Result<ExpectedCost> {
    let traj = propagate_moments_with_gain(model, nominal, x0, opts.noise_gain)?;
    let horizon = traj.horizon();
    let mut quad = 0.0;
    let mut indicator = 0.0;
    for belief in &traj.beliefs[..horizon] {
        quad += expected_quadratic_cost(belief, &cost.q, &cost.target)?;
        if opts.include_indicator && cost.omega_c > 0.0 {
            for obs in &cost.obstacles {
                let p = if point_in_obstacle(belief.mean.as_slice(), obs) {
                    1.0
                } else {
                    let proj = obs.projection();
                    let vertex = closest_vertex(obs, obs.project(belief.mean.as_slice()));
                    collision_probability(belief, &vertex, &proj)?
                };
                indicator += cost.omega_c * p;
            }
        }
    }
    let terminal = expected_quadratic_cost(&traj.beliefs[horizon], &cost.q_terminal, &cost.target)?;
    Ok(ExpectedCost { running_quadratic: quad * cost.dt, running_indicator: indicator * cost.dt, terminal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::ConvexObstacle;
    use crate::dynamics::make_double_integrator;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn zeros(m: usize, t: usize) -> Vec<DVector<f64>> {
        vec![DVector::zeros(m); t]
    }

    #[test]
    fn identity_dynamics_accumulate_unit_covariance() {
        let model = LtvModel::time_invariant(DMatrix::identity(2, 2), DMatrix::identity(2, 2), 3).unwrap();
        let traj = propagate_moments(&model, &zeros(2, 3), &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(traj.beliefs.len(), 4);
        for (t, b) in traj.beliefs.iter().enumerate() {
            assert_eq!(b.mean, DVector::from_vec(vec![1.0, 1.0]));
            assert_eq!(b.cov, DMatrix::identity(2, 2) * t as f64);
        }
    }

    #[test]
    fn memoryless_system() {
        let model = LtvModel::time_invariant(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 4).unwrap();
        let traj = propagate_moments(&model, &zeros(2, 4), &DVector::from_vec(vec![3.0, -7.0])).unwrap();
        assert_eq!(traj.beliefs[0].cov, DMatrix::zeros(2, 2));
        for b in &traj.beliefs[1..] {
            assert_eq!(b.mean, DVector::zeros(2));
            assert_eq!(b.cov, DMatrix::identity(2, 2));
        }
    }

    #[test]
    fn double_integrator_velocity_variance_geometric_sum() {
        let model = make_double_integrator(0.5, 10).unwrap();
        let traj = propagate_moments(&model, &zeros(2, 10), &DVector::zeros(4)).unwrap();
        for (t, b) in traj.beliefs.iter().enumerate() {
            let expected: f64 = 0.01 * (0..t).map(|tau| 1.5f64.powi(2 * tau as i32)).sum::<f64>();
            assert_relative_eq!(b.cov[(2, 2)], expected, max_relative = 1e-12, epsilon = 1e-15);
            assert_relative_eq!(b.cov[(3, 3)], expected, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn propagate_rejects_mismatch() {
        let model = make_double_integrator(0.0, 3).unwrap();
        assert!(propagate_moments(&model, &zeros(2, 2), &DVector::zeros(4)).is_err());
        assert!(propagate_moments(&model, &zeros(2, 3), &DVector::zeros(3)).is_err());
        assert!(propagate_moments(&model, &zeros(1, 3), &DVector::zeros(4)).is_err());
    }

    #[test]
    fn quadratic_cost_examples() {
        for d in 1..5 {
            let b = GaussianBelief::new(DVector::zeros(d), DMatrix::identity(d, d)).unwrap();
            let v = expected_quadratic_cost(&b, &DMatrix::identity(d, d), &DVector::zeros(d)).unwrap();
            assert_relative_eq!(v, d as f64, epsilon = 1e-12);
        }
        let b = GaussianBelief::point(DVector::from_vec(vec![1.0, -2.0]));
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let d = DVector::from_vec(vec![1.0, -2.0]);
        let expected = (d.transpose() * &q * &d)[(0, 0)];
        assert_relative_eq!(expected_quadratic_cost(&b, &q, &DVector::zeros(2)).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_cost_matches_monte_carlo() {
        let b = GaussianBelief::new(DVector::from_vec(vec![1.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let exact = expected_quadratic_cost(&b, &DMatrix::identity(2, 2), &DVector::zeros(2)).unwrap();
        assert_relative_eq!(exact, 3.0, epsilon = 1e-12);
        let mut rng = rand::rngs::StdRng::seed_from_u64(17);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            acc += (1.0 + z0).powi(2) + z1 * z1;
        }
        assert!((acc / n as f64 - 3.0).abs() < 0.01);
    }

    #[test]
    fn quadratic_cost_rejects_non_pd_q() {
        let b = GaussianBelief::point(DVector::zeros(2));
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(expected_quadratic_cost(&b, &q, &DVector::zeros(2)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn collision_probability_examples() {
        let b = GaussianBelief::new(DVector::from_vec(vec![0.5, 0.5]), DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(collision_probability(&b, &[0.5, 0.5], &[0, 1]).unwrap(), 1.0, epsilon = 1e-15);
        let r = (2.0 * 2f64.ln()).sqrt();
        let p = collision_probability(&b, &[0.5 + r, 0.5], &[0, 1]).unwrap();
        assert_relative_eq!(p, 0.5, epsilon = 1e-12);
        assert!(collision_probability(&b, &[1e3, 0.0], &[0, 1]).unwrap() < 1e-300);
    }

    #[test]
    fn collision_probability_degenerate_is_point_mass() {
        let b = GaussianBelief::point(DVector::from_vec(vec![1.0, 2.0, 0.0, 0.0]));
        assert_eq!(collision_probability(&b, &[1.0, 2.0], &[0, 1]).unwrap(), 1.0);
        assert_eq!(collision_probability(&b, &[1.0, 2.5], &[0, 1]).unwrap(), 0.0);
        let mut cov = DMatrix::zeros(4, 4);
        cov[(0, 0)] = 1.0;
        let b = GaussianBelief::new(DVector::zeros(4), cov).unwrap();
        assert_eq!(collision_probability(&b, &[0.3, 0.0], &[0, 1]).unwrap(), 0.0);
        assert!(collision_probability(&b, &[0.3], &[0, 1]).is_err());
        assert!(collision_probability(&b, &[0.3, 0.0], &[0, 7]).is_err());
    }

    #[test]
    fn expected_total_cost_examples() {
        // deterministic at target
        let model = LtvModel::time_invariant(DMatrix::identity(2, 2), DMatrix::zeros(2, 2), 3).unwrap();
        let spec = CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0]), 0.1, 1.0, 0.0, vec![]).unwrap();
        let v = expected_total_cost(&model, &spec, &zeros(2, 3), &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(v, 0.0);

        // hand evaluation: running trace(P0)+trace(P1) = 0 + 2, terminal trace(P2) = 4
        let model = LtvModel::time_invariant(DMatrix::identity(2, 2), DMatrix::identity(2, 2), 2).unwrap();
        let spec = CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2), DVector::zeros(2), 1.0, 1.0, 0.0, vec![]).unwrap();
        let v = expected_total_cost(&model, &spec, &zeros(2, 2), &DVector::zeros(2)).unwrap();
        assert_relative_eq!(v, 6.0, epsilon = 1e-12);

        // Monte-Carlo cross-check of the same value
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let d: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let x1 = [d[0], d[1]];
            let x2 = [d[0] + d[2], d[1] + d[3]];
            acc += (x1[0] * x1[0] + x1[1] * x1[1]) + (x2[0] * x2[0] + x2[1] * x2[1]);
        }
        assert!((acc / n as f64 - 6.0).abs() < 0.05);
    }

    #[test]
    fn far_obstacle_contributes_nothing() {
        let model = make_double_integrator(0.0, 20).unwrap();
        let far = ConvexObstacle::rectangle((500.0, 501.0), (500.0, 501.0), 0.2, [0, 1]).unwrap();
        let spec = CostSpec::new(DMatrix::identity(4, 4), DMatrix::identity(4, 4), DVector::zeros(4), 0.1, 1.0, 100.0, vec![far]).unwrap();
        let parts = expected_cost_breakdown(&model, &spec, &zeros(2, 20), &DVector::zeros(4), &ExpectedCostOptions::default()).unwrap();
        assert!(parts.running_indicator < 1e-40);
        let near = ConvexObstacle::rectangle((0.0, 0.1), (0.0, 0.1), 0.0, [0, 1]).unwrap();
        let spec = CostSpec { obstacles: vec![near], ..spec };
        let parts = expected_cost_breakdown(&model, &spec, &zeros(2, 20), &DVector::zeros(4), &ExpectedCostOptions::default()).unwrap();
        // t = 0 is a point mass sitting on the vertex (0, 0)
        assert!(parts.running_indicator >= 100.0 * 0.1);
        let off = ExpectedCostOptions { include_indicator: false, ..Default::default() };
        let parts_off = expected_cost_breakdown(&model, &spec, &zeros(2, 20), &DVector::zeros(4), &off).unwrap();
        assert_eq!(parts_off.running_indicator, 0.0);
        assert_eq!(parts_off.running_quadratic, parts.running_quadratic);
    }

    #[test]
    fn mean_inside_obstacle_counts_fully() {
        let model = make_double_integrator(0.0, 5).unwrap();
        let big = ConvexObstacle::rectangle((-50.0, 50.0), (-50.0, 50.0), 0.0, [0, 1]).unwrap();
        let spec = CostSpec::new(DMatrix::identity(4, 4), DMatrix::identity(4, 4), DVector::zeros(4), 0.1, 1.0, 10.0, vec![big]).unwrap();
        let parts = expected_cost_breakdown(&model, &spec, &zeros(2, 5), &DVector::zeros(4), &ExpectedCostOptions::default()).unwrap();
        assert_relative_eq!(parts.running_indicator, 10.0 * 0.1 * 5.0, epsilon = 1e-12);
    }

    fn random_pd(n: usize, rng: &mut impl Rng, rank: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose()
    }

    #[test]
    fn eigen_route_equals_trace_identity() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.random_range(1..=5);
            let q = random_pd(n, &mut rng, n) + DMatrix::identity(n, n) * 0.05;
            let rank = rng.random_range(0..=n);
            let p = random_pd(n, &mut rng, rank);
            let mean = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let target = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let b = GaussianBelief::new(mean, p).unwrap();
            let eig = expected_quadratic_cost(&b, &q, &target).unwrap();
            let tr = quadratic_cost_trace_identity(&b, &q, &target);
            assert_relative_eq!(eig, tr, max_relative = 1e-8);
        }
    }

    proptest! {
        #[test]
        fn collision_probability_monotone_in_radius(r1 in 0.0..10.0f64, dr in 0.0..5.0f64, s in 0.1..3.0f64) {
            let b = GaussianBelief::new(DVector::zeros(2), DMatrix::identity(2, 2) * s).unwrap();
            let p1 = collision_probability(&b, &[r1, 0.0], &[0, 1]).unwrap();
            let p2 = collision_probability(&b, &[r1 + dr, 0.0], &[0, 1]).unwrap();
            prop_assert!(p2 <= p1 + 1e-15);
        }

        #[test]
        fn chi2_two_dof_closed_form(q in 0.0..50.0f64) {
            prop_assert!((chi2_cdf(2, q).unwrap() - (1.0 - (-q / 2.0).exp())).abs() <= 1e-12);
        }
    }
}
