//! Discrete-time stochastic systems and seeded rollout sampling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, mat_vec_into};
use crate::noise::{Domain, NoiseStream};

/// How a standard-normal draw δ enters the control channel.
///
/// `Folded` treats the model's input gain as the complete noise gain, so the
/// perturbation is δ itself. `Diffusion` follows the Euler–Maruyama
/// discretization, where the input gain already contains Δt and the
/// perturbation in control units is δ/√Δt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    Folded,
    Diffusion,
}

impl NoiseMode {
    pub fn control_gain(self, dt: f64) -> f64 {
        match self {
            NoiseMode::Folded => 1.0,
            NoiseMode::Diffusion => 1.0 / dt.sqrt(),
        }
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "folded" => Ok(NoiseMode::Folded),
            "diffusion" => Ok(NoiseMode::Diffusion),
            other => Err(format!("unknown delta mode `{other}` (expected folded|diffusion)")),
        }
    }
}

/// A single-step transition `(t, x, u, ε) → x'` where ε is the perturbation
/// already expressed in control units.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn step_into(&self, t: usize, x: &[f64], u: &[f64], perturbation: &[f64], out: &mut [f64]);
}

/// `x_{t+1} = A_t x_t + B_t (u_t + δ_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvModel {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
}

impl LtvModel {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::invalid("LTV model horizon must be at least 1"));
        }
        if a.len() != b.len() {
            return Err(Error::dim(format!("{} A matrices but {} B matrices", a.len(), b.len())));
        }
        let n = a[0].nrows();
        let m = b[0].ncols();
        for (t, (at, bt)) in a.iter().zip(&b).enumerate() {
            if at.shape() != (n, n) {
                return Err(Error::dim(format!("A[{t}] is {:?}, expected ({n}, {n})", at.shape())));
            }
            if bt.shape() != (n, m) {
                return Err(Error::dim(format!("B[{t}] is {:?}, expected ({n}, {m})", bt.shape())));
            }
            if !all_finite(at) || !all_finite(bt) {
                return Err(Error::invalid(format!("non-finite entries at step {t}")));
            }
        }
        Ok(Self { a, b })
    }

    pub fn time_invariant(a: DMatrix<f64>, b: DMatrix<f64>, horizon: usize) -> Result<Self> {
        Self::new(vec![a; horizon], vec![b; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self, t: usize) -> &DMatrix<f64> {
        &self.a[t]
    }

    pub fn b(&self, t: usize) -> &DMatrix<f64> {
        &self.b[t]
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        Self::time_invariant(self.a[0].clone(), self.b[0].clone(), horizon)
    }

    /// Checked single step `A_t x + B_t (u + δ)`.
    pub fn step(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>, delta: &DVector<f64>) -> Result<DVector<f64>> {
        if t >= self.horizon() {
            return Err(Error::invalid(format!("step index {t} outside horizon {}", self.horizon())));
        }
        let (n, m) = (self.state_dim(), self.control_dim());
        if x.len() != n || u.len() != m || delta.len() != m {
            return Err(Error::dim(format!(
                "expected state {n}, control {m}; got x {}, u {}, δ {}",
                x.len(),
                u.len(),
                delta.len()
            )));
        }
        Ok(&self.a[t] * x + &self.b[t] * (u + delta))
    }
}

impl Dynamics for LtvModel {
    fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    fn control_dim(&self) -> usize {
        self.b[0].ncols()
    }

    /// Steps past the horizon reuse the last matrices.
    fn step_into(&self, t: usize, x: &[f64], u: &[f64], perturbation: &[f64], out: &mut [f64]) {
        let t = t.min(self.horizon() - 1);
        mat_vec_into(&self.a[t], x, out);
        let b = &self.b[t];
        for j in 0..u.len() {
            let uj = u[j] + perturbation[j];
            if uj == 0.0 {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += b[(i, j)] * uj;
            }
        }
    }
}

/// Planar double integrator with velocity damping/excitation `1 + a`.
pub fn make_double_integrator(a: f64, horizon: usize) -> Result<LtvModel> {
    if !(-0.5..=0.5).contains(&a) {
        return Err(Error::invalid(format!("stability parameter a = {a} outside [-0.5, 0.5]")));
    }
    let am = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, 0.1, 0.0, //
            0.0, 1.0, 0.0, 0.1, //
            0.0, 0.0, 1.0 + a, 0.0, //
            0.0, 0.0, 0.0, 1.0 + a,
        ],
    );
    let bm = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.1]);
    LtvModel::time_invariant(am, bm, horizon)
}

/// Kinematic simple car with state `(pˣ, pʸ, θ, φ)` and input `(v, ω)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpleCar {
    pub wheelbase: f64,
    pub dt: f64,
    pub steer_limits: (f64, f64),
}

impl SimpleCar {
    pub fn new(wheelbase: f64, dt: f64, steer_limits: (f64, f64)) -> Result<Self> {
        if wheelbase <= 0.0 || dt <= 0.0 {
            return Err(Error::invalid("wheelbase and dt must be positive"));
        }
        if !(steer_limits.0 <= steer_limits.1) {
            return Err(Error::invalid(format!("empty steering interval {steer_limits:?}")));
        }
        Ok(Self { wheelbase, dt, steer_limits })
    }
}

/// One step of the simple car; the steering angle saturates at the limits
/// after the additive update.
pub fn step_simple_car(
    state: [f64; 4],
    u: [f64; 2],
    delta: [f64; 2],
    wheelbase: f64,
    dt: f64,
    steer_limits: (f64, f64),
) -> [f64; 4] {
    let [px, py, theta, phi] = state;
    let v = u[0] + delta[0];
    let omega = u[1] + delta[1];
    let phi_next = (phi + omega * dt).clamp(steer_limits.0, steer_limits.1);
    [
        px + theta.cos() * v * dt,
        py + theta.sin() * v * dt,
        theta + phi.tan() / wheelbase * v * dt,
        phi_next,
    ]
}

impl Dynamics for SimpleCar {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn step_into(&self, _t: usize, x: &[f64], u: &[f64], perturbation: &[f64], out: &mut [f64]) {
        let next = step_simple_car(
            [x[0], x[1], x[2], x[3]],
            [u[0], u[1]],
            [perturbation[0], perturbation[1]],
            self.wheelbase,
            self.dt,
            self.steer_limits,
        );
        out.copy_from_slice(&next);
    }
}

/// How rollouts draw and scale their exploration noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingOptions {
    pub mode: NoiseMode,
    pub dt: f64,
    /// Testing switch: every δ is exactly zero.
    pub zero_noise: bool,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self { mode: NoiseMode::Folded, dt: 1.0, zero_noise: false }
    }
}

impl SamplingOptions {
    pub fn control_gain(&self) -> f64 {
        self.mode.control_gain(self.dt)
    }
}

/// One sampled trajectory: `T + 1` states and the `T` standard-normal draws
/// that produced it, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    states: Vec<f64>,
    noises: Vec<f64>,
    state_dim: usize,
    control_dim: usize,
    pub seed: u64,
    pub sample_index: u64,
}

impl Rollout {
    pub fn horizon(&self) -> usize {
        self.noises.len() / self.control_dim.max(1)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn noise(&self, t: usize) -> &[f64] {
        &self.noises[t * self.control_dim..(t + 1) * self.control_dim]
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.state(self.horizon())
    }

    /// Rebuilds a rollout from explicit states and noises.
    pub fn from_parts(states: Vec<Vec<f64>>, noises: Vec<Vec<f64>>, seed: u64, sample_index: u64) -> Result<Self> {
        if states.len() != noises.len() + 1 {
            return Err(Error::dim(format!("{} states for {} noise steps", states.len(), noises.len())));
        }
        let state_dim = states[0].len();
        let control_dim = noises.first().map_or(0, Vec::len);
        if states.iter().any(|s| s.len() != state_dim) || noises.iter().any(|d| d.len() != control_dim) {
            return Err(Error::dim("ragged rollout rows"));
        }
        Ok(Self {
            states: states.concat(),
            noises: noises.concat(),
            state_dim,
            control_dim,
            seed,
            sample_index,
        })
    }
}

/// Samples rollout `sample_index` of `seed` by iterating `dynamics` from `x0`
/// under `nominal` plus the keyed exploration noise.
pub fn sample_rollout<D: Dynamics + ?Sized>(
    dynamics: &D,
    nominal: &[DVector<f64>],
    x0: &[f64],
    seed: u64,
    sample_index: u64,
    opts: &SamplingOptions,
) -> Rollout {
    let n = dynamics.state_dim();
    let m = dynamics.control_dim();
    let horizon = nominal.len();
    assert_eq!(x0.len(), n, "initial state dimension");
    let gain = opts.control_gain();

    let mut states = vec![0.0; (horizon + 1) * n];
    let mut noises = vec![0.0; horizon * m];
    states[..n].copy_from_slice(x0);
    let mut stream = NoiseStream::new(seed, Domain::Rollout, sample_index, m);
    let mut perturbation = vec![0.0; m];
    for t in 0..horizon {
        let delta = &mut noises[t * m..(t + 1) * m];
        if !opts.zero_noise {
            stream.fill_step(delta);
        }
        for (p, d) in perturbation.iter_mut().zip(delta.iter()) {
            *p = gain * d;
        }
        let (done, rest) = states.split_at_mut((t + 1) * n);
        dynamics.step_into(t, &done[t * n..], nominal[t].as_slice(), &perturbation, &mut rest[..n]);
    }
    Rollout { states, noises, state_dim: n, control_dim: m, seed, sample_index }
}
