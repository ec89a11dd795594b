//! Closed-loop receding-horizon harness around the path-integral estimator.

use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::complexity::{variance_upper_bound, Magnitude};
use crate::costs::CostSpec;
use crate::dynamics::{make_double_integrator, Dynamics};
use crate::error::{Error, Result};
use crate::moments::{expected_cost_breakdown, ExpectedCostOptions};
use crate::mppi::{
    build_batch, empirical_variance_weighted_control, empirical_weight_mean, estimate_control, sample_summaries,
    summarize, PiConfig,
};
use crate::noise::{derive_seed, Domain, NoiseStream};

/// State norm beyond which a run is declared diverged.
pub const DIVERGENCE_NORM: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct McpRunConfig {
    pub outer_steps: usize,
    /// Inner solve; its seed is replaced by one derived per outer step.
    pub inner: PiConfig,
    pub spec: CostSpec,
    pub x0: Vec<f64>,
    /// Add one fresh standard-normal draw to every applied control.
    pub actuation_noise: bool,
    pub master_seed: u64,
}

/// What happened at one outer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// `û*₀` before actuation noise.
    pub control: Vec<f64>,
    /// True state after applying the control.
    pub state: Vec<f64>,
    pub e1_hat: f64,
    pub underflow: bool,
    pub min_cost: f64,
    /// Sample variance of the weighted control per component at t = 0.
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub initial_state: Vec<f64>,
    pub records: Vec<StepRecord>,
    pub diverged: bool,
    pub master_seed: u64,
    /// Wall-clock per outer step; kept apart from the deterministic records.
    pub timings: Vec<Duration>,
}

impl RunLog {
    pub fn final_state(&self) -> &[f64] {
        self.records.last().map_or(&self.initial_state, |r| &r.state)
    }

    /// `x₀, x₁, …` including the initial state.
    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.initial_state.as_slice()).chain(self.records.iter().map(|r| r.state.as_slice()))
    }
}

fn validate(cfg: &McpRunConfig, n: usize, m: usize) -> Result<()> {
    cfg.inner.validate()?;
    if cfg.outer_steps == 0 {
        return Err(Error::invalid("outer_steps must be at least 1"));
    }
    if cfg.x0.len() != n || cfg.spec.state_dim() != n {
        return Err(Error::dim(format!("state dimension {n}, x0 length {}", cfg.x0.len())));
    }
    if cfg.inner.nominal.iter().any(|u| u.len() != m) {
        return Err(Error::dim(format!("nominal controls must have length {m}")));
    }
    Ok(())
}

/// Runs `cfg.outer_steps` receding-horizon iterations from `cfg.x0`.
pub fn run_mpc<D: Dynamics + ?Sized>(dynamics: &D, cfg: &McpRunConfig) -> Result<RunLog> {
    let (n, m) = (dynamics.state_dim(), dynamics.control_dim());
    validate(cfg, n, m)?;
    let nominal = vec![DVector::zeros(m); cfg.inner.horizon];
    let mut inner = PiConfig { nominal: nominal.clone(), ..cfg.inner.clone() };
    let mut x = cfg.x0.clone();
    let mut log = RunLog {
        initial_state: x.clone(),
        records: Vec::with_capacity(cfg.outer_steps),
        diverged: false,
        master_seed: cfg.master_seed,
        timings: Vec::with_capacity(cfg.outer_steps),
    };
    let mut applied = vec![0.0; m];
    let mut next = vec![0.0; n];
    for k in 0..cfg.outer_steps {
        let started = Instant::now();
        inner.seed = derive_seed(cfg.master_seed, k as u64);
        let batch = build_batch(dynamics, &cfg.spec, &inner, &x)?;
        let control = estimate_control(&batch, &nominal)?.swap_remove(0);
        let weight = empirical_weight_mean(&batch)?;
        let variance = if batch.len() >= 2 && !weight.underflowed {
            empirical_variance_weighted_control(&batch, 0)?.variance
        } else {
            vec![f64::NAN; m]
        };
        applied.fill(0.0);
        if cfg.actuation_noise {
            NoiseStream::new(cfg.master_seed, Domain::Actuation, k as u64, m).fill_step(&mut applied);
        }
        dynamics.step_into(0, &x, control.as_slice(), &applied, &mut next);
        std::mem::swap(&mut x, &mut next);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        log.records.push(StepRecord {
            step: k,
            control: control.as_slice().to_vec(),
            state: x.clone(),
            e1_hat: weight.mean,
            underflow: weight.underflowed,
            min_cost: batch.min_cost(),
            variance,
        });
        log.timings.push(started.elapsed());
        if !(norm <= DIVERGENCE_NORM) {
            log.diverged = true;
            break;
        }
    }
    Ok(log)
}

/// One `(a, T)` cell of a variance sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub a: f64,
    pub horizon: usize,
    /// Component- and batch-averaged sample variance of `wδ₀/Ê₁`.
    pub variance: f64,
    pub variance_stderr: f64,
    /// `1/Ê₁` averaged over batches; `None` when every weight underflowed.
    pub inv_mean_weight: Option<f64>,
    /// `E[S]/λ` from moment propagation with the conservative indicator.
    pub log_e_s_scaled: f64,
    pub variance_bound: Magnitude,
}

/// Batches drawn per sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub num_samples: usize,
    pub batches: usize,
    pub lambda: f64,
    pub dt: f64,
    pub noise_mode: crate::dynamics::NoiseMode,
    pub seed: u64,
}

/// Sample variance of the weighted control and `1/Ê₁` at the initial state
/// of the double integrator, for every `a` and horizon.
pub fn variance_sweep(
    spec: &CostSpec,
    x0: &[f64],
    settings: &SweepSettings,
    a_values: &[f64],
    horizons: &[usize],
) -> Result<Vec<SweepCell>> {
    if settings.batches == 0 {
        return Err(Error::invalid("sweep needs at least one batch per cell"));
    }
    let mut cells = Vec::with_capacity(a_values.len() * horizons.len());
    for (ia, &a) in a_values.iter().enumerate() {
        for (ih, &horizon) in horizons.iter().enumerate() {
            let model = make_double_integrator(a, horizon)?;
            let mut cfg = PiConfig::new(settings.num_samples, settings.lambda, horizon, settings.dt, 2, 0)?;
            cfg.noise_mode = settings.noise_mode;
            let opts = ExpectedCostOptions { include_indicator: true, noise_gain: cfg.gain() };
            let e_s = expected_cost_breakdown(&model, spec, &cfg.nominal, &DVector::from_column_slice(x0), &opts)?.total();
            let mut var_sum = 0.0;
            let mut se_sq = 0.0;
            let mut inv_sum = 0.0;
            let mut underflow = false;
            for b in 0..settings.batches {
                let cell_key = ((ia * horizons.len() + ih) * settings.batches + b) as u64;
                cfg.seed = derive_seed(settings.seed, cell_key);
                let samples = sample_summaries(&model, spec, &cfg, x0, 0)?;
                let stats = summarize(&samples, cfg.lambda);
                match stats {
                    Ok(stats) if !stats.weight.underflowed => {
                        var_sum += stats.variance.mean_variance();
                        let m = stats.variance.stderr.len() as f64;
                        se_sq += stats.variance.stderr.iter().map(|s| s * s).sum::<f64>() / (m * m);
                        inv_sum += 1.0 / stats.weight.mean;
                    }
                    Ok(_) | Err(Error::InvalidInput(_)) => underflow = true,
                    Err(e) => return Err(e),
                }
            }
            let nb = settings.batches as f64;
            let (variance, variance_stderr, inv_mean_weight) = if underflow {
                (f64::NAN, f64::NAN, None)
            } else {
                (var_sum / nb, se_sq.sqrt() / nb, Some(inv_sum / nb))
            };
            let x = e_s / settings.lambda;
            cells.push(SweepCell {
                a,
                horizon,
                variance,
                variance_stderr,
                inv_mean_weight,
                log_e_s_scaled: x,
                variance_bound: variance_upper_bound(x),
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::ConvexObstacle;
    use crate::dynamics::{make_double_integrator, NoiseMode, SimpleCar};
    use nalgebra::DMatrix;

    fn uav_setup(a: f64, steps: usize, seed: u64) -> (crate::dynamics::LtvModel, McpRunConfig) {
        let model = make_double_integrator(a, 10).unwrap();
        let spec = CostSpec::new(
            DMatrix::identity(4, 4),
            DMatrix::identity(4, 4),
            DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]),
            0.1,
            1.0,
            100.0,
            vec![ConvexObstacle::rectangle((3.0, 4.0), (3.0, 4.0), 0.2, [0, 1]).unwrap()],
        )
        .unwrap();
        let mut inner = PiConfig::new(64, 1.0, 10, 0.1, 2, 0).unwrap();
        inner.noise_mode = NoiseMode::Diffusion;
        let cfg = McpRunConfig { outer_steps: steps, inner, spec, x0: vec![0.0; 4], actuation_noise: true, master_seed: seed };
        (model, cfg)
    }

    #[test]
    fn fixed_point_without_noise() {
        let (model, mut cfg) = uav_setup(0.0, 15, 1);
        cfg.x0 = vec![1.0, 1.0, 0.0, 0.0];
        cfg.actuation_noise = false;
        cfg.inner.zero_noise = true;
        let log = run_mpc(&model, &cfg).unwrap();
        assert_eq!(log.records.len(), 15);
        for r in &log.records {
            assert_eq!(r.state, cfg.x0);
            assert_eq!(r.control, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let (model, cfg) = uav_setup(-0.5, 12, 7);
        let a = run_mpc(&model, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let b = pool.install(|| run_mpc(&model, &cfg).unwrap());
        assert_eq!(a.records, b.records);
        let (_, other) = uav_setup(-0.5, 12, 8);
        assert_ne!(a.records, run_mpc(&model, &other).unwrap().records);
    }

    #[test]
    fn only_first_control_moves_the_state() {
        let (model, mut cfg) = uav_setup(0.0, 5, 3);
        cfg.actuation_noise = false;
        let log = run_mpc(&model, &cfg).unwrap();
        let mut x = DVector::from_column_slice(&cfg.x0);
        for r in &log.records {
            x = model.step(0, &x, &DVector::from_column_slice(&r.control), &DVector::zeros(2)).unwrap();
            assert_eq!(x.as_slice(), r.state.as_slice());
        }
    }

    #[test]
    fn divergence_is_logged() {
        let model = make_double_integrator(0.5, 5).unwrap();
        let spec = CostSpec::new(DMatrix::identity(4, 4), DMatrix::identity(4, 4), DVector::zeros(4), 0.1, 1.0, 0.0, vec![]).unwrap();
        let mut inner = PiConfig::new(4, 1.0, 5, 0.1, 2, 0).unwrap();
        inner.zero_noise = true;
        let cfg = McpRunConfig { outer_steps: 500, inner, spec, x0: vec![0.0, 0.0, 1e3, 1e3], actuation_noise: false, master_seed: 0 };
        let log = run_mpc(&model, &cfg).unwrap();
        assert!(log.diverged);
        assert!(log.records.len() < 500);
    }

    #[test]
    fn car_runs_and_respects_limits() {
        let car = SimpleCar::new(0.5, 0.1, (-0.2, 0.2)).unwrap();
        let spec = CostSpec::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.1, 1e-4, 1e-4])),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.1, 1e-4, 1e-4])),
            DVector::from_vec(vec![2.0, 2.0, 0.0, 0.0]),
            0.1,
            0.1,
            0.0,
            vec![],
        )
        .unwrap();
        let inner = PiConfig::new(64, 0.1, 10, 0.1, 2, 0).unwrap();
        let cfg = McpRunConfig { outer_steps: 20, inner, spec, x0: vec![0.0; 4], actuation_noise: true, master_seed: 5 };
        let log = run_mpc(&car, &cfg).unwrap();
        assert!(log.records.iter().all(|r| r.state[3].abs() <= 0.2));
    }

    #[test]
    fn degenerate_sweep_has_unit_variance() {
        // all costs zero: Q tiny, target at the origin, rollouts stay near it
        let spec = CostSpec::new(
            DMatrix::identity(4, 4) * 1e-12,
            DMatrix::identity(4, 4) * 1e-12,
            DVector::zeros(4),
            0.1,
            1.0,
            0.0,
            vec![],
        )
        .unwrap();
        let settings = SweepSettings { num_samples: 20_000, batches: 1, lambda: 1.0, dt: 0.1, noise_mode: NoiseMode::Folded, seed: 1 };
        let cells = variance_sweep(&spec, &[0.0; 4], &settings, &[-0.5, 0.0], &[5]).unwrap();
        for c in cells {
            assert!((c.variance - 1.0).abs() < 0.05, "{c:?}");
            assert!((c.inv_mean_weight.unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
