//! Monte-Carlo path-integral control estimation and the empirical batch
//! statistics behind the sample-complexity bounds.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::costs::{trajectory_cost, CostSpec};
use crate::dynamics::{sample_rollout, Dynamics, NoiseMode, Rollout, SamplingOptions};
use crate::error::{Error, Result};
use crate::linalg::compensated_sum;

/// Parameters of one path-integral solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PiConfig {
    pub num_samples: usize,
    /// Temperature λ of the weights `e^{−S/λ}`.
    pub lambda: f64,
    pub horizon: usize,
    pub dt: f64,
    pub nominal: Vec<DVector<f64>>,
    pub seed: u64,
    pub noise_mode: NoiseMode,
    pub zero_noise: bool,
}

impl PiConfig {
    /// Zero nominal sequence of length `horizon`.
    pub fn new(num_samples: usize, lambda: f64, horizon: usize, dt: f64, control_dim: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            num_samples,
            lambda,
            horizon,
            dt,
            nominal: vec![DVector::zeros(control_dim); horizon],
            seed,
            noise_mode: NoiseMode::Folded,
            zero_noise: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::invalid("num_samples must be at least 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.nominal.len() != self.horizon {
            return Err(Error::dim(format!("nominal has {} steps for horizon {}", self.nominal.len(), self.horizon)));
        }
        Ok(())
    }

    pub fn sampling(&self) -> SamplingOptions {
        SamplingOptions { mode: self.noise_mode, dt: self.dt, zero_noise: self.zero_noise }
    }

    /// Factor mapping a standard-normal draw to control units.
    pub fn gain(&self) -> f64 {
        self.sampling().control_gain()
    }
}

/// `N` rollouts with their costs and weights, aligned by sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub rollouts: Vec<Rollout>,
    pub costs: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub lambda: f64,
    pub gain: f64,
}

fn check_inputs<D: Dynamics + ?Sized>(dynamics: &D, spec: &CostSpec, cfg: &PiConfig, x0: &[f64]) -> Result<()> {
    cfg.validate()?;
    let (n, m) = (dynamics.state_dim(), dynamics.control_dim());
    if x0.len() != n || spec.state_dim() != n {
        return Err(Error::dim(format!(
            "state dimension {n}, x0 length {}, cost dimension {}",
            x0.len(),
            spec.state_dim()
        )));
    }
    if let Some(t) = cfg.nominal.iter().position(|u| u.len() != m) {
        return Err(Error::dim(format!("nominal[{t}] length differs from control dimension {m}")));
    }
    Ok(())
}

impl TrajectoryBatch {
    /// Assembles a batch from rollouts and their costs.
    pub fn from_costs(rollouts: Vec<Rollout>, costs: Vec<f64>, lambda: f64, gain: f64) -> Result<Self> {
        if rollouts.len() != costs.len() {
            return Err(Error::dim(format!("{} rollouts for {} costs", rollouts.len(), costs.len())));
        }
        if !(lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        let log_weights: Vec<f64> = costs.iter().map(|s| -s / lambda).collect();
        let weights = log_weights.iter().map(|l| l.exp()).collect();
        Ok(Self { rollouts, costs, weights, log_weights, lambda, gain })
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.rollouts.first().map_or(0, Rollout::horizon)
    }

    pub fn control_dim(&self) -> usize {
        self.rollouts.first().map_or(0, Rollout::control_dim)
    }

    pub fn min_cost(&self) -> f64 {
        self.costs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn noise_at(&self, t: usize) -> Result<Vec<&[f64]>> {
        if self.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if t >= self.horizon() {
            return Err(Error::invalid(format!("step {t} outside horizon {}", self.horizon())));
        }
        Ok(self.rollouts.iter().map(|r| r.noise(t)).collect())
    }
}

/// Samples `cfg.num_samples` rollouts from `x0` in parallel; results are
/// ordered by sample index regardless of the worker count.
pub fn build_batch<D: Dynamics + ?Sized>(dynamics: &D, spec: &CostSpec, cfg: &PiConfig, x0: &[f64]) -> Result<TrajectoryBatch> {
    check_inputs(dynamics, spec, cfg, x0)?;
    let opts = cfg.sampling();
    let pairs: Vec<(Rollout, f64)> = (0..cfg.num_samples as u64)
        .into_par_iter()
        .map(|n| {
            let r = sample_rollout(dynamics, &cfg.nominal, x0, cfg.seed, n, &opts);
            let s = trajectory_cost(&r, spec);
            (r, s)
        })
        .collect();
    let (rollouts, costs) = pairs.into_iter().unzip();
    TrajectoryBatch::from_costs(rollouts, costs, cfg.lambda, cfg.gain())
}

/// Cost and the draw at one step of a single rollout, without keeping the
/// trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSummary {
    pub cost: f64,
    pub noise: Vec<f64>,
}

/// Memory-light variant of [`build_batch`] for large pilot batches.
pub fn sample_summaries<D: Dynamics + ?Sized>(
    dynamics: &D,
    spec: &CostSpec,
    cfg: &PiConfig,
    x0: &[f64],
    step: usize,
) -> Result<Vec<SampleSummary>> {
    check_inputs(dynamics, spec, cfg, x0)?;
    if step >= cfg.horizon {
        return Err(Error::invalid(format!("step {step} outside horizon {}", cfg.horizon)));
    }
    let opts = cfg.sampling();
    Ok((0..cfg.num_samples as u64)
        .into_par_iter()
        .map(|n| {
            let r = sample_rollout(dynamics, &cfg.nominal, x0, cfg.seed, n, &opts);
            SampleSummary { cost: trajectory_cost(&r, spec), noise: r.noise(step).to_vec() }
        })
        .collect())
}

/// Running totals `Σw` and `Σw δ_step` over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSums {
    pub count: u64,
    pub sum_w: f64,
    pub sum_w_noise: Vec<f64>,
}

impl WeightedSums {
    pub fn weight_mean(&self) -> f64 {
        self.sum_w / self.count as f64
    }
}

const SUM_CHUNK: u64 = 4096;

/// Streams `cfg.num_samples` rollouts into [`WeightedSums`] without storing
/// them. Chunks of fixed size are reduced in index order, so the totals do
/// not depend on the worker count.
pub fn weighted_sums<D: Dynamics + ?Sized>(
    dynamics: &D,
    spec: &CostSpec,
    cfg: &PiConfig,
    x0: &[f64],
    step: usize,
) -> Result<WeightedSums> {
    check_inputs(dynamics, spec, cfg, x0)?;
    if step >= cfg.horizon {
        return Err(Error::invalid(format!("step {step} outside horizon {}", cfg.horizon)));
    }
    let opts = cfg.sampling();
    let n = cfg.num_samples as u64;
    let m = dynamics.control_dim();
    let chunks: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(SUM_CHUNK))
        .into_par_iter()
        .map(|c| {
            let range = c * SUM_CHUNK..((c + 1) * SUM_CHUNK).min(n);
            let mut w = Vec::with_capacity(SUM_CHUNK as usize);
            let mut wd = vec![Vec::with_capacity(SUM_CHUNK as usize); m];
            for i in range {
                let r = sample_rollout(dynamics, &cfg.nominal, x0, cfg.seed, i, &opts);
                let wi = (-trajectory_cost(&r, spec) / cfg.lambda).exp();
                w.push(wi);
                for (acc, d) in wd.iter_mut().zip(r.noise(step)) {
                    acc.push(wi * d);
                }
            }
            (compensated_sum(w), wd.into_iter().map(compensated_sum).collect())
        })
        .collect();
    let sum_w = compensated_sum(chunks.iter().map(|c| c.0));
    if sum_w.is_nan() {
        return Err(Error::RejectedBatch("NaN trajectory cost".into()));
    }
    let sum_w_noise = (0..m).map(|i| compensated_sum(chunks.iter().map(|c| c.1[i]))).collect();
    Ok(WeightedSums { count: n, sum_w, sum_w_noise })
}

/// Shifted weights `e^{−(S−S_min)/λ}`; the largest equals 1.
fn shifted_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.iter().any(|l| l.is_nan()) {
        return Err(Error::RejectedBatch("NaN trajectory cost".into()));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::RejectedBatch("no finite trajectory cost".into()));
    }
    Ok(log_weights.iter().map(|l| (l - max).exp()).collect())
}

/// `û*ₜ = uₜ + g Σₙ wₙ δₜ⁽ⁿ⁾ / Σₙ wₙ` for every step of the horizon, with `g`
/// the batch noise gain.
pub fn estimate_control(batch: &TrajectoryBatch, nominal: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if nominal.len() != batch.horizon() {
        return Err(Error::dim(format!("nominal has {} steps for batch horizon {}", nominal.len(), batch.horizon())));
    }
    let w = shifted_weights(&batch.log_weights)?;
    let total = compensated_sum(w.iter().copied());
    let m = batch.control_dim();
    let mut out = Vec::with_capacity(nominal.len());
    for (t, u) in nominal.iter().enumerate() {
        let mut acc = vec![0.0; m];
        for (wn, r) in w.iter().zip(&batch.rollouts) {
            for (a, d) in acc.iter_mut().zip(r.noise(t)) {
                *a += wn * d;
            }
        }
        out.push(DVector::from_iterator(m, (0..m).map(|i| u[i] + batch.gain * acc[i] / total)));
    }
    Ok(out)
}

/// `Ê₁ = (1/N) Σ e^{−Sₙ/λ}` in the unshifted domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightMean {
    pub mean: f64,
    /// Standard error of the mean, `s/√N`.
    pub stderr: f64,
    /// Every weight underflowed to exactly zero.
    pub underflowed: bool,
}

pub fn weight_mean_from_costs(costs: &[f64], lambda: f64) -> Result<WeightMean> {
    if costs.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if costs.iter().any(|s| s.is_nan()) {
        return Err(Error::RejectedBatch("NaN trajectory cost".into()));
    }
    let n = costs.len() as f64;
    let w: Vec<f64> = costs.iter().map(|s| (-s / lambda).exp()).collect();
    let mean = compensated_sum(w.iter().copied()) / n;
    let stderr = if costs.len() > 1 {
        let ss = compensated_sum(w.iter().map(|x| (x - mean) * (x - mean)));
        (ss / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(WeightMean { mean, stderr, underflowed: w.iter().all(|&x| x == 0.0) })
}

pub fn empirical_weight_mean(batch: &TrajectoryBatch) -> Result<WeightMean> {
    weight_mean_from_costs(&batch.costs, batch.lambda)
}

/// Normaliser for the weighted-noise statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightReference {
    /// Use Ê₁ from the same batch.
    Empirical,
    /// Use a known `E[w]`.
    Analytic(f64),
}

fn resolve_reference(reference: WeightReference, costs: &[f64], lambda: f64) -> Result<f64> {
    let e = match reference {
        WeightReference::Empirical => weight_mean_from_costs(costs, lambda)?.mean,
        WeightReference::Analytic(e) => e,
    };
    if !(e > 0.0) {
        return Err(Error::invalid(format!("weight reference must be positive, got {e}")));
    }
    Ok(e)
}

/// `Ê₂ = (1/N) Σ wₙ δ⁽ⁿ⁾ / E_ref` over explicit `(cost, δ)` pairs.
pub fn weighted_noise_mean(
    costs: &[f64],
    noises: &[&[f64]],
    lambda: f64,
    reference: WeightReference,
) -> Result<Vec<f64>> {
    if costs.is_empty() || costs.len() != noises.len() {
        return Err(Error::dim(format!("{} costs for {} noise rows", costs.len(), noises.len())));
    }
    let e_ref = resolve_reference(reference, costs, lambda)?;
    let m = noises[0].len();
    let n = costs.len() as f64;
    Ok((0..m)
        .map(|i| compensated_sum(costs.iter().zip(noises).map(|(s, d)| (-s / lambda).exp() * d[i] / e_ref)) / n)
        .collect())
}

pub fn empirical_weighted_noise(batch: &TrajectoryBatch, t: usize, reference: WeightReference) -> Result<Vec<f64>> {
    let noises = batch.noise_at(t)?;
    weighted_noise_mean(&batch.costs, &noises, batch.lambda, reference)
}

/// Unbiased sample variance of `wₙ[δ⁽ⁿ⁾]ᵢ / Ê₁` per component, with the
/// standard error of each variance estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedVariance {
    pub variance: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl WeightedVariance {
    pub fn mean_variance(&self) -> f64 {
        self.variance.iter().sum::<f64>() / self.variance.len() as f64
    }

    pub fn mean_stderr(&self) -> f64 {
        self.stderr.iter().sum::<f64>() / self.stderr.len() as f64
    }
}

pub fn weighted_control_variance(costs: &[f64], noises: &[&[f64]], lambda: f64) -> Result<WeightedVariance> {
    if costs.len() < 2 {
        return Err(Error::invalid(format!("variance needs at least 2 samples, got {}", costs.len())));
    }
    if costs.len() != noises.len() {
        return Err(Error::dim(format!("{} costs for {} noise rows", costs.len(), noises.len())));
    }
    let e1 = resolve_reference(WeightReference::Empirical, costs, lambda)?;
    let n = costs.len() as f64;
    let m = noises[0].len();
    let w: Vec<f64> = costs.iter().map(|s| (-s / lambda).exp() / e1).collect();
    let mut variance = Vec::with_capacity(m);
    let mut stderr = Vec::with_capacity(m);
    for i in 0..m {
        let y: Vec<f64> = w.iter().zip(noises).map(|(wn, d)| wn * d[i]).collect();
        let mean = compensated_sum(y.iter().copied()) / n;
        let m2 = compensated_sum(y.iter().map(|v| (v - mean).powi(2))) / n;
        let m4 = compensated_sum(y.iter().map(|v| (v - mean).powi(4))) / n;
        variance.push(m2 * n / (n - 1.0));
        stderr.push(((m4 - m2 * m2).max(0.0) / n).sqrt());
    }
    Ok(WeightedVariance { variance, stderr })
}

pub fn empirical_variance_weighted_control(batch: &TrajectoryBatch, t: usize) -> Result<WeightedVariance> {
    let noises = batch.noise_at(t)?;
    weighted_control_variance(&batch.costs, &noises, batch.lambda)
}

/// Summary statistics of one batch at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub weight: WeightMean,
    pub min_cost: f64,
    pub variance: WeightedVariance,
}

pub fn summarize(samples: &[SampleSummary], lambda: f64) -> Result<BatchStats> {
    let costs: Vec<f64> = samples.iter().map(|s| s.cost).collect();
    let noises: Vec<&[f64]> = samples.iter().map(|s| s.noise.as_slice()).collect();
    Ok(BatchStats {
        weight: weight_mean_from_costs(&costs, lambda)?,
        min_cost: costs.iter().copied().fold(f64::INFINITY, f64::min),
        variance: weighted_control_variance(&costs, &noises, lambda)?,
    })
}
