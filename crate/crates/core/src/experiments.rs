//! Experiment runners behind the CLI subcommands. Each returns in-memory
//! tables; writing them is left to the caller.

use nalgebra::{DMatrix, DVector};

use crate::complexity::{
    analytic_report, chebyshev_samples_empirical, empirical_report, hoeffding_samples_with, ComplexityReport,
    EstimateMode, SampleCount,
};
use crate::config::{ComplexityModel, ExperimentConfig, ExperimentKind, LoadedConfig};
use crate::costs::CostSpec;
use crate::dynamics::{make_double_integrator, Dynamics, LtvModel, SimpleCar};
use crate::error::{Error, Result};
use crate::moments::{expected_cost_breakdown, ExpectedCostOptions};
use crate::mppi::{sample_summaries, weight_mean_from_costs, weighted_sums, PiConfig};
use crate::noise::derive_seed;
use crate::report::{fmt_f64, Metadata, Table};
use crate::simulator::{run_mpc, variance_sweep, McpRunConfig, RunLog, SweepSettings};

/// Inner solver settings from the `pi` and `model` sections.
pub fn pi_config(cfg: &ExperimentConfig, horizon: usize, seed: u64) -> Result<PiConfig> {
    let mut pi = PiConfig::new(cfg.pi.num_samples, cfg.pi.lambda, horizon, cfg.model.dt, 2, seed)?;
    pi.noise_mode = cfg.delta_mode;
    pi.zero_noise = cfg.pi.zero_noise;
    Ok(pi)
}

pub fn metadata(loaded: &LoadedConfig) -> Metadata {
    let c = &loaded.config;
    let mut flags = vec![
        ("kind".to_string(), c.kind.as_str().to_string()),
        ("delta_mode".to_string(), format!("{:?}", c.delta_mode).to_lowercase()),
        ("hoeffding_form".to_string(), c.hoeffding_form.to_string()),
        ("zero_noise".to_string(), c.pi.zero_noise.to_string()),
    ];
    match c.kind {
        ExperimentKind::Uav | ExperimentKind::Ugv => {
            flags.push(("actuation_noise".into(), c.closed_loop.actuation_noise.to_string()));
        }
        ExperimentKind::ComplexityTable => {
            flags.push(("route".into(), c.complexity.route.to_string()));
            flags.push(("include_indicator".into(), c.complexity.include_indicator.to_string()));
        }
        _ => {}
    }
    Metadata { config_sha256: loaded.sha256(), seed: c.seed, flags }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    match cfg.kind {
        ExperimentKind::Uav => run_uav(cfg),
        ExperimentKind::Ugv => run_ugv(cfg),
        ExperimentKind::ComplexityTable => run_complexity(cfg),
        ExperimentKind::VarianceSweep => run_variance_sweep(cfg),
        ExperimentKind::CoverageTest => run_coverage(cfg),
    }
}

fn closed_loop_config(cfg: &ExperimentConfig, spec: &CostSpec, master_seed: u64) -> Result<McpRunConfig> {
    Ok(McpRunConfig {
        outer_steps: cfg.closed_loop.outer_steps,
        inner: pi_config(cfg, cfg.pi.horizon, 0)?,
        spec: spec.clone(),
        x0: cfg.model.x0.clone(),
        actuation_noise: cfg.closed_loop.actuation_noise,
        master_seed,
    })
}

/// Per-step across-run variance of the position `(x, y)`, summed over both
/// coordinates, over the steps every run reached.
pub fn position_dispersion(logs: &[RunLog]) -> Vec<f64> {
    let len = logs.iter().map(|l| l.records.len() + 1).min().unwrap_or(0);
    let paths: Vec<Vec<&[f64]>> = logs.iter().map(|l| l.states().take(len).collect()).collect();
    let k = logs.len() as f64;
    (0..len)
        .map(|t| {
            (0..2)
                .map(|c| {
                    let mean = paths.iter().map(|p| p[t][c]).sum::<f64>() / k;
                    paths.iter().map(|p| (p[t][c] - mean).powi(2)).sum::<f64>() / k
                })
                .sum()
        })
        .collect()
}

fn window_mean(values: &[f64], window: usize) -> f64 {
    let w = window.clamp(1, values.len().max(1));
    let tail = &values[values.len().saturating_sub(w)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

fn path_table(name: String, log: &RunLog, names: [&str; 6]) -> Table {
    let mut t = Table::new(name, &["step", names[0], names[1], names[2], names[3], names[4], names[5]]);
    for r in &log.records {
        let mut row = vec![(r.step + 1).to_string()];
        row.extend(r.state.iter().map(|v| fmt_f64(*v)));
        row.extend(r.control.iter().map(|v| fmt_f64(*v)));
        t.push(row);
    }
    t
}

fn label(v: f64) -> String {
    fmt_f64(v)
}

/// Closed-loop double-integrator runs for every `a` and seed.
pub fn run_uav(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let spec = cfg.cost_spec()?;
    let obstacles = spec.obstacles.clone();
    let mut tables = Vec::new();
    let mut summary = Table::new(
        "uav_summary",
        &["a", "run", "master_seed", "steps", "final_x", "final_y", "distance_to_target", "penetrations", "diverged", "mean_e1_hat"],
    );
    let mut dispersion = Table::new("uav_dispersion", &["a", "mean_dispersion", "window_dispersion"]);
    for &a in &cfg.model.a_values {
        let model = make_double_integrator(a, cfg.pi.horizon)?;
        let mut logs = Vec::with_capacity(cfg.closed_loop.runs);
        for run in 0..cfg.closed_loop.runs {
            let seed = derive_seed(cfg.seed, run as u64);
            let log = run_mpc(&model, &closed_loop_config(cfg, &spec, seed)?)?;
            let fin = log.final_state();
            let dist = ((fin[0] - spec.target[0]).powi(2) + (fin[1] - spec.target[1]).powi(2)).sqrt();
            let penetrations = log
                .states()
                .filter(|x| obstacles.iter().any(|o| o.distance(o.project(x)) == 0.0))
                .count();
            let mean_e1 = log.records.iter().map(|r| r.e1_hat).sum::<f64>() / log.records.len().max(1) as f64;
            summary.push(vec![
                label(a),
                run.to_string(),
                seed.to_string(),
                log.records.len().to_string(),
                fmt_f64(fin[0]),
                fmt_f64(fin[1]),
                fmt_f64(dist),
                penetrations.to_string(),
                log.diverged.to_string(),
                fmt_f64(mean_e1),
            ]);
            tables.push(path_table(format!("uav_path_a{}_run{run}", label(a)), &log, ["x", "y", "vx", "vy", "u1", "u2"]));
            logs.push(log);
        }
        let disp = position_dispersion(&logs);
        let mean = disp.iter().sum::<f64>() / disp.len().max(1) as f64;
        dispersion.push(vec![label(a), fmt_f64(mean), fmt_f64(window_mean(&disp, cfg.closed_loop.dispersion_window))]);
    }
    tables.push(summary);
    tables.push(dispersion);
    Ok(tables)
}

fn car(cfg: &ExperimentConfig, limits: [f64; 2]) -> Result<SimpleCar> {
    SimpleCar::new(cfg.model.wheelbase, cfg.model.dt, (limits[0], limits[1]))
}

/// Closed-loop simple-car runs for every steering setting and seed.
pub fn run_ugv(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let spec = cfg.cost_spec()?;
    let mut tables = Vec::new();
    let mut summary = Table::new("ugv_summary", &["setting", "runs", "window", "window_dispersion", "mean_dispersion", "diverged_runs"]);
    let mut curves = Vec::new();
    for setting in &cfg.model.steering {
        let model = car(cfg, setting.limits)?;
        let mut logs = Vec::with_capacity(cfg.closed_loop.runs);
        for run in 0..cfg.closed_loop.runs {
            let seed = derive_seed(cfg.seed, run as u64);
            let log = run_mpc(&model, &closed_loop_config(cfg, &spec, seed)?)?;
            tables.push(path_table(format!("ugv_path_{}_run{run}", setting.name), &log, ["x", "y", "theta", "phi", "v", "omega"]));
            logs.push(log);
        }
        let disp = position_dispersion(&logs);
        let window = cfg.closed_loop.dispersion_window;
        summary.push(vec![
            setting.name.clone(),
            logs.len().to_string(),
            window.to_string(),
            fmt_f64(window_mean(&disp, window)),
            fmt_f64(disp.iter().sum::<f64>() / disp.len().max(1) as f64),
            logs.iter().filter(|l| l.diverged).count().to_string(),
        ]);
        curves.push(disp);
    }
    let mut header = vec!["step".to_string()];
    header.extend(cfg.model.steering.iter().map(|s| s.name.clone()));
    let mut per_step = Table { name: "ugv_dispersion".into(), header, rows: Vec::new() };
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    for t in 0..len {
        let mut row = vec![t.to_string()];
        row.extend(curves.iter().map(|c| fmt_f64(c[t])));
        per_step.push(row);
    }
    tables.push(summary);
    tables.push(per_step);
    Ok(tables)
}

/// One row of the sample-complexity table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityRow {
    pub param: String,
    pub horizon: usize,
    pub report: ComplexityReport,
}

fn count_cell(n: Option<SampleCount>) -> String {
    n.map_or_else(|| "n/a".into(), |n| n.to_string())
}

/// Analytic rows need moment propagation, hence the double integrator.
pub fn complexity_rows(cfg: &ExperimentConfig) -> Result<Vec<ComplexityRow>> {
    let c = &cfg.complexity;
    let query = cfg.query();
    let spec = cfg.cost_spec()?;
    let x0 = DVector::from_column_slice(&cfg.model.x0);
    let mut rows = Vec::new();
    let params: Vec<(String, RowModel)> = match c.model {
        ComplexityModel::DoubleIntegrator => cfg.model.a_values.iter().map(|&a| (label(a), RowModel::DoubleIntegrator(a))).collect(),
        ComplexityModel::SimpleCar => {
            if c.route == EstimateMode::Analytic {
                return Err(Error::Config {
                    path: "complexity.route".into(),
                    message: "the analytic route needs a linear model; use the empirical route for the simple car".into(),
                });
            }
            cfg.model
                .steering
                .iter()
                .map(|s| Ok((s.name.clone(), RowModel::Car(car(cfg, s.limits)?))))
                .collect::<Result<_>>()?
        }
    };
    for (ip, (param, family)) in params.iter().enumerate() {
        for (ih, &horizon) in c.horizons.iter().enumerate() {
            let ltv = match family {
                RowModel::DoubleIntegrator(a) => Some(make_double_integrator(*a, horizon)?),
                RowModel::Car(_) => None,
            };
            let dynamics: &dyn Dynamics = match (family, &ltv) {
                (RowModel::Car(car), _) => car,
                (_, Some(m)) => m,
                _ => unreachable!(),
            };
            let report = match c.route {
                EstimateMode::Analytic => {
                    let ltv = ltv.as_ref().ok_or_else(|| Error::Internal("analytic route without LTV model".into()))?;
                    let pi = pi_config(cfg, horizon, 0)?;
                    let opts = ExpectedCostOptions { include_indicator: c.include_indicator, noise_gain: pi.gain() };
                    let e_s = expected_cost_breakdown(ltv, &spec, &pi.nominal, &x0, &opts)?.total();
                    analytic_report(&query, e_s, cfg.hoeffding_form, c.log10_cap)?
                }
                EstimateMode::Empirical => {
                    let seed = derive_seed(cfg.seed, (ip * c.horizons.len() + ih) as u64);
                    let mut pi = pi_config(cfg, horizon, seed)?;
                    pi.num_samples = c.pilot_samples;
                    let samples = sample_summaries(dynamics, &spec, &pi, &cfg.model.x0, 0)?;
                    let costs: Vec<f64> = samples.iter().map(|s| s.cost).collect();
                    let e1 = weight_mean_from_costs(&costs, pi.lambda)?;
                    empirical_report(&query, e1.mean, cfg.hoeffding_form)?
                }
            };
            rows.push(ComplexityRow { param: param.clone(), horizon, report });
        }
    }
    Ok(rows)
}

enum RowModel {
    DoubleIntegrator(f64),
    Car(SimpleCar),
}

pub fn run_complexity(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let mut t = Table::new(
        "complexity",
        &["param", "T", "N2", "multiplier", "N1", "mode", "overflow", "assumption_ok", "n2_log10", "e_s_over_lambda", "e1_hat", "required"],
    );
    for row in complexity_rows(cfg)? {
        let r = &row.report;
        t.push(vec![
            row.param.clone(),
            row.horizon.to_string(),
            count_cell(r.n2),
            fmt_f64(r.multiplier),
            r.n1.to_string(),
            r.mode.to_string(),
            r.overflow().to_string(),
            r.assumption_ok.to_string(),
            r.n2.map_or_else(|| "nan".into(), |n| fmt_f64(n.log10())),
            r.log_e_s_scaled.map_or_else(|| "nan".into(), fmt_f64),
            r.e1_hat.map_or_else(|| "nan".into(), fmt_f64),
            count_cell(r.required()),
        ]);
    }
    Ok(vec![t])
}

pub fn run_variance_sweep(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let spec = cfg.cost_spec()?;
    let settings = SweepSettings {
        num_samples: cfg.pi.num_samples,
        batches: cfg.sweep.batches,
        lambda: cfg.pi.lambda,
        dt: cfg.model.dt,
        noise_mode: cfg.delta_mode,
        seed: cfg.seed,
    };
    let cells = variance_sweep(&spec, &cfg.model.x0, &settings, &cfg.model.a_values, &cfg.sweep.horizons)?;
    let mut t = Table::new(
        "variance_sweep",
        &["a", "T", "variance", "variance_stderr", "inv_mean_weight", "e_s_over_lambda", "bound_log10", "dominated", "monotone_in_t"],
    );
    let mut previous: Option<(f64, f64)> = None;
    for c in &cells {
        let bound = c.variance_bound;
        let dominated = bound.is_overflow() || c.variance <= bound.value() + 4.0 * c.variance_stderr;
        let monotone = match previous {
            Some((a, v)) if a == c.a => c.variance >= v,
            _ => true,
        };
        previous = Some((c.a, c.variance));
        t.push(vec![
            label(c.a),
            c.horizon.to_string(),
            fmt_f64(c.variance),
            fmt_f64(c.variance_stderr),
            c.inv_mean_weight.map_or_else(|| "overflow".into(), fmt_f64),
            fmt_f64(c.log_e_s_scaled),
            fmt_f64(bound.log10()),
            dominated.to_string(),
            monotone.to_string(),
        ]);
    }
    Ok(vec![t])
}

/// Observed failure rate of one concentration bound.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageResult {
    pub bound: &'static str,
    pub samples: u64,
    pub permitted: f64,
    pub failures: usize,
    pub repetitions: usize,
    pub reference: f64,
}

impl CoverageResult {
    pub fn observed(&self) -> f64 {
        self.failures as f64 / self.repetitions as f64
    }
}

/// Repeats the Hoeffding and Chebyshev experiments on a scalar LTI testbed
/// against a large reference batch.
pub fn coverage(cfg: &ExperimentConfig) -> Result<Vec<CoverageResult>> {
    let cv = &cfg.coverage;
    let model = LtvModel::time_invariant(DMatrix::from_element(1, 1, cv.a), DMatrix::from_element(1, 1, cv.b), cv.horizon)?;
    let spec = CostSpec::new(
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
        DVector::from_element(1, cv.target),
        cv.dt,
        cv.lambda,
        0.0,
        vec![],
    )?;
    let x0 = [cv.x0];
    let pi = |n: usize, seed: u64| -> Result<PiConfig> {
        let mut p = PiConfig::new(n, cv.lambda, cv.horizon, cv.dt, 1, seed)?;
        p.noise_mode = cfg.delta_mode;
        p.zero_noise = cv.zero_noise;
        Ok(p)
    };
    let reference = weighted_sums(&model, &spec, &pi(cv.reference_samples, derive_seed(cfg.seed, u64::MAX))?, &x0, 0)?;
    let e_w = reference.weight_mean();
    let e_2 = reference.sum_w_noise[0] / reference.sum_w;

    let scaled = |n: u64| ((n as f64) * cv.sample_scale).ceil().max(1.0) as u64;
    let n1 = scaled(hoeffding_samples_with(cv.eps1, cv.rho1, cfg.hoeffding_form)?);
    let n2 = match chebyshev_samples_empirical(e_w, cv.eps1, cv.eps2, cv.rho2)? {
        SampleCount::Exact(n) => scaled(n),
        other => return Err(Error::invalid(format!("Chebyshev count {other} too large for the coverage protocol"))),
    };
    let hoeffding_stream = derive_seed(cfg.seed, 1);
    let chebyshev_stream = derive_seed(cfg.seed, 2);
    let mut fail1 = 0;
    let mut fail2 = 0;
    for r in 0..cv.repetitions as u64 {
        let s1 = weighted_sums(&model, &spec, &pi(n1 as usize, derive_seed(hoeffding_stream, r))?, &x0, 0)?;
        if (s1.weight_mean() - e_w).abs() >= cv.eps1 {
            fail1 += 1;
        }
        let s2 = weighted_sums(&model, &spec, &pi(n2 as usize, derive_seed(chebyshev_stream, r))?, &x0, 0)?;
        if (s2.sum_w_noise[0] / (s2.count as f64 * e_w) - e_2).abs() >= cv.eps2 {
            fail2 += 1;
        }
    }
    Ok(vec![
        CoverageResult { bound: "hoeffding", samples: n1, permitted: cv.rho1, failures: fail1, repetitions: cv.repetitions, reference: e_w },
        CoverageResult { bound: "chebyshev", samples: n2, permitted: cv.rho2, failures: fail2, repetitions: cv.repetitions, reference: e_2 },
    ])
}

pub fn run_coverage(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let mut t = Table::new("coverage", &["bound", "samples", "repetitions", "failures", "observed", "permitted", "within_tolerance", "reference"]);
    for r in coverage(cfg)? {
        t.push(vec![
            r.bound.to_string(),
            r.samples.to_string(),
            r.repetitions.to_string(),
            r.failures.to_string(),
            fmt_f64(r.observed()),
            fmt_f64(r.permitted),
            (r.observed() <= r.permitted + 0.02).to_string(),
            fmt_f64(r.reference),
        ]);
    }
    Ok(vec![t])
}
