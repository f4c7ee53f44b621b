//! Multi-run studies: convergence in `N` and the epsilon-Nash check.

use super::{default_warmup, simulate, SimConfig, SimEstimate, DEFAULT_BATCHES};
use crate::error::{Error, Result};
use crate::game::{equilibrium_strategy, individual_utility};
use crate::model::{ModelParams, Strategy};
use crate::par::{self, Execution};

/// Run lengths shared by every simulation of a study. Each queue gets the
/// same measurement time whatever `N` is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyOptions {
    pub measure_time: f64,
    /// Defaults to [`default_warmup`].
    pub warmup_time: Option<f64>,
    pub n_batches: usize,
    pub execution: Execution,
}

impl StudyOptions {
    pub fn new(measure_time: f64) -> Self {
        Self { measure_time, warmup_time: None, n_batches: DEFAULT_BATCHES, execution: Execution::default() }
    }

    fn config(&self, params: &ModelParams, strategy: Strategy, n: usize, seed: u64, stream: u64) -> SimConfig {
        SimConfig {
            n_queues: n,
            params: *params,
            strategy,
            warmup_time: self.warmup_time.unwrap_or_else(|| default_warmup(params, self.measure_time)),
            measure_time: self.measure_time,
            seed,
            stream,
            n_batches: self.n_batches,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n_queues: usize,
    pub tv_distance: f64,
    pub half_width: f64,
    pub nonstationary: bool,
    pub estimate: SimEstimate,
}

fn check_n_values(n_values: &[usize]) -> Result<()> {
    if n_values.is_empty() {
        return Err(Error::InvalidParameter("n_values must not be empty".into()));
    }
    if n_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("n_values must be strictly increasing".into()));
    }
    Ok(())
}

/// Simulates each `N` (stream = position in `n_values`) and reports the TV
/// distance of the occupancy to the mean-field law.
pub fn convergence_study(
    params: &ModelParams,
    strategy: Strategy,
    n_values: &[usize],
    seed: u64,
    opts: &StudyOptions,
) -> Result<Vec<ConvergenceRow>> {
    check_n_values(n_values)?;
    let runs = par::map(opts.execution, n_values, |i, &n| {
        simulate(&opts.config(params, strategy, n, seed, i as u64))
    });
    runs.into_iter()
        .map(|r| {
            r.map(|e| ConvergenceRow {
                n_queues: e.n_queues,
                tv_distance: e.tv_distance_to_pi,
                half_width: e.tv_half_width,
                nonstationary: e.nonstationary,
                estimate: e,
            })
        })
        .collect()
}

/// Eleven evenly spaced joining probabilities, with the point closest to an
/// interior equilibrium replaced by the equilibrium itself.
pub fn default_q_grid(params: &ModelParams) -> Result<Vec<f64>> {
    let mut grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let qe = equilibrium_strategy(params)?.q;
    let closest = (qe * 10.0).round() as usize;
    grid[closest] = qe;
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QDeviation {
    pub q: f64,
    pub simulated: f64,
    pub half_width: f64,
    pub mean_field: f64,
    pub nonstationary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsNashRow {
    pub n_queues: usize,
    /// `max_q |S^N(q) - S(q)|` over the grid.
    pub max_deviation: f64,
    /// `2 * max_deviation`.
    pub epsilon: f64,
    pub utility_at_equilibrium: f64,
    /// Largest gain `(q - q^e) S^N(q^e)` of a single customer deviating to
    /// a grid strategy while everyone else plays `q^e`.
    pub max_unilateral_gain: f64,
    /// `S^N(q^e) > S^N(q) - epsilon` for every grid point.
    pub population_sandwich: bool,
    /// The same comparison restricted to grid points with `S(q) <= S(q^e)`.
    pub sandwich_where_dominated: bool,
    pub points: Vec<QDeviation>,
}

impl EpsNashRow {
    /// No unilateral deviation gains more than `epsilon`.
    pub fn is_epsilon_nash(&self) -> bool {
        self.max_unilateral_gain <= self.epsilon
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsNashReport {
    pub equilibrium: f64,
    pub rows: Vec<EpsNashRow>,
}

/// Estimates `S^N(q)` for every `N` and grid point (plus `q^e` when it is
/// missing from the grid) and compares with the mean-field utility.
pub fn epsilon_nash_check(
    params: &ModelParams,
    n_values: &[usize],
    q_grid: &[f64],
    seed: u64,
    opts: &StudyOptions,
) -> Result<EpsNashReport> {
    check_n_values(n_values)?;
    if q_grid.is_empty() {
        return Err(Error::InvalidParameter("q_grid must not be empty".into()));
    }
    let qe = equilibrium_strategy(params)?.q;
    let mut qs: Vec<Strategy> = q_grid.iter().map(|&q| Strategy::new(q)).collect::<Result<_>>()?;
    if let Some(s) = qs.iter().find(|s| !params.is_stable_at(**s)) {
        return Err(Error::Unstable { effective_rate: params.effective_rate(*s), mu: params.mu });
    }
    let qe_index = match qs.iter().position(|s| (s.value() - qe).abs() <= 1e-12) {
        Some(i) => i,
        None => {
            qs.push(Strategy::new(qe)?);
            qs.len() - 1
        }
    };
    let mean_field: Vec<f64> = qs.iter().map(|&s| individual_utility(params, s)).collect::<Result<_>>()?;

    let jobs: Vec<(usize, Strategy)> =
        n_values.iter().flat_map(|&n| qs.iter().map(move |&s| (n, s))).collect();
    let runs = par::map(opts.execution, &jobs, |i, &(n, s)| simulate(&opts.config(params, s, n, seed, i as u64)));
    let runs: Vec<SimEstimate> = runs.into_iter().collect::<Result<_>>()?;

    let rows = n_values
        .iter()
        .zip(runs.chunks(qs.len()))
        .map(|(&n, chunk)| {
            let points: Vec<QDeviation> = chunk
                .iter()
                .zip(&qs)
                .zip(&mean_field)
                .map(|((e, s), &mf)| QDeviation {
                    q: s.value(),
                    simulated: e.individual_utility.mean,
                    half_width: e.individual_utility.half_width,
                    mean_field: mf,
                    nonstationary: e.nonstationary,
                })
                .collect();
            let max_deviation = points.iter().map(|p| (p.simulated - p.mean_field).abs()).fold(0.0, f64::max);
            let epsilon = 2.0 * max_deviation;
            let at_eq = points[qe_index].simulated;
            let max_unilateral_gain = points.iter().map(|p| (p.q - qe) * at_eq).fold(0.0, f64::max);
            let population_sandwich = points.iter().all(|p| at_eq > p.simulated - epsilon);
            let sandwich_where_dominated = points
                .iter()
                .filter(|p| p.mean_field <= mean_field[qe_index])
                .all(|p| at_eq > p.simulated - epsilon);
            EpsNashRow {
                n_queues: n,
                max_deviation,
                epsilon,
                utility_at_equilibrium: at_eq,
                max_unilateral_gain,
                population_sandwich,
                sandwich_where_dominated,
                points,
            }
        })
        .collect();
    Ok(EpsNashReport { equilibrium: qe, rows })
}
