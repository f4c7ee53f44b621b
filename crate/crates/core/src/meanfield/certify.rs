//! Numerical stability certificate for the mean-field fixed point.
//!
//! Trajectories start from random occupancy measures and are integrated
//! with a fixed truncation. Along every accepted step the certificate
//! records `dV/dt` for the weighted-L1 function `V`, checks that `V` does
//! not increase and that the trajectory ends close to `pi`.
//!
//! The sign conditions are required at states with `u_0 > 0`, where the
//! deviations follow the linear birth-death dynamics that the weights are
//! built for. While level 0 is empty the smart stream is routed to longer
//! queues and `V` can grow for a while; such states are counted and their
//! largest `dV/dt` is reported separately.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use super::lyapunov::derivative_along;
use super::{
    integrate_with, lyapunov_function, lyapunov_weights, vector_field_with_boundary, ErrorVector,
    IntegrateOptions, LyapunovWeights, OccupancyMeasure, Trajectory, EMPTY_LEVEL,
};
use crate::csvio::{fmt_num, Table};
use crate::error::{Error, Result};
use crate::model::{auto_truncation, stationary_distribution, ModelParams, StationaryDist, Strategy, TrafficIntensities};
use crate::par::{self, Execution};

/// Deviations below this L1 size count as converged; `dV/dt` is not
/// required to be negative there.
pub const CONVERGED_DISTANCE: f64 = 1e-10;

/// Allowed increase of `V` between accepted steps.
pub const MONOTONE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyOptions {
    /// Truncation level; defaults to the automatic level plus 8, lowered
    /// until the weights are representable.
    pub k_max: Option<usize>,
    pub dt_max: f64,
    /// Required final L1 distance to `pi`.
    pub tolerance: f64,
    /// Random initial states put mass on levels `0..=support`.
    pub support: usize,
    pub execution: Execution,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { k_max: None, dt_max: 0.5, tolerance: 1e-6, support: 8, execution: Execution::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    pub trajectories_checked: usize,
    /// Largest `dV/dt` at states with `u_0 > 0` away from the fixed point;
    /// `-inf` if none.
    pub max_dvdt_observed: f64,
    /// `-max_dvdt_observed`, positive for a valid certificate.
    pub min_gap: f64,
    /// Largest `(dV/dt) / V` seen away from the fixed point, the slowest
    /// relative decay.
    pub max_relative_dvdt: f64,
    pub final_distances: Vec<f64>,
    /// `V` never increases between consecutive states with `u_0 > 0`.
    pub v_monotone: bool,
    /// Sampled states with an empty level 0.
    pub boundary_points: usize,
    /// Largest `dV/dt` among those; `-inf` if none.
    pub max_dvdt_boundary: f64,
    pub valid: bool,
    pub k_max: usize,
    pub weights: LyapunovWeights,
}

pub fn certify_stability(
    params: &ModelParams,
    strategy: Strategy,
    n_initials: usize,
    t_end: f64,
    seed: u64,
) -> Result<StabilityCertificate> {
    certify_stability_with(params, strategy, n_initials, t_end, seed, &CertifyOptions::default())
}

/// Truncation level and weights used by the certificate.
pub fn certificate_weights(
    params: &ModelParams,
    strategy: Strategy,
    k_max: Option<usize>,
) -> Result<(usize, LyapunovWeights)> {
    let sigma = TrafficIntensities::new(params, strategy)?.sigma;
    if let Some(k) = k_max {
        return Ok((k, lyapunov_weights(params, strategy, k)?));
    }
    let mut k = auto_truncation(sigma) + 8;
    loop {
        match lyapunov_weights(params, strategy, k) {
            Ok(w) => return Ok((k, w)),
            Err(Error::WeightsUnrepresentable { .. }) if k > 1 => k -= 1,
            Err(e) => return Err(e),
        }
    }
}

pub fn certify_stability_with(
    params: &ModelParams,
    strategy: Strategy,
    n_initials: usize,
    t_end: f64,
    seed: u64,
    opts: &CertifyOptions,
) -> Result<StabilityCertificate> {
    if !(opts.tolerance > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", opts.tolerance)));
    }
    let (k_max, weights) = certificate_weights(params, strategy, opts.k_max)?;
    let pi = stationary_distribution(params, strategy, k_max)?;
    let support = opts.support.min(k_max);
    let integ = IntegrateOptions { dt_max: opts.dt_max, auto_extend: false, ..Default::default() };

    let indices: Vec<usize> = (0..n_initials).collect();
    let runs = par::map(opts.execution, &indices, |_, &i| -> Result<RunSummary> {
        let start = initial_state(i, seed, support, k_max);
        let traj = integrate_with(params, strategy, &start, t_end, &integ)?;
        Ok(summarise(params, strategy, &weights, &pi, &traj))
    });

    let mut cert = StabilityCertificate {
        trajectories_checked: 0,
        max_dvdt_observed: f64::NEG_INFINITY,
        min_gap: f64::INFINITY,
        max_relative_dvdt: f64::NEG_INFINITY,
        final_distances: Vec::with_capacity(n_initials),
        v_monotone: true,
        boundary_points: 0,
        max_dvdt_boundary: f64::NEG_INFINITY,
        valid: true,
        k_max,
        weights: weights.clone(),
    };
    for run in runs {
        let run = run?;
        cert.trajectories_checked += 1;
        cert.max_dvdt_observed = cert.max_dvdt_observed.max(run.max_dvdt);
        cert.max_relative_dvdt = cert.max_relative_dvdt.max(run.max_relative);
        cert.v_monotone &= run.v_monotone;
        cert.boundary_points += run.boundary_points;
        cert.max_dvdt_boundary = cert.max_dvdt_boundary.max(run.max_dvdt_boundary);
        cert.final_distances.push(run.final_distance);
    }
    cert.min_gap = -cert.max_dvdt_observed;
    cert.valid = cert.v_monotone
        && cert.max_dvdt_observed < 0.0
        && cert.final_distances.iter().all(|&d| d < opts.tolerance);
    Ok(cert)
}

struct RunSummary {
    max_dvdt: f64,
    max_relative: f64,
    v_monotone: bool,
    boundary_points: usize,
    max_dvdt_boundary: f64,
    final_distance: f64,
}

struct PointDiagnostics {
    distance: f64,
    v: f64,
    dvdt: f64,
}

fn diagnose(
    params: &ModelParams,
    strategy: Strategy,
    weights: &LyapunovWeights,
    pi: &StationaryDist,
    state: &OccupancyMeasure,
) -> PointDiagnostics {
    let eps = ErrorVector::new(state, pi);
    let field = vector_field_with_boundary(params, strategy, state);
    PointDiagnostics {
        distance: state.l1_distance(pi),
        v: lyapunov_function(weights, &eps),
        dvdt: derivative_along(weights, &eps, &field),
    }
}

fn summarise(
    params: &ModelParams,
    strategy: Strategy,
    weights: &LyapunovWeights,
    pi: &StationaryDist,
    traj: &Trajectory,
) -> RunSummary {
    let mut out = RunSummary {
        max_dvdt: f64::NEG_INFINITY,
        max_relative: f64::NEG_INFINITY,
        v_monotone: true,
        boundary_points: 0,
        max_dvdt_boundary: f64::NEG_INFINITY,
        final_distance: 0.0,
    };
    // V at the previous state if that state was interior.
    let mut previous_v: Option<f64> = None;
    for pt in &traj.points {
        let d = diagnose(params, strategy, weights, pi, &pt.state);
        out.final_distance = d.distance;
        if pt.state.u()[0] <= EMPTY_LEVEL {
            out.boundary_points += 1;
            out.max_dvdt_boundary = out.max_dvdt_boundary.max(d.dvdt);
            previous_v = None;
            continue;
        }
        if d.distance > CONVERGED_DISTANCE {
            out.max_dvdt = out.max_dvdt.max(d.dvdt);
            out.max_relative = out.max_relative.max(d.dvdt / d.v);
        }
        if previous_v.is_some_and(|v| d.v > v + MONOTONE_SLACK) {
            out.v_monotone = false;
        }
        previous_v = Some(d.v);
    }
    out
}

/// Initial state number `i`: the empty system, all queues at the top of
/// the support, then random measures.
pub fn initial_state(i: usize, seed: u64, support: usize, k_max: usize) -> OccupancyMeasure {
    match i {
        0 => OccupancyMeasure::point_mass(0, k_max),
        1 => OccupancyMeasure::point_mass(support.min(k_max), k_max),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut u = vec![0.0; k_max + 1];
            for x in u.iter_mut().take(support + 1) {
                *x = Exp1.sample(&mut rng);
            }
            if rng.random_bool(0.25) {
                u[0] = 0.0;
            }
            let total: f64 = u.iter().sum();
            if total == 0.0 {
                return OccupancyMeasure::point_mass(support.min(k_max), k_max);
            }
            for x in &mut u {
                *x /= total;
            }
            let drift: f64 = u.iter().sum::<f64>() - 1.0;
            let top = u.iter().rposition(|&x| x > 0.0).expect("nonzero measure");
            u[top] -= drift;
            OccupancyMeasure::new(u, 0.0).expect("normalised random measure")
        }
    }
}

/// Tabulates a fixed-truncation trajectory: time, occupancy levels, L1
/// distance to `pi`, `V` and `dV/dt`.
pub fn trajectory_table(
    params: &ModelParams,
    strategy: Strategy,
    weights: &LyapunovWeights,
    traj: &Trajectory,
) -> Result<Table> {
    let k_max = weights.k_max();
    if traj.points.iter().any(|p| p.state.k_max() != k_max) {
        return Err(Error::InvalidParameter(
            "trajectory truncation does not match the weights".into(),
        ));
    }
    let pi = stationary_distribution(params, strategy, k_max)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..=k_max).map(|k| format!("u_{k}")));
    header.extend(["l1_distance_to_pi", "V", "dVdt"].map(String::from));
    let comment = format!(
        "mean-field trajectory at q = {}; t: time; u_k: fraction of queues with k customers \
         (k = 0..{k_max}); l1_distance_to_pi: L1 distance to the fixed point including the tail; \
         V: weighted L1 Lyapunov function; dVdt: its time derivative",
        fmt_num(strategy.value())
    );
    let mut table = Table::new(comment, header);
    for pt in &traj.points {
        let d = diagnose(params, strategy, weights, &pi, &pt.state);
        let mut row = vec![fmt_num(pt.t)];
        row.extend(pt.state.u().iter().map(|&x| fmt_num(x)));
        row.extend([fmt_num(d.distance), fmt_num(d.v), fmt_num(d.dvdt)]);
        table.push(row);
    }
    Ok(table)
}
