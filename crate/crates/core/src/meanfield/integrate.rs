//! Adaptive Dormand–Prince 5(4) integration of the mean-field dynamics.
//!
//! The set of empty levels is frozen at the start of every step so the field
//! is smooth within a step. A step that would push a level below zero is
//! shortened until the level lands on zero, after which the level is
//! treated as empty by the next step.

use super::{boundary_mask, Dynamics, OccupancyMeasure, MASS_TOLERANCE};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Strategy, TrafficIntensities};

/// Tail mass that triggers an automatic increase of the truncation level.
pub const TAIL_EXTENSION_THRESHOLD: f64 = 1e-9;

/// Negative overshoot that is clamped to zero instead of rejecting a step.
const NEGATIVE_CLAMP: f64 = 1e-13;

/// Largest component that may be zeroed when it is about to empty.
const SNAP_LEVEL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub dt_max: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Grow the truncation level when the tail bucket exceeds
    /// [`TAIL_EXTENSION_THRESHOLD`].
    pub auto_extend: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { dt_max: 0.5, rtol: 1e-10, atol: 1e-14, auto_extend: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub state: OccupancyMeasure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Accepted steps, starting with the initial state.
    pub points: Vec<TrajectoryPoint>,
    /// Integrated flow `lambda q u_K` from the last stored level into the tail.
    pub tail_inflow: f64,
    /// Number of automatic truncation increases.
    pub extensions: usize,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory holds the initial state")
    }
}

pub fn integrate(
    params: &ModelParams,
    strategy: Strategy,
    initial: &OccupancyMeasure,
    t_end: f64,
    dt_max: f64,
) -> Result<Trajectory> {
    integrate_with(params, strategy, initial, t_end, &IntegrateOptions { dt_max, ..Default::default() })
}

// Dormand–Prince tableau; the field is autonomous so the nodes are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// State vector layout: `u_0..=u_K` followed by the tail bucket.
struct Stepper {
    dynamics: Dynamics,
    stages: Vec<Vec<f64>>,
    scratch: Vec<f64>,
}

impl Stepper {
    fn new(dynamics: Dynamics, len: usize) -> Self {
        Self { dynamics, stages: vec![vec![0.0; len]; 7], scratch: vec![0.0; len] }
    }

    fn resize(&mut self, len: usize) {
        for s in &mut self.stages {
            s.resize(len, 0.0);
        }
        self.scratch.resize(len, 0.0);
    }

    fn field(dynamics: &Dynamics, y: &[f64], boundary: &[bool], out: &mut [f64]) {
        let n = y.len() - 1;
        out[n] = dynamics.eval(&y[..n], y[n], boundary, &mut out[..n]);
    }

    /// One trial step; returns the fifth-order solution and the error norm.
    #[allow(clippy::needless_range_loop)]
    fn try_step(&mut self, y: &[f64], dt: f64, boundary: &[bool], rtol: f64, atol: f64) -> (Vec<f64>, f64) {
        let n = y.len();
        for s in 0..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, a) in A[s].iter().enumerate().take(s) {
                    acc += dt * a * self.stages[j][i];
                }
                self.scratch[i] = acc;
            }
            Self::field(&self.dynamics, &self.scratch, boundary, &mut self.stages[s]);
        }
        let mut y5 = vec![0.0; n];
        let mut err = 0.0f64;
        for i in 0..n {
            let mut hi = 0.0;
            let mut lo = 0.0;
            for s in 0..7 {
                hi += B5[s] * self.stages[s][i];
                lo += B4[s] * self.stages[s][i];
            }
            y5[i] = y[i] + dt * hi;
            let scale = atol + rtol * y[i].abs().max(y5[i].abs());
            err = err.max((dt * (hi - lo)).abs() / scale);
        }
        (y5, err)
    }
}

/// Integrates from `initial` up to `t_end`, recording every accepted step.
pub fn integrate_with(
    params: &ModelParams,
    strategy: Strategy,
    initial: &OccupancyMeasure,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidParameter(format!("t_end must be positive, got {t_end}")));
    }
    if !(opts.dt_max > 0.0) {
        return Err(Error::InvalidParameter(format!("dt_max must be positive, got {}", opts.dt_max)));
    }
    let sigma = TrafficIntensities::unchecked(params, strategy).sigma;
    let dynamics = Dynamics::new(params, strategy);

    let mut y: Vec<f64> = initial.u().to_vec();
    y.push(initial.tail_mass());
    let mut stepper = Stepper::new(dynamics, y.len());
    let mut points = vec![TrajectoryPoint { t: 0.0, state: initial.clone() }];
    let mut tail_inflow = 0.0;
    let mut extensions = 0;

    let mut t = 0.0;
    let mut dt = opts.dt_max.min(0.01);
    let min_dt = 1e-14 * t_end.max(1.0);
    while t < t_end {
        let k_max = y.len() - 2;
        if opts.auto_extend && y[k_max + 1] > TAIL_EXTENSION_THRESHOLD {
            extend(&mut y, sigma);
            stepper.resize(y.len());
            extensions += 1;
            continue;
        }
        let boundary = boundary_mask(&y[..y.len() - 1]);
        dt = dt.min(opts.dt_max).min(t_end - t);
        let (mut y_new, err) = stepper.try_step(&y, dt, &boundary, opts.rtol, opts.atol);
        if err > 1.0 {
            dt *= (0.9 * err.powf(-0.2)).max(0.2);
            if dt < min_dt {
                return Err(Error::Stiffness { t, step: dt });
            }
            continue;
        }
        // Shorten steps that overshoot an emptying level.
        if let Some(frac) = overshoot_fraction(&y, &y_new) {
            let shorter = dt * frac;
            if shorter >= min_dt {
                dt = shorter;
                continue;
            }
            // Levels that would empty within the minimum step are emptied now
            // and switch to boundary routing.
            if snap_emptying(&mut y, &y_new) {
                continue;
            }
        }
        for x in y_new.iter_mut() {
            if *x < 0.0 {
                if *x < -NEGATIVE_CLAMP && dt >= min_dt * 2.0 {
                    return Err(Error::Stiffness { t, step: dt });
                }
                *x = 0.0;
            }
        }
        let total: f64 = y_new.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Stiffness { t, step: dt });
        }
        for x in y_new.iter_mut() {
            *x /= total;
        }
        let k_max = y.len() - 2;
        tail_inflow += 0.5 * dt * dynamics.arrival * (y[k_max] + y_new[k_max]);
        y = y_new;
        t += dt;
        let tail = y[y.len() - 1];
        points.push(TrajectoryPoint {
            t,
            state: OccupancyMeasure::from_parts(y[..y.len() - 1].to_vec(), tail),
        });
        dt *= (0.9 * err.max(1e-10).powf(-0.2)).min(5.0);
    }
    debug_assert!((points.last().unwrap().state.total_mass() - 1.0).abs() < MASS_TOLERANCE);
    Ok(Trajectory { points, tail_inflow, extensions })
}

/// When a step drives some component negative beyond the clamp tolerance,
/// the fraction of the step after which the first such component reaches
/// zero (linear interpolation), slightly shortened.
fn overshoot_fraction(y: &[f64], y_new: &[f64]) -> Option<f64> {
    let mut frac: Option<f64> = None;
    for (&a, &b) in y.iter().zip(y_new) {
        if b < -NEGATIVE_CLAMP && a > 0.0 {
            let f = a / (a - b);
            frac = Some(frac.map_or(f, |g: f64| g.min(f)));
        } else if b < -NEGATIVE_CLAMP {
            // Already empty and still decreasing: only a shorter step helps.
            frac = Some(frac.map_or(0.5, |g: f64| g.min(0.5)));
        }
    }
    frac.map(|f| (f * 0.999).clamp(1e-6, 0.999))
}

/// Zeroes nearly empty components that the trial step drove negative and
/// renormalises. Returns whether anything changed.
fn snap_emptying(y: &mut [f64], y_new: &[f64]) -> bool {
    let mut changed = false;
    for (a, &b) in y.iter_mut().zip(y_new) {
        if b < -NEGATIVE_CLAMP && *a > 0.0 && *a <= SNAP_LEVEL {
            *a = 0.0;
            changed = true;
        }
    }
    if changed {
        let total: f64 = y.iter().sum();
        y.iter_mut().for_each(|x| *x /= total);
    }
    changed
}

/// Moves the tail bucket onto new explicit levels, keeping its geometric
/// shape.
fn extend(y: &mut Vec<f64>, sigma: f64) {
    let k_max = y.len() - 2;
    let added = (k_max / 2).max(8);
    let tail = y.pop().expect("tail entry");
    let mut level = tail * (1.0 - sigma);
    for _ in 0..added {
        y.push(level);
        level *= sigma;
    }
    y.push(tail * sigma.powi(added as i32));
}
