//! Weighted-L1 Lyapunov function `V = sum w_i |eps_i|` for the mean-field
//! fixed point.
//!
//! With `r = mu / (lambda q)` the weights have to satisfy
//!
//! ```text
//! w_1 < w_0,    w_{i+1} < w_i + r (w_i - w_{i-1})    (i >= 1)
//! ```
//!
//! so the gaps `w_i - w_{i+1}` grow at least geometrically with ratio `r`.
//! Over `K` levels the first gap is therefore about `r^-K` times the last
//! one. The weights are built on a dyadic grid, `w_i = 1 - S_i 2^-m` with
//! integer partial sums `S_i`, and every inequality holds with a margin of
//! at least one grid unit, well above double-precision rounding. A tail weight continues the sequence one level further for the
//! lumped tail bucket. The largest gap is also kept below `1 / (2 r)`, which
//! makes every term of `dV/dt` negative whatever the signs of neighbouring
//! deviations are, not only when they agree.
//!
//! Without dedicated arrivals (`q = 0`, `r` infinite) deviations only move
//! downwards and strictly increasing weights do the job instead.

use super::{
    boundary_mask, fixed_point_like, Derivative, Dynamics, ErrorVector, OccupancyMeasure,
};
use crate::error::{Error, Result};
use crate::model::{ModelParams, StationaryDist, Strategy};

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovWeights {
    /// `w_0 ..= w_K`, with `w_0 = 1`.
    pub w: Vec<f64>,
    /// Weight of the tail bucket beyond `K`.
    pub tail: f64,
}

impl LyapunovWeights {
    pub fn k_max(&self) -> usize {
        self.w.len() - 1
    }

    fn extended(&self) -> impl Iterator<Item = f64> + '_ {
        self.w.iter().copied().chain(std::iter::once(self.tail))
    }
}

/// Checks positivity and both weight inequalities (including the step
/// into the tail weight) for the ratio `r = mu / (lambda q)`. An infinite
/// ratio requires strictly increasing weights.
pub fn check_weight_inequalities(weights: &LyapunovWeights, ratio: f64) -> std::result::Result<(), String> {
    let w: Vec<f64> = weights.extended().collect();
    if let Some((i, x)) = w.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(format!("w_{i} = {x} is not positive"));
    }
    if ratio == f64::INFINITY {
        return match w.windows(2).position(|p| !(p[1] > p[0])) {
            Some(i) => Err(format!("w_{} = {} is not above w_{i} = {}", i + 1, w[i + 1], w[i])),
            None => Ok(()),
        };
    }
    if w.len() >= 2 && !(w[1] < w[0]) {
        return Err(format!("w_1 = {} is not below w_0 = {}", w[1], w[0]));
    }
    for i in 1..w.len() - 1 {
        let bound = w[i] + ratio * (w[i] - w[i - 1]);
        if !(w[i + 1] < bound) {
            return Err(format!("w_{} = {} is not below {bound}", i + 1, w[i + 1]));
        }
    }
    Ok(())
}

/// Constructs weights for levels `0..=k_max` of the dynamics at strategy
/// `q`.
pub fn lyapunov_weights(params: &ModelParams, strategy: Strategy, k_max: usize) -> Result<LyapunovWeights> {
    let arrival = params.lambda * strategy.value();
    if arrival == 0.0 {
        return Ok(increasing_weights(k_max));
    }
    let ratio = params.mu / arrival;
    let unrepresentable = || Error::WeightsUnrepresentable { levels: k_max + 1, ratio };
    const EXACT: f64 = 9_007_199_254_740_992.0; // 2^53

    // Integer gap sizes G_1 ..= G_{K+1} with G_{i+1} >= r G_i + 1, so every
    // inequality holds with a margin of one grid unit.
    let mut gaps = Vec::with_capacity(k_max + 1);
    let mut g = 1.0f64;
    gaps.push(g);
    for _ in 0..k_max {
        let scaled = ratio * g;
        if scaled + 2.0 >= EXACT {
            return Err(unrepresentable());
        }
        let mut next = scaled.floor() + 1.0;
        while next - scaled < 1.0 {
            next += 1.0;
        }
        g = next;
        gaps.push(g);
    }
    let sums: Vec<f64> = gaps
        .iter()
        .scan(0.0, |s, g| {
            *s += g;
            Some(*s)
        })
        .collect();
    let total = *sums.last().expect("at least one gap");
    if total >= EXACT {
        return Err(unrepresentable());
    }

    // Largest dyadic unit keeping the weights in [1/2, 1] and r * gap <= 1/2.
    let largest_gap = g;
    let mut unit = 0.5f64;
    let mut m = 1;
    while total * unit > 0.5 || ratio * largest_gap * unit > 0.5 {
        unit *= 0.5;
        m += 1;
        // Rounding in the inequality checks stays below 2^-53.
        if m > 52 {
            return Err(unrepresentable());
        }
    }
    let mut w = Vec::with_capacity(k_max + 1);
    w.push(1.0);
    w.extend(sums[..k_max].iter().map(|s| 1.0 - s * unit));
    let weights = LyapunovWeights { w, tail: 1.0 - total * unit };
    debug_assert!(check_weight_inequalities(&weights, ratio).is_ok());
    Ok(weights)
}

/// `w_i = 1 + i 2^-m` with `(K + 1) 2^-m <= 1`.
fn increasing_weights(k_max: usize) -> LyapunovWeights {
    let mut unit = 1.0f64;
    while (k_max + 1) as f64 * unit > 1.0 {
        unit *= 0.5;
    }
    LyapunovWeights {
        w: (0..=k_max).map(|i| 1.0 + i as f64 * unit).collect(),
        tail: 1.0 + (k_max + 1) as f64 * unit,
    }
}

/// `V = sum w_i |eps_i| + w_tail |eps_tail|`.
pub fn lyapunov_function(weights: &LyapunovWeights, eps: &ErrorVector) -> f64 {
    debug_assert_eq!(weights.w.len(), eps.eps.len());
    weights.w.iter().zip(&eps.eps).map(|(w, e)| w * e.abs()).sum::<f64>()
        + weights.tail * eps.tail.abs()
}

fn right_sign(e: f64, de: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else if de > 0.0 {
        1.0
    } else if de < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn derivative_along(
    weights: &LyapunovWeights,
    eps: &ErrorVector,
    field: &Derivative,
) -> f64 {
    let body: f64 = weights
        .w
        .iter()
        .zip(&eps.eps)
        .zip(&field.du)
        .map(|((w, &e), &de)| w * right_sign(e, de) * de)
        .sum();
    body + weights.tail * right_sign(eps.tail, field.dtail) * field.dtail
}

/// Right-hand derivative of `V` along the mean-field flow at `state`.
///
/// Levels with `eps_i = 0` contribute `w_i |d eps_i / dt|`. Empty levels use
/// shortest-queue routing, so the derivative is defined for every state.
pub fn lyapunov_derivative(
    params: &ModelParams,
    strategy: Strategy,
    weights: &LyapunovWeights,
    state: &OccupancyMeasure,
) -> Result<f64> {
    if weights.k_max() != state.k_max() {
        return Err(Error::InvalidParameter(format!(
            "weights cover {} levels but the state has {}",
            weights.k_max() + 1,
            state.k_max() + 1
        )));
    }
    let pi: StationaryDist = fixed_point_like(params, strategy, state)?;
    let eps = ErrorVector::new(state, &pi);
    let dynamics = Dynamics::new(params, strategy);
    let mut du = vec![0.0; state.u().len()];
    let dtail = dynamics.eval(state.u(), state.tail_mass(), &boundary_mask(state.u()), &mut du);
    Ok(derivative_along(weights, &eps, &Derivative { du, dtail }))
}
