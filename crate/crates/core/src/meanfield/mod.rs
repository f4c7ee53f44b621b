//! Deterministic mean-field dynamics of the occupancy measure.
//!
//! While some queues are empty (`u_0 > 0`) the smart stream only ever hits
//! empty queues and the occupancy measure follows
//!
//! ```text
//! du_0/dt = mu u_1 - lambda q u_0 - lambda_s
//! du_1/dt = lambda q u_0 + lambda_s - (lambda q + mu) u_1 + mu u_2
//! du_k/dt = lambda q u_{k-1} - (lambda q + mu) u_k + mu u_{k+1}     (k >= 2)
//! ```
//!
//! whose unique fixed point is the geometric-tail law of
//! [`crate::model::stationary_distribution`]. Written in deviations
//! `eps = u - pi` this is the linear birth-death generator with birth rate
//! `lambda q` and death rate `mu`.
//!
//! Levels beyond the truncation `K` are lumped into a tail bucket whose
//! internal shape is assumed geometric with ratio `sigma`, so level `K + 1`
//! holds `(1 - sigma) * tail`. With this closure `pi` (plus its analytic
//! tail) stays an exact fixed point of the truncated system.
//!
//! When the lowest levels are empty, smart customers go to the shortest
//! occupied queues. An empty level can only pass on as much smart flow as
//! queues are entering it; the remainder moves up to the next level
//! ("water-filling"). [`vector_field_with_boundary`] implements this;
//! [`vector_field`] is the smooth field and refuses states with `u_0 <= 0`.

mod certify;
mod integrate;
mod lyapunov;

pub use certify::{
    certificate_weights, certify_stability, certify_stability_with, initial_state, trajectory_table,
    CertifyOptions, StabilityCertificate,
};
pub use integrate::{integrate, integrate_with, IntegrateOptions, Trajectory, TrajectoryPoint};
pub use lyapunov::{
    check_weight_inequalities, lyapunov_derivative, lyapunov_function, lyapunov_weights,
    LyapunovWeights,
};

use crate::error::{Error, Result};
use crate::model::{self, ModelParams, StationaryDist, Strategy, TrafficIntensities};

/// Allowed deviation of the total mass from one.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Fractions `u_k` of queues holding exactly `k` customers, `k = 0..=K`,
/// plus the mass of all longer queues.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    u: Vec<f64>,
    tail_mass: f64,
}

impl OccupancyMeasure {
    pub fn new(u: Vec<f64>, tail_mass: f64) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::InvalidParameter("occupancy measure needs at least level 0".into()));
        }
        if let Some((k, &x)) = u.iter().enumerate().find(|(_, &x)| !(0.0..=1.0).contains(&x)) {
            return Err(Error::InvalidParameter(format!("u_{k} = {x} is outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&tail_mass) {
            return Err(Error::InvalidParameter(format!("tail mass {tail_mass} is outside [0, 1]")));
        }
        let total: f64 = u.iter().sum::<f64>() + tail_mass;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidParameter(format!("occupancy mass is {total}, expected 1")));
        }
        Ok(Self { u, tail_mass })
    }

    /// All queues hold exactly `level` customers.
    pub fn point_mass(level: usize, k_max: usize) -> Self {
        let mut u = vec![0.0; k_max.max(level) + 1];
        u[level] = 1.0;
        Self { u, tail_mass: 0.0 }
    }

    pub fn from_stationary(pi: &StationaryDist) -> Self {
        Self { u: pi.probs().to_vec(), tail_mass: pi.tail_mass() }
    }

    pub(crate) fn from_parts(u: Vec<f64>, tail_mass: f64) -> Self {
        Self { u, tail_mass }
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn k_max(&self) -> usize {
        self.u.len() - 1
    }

    pub fn total_mass(&self) -> f64 {
        self.u.iter().sum::<f64>() + self.tail_mass
    }

    /// `sum |u_k - pi_k|` including the tail bucket.
    pub fn l1_distance(&self, pi: &StationaryDist) -> f64 {
        let eps = ErrorVector::new(self, pi);
        eps.eps.iter().map(|e| e.abs()).sum::<f64>() + eps.tail.abs()
    }
}

/// Deviation `eps_k = u_k - pi_k` of an occupancy measure from the fixed
/// point, evaluated on the levels of the measure.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorVector {
    pub eps: Vec<f64>,
    pub tail: f64,
}

impl ErrorVector {
    pub fn new(state: &OccupancyMeasure, pi: &StationaryDist) -> Self {
        let k_max = state.k_max();
        let eps = state.u.iter().enumerate().map(|(k, &x)| x - pi.pmf(k)).collect();
        let pi_tail = pi.rho() * pi.sigma().powi(k_max as i32);
        let pi_tail = if k_max == 0 { pi.rho() } else { pi_tail };
        Self { eps, tail: state.tail_mass - pi_tail }
    }
}

/// Time derivative of an [`OccupancyMeasure`].
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub du: Vec<f64>,
    pub dtail: f64,
}

impl Derivative {
    pub fn max_abs(&self) -> f64 {
        self.du.iter().fold(self.dtail.abs(), |m, x| m.max(x.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.du.iter().sum::<f64>() + self.dtail
    }
}

/// Rates of the mean-field dynamics at a fixed strategy.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dynamics {
    pub arrival: f64,
    pub smart: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl Dynamics {
    pub fn new(params: &ModelParams, strategy: Strategy) -> Self {
        let t = TrafficIntensities::unchecked(params, strategy);
        Self {
            arrival: params.lambda * strategy.value(),
            smart: params.lambda_s,
            mu: params.mu,
            sigma: t.sigma,
        }
    }

    /// Evaluates the field into `du`/return value (tail derivative).
    /// `boundary[k]` marks empty levels that may only pass on the smart
    /// flow they receive.
    pub fn eval(&self, u: &[f64], tail: f64, boundary: &[bool], du: &mut [f64]) -> f64 {
        let k_max = u.len() - 1;
        let (a, mu) = (self.arrival, self.mu);
        let above_k = tail * (1.0 - self.sigma);
        let up = |k: usize| if k < k_max { u[k + 1] } else { above_k };

        du[0] = mu * up(0) - a * u[0];
        for k in 1..=k_max {
            du[k] = a * u[k - 1] - (a + mu) * u[k] + mu * up(k);
        }
        let mut dtail = a * u[k_max] - mu * above_k;

        let mut remaining = self.smart;
        let mut passed_on = 0.0;
        for k in 0..=k_max {
            if remaining <= 0.0 {
                break;
            }
            let absorbed = if boundary[k] {
                let entering = mu * up(k) + if k > 0 { a * u[k - 1] } else { 0.0 } + passed_on;
                remaining.min(entering.max(0.0))
            } else {
                remaining
            };
            du[k] -= absorbed;
            if k < k_max {
                du[k + 1] += absorbed;
            } else {
                dtail += absorbed;
            }
            remaining -= absorbed;
            passed_on = absorbed;
        }
        dtail
    }
}

/// Levels holding at most this mass count as empty for routing.
pub const EMPTY_LEVEL: f64 = 1e-13;

pub(crate) fn boundary_mask(u: &[f64]) -> Vec<bool> {
    u.iter().map(|&x| x <= EMPTY_LEVEL).collect()
}

/// The smooth mean-field field. Requires `u_0 > 0`.
pub fn vector_field(
    params: &ModelParams,
    strategy: Strategy,
    state: &OccupancyMeasure,
) -> Result<Derivative> {
    if state.u[0] <= 0.0 {
        return Err(Error::BoundaryRegime { u0: state.u[0] });
    }
    let dynamics = Dynamics::new(params, strategy);
    let mut du = vec![0.0; state.u.len()];
    let dtail = dynamics.eval(&state.u, state.tail_mass, &vec![false; state.u.len()], &mut du);
    Ok(Derivative { du, dtail })
}

/// The field with shortest-queue routing at empty levels; defined on every
/// occupancy measure and equal to [`vector_field`] whenever `u_0 > EMPTY_LEVEL`.
pub fn vector_field_with_boundary(
    params: &ModelParams,
    strategy: Strategy,
    state: &OccupancyMeasure,
) -> Derivative {
    let dynamics = Dynamics::new(params, strategy);
    let mut du = vec![0.0; state.u.len()];
    let dtail = dynamics.eval(&state.u, state.tail_mass, &boundary_mask(&state.u), &mut du);
    Derivative { du, dtail }
}

/// Fixed point at the truncation level of `state`.
pub(crate) fn fixed_point_like(
    params: &ModelParams,
    strategy: Strategy,
    state: &OccupancyMeasure,
) -> Result<StationaryDist> {
    model::stationary_distribution(params, strategy, state.k_max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StationaryDist;
    use rand::{Rng, SeedableRng};

    fn fig1() -> ModelParams {
        ModelParams::new(0.5, 0.2, 1.3, 3.0, 1.1).unwrap()
    }

    #[test]
    fn fixed_point_residual() {
        for q in [1.0, 0.6, 0.0] {
            let s = Strategy::new(q).unwrap();
            let pi = StationaryDist::auto(&fig1(), s).unwrap();
            let d = vector_field(&fig1(), s, &OccupancyMeasure::from_stationary(&pi)).unwrap();
            assert!(d.max_abs() < 1e-12, "q = {q}: residual {}", d.max_abs());
        }
    }

    #[test]
    fn reduces_to_mm1_forward_equations() {
        let p = ModelParams::new(0.5, 0.0, 1.3, 3.0, 1.1).unwrap();
        let s = Strategy::new(0.8).unwrap();
        let u = vec![0.5, 0.2, 0.15, 0.1, 0.05];
        let state = OccupancyMeasure::new(u.clone(), 0.0).unwrap();
        let d = vector_field(&p, s, &state).unwrap();
        let a = 0.4;
        let mu = 1.3;
        assert!((d.du[0] - (mu * u[1] - a * u[0])).abs() < 1e-15);
        for k in 1..4 {
            let expected = a * u[k - 1] - (a + mu) * u[k] + mu * u[k + 1];
            assert!((d.du[k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn error_dynamics_are_the_birth_death_generator() {
        let p = fig1();
        let s = Strategy::JOIN;
        let pi = StationaryDist::auto(&p, s).unwrap();
        let base = OccupancyMeasure::from_stationary(&pi);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let k = pi.k_max();
        let mut eps = vec![0.0; k + 1];
        for e in eps.iter_mut().take(8) {
            *e = rng.random_range(-1e-3..1e-3);
        }
        let shift: f64 = eps.iter().sum();
        eps[0] -= shift;
        let u: Vec<f64> = base.u().iter().zip(&eps).map(|(x, e)| x + e).collect();
        let d = vector_field(&p, s, &OccupancyMeasure::from_parts(u, base.tail_mass())).unwrap();
        let (a, mu) = (0.5, 1.3);
        assert!((d.du[0] - (-a * eps[0] + mu * eps[1])).abs() < 1e-8);
        for i in 1..k {
            let expected = a * eps[i - 1] - (a + mu) * eps[i] + mu * eps[i + 1];
            assert!((d.du[i] - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn field_conserves_mass() {
        let p = fig1();
        let state = OccupancyMeasure::new(vec![0.3, 0.3, 0.2, 0.1, 0.05], 0.05).unwrap();
        let d = vector_field(&p, Strategy::JOIN, &state).unwrap();
        assert!(d.sum().abs() < 1e-15);
    }

    #[test]
    fn empty_level_zero_is_a_boundary_error() {
        let state = OccupancyMeasure::point_mass(5, 10);
        assert!(matches!(
            vector_field(&fig1(), Strategy::JOIN, &state),
            Err(Error::BoundaryRegime { .. })
        ));
    }

    #[test]
    fn boundary_routing_sends_smart_flow_to_shortest_queues() {
        let p = fig1();
        let state = OccupancyMeasure::point_mass(5, 10);
        let d = vector_field_with_boundary(&p, Strategy::JOIN, &state);
        // Nothing enters levels 0..=3; level 4 is being created by services
        // at rate 1.3 and those queues are the shortest, so they absorb the
        // whole smart stream.
        assert_eq!(&d.du[..4], &[0.0; 4]);
        assert!((d.du[4] - (1.3 - 0.2)).abs() < 1e-15);
        assert!((d.du[5] - (-(0.5 + 1.3) + 0.2)).abs() < 1e-15);
        assert!((d.du[6] - 0.5).abs() < 1e-15);
        assert!(d.sum().abs() < 1e-15);

        // An empty level 0 fed by services at rate mu u_1 < lambda_s passes
        // the excess smart flow on to level 1.
        let state = OccupancyMeasure::new(vec![0.0, 0.1, 0.9], 0.0).unwrap();
        let d = vector_field_with_boundary(&p, Strategy::JOIN, &state);
        assert_eq!(d.du[0], 0.0);
        let interior = vector_field_with_boundary(
            &p,
            Strategy::JOIN,
            &OccupancyMeasure::new(vec![1e-12, 0.1, 0.9 - 1e-12], 0.0).unwrap(),
        );
        assert!(interior.du[0] < -0.05);
    }
}
