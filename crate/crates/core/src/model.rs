//! Model parameters and the closed-form mean-field analytics.
//!
//! In the mean-field limit a tagged queue behaves like an M/M/1 queue fed by
//! its own thinned dedicated stream (rate `lambda * q`) plus smart arrivals
//! that only ever land on an empty queue. Its stationary law is geometric
//! above level one:
//!
//! ```text
//! pi_0 = 1 - rho,   pi_k = rho (1 - sigma) sigma^(k-1)   (k >= 1)
//! rho = (lambda q + lambda_s) / mu,   sigma = lambda q / mu
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strict margin applied to every `rate < mu` stability check.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Discarded probability mass allowed by the automatic truncation level.
pub const TRUNCATION_TOLERANCE: f64 = 1e-12;

/// Upper bound on the automatic truncation level.
pub const MAX_TRUNCATION: usize = 10_000;

/// Arrival, service and economic parameters of the queueing game.
///
/// `lambda` is the dedicated arrival rate per queue, `lambda_s` the smart
/// stream rate per queue (the whole system sees `N * lambda_s`), `mu` the
/// service rate, `reward` the reward per completed service and `cost` the
/// waiting cost per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    pub lambda_s: f64,
    pub mu: f64,
    pub reward: f64,
    pub cost: f64,
}

impl ModelParams {
    /// Builds a parameter set, checking signs and finiteness only.
    ///
    /// The standing assumptions (`lambda + lambda_s < mu`, `R >= C / mu`)
    /// are checked separately by [`ModelParams::validate`] so that unstable
    /// configurations can still be simulated.
    pub fn new(lambda: f64, lambda_s: f64, mu: f64, reward: f64, cost: f64) -> Result<Self> {
        let p = Self { lambda, lambda_s, mu, reward, cost };
        p.check_signs()?;
        Ok(p)
    }

    fn check_signs(&self) -> Result<()> {
        let fields = [
            ("lambda", self.lambda),
            ("lambda_s", self.lambda_s),
            ("mu", self.mu),
            ("reward", self.reward),
            ("cost", self.cost),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")));
            }
        }
        if self.lambda <= 0.0 {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.lambda_s < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda_s must be >= 0, got {}",
                self.lambda_s
            )));
        }
        if self.mu <= 0.0 {
            return Err(Error::InvalidParameter(format!("mu must be > 0, got {}", self.mu)));
        }
        if self.reward <= 0.0 {
            return Err(Error::InvalidParameter(format!("reward must be > 0, got {}", self.reward)));
        }
        if self.cost <= 0.0 {
            return Err(Error::InvalidParameter(format!("cost must be > 0, got {}", self.cost)));
        }
        Ok(())
    }

    /// `lambda + lambda_s < mu`, i.e. stability even when every dedicated
    /// customer joins.
    pub fn check_stability(&self) -> Result<()> {
        self.check_signs()?;
        check_rate(self.lambda + self.lambda_s, self.mu)
    }

    /// `R >= C / mu`: a customer arriving to an empty queue wants to join.
    pub fn check_reward_floor(&self) -> Result<()> {
        if self.reward < self.cost / self.mu {
            return Err(Error::InvalidParameter(format!(
                "reward {} is below cost/mu = {}",
                self.reward,
                self.cost / self.mu
            )));
        }
        Ok(())
    }

    /// Signs, stability and the reward floor.
    pub fn validate(&self) -> Result<()> {
        self.check_stability()?;
        self.check_reward_floor()
    }

    /// Total per-queue arrival rate `lambda q + lambda_s` under strategy `q`.
    pub fn effective_rate(&self, strategy: Strategy) -> f64 {
        self.lambda * strategy.value() + self.lambda_s
    }

    pub fn is_stable_at(&self, strategy: Strategy) -> bool {
        check_rate(self.effective_rate(strategy), self.mu).is_ok()
    }
}

fn check_rate(effective_rate: f64, mu: f64) -> Result<()> {
    if effective_rate < mu - STABILITY_MARGIN {
        Ok(())
    } else {
        Err(Error::Unstable { effective_rate, mu })
    }
}

/// Joining probability of a dedicated customer.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Strategy(f64);

impl Strategy {
    pub const BALK: Strategy = Strategy(0.0);
    pub const JOIN: Strategy = Strategy(1.0);

    pub fn new(q: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&q) {
            Ok(Strategy(q))
        } else {
            Err(Error::InvalidParameter(format!("joining probability must lie in [0, 1], got {q}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `rho = (lambda q + lambda_s) / mu` and `sigma = lambda q / mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficIntensities {
    pub rho: f64,
    pub sigma: f64,
}

impl TrafficIntensities {
    /// Fails with [`Error::Unstable`] unless `lambda q + lambda_s < mu`.
    pub fn new(params: &ModelParams, strategy: Strategy) -> Result<Self> {
        check_rate(params.effective_rate(strategy), params.mu)?;
        Ok(Self::unchecked(params, strategy))
    }

    pub(crate) fn unchecked(params: &ModelParams, strategy: Strategy) -> Self {
        Self {
            rho: params.effective_rate(strategy) / params.mu,
            sigma: params.lambda * strategy.value() / params.mu,
        }
    }
}

/// Smallest `K` with `sigma^K < 1e-12`, clamped to `[1, MAX_TRUNCATION]`.
pub fn auto_truncation(sigma: f64) -> usize {
    if sigma <= 0.0 {
        return 1;
    }
    let mut k = 1;
    let mut power = sigma;
    while power >= TRUNCATION_TOLERANCE && k < MAX_TRUNCATION {
        power *= sigma;
        k += 1;
    }
    k
}

/// Mean-field stationary distribution, stored up to level `k_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    probs: Vec<f64>,
    tail_mass: f64,
    rho: f64,
    sigma: f64,
}

impl StationaryDist {
    /// Truncated at [`auto_truncation`] of the current `sigma`.
    pub fn auto(params: &ModelParams, strategy: Strategy) -> Result<Self> {
        let t = TrafficIntensities::new(params, strategy)?;
        stationary_distribution(params, strategy, auto_truncation(t.sigma))
    }

    /// Stored probabilities `pi_0 ..= pi_{k_max}`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k_max(&self) -> usize {
        self.probs.len() - 1
    }

    /// Mass beyond `k_max`, `rho * sigma^k_max`.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn truncated_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `pi_k` for any level, including levels beyond the stored range.
    pub fn pmf(&self, k: usize) -> f64 {
        if let Some(&p) = self.probs.get(k) {
            return p;
        }
        geometric_level(self.rho, self.sigma, k)
    }
}

fn geometric_level(rho: f64, sigma: f64, k: usize) -> f64 {
    match k {
        0 => 1.0 - rho,
        1 => rho * (1.0 - sigma),
        _ => rho * (1.0 - sigma) * sigma.powi((k - 1) as i32),
    }
}

/// Mean-field stationary distribution at strategy `q`, truncated at `k_max`.
pub fn stationary_distribution(
    params: &ModelParams,
    strategy: Strategy,
    k_max: usize,
) -> Result<StationaryDist> {
    let TrafficIntensities { rho, sigma } = TrafficIntensities::new(params, strategy)?;
    let mut probs = Vec::with_capacity(k_max + 1);
    probs.push(1.0 - rho);
    let mut level = rho * (1.0 - sigma);
    for _ in 1..=k_max {
        probs.push(level);
        level *= sigma;
    }
    let tail_mass = if k_max == 0 { rho } else { rho * sigma.powi(k_max as i32) };
    Ok(StationaryDist { probs, tail_mass, rho, sigma })
}

/// `E(W(q)) = (mu + lambda_s) / (mu (mu - lambda q))`, the mean sojourn time
/// of a dedicated customer who joins.
pub fn mean_sojourn_dedicated(params: &ModelParams, strategy: Strategy) -> Result<f64> {
    TrafficIntensities::new(params, strategy)?;
    let mu = params.mu;
    Ok((mu + params.lambda_s) / (mu * (mu - params.lambda * strategy.value())))
}

/// `E(L(q)) = rho / (1 - sigma)`.
pub fn mean_queue_length(params: &ModelParams, strategy: Strategy) -> Result<f64> {
    let t = TrafficIntensities::new(params, strategy)?;
    Ok(t.rho / (1.0 - t.sigma))
}

/// `E(H(q))`, the mean sojourn time of an arbitrary customer: dedicated
/// customers wait `E(W(q))`, smart customers find an empty queue and wait
/// only for their own service.
pub fn mean_sojourn_any(params: &ModelParams, strategy: Strategy) -> Result<f64> {
    let w = mean_sojourn_dedicated(params, strategy)?;
    let dedicated = params.lambda * strategy.value();
    let total = dedicated + params.lambda_s;
    if total <= 0.0 {
        return Err(Error::UndefinedMetric("mean sojourn time with zero arrival rate"));
    }
    Ok(dedicated / total * w + params.lambda_s / total / params.mu)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceMetrics {
    pub mean_sojourn_dedicated: f64,
    pub mean_sojourn_any: f64,
    pub mean_queue_length: f64,
    pub effective_rate: f64,
}

pub fn performance_metrics(params: &ModelParams, strategy: Strategy) -> Result<PerformanceMetrics> {
    Ok(PerformanceMetrics {
        mean_sojourn_dedicated: mean_sojourn_dedicated(params, strategy)?,
        mean_sojourn_any: mean_sojourn_any(params, strategy)?,
        mean_queue_length: mean_queue_length(params, strategy)?,
        effective_rate: params.effective_rate(strategy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assume, proptest};
    use proptest::strategy::Strategy as _;

    fn fig1() -> ModelParams {
        ModelParams::new(0.5, 0.2, 1.3, 3.0, 1.1).unwrap()
    }

    fn q(v: f64) -> Strategy {
        Strategy::new(v).unwrap()
    }

    // Series oracle: sum (k+1)/mu * pi_k with pi evaluated term by term.
    fn series_sojourn(p: &ModelParams, s: Strategy) -> f64 {
        let rho = (p.lambda * s.value() + p.lambda_s) / p.mu;
        let sigma = p.lambda * s.value() / p.mu;
        let mut total = (1.0 - rho) / p.mu;
        let mut k = 1;
        loop {
            let pk = rho * (1.0 - sigma) * sigma.powi(k - 1);
            total += (k as f64 + 1.0) / p.mu * pk;
            if pk < 1e-18 || k > 100_000 {
                break;
            }
            k += 1;
        }
        total
    }

    #[test]
    fn stationary_distribution_values() {
        let pi = stationary_distribution(&fig1(), Strategy::JOIN, 2).unwrap();
        assert!((pi.probs()[0] - 0.461538461538).abs() < 1e-9);
        assert!((pi.probs()[1] - 0.331360946746).abs() < 1e-9);
        assert!((pi.probs()[2] - 0.127446517979).abs() < 1e-9);
        assert!((pi.truncated_mass() + pi.tail_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stationary_distribution_mm1_reduction() {
        let p = ModelParams::new(0.6, 0.0, 1.0, 3.0, 1.0).unwrap();
        let pi = StationaryDist::auto(&p, Strategy::JOIN).unwrap();
        for (k, &pk) in pi.probs().iter().enumerate() {
            let mm1 = 0.4 * 0.6f64.powi(k as i32);
            assert!((pk - mm1).abs() < 1e-15, "level {k}: {pk} vs {mm1}");
        }
    }

    #[test]
    fn balking_collapses_tail_to_level_one() {
        let p = ModelParams::new(0.5, 0.2, 1.0, 3.0, 1.0).unwrap();
        let pi = stationary_distribution(&p, Strategy::BALK, 4).unwrap();
        assert_eq!(pi.probs(), &[0.8, 0.2, 0.0, 0.0, 0.0]);
        assert_eq!(pi.tail_mass(), 0.0);
        assert_eq!(auto_truncation(0.0), 1);
    }

    #[test]
    fn unstable_strategy_is_an_error() {
        let p = ModelParams::new(0.9, 0.2, 1.0, 3.0, 1.0).unwrap();
        assert!(matches!(
            stationary_distribution(&p, Strategy::JOIN, 5),
            Err(Error::Unstable { .. })
        ));
        assert!(matches!(mean_sojourn_dedicated(&p, Strategy::JOIN), Err(Error::Unstable { .. })));
        assert!(mean_sojourn_dedicated(&p, q(0.5)).is_ok());
        assert!(p.check_stability().is_err());
    }

    #[test]
    fn sojourn_time_values() {
        let w = mean_sojourn_dedicated(&fig1(), Strategy::JOIN).unwrap();
        assert!((w - 1.5 / 1.04).abs() < 1e-15);
        assert!((w - series_sojourn(&fig1(), Strategy::JOIN)).abs() < 1e-9);

        let p = ModelParams::new(0.5, 0.0, 1.3, 3.0, 1.1).unwrap();
        let w = mean_sojourn_dedicated(&p, q(0.4)).unwrap();
        assert!((w - 1.0 / (1.3 - 0.2)).abs() < 1e-15);

        let w0 = mean_sojourn_dedicated(&fig1(), Strategy::BALK).unwrap();
        assert!((w0 - 1.5 / 1.69).abs() < 1e-15);
    }

    #[test]
    fn queue_length_values() {
        let l = mean_queue_length(&fig1(), Strategy::JOIN).unwrap();
        assert!((l - 0.875).abs() < 1e-15);
        let p = ModelParams::new(0.5, 0.2, 1.0, 3.0, 1.0).unwrap();
        assert!((mean_queue_length(&p, Strategy::BALK).unwrap() - 0.2).abs() < 1e-15);
        let p = ModelParams::new(0.5, 0.0, 1.3, 3.0, 1.0).unwrap();
        assert!((mean_queue_length(&p, Strategy::JOIN).unwrap() - 0.5 / 0.8).abs() < 1e-15);
    }

    #[test]
    fn sojourn_any_values() {
        let h = mean_sojourn_any(&fig1(), Strategy::JOIN).unwrap();
        assert!((h - 1.25).abs() < 1e-12);
        let p = ModelParams::new(0.5, 0.0, 1.3, 3.0, 1.0).unwrap();
        assert_eq!(
            mean_sojourn_any(&p, q(0.7)).unwrap(),
            mean_sojourn_dedicated(&p, q(0.7)).unwrap()
        );
        assert!((mean_sojourn_any(&fig1(), Strategy::BALK).unwrap() - 1.0 / 1.3).abs() < 1e-15);
        assert!(matches!(
            mean_sojourn_any(&p, Strategy::BALK),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn parameter_validation() {
        assert!(ModelParams::new(0.0, 0.2, 1.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(0.5, -0.1, 1.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(0.5, 0.2, f64::NAN, 1.0, 1.0).is_err());
        assert!(ModelParams::new(0.5, 0.2, 1.0, 1.0, 0.0).is_err());
        let low_reward = ModelParams::new(0.3, 0.2, 1.0, 0.8, 1.0).unwrap();
        assert!(low_reward.check_stability().is_ok());
        assert!(low_reward.validate().is_err());
        assert!(Strategy::new(1.01).is_err());
        assert!(Strategy::new(-0.01).is_err());
    }

    #[test]
    fn sojourn_strictly_increasing_in_q() {
        let p = ModelParams::new(0.5, 0.2, 0.9, 3.0, 1.1).unwrap();
        let ws: Vec<f64> =
            (0..=100).map(|i| mean_sojourn_dedicated(&p, q(i as f64 / 100.0)).unwrap()).collect();
        assert!(ws.windows(2).all(|w| w[1] > w[0]));
    }

    fn stable_params() -> impl proptest::strategy::Strategy<Value = (ModelParams, Strategy)> {
        (0.05f64..5.0, 0.0f64..1.0, 0.0f64..0.98, 0.0f64..=1.0).prop_map(|(mu, split, load, q)| {
            let total = load * mu;
            let lambda = (total * (1.0 - split)).max(1e-3);
            let lambda_s = total * split;
            let p = ModelParams::new(lambda, lambda_s, mu.max(lambda + lambda_s + 1e-6), 10.0, 1.0)
                .unwrap();
            (p, Strategy::new(q).unwrap())
        })
    }

    proptest! {
        #[test]
        fn littles_law((p, s) in stable_params()) {
            prop_assume!(p.effective_rate(s) > 0.0);
            let h = mean_sojourn_any(&p, s).unwrap();
            let l = mean_queue_length(&p, s).unwrap();
            prop_assert!((h * p.effective_rate(s) - l).abs() <= 1e-12 * l.max(1.0));
        }

        #[test]
        fn auto_truncation_bounds_discarded_mass((p, s) in stable_params()) {
            let pi = StationaryDist::auto(&p, s).unwrap();
            prop_assert!(pi.truncated_mass() >= 1.0 - 1e-12);
            prop_assert!(pi.tail_mass() < 1e-12 || pi.k_max() == MAX_TRUNCATION);
            prop_assert!(pi.probs().iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn series_matches_closed_form((p, s) in stable_params()) {
            let closed = mean_sojourn_dedicated(&p, s).unwrap();
            let series = series_sojourn(&p, s);
            prop_assert!((closed - series).abs() <= 1e-9 * closed.max(1.0));
        }
    }
}
