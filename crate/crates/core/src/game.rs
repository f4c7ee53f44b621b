//! Equilibrium and socially optimal joining probabilities.
//!
//! A dedicated customer who joins earns `S(q) = R - C E(W(q))`, where `q` is
//! the joining probability used by everybody else. `S` is strictly
//! decreasing in `q`, so the equilibrium is either a corner or the unique
//! root of `S`. The social planner instead maximises the benefit rate
//! `S_soc(q) = R (lambda q + lambda_s) - C E(L(q))`, which is concave.

use crate::error::{Error, Result};
use crate::model::{self, ModelParams, Strategy, TrafficIntensities};

/// Utility differences below this are treated as indifference.
pub const INDIFFERENCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    AlwaysBalk,
    Interior,
    AlwaysJoin,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::AlwaysBalk => "AlwaysBalk",
            Branch::Interior => "Interior",
            Branch::AlwaysJoin => "AlwaysJoin",
        }
    }
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A joining probability together with the piecewise branch that produced
/// it. Thresholds are expressed as values of `R / C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyResult {
    pub q: f64,
    pub branch: Branch,
    pub threshold_low: f64,
    pub threshold_high: f64,
}

impl StrategyResult {
    pub fn strategy(&self) -> Strategy {
        Strategy::new(self.q).expect("strategy results always lie in [0, 1]")
    }

    /// True when [`best_response`] found the tagged customer indifferent.
    pub fn is_indifferent(&self) -> bool {
        self.branch == Branch::Interior
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityReport {
    pub individual_utility: f64,
    pub social_rate: f64,
}

/// `S(q) = R - C E(W(q))`.
pub fn individual_utility(params: &ModelParams, strategy: Strategy) -> Result<f64> {
    Ok(params.reward - params.cost * model::mean_sojourn_dedicated(params, strategy)?)
}

/// `S_soc(q) = R (lambda q + lambda_s) - C (lambda q + lambda_s) / (mu - lambda q)`.
pub fn social_benefit_rate(params: &ModelParams, strategy: Strategy) -> Result<f64> {
    TrafficIntensities::new(params, strategy)?;
    let dedicated = params.lambda * strategy.value();
    let rate = dedicated + params.lambda_s;
    Ok(params.reward * rate - params.cost * rate / (params.mu - dedicated))
}

pub fn utility_report(params: &ModelParams, strategy: Strategy) -> Result<UtilityReport> {
    Ok(UtilityReport {
        individual_utility: individual_utility(params, strategy)?,
        social_rate: social_benefit_rate(params, strategy)?,
    })
}

/// `R / C` thresholds of the equilibrium: `S(0) = 0` and `S(1) = 0`.
fn equilibrium_thresholds(p: &ModelParams) -> (f64, f64) {
    let low = (p.lambda_s + p.mu) / (p.mu * p.mu);
    let high = (p.mu + p.lambda_s) / (p.mu * (p.mu - p.lambda));
    (low, high)
}

/// `R / C` thresholds of the social optimum: `S_soc'(0) = 0` and `S_soc'(1) = 0`.
fn social_thresholds(p: &ModelParams) -> (f64, f64) {
    let low = (p.lambda_s + p.mu) / (p.mu * p.mu);
    let high = (p.lambda_s + p.mu) / ((p.mu - p.lambda) * (p.mu - p.lambda));
    (low, high)
}

/// Equilibrium joining probability `q^e`.
///
/// Requires `lambda + lambda_s < mu`. Ties at a threshold resolve to the
/// corner (`<=` balks, `>=` joins).
pub fn equilibrium_strategy(params: &ModelParams) -> Result<StrategyResult> {
    params.check_stability()?;
    let (low, high) = equilibrium_thresholds(params);
    let ratio = params.reward / params.cost;
    let (q, branch) = if ratio <= low {
        (0.0, Branch::AlwaysBalk)
    } else if ratio >= high {
        (1.0, Branch::AlwaysJoin)
    } else {
        let ModelParams { lambda, lambda_s, mu, reward, cost } = *params;
        let q = mu / lambda - cost * (mu + lambda_s) / (reward * mu * lambda);
        (q.clamp(0.0, 1.0), Branch::Interior)
    };
    Ok(StrategyResult { q, branch, threshold_low: low, threshold_high: high })
}

/// Socially optimal joining probability `q*`, the maximiser of
/// [`social_benefit_rate`] over `[0, 1]`.
pub fn socially_optimal_strategy(params: &ModelParams) -> Result<StrategyResult> {
    params.check_stability()?;
    let (low, high) = social_thresholds(params);
    let ModelParams { lambda, lambda_s, mu, reward, cost } = *params;
    let (q, branch) = if reward <= cost * (lambda_s + mu) / (mu * mu) {
        (0.0, Branch::AlwaysBalk)
    } else if reward >= cost * (lambda_s + mu) / ((mu - lambda) * (mu - lambda)) {
        (1.0, Branch::AlwaysJoin)
    } else {
        let q = mu / lambda - (cost * (lambda_s + mu) / reward).sqrt() / lambda;
        (q.clamp(0.0, 1.0), Branch::Interior)
    };
    let result = StrategyResult { q, branch, threshold_low: low, threshold_high: high };
    if !params.is_stable_at(result.strategy()) {
        return Err(Error::Unstable { effective_rate: params.effective_rate(result.strategy()), mu });
    }
    Ok(result)
}

/// Best action of a tagged customer when the population joins with
/// probability `population_q`: join if `S > 0`, balk if `S < 0`, and
/// indifferent (reported as [`Branch::Interior`] at `population_q`)
/// otherwise.
pub fn best_response(params: &ModelParams, population_q: Strategy) -> Result<StrategyResult> {
    let s = individual_utility(params, population_q)?;
    let (low, high) = equilibrium_thresholds(params);
    let (q, branch) = if s.abs() < INDIFFERENCE_TOLERANCE {
        (population_q.value(), Branch::Interior)
    } else if s > 0.0 {
        (1.0, Branch::AlwaysJoin)
    } else {
        (0.0, Branch::AlwaysBalk)
    };
    Ok(StrategyResult { q, branch, threshold_low: low, threshold_high: high })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64, lambda_s: f64, mu: f64, reward: f64, cost: f64) -> ModelParams {
        ModelParams::new(lambda, lambda_s, mu, reward, cost).unwrap()
    }

    fn q(v: f64) -> Strategy {
        Strategy::new(v).unwrap()
    }

    #[test]
    fn individual_utility_values() {
        let p = params(0.5, 0.2, 1.3, 3.0, 1.1);
        let s = individual_utility(&p, Strategy::JOIN).unwrap();
        assert!((s - (3.0 - 1.1 * 1.5 / 1.04)).abs() < 1e-15);
        assert!((s - 1.413461538).abs() < 1e-9);

        let cost = 1.1;
        let reward = cost * (0.2 + 1.3) / (1.3 * 1.3);
        let p = params(0.5, 0.2, 1.3, reward, cost);
        assert!(individual_utility(&p, Strategy::BALK).unwrap().abs() < 1e-15);

        let p = params(0.5, 0.0, 1.3, 1.1 / 0.8, 1.1);
        assert!(individual_utility(&p, Strategy::JOIN).unwrap().abs() < 1e-15);
    }

    #[test]
    fn equilibrium_interior() {
        let p = params(0.5, 0.2, 0.9, 3.0, 1.1);
        let r = equilibrium_strategy(&p).unwrap();
        assert_eq!(r.branch, Branch::Interior);
        assert!((r.q - (1.8 - 1.21 / 1.35)).abs() < 1e-15);
        assert!((r.q - 0.903703704).abs() < 1e-9);
        assert!(individual_utility(&p, r.strategy()).unwrap().abs() < 1e-9);
        assert!(r.threshold_low < r.threshold_high);
    }

    #[test]
    fn equilibrium_corners() {
        // R/C = 0.8 sits below the balking threshold 1.2.
        let p = params(0.3, 0.2, 1.0, 0.8, 1.0);
        let r = equilibrium_strategy(&p).unwrap();
        assert_eq!((r.q, r.branch), (0.0, Branch::AlwaysBalk));
        assert!((r.threshold_low - 1.2).abs() < 1e-15);
        assert!((r.threshold_high - 1.2 / 0.7).abs() < 1e-15);

        let p = params(0.5, 0.2, 1.3, 3.0, 1.1);
        let r = equilibrium_strategy(&p).unwrap();
        assert_eq!((r.q, r.branch), (1.0, Branch::AlwaysJoin));
        assert!((r.threshold_high - 1.5 / 1.04).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_threshold_ties_go_to_corners() {
        let (lambda, lambda_s, mu, cost) = (0.5, 0.2, 1.3, 1.0);
        let low = (lambda_s + mu) / (mu * mu);
        let r = equilibrium_strategy(&params(lambda, lambda_s, mu, low, cost)).unwrap();
        assert_eq!(r.branch, Branch::AlwaysBalk);
        let high = (mu + lambda_s) / (mu * (mu - lambda));
        let r = equilibrium_strategy(&params(lambda, lambda_s, mu, high, cost)).unwrap();
        assert_eq!(r.branch, Branch::AlwaysJoin);
    }

    #[test]
    fn social_benefit_values() {
        let p = params(0.5, 0.2, 1.3, 3.0, 1.1);
        let s0 = social_benefit_rate(&p, Strategy::BALK).unwrap();
        assert!((s0 - (0.6 - 0.22 / 1.3)).abs() < 1e-15);
        assert!((s0 - 0.430769231).abs() < 1e-9);
        let s1 = social_benefit_rate(&p, Strategy::JOIN).unwrap();
        assert!((s1 - 1.1375).abs() < 1e-12);
        let p = params(0.5, 0.0, 1.3, 3.0, 1.1);
        assert_eq!(social_benefit_rate(&p, Strategy::BALK).unwrap(), 0.0);
    }

    #[test]
    fn social_optimum_branches() {
        let p = params(0.5, 0.2, 0.9, 3.0, 1.1);
        let r = socially_optimal_strategy(&p).unwrap();
        assert_eq!(r.branch, Branch::Interior);
        assert!((r.q - (1.8 - 2.0 * (1.21f64 / 3.0).sqrt())).abs() < 1e-15);
        assert!((r.q - 0.5298294078).abs() < 1e-9);
        // Interior point is a stationary point of S_soc.
        let h = 1e-5;
        let d = (social_benefit_rate(&p, q(r.q + h)).unwrap()
            - social_benefit_rate(&p, q(r.q - h)).unwrap())
            / (2.0 * h);
        assert!(d.abs() < 1e-9, "derivative {d}");

        let p = params(0.3, 0.2, 1.0, 1.0, 1.0);
        let r = socially_optimal_strategy(&p).unwrap();
        assert_eq!((r.q, r.branch), (0.0, Branch::AlwaysBalk));

        let p = params(0.5, 0.2, 1.3, 3.0, 1.1);
        let r = socially_optimal_strategy(&p).unwrap();
        assert_eq!((r.q, r.branch), (1.0, Branch::AlwaysJoin));
        assert!((r.threshold_high * 1.1 - 1.1 * 1.5 / 0.64).abs() < 1e-12);
    }

    #[test]
    fn unstable_parameters_rejected() {
        let p = params(0.9, 0.2, 1.0, 3.0, 1.0);
        assert!(matches!(equilibrium_strategy(&p), Err(Error::Unstable { .. })));
        assert!(matches!(socially_optimal_strategy(&p), Err(Error::Unstable { .. })));
    }

    #[test]
    fn best_response_around_equilibrium() {
        let p = params(0.5, 0.2, 0.9, 3.0, 1.1);
        let qe = equilibrium_strategy(&p).unwrap();
        let below = best_response(&p, q(qe.q - 0.1)).unwrap();
        assert_eq!(below.branch, Branch::AlwaysJoin);
        let above = best_response(&p, q(qe.q + 0.05)).unwrap();
        assert_eq!(above.branch, Branch::AlwaysBalk);
        let at = best_response(&p, qe.strategy()).unwrap();
        assert!(at.is_indifferent());
        assert_eq!(at.q, qe.q);
    }

    #[test]
    fn corner_equilibria_are_self_best_responses() {
        let join = params(0.5, 0.2, 1.3, 3.0, 1.1);
        let r = equilibrium_strategy(&join).unwrap();
        assert_eq!(best_response(&join, r.strategy()).unwrap().branch, Branch::AlwaysJoin);
        let balk = params(0.3, 0.2, 1.0, 1.1, 1.0);
        let r = equilibrium_strategy(&balk).unwrap();
        assert_eq!(r.branch, Branch::AlwaysBalk);
        assert_eq!(best_response(&balk, r.strategy()).unwrap().branch, Branch::AlwaysBalk);
    }

    #[test]
    fn social_rate_is_concave() {
        let p = params(0.5, 0.2, 0.9, 3.0, 1.1);
        let s: Vec<f64> =
            (0..=100).map(|i| social_benefit_rate(&p, q(i as f64 / 100.0)).unwrap()).collect();
        assert!(s.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] <= 1e-10));
    }
}
