//! One-parameter sweeps of the equilibrium and the social optimum.

use std::fmt;
use std::str::FromStr;

use crate::csvio::{fmt_num, Table};
use crate::error::{Error, Result};
use crate::game::{equilibrium_strategy, social_benefit_rate, socially_optimal_strategy};
use crate::model::ModelParams;
use crate::par::{self, Execution};

/// Largest number of grid points a sweep may have.
pub const MAX_GRID_POINTS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweptParameter {
    Mu,
    LambdaS,
    Reward,
}

impl SweptParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweptParameter::Mu => "mu",
            SweptParameter::LambdaS => "lambda_s",
            SweptParameter::Reward => "reward",
        }
    }

    fn apply(self, base: &ModelParams, x: f64) -> ModelParams {
        let mut p = *base;
        match self {
            SweptParameter::Mu => p.mu = x,
            SweptParameter::LambdaS => p.lambda_s = x,
            SweptParameter::Reward => p.reward = x,
        }
        p
    }
}

impl fmt::Display for SweptParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweptParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(SweptParameter::Mu),
            "lambda_s" | "lambda-s" => Ok(SweptParameter::LambdaS),
            "reward" | "R" | "r" => Ok(SweptParameter::Reward),
            _ => Err(Error::InvalidParameter(format!(
                "unknown sweep parameter {s:?} (expected mu, lambda_s or reward)"
            ))),
        }
    }
}

/// Inclusive grid `start, start + step, ...` up to `stop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SweepRange {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        let r = Self { start, stop, step };
        r.len()?;
        Ok(r)
    }

    pub fn len(&self) -> Result<usize> {
        let Self { start, stop, step } = *self;
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
            return Err(Error::InvalidParameter("sweep range must be finite".into()));
        }
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!("sweep step must be positive, got {step}")));
        }
        if stop < start {
            return Err(Error::InvalidParameter(format!("sweep range {start}:{stop} is empty")));
        }
        let n = ((stop - start) / step + 1e-9).floor() + 1.0;
        if n > MAX_GRID_POINTS as f64 {
            return Err(Error::InvalidParameter(format!("sweep has more than {MAX_GRID_POINTS} points")));
        }
        Ok(n as usize)
    }

    pub fn is_empty(&self) -> bool {
        self.len().map_or(true, |n| n == 0)
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        Ok((0..self.len()?).map(|i| self.start + i as f64 * self.step).collect())
    }
}

impl FromStr for SweepRange {
    type Err = Error;

    /// Parses `start:stop:step`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidParameter(format!("sweep range {s:?} is not start:stop:step"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums: Vec<f64> = parts.iter().map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        Self::new(nums[0], nums[1], nums[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepOutput {
    QE,
    QStar,
    SocAtQE,
    SocAtQStar,
}

impl SweepOutput {
    pub const ALL: [SweepOutput; 4] = [SweepOutput::QE, SweepOutput::QStar, SweepOutput::SocAtQE, SweepOutput::SocAtQStar];

    fn columns(self) -> &'static [&'static str] {
        match self {
            SweepOutput::QE => &["q_e", "q_e_branch"],
            SweepOutput::QStar => &["q_star", "q_star_branch"],
            SweepOutput::SocAtQE => &["soc_at_qe"],
            SweepOutput::SocAtQStar => &["soc_at_qstar"],
        }
    }

    fn describe(self) -> &'static str {
        match self {
            SweepOutput::QE => "q_e: equilibrium joining probability; q_e_branch: its branch",
            SweepOutput::QStar => "q_star: socially optimal joining probability; q_star_branch: its branch",
            SweepOutput::SocAtQE => "soc_at_qe: social benefit rate at q_e",
            SweepOutput::SocAtQStar => "soc_at_qstar: social benefit rate at q_star",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweptParameter,
    pub range: SweepRange,
    /// Values of the other parameters; the swept field is overwritten.
    pub fixed: ModelParams,
    pub outputs: Vec<SweepOutput>,
}

impl SweepSpec {
    pub fn new(parameter: SweptParameter, range: SweepRange, fixed: ModelParams) -> Self {
        Self { parameter, range, fixed, outputs: SweepOutput::ALL.to_vec() }
    }

    /// The fixed parameters with the swept one set to `value`.
    pub fn params_at(&self, value: f64) -> ModelParams {
        self.parameter.apply(&self.fixed, value)
    }

    /// Joining probabilities against the service rate (`R = 3`, `C = 1.1`,
    /// `lambda = 0.5`, `lambda_s = 0.2`, `mu` from 0.8 to 1.3).
    pub fn service_rate_preset() -> Self {
        Self::new(
            SweptParameter::Mu,
            SweepRange { start: 0.8, stop: 1.3, step: 0.01 },
            ModelParams { lambda: 0.5, lambda_s: 0.2, mu: 1.3, reward: 3.0, cost: 1.1 },
        )
    }

    /// Against the smart-stream rate (`mu = 1.3`, `lambda = 0.59`,
    /// `lambda_s` from 0 to 0.7).
    pub fn smart_rate_preset() -> Self {
        Self::new(
            SweptParameter::LambdaS,
            SweepRange { start: 0.0, stop: 0.7, step: 0.01 },
            ModelParams { lambda: 0.59, lambda_s: 0.0, mu: 1.3, reward: 3.0, cost: 1.1 },
        )
    }

    /// Against the reward (`C = 2`, `mu = 1.3`, `lambda = lambda_s = 0.5`,
    /// `R` from 1.5 to 8).
    pub fn reward_preset() -> Self {
        Self::new(
            SweptParameter::Reward,
            SweepRange { start: 1.5, stop: 8.0, step: 0.05 },
            ModelParams { lambda: 0.5, lambda_s: 0.5, mu: 1.3, reward: 3.0, cost: 2.0 },
        )
    }
}

/// One evaluated grid point; `None` values belong to skipped points.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub value: f64,
    pub q_e: Option<crate::game::StrategyResult>,
    pub q_star: Option<crate::game::StrategyResult>,
    pub soc_at_qe: Option<f64>,
    pub soc_at_qstar: Option<f64>,
    pub skip_reason: Option<String>,
}

fn evaluate(spec: &SweepSpec, index: usize, value: f64) -> SweepRow {
    let params = spec.params_at(value);
    let mut row = SweepRow {
        index,
        value,
        q_e: None,
        q_star: None,
        soc_at_qe: None,
        soc_at_qstar: None,
        skip_reason: None,
    };
    let computed = params.validate().and_then(|()| {
        let qe = equilibrium_strategy(&params)?;
        let qs = socially_optimal_strategy(&params)?;
        let soc_e = social_benefit_rate(&params, qe.strategy())?;
        let soc_s = social_benefit_rate(&params, qs.strategy())?;
        Ok((qe, qs, soc_e, soc_s))
    });
    match computed {
        Ok((qe, qs, soc_e, soc_s)) => {
            row.q_e = Some(qe);
            row.q_star = Some(qs);
            row.soc_at_qe = Some(soc_e);
            row.soc_at_qstar = Some(soc_s);
        }
        Err(e) => row.skip_reason = Some(e.to_string()),
    }
    row
}

/// Evaluates every grid point; rows keep grid order.
pub fn sweep_rows(spec: &SweepSpec, exec: Execution) -> Result<Vec<SweepRow>> {
    if spec.outputs.is_empty() {
        return Err(Error::InvalidParameter("a sweep needs at least one output".into()));
    }
    let points = spec.range.points()?;
    Ok(par::map(exec, &points, |i, &x| evaluate(spec, i, x)))
}

pub fn run_sweep(spec: &SweepSpec) -> Result<Table> {
    run_sweep_with(spec, Execution::default())
}

/// CSV table with one row per grid point. Skipped points carry `skipped = 1`,
/// empty value cells and the reason.
pub fn run_sweep_with(spec: &SweepSpec, exec: Execution) -> Result<Table> {
    let rows = sweep_rows(spec, exec)?;
    let name = spec.parameter.name();
    let mut header = vec!["index".to_string(), name.to_string()];
    let mut described = vec![format!("index: grid position; {name}: swept parameter value")];
    for out in &spec.outputs {
        header.extend(out.columns().iter().map(|c| c.to_string()));
        described.push(out.describe().to_string());
    }
    header.extend(["skipped", "skip_reason"].map(String::from));
    described.push("skipped: 1 if the point violates the parameter invariants; skip_reason: why".into());
    let f = spec.fixed;
    let fixed = [("lambda", f.lambda), ("lambda_s", f.lambda_s), ("mu", f.mu), ("reward", f.reward), ("cost", f.cost)]
        .iter()
        .filter(|(n, _)| *n != name)
        .map(|(n, v)| format!("{n}={}", fmt_num(*v)))
        .collect::<Vec<_>>()
        .join(", ");
    let comment = format!("sweep over {name} with {fixed}\ncolumns: {}", described.join("; "));
    let mut table = Table::new(comment, header);
    for r in rows {
        let mut cells = vec![r.index.to_string(), fmt_num(r.value)];
        let opt = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
        for out in &spec.outputs {
            match out {
                SweepOutput::QE => {
                    cells.push(opt(r.q_e.map(|s| s.q)));
                    cells.push(r.q_e.map(|s| s.branch.to_string()).unwrap_or_default());
                }
                SweepOutput::QStar => {
                    cells.push(opt(r.q_star.map(|s| s.q)));
                    cells.push(r.q_star.map(|s| s.branch.to_string()).unwrap_or_default());
                }
                SweepOutput::SocAtQE => cells.push(opt(r.soc_at_qe)),
                SweepOutput::SocAtQStar => cells.push(opt(r.soc_at_qstar)),
            }
        }
        cells.push(if r.skip_reason.is_some() { "1" } else { "0" }.to_string());
        cells.push(r.skip_reason.unwrap_or_default());
        table.push(cells);
    }
    Ok(table)
}
