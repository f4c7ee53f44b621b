//! Command-line flags and the flat TOML configuration file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::Failure;

pub const SEED_ENV: &str = "JSQ_GAME_SEED";

#[derive(Debug, Parser)]
#[command(name = "jsq-game", version, about = "Strategic joining in a join-the-shortest-queue system")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub settings: Settings,

    /// Flat TOML file whose keys are the long flag names; flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Stationary law and performance measures at a fixed joining probability.
    Analytic,
    /// Nash equilibrium joining probability q_e.
    Equilibrium,
    /// Socially optimal joining probability q*.
    SocialOpt,
    /// Lyapunov certificate for the mean-field dynamics.
    OdeCertify,
    /// One finite-N simulation run.
    Simulate,
    /// Distance of finite-N occupancy to the mean-field law for several N.
    Converge,
    /// Finite-N utilities against the mean-field utility on a q-grid.
    EpsNash,
    /// Equilibrium and social optimum along a parameter grid.
    Sweep,
}

/// A comma-separated list on the command line, or a number, array or
/// string in the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|x| x.trim().parse::<T>().map_err(|e| format!("bad list entry {x:?}: {e}")))
            .collect::<Result<Vec<T>, String>>()
            .map(List)
    }
}

impl<'de, T> Deserialize<'de> for List<T>
where
    T: Deserialize<'de> + FromStr,
    T::Err: std::fmt::Display,
{
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw<T> {
            One(T),
            Many(Vec<T>),
            Text(String),
        }
        match Raw::<T>::deserialize(d)? {
            Raw::One(x) => Ok(List(vec![x])),
            Raw::Many(xs) => Ok(List(xs)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

macro_rules! settings {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty ),* $(,)?) => {
        #[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
        #[serde(rename_all = "kebab-case", deny_unknown_fields)]
        pub struct Settings {
            $( $(#[$doc])* #[arg(long, global = true)] pub $field: Option<$ty>, )*
            /// Run independent jobs one after another.
            #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
            pub sequential: Option<bool>,
        }

        impl Settings {
            /// Fills every unset field from `other`.
            pub fn or(self, other: Settings) -> Settings {
                Settings {
                    $( $field: self.$field.or(other.$field), )*
                    sequential: self.sequential.or(other.sequential),
                }
            }
        }
    };
}

settings! {
    /// Dedicated arrival rate per queue.
    lambda: f64,
    /// Smart (JSQ) arrival rate per queue.
    lambda_s: f64,
    /// Service rate.
    mu: f64,
    /// Reward for a completed service.
    reward: f64,
    /// Waiting cost per unit time.
    cost: f64,
    /// Joining probability of dedicated customers.
    q: f64,
    /// Number of queues; a comma list for converge and eps-nash.
    n: List<usize>,
    /// RNG seed (falls back to JSQ_GAME_SEED, then 0).
    seed: u64,
    /// Warmup time before measurement.
    warmup: f64,
    /// Measured simulation time.
    measure: f64,
    /// Number of batches for confidence intervals.
    batches: usize,
    /// Write the CSV here instead of stdout.
    out: PathBuf,
    /// Truncation level of the occupancy measure.
    kmax: usize,
    /// Swept parameter: mu, lambda-s or reward.
    sweep_param: String,
    /// Sweep grid as start:stop:step.
    sweep_range: String,
    /// Built-in sweep: mu, lambda-s or reward.
    preset: String,
    /// Number of initial states for ode-certify.
    initials: usize,
    /// Integration horizon for ode-certify.
    t_end: f64,
    /// Also export the trajectory from the empty system as CSV.
    trajectory: PathBuf,
    /// Joining probabilities for eps-nash as a comma list.
    q_grid: List<f64>,
}

pub fn load_config(path: &Path) -> Result<Settings, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::invalid(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::invalid(format!("config {}: {e}", path.display())))
}

/// Flag, then config file, then the environment variable, then 0.
pub fn resolve_seed(settings: &Settings, env: Option<String>) -> Result<u64, Failure> {
    if let Some(s) = settings.seed {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::invalid(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        None => Ok(0),
    }
}
