//! Event-driven simulation of `N` queues with dedicated streams and one
//! join-the-shortest-queue stream.
//!
//! A single exponential clock runs at the total rate
//! `N lambda q + N lambda_s + mu * (#busy queues)`. Dedicated arrivals go to
//! a uniformly random queue, smart arrivals to a uniformly random queue at
//! the minimum level and services hit a uniformly random busy queue.

mod report;
mod study;

pub use report::{convergence_table, eps_nash_table, estimate_table};

pub use study::{
    convergence_study, default_q_grid, epsilon_nash_check, ConvergenceRow, EpsNashReport, EpsNashRow,
    QDeviation, StudyOptions,
};

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::model::{stationary_distribution, ModelParams, Strategy};
use crate::stats::{batch_means, drift_t_statistic, Estimate};

/// Batch-drift t-statistic above which a run is flagged nonstationary.
pub const DRIFT_THRESHOLD: f64 = 5.0;

pub const DEFAULT_BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_queues: usize,
    pub params: ModelParams,
    pub strategy: Strategy,
    pub warmup_time: f64,
    pub measure_time: f64,
    pub seed: u64,
    /// Independent random stream for the same seed.
    pub stream: u64,
    pub n_batches: usize,
}

impl SimConfig {
    /// Default warmup (`max(measure / 10, 1000 / mu)`) and batch count.
    pub fn new(params: ModelParams, strategy: Strategy, n_queues: usize, measure_time: f64, seed: u64) -> Self {
        Self {
            n_queues,
            params,
            strategy,
            warmup_time: default_warmup(&params, measure_time),
            measure_time,
            seed,
            stream: 0,
            n_batches: DEFAULT_BATCHES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_queues == 0 {
            return bad("at least one queue is needed".into());
        }
        if self.n_queues > u32::MAX as usize {
            return bad(format!("too many queues: {}", self.n_queues));
        }
        if !(self.warmup_time > 0.0) || !self.warmup_time.is_finite() {
            return bad(format!("warmup time must be positive, got {}", self.warmup_time));
        }
        if !(self.measure_time > 0.0) || !self.measure_time.is_finite() {
            return bad(format!("measure time must be positive, got {}", self.measure_time));
        }
        if self.n_batches < 2 {
            return bad(format!("at least two batches are needed, got {}", self.n_batches));
        }
        if self.params.lambda * self.strategy.value() + self.params.lambda_s <= 0.0 {
            return bad("no arrivals: lambda q + lambda_s must be positive".into());
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

pub fn default_warmup(params: &ModelParams, measure_time: f64) -> f64 {
    (0.1 * measure_time).max(1e3 / params.mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    DedicatedArrival,
    SmartArrival,
    Service,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub kind: EventKind,
    pub queue: usize,
}

/// Queue lengths with per-level index buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    lengths: Vec<u32>,
    /// `buckets[k]` lists the queues of length `k`.
    buckets: Vec<Vec<u32>>,
    /// Position of each queue inside its bucket.
    bucket_pos: Vec<u32>,
    busy: Vec<u32>,
    busy_pos: Vec<u32>,
    min_level: usize,
}

impl SystemState {
    pub fn empty(n: usize) -> Self {
        Self {
            lengths: vec![0; n],
            buckets: vec![(0..n as u32).collect()],
            bucket_pos: (0..n as u32).collect(),
            busy: Vec::new(),
            busy_pos: vec![u32::MAX; n],
            min_level: 0,
        }
    }

    pub fn from_lengths(lengths: &[u32]) -> Self {
        let mut s = Self::empty(lengths.len());
        for (i, &len) in lengths.iter().enumerate() {
            for _ in 0..len {
                s.arrive(i);
            }
        }
        s.min_level = s.buckets.iter().position(|b| !b.is_empty()).unwrap_or(0);
        s
    }

    pub fn n_queues(&self) -> usize {
        self.lengths.len()
    }

    pub fn queue_lengths(&self) -> &[u32] {
        &self.lengths
    }

    /// `N u_k` for `k = 0..=` the highest level ever reached.
    pub fn occupancy_counts(&self) -> Vec<usize> {
        self.buckets.iter().map(Vec::len).collect()
    }

    pub fn count_at(&self, level: usize) -> usize {
        self.buckets.get(level).map_or(0, Vec::len)
    }

    pub fn min_level(&self) -> usize {
        self.min_level
    }

    pub fn busy_queues(&self) -> usize {
        self.busy.len()
    }

    pub fn total_customers(&self) -> u64 {
        self.lengths.iter().map(|&l| l as u64).sum()
    }

    /// Verifies that buckets, busy list and minimum level agree with the
    /// queue lengths.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        let n = self.lengths.len();
        if self.buckets.iter().map(Vec::len).sum::<usize>() != n {
            return Err("bucket sizes do not add up to N".into());
        }
        for (k, b) in self.buckets.iter().enumerate() {
            for (p, &i) in b.iter().enumerate() {
                if self.lengths[i as usize] as usize != k || self.bucket_pos[i as usize] as usize != p {
                    return Err(format!("queue {i} misplaced in bucket {k}"));
                }
            }
        }
        let busy = self.lengths.iter().filter(|&&l| l > 0).count();
        if busy != self.busy.len() {
            return Err("busy list out of date".into());
        }
        for (p, &i) in self.busy.iter().enumerate() {
            if self.lengths[i as usize] == 0 || self.busy_pos[i as usize] as usize != p {
                return Err(format!("busy entry {i} is wrong"));
            }
        }
        let min = *self.lengths.iter().min().expect("at least one queue") as usize;
        if min != self.min_level {
            return Err(format!("minimum level {} recorded as {}", min, self.min_level));
        }
        Ok(())
    }

    fn total_rate(&self, rates: &Rates) -> f64 {
        rates.dedicated + rates.smart + rates.mu * self.busy.len() as f64
    }

    fn move_queue(&mut self, i: usize, from: usize, to: usize) {
        let p = self.bucket_pos[i] as usize;
        let bucket = &mut self.buckets[from];
        bucket.swap_remove(p);
        if let Some(&moved) = bucket.get(p) {
            self.bucket_pos[moved as usize] = p as u32;
        }
        if to == self.buckets.len() {
            self.buckets.push(Vec::new());
        }
        self.bucket_pos[i] = self.buckets[to].len() as u32;
        self.buckets[to].push(i as u32);
        self.lengths[i] = to as u32;
    }

    fn arrive(&mut self, i: usize) {
        let k = self.lengths[i] as usize;
        self.move_queue(i, k, k + 1);
        if k == 0 {
            self.busy_pos[i] = self.busy.len() as u32;
            self.busy.push(i as u32);
        }
        if k == self.min_level && self.buckets[k].is_empty() {
            self.min_level = k + 1;
        }
    }

    fn depart(&mut self, i: usize) {
        let k = self.lengths[i] as usize;
        debug_assert!(k > 0);
        self.move_queue(i, k, k - 1);
        if k == 1 {
            let p = self.busy_pos[i] as usize;
            self.busy.swap_remove(p);
            if let Some(&moved) = self.busy.get(p) {
                self.busy_pos[moved as usize] = p as u32;
            }
            self.busy_pos[i] = u32::MAX;
        }
        self.min_level = self.min_level.min(k - 1);
    }

    fn choose<R: Rng>(&self, rates: &Rates, total: f64, rng: &mut R) -> Event {
        let x = rng.random::<f64>() * total;
        let n = self.lengths.len();
        if x < rates.dedicated {
            Event { kind: EventKind::DedicatedArrival, queue: rng.random_range(0..n) }
        } else if x < rates.dedicated + rates.smart || self.busy.is_empty() {
            let b = &self.buckets[self.min_level];
            Event { kind: EventKind::SmartArrival, queue: b[rng.random_range(0..b.len())] as usize }
        } else {
            Event { kind: EventKind::Service, queue: self.busy[rng.random_range(0..self.busy.len())] as usize }
        }
    }

    /// Levels whose counts the event changes, `(from, to)`.
    fn levels(&self, ev: Event) -> (usize, usize) {
        let k = self.lengths[ev.queue] as usize;
        match ev.kind {
            EventKind::Service => (k, k - 1),
            _ => (k, k + 1),
        }
    }

    pub fn apply(&mut self, ev: Event) {
        match ev.kind {
            EventKind::Service => self.depart(ev.queue),
            EventKind::DedicatedArrival | EventKind::SmartArrival => {
                debug_assert!(ev.kind != EventKind::SmartArrival || self.lengths[ev.queue] as usize == self.min_level);
                self.arrive(ev.queue)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Rates {
    dedicated: f64,
    smart: f64,
    mu: f64,
}

impl Rates {
    fn new(config: &SimConfig) -> Self {
        let n = config.n_queues as f64;
        let p = &config.params;
        Self { dedicated: n * p.lambda * config.strategy.value(), smart: n * p.lambda_s, mu: p.mu }
    }
}

/// Samples one transition: the holding time and the event, which is applied
/// to `state`. Returns an infinite time and no event when nothing can
/// happen.
pub fn step<R: Rng>(state: &mut SystemState, config: &SimConfig, rng: &mut R) -> (f64, Option<Event>) {
    let rates = Rates::new(config);
    let total = state.total_rate(&rates);
    if !(total > 0.0) {
        return (f64::INFINITY, None);
    }
    let dt: f64 = Exp1.sample(rng);
    let ev = state.choose(&rates, total, rng);
    state.apply(ev);
    (dt / total, Some(ev))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SimEstimate {
    pub n_queues: usize,
    pub q: f64,
    pub seed: u64,
    /// Time-averaged `u_k` for `k = 0..=` the highest level reached.
    pub occupancy_mean: Vec<f64>,
    pub occupancy_half_widths: Vec<f64>,
    pub mean_queue_length: Estimate,
    /// `(E(L^N) + 1) / mu`.
    pub mean_sojourn_dedicated: Estimate,
    /// Measured sojourn times of dedicated customers.
    pub tagged_sojourn: Estimate,
    pub individual_utility: Estimate,
    /// `NaN` when the mean-field law does not exist.
    pub tv_distance_to_pi: f64,
    /// Half of the summed per-level half-widths.
    pub tv_half_width: f64,
    pub events: u64,
    pub nonstationary: bool,
}

/// Lazily integrated per-level occupancy times.
struct Recorder {
    integral: Vec<f64>,
    last: Vec<f64>,
}

impl Recorder {
    fn flush(&mut self, state: &SystemState, k: usize, t: f64) {
        if k >= self.integral.len() {
            self.integral.resize(k + 1, 0.0);
            self.last.resize(k + 1, t);
        }
        self.integral[k] += state.count_at(k) as f64 * (t - self.last[k]);
        self.last[k] = t;
    }

    /// Closes the window ending at `t`; returns per-level integrals.
    fn close(&mut self, state: &SystemState, t: f64) -> Vec<f64> {
        let levels = state.buckets.len().max(self.integral.len());
        for k in 0..levels {
            self.flush(state, k, t);
        }
        let out = self.integral.clone();
        self.integral.iter_mut().for_each(|x| *x = 0.0);
        out
    }
}

pub fn simulate(config: &SimConfig) -> Result<SimEstimate> {
    config.validate()?;
    let mut rng = config.rng();
    let rates = Rates::new(config);
    let mut state = SystemState::empty(config.n_queues);
    let n = config.n_queues as f64;
    let batch_len = config.measure_time / config.n_batches as f64;
    let warmup = config.warmup_time;
    let boundary = |b: usize| warmup + b as f64 * batch_len;

    let mut rec = Recorder { integral: vec![0.0], last: vec![0.0] };
    let mut fifo: Vec<VecDeque<f64>> = vec![VecDeque::new(); config.n_queues];
    let mut batch_occ: Vec<Vec<f64>> = Vec::with_capacity(config.n_batches);
    let mut sojourn_sum = vec![0.0; config.n_batches];
    let mut sojourn_count = vec![0u64; config.n_batches];

    // Window 0 is the warmup; window b >= 1 is batch b - 1.
    let mut window = 0;
    let mut t = 0.0;
    let mut events = 0u64;
    loop {
        let total = state.total_rate(&rates);
        let dt = Distribution::<f64>::sample(&Exp1, &mut rng) / total;
        let t_next = t + dt;
        while window <= config.n_batches && t_next >= boundary(window) {
            let integrals = rec.close(&state, boundary(window));
            if window > 0 {
                batch_occ.push(integrals.iter().map(|x| x / (n * batch_len)).collect());
            }
            window += 1;
        }
        if window > config.n_batches {
            break;
        }
        t = t_next;
        let ev = state.choose(&rates, total, &mut rng);
        let (from, to) = state.levels(ev);
        rec.flush(&state, from, t);
        rec.flush(&state, to, t);
        let queue = &mut fifo[ev.queue];
        match ev.kind {
            EventKind::DedicatedArrival => queue.push_back(t),
            EventKind::SmartArrival => queue.push_back(f64::NAN),
            EventKind::Service => {
                let arrived = queue.pop_front().expect("busy queue holds a customer");
                if window > 0 && arrived >= warmup {
                    sojourn_sum[window - 1] += t - arrived;
                    sojourn_count[window - 1] += 1;
                }
            }
        }
        state.apply(ev);
        events += 1;
        #[cfg(debug_assertions)]
        if events.is_multiple_of(4096) {
            state.check_consistency().expect("consistent simulator state");
        }
    }

    let levels = batch_occ.iter().map(Vec::len).max().unwrap_or(1);
    for b in &mut batch_occ {
        b.resize(levels, 0.0);
    }
    let per_level: Vec<Estimate> = (0..levels)
        .map(|k| batch_means(&batch_occ.iter().map(|b| b[k]).collect::<Vec<_>>()))
        .collect();
    let lengths: Vec<f64> = batch_occ
        .iter()
        .map(|b| b.iter().enumerate().map(|(k, u)| k as f64 * u).sum())
        .collect();
    let mean_queue_length = batch_means(&lengths);
    let p = &config.params;
    let mean_sojourn = mean_queue_length.affine(1.0 / p.mu, 1.0 / p.mu);
    let tagged: Vec<f64> = sojourn_sum
        .iter()
        .zip(&sojourn_count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    let tagged_sojourn = if tagged.iter().all(|x| x.is_finite()) {
        batch_means(&tagged)
    } else {
        Estimate { mean: f64::NAN, half_width: f64::NAN }
    };
    let occupancy_mean: Vec<f64> = per_level.iter().map(|e| e.mean).collect();
    let occupancy_half_widths: Vec<f64> = per_level.iter().map(|e| e.half_width).collect();

    let stable = p.is_stable_at(config.strategy);
    let tv_distance_to_pi = if stable {
        let pi = stationary_distribution(p, config.strategy, levels - 1)?;
        let body: f64 = occupancy_mean.iter().zip(pi.probs()).map(|(a, b)| (a - b).abs()).sum();
        (0.5 * (body + pi.tail_mass())).min(1.0)
    } else {
        f64::NAN
    };
    let tv_half_width = 0.5 * occupancy_half_widths.iter().sum::<f64>();
    let nonstationary = !stable || drift_t_statistic(&lengths) > DRIFT_THRESHOLD;

    Ok(SimEstimate {
        n_queues: config.n_queues,
        q: config.strategy.value(),
        seed: config.seed,
        occupancy_mean,
        occupancy_half_widths,
        mean_queue_length,
        mean_sojourn_dedicated: mean_sojourn,
        tagged_sojourn,
        individual_utility: mean_sojourn.affine(p.reward, -p.cost),
        tv_distance_to_pi,
        tv_half_width,
        events,
        nonstationary,
    })
}
