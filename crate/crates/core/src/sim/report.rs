//! CSV tables for simulation runs and studies.

use super::{ConvergenceRow, EpsNashReport, SimEstimate};
use crate::csvio::{fmt_num, Table};

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

/// One row per run.
pub fn estimate_table(runs: &[SimEstimate]) -> Table {
    let comment = "finite-N simulation estimates with 95% batch-means half-widths (suffix _hw)\n\
         columns: n: number of queues; q: joining probability; seed: RNG seed; events: simulated events; \
         mean_queue_length: time-average queue length; mean_sojourn_dedicated: (E(L)+1)/mu; \
         tagged_sojourn: measured sojourn of dedicated customers; individual_utility: R - C * mean_sojourn_dedicated; \
         tv_distance: total variation distance of the occupancy to the mean-field law; \
         nonstationary: 1 if the run did not settle";
    let mut t = Table::new(
        comment,
        [
            "n",
            "q",
            "seed",
            "events",
            "mean_queue_length",
            "mean_queue_length_hw",
            "mean_sojourn_dedicated",
            "mean_sojourn_dedicated_hw",
            "tagged_sojourn",
            "tagged_sojourn_hw",
            "individual_utility",
            "individual_utility_hw",
            "tv_distance",
            "tv_distance_hw",
            "nonstationary",
        ],
    );
    for e in runs {
        t.push(vec![
            e.n_queues.to_string(),
            fmt_num(e.q),
            e.seed.to_string(),
            e.events.to_string(),
            fmt_num(e.mean_queue_length.mean),
            fmt_num(e.mean_queue_length.half_width),
            fmt_num(e.mean_sojourn_dedicated.mean),
            fmt_num(e.mean_sojourn_dedicated.half_width),
            fmt_num(e.tagged_sojourn.mean),
            fmt_num(e.tagged_sojourn.half_width),
            fmt_num(e.individual_utility.mean),
            fmt_num(e.individual_utility.half_width),
            fmt_num(e.tv_distance_to_pi),
            fmt_num(e.tv_half_width),
            flag(e.nonstationary),
        ]);
    }
    t
}

pub fn convergence_table(rows: &[ConvergenceRow]) -> Table {
    let comment = "convergence of the finite-N occupancy to the mean-field law\n\
         columns: n: number of queues; tv_distance: total variation distance to the mean-field law; \
         tv_half_width: half of the summed per-level 95% half-widths; mean_queue_length and _hw: \
         time-average queue length; events: simulated events; nonstationary: 1 if the run did not settle";
    let mut t = Table::new(
        comment,
        ["n", "tv_distance", "tv_half_width", "mean_queue_length", "mean_queue_length_hw", "events", "nonstationary"],
    );
    for r in rows {
        t.push(vec![
            r.n_queues.to_string(),
            fmt_num(r.tv_distance),
            fmt_num(r.half_width),
            fmt_num(r.estimate.mean_queue_length.mean),
            fmt_num(r.estimate.mean_queue_length.half_width),
            r.estimate.events.to_string(),
            flag(r.nonstationary),
        ]);
    }
    t
}

/// One row per `(N, q)` pair; the per-`N` summary columns repeat on every
/// row of that `N`.
pub fn eps_nash_table(report: &EpsNashReport) -> Table {
    let comment = format!(
        "epsilon-Nash check around the equilibrium q_e = {}\n\
         columns: n: number of queues; q: population joining probability; simulated and simulated_hw: \
         estimated S^N(q) with 95% half-width; mean_field: S(q); deviation: simulated - mean_field; \
         nonstationary: 1 if the run did not settle; max_deviation: max |deviation| over q; \
         epsilon: 2 * max_deviation; max_unilateral_gain: max over q of (q - q_e) * S^N(q_e); \
         epsilon_nash: 1 if that gain is at most epsilon; sandwich: 1 if S^N(q_e) > S^N(q) - epsilon \
         for all q; sandwich_where_dominated: the same over q with S(q) <= S(q_e)",
        fmt_num(report.equilibrium)
    );
    let mut t = Table::new(
        comment,
        [
            "n",
            "q",
            "simulated",
            "simulated_hw",
            "mean_field",
            "deviation",
            "nonstationary",
            "max_deviation",
            "epsilon",
            "max_unilateral_gain",
            "epsilon_nash",
            "sandwich",
            "sandwich_where_dominated",
        ],
    );
    for row in &report.rows {
        for p in &row.points {
            t.push(vec![
                row.n_queues.to_string(),
                fmt_num(p.q),
                fmt_num(p.simulated),
                fmt_num(p.half_width),
                fmt_num(p.mean_field),
                fmt_num(p.simulated - p.mean_field),
                flag(p.nonstationary),
                fmt_num(row.max_deviation),
                fmt_num(row.epsilon),
                fmt_num(row.max_unilateral_gain),
                flag(row.is_epsilon_nash()),
                flag(row.population_sandwich),
                flag(row.sandwich_where_dominated),
            ]);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, Strategy};
    use crate::sim::{simulate, SimConfig};

    #[test]
    fn estimate_rows_round_trip() {
        let p = ModelParams::new(0.5, 0.2, 1.3, 3.0, 1.1).unwrap();
        let e = simulate(&SimConfig::new(p, Strategy::JOIN, 3, 200.0, 4)).unwrap();
        let t = estimate_table(std::slice::from_ref(&e));
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].len(), t.header.len());
        let back = Table::read(t.to_csv_string().as_bytes()).unwrap();
        assert_eq!(back, t);
        let q = back.numbers("mean_queue_length").unwrap()[0].unwrap();
        assert!((q - e.mean_queue_length.mean).abs() <= 1e-8 * q.abs());
    }
}
