use std::fmt::Write as _;

use jsq_game::csvio::{fmt_num, Table};
use jsq_game::game::{equilibrium_strategy, individual_utility, social_benefit_rate, socially_optimal_strategy};
use jsq_game::meanfield::{
    certify_stability_with, initial_state, integrate_with, trajectory_table, CertifyOptions, IntegrateOptions,
};
use jsq_game::model::{performance_metrics, stationary_distribution, TrafficIntensities};
use jsq_game::sim::{
    convergence_study, convergence_table, default_q_grid, eps_nash_table, epsilon_nash_check, estimate_table,
    simulate, SimConfig, StudyOptions, DEFAULT_BATCHES,
};
use jsq_game::sweep::{run_sweep_with, SweepRange, SweepSpec, SweptParameter};
use jsq_game::{Execution, ModelParams, Strategy};

use crate::settings::{Command, Settings};
use crate::{Failure, EXIT_CERTIFICATE, EXIT_OK, EXIT_UNSTABLE};

const DEFAULT_MEASURE: f64 = 1e4;
const DEFAULT_INITIALS: usize = 20;
const DEFAULT_T_END: f64 = 500.0;
const DEFAULT_STUDY_N: [usize; 3] = [10, 50, 200];

/// What a subcommand produced: the CSV, a note for humans and the exit
/// status to use after the CSV has been written.
pub struct Report {
    pub table: Table,
    pub summary: String,
    pub status: u8,
}

impl Report {
    fn ok(table: Table, summary: String) -> Self {
        Self { table, summary, status: EXIT_OK }
    }
}

pub struct Context {
    pub settings: Settings,
    pub seed: u64,
}

impl Context {
    fn execution(&self) -> Execution {
        if self.settings.sequential.unwrap_or(false) {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn params(&self) -> Result<ModelParams, Failure> {
        let s = &self.settings;
        Ok(ModelParams::new(
            need(s.lambda, "lambda")?,
            need(s.lambda_s, "lambda-s")?,
            need(s.mu, "mu")?,
            need(s.reward, "reward")?,
            need(s.cost, "cost")?,
        )?)
    }

    fn strategy_or_equilibrium(&self, p: &ModelParams) -> Result<Strategy, Failure> {
        match self.settings.q {
            Some(q) => Ok(Strategy::new(q)?),
            None => Ok(equilibrium_strategy(p)?.strategy()),
        }
    }

    fn study_options(&self) -> StudyOptions {
        let s = &self.settings;
        StudyOptions {
            measure_time: s.measure.unwrap_or(DEFAULT_MEASURE),
            warmup_time: s.warmup,
            n_batches: s.batches.unwrap_or(DEFAULT_BATCHES),
            execution: self.execution(),
        }
    }

    fn n_values(&self) -> Vec<usize> {
        self.settings.n.clone().map(|l| l.0).unwrap_or_else(|| DEFAULT_STUDY_N.to_vec())
    }
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::invalid(format!("missing --{flag}")))
}

fn param_cells(p: &ModelParams) -> Vec<String> {
    [p.lambda, p.lambda_s, p.mu, p.reward, p.cost].map(fmt_num).to_vec()
}

const PARAM_HEADER: [&str; 5] = ["lambda", "lambda_s", "mu", "reward", "cost"];
const PARAM_DOC: &str = "lambda, lambda_s, mu, reward, cost: model parameters";

pub fn run(cmd: Command, ctx: &Context) -> Result<Report, Failure> {
    match cmd {
        Command::Analytic => analytic(ctx),
        Command::Equilibrium => equilibrium(ctx),
        Command::SocialOpt => social_opt(ctx),
        Command::OdeCertify => ode_certify(ctx),
        Command::Simulate => simulate_once(ctx),
        Command::Converge => converge(ctx),
        Command::EpsNash => eps_nash(ctx),
        Command::Sweep => sweep(ctx),
    }
}

fn analytic(ctx: &Context) -> Result<Report, Failure> {
    let p = ctx.params()?;
    let s = Strategy::new(need(ctx.settings.q, "q")?)?;
    let m = performance_metrics(&p, s)?;
    let ti = TrafficIntensities::new(&p, s)?;
    let utility = individual_utility(&p, s)?;
    let social = social_benefit_rate(&p, s)?;

    let mut header: Vec<String> = PARAM_HEADER.map(String::from).to_vec();
    header.extend(
        [
            "q",
            "rho",
            "sigma",
            "effective_rate",
            "mean_sojourn_dedicated",
            "mean_sojourn_any",
            "mean_queue_length",
            "individual_utility",
            "social_benefit_rate",
        ]
        .map(String::from),
    );
    let mut row = param_cells(&p);
    row.extend(
        [
            s.value(),
            ti.rho,
            ti.sigma,
            m.effective_rate,
            m.mean_sojourn_dedicated,
            m.mean_sojourn_any,
            m.mean_queue_length,
            utility,
            social,
        ]
        .map(fmt_num),
    );
    let mut comment = format!(
        "mean-field stationary measures\ncolumns: {PARAM_DOC}; q: joining probability; rho: (lambda q + lambda_s)/mu; \
         sigma: lambda q/mu; effective_rate: lambda q + lambda_s; mean_sojourn_dedicated: E(W); \
         mean_sojourn_any: E(H) by Little's law; mean_queue_length: E(L); individual_utility: S(q); \
         social_benefit_rate: S_soc(q)"
    );
    if let Some(k) = ctx.settings.kmax {
        let pi = stationary_distribution(&p, s, k)?;
        header.extend((0..=k).map(|i| format!("pi_{i}")));
        header.push("pi_tail".into());
        row.extend(pi.probs().iter().map(|&x| fmt_num(x)));
        row.push(fmt_num(pi.tail_mass()));
        comment.push_str(&format!("; pi_k: stationary fraction of queues with k customers; pi_tail: mass above {k}"));
    }
    let mut table = Table::new(comment, header);
    table.push(row);
    let summary = format!(
        "q = {}: E(W) = {}, E(L) = {}, E(H) = {}, S = {}",
        fmt_num(s.value()),
        fmt_num(m.mean_sojourn_dedicated),
        fmt_num(m.mean_queue_length),
        fmt_num(m.mean_sojourn_any),
        fmt_num(utility)
    );
    Ok(Report::ok(table, summary))
}

fn equilibrium(ctx: &Context) -> Result<Report, Failure> {
    let p = ctx.params()?;
    let r = equilibrium_strategy(&p)?;
    let utility = individual_utility(&p, r.strategy())?;
    let social = social_benefit_rate(&p, r.strategy())?;
    let mut header: Vec<String> = PARAM_HEADER.map(String::from).to_vec();
    header.extend(["q_e", "branch", "threshold_low", "threshold_high", "individual_utility", "social_benefit_rate"].map(String::from));
    let comment = format!(
        "symmetric Nash equilibrium\ncolumns: {PARAM_DOC}; q_e: equilibrium joining probability; \
         branch: AlwaysBalk, Interior or AlwaysJoin; threshold_low, threshold_high: R/C bounds of the interior branch; \
         individual_utility: S(q_e); social_benefit_rate: S_soc(q_e)"
    );
    let mut row = param_cells(&p);
    row.extend([fmt_num(r.q), r.branch.to_string(), fmt_num(r.threshold_low), fmt_num(r.threshold_high)]);
    row.extend([fmt_num(utility), fmt_num(social)]);
    let mut table = Table::new(comment, header);
    table.push(row);
    Ok(Report::ok(table, format!("q_e = {} ({})", fmt_num(r.q), r.branch)))
}

fn social_opt(ctx: &Context) -> Result<Report, Failure> {
    let p = ctx.params()?;
    let r = socially_optimal_strategy(&p)?;
    let social = social_benefit_rate(&p, r.strategy())?;
    let mut header: Vec<String> = PARAM_HEADER.map(String::from).to_vec();
    header.extend(["q_star", "branch", "threshold_low", "threshold_high", "social_benefit_rate"].map(String::from));
    let comment = format!(
        "social optimum\ncolumns: {PARAM_DOC}; q_star: joining probability maximising S_soc; \
         branch: AlwaysBalk, Interior or AlwaysJoin; threshold_low, threshold_high: R/C bounds of the interior branch; \
         social_benefit_rate: S_soc(q_star)"
    );
    let mut row = param_cells(&p);
    row.extend([fmt_num(r.q), r.branch.to_string(), fmt_num(r.threshold_low), fmt_num(r.threshold_high)]);
    row.push(fmt_num(social));
    let mut table = Table::new(comment, header);
    table.push(row);
    Ok(Report::ok(table, format!("q* = {} ({}), S_soc = {}", fmt_num(r.q), r.branch, fmt_num(social))))
}

fn ode_certify(ctx: &Context) -> Result<Report, Failure> {
    let p = ctx.params()?;
    let s = ctx.strategy_or_equilibrium(&p)?;
    let n = ctx.settings.initials.unwrap_or(DEFAULT_INITIALS);
    let t_end = ctx.settings.t_end.unwrap_or(DEFAULT_T_END);
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Failure::invalid(format!("--t-end must be positive, got {t_end}")));
    }
    let opts = CertifyOptions { k_max: ctx.settings.kmax, execution: ctx.execution(), ..Default::default() };
    let cert = certify_stability_with(&p, s, n, t_end, ctx.seed, &opts)?;

    if let Some(path) = &ctx.settings.trajectory {
        let start = initial_state(0, ctx.seed, opts.support.min(cert.k_max), cert.k_max);
        let integ = IntegrateOptions { dt_max: opts.dt_max, auto_extend: false, ..Default::default() };
        let traj = integrate_with(&p, s, &start, t_end, &integ)?;
        crate::write_table(&trajectory_table(&p, s, &cert.weights, &traj)?, Some(path))?;
    }

    let comment = format!(
        "Lyapunov certificate at q = {} up to t = {}\ncolumns: trajectory: initial state index \
         (0 empty system, 1 point mass, others random); final_l1_distance: L1 distance to the fixed point at t_end; \
         converged: 1 if below {}; k_max: truncation level; valid: 1 if the whole certificate holds; \
         max_dvdt: largest dV/dt with u_0 > 0; v_monotone: 1 if V never increased; boundary_points: states with u_0 = 0; \
         max_dvdt_boundary: largest dV/dt among those",
        fmt_num(s.value()),
        fmt_num(t_end),
        fmt_num(opts.tolerance)
    );
    let mut table = Table::new(
        comment,
        [
            "trajectory",
            "final_l1_distance",
            "converged",
            "k_max",
            "valid",
            "max_dvdt",
            "v_monotone",
            "boundary_points",
            "max_dvdt_boundary",
        ],
    );
    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    for (i, &d) in cert.final_distances.iter().enumerate() {
        table.push(vec![
            i.to_string(),
            fmt_num(d),
            flag(d < opts.tolerance),
            cert.k_max.to_string(),
            flag(cert.valid),
            fmt_num(cert.max_dvdt_observed),
            flag(cert.v_monotone),
            cert.boundary_points.to_string(),
            fmt_num(cert.max_dvdt_boundary),
        ]);
    }
    let worst = cert.final_distances.iter().cloned().fold(0.0, f64::max);
    let summary = format!(
        "certificate {} at q = {}: {} trajectories, K = {}, max dV/dt = {}, worst final distance = {}",
        if cert.valid { "valid" } else { "INVALID" },
        fmt_num(s.value()),
        cert.trajectories_checked,
        cert.k_max,
        fmt_num(cert.max_dvdt_observed),
        fmt_num(worst)
    );
    let status = if cert.valid { EXIT_OK } else { EXIT_CERTIFICATE };
    Ok(Report { table, summary, status })
}

fn unstable_status(p: &ModelParams, s: Strategy) -> u8 {
    if p.is_stable_at(s) {
        EXIT_OK
    } else {
        EXIT_UNSTABLE
    }
}

fn simulate_once(ctx: &Context) -> Result<Report, Failure> {
    let p = ctx.params()?;
    let s = Strategy::new(need(ctx.settings.q, "q")?)?;
    let n = match ctx.settings.n.as_ref().map(|l| l.0.as_slice()) {
        Some([n]) => *n,
        Some(_) => return Err(Failure::invalid("simulate takes a single --n")),
        None => return Err(Failure::invalid("missing --n")),
    };
    let opts = ctx.study_options();
    let mut config = SimConfig::new(p, s, n, opts.measure_time, ctx.seed);
    config.n_batches = opts.n_batches;
    if let Some(w) = opts.warmup_time {
        config.warmup_time = w;
    }
    let e = simulate(&config)?;
    let summary = format!(
        "N = {n}, q = {}: E(L) = {} +- {}, S = {} +- {}, TV = {}{}",
        fmt_num(s.value()),
        fmt_num(e.mean_queue_length.mean),
        fmt_num(e.mean_queue_length.half_width),
        fmt_num(e.individual_utility.mean),
        fmt_num(e.individual_utility.half_width),
        fmt_num(e.tv_distance_to_pi),
        if e.nonstationary { " (nonstationary)" } else { "" }
    );
    Ok(Report { table: estimate_table(&[e]), summary, status: unstable_status(&p, s) })
}

fn converge(ctx: &Context) -> Result<Report, Failure> {
    let p = ctx.params()?;
    let s = ctx.strategy_or_equilibrium(&p)?;
    let rows = convergence_study(&p, s, &ctx.n_values(), ctx.seed, &ctx.study_options())?;
    let mut summary = format!("q = {}", fmt_num(s.value()));
    for r in &rows {
        write!(summary, "\nN = {}: TV = {} +- {}", r.n_queues, fmt_num(r.tv_distance), fmt_num(r.half_width)).unwrap();
    }
    Ok(Report { table: convergence_table(&rows), summary, status: unstable_status(&p, s) })
}

fn eps_nash(ctx: &Context) -> Result<Report, Failure> {
    let p = ctx.params()?;
    let grid = match &ctx.settings.q_grid {
        Some(g) => g.0.clone(),
        None => default_q_grid(&p)?,
    };
    let report = epsilon_nash_check(&p, &ctx.n_values(), &grid, ctx.seed, &ctx.study_options())?;
    let mut summary = format!("q_e = {}", fmt_num(report.equilibrium));
    for r in &report.rows {
        write!(
            summary,
            "\nN = {}: max deviation = {}, epsilon-Nash = {}, max unilateral gain = {}",
            r.n_queues,
            fmt_num(r.max_deviation),
            r.is_epsilon_nash(),
            fmt_num(r.max_unilateral_gain)
        )
        .unwrap();
    }
    Ok(Report::ok(eps_nash_table(&report), summary))
}

fn sweep(ctx: &Context) -> Result<Report, Failure> {
    let s = &ctx.settings;
    let mut spec = match (&s.preset, &s.sweep_param) {
        (Some(_), Some(_)) => return Err(Failure::invalid("use either --preset or --sweep-param")),
        (Some(name), None) => match name.parse::<SweptParameter>()? {
            SweptParameter::Mu => SweepSpec::service_rate_preset(),
            SweptParameter::LambdaS => SweepSpec::smart_rate_preset(),
            SweptParameter::Reward => SweepSpec::reward_preset(),
        },
        (None, Some(name)) => {
            let parameter: SweptParameter = name.parse()?;
            let range: SweepRange = need(s.sweep_range.as_deref(), "sweep-range")?.parse()?;
            let pick = |v: Option<f64>, which: SweptParameter, flag: &str| match v {
                Some(x) => Ok(x),
                None if which == parameter => Ok(range.start),
                None => need(None, flag),
            };
            let fixed = ModelParams {
                lambda: need(s.lambda, "lambda")?,
                lambda_s: pick(s.lambda_s, SweptParameter::LambdaS, "lambda-s")?,
                mu: pick(s.mu, SweptParameter::Mu, "mu")?,
                reward: pick(s.reward, SweptParameter::Reward, "reward")?,
                cost: need(s.cost, "cost")?,
            };
            SweepSpec::new(parameter, range, fixed)
        }
        (None, None) => return Err(Failure::invalid("sweep needs --preset or --sweep-param")),
    };
    if s.preset.is_some() {
        if let Some(r) = &s.sweep_range {
            spec.range = r.parse()?;
        }
        let f = &mut spec.fixed;
        for (slot, v) in [
            (&mut f.lambda, s.lambda),
            (&mut f.lambda_s, s.lambda_s),
            (&mut f.mu, s.mu),
            (&mut f.reward, s.reward),
            (&mut f.cost, s.cost),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
    }
    let f = spec.fixed;
    ModelParams::new(f.lambda, f.lambda_s, f.mu, f.reward, f.cost)?;
    let table = run_sweep_with(&spec, ctx.execution())?;
    let skipped = table.rows.iter().filter(|r| r[r.len() - 2] == "1").count();
    let summary = format!(
        "swept {} over {} points ({skipped} skipped)",
        spec.parameter,
        table.rows.len()
    );
    Ok(Report::ok(table, summary))
}
