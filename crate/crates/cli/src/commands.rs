//! One function per subcommand. Each returns whether its checks held.

use anyhow::Result;
use serde::Serialize;

use deadline_core::analysis::{render_table, verify_grid, verify_selected, PropertyReport, Status};
use deadline_core::policy::{cutoffs, lambda_misperception_policy, saving_rule, Procrastinator};
use deadline_core::simulator::{double_payment_value, simulate_traces, BatchSummary};
use deadline_core::value_solver::{solve, solve_two_payment_with, SolveDiagnostics};
use deadline_core::ValueGrid;

use crate::config::{RunConfig, VerifyPlan};
use crate::output::{Meta, OutDir};

pub enum Outcome {
    Passed,
    ChecksFailed,
}

/// Work that passed validation and only needs running.
pub enum Job {
    Solve(RunConfig),
    Cutoffs(RunConfig),
    Simulate(RunConfig),
    TwoPayment(RunConfig),
    Procrastinate(RunConfig),
    Verify(RunConfig, Box<VerifyPlan>),
}

impl Job {
    /// Validates everything the command will need.
    pub fn prepare(command: &str, config: RunConfig) -> Result<Job> {
        Ok(match command {
            "solve" => {
                config.model()?;
                Job::Solve(config)
            }
            "cutoffs" => {
                config.model()?;
                Job::Cutoffs(config)
            }
            "simulate" => {
                config.simulation()?;
                Job::Simulate(config)
            }
            "two-payment" => {
                config.two_payment()?;
                Job::TwoPayment(config)
            }
            "procrastinate" => {
                config.procrastination()?;
                Job::Procrastinate(config)
            }
            "verify" => {
                let plan = Box::new(config.verification()?);
                Job::Verify(config, plan)
            }
            other => unreachable!("unknown command {other}"),
        })
    }

    pub fn run(self) -> Result<Outcome> {
        match self {
            Job::Solve(c) => run_solve(&c),
            Job::Cutoffs(c) => run_cutoffs(&c),
            Job::Simulate(c) => run_simulate(&c),
            Job::TwoPayment(c) => run_two_payment(&c),
            Job::Procrastinate(c) => run_procrastinate(&c),
            Job::Verify(c, plan) => run_verify(&c, *plan),
        }
    }
}

fn meta(config: &RunConfig, command: &'static str) -> Meta {
    Meta::new(command, config.hash(), config.seed)
}

#[derive(Serialize)]
struct SolveDoc<'a> {
    grid: &'a ValueGrid,
    diagnostics: &'a SolveDiagnostics,
}

fn run_solve(config: &RunConfig) -> Result<Outcome> {
    let (spec, params) = config.model()?;
    let grid = solve(&spec, &params)?;
    let meta = meta(config, "solve");
    let out = OutDir::create(&config.out)?;
    grid.write_csv(out.file("value_grid.csv")?, &meta.preamble())?;
    out.json("value_grid.json", &meta, &SolveDoc { grid: &grid, diagnostics: grid.diagnostics() })?;
    println!(
        "solved {} steps on [{}, {}]; V(t_min, n) = {:.9}; worst E-max cross-check gap {:.2e}",
        grid.times().len() - 1,
        grid.t_start(),
        grid.t_end(),
        grid.value(grid.t_start(), params.n)?,
        grid.diagnostics().max_emax_discrepancy
    );
    Ok(Outcome::Passed)
}

#[derive(Serialize)]
struct DomainStart {
    i: usize,
    j: usize,
    /// `None`: defined over the whole grid.
    defined_from: Option<f64>,
}

#[derive(Serialize)]
struct CutoffDoc {
    domains: Vec<DomainStart>,
}

fn run_cutoffs(config: &RunConfig) -> Result<Outcome> {
    let (spec, params) = config.model()?;
    let grid = solve(&spec, &params)?;
    let table = cutoffs(&grid, &spec)?;
    let meta = meta(config, "cutoffs");
    let out = OutDir::create(&config.out)?;
    table.write_csv(out.file("cutoffs.csv")?, &meta.preamble())?;
    let mut domains = Vec::new();
    for i in 1..=params.n {
        for j in 1..=i {
            domains.push(DomainStart { i, j, defined_from: table.domain_start(i, j) });
        }
    }
    out.json("cutoff_domains.json", &meta, &CutoffDoc { domains })?;
    println!("wrote cutoffs for n = {} at {} times", params.n, table.times.len());
    Ok(Outcome::Passed)
}

#[derive(Serialize)]
struct SimulationDoc {
    x0: usize,
    t0: f64,
    paths: usize,
    mean: f64,
    stderr: f64,
    n: usize,
    /// Solved `V(t0, x0)`.
    value: f64,
    z_score: f64,
}

fn run_simulate(config: &RunConfig) -> Result<Outcome> {
    let (spec, params, sim) = config.simulation()?;
    let grid = solve(&spec, &params)?;
    let traces = simulate_traces(&grid, &spec, sim.x0, sim.t0, config.seed, sim.paths)?;
    let realized: Vec<f64> = traces.iter().map(|t| t.realized_utility).collect();
    let summary = BatchSummary::from_samples(&realized);
    let value = grid.value(sim.t0, sim.x0)?;
    let meta = meta(config, "simulate");
    let out = OutDir::create(&config.out)?;
    if sim.write_traces {
        let mut w = out.csv("traces.csv", &meta)?;
        w.write_record(["trace", "seed", "opportunities", "spent", "realized_utility"])?;
        for (k, trace) in traces.iter().enumerate() {
            let spent: usize = trace.decisions.iter().map(|d| d.0).sum();
            w.write_record([
                k.to_string(),
                trace.seed.to_string(),
                trace.opportunities.len().to_string(),
                spent.to_string(),
                format!("{:.15e}", trace.realized_utility),
            ])?;
        }
        w.flush()?;
    }
    let doc = SimulationDoc {
        x0: sim.x0,
        t0: sim.t0,
        paths: sim.paths,
        mean: summary.mean,
        stderr: summary.stderr,
        n: summary.n,
        value,
        z_score: summary.z_score(value),
    };
    out.json("simulation_summary.json", &meta, &doc)?;
    println!(
        "mean realized utility {:.6} +- {:.6} over {} agents; V(t0, x0) = {value:.6} (z = {:.2})",
        doc.mean, doc.stderr, doc.n, doc.z_score
    );
    Ok(Outcome::Passed)
}

#[derive(Serialize)]
struct TwoPaymentDoc {
    x: usize,
    x_bar: usize,
    t_bar: f64,
    min_d_dc: f64,
    /// Whether `dE/dc > 0` at every query time; `None` when the payment
    /// arrives at the deadline and carries no value.
    correlation_averse: Option<bool>,
}

fn run_two_payment(config: &RunConfig) -> Result<Outcome> {
    let (spec, tp, dists, query_points) = config.two_payment()?;
    let base = solve(&spec, &tp.base)?;
    let grids = solve_two_payment_with(&spec, &tp, &base)?;
    let meta = meta(config, "two-payment");
    let out = OutDir::create(&config.out)?;

    let mut w = out.csv("two_payment_grid.csv", &meta)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..=tp.x).map(|i| format!("W_{i}")));
    w.write_record(&header)?;
    for t in base.times() {
        let mut rec = vec![format!("{t:.12}")];
        for i in 0..=tp.x {
            rec.push(format!("{:.15e}", grids.value(*t, i)?));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = out.csv("correlation_sweep.csv", &meta)?;
    w.write_record(["t", "c", "value", "d_dc"])?;
    let mut min_d_dc = f64::INFINITY;
    for k in 0..query_points {
        let t = tp.base.t_min + (tp.t_bar - tp.base.t_min) * k as f64 / query_points as f64;
        for dist in &dists {
            let e = double_payment_value(&grids, dist, t)?;
            min_d_dc = min_d_dc.min(e.d_dc);
            w.write_record([format!("{t:.12}"), format!("{:.12}", dist.c), format!("{:.15e}", e.value), format!("{:.15e}", e.d_dc)])?;
        }
    }
    w.flush()?;

    let degenerate = tp.t_bar >= tp.base.deadline;
    let averse = (!degenerate).then_some(min_d_dc > 0.0);
    out.json(
        "two_payment_summary.json",
        &meta,
        &TwoPaymentDoc { x: tp.x, x_bar: tp.x_bar, t_bar: tp.t_bar, min_d_dc, correlation_averse: averse },
    )?;
    match averse {
        Some(true) => println!("dE/dc > 0 at all {query_points} query times (min {min_d_dc:.4e})"),
        Some(false) => println!("FAIL: dE/dc reaches {min_d_dc:.4e}"),
        None => println!("payment at the deadline: dE/dc = {min_d_dc:.2e}, nothing to check"),
    }
    Ok(if averse == Some(false) { Outcome::ChecksFailed } else { Outcome::Passed })
}

#[derive(Serialize)]
struct ProcrastinationDoc {
    kappa: f64,
    lattice_points: usize,
    /// Points where a misperceiving agent saves less than the accurate one.
    violations: usize,
    strictly_more_zeta: usize,
    strictly_more_lambda: usize,
}

fn run_procrastinate(config: &RunConfig) -> Result<Outcome> {
    let (spec, believed, params, cfg, t_from) = config.procrastination()?;
    let grid = solve(&spec, &params)?;
    let believed_grid = solve(&believed, &params)?;
    let agent = Procrastinator::new(&spec, &believed, &believed_grid)?;
    let meta = meta(config, "procrastinate");
    let out = OutDir::create(&config.out)?;
    let mut w = out.csv("procrastination.csv", &meta)?;
    w.write_record(["theta", "t", "x", "accurate", "zeta_agent", "lambda_agent"])?;
    let mut doc = ProcrastinationDoc {
        kappa: cfg.kappa,
        lattice_points: 0,
        violations: 0,
        strictly_more_zeta: 0,
        strictly_more_lambda: 0,
    };
    for a in 0..cfg.theta_points {
        let theta = a as f64 / (cfg.theta_points - 1) as f64;
        for b in 0..cfg.time_points {
            let t = t_from + (params.deadline - t_from) * b as f64 / (cfg.time_points - 1) as f64;
            for x in 1..=params.n {
                let accurate = saving_rule(&grid, &spec, theta, t, x)?;
                let zeta_agent = agent.saving(theta, t, x)?;
                let lambda_agent = lambda_misperception_policy(&spec, &grid, cfg.kappa, theta, t, x)?;
                doc.lattice_points += 1;
                doc.violations += usize::from(zeta_agent < accurate || lambda_agent < accurate);
                doc.strictly_more_zeta += usize::from(zeta_agent > accurate);
                doc.strictly_more_lambda += usize::from(lambda_agent > accurate);
                w.write_record([
                    format!("{theta:.12}"),
                    format!("{t:.12}"),
                    x.to_string(),
                    accurate.to_string(),
                    zeta_agent.to_string(),
                    lambda_agent.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    out.json("procrastination_summary.json", &meta, &doc)?;
    println!(
        "{} lattice points: {} where a misperceiving agent saves less; strictly more saving at {} (zeta) and {} (lambda)",
        doc.lattice_points, doc.violations, doc.strictly_more_zeta, doc.strictly_more_lambda
    );
    Ok(if doc.violations == 0 { Outcome::Passed } else { Outcome::ChecksFailed })
}

#[derive(Serialize)]
struct VerifyDoc<'a> {
    passed: usize,
    failed: usize,
    skipped: usize,
    reports: &'a [PropertyReport],
}

fn run_verify(config: &RunConfig, plan: VerifyPlan) -> Result<Outcome> {
    let reports = match plan {
        VerifyPlan::Battery { battery, tolerances, properties } => verify_selected(&battery, &tolerances, &properties)?,
        VerifyPlan::Grid { spec, grid, tolerances, properties } => verify_grid(&spec, &grid, &tolerances)?
            .into_iter()
            .filter(|r| properties.iter().any(|p| p.id() == r.property_id))
            .collect(),
    };
    let count = |s: Status| reports.iter().filter(|r| r.status == s).count();
    let doc = VerifyDoc {
        passed: count(Status::Pass),
        failed: count(Status::Fail),
        skipped: count(Status::Skipped),
        reports: &reports,
    };
    let meta = meta(config, "verify");
    let out = OutDir::create(&config.out)?;
    out.json("verify_report.json", &meta, &doc)?;
    print!("{}", render_table(&reports));
    println!("{} pass, {} fail, {} skipped", doc.passed, doc.failed, doc.skipped);
    Ok(if doc.failed == 0 { Outcome::Passed } else { Outcome::ChecksFailed })
}
