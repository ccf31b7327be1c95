//! One driver per subcommand.

use std::path::Path;
use std::time::Instant;

use dtpc::converse::{converse_experiment_with, ConverseConfig, ConverseReport};
use dtpc::id::{
    measure_errors_with, rate_of, scaling_schedule, tag_length, ColoringFamily, ErrorExperiment, IdCodeSpec, Link,
    ScalingRow, TrialReport,
};
use dtpc::par::{derive_seed, stream};
use dtpc::secrecy::{
    event_audit, exact_leakage, leakage_report, peak_scaling, quantized_measure, EventAuditRow, InputEnsemble,
    LeakageReport, Path as EvalPath,
};
use dtpc::{
    capacity, secrecy_capacity, sid_capacity, CapacityResult, Exec, PoissonChannel, PowerConstraint, SidReport,
    WiretapPair,
};
use serde::Serialize;
use serde_json::Value;

use crate::config::*;
use crate::output::{write_csv, write_json, Envelope, Timing, VERSION};
use crate::CliError;

const TAG_SOLVER: u64 = 1;
const TAG_CODE: u64 = 2;
const TAG_TRIALS: u64 = 3;
const TAG_ENSEMBLE: u64 = 4;
const TAG_MC: u64 = 5;
const TAG_EVENTS: u64 = 6;
const TAG_CONVERSE: u64 = 7;

/// Everything a command needs besides its own parameters.
pub struct Context<'a> {
    pub out: &'a Path,
    pub root_seed: u64,
    pub tolerances: Tolerances,
    pub exec: Exec,
}

/// Whether the run met its certificates and assertions.
pub struct Outcome {
    pub passed: bool,
    pub message: String,
}

impl Outcome {
    fn check(passed: bool, failure: impl Into<String>) -> Self {
        Outcome {
            passed,
            message: if passed { String::new() } else { failure.into() },
        }
    }
}

#[derive(Serialize)]
struct Resolved<'a, P: Serialize> {
    #[serde(flatten)]
    params: &'a P,
    solver: dtpc::SolverConfig,
}

fn finish<P: Serialize, R: Serialize>(
    ctx: &Context,
    command: &str,
    params: &P,
    result: &R,
    started: Instant,
) -> Result<(), CliError> {
    let env = Envelope {
        command,
        version: VERSION,
        root_seed: ctx.root_seed,
        config: Resolved {
            params,
            solver: ctx.tolerances.solver(derive_seed(ctx.root_seed, TAG_SOLVER)),
        },
        result,
    };
    write_json(ctx.out, &format!("{command}.json"), &env)?;
    let timing = Timing {
        command,
        version: VERSION,
        root_seed: ctx.root_seed,
        wallclock_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    write_json(ctx.out, "timing.json", &timing)
}

/// Capacity result without the wallclock field.
fn capacity_value(r: &CapacityResult) -> Value {
    let mut v = serde_json::to_value(r).expect("capacity result serializes");
    if let Value::Object(m) = &mut v {
        m.remove("wallclock_ms");
    }
    v
}

#[derive(Serialize)]
struct SupportRow {
    x: f64,
    mass: f64,
}

fn write_support(ctx: &Context, r: &CapacityResult) -> Result<(), CliError> {
    let rows: Vec<SupportRow> = r
        .distribution
        .points()
        .iter()
        .map(|&(x, mass)| SupportRow { x, mass })
        .collect();
    write_csv(ctx.out, "support.csv", &rows)
}

fn certified(r: &CapacityResult, what: &str) -> Outcome {
    Outcome::check(
        r.certified,
        format!(
            "{what} not certified: gap {:.3e}, KKT violation {:.3e}, support residual {:.3e} bits",
            r.ba_gap, r.kkt_max_violation, r.kkt_support_residual
        ),
    )
}

fn solver(ctx: &Context) -> dtpc::SolverConfig {
    ctx.tolerances.solver(derive_seed(ctx.root_seed, TAG_SOLVER))
}

pub fn cmd_capacity(ctx: &Context, args: CapacityArgs) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let pmax = require(args.pmax, "pmax")?;
    let p = CapacityParams {
        lambda0: require(args.lambda0, "lambda0")?,
        pmax,
        pavg: args.pavg.unwrap_or(pmax),
        gain: args.gain.unwrap_or(1.0),
    };
    let mut tol = ctx.tolerances.clone();
    tol.kkt_tol = args.tol.or(tol.kkt_tol);
    let ctx = Context {
        tolerances: tol,
        ..*ctx
    };
    let ch = PoissonChannel::with_gain(p.lambda0, p.gain, p.pmax)?;
    let pc = PowerConstraint::new(p.pmax, p.pavg)?;
    let r = capacity(&ch, &pc, &solver(&ctx))?;
    write_support(&ctx, &r)?;
    finish(&ctx, "capacity", &p, &capacity_value(&r), started)?;
    Ok(certified(&r, "capacity"))
}

fn wiretap(args: WiretapArgs) -> Result<(WiretapParams, WiretapPair, PowerConstraint), CliError> {
    let pmax = require(args.pmax, "pmax")?;
    let p = WiretapParams {
        lambda_b: require(args.lambda_b, "lambda_b")?,
        lambda_e: require(args.lambda_e, "lambda_e")?,
        pmax,
        pavg: args.pavg.unwrap_or(pmax),
    };
    let wp = WiretapPair::from_dark_currents(p.lambda_b, p.lambda_e, p.pmax)?;
    let pc = PowerConstraint::new(p.pmax, p.pavg)?;
    Ok((p, wp, pc))
}

pub fn cmd_secrecy(ctx: &Context, args: WiretapArgs) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let (p, wp, pc) = wiretap(args)?;
    let r = secrecy_capacity(&wp, &pc, &solver(ctx))?;
    write_support(ctx, &r)?;
    finish(ctx, "secrecy", &p, &capacity_value(&r), started)?;
    Ok(certified(&r, "secrecy capacity"))
}

pub fn cmd_sid(ctx: &Context, args: WiretapArgs) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let (p, wp, pc) = wiretap(args)?;
    let r: SidReport = sid_capacity(&wp, &pc, &solver(ctx))?;
    finish(ctx, "sid", &p, &r, started)?;
    Ok(Outcome::check(true, ""))
}

#[derive(Serialize)]
struct IdsimResult {
    capacity_bits: f64,
    /// `log2(q) / n`
    inner_rate: f64,
    inner_rate_over_capacity: f64,
    /// `log2(q bins) / ceil(sqrt(n))`
    tag_rate: f64,
    tag_rate_below_capacity: bool,
    tag_length: usize,
    total_length: usize,
    log2_message_count: f64,
    id_rate: f64,
    report: TrialReport,
    targets_met: bool,
    scaling: Vec<ScalingRow>,
}

pub fn cmd_idsim(ctx: &Context, args: IdsimArgs) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let pmax = require(args.pmax, "pmax")?;
    let p = IdsimParams {
        lambda0: require(args.lambda0, "lambda0")?,
        pmax,
        pavg: args.pavg.unwrap_or(pmax),
        n: require(args.n, "n")?,
        q: require(args.q, "q")?,
        d: require(args.d, "d")?,
        bins: args.bins.unwrap_or(1),
        trials: args.trials.unwrap_or(10_000),
        senders: args.senders.unwrap_or(16),
        candidates: args.candidates.unwrap_or(16),
        link: args.link.unwrap_or(LinkArg::Poisson),
        lambda1: args.lambda1.unwrap_or(0.05),
        lambda2: args.lambda2.unwrap_or(0.05),
        eps: args.eps.unwrap_or(0.1),
        scaling_n: args.scaling_n.unwrap_or_default(),
    };
    let ch = PoissonChannel::new(p.lambda0, p.pmax)?;
    let pc = PowerConstraint::new(p.pmax, p.pavg)?;
    let coloring = ColoringFamily::full(p.q, p.d)?;
    if p.n == 0 {
        return Err(CliError::Usage("n must be positive".into()));
    }
    let cap = capacity(&ch, &pc, &solver(ctx))?;
    if !cap.certified {
        return Ok(certified(&cap, "capacity"));
    }
    let c = cap.capacity_bits;
    let inner_rate = (p.q as f64).log2() / p.n as f64;
    if inner_rate >= c {
        return Err(dtpc::Error::RateAboveCapacity {
            rate: inner_rate,
            capacity: c,
        }
        .into());
    }
    let t = tag_length(p.n);
    let tag_rate = ((p.q as f64) * p.bins as f64).log2() / t as f64;
    let spec = IdCodeSpec::random(
        &ch,
        &cap.distribution,
        &pc,
        p.n,
        coloring,
        p.bins,
        (p.lambda1, p.lambda2),
        derive_seed(ctx.root_seed, TAG_CODE),
    )?;
    let exp = ErrorExperiment {
        trials: p.trials,
        senders: p.senders,
        candidates: p.candidates,
        seed: derive_seed(ctx.root_seed, TAG_TRIALS),
    };
    let link = match p.link {
        LinkArg::Poisson => Link::Poisson,
        LinkArg::Noiseless => Link::Noiseless,
    };
    let m = measure_errors_with(&spec, link, &exp, ctx.exec)?;
    let report = m.report;
    let targets_met =
        report.first_kind.rate <= p.lambda1 && report.second_kind.as_ref().is_none_or(|s| s.worst.rate <= p.lambda2);
    let scaling = if p.scaling_n.is_empty() {
        Vec::new()
    } else {
        scaling_schedule(&p.scaling_n, p.eps, c - 2.0 * p.eps, true)?
    };
    let result = IdsimResult {
        capacity_bits: c,
        inner_rate,
        inner_rate_over_capacity: inner_rate / c,
        tag_rate,
        tag_rate_below_capacity: tag_rate < c,
        tag_length: t,
        total_length: spec.total_length(),
        log2_message_count: spec.coloring.log2_message_count(),
        id_rate: rate_of(&spec)?,
        report,
        targets_met,
        scaling,
    };
    write_csv(ctx.out, "trials.csv", &m.records)?;
    finish(ctx, "idsim", &p, &result, started)?;
    Ok(Outcome::check(
        targets_met,
        format!(
            "identification targets missed: first kind {:.4}, second kind {:?}",
            result.report.first_kind.rate,
            result.report.second_kind.as_ref().map(|s| s.worst.rate)
        ),
    ))
}

#[derive(Serialize)]
struct QuantizationRow {
    grid: usize,
    delta_prime: f64,
    enumerated_tv: f64,
}

#[derive(Serialize)]
struct AuditSummary {
    events: usize,
    delta_i: f64,
    delta_j: f64,
    quantized_tv: f64,
    uniform_bound: f64,
    max_diff: f64,
    violations: usize,
}

#[derive(Serialize)]
struct LeakageResult {
    report: LeakageReport,
    /// Exact `I(M; Y^n)` at the legitimate receiver.
    main_mi_bits: Option<f64>,
    below_chain_rule: Option<bool>,
    below_main: Option<bool>,
    quantization: Vec<QuantizationRow>,
    audit: Option<AuditSummary>,
    /// `(n, total bound in bits)` with per-letter input `(c / n) lambda_E`.
    peak_scaling: Vec<(usize, f64)>,
}

pub fn cmd_leakage(ctx: &Context, args: LeakageArgs) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let lambda_e = require(args.lambda_e, "lambda_e")?;
    let pmax = require(args.pmax, "pmax")?;
    let eve = PoissonChannel::new(lambda_e, pmax)?;
    let p = LeakageParams {
        lambda_b: args.lambda_b,
        lambda_e,
        pmax,
        messages: args.messages.unwrap_or(4),
        n: args.n.unwrap_or(2),
        support: args.support.unwrap_or(2),
        trials: args.trials.unwrap_or(10_000),
        z0: args.z0.unwrap_or(eve.y_max()),
        grids: args.grids.unwrap_or_else(|| vec![2, 8, 32]),
        events: args.events.unwrap_or(1000),
        peak_c: args.peak_c.unwrap_or(1.0),
    };
    let ens = InputEnsemble::random(
        p.messages,
        p.n,
        p.support,
        p.pmax,
        &mut stream(derive_seed(ctx.root_seed, TAG_ENSEMBLE), 0),
    )?;
    let report = leakage_report(&ens, &eve, p.trials, derive_seed(ctx.root_seed, TAG_MC), ctx.exec)?;
    let exact = report.path == EvalPath::Exact;

    let main_mi_bits = match (exact, p.lambda_b) {
        (true, Some(lb)) => Some(exact_leakage(&ens, &PoissonChannel::new(lb, p.pmax)?)?),
        _ => None,
    };
    let below_chain_rule = report.exact_mi_bits.map(|mi| mi <= report.chain_rule_bound_bits + 1e-9);
    let below_main = match (report.exact_mi_bits, main_mi_bits, p.lambda_b) {
        (Some(e), Some(m), Some(lb)) if lb <= lambda_e => Some(e <= m + 1e-9),
        _ => None,
    };

    let mut quantization = Vec::new();
    let mut audit = None;
    let mut rows: Vec<EventAuditRow> = Vec::new();
    if exact {
        for &g in &p.grids {
            if g < 2 {
                return Err(CliError::Usage("grid sizes must be at least 2".into()));
            }
            let grid: Vec<f64> = (0..g).map(|k| p.pmax * k as f64 / (g - 1) as f64).collect();
            let q = quantized_measure(&ens, &eve, 0, p.z0, &grid)?;
            quantization.push(QuantizationRow {
                grid: g,
                delta_prime: q.delta_prime,
                enumerated_tv: q.enumerated_tv,
            });
        }
        if p.messages >= 2 && !p.grids.is_empty() {
            let g = p.grids[p.grids.len() / 2];
            let grid: Vec<f64> = (0..g).map(|k| p.pmax * k as f64 / (g - 1) as f64).collect();
            let a = event_audit(
                &ens,
                &eve,
                0,
                1,
                p.z0,
                &grid,
                p.events,
                derive_seed(ctx.root_seed, TAG_EVENTS),
            )?;
            audit = Some(AuditSummary {
                events: a.rows.len(),
                delta_i: a.delta_i,
                delta_j: a.delta_j,
                quantized_tv: a.quantized_tv,
                uniform_bound: a.uniform_bound,
                max_diff: a.max_diff,
                violations: a.violations,
            });
            rows = a.rows;
        }
    }
    let result = LeakageResult {
        report,
        main_mi_bits,
        below_chain_rule,
        below_main,
        quantization,
        audit,
        peak_scaling: peak_scaling(p.peak_c, &eve, &[10, 100, 1000])?,
    };
    write_csv(ctx.out, "events.csv", &rows)?;
    finish(ctx, "leakage", &p, &result, started)?;
    let passed = result.below_chain_rule != Some(false)
        && result.below_main != Some(false)
        && result.audit.as_ref().is_none_or(|a| a.violations == 0);
    Ok(Outcome::check(passed, "leakage ordering or event audit failed"))
}

#[derive(Serialize)]
struct ConverseCsvRow {
    n: usize,
    nu: f64,
    empirical_tail: f64,
    chebyshev_bound: f64,
    samples: u64,
    seed: u64,
}

pub fn cmd_converse(ctx: &Context, args: ConverseArgs) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let pmax = require(args.pmax, "pmax")?;
    let p = ConverseParams {
        lambda0: require(args.lambda0, "lambda0")?,
        pmax,
        pavg: args.pavg.unwrap_or(pmax),
        n: args.n.unwrap_or_else(|| vec![10, 100, 1000]),
        nu: args.nu.unwrap_or(0.1),
        samples: args.samples.unwrap_or(100_000),
    };
    let ch = PoissonChannel::new(p.lambda0, p.pmax)?;
    let pc = PowerConstraint::new(p.pmax, p.pavg)?;
    let cap = capacity(&ch, &pc, &solver(ctx))?;
    if !cap.certified {
        return Ok(certified(&cap, "capacity"));
    }
    let cfg = ConverseConfig {
        nu: p.nu,
        samples: p.samples,
        seed: derive_seed(ctx.root_seed, TAG_CONVERSE),
    };
    let r: ConverseReport = converse_experiment_with(&ch, &pc, &cap, &p.n, &cfg, ctx.exec)?;
    let rows: Vec<ConverseCsvRow> = r
        .rows
        .iter()
        .map(|row| ConverseCsvRow {
            n: row.n,
            nu: row.nu,
            empirical_tail: row.empirical_tail,
            chebyshev_bound: row.chebyshev_bound,
            samples: row.samples,
            seed: row.seed,
        })
        .collect();
    write_csv(ctx.out, "converse.csv", &rows)?;
    finish(ctx, "converse", &p, &r, started)?;
    Ok(Outcome::check(
        r.within_bound,
        "empirical tail above the Chebyshev bound",
    ))
}
