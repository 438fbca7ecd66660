//! Argument parsing and command dispatch.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use seqprop::bounds::{asn_upper_bound, asymptotic_coverage, n_ch, n_normal, tail_bounds};
use seqprop::conduct::{ConductSession, ConductStatus};
use seqprop::exact::ExactEngine;
use seqprop::mathkern::CiFamily;
use seqprop::rules::{sample_size_range, DesignParams, RuleFamily, SamplingPlan, SchedulePolicy, REVISED_WALD_DEFAULT_A};
use seqprop::tune::{bisection_tune, theorem2_zeta, zeta0, DEFAULT_TOL_REL};
use seqprop::verify::{verify_plan, Method, VerificationReport, Verdict, VerifyOptions, DEFAULT_MAX_EVALUATIONS};
use seqprop::{Error, ExactDecimal};

use crate::planfile::{trace_hash, PlanFile};
use crate::sweep::{write_csv, Quantity, DEFAULT_POINTS};
use crate::tables::{reference_rows, run_row};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATED: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SEQPROP_THREADS";

#[derive(Parser, Debug)]
#[command(name = "seqprop", version, about = "Exact multistage sampling plans for a binomial proportion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Materialize a plan from design parameters and write a plan file.
    Design(DesignCmd),
    /// Find the largest certified zeta and write the tuned plan.
    Tune(TuneCmd),
    /// Check the coverage guarantee of a plan file.
    Verify(VerifyCmd),
    /// Export coverage, ccp, ASN or the stopping boundary as CSV.
    Sweep(SweepCmd),
    /// Apply a plan stage by stage to observed group success counts.
    Conduct(ConductCmd),
    /// Compare tuned zeta values with the reference tables.
    Tables(TablesCmd),
    /// Analytic bounds and fixed-sample-size formulas.
    Bounds(BoundsCmd),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    DoubleParabolic,
    Fishman,
    Massart,
    ClopperPearson,
    Wald,
    WaldMinSize,
    Wilson,
    RevisedWald,
    Inclusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CiArg {
    Wald,
    RevisedWald,
    Wilson,
    ClopperPearson,
    Fishman,
    ChenMassart,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Bnb,
    Amca,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Bnb => Method::Bnb,
            MethodArg::Amca => Method::Amca,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct DesignArgs {
    /// Margin of error, as a decimal string.
    #[arg(long)]
    pub eps: String,
    /// Risk, as a decimal string; the confidence level is 1 - delta.
    #[arg(long)]
    pub delta: String,
    /// Dilation coefficient of the double-parabolic rule.
    #[arg(long, default_value_t = 0.75)]
    pub rho: f64,
    /// Number of stages for equal group sizes.
    #[arg(long, short = 's', default_value_t = 1)]
    pub stages: usize,
    /// Use every sample size from the minimum to the maximum.
    #[arg(long, conflicts_with = "sizes")]
    pub fully_sequential: bool,
    /// Explicit comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<u64>>,
    #[arg(long, value_enum, default_value_t = FamilyArg::DoubleParabolic)]
    pub family: FamilyArg,
    /// Interval method for the inclusion family.
    #[arg(long, value_enum, default_value_t = CiArg::ClopperPearson)]
    pub ci: CiArg,
    /// Shift of the revised Wald interval.
    #[arg(long, default_value_t = REVISED_WALD_DEFAULT_A)]
    pub revised_wald_a: f64,
}

impl DesignArgs {
    pub fn params(&self, zeta: f64) -> Result<DesignParams> {
        let a = self.revised_wald_a;
        let family = match self.family {
            FamilyArg::DoubleParabolic => RuleFamily::DoubleParabolic,
            FamilyArg::Fishman => RuleFamily::Fishman,
            FamilyArg::Massart => RuleFamily::Massart,
            FamilyArg::ClopperPearson => RuleFamily::ClopperPearson,
            FamilyArg::Wald => RuleFamily::Wald { min_size_override: false },
            FamilyArg::WaldMinSize => RuleFamily::Wald { min_size_override: true },
            FamilyArg::Wilson => RuleFamily::Wilson,
            FamilyArg::RevisedWald => RuleFamily::RevisedWald { a },
            FamilyArg::Inclusion => RuleFamily::Inclusion {
                ci: match self.ci {
                    CiArg::Wald => CiFamily::Wald,
                    CiArg::RevisedWald => CiFamily::RevisedWald { a },
                    CiArg::Wilson => CiFamily::Wilson,
                    CiArg::ClopperPearson => CiFamily::ClopperPearson,
                    CiArg::Fishman => CiFamily::Fishman,
                    CiArg::ChenMassart => CiFamily::ChenMassart,
                },
            },
        };
        let schedule = match (&self.sizes, self.fully_sequential) {
            (Some(sizes), _) => SchedulePolicy::Explicit(sizes.clone()),
            (None, true) => SchedulePolicy::FullySequential,
            (None, false) => SchedulePolicy::EqualGroups,
        };
        let params = DesignParams {
            eps: self.eps.parse::<ExactDecimal>()?,
            delta: self.delta.parse::<ExactDecimal>()?,
            rho: self.rho,
            zeta,
            stages: self.stages,
            family,
            schedule: SchedulePolicy::EqualGroups,
        }
        .with_schedule(schedule);
        params.validate()?;
        Ok(params)
    }
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Bnb)]
    pub method: MethodArg,
    /// Termination tolerance; defaults to 1e-10 for bnb and 1e-15 for amca.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_EVALUATIONS)]
    pub max_evaluations: usize,
}

impl VerifyArgs {
    pub fn options(&self) -> VerifyOptions {
        VerifyOptions {
            eta: self.eta,
            max_evaluations: self.max_evaluations,
            ..VerifyOptions::with_method(self.method.into())
        }
    }
}

#[derive(Args, Debug)]
pub struct DesignCmd {
    #[command(flatten)]
    pub design: DesignArgs,
    #[arg(long, required_unless_present = "tune", conflicts_with = "tune")]
    pub zeta: Option<f64>,
    /// Tune zeta by bisection instead of giving it.
    #[arg(long)]
    pub tune: bool,
    /// Relative width at which bisection stops.
    #[arg(long, default_value_t = DEFAULT_TOL_REL)]
    pub tol: f64,
    #[command(flatten)]
    pub verify: VerifyArgs,
    /// Plan file to write.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TuneCmd {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Relative width at which bisection stops.
    #[arg(long, default_value_t = DEFAULT_TOL_REL)]
    pub tol: f64,
    #[command(flatten)]
    pub verify: VerifyArgs,
    /// Plan file to write.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyCmd {
    pub plan: PathBuf,
    #[command(flatten)]
    pub verify: VerifyArgs,
}

#[derive(Args, Debug)]
pub struct SweepCmd {
    pub plan: PathBuf,
    #[arg(long, value_enum, default_value_t = Quantity::Coverage)]
    pub quantity: Quantity,
    /// Number of uniform grid points.
    #[arg(long, default_value_t = DEFAULT_POINTS)]
    pub points: usize,
    /// Leave out the points next to each discontinuity.
    #[arg(long)]
    pub no_discontinuities: bool,
    /// Output file; standard output when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ConductCmd {
    pub plan: PathBuf,
    /// Comma-separated successes per group; read line by line from stdin when absent.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
pub struct TablesCmd {
    /// Table number: 1 fully sequential, 2 with delta = 0.05, 3 with delta = 0.01.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub table: Vec<u8>,
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long, short = 's')]
    pub stages: Option<usize>,
    /// Include the expensive rows with eps below 0.05.
    #[arg(long)]
    pub all: bool,
    /// Only verify the reference values.
    #[arg(long)]
    pub no_tune: bool,
    /// Runtime budget per row in seconds.
    #[arg(long, default_value_t = 300)]
    pub budget_secs: u64,
    #[command(flatten)]
    pub verify: VerifyArgs,
}

#[derive(Args, Debug)]
pub struct BoundsCmd {
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long, default_value_t = 0.75)]
    pub rho: f64,
    /// Plan file for the tail and ASN bounds.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Proportions at which to evaluate the plan bounds.
    #[arg(long, value_delimiter = ',')]
    pub p: Vec<f64>,
}

/// Exit code for an error raised by a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Inconclusive { .. } | Error::TuneAborted { .. } => EXIT_INCONCLUSIVE,
                Error::Infeasible(_) => EXIT_VIOLATED,
                _ => EXIT_USAGE,
            };
        }
    }
    EXIT_USAGE
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
            || c.downcast_ref::<csv::Error>()
                .is_some_and(|ce| matches!(ce.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe))
    })
}

/// Caps the global thread pool from the environment; later calls are no-ops.
pub fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    init_threads();
    match dispatch(cli.command, input, out) {
        Ok(code) => code,
        Err(e) if broken_pipe(&e) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Design(c) => cmd_design(c, out),
        Command::Tune(c) => cmd_tune(c, out),
        Command::Verify(c) => cmd_verify(c, out),
        Command::Sweep(c) => cmd_sweep(c, out),
        Command::Conduct(c) => cmd_conduct(c, input, out),
        Command::Tables(c) => cmd_tables(c, out),
        Command::Bounds(c) => cmd_bounds(c, out),
    }
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Guaranteed => EXIT_OK,
        Verdict::Violated => EXIT_VIOLATED,
    }
}

fn print_plan(plan: &SamplingPlan, out: &mut dyn Write) -> Result<()> {
    let range = sample_size_range(plan.params())?;
    let sizes: Vec<String> = plan.sizes().iter().map(u64::to_string).collect();
    writeln!(out, "stages: {}", plan.stages())?;
    writeln!(out, "sizes: {}", sizes.join(" "))?;
    writeln!(out, "N_min = {}, N_max = {}", range.n_min, range.n_max)?;
    writeln!(out, "zeta = {}", plan.params().zeta)?;
    Ok(())
}

fn print_report(r: &VerificationReport, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "verdict: {}", format!("{:?}", r.verdict).to_lowercase())?;
    writeln!(out, "method: {} (eta = {:e})", r.method, r.eta)?;
    writeln!(
        out,
        "domain: [{:e}, {}]{}; edge strips of width {:e} certified separately",
        r.domain.0,
        r.domain.1,
        if r.symmetric { " by symmetry" } else { "" },
        r.edge
    )?;
    writeln!(
        out,
        "evaluations: {}, iterations: {}, largest lower bound: {:.12e}",
        r.stats.evaluations, r.stats.iterations, r.stats.max_lower
    )?;
    if let Some(w) = r.witness {
        writeln!(
            out,
            "witness: ccp exceeds delta = {} on [{:.17}, {:.17}] (lower bound {:.12e}, upper bound {:.12e})",
            r.delta, w.a, w.b, w.lower, w.upper
        )?;
    }
    Ok(())
}

fn write_plan(pf: &PlanFile, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    if let Some(p) = path {
        pf.write(p)?;
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}

fn cmd_design(c: DesignCmd, out: &mut dyn Write) -> Result<i32> {
    if c.tune {
        return cmd_tune(
            TuneCmd {
                design: c.design,
                tol: c.tol,
                verify: c.verify,
                out: c.out,
            },
            out,
        );
    }
    let zeta = c.zeta.ok_or_else(|| anyhow!("either --zeta or --tune is required"))?;
    let params = c.design.params(zeta)?;
    let plan = SamplingPlan::materialize(&params)?;
    print_plan(&plan, out)?;
    write_plan(&PlanFile::from_plan(&plan), c.out.as_deref(), out)?;
    Ok(EXIT_OK)
}

fn cmd_tune(c: TuneCmd, out: &mut dyn Write) -> Result<i32> {
    let base = c.design.params(1.0)?;
    let opts = c.verify.options();
    let result = bisection_tune(&base, c.tol, &opts)?;
    for probe in &result.trace {
        writeln!(
            out,
            "probe zeta={:.6} {}{}",
            probe.zeta,
            format!("{:?}", probe.verdict).to_lowercase(),
            if probe.out_of_domain { " (zeta*delta >= 1)" } else { "" }
        )?;
    }
    writeln!(
        out,
        "bracket: [{:.6}, {:.6}]{}",
        result.bracket.lo,
        result.bracket.hi,
        if result.bracket.capped { " (doubling cap reached)" } else { "" }
    )?;
    writeln!(out, "zeta* = {:.6}", result.zeta_star)?;
    let params = base.with_zeta(result.zeta_star);
    let plan = SamplingPlan::materialize(&params)?;
    // re-check the returned value before it is stamped
    let report = verify_plan(&plan, params.delta(), &opts)?;
    if report.verdict != Verdict::Guaranteed {
        bail!("tuned zeta {} failed re-verification", result.zeta_star);
    }
    print_plan(&plan, out)?;
    let mut pf = PlanFile::from_plan(&plan);
    pf.provenance.tuning_trace_sha256 = Some(trace_hash(&result.trace));
    pf.stamp(&report);
    write_plan(&pf, c.out.as_deref(), out)?;
    Ok(EXIT_OK)
}

fn cmd_verify(c: VerifyCmd, out: &mut dyn Write) -> Result<i32> {
    let mut pf = PlanFile::read(&c.plan)?;
    let plan = pf.plan()?;
    let report = verify_plan(&plan, plan.params().delta(), &c.verify.options())?;
    print_report(&report, out)?;
    pf.stamp(&report);
    pf.write(&c.plan)?;
    Ok(verdict_code(report.verdict))
}

fn cmd_sweep(c: SweepCmd, out: &mut dyn Write) -> Result<i32> {
    let plan = PlanFile::read(&c.plan)?.plan()?;
    let disc = !c.no_discontinuities;
    match &c.out {
        Some(path) => {
            let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(std::io::BufWriter::new(f), &plan, c.quantity, c.points, disc)?;
        }
        None => write_csv(out, &plan, c.quantity, c.points, disc)?,
    }
    Ok(EXIT_OK)
}

/// Deterministic transcript of a conduct session.
pub fn conduct_transcript(pf: &PlanFile, counts: &[u64], out: &mut dyn Write) -> Result<ConductStatus> {
    let plan = pf.plan()?;
    let mut session = ConductSession::new(&plan);
    for &g in counts {
        let rec = session.record(g)?;
        write_stage(&rec, out)?;
    }
    finish(&session, pf, out)?;
    Ok(session.state().status)
}

fn write_stage(rec: &seqprop::conduct::StageRecord, out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "stage {}: group size {}, successes {}, k = {}, n = {}, p_hat = {:.12} -> {}",
        rec.stage,
        rec.group_size,
        rec.group_successes,
        rec.k,
        rec.n,
        rec.estimate(),
        format!("{:?}", rec.decision).to_lowercase()
    )?;
    Ok(())
}

fn finish(session: &ConductSession, pf: &PlanFile, out: &mut dyn Write) -> Result<()> {
    let params = &pf.params;
    match session.state().status {
        ConductStatus::Stopped { k, n } => {
            writeln!(out, "stopped: p_hat = {k}/{n} = {:.12}", k as f64 / n as f64)?;
            let status = match &pf.provenance.verification {
                Some(v) if v.verdict == Verdict::Guaranteed => format!("certified by {} with eta = {:e}", v.method, v.eta),
                Some(_) => "plan failed verification".to_string(),
                None => "plan not verified".to_string(),
            };
            writeln!(
                out,
                "guarantee: Pr{{|p_hat - p| < {}}} >= {} for every p ({status})",
                params.eps,
                1.0 - params.delta()
            )?;
        }
        ConductStatus::InProgress => {
            if let Some(g) = session.next_group_size() {
                writeln!(out, "in progress: next group of {g}")?;
            }
        }
    }
    Ok(())
}

fn cmd_conduct(c: ConductCmd, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<i32> {
    let pf = PlanFile::read(&c.plan)?;
    if let Some(counts) = &c.counts {
        conduct_transcript(&pf, counts, out)?;
        return Ok(EXIT_OK);
    }
    let plan = pf.plan()?;
    let mut session = ConductSession::new(&plan);
    let mut line = String::new();
    while let Some(g) = session.next_group_size() {
        writeln!(out, "successes in group {} of size {g}?", session.state().stage + 1)?;
        out.flush()?;
        line.clear();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        let count: u64 = line.trim().parse().with_context(|| format!("not a count: {:?}", line.trim()))?;
        let rec = session.record(count)?;
        write_stage(&rec, out)?;
    }
    finish(&session, &pf, out)?;
    Ok(EXIT_OK)
}

fn cmd_tables(c: TablesCmd, out: &mut dyn Write) -> Result<i32> {
    let tables = if c.table.is_empty() { vec![1, 2, 3] } else { c.table.clone() };
    let opts = c.verify.options();
    let budget = Duration::from_secs(c.budget_secs);
    let mut worst = EXIT_OK;
    for t in tables {
        for row in reference_rows(t) {
            let cheap = row.eps.parse::<f64>().is_ok_and(|e| e >= 0.05);
            if (!c.all && !cheap)
                || c.eps.as_deref().is_some_and(|e| e != row.eps)
                || c.delta.as_deref().is_some_and(|d| d != row.delta)
                || c.stages.is_some_and(|s| row.stages != Some(s))
            {
                continue;
            }
            let rep = run_row(&row, !c.no_tune, budget, &opts)?;
            writeln!(out, "{}", rep.line())?;
            out.flush()?;
            let code = match &rep.reference_verdict {
                _ if rep.skipped => EXIT_OK,
                Ok(v) => verdict_code(*v),
                Err(_) => EXIT_INCONCLUSIVE,
            };
            worst = worst.max(code);
        }
    }
    Ok(worst)
}

fn cmd_bounds(c: BoundsCmd, out: &mut dyn Write) -> Result<i32> {
    if let (Some(eps), Some(delta)) = (c.eps, c.delta) {
        writeln!(out, "n_normal = {}", n_normal(eps, delta)?)?;
        writeln!(out, "n_ch = {}", n_ch(eps, delta)?)?;
        let z0 = zeta0(delta)?;
        writeln!(out, "zeta0 = {z0:.12}")?;
        writeln!(out, "theorem2_zeta(rho = {}) = {:.12e}", c.rho, theorem2_zeta(eps, delta, c.rho)?)?;
        let zeta = c.zeta.unwrap_or(z0);
        writeln!(out, "asymptotic coverage at zeta = {zeta}: {:.12}", asymptotic_coverage(zeta, delta)?)?;
    } else if c.plan.is_none() {
        bail!("give --eps and --delta, or --plan with --p");
    }
    if let Some(path) = &c.plan {
        let plan = PlanFile::read(path)?.plan()?;
        let engine = ExactEngine::new(&plan);
        for &p in &c.p {
            let table = tail_bounds(&plan, p)?;
            writeln!(out, "p = {p}: tau = {}", table.tau)?;
            let dist = engine.distribution(if p > 0.5 { 1.0 - p } else { p })?;
            for row in &table.rows {
                writeln!(
                    out,
                    "  stage {} n = {} a = {} bound Pr{{n > n_l}} <= {:.12e} (exact {:.12e})",
                    row.stage,
                    row.n,
                    row.a.map_or("none".to_string(), |a| format!("{a:.12}")),
                    row.bound,
                    dist.stages[row.stage - 1].continuing
                )?;
            }
            writeln!(
                out,
                "  asn <= {:.12} (exact {:.12})",
                asn_upper_bound(&plan, p)?,
                engine.asn(p)?
            )?;
        }
    }
    Ok(EXIT_OK)
}
