mod config;
mod family;
mod report;

use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hvopt::approx::axiom_suite;
use hvopt::continuation::{diagnose_conditions, run_continuation, ContinuationOptions, Schedule, TermFamilies};
use hvopt::lift::{choose_penalty, solve_lifted, LiftOptions, LiftResult};
use hvopt::oracle::{equivalence_report, EquivalenceReport, GridSpec};
use hvopt::stationarity::{
    check_pseudo_b_stationary, check_sign_conditions, enumerate_multiplier_family, MultiplierMode, Origin, SignMode,
    Tolerances,
};
use hvopt::{Exec, ProblemSpec};
use serde::Serialize;

use config::{ConfigError, LoadedProblem};
use family::FamilyArgs;
use report::{certificate_line, num, opt, vector, verdict, OutDir};

const OUT_ENV: &str = "HVOPT_OUT";
const DEFAULT_OUT: &str = "hvopt-out";

const EXIT_IO: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;
const EXIT_CERTIFICATE: u8 = 4;

#[derive(Parser)]
#[command(name = "hvopt", version, about = "Heaviside-composite optimization: certificates, lifting, continuation and brute force")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Report directory; defaults to $HVOPT_OUT, then ./hvopt-out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every sampled quantity and start point.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Exit with status 4 when a certificate or check fails.
    #[arg(long, global = true)]
    assert: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a problem file and report its structure and sign conditions.
    Validate { config: PathBuf },
    /// Certify pseudo B-stationarity at a point.
    Check {
        config: PathBuf,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        point: Point,
    },
    /// Enumerate binary multipliers on the zero classes at a point.
    Multipliers {
        config: PathBuf,
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        point: Point,
        #[arg(long, value_enum, default_value = "necessary")]
        mode: ModeArg,
    },
    /// Solve the epigraphical lifting by branch enumeration.
    Lift {
        config: PathBuf,
        #[command(flatten)]
        lift: LiftArgs,
    },
    /// Run the approximation continuation and diagnose its limit.
    ApproxSolve {
        config: PathBuf,
        #[command(flatten)]
        approx: ApproxArgs,
    },
    /// Run the approximation axiom suite on one family.
    ApproxSuite {
        #[command(flatten)]
        family: FamilyArgs,
    },
    /// Grid minimization and the reformulation equivalence report.
    Bruteforce {
        config: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Lift, continuation and brute force on one problem, cross-tabulated.
    Compare {
        config: PathBuf,
        #[command(flatten)]
        lift: LiftArgs,
        #[command(flatten)]
        approx: ApproxArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Necessary,
    SufficientB,
    SufficientC,
}

#[derive(Clone, Copy, Debug)]
enum Lambda {
    Auto,
    Value(f64),
}

#[derive(Clone, Debug, Args)]
struct LiftArgs {
    /// Penalty parameter: `auto` or a nonnegative number.
    #[arg(long, value_parser = parse_lambda, default_value = "auto")]
    lambda: Lambda,
    /// Safety factor of the automatic penalty.
    #[arg(long, default_value_t = 1.5)]
    safety: f64,
    #[arg(long, default_value_t = 4096)]
    branch_budget: usize,
    /// Start points per branch.
    #[arg(long, default_value_t = 4)]
    starts: usize,
}

#[derive(Clone, Debug, Args)]
struct ApproxArgs {
    #[command(flatten)]
    family: FamilyArgs,
    #[arg(long, default_value_t = 0.5)]
    delta0: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 24)]
    stages: usize,
    /// Start point; defaults to the file's `start`, then the set's center.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    start: Option<Point>,
}

#[derive(Clone, Debug, Args)]
struct GridArgs {
    /// Points per coordinate at the coarsest level.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    /// Refinement levels, each doubling the intervals.
    #[arg(long, default_value_t = 2)]
    refine: usize,
}

/// Comma-separated coordinates.
#[derive(Clone, Debug)]
struct Point(Vec<f64>);

fn parse_point(s: &str) -> Result<Point, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()
        .map(Point)
}

fn parse_lambda(s: &str) -> Result<Lambda, String> {
    if s == "auto" {
        return Ok(Lambda::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 => Ok(Lambda::Value(v)),
        _ => Err(format!("expected `auto` or a nonnegative number, got `{s}`")),
    }
}

enum Failure {
    Io(io::Error),
    Config(ConfigError),
    Core(hvopt::Error),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<hvopt::Error> for Failure {
    fn from(e: hvopt::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        use hvopt::Error as E;
        match self {
            Failure::Io(_) => EXIT_IO,
            Failure::Config(_) => EXIT_VALIDATION,
            Failure::Core(E::Infeasible(_) | E::NotDifferentiable(_)) => EXIT_NONCONVERGENCE,
            Failure::Core(_) => EXIT_VALIDATION,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Io(e) => format!("i/o error: {e}"),
            Failure::Config(e) => format!("invalid problem file: {e}"),
            Failure::Core(e) => e.to_string(),
        }
    }
}

/// Flags raised by a finished run.
#[derive(Default)]
struct Status {
    /// Stage that did not converge.
    nonconverged: Option<String>,
    /// Check that failed, reported under `--assert`.
    failed_check: Option<String>,
}

impl Status {
    fn merge(&mut self, other: Status) {
        self.nonconverged = self.nonconverged.take().or(other.nonconverged);
        self.failed_check = self.failed_check.take().or(other.failed_check);
    }
}

struct Ctx {
    out: OutDir,
    seed: u64,
    exec: Exec,
    summary: String,
}

impl Ctx {
    fn tolerances(&self) -> Tolerances {
        Tolerances { seed: self.seed, exec: self.exec, ..Tolerances::default() }
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.summary.push_str(s.as_ref());
        self.summary.push('\n');
    }

    fn flush_summary(&mut self, name: &str) -> io::Result<()> {
        let body = std::mem::take(&mut self.summary);
        print!("{body}");
        self.out.text(name, &body)
    }
}

fn load(path: &Path) -> Result<LoadedProblem, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    config::parse(&text, &name).map_err(Failure::Config)
}

fn origin(o: &Origin) -> String {
    match o {
        Origin::Objective(k) => format!("objective {k}"),
        Origin::Constraint(l) => format!("constraint {l}"),
    }
}

fn check_point(p: &ProblemSpec, x: &[f64]) -> Result<(), Failure> {
    if x.len() != p.dim() {
        return Err(Failure::Core(hvopt::Error::Dimension { expected: p.dim(), got: x.len() }));
    }
    Ok(())
}

#[derive(Serialize)]
struct ModelSummary<'a> {
    name: &'a str,
    dimension: usize,
    objective_terms: usize,
    constraint_terms: usize,
    budget: Option<f64>,
    bounded: bool,
    functions: Vec<(String, String, String)>,
}

fn validate(ctx: &mut Ctx, lp: &LoadedProblem) -> Result<Status, Failure> {
    let p = &lp.problem;
    let mut functions = vec![("cost".to_string(), p.base_cost.to_string(), format!("{:?}", p.base_cost.structure()))];
    for (kind, terms) in [("objective", &p.objective_terms), ("constraint", &p.constraint_terms)] {
        for (i, t) in terms.iter().enumerate() {
            for (part, f) in [("multiplier", &t.multiplier), ("inner", &t.inner)] {
                functions.push((format!("{kind}[{i}].{part}"), f.to_string(), format!("{:?}", f.structure())));
            }
        }
    }
    let summary = ModelSummary {
        name: &lp.name,
        dimension: p.dim(),
        objective_terms: p.n_objective(),
        constraint_terms: p.n_constraint(),
        budget: p.has_functional_constraint().then_some(p.budget),
        bounded: p.feasible_set.is_bounded(),
        functions,
    };
    ctx.line(format!("problem {}: dimension {}, {} objective terms, {} constraint terms", lp.name, p.dim(), p.n_objective(), p.n_constraint()));
    if let Some(b) = summary.budget {
        ctx.line(format!("budget {b}"));
    }
    ctx.line(format!("feasible set bounded: {}", summary.bounded));
    for (name, src, structure) in &summary.functions {
        ctx.line(format!("  {name} = {src}  [{structure}]"));
    }
    let mut rows = Vec::new();
    for (mode, label) in [(SignMode::ZeroSet, "zero-set"), (SignMode::Sublevel, "sublevel")] {
        match check_sign_conditions(p, &mode, 41) {
            Ok(checks) => {
                let ok = checks.iter().all(|c| c.passed);
                ctx.line(format!("sign condition ({label}): {}", if ok { "holds" } else { "violated" }));
                for c in checks {
                    if !c.passed {
                        ctx.line(format!("  {} has multiplier value {} at {}", origin(&c.origin), c.min_value, vector(c.witness.as_deref().unwrap_or(&[]))));
                    }
                    rows.push(vec![
                        format!("sign-{label}"),
                        origin(&c.origin),
                        num(c.min_value),
                        c.passed.to_string(),
                        c.exact.to_string(),
                    ]);
                }
            }
            Err(e) => ctx.line(format!("sign condition ({label}): not checked: {e}")),
        }
    }
    ctx.out.csv("signs.csv", &["property", "term", "min_multiplier", "passed", "exact"], &rows)?;
    ctx.out.json("validate.json", &summary)?;
    ctx.flush_summary("validate.txt")?;
    Ok(Status::default())
}

fn check(ctx: &mut Ctx, lp: &LoadedProblem, x: &[f64]) -> Result<Status, Failure> {
    check_point(&lp.problem, x)?;
    let c = check_pseudo_b_stationary(&lp.problem, x, &ctx.tolerances())?;
    ctx.line(format!("point [{}]: {}", vector(x), certificate_line(&c)));
    for n in &c.notes {
        ctx.line(format!("  note: {n}"));
    }
    ctx.out.json("check.json", &c)?;
    ctx.flush_summary("check.txt")?;
    Ok(Status {
        failed_check: (!c.verdict.is_stationary()).then(|| "check: not certified".into()),
        ..Status::default()
    })
}

fn multipliers(ctx: &mut Ctx, lp: &LoadedProblem, x: &[f64], mode: ModeArg) -> Result<Status, Failure> {
    check_point(&lp.problem, x)?;
    let mode = match mode {
        ModeArg::Necessary => MultiplierMode::Necessary,
        ModeArg::SufficientB => MultiplierMode::SufficientB,
        ModeArg::SufficientC => MultiplierMode::SufficientC,
    };
    let r = enumerate_multiplier_family(&lp.problem, x, mode, &ctx.tolerances())?;
    let bits = |v: &[bool]| v.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>();
    let rows: Vec<Vec<String>> =
        r.outcomes.iter().map(|o| vec![bits(&o.xi), bits(&o.mu), verdict(&o.verdict).to_string()]).collect();
    ctx.line(format!(
        "{mode:?} at [{}]: {} choices, precondition {}, {}",
        vector(x),
        r.outcomes.len(),
        if r.precondition_holds { "holds" } else { "fails" },
        if r.passed { "passed" } else { "not passed" }
    ));
    for n in &r.notes {
        ctx.line(format!("  note: {n}"));
    }
    ctx.out.csv("multipliers.csv", &["xi", "mu", "verdict"], &rows)?;
    ctx.out.json("multipliers.json", &r)?;
    ctx.flush_summary("multipliers.txt")?;
    Ok(Status {
        failed_check: (!r.passed).then(|| "multipliers: not passed".into()),
        ..Status::default()
    })
}

fn lift(ctx: &mut Ctx, lp: &LoadedProblem, a: &LiftArgs) -> Result<(Status, LiftResult), Failure> {
    let p = &lp.problem;
    let lambda = match a.lambda {
        Lambda::Value(v) => v,
        Lambda::Auto => {
            let c = choose_penalty(p, a.safety, ctx.seed)?;
            ctx.line(format!("penalty chosen by the Lipschitz rule: {}", c.lambda));
            c.lambda
        }
    };
    let opts = LiftOptions {
        branch_budget: a.branch_budget,
        starts: a.starts,
        seed: ctx.seed,
        exec: ctx.exec,
        tolerances: ctx.tolerances(),
        ..LiftOptions::default()
    };
    let mut r = solve_lifted(p, lambda, &opts)?;
    for b in &mut r.branches {
        if let Some(rep) = &mut b.report {
            rep.log.clear();
        }
    }
    let rows: Vec<Vec<String>> = r
        .branches
        .iter()
        .map(|b| {
            let rep = b.report.as_ref();
            vec![
                b.index.to_string(),
                b.assignment.label(),
                format!("{:?}", b.status),
                opt(b.value()),
                opt(rep.map(|r| r.dd_value)),
                rep.map_or_else(String::new, |r| r.iterations.to_string()),
                rep.map_or_else(String::new, |r| format!("{:?}", r.status)),
                rep.map_or_else(String::new, |r| vector(&r.x)),
            ]
        })
        .collect();
    ctx.out.csv("branches.csv", &["branch", "assignment", "status", "value", "dd", "iterations", "solver", "x"], &rows)?;
    ctx.line(format!(
        "lift (lambda {lambda}): branch {} of {} (ties {:?}), x = [{}]",
        r.branches[r.best].assignment.label(),
        r.branches.len(),
        r.ties,
        vector(&r.x)
    ));
    ctx.line(format!(
        "  objective {}, functional {}, feasible {}, recovered auxiliaries {:?}",
        r.objective, r.functional, r.feasible, r.recovered.case
    ));
    match &r.certificate {
        Ok(c) => ctx.line(format!("  certificate: {}", certificate_line(c))),
        Err(e) => ctx.line(format!("  certificate: not computed: {e}")),
    }
    if !r.feasible {
        ctx.line("  recovered point violates the functional constraint; the penalty is too small");
    }
    ctx.out.json("lift.json", &r)?;
    let status = Status {
        nonconverged: (!r.branches[r.best].converged()).then(|| "lift: selected branch did not converge".into()),
        failed_check: (!r.feasible || !r.certified()).then(|| "lift: point not certified".into()),
    };
    Ok((status, r))
}

struct ApproxOutcome {
    objective: f64,
    limit: Vec<f64>,
    feasible: bool,
    verdict: String,
}

fn approx_solve(ctx: &mut Ctx, lp: &LoadedProblem, a: &ApproxArgs, lift: &LiftArgs) -> Result<(Status, ApproxOutcome), Failure> {
    let p = &lp.problem;
    let fam = family::build(&a.family)?;
    let fams = TermFamilies::uniform(&fam, p)?;
    let lambda = match lift.lambda {
        Lambda::Value(v) => v,
        Lambda::Auto => choose_penalty(p, lift.safety, ctx.seed)?.lambda,
    };
    let x0 = match (&a.start, &lp.start) {
        (Some(Point(s)), _) | (None, Some(s)) => s.clone(),
        (None, None) => p
            .feasible_set
            .center()
            .ok_or_else(|| hvopt::Error::InvalidModel("no start point given and the set has no center".into()))?,
    };
    check_point(p, &x0)?;
    let opts = ContinuationOptions {
        schedule: Schedule { delta0: a.delta0, rho: a.rho, stages: a.stages },
        ..ContinuationOptions::default()
    };
    let t = run_continuation(p, &fams, lambda, &opts, &x0)?;
    let d = diagnose_conditions(&t, p, &ctx.tolerances())?;
    let rows: Vec<Vec<String>> = t
        .stages
        .iter()
        .map(|s| {
            vec![
                s.stage.to_string(),
                num(s.delta),
                vector(&s.x),
                num(s.approx_objective),
                num(s.objective),
                num(s.functional),
                num(s.dd_value),
                s.iterations.to_string(),
                format!("{:?}", s.status),
            ]
        })
        .collect();
    ctx.out.csv(
        "trace.csv",
        &["stage", "delta", "x", "approx_objective", "objective", "functional", "dd", "iterations", "status"],
        &rows,
    )?;
    ctx.line(format!(
        "continuation ({}, lambda {lambda}, {} stages): limit [{}], converged {}",
        fam.tag(),
        t.stages.len(),
        vector(&t.limit),
        t.converged
    ));
    ctx.line(format!("  limit objective {}, functional {}, infeasible {}", t.objective, t.functional, t.infeasible));
    for c in &d.conditions {
        ctx.line(format!("  {} {:?}: {}", c.name, c.status, c.detail));
    }
    let v = match &d.certificate {
        Some(c) => {
            ctx.line(format!("  certificate: {}", certificate_line(c)));
            verdict(&c.verdict).to_string()
        }
        None => {
            ctx.line("  certificate: not computed");
            "none".to_string()
        }
    };
    if let Some(w) = &d.weak {
        ctx.line(format!(
            "  weak report: xi {:?}, mu {:?}, row {} <= {} ({})",
            w.xi,
            w.mu,
            w.row_value,
            w.budget,
            if w.row_satisfied { "satisfied" } else { "violated" }
        ));
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        family: &'a str,
        trace: &'a hvopt::continuation::ContinuationTrace,
        diagnostics: &'a hvopt::continuation::DiagnosticReport,
    }
    ctx.out.json("approx-solve.json", &Doc { family: fam.tag(), trace: &t, diagnostics: &d })?;
    let stationary = d.certificate.as_ref().is_some_and(|c| c.verdict.is_stationary());
    let status = Status {
        nonconverged: (!t.converged).then(|| "approx-solve: continuation did not converge".into()),
        failed_check: (!stationary || t.infeasible).then(|| "approx-solve: limit not certified".into()),
    };
    Ok((status, ApproxOutcome { objective: t.objective, feasible: !t.infeasible, limit: t.limit, verdict: v }))
}

fn approx_suite(ctx: &mut Ctx, a: &FamilyArgs) -> Result<Status, Failure> {
    let fam = family::build(a)?;
    let r = axiom_suite(&fam);
    let rows: Vec<Vec<String>> =
        r.checks.iter().map(|c| vec![c.name.to_string(), c.passed.to_string(), c.details.join(" | ")]).collect();
    ctx.out.csv("axioms.csv", &["axiom", "passed", "details"], &rows)?;
    let rows: Vec<Vec<String>> = r.limits.iter().map(|l| vec![num(l.t), num(l.target), num(l.limit)]).collect();
    ctx.out.csv("limits.csv", &["t", "target", "limit"], &rows)?;
    let mut plot = Vec::new();
    for delta in [1e-1, 1e-2, 1e-3] {
        let (lo, hi) = (fam.lower_end(delta), fam.upper_end(delta));
        let w = (lo + hi).max(1e-12);
        for i in 0..=100 {
            let t = -lo - 0.5 * w + 2.0 * w * (i as f64 / 100.0);
            plot.push(vec![num(t), num(delta), num(fam.value(t, delta))]);
        }
    }
    ctx.out.csv("plot.csv", &["t", "delta", "theta"], &plot)?;
    ctx.line(format!("axiom suite for {}:", r.tag));
    for c in &r.checks {
        ctx.line(format!("  {} {}", c.name, if c.passed { "pass" } else { "fail" }));
        for d in c.details.iter().take(3) {
            ctx.line(format!("    {d}"));
        }
    }
    for l in &r.limits {
        if l.limit != l.target {
            ctx.line(format!("  limit at t = {}: {} (target {})", l.t, l.limit, l.target));
        }
    }
    ctx.out.json("approx-suite.json", &r)?;
    ctx.flush_summary("approx-suite.txt")?;
    Ok(Status {
        failed_check: (!r.all_passed()).then(|| "approx-suite: an axiom fails".into()),
        ..Status::default()
    })
}

fn bruteforce(ctx: &mut Ctx, lp: &LoadedProblem, g: &GridArgs) -> Result<(Status, EquivalenceReport), Failure> {
    let p = &lp.problem;
    let spec = GridSpec::uniform(p.dim(), g.grid, g.refine);
    let r = equivalence_report(p, &spec, ctx.exec)?;
    let rows: Vec<Vec<String>> =
        r.grid.level_values.iter().enumerate().map(|(l, v)| vec![l.to_string(), opt(*v)]).collect();
    ctx.out.csv("grid.csv", &["level", "value"], &rows)?;
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|e| {
            vec![
                format!("equivalence-{}", e.variant.name()),
                e.variant.name().to_string(),
                opt(e.value),
                opt(e.gap),
                e.sign_condition.to_string(),
                e.agrees.to_string(),
            ]
        })
        .collect();
    ctx.out.csv("equivalence.csv", &["property", "reformulation", "value", "gap", "sign_condition", "agrees"], &rows)?;
    ctx.line(format!(
        "grid ({} points, spacing {}, value tolerance {}): value {}, at [{}]",
        r.grid.points,
        r.grid.spacing,
        r.value_tol,
        opt(r.grid.value),
        vector(r.grid.best.as_deref().unwrap_or(&[]))
    ));
    for e in &r.rows {
        ctx.line(format!(
            "  {}: value {}, gap {}, sign condition {}, {}",
            e.variant.name(),
            opt(e.value),
            opt(e.gap),
            e.sign_condition,
            if e.agrees { "agrees" } else { "gap" }
        ));
    }
    for n in r.notes.iter().chain(&r.violations) {
        ctx.line(format!("  note: {n}"));
    }
    ctx.out.json("bruteforce.json", &r)?;
    let status = Status {
        failed_check: (!r.violations.is_empty()).then(|| "bruteforce: equivalence violated".into()),
        ..Status::default()
    };
    Ok((status, r))
}

fn compare(ctx: &mut Ctx, lp: &LoadedProblem, l: &LiftArgs, a: &ApproxArgs, g: &GridArgs) -> Result<Status, Failure> {
    let mut status = Status::default();
    let (s, grid) = bruteforce(ctx, lp, g)?;
    status.merge(s);
    let (s, lifted) = lift(ctx, lp, l)?;
    status.merge(s);
    let (s, cont) = approx_solve(ctx, lp, a, l)?;
    status.merge(s);
    let lift_verdict = match &lifted.certificate {
        Ok(c) => verdict(&c.verdict).to_string(),
        Err(_) => "none".to_string(),
    };
    let rows = vec![
        vec![
            "grid-global-minimum".into(),
            "bruteforce".into(),
            opt(grid.grid.value),
            vector(grid.grid.best.as_deref().unwrap_or(&[])),
            grid.grid.value.is_some().to_string(),
            "n/a".into(),
        ],
        vec![
            "lifted-solution-stationary".into(),
            "lift".into(),
            num(lifted.objective),
            vector(&lifted.x),
            lifted.feasible.to_string(),
            lift_verdict,
        ],
        vec![
            "continuation-limit-stationary".into(),
            "approx-solve".into(),
            num(cont.objective),
            vector(&cont.limit),
            cont.feasible.to_string(),
            cont.verdict,
        ],
    ];
    ctx.out.csv("compare.csv", &["property", "method", "value", "x", "feasible", "certificate"], &rows)?;
    ctx.line("method        value                 certificate");
    for r in &rows {
        ctx.line(format!("{:<13} {:<21} {}", r[1], r[2], r[5]));
    }
    ctx.flush_summary("compare.txt")?;
    Ok(status)
}

fn run(cli: &Cli, ctx: &mut Ctx) -> Result<Status, Failure> {
    match &cli.command {
        Command::Validate { config } => validate(ctx, &load(config)?),
        Command::Check { config, point } => check(ctx, &load(config)?, &point.0),
        Command::Multipliers { config, point, mode } => multipliers(ctx, &load(config)?, &point.0, *mode),
        Command::Lift { config, lift: l } => {
            let (s, _) = lift(ctx, &load(config)?, l)?;
            ctx.flush_summary("lift.txt")?;
            Ok(s)
        }
        Command::ApproxSolve { config, approx } => {
            let lp = load(config)?;
            let defaults = LiftArgs { lambda: Lambda::Auto, safety: 1.5, branch_budget: 0, starts: 0 };
            let (s, _) = approx_solve(ctx, &lp, approx, &defaults)?;
            ctx.flush_summary("approx-solve.txt")?;
            Ok(s)
        }
        Command::ApproxSuite { family } => approx_suite(ctx, family),
        Command::Bruteforce { config, grid } => {
            let (s, _) = bruteforce(ctx, &load(config)?, grid)?;
            ctx.flush_summary("bruteforce.txt")?;
            Ok(s)
        }
        Command::Compare { config, lift: l, approx, grid } => compare(ctx, &load(config)?, l, approx, grid),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = match cli.threads {
        Some(1) => Exec::Sequential,
        Some(n) => {
            // Read once when the global pool starts, which has not happened yet.
            std::env::set_var("RAYON_NUM_THREADS", n.to_string());
            Exec::Parallel
        }
        None => Exec::Parallel,
    };
    let root = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let out = match OutDir::create(&root) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot create {}: {e}", root.display());
            return ExitCode::from(EXIT_IO);
        }
    };
    let mut ctx = Ctx { out, seed: cli.seed, exec, summary: String::new() };
    match run(&cli, &mut ctx) {
        Ok(status) => {
            if let Some(stage) = status.nonconverged {
                eprintln!("error: {stage}");
                return ExitCode::from(EXIT_NONCONVERGENCE);
            }
            if cli.assert {
                if let Some(what) = status.failed_check {
                    eprintln!("assertion failed: {what}");
                    return ExitCode::from(EXIT_CERTIFICATE);
                }
            }
            eprintln!("reports in {} ({} files)", root.display(), ctx.out.written().len());
            ExitCode::SUCCESS
        }
        Err(f) => {
            if !ctx.summary.is_empty() {
                print!("{}", ctx.summary);
            }
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
