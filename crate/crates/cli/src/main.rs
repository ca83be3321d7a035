//! `berfac`: plan construction, verification, sampling, table reproduction,
//! and curve-data emission for the cascade Bernoulli factory.
//!
//! Exit codes: 0 success, 2 validation failure, 3 usage error.

use berfac_core::numerics::{parse_rat, rat, rat_int, Rat};
use berfac_core::planfile::PlanFile;
use berfac_core::planner::{
    build_explicit_plan, build_plan, plan_constant_half, plan_elbow_reference, plan_fh,
    plan_linear_quarter_half, plan_parabola_cascade, plan_sqrt_cascade, CascadePlan,
    DescentCurve, Schedule, VerifyPolicy,
};
use berfac_core::tables::{bernstein_eval, verify_envelope, EnvelopePair, VerifyMode};
use berfac_core::{expected_bits, sample_many, FhVariant, Func};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use num::{One, Signed};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "berfac", version, about = "Exact Bernoulli factory toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Construct a cascade plan and write it to a plan file
    Plan(PlanArgs),
    /// Reload a plan file, rebuild its counts, and re-check envelopes
    Verify(VerifyArgs),
    /// Per-checkpoint outcome probabilities at given input probabilities
    Table(TableArgs),
    /// Seeded bit-cost comparison across plans
    Bench(BenchArgs),
    /// Seeded factory runs for one plan
    Sample(SampleArgs),
    /// Grid CSV of target, envelopes, and Bernstein expansions
    Curves(CurvesArgs),
}

#[derive(Args)]
struct PlanArgs {
    /// Target spec: constant:R | linear:R,R | elbow:C,EPS |
    /// smoothed-elbow:C,EPS,DELTA | parabola:C | power:R | sqrt
    #[arg(long, conflicts_with = "preset")]
    target: Option<String>,
    /// Shipped plan: constant-half | linear-ramp | elbow-reference |
    /// parabola-cascade | sqrt-cascade | fh-original | fh-improved |
    /// fh-improved-preface
    #[arg(long)]
    preset: Option<String>,
    /// Use the reference elbow sequence for the elbow:2,1/5 target
    #[arg(long)]
    elbows_from_table2: bool,
    /// Explicit checkpoints, e.g. 2,4,8
    #[arg(long)]
    checkpoints: Option<String>,
    /// Explicit envelope list, e.g. power:1/5@100,power:1/3@200
    #[arg(long)]
    envelopes: Option<String>,
    /// Descent curve for auto planning: quintic | quadratic
    #[arg(long, default_value = "quintic")]
    descent: String,
    /// Envelope check: knots | grid:N (explicit envelope plans)
    #[arg(long, default_value = "grid:256")]
    verify: String,
    /// Exit nonzero when an explicit envelope fails its check, instead of
    /// recording the failure in the plan's provenance block
    #[arg(long)]
    require_verified: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    plan: PathBuf,
    /// Override the recorded check mode with a grid of this many points
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct TableArgs {
    plan: PathBuf,
    /// Comma-separated input probabilities, each in (0,1)
    #[arg(long)]
    p: String,
    #[arg(long, default_value_t = 5)]
    decimals: u32,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// One or more plan files
    plans: Vec<PathBuf>,
    #[arg(long)]
    p: String,
    #[arg(long)]
    trials: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct SampleArgs {
    plan: PathBuf,
    #[arg(long)]
    p: String,
    #[arg(long)]
    trials: u64,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct CurvesArgs {
    plan: PathBuf,
    /// Grid density: rows at i/density for i = 0..=density
    #[arg(long)]
    density: u64,
    #[arg(long, default_value_t = 6)]
    decimals: u32,
}

enum AppError {
    /// Bad invocation: exit 3
    Usage(String),
    /// Valid invocation, failed data: exit 2
    Validation(String),
}

impl AppError {
    fn usage(msg: impl Into<String>) -> Self {
        AppError::Usage(msg.into())
    }
    fn validation(msg: impl Into<String>) -> Self {
        AppError::Validation(msg.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.cmd {
        Cmd::Plan(a) => cmd_plan(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Table(a) => cmd_table(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Sample(a) => cmd_sample(a),
        Cmd::Curves(a) => cmd_curves(a),
    }
}

fn parse_prob(s: &str) -> Result<Rat, AppError> {
    let v = parse_rat(s).ok_or_else(|| AppError::usage(format!("bad rational '{s}'")))?;
    if !v.is_positive() || v >= Rat::one() {
        return Err(AppError::validation(format!(
            "input probability {s} must lie strictly inside (0, 1)"
        )));
    }
    Ok(v)
}

fn parse_rat_arg(s: &str) -> Result<Rat, AppError> {
    parse_rat(s).ok_or_else(|| AppError::usage(format!("bad rational '{s}'")))
}

fn parse_target(spec: &str) -> Result<Func, AppError> {
    let (kind, args) = match spec.split_once(':') {
        Some((k, a)) => (k, a),
        None => (spec, ""),
    };
    let parts: Vec<&str> = if args.is_empty() {
        vec![]
    } else {
        args.split(',').collect()
    };
    let want = |n: usize| -> Result<(), AppError> {
        if parts.len() == n {
            Ok(())
        } else {
            Err(AppError::usage(format!(
                "target '{spec}': expected {n} parameter(s), got {}",
                parts.len()
            )))
        }
    };
    let func = match kind {
        "sqrt" => {
            want(0)?;
            Func::power(rat(1, 2))
        }
        "constant" => {
            want(1)?;
            Ok(Func::Constant(parse_rat_arg(parts[0])?))
        }
        "linear" => {
            want(2)?;
            Ok(Func::Linear {
                intercept: parse_rat_arg(parts[0])?,
                slope: parse_rat_arg(parts[1])?,
            })
        }
        "elbow" => {
            want(2)?;
            Func::elbow(parse_rat_arg(parts[0])?, parse_rat_arg(parts[1])?)
        }
        "smoothed-elbow" => {
            want(3)?;
            Func::smoothed_elbow(
                parse_rat_arg(parts[0])?,
                parse_rat_arg(parts[1])?,
                parse_rat_arg(parts[2])?,
            )
        }
        "parabola" => {
            want(1)?;
            Func::parabola(parse_rat_arg(parts[0])?)
        }
        "power" => {
            want(1)?;
            Func::power(parse_rat_arg(parts[0])?)
        }
        other => return Err(AppError::usage(format!("unknown target kind '{other}'"))),
    }
    .map_err(|e| AppError::validation(format!("target '{spec}': {e}")))?;
    func.validate_range(64)
        .map_err(|e| AppError::validation(format!("target '{spec}': {e}")))?;
    Ok(func)
}

/// Entries are separated by commas, but function parameters also contain
/// commas; the '@checkpoint' suffix closes each entry.
fn parse_envelopes(spec: &str) -> Result<Vec<(Func, u64)>, AppError> {
    let mut out = Vec::new();
    let mut pending = String::new();
    for token in spec.split(',') {
        if !pending.is_empty() {
            pending.push(',');
        }
        pending.push_str(token);
        if let Some(at) = pending.rfind('@') {
            let (fspec, mstr) = pending.split_at(at);
            let m: u64 = mstr[1..]
                .parse()
                .map_err(|_| AppError::usage(format!("bad checkpoint in '{pending}'")))?;
            out.push((parse_target(fspec)?, m));
            pending.clear();
        }
    }
    if !pending.is_empty() {
        return Err(AppError::usage(format!(
            "envelope entry '{pending}' is missing '@checkpoint'"
        )));
    }
    if out.is_empty() {
        return Err(AppError::usage("empty envelope list"));
    }
    Ok(out)
}

fn parse_checkpoints(spec: &str) -> Result<Vec<u64>, AppError> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| AppError::usage(format!("bad checkpoint '{s}'")))
        })
        .collect()
}

fn parse_verify_mode(spec: &str) -> Result<VerifyMode, AppError> {
    if spec == "knots" {
        return Ok(VerifyMode::Knots);
    }
    if let Some(n) = spec.strip_prefix("grid:") {
        let points: usize = n
            .parse()
            .map_err(|_| AppError::usage(format!("bad grid size '{n}'")))?;
        if points == 0 {
            return Err(AppError::usage("grid size must be positive"));
        }
        return Ok(VerifyMode::Grid(points));
    }
    Err(AppError::usage(format!(
        "unknown verify mode '{spec}' (expected knots or grid:N)"
    )))
}

fn preset_plan(name: &str) -> Result<CascadePlan, AppError> {
    let plan = match name {
        "constant-half" => plan_constant_half(),
        "linear-ramp" => plan_linear_quarter_half(),
        "elbow-reference" => plan_elbow_reference(),
        "parabola-cascade" => plan_parabola_cascade(),
        "sqrt-cascade" => plan_sqrt_cascade(),
        "fh-original" => plan_fh(FhVariant::Original, false),
        "fh-improved" => plan_fh(FhVariant::Improved, false),
        "fh-improved-preface" => plan_fh(FhVariant::Improved, true),
        other => return Err(AppError::usage(format!("unknown preset '{other}'"))),
    };
    plan.map_err(|e| AppError::validation(format!("preset '{name}': {e}")))
}

/// Fixed-point decimal rendering of an exact rational (round half away from
/// zero) — never goes through floating point.
fn render_rat(r: &Rat, decimals: u32) -> String {
    let scale = rat_int(10).pow(decimals as i32);
    let scaled = r * &scale;
    let adjust: i32 = if r.is_negative() { -1 } else { 1 };
    let rounded: berfac_core::Int =
        (scaled.numer() * 2 + scaled.denom() * adjust) / (scaled.denom() * 2);
    let sign = if rounded.is_negative() { "-" } else { "" };
    let digits = rounded.abs().to_string();
    if decimals == 0 {
        return format!("{sign}{digits}");
    }
    let d = decimals as usize;
    let padded = format!("{digits:0>width$}", width = d + 1);
    let (int_part, frac_part) = padded.split_at(padded.len() - d);
    format!("{sign}{int_part}.{frac_part}")
}

fn load_plan(path: &PathBuf) -> Result<(PlanFile, CascadePlan), AppError> {
    let file = PlanFile::load(path)
        .map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
    let plan = file
        .to_plan()
        .map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
    Ok((file, plan))
}

fn print_verification(plan: &CascadePlan) {
    for v in &plan.verification {
        let status = if v.passed { "ok" } else { "FAILED" };
        match &v.report {
            Some(r) => println!(
                "tier m={:<6} {:<7} {} upperMargin={} lowerMargin={} points={}",
                v.checkpoint,
                status,
                v.detail,
                render_rat(&r.min_upper_margin, 8),
                render_rat(&r.min_lower_margin, 8),
                r.points_checked
            ),
            None => println!("tier m={:<6} {:<7} {}", v.checkpoint, status, v.detail),
        }
    }
}

fn cmd_plan(a: PlanArgs) -> Result<(), AppError> {
    let plan = if let Some(preset) = &a.preset {
        preset_plan(preset)?
    } else {
        let spec = a
            .target
            .as_deref()
            .ok_or_else(|| AppError::usage("either --target or --preset is required"))?;
        let target = parse_target(spec)?;
        if let Some(env_spec) = &a.envelopes {
            let mode = parse_verify_mode(&a.verify)?;
            let policy = if a.require_verified {
                VerifyPolicy::Require
            } else {
                VerifyPolicy::RecordOnly
            };
            // entries are the per-tier upper envelopes; the target itself
            // serves as the lower envelope
            let pairs = parse_envelopes(env_spec)?
                .into_iter()
                .map(|(f, m)| EnvelopePair::new(target.clone(), f, m))
                .collect();
            build_explicit_plan(spec, &target, pairs, mode, policy)
                .map_err(|e| AppError::validation(e.to_string()))?
        } else if a.elbows_from_table2 {
            let reference = Func::elbow(rat_int(2), rat(1, 5)).unwrap();
            if target != reference {
                return Err(AppError::validation(
                    "--elbows-from-table2 is calibrated for target elbow:2,1/5",
                ));
            }
            plan_elbow_reference().map_err(|e| AppError::validation(e.to_string()))?
        } else {
            let descent = match a.descent.as_str() {
                "quintic" => DescentCurve::quintic_for(&target),
                "quadratic" => DescentCurve::quadratic_for(&target),
                other => return Err(AppError::usage(format!("unknown descent '{other}'"))),
            }
            .unwrap_or(
                // linear/constant targets collapse; any curve placeholder works
                DescentCurve::ExplicitPoints(vec![]),
            );
            let schedule = match &a.checkpoints {
                Some(c) => Schedule::Explicit(parse_checkpoints(c)?),
                None => Schedule::default_auto(),
            };
            build_plan(spec, &target, descent, schedule)
                .map_err(|e| AppError::validation(e.to_string()))?
        }
    };

    print_verification(&plan);
    let file = PlanFile::from_plan(&plan);
    file.save(&a.out)
        .map_err(|e| AppError::validation(format!("{}: {e}", a.out.display())))?;
    println!(
        "wrote {} ({} tiers, checkpoints {:?})",
        a.out.display(),
        plan.checkpoints().len(),
        plan.checkpoints()
    );
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<(), AppError> {
    let (file, plan) = load_plan(&a.plan)?;
    println!(
        "{}: counts rebuilt and matched ({} tiers)",
        a.plan.display(),
        plan.table.tiers()
    );
    let mut all_ok = true;
    for (i, pair) in plan.envelopes.iter().enumerate() {
        let mode = match a.grid {
            Some(n) => VerifyMode::Grid(n),
            None => file.provenance.verification.get(i).map_or(
                VerifyMode::Grid(256),
                |v| v.mode.to_mode(),
            ),
        };
        match verify_envelope(&plan.target, pair, mode) {
            Ok(r) => println!(
                "tier m={:<6} ok      upperMargin={} lowerMargin={} points={}{}",
                pair.checkpoint,
                render_rat(&r.min_upper_margin, 8),
                render_rat(&r.min_lower_margin, 8),
                r.points_checked,
                if r.proof { " (proof)" } else { "" }
            ),
            Err(e) => {
                all_ok = false;
                println!("tier m={:<6} FAILED  {e}", pair.checkpoint);
            }
        }
    }
    if all_ok {
        Ok(())
    } else {
        Err(AppError::validation("envelope verification failed"))
    }
}

fn cmd_table(a: TableArgs) -> Result<(), AppError> {
    let (_, plan) = load_plan(&a.plan)?;
    let ps: Vec<Rat> = a
        .p
        .split(',')
        .map(parse_prob)
        .collect::<Result<_, _>>()?;
    let d = a.decimals;
    let header = "p,tier,m,elbowX,elbowY,pOne,pZero,pContinue,expectedBitsTruncated,terminalResidual";
    if a.csv {
        println!("{header}");
    } else {
        println!("{}", header.replace(',', "\t"));
    }
    for p in &ps {
        let triples = berfac_core::exact_outcome_probs(&plan.table, p)
            .map_err(|e| AppError::validation(e.to_string()))?;
        let e_total = expected_bits(&plan.table, p)
            .map_err(|e| AppError::validation(e.to_string()))?;
        let residual = &triples.last().unwrap().p_continue;
        // E[N] truncated at tier i: m_1 + sum_{j<i} (m_{j+1} - m_j) pCont_j
        let mut e_trunc = rat_int(plan.table.checkpoints[0] as i64);
        for (i, t) in triples.iter().enumerate() {
            let pair = &plan.envelopes[i];
            let (ex, ey) = pair
                .upper
                .elbow_point()
                .or_else(|| pair.lower.elbow_point())
                .map(|(x, y)| (render_rat(&x, d), render_rat(&y, d)))
                .unwrap_or_default();
            let row = [
                render_rat(p, d),
                (i + 1).to_string(),
                plan.table.checkpoints[i].to_string(),
                ex,
                ey,
                render_rat(&t.p_one, d),
                render_rat(&t.p_zero, d),
                render_rat(&t.p_continue, d),
                render_rat(&e_trunc, d),
                render_rat(residual, d.max(8)),
            ];
            println!("{}", row.join(if a.csv { "," } else { "\t" }));
            if i + 1 < plan.table.tiers() {
                let dm = rat_int((plan.table.checkpoints[i + 1] - plan.table.checkpoints[i]) as i64);
                e_trunc = &e_trunc + dm * &t.p_continue;
            }
        }
        debug_assert_eq!(&e_trunc, &e_total);
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), AppError> {
    if a.plans.is_empty() {
        return Err(AppError::usage("at least one plan file is required"));
    }
    if a.trials == 0 {
        return Err(AppError::usage("--trials must be positive"));
    }
    let p = parse_prob(&a.p)?;
    let header = "plan,trials,minBits,maxBits,meanBits,sdBits,freqOne,ones,zeros,gluttony,exhausted";
    println!("{}", if a.csv { header.to_string() } else { header.replace(',', "\t") });
    for path in &a.plans {
        let (_, plan) = load_plan(path)?;
        let s = sample_many(&plan.table, &p, a.trials, a.seed);
        let row = [
            plan.name.clone(),
            s.trials.to_string(),
            s.min_bits.map_or(String::new(), |v| v.to_string()),
            s.max_bits.map_or(String::new(), |v| v.to_string()),
            format!("{:.4}", s.mean_bits),
            format!("{:.4}", s.sd_bits),
            format!("{:.6}", s.freq_one()),
            s.ones.to_string(),
            s.zeros.to_string(),
            s.gluttony.to_string(),
            s.exhausted.to_string(),
        ];
        println!("{}", row.join(if a.csv { "," } else { "\t" }));
    }
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Result<(), AppError> {
    if a.trials == 0 {
        return Err(AppError::usage("--trials must be positive"));
    }
    let p = parse_prob(&a.p)?;
    let (_, plan) = load_plan(&a.plan)?;
    let s = sample_many(&plan.table, &p, a.trials, a.seed);
    println!("plan: {}", plan.name);
    println!("trials: {}", s.trials);
    println!("ones: {}  zeros: {}  gluttony: {}  exhausted: {}", s.ones, s.zeros, s.gluttony, s.exhausted);
    println!("freqOne (terminated runs): {:.6}", s.freq_one());
    println!(
        "bits: min={} max={} mean={:.4} sd={:.4}",
        s.min_bits.map_or(String::new(), |v| v.to_string()),
        s.max_bits.map_or(String::new(), |v| v.to_string()),
        s.mean_bits,
        s.sd_bits
    );
    for (i, count) in s.tier_histogram.iter().enumerate() {
        println!("tier m={}: {}", plan.table.checkpoints[i], count);
    }
    Ok(())
}

fn cmd_curves(a: CurvesArgs) -> Result<(), AppError> {
    if a.density == 0 {
        return Err(AppError::usage("--density must be positive"));
    }
    let (_, plan) = load_plan(&a.plan)?;
    let precision = Rat::new(1.into(), rat_int(10).pow(a.decimals as i32 + 3).numer().clone());
    let mut header = vec!["p".to_string(), "target".to_string()];
    for m in plan.checkpoints() {
        header.push(format!("envelope_m{m}"));
        header.push(format!("bernstein_m{m}"));
    }
    println!("{}", header.join(","));
    for i in 0..=a.density {
        let p = Rat::new(i.into(), a.density.into());
        let mut row = vec![render_rat(&p, a.decimals)];
        let f = plan
            .target
            .eval(&p, &precision)
            .map_err(|e| AppError::validation(e.to_string()))?;
        row.push(render_rat(&((f.lo() + f.hi()) / rat_int(2)), a.decimals));
        for (tier, pair) in plan.envelopes.iter().enumerate() {
            let g = pair
                .lower
                .eval(&p, &precision)
                .map_err(|e| AppError::validation(e.to_string()))?;
            row.push(render_rat(&((g.lo() + g.hi()) / rat_int(2)), a.decimals));
            let bern = bernstein_eval(&pair.lower, plan.table.checkpoints[tier], &p, &precision)
                .map_err(|e| AppError::validation(e.to_string()))?;
            row.push(render_rat(
                &((bern.lo() + bern.hi()) / rat_int(2)),
                a.decimals,
            ));
        }
        println!("{}", row.join(","));
    }
    Ok(())
}
