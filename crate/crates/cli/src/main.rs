//! Command-line pipeline: AC power flow, the two-step feasibility check,
//! and the conic OPF models with tightness reporting and angle recovery.
//!
//! Exit codes: 0 success, 1 input error, 2 power-flow divergence, 3 solver
//! failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use socopf::acpf::{pf_mismatch, solve_pf, PfOptions};
use socopf::cases;
use socopf::feascheck::{
    build_step1_system, build_theta1, cycle_consistency, least_squares, propagate_angle_error,
    RESIDUAL_CSV_HEADER,
};
use socopf::netmodel::{parse_matpower, Network};
use socopf::relaxations::{
    recover_ac_point, recover_angles_opf_cr, solve_opf_cr, solve_soc_acopf, tightness_gap,
    Recovery, SolutionDump, TightnessReport, MODEL_SOLVE_TOL,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "socopf",
    version,
    about = "SOC-OPF relaxations and AC-feasibility checks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the AC power flow and write the operating point
    Pf(CommonArgs),
    /// Run the two-step feasibility pipeline and write residual reports
    Counterexample(CommonArgs),
    /// Solve a conic OPF model, report tightness, attempt angle recovery
    Socopf(SocopfArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Case file (.m or .json) or builtin name (ieee33, ieee39); repeatable
    #[arg(long = "case", required = true)]
    cases: Vec<String>,
    /// Output directory (per-case subdirectories when several cases run)
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Power-flow mismatch tolerance, p.u.
    #[arg(long = "tol-pf", default_value_t = 1e-10)]
    tol_pf: f64,
    /// Threads used to fan out over independent cases
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SocopfArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    model: Model,
    /// Conic solve tolerance
    #[arg(long = "tol-solver", default_value_t = MODEL_SOLVE_TOL)]
    tol_solver: f64,
}

#[derive(ValueEnum, Clone, Copy, PartialEq)]
enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Clone, Copy, PartialEq)]
enum Model {
    /// Angle-free relaxation of the branch-flow model
    Cr,
    /// Angle-retaining model
    #[value(name = "zhao")]
    AngleRetaining,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn input(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            msg: msg.into(),
        }
    }
    fn divergence(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            msg: msg.into(),
        }
    }
    fn solver(msg: impl Into<String>) -> Self {
        Self {
            code: 3,
            msg: msg.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage problems are input errors under this tool's contract
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let code = match cli.cmd {
        Cmd::Pf(args) => fan_out(&args, &cmd_pf),
        Cmd::Counterexample(args) => fan_out(&args, &cmd_counterexample),
        Cmd::Socopf(args) => {
            let model = args.model;
            let tol = args.tol_solver;
            fan_out(
                &args.common,
                &move |case: &str, dir: &Path, a: &CommonArgs| cmd_socopf(case, dir, a, model, tol),
            )
        }
    };
    ExitCode::from(code)
}

/// Run one command over every requested case, optionally in parallel.
/// The reported code is the first failure in case order.
fn fan_out(
    args: &CommonArgs,
    run: &(dyn Fn(&str, &Path, &CommonArgs) -> Result<(), Failure> + Sync),
) -> u8 {
    let multi = args.cases.len() > 1;
    let results: Vec<Result<(), Failure>> = if args.jobs > 1 && multi {
        std::thread::scope(|scope| {
            let handles: Vec<_> = args
                .cases
                .iter()
                .map(|case| {
                    scope.spawn(move || {
                        let dir = case_dir(&args.out, case, multi);
                        run(case, &dir, args)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("case worker"))
                .collect()
        })
    } else {
        args.cases
            .iter()
            .map(|case| run(case, &case_dir(&args.out, case, multi), args))
            .collect()
    };
    for (case, result) in args.cases.iter().zip(results) {
        if let Err(f) = result {
            eprintln!("{case}: {}", f.msg);
            return f.code;
        }
    }
    0
}

fn case_dir(out: &Path, case: &str, multi: bool) -> PathBuf {
    if multi {
        out.join(case_label(case))
    } else {
        out.to_path_buf()
    }
}

fn case_label(case: &str) -> String {
    Path::new(case)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| case.to_string())
}

fn load_case(case: &str) -> Result<Network, Failure> {
    if let Some(net) = cases::builtin(case) {
        return Ok(net);
    }
    let text = std::fs::read_to_string(case)
        .map_err(|e| Failure::input(format!("cannot read case '{case}': {e}")))?;
    let net = if case.ends_with(".json") {
        Network::from_json(&text)
    } else {
        parse_matpower(&text)
    };
    net.map_err(|e| Failure::input(format!("case '{case}': {e}")))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn run_pf(net: &Network, args: &CommonArgs) -> Result<socopf::OperatingPoint, Failure> {
    let opts = PfOptions {
        tol: args.tol_pf,
        ..Default::default()
    };
    solve_pf(net, &opts).map_err(|e| Failure::divergence(e.to_string()))
}

fn cmd_pf(case: &str, dir: &Path, args: &CommonArgs) -> Result<(), Failure> {
    let net = load_case(case)?;
    let pt = run_pf(&net, args)?;
    let worst = pf_mismatch(&net, &pt)
        .iter()
        .fold(0.0f64, |a, m| a.max(m.abs()));
    write_file(
        dir,
        "point.json",
        &serde_json::to_string_pretty(&pt).unwrap(),
    )?;
    println!("{}: converged, mismatch {worst:.3e} p.u.", case_label(case));
    Ok(())
}

fn cmd_counterexample(case: &str, dir: &Path, args: &CommonArgs) -> Result<(), Failure> {
    let net = load_case(case)?;
    let label = case_label(case);
    let pt = match run_pf(&net, args) {
        Ok(pt) => pt,
        Err(f) => {
            // leave a marker so partial pipelines are visible downstream
            let summary = serde_json::json!({ "case": label, "failed": "pf", "error": f.msg });
            write_file(
                dir,
                "summary.json",
                &serde_json::to_string_pretty(&summary).unwrap(),
            )?;
            return Err(f);
        }
    };

    let (_flows, step1) = least_squares(&build_step1_system(&net, &pt));
    let theta1 = build_theta1(&net, &pt);
    let step2 = cycle_consistency(&net, &theta1);
    let propagated = propagate_angle_error(&net, &pt.v, &step2.theta_fit, &pt);

    if args.format == Format::Csv {
        let mut csv = String::from(RESIDUAL_CSV_HEADER);
        csv.push('\n');
        step1.write_csv_rows(&mut csv, &label, "step1");
        step2.report.write_csv_rows(&mut csv, &label, "step2");
        write_file(dir, "residuals.csv", &csv)?;
    } else {
        let json = serde_json::json!({
            "case": label,
            "step1": { "residuals": step1.residuals, "unit": step1.unit },
            "step2": { "residuals": step2.report.residuals, "unit": step2.report.unit },
        });
        write_file(
            dir,
            "residuals.json",
            &serde_json::to_string_pretty(&json).unwrap(),
        )?;
    }

    let summary = serde_json::json!({
        "case": label,
        "step1_max_residual": step1.max_abs,
        "step2_max_residual_deg": step2.report.max_abs.to_degrees(),
        "step2_max_residual_rad": step2.report.max_abs,
        "propagated_power_error_pu": propagated,
        "classification": {
            "step1": if step1.consistent { "consistent" } else { "inconsistent" },
            "step2": if step2.report.consistent { "consistent" } else { "inconsistent" },
        },
    });
    write_file(
        dir,
        "summary.json",
        &serde_json::to_string_pretty(&summary).unwrap(),
    )?;
    println!(
        "{label}: step1 {:.3e} p.u., step2 {:.4} deg, propagation {:.3} p.u.",
        step1.max_abs,
        step2.report.max_abs.to_degrees(),
        propagated
    );
    Ok(())
}

fn tightness_csv(label: &str, model: &str, gaps: &TightnessReport) -> String {
    use std::fmt::Write;
    let mut out = String::from("case,model,branch,gap\n");
    for (l, g) in gaps.gap.iter().enumerate() {
        writeln!(out, "{label},{model},{l},{g:e}").unwrap();
    }
    out
}

fn recovery_json(net: &Network, recovery: &Recovery) -> serde_json::Value {
    let pf_res = recovery.point.as_ref().map(|pt| {
        pf_mismatch(net, pt)
            .iter()
            .fold(0.0f64, |a, m| a.max(m.abs()))
    });
    serde_json::json!({
        "attempted": true,
        "ac_recoverable": recovery.ac_recoverable,
        "cycle_residual": recovery.cycle.report.max_abs,
        "pf_mismatch_of_recovered_point": pf_res,
    })
}

fn cmd_socopf(
    case: &str,
    dir: &Path,
    args: &CommonArgs,
    model: Model,
    tol: f64,
) -> Result<(), Failure> {
    let net = load_case(case)?;
    let label = case_label(case);
    let model_name = match model {
        Model::Cr => "cr",
        Model::AngleRetaining => "zhao",
    };

    let (dump, gaps, recovery) = match model {
        Model::AngleRetaining => {
            let sol = solve_soc_acopf(&net, tol).map_err(|e| Failure::solver(e.to_string()))?;
            let gaps = tightness_gap(&sol, &net).map_err(|e| Failure::solver(e.to_string()))?;
            let rec = gaps
                .is_tight
                .then(|| recover_ac_point(&sol, &net))
                .transpose()
                .map_err(|e| Failure::solver(e.to_string()))?;
            (SolutionDump::from_soc(&sol, &net, &gaps), gaps, rec)
        }
        Model::Cr => {
            let sol = solve_opf_cr(&net, tol).map_err(|e| Failure::solver(e.to_string()))?;
            let gaps = tightness_gap(&sol, &net).map_err(|e| Failure::solver(e.to_string()))?;
            let rec = gaps
                .is_tight
                .then(|| recover_angles_opf_cr(&net, &sol))
                .transpose()
                .map_err(|e| Failure::solver(e.to_string()))?;
            (SolutionDump::from_cr(&sol, &net, &gaps), gaps, rec)
        }
    };

    write_file(
        dir,
        "solution.json",
        &serde_json::to_string_pretty(&dump).unwrap(),
    )?;
    if args.format == Format::Csv {
        write_file(
            dir,
            "tightness.csv",
            &tightness_csv(&label, model_name, &gaps),
        )?;
    } else {
        write_file(
            dir,
            "tightness.json",
            &serde_json::to_string_pretty(&gaps).unwrap(),
        )?;
    }
    let verdict = match &recovery {
        Some(rec) => recovery_json(&net, rec),
        None => serde_json::json!({
            "attempted": false,
            "reason": "solution not tight",
            "max_gap": gaps.max_gap,
        }),
    };
    write_file(
        dir,
        "recovery.json",
        &serde_json::to_string_pretty(&verdict).unwrap(),
    )?;

    println!(
        "{label} ({model_name}): objective {:.6}, max gap {:.3e}, tight: {}, recoverable: {}",
        dump.objective,
        gaps.max_gap,
        gaps.is_tight,
        recovery
            .as_ref()
            .map_or("n/a".to_string(), |r| r.ac_recoverable.to_string()),
    );
    Ok(())
}
