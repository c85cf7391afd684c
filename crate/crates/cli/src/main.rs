use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vccm::checks;
use vccm::embedding::Embedding;
use vccm::error::Error;
use vccm::io::{read_json, write_atomic, write_json};
use vccm::pipeline::{read_summaries, result_file_name, simulate_all, synthesize, Comparison, RunConfig};
use vccm::sim::SimSummary;
use vccm::synthesis::{verify, SynthesisProblem, SynthesisResult};

/// Contraction-metric controller design for the 3-DOF gyroscope.
#[derive(Parser, Debug)]
#[command(name = "vccm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the randomized dynamics and embedding property checks.
    ModelCheck(Common),
    /// Solve the configured design for each embedding and write result files.
    Synthesize(Common),
    /// Simulate every scenario under every controller.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Result file to take gains from (repeatable). Defaults to the
        /// result files in the output directory.
        #[arg(long)]
        result: Vec<PathBuf>,
        /// Exit with code 4 if any run diverged.
        #[arg(long)]
        strict: bool,
    },
    /// Tabulate cost summaries from one or more summary files.
    Compare {
        summaries: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-certify a result file from its stored design data.
    Verify {
        #[arg(long)]
        result: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized checks; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

/// A failure reported as one `error: CODE: message` line.
struct Failure {
    code: &'static str,
    exit: u8,
    message: String,
}

impl Failure {
    fn new(code: &'static str, exit: u8, message: impl Into<String>) -> Self {
        Failure { code, exit, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, exit) = match &e {
            Error::Infeasible(_) => ("INFEASIBLE", 3),
            Error::NoConvergence(_) => ("SOLVER_FAILED", 1),
            Error::Mismatch(_) => ("RESULT_MISMATCH", 2),
            Error::Io { .. } => ("IO_ERROR", 2),
            Error::SingularInertia { .. } | Error::InvalidParams(_) => ("INVALID_MODEL", 2),
            Error::Config(_) | Error::Shape(_) | Error::Reference(_) | Error::Serde(_) => ("CONFIG_ERROR", 2),
        };
        Failure::new(code, exit, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // Keep clap's message but drop its usage block and hints.
            let text = e.to_string();
            let msg: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .map(|l| l.trim())
                .filter(|l| !l.is_empty() && !l.starts_with("tip:"))
                .collect();
            report(&Failure::new("USAGE", 2, msg.join(" ").trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    let outcome = match cli.command {
        Command::ModelCheck(c) => model_check(&c),
        Command::Synthesize(c) => cmd_synthesize(&c),
        Command::Simulate { common, result, strict } => cmd_simulate(&common, &result, strict),
        Command::Compare { summaries, out } => cmd_compare(&summaries, out.as_deref()),
        Command::Verify { result } => cmd_verify(&result),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::from(f.exit)
        }
    }
}

fn report(f: &Failure) {
    let msg: String = f.message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error: {}: {msg}", f.code);
}

fn load(c: &Common) -> Result<(RunConfig, PathBuf), Failure> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.out_dir());
    Ok((cfg, out))
}

fn model_check(c: &Common) -> Outcome {
    let (cfg, out) = load(c)?;
    let params = cfg.params()?;
    let reports = checks::run_all(&params, cfg.checks.samples, cfg.seed);
    for r in &reports {
        let status = if r.pass { "PASS" } else { "FAIL" };
        match &r.error {
            Some(e) => println!("{status} {} error=\"{e}\"", r.name),
            None => println!("{status} {} worst={:.3e} tol={:.1e} samples={}", r.name, r.worst, r.tolerance, r.samples),
        }
    }
    if c.out.is_some() || cfg.out.is_some() {
        write_json(&out.join("model_check.json"), &reports)?;
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(Failure::new("CHECK_FAILED", 5, format!("{failed} of {} checks failed", reports.len())));
    }
    Ok(())
}

fn cmd_synthesize(c: &Common) -> Outcome {
    let (cfg, out) = load(c)?;
    for res in synthesize(&cfg)? {
        let path = out.join(result_file_name(res.embedding));
        write_json(&path, &res)?;
        let alpha = res.alpha.map_or_else(String::new, |a| format!(" alpha={a:.6}"));
        println!(
            "{} {} {}:{alpha} worst_relative={:.3e} w_eig=[{:.3e}, {:.3e}] newton_steps={} -> {}",
            res.mode,
            res.embedding.name().to_uppercase(),
            res.design,
            res.margins.worst_relative,
            res.margins.w_min_eigenvalue,
            res.margins.w_max_eigenvalue,
            res.stats.newton_steps,
            path.display()
        );
    }
    Ok(())
}

fn cmd_simulate(c: &Common, result_paths: &[PathBuf], strict: bool) -> Outcome {
    let (cfg, out) = load(c)?;
    let paths: Vec<PathBuf> = if result_paths.is_empty() {
        let mut needed: Vec<Embedding> = cfg.controllers.iter().map(|k| k.embedding()).collect();
        needed.sort_by_key(|e| e.name());
        needed.dedup();
        needed.into_iter().map(|e| out.join(result_file_name(e))).collect()
    } else {
        result_paths.to_vec()
    };
    let results = paths.iter().map(|p| read_json::<SynthesisResult>(p)).collect::<Result<Vec<_>, _>>()?;
    let runs = simulate_all(&cfg, &results)?;
    let traces = out.join("traces");
    for run in &runs {
        write_atomic(&traces.join(run.trace_file_name()), &run.trace.to_csv(run.decimation)?)?;
    }
    let summaries: Vec<SimSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    write_json(&out.join("summary.json"), &summaries)?;
    if summaries.len() >= 2 {
        print!("{}", Comparison::new(&summaries)?.to_text());
    }
    for s in &summaries {
        if let Some(b) = &s.bound {
            println!(
                "bound {} {}: J_T={:.4e} alpha^2*E={:.4e} ratio={:.3} {}",
                s.scenario,
                s.controller,
                b.cost,
                b.bound,
                b.ratio,
                if b.pass { "PASS" } else { "FAIL" }
            );
        }
    }
    let unstable: Vec<String> =
        summaries.iter().filter(|s| s.unstable).map(|s| format!("{}/{}", s.scenario, s.controller)).collect();
    if strict && !unstable.is_empty() {
        return Err(Failure::new("UNSTABLE_RUN", 4, format!("diverged: {}", unstable.join(", "))));
    }
    Ok(())
}

fn cmd_compare(paths: &[PathBuf], out: Option<&Path>) -> Outcome {
    if paths.is_empty() {
        return Err(Failure::new(
            "USAGE",
            2,
            "compare needs summary files: vccm compare SUMMARY.json [SUMMARY.json ...]",
        ));
    }
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_summaries(p)?);
    }
    if all.len() < 2 {
        return Err(Failure::new(
            "USAGE",
            2,
            format!(
                "compare needs at least two summaries, got {}: vccm compare SUMMARY.json [SUMMARY.json ...]",
                all.len()
            ),
        ));
    }
    let table = Comparison::new(&all)?;
    print!("{}", table.to_text());
    if let Some(dir) = out {
        write_atomic(&dir.join("compare.csv"), &table.to_csv()?)?;
        write_atomic(&dir.join("compare.txt"), table.to_text().as_bytes())?;
    }
    Ok(())
}

fn cmd_verify(path: &Path) -> Outcome {
    let res: SynthesisResult = read_json(path)?;
    let pb = SynthesisProblem::rebuild(&res)?;
    let m = verify(&res, &pb);
    println!(
        "{} {} {}: points={} worst_relative={:.3e} (point {}) w_eig=[{:.3e}, {:.3e}]",
        res.mode,
        res.embedding.name().to_uppercase(),
        res.design,
        m.max_eigenvalues.len(),
        m.worst_relative,
        m.worst_point,
        m.w_min_eigenvalue,
        m.w_max_eigenvalue
    );
    if !m.pass {
        return Err(Failure::new(
            "NOT_CERTIFIED",
            5,
            format!("worst relative eigenvalue {:.3e} at point {}", m.worst_relative, m.worst_point),
        ));
    }
    println!("CERTIFIED");
    Ok(())
}
