use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use holderlab_cli::artifacts::{fresh_run_dir, latest_run_dir, Run};
use holderlab_cli::config::ExperimentConfig;
use holderlab_cli::stages;
use holderlab_cli::{CliError, Result};
use serde_json::Value;

const RUNS_DIR: &str = "runs";

/// Numerical experiments for gradient Hölder estimates of quasilinear
/// elliptic equations.
///
/// Exit codes: 0 success, 2 invalid input or missing artifact, 3 solver
/// failure, 4 experiment invariant violated.
#[derive(Debug, Parser)]
#[command(name = "holderlab", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Run directory. Defaults to `output_dir` from the config, then to the
    /// latest `runs/run-*-<hash>` for this config, then to a fresh one.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Overrides `balls.seed` (also the pair-sampling seed).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Caps the number of worker threads.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Only errors are printed.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Full pipeline: solve, check-subsolution, harnack, cover, decay, holder, report.
    Run,

    /// Randomized sweep of the dist_γ metric axioms, sandwich bounds and
    /// closed form. Works without a config; with one, writes metric.json.
    VerifyMetric,

    /// Newton solve; writes solution.csv and solve.json.
    #[command(
        after_help = "solution.csv: header lines nx, ny, domain, field, then one row of nx values per grid row."
    )]
    Solve,

    /// Weak subsolution checks of v = ±γ*D_k u + |Du|² on the configured
    /// grid and its half-resolution level; writes subsolution.csv/json.
    #[command(
        after_help = "subsolution.csv columns: n,h,k,sign,max_violation,worst_i,worst_j,floor,tol,pass\n  k is the 1-based gradient component, sign is + or -; violations at or below floor are round-off."
    )]
    CheckSubsolution,

    /// Weak Harnack quotients on the sampled balls; writes harnack.csv/json.
    #[command(
        after_help = "harnack.csv columns: y1,y2,R,tau,k,sign,sup_v,numerator,infimum,khat,single_node\n  k is 1-based; single_node flags inner balls holding one grid node."
    )]
    Harnack,

    /// Covering constants, elimination probes and the empirical δ₀; needs
    /// harnack.json. Writes cover.csv/json.
    #[command(
        after_help = "cover.csv columns: y1,y2,r,diam,osc1,osc2,pass\n  one row per sampled ball; pass is the elimination probe outcome."
    )]
    Cover,

    /// Oscillation decay trace and fitted exponent; writes decay.csv/json.
    #[command(
        after_help = "decay.csv columns: y1,y2,r,diam,osc1,osc2,pass\n  one row per radius d·δ₀^m; pass means the decay bound and halving hold."
    )]
    Decay,

    /// Interior Hölder seminorms of Du scaled by d^α; needs decay.json
    /// unless experiment.alpha is set. Writes holder.csv/json.
    #[command(
        after_help = "holder.csv columns: d,nodes,seminorm,product,sampled,roundoff\n  product = seminorm·d^α (0 when roundoff); sampled marks seminorms estimated from sampled pairs."
    )]
    Holder,

    /// Merges the stage summaries of a run directory into report.json.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Validation("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let run = match &cli.config {
        Some(path) => Some(open_run(cli, path)?),
        None => None,
    };
    if let Command::VerifyMetric = cli.command {
        let seed = cli
            .seed
            .or(run.as_ref().map(|r| r.cfg.balls.seed))
            .unwrap_or(0);
        let result = stages::verify_metric(run.as_ref(), seed);
        if let Ok(v) = &result {
            say(cli, &format!(
                "metric sweep: {} triples / {} axiom failures, {} pairs / {} sandwich failures, {} oracle pairs / {} failures",
                v["report"]["triples"],
                v["report"]["axiom_failures"],
                v["report"]["pairs"],
                v["report"]["sandwich_failures"],
                v["report"]["oracle_pairs"],
                v["report"]["oracle_failures"]
            ));
        }
        return result.map(|_| ());
    }
    let run = run.ok_or_else(|| CliError::Validation("--config PATH is required".into()))?;
    run.progress(format!("run directory {}", run.dir.display()));
    let summary = match cli.command {
        Command::Run => stages::run_all(&run)?,
        Command::Solve => stages::solve(&run)?,
        Command::CheckSubsolution => stages::check_subsolution(&run)?,
        Command::Harnack => stages::harnack(&run)?,
        Command::Cover => stages::cover(&run)?,
        Command::Decay => stages::decay(&run)?,
        Command::Holder => stages::holder(&run)?,
        Command::Report => stages::report(&run)?,
        Command::VerifyMetric => unreachable!("handled above"),
    };
    say(cli, &one_line(&cli.command, &summary));
    say(cli, &format!("artifacts in {}", run.dir.display()));
    Ok(())
}

fn open_run(cli: &Cli, path: &Path) -> Result<Run> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.balls.seed = seed;
    }
    let hash = cfg.hash();
    let base = Path::new(RUNS_DIR);
    let dir = match (&cli.out, &cfg.output_dir, &cli.command) {
        (Some(d), _, _) => d.clone(),
        (None, Some(d), _) => d.clone(),
        (None, None, Command::Run) => fresh_run_dir(base, &hash),
        (None, None, _) => {
            latest_run_dir(base, &hash).unwrap_or_else(|| fresh_run_dir(base, &hash))
        }
    };
    Ok(Run::new(cfg, dir, cli.quiet))
}

fn say(cli: &Cli, line: &str) {
    if !cli.quiet {
        println!("{line}");
    }
}

fn one_line(cmd: &Command, v: &Value) -> String {
    let g = |k: &str| {
        v.get(k)
            .map(Value::to_string)
            .unwrap_or_else(|| "null".into())
    };
    match cmd {
        Command::Solve => format!(
            "solve: {} iterations, residual {}",
            g("iterations"),
            g("residual")
        ),
        Command::CheckSubsolution => format!(
            "subsolution: pass {} (C = {}, worst shrink {})",
            g("pass"),
            g("c"),
            g("worst_shrink")
        ),
        Command::Harnack => format!("harnack: K = {} over {} samples", g("k"), g("samples")),
        Command::Cover => format!(
            "cover: elimination {}/{} valid, δ₀_emp = {}, alpha_theory = {}",
            v["elimination"]["passed"],
            v["elimination"]["valid"],
            g("delta0_emp"),
            g("alpha_theory")
        ),
        Command::Decay => format!(
            "decay: alpha_emp = {}, {} radii",
            g("alpha_emp"),
            g("levels")
        ),
        Command::Holder => format!(
            "holder: α = {}, ratio {} (pass {})",
            g("alpha"),
            g("ratio"),
            g("pass")
        ),
        Command::Run | Command::Report => format!(
            "report: alpha_emp = {}, K = {}, subsolution pass {}, scaling pass {}",
            g("alpha_emp"),
            v["harnack"]["k"],
            v["subsolution"]["pass"],
            v["holder"]["pass"]
        ),
        Command::VerifyMetric => String::new(),
    }
}
