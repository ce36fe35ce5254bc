use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use expcli::{selftest_configs, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "expcli", version, about = "Seeded experiments for the smoothed toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Least-singular-value and small-ball ensembles.
    Ensemble(RunArgs),
    /// Robust subspace recovery.
    Subspace(RunArgs),
    /// Order-2ℓ FOOBI decomposition.
    Foobi(RunArgs),
    /// HMM parameter recovery.
    Hmm(RunArgs),
    /// Quick run of every kind at small sizes.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; without it the kind's defaults are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    jobs: Option<usize>,
    /// Write each run under OUT/<kind>-<index>.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn load(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_path(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::defaults_for(kind),
    };
    if cfg.kind != kind {
        return Err(format!("config kind is `{}` but the subcommand is `{kind}`", cfg.kind));
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn print_summary(s: &expcli::Summary) {
    println!(
        "{}: {}/{} trials passed (rate {:.3}, 95% Wilson [{:.3}, {:.3}], required {:.3}) -> {}",
        s.kind,
        s.trials_passed,
        s.trials,
        s.trial_pass_rate,
        s.trial_wilson95.0,
        s.trial_wilson95.1,
        s.min_pass_rate,
        if s.all_pass { "PASS" } else { "FAIL" }
    );
    for (name, m) in &s.metrics {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
        println!(
            "  {name:<22} median {:>10}  min {:>10}  max {:>10}  errors {}",
            fmt(m.median),
            fmt(m.min),
            fmt(m.max),
            m.failed
        );
    }
}

fn run_one(cfg: &ExperimentConfig, write: bool) -> Result<bool, (u8, String)> {
    let out = expcli::run(cfg).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    if write {
        expcli::write_outputs(cfg, &out).map_err(|e| (EXIT_FAIL, e.to_string()))?;
    }
    for row in out.rows.iter().filter(|r| r.value.is_nan() && !r.detail.is_empty()) {
        eprintln!("trial {} ({}): {}", row.trial_id, row.metric, row.detail);
    }
    print_summary(&out.summary);
    Ok(out.summary.all_pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Selftest(args) => {
            let mut ok = true;
            let mut res = Ok(true);
            for (i, mut cfg) in selftest_configs().into_iter().enumerate() {
                cfg.seed = args.seed;
                if let Some(j) = args.jobs {
                    cfg.jobs = j;
                }
                if let Some(dir) = &args.out {
                    cfg.out = dir.join(format!("{}-{i}", cfg.kind));
                }
                match run_one(&cfg, args.out.is_some()) {
                    Ok(pass) => ok &= pass,
                    Err(e) => {
                        res = Err(e);
                        break;
                    }
                }
            }
            res.map(|_| ok)
        }
        Command::Ensemble(a) => dispatch(ExperimentKind::Ensemble, &a),
        Command::Subspace(a) => dispatch(ExperimentKind::Subspace, &a),
        Command::Foobi(a) => dispatch(ExperimentKind::Foobi, &a),
        Command::Hmm(a) => dispatch(ExperimentKind::Hmm, &a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(kind: ExperimentKind, args: &RunArgs) -> Result<bool, (u8, String)> {
    let cfg = load(kind, args).map_err(|e| (EXIT_CONFIG, e))?;
    run_one(&cfg, true)
}
