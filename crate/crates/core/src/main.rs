use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qspd_bench::bench::{
    emit_report, load_data, load_report, parse_families, run_ablation, run_benchmark, Formats, RunConfig,
};
use qspd_bench::data::{generate_synthetic_cohort, write_cohort_csv, GenProfile, Target};
use qspd_bench::{Error, Result};

#[derive(Parser)]
#[command(name = "qspd-bench", version, about = "Small-sample regression benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the hold-out benchmark for one or all targets.
    Run(RunArgs),
    /// Run the SPD ablation grid.
    Ablate(RunArgs),
    /// Generate a synthetic cohort and save it as CSV.
    Synth {
        #[arg(long, default_value_t = 213)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render a saved report (the .toml written by run or ablate).
    Report {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_svg: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// weight, force, quality or all.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated family keys, or "all".
    #[arg(long)]
    families: Option<String>,
    /// Worker threads; 1 runs serially.
    #[arg(long)]
    jobs: Option<usize>,
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = &args.target {
        cfg.targets = if t == "all" {
            Target::ALL.to_vec()
        } else {
            vec![t.parse()?]
        };
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    if let Some(f) = &args.families {
        cfg.families = parse_families(f)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs, ablate: bool) -> Result<()> {
    let cfg = resolve(&args)?;
    let data = load_data(&cfg.cohort)?;
    let work = || -> Result<()> {
        for &target in &cfg.targets {
            let report = if ablate {
                let entries = cfg.ablation.clone();
                run_ablation(&cfg, &data, target, &entries)?
            } else {
                run_benchmark(&cfg, &data, target)?
            };
            let files = emit_report(&report, &cfg.out_dir, Formats { svg: cfg.svg })?;
            let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
            let leaks = report.audit_violations().len();
            eprintln!(
                "{target}: {} rows ({failed} failed), {} audit entries, {leaks} violations; wrote {} files to {}",
                report.rows.len(),
                report.audit.len(),
                files.len(),
                cfg.out_dir.display()
            );
            if leaks > 0 {
                return Err(Error::Protocol(format!("{leaks} leakage-audit violations for {target}")));
            }
        }
        Ok(())
    };
    match args.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a, false),
        Command::Ablate(a) => run(a, true),
        Command::Synth { n, seed, out } => generate_synthetic_cohort(n, seed, &GenProfile::default())
            .and_then(|c| write_cohort_csv(&c, &out)),
        Command::Report { input, out, no_svg } => load_report(&input)
            .and_then(|r| emit_report(&r, &out, Formats { svg: !no_svg }))
            .map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
