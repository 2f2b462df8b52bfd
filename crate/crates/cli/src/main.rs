use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use metabandit::bounds::{eval_terms, BoundSpec};
use metabandit::harness::{self, compute_entropy_metrics, read_records, run_arms, write_bounds, write_outputs, Arms, ExperimentResult};
use metabandit::ExperimentConfig;

#[derive(Parser)]
#[command(name = "metabandit", version, about = "Meta-learning simulator for adversarial bandits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the meta-learner and the configured baselines.
    Run(RunArgs),
    /// Run only the baselines of a configuration.
    Baseline(RunArgs),
    /// Run the property suites.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Print the checks as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Evaluate a bound spec (TOML or JSON; a JSON array evaluates several).
    Bounds {
        spec: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Entropy tables from a records file.
    Entropy {
        records: PathBuf,
        /// Comma-separated beta values; defaults to the file's entropy columns.
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
        /// Shrink used for the similarity column.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Number of arms or paths; inferred from the records when omitted.
        #[arg(long)]
        options: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file.
    config: Option<PathBuf>,
    /// Use a named preset instead of a file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run replicas one after another.
    #[arg(long)]
    serial: bool,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(name)) => harness::preset(name)?,
            (None, None) => bail!("give a config file or --preset <name>"),
        };
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(r) = self.replicas {
            cfg.run.replicas = r;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| Path::new("out").join(&cfg.name))
    }
}

fn report(result: &ExperimentResult, dir: &Path) {
    let s = &result.summary;
    println!("{} (seed {}, {} replicas) -> {}", s.name, s.seed, result.config.run.replicas, dir.display());
    let line = |name: &str, arm: &harness::ArmSummary| {
        println!(
            "  {name:<28} avg regret {:>10.3} ± {:<8.3} final quartile {:>10.3} ± {:.3}",
            arm.avg_regret.mean, arm.avg_regret.stderr, arm.final_quartile_regret.mean, arm.final_quartile_regret.stderr
        );
    };
    if let Some(m) = &s.meta {
        line("meta", m);
    }
    for (name, b) in &s.baselines {
        line(name, b);
    }
}

fn run(args: &RunArgs, arms: Arms) -> Result<ExitCode> {
    let cfg = args.config()?;
    let result = run_arms(&cfg, arms, !args.serial)?;
    let dir = args.out_dir(&cfg);
    write_outputs(&dir, &result).with_context(|| format!("writing outputs to {}", dir.display()))?;
    report(&result, &dir);
    let errors: Vec<String> = result.meta.iter().chain(result.baselines.values().flatten()).filter_map(|r| r.error.clone()).collect();
    for e in &errors {
        eprintln!("replica failed: {e}");
    }
    Ok(if errors.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn bounds(spec: &Path, out_dir: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let specs: Vec<BoundSpec> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).context("parsing bound spec array")?
    } else {
        vec![BoundSpec::parse(&text)?]
    };
    let rows = specs
        .iter()
        .map(|s| Ok((s.name().to_string(), eval_terms(s)?)))
        .collect::<metabandit::Result<Vec<_>>>()?;
    write_bounds(io::stdout().lock(), &rows)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        write_bounds(fs::File::create(dir.join("bounds.csv"))?, &rows)?;
    }
    Ok(())
}

fn entropy(path: &Path, betas: &[f64], eps: f64, options: Option<usize>) -> Result<()> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (file_betas, records) = read_records(file)?;
    let betas = if betas.is_empty() { file_betas } else { betas.to_vec() };
    if betas.is_empty() {
        bail!("no beta values: pass --betas");
    }
    let options = match options {
        Some(n) => n,
        None => records
            .iter()
            .flat_map(|r| [r.estimated_index, r.true_index])
            .flatten()
            .max()
            .map(|i| i + 1)
            .context("records carry no discrete optima")?,
    };
    let rows = compute_entropy_metrics(&records, options, &betas, eps)?;
    let mut out = io::stdout().lock();
    writeln!(out, "replica,beta,estimated,truth,v_hat")?;
    for r in rows {
        writeln!(out, "{},{},{:.10},{:.10},{:.10}", r.replica, r.beta, r.estimated, r.truth, r.v_hat)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    dispatch(cli.command).unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run(args) => run(&args, Arms::All),
        Command::Baseline(args) => run(&args, Arms::BaselinesOnly),
        Command::Verify { seed, json } => {
            let checks = metabandit::verify::run_all(seed);
            if json {
                println!("{}", serde_json::to_string_pretty(&checks)?);
            } else {
                for c in &checks {
                    println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
                }
            }
            Ok(if checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Bounds { spec, out_dir } => bounds(&spec, out_dir.as_deref()).map(|_| ExitCode::SUCCESS),
        Command::Entropy { records, betas, eps, options } => entropy(&records, &betas, eps, options).map(|_| ExitCode::SUCCESS),
    }
}
