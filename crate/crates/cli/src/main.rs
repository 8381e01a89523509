use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use thr_core::checkpoint;
use thr_core::config::{RunConfig, SchemeName};
use thr_core::eval::eval_suite;
use thr_core::metrics::to_csv;
use thr_core::sweep::{median_rows, prepare_dir, run_sweep, summary_rows, write_sweep, SweepAxis, SweepSpec};
use thr_core::tasks::generate_dataset;
use thr_core::train::{train, write_run};
use thr_core::verify::{run_suite, Suite};
use thr_core::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_VERIFY: u8 = 3;
const EXIT_STARVATION: u8 = 4;

/// THR experiment runner: training, verifier suites, sweeps and evaluation.
#[derive(Parser)]
#[command(name = "thrlab", version)]
struct Cli {
    /// Root directory for outputs when --out is not given.
    #[arg(long, env = "THRLAB_OUT", default_value = "runs", global = true)]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write its metrics, eval table and checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (default: <out-root>/train-<scheme>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run a verifier suite and write its CSV report.
    Verify {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        /// Number of random instances (trials per cell for qalign).
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV report path (default: <out-root>/verify-<suite>.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep p or the scheme across seeds.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<String>,
        /// Seeds as a comma list or a half-open range `a..b`.
        #[arg(long)]
        seeds: String,
        /// Output directory (default: <out-root>/sweep-<axis>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint on the configured task.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lr=0.5`; applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    p: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    objective: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    FirstOrder,
    Entropy,
    CrossEntropy,
    Qalign,
    Gradcheck,
    PasskOracle,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::FirstOrder => Suite::FirstOrder,
            SuiteArg::Entropy => Suite::Entropy,
            SuiteArg::CrossEntropy => Suite::CrossEntropy,
            SuiteArg::Qalign => Suite::Qalign,
            SuiteArg::Gradcheck => Suite::Gradcheck,
            SuiteArg::PasskOracle => Suite::PasskOracle,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    P,
    Scheme,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text)?;
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("scheme", self.scheme.clone()),
            ("p", self.p.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("steps", self.steps.map(|v| v.to_string())),
            ("objective", self.objective.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_seeds(s: &str) -> anyhow::Result<Vec<u64>> {
    let seeds = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        (a..b).collect()
    } else {
        s.split(',')
            .filter(|x| !x.trim().is_empty())
            .map(|x| x.trim().parse())
            .collect::<Result<Vec<u64>, _>>()?
    };
    if seeds.is_empty() {
        return Err(Error::Config("empty seed list".into()).into());
    }
    Ok(seeds)
}

fn cmd_train(cfg: RunConfig, out: PathBuf, force: bool) -> anyhow::Result<ExitCode> {
    prepare_dir(&out, force)?;
    let record = train(&cfg)?;
    write_run(&out, &record)?;
    println!(
        "greedy_acc {:.4}  pass@{} {:.4}  -> {}",
        record.final_greedy().unwrap_or(f64::NAN),
        cfg.eval_k.last().copied().unwrap_or(1),
        record.final_pass(*cfg.eval_k.last().unwrap_or(&1)).unwrap_or(f64::NAN),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(suite: Suite, n: usize, seed: u64, out: &Path) -> anyhow::Result<ExitCode> {
    let report = run_suite(suite, n, seed)?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out, to_csv(&report.rows)?)?;
    let mut checks: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !checks.contains(&r.check.as_str()) {
            checks.push(&r.check);
        }
    }
    for c in checks {
        println!("{c}: max rel_err {:.3e}", report.max_rel_err(c));
    }
    if report.passed() {
        println!("{suite}: pass ({} rows) -> {}", report.rows.len(), out.display());
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &report.failures {
            eprintln!("FAIL {f}");
        }
        eprintln!("{suite}: {} failures", report.failures.len());
        Ok(ExitCode::from(EXIT_VERIFY))
    }
}

fn cmd_sweep(spec: SweepSpec, out: PathBuf, force: bool) -> anyhow::Result<ExitCode> {
    spec.cells()?;
    prepare_dir(&out, force)?;
    let cells = run_sweep(&spec)?;
    write_sweep(&out, &cells)?;
    for m in median_rows(&summary_rows(&cells)) {
        if m.metric == "greedy_acc" || m.k == 16 {
            println!(
                "{:<20} {:<12} K={:<3} median {:.4} ({} runs)",
                m.cell, m.metric, m.k, m.median, m.runs
            );
        }
    }
    let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed; see summary.csv", cells.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(cfg: RunConfig, path: &Path) -> anyhow::Result<ExitCode> {
    let params = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let task = cfg.task_spec()?;
    if params.vocab() != task.vocab {
        bail!(Error::Config(format!(
            "checkpoint vocabulary {} does not match configured {}",
            params.vocab().size(),
            task.vocab.size()
        )));
    }
    let stats = eval_suite(&params, &task, &generate_dataset(&task), &cfg.eval_config())?;
    println!("greedy_acc {:.4}", stats.greedy_acc);
    for (k, v) in &stats.pass_at_k {
        println!("pass@{k} {v:.4}");
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train { cfg, out, force } => {
            let cfg = cfg.resolve()?;
            let out = out.unwrap_or_else(|| cli.out_root.join(format!("train-{}-seed{}", cfg.scheme, cfg.seed)));
            cmd_train(cfg, out, force)
        }
        Command::Verify { suite, n, seed, out } => {
            let suite = Suite::from(suite);
            let out = out.unwrap_or_else(|| cli.out_root.join(format!("verify-{suite}.csv")));
            cmd_verify(suite, n, seed, &out)
        }
        Command::Sweep {
            cfg,
            axis,
            values,
            seeds,
            out,
            force,
        } => {
            let base = cfg.resolve()?;
            let axis = match axis {
                AxisArg::P => SweepAxis::P(
                    values
                        .iter()
                        .map(|v| {
                            v.trim()
                                .parse()
                                .map_err(|_| Error::Config(format!("bad p value {v:?}")))
                        })
                        .collect::<Result<_, _>>()?,
                ),
                AxisArg::Scheme => SweepAxis::Scheme(
                    values
                        .iter()
                        .map(|v| v.trim().parse::<SchemeName>())
                        .collect::<Result<_, _>>()?,
                ),
            };
            let label = match axis {
                SweepAxis::P(_) => "p",
                SweepAxis::Scheme(_) => "scheme",
            };
            let out = out.unwrap_or_else(|| cli.out_root.join(format!("sweep-{label}")));
            let spec = SweepSpec {
                base,
                axis,
                seeds: parse_seeds(&seeds)?,
            };
            cmd_sweep(spec, out, force)
        }
        Command::Eval { cfg, checkpoint } => cmd_eval(cfg.resolve()?, &checkpoint),
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::root) {
        Some(Error::Config(_)) | Some(Error::KTooLarge { .. }) | Some(Error::BadArity { .. }) => EXIT_VALIDATION,
        Some(Error::BatchStarvation { .. }) => EXIT_STARVATION,
        _ if err.downcast_ref::<std::num::ParseIntError>().is_some() => EXIT_VALIDATION,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
