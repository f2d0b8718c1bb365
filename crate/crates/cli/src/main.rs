use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mabn::error::{Error, Result};
use mabn::harness::{
    aggregate_files, render_svg, run, save_aggregate_csv, sweep, verify, AxisValues, ExperimentConfig,
    PlotStyle, Suite, SweepAxis,
};
use mabn::parallel::Exec;

/// Mode-aware batch normalization experiments.
#[derive(Parser)]
#[command(name = "mabn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config, one CSV per seed.
    Train {
        config: PathBuf,
        /// Output directory; overrides the config and $MABN_OUT_DIR.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Seeds run concurrently.
        #[arg(short, long)]
        workers: Option<usize>,
        /// Run seeds one after another.
        #[arg(long)]
        sequential: bool,
        /// Save the final agent of each seed.
        #[arg(long)]
        checkpoint: bool,
    },
    /// Cartesian sweep over one or more axes.
    Sweep {
        config: PathBuf,
        /// learning_rate, mode_string, mix_ratio or optimizer; repeat for more axes.
        #[arg(long, required = true)]
        axis: Vec<String>,
        /// Comma-separated values, one list per --axis.
        #[arg(long, required = true)]
        values: Vec<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(short, long)]
        workers: Option<usize>,
        #[arg(long)]
        sequential: bool,
    },
    /// Per-step mean, std, min and max across run CSVs.
    Aggregate {
        pattern: String,
        /// Aggregate CSV destination; printed to stdout otherwise.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Mean ± std curves, one series per config hash.
    Plot {
        pattern: String,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "eval_return")]
        column: String,
        #[arg(long, default_value = "")]
        title: String,
    },
    /// Run a verification suite: bn, theorem1, lqr, gradients or all.
    Verify {
        suite: String,
        #[arg(long)]
        sequential: bool,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn exec(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::available()
    }
}

fn load(config: &Path, out: Option<PathBuf>, workers: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if out.is_some() {
        cfg.run.output_dir = out;
    }
    if workers.is_some() {
        cfg.run.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Train {
            config,
            out,
            workers,
            sequential,
            checkpoint,
        } => {
            let mut cfg = load(&config, out, workers)?;
            cfg.run.checkpoint |= checkpoint;
            let outcome = run(&cfg, exec(sequential))?;
            println!("config {} -> {}", outcome.hash, outcome.config_file.display());
            for s in &outcome.seeds {
                let last = s.metrics.last().and_then(|r| r.eval_return);
                match &s.metrics.fault {
                    Some(f) => println!("seed {} FAULT at step {}: {}", s.seed, f.step, f.reason),
                    None => println!(
                        "seed {} final eval_return {} -> {}",
                        s.seed,
                        last.map_or("-".into(), |v| format!("{v:.4}")),
                        s.csv.display()
                    ),
                }
            }
            Ok(outcome.faulted() == 0)
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
            workers,
            sequential,
        } => {
            if axis.len() != values.len() {
                return Err(Error::config("sweep", "give one --values list per --axis"));
            }
            let cfg = load(&config, out, workers)?;
            let axes = axis
                .iter()
                .zip(&values)
                .map(|(a, v)| {
                    Ok(AxisValues {
                        axis: a.parse::<SweepAxis>()?,
                        values: v.split(',').map(|s| s.trim().to_string()).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let outcome = sweep(&cfg, &axes, exec(sequential))?;
            for c in &outcome.cells {
                let coords: Vec<String> = c.coords.iter().map(|(a, v)| format!("{a}={v}")).collect();
                println!(
                    "{:<40} final {:>12} normalized {:.4}{}",
                    coords.join(" "),
                    c.final_return.map_or("-".into(), |v| format!("{v:.4}")),
                    c.normalized,
                    if c.faulted() { " FAULTED" } else { "" }
                );
            }
            println!("summary -> {}", outcome.summary.display());
            Ok(true)
        }
        Command::Aggregate { pattern, output } => {
            let files = expand(&pattern)?;
            let agg = aggregate_files(&files)?;
            match output {
                Some(p) => {
                    save_aggregate_csv(&p, &agg)?;
                    println!("{} runs, {} steps -> {}", agg.runs, agg.steps.len(), p.display());
                }
                None => mabn::harness::write_aggregate_csv(std::io::stdout().lock(), &agg)?,
            }
            Ok(true)
        }
        Command::Plot {
            pattern,
            output,
            column,
            title,
        } => {
            let files = expand(&pattern)?;
            let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
            for f in files {
                groups.entry(series_key(&f)).or_default().push(f);
            }
            let series = groups
                .into_iter()
                .map(|(key, files)| Ok((series_label(&key, &files[0]), aggregate_files(&files)?)))
                .collect::<Result<Vec<_>>>()?;
            let style = PlotStyle {
                title,
                column,
                ..PlotStyle::default()
            };
            let svg = render_svg(&series, &style)?;
            std::fs::write(&output, svg).map_err(|e| Error::io(&output, e))?;
            println!("{} series -> {}", series.len(), output.display());
            Ok(true)
        }
        Command::Verify { suite, sequential } => {
            let suites = if suite == "all" {
                Suite::ALL.to_vec()
            } else {
                vec![suite.parse()?]
            };
            let mut ok = true;
            for s in suites {
                for check in verify(s, exec(sequential)) {
                    ok &= check.passed();
                    println!("{check}");
                }
            }
            Ok(ok)
        }
    }
}

fn expand(pattern: &str) -> Result<Vec<PathBuf>> {
    let paths = glob::glob(pattern).map_err(|e| Error::Invalid(format!("bad pattern {pattern:?}: {e}")))?;
    let mut files: Vec<PathBuf> = paths.filter_map(|p| p.ok()).collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Invalid(format!("no files match {pattern:?}")));
    }
    Ok(files)
}

/// Run CSVs are `<hash>_seed<n>.csv`; everything before `_seed` names the series.
fn series_key(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match stem.rfind("_seed") {
        Some(i) => stem[..i].to_string(),
        None => stem,
    }
}

/// The mode label from the materialized config next to the CSVs, if any.
fn series_label(key: &str, sample: &Path) -> String {
    let cfg = sample.parent().map(|d| d.join(format!("{key}.toml")));
    match cfg.and_then(|p| ExperimentConfig::load(&p).ok()) {
        Some(c) => {
            let mut label = c.agent.mode.clone();
            if let Some(x) = c.agent.mix_ratio {
                label.push_str(&format!(" 1:{x}"));
            }
            format!("{label} ({key})")
        }
        None => key.to_string(),
    }
}
