use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lgo::audit::{load_anchors, TopKMode};
use lgo::data::{load_csv, FeatureStats, Task, CANONICAL_SEEDS};
use lgo::experiment::{
    plot_data, read_threshold_summaries, run_experiment, simplify_pool, write_exports, RunConfig, SimplifiedRow,
    DEFAULT_TOP_K, THRESHOLD_AUDIT,
};
use lgo::export::write_rows;
use lgo::expr::OperatorSet;
use lgo::search::SearchConfig;
use lgo::synth::{gen_synth, write_synth, SynthKind, SynthSpec};
use lgo::{ConfigError, DataError, LgoError};

#[derive(Parser)]
#[command(name = "lgo", version, about = "Logistic-gated symbolic regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve, refine, simplify and export over a list of seeds.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "regression")]
        task: Task,
        #[arg(long, default_value = "hard")]
        ops: OperatorSet,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, default_value_t = 800)]
        pop: usize,
        #[arg(long, default_value_t = 100)]
        gen: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
        /// Rank top-k per seed instead of over the union of seeds.
        #[arg(long)]
        per_seed_top_k: bool,
        /// Dataset tag used in exports; defaults to the file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Write a synthetic benchmark with known thresholds.
    GenSynth {
        #[arg(long)]
        kind: SynthKind,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Band exported threshold medians against an anchor file.
    Audit {
        #[arg(long)]
        thresholds: PathBuf,
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-simplify an exported pool with equivalence checks.
    Simplify {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "regression")]
        task: Task,
        /// Training-split scaling from a run; fitted on `--data` when absent.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit tidy plot inputs from one or more run directories.
    Plotdata {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn workers_from_env() -> Result<Option<usize>, ConfigError> {
    match std::env::var("LGO_WORKERS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| ConfigError::Invalid(format!("LGO_WORKERS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn execute(cmd: Command) -> Result<(), LgoError> {
    match cmd {
        Command::Run {
            data,
            target,
            task,
            ops,
            seeds,
            pop,
            gen,
            out,
            anchors,
            top_k,
            per_seed_top_k,
            name,
        } => {
            let dataset = load_csv(&data, &target, task)?;
            let catalogue = anchors.as_deref().map(load_anchors).transpose()?;
            let config = RunConfig {
                dataset: name.unwrap_or_else(|| {
                    data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
                }),
                search: SearchConfig {
                    pop,
                    gen,
                    operator_set: ops,
                    workers: workers_from_env()?,
                    ..SearchConfig::default()
                },
                seeds: seeds.unwrap_or_else(|| CANONICAL_SEEDS.to_vec()),
                top_k,
                top_k_mode: if per_seed_top_k { TopKMode::PerSeed } else { TopKMode::Union },
                ..RunConfig::default()
            };
            config.search.validate()?;
            let result = run_experiment(&dataset, &config, catalogue.as_ref())?;
            let manifest = write_exports(&result, &config, &out, Some(&data))?;
            for s in &result.seeds {
                let m = &s.test_metrics;
                let summary: Vec<String> = m.named_values().iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
                println!("seed {:>3}  {}  {}", s.seed, summary.join("  "), lgo::expr::print_expr(&s.best().simplified, &s.stats.names));
            }
            if let Some(a) = &result.audit {
                println!("audit: {} green, {} yellow, {} red", a.counts.green, a.counts.yellow, a.counts.red);
            }
            if !manifest.self_check_failures.is_empty() {
                return Err(LgoError::SelfCheck(manifest.self_check_failures.join("; ")));
            }
            Ok(())
        }
        Command::GenSynth {
            kind,
            n,
            noise,
            seed,
            out,
        } => {
            let (data, truth) = gen_synth(&SynthSpec::new(kind, n, noise, seed))?;
            let files = write_synth(&data, &truth, &out)?;
            println!("{}\n{}\n{}", files.data.display(), files.truth.display(), files.anchors.display());
            Ok(())
        }
        Command::Audit {
            thresholds,
            anchors,
            out,
        } => {
            let summaries = read_threshold_summaries(&thresholds)?;
            let catalogue = load_anchors(&anchors)?;
            let outcome = lgo::audit::audit_thresholds(&summaries, &catalogue);
            std::fs::create_dir_all(&out).map_err(|e| DataError::io(&out, e))?;
            write_rows(&out.join(THRESHOLD_AUDIT), &outcome.rows)?;
            for r in &outcome.rows {
                println!("{:<16} {:>10} {:>10} {:>7.2}%  {}", r.feature, r.median, r.anchor, 100.0 * r.rel_dev, r.band);
            }
            for e in &outcome.excluded {
                println!("{:<16} excluded: {}", e.feature, e.reason);
            }
            let c = &outcome.counts;
            println!("{} green, {} yellow, {} red", c.green, c.yellow, c.red);
            Ok(())
        }
        Command::Simplify {
            pool,
            data,
            target,
            task,
            stats,
            out,
        } => {
            let dataset = load_csv(&data, &target, task)?;
            let stats = stats.as_deref().map(FeatureStats::read_csv).transpose()?;
            let rows: Vec<SimplifiedRow> = simplify_pool(&pool, &dataset, stats.as_ref(), Default::default())?;
            std::fs::create_dir_all(&out).map_err(|e| DataError::io(&out, e))?;
            write_rows(&out.join("simplified.csv"), &rows)?;
            let flagged = rows.iter().filter(|r| r.equivalence_flag != "ok").count();
            println!("{} expressions, {} flagged", rows.len(), flagged);
            Ok(())
        }
        Command::Plotdata { runs, out } => {
            for f in plot_data(&runs, &out)? {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
