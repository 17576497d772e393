//! `sqlrank`: select, evaluate, ablate, export reward pairs, or audit a pool.

mod setup;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;
use setup::{enum_arg, Common, Settings};
use sqlrank::eval::{ablate, evaluate_with, load_dataset, DbRoot, EvalOptions, Grid};
use sqlrank::exec::{execute_pool, execute_sql, ExecOptions};
use sqlrank::rank::{ensure_pointwise, generate_candidates, judge_pool};
use sqlrank::reward::{build_pairs, reward_for_pair, NegativeSource};
use sqlrank::select::select;
use sqlrank::{Candidate, ConfigError, Error, Pass, Task};

#[derive(Debug, Parser)]
#[command(
    name = "sqlrank",
    version,
    about = "Execution-grouped selection over Text-to-SQL candidate pools"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct TaskArgs {
    /// SQLite database the candidates run against.
    #[arg(long)]
    db: PathBuf,
    #[arg(long, default_value = "")]
    question: String,
    #[arg(long, default_value = "")]
    evidence: String,
    #[arg(long, default_value = "cli")]
    task_id: String,
}

#[derive(Debug, Clone, clap::Args)]
struct DatasetArgs {
    /// JSON array or JSONL of tasks.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory of `<db_id>.sqlite` files, or a JSON map of db_id to path.
    #[arg(long)]
    db_root: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pick one query from a pool.
    Select {
        #[command(flatten)]
        task: TaskArgs,
        /// JSON array of SQL strings or candidate objects.
        #[arg(
            long,
            conflicts_with = "generate",
            required_unless_present = "generate"
        )]
        pool: Option<PathBuf>,
        /// Generate this many candidates instead of reading a pool.
        #[arg(long)]
        generate: Option<usize>,
        /// Write the full selection trace here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execution accuracy over a dataset.
    Evaluate {
        #[command(flatten)]
        data: DatasetArgs,
        /// Report JSON; wall-clock timings go to a `.timings.json` sidecar.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stream one JSON trace per task to this file.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Print the per-task table as well as the summary.
        #[arg(long)]
        table: bool,
    },
    /// Evaluate every variant of a config grid.
    Ablate {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        grid: PathBuf,
        /// CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export correct/incorrect training pairs.
    RewardExport {
        #[command(flatten)]
        data: DatasetArgs,
        /// JSON object of task_id to SQL list; otherwise pools are generated.
        #[arg(long)]
        pools: Option<PathBuf>,
        /// random or hard_top15.
        #[arg(long, default_value = "hard_top15", value_parser = enum_arg::<NegativeSource>)]
        policy: NegativeSource,
        /// JSONL output.
        #[arg(long)]
        out: PathBuf,
        /// Score each pair with the current pairwise ranker in both orders.
        #[arg(long)]
        with_rewards: bool,
    },
    /// Ask the judge whether a pool likely holds a correct query.
    Judge {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long)]
        pool: PathBuf,
    },
}

/// Exit status 2: bad input. Exit status 3: backend failure or partial result.
enum Failure {
    Usage(String),
    Backend(String),
    Incomplete,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(c) => c.into(),
            other => Failure::Backend(other.to_string()),
        }
    }
}

impl From<sqlrank::BackendError> for Failure {
    fn from(e: sqlrank::BackendError) -> Self {
        Failure::Backend(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn write_file(path: &Path, text: &str) -> Result<(), ConfigError> {
    std::fs::write(path, text).map_err(|e| ConfigError::io(path, e))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PoolFile {
    Sql(Vec<String>),
    Candidates(Vec<Candidate>),
}

fn read_pool(path: &Path) -> Result<Vec<Candidate>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::io(path, e))?;
    let parsed: PoolFile = serde_json::from_str(&text)
        .map_err(|e| ConfigError::parse(path.display().to_string(), e))?;
    let mut pool = match parsed {
        PoolFile::Sql(sqls) => sqlrank::pool_from_sql(sqls, Pass::Initial),
        PoolFile::Candidates(c) => c,
    };
    for (i, c) in pool.iter_mut().enumerate() {
        c.cand_idx = i;
    }
    Ok(pool)
}

fn make_task(args: &TaskArgs) -> Result<Task, ConfigError> {
    if !args.db.is_file() {
        return Err(ConfigError::MissingDatabase(args.db.clone()));
    }
    Ok(Task::new(&args.task_id, &args.question, &args.db).with_evidence(&args.evidence))
}

fn load_tasks(data: &DatasetArgs) -> Result<Vec<Task>, ConfigError> {
    load_dataset(&data.dataset, &DbRoot::from_path(&data.db_root)?)
}

fn cmd_select(
    s: &Settings,
    task: &TaskArgs,
    pool: Option<&Path>,
    generate: Option<usize>,
    out: Option<&Path>,
) -> CmdResult {
    let task = make_task(task)?;
    let pool = match (pool, generate) {
        (Some(p), _) => read_pool(p)?,
        (None, Some(n)) => generate_candidates(
            &s.backends,
            &task,
            n,
            Pass::Initial,
            s.selection.parallelism,
        )?,
        (None, None) => return Err(Failure::Usage("give --pool or --generate".into())),
    };
    let trace = select(&task, pool, &s.selection, &s.backends)?;
    if let Some(path) = out {
        write_file(
            path,
            &(serde_json::to_string_pretty(&trace).expect("trace serializes") + "\n"),
        )?;
    }
    let group = trace
        .final_group()
        .map_or("no valid group".to_string(), |g| {
            format!(
                "group {} of {} (size {})",
                g.group_id,
                trace.groups.len(),
                g.size
            )
        });
    eprintln!(
        "candidate {}, {group}; flags: [{}]",
        trace.final_cand_idx,
        trace.flags.join(", ")
    );
    println!("{}", trace.chosen_sql);
    Ok(())
}

fn cmd_evaluate(
    s: &Settings,
    data: &DatasetArgs,
    out: Option<&Path>,
    traces: Option<&Path>,
    table: bool,
) -> CmdResult {
    let tasks = load_tasks(data)?;
    let run = evaluate_with(
        &tasks,
        &s.selection,
        &s.backends,
        s.selection.seed,
        &EvalOptions { trace_sink: traces },
    )?;
    if let Some(path) = out {
        write_file(path, &run.report.to_json())?;
        let sidecar = path.with_extension("timings.json");
        write_file(
            &sidecar,
            &(serde_json::to_string_pretty(&run.timings).expect("timings serialize") + "\n"),
        )?;
    }
    if table {
        print!("{}", run.report.render_text());
    } else {
        println!("{}", run.report.summary_line());
    }
    if let Some(e) = &run.report.error {
        eprintln!("error: {e}");
    }
    if run.report.complete {
        Ok(())
    } else {
        Err(Failure::Incomplete)
    }
}

fn cmd_ablate(s: &Settings, data: &DatasetArgs, grid: &Path, out: Option<&Path>) -> CmdResult {
    let tasks = load_tasks(data)?;
    let grid = Grid::load(grid)?;
    let report = ablate(&tasks, &s.selection, &grid, &s.backends, s.selection.seed)?;
    if let Some(path) = out {
        write_file(path, &report.to_csv())?;
    }
    print!("{}", report.deltas_text());
    if report.complete() {
        Ok(())
    } else {
        Err(Failure::Incomplete)
    }
}

fn cmd_reward_export(
    s: &Settings,
    data: &DatasetArgs,
    pools: Option<&Path>,
    policy: NegativeSource,
    out: &Path,
    with_rewards: bool,
) -> CmdResult {
    let tasks = load_tasks(data)?;
    let cfg = &s.selection;
    let given: Option<HashMap<String, Vec<String>>> = match pools {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::io(p, e))?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| ConfigError::parse(p.display().to_string(), e))?,
            )
        }
        None => None,
    };
    let mut items = Vec::new();
    let opts = ExecOptions::from(cfg);
    for task in tasks {
        // no generation for tasks the exporter will skip on their gold query
        let usable_gold = match task.gold_sql.as_deref() {
            Some(gold) => execute_sql(&task.db_ref, gold, &opts)?.has_rows(),
            None => false,
        };
        if !usable_gold {
            items.push((task, Vec::new()));
            continue;
        }
        let mut pool = match &given {
            Some(map) => match map.get(&task.task_id) {
                Some(sqls) => sqlrank::pool_from_sql(sqls.iter().cloned(), Pass::Initial),
                None => continue,
            },
            None => generate_candidates(&s.backends, &task, cfg.n, Pass::Initial, cfg.parallelism)?,
        };
        if policy == NegativeSource::HardTop15 {
            execute_pool(&task.db_ref, &mut pool, &opts, cfg.parallelism)?;
            ensure_pointwise(&s.backends, &task, &mut pool, cfg.parallelism)?;
        }
        items.push((task, pool));
    }
    let mut export = build_pairs(&items, policy, cfg.seed, cfg)?;
    if with_rewards {
        for pair in &mut export.pairs {
            let (task, pool) = items
                .iter()
                .find(|(t, _)| t.task_id == pair.task_id)
                .expect("pair comes from an item");
            let r = reward_for_pair(
                &s.backends,
                task,
                &pool[pair.positive_idx],
                &pool[pair.negative_idx],
                cfg.lambda_c,
            )?;
            pair.reward = Some(r);
        }
    }
    export.write_jsonl(out)?;
    for skip in &export.skipped {
        eprintln!("skipped {}: {}", skip.task_id, skip.reason);
    }
    println!(
        "{} pairs written, {} tasks skipped",
        export.pairs.len(),
        export.skipped.len()
    );
    Ok(())
}

fn cmd_judge(s: &Settings, task: &TaskArgs, pool: &Path) -> CmdResult {
    let task = make_task(task)?;
    let mut pool = read_pool(pool)?;
    let cfg = &s.selection;
    execute_pool(
        &task.db_ref,
        &mut pool,
        &ExecOptions::from(cfg),
        cfg.parallelism,
    )?;
    // the judge reads the pool in pointwise order
    ensure_pointwise(&s.backends, &task, &mut pool, cfg.parallelism)?;
    let decision = judge_pool(&s.backends, &task, &pool)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&decision).expect("decision serializes")
    );
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let s = cli.common.settings()?;
    match &cli.command {
        Command::Select {
            task,
            pool,
            generate,
            out,
        } => cmd_select(&s, task, pool.as_deref(), *generate, out.as_deref()),
        Command::Evaluate {
            data,
            out,
            traces,
            table,
        } => cmd_evaluate(&s, data, out.as_deref(), traces.as_deref(), *table),
        Command::Ablate { data, grid, out } => cmd_ablate(&s, data, grid, out.as_deref()),
        Command::RewardExport {
            data,
            pools,
            policy,
            out,
            with_rewards,
        } => cmd_reward_export(&s, data, pools.as_deref(), *policy, out, *with_rewards),
        Command::Judge { task, pool } => cmd_judge(&s, task, pool),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Backend(msg)) => {
            eprintln!("backend error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Incomplete) => ExitCode::from(3),
    }
}
