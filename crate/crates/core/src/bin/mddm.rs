use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mddm::acts::{enumerate_combination_table, parse_act_notation, Function};
use mddm::error::{Error, Result};
use mddm::harness::{eval_seed, run_seed, train, write_episode_log, Environment, ExperimentConfig, Variant};
use mddm::manager::{DialogueManager, DialogueSystem, EpisodeRng, Policies};
use mddm::ontology::{generate_database, Database, Ontology};
use mddm::state::NBestList;
use rand::SeedableRng;

#[derive(Parser)]
#[command(name = "mddm", version, about = "Multi-dimensional dialogue manager experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the restaurant database as JSON.
    GenDb {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train policies and write the learning curve, policies and logs.
    Train(TrainArgs),
    /// Evaluate saved policies greedily.
    Evaluate {
        #[arg(long)]
        policies: PathBuf,
        #[arg(long, default_value_t = 3000)]
        dialogues: usize,
        #[arg(long, default_value_t = 0.2)]
        error_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the task agent on top of saved feedback and social agents.
    Transfer {
        #[command(flatten)]
        train: TrainArgs,
        /// Keep the loaded feedback and social agents fixed.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        freeze: bool,
    },
    /// Talk to a saved policy by typing user acts, e.g. `inform(foodtype=thai)`.
    Chat {
        #[arg(long)]
        policies: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tally the output act of every per-dimension combination.
    EnumerateCombinations,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Training dialogues per run.
    #[arg(long)]
    dialogues: Option<usize>,
    #[arg(long)]
    error_rate: Option<f64>,
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    #[arg(long)]
    eval_dialogues: Option<usize>,
    /// Directory of saved policies, or of `run-<i>` subdirectories.
    #[arg(long)]
    source_policies: Option<PathBuf>,
    /// JSON experiment configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Greedy dialogues from run 0 written to the episode log.
    #[arg(long, default_value_t = 20)]
    log_episodes: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDb { seed, out } => {
            let db = generate_database(seed, &Ontology::restaurant());
            match out {
                Some(path) => write_file(&path, &db.to_json()),
                None => {
                    println!("{}", db.to_json());
                    Ok(())
                }
            }
        }
        Command::Train(args) => run_training(args, None),
        Command::Transfer { train, freeze } => {
            let variant = if freeze { Variant::MultiDimTransfer } else { Variant::MultiDimTransferAdapt };
            run_training(train, Some(variant))
        }
        Command::Evaluate { policies, dialogues, error_rate, seed } => {
            let p = Policies::load_dir(&policies)?;
            let env = Environment::restaurant(error_rate);
            let metrics = mddm::harness::evaluate(&p, &env, dialogues, seed);
            println!("{}", serde_json::to_string_pretty(&metrics).expect("metrics serialize"));
            Ok(())
        }
        Command::Chat { policies, seed } => chat(&policies, seed),
        Command::EnumerateCombinations => {
            print!("{}", enumerate_combination_table());
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_sources(dir: &Path) -> Result<Vec<Policies>> {
    let mut runs = Vec::new();
    while dir.join(format!("run-{}", runs.len())).is_dir() {
        runs.push(Policies::load_dir(&dir.join(format!("run-{}", runs.len())))?);
    }
    if runs.is_empty() {
        runs.push(Policies::load_dir(dir)?);
    }
    Ok(runs)
}

fn run_training(args: TrainArgs, forced: Option<Variant>) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = forced.or(args.variant) {
        config.variant = v;
    }
    let t = &mut config.training;
    if let Some(seed) = args.seed {
        t.seed = seed;
    }
    if let Some(runs) = args.runs {
        t.runs = runs;
    }
    if let Some(n) = args.dialogues {
        t.total_training_dialogues = n;
    }
    if let Some(e) = args.error_rate {
        t.error_rate = e;
    }
    if let Some(k) = args.checkpoint_interval {
        t.checkpoint_interval = k;
    }
    if let Some(n) = args.eval_dialogues {
        t.eval_dialogues_per_point = n;
    }
    let mut spec = config.to_spec();
    if let Some(dir) = &args.source_policies {
        spec.source_policies = load_sources(dir)?;
    }
    let result = train(&spec)?;

    let out = &args.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    result.curve.write_csv(&out.join("curve.csv"))?;
    for (i, run) in result.runs.iter().enumerate() {
        run.policies.save_dir(&out.join("policies").join(format!("run-{i}")))?;
    }
    let config_path = out.join("config.json");
    write_file(&config_path, &serde_json::to_string_pretty(&config).expect("config serializes"))?;

    let logs = out.join("logs");
    std::fs::create_dir_all(&logs).map_err(|e| Error::io(&logs, e))?;
    let log_path = logs.join("episodes.jsonl");
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut w = BufWriter::new(file);
    let seed = eval_seed(run_seed(config.training.seed, 0));
    write_episode_log(&mut w, &result.runs[0].policies, &spec.env, args.log_episodes, seed)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&log_path, e))?;

    if let Some(last) = result.curve.last() {
        println!(
            "{} after {} dialogues: reward {:.2}, success {:.3}, length {:.2}",
            config.variant, last.dialogues, last.mean_reward, last.mean_success, last.mean_length
        );
    }
    Ok(())
}

fn chat(dir: &Path, seed: u64) -> Result<()> {
    let policies = Policies::load_dir(dir)?;
    let ontology = Ontology::restaurant();
    let db: Database = generate_database(mddm::harness::DEFAULT_DATABASE_SEED, &ontology);
    let mut manager = DialogueManager::new(&db, &policies, mddm::harness::DEFAULT_CONSTRAINT_THRESHOLD);
    let mut rng = EpisodeRng::seed_from_u64(seed);
    println!("type user acts such as inform(foodtype=thai), request(phonenumber), bye(); ctrl-d quits");
    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let act = match parse_act_notation(&line, &ontology) {
            Ok(act) => act,
            Err(e) => {
                eprintln!("{e}");
                continue;
            }
        };
        DialogueSystem::observe(&mut manager, &NBestList::certain(act));
        let record = manager.respond(0.0, &mut rng);
        match &record.act {
            Some(act) => println!("system: {act}"),
            None => println!("system: (passes)"),
        }
        println!("state: {}", manager.state().summary());
        if record.act.as_ref().is_some_and(|a| a.function == Function::ReturnGoodbye) {
            break;
        }
    }
    Ok(())
}
