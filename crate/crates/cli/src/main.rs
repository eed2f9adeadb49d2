use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hear_core::io::write_jsonl;
use hear_core::suite::{
    extrinsic_reports, generate_environments, intrinsic_reports, Dataset, ExperimentReport, Models, SuiteConfig, ENV_SCHEMA,
};
use hear_service::session::Study;
use hear_service::{http, Store};

/// Config file written next to a generated dataset and read back by later stages.
const SUITE_FILE: &str = "suite.toml";

#[derive(Parser)]
#[command(name = "hear", version, about = "Detect and remedy hallucinations in navigation instructions")]
struct Cli {
    /// Overrides the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suite config in TOML. Defaults to the dataset's own config, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate environments only.
    GenEnv,
    /// Generate environments, routes, instructions, training pairs and evaluation sets.
    GenData,
    /// Train the detection, type and one-stage models on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score trained models and write report.json and report.txt.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
    /// Print a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Serve study sessions over HTTP. Session logs go to --out.
    Serve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Regular tasks per session, not counting the quality-control task.
        #[arg(long, default_value_t = hear_service::session::DEFAULT_TASKS_PER_SESSION)]
        tasks: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Intrinsic,
    Extrinsic,
    All,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    match &cli.command {
        Command::GenEnv => {
            let cfg = config(&cli, None)?;
            let dir = out("out/envs");
            let envs = generate_environments(&cfg)?;
            write_jsonl(&dir.join("environments.jsonl"), ENV_SCHEMA, &envs)?;
            println!("wrote {} environments to {}", envs.len(), dir.display());
        }
        Command::GenData => {
            let cfg = config(&cli, None)?;
            let dir = out("out/data");
            let ds = Dataset::generate(&cfg)?;
            ds.save(&dir)?;
            fs::write(dir.join(SUITE_FILE), toml::to_string(&cfg)?)?;
            println!(
                "wrote {} routes, {} detection pairs, {} dev and {} test examples to {}",
                ds.corpus.len(),
                ds.detection_pairs.len(),
                ds.dev.len(),
                ds.test.len(),
                dir.display()
            );
        }
        Command::Train { data } => {
            let cfg = config(&cli, Some(data))?;
            let dir = out("out/models");
            let ds = Dataset::load(data)?;
            let models = Models::train(&ds, &cfg)?;
            models.save(&dir)?;
            println!("wrote models to {}", dir.display());
        }
        Command::Eval { data, models, suite } => {
            let cfg = config(&cli, Some(data))?;
            let dir = out("out/report");
            let ds = Dataset::load(data)?;
            let models = Models::load(models)?;
            let (detection, suggestion) = match suite {
                Suite::Extrinsic => (Vec::new(), Vec::new()),
                _ => intrinsic_reports(&ds, &models, &cfg)?,
            };
            let navigation = match suite {
                Suite::Intrinsic => Vec::new(),
                _ => extrinsic_reports(&ds, &models, &cfg)?,
            };
            let report = ExperimentReport { seed: cfg.seed, config_hash: cfg.hash(), detection, suggestion, navigation };
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("report.json"), report.to_json()?)?;
            fs::write(dir.join("report.txt"), report.to_text())?;
            print!("{}", report.to_text());
        }
        Command::Report { input, json } => {
            let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
            let report = ExperimentReport::from_json(&text)?;
            if *json {
                print!("{}", report.to_json()?);
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::Serve { data, models, addr, tasks } => {
            if *tasks == 0 {
                bail!("--tasks must be at least 1");
            }
            let cfg = config(&cli, Some(data))?;
            let mut study = Study::new(Dataset::load(data)?, Models::load(models)?, cfg);
            study.tasks_per_session = *tasks;
            let store = Arc::new(Store::open(Arc::new(study), &out("out/sessions"))?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                println!("listening on http://{}", listener.local_addr()?);
                http::serve(store, listener).await
            })?;
        }
    }
    Ok(())
}

/// `--config`, else the config stored with `data`, else defaults; `--seed` wins over all.
fn config(cli: &Cli, data: Option<&Path>) -> Result<SuiteConfig> {
    let stored = data.map(|d| d.join(SUITE_FILE)).filter(|p| p.exists());
    let mut cfg = match cli.config.as_ref().or(stored.as_ref()) {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SuiteConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    if let (Some(stored), Some(_)) = (&stored, &cli.config) {
        let theirs: SuiteConfig = toml::from_str(&fs::read_to_string(stored)?)?;
        if theirs.hash() != cfg.hash() {
            log::warn!("--config differs from the config the dataset was generated with");
        }
    }
    Ok(cfg)
}
