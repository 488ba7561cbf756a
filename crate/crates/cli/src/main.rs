//! `cir`: benchmark runs, one-shot queries, gallery stores and cache inspection.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cir_core::embedding::save_store;
use cir_core::gateway::ResponseCache;
use cir_core::pipeline::{
    build_store, load_items, provider_from_config, FailPolicy, FileCache, Mode, RunConfig, Session,
};
use cir_core::CirError;

#[derive(Parser)]
#[command(name = "cir", version, about = "Training-free composed image retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark manifest and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Answer one query and print the trace and ranking.
    Compose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Embed gallery items with the configured provider and save a store.
    EmbedStore {
        #[arg(long)]
        config: PathBuf,
        /// JSONL file of {"id", "image"?, "embed_key"?} records.
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List or show cached responses.
    InspectCache {
        #[arg(long, required_unless_present = "config", conflicts_with = "config")]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the full response stored under this key.
        #[arg(long)]
        key: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Onestage,
    Twostage,
}

#[derive(Clone, Copy, ValueEnum)]
enum FailPolicyArg {
    Abort,
    ScoreMiss,
}

/// Config fields that may be set on the command line.
#[derive(clap::Args, Default)]
struct Overrides {
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long, value_enum)]
    fail_policy: Option<FailPolicyArg>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
}

impl Overrides {
    fn apply(self, config: &mut RunConfig) -> Result<(), CirError> {
        if let Some(v) = self.run_id {
            config.run_id = v;
        }
        if let Some(v) = self.mode {
            config.mode = match v {
                ModeArg::Onestage => Mode::Onestage,
                ModeArg::Twostage => Mode::Twostage,
            };
        }
        if let Some(v) = self.parallelism {
            config.parallelism = v;
        }
        if let Some(v) = self.fail_policy {
            config.fail_policy = match v {
                FailPolicyArg::Abort => FailPolicy::Abort,
                FailPolicyArg::ScoreMiss => FailPolicy::ScoreMiss,
            };
        }
        if let Some(v) = self.cache_dir {
            config.cache_dir = Some(v);
        }
        if let Some(v) = self.output_dir {
            config.output_dir = v;
        }
        if let Some(v) = self.k_list {
            config.k_list = Some(v);
        }
        config.validate()
    }
}

fn load_config(path: &Path, overrides: Overrides) -> Result<RunConfig, CirError> {
    let mut config = RunConfig::load(path)?;
    overrides.apply(&mut config)?;
    Ok(config)
}

fn run(command: Command) -> Result<(), CirError> {
    match command {
        Command::Run { config, overrides } => {
            let config = load_config(&config, overrides)?;
            let outcome = Session::open(config)?.run_benchmark()?;
            print!("{}", outcome.report.to_table());
            eprintln!("wrote {}", outcome.run_dir.display());
        }
        Command::Compose {
            config,
            image,
            text,
            k,
            overrides,
        } => {
            if k == 0 {
                return Err(CirError::Config("--k must be positive".into()));
            }
            let config = load_config(&config, overrides)?;
            let output = Session::open(config)?.compose(&image, &text, k)?;
            print!("{}", output.render());
        }
        Command::EmbedStore { config, items, out } => {
            let config = RunConfig::load(&config)?;
            let provider = provider_from_config(&config)?;
            let items = load_items(&items)?;
            let store = build_store(provider.as_ref(), &items)?;
            save_store(&store, &out)?;
            eprintln!("wrote {} vectors to {}", store.records.len(), out.display());
        }
        Command::InspectCache {
            cache_dir,
            config,
            key,
        } => {
            let dir = match (cache_dir, config) {
                (Some(dir), _) => dir,
                (None, Some(path)) => RunConfig::load(&path)?
                    .cache_dir
                    .ok_or_else(|| CirError::Config("config has no cache_dir".into()))?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            inspect_cache(&dir, key.as_deref())?;
        }
    }
    Ok(())
}

fn inspect_cache(dir: &Path, key: Option<&str>) -> Result<(), CirError> {
    if !dir.is_dir() {
        return Err(CirError::Config(format!("{} is not a directory", dir.display())));
    }
    let cache = FileCache::open(dir).map_err(cache_error)?;
    if let Some(key) = key {
        return match cache.get(key).map_err(cache_error)? {
            Some(raw) => {
                println!("{raw}");
                Ok(())
            }
            None => Err(CirError::Config(format!("no entry under {key}"))),
        };
    }
    let entries = cache.entries().map_err(cache_error)?;
    for e in &entries {
        let preview: String = e.raw_response.chars().take(60).collect();
        let preview = preview.replace('\n', " ");
        println!("{}  {}  {}", e.key, e.created_at, preview);
    }
    eprintln!("{} entries", entries.len());
    Ok(())
}

fn cache_error(e: cir_core::gateway::CacheError) -> CirError {
    CirError::Gateway(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code().code() as u8)
        }
    }
}
