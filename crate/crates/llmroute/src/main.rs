use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use llmroute::config::{LoadedConfig, RouterEntry};
use llmroute::error::{Error, Result};
use llmroute::pipeline::{self, AnalyzeSelection};
use llmroute::service::{self, AppState};

/// Cost-aware LLM routing: split benchmarks, fit routers, evaluate, analyze
/// and serve.
#[derive(Parser)]
#[command(name = "llmroute", version)]
struct Cli {
    /// Run config (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config field, e.g. `--set split.seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/val/test manifests.
    Split,
    /// Fit configured routers on the train manifest.
    Fit(FitArgs),
    /// Evaluate fitted routers on the test manifest.
    Eval,
    /// Locality, locality modulus, covering and regret analyses.
    Analyze(AnalyzeArgs),
    /// Serve a fitted router over HTTP.
    Serve(ServeArgs),
    /// Re-render table.txt from results.json.
    Report,
    /// split, fit and eval.
    Run,
}

#[derive(Args)]
struct FitArgs {
    /// Fit only this router entry.
    #[arg(long)]
    router: Option<String>,
    /// Architecture for the selected router, adding an entry if none exists.
    #[arg(long)]
    arch: Option<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    locality: bool,
    #[arg(long)]
    epsilon: bool,
    #[arg(long)]
    covering: bool,
    #[arg(long)]
    regret: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Router file; defaults to the file of `serve.router`.
    #[arg(long)]
    router_file: Option<PathBuf>,
    /// Address to bind, overriding `serve.bind`.
    #[arg(long)]
    bind: Option<String>,
}

fn load_config(cli: &Cli) -> Result<LoadedConfig> {
    let mut cfg = match &cli.config {
        Some(p) => LoadedConfig::load(p, &cli.overrides)?,
        None => LoadedConfig::from_overrides(&cli.overrides)?,
    };
    if let Some(out) = &cli.out {
        let cwd = std::env::current_dir().map_err(|e| Error::io(std::path::Path::new("."), e))?;
        cfg.config.out = cwd.join(out);
    }
    Ok(cfg)
}

fn apply_fit_args(cfg: &mut LoadedConfig, args: &FitArgs) -> Option<String> {
    let arch = args.arch.as_ref()?;
    let name = args.router.clone().unwrap_or_else(|| arch.clone());
    match cfg.config.routers.iter_mut().find(|r| r.name == name) {
        Some(r) => r.arch = arch.clone(),
        None => cfg.config.routers.push(RouterEntry {
            name: name.clone(),
            arch: arch.clone(),
            formulation: "utility".into(),
            k_candidates: Vec::new(),
            params: Default::default(),
        }),
    }
    Some(name)
}

fn serve_state(cfg: &LoadedConfig, args: &ServeArgs) -> Result<AppState> {
    let path = match (&args.router_file, &cfg.config.serve.router) {
        (Some(p), _) => p.clone(),
        (None, Some(name)) => {
            let entry = cfg
                .config
                .routers
                .iter()
                .find(|r| &r.name == name)
                .ok_or_else(|| Error::Usage(format!("serve.router names unknown router {name:?}")))?;
            let mut paths = pipeline::router_paths(cfg, entry)?;
            if paths.len() != 1 {
                return Err(Error::Usage(format!("router {name} has one file per preset; pass --router-file")));
            }
            paths.remove(0)
        }
        (None, None) => return Err(Error::Usage("no router to serve: pass --router-file or set serve.router".into())),
    };
    if !path.exists() {
        return Err(Error::Usage(format!("router file {} not found", path.display())));
    }
    let mut records = HashMap::new();
    if cfg.config.data.is_some() {
        let d = cfg.data()?;
        let ds = pipeline::load_full_dataset(cfg)?;
        records.extend(ds.records().iter().map(|r| (r.id.clone(), r.embedding.as_slice().to_vec())));
        let state = AppState::load(path, records)?;
        pipeline::check_catalog(&state.current().router, &cfg.resolve(&d.catalog))?;
        return Ok(state);
    }
    AppState::load(path, records)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Split => {
            for p in pipeline::cmd_split(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Fit(args) => {
            let only = apply_fit_args(&mut cfg, args).or_else(|| args.router.clone());
            for log in pipeline::cmd_fit(&cfg, only.as_deref())? {
                for f in &log.routers {
                    println!("{} {}", f.file, f.version);
                }
            }
        }
        Command::Eval => {
            print!("{}", pipeline::cmd_eval(&cfg)?.render_table());
        }
        Command::Analyze(a) => {
            let sel = AnalyzeSelection { locality: a.locality, epsilon: a.epsilon, covering: a.covering, regret: a.regret };
            for p in pipeline::cmd_analyze(&cfg, sel)? {
                println!("{}", p.display());
            }
        }
        Command::Serve(args) => {
            let state = Arc::new(serve_state(&cfg, args)?);
            let bind = args.bind.clone().unwrap_or_else(|| cfg.config.serve.bind.clone());
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Runtime(e.to_string()))?;
            rt.block_on(service::serve(state, &bind))?;
        }
        Command::Report => print!("{}", pipeline::cmd_report(&cfg)?),
        Command::Run => print!("{}", pipeline::cmd_run(&cfg)?.render_table()),
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
